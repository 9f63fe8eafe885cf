//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails. Pass a substring to run a subset.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use colsig_core::dataset::{build_plan, Community, ManifestEntry};
use colsig_core::feedback::{
    advance_epoch, append_jsonl, apply_feedback_policy, read_jsonl, replay, FeedbackState, PolicyConfig, Rating, Tag,
    Verdict, WeightOverride,
};
use colsig_core::imaging::{hysteresis_threshold, normalize_signature, PreprocessParams};
use colsig_core::safeguard::{screen_batch, TrainingSet};
use colsig_core::synth::SynthCorpusSpec;
use colsig_core::vectorize::{chord_parameters, fit_bspline, AnimationScript, Point, SplinePath};
use colsig_core::{Canvas, RasterImage};
use colsig_gan::loss::{critic_step, gradient_penalty_sampled};
use colsig_gan::train::{Silent, StepMetrics};
use colsig_gan::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- hysteresis

/// Breadth-first flood fill from every strong pixel through weak ones.
fn flood_fill(img: &RasterImage, low: f64, high: f64) -> Vec<bool> {
    let (w, h) = (img.width, img.height);
    let mut on = vec![false; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if img.pixels[i] >= high {
            on[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !on[j] && img.pixels[j] >= low {
                    on[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    on
}

fn hysteresis() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 0..1000 {
        let px = (0..256).map(|_| rng.random::<f64>()).collect();
        let img = RasterImage::new(16, 16, px).unwrap();
        let low = rng.random_range(0.2..0.6);
        let high = rng.random_range(low + 0.05..0.95);
        let mask = hysteresis_threshold(&img, low, high).map_err(|e| e.to_string())?;
        let oracle = flood_fill(&img, low, high);
        for y in 0..16 {
            for x in 0..16 {
                check(mask.get(x, y) == oracle[y * 16 + x], format!("image {n} differs at ({x}, {y})"))?;
            }
        }
    }
    Ok("1000/1000 images identical".into())
}

// ---------------------------------------------------------- gradient penalty

struct Linear(Vec<f64>);
impl InputGradient for Linear {
    fn score(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(a, b)| a * b).sum()
    }
    fn input_gradient(&self, _: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

struct Constant;
impl InputGradient for Constant {
    fn score(&self, _: &[f64]) -> f64 {
        1.5
    }
    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize) -> Vec<RasterImage> {
    (0..n)
        .map(|_| RasterImage::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect()
}

fn gradient_penalty_analytics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_linear: f64 = 0.0;
    for _ in 0..5 {
        let mut w: Vec<f64> = (0..256 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter_mut().for_each(|v| *v /= norm);
        let real = random_batch(&mut rng, 8, 256, 64);
        let fake = random_batch(&mut rng, 8, 256, 64);
        let (gp, _) = gradient_penalty_sampled(&Linear(w), &real, &fake, &mut rng).map_err(|e| e.to_string())?;
        worst_linear = worst_linear.max(gp);
    }
    check(worst_linear < 1e-6, format!("linear critic GP {worst_linear:e}"))?;

    let real = random_batch(&mut rng, 8, 256, 64);
    let fake = random_batch(&mut rng, 8, 256, 64);
    let (gp_const, _) = gradient_penalty_sampled(&Constant, &real, &fake, &mut rng).map_err(|e| e.to_string())?;
    check((gp_const - 1.0).abs() <= 1e-6, format!("constant critic GP {gp_const}"))?;

    // Two-layer toy critic: one stride-2 convolution and the linear head.
    let critic = Critic::with_layers(Canvas { height: 8, width: 8 }, &[3], 3, 0.2);
    let mut params = critic.init_params(&mut rng);
    for p in params.iter_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let real = random_batch(&mut rng, 4, 8, 8);
    let fake = random_batch(&mut rng, 4, 8, 8);
    let eps: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
    let lambda = 10.0;
    let with = critic_step(&critic, &params, &real, &fake, &eps, lambda).map_err(|e| e.to_string())?;
    let without = critic_step(&critic, &params, &real, &fake, &eps, 0.0).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..critic.n_params() {
        let analytic = (with.grad[i] - without.grad[i]) / lambda;
        let gp_at = |v: f64| {
            let mut p = params.clone();
            p[i] = v;
            gradient_penalty(&CriticNet { critic: &critic, params: &p }, &real, &fake, &eps).unwrap()
        };
        let fd = (gp_at(params[i] + h) - gp_at(params[i] - h)) / (2.0 * h);
        let scale = fd.abs().max(analytic.abs());
        if scale > 1e-7 {
            worst = worst.max((fd - analytic).abs() / scale);
        }
    }
    check(worst < 1e-3, format!("GP weight-gradient rel. error {worst:e}"))?;
    Ok(format!(
        "linear GP {worst_linear:.1e}, constant GP {gp_const}, toy-critic rel. error {worst:.1e} over {} weights",
        critic.n_params()
    ))
}

// ---------------------------------------------------- determinism and resume

fn toy_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.generator.seed_grid = (1, 1);
    cfg.generator.channels = vec![16, 8, 8, 4, 4, 4, 1];
    cfg.critic.channels = vec![4, 4, 8, 8, 8, 8, 1];
    cfg.train.batch_size = 4;
    cfg.train.epochs = 2;
    cfg.train.steps_per_epoch = Some(25);
    cfg.train.samples_per_epoch = 4;
    cfg.train.rng_seed = 31;
    cfg
}

fn toy_data() -> TrainingData {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut entries = Vec::new();
    let mut images = Vec::new();
    for i in 0..8 {
        let mut img = RasterImage::filled(64, 64, 0.0);
        let (y0, x0) = (rng.random_range(8..52), rng.random_range(2..24));
        for x in x0..x0 + 36 {
            img.set(x, y0 + (x % 5) / 2, 1.0);
            img.set(x, y0 + 1 + (x % 5) / 2, 1.0);
        }
        images.push(img);
        entries.push(ManifestEntry {
            path: format!("t{i}.png").into(),
            source_id: format!("t{i}"),
            community: if i % 2 == 0 { Community::University } else { Community::City },
        });
    }
    TrainingData::new(build_plan(entries, Community::City, 3.0).unwrap(), images).unwrap()
}

struct PauseAt(u64);
impl TrainObserver for PauseAt {
    fn poll(&mut self, s: &TrainState) -> Control {
        if s.critic_step == self.0 {
            Control::Pause
        } else {
            Control::Continue
        }
    }
}

fn train_in(root: &Path, pause_at: Option<u64>) -> std::result::Result<RunDir, String> {
    let e = |e: GanError| e.to_string();
    let data = toy_data();
    let dir = RunDir::create(root, "toy", &toy_config()).map_err(e)?;
    let mut state = dir.prepare_resume("toy").map_err(e)?;
    if let Some(step) = pause_at {
        let mut p = PauseAt(step);
        let mut obs = RunDirObserver::new(RunDir::open(dir.root()).map_err(e)?, &state, &mut p).map_err(e)?;
        let out = train_run(&mut state, &data, &mut obs).map_err(e)?;
        check(out == RunOutcome::Paused, "run did not pause")?;
        drop(obs);
        // Fresh state from disk only.
        state = dir.prepare_resume("toy").map_err(e)?;
        check(state.critic_step == step, format!("resumed at step {}", state.critic_step))?;
    }
    let mut silent = Silent;
    let mut obs = RunDirObserver::new(RunDir::open(dir.root()).map_err(e)?, &state, &mut silent).map_err(e)?;
    let out = train_run(&mut state, &data, &mut obs).map_err(e)?;
    check(out == RunOutcome::Completed, "run did not complete")?;
    check(state.critic_step == 50, format!("{} steps", state.critic_step))?;
    Ok(dir)
}

fn determinism_and_resume() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = train_in(&tmp.path().join("a"), None)?;
    let b = train_in(&tmp.path().join("b"), None)?;
    let c = train_in(&tmp.path().join("c"), Some(20))?;
    for epoch in [1, 2] {
        let bytes = |d: &RunDir| std::fs::read(d.checkpoint_path(epoch)).unwrap();
        check(bytes(&a) == bytes(&b), format!("repeat run differs at epoch {epoch}"))?;
        check(bytes(&a) == bytes(&c), format!("paused run differs at epoch {epoch}"))?;
    }
    let ma = a.read_metrics().map_err(|e| e.to_string())?;
    let mc = c.read_metrics().map_err(|e| e.to_string())?;
    check(ma == mc, "metrics logs differ")?;
    Ok("50-step toy run: repeat and pause@20+resume give byte-identical checkpoints".into())
}

// -------------------------------------------------------------- training smoke

fn normalized_corpus(n: usize, seed: u64) -> Vec<(String, Community, RasterImage)> {
    let spec = SynthCorpusSpec {
        n_per_community: n,
        seed,
        ..Default::default()
    };
    let params = PreprocessParams::default();
    spec.generate()
        .unwrap()
        .into_iter()
        .map(|s| {
            let img = if s.scan.mean() > 0.5 { s.scan.inverted() } else { s.scan };
            let sig = normalize_signature(&img, &params, &s.source_id, s.community).unwrap();
            (s.source_id, s.community, sig.mask.to_image())
        })
        .collect()
}

struct SmokeLog {
    steps: Vec<StepMetrics>,
    last: Option<SampleBatch>,
}

impl TrainObserver for SmokeLog {
    fn on_step(&mut self, m: &StepMetrics) -> colsig_gan::Result<()> {
        self.steps.push(m.clone());
        Ok(())
    }
    fn on_epoch(&mut self, s: &TrainState, b: &SampleBatch) -> colsig_gan::Result<Control> {
        eprintln!("    smoke: epoch {} at step {}", s.epoch, s.critic_step);
        self.last = Some(b.clone());
        Ok(Control::Continue)
    }
}

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn training_smoke() -> Outcome {
    let corpus = normalized_corpus(200, 1);
    let entries = corpus
        .iter()
        .map(|(id, c, _)| ManifestEntry {
            path: format!("{id}.png").into(),
            source_id: id.clone(),
            community: *c,
        })
        .collect();
    let images = corpus.into_iter().map(|(_, _, img)| img).collect();
    let plan = build_plan(entries, Community::University, 3.0).map_err(|e| e.to_string())?;
    let data = TrainingData::new(plan, images).map_err(|e| e.to_string())?;

    let mut cfg = RunConfig::small();
    check(cfg.generator.latent_dim == 5, "latent_dim is not 5")?;
    cfg.train.epochs = 8;
    cfg.train.steps_per_epoch = Some(250);
    cfg.train.samples_per_epoch = 16;
    let mut state = TrainState::new("smoke", cfg).map_err(|e| e.to_string())?;
    let mut log = SmokeLog {
        steps: Vec::new(),
        last: None,
    };
    train_run(&mut state, &data, &mut log).map_err(|e| e.to_string())?;
    check(log.steps.len() == 2000, format!("{} critic steps", log.steps.len()))?;
    let finite = log
        .steps
        .iter()
        .all(|m| m.critic_loss.is_finite() && m.gp.is_finite() && m.gap.is_finite() && m.gen_loss.is_none_or(f64::is_finite));
    check(finite, "non-finite loss")?;

    // Trailing 100-step moving average of |gap| over the final 500 steps.
    let gaps: Vec<f64> = log.steps.iter().map(|m| m.gap.abs()).collect();
    let window = 100;
    let ma: Vec<f64> = (1500..2000)
        .map(|i| gaps[i + 1 - window..=i].iter().sum::<f64>() / window as f64)
        .collect();
    let s = slope(&ma);

    let samples = log.last.ok_or("no samples")?;
    let fractions: Vec<f64> = samples
        .images
        .iter()
        .map(|img| img.pixels.iter().filter(|&&p| p > 0.5).count() as f64 / img.pixels.len() as f64)
        .collect();
    let in_range = fractions.iter().filter(|f| (0.02..=0.3).contains(*f)).count();
    let detail = format!(
        "2000 finite steps; |gap| MA {:.4} -> {:.4}, slope {s:.2e}/step; {in_range}/16 samples with foreground in [0.02, 0.3] (fractions {:?})",
        ma[0],
        ma[ma.len() - 1],
        fractions.iter().map(|f| (f * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    check(s <= 0.0, format!("moving-average |gap| rising: {detail}"))?;
    check(in_range >= 12, format!("foreground out of range: {detail}"))?;
    Ok(detail)
}

// ------------------------------------------------------------------ weighting

fn weighting() -> Outcome {
    let entries = (0..1000)
        .map(|i| ManifestEntry {
            path: format!("{i}.png").into(),
            source_id: format!("s{i}"),
            community: if i < 600 { Community::University } else { Community::City },
        })
        .collect();
    let plan = build_plan(entries, Community::University, 3.0).map_err(|e| e.to_string())?;
    let draws = plan.sample_batch_indices(100_000, 77);
    let rate = draws.iter().filter(|&&i| plan.entries[i].community == Community::University).count() as f64 / 1e5;
    check((rate - 0.818).abs() <= 0.01, format!("draw rate {rate}"))?;
    Ok(format!("target-community draw rate {rate:.4}"))
}

// --------------------------------------------------------------- memorization

fn memorization() -> Outcome {
    let corpus = normalized_corpus(200, 1);
    let set = TrainingSet::new(corpus.iter().map(|(id, _, img)| (id.clone(), img.clone()))).map_err(|e| e.to_string())?;
    let tau = 0.05;
    let mut min = f64::INFINITY;
    let mut min_pair = (0, 0);
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            let d = set.pair_distance(i, j);
            if d < min {
                min = d;
                min_pair = (i, j);
            }
        }
    }
    check(min >= tau, format!("distinct signatures {min_pair:?} at distance {min}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = random_batch(&mut rng, 3, 256, 64);
    let planted = corpus[57].2.clone();
    let batch: Vec<(&str, &RasterImage)> = vec![("n0", &noise[0]), ("copy", &planted), ("n1", &noise[1]), ("n2", &noise[2])];
    let reports = screen_batch(batch, &set, tau).map_err(|e| e.to_string())?;
    let flagged: Vec<_> = reports.iter().filter(|r| r.flagged).collect();
    check(flagged.len() == 1 && flagged[0].sample_id == "copy", "wrong samples flagged")?;
    check(flagged[0].distance == 0.0, format!("planted copy at {}", flagged[0].distance))?;
    check(flagged[0].nearest_source_id == corpus[57].0, "planted copy matched the wrong source")?;
    Ok(format!(
        "planted copy flagged at 0 against {}; min pairwise distance {min:.4} over {} pairs",
        corpus[57].0,
        set.len() * (set.len() - 1) / 2
    ))
}

// ------------------------------------------------------------ feedback replay

fn rate(sample: &str, verdict: Verdict, tags: &[Tag], author: &str) -> Rating {
    Rating {
        sample_id: sample.into(),
        verdict,
        tags: tags.iter().cloned().collect::<BTreeSet<_>>(),
        author: author.into(),
        timestamp: "0".into(),
    }
}

fn rule_table() -> std::result::Result<(), String> {
    let cfg = PolicyConfig::default();
    let s0 = FeedbackState::new("r", 3.0);
    let thick = |n: usize, v: Verdict| -> Vec<Rating> {
        (0..n).map(|k| rate(&format!("r:1:{k}"), v, &[Tag::StrokesTooThick], "a")).collect()
    };
    let s = apply_feedback_policy(&thick(2, Verdict::Dislike), &s0, 1, &cfg);
    check(s.beta == 0.0 && s.history.is_empty(), "2 thick dislikes fired")?;
    let s = apply_feedback_policy(&thick(3, Verdict::Dislike), &s0, 1, &cfg);
    check(s.beta == 0.1 && s.alpha == 0.0, "3 thick dislikes did not raise beta")?;
    check(s.history.len() == 1 && s.history[0].rule == "strokes-too-thick", "thick rule not recorded")?;
    let s = apply_feedback_policy(&thick(3, Verdict::Like), &s0, 1, &cfg);
    check(s.beta == 0.0, "thick likes fired")?;

    let resubmitted: Vec<Rating> = (0..3)
        .map(|_| rate("r:1:0", Verdict::Dislike, &[Tag::StrokesTooThick], "a"))
        .collect();
    let s = apply_feedback_policy(&resubmitted, &s0, 1, &cfg);
    check(s.beta == 0.0, "resubmissions counted more than once")?;

    let diverse: Vec<Rating> = [Verdict::Like, Verdict::Neutral, Verdict::Dislike]
        .into_iter()
        .enumerate()
        .map(|(k, v)| rate(&format!("r:1:{k}"), v, &[Tag::MoreDirectionDiversity], "a"))
        .collect();
    let s = apply_feedback_policy(&diverse, &s0, 1, &cfg);
    check(s.alpha == 0.1 && s.beta == 0.0, "diversity rule")?;

    let thin: Vec<Rating> = (0..3)
        .map(|k| rate(&format!("r:1:{k}"), Verdict::Dislike, &[Tag::StrokesTooThin], "b"))
        .collect();
    let s = apply_feedback_policy(&thin, &s0, 1, &cfg);
    check(s.beta == 0.1 && (s.target_thickness - 3.3).abs() < 1e-12, "thin rule")?;

    let mut s = s0.clone();
    for e in 0..15 {
        s = apply_feedback_policy(&diverse, &s, e, &cfg);
    }
    check(s.alpha == 1.0, format!("alpha not capped: {}", s.alpha))?;
    Ok(())
}

fn feedback_replay() -> Outcome {
    rule_table()?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (rp, op, fp) = (tmp.path().join("ratings.log"), tmp.path().join("overrides.log"), tmp.path().join("feedback.json"));
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let tags = [Tag::StrokesTooThick, Tag::StrokesTooThin, Tag::MoreDirectionDiversity, Tag::TooSimple];
    let verdicts = [Verdict::Like, Verdict::Dislike, Verdict::Neutral];
    let cfg = PolicyConfig::default();
    let mut live = FeedbackState::new("run", 3.0);
    let mut epoch = 0;
    let mut fired = 0;
    for event in 0..50 {
        if event == 23 || event == 41 {
            let ov = WeightOverride {
                alpha: rng.random_range(0.0..0.5),
                beta: rng.random_range(0.0..0.5),
                target_thickness: None,
                author: "curator".into(),
                timestamp: event.to_string(),
            };
            append_jsonl(&op, &ov).map_err(|e| e.to_string())?;
        } else {
            let k = rng.random_range(0..16);
            let mut r = rate(&format!("run:{}:{k}", epoch + 1), verdicts[rng.random_range(0..3)], &[], ["ana", "ben"][rng.random_range(0..2)]);
            if rng.random_bool(0.6) {
                r.tags.insert(tags[rng.random_range(0..tags.len())].clone());
            }
            append_jsonl(&rp, &r).map_err(|e| e.to_string())?;
        }
        if event % 10 == 9 {
            epoch += 1;
            let ratings: Vec<Rating> = read_jsonl(&rp).map_err(|e| e.to_string())?;
            let overrides: Vec<WeightOverride> = read_jsonl(&op).map_err(|e| e.to_string())?;
            let before = live.history.len();
            live = advance_epoch(&live, &ratings, &overrides, epoch, &cfg).map_err(|e| e.to_string())?;
            fired += live.history.len() - before;
            live.save(&fp).map_err(|e| e.to_string())?;
        }
    }
    let saved = FeedbackState::load(&fp).map_err(|e| e.to_string())?;
    let ratings: Vec<Rating> = read_jsonl(&rp).map_err(|e| e.to_string())?;
    let overrides: Vec<WeightOverride> = read_jsonl(&op).map_err(|e| e.to_string())?;
    let rebuilt = replay(&FeedbackState::new("run", 3.0), &ratings, &overrides, &saved.boundaries, &cfg)
        .map_err(|e| e.to_string())?;
    check(rebuilt == live && saved == live, "replayed state differs")?;
    let bits = |s: &FeedbackState| (s.alpha.to_bits(), s.beta.to_bits(), s.target_thickness.to_bits());
    check(bits(&rebuilt) == bits(&live), "weights differ in the last bit")?;
    check(
        serde_json::to_string(&rebuilt).unwrap() == serde_json::to_string(&live).unwrap(),
        "serialized states differ",
    )?;
    Ok(format!(
        "48 ratings + 2 overrides over 5 boundaries replay bit-exactly ({fired} history records, alpha {}, beta {}); rule table checks pass",
        live.alpha, live.beta
    ))
}

// ---------------------------------------------------------------- spline suite

/// Cox-de Boor recursion, written from the definition.
fn cox_de_boor(knots: &[f64], i: usize, p: usize, t: f64) -> f64 {
    if p == 0 {
        return if knots[i] <= t && t < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t);
    }
    v
}

fn naive_eval(path: &SplinePath, t: f64) -> Point {
    let mut out = [0.0, 0.0];
    for (i, c) in path.control_points.iter().enumerate() {
        let b = cox_de_boor(&path.knots, i, path.degree, t);
        out[0] += b * c[0];
        out[1] += b * c[1];
    }
    out
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn spline_suite() -> Outcome {
    let e = |e: colsig_core::Error| e.to_string();
    // Collinear anchors.
    let line: Vec<Point> = [0.0, 13.0, 40.0, 61.0, 100.0].iter().map(|&s| [20.0 + 2.0 * s, 10.0 + 0.4 * s]).collect();
    let path = fit_bspline(&line, 3, 0.0).map_err(e)?;
    let mut collinear: f64 = 0.0;
    for k in 0..100 {
        let p = path.evaluate(k as f64 / 99.0).map_err(e)?;
        // Distance to y = 10 + 0.2 (x - 20).
        collinear = collinear.max((p[1] - 10.0 - 0.2 * (p[0] - 20.0)).abs() / 1.04f64.sqrt());
    }
    check(collinear <= 1e-9, format!("collinear deviation {collinear:e}"))?;

    // De Boor against the recursion.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let anchors: Vec<Point> = (0..12).map(|i| [i as f64 * 18.0 + rng.random_range(0.0..6.0), rng.random_range(5.0..60.0)]).collect();
    let mut deboor: f64 = 0.0;
    for smoothing in [0.0, 0.5] {
        let path = fit_bspline(&anchors, 3, smoothing).map_err(e)?;
        for _ in 0..500 {
            let t = rng.random_range(0.0..1.0);
            deboor = deboor.max(dist(path.evaluate(t).map_err(e)?, naive_eval(&path, t)));
        }
    }
    check(deboor <= 1e-12, format!("de Boor vs recursion {deboor:e}"))?;

    // Semicircle.
    let (cx, cy, r) = (128.0, 60.0, 50.0);
    let semi: Vec<Point> = (0..8)
        .map(|i| {
            let a = std::f64::consts::PI * i as f64 / 7.0;
            [cx + r * a.cos(), cy - r * a.sin()]
        })
        .collect();
    let path = fit_bspline(&semi, 3, 0.0).map_err(e)?;
    let ts = chord_parameters(&semi);
    let mut at_anchor: f64 = 0.0;
    for (t, a) in ts.iter().zip(&semi) {
        at_anchor = at_anchor.max(dist(path.evaluate(*t).map_err(e)?, *a));
    }
    let mut radial: f64 = 0.0;
    for k in 0..=1000 {
        let p = path.evaluate(k as f64 / 1000.0).map_err(e)?;
        radial = radial.max((dist(p, [cx, cy]) - r).abs() / r);
    }
    check(at_anchor < 1e-6, format!("semicircle anchor residual {at_anchor:e}"))?;
    check(radial < 0.02, format!("semicircle radial deviation {:.3}%", radial * 100.0))?;

    // Arc-length resampling.
    let pts = path.resample_arclength(40).map_err(e)?;
    let segs: Vec<f64> = pts.windows(2).map(|w| dist(w[0], w[1])).collect();
    let mean = segs.iter().sum::<f64>() / segs.len() as f64;
    let uniform = segs.iter().map(|s| (s - mean).abs() / mean).fold(0.0, f64::max);
    check(uniform < 0.01, format!("resampling deviation {:.3}%", uniform * 100.0))?;

    // Affine equivariance, including shear and anisotropic scaling.
    let maps = [[1.8, -0.4, 0.3, 0.6, -31.0, 12.5], [0.0, 1.0, 1.0, 0.0, 0.0, 0.0], [2.5, 1.2, 0.0, 0.2, 7.0, -3.0]];
    let mut equi: f64 = 0.0;
    for [a, b, c, d, tx, ty] in maps {
        let map = |p: Point| [a * p[0] + b * p[1] + tx, c * p[0] + d * p[1] + ty];
        for smoothing in [0.0, 2.0] {
            let fa = fit_bspline(&anchors, 3, smoothing).map_err(e)?;
            let moved: Vec<Point> = anchors.iter().map(|&p| map(p)).collect();
            let fb = fit_bspline(&moved, 3, smoothing).map_err(e)?;
            for i in 0..=100 {
                let t = i as f64 / 100.0;
                equi = equi.max(dist(fb.evaluate(t).map_err(e)?, map(fa.evaluate(t).map_err(e)?)));
            }
        }
    }
    check(equi <= 1e-9, format!("equivariance {equi:e}"))?;
    Ok(format!(
        "collinear {collinear:.1e}, de Boor {deboor:.1e}, semicircle {:.3}% (anchors {at_anchor:.1e}), resampling {:.3}%, equivariance {equi:.1e}",
        radial * 100.0,
        uniform * 100.0
    ))
}

// ----------------------------------------------------------------- end to end

fn colsig(args: &[&str], cwd: &Path) -> std::result::Result<serde_json::Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_colsig"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`colsig {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cwd = tmp.path();
    let anchors = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/anchors.json");
    std::fs::write(cwd.join("train.json"), r#"{"train": {"epochs": 2}}"#).map_err(|e| e.to_string())?;
    colsig(&["synth-corpus", "--out", "raw", "--n", "200", "--seed", "1"], cwd)?;
    let pre = colsig(&["preprocess", "--in", "raw", "--out", "masks"], cwd)?;
    colsig(&["dataset", "build", "--manifest", "masks/manifest.csv", "--target", "university", "--upweight", "3", "--out", "plan.json"], cwd)?;
    let run = colsig(&["train", "--plan", "plan.json", "--config", "train.json", "--out", "runs", "--seed", "1", "--run-id", "e2e"], cwd)?;
    check(run["epochs"] == 2, format!("train summary {run}"))?;
    let mem = colsig(&["check-mem", "--samples", "runs/e2e/epoch_2", "--training", "masks", "--tau", "0.05", "--out", "report.json"], cwd)?;
    let anchors = anchors.to_string_lossy();
    colsig(&["vectorize", "--sample", "runs/e2e/epoch_2/sample_0.png", "--anchors", &anchors, "--smoothing", "0", "--out", "vector"], cwd)?;
    colsig(&["animate", "--paths", "vector/paths.json", "--duration", "60", "--out", "animation.json"], cwd)?;

    let svg = std::fs::read_to_string(cwd.join("vector/signature.svg")).map_err(|e| e.to_string())?;
    check(svg.contains("<svg") && svg.contains(" C "), "SVG lacks cubic paths")?;
    let text = std::fs::read_to_string(cwd.join("animation.json")).map_err(|e| e.to_string())?;
    let script: AnimationScript = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let total: f64 = script.segments.iter().map(|s| s.t_end - s.t_start).sum();
    check(script.total_duration == 60.0, format!("total_duration {}", script.total_duration))?;
    check((total - 60.0).abs() <= 1e-9, format!("segment durations sum to {total}"))?;
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cwd.join("report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    check(reports.as_array().is_some_and(|r| r.len() == 16), "memorization report incomplete")?;
    Ok(format!(
        "{} masks, {} critic steps, {} flagged, {} animation segments summing to {total}",
        pre["kept"],
        run["critic_steps"],
        mem["flagged"].as_array().map_or(0, Vec::len),
        script.segments.len()
    ))
}

// ------------------------------------------------------------------------ main

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("hysteresis oracle", Duration::from_secs(5), hysteresis),
        ("gradient penalty analytics", Duration::from_secs(30), gradient_penalty_analytics),
        ("determinism and resume", Duration::from_secs(120), determinism_and_resume),
        ("training smoke", Duration::from_secs(30 * 60), training_smoke),
        ("weighting", Duration::from_secs(10), weighting),
        ("memorization", Duration::from_secs(60), memorization),
        ("feedback replay", Duration::from_secs(5), feedback_replay),
        ("spline suite", Duration::from_secs(30), spline_suite),
        ("end to end", Duration::from_secs(40 * 60), end_to_end),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, limit, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = t0.elapsed();
        let result = match result {
            Ok(d) if elapsed > limit => Err(format!("took {:.1}s, limit {}s ({d})", elapsed.as_secs_f64(), limit.as_secs())),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS  {name} [{:.1}s]: {detail}", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{:.1}s]: {why}", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
