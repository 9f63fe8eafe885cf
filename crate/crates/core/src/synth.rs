//! Synthetic signature corpus: random looping scrawls, fitted with cubic
//! b-splines and rendered as dark ink on slightly noisy paper.
//!
//! The two communities differ in slant direction and loop frequency, so a
//! weighted model has something community-specific to pick up.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_manifest, Community, ManifestEntry};
use crate::error::{Error, Result};
use crate::raster::{Canvas, RasterImage};
use crate::vectorize::fit_bspline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityStyle {
    pub slant: (f64, f64),
    /// Loops per signature.
    pub loop_rate: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCorpusSpec {
    pub n_per_community: usize,
    pub university: CommunityStyle,
    pub city: CommunityStyle,
    pub seed: u64,
    pub canvas: Canvas,
    /// Pen radius in pixels.
    pub pen_radius: f64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        SynthCorpusSpec {
            n_per_community: 500,
            university: CommunityStyle {
                slant: (0.3, 0.7),
                loop_rate: (2.0, 3.5),
            },
            city: CommunityStyle {
                slant: (-0.6, -0.2),
                loop_rate: (5.0, 7.0),
            },
            seed: 0,
            canvas: Canvas::default(),
            pen_radius: 1.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSignature {
    pub source_id: String,
    pub community: Community,
    /// Scan-like raster: dark ink (low values) on light paper.
    pub scan: RasterImage,
}

impl SynthCorpusSpec {
    fn style(&self, c: Community) -> &CommunityStyle {
        match c {
            Community::University => &self.university,
            Community::City => &self.city,
        }
    }

    /// Deterministic for a fixed seed; communities are interleaved so that
    /// each signature has its own derived stream.
    pub fn generate(&self) -> Result<Vec<SynthSignature>> {
        if self.n_per_community == 0 {
            return Err(Error::param("n_per_community must be at least 1"));
        }
        let mut out = Vec::with_capacity(2 * self.n_per_community);
        for (ci, community) in Community::ALL.into_iter().enumerate() {
            for i in 0..self.n_per_community {
                let stream = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((ci as u64) << 32 | i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                let scan = self.render_one(community, &mut rng)?;
                out.push(SynthSignature {
                    source_id: format!("{}_{i:04}", community.as_str()),
                    community,
                    scan,
                });
            }
        }
        Ok(out)
    }

    fn render_one(&self, community: Community, rng: &mut ChaCha8Rng) -> Result<RasterImage> {
        let style = self.style(community);
        let (h, w) = (self.canvas.height as f64, self.canvas.width as f64);
        let slant = rng.random_range(style.slant.0..=style.slant.1);
        let loops = rng.random_range(style.loop_rate.0..=style.loop_rate.1);
        let amp = h * rng.random_range(0.16..0.26);
        let length = w * rng.random_range(0.55..0.8);
        let x0 = (w - length) / 2.0;
        let yc = h / 2.0 + rng.random_range(-2.0..2.0);
        let reach = amp * rng.random_range(0.7..1.0);
        let phase = rng.random_range(0.0..2.0 * PI);

        // Anchors along a slanted trochoid, jittered.
        let n_anchors = (loops * 6.0).ceil() as usize + 4;
        let anchors: Vec<[f64; 2]> = (0..n_anchors)
            .map(|k| {
                let t = k as f64 / (n_anchors - 1) as f64;
                let theta = 2.0 * PI * loops * t + phase;
                let y = yc - amp * theta.cos() + rng.random_range(-1.0..1.0);
                let x = x0 + length * t - reach * theta.sin() + slant * (yc - y) + rng.random_range(-1.0..1.0);
                [x.clamp(2.0, w - 3.0), y.clamp(2.0, h - 3.0)]
            })
            .collect();
        let spline = fit_bspline(&anchors, 3, 0.5)?;

        let mut ink = vec![0.0f64; self.canvas.len()];
        let samples = (spline.length() * 3.0).ceil() as usize + 2;
        let r = self.pen_radius;
        let reach_px = r.ceil() as isize + 1;
        for s in 0..samples {
            let p = spline.eval_unchecked(s as f64 / (samples - 1) as f64);
            let (cx, cy) = (p[0].round() as isize, p[1].round() as isize);
            for dy in -reach_px..=reach_px {
                for dx in -reach_px..=reach_px {
                    let (x, y) = (cx + dx, cy + dy);
                    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                        continue;
                    }
                    let d = (x as f64 - p[0]).hypot(y as f64 - p[1]);
                    let cover = (r + 0.5 - d).clamp(0.0, 1.0);
                    let idx = y as usize * self.canvas.width + x as usize;
                    ink[idx] = ink[idx].max(cover);
                }
            }
        }
        let paper = rng.random_range(0.85..0.95);
        let dark = rng.random_range(0.05..0.2);
        let pixels = ink
            .iter()
            .map(|&c| {
                let noise = rng.random_range(-0.03..0.03);
                (paper + (dark - paper) * c + noise).clamp(0.0, 1.0)
            })
            .collect();
        RasterImage::new(self.canvas.width, self.canvas.height, pixels)
    }

    /// Write `<source_id>.png` files and `manifest.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<ManifestEntry>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for sig in self.generate()? {
            let path: PathBuf = dir.join(format!("{}.png", sig.source_id));
            sig.scan.save_png(&path)?;
            entries.push(ManifestEntry {
                path,
                source_id: sig.source_id,
                community: sig.community,
            });
        }
        write_manifest(&dir.join("manifest.csv"), &entries)?;
        Ok(entries)
    }
}
