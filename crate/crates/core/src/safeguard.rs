//! Memorization screening: nearest-training-image distance for generated
//! samples.
//!
//! The distance is the root-mean-square difference of the two images after a
//! Gaussian blur with sigma 1. Blurring makes the comparison tolerant of
//! one-pixel stroke jitter while keeping exact copies at distance 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RasterImage};

pub const BLUR_SIGMA: f64 = 1.0;
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub sample_id: String,
    pub nearest_source_id: String,
    pub distance: f64,
    pub flagged: bool,
    pub tau: f64,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflected borders; constants are preserved.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * img.pixels[y * w + reflect(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[reflect(y as isize + k as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    RasterImage {
        width: w,
        height: h,
        pixels: out,
    }
}

fn check_same_shape(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape {
            expected: format!("{}x{}", a.height, a.width),
            actual: format!("{}x{}", b.height, b.width),
        });
    }
    Ok(())
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Blurred RMS distance in `[0, 1]` between two same-sized images.
pub fn image_distance(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check_same_shape(a, b)?;
    let (ba, bb) = (gaussian_blur(a, BLUR_SIGMA), gaussian_blur(b, BLUR_SIGMA));
    Ok(rms(&ba.pixels, &bb.pixels).min(1.0))
}

/// Training masks, pre-blurred once for repeated queries.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    ids: Vec<String>,
    blurred: Vec<RasterImage>,
}

impl TrainingSet {
    pub fn new(items: impl IntoIterator<Item = (String, RasterImage)>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut blurred: Vec<RasterImage> = Vec::new();
        for (id, img) in items {
            if let Some(first) = blurred.first() {
                check_same_shape(first, &img)?;
            }
            ids.push(id);
            blurred.push(gaussian_blur(&img, BLUR_SIGMA));
        }
        if ids.is_empty() {
            return Err(Error::Empty("training set"));
        }
        Ok(TrainingSet { ids, blurred })
    }

    pub fn from_masks<'a>(items: impl IntoIterator<Item = (&'a str, &'a BinaryMask)>) -> Result<Self> {
        Self::new(items.into_iter().map(|(id, m)| (id.to_string(), m.to_image())))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Exact nearest neighbour by linear scan; ties go to the earliest item.
    pub fn nearest(&self, sample: &RasterImage) -> Result<(f64, &str)> {
        check_same_shape(&self.blurred[0], sample)?;
        let blurred = gaussian_blur(sample, BLUR_SIGMA);
        let mut best = (f64::INFINITY, 0usize);
        for (i, t) in self.blurred.iter().enumerate() {
            let d = rms(&blurred.pixels, &t.pixels);
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok((best.0.min(1.0), &self.ids[best.1]))
    }

    /// Distance between two training items, by index.
    pub fn pair_distance(&self, i: usize, j: usize) -> f64 {
        rms(&self.blurred[i].pixels, &self.blurred[j].pixels).min(1.0)
    }
}

pub fn nearest_training_distance(sample: &RasterImage, training: &TrainingSet) -> Result<(f64, String)> {
    training.nearest(sample).map(|(d, id)| (d, id.to_string()))
}

/// One report per sample; a sample is flagged iff its nearest distance is
/// strictly below `tau`.
pub fn screen_batch<'a>(
    samples: impl IntoIterator<Item = (&'a str, &'a RasterImage)>,
    training: &TrainingSet,
    tau: f64,
) -> Result<Vec<MemorizationReport>> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::param(format!("tau must lie in [0, 1), got {tau}")));
    }
    samples
        .into_iter()
        .map(|(sample_id, img)| {
            let (distance, nearest) = training.nearest(img)?;
            Ok(MemorizationReport {
                sample_id: sample_id.to_string(),
                nearest_source_id: nearest.to_string(),
                distance,
                flagged: distance < tau,
                tau,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> RasterImage {
        RasterImage {
            width: w,
            height: h,
            pixels: (0..w * h).map(|_| rng.random::<f64>()).collect(),
        }
    }

    #[test]
    fn distance_basics() {
        let a = RasterImage::filled(32, 8, 1.0);
        let b = RasterImage::filled(32, 8, 0.0);
        assert_eq!(image_distance(&a, &a).unwrap(), 0.0);
        assert!((image_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(image_distance(&a, &RasterImage::filled(8, 8, 0.0)).is_err());
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = random_image(&mut rng, 20, 6);
            let b = random_image(&mut rng, 20, 6);
            assert_eq!(image_distance(&a, &b).unwrap(), image_distance(&b, &a).unwrap());
        }
    }

    fn brute_force_nearest(sample: &RasterImage, items: &[(String, RasterImage)]) -> (f64, String) {
        let mut best = (f64::INFINITY, String::new());
        for (id, img) in items {
            let d = image_distance(sample, img).unwrap();
            if d < best.0 {
                best = (d, id.clone());
            }
        }
        best
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let items: Vec<(String, RasterImage)> = (0..50)
            .map(|i| (format!("t{i}"), random_image(&mut rng, 24, 8)))
            .collect();
        let set = TrainingSet::new(items.clone()).unwrap();
        for _ in 0..5 {
            let q = random_image(&mut rng, 24, 8);
            let (d, id) = nearest_training_distance(&q, &set).unwrap();
            let (bd, bid) = brute_force_nearest(&q, &items);
            assert_eq!(id, bid);
            assert!((d - bd).abs() < 1e-12);
            for k in (0..50).step_by(5) {
                assert!(d <= image_distance(&q, &items[k].1).unwrap() + 1e-12);
            }
        }
        let (d, id) = nearest_training_distance(&items[17].1, &set).unwrap();
        assert_eq!((d, id.as_str()), (0.0, "t17"));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(TrainingSet::new(Vec::new()), Err(Error::Empty(_))));
    }

    #[test]
    fn screening_flags_planted_copy_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let items: Vec<(String, RasterImage)> = (0..10)
            .map(|i| (format!("t{i}"), random_image(&mut rng, 16, 8).binarize(0.8).to_image()))
            .collect();
        let set = TrainingSet::new(items.clone()).unwrap();
        let noise: Vec<RasterImage> = (0..4).map(|_| random_image(&mut rng, 16, 8)).collect();
        let mut batch: Vec<(String, &RasterImage)> =
            noise.iter().enumerate().map(|(i, im)| (format!("s{i}"), im)).collect();
        batch.push(("copy".into(), &items[3].1));
        let reports = screen_batch(batch.iter().map(|(id, im)| (id.as_str(), *im)), &set, 0.05).unwrap();
        let flagged: Vec<_> = reports.iter().filter(|r| r.flagged).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].sample_id, "copy");
        assert_eq!(flagged[0].nearest_source_id, "t3");
        assert_eq!(flagged[0].distance, 0.0);

        let none = screen_batch(batch.iter().map(|(id, im)| (id.as_str(), *im)), &set, 0.0).unwrap();
        assert!(none.iter().all(|r| !r.flagged));

        // Order independence.
        let reversed =
            screen_batch(batch.iter().rev().map(|(id, im)| (id.as_str(), *im)), &set, 0.05).unwrap();
        let mut fwd = reports.clone();
        let mut rev = reversed;
        fwd.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        rev.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        assert_eq!(fwd, rev);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn blurred_rms_is_a_pseudometric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_image(&mut rng, 12, 7);
            let b = random_image(&mut rng, 12, 7);
            let c = random_image(&mut rng, 12, 7);
            let ab = image_distance(&a, &b).unwrap();
            let bc = image_distance(&b, &c).unwrap();
            let ac = image_distance(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, image_distance(&b, &a).unwrap());
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
