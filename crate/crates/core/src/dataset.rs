//! Community-weighted sampling plans over the signature manifest.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Community {
    University,
    City,
}

impl Community {
    pub const ALL: [Community; 2] = [Community::University, Community::City];

    pub fn as_str(self) -> &'static str {
        match self {
            Community::University => "university",
            Community::City => "city",
        }
    }
}

impl fmt::Display for Community {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Community {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "university" => Ok(Community::University),
            "city" => Ok(Community::City),
            _ => Err(Error::UnknownCommunity(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub source_id: String,
    pub community: Community,
}

/// Read a manifest: one `path,source_id,community` record per line, no header.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Parse {
                context: path.display().to_string(),
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(&record[0]),
            source_id: record[1].to_string(),
            community: record[2].parse()?,
        });
    }
    check_unique(&entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for e in entries {
        writer.write_record([
            e.path.to_string_lossy().as_ref(),
            e.source_id.as_str(),
            e.community.as_str(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn check_unique(entries: &[ManifestEntry]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.source_id.as_str()) {
            return Err(Error::DuplicateSource(e.source_id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub entries: Vec<ManifestEntry>,
    pub target_community: Community,
    pub upweight: f64,
    pub probabilities: Vec<f64>,
}

/// Each entry of `target` gets weight `upweight`, every other entry weight 1,
/// normalized to a distribution.
pub fn build_plan(entries: Vec<ManifestEntry>, target: Community, upweight: f64) -> Result<SamplingPlan> {
    if entries.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    if upweight.is_nan() || upweight < 1.0 || upweight.is_infinite() {
        return Err(Error::param(format!("upweight must be finite and >= 1, got {upweight}")));
    }
    check_unique(&entries)?;
    let n_target = entries.iter().filter(|e| e.community == target).count() as f64;
    let total = n_target * upweight + (entries.len() as f64 - n_target);
    let p_target = upweight / total;
    let p_other = 1.0 / total;
    let probabilities = entries
        .iter()
        .map(|e| if e.community == target { p_target } else { p_other })
        .collect();
    Ok(SamplingPlan {
        entries,
        target_community: target,
        upweight,
        probabilities,
    })
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: SamplingPlan = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        crate::write_atomic(path, text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Empty("sampling plan"));
        }
        if self.probabilities.len() != self.entries.len() {
            return Err(Error::Shape {
                expected: format!("{} probabilities", self.entries.len()),
                actual: format!("{}", self.probabilities.len()),
            });
        }
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.probabilities.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::param("plan probabilities must be positive and sum to 1"));
        }
        Ok(())
    }

    /// Draw `batch_size` indices i.i.d. with replacement.
    pub fn sample_batch_indices(&self, batch_size: usize, rng_seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.sample_with(batch_size, &mut rng)
    }

    /// Same as [`Self::sample_batch_indices`] but continuing an existing stream.
    pub fn sample_with<R: rand::Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        let dist = WeightedIndex::new(&self.probabilities).expect("validated plan");
        (0..batch_size).map(|_| dist.sample(rng)).collect()
    }
}
