//! External per-step feature vectors fused into the RL observation.
//!
//! A recorded-feature directory holds one `<scenario_id>.features.jsonl`
//! file per scenario; each line is `{"step": k, "feature": [f64, ...]}`.
//! All vectors share one length. Steps without a record get zeros.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::env::{Observer, SimulatorView, StateObserver};

pub const FEATURE_EXTENSION: &str = "features.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("feature block has {got} values, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("no feature files in {0}")]
    Empty(String),
}

pub trait FeatureProvider: Sync {
    fn dim(&self) -> usize;
    fn feature(&self, scenario_id: &str, step: usize) -> Option<&[f64]>;
}

/// No external features: the observation is the simulator state alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFeatures;

impl FeatureProvider for NoFeatures {
    fn dim(&self) -> usize {
        0
    }

    fn feature(&self, _: &str, _: usize) -> Option<&[f64]> {
        None
    }
}

#[derive(Debug, Clone, Default)]
pub struct RecordedFeatures {
    dim: usize,
    by_scenario: BTreeMap<String, BTreeMap<usize, Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureLine {
    step: usize,
    feature: Vec<f64>,
}

impl RecordedFeatures {
    pub fn from_records(records: BTreeMap<String, BTreeMap<usize, Vec<f64>>>) -> Result<Self, FeatureError> {
        let dim = records
            .values()
            .flat_map(|m| m.values())
            .next()
            .map_or(0, Vec::len);
        for v in records.values().flat_map(|m| m.values()) {
            if v.len() != dim {
                return Err(FeatureError::Dimension {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        Ok(Self {
            dim,
            by_scenario: records,
        })
    }

    pub fn load_dir(dir: &Path) -> Result<Self, FeatureError> {
        let io = |source| FeatureError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(&format!(".{FEATURE_EXTENSION}")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(FeatureError::Empty(dir.display().to_string()));
        }
        let mut records = BTreeMap::new();
        for path in files {
            let name = path.file_name().expect("file").to_string_lossy().to_string();
            let id = name.trim_end_matches(&format!(".{FEATURE_EXTENSION}")).to_string();
            let text = std::fs::read_to_string(&path).map_err(|source| FeatureError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let mut steps = BTreeMap::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: FeatureLine = serde_json::from_str(line).map_err(|e| FeatureError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                steps.insert(rec.step, rec.feature);
            }
            records.insert(id, steps);
        }
        Self::from_records(records)
    }
}

impl FeatureProvider for RecordedFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn feature(&self, scenario_id: &str, step: usize) -> Option<&[f64]> {
        self.by_scenario.get(scenario_id)?.get(&step).map(Vec::as_slice)
    }
}

/// Simulator state block first, external feature block second. A missing
/// feature becomes `il_dim` zeros.
pub fn fuse_observation(sim: &[f64], il: Option<&[f64]>, il_dim: usize) -> Result<Vec<f64>, FeatureError> {
    let mut out = Vec::with_capacity(sim.len() + il_dim);
    out.extend_from_slice(sim);
    match il {
        Some(f) if f.len() != il_dim => {
            return Err(FeatureError::Dimension {
                expected: il_dim,
                got: f.len(),
            })
        }
        Some(f) => out.extend_from_slice(f),
        None => out.resize(sim.len() + il_dim, 0.0),
    }
    Ok(out)
}

/// Simulator observation fused with a feature provider.
pub struct FusedObserver<'a> {
    pub provider: &'a dyn FeatureProvider,
}

impl Observer for FusedObserver<'_> {
    fn dim(&self) -> usize {
        StateObserver.dim() + self.provider.dim()
    }

    fn observe(&self, view: &SimulatorView) -> Vec<f64> {
        let sim = StateObserver.observe(view);
        let f = self.provider.feature(&view.scenario.id, view.step);
        // provider vectors are length-checked on load
        fuse_observation(&sim, f, self.provider.dim()).expect("feature length checked on load")
    }
}
