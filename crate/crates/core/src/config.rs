//! Experiment configuration files.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{ModelFile, ModelSpec};
use crate::spectral::OperatorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Constants,
    Simulate,
    Apriori,
    Perturbation,
    Barrier,
    Convergence,
    Counterexamples,
    Isometry,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Constants,
        Experiment::Simulate,
        Experiment::Apriori,
        Experiment::Perturbation,
        Experiment::Barrier,
        Experiment::Convergence,
        Experiment::Counterexamples,
        Experiment::Isometry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Constants => "constants",
            Experiment::Simulate => "simulate",
            Experiment::Apriori => "apriori",
            Experiment::Perturbation => "perturbation",
            Experiment::Barrier => "barrier",
            Experiment::Convergence => "convergence",
            Experiment::Counterexamples => "counterexamples",
            Experiment::Isometry => "isometry",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment {s:?}")))
    }
}

/// A model given by file path (relative to the config file) or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path(String),
    Inline(Box<ModelFile>),
}

/// Every knob is optional; each experiment supplies its own defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    /// Grading exponent `q` of the time grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grading: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varrho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sweep: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_sweep: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Space index; its meaning (`H_r` or `H_{-r}`) is per experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_paths: Option<usize>,
    /// Size of initial-value perturbations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Write raw paths of `simulate` as a binary dump.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump: Option<bool>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn experiment(&self) -> Result<Option<Experiment>> {
        self.experiment.as_deref().map(str::parse).transpose()
    }

    /// The model file after the `modes` override, if a model is configured.
    pub fn model_file(&self) -> Result<Option<ModelFile>> {
        let file = match &self.model {
            None => return Ok(None),
            Some(ModelRef::Inline(f)) => (**f).clone(),
            Some(ModelRef::Path(p)) => {
                let path = match &self.base_dir {
                    Some(d) => d.join(p),
                    None => PathBuf::from(p),
                };
                ModelFile::load(&path)?
            }
        };
        Ok(Some(match self.modes {
            Some(n) => with_modes(&file, n)?,
            None => file,
        }))
    }

    pub fn model(&self) -> Result<Option<ModelSpec>> {
        self.model_file()?.map(|f| ModelSpec::from_file(&f)).transpose()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// The same model file on `{-n..n}`; only periodic Laplacians can be resized.
pub fn with_modes(file: &ModelFile, n: usize) -> Result<ModelFile> {
    let mut f = file.clone();
    match &mut f.operator {
        OperatorSpec::PeriodicLaplacian { n: m, .. } => *m = n,
        OperatorSpec::Explicit { .. } => {
            return invalid("the mode count of an explicit operator cannot be overridden")
        }
    }
    Ok(f)
}

/// FNV-1a hash, used to separate the random streams of experiments.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Master seed for the named stream of an experiment.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("nope".parse::<Experiment>().is_err());
    }

    #[test]
    fn minimal_config() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment": "apriori"}"#).unwrap();
        assert_eq!(cfg.experiment().unwrap(), Some(Experiment::Apriori));
        assert!(cfg.model().unwrap().is_none());
        assert!(ExperimentConfig::from_json(r#"{"experimnt": "apriori"}"#).is_err());
    }

    #[test]
    fn inline_model_and_modes_override() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "simulate", "modes": 5, "model": {
                "operator": {"kind": "periodic_laplacian", "N": 8, "nu": 1, "eta": 1},
                "initial": {"kind": "rough", "gamma": 0}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.model().unwrap().unwrap().operator().len(), 11);
    }

    #[test]
    fn seeds_are_separated() {
        assert_ne!(stream_seed(1, "apriori"), stream_seed(1, "barrier"));
        assert_ne!(stream_seed(1, "apriori"), stream_seed(2, "apriori"));
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
