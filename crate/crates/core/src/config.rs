//! Run configuration: one JSON document per experiment.
//!
//! The document carries the system description plus four optional
//! blocks (solver, spectrum, montecarlo, oracle) and an output
//! directory. Omitted blocks get the documented defaults, and the
//! fully resolved configuration is what reaches the run manifest, so
//! a rerun never depends on defaults drifting between versions.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::oracle::CountMode;
use crate::system::{RawSystem, SystemSpec};
use crate::transfer::DEFAULT_TOL;
use crate::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_STEPS: usize = 41;
pub const DEFAULT_MC_N: usize = 100_000;
pub const DEFAULT_SAMPLES: usize = 200;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_ORACLE_DEPTH: usize = 4096;
pub const DEFAULT_ORACLE_EPS: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
pub struct SolverBlock {
    pub tol: f64,
    /// Cap on fixed-point sweeps for direct transfer solves.
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectrumBlock {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MonteCarloBlock {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleBlock {
    pub depth: usize,
    pub eps: f64,
    pub mode: CountMode,
}

/// Validated configuration with every default resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: SystemSpec,
    pub solver: SolverBlock,
    pub spectrum: SpectrumBlock,
    pub montecarlo: MonteCarloBlock,
    pub oracle: OracleBlock,
    pub output_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    tol: Option<f64>,
    max_iter: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpectrum {
    alpha_min: Option<f64>,
    alpha_max: Option<f64>,
    steps: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMonteCarlo {
    n: Option<usize>,
    samples: Option<usize>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    depth: Option<usize>,
    eps: Option<f64>,
    mode: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    solver: Option<RawSolver>,
    spectrum: Option<RawSpectrum>,
    montecarlo: Option<RawMonteCarlo>,
    oracle: Option<RawOracle>,
    output_dir: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let raw: RawConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("config parse: {e}")))?;
        let spec = SystemSpec::validate(&raw.system)?;

        let solver = {
            let b = raw.solver.as_ref();
            SolverBlock {
                tol: b.and_then(|b| b.tol).unwrap_or(DEFAULT_TOL),
                max_iter: b.and_then(|b| b.max_iter).unwrap_or(DEFAULT_MAX_ITER),
            }
        };
        let spectrum = {
            let b = raw.spectrum.as_ref();
            SpectrumBlock {
                alpha_min: b.and_then(|b| b.alpha_min).unwrap_or_else(|| spec.phi_min()),
                alpha_max: b.and_then(|b| b.alpha_max).unwrap_or_else(|| spec.phi_max()),
                steps: b.and_then(|b| b.steps).unwrap_or(DEFAULT_STEPS),
            }
        };
        let montecarlo = {
            let b = raw.montecarlo.as_ref();
            MonteCarloBlock {
                n: b.and_then(|b| b.n).unwrap_or(DEFAULT_MC_N),
                samples: b.and_then(|b| b.samples).unwrap_or(DEFAULT_SAMPLES),
                seed: b.and_then(|b| b.seed).unwrap_or(DEFAULT_SEED),
            }
        };
        let oracle = {
            let b = raw.oracle.as_ref();
            OracleBlock {
                depth: b.and_then(|b| b.depth).unwrap_or(DEFAULT_ORACLE_DEPTH),
                eps: b.and_then(|b| b.eps).unwrap_or(DEFAULT_ORACLE_EPS),
                mode: match b.and_then(|b| b.mode.as_deref()) {
                    Some(text) => text.parse()?,
                    None => CountMode::Dp,
                },
            }
        };
        let output_dir = PathBuf::from(raw.output_dir.unwrap_or_else(|| "out".into()));

        let cfg = RunConfig { spec, solver, spectrum, montecarlo, oracle, output_dir };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.solver.tol > 0.0) {
            issues.push(format!("solver.tol = {} must be positive", self.solver.tol));
        }
        if self.solver.max_iter == 0 {
            issues.push("solver.max_iter must be at least 1".into());
        }
        if self.spectrum.steps < 2 {
            issues.push(format!("spectrum.steps = {} must be at least 2", self.spectrum.steps));
        }
        if !(self.spectrum.alpha_min <= self.spectrum.alpha_max) {
            issues.push(format!(
                "spectrum range [{}, {}] is not ordered",
                self.spectrum.alpha_min, self.spectrum.alpha_max
            ));
        }
        if self.montecarlo.n < self.spec.q {
            issues.push(format!(
                "montecarlo.n = {} is below q = {}; no pair fits",
                self.montecarlo.n, self.spec.q
            ));
        }
        if self.montecarlo.samples == 0 {
            issues.push("montecarlo.samples must be at least 1".into());
        }
        if self.oracle.depth < self.spec.q {
            issues.push(format!(
                "oracle.depth = {} is below q = {}; no pair fits",
                self.oracle.depth, self.spec.q
            ));
        }
        if !(self.oracle.eps > 0.0) {
            issues.push(format!("oracle.eps = {} must be positive", self.oracle.eps));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(issues.join("; ")))
        }
    }

    /// The configuration with every default filled in, as the JSON
    /// value recorded in manifests. Keys serialize in sorted order, so
    /// the rendering is byte-stable.
    pub fn resolved(&self) -> Value {
        let raw = self.spec.to_raw();
        json!({
            "system": {
                "m": raw.m,
                "q": raw.q,
                "intervals": raw.intervals,
                "lambdas": raw.lambdas,
                "phi": raw.phi,
                "ell": raw.ell,
            },
            "solver": { "tol": self.solver.tol, "max_iter": self.solver.max_iter },
            "spectrum": {
                "alpha_min": self.spectrum.alpha_min,
                "alpha_max": self.spectrum.alpha_max,
                "steps": self.spectrum.steps,
            },
            "montecarlo": {
                "n": self.montecarlo.n,
                "samples": self.montecarlo.samples,
                "seed": self.montecarlo.seed,
            },
            "oracle": {
                "depth": self.oracle.depth,
                "eps": self.oracle.eps,
                "mode": self.oracle.mode.to_string(),
            },
            "output_dir": self.output_dir.to_string_lossy(),
        })
    }

    /// Hex SHA-256 of the resolved configuration rendering.
    pub fn hash(&self) -> String {
        let text = self.resolved().to_string();
        let digest = Sha256::digest(text.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "system": { "m": 2, "q": 2, "lambdas": [0.6931471805599453, 0.6931471805599453],
                    "phi": [[0.0, 0.0], [0.0, 1.0]] }
    }"#;

    #[test]
    fn defaults_fill_omitted_blocks() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.solver.tol, 1e-13);
        assert_eq!(cfg.solver.max_iter, 10_000);
        assert_eq!(cfg.spectrum.steps, 41);
        assert_eq!(cfg.spectrum.alpha_min, 0.0);
        assert_eq!(cfg.spectrum.alpha_max, 1.0);
        assert_eq!(cfg.montecarlo.n, 100_000);
        assert_eq!(cfg.montecarlo.samples, 200);
        assert_eq!(cfg.montecarlo.seed, 1);
        assert_eq!(cfg.oracle.depth, 4096);
        assert_eq!(cfg.oracle.eps, 0.05);
        assert_eq!(cfg.oracle.mode, CountMode::Dp);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn explicit_blocks_override_defaults() {
        let text = r#"{
            "system": { "m": 2, "q": 3, "lambdas": [0.7, 1.1], "phi": [[0,1],[2,3]] },
            "solver": { "tol": 1e-10 },
            "spectrum": { "alpha_min": 0.5, "alpha_max": 2.5, "steps": 11 },
            "montecarlo": { "n": 1000, "samples": 10, "seed": 99 },
            "oracle": { "depth": 12, "eps": 0.02, "mode": "exhaustive" },
            "output_dir": "results"
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.solver.tol, 1e-10);
        assert_eq!(cfg.spectrum.steps, 11);
        assert_eq!(cfg.montecarlo.seed, 99);
        assert_eq!(cfg.oracle.mode, CountMode::Exhaustive);
        assert_eq!(cfg.output_dir, PathBuf::from("results"));
    }

    #[test]
    fn unsupported_arity_is_rejected_through_config() {
        let text = r#"{
            "system": { "m": 2, "q": 2, "ell": 3, "lambdas": [0.7, 0.7],
                        "phi": [[0,0],[0,1]] }
        }"#;
        let err = RunConfig::from_json(text).unwrap_err();
        assert!(err.to_string().contains("unsupported arity"), "{err}");
    }

    #[test]
    fn block_validation_reports_all_issues() {
        let text = r#"{
            "system": { "m": 2, "q": 2, "lambdas": [0.7, 0.7], "phi": [[0,0],[0,1]] },
            "solver": { "tol": -1.0 },
            "spectrum": { "steps": 1 }
        }"#;
        let err = RunConfig::from_json(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("solver.tol"), "{msg}");
        assert!(msg.contains("spectrum.steps"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{
            "system": { "m": 2, "q": 2, "lambdas": [0.7, 0.7], "phi": [[0,0],[0,1]] },
            "solvr": { "tol": 1e-10 }
        }"#;
        assert!(RunConfig::from_json(text).is_err());
    }

    #[test]
    fn hash_is_stable_and_default_insensitive() {
        let explicit = r#"{
            "system": { "m": 2, "q": 2, "lambdas": [0.6931471805599453, 0.6931471805599453],
                        "phi": [[0.0, 0.0], [0.0, 1.0]] },
            "solver": { "tol": 1e-13, "max_iter": 10000 }
        }"#;
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let b = RunConfig::from_json(explicit).unwrap();
        assert_eq!(a.hash(), b.hash(), "spelled-out defaults must hash identically");
        assert_eq!(a.hash().len(), 64);

        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.montecarlo.seed = 2;
        assert_ne!(a.hash(), c.hash());
    }
}
