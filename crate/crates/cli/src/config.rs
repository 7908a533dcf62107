//! Experiment configuration: command-line flags, optionally overridden key
//! by key from a JSON file, resolved into one flat record.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A configuration problem; mapped to its own exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Fixture {
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    Centralized,
    Rows,
    Blockdiag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    Rows,
    Blockdiag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    Hard,
    Epsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub x: Option<PathBuf>,
    pub u: Option<PathBuf>,
    pub w: Option<PathBuf>,
    pub system: Option<PathBuf>,
    /// `B` as a CSV matrix when no `system.json` is given.
    pub b: Option<PathBuf>,
    pub fixture: Option<Fixture>,
    /// Energy bound `W Wᵀ ⪯ noise_scale·I`.
    pub noise_scale: f64,
    /// Full bound matrix; overrides `noise_scale`.
    pub noise_q: Option<Vec<Vec<f64>>>,
    /// Row block sizes of the gain.
    pub p: Option<Vec<usize>>,
    /// Column block sizes of the gain.
    pub q: Option<Vec<usize>>,
    pub mode: SynthMode,
    /// 0/1 block pattern for the structured modes.
    pub sigma: Option<Vec<Vec<u8>>>,
    pub max_iter: usize,
    pub conv_tol: f64,
    pub zero_tol: f64,
    pub weights: Weights,
    pub eps: f64,
    pub polish_tol: f64,
    pub patience: usize,
    pub scan: ScanMode,
    pub budget: Option<usize>,
    pub max_ones: Option<usize>,
    pub force: bool,
    pub certificate: Option<PathBuf>,
    pub samples: usize,
    pub seed: u64,
    pub agents: usize,
    pub n_i: Vec<usize>,
    pub m_i: Vec<usize>,
    pub density: f64,
    pub t: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sp = ddsparse::sparsify::SparsifyOptions::default();
        Self {
            x: None,
            u: None,
            w: None,
            system: None,
            b: None,
            fixture: None,
            noise_scale: 0.05,
            noise_q: None,
            p: None,
            q: None,
            mode: SynthMode::Centralized,
            sigma: None,
            max_iter: sp.max_iter,
            conv_tol: sp.conv_tol,
            zero_tol: sp.zero_tol,
            weights: Weights::Hard,
            eps: 1e-6,
            polish_tol: sp.polish_tol,
            patience: sp.patience,
            scan: ScanMode::Blockdiag,
            budget: None,
            max_ones: None,
            force: false,
            certificate: None,
            samples: 100,
            seed: 0,
            agents: 3,
            n_i: vec![2],
            m_i: vec![1],
            density: 0.5,
            t: 10,
        }
    }
}

impl ExperimentConfig {
    /// Applies the keys of a JSON object on top of `self`. Relative paths
    /// in the file are taken relative to the file's directory.
    pub fn overridden_by(&self, file: &Path) -> Result<Self> {
        let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
        let patch: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", file.display())))?;
        let Some(patch) = patch.as_object() else {
            return config_err(format!("{}: expected a JSON object", file.display()));
        };
        let mut merged = serde_json::to_value(self)?;
        let obj = merged.as_object_mut().expect("config serializes to an object");
        for (k, v) in patch {
            obj.insert(k.clone(), v.clone());
        }
        let mut cfg: Self =
            serde_json::from_value(merged).map_err(|e| ConfigError(format!("{}: {e}", file.display())))?;
        let base = file.parent().unwrap_or(Path::new(""));
        for key in ["x", "u", "w", "system", "b", "certificate"] {
            if patch.contains_key(key) {
                if let Some(p) = cfg.path_mut(key) {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        Ok(cfg)
    }

    fn path_mut(&mut self, key: &str) -> Option<&mut PathBuf> {
        match key {
            "x" => self.x.as_mut(),
            "u" => self.u.as_mut(),
            "w" => self.w.as_mut(),
            "system" => self.system.as_mut(),
            "b" => self.b.as_mut(),
            "certificate" => self.certificate.as_mut(),
            _ => None,
        }
    }

    /// SHA-256 over the resolved configuration and the bytes of every
    /// referenced file.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self)?);
        for path in [&self.x, &self.u, &self.w, &self.system, &self.b, &self.certificate]
            .into_iter()
            .flatten()
        {
            if let Ok(bytes) = fs::read(path) {
                h.update(bytes);
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0) {
            return config_err("noise_scale must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.density) {
            return config_err("density must lie in [0, 1]");
        }
        if self.samples == 0 {
            return config_err("samples must be positive");
        }
        if let Some(sigma) = &self.sigma {
            if sigma.iter().flatten().any(|&b| b > 1) {
                return config_err("sigma entries must be 0 or 1");
            }
        }
        Ok(())
    }
}

/// Parses `"1,0;0,1"` into rows.
pub fn parse_pattern(s: &str) -> Result<Vec<Vec<u8>>> {
    s.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| match v.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => config_err(format!("pattern entry {other:?} is not 0 or 1")),
                })
                .collect()
        })
        .collect()
}
