//! Pipeline configuration and its key-value file format.
//!
//! Grammar (a flat subset of TOML):
//!
//! ```text
//! file    = { line }
//! line    = [ key "=" value ] [ "#" comment ] newline
//! value   = integer | float | "quoted string"
//! ```
//!
//! Every key is optional; omitted keys take the defaults below. Unknown
//! keys, wrong types and out-of-range values are all reported together.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `k` | 4 | latent dimension (both models) |
//! | `sigma` | 0.8 | prior sd of the standard model |
//! | `lambda` | 0.15 | Cauchy likelihood scale (both models) |
//! | `sigma_hp` | 1.0 | hyperprior sd of class vectors |
//! | `eta` | 1.0 | exponential prior scale of class deviations |
//! | `n_solute_classes` | 12 | dendrogram cut for solutes |
//! | `n_solvent_classes` | 17 | dendrogram cut for solvents |
//! | `min_systems` | 2 | minimum observations per component |
//! | `seed` | 0 | base seed |
//! | `workers` | 1 | worker threads |
//! | `max_iters`, `mc_samples`, `learning_rate`, `lr_decay`, `convergence_window`, `convergence_tol`, `elbo_check_every`, `elbo_eval_samples` | see [`FitConfig`] | optimizer |
//! | `input`, `output_dir` | unset | paths for `run` |

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hmcm::HmcmConfig;
use crate::smcm::SmcmConfig;
use crate::vi::FitConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub k: usize,
    pub sigma_prior: f64,
    pub lambda_like: f64,
    pub sigma_hp: f64,
    pub eta: f64,
    pub n_solute_classes: usize,
    pub n_solvent_classes: usize,
    pub min_systems: usize,
    pub seed: u64,
    pub workers: usize,
    pub fit: FitConfig,
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 4,
            sigma_prior: 0.8,
            lambda_like: 0.15,
            sigma_hp: 1.0,
            eta: 1.0,
            n_solute_classes: 12,
            n_solvent_classes: 17,
            min_systems: 2,
            seed: 0,
            workers: 1,
            fit: FitConfig::default(),
            input: None,
            output_dir: None,
        }
    }
}

const STREAM_SMCM: u64 = 11;
const STREAM_HMCM: u64 = 12;

impl PipelineConfig {
    pub fn smcm_seed(&self, base: u64) -> u64 {
        crate::derive_seed(base, STREAM_SMCM)
    }

    pub fn hmcm_seed(&self, base: u64) -> u64 {
        crate::derive_seed(base, STREAM_HMCM)
    }

    pub fn smcm(&self, seed: u64) -> SmcmConfig {
        SmcmConfig {
            k: self.k,
            sigma_prior: self.sigma_prior,
            lambda_like: self.lambda_like,
            fit: FitConfig { seed, ..self.fit.clone() },
        }
    }

    pub fn hmcm(&self, seed: u64) -> HmcmConfig {
        HmcmConfig {
            k: self.k,
            sigma_hp: self.sigma_hp,
            lambda_like: self.lambda_like,
            eta: self.eta,
            fit: FitConfig { seed, ..self.fit.clone() },
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, key: &str, msg: &str| {
            if !ok {
                v.push(format!("`{key}`: {msg}"));
            }
        };
        need(self.k >= 1, "k", "must be >= 1");
        need(self.sigma_prior > 0.0, "sigma", "must be > 0");
        need(self.lambda_like > 0.0, "lambda", "must be > 0");
        need(self.sigma_hp > 0.0, "sigma_hp", "must be > 0");
        need(self.eta > 0.0, "eta", "must be > 0");
        need(self.n_solute_classes >= 1, "n_solute_classes", "must be >= 1");
        need(self.n_solvent_classes >= 1, "n_solvent_classes", "must be >= 1");
        need(self.min_systems >= 1, "min_systems", "must be >= 1");
        need(self.workers >= 1, "workers", "must be >= 1");
        v.extend(self.fit.violations());
        v
    }

    /// Parses a config file body, filling defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
        let mut cfg = Self::default();
        let mut errs = Vec::new();

        for (key, value) in &table {
            let int = |errs: &mut Vec<String>| -> Option<i64> {
                match value {
                    toml::Value::Integer(i) => Some(*i),
                    _ => {
                        errs.push(format!("`{key}`: expected an integer"));
                        None
                    }
                }
            };
            let count = |errs: &mut Vec<String>| -> Option<usize> {
                let i = int(errs)?;
                if i < 0 {
                    errs.push(format!("`{key}`: must be >= 0"));
                    return None;
                }
                Some(i as usize)
            };
            let real = |errs: &mut Vec<String>| -> Option<f64> {
                match value {
                    toml::Value::Float(f) => Some(*f),
                    toml::Value::Integer(i) => Some(*i as f64),
                    _ => {
                        errs.push(format!("`{key}`: expected a number"));
                        None
                    }
                }
            };
            let path = |errs: &mut Vec<String>| -> Option<PathBuf> {
                match value {
                    toml::Value::String(s) if !s.is_empty() => Some(PathBuf::from(s)),
                    _ => {
                        errs.push(format!("`{key}`: expected a non-empty string"));
                        None
                    }
                }
            };
            macro_rules! set {
                ($field:expr, $parse:ident) => {
                    if let Some(x) = $parse(&mut errs) {
                        $field = x;
                    }
                };
            }
            match key.as_str() {
                "k" => set!(cfg.k, count),
                "sigma" => set!(cfg.sigma_prior, real),
                "lambda" => set!(cfg.lambda_like, real),
                "sigma_hp" => set!(cfg.sigma_hp, real),
                "eta" => set!(cfg.eta, real),
                "n_solute_classes" => set!(cfg.n_solute_classes, count),
                "n_solvent_classes" => set!(cfg.n_solvent_classes, count),
                "min_systems" => set!(cfg.min_systems, count),
                "seed" => {
                    if let Some(s) = count(&mut errs) {
                        cfg.seed = s as u64;
                    }
                }
                "workers" => set!(cfg.workers, count),
                "max_iters" => set!(cfg.fit.max_iters, count),
                "mc_samples" => set!(cfg.fit.mc_samples, count),
                "learning_rate" => set!(cfg.fit.learning_rate, real),
                "lr_decay" => set!(cfg.fit.lr_decay, real),
                "convergence_window" => set!(cfg.fit.convergence_window, count),
                "convergence_tol" => set!(cfg.fit.convergence_tol, real),
                "elbo_check_every" => set!(cfg.fit.elbo_check_every, count),
                "elbo_eval_samples" => set!(cfg.fit.elbo_eval_samples, count),
                "input" => {
                    if let Some(p) = path(&mut errs) {
                        cfg.input = Some(p);
                    }
                }
                "output_dir" => {
                    if let Some(p) = path(&mut errs) {
                        cfg.output_dir = Some(p);
                    }
                }
                other => errs.push(format!("`{other}`: unknown key")),
            }
        }

        errs.extend(cfg.violations());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Every key that influences numerical outputs, sorted, one per line.
    /// Paths and the worker count are excluded since they do not change results.
    pub fn canonical(&self) -> String {
        let f = &self.fit;
        let mut lines = vec![
            format!("convergence_tol = {:?}", f.convergence_tol),
            format!("convergence_window = {}", f.convergence_window),
            format!("elbo_check_every = {}", f.elbo_check_every),
            format!("elbo_eval_samples = {}", f.elbo_eval_samples),
            format!("eta = {:?}", self.eta),
            format!("k = {}", self.k),
            format!("lambda = {:?}", self.lambda_like),
            format!("learning_rate = {:?}", f.learning_rate),
            format!("lr_decay = {:?}", f.lr_decay),
            format!("max_iters = {}", f.max_iters),
            format!("mc_samples = {}", f.mc_samples),
            format!("min_systems = {}", self.min_systems),
            format!("n_solute_classes = {}", self.n_solute_classes),
            format!("n_solvent_classes = {}", self.n_solvent_classes),
            format!("seed = {}", self.seed),
            format!("sigma = {:?}", self.sigma_prior),
            format!("sigma_hp = {:?}", self.sigma_hp),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
