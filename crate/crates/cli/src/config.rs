//! Run settings layered as flag > config file > default.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use hgkit_core::hyperconv::{MetricKind, DEFAULT_PERCENTILE, DEFAULT_TAU};
use hgkit_core::losses::LossWeights;
use hgkit_core::metrics::default_sweep;
use hgkit_core::emca::CAA_DEFAULT_KERNEL;
use serde::Deserialize;

/// Every setting is optional at this layer; unset values fall through.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Hyperedge metric: manhattan, euclidean, chebyshev, gaussian_kernel
    #[arg(long, global = true)]
    pub metric: Option<MetricKind>,
    /// Distance threshold; overrides --percentile
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Percentile of sampled pairwise distances used as threshold
    #[arg(long, global = true)]
    pub percentile: Option<f64>,
    /// Gaussian-kernel similarity threshold
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Gaussian-kernel bandwidth (default: median pairwise distance)
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// EMA channel groups
    #[arg(long, global = true)]
    pub groups: Option<usize>,
    /// CAA band kernel size (odd)
    #[arg(long, global = true)]
    pub kernel: Option<usize>,
    /// Loss weights (default 3, 4, 1.5)
    #[arg(long = "lambda-cls", global = true)]
    pub lambda_cls: Option<f64>,
    #[arg(long = "lambda-box", global = true)]
    pub lambda_box: Option<f64>,
    #[arg(long = "lambda-dfl", global = true)]
    pub lambda_dfl: Option<f64>,
    /// IoU threshold for matching, the PR curve and P/R/F1
    #[arg(long, global = true)]
    pub iou: Option<f64>,
    /// IoU thresholds averaged into the swept mAP
    #[arg(skip)]
    pub sweep: Option<Vec<f64>>,
    /// Worker threads for metrics eval and bench
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for sampling and generated weights (default 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl Settings {
    /// Fill unset fields from `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        Settings {
            metric: self.metric.or(lower.metric),
            delta: self.delta.or(lower.delta),
            percentile: self.percentile.or(lower.percentile),
            tau: self.tau.or(lower.tau),
            sigma: self.sigma.or(lower.sigma),
            groups: self.groups.or(lower.groups),
            kernel: self.kernel.or(lower.kernel),
            lambda_cls: self.lambda_cls.or(lower.lambda_cls),
            lambda_box: self.lambda_box.or(lower.lambda_box),
            lambda_dfl: self.lambda_dfl.or(lower.lambda_dfl),
            iou: self.iou.or(lower.iou),
            sweep: self.sweep.or(lower.sweep),
            threads: self.threads.or(lower.threads),
            seed: self.seed.or(lower.seed),
        }
    }

    pub fn from_file(path: &Path) -> Result<Settings, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_owned(), e))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(path.to_owned(), e))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("invalid config {0}: {1}")]
    Parse(PathBuf, serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub metric: MetricKind,
    pub delta: Option<f64>,
    pub percentile: f64,
    pub tau: f64,
    pub sigma: Option<f64>,
    pub groups: Option<usize>,
    pub kernel: usize,
    pub weights: LossWeights,
    pub iou: f64,
    pub sweep: Vec<f64>,
    pub threads: usize,
    pub seed: u64,
}

impl RunConfig {
    /// Merge flags over the optional config file over defaults, then
    /// validate before anything runs.
    pub fn resolve(flags: Settings, file: Option<&Path>) -> Result<RunConfig, ConfigError> {
        let file = match file {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        let s = flags.over(file);
        let defaults = LossWeights::default();
        let cfg = RunConfig {
            metric: s.metric.unwrap_or(MetricKind::Manhattan),
            delta: s.delta,
            percentile: s.percentile.unwrap_or(DEFAULT_PERCENTILE),
            tau: s.tau.unwrap_or(DEFAULT_TAU),
            sigma: s.sigma,
            groups: s.groups,
            kernel: s.kernel.unwrap_or(CAA_DEFAULT_KERNEL),
            weights: LossWeights {
                cls: s.lambda_cls.unwrap_or(defaults.cls),
                bbox: s.lambda_box.unwrap_or(defaults.bbox),
                dfl: s.lambda_dfl.unwrap_or(defaults.dfl),
            },
            iou: s.iou.unwrap_or(0.5),
            sweep: s.sweep.unwrap_or_else(default_sweep),
            threads: s.threads.unwrap_or(1),
            seed: s.seed.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.metric == MetricKind::GaussianKernel && self.delta.is_some() {
            return bad("--delta does not apply to the gaussian kernel; use --tau/--sigma".into());
        }
        if self.metric != MetricKind::GaussianKernel && self.sigma.is_some() {
            return bad(format!("--sigma only applies to the gaussian kernel, not {}", self.metric));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("--delta must be positive, got {d}"));
            }
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return bad(format!("--percentile must lie in [0, 100], got {}", self.percentile));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("--tau must lie in (0, 1), got {}", self.tau));
        }
        if self.groups == Some(0) {
            return bad("--groups must be positive".into());
        }
        if self.kernel < 3 || self.kernel % 2 == 0 {
            return bad(format!("--kernel must be odd and at least 3, got {}", self.kernel));
        }
        self.weights
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for &t in std::iter::once(&self.iou).chain(&self.sweep) {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("IoU thresholds must lie in (0, 1), got {t}"));
            }
        }
        if self.threads == 0 {
            return bad("--threads must be positive".into());
        }
        Ok(())
    }
}
