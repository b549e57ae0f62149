//! Run configuration: defaults, a flat `key = value` file and command-line
//! overrides, all funneled through [`RunConfig::set`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kernsne_core::init::{EnsembleMode, InitKind, DEFAULT_INIT_STD};
use kernsne_core::kernels::{
    JointMode, KernelKind, SpectrumNorm, DEFAULT_ISOLATION_PSI, DEFAULT_ISOLATION_ROUNDS, DEFAULT_PERPLEXITY,
};
use kernsne_core::{Error, OptimizerParams, Result};
use serde::Serialize;

/// Input file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Fasta,
    Csv,
    Points,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fasta" => Ok(InputFormat::Fasta),
            "csv" => Ok(InputFormat::Csv),
            "points" => Ok(InputFormat::Points),
            _ => Err(Error::Argument(format!("unknown format `{s}` (fasta, csv, points)"))),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Fasta => "fasta",
            InputFormat::Csv => "csv",
            InputFormat::Points => "points",
        })
    }
}

/// Where high-dimensional neighbors are taken from when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HdSpace {
    /// Euclidean neighbors of the feature vectors, shared by every kernel.
    #[default]
    Features,
    /// Most-similar points under the kernel (under P for the Gaussian kernel).
    Kernel,
}

impl FromStr for HdSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(HdSpace::Features),
            "kernel" => Ok(HdSpace::Kernel),
            _ => Err(Error::Argument(format!("unknown hd-space `{s}` (features, kernel)"))),
        }
    }
}

impl fmt::Display for HdSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HdSpace::Features => "features",
            HdSpace::Kernel => "kernel",
        })
    }
}

/// Everything needed to reproduce one embedding run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// Input path, or `circle:N` for the synthetic noisy circle.
    pub data: Option<String>,
    /// `None` infers the format from the file.
    pub format: Option<InputFormat>,
    pub kmer_k: usize,
    pub kernel: KernelKind,
    pub perplexity: f64,
    /// `None` uses half the mean pairwise L1 distance.
    pub sigma: Option<f64>,
    pub psi: usize,
    pub trees: usize,
    pub spectrum_norm: SpectrumNorm,
    pub joint_mode: JointMode,
    pub init: InitKind,
    pub ensemble_mode: EnsembleMode,
    pub init_std: f64,
    pub iters: usize,
    pub checkpoint_every: usize,
    pub lr: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub adaptive_gains: bool,
    pub kmax: usize,
    pub hd_space: HdSpace,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerParams::default();
        Self {
            data: None,
            format: None,
            kmer_k: 3,
            kernel: KernelKind::Gaussian,
            perplexity: DEFAULT_PERPLEXITY,
            sigma: None,
            psi: DEFAULT_ISOLATION_PSI,
            trees: DEFAULT_ISOLATION_ROUNDS,
            spectrum_norm: SpectrumNorm::default(),
            joint_mode: JointMode::default(),
            init: InitKind::Pca,
            ensemble_mode: EnsembleMode::default(),
            init_std: DEFAULT_INIT_STD,
            iters: opt.max_iters,
            checkpoint_every: opt.checkpoint_every,
            lr: opt.learning_rate,
            momentum_early: opt.momentum_early,
            momentum_late: opt.momentum_late,
            momentum_switch: opt.momentum_switch_iter,
            exaggeration: opt.early_exaggeration_factor,
            exaggeration_iters: opt.early_exaggeration_iters,
            adaptive_gains: opt.adaptive_gains,
            kmax: kernsne_core::eval::DEFAULT_K_MAX,
            hd_space: HdSpace::default(),
            seed: 1,
            out: PathBuf::from("kernsne-run"),
            jobs: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Argument(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Argument(format!("{key}: expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    /// Every key accepted by [`RunConfig::set`], in manifest order.
    pub const KEYS: [&'static str; 28] = [
        "data",
        "format",
        "kmer-k",
        "kernel",
        "perplexity",
        "sigma",
        "psi",
        "trees",
        "spectrum-norm",
        "joint-mode",
        "init",
        "ensemble-mode",
        "init-std",
        "iters",
        "checkpoint-every",
        "lr",
        "momentum-early",
        "momentum-late",
        "momentum-switch",
        "exaggeration",
        "exaggeration-iters",
        "adaptive-gains",
        "kmax",
        "hd-space",
        "seed",
        "out",
        "jobs",
        "config-version",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data" => self.data = Some(value.to_string()),
            "format" => self.format = if value == "auto" { None } else { Some(parse(key, value)?) },
            "kmer-k" => self.kmer_k = parse(key, value)?,
            "kernel" => self.kernel = parse(key, value)?,
            "perplexity" => self.perplexity = parse(key, value)?,
            "sigma" => self.sigma = if value == "auto" { None } else { Some(parse(key, value)?) },
            "psi" => self.psi = parse(key, value)?,
            "trees" => self.trees = parse(key, value)?,
            "spectrum-norm" => self.spectrum_norm = parse(key, value)?,
            "joint-mode" => self.joint_mode = parse(key, value)?,
            "init" => self.init = parse(key, value)?,
            "ensemble-mode" => self.ensemble_mode = parse(key, value)?,
            "init-std" => self.init_std = parse(key, value)?,
            "iters" => self.iters = parse(key, value)?,
            "checkpoint-every" => self.checkpoint_every = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum-early" => self.momentum_early = parse(key, value)?,
            "momentum-late" => self.momentum_late = parse(key, value)?,
            "momentum-switch" => self.momentum_switch = parse(key, value)?,
            "exaggeration" => self.exaggeration = parse(key, value)?,
            "exaggeration-iters" => self.exaggeration_iters = parse(key, value)?,
            "adaptive-gains" => self.adaptive_gains = parse_bool(key, value)?,
            "kmax" => self.kmax = parse(key, value)?,
            "hd-space" => self.hd_space = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "jobs" => self.jobs = parse(key, value)?,
            "config-version" => {
                if value != "1" {
                    return Err(Error::Argument(format!("unsupported config-version `{value}`")));
                }
            }
            _ => return Err(Error::Argument(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Argument(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Fully resolved configuration in the same `key = value` form the
    /// loader accepts.
    pub fn to_text(&self) -> String {
        let sigma = self.sigma.map_or_else(|| "auto".to_string(), |s| s.to_string());
        let format = self.format.map_or_else(|| "auto".to_string(), |f| f.to_string());
        let rows: [(&str, String); 28] = [
            ("config-version", "1".into()),
            ("data", self.data.clone().unwrap_or_default()),
            ("format", format),
            ("kmer-k", self.kmer_k.to_string()),
            ("kernel", self.kernel.to_string()),
            ("perplexity", self.perplexity.to_string()),
            ("sigma", sigma),
            ("psi", self.psi.to_string()),
            ("trees", self.trees.to_string()),
            ("spectrum-norm", self.spectrum_norm.to_string()),
            ("joint-mode", self.joint_mode.to_string()),
            ("init", self.init.to_string()),
            ("ensemble-mode", self.ensemble_mode.to_string()),
            ("init-std", self.init_std.to_string()),
            ("iters", self.iters.to_string()),
            ("checkpoint-every", self.checkpoint_every.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum-early", self.momentum_early.to_string()),
            ("momentum-late", self.momentum_late.to_string()),
            ("momentum-switch", self.momentum_switch.to_string()),
            ("exaggeration", self.exaggeration.to_string()),
            ("exaggeration-iters", self.exaggeration_iters.to_string()),
            ("adaptive-gains", self.adaptive_gains.to_string()),
            ("kmax", self.kmax.to_string()),
            ("hd-space", self.hd_space.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("jobs", self.jobs.to_string()),
        ];
        let mut text = String::new();
        for (k, v) in rows {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(&v);
            text.push('\n');
        }
        text
    }

    pub fn optimizer_params(&self) -> OptimizerParams {
        OptimizerParams {
            learning_rate: self.lr,
            momentum_early: self.momentum_early,
            momentum_late: self.momentum_late,
            momentum_switch_iter: self.momentum_switch,
            max_iters: self.iters,
            checkpoint_every: self.checkpoint_every,
            early_exaggeration_factor: self.exaggeration,
            early_exaggeration_iters: self.exaggeration_iters,
            adaptive_gains: self.adaptive_gains,
        }
    }

    /// Checks what can be checked without looking at the data.
    pub fn validate(&self) -> Result<()> {
        if self.data.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Argument("no dataset given (--data)".into()));
        }
        if self.kmax == 0 {
            return Err(Error::Argument("kmax must be at least 1".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Argument(format!("init-std must be positive, got {}", self.init_std)));
        }
        self.optimizer_params().validate()
    }
}
