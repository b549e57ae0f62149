//! Kernel x initialization grid runner and its ranked report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use kernsne_core::eval::iterations_to_fraction;
use kernsne_core::init::InitKind;
use kernsne_core::{Error, KernelKind};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::pipeline::{cmd_embed_cached, AtStage, KernelCache, Stage, StageError};

/// Cells whose final AUC is within this margin of the worst cell are marked
/// "not recommended".
pub const NOT_RECOMMENDED_MARGIN: f64 = 0.01;

/// Fraction of the final AUC used for the convergence-speed column.
pub const CONVERGENCE_FRACTION: f64 = 0.95;

/// 64-bit FNV-1a, used to derive stable per-cell seeds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn cell_name(kernel: KernelKind, init: InitKind) -> String {
    format!("{kernel}-{init}")
}

pub fn cell_seed(base: u64, kernel: KernelKind, init: InitKind) -> u64 {
    base.wrapping_add(fnv1a64(cell_name(kernel, init).as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recommendation {
    Recommended,
    NotRecommended,
    Neutral,
}

impl Recommendation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Recommendation::Recommended => "recommended",
            Recommendation::NotRecommended => "not recommended",
            Recommendation::Neutral => "",
        }
    }
}

/// Scores of a finished cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellScores {
    pub final_auc: f64,
    pub best_auc: f64,
    pub best_iteration: usize,
    pub iters_to_95: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub kernel: KernelKind,
    pub init: InitKind,
    pub seed: u64,
    /// `Err(stage)` when the cell failed.
    pub outcome: Result<CellScores, String>,
    pub recommendation: Recommendation,
}

impl SweepRow {
    pub fn status(&self) -> String {
        match &self.outcome {
            Ok(_) => "ok".into(),
            Err(stage) => format!("FAILED({stage})"),
        }
    }
}

/// One row per requested grid cell, in grid order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Marks the best cell and the cells near the worst.
    fn recommend(&mut self) {
        let scores: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|s| s.final_auc))
            .collect();
        if scores.is_empty() {
            return;
        }
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let worst = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut best_taken = false;
        for row in &mut self.rows {
            let Ok(s) = &row.outcome else { continue };
            row.recommendation = if s.final_auc == best && !best_taken {
                best_taken = true;
                Recommendation::Recommended
            } else if s.final_auc <= worst + NOT_RECOMMENDED_MARGIN {
                Recommendation::NotRecommended
            } else {
                Recommendation::Neutral
            };
        }
    }

    /// Successful rows by decreasing final AUC (grid order on ties), then
    /// failed rows.
    pub fn ranked(&self) -> Vec<&SweepRow> {
        let mut rows: Vec<&SweepRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| match (&a.outcome, &b.outcome) {
            (Ok(x), Ok(y)) => y.final_auc.total_cmp(&x.final_auc),
            (Ok(_), Err(_)) => std::cmp::Ordering::Less,
            (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
            (Err(_), Err(_)) => std::cmp::Ordering::Equal,
        });
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kernel,init,seed,status,final_auc,best_auc,best_iteration,iters_to_95,recommendation\n");
        for r in &self.rows {
            let _ = match &r.outcome {
                Ok(s) => writeln!(
                    out,
                    "{},{},{},ok,{},{},{},{},{}",
                    r.kernel,
                    r.init,
                    r.seed,
                    s.final_auc,
                    s.best_auc,
                    s.best_iteration,
                    s.iters_to_95.map_or_else(String::new, |i| i.to_string()),
                    r.recommendation.as_str()
                ),
                Err(_) => writeln!(out, "{},{},{},{},,,,,", r.kernel, r.init, r.seed, r.status()),
            };
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4} {:<12} {:<9} {:>9} {:>9} {:>9} {:>8}  {}",
            "rank", "kernel", "init", "final", "best", "best@", "it@95%", "recommendation"
        );
        for (i, r) in self.ranked().into_iter().enumerate() {
            let _ = match &r.outcome {
                Ok(s) => writeln!(
                    out,
                    "{:<4} {:<12} {:<9} {:>9.4} {:>9.4} {:>9} {:>8}  {}",
                    i + 1,
                    r.kernel.to_string(),
                    r.init.to_string(),
                    s.final_auc,
                    s.best_auc,
                    s.best_iteration,
                    s.iters_to_95.map_or_else(|| "-".to_string(), |v| v.to_string()),
                    r.recommendation.as_str()
                ),
                Err(_) => writeln!(
                    out,
                    "{:<4} {:<12} {:<9} {:>9}",
                    "-",
                    r.kernel.to_string(),
                    r.init.to_string(),
                    r.status()
                ),
            };
        }
        let _ = writeln!(
            out,
            "\nAUC_RNX at the final checkpoint. \"recommended\": highest final AUC_RNX. \
             \"not recommended\": final AUC_RNX within {NOT_RECOMMENDED_MARGIN} of the lowest."
        );
        out
    }
}

/// Summary numbers of an AUC-vs-iteration series.
pub fn score_series(series: &[(usize, f64)]) -> Option<CellScores> {
    let &(_, final_auc) = series.last()?;
    let (best_iteration, best_auc) = series
        .iter()
        .cloned()
        .fold((0, f64::NEG_INFINITY), |acc, (it, v)| if v > acc.1 { (it, v) } else { acc });
    Some(CellScores {
        final_auc,
        best_auc,
        best_iteration,
        iters_to_95: iterations_to_fraction(series, CONVERGENCE_FRACTION),
    })
}

/// Runs every `(kernel, init)` cell under `base.out`, sharing one kernel
/// cache. Cells run in parallel up to `base.jobs` (0: all cores), each on a
/// single thread. Failed cells become `FAILED(stage)` rows.
pub fn cmd_sweep(base: &RunConfig, kernels: &[KernelKind], inits: &[InitKind]) -> Result<SweepReport, StageError> {
    if kernels.is_empty() || inits.is_empty() {
        return Err(StageError::new(Stage::Config, Error::Argument("empty sweep grid".into())));
    }
    base.validate().at(Stage::Config)?;
    let root = base.out.clone();
    fs::create_dir_all(&root).at(Stage::Report)?;
    let cache = KernelCache::new(root.join("kernel-cache"));

    let cells: Vec<(KernelKind, InitKind)> = kernels
        .iter()
        .flat_map(|&k| inits.iter().map(move |&i| (k, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(base.jobs)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker threads: {e}")))
        .at(Stage::Config)?;
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(kernel, init)| run_cell(base, &root, &cache, kernel, init))
            .collect()
    });

    let mut report = SweepReport { rows };
    report.recommend();
    write_report(&root, &report).at(Stage::Report)?;
    Ok(report)
}

fn run_cell(base: &RunConfig, root: &Path, cache: &KernelCache, kernel: KernelKind, init: InitKind) -> SweepRow {
    let seed = cell_seed(base.seed, kernel, init);
    let cfg = RunConfig {
        kernel,
        init,
        seed,
        jobs: 1,
        out: root.join(cell_name(kernel, init)),
        ..base.clone()
    };
    let outcome = match cmd_embed_cached(&cfg, Some(cache)) {
        Ok(run) => score_series(&run.auc_series()).ok_or_else(|| Stage::Eval.to_string()),
        Err(e) => Err(e.stage.to_string()),
    };
    SweepRow {
        kernel,
        init,
        seed,
        outcome,
        recommendation: Recommendation::Neutral,
    }
}

fn write_report(root: &Path, report: &SweepReport) -> Result<(), Error> {
    fs::write(root.join("sweep_report.csv"), report.to_csv())?;
    fs::write(root.join("sweep_report.txt"), report.to_table())?;
    Ok(())
}
