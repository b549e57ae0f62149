//! `kernsne plot`: SVG renderings of a finished run directory.

use std::fs;
use std::path::{Path, PathBuf};

use kernsne_core::Error;

use crate::pipeline::{checkpoint_name, read_layout, AtStage, Stage, StageError};
use crate::svg;

/// Iterations that have a checkpoint CSV, ascending.
pub fn available_checkpoints(run_dir: &Path) -> Result<Vec<usize>, Error> {
    let dir = run_dir.join("checkpoints");
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(_) => return Ok(Vec::new()),
    };
    let mut its = Vec::new();
    for entry in entries {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(it) = name.strip_prefix("iter_").and_then(|s| s.strip_suffix(".csv")) {
            if let Ok(it) = it.parse::<usize>() {
                its.push(it);
            }
        }
    }
    its.sort_unstable();
    Ok(its)
}

fn read_auc(path: &Path) -> Result<Vec<(usize, f64)>, Error> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("iteration,auc_rnx") {
        return Err(Error::Format(format!("{}: expected header iteration,auc_rnx", path.display())));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::Parse {
                line: i + 2,
                message: format!("bad row `{l}`"),
            };
            let (it, v) = l.split_once(',').ok_or_else(bad)?;
            Ok((it.parse().map_err(|_| bad())?, v.parse().map_err(|_| bad())?))
        })
        .collect()
}

/// Writes `plots/iter_XXXXX.svg` for each requested checkpoint (all of them
/// when `iterations` is empty) and `plots/auc_vs_iter.svg`.
pub fn cmd_plot(run_dir: &Path, iterations: &[usize]) -> Result<Vec<PathBuf>, StageError> {
    let available = available_checkpoints(run_dir).at(Stage::Plot)?;
    if available.is_empty() {
        return Err(StageError::new(
            Stage::Plot,
            Error::Argument(format!("{}: no checkpoints found", run_dir.display())),
        ));
    }
    let wanted: Vec<usize> = if iterations.is_empty() { available.clone() } else { iterations.to_vec() };
    if let Some(missing) = wanted.iter().find(|it| !available.contains(it)) {
        return Err(StageError::new(
            Stage::Plot,
            Error::Argument(format!("no checkpoint for iteration {missing}")),
        ));
    }

    let out_dir = run_dir.join("plots");
    fs::create_dir_all(&out_dir).at(Stage::Plot)?;
    let mut written = Vec::new();
    for &it in &wanted {
        let layout = read_layout(&run_dir.join("checkpoints").join(checkpoint_name(it))).at(Stage::Plot)?;
        let pts: Vec<(f64, f64)> = layout.coords.outer_iter().map(|r| (r[0], r[1])).collect();
        let path = out_dir.join(format!("iter_{it:05}.svg"));
        fs::write(&path, svg::scatter(&pts, &layout.labels, &format!("iteration {it}"))).at(Stage::Plot)?;
        written.push(path);
    }

    let series = read_auc(&run_dir.join("auc_vs_iter.csv")).at(Stage::Plot)?;
    let path = out_dir.join("auc_vs_iter.svg");
    fs::write(&path, svg::line_chart(&series, "AUC_RNX by iteration", "AUC_RNX")).at(Stage::Plot)?;
    written.push(path);
    Ok(written)
}
