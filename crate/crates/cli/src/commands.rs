//! The smaller subcommands: `ingest`, `featurize` and `eval`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use kernsne_core::eval::{knn_table, QualityCurve};
use kernsne_core::featurize::infer_alphabet;
use kernsne_core::ingest::write_points_csv;
use kernsne_core::{write_fasta, Error, PointDataset};
use ndarray::Array2;

use crate::config::{HdSpace, RunConfig};
use crate::pipeline::{affinities, features, hd_table, load_dataset, read_layout, AtStage, Dataset, Stage, StageError};

/// Parses the input and writes it back in canonical form: FASTA with
/// `>id|label` headers for sequences, the point CSV otherwise. Returns a
/// one-line description of the data.
pub fn cmd_ingest<W: Write>(cfg: &RunConfig, sink: W) -> Result<String, StageError> {
    let data = load_dataset(cfg)?;
    let mut labels = data.dataset.labels();
    labels.sort();
    labels.dedup();
    let summary = match &data.dataset {
        Dataset::Sequences(records) => {
            write_fasta(sink, records).at(Stage::Ingest)?;
            let lengths = records.iter().map(|r| r.sequence.len());
            let symbols = infer_alphabet(records).at(Stage::Ingest)?;
            format!(
                "{} sequences, {} labels, lengths {}..{}, {} symbols",
                records.len(),
                labels.len(),
                lengths.clone().min().unwrap_or(0),
                lengths.max().unwrap_or(0),
                symbols.len()
            )
        }
        Dataset::Points(p) => {
            write_points_csv(sink, p).at(Stage::Ingest)?;
            format!("{} points in {} dimensions, {} labels", p.len(), p.points.ncols(), labels.len())
        }
    };
    Ok(summary)
}

/// Writes the feature matrix as a point CSV and returns its shape.
pub fn cmd_featurize<W: Write>(cfg: &RunConfig, sink: W) -> Result<(usize, usize), StageError> {
    let data = load_dataset(cfg)?;
    let x = features(&data.dataset, cfg.kmer_k)?;
    let shape = x.dim();
    let table = PointDataset::new(data.dataset.ids(), x, data.dataset.labels()).at(Stage::Featurize)?;
    write_points_csv(sink, &table).at(Stage::Featurize)?;
    Ok(shape)
}

/// Scores an `id,x,y[,label]` embedding against the dataset. Rows are
/// matched by id.
pub fn cmd_eval(cfg: &RunConfig, embedding: &Path) -> Result<QualityCurve, StageError> {
    let data = load_dataset(cfg)?;
    let x = features(&data.dataset, cfg.kmer_k)?;
    let aff = match cfg.hd_space {
        HdSpace::Kernel => Some(affinities(cfg, &data, &x, None)?),
        HdSpace::Features => None,
    };
    let hd = hd_table(cfg, &x, aff.as_ref())?;

    let layout = read_layout(embedding).at(Stage::Eval)?;
    let row_of: HashMap<&str, usize> = layout.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let ids = data.dataset.ids();
    if row_of.len() != ids.len() || layout.ids.len() != ids.len() {
        return Err(StageError::new(
            Stage::Eval,
            Error::Argument(format!(
                "embedding has {} rows for a dataset of {} records",
                layout.ids.len(),
                ids.len()
            )),
        ));
    }
    let mut coords = Array2::zeros((ids.len(), 2));
    for (i, id) in ids.iter().enumerate() {
        let &j = row_of
            .get(id.as_str())
            .ok_or_else(|| Error::Argument(format!("id `{id}` missing from the embedding")))
            .at(Stage::Eval)?;
        coords.row_mut(i).assign(&layout.coords.row(j));
    }
    let ld = knn_table(&coords, cfg.kmax).at(Stage::Eval)?;
    QualityCurve::from_tables(&hd, &ld, cfg.kmax).at(Stage::Eval)
}
