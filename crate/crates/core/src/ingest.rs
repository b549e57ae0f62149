//! Dataset loading: labeled sequences from FASTA or CSV, numeric point sets
//! from CSV, and the noisy-circle toy dataset.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{BufRead, Read, Write};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::FeatureMatrix;

/// One labeled biological sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRecord {
    pub id: String,
    pub sequence: String,
    pub label: String,
}

/// Numeric points row-aligned with their ids and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDataset {
    pub ids: Vec<String>,
    pub points: FeatureMatrix,
    pub labels: Vec<String>,
}

impl PointDataset {
    pub fn new(ids: Vec<String>, points: FeatureMatrix, labels: Vec<String>) -> Result<Self> {
        if points.nrows() != labels.len() || points.nrows() != ids.len() {
            return Err(Error::arg(format!(
                "{} points but {} ids and {} labels",
                points.nrows(),
                ids.len(),
                labels.len()
            )));
        }
        if points.ncols() == 0 {
            return Err(Error::arg("points must have at least one dimension"));
        }
        Ok(Self { ids, points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

fn split_header(header: &str) -> (String, String) {
    let header = header.trim();
    match header.split_once('|') {
        Some((id, rest)) => {
            let label = rest.split('|').next().unwrap_or("");
            (id.trim().to_string(), label.trim().to_string())
        }
        None => (header.to_string(), header.to_string()),
    }
}

fn check_unique(records: &[SequenceRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok(())
}

/// Parses FASTA text. The header token before the first `|` is the id and
/// the token after it is the label; without a `|` the whole header serves as
/// both. Sequence lines are concatenated, whitespace-stripped and uppercased.
pub fn parse_fasta<R: BufRead>(source: R) -> Result<Vec<SequenceRecord>> {
    let mut records: Vec<SequenceRecord> = Vec::new();
    let mut current: Option<SequenceRecord> = None;

    let finish = |rec: SequenceRecord, out: &mut Vec<SequenceRecord>| -> Result<()> {
        if rec.sequence.is_empty() {
            return Err(Error::EmptySequence { id: rec.id });
        }
        out.push(rec);
        Ok(())
    };

    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        if let Some(header) = line.strip_prefix('>') {
            if let Some(rec) = current.take() {
                finish(rec, &mut records)?;
            }
            let (id, label) = split_header(header);
            if id.is_empty() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "empty record id".into(),
                });
            }
            current = Some(SequenceRecord {
                id,
                sequence: String::new(),
                label,
            });
        } else if line.trim().is_empty() {
            continue;
        } else {
            match current.as_mut() {
                Some(rec) => rec.sequence.extend(
                    line.chars()
                        .filter(|c| !c.is_whitespace())
                        .flat_map(char::to_uppercase),
                ),
                None => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: "expected a '>' header line".into(),
                    })
                }
            }
        }
    }
    if let Some(rec) = current.take() {
        finish(rec, &mut records)?;
    }
    check_unique(&records)?;
    Ok(records)
}

/// Writes records in the layout [`parse_fasta`] reads back.
pub fn write_fasta<W: Write>(mut sink: W, records: &[SequenceRecord]) -> Result<()> {
    for r in records {
        writeln!(sink, ">{}|{}", r.id, r.label)?;
        writeln!(sink, "{}", r.sequence)?;
    }
    Ok(())
}

/// Parses `id,sequence,label` CSV (LF or CRLF).
pub fn parse_labeled_csv<R: Read>(source: R) -> Result<Vec<SequenceRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(h) => h.map_err(|e| Error::Format(e.to_string()))?,
        None => return Err(Error::Format("missing header `id,sequence,label`".into())),
    };
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields != ["id", "sequence", "label"] {
        return Err(Error::Format(format!(
            "expected header `id,sequence,label`, found `{}`",
            fields.join(",")
        )));
    }

    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let row = row.map_err(|e| Error::Format(e.to_string()))?;
        let line = i + 2;
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let id = row[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty record id".into(),
            });
        }
        let sequence: String = row[1]
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(char::to_uppercase)
            .collect();
        if sequence.is_empty() {
            return Err(Error::EmptySequence { id });
        }
        records.push(SequenceRecord {
            id,
            sequence,
            label: row[2].trim().to_string(),
        });
    }
    check_unique(&records)?;
    Ok(records)
}

/// Noisy circle: `n` points at evenly spaced angles `2*pi*i/n`, each
/// coordinate perturbed by `Normal(0, noise_std^2)`. Labels are the quadrant
/// ("0".."3") of the noise-free angle.
pub fn generate_circle(n: usize, radius: f64, noise_std: f64, seed: u64) -> Result<PointDataset> {
    if n < 3 {
        return Err(Error::arg(format!("circle needs at least 3 points, got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::arg(format!("radius must be positive, got {radius}")));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::arg(format!("noise_std must be >= 0, got {noise_std}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::arg(e.to_string()))?;
    let mut points = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let theta = 2.0 * PI * i as f64 / n as f64;
        let (ex, ey) = if noise_std > 0.0 {
            (noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        points[[i, 0]] = radius * theta.cos() + ex;
        points[[i, 1]] = radius * theta.sin() + ey;
        let quadrant = ((theta / (PI / 2.0)).floor() as usize).min(3);
        labels.push(quadrant.to_string());
    }
    let ids = (0..n).map(|i| format!("p{i}")).collect();
    PointDataset::new(ids, points, labels)
}

/// Reads the `id,x1,...,xD,label` point-set CSV.
pub fn read_points_csv<R: Read>(source: R) -> Result<PointDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(source);
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| Error::Format(e.to_string()))?,
        None => return Err(Error::Format("missing header `id,x1,...,xD,label`".into())),
    };
    let width = header.len();
    if width < 3 || header[0].trim() != "id" || header[width - 1].trim() != "label" {
        return Err(Error::Format(
            "expected header `id,x1,...,xD,label` with D >= 1".into(),
        ));
    }
    let dim = width - 2;

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        ids.push(row[0].trim().to_string());
        for field in row.iter().skip(1).take(dim) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("not a number: `{field}`"),
            })?;
            values.push(v);
        }
        labels.push(row[width - 1].trim().to_string());
    }
    let n = ids.len();
    let points = Array2::from_shape_vec((n, dim), values).expect("row widths checked by csv");
    let ds = PointDataset::new(ids, points, labels)?;
    let mut seen = HashSet::new();
    for id in &ds.ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(ds)
}

/// Writes the `id,x1,...,xD,label` point-set CSV. Floats use the shortest
/// representation that round-trips, so output is byte-stable.
pub fn write_points_csv<W: Write>(sink: W, data: &PointDataset) -> Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    let dim = data.points.ncols();
    let mut header = String::from("id");
    for d in 1..=dim {
        header.push_str(&format!(",x{d}"));
    }
    header.push_str(",label");
    writeln!(w, "{header}")?;
    for (i, row) in data.points.outer_iter().enumerate() {
        write!(w, "{}", data.ids[i])?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", data.labels[i])?;
    }
    w.flush()?;
    Ok(())
}
