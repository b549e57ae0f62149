//! k-mer spectrum featurization: each sequence becomes the dense vector of
//! counts of all `|alphabet|^k` possible k-mers.

use std::collections::{BTreeSet, HashMap};

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::SequenceRecord;
use crate::FeatureMatrix;

/// Largest spectrum length we are willing to materialize densely.
pub const MAX_SPECTRUM_LEN: usize = 1 << 26;

/// Ordered residue alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(Error::arg(format!("alphabet symbol {c:?} repeated")));
            }
        }
        if symbols.is_empty() {
            return Err(Error::arg("alphabet is empty"));
        }
        Ok(Self { symbols, index })
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// `|alphabet|^k`, or an error when it would not fit in memory.
    pub fn spectrum_len(&self, k: usize) -> Result<usize> {
        if k == 0 {
            return Err(Error::arg("k must be at least 1"));
        }
        u32::try_from(k)
            .ok()
            .and_then(|k| self.len().checked_pow(k))
            .filter(|&d| d <= MAX_SPECTRUM_LEN)
            .ok_or_else(|| {
                Error::arg(format!(
                    "spectrum of {}^{k} entries is too large",
                    self.len()
                ))
            })
    }
}

/// Sorted set of every character occurring in the records.
pub fn infer_alphabet(records: &[SequenceRecord]) -> Result<Alphabet> {
    if records.is_empty() {
        return Err(Error::arg("cannot infer an alphabet from zero records"));
    }
    let set: BTreeSet<char> = records.iter().flat_map(|r| r.sequence.chars()).collect();
    Alphabet::new(set)
}

enum SpectrumError {
    TooShort(usize),
    Unknown { symbol: char, position: usize },
}

fn fill_spectrum(
    sequence: &str,
    k: usize,
    alphabet: &Alphabet,
    out: &mut [f64],
) -> std::result::Result<(), SpectrumError> {
    let len = sequence.chars().count();
    if len < k {
        return Err(SpectrumError::TooShort(len));
    }
    let base = alphabet.len();
    let modulus = out.len();
    let mut code = 0usize;
    for (pos, c) in sequence.chars().enumerate() {
        let idx = alphabet.index_of(c).ok_or(SpectrumError::Unknown {
            symbol: c,
            position: pos,
        })?;
        code = (code * base + idx) % modulus;
        if pos + 1 >= k {
            out[code] += 1.0;
        }
    }
    Ok(())
}

fn spectrum_error(id: &str, k: usize, e: SpectrumError) -> Error {
    match e {
        SpectrumError::TooShort(len) => Error::arg(format!(
            "record `{id}`: sequence of length {len} is shorter than k = {k}"
        )),
        SpectrumError::Unknown { symbol, position } => Error::UnknownSymbol {
            id: id.to_string(),
            symbol,
            position,
        },
    }
}

/// Counts of every k-mer in `sequence`. The k-mer `c_1..c_k` lives at slot
/// `sum_j index(c_j) * |alphabet|^(k-j)`.
pub fn kmer_spectrum(sequence: &str, k: usize, alphabet: &Alphabet) -> Result<Vec<f64>> {
    let mut out = vec![0.0; alphabet.spectrum_len(k)?];
    fill_spectrum(sequence, k, alphabet, &mut out).map_err(|e| spectrum_error("", k, e))?;
    Ok(out)
}

/// Sparse form of [`kmer_spectrum`]: `(slot, count)` pairs sorted by slot,
/// zero slots omitted.
pub fn sparse_spectrum(sequence: &str, k: usize, alphabet: &Alphabet) -> Result<Vec<(usize, f64)>> {
    let modulus = alphabet.spectrum_len(k)?;
    let base = alphabet.len();
    let len = sequence.chars().count();
    if len < k {
        return Err(spectrum_error("", k, SpectrumError::TooShort(len)));
    }
    let mut codes = Vec::with_capacity(len + 1 - k);
    let mut code = 0usize;
    for (pos, c) in sequence.chars().enumerate() {
        let idx = alphabet.index_of(c).ok_or_else(|| {
            spectrum_error("", k, SpectrumError::Unknown { symbol: c, position: pos })
        })?;
        code = (code * base + idx) % modulus;
        if pos + 1 >= k {
            codes.push(code);
        }
    }
    codes.sort_unstable();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for c in codes {
        match out.last_mut() {
            Some((slot, n)) if *slot == c => *n += 1.0,
            _ => out.push((c, 1.0)),
        }
    }
    Ok(out)
}

/// Stacks the spectra of all records, row `i` belonging to `records[i]`.
/// Uses `alphabet` when given, otherwise the one inferred from the records.
pub fn build_feature_matrix(
    records: &[SequenceRecord],
    k: usize,
    alphabet: Option<&Alphabet>,
) -> Result<FeatureMatrix> {
    if records.is_empty() {
        return Err(Error::arg("cannot featurize zero records"));
    }
    let inferred;
    let alphabet = match alphabet {
        Some(a) => a,
        None => {
            inferred = infer_alphabet(records)?;
            &inferred
        }
    };
    let dim = alphabet.spectrum_len(k)?;
    let mut matrix = Array2::zeros((records.len(), dim));
    let outcomes: Vec<std::result::Result<(), SpectrumError>> = matrix
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(records.par_iter())
        .map(|(mut row, rec)| {
            let slice = row.as_slice_mut().expect("rows of a standard layout array");
            fill_spectrum(&rec.sequence, k, alphabet, slice)
        })
        .collect();
    for (rec, outcome) in records.iter().zip(outcomes) {
        outcome.map_err(|e| spectrum_error(&rec.id, k, e))?;
    }
    Ok(matrix)
}
