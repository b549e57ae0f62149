#![allow(dead_code)]

use std::fmt::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// FASTA text with `classes` labels. Each class draws mostly from its own
/// slice of `alphabet`, so the classes separate in k-mer space.
pub fn clustered_fasta(per_class: usize, classes: usize, len: usize, alphabet: &str, seed: u64) -> String {
    let symbols: Vec<char> = alphabet.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for c in 0..classes {
        let home: Vec<char> = symbols.iter().cycle().skip(c * 3).take(4).copied().collect();
        for i in 0..per_class {
            let seq: String = (0..len)
                .map(|_| {
                    if rng.random_bool(0.7) {
                        home[rng.random_range(0..home.len())]
                    } else {
                        symbols[rng.random_range(0..symbols.len())]
                    }
                })
                .collect();
            writeln!(out, ">s{c}_{i}|class{c}\n{seq}").unwrap();
        }
    }
    out
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}
