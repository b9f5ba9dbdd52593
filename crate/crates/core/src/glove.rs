//! Word vectors in the GloVe text format: a token followed by its
//! space-separated components, one word per line.

use std::collections::HashMap;
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Vocabulary, PAD_ID};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Standard deviation of the random vectors given to words without a
/// pre-trained vector; close to the spread of 100-dimensional GloVe.
pub const RANDOM_STD: f64 = 0.4;

/// Reads vectors of dimension `dim`. A line whose vector length differs from
/// `dim` is a configuration error. Tokens containing spaces are supported:
/// the last `dim` fields are the vector.
pub fn read_glove<R: BufRead>(reader: R, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        let values: Vec<f64> = fields.iter().rev().map_while(|f| f.parse::<f64>().ok()).collect();
        let n_values = values.len().min(fields.len() - 1);
        if n_values != dim {
            return Err(Error::Config(format!(
                "embedding line {} has {n_values} components, expected {dim}",
                n + 1
            )));
        }
        let word = fields[..fields.len() - dim].join(" ");
        let vector: Vec<f64> = values[..dim].iter().rev().copied().collect();
        out.entry(word).or_insert(vector);
    }
    Ok(out)
}

/// One row per vocabulary word. Words are looked up as they are and
/// lowercased; words without a vector get a seeded random one; the padding
/// row is zero. Returns the matrix and the number of words found.
pub fn embedding_matrix(
    vocab: &Vocabulary,
    vectors: Option<&HashMap<String, Vec<f64>>>,
    dim: usize,
    seed: u64,
) -> (Tensor, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, RANDOM_STD).expect("finite std");
    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut found = 0;
    for (id, word) in vocab.words().iter().enumerate() {
        let random: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        if id == PAD_ID {
            data.extend(std::iter::repeat_n(0.0, dim));
            continue;
        }
        let hit = vectors.and_then(|v| v.get(word).or_else(|| v.get(&word.to_lowercase())));
        match hit {
            Some(v) => {
                found += 1;
                data.extend_from_slice(v);
            }
            None => data.extend(random),
        }
    }
    (Tensor::matrix(vocab.len(), dim, data), found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_vectors() {
        let text = "the 0.1 0.2 0.3\n, -1 0 1e-2\n\nnew york 1 2 3\n";
        let v = read_glove(text.as_bytes(), 3).unwrap();
        assert_eq!(v["the"], vec![0.1, 0.2, 0.3]);
        assert_eq!(v[","], vec![-1.0, 0.0, 0.01]);
        assert_eq!(v["new york"], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let err = read_glove("the 0.1 0.2\n".as_bytes(), 100).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn numeric_tokens_are_words() {
        let v = read_glove("1984 0.5 0.25\n".as_bytes(), 2).unwrap();
        assert_eq!(v["1984"], vec![0.5, 0.25]);
    }
}
