//! Token embeddings: a plain-text table loader and a seeded hashed fallback.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use hop_tensor::{SeedRng, Tensor};
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{HopError, Result};

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Deterministic unit-norm vector for `token`.
pub fn hashed_embedding(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest = h.finalize();
    let key = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = SeedRng::new(key);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
    v
}

/// One hashed row per token, `tokens.len() × dim`.
pub fn hashed_embeddings(tokens: &[String], dim: usize, seed: u64) -> Result<Tensor> {
    if dim == 0 || tokens.is_empty() {
        return Err(HopError::param(
            "hashed_embeddings",
            "need at least one token and dimension",
        ));
    }
    let data = tokens
        .iter()
        .flat_map(|t| hashed_embedding(t, dim, seed))
        .collect();
    Ok(Tensor::new([tokens.len(), dim], data)?)
}

/// A `V × D` embedding table with an optional token→row map. Tokens missing
/// from the map fall back to a hashed row index.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabEmbeddings {
    pub table: Tensor,
    pub index: HashMap<String, usize>,
}

impl VocabEmbeddings {
    pub fn new(table: Tensor, tokens: &[String]) -> Result<Self> {
        if table.rank() != 2 {
            return Err(HopError::param(
                "vocab_embeddings",
                "table must be a matrix",
            ));
        }
        if tokens.len() > table.shape()[0] {
            return Err(HopError::param(
                "vocab_embeddings",
                "more tokens than table rows",
            ));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(VocabEmbeddings { table, index })
    }

    /// A table whose first rows are the hashed embeddings of `words`, padded
    /// with hashed filler tokens up to `size` rows.
    pub fn hashed(words: &[String], size: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut tokens: Vec<String> = Vec::with_capacity(size.max(words.len()));
        for w in words {
            if !tokens.contains(w) {
                tokens.push(w.clone());
            }
        }
        let mut i = 0;
        while tokens.len() < size {
            tokens.push(format!("<v{i}>"));
            i += 1;
        }
        let table = hashed_embeddings(&tokens, dim, seed)?;
        Self::new(table, &tokens)
    }

    pub fn size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or_else(|| {
            let digest = Sha256::digest(token.as_bytes());
            (u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % self.size() as u64)
                as usize
        })
    }

    /// Rows for a token sequence, `tokens.len() × D`.
    pub fn lookup(&self, tokens: &[String]) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(HopError::param("lookup", "no tokens"));
        }
        let data = tokens
            .iter()
            .flat_map(|t| self.table.row(self.row_of(t)).iter().copied())
            .collect();
        Ok(Tensor::new([tokens.len(), self.dim()], data)?)
    }
}

/// Parses `V D` followed by V lines of D numbers.
pub fn parse_embedding_table(text: &str) -> Result<Tensor> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| HopError::EmbeddingHeader("file is empty".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| HopError::EmbeddingHeader(format!("expected \"V D\", found {header:?}")))?;
    let [v, d] = dims[..] else {
        return Err(HopError::EmbeddingHeader(format!(
            "expected \"V D\", found {header:?}"
        )));
    };
    if v == 0 || d == 0 {
        return Err(HopError::EmbeddingHeader(format!(
            "V and D must be positive, found {v} {d}"
        )));
    }
    let mut data = Vec::with_capacity(v * d);
    let mut rows = 0;
    let mut last_line = 1;
    for (i, line) in lines {
        let line_no = i + 1;
        last_line = line_no;
        if rows == v {
            return Err(HopError::EmbeddingRows {
                declared: v,
                line: line_no,
                problem: "is an extra row".into(),
            });
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok.parse().map_err(|_| HopError::EmbeddingValue {
                line: line_no,
                value: tok.to_string(),
            })?;
            data.push(x);
        }
        if data.len() - before != d {
            return Err(HopError::EmbeddingRows {
                declared: v,
                line: line_no,
                problem: format!("has {} values instead of {d}", data.len() - before),
            });
        }
        rows += 1;
    }
    if rows != v {
        return Err(HopError::EmbeddingRows {
            declared: v,
            line: last_line,
            problem: format!("ends the file after {rows} rows"),
        });
    }
    Ok(Tensor::new([v, d], data)?)
}

pub fn load_embedding_table(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| HopError::io(path, e))?;
    parse_embedding_table(&text)
}

/// Shortest round-trip decimal formatting, so a reload is bit-exact.
pub fn format_embedding_table(table: &Tensor) -> Result<String> {
    if table.rank() != 2 {
        return Err(HopError::param(
            "format_embedding_table",
            "table must be a matrix",
        ));
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut out = format!("{v} {d}\n");
    for r in 0..v {
        for (j, x) in table.row(r).iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{x:?}").expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_embedding_table(path: &Path, table: &Tensor) -> Result<()> {
    std::fs::write(path, format_embedding_table(table)?).map_err(|e| HopError::io(path, e))
}
