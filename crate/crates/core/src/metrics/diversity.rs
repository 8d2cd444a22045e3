use rand::Rng;

use hop_tensor::SeedRng;

use crate::error::{HopError, Result};

/// Pairs sampled when no count is given.
pub const DEFAULT_PAIRS: usize = 500;

/// Mean L1 distance over `pairs` seeded index pairs (no self-pairs) of
/// flattened sequences. Not normalized by length.
pub fn diversity(sequences: &[Vec<f64>], pairs: usize, seed: u64) -> Result<f64> {
    let n = sequences.len();
    if n < 2 {
        return Err(HopError::param(
            "diversity",
            format!("need at least 2 sequences, got {n}"),
        ));
    }
    if pairs == 0 {
        return Err(HopError::param(
            "diversity",
            "pair count must be at least 1",
        ));
    }
    let len = sequences[0].len();
    if sequences.iter().any(|s| s.len() != len) {
        return Err(HopError::param("diversity", "sequences differ in length"));
    }
    let mut rng = SeedRng::new(seed);
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += sequences[i]
            .iter()
            .zip(&sequences[j])
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_offset_over_a_clip_gives_element_count() {
        let a = vec![0.25; 34 * 9 * 3];
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert_eq!(diversity(&[a, b], 100, 1).unwrap(), 918.0);
    }

    #[test]
    fn identical_and_singleton_sets() {
        let a = vec![0.3; 12];
        assert_eq!(
            diversity(&[a.clone(), a.clone(), a.clone()], 50, 2).unwrap(),
            0.0
        );
        assert!(diversity(&[a], 10, 2).is_err());
    }
}
