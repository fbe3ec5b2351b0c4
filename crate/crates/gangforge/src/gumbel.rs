//! Gumbel-noise top-k selection with a deterministic zero-noise limit.
//!
//! Selection adds epsilon-scaled standard Gumbel noise to raw scores and
//! takes the k largest. With epsilon = 0 this reduces exactly to stable
//! arg-top-k (ties broken toward the lower index), which the inference path
//! relies on. The differentiable soft counterpart, softmax((s + eps*g)/tau),
//! is built on the tape by callers; this module supplies the noise and the
//! hard index choices.

use ndarray::Array2;
use rand::Rng;

/// One standard Gumbel(0, 1) draw.
pub fn sample_gumbel<R: Rng>(rng: &mut R) -> f64 {
    // Clamp away from 0 so the double log stays finite.
    let u: f64 = rng.random::<f64>().max(1e-300);
    -(-u.ln()).ln()
}

pub fn gumbel_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| sample_gumbel(rng))
}

/// Indices of the `k` largest scores in rank order, ties broken toward the
/// lower index. `k` larger than the vector returns every index.
pub fn arg_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must not be NaN")
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Noisy top-k: `arg_top_k(scores + epsilon * gumbel)`. Skips drawing when
/// epsilon is zero so the limit is bit-exact.
pub fn select_top_k<R: Rng>(scores: &[f64], k: usize, epsilon: f64, rng: &mut R) -> Vec<usize> {
    if epsilon == 0.0 {
        return arg_top_k(scores, k);
    }
    let noised: Vec<f64> = scores
        .iter()
        .map(|&s| s + epsilon * sample_gumbel(rng))
        .collect();
    arg_top_k(&noised, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn top_k_ranks_and_breaks_ties_by_index() {
        assert_eq!(arg_top_k(&[3.0, 1.0, 2.0], 2), vec![0, 2]);
        assert_eq!(arg_top_k(&[1.0, 1.0, 0.5], 2), vec![0, 1]);
        assert_eq!(arg_top_k(&[0.5, 1.0, 1.0], 2), vec![1, 2]);
        assert_eq!(arg_top_k(&[1.0], 5), vec![0]);
    }

    #[test]
    fn zero_epsilon_is_deterministic_top_k() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let scores = [0.3, -1.0, 2.5, 0.3];
        for _ in 0..10 {
            assert_eq!(select_top_k(&scores, 2, 0.0, &mut rng), vec![2, 0]);
        }
    }

    #[test]
    fn large_epsilon_explores() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let scores = [1.0, 0.9, 0.8, 0.7];
        let mut distinct = std::collections::BTreeSet::new();
        for _ in 0..50 {
            distinct.insert(select_top_k(&scores, 1, 10.0, &mut rng));
        }
        assert!(distinct.len() > 1, "noise never changed the selection");
    }

    #[test]
    fn gumbel_samples_are_finite() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            assert!(sample_gumbel(&mut rng).is_finite());
        }
    }
}
