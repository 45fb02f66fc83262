use super::{Codebook, QuantError};
use crate::codes::NUM_CODES;

/// Assignment↔prior rounds before giving up on a fixed point.
pub const MAX_ECL_ROUNDS: usize = 50;

/// Result of an entropy-constrained assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct EclAssignment {
    pub codes: Vec<u8>,
    pub rounds: usize,
    pub converged: bool,
}

/// Entropy-constrained Lloyd assignment with frozen centroids.
///
/// Each weight takes `argmin_k (w − c_k)² + λ·(−log2 P_k)`, ties going to the
/// lowest code. Priors are then re-estimated from the assignment and the two
/// steps alternate until the assignment stops changing (at most
/// [`MAX_ECL_ROUNDS`] rounds). Priors are floored at `1/(16·N)` inside the
/// cost only; the codebook keeps the empirical distribution.
pub fn ecl_assign(weights: &[f64], codebook: &mut Codebook, lambda: f64) -> Result<EclAssignment, QuantError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(QuantError::NegativeLambda(lambda));
    }
    if weights.is_empty() {
        return Err(QuantError::Empty);
    }
    let floor = 1.0 / (NUM_CODES * weights.len()) as f64;
    let centroids = *codebook.centroids();
    let mut codes = vec![0u8; weights.len()];
    let mut rounds = 0;
    let mut converged = false;
    while rounds < MAX_ECL_ROUNDS {
        let penalty: [f64; NUM_CODES] = std::array::from_fn(|k| {
            if lambda == 0.0 {
                0.0
            } else {
                -lambda * codebook.priors()[k].max(floor).log2()
            }
        });
        let mut changed = false;
        for (w, code) in weights.iter().zip(codes.iter_mut()) {
            let next = nearest(*w, &centroids, &penalty);
            if rounds == 0 || next != *code {
                changed = true;
                *code = next;
            }
        }
        codebook.set_priors_from_codes(&codes);
        rounds += 1;
        // With λ = 0 the cost ignores the priors, so one round is final.
        if !changed || lambda == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(EclAssignment {
        codes,
        rounds,
        converged,
    })
}

/// One assignment pass under the codebook's current priors, which are left
/// unchanged. Uses the same cost and prior floor as [`ecl_assign`].
pub fn assign_with_priors(weights: &[f64], codebook: &Codebook, lambda: f64) -> Result<Vec<u8>, QuantError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(QuantError::NegativeLambda(lambda));
    }
    if weights.is_empty() {
        return Err(QuantError::Empty);
    }
    let floor = 1.0 / (NUM_CODES * weights.len()) as f64;
    let penalty: [f64; NUM_CODES] = std::array::from_fn(|k| {
        if lambda == 0.0 {
            0.0
        } else {
            -lambda * codebook.priors()[k].max(floor).log2()
        }
    });
    let centroids = codebook.centroids();
    Ok(weights.iter().map(|&w| nearest(w, centroids, &penalty)).collect())
}

/// Lowest-index argmin of `(w − c_k)² + penalty_k`.
#[inline]
pub fn nearest(w: f64, centroids: &[f64; NUM_CODES], penalty: &[f64; NUM_CODES]) -> u8 {
    let mut best = 0usize;
    let mut best_cost = f64::INFINITY;
    for k in 0..NUM_CODES {
        let d = w - centroids[k];
        let cost = d * d + penalty[k];
        if cost < best_cost {
            best_cost = cost;
            best = k;
        }
    }
    best as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::codebook::empirical_entropy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn brute_nearest(w: f64, c: &[f64; 16]) -> u8 {
        let mut best = 0;
        for k in 1..16 {
            if (w - c[k]).powi(2) < (w - c[best]).powi(2) {
                best = k;
            }
        }
        best as u8
    }

    #[test]
    fn zero_lambda_is_nearest_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 0.1).unwrap();
        let w: Vec<f64> = (0..2000).map(|_| n.sample(&mut rng)).collect();
        let mut cb = Codebook::new([0.03, -0.05, 0.11, -0.2]);
        let out = ecl_assign(&w, &mut cb, 0.0).unwrap();
        for (x, &k) in w.iter().zip(&out.codes) {
            assert_eq!(k, brute_nearest(*x, cb.centroids()));
        }
        assert!(out.converged);
    }

    #[test]
    fn huge_lambda_collapses_to_one_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = Normal::new(0.0, 0.1).unwrap();
        let w: Vec<f64> = (0..500).map(|_| n.sample(&mut rng)).collect();
        let mut cb = Codebook::new([0.03, -0.05, 0.11, -0.2]);
        let out = ecl_assign(&w, &mut cb, 1e6).unwrap();
        assert_eq!(empirical_entropy(&out.codes).unwrap(), 0.0);
        assert!(out.codes.iter().all(|&c| c == out.codes[0]));
    }

    #[test]
    fn assignment_is_argmin_under_converged_priors() {
        let w = [0.0, 0.02, -0.04, 0.09, 0.1, -0.12, 0.31, -0.005];
        let mut cb = Codebook::new([0.05, -0.07, 0.2, -0.15]);
        let lambda = 0.1;
        let out = ecl_assign(&w, &mut cb, lambda).unwrap();
        assert!(out.converged);
        let floor = 1.0 / (16.0 * w.len() as f64);
        // Exhaustive oracle: every code, every weight, explicit cost.
        for (x, &k) in w.iter().zip(&out.codes) {
            let costs: Vec<f64> = (0..16)
                .map(|j| (x - cb.centroids()[j]).powi(2) + lambda * -(cb.priors()[j].max(floor)).log2())
                .collect();
            let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = costs.iter().position(|&c| c == min).unwrap();
            assert_eq!(k as usize, first);
        }
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let mut cb = Codebook::new([1.0, 2.0, 4.0, 8.0]);
        assert!(matches!(ecl_assign(&[1.0], &mut cb, -1.0), Err(QuantError::NegativeLambda(_))));
    }

    #[test]
    fn ties_go_to_lowest_code() {
        // Centroids 0 and 0b0011 both equal 0 when ω0 = −ω1.
        let centroids = crate::quant::codebook::centroids_of(&[1.0, -1.0, 5.0, 9.0]);
        assert_eq!(nearest(0.0, &centroids, &[0.0; 16]), 0);
    }

    #[test]
    fn sparsity_grows_with_lambda() {
        let mut means = Vec::new();
        for &lambda in &[0.0, 1e-4, 1e-3, 1e-2] {
            let mut total = 0.0;
            for seed in 0..5 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = Normal::new(0.0, 0.05).unwrap();
                let w: Vec<f64> = (0..4000).map(|_| n.sample(&mut rng)).collect();
                let mut cb = Codebook::new(crate::quant::init_codebook(&w).unwrap());
                let codes = ecl_assign(&w, &mut cb, lambda).unwrap().codes;
                total += codes.iter().filter(|&&c| c == 0).count() as f64 / codes.len() as f64;
            }
            means.push(total / 5.0);
        }
        assert!(means.windows(2).all(|p| p[1] >= p[0]), "{means:?}");
        assert!(means[3] > means[0]);
    }
}
