use serde::{Deserialize, Serialize};

use super::QuantError;
use crate::codes::{histogram, NUM_BASES, NUM_CODES};

/// Default basis for a layer whose weights are all zero.
pub const DEFAULT_OMEGA: [f64; NUM_BASES] = [0.01, 0.02, 0.04, -0.08];

/// Per-layer codebook: four basis coefficients, the sixteen subset-sum
/// centroids they induce, and the empirical code priors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    omega: [f64; NUM_BASES],
    centroids: [f64; NUM_CODES],
    priors: [f64; NUM_CODES],
}

/// `Σ_{i ∈ code} ω_i`, summed in increasing basis order. Code 0 is exactly 0.
pub fn subset_sum(omega: &[f64; NUM_BASES], code: u8) -> f64 {
    let mut acc = 0.0;
    for (i, w) in omega.iter().enumerate() {
        if code >> i & 1 == 1 {
            acc += w;
        }
    }
    acc
}

pub fn centroids_of(omega: &[f64; NUM_BASES]) -> [f64; NUM_CODES] {
    std::array::from_fn(|k| subset_sum(omega, k as u8))
}

impl Codebook {
    /// Codebook with uniform priors.
    pub fn new(omega: [f64; NUM_BASES]) -> Self {
        Self {
            omega,
            centroids: centroids_of(&omega),
            priors: [1.0 / NUM_CODES as f64; NUM_CODES],
        }
    }

    pub fn omega(&self) -> &[f64; NUM_BASES] {
        &self.omega
    }

    pub fn centroids(&self) -> &[f64; NUM_CODES] {
        &self.centroids
    }

    pub fn priors(&self) -> &[f64; NUM_CODES] {
        &self.priors
    }

    /// Replaces the basis and re-derives every centroid from it.
    pub fn set_omega(&mut self, omega: [f64; NUM_BASES]) {
        self.omega = omega;
        self.centroids = centroids_of(&omega);
    }

    pub fn set_priors_from_codes(&mut self, codes: &[u8]) {
        if codes.is_empty() {
            return;
        }
        let h = histogram(codes);
        let n = codes.len() as f64;
        self.priors = std::array::from_fn(|k| h[k] as f64 / n);
    }

    pub fn reset_priors(&mut self) {
        self.priors = [1.0 / NUM_CODES as f64; NUM_CODES];
    }

    /// Puts all prior mass on code 0, the starting point for an assignment
    /// that grows outward from the all-zero layer.
    pub fn concentrate_priors_on_zero(&mut self) {
        self.priors = [0.0; NUM_CODES];
        self.priors[0] = 1.0;
    }

    pub fn dequantize(&self, code: u8) -> f64 {
        self.centroids[(code & 0x0f) as usize]
    }
}

/// First-order entropy `−Σ P_k log2 P_k` of the empirical code distribution,
/// in bits per weight.
pub fn empirical_entropy(codes: &[u8]) -> Result<f64, QuantError> {
    if codes.is_empty() {
        return Err(QuantError::Empty);
    }
    Ok(entropy_of_histogram(&histogram(codes)))
}

pub fn entropy_of_histogram(h: &[u64; NUM_CODES]) -> f64 {
    let n: u64 = h.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let h = h
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    h.max(0.0)
}

/// Initial basis for a layer.
///
/// The signed 4-bit basis `(a, 2a, 4a, −8a)` puts the sixteen centroids on
/// the zero-centred grid `{−8a, …, 7a}`, so code 0 owns a full grid cell.
/// The step `a` is the least-squares fit over a log-spaced candidate set
/// (every [`INIT_STRIDE_LIMIT`]-th weight is scored for large layers).
pub fn init_codebook(weights: &[f64]) -> Result<[f64; NUM_BASES], QuantError> {
    if weights.is_empty() {
        return Err(QuantError::Empty);
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
        return Err(QuantError::NonFinite {
            path: "weights".into(),
            index,
        });
    }
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max_abs == 0.0 {
        return Ok(DEFAULT_OMEGA);
    }
    let stride = weights.len().div_ceil(INIT_STRIDE_LIMIT);
    let sample: Vec<f64> = weights.iter().step_by(stride).copied().collect();
    let largest = max_abs / 7.0;
    let step = (0..INIT_CANDIDATES)
        .map(|k| largest * (-(k as f64) / 8.0).exp2())
        .map(|a| (a, grid_error(&sample, a)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(a, _)| a)
        .unwrap_or(largest);
    Ok([step, 2.0 * step, 4.0 * step, -8.0 * step])
}

/// Weights scored per layer when fitting the initial grid step.
pub const INIT_STRIDE_LIMIT: usize = 1 << 16;

/// Grid steps tried, from `max|w|/7` down by factors of `2^(1/8)`.
const INIT_CANDIDATES: usize = 64;

fn grid_error(weights: &[f64], step: f64) -> f64 {
    weights
        .iter()
        .map(|&w| {
            let q = (w / step).round().clamp(-8.0, 7.0) * step;
            (w - q) * (w - q)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn centroids_distinct(omega: &[f64; NUM_BASES], min_gap: f64) -> bool {
        let mut c = centroids_of(omega).to_vec();
        c.sort_by(|a, b| a.total_cmp(b));
        c.windows(2).all(|w| w[1] - w[0] > min_gap)
    }

    #[test]
    fn centroids_are_subset_sums() {
        let cb = Codebook::new([-1.43, -0.77, 0.13, 2.53]);
        assert_eq!(cb.centroids()[0], 0.0);
        assert_eq!(cb.centroids()[0b0011], -1.43 + -0.77);
        assert!((cb.dequantize(0b0011) - -2.2).abs() < 1e-12);
        assert_eq!(cb.centroids()[0b1111], ((-1.43 + -0.77) + 0.13) + 2.53);
        let total: f64 = cb.priors().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_limits() {
        assert_eq!(empirical_entropy(&[5; 100]).unwrap(), 0.0);
        let uniform: Vec<u8> = (0..16).cycle().take(160).collect();
        assert!((empirical_entropy(&uniform).unwrap() - 4.0).abs() < 1e-12);
        assert!(matches!(empirical_entropy(&[]), Err(QuantError::Empty)));
    }

    #[test]
    fn entropy_of_half_quarter_quarter() {
        let codes = [1, 1, 2, 3];
        assert!((empirical_entropy(&codes).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn priors_follow_codes() {
        let mut cb = Codebook::new(DEFAULT_OMEGA);
        cb.set_priors_from_codes(&[0, 0, 0, 7]);
        assert_eq!(cb.priors()[0], 0.75);
        assert_eq!(cb.priors()[7], 0.25);
        let total: f64 = cb.priors().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_init_spans_range_with_distinct_centroids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let omega = init_codebook(&w).unwrap();
        let c = centroids_of(&omega);
        for a in 0..16 {
            for b in (a + 1)..16 {
                assert!(c[a] != c[b], "centroids {a} and {b} collide");
            }
        }
        let (lo, hi) = c.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(lo < -1.5 && hi > 1.5, "centroids span [{lo}, {hi}]");
        assert!(omega.iter().any(|&w| w < 0.0) && omega.iter().any(|&w| w > 0.0));
    }

    #[test]
    fn init_is_zero_centred_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..5000).map(|_| 0.05 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let omega = init_codebook(&w).unwrap();
        let a = omega[0];
        assert!(a > 0.0);
        assert_eq!(omega, [a, 2.0 * a, 4.0 * a, -8.0 * a]);
        let mut c = centroids_of(&omega).to_vec();
        c.sort_by(|x, y| x.total_cmp(y));
        for (k, v) in c.iter().enumerate() {
            assert!((v - (k as f64 - 8.0) * a).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_code_is_most_popular_for_peaked_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..20000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let cb = Codebook::new(init_codebook(&w).unwrap());
        let codes: Vec<u8> = w
            .iter()
            .map(|&x| crate::quant::nearest(x, cb.centroids(), &[0.0; NUM_CODES]))
            .collect();
        let h = histogram(&codes);
        assert!((1..NUM_CODES).all(|k| h[0] >= h[k]), "{h:?}");
    }

    #[test]
    fn init_step_beats_neighbouring_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = init_codebook(&w).unwrap()[0];
        let best = grid_error(&w, a);
        assert!(grid_error(&w, a * 1.2) >= best && grid_error(&w, a / 1.2) >= best);
    }

    #[test]
    fn constant_weights_still_get_distinct_centroids() {
        for c in [0.3, -2.0, 1e-6] {
            let omega = init_codebook(&vec![c; 64]).unwrap();
            assert!(centroids_distinct(&omega, 0.0), "collision for constant {c}: {omega:?}");
        }
    }

    #[test]
    fn zero_layer_gets_default_basis() {
        assert_eq!(init_codebook(&[0.0; 10]).unwrap(), DEFAULT_OMEGA);
        assert!(centroids_distinct(&DEFAULT_OMEGA, 0.0));
        assert!(matches!(init_codebook(&[]), Err(QuantError::Empty)));
    }
}
