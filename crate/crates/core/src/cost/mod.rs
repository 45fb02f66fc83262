//! Operation counts, data movement and a weighted energy proxy.
//!
//! The proxy is in arbitrary units and only meaningful for comparing runs:
//!
//! ```text
//! energy = c_add·adds + c_mul·mults + c_fifo·(pops − ½·repeat_pops)
//!        + c_offchip·offchip_bytes + c_onchip·onchip_bytes
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{decode, CodecError, ModelContainer};
use crate::codes::histogram;
use crate::datapath::DatapathTrace;
use crate::quant::entropy_of_histogram;

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("coefficient {name} is negative ({value})")]
    NegativeCoefficient { name: &'static str, value: f64 },
    #[error("{traces} layer traces for a {layers}-layer model")]
    LayerCount { traces: usize, layers: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostCoefficients {
    pub c_add: f64,
    pub c_mul: f64,
    pub c_fifo: f64,
    pub c_offchip: f64,
    pub c_onchip: f64,
}

impl Default for CostCoefficients {
    fn default() -> Self {
        Self {
            c_add: 1.0,
            c_mul: 4.0,
            c_fifo: 0.5,
            c_offchip: 100.0,
            c_onchip: 5.0,
        }
    }
}

impl CostCoefficients {
    pub fn validate(&self) -> Result<(), CostError> {
        for (name, value) in [
            ("c_add", self.c_add),
            ("c_mul", self.c_mul),
            ("c_fifo", self.c_fifo),
            ("c_offchip", self.c_offchip),
            ("c_onchip", self.c_onchip),
        ] {
            if !(value >= 0.0) {
                return Err(CostError::NegativeCoefficient { name, value });
            }
        }
        Ok(())
    }
}

/// Costs of one layer (or the whole model, for the total row).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: String,
    pub adds: u64,
    pub skipped_adds: u64,
    pub basis_adds: u64,
    pub mults: u64,
    pub fifo_pops: u64,
    pub repeat_pops: u64,
    pub offchip_bytes: u64,
    pub onchip_bytes: u64,
    pub energy_proxy: f64,
    /// Bits per weight; for the total row, the weight-count-weighted mean.
    pub entropy: f64,
    pub sparsity: f64,
    pub weights: u64,
}

impl LayerCost {
    fn counters(&self) -> [u64; 7] {
        [
            self.adds,
            self.skipped_adds,
            self.mults,
            self.fifo_pops,
            self.repeat_pops,
            self.offchip_bytes,
            self.onchip_bytes,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total: LayerCost,
}

/// Weighted sum of the counters of `cost`.
pub fn energy_proxy(cost: &LayerCost, c: &CostCoefficients) -> Result<f64, CostError> {
    c.validate()?;
    Ok(c.c_add * cost.adds as f64
        + c.c_mul * cost.mults as f64
        + c.c_fifo * (cost.fifo_pops as f64 - 0.5 * cost.repeat_pops as f64)
        + c.c_offchip * cost.offchip_bytes as f64
        + c.c_onchip * cost.onchip_bytes as f64)
}

/// Builds the report from per-layer traces of a finished simulation.
/// Off-chip bytes are the serialized weight payloads, moved once.
pub fn tally_trace(traces: &[DatapathTrace], model: &ModelContainer, c: &CostCoefficients) -> Result<CostReport, CostError> {
    c.validate()?;
    if traces.len() != model.layers.len() {
        return Err(CostError::LayerCount {
            traces: traces.len(),
            layers: model.layers.len(),
        });
    }
    let mut layers = Vec::with_capacity(traces.len());
    let mut total = LayerCost {
        layer: "total".into(),
        ..Default::default()
    };
    let mut entropy_bits = 0.0;
    let mut zeros = 0.0;
    for (i, (t, l)) in traces.iter().zip(&model.layers).enumerate() {
        let codes = decode(&l.weights)?;
        let n = codes.len() as u64;
        let mut cost = LayerCost {
            layer: i.to_string(),
            adds: t.adds_performed,
            skipped_adds: t.adds_skipped,
            basis_adds: t.basis_adds,
            mults: t.mults,
            fifo_pops: t.fifo_pops,
            repeat_pops: t.fifo_repeat_pops,
            offchip_bytes: l.weights.byte_len() as u64,
            onchip_bytes: t.bytes_onchip,
            energy_proxy: 0.0,
            entropy: entropy_of_histogram(&histogram(codes.as_slice())),
            sparsity: codes.sparsity(),
            weights: n,
        };
        cost.energy_proxy = energy_proxy(&cost, c)?;
        total.adds += cost.adds;
        total.skipped_adds += cost.skipped_adds;
        total.basis_adds += cost.basis_adds;
        total.mults += cost.mults;
        total.fifo_pops += cost.fifo_pops;
        total.repeat_pops += cost.repeat_pops;
        total.offchip_bytes += cost.offchip_bytes;
        total.onchip_bytes += cost.onchip_bytes;
        total.energy_proxy += cost.energy_proxy;
        total.weights += n;
        entropy_bits += cost.entropy * n as f64;
        zeros += cost.sparsity * n as f64;
        layers.push(cost);
    }
    if total.weights > 0 {
        total.entropy = entropy_bits / total.weights as f64;
        total.sparsity = zeros / total.weights as f64;
    }
    Ok(CostReport { layers, total })
}

impl CostReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for l in self.layers.iter().chain(std::iter::once(&self.total)) {
            w.serialize(l)?;
        }
        w.flush()?;
        Ok(())
    }

    /// True when the total row equals the sum of the layer rows.
    pub fn is_consistent(&self) -> bool {
        let mut sums = [0u64; 7];
        for l in &self.layers {
            for (s, v) in sums.iter_mut().zip(l.counters()) {
                *s += v;
            }
        }
        sums == self.total.counters()
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>6} {:>12} {:>12} {:>10} {:>12} {:>12} {:>10} {:>12} {:>14} {:>7} {:>8}",
            "layer", "adds", "skipped", "mults", "fifo_pops", "repeats", "offchip", "onchip", "energy", "H", "sparsity"
        )?;
        for l in self.layers.iter().chain(std::iter::once(&self.total)) {
            writeln!(
                f,
                "{:>6} {:>12} {:>12} {:>10} {:>12} {:>12} {:>10} {:>12} {:>14.4e} {:>7.3} {:>8.4}",
                l.layer,
                l.adds,
                l.skipped_adds,
                l.mults,
                l.fifo_pops,
                l.repeat_pops,
                l.offchip_bytes,
                l.onchip_bytes,
                l.energy_proxy,
                l.entropy,
                l.sparsity
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{select_format, ContainerLayer};
    use crate::codes::CodeMatrix;
    use crate::datapath::{simulate_model, BasisWeights, HalfSelect, SignMode, SimOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(codes: CodeMatrix) -> ModelContainer {
        let rows = codes.rows();
        ModelContainer {
            input_dim: codes.cols(),
            input_scale: 1.0 / 64.0,
            layers: vec![ContainerLayer {
                weights: select_format(&codes),
                omega: BasisWeights {
                    values: [3, -5, 9, -17],
                    shift: 8,
                },
                act_scale: 1.0 / 64.0,
                alpha1: vec![0.01; rows],
                bias: vec![0.0; rows],
                alpha2: 1.0,
                relu: true,
                half_select: HalfSelect::Low,
                sign_mode: SignMode::Add,
            }],
        }
    }

    fn random_codes(density: f64, seed: u64) -> CodeMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = (0..64 * 300)
            .map(|_| if rng.random_bool(density) { rng.random_range(1..16) } else { 0 })
            .collect();
        CodeMatrix::new(64, 300, codes).unwrap()
    }

    fn report(codes: CodeMatrix) -> CostReport {
        let m = model(codes);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..300).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let run = simulate_model(&m, xs.iter().map(Vec::as_slice), SimOptions::default()).unwrap();
        tally_trace(&run.per_layer, &m, &CostCoefficients::default()).unwrap()
    }

    #[test]
    fn empty_model_gives_zero_report() {
        let m = ModelContainer {
            input_dim: 4,
            input_scale: 1.0,
            layers: vec![],
        };
        let r = tally_trace(&[], &m, &CostCoefficients::default()).unwrap();
        assert_eq!(r.total.energy_proxy, 0.0);
        assert!(r.layers.is_empty());
        assert_eq!(energy_proxy(&LayerCost::default(), &CostCoefficients::default()).unwrap(), 0.0);
    }

    #[test]
    fn sparse_model_is_cheaper() {
        let dense = report(random_codes(1.0, 1));
        let sparse = report(random_codes(0.4, 1));
        assert!(sparse.total.adds < dense.total.adds);
        assert!(sparse.total.offchip_bytes < dense.total.offchip_bytes);
        assert!(sparse.total.energy_proxy < dense.total.energy_proxy);
        for r in [&dense, &sparse] {
            assert!(r.is_consistent());
            // 4 samples, 64 rows, 2 tiles.
            assert_eq!(r.total.mults, 4 * 4 * 64 * 2);
            let skip_ratio = r.total.skipped_adds as f64 / (r.total.adds + r.total.skipped_adds) as f64;
            assert!((skip_ratio - r.total.sparsity).abs() < 1e-12);
        }
    }

    #[test]
    fn proxy_is_linear() {
        let cost = LayerCost {
            adds: 10,
            mults: 4,
            fifo_pops: 6,
            repeat_pops: 2,
            offchip_bytes: 3,
            onchip_bytes: 7,
            ..Default::default()
        };
        let doubled = LayerCost {
            adds: 20,
            mults: 8,
            fifo_pops: 12,
            repeat_pops: 4,
            offchip_bytes: 6,
            onchip_bytes: 14,
            ..Default::default()
        };
        let c = CostCoefficients::default();
        let e = energy_proxy(&cost, &c).unwrap();
        assert_eq!(e, 10.0 + 16.0 + 0.5 * 5.0 + 300.0 + 35.0);
        assert_eq!(energy_proxy(&doubled, &c).unwrap(), 2.0 * e);
    }

    #[test]
    fn negative_coefficient_is_rejected() {
        let c = CostCoefficients {
            c_mul: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            energy_proxy(&LayerCost::default(), &c),
            Err(CostError::NegativeCoefficient { name: "c_mul", .. })
        ));
    }

    #[test]
    fn layer_count_mismatch() {
        let m = model(random_codes(0.5, 2));
        assert!(matches!(
            tally_trace(&[], &m, &CostCoefficients::default()),
            Err(CostError::LayerCount { traces: 0, layers: 1 })
        ));
    }

    #[test]
    fn csv_has_total_row() {
        let r = report(random_codes(0.2, 3));
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().last().unwrap().starts_with("total,"));
        assert!(r.to_string().contains("total"));
    }
}
