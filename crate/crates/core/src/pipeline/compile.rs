use ndarray::{s, ArrayView2};
use serde::{Deserialize, Serialize};

use super::train::evaluate;
use super::PipelineError;
use crate::codec::{encode_with_mode, tiles_per_row, CompressionMode, ContainerLayer, ModelContainer};
use crate::datapath::{simulate_model, BasisWeights, FloatRounding, HalfSelect, ModelRun, SignMode, SimOptions};
use crate::nn::Dataset;
use crate::nn::{accuracy, fold_batchnorm};
use crate::quant::QuantizedMlp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompileConfig {
    /// Leading training samples used to calibrate activation scales.
    pub calibration_samples: usize,
    /// Percentile of hidden activations mapped to 127.
    pub percentile: f64,
    /// Integer value of the largest calibration logit.
    pub logit_target: f64,
    pub mode: CompressionMode,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self {
            calibration_samples: 2000,
            percentile: 99.99,
            logit_target: 16384.0,
            mode: CompressionMode::Hybrid,
        }
    }
}

/// Value at `pct` percent of the sorted magnitudes (nearest rank).
fn percentile_abs(values: impl Iterator<Item = f64>, pct: f64) -> f64 {
    let mut v: Vec<f64> = values.map(f64::abs).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

fn unit_scale(peak: f64) -> f64 {
    if peak > 0.0 && peak.is_finite() {
        peak / 127.0
    } else {
        1.0
    }
}

/// Compiles a quantized model into a container. Activation scales come from a
/// float forward pass of the dequantized model over the calibration samples:
/// the network input uses its largest magnitude, hidden layers the configured
/// percentile, and the output scale maps the largest logit to `logit_target`.
pub fn compile_container(
    q: &QuantizedMlp,
    calibration: ArrayView2<f64>,
    cfg: &CompileConfig,
) -> Result<ModelContainer, PipelineError> {
    q.check()?;
    let n = calibration.nrows().min(cfg.calibration_samples.max(1));
    if n == 0 {
        return Err(PipelineError::Config("no calibration samples".into()));
    }
    let calib = calibration.slice(s![..n, ..]);
    let model = q.dequantized_model();
    let (logits, cache) = model.forward(calib)?;
    let scales: Vec<f64> = cache
        .inputs
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let pct = if k == 0 { 100.0 } else { cfg.percentile };
            unit_scale(percentile_abs(x.iter().copied(), pct))
        })
        .collect();
    let peak_logit = percentile_abs(logits.iter().copied(), 100.0);
    let last = q.layers.len() - 1;
    let mut layers = Vec::with_capacity(q.layers.len());
    for (k, (ql, dense)) in q.layers.iter().zip(&model.layers).enumerate() {
        let weights = encode_with_mode(&ql.codes, cfg.mode);
        let omega = BasisWeights::for_layer(ql.codebook.omega(), tiles_per_row(ql.codes.cols()));
        let (bn_scale, bias) = fold_batchnorm(dense)?;
        let unit = scales[k] * omega.scale();
        let alpha2 = if k == last {
            if peak_logit > 0.0 { cfg.logit_target / peak_logit } else { 1.0 }
        } else {
            1.0 / scales[k + 1]
        };
        layers.push(ContainerLayer {
            weights,
            omega,
            act_scale: scales[k] as f32,
            alpha1: bn_scale.iter().map(|&a| (a * unit) as f32).collect(),
            bias: bias.iter().map(|&b| b as f32).collect(),
            alpha2: alpha2 as f32,
            relu: k != last,
            half_select: HalfSelect::Low,
            sign_mode: SignMode::Add,
        });
    }
    let container = ModelContainer {
        input_dim: model.in_dim(),
        input_scale: scales[0] as f32,
        layers,
    };
    container.validate()?;
    Ok(container)
}

/// Test accuracy of the dequantized float model.
pub fn reference_accuracy(q: &QuantizedMlp, test: &Dataset) -> Result<f64, PipelineError> {
    evaluate(&q.dequantized_model(), test)
}

/// Runs the test set through the integer datapath and scores the argmax of
/// the output words.
pub fn simulate_accuracy(
    container: &ModelContainer,
    test: &Dataset,
    opts: SimOptions,
) -> Result<(f64, ModelRun), PipelineError> {
    let samples = test.samples.as_standard_layout();
    let run = simulate_model(
        container,
        samples.rows().into_iter().map(|r| r.to_slice().expect("standard layout")),
        opts,
    )?;
    Ok((accuracy(&run.predictions(), &test.labels), run))
}

/// Simulated accuracy under both float roundings.
pub fn rounding_accuracies(container: &ModelContainer, test: &Dataset) -> Result<[(FloatRounding, f64); 2], PipelineError> {
    let mut out = [(FloatRounding::Truncate, 0.0), (FloatRounding::Nearest, 0.0)];
    for (rounding, acc) in &mut out {
        *acc = simulate_accuracy(
            container,
            test,
            SimOptions {
                rounding: *rounding,
                record_events: false,
            },
        )?
        .0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpModel;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn percentile_rank() {
        let v = (1..=100).map(f64::from);
        assert_eq!(percentile_abs(v.clone(), 100.0), 100.0);
        assert_eq!(percentile_abs(v.clone(), 50.0), 50.0);
        assert_eq!(percentile_abs(v, 0.5), 1.0);
        assert_eq!(percentile_abs([-3.0, 2.0].into_iter(), 100.0), 3.0);
        assert_eq!(percentile_abs(std::iter::empty(), 99.0), 0.0);
    }

    fn setup(bn: bool) -> (QuantizedMlp, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = MlpModel::init(&[40, 300, 20, 5], bn, &mut rng).unwrap();
        let x = Array2::from_shape_fn((400, 40), |_| rng.random_range(0.0..1.0));
        if bn {
            model.calibrate_batchnorm(x.view()).unwrap();
        }
        let logits = model.predict(x.view()).unwrap();
        let labels = crate::nn::argmax_rows(logits.view());
        let data = Dataset::new(x, labels, 5).unwrap();
        let q = QuantizedMlp::quantize(model, 0.0).unwrap();
        (q, data)
    }

    #[test]
    fn compiled_model_tracks_the_float_reference() {
        for bn in [false, true] {
            let (q, data) = setup(bn);
            let c = compile_container(&q, data.samples.view(), &CompileConfig::default()).unwrap();
            assert_eq!(c.layers.len(), 3);
            assert!(!c.layers[2].relu && c.layers[0].relu);
            let reference = q.dequantized_model().predict(data.samples.view()).unwrap();
            let (_, run) = simulate_accuracy(&c, &data, SimOptions::default()).unwrap();
            // Simulated logits, rescaled to real units, stay close to the reference.
            let peak = reference.iter().fold(0f64, |m, v| m.max(v.abs()));
            let unit = peak / 16384.0;
            let mut worst = 0f64;
            for (row, sim) in reference.rows().into_iter().zip(&run.logits) {
                for (&r, &s) in row.iter().zip(sim) {
                    worst = worst.max((r - s as f64 * unit).abs());
                }
            }
            assert!(worst < 0.1 * peak, "bn={bn}: worst {worst} vs peak {peak}");
            let ref_acc = reference_accuracy(&q, &data).unwrap();
            let (sim_acc, _) = simulate_accuracy(&c, &data, SimOptions::default()).unwrap();
            assert!((ref_acc - sim_acc).abs() < 0.1, "bn={bn}: {ref_acc} vs {sim_acc}");
        }
    }

    #[test]
    fn csr_only_mode_is_respected() {
        let (q, data) = setup(false);
        let cfg = CompileConfig {
            mode: CompressionMode::CsrOnly,
            ..CompileConfig::default()
        };
        let c = compile_container(&q, data.samples.view(), &cfg).unwrap();
        let r = rounding_accuracies(&c, &data).unwrap();
        assert!(r.iter().all(|(_, a)| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn empty_calibration_is_rejected() {
        let (q, data) = setup(false);
        let none = data.samples.slice(s![..0, ..]);
        assert!(compile_container(&q, none, &CompileConfig::default()).is_err());
    }
}
