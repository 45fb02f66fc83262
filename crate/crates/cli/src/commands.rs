use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use f4_core::codec::{
    compression_ratio, layer_size_row, read_model, write_model, write_size_report, CompressionMode, ModelContainer,
};
use f4_core::cost::{tally_trace, CostReport};
use f4_core::datapath::{write_trace_csv, write_trace_jsonl, FloatRounding, SimOptions};
use f4_core::nn::{Dataset, MlpModel};
use f4_core::pipeline::{
    compile_container, io_err, model_accuracy, quantize_model, reference_accuracy, simulate_accuracy,
    train_pipeline, write_training_log, PipelineError, RunConfig,
};
use f4_core::quant::QuantizedMlp;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::summary::{self, RunSummary};
use crate::{CliError, Common, CostFlags};

const FP_CHECKPOINT: &str = "fp_model.json";
const QUANTIZED_CHECKPOINT: &str = "quantized.json";
const CONTAINER: &str = "model.f4";

/// Config file (or defaults) with command-line overrides applied.
pub fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = common.preset {
        cfg.preset = p;
    }
    if let Some(l) = common.lambda {
        cfg.train.lambda = l;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_cost_flags(cfg: &mut RunConfig, flags: &CostFlags) -> anyhow::Result<()> {
    let c = &mut cfg.cost;
    for (slot, flag) in [
        (&mut c.c_add, flags.c_add),
        (&mut c.c_mul, flags.c_mul),
        (&mut c.c_fifo, flags.c_fifo),
        (&mut c.c_offchip, flags.c_offchip),
        (&mut c.c_onchip, flags.c_onchip),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    cfg.validate()?;
    Ok(())
}

/// Creates `<out>/<timestamp>-<command>`, suffixed when the name is taken,
/// and records the resolved config in it.
fn make_run_dir(cfg: &RunConfig, command: &str) -> anyhow::Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = cfg.out_dir.join(format!("{stamp}-{command}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = PathBuf::from(format!("{}-{n}", base.display()));
    }
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(io_err(&dir))?;
    log::info!("writing to {}", dir.display());
    Ok(dir)
}

/// `path` itself, or `path/name` when `path` is a directory.
fn resolve(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    serde_json::to_writer(BufWriter::new(f), value).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let f = File::open(path).map_err(io_err(path))?;
    let value = serde_json::from_reader(std::io::BufReader::new(f))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(value)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn base_summary(cfg: &RunConfig, command: &str) -> RunSummary {
    RunSummary {
        command: command.into(),
        preset: cfg.preset.name().into(),
        lambda: cfg.train.lambda,
        seed: cfg.train.seed,
        ..RunSummary::default()
    }
}

fn code_stats(q: &QuantizedMlp, s: &mut RunSummary) {
    let codes: Vec<_> = q.layers.iter().map(|l| &l.codes).collect();
    s.entropy = Some(q.entropy());
    s.sparsity = Some(q.sparsity());
    s.hybrid_cr = Some(compression_ratio(codes.iter().copied(), CompressionMode::Hybrid));
    s.csr_only_cr = Some(compression_ratio(codes.iter().copied(), CompressionMode::CsrOnly));
}

fn train_and_save(cfg: &RunConfig, dir: &Path, train: &Dataset, test: &Dataset, s: &mut RunSummary) -> anyhow::Result<QuantizedMlp> {
    let outcome = train_pipeline(cfg, train, test, |_| {})?;
    write_json(&dir.join(FP_CHECKPOINT), &outcome.full_precision)?;
    write_json(&dir.join(QUANTIZED_CHECKPOINT), &outcome.quantized)?;
    write_training_log(create(&dir.join("training_log.csv"))?, &outcome.log)?;
    s.fp_accuracy = Some(outcome.fp_accuracy);
    s.quantized_accuracy = Some(outcome.quantized_accuracy);
    code_stats(&outcome.quantized, s);
    log::info!(
        "float accuracy {:.4}, quantized accuracy {:.4}, entropy {:.3} bits, hybrid CR {:.2}",
        outcome.fp_accuracy,
        outcome.quantized_accuracy,
        outcome.quantized.entropy(),
        s.hybrid_cr.unwrap_or(0.0)
    );
    Ok(outcome.quantized)
}

pub fn train(common: &Common) -> anyhow::Result<PathBuf> {
    let cfg = load_config(common)?;
    let (train, test) = cfg.data.load()?;
    let dir = make_run_dir(&cfg, "train")?;
    let mut s = base_summary(&cfg, "train");
    train_and_save(&cfg, &dir, &train, &test, &mut s)?;
    s.write(&dir)?;
    Ok(dir)
}

pub fn quantize(common: &Common, checkpoint: &Path) -> anyhow::Result<PathBuf> {
    let cfg = load_config(common)?;
    let model: MlpModel = read_json(&resolve(checkpoint, FP_CHECKPOINT))?;
    let (_, test) = cfg.data.load()?;
    let dir = make_run_dir(&cfg, "quantize")?;
    let mut s = base_summary(&cfg, "quantize");
    s.fp_accuracy = Some(model_accuracy(&model, test.samples.view(), &test.labels)?);
    let q = quantize_model(model, cfg.train.lambda)?;
    s.quantized_accuracy = Some(reference_accuracy(&q, &test)?);
    code_stats(&q, &mut s);
    log::info!(
        "accuracy {:.4} -> {:.4}, entropy {:.3} bits",
        s.fp_accuracy.unwrap_or(0.0),
        s.quantized_accuracy.unwrap_or(0.0),
        q.entropy()
    );
    write_json(&dir.join(QUANTIZED_CHECKPOINT), &q)?;
    s.write(&dir)?;
    Ok(dir)
}

fn compress_into(
    cfg: &RunConfig,
    dir: &Path,
    q: &QuantizedMlp,
    train: &Dataset,
    s: &mut RunSummary,
) -> anyhow::Result<ModelContainer> {
    let container = compile_container(q, train.samples.view(), &cfg.compile)?;
    let path = dir.join(CONTAINER);
    write_model(&container, &path).map_err(PipelineError::from)?;
    if read_model(&path).map_err(PipelineError::from)? != container {
        anyhow::bail!("container at {} does not read back identically", path.display());
    }
    let rows: Vec<_> = q
        .layers
        .iter()
        .zip(&container.layers)
        .enumerate()
        .map(|(k, (l, c))| layer_size_row(k, &l.codes, c.param_bits()))
        .collect();
    write_size_report(create(&dir.join("sizes.csv"))?, &rows)?;
    for r in &rows {
        log::info!(
            "layer {}: {}x{} {} {} bits, sparsity {:.4}",
            r.layer,
            r.rows,
            r.cols,
            r.format,
            r.bits,
            r.sparsity
        );
    }
    code_stats(q, s);
    log::info!(
        "compression ratio: hybrid {:.2}, csr-only {:.2}",
        s.hybrid_cr.unwrap_or(0.0),
        s.csr_only_cr.unwrap_or(0.0)
    );
    Ok(container)
}

pub fn compress(common: &Common, checkpoint: &Path, mode: CompressionMode) -> anyhow::Result<PathBuf> {
    let mut cfg = load_config(common)?;
    cfg.compile.mode = mode;
    let q: QuantizedMlp = read_json(&resolve(checkpoint, QUANTIZED_CHECKPOINT))?;
    let (train, _) = cfg.data.load()?;
    let dir = make_run_dir(&cfg, "compress")?;
    let mut s = base_summary(&cfg, "compress");
    compress_into(&cfg, &dir, &q, &train, &mut s)?;
    s.write(&dir)?;
    Ok(dir)
}

fn simulate_into(
    cfg: &RunConfig,
    dir: &Path,
    container: &ModelContainer,
    reference: Option<&QuantizedMlp>,
    test: &Dataset,
    events: bool,
    s: &mut RunSummary,
) -> anyhow::Result<CostReport> {
    let opts = SimOptions {
        rounding: FloatRounding::Truncate,
        record_events: events,
    };
    let (accuracy, run) = simulate_accuracy(container, test, opts)?;
    let (nearest, _) = simulate_accuracy(
        container,
        test,
        SimOptions {
            rounding: FloatRounding::Nearest,
            record_events: false,
        },
    )?;
    let report = tally_trace(&run.per_layer, container, &cfg.cost).map_err(PipelineError::from)?;
    report.write_csv(create(&dir.join("cost.csv"))?)?;
    write_trace_csv(create(&dir.join("trace.csv"))?, &run.per_layer)?;
    if events {
        write_trace_jsonl(create(&dir.join("events.jsonl"))?, &run.events)?;
    }
    println!("{report}");
    s.samples = Some(test.len());
    s.simulated_accuracy = Some(accuracy);
    s.simulated_accuracy_nearest = Some(nearest);
    s.energy_proxy = Some(report.total.energy_proxy / test.len().max(1) as f64);
    if let Some(q) = reference {
        s.reference_accuracy = Some(reference_accuracy(q, test)?);
    }
    log::info!(
        "simulated accuracy {accuracy:.4} (round-to-nearest {nearest:.4}), reference {}, input clamps {}",
        s.reference_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
        run.input_clamps
    );
    Ok(report)
}

pub fn simulate(
    common: &Common,
    model: &Path,
    reference: Option<&Path>,
    samples: usize,
    events: bool,
    cost: &CostFlags,
) -> anyhow::Result<PathBuf> {
    let mut cfg = load_config(common)?;
    apply_cost_flags(&mut cfg, cost)?;
    let path = resolve(model, CONTAINER);
    let container = read_model(&path)
        .map_err(PipelineError::from)
        .with_context(|| format!("reading {}", path.display()))?;
    let q: Option<QuantizedMlp> = reference.map(|r| read_json(&resolve(r, QUANTIZED_CHECKPOINT))).transpose()?;
    let (_, test) = cfg.data.load()?;
    let test = test.take(samples);
    let dir = make_run_dir(&cfg, "simulate")?;
    let mut s = base_summary(&cfg, "simulate");
    simulate_into(&cfg, &dir, &container, q.as_ref(), &test, events, &mut s)?;
    s.write(&dir)?;
    Ok(dir)
}

pub fn run(common: &Common, samples: usize, cost: &CostFlags) -> anyhow::Result<PathBuf> {
    let mut cfg = load_config(common)?;
    apply_cost_flags(&mut cfg, cost)?;
    let (train, test) = cfg.data.load()?;
    let dir = make_run_dir(&cfg, "run")?;
    let mut s = base_summary(&cfg, "run");
    let q = train_and_save(&cfg, &dir, &train, &test, &mut s)?;
    let container = compress_into(&cfg, &dir, &q, &train, &mut s)?;
    simulate_into(&cfg, &dir, &container, Some(&q), &test.take(samples), false, &mut s)?;
    s.write(&dir)?;
    Ok(dir)
}

pub fn report(common: &Common, dir: &Path) -> anyhow::Result<PathBuf> {
    if !dir.is_dir() {
        return Err(CliError::Data(format!("{} is not a directory", dir.display())).into());
    }
    let runs = summary::collect(dir)?;
    if runs.is_empty() {
        return Err(CliError::Data(format!("no runs found under {}", dir.display())).into());
    }
    let mut cfg = RunConfig {
        out_dir: dir.to_path_buf(),
        ..RunConfig::default()
    };
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    let out = make_run_dir(&cfg, "report")?;
    let mut w = csv::Writer::from_writer(create(&out.join("report.csv"))?);
    for (_, r) in &runs {
        w.serialize(r)?;
    }
    w.flush()?;
    let md = summary::markdown(&runs);
    std::fs::write(out.join("report.md"), &md).map_err(io_err(&out))?;
    print!("{md}");
    Ok(out)
}
