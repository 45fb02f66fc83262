use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn f4() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_f4"));
    c.env_remove("F4_DATA_DIR").env("RUST_LOG", "warn");
    c
}

fn write_idx_images(path: &Path, images: &[Vec<u8>], side: u32) {
    let mut b = vec![0, 0, 0x08, 0x03];
    for v in [images.len() as u32, side, side] {
        b.extend(v.to_be_bytes());
    }
    for im in images {
        b.extend(im);
    }
    std::fs::write(path, b).unwrap();
}

fn write_idx_labels(path: &Path, labels: &[u8]) {
    let mut b = vec![0, 0, 0x08, 0x01];
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend(labels);
    std::fs::write(path, b).unwrap();
}

/// 28×28 images of three classes, each a bright horizontal band at a
/// class-specific height with per-sample speckle.
fn synthetic_mnist(dir: &Path) {
    let make = |n: usize, salt: usize| {
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 3;
            let mut im = vec![0u8; 28 * 28];
            for row in (6 + 6 * c)..(10 + 6 * c) {
                for col in 4..24 {
                    im[row * 28 + col] = 200;
                }
            }
            for k in 0..40 {
                let p = (i * 131 + k * 977 + salt * 31) % (28 * 28);
                im[p] = im[p].wrapping_add(90);
            }
            images.push(im);
            labels.push(c as u8);
        }
        (images, labels)
    };
    let (tr, trl) = make(300, 1);
    let (te, tel) = make(150, 2);
    write_idx_images(&dir.join("train-images-idx3-ubyte"), &tr, 28);
    write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &trl);
    write_idx_images(&dir.join("t10k-images-idx3-ubyte"), &te, 28);
    write_idx_labels(&dir.join("t10k-labels-idx1-ubyte"), &tel);
}

struct Fixture {
    tmp: TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new(extra: &str) -> Self {
        let tmp = TempDir::new().unwrap();
        let data = tmp.path().join("mnist");
        std::fs::create_dir(&data).unwrap();
        synthetic_mnist(&data);
        let config = tmp.path().join("run.toml");
        std::fs::write(
            &config,
            format!(
                "preset = \"custom\"\ndims = [32, 3]\nout_dir = {:?}\n[data]\ndir = {:?}\n[train]\nfp_epochs = 2\nste_epochs = 1\nbatch_size = 32\nlr = 0.005\nlambda = 0.0005\n{extra}",
                tmp.path().join("runs"),
                data
            ),
        )
        .unwrap();
        Self { tmp, config }
    }

    fn run(&self, args: &[&str]) -> Output {
        f4().arg("--config").arg(&self.config).args(args).output().unwrap()
    }

    fn runs(&self) -> PathBuf {
        self.tmp.path().join("runs")
    }
}

fn ok_dir(out: &Output) -> PathBuf {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout.clone()).unwrap();
    PathBuf::from(stdout.lines().last().unwrap())
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(f4().output().unwrap().status.code(), Some(1));
    assert_eq!(f4().args(["--preset", "resnet", "train"]).output().unwrap().status.code(), Some(1));
    assert_eq!(f4().args(["frobnicate"]).output().unwrap().status.code(), Some(1));
    // No data directory configured and no environment variable.
    assert_eq!(f4().args(["train"]).output().unwrap().status.code(), Some(1));
    assert_eq!(f4().args(["--help"]).output().unwrap().status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let fx = Fixture::new("");
    let missing = fx.tmp.path().join("nope.json");
    let out = fx.run(&["quantize", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let empty = fx.tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(fx.run(&["report", empty.to_str().unwrap()]).status.code(), Some(2));
    let out = f4()
        .env("F4_DATA_DIR", fx.tmp.path().join("absent"))
        .args(["train"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_is_deterministic_and_writes_artifacts() {
    let fx = Fixture::new("");
    let a = ok_dir(&fx.run(&["train", "--seed", "3"]));
    let b = ok_dir(&fx.run(&["train", "--seed", "3"]));
    assert_ne!(a, b);
    for file in ["fp_model.json", "quantized.json", "training_log.csv", "config.toml", "summary.json"] {
        assert!(a.join(file).is_file(), "{file} missing");
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let log = std::fs::read_to_string(a.join("training_log.csv")).unwrap();
    assert!(log.starts_with("phase,epoch,loss,accuracy,entropy,sparsity"));
    assert_eq!(log.lines().count(), 4);
    let s = summary(&a);
    assert!(s["fp_accuracy"].as_f64().unwrap() > 0.9);
    assert_eq!(s["seed"], 3);
}

#[test]
fn quantize_compress_simulate_report() {
    let fx = Fixture::new("");
    let trained = ok_dir(&fx.run(&["train"]));

    let q = ok_dir(&fx.run(&["quantize", "--checkpoint", trained.to_str().unwrap(), "--lambda", "0"]));
    let s = summary(&q);
    let (fp, qa) = (s["fp_accuracy"].as_f64().unwrap(), s["quantized_accuracy"].as_f64().unwrap());
    assert!(qa >= fp - 0.01, "λ=0 quantization lost {fp} -> {qa}");
    assert!(s["entropy"].as_f64().unwrap() <= 4.0);

    let c = ok_dir(&fx.run(&["compress", "--checkpoint", trained.join("quantized.json").to_str().unwrap()]));
    let s = summary(&c);
    assert!(s["hybrid_cr"].as_f64().unwrap() >= s["csr_only_cr"].as_f64().unwrap());
    let sizes = std::fs::read_to_string(c.join("sizes.csv")).unwrap();
    assert_eq!(sizes.lines().count(), 3);
    for line in sizes.lines().skip(1) {
        assert!(["dense4", "bitmask", "csr"].iter().any(|f| line.contains(f)), "{line}");
    }
    let bytes = std::fs::read(c.join("model.f4")).unwrap();
    assert_eq!(&bytes[..4], b"F4MC");

    let sim = ok_dir(&fx.run(&[
        "simulate",
        "--model",
        c.to_str().unwrap(),
        "--reference",
        trained.to_str().unwrap(),
        "--samples",
        "150",
        "--events",
    ]));
    let s = summary(&sim);
    let (r, a) = (s["reference_accuracy"].as_f64().unwrap(), s["simulated_accuracy"].as_f64().unwrap());
    assert!((r - a).abs() <= 0.02, "reference {r}, simulated {a}");
    for file in ["cost.csv", "trace.csv", "events.jsonl"] {
        assert!(sim.join(file).is_file(), "{file} missing");
    }
    assert_eq!(std::fs::read_to_string(sim.join("events.jsonl")).unwrap().lines().count(), 300);

    // Negative cost coefficient is a usage error.
    let out = fx.run(&["simulate", "--model", c.to_str().unwrap(), "--c-add", "-1"]);
    assert_eq!(out.status.code(), Some(1));

    let out = fx.run(&["report", sim.to_str().unwrap()]);
    let report = ok_dir(&out);
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "one run gives one row");
    assert!(report.join("report.md").is_file());
}

#[test]
fn simulate_rejects_mismatched_dimensions() {
    let fx = Fixture::new("");
    let trained = ok_dir(&fx.run(&["train"]));
    let c = ok_dir(&fx.run(&["compress", "--checkpoint", trained.to_str().unwrap()]));
    // Same data, cropped: 400 features against a 784-input model.
    let cropped = fx.tmp.path().join("cropped.toml");
    let text = std::fs::read_to_string(&fx.config).unwrap().replace("[data]\n", "[data]\ncrop = 20\n");
    std::fs::write(&cropped, text).unwrap();
    let out = f4()
        .arg("--config")
        .arg(&cropped)
        .args(["simulate", "--model", c.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_and_sweep_report() {
    let fx = Fixture::new("");
    for lambda in ["0", "0.002", "0.02"] {
        ok_dir(&fx.run(&["run", "--lambda", lambda, "--samples", "60"]));
    }
    let report = ok_dir(&fx.run(&["report", fx.runs().to_str().unwrap()]));
    let md = std::fs::read_to_string(report.join("report.md")).unwrap();
    assert!(md.contains("## Trend across λ"), "{md}");
    assert!(md.contains("entropy non-increasing in λ: yes"), "{md}");
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

/// One full-precision epoch of LeNet-300-100 on real MNIST, when present.
#[test]
fn lenet_one_epoch_on_mnist() {
    let root = std::env::var_os("F4_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    if !root.join("mnist/train-images-idx3-ubyte").is_file() {
        eprintln!("skipping: no MNIST under {}", root.display());
        return;
    }
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nfp_epochs = 1\nste_epochs = 0\n").unwrap();
    let out = f4()
        .env("F4_DATA_DIR", &root)
        .arg("--config")
        .arg(&cfg)
        .args(["--preset", "lenet-300-100", "--out", tmp.path().to_str().unwrap(), "train"])
        .output()
        .unwrap();
    let dir = ok_dir(&out);
    let acc = summary(&dir)["fp_accuracy"].as_f64().unwrap();
    assert!(acc > 0.9, "accuracy after one epoch: {acc}");
}
