use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const SUMMARY_FILE: &str = "summary.json";

/// Headline numbers of one run directory. Fields a command does not produce
/// stay empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Directory name, filled in when summaries are collected.
    #[serde(default)]
    pub run: Option<String>,
    pub command: String,
    pub preset: String,
    pub lambda: f64,
    pub seed: u64,
    pub fp_accuracy: Option<f64>,
    pub quantized_accuracy: Option<f64>,
    /// Mean bits per weight over all layers.
    pub entropy: Option<f64>,
    pub sparsity: Option<f64>,
    pub hybrid_cr: Option<f64>,
    pub csr_only_cr: Option<f64>,
    pub samples: Option<usize>,
    pub reference_accuracy: Option<f64>,
    pub simulated_accuracy: Option<f64>,
    /// Simulated accuracy with round-to-nearest float units.
    pub simulated_accuracy_nearest: Option<f64>,
    /// Energy proxy per sample.
    pub energy_proxy: Option<f64>,
}

impl RunSummary {
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(SUMMARY_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Summaries in `dir` itself and its immediate subdirectories, ordered by
/// (λ, seed, path).
pub fn collect(dir: &Path) -> anyhow::Result<Vec<(PathBuf, RunSummary)>> {
    let mut found = Vec::new();
    let mut candidates = vec![dir.to_path_buf()];
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            candidates.push(entry.path());
        }
    }
    for d in candidates {
        let path = d.join(SUMMARY_FILE);
        if path.is_file() {
            let text = std::fs::read_to_string(&path)?;
            let mut s: RunSummary = serde_json::from_str(&text)?;
            s.run = d.file_name().map(|n| n.to_string_lossy().into_owned());
            found.push((d, s));
        }
    }
    found.sort_by(|a, b| {
        a.1.lambda
            .total_cmp(&b.1.lambda)
            .then(a.1.seed.cmp(&b.1.seed))
            .then(a.0.cmp(&b.0))
    });
    Ok(found)
}

/// Per-λ means of entropy and energy proxy over the runs that have both.
pub fn lambda_means(runs: &[RunSummary]) -> Vec<(f64, f64, f64, usize)> {
    let mut out: Vec<(f64, f64, f64, usize)> = Vec::new();
    for r in runs {
        let (Some(h), Some(e)) = (r.entropy, r.energy_proxy) else { continue };
        match out.last_mut() {
            Some(last) if last.0 == r.lambda => {
                last.1 += h;
                last.2 += e;
                last.3 += 1;
            }
            _ => out.push((r.lambda, h, e, 1)),
        }
    }
    for m in &mut out {
        m.1 /= m.3 as f64;
        m.2 /= m.3 as f64;
    }
    out
}

/// Spearman rank correlation; ties get average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        vx += (a - mean).powi(2);
        vy += (b - mean).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |v| format!("{v:.digits$}"))
}

/// Markdown table of all runs plus trend checks across λ.
pub fn markdown(runs: &[(PathBuf, RunSummary)]) -> String {
    let mut md = String::from("# Run summary\n\n");
    md.push_str("| run | preset | λ | seed | accuracy | simulated | CR hybrid | CR csr-only | entropy | sparsity | energy/sample |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for (path, r) in runs {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let _ = writeln!(
            md,
            "| {name} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.preset,
            r.lambda,
            r.seed,
            cell(r.quantized_accuracy.or(r.fp_accuracy), 4),
            cell(r.simulated_accuracy, 4),
            cell(r.hybrid_cr, 2),
            cell(r.csr_only_cr, 2),
            cell(r.entropy, 3),
            cell(r.sparsity, 4),
            cell(r.energy_proxy, 0),
        );
    }
    let summaries: Vec<RunSummary> = runs.iter().map(|(_, r)| r.clone()).collect();
    let means = lambda_means(&summaries);
    if means.len() >= 2 {
        md.push_str("\n## Trend across λ\n\n| λ | runs | mean entropy | mean energy/sample |\n|---|---|---|---|\n");
        for (l, h, e, n) in &means {
            let _ = writeln!(md, "| {l} | {n} | {h:.4} | {e:.0} |");
        }
        let entropy_falls = means.windows(2).all(|w| w[1].1 <= w[0].1);
        let mut by_entropy = means.clone();
        by_entropy.sort_by(|a, b| a.1.total_cmp(&b.1));
        let proxy_monotone = by_entropy.windows(2).all(|w| w[1].2 > w[0].2);
        let h: Vec<f64> = means.iter().map(|m| m.1).collect();
        let e: Vec<f64> = means.iter().map(|m| m.2).collect();
        let _ = writeln!(md, "\n- entropy non-increasing in λ: {}", yes_no(entropy_falls));
        let _ = writeln!(md, "- energy strictly increasing in entropy: {}", yes_no(proxy_monotone));
        let _ = writeln!(md, "- Spearman(entropy, energy): {}", cell(spearman(&h, &e), 4));
    }
    md
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        // Oracle: ranks [1,2,3,4] vs [2,1,4,3] give 1 − 6·4/(4·15) = 0.6.
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
    }

    #[test]
    fn means_group_by_lambda() {
        let run = |lambda, h, e| RunSummary {
            lambda,
            entropy: Some(h),
            energy_proxy: Some(e),
            ..RunSummary::default()
        };
        let m = lambda_means(&[run(0.0, 2.0, 10.0), run(0.0, 4.0, 20.0), run(1.0, 1.0, 5.0)]);
        assert_eq!(m, vec![(0.0, 3.0, 15.0, 2), (1.0, 1.0, 5.0, 1)]);
        let md = markdown(&[
            (PathBuf::from("a"), run(0.0, 3.0, 15.0)),
            (PathBuf::from("b"), run(1.0, 1.0, 5.0)),
        ]);
        assert!(md.contains("energy strictly increasing in entropy: yes"));
    }
}
