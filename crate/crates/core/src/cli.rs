//! Subcommand implementations behind the `crsfl` binary.
//!
//! Each command writes human-readable output to the given writers and
//! returns a process exit code: [`EXIT_OK`], [`EXIT_REFUSED`] for rejected
//! configurations and privacy requests, [`EXIT_FAILED`] for runtime failures.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, SamplerSpec};
use crate::engine;
use crate::error::{EngineError, MetricsError};
use crate::metrics::{self, RoundMetrics};
use crate::privacy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_REFUSED: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

/// Format with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

/// Final accuracy, OT in bytes and Accuracy/OT per MiB of a history.
pub fn summarize(history: &[RoundMetrics]) -> (f64, f64, f64) {
    let acc = metrics::final_accuracy(history).unwrap_or(0.0);
    let ot = metrics::overall_transmission(history);
    let per = metrics::accuracy_per_ot(acc, ot).unwrap_or(0.0);
    (acc, ot, per)
}

fn exit_for(e: &EngineError) -> i32 {
    if e.is_refusal() {
        EXIT_REFUSED
    } else {
        EXIT_FAILED
    }
}

/// Write the CSV atomically: the target appears only once complete.
fn write_csv_atomic(history: &[RoundMetrics], path: &Path) -> Result<(), MetricsError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    metrics::emit_csv(history, &tmp)?;
    std::fs::rename(&tmp, path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Run one experiment and write its CSV to `out` (or the config's `output`).
pub fn cmd_run(config_path: &Path, out: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cfg = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", config_path.display());
            return EXIT_REFUSED;
        }
    };
    let Some(out) = out.map(Path::to_path_buf).or_else(|| cfg.output.clone()) else {
        let _ = writeln!(stderr, "error: no output path (pass --out or set `output`)");
        return EXIT_REFUSED;
    };
    let history = match engine::run_experiment(&cfg) {
        Ok(h) => h,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_for(&e);
        }
    };
    if let Err(e) = write_csv_atomic(&history, &out) {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_FAILED;
    }
    let (acc, ot, per) = summarize(&history);
    let _ = writeln!(
        stdout,
        "final_accuracy={} ot_bytes={} accuracy_per_ot_mib={} csv={}",
        sig6(acc),
        sig6(ot),
        sig6(per),
        out.display()
    );
    EXIT_OK
}

/// Privacy report for one round of CRS.
pub fn privacy_report(epsilon: f64, p: Option<f64>, k: Option<usize>, d: usize) -> (String, i32) {
    let mut s = String::new();
    let p_max = match privacy::max_sampling_probability(epsilon) {
        Ok(v) => v,
        Err(e) => return (format!("refused: {e}\n"), EXIT_REFUSED),
    };
    if d == 0 {
        return ("refused: d must be at least 1\n".into(), EXIT_REFUSED);
    }
    writeln!(s, "epsilon = {}", sig6(epsilon)).unwrap();
    writeln!(s, "d = {d}").unwrap();
    writeln!(s, "p_max = {}", sig6(p_max)).unwrap();
    let Some(p) = p else {
        return (s, EXIT_OK);
    };
    writeln!(s, "p = {}", sig6(p)).unwrap();
    let k_max = match privacy::max_sampling_size(epsilon, p, d) {
        Ok(k) => k,
        Err(e) => {
            writeln!(s, "status = refused").unwrap();
            writeln!(s, "reason = {e}").unwrap();
            return (s, EXIT_REFUSED);
        }
    };
    writeln!(s, "K_max = {k_max}").unwrap();
    let Some(k) = k else {
        return (s, EXIT_OK);
    };
    writeln!(s, "K = {k}").unwrap();
    let cert = privacy::issue_certificate(epsilon, p, k, d);
    if let Some(r) = &cert.refusal {
        writeln!(s, "status = refused").unwrap();
        writeln!(s, "reason = {r}").unwrap();
        return (s, EXIT_REFUSED);
    }
    writeln!(s, "log_delta_bound = {}", sig6(cert.log_delta_bound)).unwrap();
    writeln!(s, "delta_bound = {}", sig6(cert.delta_bound)).unwrap();
    writeln!(s, "one_over_d = {}", sig6(1.0 / d as f64)).unwrap();
    writeln!(
        s,
        "delta_vs_one_over_d = {}",
        if cert.warning { "WARNING: delta >= 1/d" } else { "delta < 1/d" }
    )
    .unwrap();
    writeln!(s, "status = issued").unwrap();
    (s, EXIT_OK)
}

pub fn cmd_privacy(epsilon: f64, p: Option<f64>, k: Option<usize>, d: usize, stdout: &mut dyn Write) -> i32 {
    let (text, code) = privacy_report(epsilon, p, k, d);
    let _ = stdout.write_all(text.as_bytes());
    code
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKey {
    /// Sampling size: an integer `K` or a percentage of `d` such as `0.7%`.
    K,
    Epsilon,
    Clients,
}

impl std::str::FromStr for SweepKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "K" | "k" => Ok(SweepKey::K),
            "epsilon" => Ok(SweepKey::Epsilon),
            "clients" => Ok(SweepKey::Clients),
            other => Err(format!("cannot sweep `{other}` (expected K, epsilon or clients)")),
        }
    }
}

/// The config for one sweep value.
pub fn apply_sweep_value(base: &ExperimentConfig, key: SweepKey, value: &str) -> Result<ExperimentConfig, String> {
    let v = value.trim();
    let r = match key {
        SweepKey::K => {
            if let Some(pct) = v.strip_suffix('%') {
                let pct = pct.trim();
                pct.parse::<f64>().map_err(|_| format!("bad percentage `{v}`"))?;
                // Shift the decimal exponent so `0.7%` parses to exactly 0.007.
                let ratio: f64 = format!("{pct}e-2").parse().map_err(|_| format!("bad percentage `{v}`"))?;
                base.with_override("sampling_ratio", &ratio.to_string())
            } else {
                base.with_override("k", v)
            }
        }
        SweepKey::Epsilon => base.with_override("epsilon", v),
        SweepKey::Clients => base.with_override("clients", v),
    };
    r.map_err(|e| e.to_string())
}

fn file_tag(value: &str) -> String {
    value
        .trim()
        .replace('%', "pct")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

pub const SUMMARY_HEADER: &str = "value,status,final_accuracy,ot_bytes,acc_per_ot";

/// Run one experiment per value, writing `run_<key>_<value>.csv` files and a
/// `summary.csv` to `out_dir`. Failed runs are recorded and the sweep goes on.
pub fn cmd_sweep(
    config_path: &Path,
    key: SweepKey,
    values: &[String],
    out_dir: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let values: Vec<&String> = values.iter().filter(|v| !v.trim().is_empty()).collect();
    if values.is_empty() {
        let _ = writeln!(stderr, "error: empty value list");
        return EXIT_REFUSED;
    }
    let base = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", config_path.display());
            return EXIT_REFUSED;
        }
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        let _ = writeln!(stderr, "error: {}: {e}", out_dir.display());
        return EXIT_FAILED;
    }
    let key_name = match key {
        SweepKey::K => "K",
        SweepKey::Epsilon => "epsilon",
        SweepKey::Clients => "clients",
    };
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut failures = 0;
    for value in values {
        let outcome = apply_sweep_value(&base, key, value).and_then(|cfg| {
            let h = engine::run_experiment(&cfg).map_err(|e| e.to_string())?;
            let path = out_dir.join(format!("run_{key_name}_{}.csv", file_tag(value)));
            write_csv_atomic(&h, &path).map_err(|e| e.to_string())?;
            Ok(h)
        });
        match outcome {
            Ok(h) => {
                let (acc, ot, per) = summarize(&h);
                writeln!(summary, "{},ok,{acc},{ot},{per}", value.trim()).unwrap();
                let _ = writeln!(
                    stdout,
                    "{key_name}={} final_accuracy={} ot_bytes={} accuracy_per_ot_mib={}",
                    value.trim(),
                    sig6(acc),
                    sig6(ot),
                    sig6(per)
                );
            }
            Err(msg) => {
                failures += 1;
                let clean = msg.replace([',', '\n'], ";");
                writeln!(summary, "{},error: {clean},,,", value.trim()).unwrap();
                let _ = writeln!(stderr, "{key_name}={}: {msg}", value.trim());
            }
        }
    }
    if let Err(e) = std::fs::write(out_dir.join("summary.csv"), summary) {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_FAILED;
    }
    if failures > 0 {
        EXIT_FAILED
    } else {
        EXIT_OK
    }
}

/// Base config text for examples and tests: a small synthetic task.
pub fn example_config(sampler: &SamplerSpec) -> String {
    let mut c = ExperimentConfig::synthetic(1, 20, 4, crate::model::ModelKind::LogReg, sampler.clone());
    if let crate::config::DatasetSpec::Synthetic { samples, test_samples, .. } = &mut c.dataset {
        *samples = 800;
        *test_samples = 200;
    }
    c.to_text()
}
