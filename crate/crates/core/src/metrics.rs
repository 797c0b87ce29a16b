//! Round metrics, overall transmission, Accuracy/OT and CSV output.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::data::Dataset;
use crate::error::MetricsError;
use crate::model::{log_sum_exp, Model};

/// Accuracy/OT is reported per MiB.
pub const BYTES_PER_MIB: f64 = 1_048_576.0;

pub const CSV_HEADER: &str =
    "round,train_loss,eval_accuracy,eval_ce_loss,download_bytes,upload_bytes,ot_cum,acc_per_ot";

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Mean client training loss this round.
    pub train_loss: f64,
    pub eval_accuracy: Option<f64>,
    pub eval_ce_loss: Option<f64>,
    /// Bytes sent to all clients this round.
    pub download_bytes_total: u64,
    /// Bytes received from all clients this round.
    pub upload_bytes_total: u64,
    pub m: usize,
}

/// `(Σ download + Σ upload) / m`: bytes per client over the whole history.
pub fn overall_transmission(history: &[RoundMetrics]) -> f64 {
    let Some(first) = history.first() else {
        return 0.0;
    };
    debug_assert!(history.iter().all(|r| r.m == first.m));
    let total: u64 = history
        .iter()
        .map(|r| r.download_bytes_total + r.upload_bytes_total)
        .sum();
    total as f64 / first.m as f64
}

/// Accuracy per MiB of overall transmission.
pub fn accuracy_per_ot(final_accuracy: f64, ot_bytes: f64) -> Result<f64, MetricsError> {
    // Also rejects NaN.
    if ot_bytes.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(MetricsError::NonPositiveTransmission(ot_bytes));
    }
    Ok(final_accuracy / (ot_bytes / BYTES_PER_MIB))
}

/// Accuracy (argmax, ties to the lowest class) and mean cross-entropy.
pub fn evaluate(model: &Model, test: &Dataset) -> (f64, f64) {
    if test.is_empty() {
        return (0.0, 0.0);
    }
    let mut correct = 0usize;
    let mut ce = 0.0;
    for i in 0..test.len() {
        let z = model.arch.logits(&model.weights, test.row(i));
        let y = test.label(i);
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        correct += usize::from(best == y);
        ce += log_sum_exp(&z) - z[y];
    }
    let n = test.len() as f64;
    (correct as f64 / n, ce / n)
}

/// Latest evaluated accuracy in a history.
pub fn final_accuracy(history: &[RoundMetrics]) -> Option<f64> {
    history.iter().rev().find_map(|r| r.eval_accuracy)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text for a history. `ot_cum` is the overall transmission up to and
/// including each round; `acc_per_ot` is filled on evaluated rounds.
pub fn render_csv(history: &[RoundMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let mut cum: u64 = 0;
    for r in history {
        cum += r.download_bytes_total + r.upload_bytes_total;
        let ot = cum as f64 / r.m as f64;
        let acc_ot = r
            .eval_accuracy
            .and_then(|a| accuracy_per_ot(a, ot).ok());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            r.train_loss,
            opt(r.eval_accuracy),
            opt(r.eval_ce_loss),
            r.download_bytes_total,
            r.upload_bytes_total,
            ot,
            opt(acc_ot)
        )
        .unwrap();
    }
    out
}

pub fn emit_csv(history: &[RoundMetrics], path: &Path) -> Result<(), MetricsError> {
    let io = |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io)?;
    file.write_all(render_csv(history).as_bytes()).map_err(io)?;
    file.flush().map_err(io)
}

/// Parse a file written by [`emit_csv`]. The client count is not stored and
/// is supplied by the caller.
pub fn read_csv(path: &Path, m: usize) -> Result<Vec<RoundMetrics>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let err = |line: usize, message: String| MetricsError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(err(1, "missing or unexpected header".into())),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err(n + 1, format!("expected 8 fields, found {}", f.len())));
        }
        let num = |s: &str| -> Result<f64, MetricsError> {
            s.parse().map_err(|_| err(n + 1, format!("bad number `{s}`")))
        };
        let opt_num = |s: &str| -> Result<Option<f64>, MetricsError> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let int = |s: &str| -> Result<u64, MetricsError> {
            s.parse().map_err(|_| err(n + 1, format!("bad integer `{s}`")))
        };
        out.push(RoundMetrics {
            round: int(f[0])? as usize,
            train_loss: num(f[1])?,
            eval_accuracy: opt_num(f[2])?,
            eval_ce_loss: opt_num(f[3])?,
            download_bytes_total: int(f[4])?,
            upload_bytes_total: int(f[5])?,
            m,
        });
    }
    Ok(out)
}
