use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One evaluation point of a sequential-task run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRecord {
    pub task_index: usize,
    /// Optimizer steps taken on the current task when the metrics were read.
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Wall-clock time since the run started. Not comparable across machines
    /// and excluded from determinism checks.
    pub wall_ms: u64,
    /// Set on the record at which the run stopped because a value went
    /// non-finite.
    pub diverged: bool,
}

impl CurveRecord {
    /// Bitwise equality of everything but `wall_ms`.
    pub fn same_metrics(&self, other: &CurveRecord) -> bool {
        self.to_bits() == other.to_bits()
    }

    fn to_bits(self) -> [u64; 7] {
        [
            self.task_index as u64,
            self.step as u64,
            self.train_loss.to_bits(),
            self.train_acc.to_bits(),
            self.val_loss.to_bits(),
            self.val_acc.to_bits(),
            self.diverged as u64,
        ]
    }
}

pub const CURVE_HEADER: &str = "task_index,step,train_loss,train_acc,val_loss,val_acc,wall_ms,diverged";

/// Renders a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn curve_csv(records: &[CurveRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.task_index,
            r.step,
            fmt_f64(r.train_loss),
            fmt_f64(r.train_acc),
            fmt_f64(r.val_loss),
            fmt_f64(r.val_acc),
            r.wall_ms,
            r.diverged as u8
        );
    }
    out
}

/// Writes `records` as CSV: a header row, then one LF-terminated line each.
pub fn emit_csv(records: &[CurveRecord], path: &Path) -> Result<()> {
    std::fs::write(path, curve_csv(records)).map_err(|e| Error::io(path, e))
}

/// Parses the output of [`curve_csv`]. `origin` only labels errors.
pub fn parse_curve_csv(text: &str, origin: &Path) -> Result<Vec<CurveRecord>> {
    let err = |line: usize, msg: String| Error::parse(origin, format!("line {line}: {msg}"));
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h == CURVE_HEADER => {}
        _ => return Err(err(1, "missing or wrong header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            if i + 1 == text.split('\n').count() {
                break;
            }
            return Err(err(i + 1, "empty line".into()));
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err(i + 1, format!("expected 8 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| err(i + 1, format!("{s:?}: {e}")));
        let float = |s: &str| s.parse::<f64>().map_err(|e| err(i + 1, format!("{s:?}: {e}")));
        let diverged = match f[7] {
            "0" => false,
            "1" => true,
            other => return Err(err(i + 1, format!("diverged flag {other:?}"))),
        };
        out.push(CurveRecord {
            task_index: int(f[0])? as usize,
            step: int(f[1])? as usize,
            train_loss: float(f[2])?,
            train_acc: float(f[3])?,
            val_loss: float(f[4])?,
            val_acc: float(f[5])?,
            wall_ms: int(f[6])?,
            diverged,
        });
    }
    Ok(out)
}
