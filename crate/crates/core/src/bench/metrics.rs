use super::curve::CurveRecord;
use crate::error::{Error, Result};

/// Result of [`convergence_epoch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Convergence {
    /// 1-indexed epoch.
    pub epoch: usize,
    /// Every validation accuracy was zero; `epoch` is then the last one.
    pub degenerate: bool,
}

/// Validation accuracy at the end of each epoch, where an epoch is one task's
/// worth of steps: the last record of every task index, in order.
pub fn epoch_val_acc(curve: &[CurveRecord]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut last_task = None;
    for r in curve {
        if last_task == Some(r.task_index) {
            *out.last_mut().expect("pushed on first sight") = r.val_acc;
        } else {
            out.push(r.val_acc);
            last_task = Some(r.task_index);
        }
    }
    out
}

/// First epoch whose validation accuracy reaches `fraction` of the run's
/// best, scanning the per-epoch sequence from [`epoch_val_acc`].
pub fn convergence_epoch(curve: &[CurveRecord], fraction: f64) -> Result<Convergence> {
    convergence_of(&epoch_val_acc(curve), fraction)
}

/// [`convergence_epoch`] over a bare accuracy sequence.
pub fn convergence_of(acc: &[f64], fraction: f64) -> Result<Convergence> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::contract(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if acc.is_empty() {
        return Err(Error::contract("convergence needs at least one evaluation"));
    }
    let best = acc.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max);
    if best <= 0.0 {
        return Ok(Convergence {
            epoch: acc.len(),
            degenerate: true,
        });
    }
    let threshold = fraction * best;
    let epoch = acc
        .iter()
        .position(|&a| a >= threshold)
        .expect("the maximum itself qualifies")
        + 1;
    Ok(Convergence {
        epoch,
        degenerate: false,
    })
}

/// Mean end-of-epoch validation accuracy, in percent.
pub fn validation_accuracy_pct(curve: &[CurveRecord]) -> f64 {
    let acc = epoch_val_acc(curve);
    if acc.is_empty() {
        return 0.0;
    }
    100.0 * acc.iter().sum::<f64>() / acc.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let c = convergence_of(&[0.5, 0.7, 0.79, 0.8, 0.8], 0.99).unwrap();
        assert_eq!(c, Convergence { epoch: 4, degenerate: false });
        assert_eq!(convergence_of(&[0.9, 0.9, 0.9], 0.99).unwrap().epoch, 1);
        assert_eq!(convergence_of(&[0.1, 0.4, 0.6, 0.9], 1.0).unwrap().epoch, 4);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let c = convergence_of(&[0.0, 0.0, 0.0], 0.99).unwrap();
        assert_eq!(c, Convergence { epoch: 3, degenerate: true });
    }

    #[test]
    fn bad_arguments() {
        assert!(convergence_of(&[], 0.5).is_err());
        assert!(convergence_of(&[0.5], 0.0).is_err());
        assert!(convergence_of(&[0.5], 1.5).is_err());
    }

    #[test]
    fn epochs_take_the_last_record_of_each_task() {
        let rec = |task_index, val_acc| CurveRecord {
            task_index,
            step: 0,
            train_loss: 0.0,
            train_acc: 0.0,
            val_loss: 0.0,
            val_acc,
            wall_ms: 0,
            diverged: false,
        };
        let curve = [rec(0, 0.1), rec(0, 0.3), rec(1, 0.2), rec(1, 0.5)];
        assert_eq!(epoch_val_acc(&curve), vec![0.3, 0.5]);
        assert!((validation_accuracy_pct(&curve) - 40.0).abs() < 1e-12);
    }
}
