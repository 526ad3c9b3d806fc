//! Post-hoc analysis of traces and sweep results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sharplab_core::monitor::SharpnessSample;

use crate::error::HarnessError;
use crate::train::TrainingTrace;

/// Batch size whose steps-to-target normalizes the others.
pub const REFERENCE_BATCH: usize = 64;

/// First measured step whose validation accuracy reaches `target`.
pub fn steps_to_target(trace: &TrainingTrace, target: f64) -> Option<u64> {
    first_reaching(&trace.accuracies(), target)
}

pub fn first_reaching(accuracies: &[(u64, f64)], target: f64) -> Option<u64> {
    accuracies.iter().find(|(_, a)| *a >= target).map(|(s, _)| *s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    /// `steps[b] / steps[reference]`.
    pub ratios: BTreeMap<usize, f64>,
    /// Batch sizes that never reached the target.
    pub unreached: Vec<usize>,
}

/// Normalizes steps-to-target by the value at `reference`.
pub fn normalize_speedup(steps: &BTreeMap<usize, Option<u64>>, reference: usize) -> Result<Speedup, HarnessError> {
    let base = match steps.get(&reference) {
        Some(Some(s)) if *s > 0 => *s as f64,
        Some(Some(_)) => return Err(HarnessError::Config(format!("batch {reference} reached the target at step 0"))),
        Some(None) => return Err(HarnessError::Config(format!("reference batch {reference} never reached the target"))),
        None => return Err(HarnessError::Config(format!("reference batch {reference} missing from results"))),
    };
    let mut out = Speedup { ratios: BTreeMap::new(), unreached: Vec::new() };
    for (&b, s) in steps {
        match s {
            Some(s) => {
                out.ratios.insert(b, *s as f64 / base);
            }
            None => out.unreached.push(b),
        }
    }
    Ok(out)
}

/// Outcome of one learning rate for a fixed batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrOutcome {
    Diverged,
    /// Stable; steps to target if reached.
    Stable(Option<u64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum OptimalLr {
    Found {
        eta: f64,
        steps: u64,
        /// η* is the largest learning rate that did not diverge.
        largest_non_divergent: bool,
    },
    /// Some runs were stable but none reached the target.
    NoneReached,
    AllDiverged,
}

/// The learning rate with the fewest steps to target among non-divergent
/// runs; ties go to the smaller learning rate.
pub fn optimal_lr(results: &[(f64, LrOutcome)]) -> OptimalLr {
    let stable: Vec<(f64, Option<u64>)> = results
        .iter()
        .filter_map(|&(eta, o)| match o {
            LrOutcome::Stable(s) => Some((eta, s)),
            LrOutcome::Diverged => None,
        })
        .collect();
    if stable.is_empty() {
        return OptimalLr::AllDiverged;
    }
    let largest = stable.iter().map(|(e, _)| *e).fold(f64::NEG_INFINITY, f64::max);
    let best = stable
        .iter()
        .filter_map(|&(e, s)| s.map(|s| (e, s)))
        .min_by(|a, b| a.1.cmp(&b.1).then(a.0.total_cmp(&b.0)));
    match best {
        Some((eta, steps)) => OptimalLr::Found { eta, steps, largest_non_divergent: eta == largest },
        None => OptimalLr::NoneReached,
    }
}

/// λ₁ measurement nearest to the middle of the run (earlier one on ties).
pub fn mid_training(trace: &TrainingTrace, total_steps: u64) -> Option<SharpnessSample> {
    let mid = total_steps / 2;
    trace
        .sharpness()
        .into_iter()
        .filter(|s| s.eta > 0.0)
        .min_by_key(|s| (s.step.abs_diff(mid), s.step))
}

/// Empirical stability constant: the largest `η λ₁` observed over samples
/// with positive η.
pub fn fit_stability_constant(samples: &[SharpnessSample]) -> Option<f64> {
    samples.iter().filter(|s| s.eta > 0.0).map(|s| s.eta * s.lambda1).reduce(f64::max)
}

/// First sample with `λ₁ > c/η`.
pub fn first_crossing(samples: &[SharpnessSample], c: f64) -> Option<u64> {
    samples.iter().find(|s| s.eta > 0.0 && s.lambda1 > c / s.eta).map(|s| s.step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_hit() {
        let acc: Vec<(u64, f64)> = (0..10).map(|i| (i * 100, 0.5 + 0.05 * i as f64)).collect();
        assert_eq!(first_reaching(&acc, 0.85), Some(700));
        assert_eq!(first_reaching(&acc, 0.99), None);
        let bumpy = [(0, 0.5), (100, 0.9), (200, 0.6), (300, 0.95)];
        assert_eq!(first_reaching(&bumpy, 0.85), Some(100));
    }

    #[test]
    fn speedup() {
        let steps = BTreeMap::from([(64, Some(1000)), (128, Some(500)), (256, None)]);
        let s = normalize_speedup(&steps, 64).unwrap();
        assert_eq!(s.ratios[&64], 1.0);
        assert_eq!(s.ratios[&128], 0.5);
        assert_eq!(s.unreached, vec![256]);
        assert!(normalize_speedup(&BTreeMap::from([(128, Some(5))]), 64).is_err());
        assert!(normalize_speedup(&BTreeMap::from([(64, None)]), 64).is_err());
    }

    #[test]
    fn optimal_examples() {
        let r = [(0.01, LrOutcome::Stable(Some(900))), (0.1, LrOutcome::Stable(Some(400))), (1.0, LrOutcome::Diverged)];
        assert_eq!(optimal_lr(&r), OptimalLr::Found { eta: 0.1, steps: 400, largest_non_divergent: true });
        let tie = [(0.1, LrOutcome::Stable(Some(500))), (0.01, LrOutcome::Stable(Some(500)))];
        assert_eq!(optimal_lr(&tie), OptimalLr::Found { eta: 0.01, steps: 500, largest_non_divergent: false });
        assert_eq!(optimal_lr(&[(0.1, LrOutcome::Diverged)]), OptimalLr::AllDiverged);
        assert_eq!(optimal_lr(&[(0.1, LrOutcome::Stable(None))]), OptimalLr::NoneReached);
    }

    #[test]
    fn crossing() {
        let s = |step, eta, lambda1| SharpnessSample { step, eta, lambda1 };
        let samples = [s(0, 0.0, 100.0), s(10, 0.1, 10.0), s(20, 0.1, 30.0), s(30, 0.1, 50.0)];
        assert_eq!(fit_stability_constant(&samples[..3]), Some(3.0));
        assert_eq!(first_crossing(&samples, 3.0), Some(30));
        assert_eq!(first_crossing(&samples, 5.0), None);
    }
}
