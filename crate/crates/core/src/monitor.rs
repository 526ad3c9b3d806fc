//! Stability bounds, divergence detection and run classification.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::optim::OptimizerKind;

/// Stability constant for SGD with momentum: `λ₁ ≤ 2/η`.
pub const SGD_STABILITY_C: f64 = 2.0;
/// Empirical constant for Adam's preconditioned sharpness: `λ₁ ≤ 40/η`.
pub const ADAM_STABILITY_C: f64 = 40.0;
pub const DEFAULT_RISE_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorError {
    /// The bound `c/η` is undefined at η = 0.
    UndefinedBound { eta: f64 },
    InvalidConstant(f64),
}

impl fmt::Display for MonitorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonitorError::UndefinedBound { eta } => write!(f, "stability bound undefined for eta = {eta}"),
            MonitorError::InvalidConstant(c) => write!(f, "stability constant must be positive, got {c}"),
        }
    }
}

impl std::error::Error for MonitorError {}

pub fn stability_constant(kind: OptimizerKind, c_override: Option<f64>) -> f64 {
    c_override.unwrap_or(match kind {
        OptimizerKind::SgdMomentum => SGD_STABILITY_C,
        OptimizerKind::Adam => ADAM_STABILITY_C,
    })
}

/// `c/η`, with `c` = 2 for SGD, 40 for Adam, or the override.
pub fn stability_bound(eta: f64, kind: OptimizerKind, c_override: Option<f64>) -> Result<f64, MonitorError> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(MonitorError::UndefinedBound { eta });
    }
    let c = stability_constant(kind, c_override);
    if !(c > 0.0) || !c.is_finite() {
        return Err(MonitorError::InvalidConstant(c));
    }
    Ok(c / eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub step: u64,
    pub eta: f64,
    pub lambda1: f64,
    pub bound: f64,
    /// `η λ₁ / c`; above 1 exactly when λ₁ exceeds the bound.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceCause {
    NanLoss,
    InfLoss,
    NanParam,
    /// The loss exceeded a configured ceiling while staying finite.
    LossCeiling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceEvent {
    pub step: u64,
    pub cause: DivergenceCause,
}

/// First step whose loss is NaN or ±Inf, or whose parameters the optional
/// hook reports as containing NaN. Loss offenses win ties at the same step.
pub fn detect_divergence(losses: &[f64], param_has_nan: Option<&dyn Fn(usize) -> bool>) -> Option<DivergenceEvent> {
    losses.iter().enumerate().find_map(|(i, &l)| {
        let cause = if l.is_nan() {
            DivergenceCause::NanLoss
        } else if l.is_infinite() {
            DivergenceCause::InfLoss
        } else if param_has_nan.is_some_and(|hook| hook(i)) {
            DivergenceCause::NanParam
        } else {
            return None;
        };
        Some(DivergenceEvent { step: i as u64, cause })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunLabel {
    Converged,
    Diverged,
    Catapult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunClassification {
    pub label: RunLabel,
    /// Inclusive step span supporting the label.
    pub evidence: (u64, u64),
}

/// Default catapult window: the first 10% of the run, at least one step.
pub fn default_catapult_window(total_steps: u64) -> usize {
    ((total_steps / 10) as usize).max(1)
}

/// Labels a loss series. Diverged when any loss is non-finite (or `event`
/// is given); catapult when within the first `window` steps the loss rises
/// above `rise_factor` times the initial loss and later falls below the
/// initial loss; converged otherwise.
pub fn classify_run(
    losses: &[f64],
    event: Option<&DivergenceEvent>,
    window: usize,
    rise_factor: f64,
) -> RunClassification {
    if let Some(e) = event.copied().or_else(|| detect_divergence(losses, None)) {
        return RunClassification { label: RunLabel::Diverged, evidence: (e.step, e.step) };
    }
    let last = losses.len().saturating_sub(1) as u64;
    let converged = RunClassification { label: RunLabel::Converged, evidence: (0, last) };
    let Some(&initial) = losses.first() else {
        return converged;
    };
    let spike = losses.iter().take(window.min(losses.len())).position(|&l| l > rise_factor * initial);
    if let Some(p) = spike {
        if let Some(r) = losses[p + 1..].iter().position(|&l| l < initial) {
            return RunClassification { label: RunLabel::Catapult, evidence: (p as u64, (p + 1 + r) as u64) };
        }
    }
    converged
}

/// A sharpness measurement taken during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessSample {
    pub step: u64,
    pub eta: f64,
    pub lambda1: f64,
}

/// One record per measurement; steps with η = 0 have no bound and are skipped.
pub fn stability_timeline(
    samples: &[SharpnessSample],
    kind: OptimizerKind,
    c_override: Option<f64>,
) -> Vec<StabilityRecord> {
    let c = stability_constant(kind, c_override);
    samples
        .iter()
        .filter_map(|s| {
            let bound = stability_bound(s.eta, kind, c_override).ok()?;
            Some(StabilityRecord { step: s.step, eta: s.eta, lambda1: s.lambda1, bound, ratio: s.eta * s.lambda1 / c })
        })
        .collect()
}

/// The last record strictly before a divergence step.
pub fn last_before_divergence<'a>(records: &'a [StabilityRecord], event: &DivergenceEvent) -> Option<&'a StabilityRecord> {
    records.iter().rev().find(|r| r.step < event.step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bounds() {
        assert_eq!(stability_bound(0.1, OptimizerKind::SgdMomentum, None).unwrap(), 20.0);
        assert_eq!(stability_bound(0.1, OptimizerKind::Adam, None).unwrap(), 400.0);
        assert_eq!(stability_bound(0.1, OptimizerKind::Adam, Some(2.0)).unwrap(), 20.0);
        assert!(stability_bound(0.0, OptimizerKind::SgdMomentum, None).is_err());
        assert!(stability_bound(0.1, OptimizerKind::SgdMomentum, Some(0.0)).is_err());
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(
            detect_divergence(&[1.0, 0.5, f64::NAN], None),
            Some(DivergenceEvent { step: 2, cause: DivergenceCause::NanLoss })
        );
        assert_eq!(detect_divergence(&[1.0, 0.5, 0.2], None), None);
        assert_eq!(
            detect_divergence(&[1.0, f64::INFINITY, f64::NAN], None),
            Some(DivergenceEvent { step: 1, cause: DivergenceCause::InfLoss })
        );
        let hook = |i: usize| i >= 1;
        assert_eq!(
            detect_divergence(&[1.0, 0.5, f64::NAN], Some(&hook)),
            Some(DivergenceEvent { step: 1, cause: DivergenceCause::NanParam })
        );
    }

    #[test]
    fn classification_examples() {
        let decreasing: Vec<f64> = (0..50).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert_eq!(classify_run(&decreasing, None, 5, 1.5).label, RunLabel::Converged);

        let nan_end = [1.0, 0.9, f64::NAN];
        let c = classify_run(&nan_end, None, 1, 1.5);
        assert_eq!(c.label, RunLabel::Diverged);
        assert_eq!(c.evidence, (2, 2));

        let mut catapult = vec![1.0, 1.6, 2.1, 1.2, 0.7];
        catapult.extend((0..200).map(|i| 0.7 * 0.99f64.powi(i)));
        let c = classify_run(&catapult, None, 100, 1.5);
        assert_eq!(c.label, RunLabel::Catapult);
        assert_eq!(c.evidence, (1, 4));

        // A spike after the window does not count.
        let late = [1.0, 0.9, 0.8, 2.0, 0.1];
        assert_eq!(classify_run(&late, None, 3, 1.5).label, RunLabel::Converged);
        // A spike without recovery below the initial loss is not a catapult.
        assert_eq!(classify_run(&[1.0, 2.0, 1.1], None, 3, 1.5).label, RunLabel::Converged);
    }

    #[test]
    fn explicit_event_wins() {
        let e = DivergenceEvent { step: 7, cause: DivergenceCause::NanParam };
        assert_eq!(classify_run(&[1.0, 0.5], Some(&e), 1, 1.5).label, RunLabel::Diverged);
    }

    #[test]
    fn timeline_examples() {
        let samples = [
            SharpnessSample { step: 0, eta: 0.0, lambda1: 3.0 },
            SharpnessSample { step: 100, eta: 0.1, lambda1: 10.0 },
            SharpnessSample { step: 200, eta: 0.1, lambda1: 20.0 },
        ];
        let records = stability_timeline(&samples, OptimizerKind::SgdMomentum, None);
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].bound, 20.0);
        assert_eq!(records[0].ratio, 0.5);
        assert_eq!(records[1].ratio, 1.0);
        let e = DivergenceEvent { step: 200, cause: DivergenceCause::NanLoss };
        assert_eq!(last_before_divergence(&records, &e).unwrap().step, 100);
    }

    #[test]
    fn default_window() {
        assert_eq!(default_catapult_window(5000), 500);
        assert_eq!(default_catapult_window(3), 1);
    }

    proptest! {
        #[test]
        fn first_offense_is_minimal(
            mut losses in prop::collection::vec(0.0f64..10.0, 1..60),
            bad in prop::collection::vec((0usize..60, 0u8..2), 0..5),
        ) {
            for (i, kind) in bad {
                if i < losses.len() {
                    losses[i] = if kind == 0 { f64::NAN } else { f64::INFINITY };
                }
            }
            let first = losses.iter().position(|l| !l.is_finite());
            prop_assert_eq!(detect_divergence(&losses, None).map(|e| e.step as usize), first);
            // Shuffling the finite prefix leaves the index unchanged.
            if let Some(f) = first {
                losses[..f].reverse();
                prop_assert_eq!(detect_divergence(&losses, None).map(|e| e.step as usize), Some(f));
            }
        }

        #[test]
        fn bound_strictly_decreasing(a in 1e-6f64..10.0, b in 1e-6f64..10.0) {
            prop_assume!(a < b);
            for kind in [OptimizerKind::SgdMomentum, OptimizerKind::Adam] {
                prop_assert!(stability_bound(a, kind, None).unwrap() > stability_bound(b, kind, None).unwrap());
            }
        }

        #[test]
        fn ratio_above_one_iff_above_bound(eta in 1e-4f64..1.0, lambda in 0.0f64..1e4) {
            let r = stability_timeline(&[SharpnessSample { step: 1, eta, lambda1: lambda }], OptimizerKind::SgdMomentum, None)[0];
            prop_assert_eq!(r.ratio > 1.0, r.lambda1 > r.bound);
        }

        #[test]
        fn classification_total(losses in prop::collection::vec(prop_oneof![0.0f64..5.0, Just(f64::NAN)], 1..40), w in 1usize..40) {
            let c = classify_run(&losses, None, w, 1.5);
            let diverged = losses.iter().any(|l| !l.is_finite());
            prop_assert_eq!(c.label == RunLabel::Diverged, diverged);
        }
    }
}
