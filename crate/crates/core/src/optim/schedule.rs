use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::OptimError;

/// Learning-rate schedule as a function of the step index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { eta: f64 },
    /// Ramps linearly from 0 at step 0 to `peak` at `warmup_steps`, then
    /// holds.
    LinearWarmup { warmup_steps: u64, peak: f64 },
    /// Half-cosine from `peak` at step 0 to 0 at `total_steps`.
    Cosine { peak: f64, total_steps: u64 },
    /// Linear warmup, then a cosine over the remaining steps.
    WarmupCosine { warmup_steps: u64, peak: f64, total_steps: u64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        let peak = self.peak();
        if !(peak > 0.0) || !peak.is_finite() {
            return bad(format!("learning rate must be positive and finite, got {peak}"));
        }
        match *self {
            Schedule::Cosine { total_steps: 0, .. } => bad("cosine schedule needs total_steps > 0".into()),
            Schedule::WarmupCosine { warmup_steps, total_steps, .. } if warmup_steps >= total_steps => {
                bad(format!("warmup_steps ({warmup_steps}) must be below total_steps ({total_steps})"))
            }
            _ => Ok(()),
        }
    }

    /// The largest learning rate the schedule reaches.
    pub fn peak(&self) -> f64 {
        match *self {
            Schedule::Constant { eta } => eta,
            Schedule::LinearWarmup { peak, .. }
            | Schedule::Cosine { peak, .. }
            | Schedule::WarmupCosine { peak, .. } => peak,
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        match *self {
            Schedule::LinearWarmup { warmup_steps, .. } | Schedule::WarmupCosine { warmup_steps, .. } => {
                warmup_steps
            }
            _ => 0,
        }
    }

    /// Copy of the schedule with a different peak learning rate.
    pub fn with_peak(&self, new_peak: f64) -> Schedule {
        let mut s = *self;
        match &mut s {
            Schedule::Constant { eta } => *eta = new_peak,
            Schedule::LinearWarmup { peak, .. }
            | Schedule::Cosine { peak, .. }
            | Schedule::WarmupCosine { peak, .. } => *peak = new_peak,
        }
        s
    }

    /// Copy with a different warmup length; 0 removes the warmup. Cosine
    /// schedules keep their decay and total length.
    pub fn with_warmup(&self, steps: u64) -> Schedule {
        let peak = self.peak();
        match *self {
            Schedule::Constant { .. } | Schedule::LinearWarmup { .. } => {
                if steps == 0 {
                    Schedule::Constant { eta: peak }
                } else {
                    Schedule::LinearWarmup { warmup_steps: steps, peak }
                }
            }
            Schedule::Cosine { total_steps, .. } | Schedule::WarmupCosine { total_steps, .. } => {
                if steps == 0 {
                    Schedule::Cosine { peak, total_steps }
                } else {
                    Schedule::WarmupCosine { warmup_steps: steps, peak, total_steps }
                }
            }
        }
    }
}

fn warmup(peak: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        peak
    } else {
        peak * (step as f64 / warmup_steps as f64)
    }
}

fn cosine(peak: f64, step: u64, total: u64) -> f64 {
    if step >= total {
        return 0.0;
    }
    peak * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos())
}

/// η at `step`. Past the end of a cosine phase the rate stays at 0.
pub fn schedule_lr(s: &Schedule, step: u64) -> f64 {
    match *s {
        Schedule::Constant { eta } => eta,
        Schedule::LinearWarmup { warmup_steps, peak } => warmup(peak, step, warmup_steps),
        Schedule::Cosine { peak, total_steps } => cosine(peak, step, total_steps),
        Schedule::WarmupCosine { warmup_steps, peak, total_steps } => {
            if step < warmup_steps {
                warmup(peak, step, warmup_steps)
            } else {
                cosine(peak, step - warmup_steps, total_steps - warmup_steps)
            }
        }
    }
}
