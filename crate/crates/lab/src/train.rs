//! The instrumented training loop.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sharplab_core::model::{
    accuracy, hessian_operator, init_params, loss_and_grad, Batch, BatchNormStats, HessianOperator, Labels,
    ModelError, ModelSpec, ParamVector, DEFAULT_GQ_EPS,
};
use sharplab_core::monitor::{
    classify_run, default_catapult_window, stability_constant, stability_timeline, DivergenceCause,
    DivergenceEvent, RunClassification, SharpnessSample, StabilityRecord, DEFAULT_RISE_FACTOR,
};
use sharplab_core::numerics::SeededRng;
use sharplab_core::optim::{adam_step, clip_in_place, schedule_lr, Optimizer, OptimizerKind};
use sharplab_core::spectral::{adam_preconditioner, lanczos_max_eig, precondition_operator, SpectrumEstimate};

use crate::config::RunConfig;
use crate::datasets::Dataset;
use crate::error::HarnessError;

const BATCH_STREAM: u64 = 20;
const PROBE_STREAM: u64 = 21;

/// One line of `metrics.jsonl`. Non-finite floats are written as the
/// strings `"NaN"`, `"inf"` and `"-inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    /// Learning rate the schedule assigns to this step.
    pub eta: f64,
    /// Minibatch loss at the parameters entering this step.
    #[serde(with = "float_repr")]
    pub loss: f64,
    /// Global norm of the minibatch gradient before clipping.
    #[serde(with = "float_repr")]
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// Top eigenvalue of the probe-batch Hessian, preconditioned for Adam.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_quotient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub rows: Vec<MetricsRow>,
    pub divergence: Option<DivergenceEvent>,
    pub classification: RunClassification,
    pub config_digest: String,
    pub optimizer: OptimizerKind,
    /// The `c` of the bound `c/η` used for this run.
    pub stability_c: f64,
    /// Last finite parameters.
    pub final_params: ParamVector,
    pub bn_stats: Option<BatchNormStats>,
}

impl TrainingTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    pub fn sharpness(&self) -> Vec<SharpnessSample> {
        self.rows
            .iter()
            .filter_map(|r| r.lambda1.map(|l| SharpnessSample { step: r.step, eta: r.eta, lambda1: l }))
            .collect()
    }

    pub fn stability_records(&self) -> Vec<StabilityRecord> {
        stability_timeline(&self.sharpness(), self.optimizer, Some(self.stability_c))
    }

    pub fn accuracies(&self) -> Vec<(u64, f64)> {
        self.rows.iter().filter_map(|r| r.accuracy.map(|a| (r.step, a))).collect()
    }

    pub fn initial_lambda1(&self) -> Option<f64> {
        self.rows.first().and_then(|r| r.lambda1)
    }

    pub fn last_step(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.step)
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

/// Model plus data, materialized once so that sweeps can share datasets.
pub struct Prepared {
    pub train: Batch,
    pub validation: Option<Batch>,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, HarnessError> {
    config.validate()?;
    match (&config.model, &config.dataset) {
        (ModelSpec::Mlp(m), Some(spec)) => {
            let data = spec.build()?;
            check_dims(m.input_dim(), m.num_outputs(), &data)?;
            Ok(Prepared { validation: (!data.validation.is_empty()).then_some(data.validation), train: data.train })
        }
        // A quadratic loss does not depend on data; a single placeholder
        // example keeps the batch machinery uniform.
        _ => {
            let train = Batch::new(Array2::zeros((1, 1)), Labels::Classes(vec![0]))?;
            Ok(Prepared { train, validation: None })
        }
    }
}

fn check_dims(input: usize, outputs: usize, data: &Dataset) -> Result<(), HarnessError> {
    if input != data.input_dim {
        return Err(HarnessError::Config(format!(
            "model input width {input} does not match dataset dimension {}",
            data.input_dim
        )));
    }
    if outputs < data.num_classes {
        return Err(HarnessError::Config(format!(
            "model has {outputs} outputs but the dataset has {} classes",
            data.num_classes
        )));
    }
    Ok(())
}

pub fn run_training(config: &RunConfig) -> Result<TrainingTrace, HarnessError> {
    let data = prepare(config)?;
    run_prepared(config, &data)
}

struct Sampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: SeededRng,
}

impl Sampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Sampler {
            order: (0..n).collect(),
            pos: n,
            batch: batch.min(n),
            rng: SeededRng::with_stream(seed, BATCH_STREAM),
        };
        if s.batch == n {
            s.pos = 0;
        }
        s
    }

    /// Indices of the next minibatch; the order is reshuffled whenever an
    /// epoch runs out.
    fn next(&mut self) -> &[usize] {
        let n = self.order.len();
        if self.batch == n {
            return &self.order;
        }
        if self.pos + self.batch > n {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        self.pos += self.batch;
        &self.order[self.pos - self.batch..self.pos]
    }
}

fn probe_batch(train: &Batch, size: usize, seed: u64) -> Batch {
    if size >= train.len() {
        return train.clone();
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    SeededRng::with_stream(seed, PROBE_STREAM).shuffle(&mut idx);
    train.select(&idx[..size])
}

/// Lanczos estimate for the unpreconditioned probe-batch Hessian at
/// `params`. On the final parameters of an SGD run this repeats the last
/// recorded λ₁.
pub fn probe_sharpness(config: &RunConfig, data: &Prepared, params: &ParamVector) -> Result<SpectrumEstimate, HarnessError> {
    let probe = probe_batch(&data.train, config.probe_batch_size, config.seed);
    let op = hessian_operator(&config.model, params, &probe)?;
    Ok(lanczos_max_eig(&op, &config.lanczos)?)
}

struct Curvature {
    lambda1: f64,
    gradient_quotient: Option<f64>,
}

/// λ₁ of the probe-batch Hessian at `params`. For Adam the operator is
/// preconditioned by the `D` the optimizer applies at this step, obtained by
/// folding the current gradient into a copy of its state.
fn measure(
    config: &RunConfig,
    params: &ParamVector,
    probe: &Batch,
    optimizer: &Optimizer,
    grad: Option<&ParamVector>,
) -> Option<Curvature> {
    let op: HessianOperator = hessian_operator(&config.model, params, probe).ok()?;
    let gradient_quotient = Some(op.gradient_quotient(DEFAULT_GQ_EPS)).filter(|q| q.is_finite());
    let estimate = match (optimizer, grad) {
        (Optimizer::Adam(state), Some(g)) => {
            let mut prospective = state.clone();
            let mut scratch = params.clone();
            adam_step(&mut prospective, &mut scratch, g, 0.0).ok()?;
            let d = adam_preconditioner(&prospective, prospective.eps).ok()?;
            lanczos_max_eig(&precondition_operator(op, &d).ok()?, &config.lanczos).ok()?
        }
        _ => lanczos_max_eig(&op, &config.lanczos).ok()?,
    };
    estimate.lambda_max.is_finite().then_some(Curvature { lambda1: estimate.lambda_max, gradient_quotient })
}

fn cause_of(loss: f64) -> DivergenceCause {
    if loss.is_nan() {
        DivergenceCause::NanLoss
    } else if loss.is_infinite() {
        DivergenceCause::InfLoss
    } else {
        // Finite loss with a non-finite gradient or parameters.
        DivergenceCause::NanParam
    }
}

/// Runs the loop on already materialized data.
///
/// Step `s` evaluates the minibatch loss at the current parameters, records
/// a row, optionally measures curvature and validation accuracy, then
/// (for `s < total_steps`) clips the gradient and applies the optimizer at
/// `schedule_lr(s)`. Curvature is measured at every cadence step, at the
/// final step, and the first time the loss exceeds `spike_factor` times its
/// running minimum. When a step diverges, the parameters that produced it
/// are measured as well and attached to the preceding row.
pub fn run_prepared(config: &RunConfig, data: &Prepared) -> Result<TrainingTrace, HarnessError> {
    config.validate()?;
    let mut params = init_params(&config.model, &config.init)?;
    let mut optimizer = config.optimizer.init(params.layout().clone())?;
    let kind = optimizer.kind();
    let probe = probe_batch(&data.train, config.probe_batch_size, config.seed);
    let mut sampler = Sampler::new(data.train.len(), config.batch_size, config.seed);
    let uses_bn = matches!(&config.model, ModelSpec::Mlp(m) if m.normalization != Default::default());

    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut divergence = None;
    let mut bn_stats: Option<BatchNormStats> = None;
    let mut running_min = f64::INFINITY;
    let mut spiked = false;
    let mut previous: Option<(ParamVector, Optimizer, ParamVector)> = None;

    for step in 0..=config.total_steps {
        let eta = schedule_lr(&config.schedule, step);
        let batch = data.train.select(sampler.next());
        let evaluated = if params.is_finite() {
            loss_and_grad(&config.model, &params, &batch)
        } else {
            Err(ModelError::NonFinite { loss: f64::NAN })
        };
        let failure = match &evaluated {
            Ok(lg) if config.loss_ceiling.is_some_and(|c| lg.loss > c) => {
                Some((lg.loss, lg.grad.norm(), DivergenceCause::LossCeiling))
            }
            Ok(_) => None,
            Err(ModelError::NonFinite { loss }) if params.is_finite() => Some((*loss, f64::NAN, cause_of(*loss))),
            Err(ModelError::NonFinite { .. }) => Some((f64::NAN, f64::NAN, DivergenceCause::NanParam)),
            Err(_) => None,
        };
        if let Some((loss, grad_norm, cause)) = failure {
            rows.push(MetricsRow { step, eta, loss, grad_norm, accuracy: None, lambda1: None, gradient_quotient: None });
            divergence = Some(DivergenceEvent { step, cause });
            // The last parameters before the blow-up, when not yet measured.
            if let (Some((p, opt, g)), true) = (&previous, config.measure_curvature) {
                let n = rows.len();
                if n >= 2 && rows[n - 2].lambda1.is_none() {
                    if let Some(c) = measure(config, p, &probe, opt, Some(g)) {
                        rows[n - 2].lambda1 = Some(c.lambda1);
                        rows[n - 2].gradient_quotient = c.gradient_quotient;
                    }
                }
            }
            break;
        }
        let lg = evaluated?;
        if uses_bn {
            if let Some(b) = &lg.batch_stats {
                match &mut bn_stats {
                    Some(r) => r.update(b, config.bn_momentum),
                    None => bn_stats = Some(b.clone()),
                }
            }
        }

        let mut grad = lg.grad;
        let grad_norm = clip_in_place(grad.as_mut_slice(), &config.clip);

        let spike = !spiked && lg.loss > config.spike_factor * running_min;
        spiked |= spike;
        running_min = running_min.min(lg.loss);
        let cadence = step % config.curvature_cadence == 0 || step == config.total_steps;

        let mut row = MetricsRow { step, eta, loss: lg.loss, grad_norm, accuracy: None, lambda1: None, gradient_quotient: None };
        if config.measure_curvature && (cadence || spike) {
            if let Some(c) = measure(config, &params, &probe, &optimizer, Some(&grad)) {
                row.lambda1 = Some(c.lambda1);
                row.gradient_quotient = c.gradient_quotient;
            }
        }
        let mut reached = false;
        if cadence {
            if let Some(val) = &data.validation {
                let stats = bn_stats.as_ref().filter(|_| uses_bn);
                if let Ok(a) = accuracy(&config.model, &params, val, stats) {
                    row.accuracy = Some(a);
                    reached = config.stop_at_accuracy.is_some_and(|t| a >= t);
                }
            }
        }
        rows.push(row);
        if reached || step == config.total_steps {
            break;
        }

        let before = (params.clone(), optimizer.clone());
        optimizer.step(&mut params, &grad, eta)?;
        previous = Some((before.0, before.1, grad));
    }

    let losses: Vec<f64> = rows.iter().map(|r| r.loss).collect();
    let classification =
        classify_run(&losses, divergence.as_ref(), default_catapult_window(config.total_steps), DEFAULT_RISE_FACTOR);
    let final_params = match (&previous, params.is_finite()) {
        (_, true) => params,
        (Some((p, _, _)), false) => p.clone(),
        (None, false) => params,
    };
    Ok(TrainingTrace {
        rows,
        divergence,
        classification,
        config_digest: config.digest(),
        optimizer: kind,
        stability_c: stability_constant(kind, config.stability_c),
        final_params,
        bn_stats,
    })
}

mod float_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_nan() {
            s.serialize_str("NaN")
        } else if x.is_infinite() {
            s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*x)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}
