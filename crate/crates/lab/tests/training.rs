use sharplab::persist::metrics_jsonl;
use sharplab::{run_training, RunConfig};
use sharplab_core::monitor::DivergenceCause;
use sharplab_core::optim::schedule_lr;

const SMALL: &str = r#"
batch_size = 32
total_steps = 60
curvature_cadence = 20
seed = 4
probe_batch_size = 64

[model]
kind = "mlp"
layer_widths = [2, 16, 16, 2]
activation = "tanh"
loss = "mse"

[init]
scale_alpha = 1.0
seed = 4

[dataset]
seed = 4

[dataset.source]
kind = "two_gaussians"
n = 200
dim = 2
separation = 2.0

[schedule]
kind = "linear_warmup"
warmup_steps = 30
peak = 0.2
"#;

fn small() -> RunConfig {
    RunConfig::from_toml(SMALL).unwrap()
}

fn quadratic(lambda: f64, eta: f64, steps: u64) -> RunConfig {
    RunConfig::from_toml(&format!(
        r#"
batch_size = 1
total_steps = {steps}
curvature_cadence = 5

[model]
kind = "quadratic"
theta0 = [1.0]
[model.hessian.diagonal]
spectrum = [{lambda}]

[init]
scale_alpha = 1.0
seed = 0

[optimizer]
kind = "sgd_momentum"
momentum = 0.0
nesterov = false

[schedule]
kind = "constant"
eta = {eta}
"#
    ))
    .unwrap()
}

#[test]
fn config_round_trips_through_toml() {
    let c = small();
    let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.digest(), c.digest());
    let mut other = c.clone();
    other.seed += 1;
    assert_ne!(other.digest(), c.digest());
}

#[test]
fn zero_steps_records_only_step_zero() {
    let mut c = small();
    c.total_steps = 0;
    let t = run_training(&c).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.rows[0].step, 0);
    assert!(t.rows[0].lambda1.is_some());
    assert!(t.rows[0].accuracy.is_some());
    assert!(!t.diverged());
}

#[test]
fn identical_configs_give_identical_metrics() {
    let a = metrics_jsonl(&run_training(&small()).unwrap().rows).unwrap();
    let b = metrics_jsonl(&run_training(&small()).unwrap().rows).unwrap();
    assert_eq!(a, b);
    let mut c = small();
    c.seed = 5;
    assert_ne!(metrics_jsonl(&run_training(&c).unwrap().rows).unwrap(), a);
}

#[test]
fn rows_are_ordered_and_measured_on_cadence() {
    let c = small();
    let t = run_training(&c).unwrap();
    assert_eq!(t.rows.len(), 61);
    assert!(t.rows.windows(2).all(|w| w[1].step > w[0].step));
    for r in &t.rows {
        assert_eq!(r.lambda1.is_some(), r.step % 20 == 0, "step {}", r.step);
        assert_eq!(r.eta, schedule_lr(&c.schedule, r.step));
    }
}

#[test]
fn quadratic_past_the_bound_diverges_with_sharpness_above_it() {
    let (lambda, eta) = (1.0, 2.5);
    let t = run_training(&quadratic(lambda, eta, 5000)).unwrap();
    let event = t.divergence.expect("ηλ = 2.5 must diverge");
    assert!(matches!(event.cause, DivergenceCause::InfLoss | DivergenceCause::NanLoss));
    let last = t.sharpness().last().copied().unwrap();
    assert!(last.step < event.step);
    assert!(last.lambda1 > 2.0 / eta);
    assert!((last.lambda1 - lambda).abs() < 1e-9);
}

#[test]
fn quadratic_inside_the_bound_stays_finite() {
    let t = run_training(&quadratic(1.0, 1.5, 300)).unwrap();
    assert!(!t.diverged());
    assert!(t.rows.last().unwrap().loss < 1e-12);
}

#[test]
fn last_sharpness_precedes_divergence() {
    let mut c = small();
    c.schedule = sharplab_core::optim::Schedule::Constant { eta: 40.0 };
    c.total_steps = 400;
    let t = run_training(&c).unwrap();
    let event = t.divergence.expect("η = 40 diverges");
    let last = t.sharpness().last().copied().unwrap();
    assert!(last.step < event.step);
    assert_eq!(t.rows.last().unwrap().step, event.step);
}

#[test]
fn loss_ceiling_ends_the_run() {
    let mut c = small();
    c.loss_ceiling = Some(1e-3);
    let t = run_training(&c).unwrap();
    let event = t.divergence.unwrap();
    assert_eq!(event.cause, DivergenceCause::LossCeiling);
    assert_eq!(event.step, 0);
    assert!(t.rows[0].loss.is_finite());
}

#[test]
fn adam_runs_report_preconditioned_sharpness() {
    let mut c = small();
    c.optimizer = sharplab_core::optim::OptimizerConfig::adam();
    c.schedule = sharplab_core::optim::Schedule::Constant { eta: 1e-3 };
    let adam = run_training(&c).unwrap();
    c.optimizer = Default::default();
    let sgd = run_training(&c).unwrap();
    // D ≈ |g| is far below 1 here, so D^{-1/2} H D^{-1/2} is much sharper.
    assert!(adam.initial_lambda1().unwrap() > 10.0 * sgd.initial_lambda1().unwrap());
    assert_eq!(adam.stability_c, 40.0);
    assert_eq!(sgd.stability_c, 2.0);
}

#[test]
fn stop_at_accuracy_ends_early() {
    let mut c = small();
    c.stop_at_accuracy = Some(0.5);
    let t = run_training(&c).unwrap();
    assert!(t.last_step() < 60);
    assert!(t.accuracies().last().unwrap().1 >= 0.5);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small();
    c.curvature_cadence = 0;
    assert!(run_training(&c).is_err());
    let mut c = small();
    c.dataset = None;
    assert!(run_training(&c).is_err());
    let mut c = small();
    if let sharplab_core::model::ModelSpec::Mlp(m) = &mut c.model {
        m.layer_widths[0] = 3;
    }
    assert!(run_training(&c).is_err());
}
