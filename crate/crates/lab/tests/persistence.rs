use std::fs;

use proptest::prelude::*;
use sharplab::idx::{encode_idx, load_idx, parse_idx, write_idx, IdxTensor, IdxType};
use sharplab::persist::{read_metrics, read_run, write_metrics, write_run, METRICS_FILE};
use sharplab::train::{prepare, probe_sharpness, MetricsRow};
use sharplab::{run_training, RunConfig};

const CONFIG: &str = r#"
batch_size = 16
total_steps = 40
curvature_cadence = 10
seed = 2
probe_batch_size = 64

[model]
kind = "mlp"
layer_widths = [2, 8, 8, 2]
activation = "tanh"
normalization = "batch_norm"
loss = "softmax_cross_entropy"

[init]
scale_alpha = 1.0
seed = 2

[dataset]
seed = 2

[dataset.source]
kind = "spirals"
n = 120
turns = 1.0
noise = 0.05

[schedule]
kind = "constant"
eta = 0.05
"#;

#[test]
fn run_directory_replays_exactly() {
    let config = RunConfig::from_toml(CONFIG).unwrap();
    let trace = run_training(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &config, &trace).unwrap();

    let stored = read_run(dir.path()).unwrap();
    assert_eq!(stored.config, config);
    assert_eq!(stored.rows, trace.rows);
    assert_eq!(stored.params, trace.final_params);
    assert_eq!(stored.bn_stats, trace.bn_stats);
    assert!(stored.bn_stats.is_some());
    assert_eq!(stored.summary.config_digest, config.digest());
    assert_eq!(stored.summary.rows, trace.rows.len());
    assert_eq!(stored.summary.last_step, 40);
}

#[test]
fn checkpoint_spectrum_repeats_final_measurement() {
    let config = RunConfig::from_toml(CONFIG).unwrap();
    let trace = run_training(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &config, &trace).unwrap();
    let stored = read_run(dir.path()).unwrap();
    let data = prepare(&stored.config).unwrap();
    let est = probe_sharpness(&stored.config, &data, &stored.params).unwrap();
    assert_eq!(Some(est.lambda_max), trace.rows.last().unwrap().lambda1);
}

#[test]
fn non_finite_metrics_survive_json_lines() {
    let rows = vec![
        MetricsRow { step: 0, eta: 0.1, loss: 1.0, grad_norm: 2.0, accuracy: Some(0.5), lambda1: Some(3.0), gradient_quotient: None },
        MetricsRow { step: 1, eta: 0.1, loss: f64::INFINITY, grad_norm: f64::NAN, accuracy: None, lambda1: None, gradient_quotient: None },
        MetricsRow { step: 2, eta: 0.1, loss: f64::NEG_INFINITY, grad_norm: 0.0, accuracy: None, lambda1: None, gradient_quotient: None },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(METRICS_FILE);
    write_metrics(&path, &rows).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains(r#""loss":"inf""#) && text.contains(r#""grad_norm":"NaN""#));
    let back = read_metrics(&path).unwrap();
    assert_eq!(back[0], rows[0]);
    assert_eq!(back[1].loss, f64::INFINITY);
    assert!(back[1].grad_norm.is_nan());
    assert_eq!(back[2].loss, f64::NEG_INFINITY);
}

#[test]
fn corrupt_run_directory_is_an_error() {
    let config = RunConfig::from_toml(CONFIG).unwrap();
    let trace = run_training(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &config, &trace).unwrap();
    let params = dir.path().join("params.f64");
    let mut bytes = fs::read(&params).unwrap();
    bytes.pop();
    fs::write(&params, bytes).unwrap();
    assert!(read_run(dir.path()).is_err());
    assert!(read_run(&dir.path().join("missing")).is_err());
}

fn tensor() -> impl Strategy<Value = IdxTensor> {
    let dtype = prop_oneof![
        Just(IdxType::U8),
        Just(IdxType::I8),
        Just(IdxType::I16),
        Just(IdxType::I32),
        Just(IdxType::F32),
        Just(IdxType::F64)
    ];
    (dtype, prop::collection::vec(1usize..5, 1..4)).prop_flat_map(|(dtype, dims)| {
        let len = dims.iter().product::<usize>();
        let value = match dtype {
            IdxType::U8 => (0u8..=u8::MAX).prop_map(f64::from).boxed(),
            IdxType::I8 => any::<i8>().prop_map(f64::from).boxed(),
            IdxType::I16 => any::<i16>().prop_map(f64::from).boxed(),
            IdxType::I32 => any::<i32>().prop_map(f64::from).boxed(),
            IdxType::F32 => any::<f32>().prop_filter("finite", |x| x.is_finite()).prop_map(f64::from).boxed(),
            IdxType::F64 => any::<f64>().prop_filter("finite", |x| x.is_finite()).boxed(),
        };
        prop::collection::vec(value, len).prop_map(move |data| IdxTensor { dtype, dims: dims.clone(), data })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn idx_round_trips(t in tensor()) {
        prop_assert_eq!(parse_idx(&encode_idx(&t)).unwrap(), t.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.idx");
        write_idx(&path, &t).unwrap();
        prop_assert_eq!(fs::read(&path).unwrap(), encode_idx(&t));
    }

    #[test]
    fn idx_images_load_scaled(rows in 1usize..6, side in 1usize..5, seed in any::<u64>()) {
        let n = rows * side * side;
        let pixels: Vec<f64> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) % 256) as f64).collect();
        let images = IdxTensor { dtype: IdxType::U8, dims: vec![rows, side, side], data: pixels.clone() };
        let labels = IdxTensor { dtype: IdxType::U8, dims: vec![rows], data: (0..rows).map(|i| (i % 10) as f64).collect() };
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("images"), dir.path().join("labels"));
        write_idx(&ip, &images).unwrap();
        write_idx(&lp, &labels).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        prop_assert_eq!(d.rows, rows);
        prop_assert_eq!(d.features, side * side);
        prop_assert!(d.images.iter().all(|x| (0.0..=1.0).contains(x)));
        for (a, b) in d.images.iter().zip(&pixels) {
            prop_assert!((a - b / 255.0).abs() < 1e-15);
        }
    }
}
