//! Fully connected classifier with optional batch normalization.
//!
//! Gradients come from a hand-written reverse pass. Hessian-vector products
//! use Pearlmutter's R-operator: a forward-mode directional derivative of
//! every intermediate of the forward and reverse passes, which yields `H v`
//! exactly at the cost of roughly two extra passes.
//!
//! Batch normalization always uses the statistics of the batch being
//! differentiated, so the loss (and hence its Hessian) is a deterministic
//! function of the parameters for a fixed batch. Running statistics only
//! enter through [`logits`] at evaluation time.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::batch::{Batch, Labels};
use super::params::Layout;
use super::ModelError;

pub const BN_EPSILON: f64 = 1e-5;
pub const MAX_WIDTH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    /// `(1/B) Σ_b ½‖o_b − t_b‖²`, with one-hot targets for class labels.
    Mse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width, hidden widths..., number of outputs.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub normalization: Normalization,
    pub loss: LossKind,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layer_widths.len() < 3 {
            return Err(ModelError::InvalidConfig(
                "an MLP needs an input width, at least one hidden width and an output width".into(),
            ));
        }
        if let Some(w) = self.layer_widths.iter().find(|&&w| w == 0 || w > MAX_WIDTH) {
            return Err(ModelError::InvalidConfig(format!(
                "layer width {w} outside 1..={MAX_WIDTH}"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn num_outputs(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn uses_bn(&self) -> bool {
        self.normalization == Normalization::BatchNorm
    }

    /// Per layer `l` (1-based): `layer{l}.weight` of shape `[fan_in, fan_out]`,
    /// then either `layer{l}.bias` or, for normalized hidden layers,
    /// `layer{l}.bn_scale` and `layer{l}.bn_shift`.
    pub fn layout(&self) -> Layout {
        let mut shapes = Vec::new();
        let n = self.num_layers();
        for l in 0..n {
            let (fan_in, fan_out) = (self.layer_widths[l], self.layer_widths[l + 1]);
            let name = l + 1;
            shapes.push((format!("layer{name}.weight"), vec![fan_in, fan_out]));
            if self.uses_bn() && l + 1 < n {
                shapes.push((format!("layer{name}.bn_scale"), vec![fan_out]));
                shapes.push((format!("layer{name}.bn_shift"), vec![fan_out]));
            } else {
                shapes.push((format!("layer{name}.bias"), vec![fan_out]));
            }
        }
        Layout::from_shapes(shapes)
    }
}

/// Per-hidden-layer `(mean, variance)` used by batch norm at evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl BatchNormStats {
    /// Exponential moving average toward `batch`: `r ← m·r + (1−m)·batch`.
    pub fn update(&mut self, batch: &BatchNormStats, momentum: f64) {
        for ((rm, rv), (bm, bv)) in self.layers.iter_mut().zip(&batch.layers) {
            for (r, b) in rm.iter_mut().zip(bm) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
            for (r, b) in rv.iter_mut().zip(bv) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
        }
    }
}

struct LayerView<'a> {
    weight: ArrayView2<'a, f64>,
    bias: Option<ArrayView1<'a, f64>>,
    /// `(scale, shift)`
    bn: Option<(ArrayView1<'a, f64>, ArrayView1<'a, f64>)>,
}

fn layer_views<'a>(config: &MlpConfig, flat: &'a [f64]) -> Vec<LayerView<'a>> {
    let n = config.num_layers();
    let mut offset = 0;
    let mut take = |len: usize| {
        let s = &flat[offset..offset + len];
        offset += len;
        s
    };
    (0..n)
        .map(|l| {
            let (fan_in, fan_out) = (config.layer_widths[l], config.layer_widths[l + 1]);
            let weight = ArrayView2::from_shape((fan_in, fan_out), take(fan_in * fan_out))
                .expect("layout and config agree");
            if config.uses_bn() && l + 1 < n {
                let scale = ArrayView1::from(take(fan_out));
                let shift = ArrayView1::from(take(fan_out));
                LayerView { weight, bias: None, bn: Some((scale, shift)) }
            } else {
                LayerView { weight, bias: Some(ArrayView1::from(take(fan_out))), bn: None }
            }
        })
        .collect()
}

struct LayerGrad {
    weight: Array2<f64>,
    bias: Option<Array1<f64>>,
    bn: Option<(Array1<f64>, Array1<f64>)>,
}

fn flatten_layer_grads(grads: Vec<LayerGrad>, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    for g in grads {
        out.extend(g.weight.iter());
        if let Some(b) = g.bias {
            out.extend(b.iter());
        }
        if let Some((s, t)) = g.bn {
            out.extend(s.iter());
            out.extend(t.iter());
        }
    }
    debug_assert_eq!(out.len(), len);
    out
}

fn col_mean(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("non-empty batch")
}

fn col_sum(x: &Array2<f64>) -> Array1<f64> {
    x.sum_axis(Axis(0))
}

fn activate(act: Activation, u: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    match act {
        Activation::Tanh => {
            let a = u.mapv(f64::tanh);
            let d1 = a.mapv(|t| 1.0 - t * t);
            (a, d1)
        }
        Activation::Relu => {
            let a = u.mapv(|x| if x > 0.0 || x.is_nan() { x } else { 0.0 });
            // Subgradient 0 at the kink.
            let d1 = u.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
            (a, d1)
        }
    }
}

/// f''(u), from the cached activation and f'(u).
fn second_derivative(act: Activation, a: &Array2<f64>, d1: &Array2<f64>) -> Option<Array2<f64>> {
    match act {
        Activation::Tanh => Some(-2.0 * a * d1),
        Activation::Relu => None,
    }
}

struct BnCache {
    centered: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

struct HiddenCache {
    input: Array2<f64>,
    bn: Option<BnCache>,
    a: Array2<f64>,
    d1: Array2<f64>,
}

struct ForwardCache {
    hidden: Vec<HiddenCache>,
    last_input: Array2<f64>,
    output: Array2<f64>,
}

fn forward_train(config: &MlpConfig, views: &[LayerView<'_>], inputs: &Array2<f64>) -> ForwardCache {
    let mut hidden = Vec::with_capacity(views.len() - 1);
    let mut current = inputs.clone();
    for view in &views[..views.len() - 1] {
        let mut z = current.dot(&view.weight);
        if let Some(b) = &view.bias {
            z += b;
        }
        let (u, bn) = match &view.bn {
            Some((scale, shift)) => {
                let mean = col_mean(&z);
                let centered = &z - &mean;
                let var = col_mean(&centered.mapv(|c| c * c));
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                let xhat = &centered * &inv_std;
                let u = &xhat * scale + shift;
                (u, Some(BnCache { centered, xhat, inv_std, mean, var }))
            }
            None => (z, None),
        };
        let (a, d1) = activate(config.activation, &u);
        hidden.push(HiddenCache { input: current, bn, a: a.clone(), d1 });
        current = a;
    }
    let last = &views[views.len() - 1];
    let mut output = current.dot(&last.weight);
    output += last.bias.as_ref().expect("output layer has a bias");
    ForwardCache { hidden, last_input: current, output }
}

/// Output-layer quantities needed by both passes.
struct Head {
    loss: f64,
    delta_out: Array2<f64>,
    probs: Option<Array2<f64>>,
}

fn loss_head(config: &MlpConfig, output: &Array2<f64>, labels: &Labels) -> Result<Head, ModelError> {
    let b = output.nrows() as f64;
    let k = output.ncols();
    match config.loss {
        LossKind::SoftmaxCrossEntropy => {
            let classes = match labels {
                Labels::Classes(c) => c,
                Labels::Targets(_) => {
                    return Err(ModelError::InvalidLabels(
                        "softmax cross-entropy needs class labels".into(),
                    ))
                }
            };
            let mut probs = Array2::zeros(output.raw_dim());
            let mut loss = 0.0;
            for (i, (row, &y)) in output.rows().into_iter().zip(classes).enumerate() {
                if y >= k {
                    return Err(ModelError::InvalidLabels(format!("class {y} >= {k} outputs")));
                }
                let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
                let sum: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                let lse = m + sum.ln();
                loss += lse - row[y];
                for (j, &x) in row.iter().enumerate() {
                    probs[[i, j]] = (x - lse).exp();
                }
            }
            let mut delta_out = probs.clone();
            for (i, &y) in classes.iter().enumerate() {
                delta_out[[i, y]] -= 1.0;
            }
            delta_out /= b;
            Ok(Head { loss: loss / b, delta_out, probs: Some(probs) })
        }
        LossKind::Mse => {
            let targets = match labels {
                Labels::Classes(c) => {
                    let mut t = Array2::zeros((c.len(), k));
                    for (i, &y) in c.iter().enumerate() {
                        if y >= k {
                            return Err(ModelError::InvalidLabels(format!(
                                "class {y} >= {k} outputs"
                            )));
                        }
                        t[[i, y]] = 1.0;
                    }
                    t
                }
                Labels::Targets(t) => {
                    if t.ncols() != k {
                        return Err(ModelError::InvalidLabels(format!(
                            "targets have {} columns, model has {k} outputs",
                            t.ncols()
                        )));
                    }
                    t.clone()
                }
            };
            let resid = output - &targets;
            let loss = 0.5 * resid.mapv(|r| r * r).sum() / b;
            Ok(Head { loss, delta_out: resid / b, probs: None })
        }
    }
}

struct BnBack {
    delta_xhat: Array2<f64>,
    /// mean over the batch of δx̂
    m1: Array1<f64>,
    /// mean over the batch of δx̂ ⊙ x̂
    m2: Array1<f64>,
}

struct HiddenBack {
    /// Gradient flowing into the activation output.
    delta_a: Array2<f64>,
    delta_u: Array2<f64>,
    delta_z: Array2<f64>,
    bn: Option<BnBack>,
}

struct BackwardCache {
    hidden: Vec<HiddenBack>,
}

fn backward(
    views: &[LayerView<'_>],
    fwd: &ForwardCache,
    head: &Head,
) -> (Vec<LayerGrad>, BackwardCache) {
    let n = views.len();
    let mut grads: Vec<Option<LayerGrad>> = (0..n).map(|_| None).collect();
    let mut hidden_back: Vec<Option<HiddenBack>> = (0..n - 1).map(|_| None).collect();

    let last = &views[n - 1];
    grads[n - 1] = Some(LayerGrad {
        weight: fwd.last_input.t().dot(&head.delta_out),
        bias: Some(col_sum(&head.delta_out)),
        bn: None,
    });
    let mut delta_a = head.delta_out.dot(&last.weight.t());

    for l in (0..n - 1).rev() {
        let cache = &fwd.hidden[l];
        let view = &views[l];
        let delta_u = &delta_a * &cache.d1;
        let (delta_z, bn_back, bias_grad, bn_grad) = match (&view.bn, &cache.bn) {
            (Some((scale, _)), Some(bn)) => {
                let g_scale = col_sum(&(&delta_u * &bn.xhat));
                let g_shift = col_sum(&delta_u);
                let delta_xhat = &delta_u * scale;
                let m1 = col_mean(&delta_xhat);
                let m2 = col_mean(&(&delta_xhat * &bn.xhat));
                let delta_z = (&delta_xhat - &m1 - &(&bn.xhat * &m2)) * &bn.inv_std;
                (delta_z, Some(BnBack { delta_xhat, m1, m2 }), None, Some((g_scale, g_shift)))
            }
            _ => {
                let gb = col_sum(&delta_u);
                (delta_u.clone(), None, Some(gb), None)
            }
        };
        grads[l] = Some(LayerGrad {
            weight: cache.input.t().dot(&delta_z),
            bias: bias_grad,
            bn: bn_grad,
        });
        let next_delta_a = if l > 0 { Some(delta_z.dot(&view.weight.t())) } else { None };
        hidden_back[l] = Some(HiddenBack { delta_a, delta_u, delta_z, bn: bn_back });
        if let Some(d) = next_delta_a {
            delta_a = d;
        } else {
            break;
        }
    }
    let grads = grads.into_iter().map(|g| g.expect("every layer visited")).collect();
    let hidden = hidden_back.into_iter().map(|h| h.expect("every layer visited")).collect();
    (grads, BackwardCache { hidden })
}

/// Loss, gradient and (for batch-normalized models) the batch statistics
/// seen by each normalized layer.
#[derive(Debug, Clone)]
pub struct MlpLossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub batch_stats: Option<BatchNormStats>,
}

fn check_inputs(config: &MlpConfig, params: &[f64], batch: &Batch) -> Result<(), ModelError> {
    config.validate()?;
    let expected = config.layout().total_len();
    if params.len() != expected {
        return Err(ModelError::Shape(format!(
            "parameter vector has {} entries, layout needs {expected}",
            params.len()
        )));
    }
    if batch.input_dim() != config.input_dim() {
        return Err(ModelError::Shape(format!(
            "batch has {} features, model expects {}",
            batch.input_dim(),
            config.input_dim()
        )));
    }
    Ok(())
}

fn batch_stats(fwd: &ForwardCache) -> Option<BatchNormStats> {
    let layers: Vec<_> = fwd
        .hidden
        .iter()
        .filter_map(|h| h.bn.as_ref().map(|bn| (bn.mean.to_vec(), bn.var.to_vec())))
        .collect();
    if layers.is_empty() {
        None
    } else {
        Some(BatchNormStats { layers })
    }
}

pub fn mlp_loss_and_grad(
    config: &MlpConfig,
    params: &[f64],
    batch: &Batch,
) -> Result<MlpLossGrad, ModelError> {
    check_inputs(config, params, batch)?;
    let views = layer_views(config, params);
    let fwd = forward_train(config, &views, &batch.inputs);
    let head = loss_head(config, &fwd.output, &batch.labels)?;
    if !head.loss.is_finite() {
        return Err(ModelError::NonFinite { loss: head.loss });
    }
    let (grads, _) = backward(&views, &fwd, &head);
    let grad = flatten_layer_grads(grads, params.len());
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::NonFinite { loss: head.loss });
    }
    Ok(MlpLossGrad { loss: head.loss, grad, batch_stats: batch_stats(&fwd) })
}

/// Forward and reverse caches at a frozen `(params, batch)`, reused across
/// many Hessian-vector products.
pub struct MlpCurvature {
    config: MlpConfig,
    params: Vec<f64>,
    fwd: ForwardCache,
    head: Head,
    back: BackwardCache,
    grad: Vec<f64>,
}

impl MlpCurvature {
    pub fn new(config: &MlpConfig, params: &[f64], batch: &Batch) -> Result<Self, ModelError> {
        check_inputs(config, params, batch)?;
        let views = layer_views(config, params);
        let fwd = forward_train(config, &views, &batch.inputs);
        let head = loss_head(config, &fwd.output, &batch.labels)?;
        if !head.loss.is_finite() {
            return Err(ModelError::NonFinite { loss: head.loss });
        }
        let (grads, back) = backward(&views, &fwd, &head);
        let grad = flatten_layer_grads(grads, params.len());
        Ok(Self { config: config.clone(), params: params.to_vec(), fwd, head, back, grad })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn loss(&self) -> f64 {
        self.head.loss
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    /// `H v` by forward-over-reverse differentiation along `v`.
    pub fn hvp(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.params.len(), "direction has wrong length");
        let config = &self.config;
        let views = layer_views(config, &self.params);
        let dirs = layer_views(config, v);
        let n = views.len();
        let batch_size = self.fwd.output.nrows() as f64;

        // R-forward.
        struct RHidden {
            r_input: Option<Array2<f64>>,
            r_u: Array2<f64>,
            r_xhat: Option<Array2<f64>>,
            r_inv_std: Option<Array1<f64>>,
        }
        let mut r_hidden: Vec<RHidden> = Vec::with_capacity(n - 1);
        let mut r_current: Option<Array2<f64>> = None;
        for l in 0..n - 1 {
            let cache = &self.fwd.hidden[l];
            let (view, dir) = (&views[l], &dirs[l]);
            let mut r_z = cache.input.dot(&dir.weight);
            if let Some(r_prev) = &r_current {
                r_z += &r_prev.dot(&view.weight);
            }
            if let Some(db) = &dir.bias {
                r_z += db;
            }
            let (r_u, r_xhat, r_inv_std) = match (&view.bn, &dir.bn, &cache.bn) {
                (Some((scale, _)), Some((d_scale, d_shift)), Some(bn)) => {
                    let r_mean = col_mean(&r_z);
                    let r_centered = &r_z - &r_mean;
                    let r_var = 2.0 * col_mean(&(&bn.centered * &r_centered));
                    let r_inv_std = -0.5 * &r_var * &bn.inv_std.mapv(|s| s * s * s);
                    let r_xhat = &r_centered * &bn.inv_std + &(&bn.centered * &r_inv_std);
                    let r_u = &bn.xhat * d_scale + &(&r_xhat * scale) + d_shift;
                    (r_u, Some(r_xhat), Some(r_inv_std))
                }
                _ => (r_z, None, None),
            };
            let r_a = &cache.d1 * &r_u;
            r_hidden.push(RHidden { r_input: r_current.take(), r_u, r_xhat, r_inv_std });
            r_current = Some(r_a);
        }
        let last = &views[n - 1];
        let last_dir = &dirs[n - 1];
        let mut r_out = self.fwd.last_input.dot(&last_dir.weight);
        if let Some(r_prev) = &r_current {
            r_out += &r_prev.dot(&last.weight);
        }
        r_out += last_dir.bias.as_ref().expect("output layer has a bias");

        // R of the output delta.
        let r_delta_out = match &self.head.probs {
            Some(p) => {
                let pr = p * &r_out;
                let row_sums = pr.sum_axis(Axis(1)).insert_axis(Axis(1));
                (&pr - &(p * &row_sums)) / batch_size
            }
            None => &r_out / batch_size,
        };

        // R-backward.
        let mut r_grads: Vec<Option<LayerGrad>> = (0..n).map(|_| None).collect();
        let delta_out = &self.head.delta_out;
        let mut rw = self.fwd.last_input.t().dot(&r_delta_out);
        if let Some(r_prev) = &r_current {
            rw += &r_prev.t().dot(delta_out);
        }
        r_grads[n - 1] =
            Some(LayerGrad { weight: rw, bias: Some(col_sum(&r_delta_out)), bn: None });
        let mut r_delta_a = r_delta_out.dot(&last.weight.t()) + delta_out.dot(&last_dir.weight.t());

        for l in (0..n - 1).rev() {
            let cache = &self.fwd.hidden[l];
            let back = &self.back.hidden[l];
            let rh = &r_hidden[l];
            let (view, dir) = (&views[l], &dirs[l]);
            let mut r_delta_u = &r_delta_a * &cache.d1;
            if let Some(d2) = second_derivative(config.activation, &cache.a, &cache.d1) {
                r_delta_u += &(&back.delta_a * &d2 * &rh.r_u);
            }
            let (r_delta_z, r_bias, r_bn) = match (&view.bn, &dir.bn, &cache.bn, &back.bn) {
                (Some((scale, _)), Some((d_scale, _)), Some(bn), Some(bb)) => {
                    let r_xhat = rh.r_xhat.as_ref().expect("bn layer has r_xhat");
                    let r_inv_std = rh.r_inv_std.as_ref().expect("bn layer has r_inv_std");
                    let r_g_scale =
                        col_sum(&(&r_delta_u * &bn.xhat)) + col_sum(&(&back.delta_u * r_xhat));
                    let r_g_shift = col_sum(&r_delta_u);
                    let r_delta_xhat = &r_delta_u * scale + &(&back.delta_u * d_scale);
                    let k = &bb.delta_xhat - &bb.m1 - &(&bn.xhat * &bb.m2);
                    let r_m1 = col_mean(&r_delta_xhat);
                    let r_m2 = col_mean(&(&r_delta_xhat * &bn.xhat))
                        + col_mean(&(&bb.delta_xhat * r_xhat));
                    let r_k = &r_delta_xhat - &r_m1 - &(r_xhat * &bb.m2) - &(&bn.xhat * &r_m2);
                    let r_delta_z = &k * r_inv_std + &(&r_k * &bn.inv_std);
                    (r_delta_z, None, Some((r_g_scale, r_g_shift)))
                }
                _ => {
                    let rb = col_sum(&r_delta_u);
                    (r_delta_u, Some(rb), None)
                }
            };
            let mut rw = cache.input.t().dot(&r_delta_z);
            if let Some(r_in) = &rh.r_input {
                rw += &r_in.t().dot(&back.delta_z);
            }
            r_grads[l] = Some(LayerGrad { weight: rw, bias: r_bias, bn: r_bn });
            if l > 0 {
                r_delta_a = r_delta_z.dot(&view.weight.t()) + back.delta_z.dot(&dir.weight.t());
            }
        }
        let r_grads = r_grads.into_iter().map(|g| g.expect("every layer visited")).collect();
        flatten_layer_grads(r_grads, self.params.len())
    }
}

/// Network outputs. Batch-normalized layers use `stats` when given and the
/// statistics of `inputs` otherwise.
pub fn logits(
    config: &MlpConfig,
    params: &[f64],
    inputs: &Array2<f64>,
    stats: Option<&BatchNormStats>,
) -> Result<Array2<f64>, ModelError> {
    config.validate()?;
    if params.len() != config.layout().total_len() || inputs.ncols() != config.input_dim() {
        return Err(ModelError::Shape("parameters or inputs do not match the config".into()));
    }
    let views = layer_views(config, params);
    let Some(stats) = stats.filter(|_| config.uses_bn()) else {
        return Ok(forward_train(config, &views, inputs).output);
    };
    let mut current = inputs.clone();
    let mut bn_layer = 0;
    for view in &views[..views.len() - 1] {
        let mut z = current.dot(&view.weight);
        if let Some(b) = &view.bias {
            z += b;
        }
        if let Some((scale, shift)) = &view.bn {
            let (mean, var) = stats.layers.get(bn_layer).ok_or_else(|| {
                ModelError::Shape("running statistics missing a normalized layer".into())
            })?;
            bn_layer += 1;
            let mean = ArrayView1::from(mean.as_slice());
            let inv_std = Array1::from_iter(var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()));
            z = (&z - &mean) * &inv_std * scale + shift;
        }
        current = activate(config.activation, &z).0;
    }
    let last = &views[views.len() - 1];
    let mut out = current.dot(&last.weight);
    out += last.bias.as_ref().expect("output layer has a bias");
    Ok(out)
}
