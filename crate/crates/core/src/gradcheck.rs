//! Finite-difference verification of every hand-written backward pass.
//!
//! Each check draws a random small instance in `f64`, contracts the layer
//! output with a random cotangent `r` so the scalar loss is `<f(x), r>`, and
//! compares the analytic gradient of every input and parameter against
//! central differences with step [`STEP`].
//!
//! The per-entry relative error is `|a - n| / max(|a|, |n|, 1e-3 * G)`,
//! where `G` is the largest analytic magnitude over all inputs of the
//! instance. The floor keeps entries whose true gradient is zero (a conv
//! bias feeding batch normalization, say) from dividing round-off by
//! round-off.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Bottleneck, Gsresnet, Layer, ModelConfig, SeBlock};
use crate::seed::{derived_rng, Stream};
use crate::tensor::activation::{activate, activate_backward, sigmoid_backward, sigmoid_forward};
use crate::tensor::conv::{conv2d_backward, conv2d_forward};
use crate::tensor::dense::{fully_connected, fully_connected_backward, global_avg_pool, global_avg_pool_backward};
use crate::tensor::loss::softmax_cross_entropy;
use crate::tensor::norm::{batchnorm_backward, batchnorm_train};
use crate::tensor::{ActivationKind, ConvSpec, Mode, Scalar, Tensor};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 20;
/// Minimum distance between any activation input and a kink for an
/// instance to be accepted.
pub const KINK_MARGIN: f64 = 1e-4;
const MAX_RESAMPLES: usize = 200;

/// Outcome of comparing one analytic gradient set with finite differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Worst relative error per input.
    pub max_rel_error: Vec<f64>,
    /// `(input, entry, rel_error)` of every entry above the tolerance.
    pub flagged: Vec<(usize, usize, f64)>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Compare `analytic[i]` with the central-difference gradient of `loss` with
/// respect to `inputs[i]`, for every input.
pub fn grad_check(
    inputs: &[Vec<f64>],
    analytic: &[Vec<f64>],
    mut loss: impl FnMut(&[Vec<f64>]) -> f64,
    tolerance: f64,
) -> Result<GradCheck> {
    if inputs.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} inputs but {} analytic gradients",
            inputs.len(),
            analytic.len()
        )));
    }
    let scale = analytic.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut work = inputs.to_vec();
    let mut max_rel_error = Vec::with_capacity(inputs.len());
    let mut flagged = Vec::new();
    for (i, grad) in analytic.iter().enumerate() {
        if grad.len() != inputs[i].len() {
            return Err(Error::shape(format!(
                "input {i} has {} entries, gradient {}",
                inputs[i].len(),
                grad.len()
            )));
        }
        let mut worst = 0.0f64;
        for (j, &a) in grad.iter().enumerate() {
            let x0 = work[i][j];
            work[i][j] = x0 + STEP;
            let up = loss(&work);
            work[i][j] = x0 - STEP;
            let down = loss(&work);
            work[i][j] = x0;
            let numeric = (up - down) / (2.0 * STEP);
            let denom = a.abs().max(numeric.abs()).max(1e-3 * scale).max(f64::MIN_POSITIVE);
            let err = (a - numeric).abs() / denom;
            let err = if err.is_nan() { f64::INFINITY } else { err };
            if err > tolerance {
                flagged.push((i, j, err));
            }
            worst = worst.max(err);
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheck { max_rel_error, flagged })
}

/// One line of the battery report.
#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BatteryConfig {
    pub seed: u64,
    pub instances: usize,
    pub tolerance: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            seed: 0,
            instances: DEFAULT_INSTANCES,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// A single randomized instance: returns the [`GradCheck`] or `None` when
/// the draw should be rejected (too close to a kink).
type Instance = fn(&mut ChaCha8Rng, f64) -> Result<Option<GradCheck>>;

/// Names of the checks in [`run_battery`], in order.
pub const BATTERY: &[&str] = &[
    "grouped-conv",
    "batchnorm",
    "h-swish",
    "swish",
    "sigmoid",
    "relu",
    "fully-connected",
    "global-avg-pool",
    "cross-entropy",
    "se-block",
    "bottleneck",
    "gsresnet-tiny",
];

fn instance_fn(name: &str) -> Instance {
    match name {
        "grouped-conv" => check_conv,
        "batchnorm" => check_batchnorm,
        "h-swish" => |r, t| check_activation(ActivationKind::HSwish, r, t),
        "swish" => |r, t| check_activation(ActivationKind::Swish, r, t),
        "relu" => |r, t| check_activation(ActivationKind::Relu, r, t),
        "sigmoid" => check_sigmoid,
        "fully-connected" => check_fc,
        "global-avg-pool" => check_pool,
        "cross-entropy" => check_cross_entropy,
        "se-block" => check_se,
        "bottleneck" => check_bottleneck,
        "gsresnet-tiny" => check_tiny_model,
        other => unreachable!("unknown check {other}"),
    }
}

/// Run one named check over `instances` random draws.
pub fn run_check(name: &str, cfg: &BatteryConfig) -> Result<LayerReport> {
    let idx = BATTERY
        .iter()
        .position(|&n| n == name)
        .ok_or_else(|| Error::Config(format!("unknown gradient check {name:?}")))?;
    let f = instance_fn(name);
    let mut rng = derived_rng(cfg.seed, Stream::GradCheck, idx as u64, 0);
    let mut worst = 0.0f64;
    let mut passed = true;
    for _ in 0..cfg.instances {
        let mut attempts = 0;
        let check = loop {
            if let Some(c) = f(&mut rng, cfg.tolerance)? {
                break c;
            }
            attempts += 1;
            if attempts >= MAX_RESAMPLES {
                return Err(Error::Precondition(format!(
                    "{name}: no kink-free instance after {MAX_RESAMPLES} draws"
                )));
            }
        };
        worst = worst.max(check.worst());
        passed &= check.passed();
    }
    Ok(LayerReport {
        name: name.to_string(),
        instances: cfg.instances,
        max_rel_error: worst,
        tolerance: cfg.tolerance,
        passed,
    })
}

/// Every check in [`BATTERY`].
pub fn run_battery(cfg: &BatteryConfig) -> Result<Vec<LayerReport>> {
    BATTERY.iter().map(|name| run_check(name, cfg)).collect()
}

fn normal_vec(rng: &mut impl Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).expect("caller sized the data")
}

/// `x` uniform on `[-lim, lim]`, at least `margin` from every kink.
fn away_from_kinks(rng: &mut impl Rng, len: usize, lim: f64, kinks: &[f64], margin: f64) -> Vec<f64> {
    (0..len)
        .map(|_| loop {
            let v = rng.gen_range(-lim..lim);
            if kinks.iter().all(|k| (v - k).abs() >= margin) {
                break v;
            }
        })
        .collect()
}

fn check_conv(rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let g = rng.gen_range(1..=2);
    let cin = g * rng.gen_range(1..=2);
    let cout = g * rng.gen_range(1..=2);
    let k = if rng.gen_bool(0.75) { 3 } else { 1 };
    let stride = rng.gen_range(1..=2);
    let spec = ConvSpec::new(stride, k / 2, g);
    let n = rng.gen_range(1..=2);
    let (h, w) = (rng.gen_range(3..=5), rng.gen_range(3..=5));
    let xs = [n, cin, h, w];
    let ws = [cout, cin / g, k, k];
    let x = normal_vec(rng, xs.iter().product(), 1.0);
    let wt = normal_vec(rng, ws.iter().product(), 0.5);
    let b = normal_vec(rng, cout, 0.5);
    let y = conv2d_forward(&tensor(&xs, &x), &tensor(&ws, &wt), Some(&tensor(&[cout], &b)), spec)?;
    let r = Tensor::new(y.shape(), normal_vec(rng, y.len(), 1.0))?;
    let grads = conv2d_backward(&tensor(&xs, &x), &tensor(&ws, &wt), &r, spec)?;
    let loss = |v: &[Vec<f64>]| {
        conv2d_forward(&tensor(&xs, &v[0]), &tensor(&ws, &v[1]), Some(&tensor(&[cout], &v[2])), spec)
            .expect("shapes fixed")
            .dot(&r)
    };
    grad_check(
        &[x, wt, b],
        &[grads.dx.into_data(), grads.dw.into_data(), grads.db.into_data()],
        loss,
        tol,
    )
    .map(Some)
}

fn check_batchnorm(rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let shape = [rng.gen_range(2..=3), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(2..=3)];
    let c = shape[1];
    let x: Vec<f64> = normal_vec(rng, shape.iter().product(), 1.5).iter().map(|v| v + 0.5).collect();
    let gamma: Vec<f64> = normal_vec(rng, c, 0.5).iter().map(|v| v + 1.0).collect();
    let beta = normal_vec(rng, c, 0.5);
    let (y, cache, _) = batchnorm_train(&tensor(&shape, &x), &tensor(&[c], &gamma), &tensor(&[c], &beta))?;
    let r = Tensor::new(y.shape(), normal_vec(rng, y.len(), 1.0))?;
    let (dx, dg, db) = batchnorm_backward(&r, &tensor(&[c], &gamma), &cache)?;
    let loss = |v: &[Vec<f64>]| {
        batchnorm_train(&tensor(&shape, &v[0]), &tensor(&[c], &v[1]), &tensor(&[c], &v[2]))
            .expect("shapes fixed")
            .0
            .dot(&r)
    };
    grad_check(&[x, gamma, beta], &[dx.into_data(), dg.into_data(), db.into_data()], loss, tol).map(Some)
}

fn check_activation(kind: ActivationKind, rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let shape = [rng.gen_range(1..=3), 2, 3, 3];
    let x = away_from_kinks(rng, shape.iter().product(), 6.0, kind.kinks(), 1e-3);
    let r = tensor(&shape, &normal_vec(rng, x.len(), 1.0));
    let dx = activate_backward(kind, &tensor(&shape, &x), &r)?;
    let loss = |v: &[Vec<f64>]| activate(kind, &tensor(&shape, &v[0])).dot(&r);
    grad_check(&[x], &[dx.into_data()], loss, tol).map(Some)
}

fn check_sigmoid(rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let shape = [rng.gen_range(1..=3), 7];
    let x = normal_vec(rng, shape.iter().product(), 3.0);
    let r = tensor(&shape, &normal_vec(rng, x.len(), 1.0));
    let y = sigmoid_forward(&tensor(&shape, &x));
    let dx = sigmoid_backward(&y, &r)?;
    let loss = |v: &[Vec<f64>]| sigmoid_forward(&tensor(&shape, &v[0])).dot(&r);
    grad_check(&[x], &[dx.into_data()], loss, tol).map(Some)
}

fn check_fc(rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let (n, f, o) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=5));
    let x = normal_vec(rng, n * f, 1.0);
    let w = normal_vec(rng, o * f, 1.0);
    let b = normal_vec(rng, o, 1.0);
    let r = tensor(&[n, o], &normal_vec(rng, n * o, 1.0));
    let (dx, dw, db) = fully_connected_backward(&tensor(&[n, f], &x), &tensor(&[o, f], &w), &r)?;
    let loss = |v: &[Vec<f64>]| {
        fully_connected(&tensor(&[n, f], &v[0]), &tensor(&[o, f], &v[1]), &tensor(&[o], &v[2]))
            .expect("shapes fixed")
            .dot(&r)
    };
    grad_check(&[x, w, b], &[dx.into_data(), dw.into_data(), db.into_data()], loss, tol).map(Some)
}

fn check_pool(rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let x = normal_vec(rng, shape.iter().product(), 1.0);
    let r = tensor(&shape[..2], &normal_vec(rng, shape[0] * shape[1], 1.0));
    let dx = global_avg_pool_backward(&r, shape[2], shape[3])?;
    let loss = |v: &[Vec<f64>]| global_avg_pool(&tensor(&shape, &v[0])).expect("rank 4").dot(&r);
    grad_check(&[x], &[dx.into_data()], loss, tol).map(Some)
}

fn check_cross_entropy(rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let (n, c) = (rng.gen_range(1..=5), rng.gen_range(2..=18));
    let logits = normal_vec(rng, n * c, 2.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let (_, grad) = softmax_cross_entropy(&tensor(&[n, c], &logits), &labels)?;
    let loss = |v: &[Vec<f64>]| {
        softmax_cross_entropy(&tensor(&[n, c], &v[0]), &labels)
            .expect("labels in range")
            .0
    };
    grad_check(&[logits], &[grad.into_data()], loss, tol).map(Some)
}

/// Shared driver for stateful layers: runs a training forward and backward
/// at the drawn parameters, then checks input and parameter gradients.
fn check_layer<L: Layer<f64> + Clone>(
    mut layer: L,
    x: Vec<f64>,
    shape: &[usize],
    rng: &mut ChaCha8Rng,
    tol: f64,
) -> Result<Option<GradCheck>> {
    let base = layer.clone();
    let y = layer.forward(&tensor(shape, &x), Mode::Train)?;
    if layer.kink_margin() < KINK_MARGIN {
        return Ok(None);
    }
    let r = Tensor::new(y.shape(), normal_vec(rng, y.len(), 1.0))?;
    let dx = layer.backward(&r)?;
    let mut inputs = vec![x];
    let mut analytic = vec![dx.into_data()];
    for p in layer.params() {
        inputs.push(p.value.data().to_vec());
        analytic.push(p.grad.data().to_vec());
    }
    let loss = |v: &[Vec<f64>]| {
        let mut l = base.clone();
        for (p, val) in l.params_mut().into_iter().zip(&v[1..]) {
            p.value.data_mut().copy_from_slice(val);
        }
        l.forward(&tensor(shape, &v[0]), Mode::Train).expect("shapes fixed").dot(&r)
    };
    grad_check(&inputs, &analytic, loss, tol).map(Some)
}

/// Give a layer's BN affine terms non-trivial values so their gradients are
/// exercised away from the `gamma = 1, beta = 0` initialization.
fn perturb_params<L: Layer<f64>>(layer: &mut L, rng: &mut ChaCha8Rng) {
    for p in layer.params_mut() {
        for v in p.value.data_mut() {
            *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn check_se(rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let r = rng.gen_range(1..=2);
    let c = r * rng.gen_range(1..=3);
    let shape = [rng.gen_range(1..=3), c, rng.gen_range(1..=3), rng.gen_range(1..=3)];
    let mut se = SeBlock::<f64>::new("se", c, r, rng);
    perturb_params(&mut se, rng);
    let x = normal_vec(rng, shape.iter().product(), 1.0);
    check_layer(se, x, &shape, rng, tol)
}

fn check_bottleneck(rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let g = rng.gen_range(1..=2);
    let width = 2 * g * rng.gen_range(1..=2);
    let stride = rng.gen_range(1..=2);
    let cin = if rng.gen_bool(0.5) { width } else { rng.gen_range(1..=4) };
    let act = if rng.gen_bool(0.75) { ActivationKind::HSwish } else { ActivationKind::Swish };
    let mut block = Bottleneck::<f64>::new("b", cin, width, stride, g, Some(1), act, rng);
    perturb_params(&mut block, rng);
    let shape = [2, cin, rng.gen_range(3..=4), rng.gen_range(3..=4)];
    let x = normal_vec(rng, shape.iter().product(), 1.0);
    check_layer(block, x, &shape, rng, tol)
}

fn check_tiny_model(rng: &mut ChaCha8Rng, tol: f64) -> Result<Option<GradCheck>> {
    let cfg = ModelConfig::tiny();
    let mut model = Gsresnet::<f64>::build(&cfg, rng.gen())?;
    let shape = [2, cfg.in_channels, cfg.input_px, cfg.input_px];
    let x: Vec<f64> = (0..shape.iter().product()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<usize> = (0..shape[0]).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
    let base = model.clone();
    let logits = model.forward(&tensor(&shape, &x), Mode::Train)?;
    if model.kink_margin() < KINK_MARGIN {
        return Ok(None);
    }
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
    let dx = model.backward(&dlogits)?;
    let mut inputs = vec![x];
    let mut analytic = vec![dx.into_data()];
    for p in model.params() {
        inputs.push(p.value.data().to_vec());
        analytic.push(p.grad.data().to_vec());
    }
    let loss = |v: &[Vec<f64>]| {
        let mut m = base.clone();
        for (p, val) in m.params_mut().into_iter().zip(&v[1..]) {
            p.value.data_mut().copy_from_slice(val);
        }
        let logits = m.forward(&tensor(&shape, &v[0]), Mode::Train).expect("shapes fixed");
        softmax_cross_entropy(&logits, &labels).expect("labels in range").0
    };
    grad_check(&inputs, &analytic, loss, tol).map(Some)
}

/// Largest relative error one scalar function's derivative shows against
/// central differences over `points`, used for the elementwise activations.
pub fn scalar_check<T: Scalar>(f: impl Fn(T) -> T, df: impl Fn(T) -> T, points: &[f64]) -> f64 {
    points
        .iter()
        .map(|&p| {
            let numeric = (f(T::of(p + STEP)).f64() - f(T::of(p - STEP)).f64()) / (2.0 * STEP);
            let a = df(T::of(p)).f64();
            (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12)
        })
        .fold(0.0, f64::max)
}
