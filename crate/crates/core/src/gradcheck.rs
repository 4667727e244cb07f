//! Finite-difference verification of every differentiable op and of the
//! full model's parameter gradients.
//!
//! Each check builds a scalar `f(x₁, …, xₖ) = Σ op(x)⊙R` with a fixed random
//! weighting `R`, takes the tape gradient and compares it with central
//! differences `(f(x+h) − f(x−h)) / 2h`. The error of one input is
//! `‖g_tape − g_fd‖ / max(‖g_tape‖, ‖g_fd‖)`. Op checks report the worst
//! input; the model check pools all parameters into one gradient vector,
//! since individual parameter tensors of an untrained network can have
//! gradients close to the rounding noise of the loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::model::{FlowChromaModel, ModelConfig};
use crate::nn::{lstm_cell_step, FanInUniform, LstmLayerParams, LstmState, ParamStore};
use crate::tensor::{Padding, Result, Tape, Tensor, TensorError};
use crate::training::video_loss;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Names accepted by [`GradCheckConfig::ops`], in run order. `model` is the
/// end-to-end check.
pub const CHECK_NAMES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "sigmoid",
    "tanh",
    "relu",
    "matmul",
    "conv2d",
    "upsample_nearest2x",
    "concat",
    "slice",
    "reshape",
    "global_avg_pool",
    "replicate_spatial",
    "sum",
    "mean",
    "lstm_cell",
    "video_loss",
    "model",
];

/// How per-input errors combine into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    /// Worst relative error over the inputs.
    WorstInput,
    /// Relative error of all input gradients concatenated.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Input with the largest individual relative error, and that error.
    pub worst_input: (usize, f64),
    pub tolerance: f64,
    /// Scalars perturbed.
    pub evaluations: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub seed: u64,
    /// Subset of [`CHECK_NAMES`]; `None` runs everything.
    pub ops: Option<Vec<String>>,
    pub model_config: ModelConfig,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: DEFAULT_STEP,
            seed: 0,
            ops: None,
            model_config: ModelConfig::desk(3, 16, 8, 16),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub results: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

struct Inputs {
    rng: ChaCha8Rng,
}

impl Inputs {
    fn normal(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::new(shape, data).expect("nonzero shape")
    }

    /// Normal values pushed at least `gap` away from zero, for kinked ops.
    fn away_from_zero(&mut self, shape: &[usize], gap: f64) -> Tensor {
        let t = self.normal(shape);
        let data = t.data().iter().map(|v| v + gap * v.signum()).collect();
        Tensor::new(shape, data).expect("same shape")
    }

    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(lo..hi)).collect();
        Tensor::new(shape, data).expect("nonzero shape")
    }
}

/// Compares tape and central-difference gradients of `f` with respect to
/// every tensor in `inputs`.
pub fn check_function(
    name: &str,
    inputs: &[Tensor],
    step: f64,
    tolerance: f64,
    metric: ErrorMetric,
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
) -> Result<CheckResult> {
    let tape = Tape::new();
    let tracked: Vec<Tensor> = inputs.iter().map(|x| tape.track(x)).collect();
    let out = f(&tracked)?;
    if !out.is_scalar() {
        return Err(TensorError::NonScalarRoot {
            shape: out.shape().to_vec(),
        });
    }
    let grads = out.backward()?;
    let mut worst = (0, 0.0);
    let mut all_analytic = Vec::new();
    let mut all_numeric = Vec::new();
    let mut evaluations = 0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(&tracked[k])
            .map_or_else(|| vec![0.0; x.numel()], |g| g.to_vec());
        let mut numeric = Vec::with_capacity(x.numel());
        let mut probe = inputs.to_vec();
        for i in 0..x.numel() {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut d = x.to_vec();
                d[i] += delta;
                probe[k] = Tensor::new(x.shape(), d)?;
                Ok(f(&probe)?.item())
            };
            let plus = eval(step)?;
            let minus = eval(-step)?;
            numeric.push((plus - minus) / (2.0 * step));
        }
        evaluations += x.numel();
        let e = rel_error(&analytic, &numeric);
        if e > worst.1 {
            worst = (k, e);
        }
        all_analytic.extend(analytic);
        all_numeric.extend(numeric);
    }
    let err = match metric {
        ErrorMetric::WorstInput => worst.1,
        ErrorMetric::Pooled => rel_error(&all_analytic, &all_numeric),
    };
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error: err,
        worst_input: worst,
        tolerance,
        evaluations,
        passed: err < tolerance,
    })
}

/// `Σ y⊙R` for a fixed random `R` shaped like `y`.
fn weighted_sum(y: &Tensor, seed: u64) -> Result<Tensor> {
    let mut g = Inputs {
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5),
    };
    if y.is_scalar() {
        return Ok(y.clone());
    }
    y.mul(&g.normal(y.shape()))?.sum()
}

/// Runs the single op check `name`.
pub fn check_op(name: &str, seed: u64, step: f64) -> Result<CheckResult> {
    let mut g = Inputs {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let tol = OP_TOLERANCE;
    let ws = move |y: Tensor| weighted_sum(&y, seed);
    match name {
        "add" => {
            let ins = [g.normal(&[3, 4]), g.normal(&[3, 4]), g.normal(&[])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].add(&x[1])?.add(&x[2])?)
            })
        }
        "sub" => {
            let ins = [g.normal(&[3, 4]), g.normal(&[3, 4]), g.normal(&[])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].sub(&x[1])?.sub(&x[2])?)
            })
        }
        "mul" => {
            let ins = [g.normal(&[3, 4]), g.normal(&[3, 4]), g.normal(&[])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].mul(&x[1])?.mul(&x[2])?)
            })
        }
        "sigmoid" => {
            let ins = [g.normal(&[2, 5]).mul_scalar(3.0)?];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].sigmoid()?)
            })
        }
        "tanh" => {
            let ins = [g.normal(&[2, 5]).mul_scalar(2.0)?];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].tanh()?)
            })
        }
        "relu" => {
            let ins = [g.away_from_zero(&[2, 5], 0.05)];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].relu()?)
            })
        }
        "matmul" => {
            let ins = [g.normal(&[3, 4]), g.normal(&[4, 5])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].matmul(&x[1])?)
            })
        }
        "conv2d" => {
            let mut worst: Option<CheckResult> = None;
            let cases = [
                (7, 6, 3, 1, Padding::Same),
                (8, 7, 3, 2, Padding::Same),
                (9, 9, 5, 4, Padding::Same),
                (6, 5, 3, 1, Padding::Valid),
                (5, 5, 1, 1, Padding::Same),
            ];
            let mut evaluations = 0;
            for (h, w, k, stride, padding) in cases {
                let ins = [
                    g.normal(&[h, w, 2]),
                    g.normal(&[k, k, 2, 3]),
                    g.normal(&[3]),
                ];
                let r = check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                    ws(x[0].conv2d(&x[1], &x[2], stride, padding)?)
                })?;
                evaluations += r.evaluations;
                if worst
                    .as_ref()
                    .is_none_or(|w| r.max_rel_error > w.max_rel_error)
                {
                    worst = Some(r);
                }
            }
            let mut r = worst.expect("at least one case");
            r.evaluations = evaluations;
            Ok(r)
        }
        "upsample_nearest2x" => {
            let ins = [g.normal(&[3, 2, 2])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].upsample_nearest2x()?)
            })
        }
        "concat" => {
            let ins = [g.normal(&[2, 3, 1]), g.normal(&[2, 3, 2])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(Tensor::concat(x, 2)?)
            })
        }
        "slice" => {
            let ins = [g.normal(&[4, 3, 2])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].slice(1, 1, 2)?)
            })
        }
        "reshape" => {
            let ins = [g.normal(&[4, 3])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].reshape(&[2, 6])?)
            })
        }
        "global_avg_pool" => {
            let ins = [g.normal(&[3, 4, 2])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].global_avg_pool()?)
            })
        }
        "replicate_spatial" => {
            let ins = [g.normal(&[3])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                ws(x[0].replicate_spatial(2, 3)?)
            })
        }
        "sum" => {
            let ins = [g.normal(&[3, 4])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                x[0].mul(&x[0])?.sum()
            })
        }
        "mean" => {
            let ins = [g.normal(&[3, 4])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                x[0].mul(&x[0])?.mean()
            })
        }
        "lstm_cell" => {
            let mut store = ParamStore::new();
            let layer =
                LstmLayerParams::new(&mut store, &mut FanInUniform::new(seed), "lstm", 3, 4);
            let mut ins = store.values();
            ins.extend([g.normal(&[3]), g.normal(&[4]), g.normal(&[4])]);
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                let state = LstmState {
                    h: x[4].clone(),
                    c: x[5].clone(),
                };
                let s = lstm_cell_step(&layer, &x[..3], &x[3], &state)?;
                ws(Tensor::concat(&[s.h, s.c], 0)?)
            })
        }
        "video_loss" => {
            let ins = [g.normal(&[2, 3, 3, 2]), g.normal(&[2, 3, 3, 2])];
            check_function(name, &ins, step, tol, ErrorMetric::WorstInput, |x| {
                video_loss(&x[0], &x[1]).map_err(|e| TensorError::InvalidArgument {
                    op: "video_loss",
                    msg: e.to_string(),
                })
            })
        }
        other => Err(TensorError::InvalidArgument {
            op: "gradcheck",
            msg: format!("unknown check {other:?}"),
        }),
    }
}

/// End-to-end: gradient of the training loss with respect to every trainable
/// parameter of a freshly initialized model.
///
/// Biases are shifted by `U(-0.1, 0.1)` first. At initialization they are
/// zero, and a dead channel feeding a zero-bias ReLU sits exactly on the kink,
/// where the one-sided tape derivative and the difference quotient disagree.
pub fn check_model(config: ModelConfig, seed: u64, step: f64) -> Result<CheckResult> {
    let model = FlowChromaModel::new(config).map_err(|e| TensorError::InvalidArgument {
        op: "gradcheck",
        msg: e.to_string(),
    })?;
    let mut g = Inputs {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let (t, h, w) = (config.window, config.height, config.width);
    let lum = g.uniform(&[t, h, w, 1], 0.0, 1.0);
    let target = g.uniform(&[t, h, w, 2], -0.5, 0.5);
    let trainable: Vec<usize> = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.frozen)
        .map(|(i, _)| i)
        .collect();
    let base: Vec<Tensor> = model
        .params()
        .iter()
        .map(|p| {
            if p.name.ends_with("bias") && !p.frozen {
                p.value.add(&g.uniform(p.value.shape(), -0.1, 0.1))
            } else {
                Ok(p.value.clone())
            }
        })
        .collect::<Result<_>>()?;
    let inputs: Vec<Tensor> = trainable.iter().map(|&i| base[i].clone()).collect();
    let as_err = |e: crate::model::ModelError| TensorError::InvalidArgument {
        op: "model",
        msg: e.to_string(),
    };
    check_function(
        "model",
        &inputs,
        step,
        MODEL_TOLERANCE,
        ErrorMetric::Pooled,
        |x| {
            let mut params = base.clone();
            for (slot, v) in trainable.iter().zip(x) {
                params[*slot] = v.clone();
            }
            let pred = model.forward_with(&params, &lum).map_err(as_err)?;
            video_loss(&pred, &target).map_err(|e| TensorError::InvalidArgument {
                op: "model",
                msg: e.to_string(),
            })
        },
    )
}

pub fn run(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let selected: Vec<&str> = match &cfg.ops {
        None => CHECK_NAMES.to_vec(),
        Some(list) => {
            if let Some(bad) = list.iter().find(|n| !CHECK_NAMES.contains(&n.as_str())) {
                return Err(TensorError::InvalidArgument {
                    op: "gradcheck",
                    msg: format!("unknown check {bad:?}; known: {}", CHECK_NAMES.join(", ")),
                });
            }
            CHECK_NAMES
                .iter()
                .copied()
                .filter(|n| list.iter().any(|l| l == n))
                .collect()
        }
    };
    let results = selected
        .iter()
        .map(|&name| {
            if name == "model" {
                check_model(cfg.model_config, cfg.seed, cfg.step)
            } else {
                check_op(name, cfg.seed, cfg.step)
            }
        })
        .collect::<Result<_>>()?;
    Ok(GradCheckReport { results })
}
