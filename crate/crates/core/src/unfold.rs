//! Deep unfolding: exact reverse-mode gradients through the unrolled
//! iterations, Adam, and incremental mini-batch training of `(η_t, λ_t)`.
//!
//! Each layer computes `z = x − η_t A_tᵀ(A_t x − y_t)` followed by
//! `x' = S_{λ_t}(z)`, where `(A_t, y_t)` is `(A, y)` on original-gradient
//! iterations and `(SA, Sy)` on sketched ones. The loss is `‖x^(T+1) − x*‖²`.
//! Backpropagation uses the local derivatives
//!
//! * `∂x'/∂z = 1{|z| > λ}` elementwise,
//! * `∂x'/∂λ = −sign(z) 1{|z| > λ}`,
//! * `∂z/∂η = −A_tᵀ(A_t x − y_t)`,
//! * `∂z/∂x = I − η A_tᵀA_t`.
//!
//! At a kink (`|z_i| == λ`) the zero subderivative is used.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{sample_signal, Problem, SystemSpec};
use crate::num::{Matrix, Rng, StreamRole};
use crate::sketch::{build_sketched_system, make_sketch, SketchedSystem};
use crate::solver::{
    default_schedule, effective_lambda, gradient_into, shrink, Branch, BranchOperators, ParamSchedule, Trajectory,
    Variant, Workspace,
};

/// Intermediates of one layer of the unrolled forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeStep {
    pub branch: Branch,
    /// Input iterate `x^(t)`.
    pub x: Vec<f64>,
    /// Gradient direction `A_tᵀ(A_t x^(t) − y_t)`.
    pub grad: Vec<f64>,
    /// Pre-threshold vector `z^(t)`.
    pub z: Vec<f64>,
    /// `|z_i| > λ_t` (after clamping).
    pub active: Vec<bool>,
    pub lambda_clamped: bool,
}

#[derive(Debug, Clone)]
pub struct Tape {
    steps: Vec<TapeStep>,
    a: Arc<Matrix>,
    sa: Option<Arc<Matrix>>,
    x_final: Vec<f64>,
    x_star: Vec<f64>,
}

impl Tape {
    pub fn steps(&self) -> &[TapeStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn operator(&self, branch: Branch) -> &Matrix {
        match branch {
            Branch::Ogu => &self.a,
            Branch::Sgu => self.sa.as_deref().expect("tape recorded an sgu step without SA"),
        }
    }
}

/// `dL/dη_t` and `dL/dλ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub etas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Gradients {
    pub fn zeros(t: usize) -> Self {
        Self {
            etas: vec![0.0; t],
            lambdas: vec![0.0; t],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.etas.clone();
        v.extend_from_slice(&self.lambdas);
        v
    }
}

/// Squared error of the final iterate.
pub fn squared_error(x: &[f64], x_star: &[f64]) -> f64 {
    x.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Forward pass recording everything [`backward`] needs.
///
/// The trajectory is bitwise identical to [`crate::solver::run`] on the same inputs.
pub fn forward_with_tape(
    variant: Variant,
    problem: &Problem,
    sketched: Option<&SketchedSystem>,
    schedule: &ParamSchedule,
) -> Result<(Trajectory, Tape, f64)> {
    let t_len = schedule.len();
    let ops = BranchOperators::resolve(&variant, problem, sketched, t_len)?;
    let n = problem.n();
    let mut ws = Workspace::new(problem.m(), n);
    let mut x = vec![0.0; n];
    let mut steps = Vec::with_capacity(t_len);
    let mut iterates = Vec::with_capacity(t_len + 1);
    iterates.push(x.clone());
    let mut branches = Vec::with_capacity(t_len);
    let mut clamped = Vec::new();

    for t in 1..=t_len {
        let branch = variant.branch(t);
        let (a, y) = ops.get(branch);
        let eta = schedule.etas()[t - 1];
        let raw = schedule.lambdas()[t - 1];
        let lambda = effective_lambda(raw);
        if raw < 0.0 {
            clamped.push(t);
        }
        gradient_into(a, y, &x, &mut ws.residual, &mut ws.grad);
        let z: Vec<f64> = x.iter().zip(&ws.grad).map(|(xi, gi)| *xi - eta * gi).collect();
        let active: Vec<bool> = z.iter().map(|v| v.abs() > lambda).collect();
        let next: Vec<f64> = z.iter().map(|&v| shrink(v, lambda)).collect();
        steps.push(TapeStep {
            branch,
            x: std::mem::replace(&mut x, next),
            grad: ws.grad.clone(),
            z,
            active,
            lambda_clamped: raw < 0.0,
        });
        iterates.push(x.clone());
        branches.push(branch);
    }

    let loss = squared_error(&x, problem.x_star());
    let tape = Tape {
        steps,
        a: problem.a_arc(),
        sa: sketched.map(SketchedSystem::sa_arc),
        x_final: x,
        x_star: problem.x_star().to_vec(),
    };
    let traj = Trajectory::from_parts(iterates, branches, clamped);
    Ok((traj, tape, loss))
}

/// Reverse-mode gradients of `‖x^(T+1) − x*‖²` with respect to every `η_t` and `λ_t`.
pub fn backward(tape: &Tape, schedule: &ParamSchedule) -> Result<Gradients> {
    check_len("backward: schedule vs tape", tape.len(), schedule.len())?;
    let n = tape.x_final.len();
    let mut grads = Gradients::zeros(tape.len());
    // adjoint of the current iterate
    let mut adj: Vec<f64> = tape
        .x_final
        .iter()
        .zip(&tape.x_star)
        .map(|(x, s)| 2.0 * (x - s))
        .collect();
    let mut dz = vec![0.0; n];
    let mut tmp = Vec::new();
    let mut back = vec![0.0; n];

    for (idx, step) in tape.steps.iter().enumerate().rev() {
        let eta = schedule.etas()[idx];
        let mut d_lambda = 0.0;
        let mut d_eta = 0.0;
        for i in 0..n {
            if step.active[i] {
                dz[i] = adj[i];
                d_lambda -= step.z[i].signum() * adj[i];
                d_eta -= adj[i] * step.grad[i];
            } else {
                dz[i] = 0.0;
            }
        }
        grads.lambdas[idx] = if step.lambda_clamped { 0.0 } else { d_lambda };
        grads.etas[idx] = d_eta;

        if idx == 0 {
            break;
        }
        // adj ← (I − η AᵀA) dz
        let a = tape.operator(step.branch);
        tmp.resize(a.rows(), 0.0);
        a.matvec_into(&dz, &mut tmp);
        a.matvec_t_into(&tmp, &mut back);
        for i in 0..n {
            adj[i] = dz[i] - eta * back[i];
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "AdamConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamConfig::default_eps")]
    pub eps: f64,
}

impl AdamConfig {
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }

    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    check_len("adam_step params", state.m.len(), params.len())?;
    check_len("adam_step grads", state.m.len(), grads.len())?;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub system: SystemSpec,
    /// Unrolled depth `T`.
    pub iterations: usize,
    pub batch_size: usize,
    pub inner_loops: usize,
    pub adam: AdamConfig,
    /// Grow the depth one layer per stage.
    pub incremental: bool,
    /// Only train the newest layer at each incremental stage.
    #[serde(default)]
    pub freeze_prefix: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.adam.validate()?;
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("iterations and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub stage: usize,
    pub inner: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub schedule: ParamSchedule,
    pub initial: ParamSchedule,
    pub log: Vec<LogEntry>,
}

/// One mini-batch: matrices and sketch drawn for inner loop `index`.
pub struct Batch {
    pub problems: Vec<Problem>,
    pub sketched: Vec<Option<SketchedSystem>>,
}

/// Draws the `(A, S)` pair and the `batch_size` samples of inner loop `index`.
pub fn draw_batch(system: &SystemSpec, seed: u64, index: u64, batch_size: usize, with_sketch: bool) -> Result<Batch> {
    let a = Arc::new(Rng::substream(seed, index, StreamRole::Matrix).gaussian_matrix(system.m, system.n, 1.0));
    let sketch = if with_sketch {
        let mut rng = Rng::substream(seed, index, StreamRole::Sketch);
        Some(Arc::new(make_sketch(system.sketch_kind, &mut rng, system.l, system.m)?))
    } else {
        None
    };
    let model = system.signal_model();
    let mut problems = Vec::with_capacity(batch_size);
    let mut sketched: Vec<Option<SketchedSystem>> = Vec::with_capacity(batch_size);
    for j in 0..batch_size {
        let idx = index * batch_size as u64 + j as u64;
        let x = sample_signal(&mut Rng::substream(seed, idx, StreamRole::Signal), &model)?;
        let w = Rng::substream(seed, idx, StreamRole::Noise).gaussian_vec(system.m, system.sigma2.sqrt());
        let p = Problem::from_parts(Arc::clone(&a), x, w, system.sigma2)?;
        let ss = match (&sketch, sketched.first()) {
            (None, _) => None,
            (Some(s), None) => Some(build_sketched_system(Arc::clone(s), &p)?),
            (Some(_), Some(first)) => Some(first.as_ref().expect("sketch present").with_observation(&p)?),
        };
        problems.push(p);
        sketched.push(ss);
    }
    Ok(Batch { problems, sketched })
}

/// Mean loss and mean gradient over a batch; per-sample passes run in parallel,
/// the reduction runs in sample order.
pub fn batch_gradient(variant: Variant, batch: &Batch, schedule: &ParamSchedule) -> Result<(f64, Gradients)> {
    let per_sample: Vec<Result<(f64, Gradients)>> = batch
        .problems
        .par_iter()
        .zip(batch.sketched.par_iter())
        .map(|(p, ss)| {
            let (_, tape, loss) = forward_with_tape(variant, p, ss.as_ref(), schedule)?;
            Ok((loss, backward(&tape, schedule)?))
        })
        .collect();
    let mut total = Gradients::zeros(schedule.len());
    let mut loss = 0.0;
    let count = per_sample.len() as f64;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        for (acc, v) in total.etas.iter_mut().zip(&g.etas) {
            *acc += v;
        }
        for (acc, v) in total.lambdas.iter_mut().zip(&g.lambdas) {
            *acc += v;
        }
    }
    total
        .etas
        .iter_mut()
        .chain(total.lambdas.iter_mut())
        .for_each(|v| *v /= count);
    Ok((loss / count, total))
}

/// Learns `(η_t, λ_t)` by incremental mini-batch training.
///
/// Every inner loop draws a fresh `(A, S)` and a fresh batch. Parameters start
/// from [`default_schedule`] on the first drawn `A`. With `incremental`, stage
/// `k` trains depth `k` (all `k` layers unless `freeze_prefix`), and Adam's
/// moments are reset at the start of every stage.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let system = &config.system;
    let t_max = config.iterations;
    let first_a = Rng::substream(config.seed, 0, StreamRole::Matrix).gaussian_matrix(system.m, system.n, 1.0);
    let initial = default_schedule(&first_a, t_max)?;
    log::info!(
        "initial step size and threshold {:.6e} (from the first sampled A)",
        initial.etas()[0]
    );
    let mut schedule = initial.clone();
    let mut log = Vec::new();
    let stages: Vec<usize> = if config.incremental {
        (1..=t_max).collect()
    } else {
        vec![t_max]
    };
    let mut counter = 0u64;

    for &depth in &stages {
        let trainable_from = if config.incremental && config.freeze_prefix {
            depth - 1
        } else {
            0
        };
        let width = depth - trainable_from;
        let mut adam = AdamState::new(2 * width, config.adam);
        let needs_sketch = (1..=depth).any(|t| system.variant.branch(t) == Branch::Sgu);

        for inner in 0..config.inner_loops {
            let batch = draw_batch(system, config.seed, counter, config.batch_size, needs_sketch)?;
            counter += 1;
            let current = schedule.prefix(depth);
            let (loss, grads) = batch_gradient(system.variant, &batch, &current)?;
            if !loss.is_finite() || grads.to_flat().iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    stage: depth,
                    inner,
                    loss,
                });
            }
            let mut params: Vec<f64> = current.etas()[trainable_from..]
                .iter()
                .chain(&current.lambdas()[trainable_from..])
                .copied()
                .collect();
            let flat_grads: Vec<f64> = grads.etas[trainable_from..]
                .iter()
                .chain(&grads.lambdas[trainable_from..])
                .copied()
                .collect();
            adam_step(&mut adam, &mut params, &flat_grads)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    stage: depth,
                    inner,
                    loss,
                });
            }
            schedule.etas_mut()[trainable_from..depth].copy_from_slice(&params[..width]);
            schedule.lambdas_mut()[trainable_from..depth].copy_from_slice(&params[width..]);
            log.push(LogEntry {
                stage: depth,
                inner,
                loss,
            });
        }
        log::debug!("stage {depth} done, last loss {:?}", log.last().map(|e| e.loss));
    }

    Ok(TrainOutcome { schedule, initial, log })
}
