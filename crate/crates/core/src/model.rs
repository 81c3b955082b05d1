//! Recovery instances, ensembles and MSE metrics.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::num::{Matrix, Rng, StreamRole};
use crate::sketch::{build_sketched_system, make_sketch, SketchKind};
use crate::solver::{run, ParamSchedule, Retain, Variant};

static NEXT_PROBLEM_ID: AtomicU64 = AtomicU64::new(1);

/// Bernoulli-Gaussian signal prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalModel {
    pub n: usize,
    pub p_nonzero: f64,
}

impl SignalModel {
    pub fn new(n: usize, p_nonzero: f64) -> Result<Self> {
        let model = Self { n, p_nonzero };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_nonzero) {
            return Err(Error::InvalidArgument(format!(
                "p_nonzero must be in [0,1], got {}",
                self.p_nonzero
            )));
        }
        Ok(())
    }
}

/// Each entry is zero with probability `1 - p_nonzero`, otherwise standard normal.
pub fn sample_signal(rng: &mut Rng, model: &SignalModel) -> Result<Vec<f64>> {
    model.validate()?;
    let mut x = vec![0.0; model.n];
    for xi in x.iter_mut() {
        if rng.bernoulli(model.p_nonzero)? {
            *xi = rng.standard_normal();
        }
    }
    Ok(x)
}

/// One recovery instance `y = A x* + w`.
#[derive(Debug, Clone)]
pub struct Problem {
    a: Arc<Matrix>,
    y: Vec<f64>,
    x_star: Vec<f64>,
    noise: Vec<f64>,
    sigma2: f64,
    id: u64,
}

impl Problem {
    /// Assembles `y` from its parts.
    pub fn from_parts(a: Arc<Matrix>, x_star: Vec<f64>, noise: Vec<f64>, sigma2: f64) -> Result<Self> {
        check_len("Problem x_star", a.cols(), x_star.len())?;
        check_len("Problem noise", a.rows(), noise.len())?;
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma2 must be >= 0, got {sigma2}")));
        }
        let mut y = a.matvec(&x_star)?;
        for (yi, wi) in y.iter_mut().zip(&noise) {
            *yi += wi;
        }
        Ok(Self {
            a,
            y,
            x_star,
            noise,
            sigma2,
            id: NEXT_PROBLEM_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    /// Same `A` and noise level, freshly drawn signal and noise.
    pub fn with_new_signal(&self, rng: &mut Rng, model: &SignalModel) -> Result<Self> {
        let x = sample_signal(rng, model)?;
        let w = rng.gaussian_vec(self.m(), self.sigma2.sqrt());
        Self::from_parts(Arc::clone(&self.a), x, w, self.sigma2)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn a_arc(&self) -> Arc<Matrix> {
        Arc::clone(&self.a)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Indices of the nonzero ground-truth coordinates.
    pub fn support(&self) -> Vec<usize> {
        support_of(&self.x_star)
    }
}

pub(crate) fn support_of(x: &[f64]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// `A` with i.i.d. `N(0,1)` entries, Bernoulli-Gaussian `x*`, noise `N(0, sigma2 I)`.
pub fn make_problem(rng: &mut Rng, m: usize, n: usize, sigma2: f64, model: &SignalModel) -> Result<Problem> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got m={m}, n={n}"
        )));
    }
    check_len("make_problem signal dimension", n, model.n)?;
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    let a = Arc::new(rng.gaussian_matrix(m, n, 1.0));
    let x = sample_signal(rng, model)?;
    let w = rng.gaussian_vec(m, sigma2.sqrt());
    Problem::from_parts(a, x, w, sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseMode {
    /// `‖x̂ − x*‖² / n`
    #[default]
    PerElement,
    /// `‖x̂ − x*‖²`
    Total,
}

impl MseMode {
    pub fn name(self) -> &'static str {
        match self {
            MseMode::PerElement => "per_element",
            MseMode::Total => "total",
        }
    }
}

impl fmt::Display for MseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_element" => Ok(MseMode::PerElement),
            "total" => Ok(MseMode::Total),
            other => Err(Error::InvalidArgument(format!("unknown mse mode {other:?}"))),
        }
    }
}

pub fn mse(x_hat: &[f64], x_star: &[f64], mode: MseMode) -> Result<f64> {
    check_len("mse", x_star.len(), x_hat.len())?;
    let sq: f64 = x_hat.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(match mode {
        MseMode::Total => sq,
        MseMode::PerElement => sq / x_star.len().max(1) as f64,
    })
}

/// Ensemble layout: `systems` independent `(A, S)` draws, each with `samples_per_system` signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub systems: usize,
    pub samples_per_system: usize,
    pub seed: u64,
}

impl Ensemble {
    pub fn validate(&self) -> Result<()> {
        if self.systems == 0 || self.samples_per_system == 0 {
            return Err(Error::InvalidArgument("ensemble counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything needed to draw instances and run one solver configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub variant: Variant,
    pub sketch_kind: SketchKind,
    pub sigma2: f64,
    pub p_nonzero: f64,
}

impl SystemSpec {
    pub fn signal_model(&self) -> SignalModel {
        SignalModel {
            n: self.n,
            p_nonzero: self.p_nonzero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("n and m must be positive".into()));
        }
        if self.variant.needs_sketch() && (self.l == 0 || self.l > self.m) {
            return Err(Error::InvalidArgument(format!(
                "sketch size must satisfy 1 <= l <= m, got l={}, m={}",
                self.l, self.m
            )));
        }
        self.variant.validate()?;
        if !(self.sigma2 >= 0.0) {
            return Err(Error::InvalidArgument("sigma2 must be >= 0".into()));
        }
        self.signal_model().validate()
    }
}

/// Per-iteration ensemble MSE for `x^(1) .. x^(T+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCurve {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mode: MseMode,
    pub count: usize,
}

impl MseCurve {
    pub fn final_mse(&self) -> f64 {
        *self.mean.last().expect("curve has at least one point")
    }

    /// Writes `t,mse_mean,mse_stderr,mode` rows, plus `ref_mse_mean,ratio` when a reference is given.
    pub fn write_csv(&self, out: &mut impl Write, reference: Option<&MseCurve>) -> Result<()> {
        if let Some(r) = reference {
            check_len("reference curve length", self.mean.len(), r.mean.len())?;
            writeln!(out, "t,mse_mean,mse_stderr,mode,ref_mse_mean,ratio")?;
        } else {
            writeln!(out, "t,mse_mean,mse_stderr,mode")?;
        }
        for (i, (m, s)) in self.mean.iter().zip(&self.stderr).enumerate() {
            write!(out, "{},{},{},{}", i + 1, m, s, self.mode)?;
            if let Some(r) = reference {
                let rm = r.mean[i];
                write!(out, ",{},{}", rm, m / rm)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Mean MSE per iteration over every `(system, sample)` pair.
///
/// Systems are processed in parallel and the per-pair curves are reduced in a
/// fixed order, so the result depends only on `(spec, schedule, ensemble)`.
pub fn evaluate_ensemble(
    spec: &SystemSpec,
    schedule: &ParamSchedule,
    ensemble: &Ensemble,
    mode: MseMode,
) -> Result<MseCurve> {
    spec.validate()?;
    ensemble.validate()?;
    let model = spec.signal_model();
    let per_system: Vec<Result<Vec<Vec<f64>>>> = (0..ensemble.systems)
        .into_par_iter()
        .map(|i| {
            let sys = i as u64;
            let mut rng_a = Rng::substream(ensemble.seed, sys, StreamRole::Matrix);
            let a = Arc::new(rng_a.gaussian_matrix(spec.m, spec.n, 1.0));
            let sketch = if spec.variant.needs_sketch() {
                let mut rng_s = Rng::substream(ensemble.seed, sys, StreamRole::Sketch);
                Some(Arc::new(make_sketch(spec.sketch_kind, &mut rng_s, spec.l, spec.m)?))
            } else {
                None
            };
            let mut base = None;
            let mut curves = Vec::with_capacity(ensemble.samples_per_system);
            for j in 0..ensemble.samples_per_system {
                let idx = sys * ensemble.samples_per_system as u64 + j as u64;
                let mut rng_x = Rng::substream(ensemble.seed, idx, StreamRole::Signal);
                let mut rng_w = Rng::substream(ensemble.seed, idx, StreamRole::Noise);
                let x = sample_signal(&mut rng_x, &model)?;
                let w = rng_w.gaussian_vec(spec.m, spec.sigma2.sqrt());
                let problem = Problem::from_parts(Arc::clone(&a), x, w, spec.sigma2)?;
                let sketched = match (&sketch, &base) {
                    (None, _) => None,
                    (Some(s), None) => {
                        let built = build_sketched_system(Arc::clone(s), &problem)?;
                        base = Some(built.clone());
                        Some(built)
                    }
                    (Some(_), Some(b)) => Some(crate::sketch::SketchedSystem::with_observation(b, &problem)?),
                };
                let traj = run(spec.variant, &problem, sketched.as_ref(), schedule, Retain::Full)?;
                let curve = traj
                    .iterates()
                    .iter()
                    .map(|x| mse(x, problem.x_star(), mode))
                    .collect::<Result<Vec<f64>>>()?;
                curves.push(curve);
            }
            Ok(curves)
        })
        .collect();

    let points = schedule.len() + 1;
    let mut sum = vec![0.0; points];
    let mut sum_sq = vec![0.0; points];
    let mut count = 0usize;
    for system in per_system {
        for curve in system? {
            for (t, v) in curve.iter().enumerate() {
                sum[t] += v;
                sum_sq[t] += v * v;
            }
            count += 1;
        }
    }
    let nf = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let stderr = sum_sq
        .iter()
        .zip(&mean)
        .map(|(s2, mu)| {
            if count < 2 {
                0.0
            } else {
                let var = ((s2 - nf * mu * mu) / (nf - 1.0)).max(0.0);
                (var / nf).sqrt()
            }
        })
        .collect();
    Ok(MseCurve {
        mean,
        stderr,
        mode,
        count,
    })
}
