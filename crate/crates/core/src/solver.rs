//! ISTA, sketched ISTA and periodic sketched ISTA with per-iteration parameters.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::Problem;
use crate::num::{gram_lambda_max, Matrix};
use crate::sketch::SketchedSystem;

/// Which gradient each iteration uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// Original gradient at every iteration.
    Ista,
    /// Sketched gradient at every iteration.
    SketchedIsta,
    /// Original gradient when `(t - 1) mod period == 0`, sketched otherwise.
    Psista { period: usize },
}

impl Variant {
    pub fn validate(&self) -> Result<()> {
        match self {
            Variant::Psista { period: 0 } => Err(Error::InvalidArgument("period must be >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn needs_sketch(&self) -> bool {
        match self {
            Variant::Ista => false,
            Variant::SketchedIsta => true,
            Variant::Psista { period } => *period > 1,
        }
    }

    /// Branch taken at 1-based iteration `t`.
    pub fn branch(&self, t: usize) -> Branch {
        match self {
            Variant::Ista => Branch::Ogu,
            Variant::SketchedIsta => Branch::Sgu,
            Variant::Psista { period } => {
                if is_ogu(t, *period) {
                    Branch::Ogu
                } else {
                    Branch::Sgu
                }
            }
        }
    }

    /// Period used for bookkeeping; sketched ISTA reports 0.
    pub fn period(&self) -> usize {
        match self {
            Variant::Ista => 1,
            Variant::SketchedIsta => 0,
            Variant::Psista { period } => *period,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Variant::Ista => "ista".into(),
            Variant::SketchedIsta => "sketched_ista".into(),
            Variant::Psista { period } => format!("psista(P={period})"),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// original gradient update
    Ogu,
    /// sketched gradient update
    Sgu,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Ogu => "ogu",
            Branch::Sgu => "sgu",
        }
    }
}

/// `true` iff `(t - 1) mod period == 0`. `t` is 1-based.
pub fn is_ogu(t: usize, period: usize) -> bool {
    debug_assert!(t >= 1 && period >= 1);
    (t - 1) % period == 0
}

/// Per-iteration step sizes and thresholds: the only learnable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSchedule {
    etas: Vec<f64>,
    lambdas: Vec<f64>,
}

impl ParamSchedule {
    pub fn new(etas: Vec<f64>, lambdas: Vec<f64>) -> Result<Self> {
        check_len("ParamSchedule lambdas", etas.len(), lambdas.len())?;
        if etas.iter().chain(&lambdas).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("schedule entries must be finite".into()));
        }
        Ok(Self { etas, lambdas })
    }

    pub fn constant(t: usize, eta: f64, lambda: f64) -> Self {
        Self {
            etas: vec![eta; t],
            lambdas: vec![lambda; t],
        }
    }

    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// First `k` iterations.
    pub fn prefix(&self, k: usize) -> ParamSchedule {
        let k = k.min(self.len());
        Self {
            etas: self.etas[..k].to_vec(),
            lambdas: self.lambdas[..k].to_vec(),
        }
    }

    /// Flattened `[η_1..η_T, λ_1..λ_T]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.etas.clone();
        v.extend_from_slice(&self.lambdas);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::InvalidArgument(
                "flattened schedule must have even length".into(),
            ));
        }
        let t = flat.len() / 2;
        Self::new(flat[..t].to_vec(), flat[t..].to_vec())
    }

    pub(crate) fn etas_mut(&mut self) -> &mut [f64] {
        &mut self.etas
    }

    pub(crate) fn lambdas_mut(&mut self) -> &mut [f64] {
        &mut self.lambdas
    }
}

/// `η_t = λ_t = 1/λ_max(AᵀA)` for every iteration.
pub fn default_schedule(a: &Matrix, t: usize) -> Result<ParamSchedule> {
    let est = gram_lambda_max(a)?;
    if est.degenerate || !(est.value > 0.0) {
        return Err(Error::InvalidArgument(
            "cannot derive a step size from a zero matrix".into(),
        ));
    }
    let v = 1.0 / est.value;
    Ok(ParamSchedule::constant(t, v, v))
}

/// Elementwise `S_λ(z)`.
pub fn soft_threshold(z: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {lambda}")));
    }
    Ok(z.iter().map(|&v| shrink(v, lambda)).collect())
}

#[inline]
pub(crate) fn shrink(v: f64, lambda: f64) -> f64 {
    if v >= lambda {
        v - lambda
    } else if v <= -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// `x − η Aᵀ(Ax − y)`.
pub fn ogu_step(x: &[f64], a: &Matrix, y: &[f64], eta: f64) -> Result<Vec<f64>> {
    gradient_step(x, a, y, eta, "ogu_step")
}

/// `x − η (SA)ᵀ((SA)x − Sy)`, computed from the cached `SA` and `Sy` only.
pub fn sgu_step(x: &[f64], sa: &Matrix, sy: &[f64], eta: f64) -> Result<Vec<f64>> {
    gradient_step(x, sa, sy, eta, "sgu_step")
}

fn gradient_step(x: &[f64], a: &Matrix, y: &[f64], eta: f64, ctx: &'static str) -> Result<Vec<f64>> {
    check_len(ctx, a.cols(), x.len())?;
    check_len(ctx, a.rows(), y.len())?;
    let mut ws = Workspace::new(a.rows(), a.cols());
    gradient_into(a, y, x, &mut ws.residual, &mut ws.grad);
    Ok(x.iter().zip(&ws.grad).map(|(xi, gi)| xi - eta * gi).collect())
}

/// `g = Aᵀ(Ax − y)`, the shared kernel of the solver and the gradient engine.
#[inline]
pub(crate) fn gradient_into(a: &Matrix, y: &[f64], x: &[f64], residual: &mut Vec<f64>, grad: &mut [f64]) {
    residual.resize(a.rows(), 0.0);
    a.matvec_into(x, residual);
    for (r, yi) in residual.iter_mut().zip(y) {
        *r -= yi;
    }
    a.matvec_t_into(residual, grad);
}

pub(crate) struct Workspace {
    pub residual: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Workspace {
    pub fn new(m: usize, n: usize) -> Self {
        Self {
            residual: Vec::with_capacity(m),
            grad: vec![0.0; n],
        }
    }
}

/// Whether to keep every iterate or only the last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retain {
    Full,
    FinalOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    iterates: Vec<Vec<f64>>,
    branches: Vec<Branch>,
    clamped: Vec<usize>,
}

impl Trajectory {
    pub(crate) fn from_parts(iterates: Vec<Vec<f64>>, branches: Vec<Branch>, clamped: Vec<usize>) -> Self {
        if !clamped.is_empty() {
            log::warn!("clamped negative thresholds to 0 at iterations {clamped:?}");
        }
        Self {
            iterates,
            branches,
            clamped,
        }
    }

    /// `x^(1) .. x^(T+1)` under [`Retain::Full`]; only `x^(T+1)` otherwise.
    pub fn iterates(&self) -> &[Vec<f64>] {
        &self.iterates
    }

    pub fn final_iterate(&self) -> &[f64] {
        self.iterates.last().expect("trajectory is never empty")
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// 1-based iterations whose negative threshold was clamped to zero.
    pub fn clamped(&self) -> &[usize] {
        &self.clamped
    }
}

/// Matrix and observation used by one branch.
#[derive(Clone, Copy)]
pub(crate) struct BranchOperators<'a> {
    pub ogu: (&'a Matrix, &'a [f64]),
    pub sgu: Option<(&'a Matrix, &'a [f64])>,
}

impl<'a> BranchOperators<'a> {
    pub fn resolve(
        variant: &Variant,
        problem: &'a Problem,
        sketched: Option<&'a SketchedSystem>,
        t_len: usize,
    ) -> Result<Self> {
        variant.validate()?;
        if t_len == 0 {
            return Err(Error::InvalidArgument(
                "schedule must have at least one iteration".into(),
            ));
        }
        let needs = (1..=t_len).any(|t| variant.branch(t) == Branch::Sgu);
        let sgu = match sketched {
            Some(s) => {
                check_len("sketched system columns", problem.n(), s.sa().cols())?;
                check_len("sketched system rows", s.sa().rows(), s.sy().len())?;
                if s.problem_id() != problem.id() {
                    return Err(Error::InvalidArgument(
                        "sketched system was built for a different problem".into(),
                    ));
                }
                Some((s.sa(), s.sy()))
            }
            None if needs => {
                return Err(Error::MissingSketch(match variant {
                    Variant::SketchedIsta => "sketched_ista",
                    _ => "psista",
                }))
            }
            None => None,
        };
        Ok(Self {
            ogu: (problem.a(), problem.y()),
            sgu,
        })
    }

    #[inline]
    pub fn get(&self, branch: Branch) -> (&'a Matrix, &'a [f64]) {
        match branch {
            Branch::Ogu => self.ogu,
            Branch::Sgu => self.sgu.expect("sgu operator resolved up front"),
        }
    }
}

/// Effective threshold after clamping negative learned values to zero.
#[inline]
pub(crate) fn effective_lambda(lambda: f64) -> f64 {
    lambda.max(0.0)
}

/// Runs `T = schedule.len()` iterations from `x^(1) = 0`.
pub fn run(
    variant: Variant,
    problem: &Problem,
    sketched: Option<&SketchedSystem>,
    schedule: &ParamSchedule,
    retain: Retain,
) -> Result<Trajectory> {
    run_with_branches(problem, sketched, schedule, retain, |t| variant.branch(t), &variant)
}

pub(crate) fn run_with_branches(
    problem: &Problem,
    sketched: Option<&SketchedSystem>,
    schedule: &ParamSchedule,
    retain: Retain,
    branch_of: impl Fn(usize) -> Branch,
    variant: &Variant,
) -> Result<Trajectory> {
    let t_len = schedule.len();
    let ops = BranchOperators::resolve(variant, problem, sketched, t_len)?;
    if (1..=t_len).any(|t| branch_of(t) == Branch::Sgu) && ops.sgu.is_none() {
        return Err(Error::MissingSketch("forced sgu"));
    }
    let n = problem.n();
    let mut x = vec![0.0; n];
    let mut iterates = Vec::with_capacity(if retain == Retain::Full { t_len + 1 } else { 1 });
    if retain == Retain::Full {
        iterates.push(x.clone());
    }
    let mut branches = Vec::with_capacity(t_len);
    let mut clamped = Vec::new();
    let mut ws = Workspace::new(problem.m(), n);

    for t in 1..=t_len {
        let branch = branch_of(t);
        let (a, y) = ops.get(branch);
        let eta = schedule.etas()[t - 1];
        let raw_lambda = schedule.lambdas()[t - 1];
        if raw_lambda < 0.0 {
            clamped.push(t);
        }
        let lambda = effective_lambda(raw_lambda);
        gradient_into(a, y, &x, &mut ws.residual, &mut ws.grad);
        for (xi, gi) in x.iter_mut().zip(&ws.grad) {
            *xi = shrink(*xi - eta * gi, lambda);
        }
        branches.push(branch);
        if retain == Retain::Full {
            iterates.push(x.clone());
        }
    }
    if retain == Retain::FinalOnly {
        iterates.push(x);
    }
    Ok(Trajectory::from_parts(iterates, branches, clamped))
}
