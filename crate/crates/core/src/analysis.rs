//! Coherence statistics, threshold conditions, support-restricted contraction
//! factors and the resulting error bound for a recorded trajectory.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{support_of, Problem};
use crate::num::{default_max_iter, gram_lambda_max, norm1, norm2, spectral_norm_sym, sub, Matrix, Rng, StreamRole};
use crate::sketch::{build_sketched_system, make_gaussian_sketch, make_sketch, Sketch, SketchKind, SketchedSystem};
use crate::solver::{
    effective_lambda, gradient_into, run, shrink, Branch, ParamSchedule, Retain, Trajectory, Variant, Workspace,
};

/// Which Gram entries enter the coherence maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoherenceReading {
    /// All pairs `(i, j)`, including `i == j`.
    #[default]
    IncludeDiagonal,
    /// Only `i != j`.
    OffDiagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceStats {
    /// `max |A_iᵀ A_j|` over all pairs.
    pub mu_tilde: f64,
    /// Same maximum over `i != j` only.
    pub mu_offdiag: f64,
    /// `max |(SA)_iᵀ (SA)_j|`; absent without a sketch.
    pub xi_tilde: Option<f64>,
    pub xi_offdiag: Option<f64>,
    /// `max |A_ij|`.
    pub c: f64,
    /// `max |(SᵀSA)_ij|`; absent without a sketch.
    pub d: Option<f64>,
}

impl CoherenceStats {
    fn mu(&self, reading: CoherenceReading) -> f64 {
        match reading {
            CoherenceReading::IncludeDiagonal => self.mu_tilde,
            CoherenceReading::OffDiagonal => self.mu_offdiag,
        }
    }

    fn xi(&self, reading: CoherenceReading) -> Option<f64> {
        match reading {
            CoherenceReading::IncludeDiagonal => self.xi_tilde,
            CoherenceReading::OffDiagonal => self.xi_offdiag,
        }
    }

    /// `(coherence, entry maximum)` for one branch.
    fn for_branch(&self, branch: Branch, reading: CoherenceReading) -> Result<(f64, f64)> {
        match branch {
            Branch::Ogu => Ok((self.mu(reading), self.c)),
            Branch::Sgu => match (self.xi(reading), self.d) {
                (Some(xi), Some(d)) => Ok((xi, d)),
                _ => Err(Error::MissingSketch("coherence statistics for sketched iterations")),
            },
        }
    }
}

/// `(max over all pairs, max over i != j)` of `|G_ij|` for `G = MᵀM`.
fn gram_maxima(m: &Matrix) -> (f64, f64) {
    let g = m.gram();
    let n = g.rows();
    let mut all = 0.0_f64;
    let mut off = 0.0_f64;
    for i in 0..n {
        for (j, v) in g.row(i).iter().enumerate() {
            let v = v.abs();
            all = all.max(v);
            if i != j {
                off = off.max(v);
            }
        }
    }
    (all, off)
}

/// Coherence statistics of `A` and, when given, of the sketched branch.
///
/// `SᵀSA` is rebuilt from the sketch and the stored `SA`.
pub fn coherence_stats(a: &Matrix, sketched: Option<&SketchedSystem>) -> Result<CoherenceStats> {
    let (mu_tilde, mu_offdiag) = gram_maxima(a);
    let mut stats = CoherenceStats {
        mu_tilde,
        mu_offdiag,
        xi_tilde: None,
        xi_offdiag: None,
        c: a.max_abs(),
        d: None,
    };
    if let Some(sk) = sketched {
        check_len("coherence_stats (sketch rows)", a.rows(), sk.sketch().m())?;
        check_len("coherence_stats (columns)", a.cols(), sk.sa().cols())?;
        let (xi, xi_off) = gram_maxima(sk.sa());
        stats.xi_tilde = Some(xi);
        stats.xi_offdiag = Some(xi_off);
        stats.d = Some(sk.sketch().apply_transpose_mat(sk.sa())?.max_abs());
    }
    Ok(stats)
}

/// `max|A| / max|SᵀSA|` for one pair.
pub fn cd_ratio(a: &Matrix, sketch: &Sketch) -> Result<f64> {
    let sa = sketch.apply_mat(a)?;
    let d = sketch.apply_transpose_mat(&sa)?.max_abs();
    if d == 0.0 {
        return Err(Error::InvalidArgument("SᵀSA is identically zero".into()));
    }
    Ok(a.max_abs() / d)
}

/// Predicted `C/D` for a Gaussian sketch with `l` rows over `m` observations.
pub fn cd_ratio_predicted(m: usize, l: usize) -> f64 {
    (l as f64 / (l + m) as f64).sqrt()
}

/// Mean `C/D` over fresh `(A, S)` draws: `A` is `m x 2m` with N(0,1) entries, `S` Gaussian `l x m`.
pub fn cd_ratio_empirical(rng: &mut Rng, m: usize, l: usize, trials: usize) -> Result<f64> {
    if l == 0 || l > m {
        return Err(Error::InvalidArgument(format!("need 1 <= l <= m, got l={l}, m={m}")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let base = rng.next_u64();
    let ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut r = Rng::substream(base, i as u64, StreamRole::Diagnostic);
            let a = r.gaussian_matrix(m, 2 * m, 1.0);
            let s = make_gaussian_sketch(&mut r, l, m)?;
            cd_ratio(&a, &s)
        })
        .collect::<Result<_>>()?;
    Ok(ratios.iter().sum::<f64>() / trials as f64)
}

/// Spectral norm of `I − η A_Ωᵀ A_Ω`, with `A_Ω` the columns of `a` listed in `support`.
pub fn restricted_contraction(a: &Matrix, eta: f64, support: &[usize]) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("support must not be empty".into()));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
    }
    let sub_a = a.select_columns(support)?;
    let mut w = sub_a.gram();
    let k = w.rows();
    for i in 0..k {
        for j in 0..k {
            let id = if i == j { 1.0 } else { 0.0 };
            w.set(i, j, id - eta * w.get(i, j));
        }
    }
    // support blocks are small; a tight tolerance keeps the estimate at eigensolver accuracy
    spectral_norm_sym(&w, 1e-15, default_max_iter(k, k).max(10_000))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub reading: CoherenceReading,
    /// `‖x⋆‖₀`.
    pub s: usize,
    /// `‖w‖₁` of the realized noise.
    pub eps_w: f64,
    pub branches: Vec<Branch>,
    /// Right-hand side of the threshold condition at each iteration.
    pub lambda_required: Vec<f64>,
    /// Threshold actually applied (negative entries clamped to 0).
    pub lambda: Vec<f64>,
    pub holds: Vec<bool>,
    /// Sum of step sizes over dense iterations.
    pub eta_c_sum: f64,
    /// Sum of step sizes over sketched iterations.
    pub eta_d_sum: f64,
    pub lambda_sum: f64,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.holds.iter().all(|&h| h)
    }
}

fn check_inputs(trajectory: &Trajectory, schedule: &ParamSchedule, problem: &Problem) -> Result<()> {
    let t_len = schedule.len();
    check_len("trajectory branches vs schedule", t_len, trajectory.branches().len())?;
    check_len(
        "trajectory iterates (need a full trajectory)",
        t_len + 1,
        trajectory.iterates().len(),
    )?;
    check_len("iterate length", problem.n(), trajectory.iterates()[0].len())
}

pub fn check_assumptions(
    trajectory: &Trajectory,
    schedule: &ParamSchedule,
    problem: &Problem,
    stats: &CoherenceStats,
) -> Result<AssumptionReport> {
    check_assumptions_with(trajectory, schedule, problem, stats, CoherenceReading::default())
}

pub fn check_assumptions_with(
    trajectory: &Trajectory,
    schedule: &ParamSchedule,
    problem: &Problem,
    stats: &CoherenceStats,
    reading: CoherenceReading,
) -> Result<AssumptionReport> {
    check_inputs(trajectory, schedule, problem)?;
    let eps_w = norm1(problem.noise());
    let x_star = problem.x_star();
    let mut report = AssumptionReport {
        reading,
        s: problem.support().len(),
        eps_w,
        branches: trajectory.branches().to_vec(),
        lambda_required: Vec::with_capacity(schedule.len()),
        lambda: Vec::with_capacity(schedule.len()),
        holds: Vec::with_capacity(schedule.len()),
        eta_c_sum: 0.0,
        eta_d_sum: 0.0,
        lambda_sum: 0.0,
    };
    for (t, &branch) in trajectory.branches().iter().enumerate() {
        let eta = schedule.etas()[t];
        let lambda = effective_lambda(schedule.lambdas()[t]);
        let (coherence, entry_max) = stats.for_branch(branch, reading)?;
        let h1 = norm1(&sub(&trajectory.iterates()[t], x_star));
        let required = eta * (coherence * h1 + entry_max * eps_w);
        report.lambda_required.push(required);
        report.lambda.push(lambda);
        report.holds.push(lambda >= required);
        match branch {
            Branch::Ogu => report.eta_c_sum += eta,
            Branch::Sgu => report.eta_d_sum += eta,
        }
        report.lambda_sum += lambda;
    }
    Ok(report)
}

/// Right-hand side of the bound from its ingredients.
///
/// `weighted_eta` is `η̃_C·C + η̃_D·D`.
pub fn bound_value(contraction_product: f64, h1: f64, s: usize, eps_w: f64, weighted_eta: f64, lambda_sum: f64) -> f64 {
    let rs = (s as f64).sqrt();
    contraction_product * h1 + rs * eps_w * weighted_eta + rs * lambda_sum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrace {
    /// Contraction factor of iteration `t`, restricted to the support in use.
    pub rho: Vec<f64>,
    /// Running product of `rho`.
    pub cumulative: Vec<f64>,
    /// `‖x^(1) − x⋆‖`.
    pub h1: f64,
    /// `√s·ε_w(η̃_C·C + η̃_D·D) + √s·λ̃`.
    pub additive: f64,
    /// Bound on `‖x^(t+1) − x⋆‖`.
    pub bound: Vec<f64>,
    /// Measured `‖x^(t+1) − x⋆‖`.
    pub error: Vec<f64>,
    /// Set when `x^(t+1)` is nonzero outside the support of `x⋆`.
    pub leaked: Vec<bool>,
}

impl BoundTrace {
    pub fn holds(&self) -> bool {
        self.error.iter().zip(&self.bound).all(|(e, b)| e <= b)
    }

    pub fn any_leak(&self) -> bool {
        self.leaked.iter().any(|&l| l)
    }

    /// Columns `t,bound,error`, one row per iteration.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "t,bound,error")?;
        for (t, (b, e)) in self.bound.iter().zip(&self.error).enumerate() {
            writeln!(out, "{},{},{}", t + 1, b, e)?;
        }
        Ok(())
    }
}

fn union_support(parts: &[&[f64]]) -> Vec<usize> {
    let n = parts[0].len();
    (0..n).filter(|&i| parts.iter().any(|p| p[i] != 0.0)).collect()
}

/// Bound trace for a full trajectory of `problem` under `schedule`.
///
/// Contraction factors use the support of `x⋆` together with the supports of
/// the two iterates around each step; any off-support mass is reported in
/// `leaked` rather than hidden.
pub fn evaluate_bound(
    trajectory: &Trajectory,
    schedule: &ParamSchedule,
    problem: &Problem,
    sketched: Option<&SketchedSystem>,
    stats: &CoherenceStats,
) -> Result<BoundTrace> {
    check_inputs(trajectory, schedule, problem)?;
    let report = check_assumptions(trajectory, schedule, problem, stats)?;
    let x_star = problem.x_star();
    let iterates = trajectory.iterates();
    let star_support = support_of(x_star);
    let t_len = schedule.len();
    let mut rho = Vec::with_capacity(t_len);
    let mut cumulative = Vec::with_capacity(t_len);
    let mut error = Vec::with_capacity(t_len);
    let mut leaked = Vec::with_capacity(t_len);
    let mut product = 1.0;
    for (t, &branch) in trajectory.branches().iter().enumerate() {
        let a_t = match branch {
            Branch::Ogu => problem.a(),
            Branch::Sgu => sketched
                .ok_or(Error::MissingSketch("bound on sketched iterations"))?
                .sa(),
        };
        let support = union_support(&[x_star, &iterates[t], &iterates[t + 1]]);
        let factor = if support.is_empty() {
            0.0
        } else {
            restricted_contraction(a_t, schedule.etas()[t], &support)?
        };
        product *= factor;
        rho.push(factor);
        cumulative.push(product);
        error.push(norm2(&sub(&iterates[t + 1], x_star)));
        leaked.push(
            support_of(&iterates[t + 1])
                .iter()
                .any(|i| star_support.binary_search(i).is_err()),
        );
    }
    let weighted_eta = report.eta_c_sum * stats.c + report.eta_d_sum * stats.d.unwrap_or(0.0);
    if report.eta_d_sum > 0.0 && stats.d.is_none() {
        return Err(Error::MissingSketch("entry maximum of SᵀSA"));
    }
    let h1 = norm2(&sub(&iterates[0], x_star));
    let additive = bound_value(0.0, h1, report.s, report.eps_w, weighted_eta, report.lambda_sum);
    let bound = cumulative.iter().map(|p| p * h1 + additive).collect();
    Ok(BoundTrace {
        rho,
        cumulative,
        h1,
        additive,
        bound,
        error,
        leaked,
    })
}

/// Extremal squared singular values over random column subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipProxy {
    pub order: usize,
    pub trials: usize,
    pub min_sq: f64,
    pub max_sq: f64,
}

fn random_subset(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Smallest and largest eigenvalues of `A_Kᵀ A_K` over `trials` random column sets of size `order`.
///
/// A cheap stand-in for the restricted isometry constant, which is not computable in general.
pub fn rip_proxy(rng: &mut Rng, a: &Matrix, order: usize, trials: usize) -> Result<RipProxy> {
    if order == 0 || order > a.cols() || trials == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= order <= {} and trials >= 1, got order={order}, trials={trials}",
            a.cols()
        )));
    }
    let mut min_sq = f64::INFINITY;
    let mut max_sq = 0.0_f64;
    for _ in 0..trials {
        let cols = random_subset(rng, a.cols(), order);
        let g = a.select_columns(&cols)?.gram();
        let top = spectral_norm_sym(&g, 1e-14, 10_000)?;
        let mut shifted = g.clone();
        for i in 0..order {
            for j in 0..order {
                let id = if i == j { top } else { 0.0 };
                shifted.set(i, j, id - g.get(i, j));
            }
        }
        let bottom = top - spectral_norm_sym(&shifted, 1e-14, 10_000)?;
        min_sq = min_sq.min(bottom.max(0.0));
        max_sq = max_sq.max(top);
    }
    Ok(RipProxy {
        order,
        trials,
        min_sq,
        max_sq,
    })
}

/// Shape of a constructed instance on which the threshold condition holds by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSpec {
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub s: usize,
    pub period: usize,
    pub t: usize,
    pub sigma2: f64,
    pub sketch_kind: SketchKind,
    /// Factor above the required threshold.
    pub margin: f64,
    pub reading: CoherenceReading,
}

impl Default for DiagnosticSpec {
    fn default() -> Self {
        Self {
            m: 256,
            n: 64,
            l: 128,
            s: 2,
            period: 2,
            t: 20,
            sigma2: 1e-6,
            sketch_kind: SketchKind::Gaussian,
            margin: 1.05,
            reading: CoherenceReading::OffDiagonal,
        }
    }
}

pub struct DiagnosticInstance {
    pub problem: Problem,
    pub sketched: SketchedSystem,
    pub variant: Variant,
    pub schedule: ParamSchedule,
    pub stats: CoherenceStats,
    pub trajectory: Trajectory,
}

/// Builds an instance whose thresholds are chosen online as `margin` times the
/// required value, with `η_t = 1/σ_max²(A_t)` per branch.
///
/// The support entries of `x⋆` have magnitude in `[1, 2]` and random signs.
pub fn diagnostic_instance(seed: u64, spec: &DiagnosticSpec) -> Result<DiagnosticInstance> {
    if spec.s == 0 || spec.s > spec.n || spec.l == 0 || spec.l > spec.m || spec.t == 0 || spec.period == 0 {
        return Err(Error::InvalidArgument(format!("invalid diagnostic shape {spec:?}")));
    }
    if !(spec.margin >= 1.0) || !(spec.sigma2 >= 0.0) {
        return Err(Error::InvalidArgument("margin must be >= 1 and sigma2 >= 0".into()));
    }
    let mut rng = Rng::substream(seed, 0, StreamRole::Diagnostic);
    let a = rng.gaussian_matrix(spec.m, spec.n, 1.0);
    let mut x_star = vec![0.0; spec.n];
    for i in random_subset(&mut rng, spec.n, spec.s) {
        let sign = if rng.next_u64() >> 63 == 0 { 1.0 } else { -1.0 };
        x_star[i] = sign * (1.0 + rng.uniform());
    }
    let noise = rng.gaussian_vec(spec.m, spec.sigma2.sqrt());
    let problem = Problem::from_parts(std::sync::Arc::new(a), x_star, noise, spec.sigma2)?;
    let sketch = make_sketch(spec.sketch_kind, &mut rng, spec.l, spec.m)?;
    let sketched = build_sketched_system(std::sync::Arc::new(sketch), &problem)?;
    let stats = coherence_stats(problem.a(), Some(&sketched))?;
    let variant = Variant::Psista { period: spec.period };
    let eta_ogu = 1.0 / gram_lambda_max(problem.a())?.value;
    let eta_sgu = 1.0 / gram_lambda_max(sketched.sa())?.value;
    let eps_w = norm1(problem.noise());

    let mut etas = Vec::with_capacity(spec.t);
    let mut lambdas = Vec::with_capacity(spec.t);
    let mut x = vec![0.0; spec.n];
    let mut ws = Workspace::new(spec.m, spec.n);
    for t in 1..=spec.t {
        let branch = variant.branch(t);
        let (a_t, y_t, eta) = match branch {
            Branch::Ogu => (problem.a(), problem.y(), eta_ogu),
            Branch::Sgu => (sketched.sa(), sketched.sy(), eta_sgu),
        };
        let (coherence, entry_max) = stats.for_branch(branch, spec.reading)?;
        let lambda = spec.margin * eta * (coherence * norm1(&sub(&x, problem.x_star())) + entry_max * eps_w);
        gradient_into(a_t, y_t, &x, &mut ws.residual, &mut ws.grad);
        for (xi, gi) in x.iter_mut().zip(&ws.grad) {
            *xi = shrink(*xi - eta * gi, lambda);
        }
        etas.push(eta);
        lambdas.push(lambda);
    }
    let schedule = ParamSchedule::new(etas, lambdas)?;
    let trajectory = run(variant, &problem, Some(&sketched), &schedule, Retain::Full)?;
    Ok(DiagnosticInstance {
        problem,
        sketched,
        variant,
        schedule,
        stats,
        trajectory,
    })
}
