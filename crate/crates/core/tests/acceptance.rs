//! Acceptance suite. Runs every criterion in sequence (timings matter on a
//! single core) and prints one PASS/FAIL line each.
//!
//! `cargo test -p dupsista --test acceptance -- c4 c10` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dupsista::analysis::{
    cd_ratio_empirical, cd_ratio_predicted, check_assumptions, check_assumptions_with, diagnostic_instance,
    evaluate_bound, CoherenceReading, DiagnosticSpec,
};
use dupsista::cli::{bench, complexity_csv, train_params};
use dupsista::config::TrainingSpec;
use dupsista::model::{evaluate_ensemble, make_problem};
use dupsista::num::StreamRole;
use dupsista::sketch::{build_sketched_system, make_count_sketch, make_gaussian_sketch, SketchRepr};
use dupsista::solver::{default_schedule, run, Retain};
use dupsista::unfold::{backward, forward_with_tape, squared_error, AdamConfig, Tape};
use dupsista::{Branch, ExperimentConfig, Matrix, ParamSchedule, Rng, SignalModel, SketchKind, Variant};
use nalgebra::{DMatrix, SymmetricEigen};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// 1. complexity tables

const PERIODS: [u64; 5] = [1, 2, 3, 5, 8];

/// Reference cells for the two operation-count tables, row per period, in published formatting.
const LARGE_TABLE: [[&str; 4]; 5] = [
    [
        "83,988,480 (100.0%)",
        "83,988,480 (100.0%)",
        "83,988,480 (100.0%)",
        "83,988,480 (100.0%)",
    ],
    [
        "63,022,080 (75.0%)",
        "52,538,880 (62.6%)",
        "47,297,280 (56.3%)",
        "44,676,480 (53.2%)",
    ],
    [
        "56,732,160 (67.5%)",
        "43,104,000 (51.3%)",
        "36,289,920 (43.2%)",
        "32,882,880 (39.2%)",
    ],
    [
        "50,442,240 (60.1%)",
        "33,669,120 (40.1%)",
        "25,282,560 (30.1%)",
        "21,089,280 (25.1%)",
    ],
    [
        "47,297,280 (56.3%)",
        "28,951,680 (34.5%)",
        "19,778,880 (23.5%)",
        "15,192,480 (18.1%)",
    ],
];

const SMALL_TABLE: [[&str; 4]; 5] = [
    [
        "5,268,480 (100.0%)",
        "5,268,480 (100.0%)",
        "5,268,480 (100.0%)",
        "5,268,480 (100.0%)",
    ],
    [
        "3,959,040 (75.1%)",
        "3,304,320 (62.7%)",
        "2,976,960 (56.5%)",
        "2,813,280 (53.4%)",
    ],
    [
        "3,566,208 (67.7%)",
        "2,715,072 (51.5%)",
        "2,289,504 (43.5%)",
        "2,076,720 (39.4%)",
    ],
    [
        "3,173,376 (60.2%)",
        "2,125,824 (40.3%)",
        "1,602,048 (30.4%)",
        "1,340,160 (25.4%)",
    ],
    [
        "2,976,960 (56.5%)",
        "1,831,200 (34.8%)",
        "1,258,320 (23.9%)",
        "971,880 (18.4%)",
    ],
];

/// (count, percent) from a cell such as `63,022,080 (75.0%)`.
fn parse_cell(cell: &str) -> (u64, f64) {
    let (count, pct) = cell.split_once(" (").expect("cell has a percentage");
    let count = count.replace(',', "").parse().expect("integer count");
    let pct = pct.trim_end_matches("%)").parse().expect("percentage");
    (count, pct)
}

fn compare_table(n: u64, m: u64, ls: [u64; 4], expected: &[[&str; 4]; 5], mismatches: &mut Vec<String>) -> usize {
    let (csv, _) = complexity_csv(n, m, 40, &ls, &PERIODS).expect("complexity table");
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    let mut cells = 0;
    for (p, (row, exp_row)) in PERIODS.iter().zip(rows.iter().zip(expected)) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], p.to_string());
        for ((l, got), want) in ls.iter().zip(&fields[1..]).zip(exp_row) {
            let (gc, gp) = parse_cell(got);
            let (wc, wp) = parse_cell(want);
            cells += 1;
            if gc != wc || (gp - wp).abs() > 0.05 + 1e-9 {
                mismatches.push(format!("n={n} P={p} l={l}: got {got}, expected {want}"));
            }
        }
    }
    cells
}

fn c1_complexity() -> Verdict {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let cells = compare_table(1024, 512, [256, 128, 64, 32], &LARGE_TABLE, &mut mismatches)
        + compare_table(256, 128, [64, 32, 16, 8], &SMALL_TABLE, &mut mismatches);
    let elapsed = start.elapsed();
    let ok = mismatches.is_empty() && cells == 40 && elapsed < Duration::from_secs(1);
    verdict(
        ok,
        format!(
            "{cells} cells compared, {} mismatches {:?}, {}",
            mismatches.len(),
            mismatches,
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. P = 1 reduces to ISTA

fn c2_period_one() -> Verdict {
    let start = Instant::now();
    let mut equal = 0;
    for seed in 0..50u64 {
        let mut rng = Rng::new(seed);
        let (m, n) = (8 + (seed as usize % 5) * 8, 16 + (seed as usize % 7) * 8);
        let problem = make_problem(&mut rng, m, n, 0.01, &SignalModel::new(n, 0.1).unwrap()).unwrap();
        let sketch = make_gaussian_sketch(&mut rng, m / 2, m).unwrap();
        let sketched = build_sketched_system(Arc::new(sketch), &problem).unwrap();
        let base = default_schedule(problem.a(), 12).unwrap();
        let etas = base.etas().iter().map(|e| e * (0.5 + rng.uniform())).collect();
        let lambdas = base.lambdas().iter().map(|l| l * 3.0 * rng.uniform()).collect();
        let schedule = ParamSchedule::new(etas, lambdas).unwrap();
        let ista = run(Variant::Ista, &problem, None, &schedule, Retain::Full).unwrap();
        let p1 = run(
            Variant::Psista { period: 1 },
            &problem,
            Some(&sketched),
            &schedule,
            Retain::Full,
        )
        .unwrap();
        let bitwise = ista.iterates().len() == p1.iterates().len()
            && ista
                .iterates()
                .iter()
                .zip(p1.iterates())
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        if bitwise && ista.branches() == p1.branches() {
            equal += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        equal == 50 && elapsed < Duration::from_secs(10),
        format!("{equal}/50 trajectories bitwise identical, {}", secs(elapsed)),
    )
}

// ---------------------------------------------------------------------------
// 3. gradient against central differences

fn kink_margin(tape: &Tape, schedule: &ParamSchedule) -> f64 {
    tape.steps()
        .iter()
        .zip(schedule.lambdas())
        .flat_map(|(s, l)| s.z.iter().map(move |z| (z.abs() - l).abs()))
        .fold(f64::INFINITY, f64::min)
}

fn c3_gradient() -> Verdict {
    let start = Instant::now();
    let variant = Variant::Psista { period: 2 };
    let (m, n, l, t) = (8, 16, 4, 4);
    let h = 1e-6;
    let (mut checked, mut skipped, mut failures, mut floored) = (0, 0, 0, 0);
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    while checked < 100 {
        seed += 1;
        let mut rng = Rng::new(seed);
        let problem = make_problem(&mut rng, m, n, 0.01, &SignalModel::new(n, 0.25).unwrap()).unwrap();
        let sketch = make_gaussian_sketch(&mut rng, l, m).unwrap();
        let sketched = build_sketched_system(Arc::new(sketch), &problem).unwrap();
        let base = default_schedule(problem.a(), t).unwrap();
        let mut prng = Rng::new(seed.wrapping_mul(31));
        let etas = base.etas().iter().map(|e| e * (0.5 + prng.uniform())).collect();
        let lambdas = base
            .lambdas()
            .iter()
            .map(|v| v * (1.0 + 5.0 * prng.uniform()))
            .collect();
        let schedule = ParamSchedule::new(etas, lambdas).unwrap();
        let (_, tape, _) = forward_with_tape(variant, &problem, Some(&sketched), &schedule).unwrap();
        if kink_margin(&tape, &schedule) <= 1e-3 {
            skipped += 1;
            continue;
        }
        let grad = backward(&tape, &schedule).unwrap().to_flat();
        // the loss for the finite differences comes from the plain solver, not the tape
        let loss = |flat: &[f64]| {
            let s = ParamSchedule::from_flat(flat).unwrap();
            let traj = run(variant, &problem, Some(&sketched), &s, Retain::FinalOnly).unwrap();
            squared_error(traj.final_iterate(), problem.x_star())
        };
        let flat = schedule.to_flat();
        for k in 0..flat.len() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            let abs = (grad[k] - fd).abs();
            // both sides at roundoff level: relative error is meaningless there
            if abs < 1e-9 && fd.abs() < 1e-6 {
                floored += 1;
                continue;
            }
            let rel = abs / fd.abs();
            worst = worst.max(rel);
            if rel > 1e-4 {
                failures += 1;
            }
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    verdict(
        failures == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{checked} kink-free instances ({skipped} skipped near a kink), max rel err {worst:.2e}, \
             {floored} parameters at roundoff floor, {failures} failures, {}",
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 4-6. trained recovery on the small system

const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];

fn small_config(variant: Variant, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        iterations: 15,
        seed,
        ..Default::default()
    };
    cfg.system.variant = variant;
    cfg.training = Some(TrainingSpec {
        batch_size: 50,
        inner_loops: 30,
        adam: AdamConfig::with_learning_rate(1e-4),
        incremental: true,
        freeze_prefix: false,
    });
    cfg.ensemble.systems = 10;
    cfg.ensemble.samples_per_system = 20;
    cfg
}

struct Trained {
    schedule: ParamSchedule,
    final_mse: f64,
}

fn train_and_eval(variant: Variant, seed: u64) -> Trained {
    let cfg = small_config(variant, seed);
    let (params, _) = train_params(&cfg).expect("training");
    let schedule = params.schedule().unwrap();
    let curve = evaluate_ensemble(&cfg.system, &schedule, &cfg.eval_ensemble(), cfg.mse_mode).unwrap();
    Trained {
        schedule,
        final_mse: curve.final_mse(),
    }
}

fn branch_means(schedule: &ParamSchedule, period: usize) -> (f64, f64) {
    let variant = Variant::Psista { period };
    let (mut ogu, mut sgu) = (Vec::new(), Vec::new());
    for (i, &eta) in schedule.etas().iter().enumerate() {
        match variant.branch(i + 1) {
            Branch::Ogu => ogu.push(eta),
            Branch::Sgu => sgu.push(eta),
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&ogu), mean(&sgu))
}

struct SeedRun {
    seed: u64,
    ista: f64,
    p2: f64,
    p8: f64,
    /// Mean η on dense and on sketched iterations.
    eta_p2: (f64, f64),
    eta_p3: (f64, f64),
}

struct SmallRuns {
    per_seed: Vec<SeedRun>,
    ista_p2_time: Duration,
}

fn small_runs() -> SmallRuns {
    let mut per_seed = Vec::new();
    let mut ista_p2_time = Duration::ZERO;
    for seed in TRAIN_SEEDS {
        let start = Instant::now();
        let ista = train_and_eval(Variant::Ista, seed);
        let p2 = train_and_eval(Variant::Psista { period: 2 }, seed);
        ista_p2_time += start.elapsed();
        let p3 = train_and_eval(Variant::Psista { period: 3 }, seed);
        let p8 = train_and_eval(Variant::Psista { period: 8 }, seed);
        eprintln!(
            "  seed {seed}: final MSE ista {:.4e}, P=2 {:.4e}, P=3 {:.4e}, P=8 {:.4e}",
            ista.final_mse, p2.final_mse, p3.final_mse, p8.final_mse
        );
        per_seed.push(SeedRun {
            seed,
            ista: ista.final_mse,
            p2: p2.final_mse,
            p8: p8.final_mse,
            eta_p2: branch_means(&p2.schedule, 2),
            eta_p3: branch_means(&p3.schedule, 3),
        });
    }
    SmallRuns { per_seed, ista_p2_time }
}

fn c4_recovery(runs: &SmallRuns) -> Verdict {
    let ratios: Vec<String> = runs.per_seed.iter().map(|r| format!("{:.3}", r.p2 / r.ista)).collect();
    let ok = runs.per_seed.iter().all(|r| r.p2 <= 2.0 * r.ista) && runs.ista_p2_time < Duration::from_secs(900);
    verdict(
        ok,
        format!(
            "MSE(P=2)/MSE(ISTA) per seed {ratios:?} (limit 2), training+eval {}",
            secs(runs.ista_p2_time)
        ),
    )
}

fn c5_period_trend(runs: &SmallRuns) -> Verdict {
    let ratios: Vec<String> = runs.per_seed.iter().map(|r| format!("{:.3}", r.p8 / r.p2)).collect();
    verdict(
        runs.per_seed.iter().all(|r| r.p8 >= r.p2),
        format!("MSE(P=8)/MSE(P=2) per seed {ratios:?} (need >= 1)"),
    )
}

fn c6_parameter_structure(runs: &SmallRuns) -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for r in &runs.per_seed {
        for (p, (ogu, sgu)) in [(2, r.eta_p2), (3, r.eta_p3)] {
            ok &= ogu > sgu;
            parts.push(format!("seed {} P={p}: {ogu:.4e} vs {sgu:.4e}", r.seed));
        }
    }
    verdict(ok, format!("mean eta dense vs sketched: {}", parts.join("; ")))
}

// ---------------------------------------------------------------------------
// 7. C/D ratio

fn c7_cd_ratio() -> Verdict {
    let start = Instant::now();
    let mut rng = Rng::new(7);
    let m = 512;
    let mut parts = Vec::new();
    let mut ok = true;
    for (l, target) in [
        (256, 0.577),
        (128, cd_ratio_predicted(512, 128)),
        (64, cd_ratio_predicted(512, 64)),
    ] {
        let got = cd_ratio_empirical(&mut rng, m, l, 50).unwrap();
        let rel = (got - target).abs() / target;
        ok &= rel <= 0.2;
        parts.push(format!(
            "l={l}: {got:.3} vs {target:.3} ({:+.1}%)",
            100.0 * (got - target) / target
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    verdict(ok, format!("{}, {}", parts.join("; "), secs(elapsed)))
}

// ---------------------------------------------------------------------------
// 8. error bound on constructed instances

fn to_na(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

fn max_eig_abs(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// Largest |off-diagonal| and |diagonal| entries of the Gram matrix.
fn gram_extrema(a: &DMatrix<f64>) -> (f64, f64) {
    let g = a.transpose() * a;
    let (mut off, mut diag): (f64, f64) = (0.0, 0.0);
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i == j {
                diag = diag.max(g[(i, j)].abs());
            } else {
                off = off.max(g[(i, j)].abs());
            }
        }
    }
    (off, diag)
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Checks one instance against a bound rebuilt from dense eigen-decompositions.
fn check_bound_instance(seed: u64, reading: CoherenceReading) -> Result<(), String> {
    let spec = DiagnosticSpec {
        reading,
        ..Default::default()
    };
    let inst = diagnostic_instance(seed, &spec).map_err(|e| e.to_string())?;
    let (problem, sketched, schedule, traj) = (&inst.problem, &inst.sketched, &inst.schedule, &inst.trajectory);
    let a = to_na(problem.a());
    let sa = to_na(sketched.sa());
    let s_dense = to_na(&sketched.sketch().to_dense());
    let (mu_off, mu_diag) = gram_extrema(&a);
    let (xi_off, xi_diag) = gram_extrema(&sa);
    let (mu, xi) = match reading {
        CoherenceReading::IncludeDiagonal => (mu_off.max(mu_diag), xi_off.max(xi_diag)),
        CoherenceReading::OffDiagonal => (mu_off, xi_off),
    };
    let c = a.amax();
    let d = (s_dense.transpose() * &sa).amax();
    let sig_a = max_eig_abs(a.transpose() * &a);
    let sig_sa = max_eig_abs(sa.transpose() * &sa);
    let x_star = problem.x_star();
    let eps_w = l1(problem.noise());
    let s = x_star.iter().filter(|v| **v != 0.0).count();
    let iterates = traj.iterates();

    let report = check_assumptions_with(traj, schedule, problem, &inst.stats, reading).map_err(|e| e.to_string())?;
    if !report.all_hold() {
        return Err(format!("seed {seed}: threshold condition fails at {:?}", report.holds));
    }
    if reading == CoherenceReading::IncludeDiagonal
        && !check_assumptions(traj, schedule, problem, &inst.stats)
            .unwrap()
            .all_hold()
    {
        return Err(format!("seed {seed}: default reading check fails"));
    }

    let (mut eta_c, mut eta_d, mut lambda_sum, mut product) = (0.0, 0.0, 0.0, 1.0);
    let mut oracle_bound = Vec::new();
    for (t, &branch) in traj.branches().iter().enumerate() {
        let eta = schedule.etas()[t];
        let lambda = schedule.lambdas()[t];
        let (mat, sig, coh, ent) = match branch {
            Branch::Ogu => (&a, sig_a, mu, c),
            Branch::Sgu => (&sa, sig_sa, xi, d),
        };
        if !(eta > 0.0 && eta * sig < 2.0) {
            return Err(format!("seed {seed} t={}: eta*sigma_max^2 = {}", t + 1, eta * sig));
        }
        let required = eta * (coh * l1(&dupsista::num::sub(&iterates[t], x_star)) + ent * eps_w);
        if lambda < required {
            return Err(format!(
                "seed {seed} t={}: lambda {lambda} < required {required}",
                t + 1
            ));
        }
        match branch {
            Branch::Ogu => eta_c += eta,
            Branch::Sgu => eta_d += eta,
        }
        lambda_sum += lambda;
        let omega: Vec<usize> = (0..x_star.len())
            .filter(|&i| x_star[i] != 0.0 || iterates[t][i] != 0.0 || iterates[t + 1][i] != 0.0)
            .collect();
        let sub_cols = mat.select_columns(&omega);
        let w = DMatrix::identity(omega.len(), omega.len()) - eta * (sub_cols.transpose() * &sub_cols);
        product *= max_eig_abs(w);
        oracle_bound.push(product);
        for (i, v) in iterates[t + 1].iter().enumerate() {
            if x_star[i] == 0.0 && *v != 0.0 {
                return Err(format!("seed {seed} t={}: off-support coordinate {i} = {v}", t + 1));
            }
        }
    }
    let h1 = l2_dist(&iterates[0], x_star);
    let rs = (s as f64).sqrt();
    let additive = rs * eps_w * (eta_c * c + eta_d * d) + rs * lambda_sum;
    let trace = evaluate_bound(traj, schedule, problem, Some(sketched), &inst.stats).map_err(|e| e.to_string())?;
    for (t, p) in oracle_bound.iter().enumerate() {
        let bound = p * h1 + additive;
        let err = l2_dist(&iterates[t + 1], x_star);
        if err > bound {
            return Err(format!("seed {seed} t={}: error {err} > bound {bound}", t + 1));
        }
        if (trace.bound[t] - bound).abs() > 1e-8 * bound {
            return Err(format!(
                "seed {seed} t={}: library bound {} vs oracle {bound}",
                t + 1,
                trace.bound[t]
            ));
        }
    }
    Ok(())
}

fn c8_bound() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut passed = 0;
    for reading in [CoherenceReading::OffDiagonal, CoherenceReading::IncludeDiagonal] {
        for seed in 1..=20 {
            match check_bound_instance(seed, reading) {
                Ok(()) => passed += 1,
                Err(e) => failures.push(format!("{reading:?}: {e}")),
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{passed}/40 instances (20 per coherence reading) satisfy assumptions, step range, bound and off-support zeros {:?}, {}",
            failures,
            secs(start.elapsed())
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. sketch structure

fn c9_sketches() -> Verdict {
    let mut rng = Rng::substream(9, 0, StreamRole::Sketch);
    let mut bad_count = 0;
    let mut draws = 0;
    for (l, m) in [(1, 1), (4, 16), (64, 128), (128, 512), (256, 512), (7, 7)] {
        for _ in 0..20 {
            draws += 1;
            let sk = make_count_sketch(&mut rng, l, m).unwrap();
            assert!(matches!(sk.repr(), SketchRepr::Count { .. }));
            let dense = to_na(&sk.to_dense());
            let columns_ok = (0..m).all(|j| {
                let col = dense.column(j);
                col.iter().filter(|v| **v != 0.0).count() == 1 && col.iter().all(|v| *v == 0.0 || v.abs() == 1.0)
            });
            let gram = dense.transpose() * &dense;
            let diag_ok = (0..m).all(|j| gram[(j, j)] == 1.0);
            if !(columns_ok && diag_ok) {
                bad_count += 1;
            }
        }
    }
    let (l, m) = (64, 2048);
    let g = make_gaussian_sketch(&mut rng, l, m).unwrap().to_dense();
    let entries = g.as_slice();
    let count = entries.len() as f64;
    let mean = entries.iter().sum::<f64>() / count;
    let var = entries.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
    let rel = (var * l as f64 - 1.0).abs();
    verdict(
        bad_count == 0 && entries.len() >= 100_000 && rel <= 0.05,
        format!(
            "{}/{draws} count sketches well formed; gaussian variance {var:.5e} vs {:.5e} ({:+.2}%) over {} entries",
            draws - bad_count,
            1.0 / l as f64,
            100.0 * (var * l as f64 - 1.0),
            entries.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. wall clock

fn c10_timing() -> Verdict {
    let cfg = ExperimentConfig::default();
    let mut system = cfg.system;
    system.n = 1024;
    system.m = 512;
    system.l = 256;
    system.variant = Variant::Psista { period: 2 };
    system.sketch_kind = SketchKind::Gaussian;
    let rows = bench(&system, &[100], 50, 10).unwrap();
    let r = &rows[0];
    verdict(
        r.ratio <= 0.9,
        format!(
            "T=100, 50 runs: psista {:.2} ms, ista {:.2} ms, ratio {:.3} (limit 0.9)",
            1e3 * r.time_variant,
            1e3 * r.time_ista,
            r.ratio
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. determinism of the command line

fn dupsista(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dupsista"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn run_pipeline(config: &Path, dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let params = dir.join("params.json");
    let eval = dir.join("eval.csv");
    let (c, p, e) = (
        config.to_str().unwrap(),
        params.to_str().unwrap(),
        eval.to_str().unwrap(),
    );
    dupsista(&["train", "--config", c, "--out", p])?;
    dupsista(&["eval", "--config", c, "--params", p, "--out", e])?;
    let mut files = Vec::new();
    for name in ["params.json", "params.log.csv", "eval.csv"] {
        let bytes = std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        files.push((name.to_string(), bytes));
    }
    Ok(files)
}

fn c11_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(Variant::Psista { period: 2 }, 5);
    cfg.system.n = 64;
    cfg.system.m = 32;
    cfg.system.l = 16;
    cfg.iterations = 6;
    if let Some(tr) = cfg.training.as_mut() {
        tr.batch_size = 8;
        tr.inner_loops = 5;
    }
    cfg.ensemble.systems = 3;
    cfg.ensemble.samples_per_system = 5;
    let config = tmp.path().join("config.json");
    std::fs::write(&config, cfg.to_json().unwrap()).unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|d| {
            let dir = tmp.path().join(d);
            std::fs::create_dir_all(&dir).unwrap();
            run_pipeline(&config, &dir)
        })
        .collect();
    match (&runs[0], &runs[1]) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&str> = a
                .iter()
                .zip(b)
                .filter(|(x, y)| x.1 != y.1)
                .map(|(x, _)| x.0.as_str())
                .collect();
            let bytes: usize = a.iter().map(|f| f.1.len()).sum();
            verdict(
                differing.is_empty(),
                format!(
                    "two train+eval runs, {} files ({bytes} bytes), differing: {differing:?}",
                    a.len()
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => verdict(false, format!("command failed: {e}")),
    }
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let selected = |id: &str| filters.is_empty() || filters.iter().any(|f| f == id);

    let mut results: Vec<(&str, &str, Verdict)> = Vec::new();
    let mut record = |id: &'static str, name: &'static str, f: &dyn Fn() -> Verdict| {
        if !selected(id) {
            return;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!(
            "{} {id} {name}: {} [{}]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            secs(start.elapsed())
        );
        results.push((id, name, v));
    };

    record("c1", "complexity tables", &c1_complexity);
    record("c2", "P=1 equals ISTA", &c2_period_one);
    record("c3", "gradient vs finite differences", &c3_gradient);
    if ["c4", "c5", "c6"].iter().any(|id| selected(id)) {
        let runs = catch_unwind(small_runs).ok();
        let with_runs = |f: fn(&SmallRuns) -> Verdict| -> Verdict {
            match &runs {
                Some(r) => f(r),
                None => verdict(false, "training panicked"),
            }
        };
        record("c4", "desk-scale recovery within 2x ISTA", &|| with_runs(c4_recovery));
        record("c5", "MSE grows from P=2 to P=8", &|| with_runs(c5_period_trend));
        record("c6", "dense steps larger than sketched steps", &|| {
            with_runs(c6_parameter_structure)
        });
    }
    record("c7", "C/D ratio", &c7_cd_ratio);
    record("c8", "error bound on constructed instances", &c8_bound);
    record("c9", "sketch structure", &c9_sketches);
    record("c10", "wall-clock ratio", &c10_timing);
    record("c11", "determinism of train and eval", &c11_determinism);

    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "{} criteria run, {} passed, {failed} failed",
        results.len(),
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
