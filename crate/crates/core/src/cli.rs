//! Command-line front end: config generation, training, evaluation,
//! complexity tables, analysis dumps and timing.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{
    cd_ratio_empirical, cd_ratio_predicted, check_assumptions, check_assumptions_with, coherence_stats,
    diagnostic_instance, evaluate_bound, rip_proxy, AssumptionReport, BoundTrace, CoherenceStats, DiagnosticSpec,
    RipProxy,
};
use crate::complexity::{complexity_table, write_table_csv, ComplexityReport};
use crate::config::{log_csv, short_hash, ExperimentConfig, Meta, ParamsFile};
use crate::error::{Error, Result};
use crate::model::{evaluate_ensemble, make_problem, MseCurve, SystemSpec};
use crate::num::{derive_seed, Rng, StreamRole};
use crate::sketch::{build_sketched_system, make_sketch};
use crate::solver::{default_schedule, run, Branch, ParamSchedule, Retain, Variant};
use crate::unfold::train;

#[derive(Debug, Parser)]
#[command(
    name = "dupsista",
    version,
    about = "Periodic sketched ISTA with learned step sizes and thresholds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a documented default config.
    GenConfig {
        #[arg(long, default_value = "config.json")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learn per-iteration step sizes and thresholds.
    Train(Common),
    /// Per-iteration MSE of a parameter file over the evaluation ensemble.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
        /// Second parameter file evaluated on the same ensemble, adding a ratio column.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Also write a gnuplot script next to the CSV.
        #[arg(long)]
        plot_script: bool,
    },
    /// Operation-count table, one row per period and one column per sketch size.
    Complexity {
        #[arg(long, default_value_t = 1024)]
        n: u64,
        #[arg(long, default_value_t = 512)]
        m: u64,
        #[arg(long = "t", default_value_t = 40)]
        t: u64,
        #[arg(long, value_delimiter = ',', default_value = "256,128,64,32")]
        l_list: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,8")]
        p_list: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learned parameters by branch, coherence statistics, C/D ratio and an error-bound trace.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
        /// Trials for the empirical C/D ratio.
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Wall-clock solve time of ISTA against the configured variant.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100")]
        t_list: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        repeats: usize,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_path(&self, cfg: &ExperimentConfig, default_name: &str) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| Path::new(&cfg.outputs.dir).join(default_name))
    }
}

/// `dir/stem.suffix` next to `path`, e.g. `params.json` to `params.log.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn to_pretty_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn cmd_gen_config(out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = ExperimentConfig::documented();
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    write_file(out, &cfg.to_json()?)
}

/// Parameters and optional training log for a config.
pub fn train_params(cfg: &ExperimentConfig) -> Result<(ParamsFile, Option<String>)> {
    cfg.validate()?;
    match cfg.train_config() {
        Some(tc) => {
            let outcome = train(&tc)?;
            let params = ParamsFile::new(cfg, &outcome.schedule, Some(tc), Some(&outcome.log));
            let log = format!("{}\n{}", cfg.meta().csv_comment(), log_csv(&outcome.log));
            Ok((params, Some(log)))
        }
        None => {
            let first_a =
                Rng::substream(cfg.seed, 0, StreamRole::Matrix).gaussian_matrix(cfg.system.m, cfg.system.n, 1.0);
            let schedule = default_schedule(&first_a, cfg.iterations)?;
            Ok((ParamsFile::new(cfg, &schedule, None, None), None))
        }
    }
}

pub fn cmd_train(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_path(&cfg, "params.json");
    let (params, log) = train_params(&cfg)?;
    write_file(&out, &params.to_json()?)?;
    if let Some(log) = log {
        write_file(&sibling(&out, "log.csv"), &log)?;
    }
    Ok(())
}

/// MSE curve of `params` (and of `reference`) on the config's evaluation ensemble, as CSV text.
pub fn eval_csv(cfg: &ExperimentConfig, params: &ParamsFile, reference: Option<&ParamsFile>) -> Result<String> {
    cfg.validate()?;
    params.check_compatible(cfg, true)?;
    let ensemble = cfg.eval_ensemble();
    let curve = evaluate_ensemble(&params.system(cfg), &params.schedule()?, &ensemble, cfg.mse_mode)?;
    let ref_curve: Option<MseCurve> = match reference {
        Some(r) => {
            r.check_compatible(cfg, false)?;
            Some(evaluate_ensemble(
                &r.system(cfg),
                &r.schedule()?,
                &ensemble,
                cfg.mse_mode,
            )?)
        }
        None => None,
    };
    let mut buf = Vec::new();
    curve.write_csv(&mut buf, ref_curve.as_ref())?;
    let body = String::from_utf8(buf).expect("csv is utf-8");
    Ok(format!("{}\n{body}", cfg.meta().csv_comment()))
}

fn plot_script(csv: &Path, with_reference: bool) -> String {
    let name = csv
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut s = format!(
        "set datafile separator ','\nset datafile commentschars '#'\nset key autotitle columnhead\n\
         set logscale y\nset xlabel 't'\nset ylabel 'MSE'\nplot '{name}' using 1:2 with linespoints"
    );
    if with_reference {
        s.push_str(&format!(
            ", '{name}' using 1:5 with lines title 'reference', '{name}' using 1:($5*2) with lines dashtype 2 title '2x reference'"
        ));
    }
    s.push('\n');
    s
}

pub fn cmd_eval(common: &Common, params: &Path, reference: Option<&Path>, plot: bool) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_path(&cfg, "mse.csv");
    let p = ParamsFile::load(params)?;
    let r = reference.map(ParamsFile::load).transpose()?;
    write_file(&out, &eval_csv(&cfg, &p, r.as_ref())?)?;
    if plot {
        write_file(&sibling(&out, "gp"), &plot_script(&out, r.is_some()))?;
    }
    Ok(())
}

pub fn complexity_csv(
    n: u64,
    m: u64,
    t: u64,
    ls: &[u64],
    periods: &[u64],
) -> Result<(String, Vec<Vec<ComplexityReport>>)> {
    let table = complexity_table(n, m, t, ls, periods)?;
    let args = serde_json::json!({ "n": n, "m": m, "T": t, "l": ls, "P": periods });
    let meta = Meta::new(short_hash(args.to_string().as_bytes()), 0);
    let mut buf = Vec::new();
    write_table_csv(&mut buf, &table)?;
    let body = String::from_utf8(buf).expect("csv is utf-8");
    Ok((format!("{}\n{body}", meta.csv_comment()), table))
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamRow {
    pub t: usize,
    pub branch: Branch,
    pub eta: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CdRatioSummary {
    pub m: usize,
    pub l: usize,
    pub trials: usize,
    pub empirical: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleAnalysis {
    pub coherence: CoherenceStats,
    pub assumptions: AssumptionReport,
    pub rip_proxy: RipProxy,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticAnalysis {
    pub spec: DiagnosticSpec,
    pub coherence: CoherenceStats,
    pub assumptions: AssumptionReport,
    pub bound: BoundTrace,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub meta: Meta,
    pub variant: Variant,
    pub parameters: Vec<ParamRow>,
    pub eta_mean_ogu: Option<f64>,
    pub eta_mean_sgu: Option<f64>,
    pub cd_ratio: Option<CdRatioSummary>,
    /// Learned schedule run on one sampled instance of the configured system.
    pub sample: SampleAnalysis,
    /// Constructed instance whose thresholds satisfy the off-support condition.
    pub diagnostic: DiagnosticAnalysis,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn parameter_rows(variant: Variant, schedule: &ParamSchedule) -> Vec<ParamRow> {
    schedule
        .etas()
        .iter()
        .zip(schedule.lambdas())
        .enumerate()
        .map(|(i, (&eta, &lambda))| ParamRow {
            t: i + 1,
            branch: variant.branch(i + 1),
            eta,
            lambda,
        })
        .collect()
}

pub fn analyze(cfg: &ExperimentConfig, params: &ParamsFile, trials: usize) -> Result<AnalysisReport> {
    cfg.validate()?;
    params.check_compatible(cfg, true)?;
    let schedule = params.schedule()?;
    let system = params.system(cfg);
    let variant = system.variant;
    let rows = parameter_rows(variant, &schedule);
    let by_branch = |b: Branch| -> Vec<f64> { rows.iter().filter(|r| r.branch == b).map(|r| r.eta).collect() };
    let seed = derive_seed(cfg.seed, "analyze");

    let cd_ratio = if system.l >= 1 && system.l <= system.m {
        let mut rng = Rng::substream(seed, 0, StreamRole::Diagnostic);
        Some(CdRatioSummary {
            m: system.m,
            l: system.l,
            trials,
            empirical: cd_ratio_empirical(&mut rng, system.m, system.l, trials)?,
            predicted: cd_ratio_predicted(system.m, system.l),
        })
    } else {
        None
    };

    let mut rng = Rng::substream(seed, 1, StreamRole::Diagnostic);
    let problem = make_problem(&mut rng, system.m, system.n, system.sigma2, &system.signal_model())?;
    let sketched = if variant.needs_sketch() {
        let s = make_sketch(system.sketch_kind, &mut rng, system.l, system.m)?;
        Some(build_sketched_system(Arc::new(s), &problem)?)
    } else {
        None
    };
    let trajectory = run(variant, &problem, sketched.as_ref(), &schedule, Retain::Full)?;
    let coherence = coherence_stats(problem.a(), sketched.as_ref())?;
    let assumptions = check_assumptions(&trajectory, &schedule, &problem, &coherence)?;
    let order = (2 * problem.support().len()).clamp(1, system.n);
    let rip = rip_proxy(&mut rng, problem.a(), order, 20)?;

    let spec = DiagnosticSpec {
        period: variant.period().max(1),
        t: cfg.iterations,
        sketch_kind: system.sketch_kind,
        ..DiagnosticSpec::default()
    };
    let inst = diagnostic_instance(seed, &spec)?;
    let diag_assumptions = check_assumptions_with(
        &inst.trajectory,
        &inst.schedule,
        &inst.problem,
        &inst.stats,
        spec.reading,
    )?;
    let bound = evaluate_bound(
        &inst.trajectory,
        &inst.schedule,
        &inst.problem,
        Some(&inst.sketched),
        &inst.stats,
    )?;

    Ok(AnalysisReport {
        meta: cfg.meta(),
        variant,
        eta_mean_ogu: mean(&by_branch(Branch::Ogu)),
        eta_mean_sgu: mean(&by_branch(Branch::Sgu)),
        parameters: rows,
        cd_ratio,
        sample: SampleAnalysis {
            coherence,
            assumptions,
            rip_proxy: rip,
        },
        diagnostic: DiagnosticAnalysis {
            spec,
            coherence: inst.stats.clone(),
            assumptions: diag_assumptions,
            bound_holds: bound.holds(),
            bound,
        },
    })
}

pub fn cmd_analyze(common: &Common, params: &Path, trials: usize) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_path(&cfg, "analysis.json");
    let p = ParamsFile::load(params)?;
    let report = analyze(&cfg, &p, trials)?;
    write_file(&out, &to_pretty_json(&report)?)?;
    let comment = cfg.meta().csv_comment();
    let mut params_csv = format!("{comment}\nt,branch,eta,lambda\n");
    for r in &report.parameters {
        params_csv.push_str(&format!("{},{},{},{}\n", r.t, r.branch.name(), r.eta, r.lambda));
    }
    write_file(&sibling(&out, "params.csv"), &params_csv)?;
    let mut buf = Vec::new();
    report.diagnostic.bound.write_csv(&mut buf)?;
    let bound_csv = format!("{comment}\n{}", String::from_utf8(buf).expect("csv is utf-8"));
    write_file(&sibling(&out, "bound.csv"), &bound_csv)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BenchRow {
    pub t: usize,
    pub time_ista: f64,
    pub time_variant: f64,
    pub ratio: f64,
}

/// Mean seconds per solve of ISTA and of `system.variant` on one drawn system.
///
/// `SA`, `Sy` and the schedules are built before timing starts; one untimed
/// warm-up solve per solver precedes the measured ones. Each solve runs on the
/// calling thread.
pub fn bench(system: &SystemSpec, t_list: &[usize], repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    system.validate()?;
    if repeats == 0 || t_list.contains(&0) || t_list.is_empty() {
        return Err(Error::InvalidArgument("need repeats >= 1 and T values >= 1".into()));
    }
    let mut rng = Rng::substream(seed, 0, StreamRole::Diagnostic);
    let problem = make_problem(&mut rng, system.m, system.n, system.sigma2, &system.signal_model())?;
    let sketched = if system.variant.needs_sketch() {
        let s = make_sketch(system.sketch_kind, &mut rng, system.l, system.m)?;
        Some(build_sketched_system(Arc::new(s), &problem)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let schedule = default_schedule(problem.a(), t)?;
        let solve = |variant: Variant| -> Result<f64> {
            let start = Instant::now();
            let traj = run(variant, &problem, sketched.as_ref(), &schedule, Retain::FinalOnly)?;
            let elapsed = start.elapsed().as_secs_f64();
            std::hint::black_box(traj);
            Ok(elapsed)
        };
        solve(Variant::Ista)?;
        solve(system.variant)?;
        // alternate the two solvers so machine-wide drift hits both equally
        let (mut total_ista, mut total_variant) = (0.0, 0.0);
        for _ in 0..repeats {
            total_ista += solve(Variant::Ista)?;
            total_variant += solve(system.variant)?;
        }
        let time_ista = total_ista / repeats as f64;
        let time_variant = total_variant / repeats as f64;
        rows.push(BenchRow {
            t,
            time_ista,
            time_variant,
            ratio: time_variant / time_ista,
        });
    }
    Ok(rows)
}

pub fn cmd_bench(common: &Common, t_list: &[usize], repeats: usize) -> Result<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let out = common.out_path(&cfg, "bench.csv");
    let rows = bench(&cfg.system, t_list, repeats, derive_seed(cfg.seed, "bench"))?;
    let mut csv = format!("{}\nT,time_ista,time_psista,ratio\n", cfg.meta().csv_comment());
    for r in rows {
        csv.push_str(&format!("{},{},{},{}\n", r.t, r.time_ista, r.time_variant, r.ratio));
    }
    write_file(&out, &csv)
}

pub fn run_command(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenConfig { out, seed } => cmd_gen_config(&out, seed),
        Command::Train(common) => cmd_train(&common),
        Command::Eval {
            common,
            params,
            reference,
            plot_script,
        } => cmd_eval(&common, &params, reference.as_deref(), plot_script),
        Command::Complexity {
            n,
            m,
            t,
            l_list,
            p_list,
            out,
        } => {
            let (csv, _) = complexity_csv(n, m, t, &l_list, &p_list)?;
            match out {
                Some(path) => write_file(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Analyze { common, params, trials } => cmd_analyze(&common, &params, trials),
        Command::Bench {
            common,
            t_list,
            repeats,
        } => cmd_bench(&common, &t_list, repeats),
    }
}

/// Exit code 3 on training divergence, 1 on any other error.
pub fn main_entry() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run_command(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
