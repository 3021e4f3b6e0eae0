use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use linbp_core::attack::{run_attack_expected, run_attack_sim, sample_attack_trial, AttackConfig};
use linbp_core::closedform::{
    eta_constraint_attack, lemma1_expectation, lemma2_expectation, Lemma2Params,
};
use linbp_core::data::{synthetic_digits, LabeledDataset};
use linbp_core::linalg::gaussian_vector;
use linbp_core::mlp::{mlp_train_loop, MlpTrainConfig};
use linbp_core::montecarlo::{mc_lemma1, mc_lemma2};
use linbp_core::train::{run_train_expected, run_train_sim, sample_train_trial, TrainConfig};
use linbp_core::{GradientMode, NormalizeMode, RngStream, SimulationResult, Trajectory};
use rand::Rng;

use crate::error::{CliError, Result};
use crate::plot::{write_svg_lineplot, Series};
use crate::record::{write_csv, RunRecord};

#[derive(Debug, Parser)]
#[command(
    name = "linbp-lab",
    version,
    about = "BP vs LinBP experiments on dense ReLU networks"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Closed-form masked Gram expectation against Monte Carlo.
    Lemma1Check,
    /// Sign-weighted Gaussian expectation against Monte Carlo.
    Lemma2Check,
    /// Stochastic white-box attack on sampled two-layer networks.
    AttackSim,
    /// Attack iterated with the expected gradient.
    AttackExpected,
    /// Stochastic one-layer teacher-student training.
    TrainSim,
    /// Training iterated with the expected gradient.
    TrainExpected,
    /// Step-size constraint along the expected BP attack trajectory.
    ConstraintCheck,
    /// Mini-batch MLP training on IDX images or synthetic digits.
    MlpTrain,
}

/// Flags shared by every subcommand. Unset values fall back to the reference
/// configuration of the chosen experiment.
#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Trials, Monte Carlo cases or endpoint draws.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Update steps (attack) or iterations (training).
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub d1: Option<usize>,
    #[arg(long, global = true)]
    pub d2: Option<usize>,
    #[arg(long, global = true)]
    pub d3: Option<usize>,
    /// Training rows, or Monte Carlo draws for the check subcommands.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    /// Run only this rule: bp, linbp or linbp-from=M.
    #[arg(long, global = true)]
    pub mode: Option<GradientMode>,
    #[arg(long, global = true)]
    pub normalize: Option<NormalizeMode>,
    #[arg(long, global = true)]
    pub mu1: Option<f64>,
    #[arg(long, global = true)]
    pub sigma1: Option<f64>,
    #[arg(long, global = true)]
    pub sigma2: Option<f64>,
    #[arg(long, global = true, value_name = "PATH")]
    pub images: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    #[arg(long, global = true)]
    pub subset: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true, value_name = "CSV_PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "SVG_PATH")]
    pub plot: Option<PathBuf>,
}

/// What a subcommand produced: CSV rows, plot series and a short summary.
#[derive(Debug, Default)]
pub struct Output {
    pub records: Vec<RunRecord>,
    pub series: Series,
    pub summary: Vec<String>,
}

impl Opts {
    fn methods(&self) -> Vec<GradientMode> {
        match self.mode {
            Some(m) => vec![m],
            None => vec![GradientMode::Bp, GradientMode::LinBp],
        }
    }

    fn attack_config(&self) -> AttackConfig {
        let r = AttackConfig::reference();
        AttackConfig {
            d1: self.d1.unwrap_or(r.d1),
            d2: self.d2.unwrap_or(r.d2),
            d3: self.d3.unwrap_or(r.d3),
            eta: self.eta.unwrap_or(r.eta),
            eps: self.eps.unwrap_or(r.eps),
            steps: self.steps.unwrap_or(r.steps),
            trials: self.trials.unwrap_or(r.trials),
            mu1: self.mu1.unwrap_or(r.mu1),
            sigma1: self.sigma1.unwrap_or(r.sigma1),
            sigma2: self.sigma2.unwrap_or(r.sigma2),
            normalize: self.normalize.unwrap_or(r.normalize),
            methods: self.methods(),
            seed: self.seed.unwrap_or(r.seed),
            record_iterates: false,
        }
    }

    fn train_config(&self) -> TrainConfig {
        let r = TrainConfig::reference();
        TrainConfig {
            n: self.n.unwrap_or(r.n),
            d: self.d.unwrap_or(r.d),
            eta: self.eta.unwrap_or(r.eta),
            iters: self.steps.unwrap_or(r.iters),
            trials: self.trials.unwrap_or(r.trials),
            mu1: self.mu1.unwrap_or(r.mu1),
            sigma1: self.sigma1.unwrap_or(r.sigma1),
            sigma2: self.sigma2.unwrap_or(r.sigma2),
            normalize: self.normalize.unwrap_or(r.normalize),
            reduction: r.reduction,
            methods: self.methods(),
            seed: self.seed.unwrap_or(r.seed),
            record_iterates: false,
        }
    }
}

fn label(mode: GradientMode) -> String {
    mode.label()
}

fn mean_l1_series(result: &SimulationResult, out: &mut Series) {
    for &m in &result.methods {
        if let Some(l1) = result.mean_l1(m) {
            out.insert(
                label(m),
                l1.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect(),
            );
        }
    }
}

fn sim_records(experiment: &str, result: &SimulationResult) -> Vec<RunRecord> {
    result
        .trials
        .iter()
        .flat_map(|t| {
            t.arms
                .iter()
                .flat_map(move |a| RunRecord::from_trajectory(experiment, t.seed, a))
        })
        .collect()
}

fn sim_summary(result: &SimulationResult) -> Vec<String> {
    let mut lines = Vec::new();
    for &m in &result.methods {
        if let Some(l1) = result.mean_l1(m) {
            lines.push(format!(
                "{}: mean l1 distance {:.6} -> {:.6}",
                label(m),
                l1[0],
                l1[l1.len() - 1]
            ));
        }
    }
    if let (Some((l2, linf)), true) = (
        result.grad_norm_ratio(GradientMode::LinBp, GradientMode::Bp, 0..100),
        result.methods.len() > 1,
    ) {
        lines.push(format!(
            "linbp/bp gradient norm ratio over the first 100 steps: l2 {l2:.4}, linf {linf:.4}"
        ));
    }
    lines
}

/// Averages per-draw trajectories of the expected dynamics into plot series.
fn mean_expected(runs: &[Vec<Trajectory>], out: &mut Series) {
    let Some(first) = runs.first() else { return };
    for (k, arm) in first.iter().enumerate() {
        let n = runs.len() as f64;
        let pts = (0..arm.len())
            .map(|t| {
                let s: f64 = runs
                    .iter()
                    .map(|r| r[k].records[t].l1_dist.unwrap_or(f64::NAN))
                    .sum();
                (t as f64, s / n)
            })
            .collect();
        out.insert(label(arm.method), pts);
    }
}

fn lemma1_check(o: &Opts) -> Result<Output> {
    let (d1, d2, d3) = (o.d1.unwrap_or(3), o.d2.unwrap_or(5), o.d3.unwrap_or(2));
    let (cases, draws, seed) = (
        o.trials.unwrap_or(10),
        o.n.unwrap_or(100_000),
        o.seed.unwrap_or(1),
    );
    let mut rng = RngStream::new(seed, 1000).rng();
    let mut out = Output::default();
    let mut pts = Vec::new();
    for case in 0..cases {
        let e = gaussian_vector(d1, 0.0, 1.0, &mut rng)?;
        let e = e.scale(1.0 / e.l2_norm());
        let x = gaussian_vector(d1, 0.0, 1.0, &mut rng)?;
        let mc = mc_lemma1(&e, &x, d2, d3, draws, seed.wrapping_add(500 + case as u64))?;
        let cf = lemma1_expectation(&e, &x, d2)?;
        let err = mc.relative_l2_error(&cf);
        let rescaled = mc.scale(1.0 / d3 as f64).relative_l2_error(&cf);
        out.summary.push(format!(
            "case {case}: relative l2 error {err:.4}, with Monte Carlo divided by d3 {rescaled:.4}"
        ));
        out.records.push(RunRecord::check(
            "lemma1-check",
            case,
            seed,
            GradientMode::Bp,
            err,
        ));
        pts.push((case as f64, err));
    }
    out.series.insert("relative error".into(), pts);
    Ok(out)
}

fn lemma2_check(o: &Opts) -> Result<Output> {
    let (cases, draws, seed) = (
        o.trials.unwrap_or(20),
        o.n.unwrap_or(1_000_000),
        o.seed.unwrap_or(9),
    );
    let mut rng = RngStream::new(seed, 0).rng();
    let mut out = Output::default();
    let mut pts = Vec::new();
    for case in 0..cases {
        let p = Lemma2Params {
            u: rng.random_range(-1.0..1.0),
            v: rng.random_range(-1.0..1.0),
            mu1: o.mu1.unwrap_or_else(|| rng.random_range(-1.0..1.0)),
            mu2: rng.random_range(-1.0..1.0),
            sigma1: o.sigma1.unwrap_or_else(|| rng.random_range(0.2..1.0)),
            sigma2: o.sigma2.unwrap_or_else(|| rng.random_range(0.2..1.0)),
        };
        let mc: f64 = mc_lemma2(&p, draws, seed.wrapping_add(900 + case as u64))?;
        let cf = lemma2_expectation(&p)?;
        let err = (mc - cf).abs();
        out.summary.push(format!(
            "case {case}: closed form {cf:.6}, Monte Carlo {mc:.6}, abs error {err:.2e}"
        ));
        out.records.push(RunRecord::check(
            "lemma2-check",
            case,
            seed,
            GradientMode::Bp,
            err,
        ));
        pts.push((case as f64, err));
    }
    out.series.insert("abs error".into(), pts);
    Ok(out)
}

fn attack_sim(o: &Opts) -> Result<Output> {
    let result = run_attack_sim(&o.attack_config())?;
    let mut out = Output {
        records: sim_records("attack-sim", &result),
        summary: sim_summary(&result),
        ..Output::default()
    };
    mean_l1_series(&result, &mut out.series);
    Ok(out)
}

fn attack_expected(o: &Opts) -> Result<Output> {
    let config = o.attack_config();
    config.validate()?;
    let mut out = Output::default();
    let mut runs = Vec::new();
    for trial in 0..config.trials {
        let d = sample_attack_trial(&config, trial)?;
        let arms = run_attack_expected(&config, &d.x0, &d.x_star)?;
        for a in &arms {
            out.records
                .extend(RunRecord::from_trajectory("attack-expected", d.seed, a));
        }
        runs.push(arms);
    }
    mean_expected(&runs, &mut out.series);
    for (name, pts) in &out.series {
        out.summary.push(format!(
            "{name}: mean l1 distance {:.6} -> {:.6}",
            pts[0].1,
            pts[pts.len() - 1].1
        ));
    }
    Ok(out)
}

fn train_sim(o: &Opts) -> Result<Output> {
    let result = run_train_sim(&o.train_config())?;
    let mut out = Output {
        records: sim_records("train-sim", &result),
        summary: sim_summary(&result),
        ..Output::default()
    };
    mean_l1_series(&result, &mut out.series);
    Ok(out)
}

fn train_expected(o: &Opts) -> Result<Output> {
    let config = o.train_config();
    config.validate()?;
    let mut out = Output::default();
    let mut runs = Vec::new();
    for trial in 0..config.trials {
        let d = sample_train_trial(&config, trial)?;
        let arms = run_train_expected(&config, &d.w0, &d.w_star)?;
        for a in &arms {
            out.records
                .extend(RunRecord::from_trajectory("train-expected", d.seed, a));
        }
        runs.push(arms);
    }
    mean_expected(&runs, &mut out.series);
    for (name, pts) in &out.series {
        out.summary.push(format!(
            "{name}: mean l1 distance {:.6} -> {:.6}",
            pts[0].1,
            pts[pts.len() - 1].1
        ));
    }
    Ok(out)
}

fn constraint_check(o: &Opts) -> Result<Output> {
    let config = AttackConfig {
        methods: vec![GradientMode::Bp],
        ..o.attack_config()
    };
    config.validate()?;
    let mut out = Output::default();
    let mut pts = Vec::new();
    for trial in 0..config.trials {
        let d = sample_attack_trial(&config, trial)?;
        let arms = run_attack_expected(&config, &d.x0, &d.x_star)?;
        let iterates = arms[0]
            .iterates()
            .expect("expected dynamics record iterates");
        let report = eta_constraint_attack(&iterates, &d.x_star, config.eta, config.d2);
        let first = report.first_violation.map_or("none".to_string(), |(m, i)| {
            format!("step {m} coordinate {i}")
        });
        out.summary.push(format!(
            "draw {trial}: holds {}, through step {}, first violation {first}, {} failing cells",
            report.overall,
            report.holds_through(),
            report.violations()
        ));
        out.records.extend(RunRecord::from_trajectory(
            "constraint-check",
            d.seed,
            &arms[0],
        ));
        pts.push((trial as f64, report.holds_through() as f64));
    }
    out.series.insert("holds through step".into(), pts);
    Ok(out)
}

fn load_dataset(o: &Opts, seed: u64) -> Result<LabeledDataset> {
    let ds = match (&o.images, &o.labels) {
        (Some(images), Some(labels)) => {
            let img = std::fs::read(images).map_err(|e| CliError::io(images, e))?;
            let lab = std::fs::read(labels).map_err(|e| CliError::io(labels, e))?;
            LabeledDataset::from_idx(&img, &lab)?
        }
        (None, None) => synthetic_digits(o.subset.unwrap_or(10_000), seed),
        _ => {
            return Err(CliError::Usage(
                "--images and --labels must be given together".into(),
            ))
        }
    };
    Ok(match o.subset {
        Some(n) if n < ds.len() => ds.subset(n),
        _ => ds,
    })
}

fn mlp_train(o: &Opts) -> Result<Output> {
    let seed = o.seed.unwrap_or(0);
    let ds = load_dataset(o, seed)?;
    let mut out = Output::default();
    for mode in o.methods() {
        let r = MlpTrainConfig::reference(mode);
        let mut widths = r.widths.clone();
        widths[0] = ds.input_dim();
        let config = MlpTrainConfig {
            widths,
            eta: o.eta.unwrap_or(r.eta),
            batch: o.batch.unwrap_or(r.batch),
            epochs: o.epochs.unwrap_or(r.epochs),
            mode,
            seed,
        };
        let run = mlp_train_loop(&ds, &config)?;
        let traj = &run.trajectory;
        let last = traj.records.last().expect("step 0 is always recorded");
        out.summary.push(format!(
            "{}: loss {:.6} -> {:.6}, accuracy {:.4}{}",
            label(mode),
            traj.records[0].loss,
            last.loss,
            last.accuracy.unwrap_or(f64::NAN),
            if traj.diverged { ", diverged" } else { "" }
        ));
        out.records
            .extend(RunRecord::from_trajectory("mlp-train", seed, traj));
        out.series.insert(
            label(mode),
            traj.records
                .iter()
                .map(|r| (r.step as f64, r.loss))
                .collect(),
        );
    }
    Ok(out)
}

pub fn execute(command: Command, opts: &Opts) -> Result<Output> {
    match command {
        Command::Lemma1Check => lemma1_check(opts),
        Command::Lemma2Check => lemma2_check(opts),
        Command::AttackSim => attack_sim(opts),
        Command::AttackExpected => attack_expected(opts),
        Command::TrainSim => train_sim(opts),
        Command::TrainExpected => train_expected(opts),
        Command::ConstraintCheck => constraint_check(opts),
        Command::MlpTrain => mlp_train(opts),
    }
}

/// Runs one parsed invocation and writes the requested files.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let out = execute(cli.command, &cli.opts)?;
    if let Some(path) = &cli.opts.out {
        write_csv(&out.records, path)?;
    }
    if let Some(path) = &cli.opts.plot {
        write_svg_lineplot(&out.series, path)?;
    }
    Ok(out.summary)
}
