//! The `mval` command-line tool.
//!
//! Exit status is 0 on success, 1 on a domain error (the error's code is
//! printed first on stderr) and 2 on a usage error. `MVAL_THREADS` caps the
//! worker pool; `0` or unset lets the runtime decide.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checks::{run_suite, SuiteConfig};
use crate::data::{LoggedDataset, Source};
use crate::env::SecondMomentModel;
use crate::error::{MvalError, Result};
use crate::estimators::{balanced_estimate, balanced_variance_closed_form, ips_estimate, ips_variance_closed_form};
use crate::io::{to_sorted_json, ClassDocument, ContextsDocument, EnvDocument};
use crate::learner::{erm_balanced_fit, precomputed_mval_fit, FitConfig, LearnerParams};
use crate::oracle::SamplingDesign;
use crate::policy::{MixProfile, Policy};
use crate::policyclass::{mval_solve_multi_with_diagnostics, variance_bound, PolicyClass};
use crate::sim::{augmentation_policy, run_trials_with, stream_seed, AugStrategy, StrategyInputs, TrialConfig};
use crate::solver::mval_policy;
use crate::sweep::{run_sweep, SweepConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "mval", version, about = "Minimum-variance augmentation logging for off-policy evaluation")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the variance-minimizing augmentation policy.
    Solve(SolveArgs),
    /// Estimate the target's value from a logged dataset.
    Evaluate(EvaluateArgs),
    /// Monte-Carlo variance trials for one augmentation strategy.
    Simulate(SimulateArgs),
    /// Run a parameter sweep described by a JSON config.
    Sweep(SweepArgs),
    /// Augmentation for a whole policy class and its variance bound.
    MultiEval(MultiEvalArgs),
    /// Fit a linear-softmax policy over action features.
    Learn(LearnArgs),
    /// Check closed forms and the solver against exact oracles.
    OracleCheck(OracleCheckArgs),
}

#[derive(Debug, Args)]
pub struct AlphaArgs {
    /// Augmentation share α.
    #[arg(long, conflicts_with = "alpha_from_counts")]
    pub alpha: Option<f64>,
    /// α = N_AUG / (N_LOG + N_AUG).
    #[arg(long, num_args = 2, value_names = ["N_LOG", "N_AUG"])]
    pub alpha_from_counts: Option<Vec<usize>>,
}

impl AlphaArgs {
    fn mix(&self) -> Result<Option<MixProfile>> {
        match &self.alpha_from_counts {
            Some(v) => MixProfile::new(v[0], v[1]).map(Some),
            None => Ok(None),
        }
    }

    fn alpha(&self) -> Result<f64> {
        match (self.alpha, self.mix()?) {
            (Some(a), _) => Ok(a),
            (None, Some(m)) => Ok(m.alpha()),
            (None, None) => Err(MvalError::InvalidConfig("pass --alpha or --alpha-from-counts".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MomentArg {
    /// Explicit table in the document, else the reward law's `E[r²]`.
    Document,
    /// Constant `E[r²] = 1`.
    Uniform,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[command(flatten)]
    pub alpha: AlphaArgs,
    #[arg(long, value_enum, default_value = "document")]
    pub moment: MomentArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Balanced,
    Ips,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub env: PathBuf,
    /// Logged data CSV (`context_id,action_id,reward,source`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "balanced")]
    pub estimator: EstimatorArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Mval,
    Precomputed,
    Target,
    Uniform,
}

impl From<StrategyArg> for AugStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Mval => AugStrategy::Mval,
            StrategyArg::Precomputed => AugStrategy::Precomputed,
            StrategyArg::Target => AugStrategy::Target,
            StrategyArg::Uniform => AugStrategy::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignArg {
    Stratified,
    Mixture,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long)]
    pub n_log: usize,
    #[arg(long)]
    pub n_aug: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, value_enum, default_value = "mval")]
    pub strategy: StrategyArg,
    /// Feature contexts, needed by `precomputed`.
    #[arg(long)]
    pub contexts: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "stratified")]
    pub design: DesignArg,
    /// Write one sampled dataset (CSV) instead of running trials.
    #[arg(long)]
    pub data_only: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct MultiEvalArgs {
    #[arg(long)]
    pub env: PathBuf,
    /// Policy list or trust region document.
    #[arg(long)]
    pub class: PathBuf,
    #[arg(long, num_args = 2, value_names = ["N_LOG", "N_AUG"], required = true)]
    pub alpha_from_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    /// Minimize the augmentation variance objective.
    Op2,
    /// Maximize the balanced value estimate on logged data.
    Erm,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long)]
    pub contexts: PathBuf,
    #[arg(long, value_enum, default_value = "op2")]
    pub objective: ObjectiveArg,
    /// Fit against a class envelope instead of the `target` policy.
    #[arg(long)]
    pub class: Option<PathBuf>,
    /// Logged data for `erm`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub alpha: AlphaArgs,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub step_size: f64,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 3)]
    pub max_contexts: usize,
    #[arg(long, default_value_t = 3)]
    pub max_actions: usize,
    #[arg(long, default_value_t = 200)]
    pub instances: usize,
    #[arg(long, default_value_t = 400)]
    pub resolution: usize,
}

enum Failure {
    Usage(clap::Error),
    Domain(MvalError),
    Check(String),
}

impl From<MvalError> for Failure {
    fn from(e: MvalError) -> Self {
        Failure::Domain(e)
    }
}

fn usage(kind: ErrorKind, msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(Cli::command().error(kind, msg))
}

fn usage_token(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::MissingRequiredArgument | ErrorKind::MissingSubcommand => "MissingRequired",
        ErrorKind::UnknownArgument | ErrorKind::InvalidSubcommand | ErrorKind::InvalidValue => "UnknownFlag",
        _ => "UsageError",
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MvalError::Io(format!("{}: {e}", path.display())))
}

fn read_env(path: &Path) -> Result<(EnvDocument, crate::env::Environment)> {
    let doc = EnvDocument::from_json(&read(path)?)?;
    let env = doc.environment()?;
    Ok((doc, env))
}

fn read_data(path: &Path, shape: (usize, usize)) -> Result<LoggedDataset> {
    let file = fs::File::open(path).map_err(|e| MvalError::Io(format!("{}: {e}", path.display())))?;
    LoggedDataset::read_csv(file, shape.0, shape.1)
}

struct Output<'a> {
    path: Option<&'a Path>,
}

impl Output<'_> {
    fn write(&self, bytes: &[u8]) -> Result<()> {
        match self.path {
            Some(p) => fs::write(p, bytes).map_err(|e| MvalError::Io(format!("{}: {e}", p.display()))),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes)?;
                out.flush()?;
                Ok(())
            }
        }
    }

    fn json<T: Serialize>(&self, value: &T) -> Result<()> {
        self.write(to_sorted_json(value)?.as_bytes())
    }

    fn csv<T: Serialize>(&self, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| MvalError::Io(e.to_string()))?;
        self.write(&bytes)
    }
}

#[derive(Serialize)]
struct CellRow {
    context_id: usize,
    action_id: usize,
    probability: f64,
}

fn cell_rows(p: &Policy) -> Vec<CellRow> {
    (0..p.contexts())
        .flat_map(|x| {
            (0..p.actions()).map(move |a| CellRow {
                context_id: x,
                action_id: a,
                probability: p.prob(x, a),
            })
        })
        .collect()
}

fn solve(cli: &Cli, args: &SolveArgs, out: &Output) -> Result<()> {
    let (doc, env) = read_env(&args.env)?;
    let alpha = args.alpha.alpha()?;
    let p_log = doc.policy("log")?;
    let target = doc.policy("target")?;
    let m = match args.moment {
        MomentArg::Document => doc.moment_model(&env)?,
        MomentArg::Uniform => SecondMomentModel::uniform(env.contexts(), env.actions(), 1.0)?,
    };
    let (policy, diagnostics) = mval_policy(&target, &p_log, &m, alpha)?;
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.json(&serde_json::json!({
            "alpha": alpha,
            "policy": policy.to_rows(),
            "diagnostics": diagnostics,
        })),
        Format::Csv => out.csv(cell_rows(&policy)),
    }
}

fn evaluate(cli: &Cli, args: &EvaluateArgs, out: &Output) -> Result<()> {
    let (doc, env) = read_env(&args.env)?;
    let data = read_data(&args.data, env.shape())?;
    let p_log = doc.policy("log")?;
    let target = doc.policy("target")?;
    let p_aug = if doc.has_policy("aug") {
        doc.policy("aug")?
    } else if data.count(Source::Aug) == 0 {
        p_log.clone()
    } else {
        return Err(MvalError::MissingSourcePolicy("aug"));
    };
    let data = data.with_policy(Source::Log, p_log.clone())?.with_policy(Source::Aug, p_aug.clone())?;
    let mix = data.mix()?;
    let m = doc.moment_model(&env)?;
    let (name, estimate, variance) = match args.estimator {
        EstimatorArg::Balanced => (
            "balanced",
            balanced_estimate(&data, &target, &p_log, &p_aug, mix)?,
            balanced_variance_closed_form(&target, &p_log, &p_aug, mix, &m, &env)?,
        ),
        EstimatorArg::Ips => (
            "ips",
            ips_estimate(&data, &target)?,
            ips_variance_closed_form(&target, &p_log, &p_aug, mix, &m, &env)?,
        ),
    };
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.json(&serde_json::json!({
            "estimator": name,
            "estimate": estimate,
            "variance": variance,
        })),
        Format::Csv => {
            #[derive(Serialize)]
            struct Row<'a> {
                estimator: &'a str,
                point_estimate: f64,
                n_used: usize,
                log_contribution: f64,
                aug_contribution: f64,
                variance: f64,
            }
            out.csv([Row {
                estimator: name,
                point_estimate: estimate.point_estimate,
                n_used: estimate.n_used,
                log_contribution: estimate.per_source_contributions.0,
                aug_contribution: estimate.per_source_contributions.1,
                variance: variance.value,
            }])
        }
    }
}

fn simulate(cli: &Cli, args: &SimulateArgs, seed: u64, out: &Output) -> Result<()> {
    let (doc, env) = read_env(&args.env)?;
    let p_log = doc.policy("log")?;
    let target = doc.policy("target")?;
    let m = doc.moment_model(&env)?;
    let mix = MixProfile::new(args.n_log, args.n_aug)?;
    let features = match &args.contexts {
        Some(p) => Some(ContextsDocument::from_json(&read(p)?)?.feature_contexts()?),
        None => None,
    };
    let inputs = StrategyInputs {
        m: Some(&m),
        features: features.as_deref(),
        fit: FitConfig::default(),
    };
    let strategy = AugStrategy::from(args.strategy);
    let p_aug = augmentation_policy(strategy, &p_log, &target, mix, &inputs)?;

    if args.data_only {
        let mut data = crate::sim::sample_logged_data(&env, &p_log, args.n_log, stream_seed(&[seed, 0]), Source::Log)?;
        data.extend(crate::sim::sample_logged_data(&env, &p_aug, args.n_aug, stream_seed(&[seed, 1]), Source::Aug)?)?;
        let mut buf = Vec::new();
        data.write_csv(&mut buf)?;
        return out.write(&buf);
    }

    let cfg = TrialConfig {
        n_log: args.n_log,
        n_aug: args.n_aug,
        trials: args.trials,
        seed,
        design: match args.design {
            DesignArg::Stratified => SamplingDesign::Stratified,
            DesignArg::Mixture => SamplingDesign::Mixture,
        },
    };
    let report = run_trials_with(&env, &p_log, &target, &p_aug, strategy.name(), &cfg)?;
    let closed = balanced_variance_closed_form(&target, &p_log, &p_aug, mix, &m, &env)?;
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.json(&serde_json::json!({
            "report": report,
            "closed_form_variance": closed.value,
            "true_utility": crate::env::true_utility(&target, &env)?,
        })),
        Format::Csv => {
            #[derive(Serialize)]
            struct Row {
                trial: usize,
                estimate: f64,
            }
            out.csv(report.estimates.iter().enumerate().map(|(trial, &estimate)| Row { trial, estimate }))
        }
    }
}

fn sweep(cli: &Cli, args: &SweepArgs, out: &Output) -> Result<()> {
    let mut cfg = SweepConfig::from_json(&read(&args.config)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let report = run_sweep(&cfg)?;
    let mut buf = Vec::new();
    match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => report.write_csv(&mut buf)?,
        Format::Json => report.write_json(&mut buf)?,
    }
    out.write(&buf)
}

fn multi_eval(cli: &Cli, args: &MultiEvalArgs, out: &Output) -> Result<()> {
    let (doc, env) = read_env(&args.env)?;
    let p_log = doc.policy("log")?;
    let m = doc.moment_model(&env)?;
    let class = ClassDocument::from_json(&read(&args.class)?)?.class()?;
    let mix = MixProfile::new(args.alpha_from_counts[0], args.alpha_from_counts[1])?;
    let envelope = class.envelope()?;
    let (policy, diagnostics) = mval_solve_multi_with_diagnostics(&envelope, &p_log, mix.alpha(), &m)?;
    let bound = variance_bound(&envelope, &p_log, &policy, mix, &m, &env)?;
    let members = match &class {
        PolicyClass::Finite(ps) => ps
            .iter()
            .map(|p| balanced_variance_closed_form(p, &p_log, &policy, mix, &m, &env).map(|v| v.value))
            .collect::<Result<Vec<_>>>()?,
        PolicyClass::TrustRegion { .. } => Vec::new(),
    };
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.json(&serde_json::json!({
            "policy": policy.to_rows(),
            "envelope": envelope.to_rows(),
            "bound": bound,
            "member_variances": members,
            "diagnostics": diagnostics,
        })),
        Format::Csv => {
            #[derive(Serialize)]
            struct Row {
                member: usize,
                variance: f64,
                bound: f64,
            }
            out.csv(members.iter().enumerate().map(|(member, &variance)| Row { member, variance, bound }))
        }
    }
}

fn learn(cli: &Cli, args: &LearnArgs, out: &Output) -> Result<()> {
    let (doc, env) = read_env(&args.env)?;
    let features = ContextsDocument::from_json(&read(&args.contexts)?)?.feature_contexts()?;
    let p_log = doc.policy("log")?;
    let config = FitConfig {
        steps: args.steps,
        step_size: args.step_size,
    };
    let params: LearnerParams = match args.objective {
        ObjectiveArg::Op2 => {
            let alpha = args.alpha.alpha()?;
            let m = doc.moment_model(&env)?;
            match &args.class {
                Some(path) => {
                    let envelope = ClassDocument::from_json(&read(path)?)?.class()?.envelope()?;
                    precomputed_mval_fit(&features, &p_log, &envelope, &m, alpha, config)?
                }
                None => precomputed_mval_fit(&features, &p_log, &doc.policy("target")?, &m, alpha, config)?,
            }
        }
        ObjectiveArg::Erm => {
            let path = args
                .data
                .as_ref()
                .ok_or_else(|| MvalError::InvalidConfig("erm needs --data".into()))?;
            let data = read_data(path, env.shape())?;
            let p_aug = if doc.has_policy("aug") { doc.policy("aug")? } else { p_log.clone() };
            let mix = data.mix()?;
            erm_balanced_fit(&data, &p_log, &p_aug, mix, &features, config)?
        }
    };
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.json(&params),
        Format::Csv => {
            #[derive(Serialize)]
            struct Row {
                index: usize,
                w: f64,
            }
            out.csv(params.w.iter().enumerate().map(|(index, &w)| Row { index, w }))
        }
    }
}

fn oracle_check(cli: &Cli, args: &OracleCheckArgs, out: &Output) -> std::result::Result<(), Failure> {
    let report = run_suite(&SuiteConfig {
        max_contexts: args.max_contexts,
        max_actions: args.max_actions,
        instances: args.instances,
        grid_resolution: args.resolution,
        seed: cli.seed.unwrap_or(0),
    })?;
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.json(&report)?,
        Format::Csv => out.csv(report.checks.iter())?,
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.name.as_str())
            .collect();
        Err(Failure::Check(failed.join("; ")))
    }
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let out = Output { path: cli.out.as_deref() };
    match &cli.command {
        Command::Solve(a) => solve(cli, a, &out)?,
        Command::Evaluate(a) => evaluate(cli, a, &out)?,
        Command::Simulate(a) => {
            let seed = cli
                .seed
                .ok_or_else(|| usage(ErrorKind::MissingRequiredArgument, "simulate requires --seed"))?;
            simulate(cli, a, seed, &out)?
        }
        Command::Sweep(a) => sweep(cli, a, &out)?,
        Command::MultiEval(a) => multi_eval(cli, a, &out)?,
        Command::Learn(a) => learn(cli, a, &out)?,
        Command::OracleCheck(a) => oracle_check(cli, a, &out)?,
    }
    Ok(())
}

fn configure_threads() -> std::result::Result<(), Failure> {
    let Ok(raw) = std::env::var("MVAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(ErrorKind::InvalidValue, format!("MVAL_THREADS must be a count, got `{raw}`")))?;
    if n > 0 {
        // fails only if a pool already exists, which leaves the old cap in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = match Cli::try_parse_from(args) {
        Ok(cli) => configure_threads().and_then(|()| execute(&cli)),
        Err(e) => Err(Failure::Usage(e)),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                let _ = e.print();
                if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                    2
                } else {
                    0
                }
            }
            kind => {
                eprint!("{}: {}", usage_token(kind), e.render());
                2
            }
        },
        Err(Failure::Domain(e)) => {
            eprintln!("{}: {e}", e.code());
            1
        }
        Err(Failure::Check(msg)) => {
            eprintln!("OracleViolation: {msg}");
            1
        }
    }
}
