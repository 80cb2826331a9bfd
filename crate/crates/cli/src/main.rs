//! Command-line surface for the sample-size toolkit: sizing, traffic
//! planning, session-log aggregation, and the Monte Carlo verification
//! suites.
//!
//! Exit codes: 0 success, 2 usage error, 3 infeasible design or parameter
//! domain error, 4 data or validation error.

mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use abpower::clustered::{
    plan_clustered_sizing, size_clustered, size_clustered_relative, ClusteredSizingPlan,
    MetricMode, PlannedLift,
};
use abpower::ingest::{
    aggregate_sessions_from, detect_csv_kind, read_aggregates_from, traffic_plan,
    AggregationSummary, CsvKind, TrafficPlan,
};
use abpower::simulation::{
    design_from_history, run_absolute_sized_relative_suite, run_clustered_suite,
    run_mod_experiment, run_relative_iid_suite, run_undersized_scenarios, CaseId, ClusteredCase,
    HistoricalDesign, MeanMode, ModHistogram, SimulationReport,
};
use abpower::sizing::{
    allocate_unbalanced, ate_from_mod, mod_from_ate, mod_ratio, size_iid_binary,
    size_iid_continuous, size_relative_iid_binary, size_relative_iid_continuous, AllocationResult,
    DesignParams, Sides, SizingResult,
};
use abpower::{Error as CoreError, Probability};
use report::{Format, Report};

const SEED_ENV_VAR: &str = "ABPOWER_SEED";

#[derive(Parser)]
#[command(
    name = "abpower",
    version,
    about = "Sample-size, power, and Monte Carlo verification toolkit for A/B tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Required sample size per arm (independent or user-randomized data).
    Size(SizeArgs),
    /// Minimum observed difference that will reach significance.
    #[command(name = "mod")]
    Mod(ModArgs),
    /// Unbalanced traffic allocation that holds the designed power.
    Allocate(AllocateArgs),
    /// Aggregate a session-level CSV to user level.
    Ingest(IngestArgs),
    /// Monte Carlo verification suites.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SidesArg {
    One,
    Two,
}

impl From<SidesArg> for Sides {
    fn from(s: SidesArg) -> Sides {
        match s {
            SidesArg::One => Sides::One,
            SidesArg::Two => Sides::Two,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum MetricArg {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SuiteArg {
    /// Power/type-I suite for a clustered benchmark case.
    Clustered,
    /// The two under-sized designs implied by the independence formula.
    Undersized,
    /// Relative-lift suite sized with the relative-lift formula.
    Relative,
    /// Relative-lift suite under-sized with the absolute-lift formula.
    RelativeAbs,
    /// Observed-lift histogram of a correctly powered experiment.
    Mod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum MeanModeArg {
    /// Control arm's own sample mean (default).
    Sample,
    /// The data-generating mean (simulation only).
    TrueMean,
    /// A fresh 5,000-observation historical estimate per replicate.
    LargeSample,
}

impl From<MeanModeArg> for MeanMode {
    fn from(m: MeanModeArg) -> MeanMode {
        match m {
            MeanModeArg::Sample => MeanMode::Sample,
            MeanModeArg::TrueMean => MeanMode::TrueMean,
            MeanModeArg::LargeSample => MeanMode::LargeSample { n: 5_000 },
        }
    }
}

enum CmdError {
    Usage(String),
    Core(CoreError),
    Other(anyhow::Error),
}

impl From<CoreError> for CmdError {
    fn from(e: CoreError) -> Self {
        CmdError::Core(e)
    }
}

impl From<anyhow::Error> for CmdError {
    fn from(e: anyhow::Error) -> Self {
        CmdError::Other(e)
    }
}

fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Commands::Size(args) => cmd_size(args),
        Commands::Mod(args) => cmd_mod(args),
        Commands::Allocate(args) => cmd_allocate(args),
        Commands::Ingest(args) => cmd_ingest(args),
        Commands::Simulate(args) => cmd_simulate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                CoreError::Domain(_) | CoreError::Infeasible(_) => ExitCode::from(3),
                _ => ExitCode::from(4),
            }
        }
        Err(CmdError::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(4)
        }
    }
}

fn print_report<C: Serialize, R: Serialize>(
    report: &Report<C, R>,
    format: Format,
    text: Vec<String>,
) -> Result<(), CmdError> {
    let rendered = report.render(format, text).map_err(CmdError::Other)?;
    print!("{rendered}");
    Ok(())
}

/// Load a config file: either a bare config object or a full report, in
/// which case its embedded `config` is used.
fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, CmdError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CmdError::Other(anyhow::anyhow!("reading {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CmdError::Other(anyhow::anyhow!("parsing {}: {e}", path.display())))?;
    let config = value.get("config").cloned().unwrap_or(value);
    serde_json::from_value(config)
        .map_err(|e| CmdError::Other(anyhow::anyhow!("config in {}: {e}", path.display())))
}

fn design_from(
    alpha: Option<f64>,
    power: Option<f64>,
    sides: Option<SidesArg>,
) -> Result<DesignParams, CmdError> {
    let alpha = Probability::new(alpha.unwrap_or(0.05))?;
    let power = Probability::new(power.unwrap_or(0.8))?;
    Ok(DesignParams::new(
        alpha,
        power,
        sides.unwrap_or(SidesArg::Two).into(),
    ))
}

fn require<T>(value: Option<T>, what: &str) -> Result<T, CmdError> {
    value.ok_or_else(|| usage(format!("{what} is required here")))
}

// ---------------------------------------------------------------------------
// size

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct SizeArgs {
    /// Independent observations (randomization unit = analysis unit).
    #[arg(long, conflicts_with = "clustered")]
    #[serde(default)]
    iid: bool,
    /// User-randomized data analyzed at the session level.
    #[arg(long)]
    #[serde(default)]
    clustered: bool,
    /// The metric is a 0/1 indicator (default for clustered data).
    #[arg(long, conflicts_with = "continuous")]
    #[serde(default)]
    binary: bool,
    /// The metric is real-valued.
    #[arg(long)]
    #[serde(default)]
    continuous: bool,
    /// Absolute lift to detect.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "rel_lift")]
    delta: Option<f64>,
    /// Relative lift to detect, e.g. 0.10 for +10%.
    #[arg(long = "rel-lift", allow_hyphen_values = true)]
    rel_lift: Option<f64>,
    /// Baseline rate (binary metrics).
    #[arg(long)]
    p: Option<f64>,
    /// Observation variance (continuous metrics).
    #[arg(long)]
    sigma2: Option<f64>,
    /// Baseline mean (continuous relative lifts).
    #[arg(long, allow_hyphen_values = true)]
    mean: Option<f64>,
    /// Historical CSV: session rows or user aggregates (detected by header).
    #[arg(long, conflicts_with = "h")]
    input: Option<PathBuf>,
    /// Variance kernel from an earlier aggregation, instead of --input.
    #[arg(long)]
    h: Option<f64>,
    /// Observation window the experiment will run over, in days.
    #[arg(long = "window-days")]
    window_days: Option<u32>,
    /// Window the supplied --h was estimated over, in days.
    #[arg(long = "h-window-days")]
    h_window_days: Option<u32>,
    /// Accept an --h estimated over a different window than the experiment's.
    #[arg(long = "allow-window-mismatch")]
    #[serde(default)]
    allow_window_mismatch: bool,
    /// Unique users seen in the window; adds a traffic recommendation.
    #[arg(long = "available-users")]
    available_users: Option<u64>,
    /// Also report the (under-)size the independence assumption would give.
    #[arg(long = "compare-standard")]
    #[serde(default)]
    compare_standard: bool,
    /// Type I error rate [default: 0.05].
    #[arg(long)]
    alpha: Option<f64>,
    /// Target power [default: 0.8].
    #[arg(long)]
    power: Option<f64>,
    /// Test sidedness [default: two].
    #[arg(long, value_enum)]
    sides: Option<SidesArg>,
    /// Output format [default: text].
    #[arg(long, value_enum)]
    #[serde(skip)]
    format: Option<Format>,
    /// JSON file with the same keys as these flags (or a previous report).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

impl SizeArgs {
    fn merge(mut self, file: SizeArgs) -> SizeArgs {
        self.iid |= file.iid;
        self.clustered |= file.clustered;
        self.binary |= file.binary;
        self.continuous |= file.continuous;
        self.delta = self.delta.or(file.delta);
        self.rel_lift = self.rel_lift.or(file.rel_lift);
        self.p = self.p.or(file.p);
        self.sigma2 = self.sigma2.or(file.sigma2);
        self.mean = self.mean.or(file.mean);
        self.input = self.input.or(file.input);
        self.h = self.h.or(file.h);
        self.window_days = self.window_days.or(file.window_days);
        self.h_window_days = self.h_window_days.or(file.h_window_days);
        self.allow_window_mismatch |= file.allow_window_mismatch;
        self.available_users = self.available_users.or(file.available_users);
        self.compare_standard |= file.compare_standard;
        self.alpha = self.alpha.or(file.alpha);
        self.power = self.power.or(file.power);
        self.sides = self.sides.or(file.sides);
        self
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum SizeResult {
    Iid {
        sizing: SizingResult,
        #[serde(skip_serializing_if = "Option::is_none")]
        rule_of_thumb_n: Option<u64>,
    },
    Clustered {
        plan: ClusteredSizingPlan,
        zero_session_users_dropped: u64,
        #[serde(skip_serializing_if = "Option::is_none")]
        traffic: Option<TrafficPlan>,
    },
    Kernel {
        sizing: SizingResult,
    },
}

fn cmd_size(mut args: SizeArgs) -> Result<(), CmdError> {
    if let Some(path) = args.config.take() {
        args = args.merge(load_config(&path)?);
    }
    let format = args.format.unwrap_or(Format::Text);
    let design = design_from(args.alpha, args.power, args.sides)?;
    args.alpha = Some(design.alpha.value());
    args.power = Some(design.power.value());
    args.sides = Some(match design.sides {
        Sides::One => SidesArg::One,
        Sides::Two => SidesArg::Two,
    });

    if args.iid == args.clustered {
        return Err(usage("exactly one of --iid or --clustered must be given"));
    }
    let lift = match (args.delta, args.rel_lift) {
        (Some(d), None) => PlannedLift::Absolute(d),
        (None, Some(r)) => PlannedLift::Relative(r),
        _ => return Err(usage("exactly one of --delta or --rel-lift must be given")),
    };

    let (result, text) = if args.iid {
        size_iid(&args, lift, &design)?
    } else {
        size_clustered_cmd(&args, lift, &design)?
    };
    let report = Report::new("size", &args, result);
    print_report(&report, format, text)
}

fn size_iid(
    args: &SizeArgs,
    lift: PlannedLift,
    design: &DesignParams,
) -> Result<(SizeResult, Vec<String>), CmdError> {
    if args.input.is_some() || args.h.is_some() {
        return Err(usage("--input/--h apply to --clustered sizing only"));
    }
    if args.binary == args.continuous {
        return Err(usage(
            "--iid sizing needs exactly one of --binary or --continuous",
        ));
    }
    let sizing = if args.binary {
        let p = Probability::new(require(args.p, "--p")?)?;
        match lift {
            PlannedLift::Absolute(d) => size_iid_binary(p, d, design)?,
            PlannedLift::Relative(r) => size_relative_iid_binary(p, r, design)?,
        }
    } else {
        let sigma2 = require(args.sigma2, "--sigma2")?;
        match lift {
            PlannedLift::Absolute(d) => size_iid_continuous(sigma2, d, design)?,
            PlannedLift::Relative(r) => {
                let mean = require(args.mean, "--mean (baseline for a relative lift)")?;
                size_relative_iid_continuous(mean, sigma2, r, design)?
            }
        }
    };

    // The 16*sigma^2/delta^2 ballpark only applies at the conventional design.
    let rule_of_thumb_n = match (args.continuous, lift, design.sides) {
        (true, PlannedLift::Absolute(d), Sides::Two)
            if design.alpha.value() == 0.05 && design.power.value() == 0.8 =>
        {
            Some((16.0 * args.sigma2.unwrap() / (d * d)).ceil() as u64)
        }
        _ => None,
    };

    let mut text = vec![
        format!("required per arm: {} observations", sizing.n_per_arm),
        format!(
            "implied minimum significant lift: {:.6}",
            sizing.implied_mod
        ),
        format!(
            "z_alpha = {:.6}, z_beta = {:.6}",
            sizing.z_alpha, sizing.z_beta
        ),
    ];
    if let Some(rot) = rule_of_thumb_n {
        text.push(format!(
            "rule-of-thumb cross-check (16*variance/lift^2): {rot}"
        ));
    }
    Ok((
        SizeResult::Iid {
            sizing,
            rule_of_thumb_n,
        },
        text,
    ))
}

fn size_clustered_cmd(
    args: &SizeArgs,
    lift: PlannedLift,
    design: &DesignParams,
) -> Result<(SizeResult, Vec<String>), CmdError> {
    let metric = if args.continuous {
        MetricMode::Continuous
    } else {
        MetricMode::Binary
    };

    if let Some(h) = args.h {
        // Kernel supplied directly: enforce window consistency before sizing.
        match (args.window_days, args.h_window_days) {
            (Some(w), Some(hw)) if w != hw && !args.allow_window_mismatch => {
                return Err(CmdError::Core(CoreError::Infeasible(format!(
                    "the variance kernel is window-specific: --h was estimated over {hw} days \
                     but the experiment plans {w}; re-estimate over the planned window or pass \
                     --allow-window-mismatch"
                ))));
            }
            _ => {}
        }
        let mut sizing = match lift {
            PlannedLift::Absolute(d) => size_clustered(h, d, design)?,
            PlannedLift::Relative(r) => {
                let baseline = args.p.or(args.mean).ok_or_else(|| {
                    usage("relative clustered sizing from --h needs --p or --mean")
                })?;
                if metric == MetricMode::Binary {
                    let implied = (1.0 + r) * baseline;
                    if implied <= 0.0 || implied >= 1.0 {
                        return Err(CmdError::Core(CoreError::Infeasible(format!(
                            "implied treatment rate {implied} is outside (0,1)"
                        ))));
                    }
                }
                size_clustered_relative(baseline, h, r, design)?
            }
        };
        sizing.window_days = args.h_window_days.or(args.window_days);
        let text = vec![
            format!(
                "required per arm: {} users (randomization units)",
                sizing.n_per_arm
            ),
            format!("variance kernel h: {h}"),
            format!(
                "implied minimum significant lift: {:.6}",
                sizing.implied_mod
            ),
        ];
        return Ok((SizeResult::Kernel { sizing }, text));
    }

    let input = require(args.input.clone(), "--input (or --h)")?;
    let (aggregates, dropped) = match detect_csv_kind(&input)? {
        CsvKind::Sessions => {
            let file = fs::File::open(&input).map_err(CoreError::from)?;
            let (aggs, _) = aggregate_sessions_from(file, metric)?;
            (aggs, 0)
        }
        CsvKind::Aggregates => {
            let file = fs::File::open(&input).map_err(CoreError::from)?;
            read_aggregates_from(file)?
        }
    };
    if dropped > 0 {
        eprintln!(
            "warning: dropped {dropped} zero-session users from {}",
            input.display()
        );
    }

    let mut plan = plan_clustered_sizing(&aggregates, lift, metric, design, args.window_days)?;
    if !args.compare_standard {
        plan.standard_comparison = None;
    }
    let traffic = match args.available_users {
        Some(available) => Some(traffic_plan(
            plan.k,
            available,
            args.window_days.unwrap_or(14),
        )?),
        None => None,
    };

    let mut text = vec![
        format!("required per arm: {} users (randomization units)", plan.k),
        format!("variance kernel h: {} (exact {:.6})", plan.h, plan.h_exact),
        format!("session-level baseline: {:.6}", plan.metric_mean),
        format!(
            "expected sessions collected per arm: {}",
            plan.sessions_estimate
        ),
        format!(
            "implied minimum significant lift: {:.6}",
            plan.sizing.implied_mod
        ),
    ];
    if let Some(cmp) = &plan.standard_comparison {
        text.push(format!(
            "independence assumption would ask for only {} sessions per arm \
             (vs {} actually collected): an under-powered design",
            cmp.n_iid_sessions_per_arm, cmp.delta_sessions_per_arm
        ));
    }
    if let Some(t) = &traffic {
        text.push(format!(
            "traffic: {:.1}% per arm of {} users, feasible: {}",
            t.pct_per_arm * 100.0,
            t.available_users_in_window,
            t.feasible
        ));
        text.push(t.recommendation.clone());
    }
    Ok((
        SizeResult::Clustered {
            plan,
            zero_session_users_dropped: dropped,
            traffic,
        },
        text,
    ))
}

// ---------------------------------------------------------------------------
// mod

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct ModArgs {
    /// The lift the experiment is powered to detect.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "mod_value")]
    ate: Option<f64>,
    /// A known minimum significant lift; back-calculates the powered lift.
    #[arg(long = "mod", allow_hyphen_values = true)]
    mod_value: Option<f64>,
    /// Type I error rate [default: 0.05].
    #[arg(long)]
    alpha: Option<f64>,
    /// Target power [default: 0.8].
    #[arg(long)]
    power: Option<f64>,
    /// Test sidedness [default: two].
    #[arg(long, value_enum)]
    sides: Option<SidesArg>,
    /// Output format [default: text].
    #[arg(long, value_enum)]
    #[serde(skip)]
    format: Option<Format>,
    /// JSON file with the same keys as these flags (or a previous report).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct ModResult {
    /// |MOD| / |ATE| at this design.
    ratio: f64,
    ate: f64,
    mod_value: f64,
}

fn cmd_mod(mut args: ModArgs) -> Result<(), CmdError> {
    if let Some(path) = args.config.take() {
        let file: ModArgs = load_config(&path)?;
        args.ate = args.ate.or(file.ate);
        args.mod_value = args.mod_value.or(file.mod_value);
        args.alpha = args.alpha.or(file.alpha);
        args.power = args.power.or(file.power);
        args.sides = args.sides.or(file.sides);
    }
    let format = args.format.unwrap_or(Format::Text);
    let design = design_from(args.alpha, args.power, args.sides)?;
    args.alpha = Some(design.alpha.value());
    args.power = Some(design.power.value());

    let (ate, mod_value) = match (args.ate, args.mod_value) {
        (Some(ate), None) => (ate, mod_from_ate(ate, &design)?),
        (None, Some(m)) => (ate_from_mod(m, &design)?, m),
        _ => return Err(usage("exactly one of --ate or --mod must be given")),
    };
    let result = ModResult {
        ratio: mod_ratio(&design),
        ate,
        mod_value,
    };
    let text = vec![
        format!("minimum significant lift: {:.6}", result.mod_value),
        format!("powered lift: {:.6}", result.ate),
        format!("ratio |MOD|/|ATE| at this design: {:.4}", result.ratio),
    ];
    let report = Report::new("mod", &args, result);
    print_report(&report, format, text)
}

// ---------------------------------------------------------------------------
// allocate

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct AllocateArgs {
    /// Treatment share of total traffic, in (0, 0.5].
    #[arg(long)]
    f: Option<f64>,
    /// Absolute lift to detect.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    /// Observation variance.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Type I error rate [default: 0.05].
    #[arg(long)]
    alpha: Option<f64>,
    /// Target power [default: 0.8].
    #[arg(long)]
    power: Option<f64>,
    /// Test sidedness [default: two].
    #[arg(long, value_enum)]
    sides: Option<SidesArg>,
    /// Output format [default: text].
    #[arg(long, value_enum)]
    #[serde(skip)]
    format: Option<Format>,
    /// JSON file with the same keys as these flags (or a previous report).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn cmd_allocate(mut args: AllocateArgs) -> Result<(), CmdError> {
    if let Some(path) = args.config.take() {
        let file: AllocateArgs = load_config(&path)?;
        args.f = args.f.or(file.f);
        args.delta = args.delta.or(file.delta);
        args.sigma2 = args.sigma2.or(file.sigma2);
        args.alpha = args.alpha.or(file.alpha);
        args.power = args.power.or(file.power);
        args.sides = args.sides.or(file.sides);
    }
    let format = args.format.unwrap_or(Format::Text);
    let design = design_from(args.alpha, args.power, args.sides)?;
    args.alpha = Some(design.alpha.value());
    args.power = Some(design.power.value());

    let f = require(args.f, "--f")?;
    let delta = require(args.delta, "--delta")?;
    let sigma2 = require(args.sigma2, "--sigma2")?;
    let result: AllocationResult = allocate_unbalanced(f, delta, sigma2, &design)?;

    let mut text = vec![
        format!(
            "treatment {} + control {} = {} total",
            result.n_treat, result.n_control, result.n_all
        ),
        format!(
            "duration vs balanced: {:+.2}%",
            (result.duration_ratio_vs_balanced - 1.0) * 100.0
        ),
        format!(
            "total sample vs balanced: {:+.2}%",
            (result.total_ratio_vs_balanced - 1.0) * 100.0
        ),
        format!("achieved power: {:.4}", result.achieved_power),
    ];
    if result.warning_low_treatment_share {
        text.push(
            "warning: treatment share below 0.2 gives unreliable treatment estimates \
             and little further duration gain"
                .to_string(),
        );
    }
    let report = Report::new("allocate", &args, result);
    print_report(&report, format, text)
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct IngestArgs {
    /// Session-level CSV (user_id,session_id,metric).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Metric kind for validation [default: binary].
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Where to write the user aggregates; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Output format for the summary [default: text].
    #[arg(long, value_enum)]
    #[serde(skip)]
    format: Option<Format>,
    /// JSON file with the same keys as these flags (or a previous report).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct IngestResult {
    summary: AggregationSummary,
    output: Option<String>,
}

fn cmd_ingest(mut args: IngestArgs) -> Result<(), CmdError> {
    if let Some(path) = args.config.take() {
        let file: IngestArgs = load_config(&path)?;
        args.input = args.input.or(file.input);
        args.metric = args.metric.or(file.metric);
        args.output = args.output.or(file.output);
    }
    let format = args.format.unwrap_or(Format::Text);
    let input = require(args.input.clone(), "--input")?;
    let metric = match args.metric.unwrap_or(MetricArg::Binary) {
        MetricArg::Binary => MetricMode::Binary,
        MetricArg::Continuous => MetricMode::Continuous,
    };

    let file = fs::File::open(&input).map_err(CoreError::from)?;
    let (aggregates, summary) = aggregate_sessions_from(file, metric)?;
    if summary.rows == 0 {
        eprintln!("warning: {} contains no session rows", input.display());
    }

    match &args.output {
        Some(path) => {
            let out = fs::File::create(path).map_err(CoreError::from)?;
            abpower::ingest::write_aggregates(out, &aggregates, metric)?;
        }
        None => {
            let mut buf = Vec::new();
            abpower::ingest::write_aggregates(&mut buf, &aggregates, metric)?;
            std::io::stdout().write_all(&buf).map_err(CoreError::from)?;
        }
    }

    let result = IngestResult {
        output: args.output.as_ref().map(|p| p.display().to_string()),
        summary,
    };
    let text = vec![
        format!("rows: {}", result.summary.rows),
        format!("users: {}", result.summary.users),
        format!(
            "duplicate (user, session) pairs kept: {}",
            result.summary.duplicate_session_pairs
        ),
    ];
    // When aggregates go to stdout, the summary must not mix with them.
    if args.output.is_some() {
        let report = Report::new("ingest", &args, result);
        print_report(&report, format, text)?;
    } else {
        for line in text {
            eprintln!("{line}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct SimulateArgs {
    /// Which verification suite to run [default: clustered].
    #[arg(long, value_enum)]
    suite: Option<SuiteArg>,
    /// Benchmark case I..V (clustered and undersized suites).
    #[arg(long)]
    case: Option<String>,
    /// Baseline rate (relative and mod suites).
    #[arg(long)]
    p: Option<f64>,
    /// Relative lift (relative suites).
    #[arg(long = "rel-lift", allow_hyphen_values = true)]
    rel_lift: Option<f64>,
    /// Absolute lift (mod suite).
    #[arg(long, allow_hyphen_values = true)]
    ate: Option<f64>,
    /// Baseline mean used in the relative-lift standard error.
    #[arg(long = "mean-mode", value_enum)]
    mean_mode: Option<MeanModeArg>,
    /// Override the per-arm user count (clustered suite).
    #[arg(long)]
    k: Option<u64>,
    /// Replicates per hypothesis [default: 10000].
    #[arg(long)]
    reps: Option<u64>,
    /// Master seed; defaults to ABPOWER_SEED or a logged random value.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Results do not depend on this.
    #[arg(long)]
    #[serde(skip)]
    threads: Option<usize>,
    /// Type I error rate [default: 0.05].
    #[arg(long)]
    alpha: Option<f64>,
    /// Target power [default: 0.8].
    #[arg(long)]
    power: Option<f64>,
    /// Test sidedness [default: two].
    #[arg(long, value_enum)]
    sides: Option<SidesArg>,
    /// Write the observed-lift histogram CSV here (mod suite).
    #[arg(long = "hist-out")]
    #[serde(skip)]
    hist_out: Option<PathBuf>,
    /// Output format [default: text].
    #[arg(long, value_enum)]
    #[serde(skip)]
    format: Option<Format>,
    /// JSON file with the same keys as these flags (or a previous report).
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

impl SimulateArgs {
    fn merge(mut self, file: SimulateArgs) -> SimulateArgs {
        self.suite = self.suite.or(file.suite);
        self.case = self.case.or(file.case);
        self.p = self.p.or(file.p);
        self.rel_lift = self.rel_lift.or(file.rel_lift);
        self.ate = self.ate.or(file.ate);
        self.mean_mode = self.mean_mode.or(file.mean_mode);
        self.k = self.k.or(file.k);
        self.reps = self.reps.or(file.reps);
        self.seed = self.seed.or(file.seed);
        self.alpha = self.alpha.or(file.alpha);
        self.power = self.power.or(file.power);
        self.sides = self.sides.or(file.sides);
        self
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum SimulateResult {
    Clustered {
        #[serde(skip_serializing_if = "Option::is_none")]
        design: Option<HistoricalDesign>,
        report: SimulationReport,
    },
    Undersized {
        n_iid: u64,
        scenario_i: SimulationReport,
        scenario_ii: SimulationReport,
    },
    Relative {
        report: SimulationReport,
    },
    Mod {
        p_x: f64,
        ate: f64,
        n_per_arm: u64,
        reps: u64,
        significant_replicates: u64,
        min_significant_lift: f64,
        predicted_mod: f64,
        hist_rows: u64,
    },
}

fn resolve_seed(args: &SimulateArgs) -> Result<u64, CmdError> {
    if let Some(seed) = args.seed {
        return Ok(seed);
    }
    if let Ok(text) = std::env::var(SEED_ENV_VAR) {
        let seed: u64 = text
            .parse()
            .map_err(|e| usage(format!("{SEED_ENV_VAR}='{text}' is not a u64: {e}")))?;
        eprintln!("seed: {seed} (from {SEED_ENV_VAR})");
        return Ok(seed);
    }
    let seed: u64 = rand::random();
    eprintln!("seed: {seed} (randomly chosen; pass --seed {seed} to reproduce)");
    Ok(seed)
}

fn suite_text(report: &SimulationReport) -> Vec<String> {
    vec![
        format!("suite: {}", report.scenario_tag),
        format!("units per arm: {}", report.n_or_k_used),
        format!(
            "empirical type I error: {:.4} (margin {:.4})",
            report.empirical_alpha, report.mc_margin_alpha
        ),
        format!(
            "empirical power: {:.4} (margin {:.4})",
            report.empirical_power, report.mc_margin_power
        ),
        format!("seed: {}, rng: {}", report.master_seed, report.rng_family),
    ]
}

fn cmd_simulate(mut args: SimulateArgs) -> Result<(), CmdError> {
    if let Some(path) = args.config.take() {
        args = args.merge(load_config(&path)?);
    }
    let format = args.format.unwrap_or(Format::Text);
    let design = design_from(args.alpha, args.power, args.sides)?;
    args.alpha = Some(design.alpha.value());
    args.power = Some(design.power.value());
    args.sides = Some(match design.sides {
        Sides::One => SidesArg::One,
        Sides::Two => SidesArg::Two,
    });

    let seed = resolve_seed(&args)?;
    args.seed = Some(seed);
    let threads = args.threads.unwrap_or(0);
    let reps = args.reps.unwrap_or(10_000);
    args.reps = Some(reps);
    let suite = args.suite.unwrap_or(SuiteArg::Clustered);
    args.suite = Some(suite);

    let (result, text) = match suite {
        SuiteArg::Clustered => {
            let case_id: CaseId = require(args.case.clone(), "--case")?.parse()?;
            let case = ClusteredCase::preset(case_id);
            let (design_pass, k) = match args.k {
                Some(k) => (None, k),
                None => {
                    let hist = design_from_history(&case, &design, seed)?;
                    let k = hist.k_per_arm;
                    (Some(hist), k)
                }
            };
            let report = run_clustered_suite(&case, k, reps, &design, seed, threads)?;
            let mut text = suite_text(&report);
            if let Some(hist) = &design_pass {
                text.insert(
                    1,
                    format!(
                        "historical pass: h = {} (exact {:.6}) from {} users",
                        hist.h, hist.h_exact, hist.moments.k
                    ),
                );
            }
            (
                SimulateResult::Clustered {
                    design: design_pass,
                    report,
                },
                text,
            )
        }
        SuiteArg::Undersized => {
            let case_id: CaseId = require(args.case.clone(), "--case")?.parse()?;
            let case = ClusteredCase::preset(case_id);
            let n_iid = size_iid_binary(case.p_x, case.delta, &design)?.n_per_arm;
            let (scenario_i, scenario_ii) =
                run_undersized_scenarios(&case, n_iid, reps, &design, seed, threads)?;
            let mut text = vec![format!(
                "independence formula asks for {n_iid} sessions per arm"
            )];
            text.extend(suite_text(&scenario_i));
            text.extend(suite_text(&scenario_ii));
            (
                SimulateResult::Undersized {
                    n_iid,
                    scenario_i,
                    scenario_ii,
                },
                text,
            )
        }
        SuiteArg::Relative | SuiteArg::RelativeAbs => {
            let p = Probability::new(require(args.p, "--p")?)?;
            let rel = require(args.rel_lift, "--rel-lift")?;
            let report = if suite == SuiteArg::Relative {
                let mode: MeanMode = args.mean_mode.unwrap_or(MeanModeArg::Sample).into();
                run_relative_iid_suite(p, rel, reps, mode, &design, seed, threads)?
            } else {
                run_absolute_sized_relative_suite(p, rel, reps, &design, seed, threads)?
            };
            let text = suite_text(&report);
            (SimulateResult::Relative { report }, text)
        }
        SuiteArg::Mod => {
            let p = Probability::new(require(args.p, "--p")?)?;
            let ate = require(args.ate, "--ate")?;
            let hist = run_mod_experiment(p, ate, reps, &design, seed, threads)?;
            if let Some(path) = &args.hist_out {
                write_histogram(path, &hist)?;
            }
            let significant = hist.observed_lifts.iter().filter(|o| o.significant).count() as u64;
            let predicted = mod_from_ate(ate, &design)?;
            let text = vec![
                format!("observations per arm: {}", hist.n_per_arm),
                format!("significant replicates: {significant} of {reps}"),
                format!(
                    "minimum significant positive lift: {:.6} (predicted {:.6})",
                    hist.min_significant_lift, predicted
                ),
                match &args.hist_out {
                    Some(p) => format!("histogram written to {}", p.display()),
                    None => "pass --hist-out FILE to keep the per-replicate lifts".to_string(),
                },
            ];
            (
                SimulateResult::Mod {
                    p_x: hist.p_x,
                    ate: hist.ate,
                    n_per_arm: hist.n_per_arm,
                    reps: hist.reps,
                    significant_replicates: significant,
                    min_significant_lift: hist.min_significant_lift,
                    predicted_mod: predicted,
                    hist_rows: hist.observed_lifts.len() as u64,
                },
                text,
            )
        }
    };

    let report = Report::new("simulate", &args, result);
    print_report(&report, format, text)
}

fn write_histogram(path: &Path, hist: &ModHistogram) -> Result<(), CmdError> {
    let mut out = String::with_capacity(hist.observed_lifts.len() * 16 + 32);
    out.push_str("observed_lift,significant\n");
    for o in &hist.observed_lifts {
        out.push_str(&format!("{},{}\n", o.lift, o.significant));
    }
    fs::write(path, out).map_err(CoreError::from)?;
    Ok(())
}
