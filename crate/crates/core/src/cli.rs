//! Command-line front end.
//!
//! Four subcommands cover the workflow: `assess` checks pre-treatment
//! trends, `estimate` fits the combined estimator, `simulate` runs the
//! seeded study, and `plot-data` exports group-by-period means. The
//! machine interface is JSON with a fixed field order; when `--output`
//! routes the JSON to a file, a human-readable summary derived from that
//! same JSON goes to stdout. For a fixed seed and configuration the
//! output bytes are identical across runs and across worker counts.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gmm::{double_did, DoubleDidOptions, Regime};
use crate::inference::{
    normal_ci, normal_p_value, pretrend_test, BootstrapSpec, EstimateReport, PretrendReport,
    RNG_IDENTITY,
};
use crate::panel::{
    assign_groups, load_csv, CsvSchema, DatasetMode, Design, GroupAssignment, GroupSel,
    PanelDataset,
};
use crate::regression::double_did_regression;
use crate::sim::{run_study, SimEstimator, SimulationConfig};
use crate::staggered::{sa_double_did, sa_pretrend};

#[derive(Parser, Debug)]
#[command(
    name = "doubledid",
    version,
    about = "Difference-in-differences toolkit for panel data",
    long_about = "Estimates treatment effects on long-format panel or repeated \
                  cross-section data by combining difference contrasts of group \
                  means, with cluster-bootstrap uncertainty. Exit codes: 0 \
                  success, 2 bad input or configuration, 1 internal fault."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check pre-treatment trends with placebo contrasts and equivalence intervals
    Assess(AssessArgs),
    /// Estimate the treatment effect by combining difference contrasts
    Estimate(EstimateArgs),
    /// Run the seeded simulation study and summarize bias and spread
    Simulate(SimulateArgs),
    /// Export tidy group-by-period means for plotting
    PlotData(PlotDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Repeated observations of the same units
    Panel,
    /// Fresh samples each period; treatment column marks group membership
    Rcs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignArg {
    /// Every treated unit switches at one common onset
    Basic,
    /// Units adopt at heterogeneous times and stay treated
    Sa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    /// Group gap constant over all pre-periods: combines orders from 1 up
    Extended,
    /// Group gap may move linearly: combines orders from 2 up
    TrendsInTrends,
}

impl RegimeArg {
    fn to_regime(self) -> Regime {
        match self {
            RegimeArg::Extended => Regime::ExtendedParallel,
            RegimeArg::TrendsInTrends => Regime::TrendsInTrends,
        }
    }

    fn label(self) -> &'static str {
        match self {
            RegimeArg::Extended => "extended",
            RegimeArg::TrendsInTrends => "trends-in-trends",
        }
    }
}

/// Dataset location and schema, shared by the data-driven subcommands.
#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Input CSV (long format, header row required)
    #[arg(long)]
    input: PathBuf,

    /// Dataset layout
    #[arg(long, value_enum, default_value_t = ModeArg::Panel)]
    mode: ModeArg,

    /// Group structure of the treatment
    #[arg(long, value_enum, default_value_t = DesignArg::Basic)]
    design: DesignArg,

    /// Unit identifier column
    #[arg(long, default_value = "unit")]
    unit: String,

    /// Period column (integers)
    #[arg(long, default_value = "time")]
    time: String,

    /// Outcome column
    #[arg(long, default_value = "outcome")]
    outcome: String,

    /// Treatment column (0/1/true/false)
    #[arg(long, default_value = "treatment")]
    treatment: String,

    /// Cluster column for block resampling; defaults to the unit
    #[arg(long)]
    cluster: Option<String>,

    /// Comma-separated covariate columns
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,

    /// First treated period; required for rcs mode, inferred for panels
    #[arg(long)]
    onset: Option<i64>,
}

#[derive(Args, Debug)]
struct AssessArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Placebo orders to test (basic design); defaults to 1 plus, when a
    /// third pre-period exists, 2
    #[arg(long, value_delimiter = ',')]
    order: Vec<u32>,

    /// Pre-adoption gaps to probe per cohort (sa design)
    #[arg(long, default_value_t = 5)]
    depth: u32,

    /// Bootstrap replicates
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Confidence level for intervals and the equivalence bound
    #[arg(long, default_value_t = 0.95)]
    level: f64,

    /// Write the JSON report here and print a text summary to stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Assumption regime; must be chosen explicitly, assess only informs
    #[arg(long, value_enum)]
    regime: RegimeArg,

    /// Difference orders to combine; defaults to the regime's full ladder
    #[arg(long, value_delimiter = ',')]
    orders: Vec<u32>,

    /// Anticipation lead: contrast this many periods after the onset
    #[arg(long, default_value_t = 0)]
    lead: u32,

    /// Bootstrap replicates
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Confidence level for the reported interval
    #[arg(long, default_value_t = 0.95)]
    level: f64,

    /// Write the JSON report here and print a text summary to stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// 1 = constant group gap, 2 = gap growing linearly in time
    #[arg(long, default_value_t = 1)]
    scenario: u8,

    /// Units per generated panel
    #[arg(long, default_value_t = 1000)]
    n: usize,

    /// AR(1) coefficient of the unit noise
    #[arg(long, default_value_t = 0.6)]
    rho: f64,

    /// Monte Carlo replicates
    #[arg(long, default_value_t = 1000)]
    replicates: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Bootstrap replicates inside each Monte Carlo replicate
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,

    /// Estimators to run: double, extended, sequential, standard
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,

    /// Write the JSON report here and print a text summary to stdout
    #[arg(long)]
    output: Option<PathBuf>,

    /// Also write the summary table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotDataArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Write the CSV here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Entry point for the binary. Returns the process exit code.
pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", e);
        return e.exit_code();
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

/// Honors DOUBLEDID_THREADS for the worker pool. Results do not depend on
/// the count; only wall time does.
fn configure_threads() -> Result<()> {
    let raw = match std::env::var("DOUBLEDID_THREADS") {
        Ok(v) => v,
        Err(_) => return Ok(()),
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::Config(format!(
                "DOUBLEDID_THREADS must be a positive integer, got '{}'",
                raw
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("could not size the worker pool: {}", e)))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Assess(args) => cmd_assess(&args),
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::PlotData(args) => cmd_plot_data(&args),
    }
}

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Envelope written around every JSON report.
#[derive(Serialize)]
struct Report<C: Serialize, R: Serialize> {
    version: &'static str,
    command: &'static str,
    rng: &'static str,
    config: C,
    results: R,
}

/// Resolved dataset configuration echoed into every report.
#[derive(Serialize)]
struct DataConfig {
    input: String,
    mode: &'static str,
    design: &'static str,
    unit: String,
    time: String,
    outcome: String,
    treatment: String,
    cluster: Option<String>,
    covariates: Vec<String>,
    /// First treated period, as given or as inferred from the data.
    onset: Option<i64>,
}

fn load_data(args: &DataArgs) -> Result<(PanelDataset, GroupAssignment, DataConfig)> {
    let schema = CsvSchema {
        unit: args.unit.clone(),
        time: args.time.clone(),
        outcome: args.outcome.clone(),
        treatment: args.treatment.clone(),
        cluster: args.cluster.clone(),
        covariates: args.covariates.clone(),
    };
    let mode = match args.mode {
        ModeArg::Panel => DatasetMode::Panel,
        ModeArg::Rcs => DatasetMode::RepeatedCrossSection,
    };
    let design = match args.design {
        DesignArg::Basic => Design::Basic,
        DesignArg::Sa => Design::Staggered,
    };
    let data = load_csv(&args.input, &schema, mode, args.onset)?;
    let assign = assign_groups(&data, design)?;
    let config = DataConfig {
        input: args.input.display().to_string(),
        mode: match args.mode {
            ModeArg::Panel => "panel",
            ModeArg::Rcs => "rcs",
        },
        design: match args.design {
            DesignArg::Basic => "basic",
            DesignArg::Sa => "sa",
        },
        unit: args.unit.clone(),
        time: args.time.clone(),
        outcome: args.outcome.clone(),
        treatment: args.treatment.clone(),
        cluster: args.cluster.clone(),
        covariates: args.covariates.clone(),
        onset: data.onset(),
    };
    Ok((data, assign, config))
}

fn check_level(level: f64) -> Result<()> {
    if !(0.5..1.0).contains(&level) {
        return Err(Error::Config(format!(
            "confidence level must lie in [0.5, 1), got {}",
            level
        )));
    }
    Ok(())
}

/// Serializes the report, writes it to `output` or stdout, and prints the
/// text summary (derived from the serialized JSON, never from the inputs)
/// when the JSON went to a file.
fn emit<C: Serialize, R: Serialize>(
    report: &Report<C, R>,
    output: Option<&Path>,
    render: fn(&Value) -> String,
) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Internal(format!("report serialization failed: {}", e)))?;
    match output {
        Some(path) => {
            write_file(path, format!("{}\n", json).as_bytes())?;
            let value: Value = serde_json::from_str(&json)
                .map_err(|e| Error::Internal(format!("report round-trip failed: {}", e)))?;
            print!("{}", render(&value));
        }
        None => println!("{}", json),
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

// ---------------------------------------------------------------- assess

#[derive(Serialize)]
struct AssessConfig {
    #[serde(flatten)]
    data: DataConfig,
    orders: Vec<u32>,
    depth: Option<u32>,
    bootstrap: usize,
    seed: u64,
    level: f64,
}

#[derive(Serialize)]
struct AssessBasicResults {
    tests: Vec<PretrendReport>,
    notes: Vec<String>,
}

/// One cohort's contribution to an aggregated placebo gap.
#[derive(Serialize)]
struct SaGapContribution {
    adoption: i64,
    weight: f64,
    point: f64,
    se: f64,
}

/// Placebo gap aggregated over adoption cohorts. Cohort contrasts are
/// treated as independent when pooling their uncertainty; the equivalence
/// bound comes from the standardized combination.
#[derive(Serialize)]
struct SaGapRow {
    gap: u32,
    point: f64,
    se: f64,
    p_value: f64,
    std_point: f64,
    std_se: f64,
    ci_lower: f64,
    ci_upper: f64,
    equiv_bound: f64,
    cohorts: Vec<SaGapContribution>,
    /// Cohorts without enough history for this gap.
    excluded: Vec<i64>,
}

#[derive(Serialize)]
struct SaCohortAssess {
    adoption: i64,
    share: f64,
    gaps: Vec<PretrendReport>,
}

#[derive(Serialize)]
struct SkippedCohort {
    adoption: i64,
    reason: String,
}

#[derive(Serialize)]
struct AssessSaResults {
    gaps: Vec<SaGapRow>,
    cohorts: Vec<SaCohortAssess>,
    skipped: Vec<SkippedCohort>,
    notes: Vec<String>,
}

fn cmd_assess(args: &AssessArgs) -> Result<()> {
    check_level(args.level)?;
    let (data, assign, data_config) = load_data(&args.data)?;
    let boot = BootstrapSpec::new(args.bootstrap, args.seed);
    let mut notes = Vec::new();
    if !args.data.covariates.is_empty() {
        notes.push("covariate columns are validated but not used by the trend assessment".into());
    }

    match args.data.design {
        DesignArg::Basic => {
            let t_star = assign.onset_index().ok_or_else(|| {
                Error::Misuse("basic-design assessment needs a common onset".into())
            })?;
            let orders: Vec<u32> = if args.order.is_empty() {
                if t_star >= 3 {
                    vec![1, 2]
                } else {
                    vec![1]
                }
            } else {
                args.order.clone()
            };
            let tests: Vec<PretrendReport> = orders
                .iter()
                .map(|&k| pretrend_test(&data, &assign, k, &boot, args.level))
                .collect::<Result<_>>()?;
            let config = AssessConfig {
                data: data_config,
                orders,
                depth: None,
                bootstrap: args.bootstrap,
                seed: args.seed,
                level: args.level,
            };
            let report = Report {
                version: VERSION,
                command: "assess",
                rng: RNG_IDENTITY,
                config,
                results: AssessBasicResults { tests, notes },
            };
            emit(&report, args.output.as_deref(), render_assess)
        }
        DesignArg::Sa => {
            let results = assess_staggered(&data, &assign, args, &boot, notes)?;
            let config = AssessConfig {
                data: data_config,
                orders: Vec::new(),
                depth: Some(args.depth),
                bootstrap: args.bootstrap,
                seed: args.seed,
                level: args.level,
            };
            let report = Report {
                version: VERSION,
                command: "assess",
                rng: RNG_IDENTITY,
                config,
                results,
            };
            emit(&report, args.output.as_deref(), render_assess)
        }
    }
}

fn assess_staggered(
    data: &PanelDataset,
    assign: &GroupAssignment,
    args: &AssessArgs,
    boot: &BootstrapSpec,
    mut notes: Vec<String>,
) -> Result<AssessSaResults> {
    if args.depth == 0 {
        return Err(Error::Config("placebo depth must be at least 1".into()));
    }
    let mut kept: Vec<(usize, i64, Vec<PretrendReport>)> = Vec::new();
    let mut skipped = Vec::new();
    for t in assign.adoption_times() {
        let adoption = data.time_label(t);
        match sa_pretrend(data, assign, adoption, args.depth, boot, args.level) {
            Ok(gaps) => kept.push((t, adoption, gaps.into_iter().map(|g| g.report).collect())),
            Err(e) if e.exit_code() == 2 => skipped.push(SkippedCohort {
                adoption,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(Error::Misuse(
            "no adoption cohort has enough pre-treatment history for a placebo contrast".into(),
        ));
    }
    let cohort_idx: Vec<usize> = kept.iter().map(|(t, _, _)| *t).collect();
    let shares = crate::staggered::cohort_shares(data, assign, &cohort_idx)?;
    if !skipped.is_empty() {
        notes.push(format!(
            "cohort weights renormalized over the {} assessable cohorts",
            kept.len()
        ));
    }

    let max_gap = kept.iter().map(|(_, _, g)| g.len()).max().unwrap_or(0);
    let mut gap_rows = Vec::with_capacity(max_gap);
    for j in 0..max_gap {
        let mut contributors = Vec::new();
        let mut excluded = Vec::new();
        let mut weight_sum = 0.0;
        for ((_, adoption, gaps), share) in kept.iter().zip(&shares) {
            if j < gaps.len() {
                contributors.push((*adoption, *share, &gaps[j]));
                weight_sum += share;
            } else {
                excluded.push(*adoption);
            }
        }
        let mut point = 0.0;
        let mut var = 0.0;
        let mut std_point = 0.0;
        let mut std_var = 0.0;
        let mut cohorts = Vec::with_capacity(contributors.len());
        for (adoption, share, report) in &contributors {
            let w = share / weight_sum;
            point += w * report.point;
            var += w * w * report.se * report.se;
            std_point += w * report.equivalence.point;
            std_var += w * w * report.equivalence.se * report.equivalence.se;
            cohorts.push(SaGapContribution {
                adoption: *adoption,
                weight: w,
                point: report.point,
                se: report.se,
            });
        }
        let se = var.sqrt();
        let std_se = std_var.sqrt();
        let eq = crate::inference::equivalence_ci(std_point, std_se, None, args.level)?;
        let (ci_lower, ci_upper) = normal_ci(std_point, std_se, args.level);
        gap_rows.push(SaGapRow {
            gap: j as u32,
            point,
            se,
            p_value: normal_p_value(point, se),
            std_point,
            std_se,
            ci_lower,
            ci_upper,
            equiv_bound: eq.bound,
            cohorts,
            excluded,
        });
    }

    let cohorts = kept
        .into_iter()
        .zip(shares)
        .map(|((_, adoption, gaps), share)| SaCohortAssess {
            adoption,
            share,
            gaps,
        })
        .collect();
    Ok(AssessSaResults {
        gaps: gap_rows,
        cohorts,
        skipped,
        notes,
    })
}

// -------------------------------------------------------------- estimate

#[derive(Serialize)]
struct EstimateConfig {
    #[serde(flatten)]
    data: DataConfig,
    regime: &'static str,
    /// Difference orders actually combined after resolving defaults.
    orders: Vec<u32>,
    lead: u32,
    bootstrap: usize,
    seed: u64,
    level: f64,
    /// Whether covariate-adjusted regression components were used.
    adjusted: bool,
}

#[derive(Serialize)]
struct Component {
    label: String,
    value: f64,
}

#[derive(Serialize)]
struct EstimateResults {
    report: EstimateReport,
    components: Vec<Component>,
    /// Bootstrap covariance of the components, row major.
    vcov: Vec<Vec<f64>>,
    variance: Option<f64>,
    j_stat: Option<f64>,
    redrawn: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    cohorts: Option<Vec<CohortResult>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped: Option<Vec<SkippedCohort>>,
}

#[derive(Serialize)]
struct CohortResult {
    adoption: i64,
    share: f64,
    point: f64,
    se: f64,
    components: Vec<f64>,
    weights: Vec<f64>,
    notes: Vec<String>,
}

fn vcov_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    check_level(args.level)?;
    let (data, assign, data_config) = load_data(&args.data)?;
    let boot = BootstrapSpec::new(args.bootstrap, args.seed);
    let adjusted = !args.data.covariates.is_empty();
    let orders_flag = if args.orders.is_empty() {
        None
    } else {
        Some(args.orders.clone())
    };

    let (orders, results) = match (args.data.design, adjusted) {
        (DesignArg::Basic, false) => {
            let opts = DoubleDidOptions {
                regime: args.regime.to_regime(),
                orders: orders_flag,
                lead: args.lead,
                max_order: None,
            };
            let fit = double_did(&data, &assign, &opts, &boot)?;
            let mut report = EstimateReport::from_point_se(
                "double-did",
                fit.result.point,
                fit.se,
                args.level,
            );
            report.weights = fit.result.weights.clone();
            report.notes = fit.notes.clone();
            let results = EstimateResults {
                report,
                components: fit
                    .component_labels
                    .iter()
                    .zip(&fit.components)
                    .map(|(l, v)| Component {
                        label: l.clone(),
                        value: *v,
                    })
                    .collect(),
                vcov: vcov_rows(&fit.vcov),
                variance: fit.result.variance,
                j_stat: fit.result.j_stat,
                redrawn: fit.redrawn,
                cohorts: None,
                dropped: None,
            };
            (fit.orders, results)
        }
        (DesignArg::Basic, true) => estimate_adjusted(&data, &assign, args, &boot)?,
        (DesignArg::Sa, false) => {
            let opts = DoubleDidOptions {
                regime: args.regime.to_regime(),
                orders: orders_flag,
                lead: args.lead,
                max_order: None,
            };
            let fit = sa_double_did(&data, &assign, &opts, &boot)?;
            let mut report = EstimateReport::from_point_se(
                "sa-double-did",
                fit.result.point,
                fit.se,
                args.level,
            );
            report.weights = fit.result.weights.clone();
            report.notes = fit.notes.clone();
            let results = EstimateResults {
                report,
                components: fit
                    .component_labels
                    .iter()
                    .zip(&fit.averaged)
                    .map(|(l, v)| Component {
                        label: l.clone(),
                        value: *v,
                    })
                    .collect(),
                vcov: vcov_rows(&fit.vcov),
                variance: fit.result.variance,
                j_stat: fit.result.j_stat,
                redrawn: fit.redrawn,
                cohorts: Some(
                    fit.cohorts
                        .iter()
                        .map(|c| CohortResult {
                            adoption: c.adoption,
                            share: c.share,
                            point: c.result.point,
                            se: c.se,
                            components: c.components.clone(),
                            weights: c.result.weights.clone(),
                            notes: c.notes.clone(),
                        })
                        .collect(),
                ),
                dropped: Some(
                    fit.dropped
                        .iter()
                        .map(|(adoption, reason)| SkippedCohort {
                            adoption: *adoption,
                            reason: reason.clone(),
                        })
                        .collect(),
                ),
            };
            (fit.orders, results)
        }
        (DesignArg::Sa, true) => {
            return Err(Error::Config(
                "covariate adjustment is not available for the staggered combination; \
                 run per-cohort regressions instead"
                    .into(),
            ));
        }
    };

    let config = EstimateConfig {
        data: data_config,
        regime: args.regime.label(),
        orders,
        lead: args.lead,
        bootstrap: args.bootstrap,
        seed: args.seed,
        level: args.level,
        adjusted,
    };
    let report = Report {
        version: VERSION,
        command: "estimate",
        rng: RNG_IDENTITY,
        config,
        results,
    };
    emit(&report, args.output.as_deref(), render_estimate)
}

/// Covariate-adjusted path: regression components instead of cell means.
/// Supports orders 1 and 2 at lead zero, which is what the regression
/// models express.
fn estimate_adjusted(
    data: &PanelDataset,
    assign: &GroupAssignment,
    args: &EstimateArgs,
    boot: &BootstrapSpec,
) -> Result<(Vec<u32>, EstimateResults)> {
    if args.lead != 0 {
        return Err(Error::Config(
            "covariate adjustment supports lead 0 only".into(),
        ));
    }
    let orders: Vec<u32> = if args.orders.is_empty() {
        match args.regime {
            RegimeArg::Extended => vec![1, 2],
            RegimeArg::TrendsInTrends => vec![2],
        }
    } else {
        let mut o = args.orders.clone();
        o.sort_unstable();
        o.dedup();
        if o.iter().any(|&k| k != 1 && k != 2) {
            return Err(Error::Config(
                "covariate adjustment supports difference orders 1 and 2 only".into(),
            ));
        }
        o
    };

    let fit = double_did_regression(data, assign, true, boot)?;
    let idx: Vec<usize> = orders.iter().map(|&k| (k - 1) as usize).collect();
    let (point, se, weights, variance, j_stat, notes, weight_matrix_note) = if idx.len() == 2 {
        let c = &fit.combined;
        (
            c.result.point,
            c.se,
            c.result.weights.clone(),
            c.result.variance,
            c.result.j_stat,
            c.notes.clone(),
            false,
        )
    } else {
        let i = idx[0];
        let point = fit.components[i];
        let se = fit.vcov[(i, i)].max(0.0).sqrt();
        (point, se, vec![1.0], None, None, Vec::new(), true)
    };
    let mut report = EstimateReport::from_point_se("double-did", point, se, args.level);
    report.weights = weights;
    report.notes = notes;
    if weight_matrix_note {
        report
            .notes
            .push("single component requested; no combination performed".into());
    }
    report
        .notes
        .extend(crate::regression::absorbed_notes(&fit.absorbed));

    let keep_components: Vec<Component> = idx
        .iter()
        .map(|&i| Component {
            label: fit.component_labels[i].clone(),
            value: fit.components[i],
        })
        .collect();
    let vcov = idx
        .iter()
        .map(|&i| idx.iter().map(|&j| fit.vcov[(i, j)]).collect())
        .collect();
    Ok((
        orders,
        EstimateResults {
            report,
            components: keep_components,
            vcov,
            variance,
            j_stat,
            redrawn: fit.redrawn,
            cohorts: None,
            dropped: None,
        },
    ))
}

// -------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulateResults {
    rows: Vec<crate::sim::SimRow>,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = SimulationConfig::new(args.scenario, args.n, args.rho, args.replicates, args.seed);
    cfg.bootstrap = args.bootstrap;
    if !args.estimators.is_empty() {
        cfg.estimators = args
            .estimators
            .iter()
            .map(|s| s.parse::<SimEstimator>())
            .collect::<Result<_>>()?;
    }
    let study = run_study(&cfg)?;

    if let Some(csv_path) = &args.csv {
        let mut out = Vec::new();
        writeln!(out, "# doubledid {}", VERSION).unwrap();
        writeln!(
            out,
            "# config: {}",
            serde_json::to_string(&study.config)
                .map_err(|e| Error::Internal(format!("config serialization failed: {}", e)))?
        )
        .unwrap();
        writeln!(out, "estimator,scenario,n,rho,replicates,seed,abs_bias,se").unwrap();
        for r in &study.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.estimator, r.scenario, r.n, r.rho, r.replicates, r.seed, r.abs_bias, r.se
            )
            .unwrap();
        }
        write_file(csv_path, &out)?;
    }

    let report = Report {
        version: VERSION,
        command: "simulate",
        rng: RNG_IDENTITY,
        config: study.config,
        results: SimulateResults { rows: study.rows },
    };
    emit(&report, args.output.as_deref(), render_simulate)
}

// ------------------------------------------------------------- plot-data

fn cmd_plot_data(args: &PlotDataArgs) -> Result<()> {
    let (data, assign, data_config) = load_data(&args.data)?;
    let mut rows: Vec<(String, i64, f64, usize)> = Vec::new();
    match args.data.design {
        DesignArg::Basic => {
            for (treated, name) in [(true, "treated"), (false, "control")] {
                for &t in data.times() {
                    let sel = GroupSel::Basic {
                        assign: &assign,
                        treated,
                    };
                    match data.cell_mean(&sel, t) {
                        Ok((mean, n)) => rows.push((name.to_string(), t, mean, n)),
                        Err(Error::EmptyCell { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        DesignArg::Sa => {
            let mut groups: Vec<(Option<i64>, String)> = assign
                .adoption_times()
                .iter()
                .map(|&t| {
                    let label = data.time_label(t);
                    (Some(label), format!("cohort:{}", label))
                })
                .collect();
            groups.push((None, "never".to_string()));
            for (adoption, name) in groups {
                for &t in data.times() {
                    let sel = GroupSel::Cohort {
                        assign: &assign,
                        adoption,
                    };
                    match data.cell_mean(&sel, t) {
                        Ok((mean, n)) => rows.push((name.clone(), t, mean, n)),
                        Err(Error::EmptyCell { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }

    let mut out = Vec::new();
    writeln!(out, "# doubledid {}", VERSION).unwrap();
    writeln!(
        out,
        "# config: {}",
        serde_json::to_string(&data_config)
            .map_err(|e| Error::Internal(format!("config serialization failed: {}", e)))?
    )
    .unwrap();
    writeln!(out, "group,time,mean,n").unwrap();
    for (group, t, mean, n) in rows {
        writeln!(out, "{},{},{},{}", group, t, mean, n).unwrap();
    }
    match &args.output {
        Some(path) => write_file(path, &out),
        None => {
            std::io::stdout().write_all(&out).map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            })
        }
    }
}

// ------------------------------------------------------- text rendering

fn f(value: &Value, key: &str) -> f64 {
    value.get(key).and_then(Value::as_f64).unwrap_or(f64::NAN)
}

fn render_assess(v: &Value) -> String {
    let mut out = String::new();
    let results = &v["results"];
    out.push_str(&format!(
        "trend assessment (doubledid {})\n",
        v["version"].as_str().unwrap_or("?")
    ));
    if let Some(tests) = results["tests"].as_array() {
        for t in tests {
            out.push_str(&format!(
                "  order {}: point {:+.6}, se {:.6}, p {:.4}\n",
                t["order"], f(t, "point"), f(t, "se"), f(t, "p_value")
            ));
            let eq = &t["equivalence"];
            out.push_str(&format!(
                "    standardized equivalence bound {:.4} (level {})\n",
                f(eq, "bound"),
                eq["level"]
            ));
        }
    }
    if let Some(gaps) = results["gaps"].as_array() {
        for g in gaps {
            out.push_str(&format!(
                "  gap {}: point {:+.6}, se {:.6}, p {:.4}, std bound {:.4}\n",
                g["gap"], f(g, "point"), f(g, "se"), f(g, "p_value"), f(g, "equiv_bound")
            ));
        }
        if let Some(skipped) = results["skipped"].as_array() {
            for s in skipped {
                out.push_str(&format!(
                    "  skipped cohort {}: {}\n",
                    s["adoption"],
                    s["reason"].as_str().unwrap_or("?")
                ));
            }
        }
    }
    if let Some(notes) = results["notes"].as_array() {
        for n in notes {
            out.push_str(&format!("  note: {}\n", n.as_str().unwrap_or("?")));
        }
    }
    out
}

fn render_estimate(v: &Value) -> String {
    let mut out = String::new();
    let r = &v["results"]["report"];
    let config = &v["config"];
    out.push_str(&format!(
        "{} (regime {}, orders {})\n",
        r["estimator"].as_str().unwrap_or("?"),
        config["regime"].as_str().unwrap_or("?"),
        config["orders"]
    ));
    out.push_str(&format!(
        "  point {:+.6}  se {:.6}  CI [{:+.6}, {:+.6}]  p {:.4}\n",
        f(r, "point"),
        f(r, "se"),
        f(r, "ci_lower"),
        f(r, "ci_upper"),
        f(r, "p_value")
    ));
    if let (Some(components), Some(weights)) = (
        v["results"]["components"].as_array(),
        r["weights"].as_array(),
    ) {
        for (c, w) in components.iter().zip(weights) {
            out.push_str(&format!(
                "  {}: {:+.6} (weight {:+.4})\n",
                c["label"].as_str().unwrap_or("?"),
                f(c, "value"),
                w.as_f64().unwrap_or(f64::NAN)
            ));
        }
    }
    if let Some(notes) = r["notes"].as_array() {
        for n in notes {
            out.push_str(&format!("  note: {}\n", n.as_str().unwrap_or("?")));
        }
    }
    out
}

fn render_simulate(v: &Value) -> String {
    let mut out = String::new();
    let config = &v["config"];
    out.push_str(&format!(
        "simulation scenario {}, n {}, rho {}, {} replicates\n",
        config["scenario"], config["n_units"], config["rho"], config["replicates"]
    ));
    if let Some(rows) = v["results"]["rows"].as_array() {
        for r in rows {
            out.push_str(&format!(
                "  {:<10} |bias| {:.6}  se {:.6}\n",
                r["estimator"].as_str().unwrap_or("?"),
                f(r, "abs_bias"),
                f(r, "se")
            ));
        }
    }
    out
}
