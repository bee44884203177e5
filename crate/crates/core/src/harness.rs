//! Experiment configuration, orchestration and result files.
//!
//! A configuration is a TOML document. Top-level keys `seed`, `replicates`
//! and `workers` are followed by the sections `rule`, `schedule`,
//! `topology`, `distribution`, `analysis`, `output` and `potential`. Every
//! key is optional; missing keys take the acceptance preset values. Unknown
//! keys are rejected.
//!
//! Result files are deterministic functions of the resolved configuration.
//! Tabular output is CSV with the resolved configuration echoed as leading
//! `#` comment lines; nested results are JSON with a `config` member. Wall
//! clock information only ever appears in the `meta.json` sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    default_trim, estimate_exponent, firing_entropy, least_squares, ordering_time,
    theoretical_exponent, ExponentFit,
};
use crate::error::Error;
use crate::learning::{
    initial_state, train, Initialization, LearningSchedule, Rule, RuleConfig, TrainingRun,
    Trajectory,
};
use crate::potential::{
    discontinuity_witness, gradient_check_lambda, kappa_scaling, voronoi_partition,
    DiscontinuityWitness, KappaScaling, MARGIN_FACTOR,
};
use crate::stimuli::{Marginal, StimulusDistribution};
use crate::topology::{
    KernelMode, LatticeTopology, NeighborhoodKernel, NetworkState, DEFAULT_TRUNCATION_RADIUS,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// κ values of the TSP-limit scaling table.
pub const SCALING_KAPPAS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("analysis failed: {0}")]
    Analysis(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

fn config_err(key: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("`{key}`: {msg}"))
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleSection {
    pub kind: Rule,
    pub lambda: f64,
    pub allow_unstable_lambda: bool,
}

impl Default for RuleSection {
    fn default() -> Self {
        Self {
            kind: Rule::Som,
            lambda: 0.0,
            allow_unstable_lambda: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub eta_start: f64,
    pub eta_end: f64,
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub total_steps: u64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            eta_start: 0.5,
            eta_end: 0.02,
            gamma_start: 10.0,
            gamma_end: 0.8,
            total_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    Exact,
    Lookup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub sizes: Vec<usize>,
    /// One flag per lattice dimension; empty means all open.
    pub periodic: Vec<bool>,
    pub kernel: KernelChoice,
    pub truncation_radius: u32,
    pub initialization: Initialization,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            sizes: vec![200],
            periodic: Vec::new(),
            kernel: KernelChoice::Lookup,
            truncation_radius: DEFAULT_TRUNCATION_RADIUS,
            initialization: Initialization::Ordered,
        }
    }
}

fn one() -> usize {
    1
}

/// Stimulus distribution as written in the config file. Continuous kinds
/// describe one marginal, repeated `dimension` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionSpec {
    Uniform {
        lo: f64,
        hi: f64,
        #[serde(default = "one")]
        dimension: usize,
    },
    Powerlaw {
        a: f64,
        lo: f64,
        hi: f64,
        #[serde(default = "one")]
        dimension: usize,
    },
    Piecewise {
        breaks: Vec<f64>,
        masses: Vec<f64>,
        #[serde(default = "one")]
        dimension: usize,
    },
    Discrete {
        points: Vec<Vec<f64>>,
        /// Empty means equally likely points.
        #[serde(default)]
        probabilities: Vec<f64>,
    },
}

impl Default for DistributionSpec {
    fn default() -> Self {
        DistributionSpec::Powerlaw {
            a: 1.0,
            lo: 0.1,
            hi: 1.0,
            dimension: 1,
        }
    }
}

impl DistributionSpec {
    pub fn build(&self) -> crate::error::Result<StimulusDistribution> {
        let repeat =
            |m: Marginal, dimension: usize| -> crate::error::Result<StimulusDistribution> {
                if dimension == 0 {
                    return Err(Error::InvalidParameter {
                        name: "dimension",
                        reason: "must be at least 1".into(),
                    });
                }
                StimulusDistribution::product(vec![m; dimension])
            };
        match self {
            Self::Uniform { lo, hi, dimension } => repeat(Marginal::uniform(*lo, *hi)?, *dimension),
            Self::Powerlaw {
                a,
                lo,
                hi,
                dimension,
            } => repeat(Marginal::power_law(*a, *lo, *hi)?, *dimension),
            Self::Piecewise {
                breaks,
                masses,
                dimension,
            } => repeat(
                Marginal::piecewise_constant(breaks.clone(), masses.clone())?,
                *dimension,
            ),
            Self::Discrete {
                points,
                probabilities,
            } => {
                if probabilities.is_empty() {
                    StimulusDistribution::discrete_uniform(points.clone())
                } else {
                    StimulusDistribution::discrete(points.clone(), probabilities.clone())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Neurons dropped from each end of the chain; default `max(2, N/10)`.
    pub trim: Option<usize>,
    pub probes: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            trim: None,
            probes: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub path: PathBuf,
    /// Snapshot interval in steps; 0 keeps the initial and final state only.
    pub snapshot_every: u64,
    pub write_snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("out"),
            snapshot_every: 10_000,
            write_snapshots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    /// Nearest-neighbor coupling of the Gaussian kernel.
    pub kappa: f64,
    /// Number of random weight configurations checked.
    pub instances: usize,
    pub fd_step: f64,
    /// Cities in the TSP-limit scaling study.
    pub cities: usize,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self {
            kappa: 0.2,
            instances: 20,
            fd_step: crate::potential::FD_STEP,
            cities: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replicates: usize,
    /// Worker threads for replicated runs; 0 picks the machine default.
    pub workers: usize,
    pub rule: RuleSection,
    pub schedule: ScheduleSection,
    pub topology: TopologySection,
    pub distribution: DistributionSpec,
    pub analysis: AnalysisSection,
    pub output: OutputSection,
    pub potential: PotentialSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replicates: 1,
            workers: 0,
            rule: RuleSection::default(),
            schedule: ScheduleSection::default(),
            topology: TopologySection::default(),
            distribution: DistributionSpec::default(),
            analysis: AnalysisSection::default(),
            output: OutputSection::default(),
            potential: PotentialSection::default(),
        }
    }
}

fn prefixed(section: &str, err: Error) -> HarnessError {
    match err {
        Error::InvalidParameter { name, reason } => config_err(&format!("{section}.{name}"), reason),
        Error::UnstableLambda(l) => config_err(
            &format!("{section}.lambda"),
            format!("{l} lies outside the stability window [-1, 1]; set allow_unstable_lambda or pass --allow-unstable-lambda"),
        ),
        other => config_err(section, other),
    }
}

impl ExperimentConfig {
    /// The acceptance preset with a given rule.
    pub fn preset(rule: RuleConfig) -> Self {
        let rule = RuleSection {
            kind: rule.rule,
            lambda: rule.lambda,
            allow_unstable_lambda: rule.allow_unstable_lambda,
        };
        Self {
            rule,
            ..Self::default()
        }
        .resolve()
        .expect("preset is valid")
    }

    /// Fills derived defaults and checks every nested invariant.
    pub fn resolve(mut self) -> HarnessResult<Self> {
        if self.replicates == 0 {
            return Err(config_err("replicates", "must be at least 1"));
        }
        let dims = self.topology.sizes.len();
        if self.topology.periodic.is_empty() {
            self.topology.periodic = vec![false; dims];
        }
        let topology = self.lattice()?;
        self.rule_config()
            .validate()
            .map_err(|e| prefixed("rule", e))?;
        self.learning_schedule()?;
        let dist = self.stimuli()?;
        let n = topology.len();
        let trim = *self.analysis.trim.get_or_insert(default_trim(n));
        if trim == 0 {
            return Err(config_err("analysis.trim", "must be at least 1"));
        }
        if self.analysis.probes < 10 * n {
            return Err(config_err(
                "analysis.probes",
                format!(
                    "need at least 10 probes per neuron ({}), got {}",
                    10 * n,
                    self.analysis.probes
                ),
            ));
        }
        if dist.is_discrete() && dist.dim() == 0 {
            return Err(config_err("distribution.points", "empty stimulus vectors"));
        }
        let p = &self.potential;
        if !(0.0..1.0).contains(&p.kappa) {
            return Err(config_err(
                "potential.kappa",
                format!("must lie in [0, 1), got {}", p.kappa),
            ));
        }
        if !(p.fd_step > 0.0 && p.fd_step.is_finite()) {
            return Err(config_err("potential.fd_step", "must be positive"));
        }
        if p.cities < 3 {
            return Err(config_err("potential.cities", "need at least 3 cities"));
        }
        Ok(self)
    }

    pub fn lattice(&self) -> HarnessResult<LatticeTopology> {
        LatticeTopology::new(self.topology.sizes.clone(), self.topology.periodic.clone())
            .map_err(|e| prefixed("topology", e))
    }

    pub fn stimuli(&self) -> HarnessResult<StimulusDistribution> {
        self.distribution
            .build()
            .map_err(|e| prefixed("distribution", e))
    }

    pub fn learning_schedule(&self) -> HarnessResult<LearningSchedule> {
        let s = &self.schedule;
        LearningSchedule::new(
            s.eta_start,
            s.eta_end,
            s.gamma_start,
            s.gamma_end,
            s.total_steps,
        )
        .map_err(|e| prefixed("schedule", e))
    }

    pub fn rule_config(&self) -> RuleConfig {
        RuleConfig {
            rule: self.rule.kind,
            lambda: self.rule.lambda,
            allow_unstable_lambda: self.rule.allow_unstable_lambda,
        }
    }

    pub fn kernel_mode(&self) -> KernelMode {
        match self.topology.kernel {
            KernelChoice::Exact => KernelMode::ExactGaussian,
            KernelChoice::Lookup => KernelMode::KappaLookup {
                truncation_radius: self.topology.truncation_radius,
            },
        }
    }

    pub fn trim(&self) -> usize {
        self.analysis
            .trim
            .unwrap_or_else(|| default_trim(self.topology.sizes.iter().product()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Command-line settings applied on top of a config document before it is
/// validated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub allow_unstable_lambda: bool,
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> HarnessResult<ExperimentConfig> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> HarnessResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.output {
        cfg.output.path = out.clone();
    }
    cfg.rule.allow_unstable_lambda |= overrides.allow_unstable_lambda;
    cfg.resolve()
}

pub fn load_config(path: &Path, overrides: &Overrides) -> HarnessResult<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_with(&text, overrides)
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `replicate` at sweep position `lambda_index`:
/// `master ^ splitmix64((lambda_index << 32) | replicate)`.
pub fn derived_seed(master: u64, lambda_index: usize, replicate: usize) -> u64 {
    master ^ splitmix64(((lambda_index as u64) << 32) | replicate as u64)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INIT_STREAM: u64 = 1;
const PROBE_STREAM: u64 = 2;

/// One result row, shared by single runs and sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub lambda: f64,
    pub replicate: usize,
    pub fitted_exponent: Option<f64>,
    pub stderr: Option<f64>,
    pub r_squared: Option<f64>,
    pub theoretical_exponent: Option<f64>,
    pub firing_entropy_nats: f64,
    pub ordering_step: Option<u64>,
    pub seed: u64,
    /// Why the exponent fit failed, if it did.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

pub const ROW_COLUMNS: [&str; 9] = [
    "lambda",
    "replicate",
    "fitted_exponent",
    "stderr",
    "r_squared",
    "theoretical_exponent",
    "firing_entropy_nats",
    "ordering_step",
    "seed",
];

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl ResultRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.lambda.to_string(),
            self.replicate.to_string(),
            opt(self.fitted_exponent),
            opt(self.stderr),
            opt(self.r_squared),
            opt(self.theoretical_exponent),
            self.firing_entropy_nats.to_string(),
            opt(self.ordering_step),
            self.seed.to_string(),
        ]
    }
}

/// Trained replicate with its analysis.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub row: ResultRow,
    pub trajectory: Trajectory,
}

fn analyzable_chain(state: &NetworkState) -> bool {
    state.topology().is_1d() && state.dim() == 1
}

/// Trains and analyzes one replicate.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    rule: RuleConfig,
    lambda_index: usize,
    replicate: usize,
) -> HarnessResult<ReplicateOutcome> {
    let seed = derived_seed(cfg.seed, lambda_index, replicate);
    let dist = cfg.stimuli()?;
    let topology = cfg.lattice()?;
    let init = initial_state(
        &topology,
        &dist,
        cfg.topology.initialization,
        &mut stream_rng(seed, INIT_STREAM),
    )?;
    let run = TrainingRun {
        state: init,
        schedule: cfg.learning_schedule()?,
        rule,
        rng_seed: seed,
        snapshot_every: cfg.output.snapshot_every,
        kernel_mode: cfg.kernel_mode(),
    };
    let trajectory = train(&run, &dist)?;
    let last = trajectory.final_state();

    let lambda = rule.effective_lambda();
    let theoretical = match rule.rule {
        Rule::Vq => None,
        _ => theoretical_exponent(lambda).ok(),
    };
    let (mut fit, mut failure, mut ordering) = (None::<ExponentFit>, None, None);
    if analyzable_chain(last) && !dist.is_discrete() {
        match estimate_exponent(last, &dist, cfg.trim()) {
            Ok(f) => fit = Some(f),
            Err(e) => failure = Some(e.to_string()),
        }
    }
    if analyzable_chain(last) {
        ordering = ordering_time(&trajectory.snapshots)?;
    }
    let entropy = firing_entropy(
        last,
        &dist,
        cfg.analysis.probes,
        &mut stream_rng(seed, PROBE_STREAM),
    )?
    .entropy;
    if !last.is_finite() {
        failure = Some("weights diverged".into());
    }
    let row = ResultRow {
        lambda,
        replicate,
        fitted_exponent: fit.map(|f| f.slope),
        stderr: fit.map(|f| f.stderr),
        r_squared: fit.map(|f| f.r_squared),
        theoretical_exponent: theoretical,
        firing_entropy_nats: entropy,
        ordering_step: ordering,
        seed,
        failure,
    };
    Ok(ReplicateOutcome { row, trajectory })
}

fn run_jobs<T: Send>(
    workers: usize,
    jobs: Vec<(usize, usize)>,
    f: impl Fn(usize, usize) -> HarnessResult<T> + Sync,
) -> HarnessResult<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Analysis(format!("thread pool: {e}")))?;
    // collect keeps input order, so rows are keyed by (λ index, replicate)
    pool.install(|| jobs.into_par_iter().map(|(j, k)| f(j, k)).collect())
}

/// Summary statistics of one λ value across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub replicates: usize,
    pub fitted_mean: Option<f64>,
    pub fitted_sd: Option<f64>,
    /// Standard error of `fitted_mean` from the spread between replicates.
    pub mean_stderr: Option<f64>,
    /// `sqrt(Σ se_i²) / n` from the per-fit regression standard errors.
    pub regression_stderr: Option<f64>,
    pub theoretical_exponent: Option<f64>,
    pub firing_entropy_mean: f64,
    pub ordering_step_mean: Option<f64>,
    pub failed_fits: usize,
}

pub fn summarize(lambda: f64, theoretical: Option<f64>, rows: &[&ResultRow]) -> LambdaSummary {
    let fits: Vec<f64> = rows.iter().filter_map(|r| r.fitted_exponent).collect();
    let errs: Vec<f64> = rows.iter().filter_map(|r| r.stderr).collect();
    let n = fits.len() as f64;
    let mean = (!fits.is_empty()).then(|| fits.iter().sum::<f64>() / n);
    let sd = mean
        .filter(|_| fits.len() > 1)
        .map(|m| (fits.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    let orderings: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.ordering_step)
        .map(|s| s as f64)
        .collect();
    LambdaSummary {
        lambda,
        replicates: rows.len(),
        fitted_mean: mean,
        fitted_sd: sd,
        mean_stderr: sd.map(|s| s / n.sqrt()),
        regression_stderr: (!errs.is_empty())
            .then(|| errs.iter().map(|e| e * e).sum::<f64>().sqrt() / errs.len() as f64),
        theoretical_exponent: theoretical,
        firing_entropy_mean: rows.iter().map(|r| r.firing_entropy_nats).sum::<f64>()
            / rows.len().max(1) as f64,
        ordering_step_mean: (!orderings.is_empty())
            .then(|| orderings.iter().sum::<f64>() / orderings.len() as f64),
        failed_fits: rows.iter().filter(|r| r.failure.is_some()).count(),
    }
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "lambda",
    "replicates",
    "fitted_mean",
    "fitted_sd",
    "mean_stderr",
    "regression_stderr",
    "theoretical_exponent",
    "firing_entropy_mean",
    "ordering_step_mean",
    "failed_fits",
    "ordering_step_count",
];

impl LambdaSummary {
    fn record(&self, ordered_count: usize) -> Vec<String> {
        vec![
            self.lambda.to_string(),
            self.replicates.to_string(),
            opt(self.fitted_mean),
            opt(self.fitted_sd),
            opt(self.mean_stderr),
            opt(self.regression_stderr),
            opt(self.theoretical_exponent),
            self.firing_entropy_mean.to_string(),
            opt(self.ordering_step_mean),
            self.failed_fits.to_string(),
            ordered_count.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleResult {
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
    pub summary: LambdaSummary,
}

impl SingleResult {
    pub fn failures(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter_map(|r| {
                r.failure
                    .as_ref()
                    .map(|f| format!("replicate {} (seed {}): {f}", r.replicate, r.seed))
            })
            .collect()
    }
}

fn config_comment(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    for line in cfg.to_toml().lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

fn write_csv(
    path: &Path,
    cfg: &ExperimentConfig,
    header: &[&str],
    records: Vec<Vec<String>>,
) -> HarnessResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(&r)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| HarnessError::Analysis(e.to_string()))?;
    let mut text = config_comment(cfg).into_bytes();
    text.extend(body);
    fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> HarnessResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| HarnessError::Analysis(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
}

/// Sidecar with the non-reproducible details of a run.
fn write_meta(dir: &Path, command: &str) -> HarnessResult<()> {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "command": command,
        "unix_time": secs,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&dir.join("meta.json"), &meta)
}

fn ensure_dir(dir: &Path) -> HarnessResult<()> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))
}

/// Writes a state as its step on the first line followed by one line of
/// space-separated components per neuron, 17 significant digits.
pub fn format_snapshot(state: &NetworkState) -> String {
    let mut out = format!("{}\n", state.step());
    for w in state.weights() {
        let line: Vec<String> = w.iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_snapshot(text: &str, topology: &LatticeTopology) -> HarnessResult<NetworkState> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |msg: &str| HarnessError::Analysis(format!("malformed snapshot: {msg}"));
    let step: u64 = lines
        .next()
        .ok_or_else(|| bad("empty file"))?
        .trim()
        .parse()
        .map_err(|_| bad("step line"))?;
    let weights = lines
        .map(|l| {
            l.split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| bad(x)))
                .collect::<HarnessResult<Vec<f64>>>()
        })
        .collect::<HarnessResult<Vec<_>>>()?;
    Ok(NetworkState::new(topology.clone(), weights)?.with_step(step))
}

fn snapshot_name(step: u64) -> String {
    format!("step_{step:012}.txt")
}

fn write_snapshots(dir: &Path, trajectory: &Trajectory) -> HarnessResult<()> {
    ensure_dir(dir)?;
    for s in &trajectory.snapshots {
        let path = dir.join(snapshot_name(s.step()));
        fs::write(&path, format_snapshot(s))
            .map_err(io_err(format!("writing {}", path.display())))?;
    }
    Ok(())
}

/// Snapshot states stored in a directory, ordered by step.
pub fn read_snapshots(dir: &Path, topology: &LatticeTopology) -> HarnessResult<Vec<NetworkState>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(format!("reading {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    let mut states = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(format!("reading {}", p.display())))?;
            parse_snapshot(&text, topology)
        })
        .collect::<HarnessResult<Vec<_>>>()?;
    states.sort_by_key(|s| s.step());
    Ok(states)
}

/// Trains every replicate of the configured rule, analyzes it and writes
/// `result.csv`, `run.json`, `meta.json` and per-replicate snapshots under
/// the output path.
pub fn run_single(cfg: &ExperimentConfig) -> HarnessResult<SingleResult> {
    let rule = cfg.rule_config();
    let jobs: Vec<(usize, usize)> = (0..cfg.replicates).map(|k| (0, k)).collect();
    let outcomes = run_jobs(cfg.workers, jobs, |j, k| run_replicate(cfg, rule, j, k))?;
    let dir = &cfg.output.path;
    ensure_dir(dir)?;
    if cfg.output.write_snapshots {
        for o in &outcomes {
            write_snapshots(
                &dir.join("snapshots")
                    .join(format!("replicate_{:03}", o.row.replicate)),
                &o.trajectory,
            )?;
        }
    }
    let rows: Vec<ResultRow> = outcomes.into_iter().map(|o| o.row).collect();
    let refs: Vec<&ResultRow> = rows.iter().collect();
    let summary = summarize(rule.effective_lambda(), rows[0].theoretical_exponent, &refs);
    let result = SingleResult {
        config: cfg.clone(),
        rows,
        summary,
    };
    write_csv(
        &dir.join("result.csv"),
        cfg,
        &ROW_COLUMNS,
        result.rows.iter().map(ResultRow::record).collect(),
    )?;
    write_json(&dir.join("run.json"), &result)?;
    write_meta(dir, "train")?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub lambdas: Vec<f64>,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<LambdaSummary>,
    /// Regression of replicate-mean fitted exponents on `2/(3+λ)`.
    pub meta_fit: Option<ExponentFit>,
}

impl SweepResult {
    pub fn failures(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter_map(|r| {
                r.failure.as_ref().map(|f| {
                    format!(
                        "lambda {} replicate {} (seed {}): {f}",
                        r.lambda, r.replicate, r.seed
                    )
                })
            })
            .collect()
    }
}

/// Parses a comma-separated λ list such as `"-1,-0.5,0,0.5,1"`.
pub fn parse_lambdas(text: &str) -> HarnessResult<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| config_err("lambdas", format!("`{s}` is not a number")))
        })
        .collect::<HarnessResult<Vec<f64>>>()?;
    if values.is_empty() {
        return Err(config_err("lambdas", "no values given"));
    }
    Ok(values)
}

/// Replicated generalized-rule runs for each λ, written to `sweep.csv`,
/// `sweep_summary.csv` and `sweep.json`.
pub fn run_sweep(cfg: &ExperimentConfig, lambdas: &[f64]) -> HarnessResult<SweepResult> {
    if lambdas.is_empty() {
        return Err(config_err("lambdas", "no values given"));
    }
    let rules: Vec<RuleConfig> = lambdas
        .iter()
        .map(|&l| RuleConfig::gwrk(l).allowing_unstable(cfg.rule.allow_unstable_lambda))
        .collect();
    for r in &rules {
        r.validate().map_err(|e| prefixed("sweep", e))?;
    }
    let jobs: Vec<(usize, usize)> = (0..lambdas.len())
        .flat_map(|j| (0..cfg.replicates).map(move |k| (j, k)))
        .collect();
    let rows: Vec<ResultRow> = run_jobs(cfg.workers, jobs, |j, k| {
        run_replicate(cfg, rules[j], j, k).map(|o| o.row)
    })?;

    let summary: Vec<LambdaSummary> = lambdas
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let group: Vec<&ResultRow> = rows[j * cfg.replicates..(j + 1) * cfg.replicates]
                .iter()
                .collect();
            summarize(l, theoretical_exponent(l).ok(), &group)
        })
        .collect();
    let pairs: Vec<(f64, f64)> = summary
        .iter()
        .filter_map(|s| Some((s.theoretical_exponent?, s.fitted_mean?)))
        .collect();
    let meta_fit = least_squares(
        &pairs.iter().map(|p| p.0).collect::<Vec<_>>(),
        &pairs.iter().map(|p| p.1).collect::<Vec<_>>(),
    )
    .ok();

    let result = SweepResult {
        config: cfg.clone(),
        lambdas: lambdas.to_vec(),
        rows,
        summary,
        meta_fit,
    };
    let dir = &cfg.output.path;
    ensure_dir(dir)?;
    write_csv(
        &dir.join("sweep.csv"),
        cfg,
        &ROW_COLUMNS,
        result.rows.iter().map(ResultRow::record).collect(),
    )?;
    let summary_records = result
        .summary
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let ordered = result.rows[j * cfg.replicates..(j + 1) * cfg.replicates]
                .iter()
                .filter(|r| r.ordering_step.is_some())
                .count();
            s.record(ordered)
        })
        .collect();
    write_csv(
        &dir.join("sweep_summary.csv"),
        cfg,
        &SUMMARY_COLUMNS,
        summary_records,
    )?;
    write_json(&dir.join("sweep.json"), &result)?;
    write_meta(dir, "sweep")?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCheck {
    pub instance: usize,
    pub seed: u64,
    pub boundary_margin: f64,
    /// Relative error of `-∇V` against the λ = 1/2 expected step.
    pub error_wrk: Option<f64>,
    /// Relative error of `-∇V` against the λ = 0 expected step.
    pub error_som: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialCheckReport {
    pub config: ExperimentConfig,
    pub kappa: f64,
    pub instances: Vec<InstanceCheck>,
    pub witness: Option<DiscontinuityWitness>,
    pub scaling: KappaScaling,
}

/// Discrete stimuli of the configuration with random weights, for
/// gradient checks.
pub fn potential_instance(
    cfg: &ExperimentConfig,
    seed: u64,
) -> HarnessResult<(NetworkState, StimulusDistribution)> {
    let dist = cfg.stimuli()?;
    if !dist.is_discrete() {
        return Err(config_err(
            "distribution.kind",
            "potential-check needs a discrete stimulus set",
        ));
    }
    let state = initial_state(
        &cfg.lattice()?,
        &dist,
        Initialization::Random,
        &mut stream_rng(seed, INIT_STREAM),
    )?;
    Ok((state, dist))
}

/// Cities jittered around the unit circle, visited in angular order.
pub fn ring_cities(n: usize, seed: u64) -> crate::error::Result<StimulusDistribution> {
    use rand::Rng;
    let mut rng = stream_rng(seed, INIT_STREAM);
    let points = (0..n)
        .map(|k| {
            let t = std::f64::consts::TAU * (k as f64 + 0.3 * rng.random::<f64>()) / n as f64;
            let radius = 1.0 + 0.3 * (rng.random::<f64>() - 0.5);
            vec![radius * t.cos(), radius * t.sin()]
        })
        .collect();
    StimulusDistribution::discrete_uniform(points)
}

/// Sweeps `neuron` straight towards the nearest stimulus it does not win.
pub fn border_sweep(
    state: &NetworkState,
    stimuli: &StimulusDistribution,
    kernel: &NeighborhoodKernel,
    h: f64,
) -> crate::error::Result<Option<DiscontinuityWitness>> {
    let (points, _) = stimuli.atoms()?;
    let partition = voronoi_partition(state, points)?;
    let mut best: Option<(f64, usize, usize)> = None;
    for (mu, v) in points.iter().enumerate() {
        for r in 0..state.len() {
            if partition.assignment[mu] == r {
                continue;
            }
            let d = crate::topology::squared_distance(v, state.weight(r)).sqrt();
            if d > 0.0 && best.is_none_or(|b| d < b.0) {
                best = Some((d, r, mu));
            }
        }
    }
    let Some((dist, neuron, mu)) = best else {
        return Ok(None);
    };
    let direction: Vec<f64> = points[mu]
        .iter()
        .zip(state.weight(neuron))
        .map(|(v, w)| v - w)
        .collect();
    match discontinuity_witness(state, stimuli, kernel, neuron, &direction, dist, h) {
        Ok(w) => Ok(Some(w)),
        Err(Error::BorderCrossing { .. }) | Err(Error::NoBorderFound(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Gradient checks for λ ∈ {0, 1/2} on random weight configurations, the
/// border-crossing witness and the κ² scaling table of the TSP limit.
pub fn run_potential_check(cfg: &ExperimentConfig) -> HarnessResult<PotentialCheckReport> {
    let p = &cfg.potential;
    let kernel = NeighborhoodKernel::from_kappa(p.kappa, KernelMode::ExactGaussian)
        .map_err(|e| prefixed("potential", e))?;
    let mut instances = Vec::with_capacity(p.instances);
    let mut witness = None;
    for i in 0..p.instances {
        let seed = derived_seed(cfg.seed, 0, i);
        let (state, dist) = potential_instance(cfg, seed)?;
        let margin = voronoi_partition(&state, dist.atoms()?.0)?.boundary_margin;
        let check = |lambda| gradient_check_lambda(&state, &dist, &kernel, lambda, p.fd_step);
        let (error_wrk, error_som, status) = match (check(0.5), check(0.0)) {
            (Ok(a), Ok(b)) => (Some(a), Some(b), "ok".to_string()),
            (Err(Error::BorderCrossing { margin, required }), _) => (
                None,
                None,
                format!("border-crossing: margin {margin:e} <= {required:e}"),
            ),
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        };
        if witness.is_none() {
            witness = border_sweep(&state, &dist, &kernel, p.fd_step)?;
        }
        instances.push(InstanceCheck {
            instance: i,
            seed,
            boundary_margin: margin,
            error_wrk,
            error_som,
            status,
        });
    }
    let cities = ring_cities(p.cities, cfg.seed)?;
    let scaling = kappa_scaling(&cities, &SCALING_KAPPAS)?;
    let report = PotentialCheckReport {
        config: cfg.clone(),
        kappa: p.kappa,
        instances,
        witness,
        scaling,
    };

    let dir = &cfg.output.path;
    ensure_dir(dir)?;
    write_csv(
        &dir.join("potential_check.csv"),
        cfg,
        &[
            "instance",
            "seed",
            "boundary_margin",
            "error_wrk_lambda_half",
            "error_som_lambda_zero",
            "status",
        ],
        report
            .instances
            .iter()
            .map(|c| {
                vec![
                    c.instance.to_string(),
                    c.seed.to_string(),
                    c.boundary_margin.to_string(),
                    opt(c.error_wrk),
                    opt(c.error_som),
                    c.status.clone(),
                ]
            })
            .collect(),
    )?;
    write_csv(
        &dir.join("kappa_scaling.csv"),
        cfg,
        &[
            "kappa",
            "wrk_potential",
            "tsp_limit_energy",
            "abs_error",
            "error_over_kappa_sq",
        ],
        (0..report.scaling.kappas.len())
            .map(|i| {
                let s = &report.scaling;
                vec![
                    s.kappas[i].to_string(),
                    s.wrk_values[i].to_string(),
                    s.tsp_values[i].to_string(),
                    s.errors[i].to_string(),
                    (s.errors[i] / s.kappas[i].powi(2)).to_string(),
                ]
            })
            .collect(),
    )?;
    write_json(&dir.join("potential_check.json"), &report)?;
    write_meta(dir, "potential-check")?;
    Ok(report)
}

impl PotentialCheckReport {
    /// Plain-text table for the terminal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "gradient check, kappa = {}, margin guard = {} x h",
            self.kappa, MARGIN_FACTOR
        );
        let _ = writeln!(
            out,
            "{:>8} {:>12} {:>14} {:>14}  status",
            "instance", "margin", "err(l=1/2)", "err(l=0)"
        );
        for c in &self.instances {
            let f = |x: Option<f64>| x.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:>8} {:>12.3e} {:>14} {:>14}  {}",
                c.instance,
                c.boundary_margin,
                f(c.error_wrk),
                f(c.error_som),
                c.status
            );
        }
        match &self.witness {
            Some(w) => {
                let _ = writeln!(
                    out,
                    "border sweep: left derivative {:.6e}, right derivative {:.6e}, jump {:.3e}, smooth-region error {:.3e}, value jump {:.3e}",
                    w.left_derivative,
                    w.right_derivative,
                    w.derivative_jump(),
                    w.smooth_error,
                    w.value_jump
                );
            }
            None => {
                let _ = writeln!(out, "border sweep: no clean border crossing found");
            }
        }
        let _ = writeln!(
            out,
            "TSP limit: {:>8} {:>14} {:>14}",
            "kappa", "|V_wrk-V_tsp|", "err/kappa^2"
        );
        for i in 0..self.scaling.kappas.len() {
            let k = self.scaling.kappas[i];
            let _ = writeln!(
                out,
                "           {:>8} {:>14.6e} {:>14.6e}",
                k,
                self.scaling.errors[i],
                self.scaling.errors[i] / (k * k)
            );
        }
        let _ = writeln!(
            out,
            "scaling exponent {:.4} (stderr {:.2e})",
            self.scaling.fit.slope, self.scaling.fit.stderr
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotAnalysis {
    pub step: u64,
    pub defects: Option<usize>,
    pub fitted_exponent: Option<f64>,
    pub stderr: Option<f64>,
    pub r_squared: Option<f64>,
    pub firing_entropy_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub rows: Vec<SnapshotAnalysis>,
    pub ordering_step: Option<u64>,
}

/// Re-runs the analysis on stored snapshots.
pub fn analyze_snapshots(cfg: &ExperimentConfig, dir: &Path) -> HarnessResult<AnalyzeReport> {
    let topology = cfg.lattice()?;
    let dist = cfg.stimuli()?;
    let states = read_snapshots(dir, &topology)?;
    if states.is_empty() {
        return Err(HarnessError::Analysis(format!(
            "no snapshot files in {}",
            dir.display()
        )));
    }
    let mut rows = Vec::with_capacity(states.len());
    for s in &states {
        let chain = analyzable_chain(s);
        let defects = chain.then(|| crate::analysis::count_defects(&s.scalars()));
        let fit = if chain && !dist.is_discrete() {
            estimate_exponent(s, &dist, cfg.trim()).ok()
        } else {
            None
        };
        let entropy = firing_entropy(
            s,
            &dist,
            cfg.analysis.probes,
            &mut stream_rng(cfg.seed, PROBE_STREAM),
        )?
        .entropy;
        rows.push(SnapshotAnalysis {
            step: s.step(),
            defects,
            fitted_exponent: fit.map(|f| f.slope),
            stderr: fit.map(|f| f.stderr),
            r_squared: fit.map(|f| f.r_squared),
            firing_entropy_nats: entropy,
        });
    }
    let ordering_step = if analyzable_chain(&states[0]) {
        ordering_time(&states)?
    } else {
        None
    };
    Ok(AnalyzeReport {
        rows,
        ordering_step,
    })
}

impl AnalyzeReport {
    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record([
            "step",
            "defects",
            "fitted_exponent",
            "stderr",
            "r_squared",
            "firing_entropy_nats",
        ]);
        for r in &self.rows {
            let _ = w.write_record([
                r.step.to_string(),
                opt(r.defects),
                opt(r.fitted_exponent),
                opt(r.stderr),
                opt(r.r_squared),
                r.firing_entropy_nats.to_string(),
            ]);
        }
        let body = String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default();
        format!("{}{body}", config_comment(cfg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_the_preset() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.topology.sizes, vec![200]);
        assert_eq!(cfg.topology.periodic, vec![false]);
        assert_eq!(cfg.analysis.trim, Some(20));
        assert_eq!(cfg.schedule.total_steps, 200_000);
        assert_eq!(
            cfg.distribution,
            DistributionSpec::Powerlaw {
                a: 1.0,
                lo: 0.1,
                hi: 1.0,
                dimension: 1
            }
        );
    }

    #[test]
    fn small_chain_trim_floor() {
        let cfg = parse_config("[topology]\nsizes = [12]\n[analysis]\nprobes = 1000\n").unwrap();
        assert_eq!(cfg.trim(), 2);
    }

    #[test]
    fn errors_name_the_key() {
        let unknown = parse_config("[schedule]\netta_start = 0.1\n").unwrap_err();
        assert!(unknown.to_string().contains("etta_start"), "{unknown}");
        let lambda = parse_config("[rule]\nkind = \"gwrk\"\nlambda = 1.5\n").unwrap_err();
        assert!(
            lambda.to_string().contains("rule.lambda") && lambda.to_string().contains("[-1, 1]"),
            "{lambda}"
        );
        assert_eq!(lambda.exit_code(), EXIT_CONFIG);
        let gamma = parse_config("[schedule]\ngamma_start = 0.0\n").unwrap_err();
        assert!(
            gamma.to_string().contains("schedule.gamma_start"),
            "{gamma}"
        );
        let typed = parse_config("seed = \"abc\"\n").unwrap_err();
        assert!(typed.to_string().contains("seed"), "{typed}");
        let dist =
            parse_config("[distribution]\nkind = \"powerlaw\"\na = 1.0\nlo = 0.0\nhi = 1.0\n")
                .unwrap_err();
        assert!(dist.to_string().contains("distribution.lo"), "{dist}");
    }

    #[test]
    fn unstable_lambda_with_override_parses() {
        let cfg =
            parse_config("[rule]\nkind = \"gwrk\"\nlambda = 1.5\nallow_unstable_lambda = true\n")
                .unwrap();
        assert_eq!(cfg.rule_config().lambda, 1.5);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse_config("seed = 9\n[topology]\nsizes = [4, 5]\nperiodic = [true, false]\n[analysis]\nprobes = 500\n").unwrap();
        let again = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for j in 0..5 {
            for k in 0..16 {
                assert!(seen.insert(derived_seed(42, j, k)));
            }
        }
    }

    #[test]
    fn lambda_list_parsing() {
        assert_eq!(
            parse_lambdas("-1,-0.5, 0,0.5,1").unwrap(),
            vec![-1.0, -0.5, 0.0, 0.5, 1.0]
        );
        assert!(parse_lambdas("0,x").is_err());
        assert!(parse_lambdas("").is_err());
    }

    #[test]
    fn snapshot_text_round_trips() {
        let topo = LatticeTopology::chain(3).unwrap();
        let s = NetworkState::from_scalars(topo.clone(), &[0.1, 1.0 / 3.0, std::f64::consts::PI])
            .unwrap()
            .with_step(77);
        let text = format_snapshot(&s);
        assert!(text.starts_with("77\n"));
        assert_eq!(parse_snapshot(&text, &topo).unwrap(), s);
    }
}
