//! Closed-loop trial runner (observe → infer → plan → act), the multi-trial
//! experiment driver, result tables, plot data and the command line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::inference::{bma_beliefs, infer_states, BeliefEnsemble, Observation};
use crate::model::{load_spec, GenerativeModel};
use crate::numerics::{normalize, Categorical};
use crate::planning::{
    action_marginal, expected_free_energy, policy_posterior, select_action, EfeBreakdown, ObjectiveKind,
    PlanContext,
};
use crate::tmaze::{
    build_tmaze_model_with, context_marginal, location_marginal, score_outcome, Context, ContextSchedule,
    Location, TmazeEnv, DEFAULT_REWARD_PROB, HORIZON, NUM_LOCATIONS, NUM_OUTCOMES, NUM_STATES,
};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub agent: ObjectiveKind,
    pub trials: usize,
    pub seed: u64,
    pub precision: f64,
    pub tie_tolerance: f64,
    pub reward_prob: f64,
    pub model_path: Option<PathBuf>,
    pub schedule_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub output_format: OutputFormat,
}

impl ExperimentConfig {
    pub fn new(agent: ObjectiveKind) -> Self {
        Self {
            agent,
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            precision: 1.0,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
            reward_prob: DEFAULT_REWARD_PROB,
            model_path: None,
            schedule_path: None,
            output_dir: PathBuf::from("results"),
            output_format: OutputFormat::Csv,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !self.precision.is_finite() || self.precision < 0.0 {
            return Err(Error::Config(format!(
                "precision {} must be >= 0",
                self.precision
            )));
        }
        if !self.tie_tolerance.is_finite() || self.tie_tolerance < 0.0 {
            return Err(Error::Config(format!(
                "tie tolerance {} must be >= 0",
                self.tie_tolerance
            )));
        }
        if !(0.0..=1.0).contains(&self.reward_prob) {
            return Err(Error::Config(format!(
                "reward probability {} outside [0, 1]",
                self.reward_prob
            )));
        }
        Ok(())
    }
}

/// Agent model, world schedule and state prior resolved from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: GenerativeModel,
    pub schedule: ContextSchedule,
    pub state_prior: Option<Categorical>,
}

/// Loads (or builds) the agent's model and schedule and checks they fit the
/// T-maze world and the selected objective.
pub fn prepare(config: &ExperimentConfig) -> Result<Setup> {
    config.check()?;
    let model = match &config.model_path {
        Some(p) => load_spec(p)?,
        None => build_tmaze_model_with(config.reward_prob)?,
    };
    let dims = (
        model.num_states,
        model.num_outcomes,
        model.num_actions,
        model.horizon,
    );
    if dims != (NUM_STATES, NUM_OUTCOMES, NUM_LOCATIONS, HORIZON) {
        return Err(Error::Config(format!(
            "model dimensions (states, outcomes, actions, horizon) = {dims:?} do not match the T-maze (8, 7, 4, 3)"
        )));
    }
    let state_prior = model.prior_states.as_deref().map(normalize).transpose()?;
    if config.agent.needs_state_prior() && state_prior.is_none() {
        return Err(Error::Config(format!(
            "agent `{}` needs a state prior: supply a model (--model) with a `prior_states` entry",
            config.agent
        )));
    }
    let schedule = match &config.schedule_path {
        Some(p) => ContextSchedule::load(p)?,
        None => ContextSchedule::default(),
    };
    if config.trials > schedule.len() {
        return Err(Error::Config(format!(
            "{} trials requested but the context schedule covers {}",
            config.trials,
            schedule.len()
        )));
    }
    Ok(Setup {
        model,
        schedule,
        state_prior,
    })
}

/// Per-trial generators: one for the world, one for the agent's tie-breaks.
/// Streams depend only on `(seed, trial)`, so different agents on the same
/// seed see the same outcome draws.
pub fn trial_streams(seed: u64, trial: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(2 * trial as u64);
    let mut agent_rng = ChaCha8Rng::seed_from_u64(seed);
    agent_rng.set_stream(2 * trial as u64 + 1);
    (env_rng, agent_rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyScore {
    pub policy: usize,
    pub g: f64,
    /// Terms summed over the future timesteps.
    pub summed: EfeBreakdown,
    pub per_timestep: Vec<EfeBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub observation: usize,
    /// `None` at the final epoch.
    pub action: Option<usize>,
    pub action_marginal: Option<Vec<f64>>,
    pub policy_posterior: Vec<f64>,
    /// Bayesian model average over states at every timestep, held at this epoch.
    pub bma_states: Vec<Vec<f64>>,
    pub scores: Vec<PolicyScore>,
    pub converged: bool,
}

impl EpochRecord {
    /// Location / context marginals of the current-timestep BMA belief.
    pub fn location_marginal(&self) -> [f64; NUM_LOCATIONS] {
        self.location_marginal_at(self.epoch)
    }

    pub fn context_marginal(&self) -> [f64; 2] {
        self.context_marginal_at(self.epoch)
    }

    pub fn location_marginal_at(&self, timestep: usize) -> [f64; NUM_LOCATIONS] {
        location_marginal(&Categorical::new(self.bma_states[timestep - 1].clone()).expect("valid BMA"))
    }

    pub fn context_marginal_at(&self, timestep: usize) -> [f64; 2] {
        context_marginal(&Categorical::new(self.bma_states[timestep - 1].clone()).expect("valid BMA"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub context: Context,
    pub epochs: Vec<EpochRecord>,
    pub score_delta: i64,
    pub cumulative: i64,
}

impl TrialRecord {
    pub fn actions(&self) -> Vec<usize> {
        self.epochs.iter().filter_map(|e| e.action).collect()
    }

    pub fn observations(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.observation).collect()
    }

    pub fn final_policy_posterior(&self) -> &[f64] {
        &self.epochs.last().expect("trial has epochs").policy_posterior
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub final_score: i64,
    pub duration: Duration,
}

/// Trial-level knobs for [`run_trial`].
#[derive(Debug, Clone)]
pub struct AgentSettings {
    pub objective: ObjectiveKind,
    pub precision: f64,
    pub tie_tolerance: f64,
    pub state_prior: Option<Categorical>,
}

impl AgentSettings {
    pub fn from_config(config: &ExperimentConfig, state_prior: Option<Categorical>) -> Self {
        Self {
            objective: config.agent,
            precision: config.precision,
            tie_tolerance: config.tie_tolerance,
            state_prior,
        }
    }
}

/// One trial from the center: perceive, infer under every policy, plan over
/// the future, act; beliefs start fresh.
pub fn run_trial(
    model: &GenerativeModel,
    env: &mut TmazeEnv,
    agent: &AgentSettings,
    rng: &mut ChaCha8Rng,
    trial: usize,
    cumulative_before: i64,
) -> Result<TrialRecord> {
    let horizon = model.horizon;
    let mut observed: Vec<Observation> = Vec::with_capacity(horizon);
    let mut executed: Vec<usize> = Vec::with_capacity(horizon - 1);
    let mut epochs = Vec::with_capacity(horizon);
    let mut outcome = env.observe();

    for epoch in 1..=horizon {
        observed.push(Observation::new(epoch, outcome));
        let mut converged = true;
        let mut per_policy = Vec::with_capacity(model.policies.len());
        for pol in model.policies.iter() {
            let r = infer_states(model, pol, &observed)?;
            converged &= r.converged;
            per_policy.push(r.states);
        }

        let ctx = PlanContext::new(epoch, executed.clone(), agent.precision)?
            .with_tie_tolerance(agent.tie_tolerance)
            .with_state_prior(agent.state_prior.clone());

        let mut scores = Vec::new();
        let (posterior, action, marginal) = if epoch < horizon {
            for (i, pol) in model.policies.iter().enumerate() {
                let eval =
                    expected_free_energy(model, &per_policy[i][epoch - 1], pol, &ctx, agent.objective)?;
                scores.push(PolicyScore {
                    policy: i,
                    g: eval.total,
                    summed: eval.summed(),
                    per_timestep: eval.breakdown,
                });
            }
            let g: Vec<f64> = scores.iter().map(|s| s.g).collect();
            let posterior = policy_posterior(&g, &model.policies, &ctx)?;
            let marginal = action_marginal(&posterior, &model.policies, model.num_actions, epoch)?;
            let action = select_action(&marginal, rng, agent.tie_tolerance);
            (posterior, Some(action), Some(marginal.into_vec()))
        } else {
            let posterior = policy_posterior(&vec![0.0; model.policies.len()], &model.policies, &ctx)?;
            (posterior, None, None)
        };

        let ensemble = BeliefEnsemble::new(per_policy, posterior.clone(), observed.clone())?;
        let bma_states = (1..=horizon)
            .map(|tau| bma_beliefs(&ensemble, tau).map(Categorical::into_vec))
            .collect::<Result<Vec<_>>>()?;

        epochs.push(EpochRecord {
            epoch,
            observation: outcome,
            action,
            action_marginal: marginal,
            policy_posterior: posterior.into_vec(),
            bma_states,
            scores,
            converged,
        });

        if let Some(a) = action {
            executed.push(a);
            outcome = env.step(a)?;
        }
    }

    let score_delta: i64 = observed.iter().map(|o| score_outcome(o.outcome)).sum();
    Ok(TrialRecord {
        trial,
        context: env.context(),
        epochs,
        score_delta,
        cumulative: cumulative_before + score_delta,
    })
}

/// Runs trials `1..=config.trials` against the context schedule.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let setup = prepare(config)?;
    run_prepared(config, &setup)
}

pub fn run_prepared(config: &ExperimentConfig, setup: &Setup) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let agent = AgentSettings::from_config(config, setup.state_prior.clone());
    let mut trials = Vec::with_capacity(config.trials);
    let mut cumulative = 0;
    for trial in 1..=config.trials {
        let record = run_single(config, setup, &agent, trial, cumulative)?;
        cumulative = record.cumulative;
        trials.push(record);
    }
    Ok(ExperimentRecord {
        config: config.clone(),
        trials,
        final_score: cumulative,
        duration: start.elapsed(),
    })
}

/// Trial `trial` of an experiment, reproducible in isolation.
pub fn run_single(
    config: &ExperimentConfig,
    setup: &Setup,
    agent: &AgentSettings,
    trial: usize,
    cumulative_before: i64,
) -> Result<TrialRecord> {
    let context = setup.schedule.context_at(trial)?;
    let (env_rng, mut agent_rng) = trial_streams(config.seed, trial);
    let mut env = TmazeEnv::new(context, config.reward_prob, env_rng)?;
    run_trial(
        &setup.model,
        &mut env,
        agent,
        &mut agent_rng,
        trial,
        cumulative_before,
    )
}

/// Formats with 12 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{:.11e}", x);
    let v: f64 = s.parse().expect("round-trips");
    let mag = v.abs().log10().floor() as i32;
    if (-5..15).contains(&mag) {
        let decimals = (11 - mag).max(0) as usize;
        let t = format!("{:.*}", decimals, v);
        if t.contains('.') {
            t.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            t
        }
    } else {
        s
    }
}

fn round_sig(x: f64) -> f64 {
    fmt_sig(x).parse().unwrap_or(x)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
    Empty,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Real(x) => f.write_str(&fmt_sig(*x)),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

impl Cell {
    fn to_json(&self) -> Value {
        match self {
            Cell::Int(i) => Value::from(*i),
            Cell::Real(x) => serde_json::Number::from_f64(round_sig(*x)).map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::from(s.clone()),
            Cell::Empty => Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &'static str, header: Vec<String>) -> Self {
        Self {
            name,
            header,
            rows: Vec::new(),
        }
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(&self.header).map_err(|e| csv_error(path, e))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_string))
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .header
                        .iter()
                        .cloned()
                        .zip(row.iter().map(Cell::to_json))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serialization(format!("{}: {other:?}", path.display())),
    }
}

fn reals(xs: &[f64]) -> impl Iterator<Item = Cell> + '_ {
    xs.iter().map(|x| Cell::Real(*x))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// The four result tables: trials, beliefs, policies, breakdown.
pub fn record_tables(record: &ExperimentRecord) -> Vec<Table> {
    let horizon = record.trials.first().map_or(HORIZON, |t| t.epochs.len());
    let n_policies = record
        .trials
        .first()
        .map_or(0, |t| t.final_policy_posterior().len());

    let mut header = vec!["trial".to_string(), "context".to_string()];
    header.extend((1..horizon).map(|k| format!("action{k}")));
    header.extend(strings(&["score", "cumulative"]));
    let mut trials = Table::new("trials", header);

    let mut beliefs = Table::new(
        "beliefs",
        strings(&[
            "trial",
            "epoch",
            "loc_center",
            "loc_left",
            "loc_right",
            "loc_cue",
            "ctx_white",
            "ctx_black",
        ]),
    );

    let mut header = vec!["trial".to_string()];
    header.extend((1..=n_policies).map(|k| format!("policy_{k}")));
    let mut policies = Table::new("policies", header);

    let mut breakdown = Table::new(
        "breakdown",
        strings(&[
            "trial",
            "epoch",
            "policy",
            "risk",
            "ambiguity",
            "intrinsic",
            "extrinsic",
            "G",
        ]),
    );

    for t in &record.trials {
        let mut row = vec![Cell::Int(t.trial as i64), Cell::Text(t.context.label().into())];
        row.extend(t.actions().into_iter().map(|a| Cell::Int(a as i64)));
        row.extend([Cell::Int(t.score_delta), Cell::Int(t.cumulative)]);
        trials.rows.push(row);

        for e in &t.epochs {
            let mut row = vec![Cell::Int(t.trial as i64), Cell::Int(e.epoch as i64)];
            row.extend(reals(&e.location_marginal()));
            row.extend(reals(&e.context_marginal()));
            beliefs.rows.push(row);

            for s in &e.scores {
                breakdown.rows.push(vec![
                    Cell::Int(t.trial as i64),
                    Cell::Int(e.epoch as i64),
                    Cell::Int(s.policy as i64 + 1),
                    s.summed.risk_states.map_or(Cell::Empty, Cell::Real),
                    Cell::Real(s.summed.ambiguity),
                    Cell::Real(s.summed.intrinsic),
                    Cell::Real(s.summed.extrinsic),
                    Cell::Real(s.g),
                ]);
            }
        }

        let mut row = vec![Cell::Int(t.trial as i64)];
        row.extend(reals(t.final_policy_posterior()));
        policies.rows.push(row);
    }
    vec![trials, beliefs, policies, breakdown]
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the result tables (plus a config echo) to `output_dir`.
/// CSV gives one file per table; JSON gives a single `record.json`.
pub fn write_records(
    record: &ExperimentRecord,
    output_dir: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>> {
    ensure_dir(output_dir)?;
    let tables = record_tables(record);
    let config = serde_json::to_value(&record.config).map_err(|e| Error::Serialization(e.to_string()))?;
    let mut written = Vec::new();
    match format {
        OutputFormat::Csv => {
            for t in &tables {
                let path = output_dir.join(format!("{}.csv", t.name));
                t.write_csv(&path)?;
                written.push(path);
            }
            let path = output_dir.join("config.json");
            write_text(&path, &pretty(&config)?)?;
            written.push(path);
        }
        OutputFormat::Json => {
            let mut doc = Map::new();
            doc.insert("config".into(), config);
            doc.insert("final_score".into(), record.final_score.into());
            for t in &tables {
                doc.insert(t.name.into(), t.to_json());
            }
            let path = output_dir.join("record.json");
            write_text(&path, &pretty(&Value::Object(doc))?)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn pretty(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Serialization(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Plain numeric tables for the first-trial belief/action panels and the
/// per-trial policy and score panels.
pub fn plot_tables(record: &ExperimentRecord) -> Vec<Table> {
    let mut out = Vec::new();
    let Some(first) = record.trials.first() else {
        return out;
    };
    let horizon = first.epochs.len();
    let epoch_cols = |prefix: &[&str], n: usize| {
        let mut h = strings(prefix);
        h.extend((1..=n).map(|e| format!("epoch_{e}")));
        h
    };

    let mut position = Table::new("trial1_position", epoch_cols(&["timestep", "location"], horizon));
    for tau in 1..=horizon {
        for loc in Location::ALL {
            let mut row = vec![Cell::Int(tau as i64), Cell::Text(loc.label().into())];
            row.extend(
                first
                    .epochs
                    .iter()
                    .map(|e| Cell::Real(e.location_marginal_at(tau)[loc as usize])),
            );
            position.rows.push(row);
        }
    }
    out.push(position);

    let mut context = Table::new("trial1_context", epoch_cols(&["timestep", "context"], horizon));
    for tau in 1..=horizon {
        for ctx in [Context::White, Context::Black] {
            let mut row = vec![Cell::Int(tau as i64), Cell::Text(ctx.label().into())];
            row.extend(
                first
                    .epochs
                    .iter()
                    .map(|e| Cell::Real(e.context_marginal_at(tau)[ctx as usize])),
            );
            context.rows.push(row);
        }
    }
    out.push(context);

    let mut actions = Table::new(
        "trial1_actions",
        epoch_cols(&["action", "selected_at"], horizon - 1),
    );
    for loc in Location::ALL {
        let chosen: Vec<String> = first
            .epochs
            .iter()
            .filter(|e| e.action == Some(loc as usize))
            .map(|e| e.epoch.to_string())
            .collect();
        let mut row = vec![Cell::Text(loc.label().into()), Cell::Text(chosen.join(" "))];
        row.extend(
            first
                .epochs
                .iter()
                .filter_map(|e| e.action_marginal.as_ref())
                .map(|m| Cell::Real(m[loc as usize])),
        );
        actions.rows.push(row);
    }
    out.push(actions);

    let n_policies = first.final_policy_posterior().len();
    let mut header = strings(&["policy"]);
    header.extend(record.trials.iter().map(|t| format!("trial_{}", t.trial)));
    let mut policies = Table::new("policy_heatmap", header);
    for p in 0..n_policies {
        let mut row = vec![Cell::Int(p as i64 + 1)];
        row.extend(
            record
                .trials
                .iter()
                .map(|t| Cell::Real(t.final_policy_posterior()[p])),
        );
        policies.rows.push(row);
    }
    out.push(policies);

    let mut score = Table::new("cumulative_score", strings(&["trial", "context", "cumulative"]));
    for t in &record.trials {
        score.rows.push(vec![
            Cell::Int(t.trial as i64),
            Cell::Text(t.context.label().into()),
            Cell::Int(t.cumulative),
        ]);
    }
    out.push(score);

    let schedule =
        ContextSchedule::new(record.trials.iter().map(|t| t.context).collect()).expect("nonempty record");
    let mut bands = Table::new("context_bands", strings(&["start_trial", "stop_trial"]));
    for (a, b) in schedule.black_bands() {
        bands.rows.push(vec![Cell::Int(a as i64), Cell::Int(b as i64)]);
    }
    out.push(bands);
    out
}

pub fn emit_plot_data(record: &ExperimentRecord, output_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(output_dir)?;
    plot_tables(record)
        .iter()
        .map(|t| {
            let path = output_dir.join(format!("{}.csv", t.name));
            t.write_csv(&path).map(|_| path)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// command line

#[derive(Debug, Parser)]
#[command(name = "actinf", version, about = "Active inference agents in a T-maze")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run a full multi-trial experiment and write result tables.
    Run(RunArgs),
    /// Run a single trial and print per-policy breakdowns.
    Trial {
        #[command(flatten)]
        run: RunArgs,
        /// Trial index within the schedule (1-based).
        #[arg(long = "index", default_value_t = 1)]
        index: usize,
    },
    /// Print the expected free energy breakdown for a model and belief.
    Decompose(DecomposeArgs),
    /// Check a model spec file.
    Validate {
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn parse_agent(s: &str) -> std::result::Result<ObjectiveKind, String> {
    ObjectiveKind::from_str(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// efe | eig | eu | eu-states | klc
    #[arg(long, default_value = "efe", value_parser = parse_agent)]
    pub agent: ObjectiveKind,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Softmax precision over policies.
    #[arg(long, default_value_t = 1.0)]
    pub precision: f64,
    #[arg(long, default_value_t = DEFAULT_TIE_TOLERANCE)]
    pub tie_tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_REWARD_PROB)]
    pub reward_prob: f64,
    /// Agent model spec (JSON); defaults to the built-in T-maze.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Context schedule file (white/black tokens, one per trial).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

impl RunArgs {
    pub fn to_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            agent: self.agent,
            trials: self.trials,
            seed: self.seed,
            precision: self.precision,
            tie_tolerance: self.tie_tolerance,
            reward_prob: self.reward_prob,
            model_path: self.model.clone(),
            schedule_path: self.schedule.clone(),
            output_dir: self.out.clone(),
            output_format: self.format,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long, default_value = "efe", value_parser = parse_agent)]
    pub agent: ObjectiveKind,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Current state belief as comma-separated weights; defaults to D.
    #[arg(long, value_delimiter = ',')]
    pub beliefs: Option<Vec<f64>>,
    /// Current epoch (1-based).
    #[arg(long, default_value_t = 1)]
    pub epoch: usize,
    /// Actions already executed, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub history: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub precision: f64,
}

/// Parsed command; usage errors come back as `clap::Error`.
pub fn parse_cli<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 3,
        Error::Schema { .. } | Error::InvalidModel(_) => 2,
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Text table of per-policy, per-timestep breakdowns.
pub fn decompose(args: &DecomposeArgs) -> Result<String> {
    let model = match &args.model {
        Some(p) => load_spec(p)?,
        None => build_tmaze_model_with(DEFAULT_REWARD_PROB)?,
    };
    let q_now = match &args.beliefs {
        Some(w) => {
            if w.len() != model.num_states {
                return Err(Error::Config(format!(
                    "--beliefs has {} entries, model has {} states",
                    w.len(),
                    model.num_states
                )));
            }
            normalize(w)?
        }
        None => model.state_prior.clone(),
    };
    let prior = model.prior_states.as_deref().map(normalize).transpose()?;
    let ctx = PlanContext::new(args.epoch, args.history.clone(), args.precision)
        .map_err(|e| Error::Config(e.to_string()))?
        .with_state_prior(prior);

    let mut evals = Vec::new();
    for pol in model.policies.iter() {
        evals.push(expected_free_energy(&model, &q_now, pol, &ctx, args.agent)?);
    }
    let g: Vec<f64> = evals.iter().map(|e| e.total).collect();
    let post = policy_posterior(&g, &model.policies, &ctx)?;

    let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    let mut out = format!(
        "{:<10} {:>3} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "policy", "tau", "risk", "ambiguity", "intrinsic", "extrinsic", "evid_bound", "G", "Q(pi)"
    );
    for (i, (pol, e)) in model.policies.iter().zip(&evals).enumerate() {
        for b in &e.breakdown {
            out.push_str(&format!(
                "{:<10} {:>3} {:>10} {:>10.6} {:>10.6} {:>10.6} {:>10} {:>10.6} {:>10}\n",
                pol.to_string(),
                b.timestep,
                opt(b.risk_states),
                b.ambiguity,
                b.intrinsic,
                b.extrinsic,
                opt(b.evidence_bound),
                b.total,
                ""
            ));
        }
        out.push_str(&format!(
            "{:<10} {:>3} {:>65} {:>10.6} {:>10.6}\n",
            pol.to_string(),
            "sum",
            "",
            e.total,
            post[i]
        ));
    }
    Ok(out)
}

/// Human-readable single-trial report.
pub fn describe_trial(model: &GenerativeModel, t: &TrialRecord) -> String {
    let mut out = format!("trial {} (context {})\n", t.trial, t.context);
    for e in &t.epochs {
        out.push_str(&format!(
            "epoch {}: observed {}\n",
            e.epoch,
            model.outcome_label(e.observation)
        ));
        let loc = e.location_marginal();
        let ctx = e.context_marginal();
        out.push_str(&format!(
            "  location [center {:.4}, left {:.4}, right {:.4}, cue {:.4}]  context [white {:.4}, black {:.4}]\n",
            loc[0], loc[1], loc[2], loc[3], ctx[0], ctx[1]
        ));
        for s in &e.scores {
            out.push_str(&format!(
                "  {:<6} G {:>10.6}  intrinsic {:>9.6}  extrinsic {:>10.6}  ambiguity {:>9.6}  Q(pi) {:.6}\n",
                model.policies[s.policy].to_string(),
                s.g,
                s.summed.intrinsic,
                s.summed.extrinsic,
                s.summed.ambiguity,
                e.policy_posterior[s.policy]
            ));
        }
        if let (Some(a), Some(m)) = (e.action, &e.action_marginal) {
            let marg: Vec<String> = m.iter().map(|p| format!("{p:.4}")).collect();
            out.push_str(&format!(
                "  action marginal [{}] -> {}\n",
                marg.join(", "),
                model.action_label(a)
            ));
        }
    }
    out.push_str(&format!(
        "score {:+}, cumulative {}\n",
        t.score_delta, t.cumulative
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(0.5), "0.5");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(13.393729070210823), "13.3937290702");
        assert_eq!(fmt_sig(-0.6968645351054104), "-0.696864535105");
        assert_eq!(fmt_sig(1e-20), "1.00000000000e-20");
        assert_eq!(fmt_sig(0.99999999999999), "1");
    }

    #[test]
    fn cli_defaults() {
        let cli = parse_cli(["actinf", "run", "--agent", "efe", "--seed", "7"]).unwrap();
        let CliCommand::Run(args) = cli.command else {
            panic!()
        };
        let c = args.to_config();
        assert_eq!(c.agent, ObjectiveKind::ExpectedFreeEnergy);
        assert_eq!((c.trials, c.seed), (50, 7));
        assert_eq!(c.precision, 1.0);
        assert_eq!(c.output_format, OutputFormat::Csv);
    }

    #[test]
    fn cli_rejects_bad_values() {
        assert!(parse_cli(["actinf", "run", "--agent", "bogus"]).is_err());
        assert!(parse_cli(["actinf", "run", "--trials", "x"]).is_err());
        assert!(parse_cli(["actinf", "run", "--format", "xml"]).is_err());
        assert!(parse_cli(["actinf", "frobnicate"]).is_err());
    }

    #[test]
    fn state_agents_need_a_prior() {
        let cli = parse_cli(["actinf", "run", "--agent", "eu-states"]).unwrap();
        let CliCommand::Run(args) = cli.command else {
            panic!()
        };
        let err = prepare(&args.to_config()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("prior_states"));
    }

    #[test]
    fn too_many_trials_for_schedule() {
        let mut c = ExperimentConfig::new(ObjectiveKind::ExpectedFreeEnergy);
        c.trials = 51;
        assert!(matches!(prepare(&c), Err(Error::Config(_))));
        c.trials = 0;
        assert!(matches!(prepare(&c), Err(Error::Config(_))));
    }

    #[test]
    fn streams_are_independent_of_agent() {
        use rand::RngCore;
        let (mut e1, mut a1) = trial_streams(5, 3);
        let (mut e2, _) = trial_streams(5, 3);
        assert_eq!(e1.next_u64(), e2.next_u64());
        assert_ne!(e1.next_u64(), a1.next_u64());
        let (mut e3, _) = trial_streams(5, 4);
        assert_ne!(e2.next_u64(), e3.next_u64());
    }
}
