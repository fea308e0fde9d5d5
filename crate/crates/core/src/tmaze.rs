//! The four-location T-maze: ground-truth simulator, matching generative
//! model, the 50-trial context schedule and outcome scoring.
//!
//! Frozen index conventions:
//!
//! | index | location / action | outcome      |
//! |-------|-------------------|--------------|
//! | 0     | center            | center       |
//! | 1     | left arm          | left-cheese  |
//! | 2     | right arm         | left-null    |
//! | 3     | cue (lower arm)   | right-cheese |
//! | 4     |                   | right-null   |
//! | 5     |                   | cue-white    |
//! | 6     |                   | cue-black    |
//!
//! States are `context · 4 + location` with context 0 = white (cheese in the
//! left arm) and 1 = black (cheese in the right arm).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GenerativeModel, Labels, Matrix, Policy, PolicySet};
use crate::numerics::{normalize, Categorical};

pub const NUM_LOCATIONS: usize = 4;
pub const NUM_CONTEXTS: usize = 2;
pub const NUM_STATES: usize = NUM_LOCATIONS * NUM_CONTEXTS;
pub const NUM_OUTCOMES: usize = 7;
pub const HORIZON: usize = 3;
pub const DEFAULT_REWARD_PROB: f64 = 0.98;
pub const CHEESE_UTILITY: f64 = 6.0;
/// Relative prior counts on the center location, per context.
pub const CENTER_PRIOR_COUNT: f64 = 128.0;
pub const SCHEDULE_TRIALS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Center = 0,
    Left = 1,
    Right = 2,
    Cue = 3,
}

/// Action `u` moves the agent to location `u`.
pub type Action = Location;

impl Location {
    pub const ALL: [Location; 4] = [Location::Center, Location::Left, Location::Right, Location::Cue];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Location::Center => "center",
            Location::Left => "left",
            Location::Right => "right",
            Location::Cue => "cue",
        }
    }

    fn is_arm(self) -> bool {
        matches!(self, Location::Left | Location::Right)
    }

    /// Location reached by taking `action` from here; the arms are absorbing.
    pub fn after(self, action: Action) -> Location {
        if self.is_arm() {
            self
        } else {
            action
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    White = 0,
    Black = 1,
}

impl Context {
    pub fn label(self) -> &'static str {
        match self {
            Context::White => "white",
            Context::Black => "black",
        }
    }

    /// The arm holding the cheese.
    pub fn cheese_arm(self) -> Location {
        match self {
            Context::White => Location::Left,
            Context::Black => Location::Right,
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Context {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "white" | "w" | "0" => Ok(Context::White),
            "black" | "b" | "1" => Ok(Context::Black),
            other => Err(Error::InvalidInput(format!("unknown context `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Center = 0,
    LeftCheese = 1,
    LeftNull = 2,
    RightCheese = 3,
    RightNull = 4,
    CueWhite = 5,
    CueBlack = 6,
}

pub const OUTCOME_LABELS: [&str; NUM_OUTCOMES] = [
    "center",
    "left-cheese",
    "left-null",
    "right-cheese",
    "right-null",
    "cue-white",
    "cue-black",
];

pub fn state_index(location: Location, context: Context) -> usize {
    context as usize * NUM_LOCATIONS + location as usize
}

/// Location marginal of a joint state belief.
pub fn location_marginal(q: &Categorical) -> [f64; NUM_LOCATIONS] {
    let mut out = [0.0; NUM_LOCATIONS];
    for (s, p) in q.probs().iter().enumerate() {
        out[s % NUM_LOCATIONS] += p;
    }
    out
}

/// Context marginal `[white, black]` of a joint state belief.
pub fn context_marginal(q: &Categorical) -> [f64; NUM_CONTEXTS] {
    let mut out = [0.0; NUM_CONTEXTS];
    for (s, p) in q.probs().iter().enumerate() {
        out[s / NUM_LOCATIONS] += p;
    }
    out
}

/// Outcome distribution `P(o | location, context)`.
fn outcome_distribution(location: Location, context: Context, reward_prob: f64) -> [f64; NUM_OUTCOMES] {
    let mut col = [0.0; NUM_OUTCOMES];
    let white = context == Context::White;
    match location {
        Location::Center => col[Outcome::Center as usize] = 1.0,
        Location::Left => {
            let p = if white { reward_prob } else { 1.0 - reward_prob };
            col[Outcome::LeftCheese as usize] = p;
            col[Outcome::LeftNull as usize] = 1.0 - p;
        }
        Location::Right => {
            let p = if white { 1.0 - reward_prob } else { reward_prob };
            col[Outcome::RightCheese as usize] = p;
            col[Outcome::RightNull as usize] = 1.0 - p;
        }
        Location::Cue => {
            let o = if white {
                Outcome::CueWhite
            } else {
                Outcome::CueBlack
            };
            col[o as usize] = 1.0;
        }
    }
    col
}

pub fn build_tmaze_model() -> GenerativeModel {
    build_tmaze_model_with(DEFAULT_REWARD_PROB).expect("default reward probability is valid")
}

pub fn build_tmaze_model_with(reward_prob: f64) -> Result<GenerativeModel> {
    if !(0.0..=1.0).contains(&reward_prob) {
        return Err(Error::InvalidInput(format!(
            "reward probability {reward_prob} outside [0, 1]"
        )));
    }
    let mut likelihood = Matrix::zeros(NUM_OUTCOMES, NUM_STATES);
    for ctx in [Context::White, Context::Black] {
        for loc in Location::ALL {
            let s = state_index(loc, ctx);
            for (o, p) in outcome_distribution(loc, ctx, reward_prob).iter().enumerate() {
                likelihood.set(o, s, *p);
            }
        }
    }

    let transitions = Location::ALL
        .iter()
        .map(|&action| {
            let mut b = Matrix::zeros(NUM_STATES, NUM_STATES);
            for ctx in [Context::White, Context::Black] {
                for loc in Location::ALL {
                    b.set(state_index(loc.after(action), ctx), state_index(loc, ctx), 1.0);
                }
            }
            b
        })
        .collect();

    let u = CHEESE_UTILITY;
    let preferences = vec![0.0, u, -u, u, -u, 0.0, 0.0];

    let mut counts = [0.0; NUM_STATES];
    counts[state_index(Location::Center, Context::White)] = CENTER_PRIOR_COUNT;
    counts[state_index(Location::Center, Context::Black)] = CENTER_PRIOR_COUNT;
    let state_prior = normalize(&counts)?;

    let policies = PolicySet::new(
        [
            (0, 0),
            (0, 1),
            (0, 2),
            (0, 3),
            (1, 1),
            (2, 2),
            (3, 0),
            (3, 1),
            (3, 2),
            (3, 3),
        ]
        .iter()
        .map(|&(a, b)| Policy(vec![a, b]))
        .collect(),
    )?;

    let state_labels = [Context::White, Context::Black]
        .iter()
        .flat_map(|c| {
            Location::ALL
                .iter()
                .map(move |l| format!("{}-{}", l.label(), c.label()))
        })
        .collect();

    GenerativeModel {
        num_states: NUM_STATES,
        num_outcomes: NUM_OUTCOMES,
        num_actions: NUM_LOCATIONS,
        horizon: HORIZON,
        likelihood,
        transitions,
        preferences,
        state_prior,
        policies,
        prior_states: None,
        labels: Labels {
            states: Some(state_labels),
            outcomes: Some(OUTCOME_LABELS.iter().map(|s| s.to_string()).collect()),
            actions: Some(Location::ALL.iter().map(|l| l.label().to_string()).collect()),
        },
    }
    .validated()
}

/// Utility of an observed outcome: ±6 at the arms, zero elsewhere.
pub fn score_outcome(outcome: usize) -> i64 {
    const CHEESE: usize = Outcome::LeftCheese as usize;
    const RIGHT_CHEESE: usize = Outcome::RightCheese as usize;
    const LEFT_NULL: usize = Outcome::LeftNull as usize;
    const RIGHT_NULL: usize = Outcome::RightNull as usize;
    match outcome {
        CHEESE | RIGHT_CHEESE => CHEESE_UTILITY as i64,
        LEFT_NULL | RIGHT_NULL => -(CHEESE_UTILITY as i64),
        _ => 0,
    }
}

/// Context of every trial (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContextSchedule(Vec<Context>);

impl Default for ContextSchedule {
    /// White except for trials 10–12 and 30.
    fn default() -> Self {
        Self(
            (1..=SCHEDULE_TRIALS)
                .map(|t| {
                    if (10..=12).contains(&t) || t == 30 {
                        Context::Black
                    } else {
                        Context::White
                    }
                })
                .collect(),
        )
    }
}

impl ContextSchedule {
    pub fn new(contexts: Vec<Context>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::InvalidInput("empty context schedule".into()));
        }
        Ok(Self(contexts))
    }

    /// Reads whitespace/comma separated `white` / `black` tokens.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let contexts = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Context>>>()?;
        Self::new(contexts)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn context_at(&self, trial: usize) -> Result<Context> {
        trial
            .checked_sub(1)
            .and_then(|i| self.0.get(i).copied())
            .ok_or_else(|| Error::OutOfRange(format!("trial {trial} outside 1..={}", self.0.len())))
    }

    /// Maximal runs of black-context trials as inclusive `(first, last)` pairs.
    pub fn black_bands(&self) -> Vec<(usize, usize)> {
        let mut bands = Vec::new();
        let mut start = None;
        for (i, c) in self.0.iter().enumerate() {
            match (c, start) {
                (Context::Black, None) => start = Some(i + 1),
                (Context::White, Some(s)) => {
                    bands.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            bands.push((s, self.0.len()));
        }
        bands
    }
}

pub fn context_at(schedule: &ContextSchedule, trial: usize) -> Result<Context> {
    schedule.context_at(trial)
}

/// Ground-truth maze. Owns its outcome generator.
#[derive(Debug, Clone)]
pub struct TmazeEnv {
    location: Location,
    context: Context,
    reward_prob: f64,
    rng: ChaCha8Rng,
}

impl TmazeEnv {
    /// A fresh trial with the agent at the center.
    pub fn new(context: Context, reward_prob: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&reward_prob) {
            return Err(Error::InvalidInput(format!(
                "reward probability {reward_prob} outside [0, 1]"
            )));
        }
        Ok(Self {
            location: Location::Center,
            context,
            reward_prob,
            rng,
        })
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn context(&self) -> Context {
        self.context
    }

    /// Samples an outcome at the current location.
    pub fn observe(&mut self) -> usize {
        let dist = outcome_distribution(self.location, self.context, self.reward_prob);
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (o, p) in dist.iter().enumerate() {
            if *p <= 0.0 {
                continue;
            }
            acc += p;
            last = o;
            if u < acc {
                return o;
            }
        }
        last
    }

    /// Moves per the absorbing-arm rule, then samples an outcome.
    pub fn step(&mut self, action: usize) -> Result<usize> {
        let action = Location::from_index(action)
            .ok_or_else(|| Error::OutOfRange(format!("action {action} (4 actions)")))?;
        self.location = self.location.after(action);
        Ok(self.observe())
    }
}

pub fn env_step(env: &mut TmazeEnv, action: usize) -> Result<usize> {
    env.step(action)
}
