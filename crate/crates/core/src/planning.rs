//! Expected free energy and its reduced objectives, the policy posterior,
//! action selection, and the evidence-bound / utility diagnostics.
//!
//! For a policy `π` and future timestep `τ`, with predictive state
//! distribution `Q(s_τ|π)` and outcome marginal `Q(o_τ|π) = A Q(s_τ|π)`:
//!
//! ```text
//! G(π,τ) = D_KL[Q(s_τ|π) ‖ P(s_τ)] + E_Q(s_τ|π) H[P(o_τ|s_τ)]            (risk + ambiguity)
//!        ≥ −E_Q(o_τ|π) D_KL[Q(s_τ|o_τ,π) ‖ Q(s_τ|π)] − E_Q(o_τ|π) ln P(o_τ)  (intrinsic + extrinsic)
//! ```
//!
//! The default objective uses the second line with `ln P(o) = C − logsumexp(C)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GenerativeModel, Matrix, Policy, PolicySet};
use crate::numerics::{entropy, kl_divergence, ln_clamped, logsumexp, normalize, softmax, Categorical};

/// Which functional scores policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// Negative information gain minus expected log preference over outcomes.
    #[serde(rename = "efe")]
    ExpectedFreeEnergy,
    /// Negative expected information gain only (optimal design).
    #[serde(rename = "eig")]
    InfoGainOnly,
    /// Negative expected log preference over outcomes (expected utility).
    #[serde(rename = "eu")]
    ExpectedUtilityOutcomes,
    /// Negative expected log prior over states.
    #[serde(rename = "eu-states")]
    ExpectedUtilityStates,
    /// `D_KL[Q(s_τ|π) ‖ P(s_τ)]` (KL control).
    #[serde(rename = "klc")]
    RiskOnly,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::ExpectedFreeEnergy,
        ObjectiveKind::InfoGainOnly,
        ObjectiveKind::ExpectedUtilityOutcomes,
        ObjectiveKind::ExpectedUtilityStates,
        ObjectiveKind::RiskOnly,
    ];

    /// Short command-line name.
    pub fn cli_name(self) -> &'static str {
        match self {
            ObjectiveKind::ExpectedFreeEnergy => "efe",
            ObjectiveKind::InfoGainOnly => "eig",
            ObjectiveKind::ExpectedUtilityOutcomes => "eu",
            ObjectiveKind::ExpectedUtilityStates => "eu-states",
            ObjectiveKind::RiskOnly => "klc",
        }
    }

    pub fn needs_state_prior(self) -> bool {
        matches!(
            self,
            ObjectiveKind::ExpectedUtilityStates | ObjectiveKind::RiskOnly
        )
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.cli_name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown agent `{s}` (expected one of efe, eig, eu, eu-states, klc)"
                ))
            })
    }
}

/// Every term of the expected free energy for one `(policy, timestep)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfeBreakdown {
    pub timestep: usize,
    /// `None` when no state prior is available.
    pub risk_states: Option<f64>,
    pub ambiguity: f64,
    pub intrinsic: f64,
    pub extrinsic: f64,
    /// `None` when no state prior is available.
    pub evidence_bound: Option<f64>,
    /// Contribution of this timestep under the selected objective.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEvaluation {
    pub total: f64,
    pub breakdown: Vec<EfeBreakdown>,
}

impl PolicyEvaluation {
    /// Breakdown terms summed over the future timesteps.
    pub fn summed(&self) -> EfeBreakdown {
        let sum_opt = |f: fn(&EfeBreakdown) -> Option<f64>| self.breakdown.iter().map(f).sum::<Option<f64>>();
        EfeBreakdown {
            timestep: 0,
            risk_states: sum_opt(|b| b.risk_states),
            ambiguity: self.breakdown.iter().map(|b| b.ambiguity).sum(),
            intrinsic: self.breakdown.iter().map(|b| b.intrinsic).sum(),
            extrinsic: self.breakdown.iter().map(|b| b.extrinsic).sum(),
            evidence_bound: sum_opt(|b| b.evidence_bound),
            total: self.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanContext {
    current_epoch: usize,
    executed_actions: Vec<usize>,
    pub precision: f64,
    pub tie_tolerance: f64,
    pub prior_states_for_risk: Option<Categorical>,
}

impl PlanContext {
    /// `executed_actions` holds the actions of epochs `1..current_epoch`.
    pub fn new(current_epoch: usize, executed_actions: Vec<usize>, precision: f64) -> Result<Self> {
        if current_epoch == 0 {
            return Err(Error::InvalidInput("epochs are 1-based".into()));
        }
        if executed_actions.len() + 1 != current_epoch {
            return Err(Error::InvalidInput(format!(
                "epoch {current_epoch} needs {} executed actions, got {}",
                current_epoch - 1,
                executed_actions.len()
            )));
        }
        if !precision.is_finite() || precision < 0.0 {
            return Err(Error::InvalidInput(format!("precision {precision} must be >= 0")));
        }
        Ok(Self {
            current_epoch,
            executed_actions,
            precision,
            tie_tolerance: 1e-9,
            prior_states_for_risk: None,
        })
    }

    pub fn with_tie_tolerance(mut self, tol: f64) -> Self {
        self.tie_tolerance = tol;
        self
    }

    pub fn with_state_prior(mut self, prior: Option<Categorical>) -> Self {
        self.prior_states_for_risk = prior;
        self
    }

    pub fn current_epoch(&self) -> usize {
        self.current_epoch
    }

    pub fn executed_actions(&self) -> &[usize] {
        &self.executed_actions
    }
}

fn shape_check(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Shape(format!("{what}: size {got}, expected {expected}")));
    }
    Ok(())
}

/// `Q(s_to | π) = B[a_to−1] ⋯ B[a_from] q_now` (1-based epochs).
pub fn predictive_states(
    model: &GenerativeModel,
    q_now: &Categorical,
    policy: &Policy,
    from_epoch: usize,
    to_epoch: usize,
) -> Result<Categorical> {
    shape_check("current state belief", q_now.len(), model.num_states)?;
    if from_epoch == 0 || from_epoch > to_epoch || to_epoch > model.horizon {
        return Err(Error::OutOfRange(format!(
            "predictive range {from_epoch}..{to_epoch} outside 1..={}",
            model.horizon
        )));
    }
    let mut q = q_now.probs().to_vec();
    for epoch in from_epoch..to_epoch {
        let action = policy
            .action_at(epoch)
            .ok_or_else(|| Error::OutOfRange(format!("policy {policy} has no action at epoch {epoch}")))?;
        if action >= model.num_actions {
            return Err(Error::OutOfRange(format!("action {action}")));
        }
        q = model.transition(action).mul_vec(&q);
    }
    normalize(&q)
}

/// Outcome marginal `A · q_s`.
pub fn predictive_outcome(q_s: &Categorical, likelihood: &Matrix) -> Result<Categorical> {
    shape_check("state belief", q_s.len(), likelihood.cols())?;
    normalize(&likelihood.mul_vec(q_s.probs()))
}

pub fn risk_states(q_s: &Categorical, prior_s: &Categorical) -> Result<f64> {
    kl_divergence(q_s, prior_s)
}

/// `Σ_s q_s[s] · H[A[·, s]]`.
pub fn ambiguity(q_s: &Categorical, likelihood: &Matrix) -> Result<f64> {
    shape_check("state belief", q_s.len(), likelihood.cols())?;
    Ok(q_s
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, q)| **q > 0.0)
        .map(|(s, q)| q * column_entropy(likelihood, s))
        .sum())
}

fn column_entropy(m: &Matrix, col: usize) -> f64 {
    -(0..m.rows())
        .map(|r| m.get(r, col))
        .filter(|p| *p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Mutual information between states and outcomes under `q_s`,
/// `H[A q_s] − E_q_s H[A[·, s]]`.
pub fn expected_info_gain(q_s: &Categorical, likelihood: &Matrix) -> Result<f64> {
    let q_o = predictive_outcome(q_s, likelihood)?;
    let mi = (entropy(&q_o) - ambiguity(q_s, likelihood)?).max(0.0);
    debug_assert!(
        (mi - expected_posterior_divergence(q_s, likelihood)?).abs() < 1e-12,
        "information gain forms disagree"
    );
    Ok(mi)
}

/// The same quantity as [`expected_info_gain`], computed as
/// `E_Q(o) D_KL[Q(s|o) ‖ q_s]` with `Q(s|o) ∝ A[o, ·] ⊙ q_s`.
pub fn expected_posterior_divergence(q_s: &Categorical, likelihood: &Matrix) -> Result<f64> {
    shape_check("state belief", q_s.len(), likelihood.cols())?;
    let mut total = 0.0;
    for o in 0..likelihood.rows() {
        let joint: Vec<f64> = likelihood
            .row(o)
            .iter()
            .zip(q_s.probs())
            .map(|(a, q)| a * q)
            .collect();
        let p_o: f64 = joint.iter().sum();
        if p_o <= 0.0 {
            continue;
        }
        let posterior = normalize(&joint)?;
        total += p_o * kl_divergence(&posterior, q_s)?;
    }
    Ok(total)
}

/// Expected normalized log preference `Σ_o q_o[o] (C[o] − logsumexp C)`.
pub fn extrinsic_value(q_o: &Categorical, preferences: &[f64]) -> Result<f64> {
    shape_check("outcome belief", q_o.len(), preferences.len())?;
    let lse = logsumexp(preferences);
    Ok(q_o
        .probs()
        .iter()
        .zip(preferences)
        .map(|(q, c)| q * (c - lse))
        .sum())
}

/// `G(π) = Σ_{τ > t} G(π, τ)` under `objective`, with every breakdown term
/// filled in for reporting.
pub fn expected_free_energy(
    model: &GenerativeModel,
    q_now: &Categorical,
    policy: &Policy,
    ctx: &PlanContext,
    objective: ObjectiveKind,
) -> Result<PolicyEvaluation> {
    let t = ctx.current_epoch;
    if t >= model.horizon {
        return Err(Error::OutOfRange(format!(
            "no future timesteps to plan over at epoch {t} (horizon {})",
            model.horizon
        )));
    }
    let prior = ctx.prior_states_for_risk.as_ref();
    if objective.needs_state_prior() && prior.is_none() {
        return Err(Error::Config(format!(
            "objective `{objective}` requires a state prior (prior_states) and none was supplied"
        )));
    }
    if let Some(p) = prior {
        shape_check("state prior", p.len(), model.num_states)?;
    }

    let mut breakdown = Vec::with_capacity(model.horizon - t);
    let mut q_s = q_now.clone();
    for tau in (t + 1)..=model.horizon {
        q_s = predictive_states(model, &q_s, policy, tau - 1, tau)?;
        let q_o = predictive_outcome(&q_s, &model.likelihood)?;
        let intrinsic = expected_info_gain(&q_s, &model.likelihood)?;
        let extrinsic = extrinsic_value(&q_o, &model.preferences)?;
        let ambiguity = ambiguity(&q_s, &model.likelihood)?;
        let risk = prior.map(|p| risk_states(&q_s, p)).transpose()?;
        let evidence_bound = prior
            .map(|p| evidence_bound_terms(&q_s, &model.likelihood, p).map(|e| e.evidence_bound))
            .transpose()?;

        let total = match objective {
            ObjectiveKind::ExpectedFreeEnergy => -intrinsic - extrinsic,
            ObjectiveKind::InfoGainOnly => -intrinsic,
            ObjectiveKind::ExpectedUtilityOutcomes => -extrinsic,
            ObjectiveKind::ExpectedUtilityStates => {
                let p = prior.expect("checked above");
                -q_s.probs()
                    .iter()
                    .zip(p.probs())
                    .map(|(q, ps)| if *q > 0.0 { q * ln_clamped(*ps) } else { 0.0 })
                    .sum::<f64>()
            }
            ObjectiveKind::RiskOnly => risk.expect("checked above"),
        };
        breakdown.push(EfeBreakdown {
            timestep: tau,
            risk_states: risk,
            ambiguity,
            intrinsic,
            extrinsic,
            evidence_bound,
            total,
        });
    }
    Ok(PolicyEvaluation {
        total: breakdown.iter().map(|b| b.total).sum(),
        breakdown,
    })
}

/// `Q(π) = σ(−γ G(π))` over the policies whose prefix matches the executed
/// actions; all other policies get zero mass.
pub fn policy_posterior(g_values: &[f64], policies: &PolicySet, ctx: &PlanContext) -> Result<Categorical> {
    shape_check("G values", g_values.len(), policies.len())?;
    let viable: Vec<usize> = (0..policies.len())
        .filter(|&i| policies[i].starts_with(ctx.executed_actions()))
        .collect();
    if viable.is_empty() {
        return Err(Error::NoViablePolicy);
    }
    let neg_g: Vec<f64> = viable.iter().map(|&i| -g_values[i]).collect();
    let sub = softmax(&neg_g, ctx.precision)?;
    let mut probs = vec![0.0; policies.len()];
    for (k, &i) in viable.iter().enumerate() {
        probs[i] = sub[k];
    }
    Categorical::new(probs)
}

/// `P(a) = Σ_{π : π.actions[t−1] = a} Q(π)`.
pub fn action_marginal(
    policy_post: &Categorical,
    policies: &PolicySet,
    num_actions: usize,
    epoch: usize,
) -> Result<Categorical> {
    shape_check("policy posterior", policy_post.len(), policies.len())?;
    let mut probs = vec![0.0; num_actions];
    for (pol, w) in policies.iter().zip(policy_post.probs()) {
        let a = pol
            .action_at(epoch)
            .ok_or_else(|| Error::OutOfRange(format!("no action at epoch {epoch} in policy {pol}")))?;
        if a >= num_actions {
            return Err(Error::OutOfRange(format!("action {a} >= {num_actions}")));
        }
        probs[a] += w;
    }
    normalize(&probs)
}

/// Most likely action; entries within `tie_tolerance` of the maximum are
/// tied and one is drawn uniformly from `rng`.
pub fn select_action<R: Rng + ?Sized>(marginal: &Categorical, rng: &mut R, tie_tolerance: f64) -> usize {
    let max = marginal.probs().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = marginal
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, p)| **p >= max - tie_tolerance)
        .map(|(i, _)| i)
        .collect();
    match tied.len() {
        1 => tied[0],
        n => tied[rng.gen_range(0..n)],
    }
}

/// Terms of the expected-evidence decomposition at one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvidenceBoundTerms {
    pub timestep: usize,
    /// `E_Q(o) D_KL[Q(s|o) ‖ Q(s)]`
    pub info_gain: f64,
    /// `E_Q(o) ln P(o)` with `P(o) = A P(s)`
    pub expected_log_evidence: f64,
    /// `E_Q(o) D_KL[Q(s|o) ‖ P(s|o)]`
    pub evidence_bound: f64,
    /// `E_Q̃[ln Q(s) − ln P(s|o) − ln P(o)]`
    pub g_full: f64,
}

fn evidence_bound_terms(
    q_s: &Categorical,
    likelihood: &Matrix,
    prior: &Categorical,
) -> Result<EvidenceBoundTerms> {
    shape_check("state belief", q_s.len(), likelihood.cols())?;
    shape_check("state prior", prior.len(), likelihood.cols())?;
    let evidence = likelihood.mul_vec(prior.probs());
    let mut info_gain = 0.0;
    let mut expected_log_evidence = 0.0;
    let mut evidence_bound = 0.0;
    let mut g_full = 0.0;
    for (o, &p_o) in evidence.iter().enumerate() {
        let row = likelihood.row(o);
        let joint_q: Vec<f64> = row.iter().zip(q_s.probs()).map(|(a, q)| a * q).collect();
        let q_o: f64 = joint_q.iter().sum();
        if q_o <= 0.0 {
            continue;
        }
        let q_post = normalize(&joint_q)?;
        let joint_p: Vec<f64> = row.iter().zip(prior.probs()).map(|(a, p)| a * p).collect();
        // P(s|o) is undefined where P(o) = 0; the clamp then dominates the KL
        let p_post = normalize(&joint_p).unwrap_or_else(|_| Categorical::uniform(row.len()));
        let ln_p_o = ln_clamped(p_o);

        info_gain += q_o * kl_divergence(&q_post, q_s)?;
        expected_log_evidence += q_o * ln_p_o;
        evidence_bound += q_o * kl_divergence(&q_post, &p_post)?;
        for (s, (&qj, &q)) in joint_q.iter().zip(q_s.probs()).enumerate() {
            if qj > 0.0 {
                g_full += qj * (q.ln() - ln_clamped(p_post[s]) - ln_p_o);
            }
        }
    }
    Ok(EvidenceBoundTerms {
        timestep: 0,
        info_gain,
        expected_log_evidence,
        evidence_bound,
        g_full,
    })
}

/// Expected-evidence decomposition over the future timesteps of `policy`.
pub fn evidence_bound_diagnostic(
    model: &GenerativeModel,
    q_now: &Categorical,
    policy: &Policy,
    ctx: &PlanContext,
    prior_states: Option<&Categorical>,
) -> Result<Vec<EvidenceBoundTerms>> {
    let prior = prior_states
        .ok_or_else(|| Error::Config("evidence bound diagnostic requires prior_states".into()))?;
    let t = ctx.current_epoch();
    let mut out = Vec::new();
    let mut q_s = q_now.clone();
    for tau in (t + 1)..=model.horizon {
        q_s = predictive_states(model, &q_s, policy, tau - 1, tau)?;
        let mut terms = evidence_bound_terms(&q_s, &model.likelihood, prior)?;
        terms.timestep = tau;
        out.push(terms);
    }
    Ok(out)
}

/// `(E_q[ln P(s)], E_Q(o)[ln P(o)])` with `P(o) = A P(s)` and `Q(o) = A q_s`.
/// Both sides are reported; no ordering between them is assumed.
pub fn state_outcome_utility_comparison(
    model: &GenerativeModel,
    q_s: &Categorical,
    prior_states: &Categorical,
) -> Result<(f64, f64)> {
    shape_check("state belief", q_s.len(), model.num_states)?;
    shape_check("state prior", prior_states.len(), model.num_states)?;
    let expect_ln = |q: &[f64], p: &[f64]| -> f64 {
        q.iter()
            .zip(p)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, p)| q * ln_clamped(*p))
            .sum()
    };
    let state_side = expect_ln(q_s.probs(), prior_states.probs());
    let q_o = model.likelihood.mul_vec(q_s.probs());
    let p_o = model.likelihood.mul_vec(prior_states.probs());
    Ok((state_side, expect_ln(&q_o, &p_o)))
}
