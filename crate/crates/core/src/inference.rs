//! Per-policy state estimation by minimizing the mean-field variational free
//! energy, free-energy evaluation, and Bayesian model averaging over policies.
//!
//! Under a policy `π` the approximate posterior factorizes over time,
//! `Q(s_1:T | π) = Π_τ Q(s_τ | π)`. Each factor is updated in turn to
//!
//! ```text
//! ln Q(s_τ) = ln D·[τ = 1] + ln A[o_τ, ·]·[τ observed]
//!           + (ln B[a_τ-1]) Q(s_τ-1) + (ln B[a_τ])ᵀ Q(s_τ+1) + const
//! ```
//!
//! which is the exact coordinate-wise minimizer of the free energy computed
//! by [`vfe`], so every sweep is monotone in `F`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GenerativeModel, Matrix, Policy};
use crate::numerics::{entropy, ln_clamped, softmax, Categorical};

pub const MAX_SWEEPS: usize = 32;
pub const CONVERGENCE_TOL: f64 = 1e-6;

/// An observed outcome at a 1-based timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Observation {
    pub timestep: usize,
    pub outcome: usize,
}

impl Observation {
    pub fn new(timestep: usize, outcome: usize) -> Self {
        Self { timestep, outcome }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateInference {
    /// `Q(s_τ | π)` for `τ = 1..=T`.
    pub states: Vec<Categorical>,
    pub converged: bool,
    pub sweeps: usize,
}

fn check_policy(model: &GenerativeModel, policy: &Policy) -> Result<()> {
    if policy.actions().len() + 1 != model.horizon {
        return Err(Error::Shape(format!(
            "policy {policy} has {} actions, horizon {} needs {}",
            policy.actions().len(),
            model.horizon,
            model.horizon - 1
        )));
    }
    if let Some(a) = policy.actions().iter().find(|a| **a >= model.num_actions) {
        return Err(Error::OutOfRange(format!(
            "action {a} in policy {policy} (num_actions = {})",
            model.num_actions
        )));
    }
    Ok(())
}

fn check_observations(model: &GenerativeModel, observed: &[Observation]) -> Result<()> {
    let mut last = 0;
    for ob in observed {
        if ob.timestep == 0 || ob.timestep > model.horizon {
            return Err(Error::OutOfRange(format!(
                "observation timestep {} outside 1..={}",
                ob.timestep, model.horizon
            )));
        }
        if ob.timestep <= last {
            return Err(Error::InvalidInput(
                "observation timesteps must be strictly increasing".into(),
            ));
        }
        if ob.outcome >= model.num_outcomes {
            return Err(Error::OutOfRange(format!(
                "outcome {} (num_outcomes = {})",
                ob.outcome, model.num_outcomes
            )));
        }
        last = ob.timestep;
    }
    Ok(())
}

/// Observation at each timestep, `None` where unobserved.
fn outcome_by_time(horizon: usize, observed: &[Observation]) -> Vec<Option<usize>> {
    let mut by_time = vec![None; horizon];
    for ob in observed {
        by_time[ob.timestep - 1] = Some(ob.outcome);
    }
    by_time
}

struct LogModel {
    ln_a: Matrix,
    ln_d: Vec<f64>,
    /// `ln B[a_τ]` for the transition out of timestep `τ` (0-based).
    ln_b: Vec<Matrix>,
}

impl LogModel {
    fn new(model: &GenerativeModel, policy: &Policy) -> Self {
        Self {
            ln_a: model.likelihood.map(ln_clamped),
            ln_d: model.state_prior.probs().iter().map(|p| ln_clamped(*p)).collect(),
            ln_b: policy
                .actions()
                .iter()
                .map(|a| model.transition(*a).map(ln_clamped))
                .collect(),
        }
    }
}

/// Fixed-point inference of `Q(s_τ | π)` given the outcomes observed so far.
///
/// Sweeps forward over `τ = 1..T` then backward, starting from uniform
/// factors, until the largest elementwise change over a sweep pair drops
/// below [`CONVERGENCE_TOL`] or [`MAX_SWEEPS`] is reached. Non-convergence is
/// reported through [`StateInference::converged`].
pub fn infer_states(
    model: &GenerativeModel,
    policy: &Policy,
    observed: &[Observation],
) -> Result<StateInference> {
    check_policy(model, policy)?;
    check_observations(model, observed)?;

    let horizon = model.horizon;
    let n = model.num_states;
    let outcomes = outcome_by_time(horizon, observed);
    let logs = LogModel::new(model, policy);
    let mut q: Vec<Vec<f64>> = vec![vec![1.0 / n as f64; n]; horizon];

    let order: Vec<usize> = (0..horizon).chain((0..horizon).rev()).collect();
    for sweep in 1..=MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        let before = q.clone();
        for &tau in &order {
            let mut log_q = vec![0.0; n];
            if tau == 0 {
                add_assign(&mut log_q, &logs.ln_d);
            }
            if let Some(o) = outcomes[tau] {
                add_assign(&mut log_q, logs.ln_a.row(o));
            }
            if tau > 0 {
                add_assign(&mut log_q, &logs.ln_b[tau - 1].mul_vec(&q[tau - 1]));
            }
            if tau + 1 < horizon {
                add_assign(&mut log_q, &logs.ln_b[tau].tmul_vec(&q[tau + 1]));
            }
            q[tau] = softmax(&log_q, 1.0)?.into_vec();
        }
        for (new, old) in q.iter().zip(&before) {
            for (a, b) in new.iter().zip(old) {
                max_change = max_change.max((a - b).abs());
            }
        }
        if max_change < CONVERGENCE_TOL {
            return Ok(StateInference {
                states: to_categoricals(q)?,
                converged: true,
                sweeps: sweep,
            });
        }
    }
    Ok(StateInference {
        states: to_categoricals(q)?,
        converged: false,
        sweeps: MAX_SWEEPS,
    })
}

fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn to_categoricals(q: Vec<Vec<f64>>) -> Result<Vec<Categorical>> {
    q.into_iter().map(Categorical::new).collect()
}

/// Mean-field variational free energy
/// `E_Q[ln Q(s_1:T) − ln P(o_1:t, s_1:T | π)]`, in nats.
pub fn vfe(
    model: &GenerativeModel,
    q_states: &[Categorical],
    observed: &[Observation],
    policy: &Policy,
) -> Result<f64> {
    check_policy(model, policy)?;
    check_observations(model, observed)?;
    if q_states.len() != model.horizon {
        return Err(Error::Shape(format!(
            "{} state factors for horizon {}",
            q_states.len(),
            model.horizon
        )));
    }
    if let Some(q) = q_states.iter().find(|q| q.len() != model.num_states) {
        return Err(Error::Shape(format!(
            "state factor of size {} for {} states",
            q.len(),
            model.num_states
        )));
    }

    let outcomes = outcome_by_time(model.horizon, observed);
    let logs = LogModel::new(model, policy);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut f = -dot(q_states[0].probs(), &logs.ln_d);
    for (tau, q) in q_states.iter().enumerate() {
        f -= entropy(q);
        if let Some(o) = outcomes[tau] {
            f -= dot(q.probs(), logs.ln_a.row(o));
        }
        if tau > 0 {
            let expected_ln_b = logs.ln_b[tau - 1].mul_vec(q_states[tau - 1].probs());
            f -= dot(q.probs(), &expected_ln_b);
        }
    }
    Ok(f)
}

/// Per-policy state posteriors together with the policy posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefEnsemble {
    per_policy_states: Vec<Vec<Categorical>>,
    policy_posterior: Categorical,
    observed: Vec<Observation>,
}

impl BeliefEnsemble {
    pub fn new(
        per_policy_states: Vec<Vec<Categorical>>,
        policy_posterior: Categorical,
        observed: Vec<Observation>,
    ) -> Result<Self> {
        if per_policy_states.len() != policy_posterior.len() {
            return Err(Error::Shape(format!(
                "{} policy belief sets for a posterior over {} policies",
                per_policy_states.len(),
                policy_posterior.len()
            )));
        }
        let horizon = per_policy_states.first().map_or(0, Vec::len);
        let states = per_policy_states
            .first()
            .and_then(|s| s.first())
            .map_or(0, Categorical::len);
        if per_policy_states
            .iter()
            .any(|s| s.len() != horizon || s.iter().any(|q| q.len() != states))
        {
            return Err(Error::Shape("ragged per-policy beliefs".into()));
        }
        if observed.windows(2).any(|w| w[0].timestep >= w[1].timestep) {
            return Err(Error::InvalidInput(
                "observation timesteps must be strictly increasing".into(),
            ));
        }
        if observed.iter().any(|o| o.timestep == 0 || o.timestep > horizon) {
            return Err(Error::OutOfRange(
                "observation timestep outside the horizon".into(),
            ));
        }
        Ok(Self {
            per_policy_states,
            policy_posterior,
            observed,
        })
    }

    pub fn per_policy_states(&self) -> &[Vec<Categorical>] {
        &self.per_policy_states
    }

    pub fn policy_posterior(&self) -> &Categorical {
        &self.policy_posterior
    }

    pub fn observed(&self) -> &[Observation] {
        &self.observed
    }

    pub fn horizon(&self) -> usize {
        self.per_policy_states.first().map_or(0, Vec::len)
    }
}

/// Bayesian model average `Σ_π Q(π) Q(s_τ | π)` at 1-based `timestep`.
pub fn bma_beliefs(ensemble: &BeliefEnsemble, timestep: usize) -> Result<Categorical> {
    if timestep == 0 || timestep > ensemble.horizon() {
        return Err(Error::OutOfRange(format!(
            "timestep {timestep} outside 1..={}",
            ensemble.horizon()
        )));
    }
    let n = ensemble.per_policy_states[0][0].len();
    let mut avg = vec![0.0; n];
    for (states, w) in ensemble
        .per_policy_states
        .iter()
        .zip(ensemble.policy_posterior.probs())
    {
        for (a, p) in avg.iter_mut().zip(states[timestep - 1].probs()) {
            *a += w * p;
        }
    }
    // renormalize away rounding only
    let total: f64 = avg.iter().sum();
    Categorical::new(avg.into_iter().map(|a| a / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PolicySet;
    use crate::numerics::Categorical;
    use crate::tmaze::{build_tmaze_model, context_marginal, Action, Outcome};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Two-state, one-action model with the given likelihood rows.
    fn two_state(a_rows: Vec<Vec<f64>>, horizon: usize) -> GenerativeModel {
        GenerativeModel {
            num_states: 2,
            num_outcomes: a_rows.len(),
            num_actions: 1,
            horizon,
            likelihood: Matrix::from_rows(a_rows.clone()),
            transitions: vec![Matrix::identity(2)],
            preferences: vec![0.0; a_rows.len()],
            state_prior: Categorical::uniform(2),
            policies: PolicySet::new(vec![Policy(vec![0; horizon - 1])]).unwrap(),
            prior_states: None,
            labels: Default::default(),
        }
        .validated()
        .unwrap()
    }

    /// Deterministic cyclic shift over `n` states with identity likelihood.
    fn cycle_model(n: usize, horizon: usize, start: usize) -> GenerativeModel {
        let mut b = Matrix::zeros(n, n);
        for s in 0..n {
            b.set((s + 1) % n, s, 1.0);
        }
        GenerativeModel {
            num_states: n,
            num_outcomes: n,
            num_actions: 2,
            horizon,
            likelihood: Matrix::identity(n),
            transitions: vec![b, Matrix::identity(n)],
            preferences: vec![0.0; n],
            state_prior: Categorical::delta(n, start),
            policies: PolicySet::new(vec![Policy(vec![0; horizon - 1]), Policy(vec![1; horizon - 1])])
                .unwrap(),
            prior_states: None,
            labels: Default::default(),
        }
        .validated()
        .unwrap()
    }

    #[test]
    fn identity_likelihood_pins_observed_state() {
        let mut m = cycle_model(4, 3, 0);
        m.state_prior = Categorical::uniform(4);
        let pol = m.policies[0].clone();
        let r = infer_states(&m, &pol, &[Observation::new(2, 3)]).unwrap();
        assert!(r.converged);
        assert!(close(r.states[1][3], 1.0, 1e-9));
        // the deterministic shift fixes the neighbours too
        assert!(close(r.states[0][2], 1.0, 1e-9));
        assert!(close(r.states[2][0], 1.0, 1e-9));
    }

    #[test]
    fn no_observations_propagates_prior() {
        let m = cycle_model(5, 4, 1);
        for pol in m.policies.iter() {
            let r = infer_states(&m, pol, &[]).unwrap();
            let mut expect = m.state_prior.probs().to_vec();
            for (tau, q) in r.states.iter().enumerate() {
                if tau > 0 {
                    expect = m.transition(pol.0[tau - 1]).mul_vec(&expect);
                }
                for (a, b) in q.probs().iter().zip(&expect) {
                    assert!(close(*a, *b, 1e-9));
                }
            }
        }
    }

    #[test]
    fn tmaze_prior_propagation_without_observations() {
        let m = build_tmaze_model();
        let pol = Policy(vec![Action::Cue as usize, Action::Left as usize]);
        let r = infer_states(&m, &pol, &[]).unwrap();
        assert!(r.converged);
        let mut expect = m.state_prior.probs().to_vec();
        for (tau, q) in r.states.iter().enumerate() {
            if tau > 0 {
                expect = m.transition(pol.0[tau - 1]).mul_vec(&expect);
            }
            for (a, b) in q.probs().iter().zip(&expect) {
                assert!(close(*a, *b, 1e-6), "τ={} {:?}", tau + 1, q);
            }
        }
    }

    #[test]
    fn tmaze_white_cue_resolves_context() {
        let m = build_tmaze_model();
        for second in 0..4 {
            let pol = Policy(vec![Action::Cue as usize, second]);
            let obs = [
                Observation::new(1, Outcome::Center as usize),
                Observation::new(2, Outcome::CueWhite as usize),
            ];
            let r = infer_states(&m, &pol, &obs).unwrap();
            let ctx = context_marginal(&r.states[1]);
            assert!(close(ctx[0], 1.0, 1e-6) && close(ctx[1], 0.0, 1e-6), "{ctx:?}");
        }
    }

    #[test]
    fn vfe_examples() {
        let m = two_state(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1);
        let pol = Policy(vec![]);
        let f = vfe(&m, &[Categorical::delta(2, 0)], &[Observation::new(1, 0)], &pol).unwrap();
        assert!(close(f, 2f64.ln(), 1e-12));

        let m = two_state(vec![vec![0.75, 0.25], vec![0.25, 0.75]], 1);
        let f = vfe(&m, &[Categorical::uniform(2)], &[Observation::new(1, 0)], &pol).unwrap();
        // −½(ln 0.75 + ln 0.25)
        assert!(close(f, 0.836988216785836, 1e-12));
        assert!(f >= -(0.5f64).ln());

        let f = vfe(&m, std::slice::from_ref(&m.state_prior), &[], &pol).unwrap();
        assert!(close(f, 0.0, 1e-15));
    }

    #[test]
    fn vfe_of_prior_propagation_is_zero_for_deterministic_chain() {
        let m = cycle_model(3, 3, 2);
        let pol = m.policies[0].clone();
        let q = infer_states(&m, &pol, &[]).unwrap().states;
        assert!(vfe(&m, &q, &[], &pol).unwrap().abs() < 1e-12);
    }

    #[test]
    fn one_step_inference_is_exact_bayes() {
        let m = two_state(vec![vec![0.75, 0.25], vec![0.25, 0.75]], 1);
        let r = infer_states(&m, &Policy(vec![]), &[Observation::new(1, 0)]).unwrap();
        assert!(close(r.states[0][0], 0.75, 1e-12));
        let f = vfe(&m, &r.states, &[Observation::new(1, 0)], &Policy(vec![])).unwrap();
        assert!(close(f, 2f64.ln(), 1e-12));
    }

    #[test]
    fn rejects_bad_indices() {
        let m = cycle_model(3, 3, 0);
        let pol = m.policies[0].clone();
        assert!(infer_states(&m, &pol, &[Observation::new(4, 0)]).is_err());
        assert!(infer_states(&m, &pol, &[Observation::new(1, 3)]).is_err());
        assert!(infer_states(&m, &pol, &[Observation::new(2, 0), Observation::new(1, 0)]).is_err());
        assert!(infer_states(&m, &Policy(vec![0, 7]), &[]).is_err());
        assert!(vfe(&m, &[Categorical::uniform(3)], &[], &pol).is_err());
    }

    #[test]
    fn inference_is_bit_deterministic() {
        let m = build_tmaze_model();
        let obs = [
            Observation::new(1, 0),
            Observation::new(2, Outcome::CueBlack as usize),
        ];
        let pol = Policy(vec![3, 2]);
        assert_eq!(
            infer_states(&m, &pol, &obs).unwrap(),
            infer_states(&m, &pol, &obs).unwrap()
        );
    }

    #[test]
    fn bma_examples() {
        let q = vec![vec![Categorical::delta(3, 0)], vec![Categorical::delta(3, 1)]];
        let e = BeliefEnsemble::new(q, Categorical::uniform(2), vec![]).unwrap();
        assert_eq!(bma_beliefs(&e, 1).unwrap().probs(), &[0.5, 0.5, 0.0]);
        assert!(bma_beliefs(&e, 2).is_err());
        assert!(bma_beliefs(&e, 0).is_err());

        let single = vec![vec![Categorical::new(vec![0.2, 0.8]).unwrap(); 2]];
        let e = BeliefEnsemble::new(single, Categorical::delta(1, 0), vec![]).unwrap();
        assert_eq!(bma_beliefs(&e, 2).unwrap().probs(), &[0.2, 0.8]);
    }

    #[test]
    fn ensemble_rejects_mismatched_shapes() {
        let q = vec![vec![Categorical::uniform(2)]];
        assert!(BeliefEnsemble::new(q.clone(), Categorical::uniform(2), vec![]).is_err());
        assert!(BeliefEnsemble::new(q, Categorical::uniform(1), vec![Observation::new(2, 0)]).is_err());
    }
}
