//! Independent oracles and random model generators shared by the
//! integration tests. Nothing here calls the library's inference or
//! planning code.

#![allow(dead_code)]

use actinf::model::{GenerativeModel, Labels, Matrix, Policy, PolicySet};
use actinf::numerics::Categorical;
use rand::Rng;

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Random probability vector; `sparsity` is the chance an entry is zeroed.
pub fn random_dist<R: Rng>(rng: &mut R, n: usize, sparsity: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(sparsity) {
                    0.0
                } else {
                    rng.gen_range(0.01..1.0)
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return w.into_iter().map(|x| x / total).collect();
        }
    }
}

pub fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub fn all_policies(num_actions: usize, length: usize) -> PolicySet {
    let mut seqs: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..length {
        seqs = seqs
            .into_iter()
            .flat_map(|s| {
                (0..num_actions).map(move |a| {
                    let mut t = s.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    PolicySet::new(seqs.into_iter().map(Policy).collect()).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct ModelShape {
    pub max_states: usize,
    pub max_outcomes: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    pub sparsity: f64,
}

/// Random valid model with dense-ish stochastic matrices and a state prior.
pub fn random_model<R: Rng>(rng: &mut R, shape: ModelShape) -> GenerativeModel {
    let s = rng.gen_range(1..=shape.max_states);
    let o = rng.gen_range(1..=shape.max_outcomes);
    let u = rng.gen_range(1..=shape.max_actions);
    let horizon = rng.gen_range(1..=shape.max_horizon);
    let a_cols: Vec<Vec<f64>> = (0..s).map(|_| random_dist(rng, o, shape.sparsity)).collect();
    let transitions = (0..u)
        .map(|_| {
            let cols: Vec<Vec<f64>> = (0..s).map(|_| random_dist(rng, s, shape.sparsity)).collect();
            Matrix::from_columns(&cols)
        })
        .collect();
    GenerativeModel {
        num_states: s,
        num_outcomes: o,
        num_actions: u,
        horizon,
        likelihood: Matrix::from_columns(&a_cols),
        transitions,
        preferences: (0..o).map(|_| rng.gen_range(-8.0..8.0)).collect(),
        state_prior: Categorical::new(random_dist(rng, s, shape.sparsity)).unwrap(),
        policies: all_policies(u, horizon - 1),
        prior_states: Some(random_dist(rng, s, 0.0)),
        labels: Labels::default(),
    }
    .validated()
    .unwrap()
}

/// Draws an outcome sequence from the model's own generative process under `policy`.
pub fn sample_outcomes<R: Rng>(rng: &mut R, model: &GenerativeModel, policy: &Policy) -> Vec<usize> {
    let draw = |rng: &mut R, p: &[f64]| {
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if x < acc {
                return i;
            }
        }
        p.iter().rposition(|v| *v > 0.0).unwrap()
    };
    let mut state = draw(rng, model.state_prior.probs());
    let mut out = Vec::new();
    for tau in 1..=model.horizon {
        if tau > 1 {
            state = draw(rng, &model.transitions[policy.0[tau - 2]].column(state));
        }
        out.push(draw(rng, &model.likelihood.column(state)));
    }
    out
}

/// `−ln P(o_1..o_t | π)` by summing over every state trajectory.
pub fn neg_log_evidence(model: &GenerativeModel, policy: &Policy, outcomes: &[usize]) -> f64 {
    let s = model.num_states;
    let t = model.horizon;
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        let mut p = model.state_prior[path[0]];
        for tau in 0..t {
            if tau > 0 {
                p *= model.transitions[policy.0[tau - 1]].get(path[tau], path[tau - 1]);
            }
            if let Some(o) = outcomes.get(tau) {
                p *= model.likelihood.get(*o, path[tau]);
            }
        }
        total += p;
        // odometer increment
        let mut k = 0;
        loop {
            if k == t {
                return -total.ln();
            }
            path[k] += 1;
            if path[k] < s {
                break;
            }
            path[k] = 0;
            k += 1;
        }
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// `Σ_o Q(o) KL[Q(s|o) ‖ Q(s)]` by explicit Bayes updates.
pub fn brute_info_gain(q: &[f64], a: &Matrix) -> f64 {
    let mut total = 0.0;
    for o in 0..a.rows() {
        let joint: Vec<f64> = (0..q.len()).map(|s| a.get(o, s) * q[s]).collect();
        let q_o: f64 = joint.iter().sum();
        if q_o <= 0.0 {
            continue;
        }
        let post: Vec<f64> = joint.iter().map(|j| j / q_o).collect();
        total += q_o * kl(&post, q);
    }
    total
}

/// `E_Q(o,s)[ln Q(s) − ln P(s|o) − ln P(o)]` for `Q(o,s) = A q`, `P(o,s) = A p`.
pub fn brute_g_full(q: &[f64], a: &Matrix, p: &[f64]) -> f64 {
    let mut total = 0.0;
    for o in 0..a.rows() {
        let p_o: f64 = (0..p.len()).map(|s| a.get(o, s) * p[s]).sum();
        for s in 0..q.len() {
            let joint = a.get(o, s) * q[s];
            if joint > 0.0 {
                let p_post = a.get(o, s) * p[s] / p_o;
                total += joint * (q[s].ln() - p_post.ln() - p_o.ln());
            }
        }
    }
    total
}

/// Exact marginals `P(s_τ | o_1..o_t, π)` for every τ, by enumeration.
pub fn exact_marginals(model: &GenerativeModel, policy: &Policy, outcomes: &[usize]) -> Vec<Vec<f64>> {
    let s = model.num_states;
    let t = model.horizon;
    let mut marg = vec![vec![0.0; s]; t];
    let total_paths = s.pow(t as u32);
    for code in 0..total_paths {
        let path: Vec<usize> = (0..t).map(|k| (code / s.pow(k as u32)) % s).collect();
        let mut p = model.state_prior[path[0]];
        for tau in 0..t {
            if tau > 0 {
                p *= model.transitions[policy.0[tau - 1]].get(path[tau], path[tau - 1]);
            }
            if let Some(o) = outcomes.get(tau) {
                p *= model.likelihood.get(*o, path[tau]);
            }
        }
        for tau in 0..t {
            marg[tau][path[tau]] += p;
        }
    }
    for m in &mut marg {
        let z: f64 = m.iter().sum();
        m.iter_mut().for_each(|x| *x /= z);
    }
    marg
}

pub fn random_policy<R: Rng>(rng: &mut R, model: &GenerativeModel) -> Policy {
    model.policies[rng.gen_range(0..model.policies.len())].clone()
}
