//! Discrete POMDP generative models: likelihood `A`, per-action transitions
//! `B[u]`, outcome utilities `C`, initial state prior `D` and an explicit
//! policy list.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::numerics::{sum_unordered, Categorical, NORM_TOL};

/// Dense row-major matrix. Probability matrices are column-stochastic:
/// column `j` is the distribution conditioned on index `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from row vectors; ragged input keeps the first row's width and
    /// is reported by [`GenerativeModel::validate`] as a shape violation.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for mut r in rows {
            r.resize(cols, f64::NAN);
            data.extend(r);
        }
        Self { rows: n, cols, data }
    }

    /// Builds from column distributions.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// `M · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| sum_unordered(self.row(r).iter().zip(x).map(|(a, b)| a * b).collect()))
            .collect()
    }

    /// `Mᵀ · x`.
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        (0..self.cols)
            .map(|c| sum_unordered(x.iter().enumerate().map(|(r, xr)| self.get(r, c) * xr).collect()))
            .collect()
    }

    /// Elementwise map, e.g. to a clamped log.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }
}

impl From<Vec<Vec<f64>>> for Matrix {
    fn from(rows: Vec<Vec<f64>>) -> Self {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

/// Fixed action sequence; `actions[k]` is taken at epoch `k + 1` and moves
/// the state from timestep `k + 1` to `k + 2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    /// Action taken at 1-based `epoch`.
    pub fn action_at(&self, epoch: usize) -> Option<usize> {
        epoch.checked_sub(1).and_then(|k| self.0.get(k).copied())
    }

    pub fn starts_with(&self, prefix: &[usize]) -> bool {
        self.0.starts_with(prefix)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Ordered, duplicate-free, nonempty list of policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Policy>", into = "Vec<Policy>")]
pub struct PolicySet(Vec<Policy>);

impl PolicySet {
    pub fn new(policies: Vec<Policy>) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::InvalidInput("policy set is empty".into()));
        }
        let mut seen = HashSet::new();
        for p in &policies {
            if !seen.insert(p) {
                return Err(Error::InvalidInput(format!("duplicate policy {p}")));
            }
        }
        Ok(Self(policies))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Policy> {
        self.0.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Policy> {
        self.0.get(i)
    }

    pub fn position(&self, actions: &[usize]) -> Option<usize> {
        self.0.iter().position(|p| p.0 == actions)
    }
}

impl std::ops::Index<usize> for PolicySet {
    type Output = Policy;

    fn index(&self, i: usize) -> &Policy {
        &self.0[i]
    }
}

impl TryFrom<Vec<Policy>> for PolicySet {
    type Error = Error;

    fn try_from(v: Vec<Policy>) -> Result<Self> {
        PolicySet::new(v)
    }
}

impl From<PolicySet> for Vec<Policy> {
    fn from(p: PolicySet) -> Self {
        p.0
    }
}

/// One invariant violation, located by matrix/vector name and index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Labels {
    pub states: Option<Vec<String>>,
    pub outcomes: Option<Vec<String>>,
    pub actions: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub num_states: usize,
    pub num_outcomes: usize,
    pub num_actions: usize,
    /// Number of epochs `T`; policies have `T - 1` actions.
    pub horizon: usize,
    /// `A[o, s] = P(o | s)`.
    pub likelihood: Matrix,
    /// `B[u][s', s] = P(s' | s, u)`.
    pub transitions: Vec<Matrix>,
    /// Unnormalized log-preferences over outcomes.
    pub preferences: Vec<f64>,
    pub state_prior: Categorical,
    pub policies: PolicySet,
    /// Optional prior over states `P(s)` (nonnegative weights), used by the
    /// state-utility and KL-control objectives and by diagnostics.
    pub prior_states: Option<Vec<f64>>,
    pub labels: Labels,
}

impl GenerativeModel {
    /// Every invariant violation; empty means the model is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (s, o, u) = (self.num_states, self.num_outcomes, self.num_actions);
        if s == 0 {
            out.push(Violation::new("num_states", "must be positive"));
        }
        if o == 0 {
            out.push(Violation::new("num_outcomes", "must be positive"));
        }
        if u == 0 {
            out.push(Violation::new("num_actions", "must be positive"));
        }
        if self.horizon == 0 {
            out.push(Violation::new("horizon", "must be positive"));
        }

        check_stochastic("A", &self.likelihood, o, s, &mut out);
        if self.transitions.len() != u {
            out.push(Violation::new(
                "B",
                format!(
                    "expected {u} transition matrices, found {}",
                    self.transitions.len()
                ),
            ));
        }
        for (k, b) in self.transitions.iter().enumerate() {
            check_stochastic(&format!("B[{k}]"), b, s, s, &mut out);
        }

        if self.preferences.len() != o {
            out.push(Violation::new(
                "C",
                format!("length {} != num_outcomes {o}", self.preferences.len()),
            ));
        }
        for (i, c) in self.preferences.iter().enumerate() {
            if !c.is_finite() {
                out.push(Violation::new(format!("C[{i}]"), format!("{c} is not finite")));
            }
        }
        if self.state_prior.len() != s {
            out.push(Violation::new(
                "D",
                format!("length {} != num_states {s}", self.state_prior.len()),
            ));
        }

        for (i, p) in self.policies.iter().enumerate() {
            if p.0.len() + 1 != self.horizon {
                out.push(Violation::new(
                    format!("policies[{i}]"),
                    format!(
                        "length {} != horizon - 1 = {}",
                        p.0.len(),
                        self.horizon.saturating_sub(1)
                    ),
                ));
            }
            for (k, a) in p.0.iter().enumerate() {
                if *a >= u {
                    out.push(Violation::new(
                        format!("policies[{i}][{k}]"),
                        format!("action index {a} >= num_actions {u}"),
                    ));
                }
            }
        }

        if let Some(prior) = &self.prior_states {
            if prior.len() != s {
                out.push(Violation::new(
                    "prior_states",
                    format!("length {} != num_states {s}", prior.len()),
                ));
            }
            if prior.iter().any(|w| !w.is_finite() || *w < 0.0) {
                out.push(Violation::new(
                    "prior_states",
                    "weights must be finite and nonnegative",
                ));
            } else if prior.iter().sum::<f64>() <= 0.0 {
                out.push(Violation::new("prior_states", "weights sum to zero"));
            }
        }

        let label_checks = [
            ("state_labels", &self.labels.states, s),
            ("outcome_labels", &self.labels.outcomes, o),
            ("action_labels", &self.labels.actions, u),
        ];
        for (name, labels, n) in label_checks {
            if let Some(l) = labels {
                if l.len() != n {
                    out.push(Violation::new(
                        name,
                        format!("{} labels for {n} entries", l.len()),
                    ));
                }
            }
        }
        out
    }

    /// Returns `self` if valid, otherwise every violation as an error.
    pub fn validated(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidModel(v))
        }
    }

    pub fn transition(&self, action: usize) -> &Matrix {
        &self.transitions[action]
    }

    /// `P(o | s)` for one state as a distribution over outcomes.
    pub fn likelihood_column(&self, state: usize) -> Categorical {
        Categorical::new(self.likelihood.column(state))
            .expect("validated model has stochastic likelihood columns")
    }

    pub fn action_label(&self, a: usize) -> String {
        label_or_index(&self.labels.actions, a)
    }

    pub fn outcome_label(&self, o: usize) -> String {
        label_or_index(&self.labels.outcomes, o)
    }

    pub fn state_label(&self, s: usize) -> String {
        label_or_index(&self.labels.states, s)
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("num_states".into(), self.num_states.into());
        m.insert("num_outcomes".into(), self.num_outcomes.into());
        m.insert("num_actions".into(), self.num_actions.into());
        m.insert("horizon".into(), self.horizon.into());
        m.insert(
            "A".into(),
            serde_json::to_value(&self.likelihood).expect("matrix"),
        );
        m.insert(
            "B".into(),
            serde_json::to_value(&self.transitions).expect("matrices"),
        );
        m.insert(
            "C".into(),
            serde_json::to_value(&self.preferences).expect("vector"),
        );
        m.insert(
            "D".into(),
            serde_json::to_value(&self.state_prior).expect("vector"),
        );
        m.insert(
            "policies".into(),
            serde_json::to_value(&self.policies).expect("policies"),
        );
        if let Some(p) = &self.prior_states {
            m.insert("prior_states".into(), serde_json::to_value(p).expect("vector"));
        }
        if let Some(l) = &self.labels.states {
            m.insert("state_labels".into(), l.clone().into());
        }
        if let Some(l) = &self.labels.outcomes {
            m.insert("outcome_labels".into(), l.clone().into());
        }
        if let Some(l) = &self.labels.actions {
            m.insert("action_labels".into(), l.clone().into());
        }
        Value::Object(m)
    }

    /// Parses the key-value model document; structural problems are reported
    /// as schema errors, invariant problems as [`Error::InvalidModel`].
    pub fn from_json(doc: &Value) -> Result<Self> {
        let obj = doc
            .as_object()
            .ok_or_else(|| schema("<root>", "expected an object"))?;

        let num_states = get_usize(obj, "num_states")?;
        let num_outcomes = get_usize(obj, "num_outcomes")?;
        let num_actions = get_usize(obj, "num_actions")?;
        let horizon = get_usize(obj, "horizon")?;

        let a = get_prob_matrix(required(obj, "A")?, "A")?;
        let b_val = required(obj, "B")?;
        let b_list = b_val
            .as_array()
            .ok_or_else(|| schema("B", "expected a list of matrices"))?;
        let transitions = b_list
            .iter()
            .enumerate()
            .map(|(k, m)| get_prob_matrix(m, &format!("B[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let c = get_reals(required(obj, "C")?, "C")?;
        let d = get_reals(required(obj, "D")?, "D")?;
        if let Some((i, v)) = d.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(schema(&format!("D[{i}]"), &format!("negative probability {v}")));
        }
        let state_prior = Categorical::new(d).map_err(|e| schema("D", &e.to_string()))?;

        let pol_val = required(obj, "policies")?;
        let pol_list = pol_val
            .as_array()
            .ok_or_else(|| schema("policies", "expected a list of integer lists"))?;
        let mut policies = Vec::with_capacity(pol_list.len());
        for (i, p) in pol_list.iter().enumerate() {
            let field = format!("policies[{i}]");
            let arr = p
                .as_array()
                .ok_or_else(|| schema(&field, "expected a list of integers"))?;
            let actions = arr
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    a.as_u64()
                        .map(|v| v as usize)
                        .ok_or_else(|| schema(&format!("{field}[{k}]"), "expected a nonnegative integer"))
                })
                .collect::<Result<Vec<_>>>()?;
            policies.push(Policy(actions));
        }
        let policies = PolicySet::new(policies).map_err(|e| schema("policies", &e.to_string()))?;

        let prior_states = match obj.get("prior_states") {
            None | Some(Value::Null) => None,
            Some(v) => {
                let w = get_reals(v, "prior_states")?;
                if let Some((i, x)) = w.iter().enumerate().find(|(_, x)| **x < 0.0) {
                    return Err(schema(
                        &format!("prior_states[{i}]"),
                        &format!("negative weight {x}"),
                    ));
                }
                Some(w)
            }
        };

        let labels = Labels {
            states: get_labels(obj, "state_labels")?,
            outcomes: get_labels(obj, "outcome_labels")?,
            actions: get_labels(obj, "action_labels")?,
        };

        GenerativeModel {
            num_states,
            num_outcomes,
            num_actions,
            horizon,
            likelihood: a,
            transitions,
            preferences: c,
            state_prior,
            policies,
            prior_states,
            labels,
        }
        .validated()
    }
}

fn label_or_index(labels: &Option<Vec<String>>, i: usize) -> String {
    labels
        .as_ref()
        .and_then(|l| l.get(i).cloned())
        .unwrap_or_else(|| i.to_string())
}

fn check_stochastic(name: &str, m: &Matrix, rows: usize, cols: usize, out: &mut Vec<Violation>) {
    if m.rows() != rows || m.cols() != cols {
        out.push(Violation::new(
            name,
            format!("shape {}x{}, expected {rows}x{cols}", m.rows(), m.cols()),
        ));
        return;
    }
    for c in 0..cols {
        let col = m.column(c);
        if col.iter().any(|p| !p.is_finite() || *p < 0.0) {
            out.push(Violation::new(
                format!("{name} column {c}"),
                "entries must be finite and nonnegative",
            ));
            continue;
        }
        let sum: f64 = col.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            out.push(Violation::new(
                format!("{name} column {c}"),
                format!("sums to {sum}, expected 1"),
            ));
        }
    }
}

fn schema(field: &str, reason: &str) -> Error {
    Error::Schema {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| schema(key, "missing required key"))
}

fn get_usize(obj: &Map<String, Value>, key: &str) -> Result<usize> {
    required(obj, key)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| schema(key, "expected a nonnegative integer"))
}

fn get_reals(v: &Value, field: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| schema(field, "expected a list of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .ok_or_else(|| schema(&format!("{field}[{i}]"), "expected a number"))
        })
        .collect()
}

fn get_prob_matrix(v: &Value, field: &str) -> Result<Matrix> {
    let rows = v
        .as_array()
        .ok_or_else(|| schema(field, "expected a list of rows"))?;
    let mut out = Vec::with_capacity(rows.len());
    let mut width = None;
    for (r, row) in rows.iter().enumerate() {
        let vals = get_reals(row, &format!("{field}[{r}]"))?;
        if let Some((c, p)) = vals.iter().enumerate().find(|(_, p)| **p < 0.0) {
            return Err(schema(
                &format!("{field}[{r}][{c}]"),
                &format!("negative probability {p}"),
            ));
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(schema(
                    &format!("{field}[{r}]"),
                    &format!("row has {} entries, expected {w}", vals.len()),
                ))
            }
            _ => {}
        }
        out.push(vals);
    }
    Ok(Matrix::from_rows(out))
}

fn get_labels(obj: &Map<String, Value>, key: &str) -> Result<Option<Vec<String>>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| schema(&format!("{key}[{i}]"), "expected a string"))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Some(_) => Err(schema(key, "expected a list of strings")),
    }
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<GenerativeModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| schema("<document>", &e.to_string()))?;
    GenerativeModel::from_json(&doc)
}

pub fn save_spec(model: &GenerativeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text =
        serde_json::to_string_pretty(&model.to_json()).map_err(|e| Error::Serialization(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tmaze::build_tmaze_model;

    #[test]
    fn tmaze_model_is_valid() {
        assert!(build_tmaze_model().validate().is_empty());
    }

    #[test]
    fn short_likelihood_column_is_one_violation() {
        let mut m = build_tmaze_model();
        m.likelihood.set(0, 0, 0.9);
        let v = m.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].location, "A column 0");
    }

    #[test]
    fn out_of_range_action_is_one_violation() {
        let mut m = build_tmaze_model();
        let mut policies: Vec<Policy> = m.policies.iter().cloned().collect();
        policies[3] = Policy(vec![0, 4]);
        m.policies = PolicySet::new(policies).unwrap();
        let v = m.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].location, "policies[3][1]");
    }

    #[test]
    fn wrong_policy_length_and_bad_prior_states() {
        let mut m = build_tmaze_model();
        m.horizon = 4;
        m.prior_states = Some(vec![0.0; 3]);
        let v = m.validate();
        assert_eq!(
            v.iter().filter(|v| v.location.starts_with("policies")).count(),
            10
        );
        assert_eq!(v.iter().filter(|v| v.location == "prior_states").count(), 2);
    }

    #[test]
    fn policy_set_rejects_duplicates_and_empty() {
        assert!(PolicySet::new(vec![]).is_err());
        assert!(PolicySet::new(vec![Policy(vec![1]), Policy(vec![1])]).is_err());
    }

    #[test]
    fn negative_probability_names_entry() {
        let mut doc = build_tmaze_model().to_json();
        doc["A"][2][3] = serde_json::json!(-0.1);
        match GenerativeModel::from_json(&doc) {
            Err(Error::Schema { field, reason }) => {
                assert_eq!(field, "A[2][3]");
                assert!(reason.contains("negative"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_key_names_field() {
        let mut doc = build_tmaze_model().to_json();
        doc.as_object_mut().unwrap().remove("policies");
        match GenerativeModel::from_json(&doc) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "policies"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn invariant_violation_on_load_delegates_to_validate() {
        let mut doc = build_tmaze_model().to_json();
        doc["B"][1][0][0] = serde_json::json!(0.5);
        assert!(matches!(
            GenerativeModel::from_json(&doc),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn matrix_products() {
        let m = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0, 11.0]);
        assert_eq!(m.tmul_vec(&[1.0, 0.0, 1.0]), vec![6.0, 8.0]);
        assert_eq!(m.column(1), vec![2.0, 4.0, 6.0]);
        assert_eq!(Matrix::from_columns(&[m.column(0), m.column(1)]), m);
    }
}
