//! Finite-horizon tabular MDPs, non-stationary behavior policies, environment
//! generators and reward-shaping transforms.
//!
//! Rewards are a deterministic function of `(state, action)`. Transition rows,
//! the initial distribution and every policy row are probability vectors that
//! must sum to one within [`PROB_TOL`].

mod generators;
mod io;
mod shaping;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use generators::{
    make_bandit, make_chain, make_gridworld, make_random, manhattan_metric, random_policy,
    GridCell, RandomMdpConfig, CHAIN_LEFT, CHAIN_RIGHT,
};
pub use io::{load_mdp, load_policy, save_mdp, MdpFile};
pub use shaping::{apply_shaping, ShapingTransform};

use crate::error::{Error, Result};

/// Tolerance on the total mass of every probability vector.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub horizon: usize,
    pub initial_dist: Vec<f64>,
    pub discount: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl Mdp {
    /// Validates and wraps the given tables.
    pub fn new(
        reward: Vec<Vec<f64>>,
        transition: Vec<Vec<Vec<f64>>>,
        horizon: usize,
        initial_dist: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let m = Mdp {
            num_states: reward.len(),
            num_actions: reward.first().map_or(0, Vec::len),
            reward,
            transition,
            horizon,
            initial_dist,
            discount,
            labels: None,
        };
        let violations = validate_mdp(&m);
        if violations.is_empty() {
            Ok(m)
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }

    /// `Σ_{h=1}^{H} γ^{h-1}`
    pub fn discount_mass(&self) -> f64 {
        discount_mass(self.discount, self.horizon)
    }

    /// True when every state's transition rows coincide across actions.
    pub fn has_action_independent_transitions(&self) -> bool {
        self.transition.iter().all(|rows| {
            rows.windows(2).all(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .all(|(x, y)| (x - y).abs() <= PROB_TOL)
            })
        })
    }

    /// True when the next-state distribution is the same for every `(s, a)`.
    pub fn has_state_action_independent_transitions(&self) -> bool {
        let first = &self.transition[0][0];
        self.transition.iter().flatten().all(|row| {
            row.iter()
                .zip(first)
                .all(|(x, y)| (x - y).abs() <= PROB_TOL)
        })
    }

    /// True when every state's reward is the same for all actions.
    pub fn has_action_independent_rewards(&self) -> bool {
        self.reward
            .iter()
            .all(|row| row.windows(2).all(|w| w[0] == w[1]))
    }

    pub fn min_reward(&self) -> f64 {
        self.reward
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_reward(&self) -> f64 {
        self.reward
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn discount_mass(discount: f64, horizon: usize) -> f64 {
    let mut total = 0.0;
    let mut g = 1.0;
    for _ in 0..horizon {
        total += g;
        g *= discount;
    }
    total
}

/// One broken invariant, addressed by a field path such as `transition[1][0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn check_prob_vector(path: &str, v: &[f64], expected_len: usize, out: &mut Vec<Violation>) {
    if v.len() != expected_len {
        out.push(Violation::new(
            path,
            format!("expected {expected_len} entries, found {}", v.len()),
        ));
        return;
    }
    for (i, &p) in v.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            out.push(Violation::new(
                format!("{path}[{i}]"),
                format!("probability {p} is negative or not finite"),
            ));
        }
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        out.push(Violation::new(path, format!("sums to {total}, expected 1")));
    }
}

/// Lists every violated invariant of `m`. An empty list means the MDP is well formed.
pub fn validate_mdp(m: &Mdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.num_states == 0 {
        out.push(Violation::new("num_states", "must be positive"));
    }
    if m.num_actions == 0 {
        out.push(Violation::new("num_actions", "must be positive"));
    }
    if m.horizon == 0 {
        out.push(Violation::new("horizon", "must be positive"));
    }
    if !(0.0..=1.0).contains(&m.discount) {
        out.push(Violation::new(
            "discount",
            format!("{} outside [0, 1]", m.discount),
        ));
    }
    check_prob_vector("initial_dist", &m.initial_dist, m.num_states, &mut out);

    if m.reward.len() != m.num_states {
        out.push(Violation::new(
            "reward",
            format!("expected {} rows, found {}", m.num_states, m.reward.len()),
        ));
    }
    for (s, row) in m.reward.iter().enumerate() {
        if row.len() != m.num_actions {
            out.push(Violation::new(
                format!("reward[{s}]"),
                format!("expected {} actions, found {}", m.num_actions, row.len()),
            ));
        }
        for (a, r) in row.iter().enumerate() {
            if !r.is_finite() {
                out.push(Violation::new(format!("reward[{s}][{a}]"), "not finite"));
            }
        }
    }

    if m.transition.len() != m.num_states {
        out.push(Violation::new(
            "transition",
            format!(
                "expected {} rows, found {}",
                m.num_states,
                m.transition.len()
            ),
        ));
    }
    for (s, rows) in m.transition.iter().enumerate() {
        if rows.len() != m.num_actions {
            out.push(Violation::new(
                format!("transition[{s}]"),
                format!("expected {} actions, found {}", m.num_actions, rows.len()),
            ));
        }
        for (a, row) in rows.iter().enumerate() {
            check_prob_vector(
                &format!("transition[{s}][{a}]"),
                row,
                m.num_states,
                &mut out,
            );
        }
    }

    if let Some(labels) = &m.labels {
        if labels.len() != m.num_states {
            out.push(Violation::new(
                "labels",
                format!("expected {} labels, found {}", m.num_states, labels.len()),
            ));
        }
    }
    out
}

/// Non-stationary policy: `per_step[h][s][a] = π_h(a | s)`, `h` zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub per_step: Vec<Vec<Vec<f64>>>,
}

impl TabularPolicy {
    pub fn new(per_step: Vec<Vec<Vec<f64>>>) -> Self {
        TabularPolicy { per_step }
    }

    /// The same state-to-action table at every timestep.
    pub fn stationary(table: Vec<Vec<f64>>, horizon: usize) -> Self {
        TabularPolicy {
            per_step: vec![table; horizon],
        }
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.per_step[h][s][a]
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        &self.per_step[h][s]
    }

    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }
}

/// Every row is uniform over the action set, at every timestep.
pub fn uniform_policy(m: &Mdp) -> TabularPolicy {
    let row = vec![1.0 / m.num_actions as f64; m.num_actions];
    TabularPolicy::stationary(vec![row; m.num_states], m.horizon)
}

/// Checks `pi` against the dimensions of `m` and the row-sum invariant.
pub fn validate_policy(m: &Mdp, pi: &TabularPolicy) -> Vec<Violation> {
    let mut out = Vec::new();
    if pi.per_step.len() != m.horizon {
        out.push(Violation::new(
            "policy",
            format!(
                "expected {} per-step tables, found {}",
                m.horizon,
                pi.per_step.len()
            ),
        ));
    }
    for (h, table) in pi.per_step.iter().enumerate() {
        if table.len() != m.num_states {
            out.push(Violation::new(
                format!("policy[{h}]"),
                format!("expected {} states, found {}", m.num_states, table.len()),
            ));
            continue;
        }
        for (s, row) in table.iter().enumerate() {
            check_prob_vector(&format!("policy[{h}][{s}]"), row, m.num_actions, &mut out);
        }
    }
    out
}

pub(crate) fn ensure_policy(m: &Mdp, pi: &TabularPolicy) -> Result<()> {
    let mut v = validate_mdp(m);
    v.extend(validate_policy(m, pi));
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v))
    }
}

/// The finite set of initial policies over which information sparsity is maximized.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    members: Vec<TabularPolicy>,
}

impl PolicySet {
    pub fn new(m: &Mdp, members: Vec<TabularPolicy>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParameter("policy set is empty".into()));
        }
        let mut violations = Vec::new();
        for (i, pi) in members.iter().enumerate() {
            violations.extend(validate_policy(m, pi).into_iter().map(|mut v| {
                v.path = format!("policy_set[{i}].{}", v.path);
                v
            }));
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(PolicySet { members })
    }

    pub fn uniform(m: &Mdp) -> Self {
        PolicySet {
            members: vec![uniform_policy(m)],
        }
    }

    pub fn members(&self) -> &[TabularPolicy] {
        &self.members
    }
}
