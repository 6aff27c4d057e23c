//! Credit-assignment measures on an exactly enumerated trajectory
//! distribution, and a checker that evaluates both sides of each identity
//! relating them.
//!
//! Per-pair return divergences are computed from [`ReturnIndex`]
//! distributions. Every multivariate quantity is computed from a single
//! [`CanonicalJoint`] built once per analysis, whose variables are named
//! `s{h}`, `a{h}`, `tau{h}`, `r{h}`, `z{h}` with `h` counted from 1.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    enumerate_trajectories, occupancy, rollout_return_distribution, Occupancy, ReturnDist,
    ReturnIndex, TrajectoryTable,
};
use crate::error::{Error, Result};
use crate::info::{pairwise_sum, AtomQuantizer, JointTable, JointTableBuilder, Nats};
use crate::mdp::{Mdp, PolicySet, TabularPolicy};

pub fn s_var(h: usize) -> String {
    format!("s{}", h + 1)
}
pub fn a_var(h: usize) -> String {
    format!("a{}", h + 1)
}
pub fn tau_var(h: usize) -> String {
    format!("tau{}", h + 1)
}
pub fn r_var(h: usize) -> String {
    format!("r{}", h + 1)
}
pub fn z_var(h: usize) -> String {
    format!("z{}", h + 1)
}

fn names(f: fn(usize) -> String, range: impl IntoIterator<Item = usize>) -> Vec<String> {
    range.into_iter().map(f).collect()
}

/// Joint distribution of states, actions, step pairs, rewards and returns,
/// with real values quantized to merged atoms per variable.
#[derive(Debug, Clone)]
pub struct CanonicalJoint {
    pub horizon: usize,
    pub num_actions: usize,
    table: JointTable,
    returns: Vec<AtomQuantizer>,
    rewards: Vec<AtomQuantizer>,
}

impl CanonicalJoint {
    pub fn from_table(t: &TrajectoryTable, merge_tol: f64) -> Result<Self> {
        let h_len = t.horizon;
        let fit = |pick: fn(&crate::engine::TrajectoryRow<'_>, usize) -> f64, h: usize| {
            let weighted: Vec<(f64, f64)> = t.rows().map(|r| (pick(&r, h), r.prob)).collect();
            AtomQuantizer::fit(&weighted, merge_tol)
        };
        let returns: Vec<_> = (0..h_len).map(|h| fit(|r, h| r.returns[h], h)).collect();
        let rewards: Vec<_> = (0..h_len).map(|h| fit(|r, h| r.rewards[h], h)).collect();

        let mut vars = Vec::with_capacity(5 * h_len);
        for f in [s_var, a_var, tau_var, r_var, z_var] {
            vars.extend(names(f, 0..h_len));
        }
        let mut b = JointTableBuilder::new(vars);
        let mut outcome = vec![0u32; 5 * h_len];
        let atom = |q: &AtomQuantizer, v: f64| q.index_of(v).expect("value was fitted") as u32;
        for r in t.rows() {
            for h in 0..h_len {
                let (s, a) = (r.states[h], r.actions[h]);
                outcome[h] = s;
                outcome[h_len + h] = a;
                outcome[2 * h_len + h] = s * t.num_actions as u32 + a;
                outcome[3 * h_len + h] = atom(&rewards[h], r.rewards[h]);
                outcome[4 * h_len + h] = atom(&returns[h], r.returns[h]);
            }
            b.push(&outcome, r.prob);
        }
        Ok(CanonicalJoint {
            horizon: h_len,
            num_actions: t.num_actions,
            table: b.build()?,
            returns,
            rewards,
        })
    }

    pub fn table(&self) -> &JointTable {
        &self.table
    }

    /// Merged atom values of `Z_h`.
    pub fn return_atoms(&self, h: usize) -> &[f64] {
        self.returns[h].centers()
    }

    pub fn reward_atoms(&self, h: usize) -> &[f64] {
        self.rewards[h].centers()
    }

    fn check_step(&self, h: usize) -> Result<()> {
        if h < self.horizon {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "timestep {} outside 1..={}",
                h + 1,
                self.horizon
            )))
        }
    }
}

/// Everything derived from one exact enumeration under a fixed policy.
#[derive(Debug)]
pub struct Analysis {
    mdp: Mdp,
    policy: TabularPolicy,
    table: TrajectoryTable,
    returns: ReturnIndex,
    occupancy: Occupancy,
    merge_tol: f64,
    joint: OnceLock<CanonicalJoint>,
}

impl Analysis {
    pub fn new(m: &Mdp, pi: &TabularPolicy, budget: u64, merge_tol: f64) -> Result<Self> {
        let table = enumerate_trajectories(m, pi, budget)?;
        let returns = ReturnIndex::build(&table, merge_tol);
        let occupancy = occupancy(&table);
        Ok(Analysis {
            mdp: m.clone(),
            policy: pi.clone(),
            table,
            returns,
            occupancy,
            merge_tol,
            joint: OnceLock::new(),
        })
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn policy(&self) -> &TabularPolicy {
        &self.policy
    }

    pub fn table(&self) -> &TrajectoryTable {
        &self.table
    }

    pub fn returns(&self) -> &ReturnIndex {
        &self.returns
    }

    pub fn occupancy(&self) -> &Occupancy {
        &self.occupancy
    }

    pub fn merge_tol(&self) -> f64 {
        self.merge_tol
    }

    /// The canonical joint table, built on first use.
    pub fn joint(&self) -> Result<&CanonicalJoint> {
        if let Some(j) = self.joint.get() {
            return Ok(j);
        }
        let j = CanonicalJoint::from_table(&self.table, self.merge_tol)?;
        Ok(self.joint.get_or_init(|| j))
    }
}

/// `KL(p(Z_h | s, a) ‖ p(Z_h | s))`. Pairs with `π_h(a|s) = 0` at a reachable
/// state are evaluated by a forced-action rollout and may be infinite.
pub fn pairwise_credit(an: &Analysis, h: usize, s: usize, a: usize) -> Result<Nats> {
    let unreachable = || Error::Unreachable(format!("(h={}, s={s}, a={a})", h + 1));
    if h >= an.mdp.horizon || s >= an.mdp.num_states || a >= an.mdp.num_actions {
        return Err(unreachable());
    }
    let state = an
        .returns
        .state_distribution(h, s, &an.policy)
        .ok_or_else(unreachable)?;
    match an.returns.get(h, s, a) {
        Some(pair) => pair.kl(&state),
        None => {
            let forced = rollout_return_distribution(&an.mdp, &an.policy, h, s, a, an.merge_tol)?;
            forced.kl(&state)
        }
    }
}

/// Pairwise credit of every reachable `(h, s, a)`.
pub fn pairwise_credit_table(an: &Analysis) -> Result<Vec<((usize, usize, usize), Nats)>> {
    an.returns
        .cells()
        .map(|(h, s, a)| Ok(((h, s, a), pairwise_credit(an, h, s, a)?)))
        .collect()
}

/// `I(A; Z | S)`: pairwise credit averaged under the normalized discounted
/// occupancy over `(h, s, a)`.
pub fn information_sparsity(an: &Analysis) -> Result<Nats> {
    let mut terms = Vec::new();
    for (h, s, a) in an.returns.cells() {
        let w = an.occupancy.normalized(h, s, a);
        if w <= 0.0 {
            continue;
        }
        let kl = pairwise_credit(an, h, s, a)?;
        if kl.is_infinite() {
            return Ok(Nats::INFINITY);
        }
        terms.push(w * kl.value());
    }
    Nats::from_raw("information sparsity", pairwise_sum(&terms))
}

/// Return distributions pooled over timesteps with occupancy weights, for
/// the time-free `(s, a)` reading of the per-pair divergence.
fn pooled_distributions(
    an: &Analysis,
) -> (
    BTreeMap<(usize, usize), (f64, ReturnDist)>,
    BTreeMap<usize, ReturnDist>,
) {
    let mut pair_parts: BTreeMap<(usize, usize), Vec<(f64, &ReturnDist)>> = BTreeMap::new();
    let mut state_parts: BTreeMap<usize, Vec<(f64, &ReturnDist)>> = BTreeMap::new();
    for (h, s, a) in an.returns.cells() {
        let w = an.occupancy.normalized(h, s, a);
        if w <= 0.0 {
            continue;
        }
        let d = an.returns.get(h, s, a).expect("listed cell");
        pair_parts.entry((s, a)).or_default().push((w, d));
        state_parts.entry(s).or_default().push((w, d));
    }
    let pooled = |parts: &[(f64, &ReturnDist)]| {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        (
            total,
            ReturnDist::mixture(parts.iter().map(|&(w, d)| (w / total, d)), an.merge_tol),
        )
    };
    let pairs = pair_parts
        .iter()
        .map(|(&k, parts)| (k, pooled(parts)))
        .collect();
    let states = state_parts
        .iter()
        .map(|(&k, parts)| (k, pooled(parts).1))
        .collect();
    (pairs, states)
}

/// Time-pooled pairwise credit `KL(p̄(Z | s, a) ‖ p̄(Z | s))` per visited `(s, a)`.
pub fn pooled_pairwise_credit(an: &Analysis) -> Result<Vec<((usize, usize), Nats)>> {
    let (pairs, states) = pooled_distributions(an);
    pairs
        .iter()
        .map(|(&(s, a), (_, d))| Ok(((s, a), d.kl(&states[&s])?)))
        .collect()
}

/// Time-pooled information sparsity.
pub fn pooled_information_sparsity(an: &Analysis) -> Result<Nats> {
    let (pairs, states) = pooled_distributions(an);
    let mut terms = Vec::new();
    for (&(s, _), (w, d)) in &pairs {
        terms.push(w * d.kl(&states[&s])?.value());
    }
    Nats::from_raw("information sparsity", pairwise_sum(&terms))
}

/// Outcome of classifying an MDP against an information-sparsity threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityClassification {
    pub is_sparse: bool,
    pub sup: Nats,
    pub argmax: usize,
    pub per_policy: Vec<Nats>,
    pub epsilon: f64,
}

/// Sparse iff the largest information sparsity over the policy set is at
/// most `epsilon`.
pub fn epsilon_sparsity_classify(
    m: &Mdp,
    policies: &PolicySet,
    epsilon: f64,
    budget: u64,
    merge_tol: f64,
) -> Result<SparsityClassification> {
    let per_policy = policies
        .members()
        .iter()
        .map(|pi| information_sparsity(&Analysis::new(m, pi, budget, merge_tol)?))
        .collect::<Result<Vec<_>>>()?;
    let (argmax, sup) =
        per_policy
            .iter()
            .copied()
            .enumerate()
            .fold((0, Nats::ZERO), |best, (i, v)| {
                if v > best.1 || i == 0 {
                    (i, v)
                } else {
                    best
                }
            });
    Ok(SparsityClassification {
        is_sparse: sup.value() <= epsilon,
        sup,
        argmax,
        per_policy,
        epsilon,
    })
}

/// `H(R_h | τ^{h-1})`
pub fn stepwise_reward_entropy(j: &CanonicalJoint, h: usize) -> Result<Nats> {
    j.check_step(h)?;
    j.table
        .conditional_entropy(&[r_var(h)], &names(tau_var, 0..h))
}

/// `I(Z_1; τ_h | τ^{-h})`: the information step `h` carries about the full
/// return once every other step is known.
pub fn leave_one_out_cmi(j: &CanonicalJoint, h: usize) -> Result<Nats> {
    j.check_step(h)?;
    let others = names(tau_var, (0..j.horizon).filter(|&k| k != h));
    j.table.conditional_mi(&[z_var(0)], &[tau_var(h)], &others)
}

/// `I(Z_1; τ_h | τ^{h-1})`
pub fn history_cmi(j: &CanonicalJoint, h: usize) -> Result<Nats> {
    j.check_step(h)?;
    j.table
        .conditional_mi(&[z_var(0)], &[tau_var(h)], &names(tau_var, 0..h))
}

/// Time-indexed hindsight distribution `P(a_h = a | s_h = s, Z_1 = z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HindsightTable {
    /// Keyed by `(h, s, index of the Z_1 atom)`.
    entries: BTreeMap<(usize, usize, usize), Vec<f64>>,
    return_atoms: Vec<f64>,
    merge_tol: f64,
}

impl HindsightTable {
    pub fn return_atoms(&self) -> &[f64] {
        &self.return_atoms
    }

    /// Action distribution for the return atom nearest `z` (within tolerance).
    pub fn get(&self, h: usize, s: usize, z: f64) -> Option<&[f64]> {
        let k = self
            .return_atoms
            .iter()
            .position(|&v| (v - z).abs() <= self.merge_tol)?;
        self.entries.get(&(h, s, k)).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize, f64), &[f64])> + '_ {
        self.entries
            .iter()
            .map(|(&(h, s, k), v)| ((h, s, self.return_atoms[k]), v.as_slice()))
    }
}

pub fn hindsight_table(j: &CanonicalJoint, merge_tol: f64) -> Result<HindsightTable> {
    let mut entries = BTreeMap::new();
    for h in 0..j.horizon {
        let sub = j.table.marginal(&[s_var(h), a_var(h), z_var(0)])?;
        let mut cond: HashMap<(u32, u32), Vec<f64>> = HashMap::new();
        for i in 0..sub.len() {
            let row = sub.row(i);
            cond.entry((row[0], row[2]))
                .or_insert_with(|| vec![0.0; j.num_actions])[row[1] as usize] += sub.mass()[i];
        }
        for ((s, z), mut probs) in cond {
            let total = pairwise_sum(&probs);
            probs.iter_mut().for_each(|p| *p /= total);
            entries.insert((h, s as usize, z as usize), probs);
        }
    }
    Ok(HindsightTable {
        entries,
        return_atoms: j.return_atoms(0).to_vec(),
        merge_tol,
    })
}

/// `E[log(h_h(a_h | s_h, Z_1) / π_h(a_h | s_h))]` under the trajectory
/// distribution.
pub fn hca_credit(
    j: &CanonicalJoint,
    ht: &HindsightTable,
    pi: &TabularPolicy,
    h: usize,
) -> Result<Nats> {
    j.check_step(h)?;
    let sub = j.table.marginal(&[s_var(h), a_var(h), z_var(0)])?;
    let mut terms = Vec::with_capacity(sub.len());
    for i in 0..sub.len() {
        let row = sub.row(i);
        let (s, a, z) = (row[0] as usize, row[1] as usize, row[2] as usize);
        let hind = ht.entries.get(&(h, s, z)).ok_or_else(|| {
            Error::InvalidParameter("hindsight table built from another joint".into())
        })?[a];
        terms.push(sub.mass()[i] * (hind / pi.prob(h, s, a)).ln());
    }
    Nats::from_raw("hindsight credit", pairwise_sum(&terms))
}

/// `I(τ_1, …, τ_H; Z_1, …, Z_H)`
pub fn return_sequence_mi(j: &CanonicalJoint) -> Result<Nats> {
    j.table
        .mutual_information(&names(tau_var, 0..j.horizon), &names(z_var, 0..j.horizon))
}

/// Directed information from trajectories to return sequences, by three routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectedCredit {
    /// `Σ_h I(Z_h; τ^h | Z_{h+1}^H)`: hindsight ordering of returns, forward
    /// prefix of the trajectory.
    pub directed: Nats,
    /// `Σ_h H(R_h | Z_{h+1}^H)`
    pub entropy_sum: Nats,
    /// The sum-of-`I(X^t; Y_t | Y^{t-1})` definition applied to both
    /// sequences in reversed time order.
    pub reversed_definition: Nats,
    /// The same definition in forward time order; in general not equal to
    /// the others.
    pub forward_definition: Nats,
}

pub fn directed_info_credit(j: &CanonicalJoint) -> Result<DirectedCredit> {
    let h_len = j.horizon;
    let mut directed = Vec::with_capacity(h_len);
    let mut entropy = Vec::with_capacity(h_len);
    for h in 0..h_len {
        let future = names(z_var, h + 1..h_len);
        directed.push(
            j.table
                .conditional_mi(&[z_var(h)], &names(tau_var, 0..=h), &future)?
                .value(),
        );
        entropy.push(j.table.conditional_entropy(&[r_var(h)], &future)?.value());
    }
    let rev_tau = names(tau_var, (0..h_len).rev());
    let rev_z = names(z_var, (0..h_len).rev());
    Ok(DirectedCredit {
        directed: Nats::from_raw("directed information", pairwise_sum(&directed))?,
        entropy_sum: Nats::from_raw("reward entropy sum", pairwise_sum(&entropy))?,
        reversed_definition: j.table.directed_information(&rev_tau, &rev_z)?,
        forward_definition: j
            .table
            .directed_information(&names(tau_var, 0..h_len), &names(z_var, 0..h_len))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    EqualWithinTol,
    Discrepant,
    NotApplicable,
}

/// Both sides of one claimed identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionVerdict {
    pub id: String,
    /// One-based timestep, when the identity is per step.
    pub h: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
    pub tolerance: f64,
    pub assumption_flags: Vec<String>,
    /// Whether the identity is expected to hold for this instance; only
    /// such verdicts count toward pass/fail.
    pub assumption_satisfied: bool,
    pub verdict: Verdict,
}

impl PropositionVerdict {
    pub fn new(
        id: &str,
        h: Option<usize>,
        lhs: f64,
        rhs: f64,
        tolerance: f64,
        flags: Vec<&str>,
        satisfied: bool,
    ) -> Self {
        let abs_diff = (lhs - rhs).abs();
        let verdict = if !lhs.is_finite() || !rhs.is_finite() {
            Verdict::NotApplicable
        } else if abs_diff <= tolerance {
            Verdict::EqualWithinTol
        } else {
            Verdict::Discrepant
        };
        PropositionVerdict {
            id: id.to_string(),
            h: h.map(|h| h + 1),
            lhs,
            rhs,
            abs_diff,
            tolerance,
            assumption_flags: flags.into_iter().map(String::from).collect(),
            assumption_satisfied: satisfied,
            verdict,
        }
    }

    /// True when an assumption-satisfied identity failed.
    pub fn is_failure(&self) -> bool {
        self.assumption_satisfied && self.verdict != Verdict::EqualWithinTol
    }
}

/// Number of random test functions in the occupancy-identity check.
pub const OCCUPANCY_TEST_FUNCTIONS: usize = 20;

/// Largest deviation between the normalized-occupancy expectation of `f` and
/// the discounted trajectory sum of `f` divided by `Σ_h γ^{h-1}`, over
/// `count` random functions `f(s, a)` drawn from `seed`.
pub fn occupancy_identity_gap(an: &Analysis, count: usize, seed: u64) -> f64 {
    let t = &an.table;
    let occ = &an.occupancy;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut powers = vec![1.0; t.horizon];
    for h in 1..t.horizon {
        powers[h] = powers[h - 1] * t.discount;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let f: Vec<Vec<f64>> = (0..t.num_states)
            .map(|_| {
                (0..t.num_actions)
                    .map(|_| rng.gen_range(-5.0..5.0))
                    .collect()
            })
            .collect();
        let lhs = occ.weighted_sum(|s, a| f[s][a]) / occ.normalizer;
        let per_row: Vec<f64> = t
            .rows()
            .map(|r| {
                let inner: Vec<f64> = (0..t.horizon)
                    .map(|h| powers[h] * f[r.states[h] as usize][r.actions[h] as usize])
                    .collect();
                r.prob * pairwise_sum(&inner)
            })
            .collect();
        let rhs = pairwise_sum(&per_row) / occ.normalizer;
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

/// `I(Z_1; S_1)`: the slack in the hindsight-ratio identity at the first step.
pub fn initial_state_information(j: &CanonicalJoint) -> Result<Nats> {
    j.table.mutual_information(&[z_var(0)], &[s_var(0)])
}

/// Evaluates both sides of every identity on the given instance.
pub fn check_propositions(
    m: &Mdp,
    pi: &TabularPolicy,
    tol: f64,
    budget: u64,
    merge_tol: f64,
) -> Result<Vec<PropositionVerdict>> {
    let an = Analysis::new(m, pi, budget, merge_tol)?;
    check_analysis(&an, tol)
}

pub fn check_analysis(an: &Analysis, tol: f64) -> Result<Vec<PropositionVerdict>> {
    let m = &an.mdp;
    let j = an.joint()?;
    let h_len = m.horizon;
    let action_independent = m.has_action_independent_transitions();
    // Dropping τ_{h+1..H} from the conditioning set needs the future to be
    // independent of step h given the past. Action independence alone does
    // not give that: s_{h+1} still carries information about s_h.
    let memoryless = m.has_state_action_independent_transitions();
    let mut out = Vec::new();

    for h in 0..h_len {
        let lhs = leave_one_out_cmi(j, h)?.value();
        let rhs = stepwise_reward_entropy(j, h)?.value();
        let mut flags = Vec::new();
        let last = h + 1 == h_len;
        if last {
            flags.push("h_equals_H");
        }
        if action_independent {
            flags.push("action_independent_transitions");
        }
        if memoryless {
            flags.push("state_action_independent_transitions");
        }
        let zero_discount = m.discount == 0.0 && h > 0;
        if zero_discount {
            flags.push("zero_discount");
        }
        let satisfied = (last || memoryless) && !zero_discount;
        if !satisfied {
            flags.push("diagnostic");
        }
        out.push(PropositionVerdict::new(
            "prop1",
            Some(h),
            lhs,
            rhs,
            tol,
            flags,
            satisfied,
        ));
    }

    let ht = hindsight_table(j, an.merge_tol)?;
    let start_info = initial_state_information(j)?.value();
    let mut history = Vec::with_capacity(h_len);
    for h in 0..h_len {
        let lhs = history_cmi(j, h)?.value();
        history.push(lhs);
        let rhs = hca_credit(j, &ht, &an.policy, h)?.value();
        let mut flags = Vec::new();
        if h_len > 1 {
            flags.push("factorization_assumed");
        }
        if start_info > tol {
            flags.push("initial_state_informative");
        }
        let satisfied = flags.is_empty();
        out.push(PropositionVerdict::new(
            "prop2",
            Some(h),
            lhs,
            rhs,
            tol,
            flags,
            satisfied,
        ));
    }
    let hz = j.table.entropy(&[z_var(0)])?.value();
    out.push(PropositionVerdict::new(
        "prop2_chain_rule",
        None,
        pairwise_sum(&history),
        hz,
        tol,
        vec![],
        true,
    ));

    let seq = return_sequence_mi(j)?.value();
    let dc = directed_info_credit(j)?;
    out.push(PropositionVerdict::new(
        "prop3",
        None,
        seq,
        dc.directed.value(),
        tol,
        vec![],
        true,
    ));
    out.push(PropositionVerdict::new(
        "prop4",
        None,
        dc.directed.value(),
        dc.entropy_sum.value(),
        tol,
        vec![],
        true,
    ));
    out.push(PropositionVerdict::new(
        "prop3_reversed_definition",
        None,
        dc.directed.value(),
        dc.reversed_definition.value(),
        tol,
        vec![],
        true,
    ));
    out.push(PropositionVerdict::new(
        "eq3_occupancy",
        None,
        occupancy_identity_gap(an, OCCUPANCY_TEST_FUNCTIONS, 0x0cc0),
        0.0,
        tol,
        vec!["max_gap_over_random_functions"],
        true,
    ));

    for h in 0..h_len {
        let future = names(z_var, h + 1..h_len);
        let lhs = j.table.conditional_entropy(&[z_var(h)], &future)?.value();
        let rhs = j.table.conditional_entropy(&[r_var(h)], &future)?.value();
        out.push(PropositionVerdict::new(
            "fact_sum_entropy",
            Some(h),
            lhs,
            rhs,
            tol,
            vec![],
            true,
        ));

        let prefix = names(tau_var, 0..=h);
        let lhs = j
            .table
            .conditional_mi(&[z_var(h)], &prefix, &future)?
            .value();
        let rhs = j
            .table
            .conditional_mi(&[r_var(h)], &prefix, &future)?
            .value();
        out.push(PropositionVerdict::new(
            "fact_sum_mi",
            Some(h),
            lhs,
            rhs,
            tol,
            vec![],
            true,
        ));
    }

    if h_len >= 2 {
        let (first, last) = (tau_var(0), tau_var(h_len - 1));
        let z = [z_var(0)];
        let forward = j.table.mutual_information(&z, std::slice::from_ref(&first))?.value()
            + j.table
                .conditional_mi(&z, std::slice::from_ref(&last), std::slice::from_ref(&first))?
                .value();
        let backward = j.table.mutual_information(&z, std::slice::from_ref(&last))?.value()
            + j.table.conditional_mi(&z, &[first], &[last])?.value();
        out.push(PropositionVerdict::new(
            "fact_order_invariance",
            None,
            forward,
            backward,
            tol,
            vec![],
            true,
        ));
    }
    Ok(out)
}

/// Largest gap between categorical-DP means and Bellman `Q` over all
/// `(h, s, a)`, judged against half the grid spacing.
pub fn categorical_mean_verdict(
    m: &Mdp,
    pi: &TabularPolicy,
    num_atoms: usize,
) -> Result<PropositionVerdict> {
    let cat = crate::engine::categorical_return_dp(m, pi, num_atoms)?;
    let vf = crate::engine::value_functions(m, pi)?;
    let mut worst: f64 = 0.0;
    for h in 0..m.horizon {
        for s in 0..m.num_states {
            for a in 0..m.num_actions {
                worst = worst.max((cat.mean(h, s, a) - vf.q[h][s][a]).abs());
            }
        }
    }
    Ok(PropositionVerdict::new(
        "categorical_mean",
        None,
        worst,
        0.0,
        cat.spacing() / 2.0,
        vec!["max_gap_over_pairs"],
        true,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{DEFAULT_BUDGET, DEFAULT_MERGE_TOL};
    use crate::mdp::{make_bandit, make_chain, make_gridworld, uniform_policy, GridCell};
    use std::f64::consts::LN_2;

    fn analyze(m: &Mdp, pi: &TabularPolicy) -> Analysis {
        Analysis::new(m, pi, DEFAULT_BUDGET, DEFAULT_MERGE_TOL).unwrap()
    }

    fn bandit() -> Analysis {
        let m = make_bandit(&[0.0, 1.0], 1).unwrap();
        analyze(&m, &uniform_policy(&m))
    }

    #[test]
    fn bandit_pairwise_and_sparsity() {
        let an = bandit();
        for a in 0..2 {
            assert!((pairwise_credit(&an, 0, 0, a).unwrap().value() - LN_2).abs() < 1e-12);
        }
        assert!((information_sparsity(&an).unwrap().value() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn constant_rewards_carry_no_credit() {
        let m = make_bandit(&[0.7, 0.7, 0.7], 3).unwrap();
        let an = analyze(&m, &uniform_policy(&m));
        for (cell, v) in pairwise_credit_table(&an).unwrap() {
            assert_eq!(v, Nats::ZERO, "{cell:?}");
        }
        let j = an.joint().unwrap();
        for h in 0..3 {
            assert_eq!(history_cmi(j, h).unwrap(), Nats::ZERO);
        }
        assert_eq!(return_sequence_mi(j).unwrap(), Nats::ZERO);
        let dc = directed_info_credit(j).unwrap();
        assert_eq!((dc.directed, dc.entropy_sum), (Nats::ZERO, Nats::ZERO));
    }

    #[test]
    fn single_action_has_zero_pairwise_credit() {
        let m = make_bandit(&[1.0], 2).unwrap();
        let an = analyze(&m, &uniform_policy(&m));
        assert_eq!(pairwise_credit(&an, 1, 0, 0).unwrap(), Nats::ZERO);
    }

    #[test]
    fn full_slip_grid_has_zero_sparsity() {
        let m = make_gridworld(2, 2, GridCell::new(1, 1), 3, 0.9, 1.0).unwrap();
        let an = analyze(&m, &uniform_policy(&m));
        assert!(information_sparsity(&an).unwrap().value() < 1e-12);
    }

    #[test]
    fn unreachable_pair_and_forced_support_escape() {
        let m = make_chain(3, 2, 1.0, 1.0).unwrap();
        let left = TabularPolicy::stationary(vec![vec![1.0, 0.0]; 3], 2);
        let an = analyze(&m, &left);
        assert!(matches!(
            pairwise_credit(&an, 0, 2, 0),
            Err(Error::Unreachable(_))
        ));
        // π(right | 0) = 0 yet state 0 is reachable; the forced rollout stays on support
        assert_eq!(pairwise_credit(&an, 0, 0, 1).unwrap(), Nats::ZERO);
        // at s=1 (h=2) the forced right action earns 1, outside p(Z | s) = δ_0
        let m2 = make_chain(2, 2, 1.0, 1.0).unwrap();
        let mut pi = TabularPolicy::stationary(vec![vec![1.0, 0.0]; 2], 2);
        pi.per_step[0][0] = vec![0.5, 0.5];
        let an2 = analyze(&m2, &pi);
        assert!(pairwise_credit(&an2, 1, 1, 1).unwrap().value() == 0.0);
        assert!(pairwise_credit(&an2, 1, 0, 1).unwrap().is_infinite());
    }

    #[test]
    fn epsilon_classification() {
        let m = make_bandit(&[0.0, 1.0], 1).unwrap();
        let set = PolicySet::uniform(&m);
        let c =
            epsilon_sparsity_classify(&m, &set, 0.1, DEFAULT_BUDGET, DEFAULT_MERGE_TOL).unwrap();
        assert!(!c.is_sparse);
        assert!((c.sup.value() - LN_2).abs() < 1e-12);

        let zero = make_chain(3, 3, 0.0, 0.9).unwrap();
        let greedy = TabularPolicy::stationary(vec![vec![0.0, 1.0]; 3], 3);
        let set = PolicySet::new(&zero, vec![uniform_policy(&zero), greedy]).unwrap();
        let c = epsilon_sparsity_classify(&zero, &set, 1e-6, DEFAULT_BUDGET, DEFAULT_MERGE_TOL)
            .unwrap();
        assert!(c.is_sparse);
        assert_eq!(c.sup, Nats::ZERO);
    }

    #[test]
    fn singleton_set_reduces_to_information_sparsity() {
        let m = make_chain(4, 4, 1.0, 0.9).unwrap();
        let set = PolicySet::uniform(&m);
        let c =
            epsilon_sparsity_classify(&m, &set, 0.0, DEFAULT_BUDGET, DEFAULT_MERGE_TOL).unwrap();
        let direct = information_sparsity(&analyze(&m, &uniform_policy(&m))).unwrap();
        assert_eq!(c.sup, direct);
        assert_eq!(c.argmax, 0);
    }

    #[test]
    fn bandit_joint_measures() {
        let an = bandit();
        let j = an.joint().unwrap();
        assert!((stepwise_reward_entropy(j, 0).unwrap().value() - LN_2).abs() < 1e-12);
        assert!((history_cmi(j, 0).unwrap().value() - LN_2).abs() < 1e-12);
        assert!((return_sequence_mi(j).unwrap().value() - LN_2).abs() < 1e-12);
        let dc = directed_info_credit(j).unwrap();
        assert!((dc.directed.value() - LN_2).abs() < 1e-12);
        assert!((dc.entropy_sum.value() - LN_2).abs() < 1e-12);
        let ht = hindsight_table(j, DEFAULT_MERGE_TOL).unwrap();
        assert_eq!(ht.get(0, 0, 1.0).unwrap(), &[0.0, 1.0]);
        assert_eq!(ht.get(0, 0, 0.0).unwrap(), &[1.0, 0.0]);
        let hca = hca_credit(j, &ht, an.policy(), 0).unwrap();
        assert!((hca.value() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn deterministic_everything_is_zero() {
        let m = make_chain(4, 3, 1.0, 0.9).unwrap();
        let right = TabularPolicy::stationary(vec![vec![0.0, 1.0]; 4], 3);
        let an = analyze(&m, &right);
        let j = an.joint().unwrap();
        for h in 0..3 {
            assert_eq!(stepwise_reward_entropy(j, h).unwrap(), Nats::ZERO);
            assert_eq!(leave_one_out_cmi(j, h).unwrap(), Nats::ZERO);
        }
        assert_eq!(return_sequence_mi(j).unwrap(), Nats::ZERO);
    }

    #[test]
    fn action_independent_hindsight_is_the_policy() {
        let m = make_gridworld(2, 2, GridCell::new(1, 1), 2, 1.0, 1.0).unwrap();
        let pi = crate::mdp::random_policy(&m, 3);
        let an = analyze(&m, &pi);
        let j = an.joint().unwrap();
        let ht = hindsight_table(j, DEFAULT_MERGE_TOL).unwrap();
        for ((h, s, _), probs) in ht.entries() {
            for (a, p) in probs.iter().enumerate() {
                assert!((p - pi.prob(h, s, a)).abs() < 1e-12);
            }
        }
        for h in 0..2 {
            assert!(hca_credit(j, &ht, &pi, h).unwrap().value() < 1e-12);
        }
    }

    #[test]
    fn timestep_out_of_range() {
        let an = bandit();
        let j = an.joint().unwrap();
        assert!(history_cmi(j, 1).is_err());
    }

    #[test]
    fn pooled_matches_per_step_at_horizon_one() {
        let an = bandit();
        assert_eq!(
            pooled_information_sparsity(&an).unwrap().value(),
            information_sparsity(&an).unwrap().value()
        );
        assert_eq!(pooled_pairwise_credit(&an).unwrap().len(), 2);
    }

    #[test]
    fn prop1_holds_at_every_step_with_memoryless_transitions() {
        use crate::mdp::{make_random, random_policy, RandomMdpConfig};
        for seed in 0..20 {
            let mut m = make_random(&RandomMdpConfig::small(seed), seed).unwrap();
            let row = m.transition[0][0].clone();
            m.transition
                .iter_mut()
                .flatten()
                .for_each(|r| *r = row.clone());
            let an = analyze(&m, &random_policy(&m, seed));
            let j = an.joint().unwrap();
            for h in 0..m.horizon {
                let gap = leave_one_out_cmi(j, h).unwrap().value()
                    - stepwise_reward_entropy(j, h).unwrap().value();
                assert!(gap.abs() < 1e-9, "seed {seed} h {h}: {gap}");
            }
        }
    }

    #[test]
    fn checker_on_bandit_passes() {
        let m = make_bandit(&[0.0, 1.0], 1).unwrap();
        let verdicts = check_propositions(
            &m,
            &uniform_policy(&m),
            1e-9,
            DEFAULT_BUDGET,
            DEFAULT_MERGE_TOL,
        )
        .unwrap();
        assert!(verdicts.iter().all(|v| !v.is_failure()), "{verdicts:#?}");
        assert!(verdicts
            .iter()
            .any(|v| v.id == "prop2" && v.assumption_satisfied));
    }
}
