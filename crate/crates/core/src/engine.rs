//! Exact trajectory enumeration and the quantities derived from it.
//!
//! Timesteps are zero-based throughout the API (`0..horizon`); exported
//! files number them from 1.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{pairwise_sum, Nats};
use crate::mdp::{ensure_policy, Mdp, TabularPolicy};

pub const DEFAULT_BUDGET: u64 = 10_000_000;
pub const DEFAULT_MERGE_TOL: f64 = 1e-9;
pub const DEFAULT_ATOMS: usize = 201;

/// Every positive-probability trajectory of `(β, π, T)`, stored row-major in
/// canonical order (lexicographic in `s_1, a_1, s_2, …`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    probs: Vec<f64>,
    states: Vec<u32>,
    actions: Vec<u32>,
    rewards: Vec<f64>,
    returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow<'a> {
    pub prob: f64,
    pub states: &'a [u32],
    pub actions: &'a [u32],
    pub rewards: &'a [f64],
    /// `returns[h] = Σ_{h' ≥ h} γ^{h'-h} rewards[h']`
    pub returns: &'a [f64],
}

impl TrajectoryTable {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn row(&self, i: usize) -> TrajectoryRow<'_> {
        let h = self.horizon;
        let span = i * h..(i + 1) * h;
        TrajectoryRow {
            prob: self.probs[i],
            states: &self.states[span.clone()],
            actions: &self.actions[span.clone()],
            rewards: &self.rewards[span.clone()],
            returns: &self.returns[span],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = TrajectoryRow<'_>> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total_probability(&self) -> f64 {
        pairwise_sum(&self.probs)
    }

    /// `P(s_h = s, a_h = a)`
    pub fn pair_probability(&self, h: usize, s: usize, a: usize) -> f64 {
        let parts: Vec<f64> = self
            .rows()
            .filter(|r| r.states[h] as usize == s && r.actions[h] as usize == a)
            .map(|r| r.prob)
            .collect();
        pairwise_sum(&parts)
    }

    /// `P(s_h = s)`
    pub fn state_probability(&self, h: usize, s: usize) -> f64 {
        let parts: Vec<f64> = self
            .rows()
            .filter(|r| r.states[h] as usize == s)
            .map(|r| r.prob)
            .collect();
        pairwise_sum(&parts)
    }

    /// CSV with columns `prob, s1, a1, …, sH, aH, r1..rH, z1..zH`; reals at 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let h = self.horizon;
        let mut header = vec!["prob".to_string()];
        for k in 1..=h {
            header.push(format!("s{k}"));
            header.push(format!("a{k}"));
        }
        header.extend((1..=h).map(|k| format!("r{k}")));
        header.extend((1..=h).map(|k| format!("z{k}")));
        writeln!(w, "{}", header.join(","))?;
        for r in self.rows() {
            let mut line = format!("{:.16e}", r.prob);
            for k in 0..h {
                line.push_str(&format!(",{},{}", r.states[k], r.actions[k]));
            }
            for v in r.rewards.iter().chain(r.returns) {
                line.push_str(&format!(",{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Exact number of positive-probability trajectories, saturating at `u128::MAX`.
pub fn count_trajectories(m: &Mdp, pi: &TabularPolicy) -> u128 {
    let (n_s, n_a) = (m.num_states, m.num_actions);
    let mut prefixes: Vec<u128> = m
        .initial_dist
        .iter()
        .map(|&p| u128::from(p > 0.0))
        .collect();
    for h in 0..m.horizon {
        let pairs: Vec<Vec<u128>> = (0..n_s)
            .map(|s| {
                (0..n_a)
                    .map(|a| {
                        if pi.prob(h, s, a) > 0.0 {
                            prefixes[s]
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect();
        if h + 1 == m.horizon {
            return pairs
                .iter()
                .flatten()
                .fold(0u128, |acc, &c| acc.saturating_add(c));
        }
        let mut next = vec![0u128; n_s];
        for s in 0..n_s {
            for a in 0..n_a {
                if pairs[s][a] == 0 {
                    continue;
                }
                for (s2, &p) in m.transition[s][a].iter().enumerate() {
                    if p > 0.0 {
                        next[s2] = next[s2].saturating_add(pairs[s][a]);
                    }
                }
            }
        }
        prefixes = next;
    }
    0
}

/// Enumerates every positive-probability trajectory. Refuses, without
/// materializing anything, when the exact count exceeds `budget`.
pub fn enumerate_trajectories(m: &Mdp, pi: &TabularPolicy, budget: u64) -> Result<TrajectoryTable> {
    ensure_policy(m, pi)?;
    let count = count_trajectories(m, pi);
    if count > u128::from(budget) {
        return Err(Error::BudgetExceeded { count, budget });
    }
    let n = count as usize;
    let h_len = m.horizon;
    let mut table = TrajectoryTable {
        horizon: h_len,
        num_states: m.num_states,
        num_actions: m.num_actions,
        discount: m.discount,
        probs: Vec::with_capacity(n),
        states: Vec::with_capacity(n * h_len),
        actions: Vec::with_capacity(n * h_len),
        rewards: Vec::with_capacity(n * h_len),
        returns: Vec::with_capacity(n * h_len),
    };
    let mut path_s = Vec::with_capacity(h_len);
    let mut path_a = Vec::with_capacity(h_len);
    for (s, &p) in m.initial_dist.iter().enumerate() {
        if p > 0.0 {
            descend(m, pi, 0, s, p, &mut path_s, &mut path_a, &mut table);
        }
    }
    debug_assert_eq!(table.len(), n);
    Ok(table)
}

#[allow(clippy::too_many_arguments)]
fn descend(
    m: &Mdp,
    pi: &TabularPolicy,
    h: usize,
    s: usize,
    prob: f64,
    path_s: &mut Vec<u32>,
    path_a: &mut Vec<u32>,
    out: &mut TrajectoryTable,
) {
    for a in 0..m.num_actions {
        let pa = pi.prob(h, s, a);
        if pa <= 0.0 {
            continue;
        }
        let p = prob * pa;
        path_s.push(s as u32);
        path_a.push(a as u32);
        if h + 1 == m.horizon {
            emit(m, p, path_s, path_a, out);
        } else {
            for (next, &t) in m.transition[s][a].iter().enumerate() {
                if t > 0.0 {
                    descend(m, pi, h + 1, next, p * t, path_s, path_a, out);
                }
            }
        }
        path_s.pop();
        path_a.pop();
    }
}

fn emit(m: &Mdp, prob: f64, path_s: &[u32], path_a: &[u32], out: &mut TrajectoryTable) {
    let h_len = m.horizon;
    out.probs.push(prob);
    out.states.extend_from_slice(path_s);
    out.actions.extend_from_slice(path_a);
    let base = out.rewards.len();
    out.rewards.extend(
        path_s
            .iter()
            .zip(path_a)
            .map(|(&s, &a)| m.reward(s as usize, a as usize)),
    );
    out.returns.resize(base + h_len, 0.0);
    let mut acc = 0.0;
    for k in (0..h_len).rev() {
        acc = out.rewards[base + k] + m.discount * acc;
        out.returns[base + k] = acc;
    }
}

/// Finite-support return distribution with atoms sorted by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnDist {
    atoms: Vec<(f64, f64)>,
    merge_tolerance: f64,
}

impl ReturnDist {
    /// Normalizes `weighted` and merges values whose sorted neighbours lie
    /// within `tol`; a merged atom sits at the mass-weighted mean.
    pub fn from_weighted(weighted: impl IntoIterator<Item = (f64, f64)>, tol: f64) -> Self {
        let mut pairs: Vec<(f64, f64)> = weighted.into_iter().filter(|p| p.1 > 0.0).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total = pairwise_sum(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let mut atoms = Vec::new();
        let mut i = 0;
        while i < pairs.len() {
            let (lo, mut hi) = (pairs[i].0, pairs[i].0);
            let mut mass = Vec::new();
            let mut moment = Vec::new();
            while i < pairs.len() && pairs[i].0 - hi <= tol {
                hi = pairs[i].0;
                mass.push(pairs[i].1);
                moment.push(pairs[i].0 * pairs[i].1);
                i += 1;
            }
            let w = pairwise_sum(&mass);
            let value = if hi > lo {
                (pairwise_sum(&moment) / w).clamp(lo, hi)
            } else {
                lo
            };
            atoms.push((value, w / total));
        }
        ReturnDist {
            atoms,
            merge_tolerance: tol,
        }
    }

    pub fn point(value: f64, tol: f64) -> Self {
        ReturnDist {
            atoms: vec![(value, 1.0)],
            merge_tolerance: tol,
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn merge_tolerance(&self) -> f64 {
        self.merge_tolerance
    }

    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.atoms.iter().map(|(v, p)| v * p).collect::<Vec<_>>())
    }

    /// Probability-weighted mixture of distributions, re-merged at `tol`.
    pub fn mixture<'a>(parts: impl IntoIterator<Item = (f64, &'a ReturnDist)>, tol: f64) -> Self {
        let weighted: Vec<(f64, f64)> = parts
            .into_iter()
            .flat_map(|(w, d)| d.atoms.iter().map(move |&(v, p)| (v, w * p)))
            .collect();
        ReturnDist::from_weighted(weighted, tol)
    }

    /// Atom of `self` within tolerance of `value`, if any.
    fn find(&self, value: f64) -> Option<usize> {
        let tol = self.merge_tolerance;
        let pos = self.atoms.partition_point(|a| a.0 < value);
        let near = |i: usize| (self.atoms[i].0 - value).abs() <= tol;
        match (
            pos < self.atoms.len() && near(pos),
            pos > 0 && near(pos - 1),
        ) {
            (true, true) => {
                if (self.atoms[pos].0 - value).abs() < (value - self.atoms[pos - 1].0).abs() {
                    Some(pos)
                } else {
                    Some(pos - 1)
                }
            }
            (true, false) => Some(pos),
            (false, true) => Some(pos - 1),
            (false, false) => None,
        }
    }

    /// `KL(self ‖ other)` after aligning atoms within the merge tolerance;
    /// `+inf` when `self` has an atom with no counterpart in `other`.
    pub fn kl(&self, other: &ReturnDist) -> Result<Nats> {
        let mut terms = Vec::with_capacity(self.atoms.len());
        for &(v, p) in &self.atoms {
            match other.find(v) {
                Some(j) => terms.push(p * (p / other.atoms[j].1).ln()),
                None => return Ok(Nats::INFINITY),
            }
        }
        Nats::from_raw("kl", pairwise_sum(&terms))
    }

    /// Wasserstein-1 distance `∫ |F - G|` on the real line.
    pub fn wasserstein1(&self, other: &ReturnDist) -> f64 {
        let mut points: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .copied()
            .chain(other.atoms.iter().map(|&(v, p)| (v, -p)))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut diff = 0.0;
        let mut area = Vec::with_capacity(points.len());
        for w in points.windows(2) {
            diff += w[0].1;
            area.push(diff.abs() * (w[1].0 - w[0].0));
        }
        pairwise_sum(&area)
    }
}

/// Exact conditional distribution of `returns[h]` given `(s_h, a_h) = (s, a)`.
pub fn return_distribution(
    t: &TrajectoryTable,
    h: usize,
    s: usize,
    a: usize,
    merge_tol: f64,
) -> Result<ReturnDist> {
    let weighted: Vec<(f64, f64)> = t
        .rows()
        .filter(|r| r.states[h] as usize == s && r.actions[h] as usize == a)
        .map(|r| (r.returns[h], r.prob))
        .collect();
    if weighted.is_empty() {
        return Err(Error::Unreachable(format!("(h={}, s={s}, a={a})", h + 1)));
    }
    Ok(ReturnDist::from_weighted(weighted, merge_tol))
}

/// `p(Z_h | s) = Σ_a π_h(a|s) p(Z_h | s, a)`
pub fn state_return_distribution(
    t: &TrajectoryTable,
    h: usize,
    s: usize,
    pi: &TabularPolicy,
    merge_tol: f64,
) -> Result<ReturnDist> {
    let parts = (0..t.num_actions)
        .filter(|&a| pi.prob(h, s, a) > 0.0)
        .map(|a| {
            Ok((
                pi.prob(h, s, a),
                return_distribution(t, h, s, a, merge_tol)?,
            ))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|_| Error::Unreachable(format!("(h={}, s={s})", h + 1)))?;
    if parts.is_empty() {
        return Err(Error::Unreachable(format!("(h={}, s={s})", h + 1)));
    }
    Ok(ReturnDist::mixture(
        parts.iter().map(|(w, d)| (*w, d)),
        merge_tol,
    ))
}

/// All conditional return distributions of a table, built in one pass.
#[derive(Debug, Clone)]
pub struct ReturnIndex {
    pair: BTreeMap<(usize, usize, usize), ReturnDist>,
    pair_mass: BTreeMap<(usize, usize, usize), f64>,
    merge_tol: f64,
}

impl ReturnIndex {
    pub fn build(t: &TrajectoryTable, merge_tol: f64) -> Self {
        // collapse bit-identical returns first; the number of distinct
        // returns per cell is far below the number of rows
        let mut acc: HashMap<(u32, u32, u32, u64), f64> = HashMap::new();
        let mut order: Vec<(u32, u32, u32, u64)> = Vec::new();
        for r in t.rows() {
            for h in 0..t.horizon {
                let key = (h as u32, r.states[h], r.actions[h], r.returns[h].to_bits());
                match acc.get_mut(&key) {
                    Some(p) => *p += r.prob,
                    None => {
                        acc.insert(key, r.prob);
                        order.push(key);
                    }
                }
            }
        }
        let mut cells: BTreeMap<(usize, usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
        for key in order {
            cells
                .entry((key.0 as usize, key.1 as usize, key.2 as usize))
                .or_default()
                .push((f64::from_bits(key.3), acc[&key]));
        }
        let mut pair = BTreeMap::new();
        let mut pair_mass = BTreeMap::new();
        for (cell, mut weighted) in cells {
            weighted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mass: Vec<f64> = weighted.iter().map(|w| w.1).collect();
            pair_mass.insert(cell, pairwise_sum(&mass));
            pair.insert(cell, ReturnDist::from_weighted(weighted, merge_tol));
        }
        ReturnIndex {
            pair,
            pair_mass,
            merge_tol,
        }
    }

    pub fn merge_tol(&self) -> f64 {
        self.merge_tol
    }

    pub fn get(&self, h: usize, s: usize, a: usize) -> Option<&ReturnDist> {
        self.pair.get(&(h, s, a))
    }

    /// `P(s_h = s, a_h = a)`, zero when unreachable.
    pub fn pair_mass(&self, h: usize, s: usize, a: usize) -> f64 {
        self.pair_mass.get(&(h, s, a)).copied().unwrap_or(0.0)
    }

    /// Reachable `(h, s, a)` cells in ascending order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.pair.keys().copied()
    }

    pub fn state_distribution(&self, h: usize, s: usize, pi: &TabularPolicy) -> Option<ReturnDist> {
        let parts: Vec<(f64, &ReturnDist)> = (0..pi.per_step[h][s].len())
            .filter(|&a| pi.prob(h, s, a) > 0.0)
            .filter_map(|a| self.get(h, s, a).map(|d| (pi.prob(h, s, a), d)))
            .collect();
        if parts.is_empty() {
            None
        } else {
            Some(ReturnDist::mixture(parts, self.merge_tol))
        }
    }
}

/// Distribution of the return from `(h, s, a)` onwards with the first action
/// forced, following `pi` afterwards. Defined even when `π_h(a|s) = 0`.
pub fn rollout_return_distribution(
    m: &Mdp,
    pi: &TabularPolicy,
    h: usize,
    s: usize,
    a: usize,
    merge_tol: f64,
) -> Result<ReturnDist> {
    ensure_policy(m, pi)?;
    if h >= m.horizon || s >= m.num_states || a >= m.num_actions {
        return Err(Error::InvalidParameter(format!(
            "(h={}, s={s}, a={a}) outside the MDP",
            h + 1
        )));
    }
    let mut memo = HashMap::new();
    let suffix = rollout_suffix(m, pi, h, s, a, &mut memo);
    Ok(ReturnDist::from_weighted(suffix.iter().copied(), merge_tol))
}

type SuffixMemo = HashMap<(usize, usize, usize), Vec<(f64, f64)>>;

fn rollout_suffix(
    m: &Mdp,
    pi: &TabularPolicy,
    h: usize,
    s: usize,
    a: usize,
    memo: &mut SuffixMemo,
) -> Vec<(f64, f64)> {
    if let Some(v) = memo.get(&(h, s, a)) {
        return v.clone();
    }
    let r = m.reward(s, a);
    let out = if h + 1 == m.horizon {
        vec![(r, 1.0)]
    } else {
        let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
        for (next, &t) in m.transition[s][a].iter().enumerate() {
            if t <= 0.0 {
                continue;
            }
            for a2 in 0..m.num_actions {
                let pa = pi.prob(h + 1, next, a2);
                if pa <= 0.0 {
                    continue;
                }
                for (v, p) in rollout_suffix(m, pi, h + 1, next, a2, memo) {
                    *acc.entry((r + m.discount * v).to_bits()).or_default() += t * pa * p;
                }
            }
        }
        acc.into_iter()
            .map(|(b, p)| (f64::from_bits(b), p))
            .collect()
    };
    memo.insert((h, s, a), out.clone());
    out
}

/// Discounted state-action visitation: `weights(h,s,a) = γ^h P(s_h=s, a_h=a)`
/// with zero-based `h`; total mass is `Σ_h γ^h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    weights: Vec<f64>,
    pub normalizer: f64,
}

impl Occupancy {
    #[inline]
    fn idx(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    pub fn weight(&self, h: usize, s: usize, a: usize) -> f64 {
        self.weights[self.idx(h, s, a)]
    }

    /// `weight / normalizer`: a probability distribution over `(h, s, a)`.
    pub fn normalized(&self, h: usize, s: usize, a: usize) -> f64 {
        self.weight(h, s, a) / self.normalizer
    }

    pub fn total(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// `Σ_{h,s,a} weights(h,s,a) f(s,a)`
    pub fn weighted_sum(&self, f: impl Fn(usize, usize) -> f64) -> f64 {
        let mut terms = Vec::with_capacity(self.weights.len());
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    let w = self.weight(h, s, a);
                    if w > 0.0 {
                        terms.push(w * f(s, a));
                    }
                }
            }
        }
        pairwise_sum(&terms)
    }
}

fn discount_powers(discount: f64, horizon: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity(horizon);
    let mut x = 1.0;
    for _ in 0..horizon {
        g.push(x);
        x *= discount;
    }
    g
}

pub fn occupancy(t: &TrajectoryTable) -> Occupancy {
    let powers = discount_powers(t.discount, t.horizon);
    let mut occ = Occupancy {
        horizon: t.horizon,
        num_states: t.num_states,
        num_actions: t.num_actions,
        weights: vec![0.0; t.horizon * t.num_states * t.num_actions],
        normalizer: pairwise_sum(&powers),
    };
    let mut mass: Vec<Vec<f64>> = vec![Vec::new(); occ.weights.len()];
    for r in t.rows() {
        for h in 0..t.horizon {
            let i = occ.idx(h, r.states[h] as usize, r.actions[h] as usize);
            mass[i].push(r.prob);
        }
    }
    for (i, parts) in mass.iter().enumerate() {
        let h = i / (t.num_states * t.num_actions);
        occ.weights[i] = powers[h] * pairwise_sum(parts);
    }
    occ
}

/// Occupancy by forward propagation of the state distribution; independent of
/// trajectory enumeration.
pub fn occupancy_forward(m: &Mdp, pi: &TabularPolicy) -> Result<Occupancy> {
    ensure_policy(m, pi)?;
    let powers = discount_powers(m.discount, m.horizon);
    let (n_s, n_a) = (m.num_states, m.num_actions);
    let mut occ = Occupancy {
        horizon: m.horizon,
        num_states: n_s,
        num_actions: n_a,
        weights: vec![0.0; m.horizon * n_s * n_a],
        normalizer: pairwise_sum(&powers),
    };
    let mut dist = m.initial_dist.clone();
    for h in 0..m.horizon {
        let mut next = vec![0.0; n_s];
        for s in 0..n_s {
            for a in 0..n_a {
                let p = dist[s] * pi.prob(h, s, a);
                let i = occ.idx(h, s, a);
                occ.weights[i] = powers[h] * p;
                for (s2, &t) in m.transition[s][a].iter().enumerate() {
                    next[s2] += p * t;
                }
            }
        }
        dist = next;
    }
    Ok(occ)
}

/// `v[h][s]` and `q[h][s][a]` for zero-based `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunctions {
    pub v: Vec<Vec<f64>>,
    pub q: Vec<Vec<Vec<f64>>>,
}

/// Finite-horizon backward induction with `V_{H+1} ≡ 0`.
pub fn value_functions(m: &Mdp, pi: &TabularPolicy) -> Result<ValueFunctions> {
    ensure_policy(m, pi)?;
    let (n_s, n_a, h_len) = (m.num_states, m.num_actions, m.horizon);
    let mut v = vec![vec![0.0; n_s]; h_len + 1];
    let mut q = vec![vec![vec![0.0; n_a]; n_s]; h_len];
    for h in (0..h_len).rev() {
        for s in 0..n_s {
            for a in 0..n_a {
                let cont: f64 = m.transition[s][a]
                    .iter()
                    .zip(&v[h + 1])
                    .map(|(t, vn)| t * vn)
                    .sum();
                q[h][s][a] = m.reward(s, a) + m.discount * cont;
            }
            v[h][s] = (0..n_a).map(|a| pi.prob(h, s, a) * q[h][s][a]).sum();
        }
    }
    v.truncate(h_len);
    Ok(ValueFunctions { v, q })
}

/// Return distributions on a fixed, evenly spaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalReturns {
    pub support: Vec<f64>,
    num_states: usize,
    num_actions: usize,
    probs: Vec<Vec<f64>>,
}

impl CategoricalReturns {
    pub fn spacing(&self) -> f64 {
        self.support[1] - self.support[0]
    }

    pub fn probs(&self, h: usize, s: usize, a: usize) -> &[f64] {
        &self.probs[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn distribution(&self, h: usize, s: usize, a: usize) -> ReturnDist {
        let atoms = self
            .support
            .iter()
            .zip(self.probs(h, s, a))
            .filter(|(_, &p)| p > 0.0)
            .map(|(&v, &p)| (v, p));
        ReturnDist::from_weighted(atoms, 0.0)
    }

    pub fn mean(&self, h: usize, s: usize, a: usize) -> f64 {
        let terms: Vec<f64> = self
            .support
            .iter()
            .zip(self.probs(h, s, a))
            .map(|(v, p)| v * p)
            .collect();
        pairwise_sum(&terms)
    }
}

/// `[V_min, V_max]` covering every partial return `Z_h`, `h = 1..H`.
pub fn categorical_bounds(m: &Mdp) -> (f64, f64) {
    let g = m.discount_mass();
    let (lo, hi) = (m.min_reward(), m.max_reward());
    let (mut vmin, mut vmax) = (lo.min(lo * g), hi.max(hi * g));
    if vmax - vmin < 1e-12 {
        vmin -= 0.5;
        vmax += 0.5;
    }
    (vmin, vmax)
}

/// Backward distributional recursion projected onto `num_atoms` evenly spaced
/// atoms by two-point linear interpolation.
pub fn categorical_return_dp(
    m: &Mdp,
    pi: &TabularPolicy,
    num_atoms: usize,
) -> Result<CategoricalReturns> {
    if num_atoms < 2 {
        return Err(Error::InvalidParameter(format!(
            "categorical grid needs at least 2 atoms, got {num_atoms}"
        )));
    }
    ensure_policy(m, pi)?;
    let (vmin, vmax) = categorical_bounds(m);
    let step = (vmax - vmin) / (num_atoms - 1) as f64;
    let support: Vec<f64> = (0..num_atoms).map(|j| vmin + step * j as f64).collect();
    let project = |value: f64, mass: f64, out: &mut [f64]| {
        if value <= vmin {
            out[0] += mass;
            return;
        }
        if value >= vmax {
            out[num_atoms - 1] += mass;
            return;
        }
        let b = (value - vmin) / step;
        let lower = (b.floor() as usize).min(num_atoms - 2);
        let frac = b - lower as f64;
        out[lower] += mass * (1.0 - frac);
        out[lower + 1] += mass * frac;
    };

    let (n_s, n_a, h_len) = (m.num_states, m.num_actions, m.horizon);
    let mut probs = vec![vec![0.0; num_atoms]; h_len * n_s * n_a];
    let cell = |h: usize, s: usize, a: usize| (h * n_s + s) * n_a + a;
    for s in 0..n_s {
        for a in 0..n_a {
            project(m.reward(s, a), 1.0, &mut probs[cell(h_len - 1, s, a)]);
        }
    }
    for h in (0..h_len.saturating_sub(1)).rev() {
        // successor state mixtures under π_{h+1}
        let successor: Vec<Vec<f64>> = (0..n_s)
            .map(|s2| {
                let mut mix = vec![0.0; num_atoms];
                for a2 in 0..n_a {
                    let w = pi.prob(h + 1, s2, a2);
                    if w > 0.0 {
                        for (m_j, p) in mix.iter_mut().zip(&probs[cell(h + 1, s2, a2)]) {
                            *m_j += w * p;
                        }
                    }
                }
                mix
            })
            .collect();
        for s in 0..n_s {
            for a in 0..n_a {
                let r = m.reward(s, a);
                let mut out = vec![0.0; num_atoms];
                for (s2, &t) in m.transition[s][a].iter().enumerate() {
                    if t <= 0.0 {
                        continue;
                    }
                    for (z, &p) in support.iter().zip(&successor[s2]) {
                        if p > 0.0 {
                            project(r + m.discount * z, t * p, &mut out);
                        }
                    }
                }
                probs[cell(h, s, a)] = out;
            }
        }
    }
    Ok(CategoricalReturns {
        support,
        num_states: n_s,
        num_actions: n_a,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_bandit, make_chain, uniform_policy};
    use std::f64::consts::LN_2;

    const TOL: f64 = DEFAULT_MERGE_TOL;

    fn bandit() -> (Mdp, TabularPolicy) {
        let m = make_bandit(&[0.0, 1.0], 1).unwrap();
        let pi = uniform_policy(&m);
        (m, pi)
    }

    #[test]
    fn chain_enumerates_eight_equiprobable_rows() {
        let m = make_chain(4, 3, 1.0, 0.9).unwrap();
        let t = enumerate_trajectories(&m, &uniform_policy(&m), DEFAULT_BUDGET).unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.rows().all(|r| r.prob == 0.125));
        // right, right, right is the only rewarded path: reward at step 3
        let best = t.rows().find(|r| r.actions == [1, 1, 1]).unwrap();
        assert_eq!(best.rewards, &[0.0, 0.0, 1.0]);
        assert!((best.returns[0] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn single_action_deterministic_mdp_has_one_row() {
        let m = Mdp::new(
            vec![vec![1.0], vec![2.0]],
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            4,
            vec![1.0, 0.0],
            1.0,
        )
        .unwrap();
        let t = enumerate_trajectories(&m, &uniform_policy(&m), 10).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.row(0).prob, 1.0);
        assert_eq!(t.row(0).returns, &[6.0, 5.0, 3.0, 2.0]);
    }

    #[test]
    fn budget_refusal_reports_count() {
        let m = make_chain(4, 3, 1.0, 0.9).unwrap();
        match enumerate_trajectories(&m, &uniform_policy(&m), 7) {
            Err(Error::BudgetExceeded { count, budget }) => assert_eq!((count, budget), (8, 7)),
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn bandit_return_distributions() {
        let (m, pi) = bandit();
        let t = enumerate_trajectories(&m, &pi, 10).unwrap();
        let arm1 = return_distribution(&t, 0, 0, 1, TOL).unwrap();
        assert_eq!(arm1.atoms(), &[(1.0, 1.0)]);
        let state = state_return_distribution(&t, 0, 0, &pi, TOL).unwrap();
        assert_eq!(state.atoms(), &[(0.0, 0.5), (1.0, 0.5)]);
        assert!((arm1.kl(&state).unwrap().value() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn all_zero_rewards_give_point_masses() {
        let m = make_chain(3, 3, 0.0, 0.9).unwrap();
        let t = enumerate_trajectories(&m, &uniform_policy(&m), 100).unwrap();
        let idx = ReturnIndex::build(&t, TOL);
        assert!(idx.cells().count() > 0);
        for (h, s, a) in idx.cells() {
            assert_eq!(idx.get(h, s, a).unwrap().atoms(), &[(0.0, 1.0)]);
        }
    }

    #[test]
    fn unreachable_pair_is_an_error() {
        let m = make_chain(4, 2, 1.0, 0.9).unwrap();
        let t = enumerate_trajectories(&m, &uniform_policy(&m), 100).unwrap();
        assert!(matches!(
            return_distribution(&t, 0, 3, 0, TOL),
            Err(Error::Unreachable(_))
        ));
        assert!(state_return_distribution(&t, 0, 2, &uniform_policy(&m), TOL).is_err());
    }

    #[test]
    fn single_action_mixture_is_the_action_distribution() {
        let m = make_bandit(&[2.0], 3).unwrap();
        let pi = uniform_policy(&m);
        let t = enumerate_trajectories(&m, &pi, 10).unwrap();
        for h in 0..3 {
            assert_eq!(
                state_return_distribution(&t, h, 0, &pi, TOL).unwrap(),
                return_distribution(&t, h, 0, 0, TOL).unwrap()
            );
        }
    }

    #[test]
    fn merging_uses_weighted_mean() {
        let d = ReturnDist::from_weighted([(0.3, 1.0), (0.3 + 4e-10, 3.0), (2.0, 4.0)], 1e-9);
        assert_eq!(d.atoms().len(), 2);
        assert!((d.atoms()[0].0 - 0.3 - 3e-10).abs() < 1e-15);
        assert_eq!(d.atoms()[0].1, 0.5);
    }

    #[test]
    fn kl_flags_support_escape() {
        let p = ReturnDist::from_weighted([(3.0, 1.0)], TOL);
        let q = ReturnDist::from_weighted([(0.0, 0.5), (1.0, 0.5)], TOL);
        assert!(p.kl(&q).unwrap().is_infinite());
    }

    #[test]
    fn wasserstein_of_shifted_point_masses() {
        let p = ReturnDist::point(1.0, TOL);
        let q = ReturnDist::point(3.5, TOL);
        assert!((p.wasserstein1(&q) - 2.5).abs() < 1e-15);
        let half = ReturnDist::from_weighted([(0.0, 0.5), (1.0, 0.5)], TOL);
        assert!((half.wasserstein1(&ReturnDist::point(0.0, TOL)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn occupancy_of_a_single_path() {
        // two states, one action, 0 -> 1 -> 1
        let m = Mdp::new(
            vec![vec![0.0], vec![1.0]],
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            2,
            vec![1.0, 0.0],
            1.0,
        )
        .unwrap();
        let t = enumerate_trajectories(&m, &uniform_policy(&m), 10).unwrap();
        let occ = occupancy(&t);
        assert_eq!(occ.weight(0, 0, 0), 1.0);
        assert_eq!(occ.weight(1, 1, 0), 1.0);
        assert_eq!(occ.normalizer, 2.0);
        assert_eq!(occ.total(), 2.0);
    }

    #[test]
    fn zero_discount_puts_weight_on_first_step() {
        let m = make_chain(3, 3, 1.0, 0.0).unwrap();
        let t = enumerate_trajectories(&m, &uniform_policy(&m), 100).unwrap();
        let occ = occupancy(&t);
        assert_eq!(occ.normalizer, 1.0);
        assert_eq!(occ.total(), 1.0);
        assert_eq!(occ.weight(1, 1, 0), 0.0);
    }

    #[test]
    fn bandit_values() {
        let (m, pi) = bandit();
        let vf = value_functions(&m, &pi).unwrap();
        assert_eq!(vf.v[0][0], 0.5);
        assert_eq!(vf.q[0][0][1], 1.0);
        let zero = make_chain(3, 2, 0.0, 0.9).unwrap();
        let vf = value_functions(&zero, &uniform_policy(&zero)).unwrap();
        assert!(vf.v.iter().flatten().all(|&v| v == 0.0));
        assert!(vf.q.iter().flatten().flatten().all(|&q| q == 0.0));
    }

    #[test]
    fn categorical_bandit_on_three_atom_grid() {
        let (m, pi) = bandit();
        let cat = categorical_return_dp(&m, &pi, 3).unwrap();
        assert_eq!(cat.support, vec![0.0, 0.5, 1.0]);
        assert_eq!(cat.probs(0, 0, 1), &[0.0, 0.0, 1.0]);
        assert_eq!(cat.probs(0, 0, 0), &[1.0, 0.0, 0.0]);
        assert!(categorical_return_dp(&m, &pi, 1).is_err());
    }

    #[test]
    fn categorical_exact_on_representable_single_path() {
        let m = Mdp::new(
            vec![vec![1.0], vec![2.0]],
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            3,
            vec![1.0, 0.0],
            1.0,
        )
        .unwrap();
        // bounds [1, 6] with 6 atoms: spacing 1, the return 1 + 2 + 1 = 4 is an atom
        let cat = categorical_return_dp(&m, &uniform_policy(&m), 6).unwrap();
        assert_eq!(cat.spacing(), 1.0);
        let d = cat.distribution(0, 0, 0);
        assert_eq!(d.atoms(), &[(4.0, 1.0)]);
    }

    #[test]
    fn forced_rollout_covers_zero_probability_actions() {
        let m = make_chain(3, 2, 1.0, 1.0).unwrap();
        let pi = TabularPolicy::stationary(vec![vec![1.0, 0.0]; 3], 2);
        let t = enumerate_trajectories(&m, &pi, 10).unwrap();
        assert!(return_distribution(&t, 0, 0, 1, TOL).is_err());
        // right from 0 reaches 1, then left: reward 0
        let forced = rollout_return_distribution(&m, &pi, 0, 0, 1, TOL).unwrap();
        assert_eq!(forced.atoms(), &[(0.0, 1.0)]);
        let forced = rollout_return_distribution(&m, &pi, 1, 1, 1, TOL).unwrap();
        assert_eq!(forced.atoms(), &[(1.0, 1.0)]);
    }

    #[test]
    fn csv_export_layout() {
        let (m, pi) = bandit();
        let t = enumerate_trajectories(&m, &pi, 10).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "prob,s1,a1,r1,z1");
        assert_eq!(
            lines[2],
            "5.0000000000000000e-1,0,1,1.0000000000000000e0,1.0000000000000000e0"
        );
    }
}
