//! Information-theoretic kernel over finite discrete distributions.
//!
//! All quantities are in nats. Every reduction goes through [`pairwise_sum`]
//! in a deterministic order so that repeated evaluations agree bit for bit.
//! Multivariate quantities are evaluated on a [`JointTable`], where each
//! outcome is a tuple of small integer symbols, one per named variable.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative floating residue down to this value is clamped to zero; anything
/// lower is reported as [`Error::NegativeResidue`].
pub const CLAMP_GUARD: f64 = 1e-12;

/// Tolerance on the total mass of a joint table.
pub const MASS_TOL: f64 = 1e-9;

/// Tree summation: lower error growth than a running sum and independent of
/// the platform's iterator fusion.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// A non-negative information quantity in nats, possibly `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Nats(f64);

impl Nats {
    pub const ZERO: Nats = Nats(0.0);
    pub const INFINITY: Nats = Nats(f64::INFINITY);

    /// Applies the floating guard: values in `[-1e-12, 0)` clamp to zero.
    pub fn from_raw(quantity: &str, value: f64) -> Result<Nats> {
        if value.is_nan() {
            return Err(Error::NegativeResidue {
                quantity: quantity.to_string(),
                value,
            });
        }
        if value >= 0.0 {
            Ok(Nats(value))
        } else if value >= -CLAMP_GUARD {
            Ok(Nats(0.0))
        } else {
            Err(Error::NegativeResidue {
                quantity: quantity.to_string(),
                value,
            })
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn bits(self) -> f64 {
        self.0 / std::f64::consts::LN_2
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Nats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{:.6}", self.0)
        }
    }
}

fn plogp_terms(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    probs.filter(|&p| p > 0.0).map(|p| -p * p.ln()).collect()
}

/// `-Σ p ln p` of a probability vector; zero entries contribute nothing.
pub fn entropy(probs: &[f64]) -> Nats {
    let raw = pairwise_sum(&plogp_terms(probs.iter().copied()));
    Nats(raw.max(0.0))
}

/// `Σ p ln(p / q)` over the support of `p` on index-aligned vectors; `+inf`
/// when `p` puts mass where `q` has none.
pub fn kl(p: &[f64], q: &[f64]) -> Result<Nats> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut terms = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Ok(Nats::INFINITY);
        }
        terms.push(pi * (pi / qi).ln());
    }
    Nats::from_raw("kl", pairwise_sum(&terms))
}

/// Clusters real values whose sorted neighbours lie within `tol`
/// (single linkage). Each cluster is represented by its mass-weighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomQuantizer {
    /// Inclusive value range covered by each cluster, ascending.
    ranges: Vec<(f64, f64)>,
    centers: Vec<f64>,
    tol: f64,
}

impl AtomQuantizer {
    pub fn fit(weighted: &[(f64, f64)], tol: f64) -> Self {
        let mut sorted: Vec<(f64, f64)> = weighted.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut ranges = Vec::new();
        let mut centers = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let lo = sorted[i].0;
            let mut hi = lo;
            let mut mass = Vec::new();
            let mut moment = Vec::new();
            while i < sorted.len() && sorted[i].0 - hi <= tol {
                hi = sorted[i].0;
                mass.push(sorted[i].1);
                moment.push(sorted[i].0 * sorted[i].1);
                i += 1;
            }
            let w = pairwise_sum(&mass);
            let center = if w > 0.0 && hi > lo {
                (pairwise_sum(&moment) / w).clamp(lo, hi)
            } else {
                lo
            };
            ranges.push((lo, hi));
            centers.push(center);
        }
        AtomQuantizer {
            ranges,
            centers,
            tol,
        }
    }

    /// Index of the cluster containing `value`, or of a cluster within `tol`.
    pub fn index_of(&self, value: f64) -> Option<usize> {
        let pos = self.ranges.partition_point(|r| r.1 < value);
        if pos < self.ranges.len() && self.ranges[pos].0 - self.tol <= value {
            return Some(pos);
        }
        if pos > 0 && value - self.ranges[pos - 1].1 <= self.tol {
            return Some(pos - 1);
        }
        None
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Probability table over tuples of discrete symbols, one symbol per named
/// variable. Zero-mass outcomes are never stored and duplicate tuples are
/// merged on construction.
#[derive(Debug, Clone)]
pub struct JointTable {
    names: Vec<String>,
    cards: Vec<u32>,
    outcomes: Vec<u32>,
    mass: Vec<f64>,
}

/// Accumulates outcomes for a [`JointTable`].
#[derive(Debug, Clone)]
pub struct JointTableBuilder {
    names: Vec<String>,
    outcomes: Vec<u32>,
    mass: Vec<f64>,
}

impl JointTableBuilder {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        JointTableBuilder {
            names: names.into_iter().map(Into::into).collect(),
            outcomes: Vec::new(),
            mass: Vec::new(),
        }
    }

    pub fn push(&mut self, outcome: &[u32], mass: f64) {
        assert_eq!(outcome.len(), self.names.len(), "outcome arity");
        if mass > 0.0 {
            self.outcomes.extend_from_slice(outcome);
            self.mass.push(mass);
        }
    }

    pub fn build(self) -> Result<JointTable> {
        let width = self.names.len();
        for (i, name) in self.names.iter().enumerate() {
            if self.names[..i].contains(name) {
                return Err(Error::OverlappingVariables(name.clone()));
            }
        }
        let total = pairwise_sum(&self.mass);
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "joint table mass sums to {total}, expected 1"
            )));
        }
        let mut cards = vec![0u32; width];
        for row in self.outcomes.chunks(width.max(1)) {
            for (c, &v) in cards.iter_mut().zip(row) {
                *c = (*c).max(v + 1);
            }
        }
        let raw = JointTable {
            names: self.names,
            cards,
            outcomes: self.outcomes,
            mass: self.mass,
        };
        let all: Vec<usize> = (0..width).collect();
        let (ids, groups) = raw.group(&all);
        if groups.len() == raw.mass.len() {
            return Ok(raw);
        }
        // merge duplicate tuples, keeping first-appearance order
        let mut outcomes = vec![0u32; groups.len() * width];
        for (row, &g) in ids.iter().enumerate() {
            outcomes[g * width..(g + 1) * width].copy_from_slice(raw.row(row));
        }
        Ok(JointTable {
            names: raw.names,
            cards: raw.cards,
            outcomes,
            mass: groups,
        })
    }
}

impl JointTable {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        let w = self.names.len();
        &self.outcomes[i * w..(i + 1) * w]
    }

    pub fn var(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn vars<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.var(n.as_ref())).collect()
    }

    /// Assigns each row the id of its projected tuple on `vars` (ids in order
    /// of first appearance) and returns the per-id total mass.
    fn group(&self, vars: &[usize]) -> (Vec<usize>, Vec<f64>) {
        let n = self.mass.len();
        if vars.is_empty() {
            return (vec![0; n], vec![pairwise_sum(&self.mass)]);
        }
        let bits: u32 = vars
            .iter()
            .map(|&v| 32 - self.cards[v].max(1).saturating_sub(1).leading_zeros())
            .sum();
        let mut ids = Vec::with_capacity(n);
        let mut count = 0usize;
        if bits <= 128 {
            let mut index: HashMap<u128, usize> = HashMap::with_capacity(n);
            for i in 0..n {
                let row = self.row(i);
                let mut key = 0u128;
                for &v in vars {
                    let width = 32 - self.cards[v].max(1).saturating_sub(1).leading_zeros();
                    key = (key << width) | row[v] as u128;
                }
                let id = *index.entry(key).or_insert_with(|| {
                    count += 1;
                    count - 1
                });
                ids.push(id);
            }
        } else {
            // fold variables in one at a time; ids stay bounded by n
            let mut current: Vec<usize> = (0..n).map(|i| self.row(i)[vars[0]] as usize).collect();
            for &v in &vars[1..] {
                let mut index: HashMap<(usize, u32), usize> = HashMap::with_capacity(n);
                let mut next_count = 0usize;
                for (i, cur) in current.iter_mut().enumerate() {
                    let id = *index.entry((*cur, self.row(i)[v])).or_insert_with(|| {
                        next_count += 1;
                        next_count - 1
                    });
                    *cur = id;
                }
            }
            let mut index: HashMap<usize, usize> = HashMap::with_capacity(n);
            for cur in current {
                let id = *index.entry(cur).or_insert_with(|| {
                    count += 1;
                    count - 1
                });
                ids.push(id);
            }
        }
        let mut parts: Vec<Vec<f64>> = vec![Vec::new(); count];
        for (i, &g) in ids.iter().enumerate() {
            parts[g].push(self.mass[i]);
        }
        let groups = parts.iter().map(|p| pairwise_sum(p)).collect();
        (ids, groups)
    }

    fn entropy_raw(&self, vars: &[usize]) -> f64 {
        let (_, groups) = self.group(vars);
        pairwise_sum(&plogp_terms(groups.into_iter()))
    }

    fn disjoint(&self, sets: &[&[usize]]) -> Result<()> {
        let mut seen = vec![false; self.names.len()];
        for set in sets {
            for &v in *set {
                if seen[v] {
                    return Err(Error::OverlappingVariables(self.names[v].clone()));
                }
                seen[v] = true;
            }
        }
        Ok(())
    }

    /// Number of distinct projected outcomes with positive mass.
    pub fn support_size<S: AsRef<str>>(&self, vars: &[S]) -> Result<usize> {
        let idx = self.vars(vars)?;
        Ok(self.group(&idx).1.len())
    }

    /// Joint entropy of the named variables.
    pub fn entropy<S: AsRef<str>>(&self, vars: &[S]) -> Result<Nats> {
        let idx = self.vars(vars)?;
        Nats::from_raw("entropy", self.entropy_raw(&idx))
    }

    /// Probability vector of the projected outcomes (first-appearance order).
    pub fn marginal_probs<S: AsRef<str>>(&self, vars: &[S]) -> Result<Vec<f64>> {
        let idx = self.vars(vars)?;
        Ok(self.group(&idx).1)
    }

    /// The table restricted to `vars`.
    pub fn marginal<S: AsRef<str>>(&self, vars: &[S]) -> Result<JointTable> {
        let idx = self.vars(vars)?;
        let mut b = JointTableBuilder::new(idx.iter().map(|&v| self.names[v].clone()));
        let mut tuple = vec![0u32; idx.len()];
        for i in 0..self.len() {
            let row = self.row(i);
            for (t, &v) in tuple.iter_mut().zip(&idx) {
                *t = row[v];
            }
            b.push(&tuple, self.mass[i]);
        }
        b.build()
    }

    /// `H(target | given) = H(target, given) - H(given)`
    pub fn conditional_entropy<S: AsRef<str>>(&self, target: &[S], given: &[S]) -> Result<Nats> {
        let t = self.vars(target)?;
        let g = self.vars(given)?;
        let joint: Vec<usize> = t.iter().chain(&g).copied().collect();
        Nats::from_raw(
            "conditional entropy",
            self.entropy_raw(&joint) - self.entropy_raw(&g),
        )
    }

    pub fn mutual_information<S: AsRef<str>>(&self, x: &[S], y: &[S]) -> Result<Nats> {
        self.conditional_mi(x, y, &[] as &[&str])
    }

    /// `I(X; Y | Z) = H(X | Z) - H(X | Y, Z)`
    pub fn conditional_mi<S: AsRef<str>, T: AsRef<str>>(
        &self,
        x: &[S],
        y: &[S],
        z: &[T],
    ) -> Result<Nats> {
        let (xi, yi, zi) = (self.vars(x)?, self.vars(y)?, self.vars(z)?);
        self.disjoint(&[&xi, &yi, &zi])?;
        Nats::from_raw(
            "conditional mutual information",
            self.cmi_raw(&xi, &yi, &zi),
        )
    }

    fn cmi_raw(&self, x: &[usize], y: &[usize], z: &[usize]) -> f64 {
        let cat = |parts: &[&[usize]]| -> Vec<usize> { parts.concat() };
        let xz = self.entropy_raw(&cat(&[x, z]));
        let yz = self.entropy_raw(&cat(&[y, z]));
        let xyz = self.entropy_raw(&cat(&[x, y, z]));
        let zz = self.entropy_raw(z);
        // H(X|Z) - H(X|Y,Z)
        (xz - zz) - (xyz - yz)
    }

    /// `I(X; Y)` evaluated as `Σ p(x,y) ln(p(x,y) / (p(x) p(y)))`, i.e. the
    /// expected KL between `p(x|y)` and `p(x)`. Independent of the
    /// entropy-difference route used by [`Self::mutual_information`].
    pub fn mutual_information_kl<S: AsRef<str>>(&self, x: &[S], y: &[S]) -> Result<Nats> {
        let (xi, yi) = (self.vars(x)?, self.vars(y)?);
        self.disjoint(&[&xi, &yi])?;
        let xy: Vec<usize> = xi.iter().chain(&yi).copied().collect();
        let (x_ids, px) = self.group(&xi);
        let (y_ids, py) = self.group(&yi);
        let (xy_ids, pxy) = self.group(&xy);
        let mut cell_x = vec![0usize; pxy.len()];
        let mut cell_y = vec![0usize; pxy.len()];
        for i in 0..self.len() {
            cell_x[xy_ids[i]] = x_ids[i];
            cell_y[xy_ids[i]] = y_ids[i];
        }
        let terms: Vec<f64> = pxy
            .iter()
            .enumerate()
            .map(|(c, &p)| p * (p / (px[cell_x[c]] * py[cell_y[c]])).ln())
            .collect();
        Nats::from_raw("mutual information", pairwise_sum(&terms))
    }

    fn sequences<S: AsRef<str>>(&self, xs: &[S], ys: &[S]) -> Result<(Vec<usize>, Vec<usize>)> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                left: xs.len(),
                right: ys.len(),
            });
        }
        let (xi, yi) = (self.vars(xs)?, self.vars(ys)?);
        self.disjoint(&[&xi, &yi])?;
        Ok((xi, yi))
    }

    /// `I(X^T → Y^T) = Σ_t I(X^t; Y_t | Y^{t-1})`
    pub fn directed_information<S: AsRef<str>>(&self, xs: &[S], ys: &[S]) -> Result<Nats> {
        let (xi, yi) = self.sequences(xs, ys)?;
        let terms: Vec<f64> = (0..xi.len())
            .map(|t| self.cmi_raw(&xi[..=t], &yi[t..=t], &yi[..t]))
            .collect();
        Nats::from_raw("directed information", pairwise_sum(&terms))
    }

    /// `H(Y^T) - H(Y^T ‖ X^T)` with same-step causal conditioning; agrees
    /// with [`Self::directed_information`] term by term.
    pub fn directed_information_via_causal_entropy<S: AsRef<str>>(
        &self,
        xs: &[S],
        ys: &[S],
    ) -> Result<Nats> {
        let (xi, yi) = self.sequences(xs, ys)?;
        let hy = self.entropy_raw(&yi);
        let causal = self.causal_entropy_raw(&yi, &xi, 0);
        Nats::from_raw("directed information", hy - causal)
    }

    /// Causal entropy `H(Y^T ‖ X^T) = Σ_t H(Y_t | Y^{t-1}, X^{t-1})`, with the
    /// conditioning on `X` lagged by one step.
    pub fn causal_entropy<S: AsRef<str>>(&self, ys: &[S], xs: &[S]) -> Result<Nats> {
        let (xi, yi) = self.sequences(xs, ys)?;
        Nats::from_raw("causal entropy", self.causal_entropy_raw(&yi, &xi, 1))
    }

    /// `Σ_t H(Y_t | Y^{t-1}, X^t)`: causal conditioning without the lag.
    pub fn causal_entropy_same_step<S: AsRef<str>>(&self, ys: &[S], xs: &[S]) -> Result<Nats> {
        let (xi, yi) = self.sequences(xs, ys)?;
        Nats::from_raw("causal entropy", self.causal_entropy_raw(&yi, &xi, 0))
    }

    fn causal_entropy_raw(&self, ys: &[usize], xs: &[usize], lag: usize) -> f64 {
        let terms: Vec<f64> = (0..ys.len())
            .map(|t| {
                let x_end = (t + 1).saturating_sub(lag);
                let given: Vec<usize> = ys[..t].iter().chain(&xs[..x_end]).copied().collect();
                let joint: Vec<usize> = given.iter().chain(&ys[t..=t]).copied().collect();
                self.entropy_raw(&joint) - self.entropy_raw(&given)
            })
            .collect();
        pairwise_sum(&terms)
    }
}
