//! Seeded trajectory sampling and plug-in estimates of the credit measures.
//!
//! Each trajectory draws from its own ChaCha stream selected by its index, so
//! a batch is the same no matter how its rows are produced or concatenated.
//! The plug-in path rebuilds every quantity from empirical frequencies and
//! only shares the entropy primitives with the exact path.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::TrajectoryTable;
use crate::error::{Error, Result};
use crate::info::{kl, pairwise_sum, AtomQuantizer, JointTable, JointTableBuilder, Nats};
use crate::mdp::{ensure_policy, Mdp, TabularPolicy};
use crate::report::{
    CreditReport, CreditValue, Grain, Measure, ReportMetadata, ReportOptions, ReportSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTrajectory {
    pub states: Vec<u32>,
    pub actions: Vec<u32>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub seed: u64,
    pub n: usize,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    pub rows: Vec<SampledTrajectory>,
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    // rounding left u just above the cumulative mass
    last
}

fn sample_one(m: &Mdp, pi: &TabularPolicy, seed: u64, index: u64) -> SampledTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let h_len = m.horizon;
    let mut states = Vec::with_capacity(h_len);
    let mut actions = Vec::with_capacity(h_len);
    let mut rewards = Vec::with_capacity(h_len);
    let mut s = draw(&mut rng, &m.initial_dist);
    for h in 0..h_len {
        let a = draw(&mut rng, pi.row(h, s));
        states.push(s as u32);
        actions.push(a as u32);
        rewards.push(m.reward(s, a));
        if h + 1 < h_len {
            s = draw(&mut rng, m.transition_row(s, a));
        }
    }
    let mut returns = vec![0.0; h_len];
    let mut acc = 0.0;
    for h in (0..h_len).rev() {
        acc = rewards[h] + m.discount * acc;
        returns[h] = acc;
    }
    SampledTrajectory {
        states,
        actions,
        rewards,
        returns,
    }
}

/// Draws `n` independent trajectories; trajectory `i` uses stream `i` of the
/// generator seeded with `seed`.
pub fn sample_trajectories(
    m: &Mdp,
    pi: &TabularPolicy,
    n: usize,
    seed: u64,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "sample count must be at least 1".into(),
        ));
    }
    ensure_policy(m, pi)?;
    Ok(SampleBatch {
        seed,
        n,
        horizon: m.horizon,
        num_states: m.num_states,
        num_actions: m.num_actions,
        discount: m.discount,
        rows: (0..n as u64).map(|i| sample_one(m, pi, seed, i)).collect(),
    })
}

impl SampleBatch {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let h_len = self.horizon;
        let mut header = Vec::with_capacity(4 * h_len);
        for prefix in ["s", "a", "r", "z"] {
            header.extend((1..=h_len).map(|h| format!("{prefix}{h}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let mut fields: Vec<String> = Vec::with_capacity(4 * h_len);
            fields.extend(r.states.iter().map(u32::to_string));
            fields.extend(r.actions.iter().map(u32::to_string));
            fields.extend(r.rewards.iter().map(|x| format!("{x:.16e}")));
            fields.extend(r.returns.iter().map(|x| format!("{x:.16e}")));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Weighted trajectories: sampled rows at weight `1/n`, or an exact table at
/// its probabilities.
#[derive(Debug, Clone)]
pub struct EmpiricalTable {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    states: Vec<Vec<u32>>,
    actions: Vec<Vec<u32>>,
    rewards: Vec<Vec<f64>>,
    returns: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl EmpiricalTable {
    pub fn from_batch(b: &SampleBatch) -> Self {
        let w = 1.0 / b.n as f64;
        EmpiricalTable {
            horizon: b.horizon,
            num_states: b.num_states,
            num_actions: b.num_actions,
            discount: b.discount,
            states: b.rows.iter().map(|r| r.states.clone()).collect(),
            actions: b.rows.iter().map(|r| r.actions.clone()).collect(),
            rewards: b.rows.iter().map(|r| r.rewards.clone()).collect(),
            returns: b.rows.iter().map(|r| r.returns.clone()).collect(),
            weights: vec![w; b.rows.len()],
        }
    }

    /// Uses the exact distribution as if it were an infinitely large sample.
    pub fn from_exact(t: &TrajectoryTable) -> Self {
        EmpiricalTable {
            horizon: t.horizon,
            num_states: t.num_states,
            num_actions: t.num_actions,
            discount: t.discount,
            states: t.rows().map(|r| r.states.to_vec()).collect(),
            actions: t.rows().map(|r| r.actions.to_vec()).collect(),
            rewards: t.rows().map(|r| r.rewards.to_vec()).collect(),
            returns: t.rows().map(|r| r.returns.to_vec()).collect(),
            weights: t.probs().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluginOptions {
    pub merge_tol: f64,
    /// Add `(k - 1) / 2n` to every plug-in entropy, `k` being the observed
    /// support size.
    pub miller_madow: bool,
    pub report: ReportOptions,
}

impl Default for PluginOptions {
    fn default() -> Self {
        PluginOptions {
            merge_tol: crate::engine::DEFAULT_MERGE_TOL,
            miller_madow: false,
            report: ReportOptions::default(),
        }
    }
}

/// Plug-in estimator state for one weighted table.
struct Plugin<'a> {
    data: &'a EmpiricalTable,
    joint: JointTable,
    returns: Vec<AtomQuantizer>,
    merge_tol: f64,
    /// Effective sample size for the bias correction; `None` disables it.
    correction_n: Option<f64>,
}

const S: &str = "s";
const A: &str = "a";
const T: &str = "t";
const R: &str = "r";
const Z: &str = "z";

fn v(prefix: &str, h: usize) -> String {
    format!("{prefix}{h}")
}

fn vs(prefix: &str, range: impl IntoIterator<Item = usize>) -> Vec<String> {
    range.into_iter().map(|h| v(prefix, h)).collect()
}

impl<'a> Plugin<'a> {
    fn new(
        data: &'a EmpiricalTable,
        opts: PluginOptions,
        correction_n: Option<f64>,
    ) -> Result<Self> {
        let h_len = data.horizon;
        let quantize = |values: &[Vec<f64>]| -> Vec<AtomQuantizer> {
            (0..h_len)
                .map(|h| {
                    let weighted: Vec<(f64, f64)> = values
                        .iter()
                        .zip(&data.weights)
                        .map(|(row, &w)| (row[h], w))
                        .collect();
                    AtomQuantizer::fit(&weighted, opts.merge_tol)
                })
                .collect()
        };
        let returns = quantize(&data.returns);
        let rewards = quantize(&data.rewards);

        let mut names = Vec::with_capacity(5 * h_len);
        for prefix in [S, A, T, R, Z] {
            names.extend(vs(prefix, 0..h_len));
        }
        let mut b = JointTableBuilder::new(names);
        let mut outcome = vec![0u32; 5 * h_len];
        let total = pairwise_sum(&data.weights);
        for i in 0..data.len() {
            for h in 0..h_len {
                let (s, a) = (data.states[i][h], data.actions[i][h]);
                outcome[h] = s;
                outcome[h_len + h] = a;
                outcome[2 * h_len + h] = s * data.num_actions as u32 + a;
                outcome[3 * h_len + h] =
                    rewards[h].index_of(data.rewards[i][h]).expect("fitted") as u32;
                outcome[4 * h_len + h] =
                    returns[h].index_of(data.returns[i][h]).expect("fitted") as u32;
            }
            b.push(&outcome, data.weights[i] / total);
        }
        Ok(Plugin {
            data,
            joint: b.build()?,
            returns,
            merge_tol: opts.merge_tol,
            correction_n: if opts.miller_madow {
                correction_n
            } else {
                None
            },
        })
    }

    fn h(&self, vars: &[String]) -> Result<f64> {
        let raw = self.joint.entropy(vars)?.value();
        Ok(match self.correction_n {
            Some(n) if !vars.is_empty() => {
                raw + (self.joint.support_size(vars)? as f64 - 1.0) / (2.0 * n)
            }
            _ => raw,
        })
    }

    /// `I(X; Y | W)` through four joint entropies.
    fn cmi(&self, x: &[String], y: &[String], w: &[String]) -> Result<Nats> {
        let join = |parts: &[&[String]]| parts.concat();
        let value = self.h(&join(&[x, w]))? + self.h(&join(&[y, w]))?
            - self.h(&join(&[x, y, w]))?
            - self.h(w)?;
        self.finish("conditional mutual information", value)
    }

    /// `H(X | W)`
    fn ch(&self, x: &[String], w: &[String]) -> Result<Nats> {
        let value = self.h(&[x, w].concat())? - self.h(w)?;
        self.finish("conditional entropy", value)
    }

    fn finish(&self, quantity: &str, value: f64) -> Result<Nats> {
        if self.correction_n.is_some() {
            // the corrected estimator is not constrained to be non-negative
            Ok(Nats::from_raw(quantity, value.max(0.0))?)
        } else {
            Nats::from_raw(quantity, value)
        }
    }

    /// Empirical `KL(p̂(Z_h | s, a) ‖ p̂(Z_h | s))` for every visited cell.
    fn pairwise(&self) -> Result<BTreeMap<(usize, usize, usize), (f64, Nats)>> {
        let d = self.data;
        let mut out = BTreeMap::new();
        for h in 0..d.horizon {
            let atoms = self.returns[h].len();
            let mut pair: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
            let mut state: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for i in 0..d.len() {
                let (s, a) = (d.states[i][h] as usize, d.actions[i][h] as usize);
                let z = self.returns[h].index_of(d.returns[i][h]).expect("fitted");
                let w = d.weights[i];
                pair.entry((s, a)).or_insert_with(|| vec![0.0; atoms])[z] += w;
                state.entry(s).or_insert_with(|| vec![0.0; atoms])[z] += w;
            }
            let total = pairwise_sum(&d.weights);
            for ((s, a), counts) in pair {
                let mass = pairwise_sum(&counts);
                let p: Vec<f64> = counts.iter().map(|c| c / mass).collect();
                let q_counts = &state[&s];
                let q_mass = pairwise_sum(q_counts);
                let q: Vec<f64> = q_counts.iter().map(|c| c / q_mass).collect();
                out.insert((h, s, a), (mass / total, kl(&p, &q)?));
            }
        }
        Ok(out)
    }

    fn step_weights(&self) -> Vec<f64> {
        let mut w = vec![1.0; self.data.horizon];
        for h in 1..w.len() {
            w[h] = w[h - 1] * self.data.discount;
        }
        let total = pairwise_sum(&w);
        w.iter().map(|x| x / total).collect()
    }

    /// `Σ_h w_h I(A_h; Z_h | S_h)` with normalized discount weights.
    fn info_sparsity(&self) -> Result<Nats> {
        let terms = self
            .step_weights()
            .iter()
            .enumerate()
            .map(|(h, w)| Ok(w * self.cmi(&[v(A, h)], &[v(Z, h)], &[v(S, h)])?.value()))
            .collect::<Result<Vec<_>>>()?;
        self.finish("information sparsity", pairwise_sum(&terms))
    }

    fn pooled_pairwise(&self) -> Result<BTreeMap<(usize, usize), (f64, Nats)>> {
        // pool the joint of (s, a, Z) over steps, weighting steps by discount
        let d = self.data;
        let weights = self.step_weights();
        let mut pooled_values = Vec::new();
        for i in 0..d.len() {
            for (h, w) in weights.iter().enumerate() {
                pooled_values.push((d.returns[i][h], d.weights[i] * w));
            }
        }
        let atoms = AtomQuantizer::fit(&pooled_values, self.merge_tol);
        let k = atoms.len();
        let mut pair: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        let mut state: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for i in 0..d.len() {
            for (h, &w) in weights.iter().enumerate() {
                let mass = d.weights[i] * w;
                if mass <= 0.0 {
                    continue;
                }
                let (s, a) = (d.states[i][h] as usize, d.actions[i][h] as usize);
                let z = atoms.index_of(d.returns[i][h]).expect("fitted");
                pair.entry((s, a)).or_insert_with(|| vec![0.0; k])[z] += mass;
                state.entry(s).or_insert_with(|| vec![0.0; k])[z] += mass;
            }
        }
        let total: f64 = pair.values().flatten().sum();
        let normalize = |c: &[f64]| {
            let m = pairwise_sum(c);
            c.iter().map(|x| x / m).collect::<Vec<_>>()
        };
        pair.iter()
            .map(|(&(s, a), c)| {
                let value = kl(&normalize(c), &normalize(&state[&s]))?;
                Ok(((s, a), (pairwise_sum(c) / total, value)))
            })
            .collect()
    }
}

/// Plug-in estimates of the requested measures. Pairs never visited are
/// reported as missing rather than zero.
pub fn plugin_measures(
    data: &EmpiricalTable,
    m: &Mdp,
    pi: &TabularPolicy,
    measures: &[Measure],
    opts: PluginOptions,
    computation_path: &str,
) -> Result<ReportSet> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let correction_n = Some(data.len() as f64);
    let p = Plugin::new(data, opts, correction_n)?;
    let metadata = ReportMetadata {
        merge_tolerance: opts.merge_tol,
        tolerance: opts.report.tolerance,
        units: opts.report.units,
        marginalize_time: opts.report.marginalize_time,
        ..ReportMetadata::new(m, pi, computation_path)
    };
    let h_len = data.horizon;
    let steps = |f: &dyn Fn(usize) -> Result<Nats>| -> Result<Vec<CreditValue>> {
        (0..h_len)
            .map(|h| Ok(CreditValue::step(h, Some(f(h)?))))
            .collect()
    };
    let mut reports = Vec::new();
    for &measure in measures {
        if reports.iter().any(|r: &CreditReport| r.measure == measure) {
            continue;
        }
        let values = match measure {
            Measure::PairwiseKl if opts.report.marginalize_time => {
                let found = p.pooled_pairwise()?;
                let mut values = Vec::new();
                for s in 0..data.num_states {
                    for a in 0..data.num_actions {
                        let v = found.get(&(s, a)).map(|x| x.1);
                        values.push(CreditValue::new(None, Some(s), Some(a), v));
                    }
                }
                values
            }
            Measure::PairwiseKl => {
                let found = p.pairwise()?;
                let mut values = Vec::new();
                for h in 0..h_len {
                    for s in 0..data.num_states {
                        for a in 0..data.num_actions {
                            let v = found.get(&(h, s, a)).map(|x| x.1);
                            values.push(CreditValue::pair(h, s, a, v));
                        }
                    }
                }
                values
            }
            Measure::InfoSparsity if opts.report.marginalize_time => {
                let terms: Vec<f64> = p
                    .pooled_pairwise()?
                    .values()
                    .map(|(w, v)| w * v.value())
                    .collect();
                vec![CreditValue::scalar(Nats::from_raw(
                    "information sparsity",
                    pairwise_sum(&terms),
                )?)]
            }
            Measure::InfoSparsity => vec![CreditValue::scalar(p.info_sparsity()?)],
            Measure::StepwiseRewardEntropy => steps(&|h| p.ch(&[v(R, h)], &vs(T, 0..h)))?,
            Measure::LeaveOneOutCmi => steps(&|h| {
                let others = vs(T, (0..h_len).filter(|&k| k != h));
                p.cmi(&[v(Z, 0)], &[v(T, h)], &others)
            })?,
            Measure::HistoryCmi => steps(&|h| p.cmi(&[v(Z, 0)], &[v(T, h)], &vs(T, 0..h)))?,
            Measure::HcaRatio => steps(&|h| hca_plugin(&p, h))?,
            Measure::DirectedInfoCredit => {
                let terms = (0..h_len)
                    .map(|h| {
                        Ok(p.cmi(&[v(Z, h)], &vs(T, 0..=h), &vs(Z, h + 1..h_len))?
                            .value())
                    })
                    .collect::<Result<Vec<_>>>()?;
                vec![CreditValue::scalar(
                    p.finish("directed information", pairwise_sum(&terms))?,
                )]
            }
            Measure::ReturnSequenceMi => {
                vec![CreditValue::scalar(p.cmi(
                    &vs(T, 0..h_len),
                    &vs(Z, 0..h_len),
                    &[],
                )?)]
            }
        };
        reports.push(CreditReport {
            measure,
            grain: measure.grain(),
            values,
            metadata: metadata.clone(),
        });
    }
    Ok(ReportSet { metadata, reports })
}

/// `Σ p̂(s, a, z) ln(ĥ(a | s, z) / π̂(a | s))` at step `h`, with the policy
/// itself estimated from the sample.
fn hca_plugin(p: &Plugin<'_>, h: usize) -> Result<Nats> {
    let d = p.data;
    let mut saz: BTreeMap<(u32, u32, usize), f64> = BTreeMap::new();
    let mut sz: BTreeMap<(u32, usize), f64> = BTreeMap::new();
    let mut sa: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let mut st: BTreeMap<u32, f64> = BTreeMap::new();
    let total = pairwise_sum(&d.weights);
    for i in 0..d.len() {
        let (s, a) = (d.states[i][h], d.actions[i][h]);
        let z = p.returns[0].index_of(d.returns[i][0]).expect("fitted");
        let w = d.weights[i] / total;
        *saz.entry((s, a, z)).or_default() += w;
        *sz.entry((s, z)).or_default() += w;
        *sa.entry((s, a)).or_default() += w;
        *st.entry(s).or_default() += w;
    }
    let terms: Vec<f64> = saz
        .iter()
        .map(|(&(s, a, z), &mass)| {
            let hind = mass / sz[&(s, z)];
            let policy = sa[&(s, a)] / st[&s];
            mass * (hind / policy).ln()
        })
        .collect();
    Nats::from_raw("hindsight credit", pairwise_sum(&terms))
}

/// One plug-in estimate in a convergence sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n: usize,
    pub seed: u64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub measure: Measure,
    pub exact_value: Nats,
    pub estimates: Vec<ConvergencePoint>,
    pub seeds: Vec<u64>,
}

/// Median absolute error at one sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub seed_count: usize,
    pub median_abs_error: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

impl ConvergenceReport {
    /// Per sample size, in the order the sizes were first swept. Errors are
    /// recomputed from the stored estimates.
    pub fn rows(&self) -> Vec<ConvergenceRow> {
        let mut sizes: Vec<usize> = Vec::new();
        for p in &self.estimates {
            if !sizes.contains(&p.n) {
                sizes.push(p.n);
            }
        }
        sizes
            .into_iter()
            .map(|n| {
                let errors: Vec<f64> = self
                    .estimates
                    .iter()
                    .filter(|p| p.n == n)
                    .map(|p| (p.estimate - self.exact_value.value()).abs())
                    .collect();
                ConvergenceRow {
                    n,
                    seed_count: errors.len(),
                    median_abs_error: median(errors),
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "measure,n,seed_count,median_abs_error,exact_value")?;
        for r in self.rows() {
            writeln!(
                w,
                "{},{},{},{:.12e},{:.12e}",
                self.measure,
                r.n,
                r.seed_count,
                r.median_abs_error,
                self.exact_value.value()
            )?;
        }
        Ok(())
    }
}

/// Collapses a report to one number: the value itself for scalar measures,
/// the sum over steps for per-step measures, and the largest finite value
/// for per-pair measures.
pub fn summarize(r: &CreditReport) -> f64 {
    let values = r.values.iter().filter_map(|v| v.value).map(Nats::value);
    match r.grain {
        Grain::Scalar => values.sum(),
        Grain::PerStep => pairwise_sum(&values.collect::<Vec<_>>()),
        Grain::PerPair => values.filter(|v| v.is_finite()).fold(0.0, f64::max),
    }
}

/// Plug-in error against the exact value for every `(n, seed)` combination.
pub fn convergence_sweep(
    m: &Mdp,
    pi: &TabularPolicy,
    measure: Measure,
    n_grid: &[usize],
    seeds: &[u64],
    opts: PluginOptions,
    budget: u64,
) -> Result<ConvergenceReport> {
    if n_grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs at least one size and one seed".into(),
        ));
    }
    let an = crate::credit::Analysis::new(m, pi, budget, opts.merge_tol)?;
    let exact_set = crate::report::exact_reports(&an, &[measure], opts.report)?;
    let exact_value = Nats::from_raw("exact value", summarize(&exact_set.reports[0]))?;
    let mut estimates = Vec::with_capacity(n_grid.len() * seeds.len());
    for &n in n_grid {
        for &seed in seeds {
            let batch = sample_trajectories(m, pi, n, seed)?;
            let set = plugin_measures(
                &EmpiricalTable::from_batch(&batch),
                m,
                pi,
                &[measure],
                opts,
                "monte_carlo_plugin",
            )?;
            estimates.push(ConvergencePoint {
                n,
                seed,
                estimate: summarize(&set.reports[0]),
            });
        }
    }
    Ok(ConvergenceReport {
        measure,
        exact_value,
        estimates,
        seeds: seeds.to_vec(),
    })
}
