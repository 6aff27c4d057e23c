//! Credit reports: measure values with provenance metadata, exported as CSV
//! or JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::credit::{self, Analysis, PropositionVerdict};
use crate::error::{Error, Result};
use crate::info::Nats;
use crate::mdp::{Mdp, MdpFile, TabularPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    PairwiseKl,
    InfoSparsity,
    StepwiseRewardEntropy,
    LeaveOneOutCmi,
    HistoryCmi,
    HcaRatio,
    DirectedInfoCredit,
    ReturnSequenceMi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grain {
    PerPair,
    PerStep,
    Scalar,
}

impl Measure {
    pub const ALL: [Measure; 8] = [
        Measure::PairwiseKl,
        Measure::InfoSparsity,
        Measure::StepwiseRewardEntropy,
        Measure::LeaveOneOutCmi,
        Measure::HistoryCmi,
        Measure::HcaRatio,
        Measure::DirectedInfoCredit,
        Measure::ReturnSequenceMi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::PairwiseKl => "pairwise_kl",
            Measure::InfoSparsity => "info_sparsity",
            Measure::StepwiseRewardEntropy => "stepwise_reward_entropy",
            Measure::LeaveOneOutCmi => "leave_one_out_cmi",
            Measure::HistoryCmi => "history_cmi",
            Measure::HcaRatio => "hca_ratio",
            Measure::DirectedInfoCredit => "directed_info_credit",
            Measure::ReturnSequenceMi => "return_sequence_mi",
        }
    }

    pub fn grain(self) -> Grain {
        match self {
            Measure::PairwiseKl => Grain::PerPair,
            Measure::InfoSparsity | Measure::DirectedInfoCredit | Measure::ReturnSequenceMi => {
                Grain::Scalar
            }
            _ => Grain::PerStep,
        }
    }

    pub fn valid_names() -> String {
        Measure::ALL.map(Measure::name).join(", ")
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    /// Accepts snake_case or kebab-case names.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().replace('-', "_");
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown measure `{s}`; valid measures: {}",
                    Measure::valid_names()
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    #[default]
    Nats,
    Bits,
}

impl Units {
    pub fn convert(self, v: Nats) -> f64 {
        match self {
            Units::Nats => v.value(),
            Units::Bits => v.bits(),
        }
    }
}

/// One reported value. Coordinates are one-based timesteps and zero-based
/// state and action indices; absent coordinates do not apply to the grain.
#[derive(Debug, Clone, PartialEq)]
pub struct CreditValue {
    pub h: Option<usize>,
    pub s: Option<usize>,
    pub a: Option<usize>,
    /// `None` when the cell was never observed.
    pub value: Option<Nats>,
    pub flags: Vec<String>,
}

impl CreditValue {
    pub fn new(h: Option<usize>, s: Option<usize>, a: Option<usize>, value: Option<Nats>) -> Self {
        let mut flags = Vec::new();
        match value {
            None => flags.push("missing".to_string()),
            Some(v) if v.is_infinite() => flags.push("infinite".to_string()),
            _ => {}
        }
        CreditValue {
            h,
            s,
            a,
            value,
            flags,
        }
    }

    pub fn scalar(v: Nats) -> Self {
        CreditValue::new(None, None, None, Some(v))
    }

    /// Per-step value at zero-based step `h`.
    pub fn step(h: usize, v: Option<Nats>) -> Self {
        CreditValue::new(Some(h + 1), None, None, v)
    }

    /// Per-pair value at zero-based step `h`.
    pub fn pair(h: usize, s: usize, a: usize, v: Option<Nats>) -> Self {
        CreditValue::new(Some(h + 1), Some(s), Some(a), v)
    }

    fn to_json(&self) -> Value {
        let finite = self.value.filter(|v| !v.is_infinite());
        json!({
            "h": self.h,
            "s": self.s,
            "a": self.a,
            "value_nats": finite.map(Nats::value),
            "value_bits": finite.map(Nats::bits),
            "flags": self.flags,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub mdp_hash: String,
    pub policy_hash: String,
    pub merge_tolerance: f64,
    pub tolerance: f64,
    pub computation_path: String,
    pub units: Units,
    pub marginalize_time: bool,
}

impl ReportMetadata {
    pub fn new(m: &Mdp, pi: &TabularPolicy, computation_path: impl Into<String>) -> Self {
        ReportMetadata {
            mdp_hash: mdp_hash(m),
            policy_hash: policy_hash(pi),
            merge_tolerance: crate::engine::DEFAULT_MERGE_TOL,
            tolerance: 1e-9,
            computation_path: computation_path.into(),
            units: Units::Nats,
            marginalize_time: false,
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// SHA-256 of the canonical JSON form of the MDP.
pub fn mdp_hash(m: &Mdp) -> String {
    let text = serde_json::to_string(&MdpFile::from_parts(m, None)).expect("serializable");
    hex_digest(text.as_bytes())
}

pub fn policy_hash(pi: &TabularPolicy) -> String {
    let text = serde_json::to_string(&pi.per_step).expect("serializable");
    hex_digest(text.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreditReport {
    pub measure: Measure,
    pub grain: Grain,
    pub values: Vec<CreditValue>,
    pub metadata: ReportMetadata,
}

impl CreditReport {
    /// The single value of a scalar report.
    pub fn scalar(&self) -> Option<Nats> {
        match (self.grain, self.values.as_slice()) {
            (Grain::Scalar, [v]) => v.value,
            _ => None,
        }
    }

    pub fn at_step(&self, h: usize) -> Option<Nats> {
        self.values
            .iter()
            .find(|v| v.h == Some(h + 1) && v.s.is_none())
            .and_then(|v| v.value)
    }

    pub fn at_pair(&self, h: usize, s: usize, a: usize) -> Option<Nats> {
        self.values
            .iter()
            .find(|v| v.h == Some(h + 1) && v.s == Some(s) && v.a == Some(a))
            .and_then(|v| v.value)
    }
}

/// Several reports sharing one metadata block.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSet {
    pub metadata: ReportMetadata,
    pub reports: Vec<CreditReport>,
}

fn csv_field(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => format!("{x:.12e}"),
    }
}

fn csv_index(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ReportSet {
    pub fn get(&self, measure: Measure) -> Option<&CreditReport> {
        self.reports.iter().find(|r| r.measure == measure)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "measure,h,s,a,value_nats,value_bits,flags")?;
        for r in &self.reports {
            for v in &r.values {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    r.measure,
                    csv_index(v.h),
                    csv_index(v.s),
                    csv_index(v.a),
                    csv_field(v.value.map(Nats::value)),
                    csv_field(v.value.map(Nats::bits)),
                    v.flags.join(";")
                )?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let measures: serde_json::Map<String, Value> = self
            .reports
            .iter()
            .map(|r| {
                let values: Vec<Value> = r.values.iter().map(CreditValue::to_json).collect();
                (
                    r.measure.name().to_string(),
                    json!({ "grain": r.grain, "values": values }),
                )
            })
            .collect();
        json!({ "metadata": self.metadata, "measures": measures })
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(&mut w, &self.to_json())?;
        writeln!(w)
    }
}

pub fn write_verdicts_json<W: Write>(verdicts: &[PropositionVerdict], mut w: W) -> io::Result<()> {
    // infinite sides are not representable in JSON and are written as null
    let list: Vec<Value> = verdicts
        .iter()
        .map(|v| {
            let finite = |x: f64| x.is_finite().then_some(x);
            json!({
                "id": v.id,
                "h": v.h,
                "lhs": finite(v.lhs),
                "rhs": finite(v.rhs),
                "abs_diff": finite(v.abs_diff),
                "tolerance": v.tolerance,
                "assumption_flags": v.assumption_flags,
                "assumption_satisfied": v.assumption_satisfied,
                "verdict": v.verdict,
            })
        })
        .collect();
    serde_json::to_writer_pretty(&mut w, &list)?;
    writeln!(w)
}

/// Options shared by the exact and sampled report builders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub tolerance: f64,
    pub units: Units,
    /// Pool per-pair quantities over timesteps.
    pub marginalize_time: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            tolerance: 1e-9,
            units: Units::Nats,
            marginalize_time: false,
        }
    }
}

fn steps(h_len: usize, f: impl Fn(usize) -> Result<Nats>) -> Result<Vec<CreditValue>> {
    (0..h_len)
        .map(|h| Ok(CreditValue::step(h, Some(f(h)?))))
        .collect()
}

/// Computes the requested measures on the exact trajectory distribution.
pub fn exact_reports(
    an: &Analysis,
    measures: &[Measure],
    opts: ReportOptions,
) -> Result<ReportSet> {
    let metadata = ReportMetadata {
        merge_tolerance: an.merge_tol(),
        tolerance: opts.tolerance,
        units: opts.units,
        marginalize_time: opts.marginalize_time,
        ..ReportMetadata::new(an.mdp(), an.policy(), "exact_enumeration")
    };
    let h_len = an.mdp().horizon;
    let mut reports = Vec::with_capacity(measures.len());
    let mut seen = BTreeMap::new();
    for &measure in measures {
        if seen.insert(measure, ()).is_some() {
            continue;
        }
        let values = match measure {
            Measure::PairwiseKl if opts.marginalize_time => credit::pooled_pairwise_credit(an)?
                .into_iter()
                .map(|((s, a), v)| CreditValue::new(None, Some(s), Some(a), Some(v)))
                .collect(),
            Measure::PairwiseKl => credit::pairwise_credit_table(an)?
                .into_iter()
                .map(|((h, s, a), v)| CreditValue::pair(h, s, a, Some(v)))
                .collect(),
            Measure::InfoSparsity if opts.marginalize_time => {
                vec![CreditValue::scalar(credit::pooled_information_sparsity(
                    an,
                )?)]
            }
            Measure::InfoSparsity => vec![CreditValue::scalar(credit::information_sparsity(an)?)],
            Measure::StepwiseRewardEntropy => {
                let j = an.joint()?;
                steps(h_len, |h| credit::stepwise_reward_entropy(j, h))?
            }
            Measure::LeaveOneOutCmi => {
                let j = an.joint()?;
                steps(h_len, |h| credit::leave_one_out_cmi(j, h))?
            }
            Measure::HistoryCmi => {
                let j = an.joint()?;
                steps(h_len, |h| credit::history_cmi(j, h))?
            }
            Measure::HcaRatio => {
                let j = an.joint()?;
                let ht = credit::hindsight_table(j, an.merge_tol())?;
                steps(h_len, |h| credit::hca_credit(j, &ht, an.policy(), h))?
            }
            Measure::DirectedInfoCredit => {
                let dc = credit::directed_info_credit(an.joint()?)?;
                vec![CreditValue::scalar(dc.directed)]
            }
            Measure::ReturnSequenceMi => {
                vec![CreditValue::scalar(credit::return_sequence_mi(
                    an.joint()?,
                )?)]
            }
        };
        reports.push(CreditReport {
            measure,
            grain: if opts.marginalize_time && measure == Measure::PairwiseKl {
                Grain::PerPair
            } else {
                measure.grain()
            },
            values,
            metadata: metadata.clone(),
        });
    }
    Ok(ReportSet { metadata, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{DEFAULT_BUDGET, DEFAULT_MERGE_TOL};
    use crate::mdp::{make_bandit, make_chain, uniform_policy};
    use std::f64::consts::LN_2;

    fn bandit_set(measures: &[Measure]) -> ReportSet {
        let m = make_bandit(&[0.0, 1.0], 1).unwrap();
        let an = Analysis::new(&m, &uniform_policy(&m), DEFAULT_BUDGET, DEFAULT_MERGE_TOL).unwrap();
        exact_reports(&an, measures, ReportOptions::default()).unwrap()
    }

    #[test]
    fn measure_names_round_trip() {
        for m in Measure::ALL {
            assert_eq!(m.name().parse::<Measure>().unwrap(), m);
            assert_eq!(m.name().replace('_', "-").parse::<Measure>().unwrap(), m);
        }
        let err = "entropy".parse::<Measure>().unwrap_err().to_string();
        assert!(err.contains("info_sparsity"), "{err}");
    }

    #[test]
    fn bandit_csv() {
        let set = bandit_set(&[Measure::InfoSparsity, Measure::PairwiseKl]);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "measure,h,s,a,value_nats,value_bits,flags");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("info_sparsity,,,,6.931471805599e-1,1.000000000000e0,"));
        assert!(lines[2].starts_with("pairwise_kl,1,0,0,"));
    }

    #[test]
    fn json_nested_by_measure() {
        let set = bandit_set(&Measure::ALL);
        let v = set.to_json();
        assert_eq!(v["metadata"]["computation_path"], "exact_enumeration");
        assert_eq!(v["metadata"]["mdp_hash"].as_str().unwrap().len(), 64);
        let bits = v["measures"]["info_sparsity"]["values"][0]["value_bits"]
            .as_f64()
            .unwrap();
        assert!((bits - 1.0).abs() < 1e-12);
        assert_eq!(v["measures"].as_object().unwrap().len(), 8);
        assert!(
            (set.get(Measure::HcaRatio)
                .unwrap()
                .at_step(0)
                .unwrap()
                .value()
                - LN_2)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn infinite_values_are_flagged() {
        let v = CreditValue::pair(0, 0, 1, Some(Nats::INFINITY));
        assert_eq!(v.flags, ["infinite"]);
        assert!(v.to_json()["value_nats"].is_null());
        assert_eq!(CreditValue::step(0, None).flags, ["missing"]);
    }

    #[test]
    fn hashes_distinguish_inputs() {
        let a = make_chain(3, 2, 1.0, 0.9).unwrap();
        let b = make_chain(3, 2, 1.0, 0.5).unwrap();
        assert_ne!(mdp_hash(&a), mdp_hash(&b));
        assert_eq!(mdp_hash(&a), mdp_hash(&a.clone()));
    }

    #[test]
    fn pooled_pairwise_has_no_timestep() {
        let m = make_chain(3, 3, 1.0, 0.9).unwrap();
        let an = Analysis::new(&m, &uniform_policy(&m), DEFAULT_BUDGET, DEFAULT_MERGE_TOL).unwrap();
        let opts = ReportOptions {
            marginalize_time: true,
            ..Default::default()
        };
        let set = exact_reports(&an, &[Measure::PairwiseKl], opts).unwrap();
        assert!(set.reports[0].values.iter().all(|v| v.h.is_none()));
        assert!(set.metadata.marginalize_time);
    }
}
