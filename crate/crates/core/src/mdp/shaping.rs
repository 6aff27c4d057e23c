use serde::{Deserialize, Serialize};

use super::Mdp;
use crate::error::{Error, Result};

/// Reward transforms. All of them act on the `(s, a)` reward table only;
/// terms that depend on the successor state are replaced by their
/// expectation under `T(· | s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapingTransform {
    /// `R'(s, a) = R(s, a) + c`
    ConstantOffset { c: f64 },
    /// `R'(s, a) = R(s, a) - E_{s'}[d(s', goal)]`
    NegatedDistance { goal: usize, metric: Vec<Vec<f64>> },
    /// `R'(s, a) = R(s, a) + γ E_{s'}[Φ(s')] - Φ(s)`
    PotentialBased { potential: Vec<f64> },
}

impl ShapingTransform {
    pub fn constant(c: f64) -> Self {
        ShapingTransform::ConstantOffset { c }
    }

    pub fn label(&self) -> String {
        match self {
            ShapingTransform::ConstantOffset { c } => format!("constant:{c}"),
            ShapingTransform::NegatedDistance { goal, .. } => format!("negdist:{goal}"),
            ShapingTransform::PotentialBased { .. } => "potential".to_string(),
        }
    }

    fn check(&self, m: &Mdp) -> Result<()> {
        let n = m.num_states;
        match self {
            ShapingTransform::ConstantOffset { c } if !c.is_finite() => {
                Err(Error::InvalidParameter(format!("offset {c} is not finite")))
            }
            ShapingTransform::ConstantOffset { .. } => Ok(()),
            ShapingTransform::NegatedDistance { goal, metric } => {
                if *goal >= n {
                    return Err(Error::InvalidParameter(format!(
                        "goal state {goal} out of range for {n} states"
                    )));
                }
                if metric.len() != n {
                    return Err(Error::Schema {
                        path: "metric".into(),
                        message: format!("expected {n} rows, found {}", metric.len()),
                    });
                }
                for (i, row) in metric.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::Schema {
                            path: format!("metric[{i}]"),
                            message: format!("expected {n} entries, found {}", row.len()),
                        });
                    }
                    if let Some(j) = row.iter().position(|d| !d.is_finite() || *d < 0.0) {
                        return Err(Error::Schema {
                            path: format!("metric[{i}][{j}]"),
                            message: "distance must be finite and non-negative".into(),
                        });
                    }
                }
                Ok(())
            }
            ShapingTransform::PotentialBased { potential } => {
                if potential.len() != n {
                    return Err(Error::Schema {
                        path: "potential".into(),
                        message: format!("expected {n} entries, found {}", potential.len()),
                    });
                }
                if potential.iter().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidParameter("potential is not finite".into()));
                }
                Ok(())
            }
        }
    }
}

/// Returns a copy of `m` whose reward table has been transformed by `t`.
pub fn apply_shaping(m: &Mdp, t: &ShapingTransform) -> Result<Mdp> {
    t.check(m)?;
    let mut out = m.clone();
    let expect = |s: usize, a: usize, f: &dyn Fn(usize) -> f64| -> f64 {
        m.transition[s][a]
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(next, &p)| p * f(next))
            .sum()
    };
    for s in 0..m.num_states {
        for a in 0..m.num_actions {
            let bonus = match t {
                ShapingTransform::ConstantOffset { c } => *c,
                ShapingTransform::NegatedDistance { goal, metric } => {
                    -expect(s, a, &|next| metric[next][*goal])
                }
                ShapingTransform::PotentialBased { potential } => {
                    m.discount * expect(s, a, &|next| potential[next]) - potential[s]
                }
            };
            out.reward[s][a] += bonus;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_chain, make_gridworld, manhattan_metric, GridCell};

    #[test]
    fn zero_offset_is_bit_identical() {
        let m = make_chain(4, 3, 1.0, 0.9).unwrap();
        let out = apply_shaping(&m, &ShapingTransform::constant(0.0)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn offset_on_zero_rewards() {
        let m = make_chain(3, 2, 0.0, 0.9).unwrap();
        let out = apply_shaping(&m, &ShapingTransform::constant(5.0)).unwrap();
        assert!(out.reward.iter().flatten().all(|&r| r == 5.0));
        assert_eq!(out.transition, m.transition);
    }

    #[test]
    fn zero_potential_is_identity() {
        let m = make_chain(4, 3, 1.0, 0.9).unwrap();
        let t = ShapingTransform::PotentialBased {
            potential: vec![0.0; 4],
        };
        assert_eq!(apply_shaping(&m, &t).unwrap().reward, m.reward);
    }

    #[test]
    fn negated_distance_on_deterministic_grid() {
        let m = make_gridworld(3, 3, GridCell::new(2, 2), 2, 1.0, 0.0).unwrap();
        let t = ShapingTransform::NegatedDistance {
            goal: 8,
            metric: manhattan_metric(3, 3),
        };
        let out = apply_shaping(&m, &t).unwrap();
        // from (0,0) moving north lands on (0,1): distance 3
        assert_eq!(out.reward[0][0], -3.0);
        // entering the goal: 1 - 0
        assert_eq!(out.reward[7][1], 1.0);
    }

    #[test]
    fn malformed_metric_rejected() {
        let m = make_chain(3, 2, 1.0, 0.9).unwrap();
        let t = ShapingTransform::NegatedDistance {
            goal: 2,
            metric: vec![vec![0.0; 3]; 2],
        };
        assert!(matches!(apply_shaping(&m, &t), Err(Error::Schema { .. })));
        let t = ShapingTransform::PotentialBased {
            potential: vec![1.0],
        };
        assert!(apply_shaping(&m, &t).is_err());
    }
}
