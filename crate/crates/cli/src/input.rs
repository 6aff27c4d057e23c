//! Parsing of generator specs, transform lists and policy arguments.

use std::path::Path;

use credit_lens::mdp::{
    load_mdp, load_policy, make_bandit, make_chain, make_gridworld, make_random, manhattan_metric,
    uniform_policy, GridCell, Mdp, RandomMdpConfig, ShapingTransform, TabularPolicy,
};
use credit_lens::{Error, Result};

/// A loaded or generated MDP, with the grid geometry when there is one.
#[derive(Debug, Clone)]
pub struct Source {
    pub mdp: Mdp,
    pub embedded_policy: Option<TabularPolicy>,
    grid: Option<Grid>,
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    width: usize,
    height: usize,
    goal: usize,
}

fn bad(spec: &str, why: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("generator spec `{spec}`: {why}"))
}

fn num<T: std::str::FromStr>(spec: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(spec, format!("`{key}` has invalid value `{value}`")))
}

/// Splits `kind:head,k=v,...` into the kind, the positional head and the
/// keyed options.
fn split(spec: &str) -> (&str, Option<&str>, Vec<(&str, &str)>) {
    let mut parts = spec.split(',');
    let first = parts.next().unwrap_or_default();
    let (kind, head) = match first.split_once(':') {
        Some((k, h)) => (k, Some(h)),
        None => (first, None),
    };
    let opts = parts
        .filter(|p| !p.is_empty())
        .map(|p| p.split_once('=').unwrap_or((p, "")))
        .collect();
    (kind.trim(), head, opts)
}

/// Builds an MDP from a mini-spec:
///
/// - `chain:N[,h=H][,gamma=G][,reward=R]`
/// - `grid:WxH[,goal=X_Y][,h=H][,gamma=G][,slip=P]`
/// - `bandit[:R1/R2/...][,h=H]`
/// - `random:SEED[,s=S][,a=A][,h=H][,gamma=G]`
pub fn generate(spec: &str) -> Result<Source> {
    let (kind, head, opts) = split(spec);
    let get = |key: &str| opts.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
    let known: &[&str] = match kind {
        "chain" => &["h", "gamma", "reward"],
        "grid" => &["goal", "h", "gamma", "slip"],
        "bandit" => &["h"],
        "random" => &["s", "a", "h", "gamma"],
        other => {
            return Err(bad(
                spec,
                format!("unknown generator `{other}`; expected chain, grid, bandit or random"),
            ))
        }
    };
    if let Some((k, _)) = opts.iter().find(|(k, _)| !known.contains(k)) {
        return Err(bad(spec, format!("unknown option `{k}`")));
    }
    let mut grid = None;
    let mdp = match kind {
        "chain" => {
            let n: usize = num(
                spec,
                "length",
                head.ok_or_else(|| bad(spec, "missing chain length"))?,
            )?;
            let h = get("h")
                .map(|v| num(spec, "h", v))
                .transpose()?
                .unwrap_or(n.max(2) - 1);
            let gamma = get("gamma")
                .map(|v| num(spec, "gamma", v))
                .transpose()?
                .unwrap_or(0.9);
            let reward = get("reward")
                .map(|v| num(spec, "reward", v))
                .transpose()?
                .unwrap_or(1.0);
            make_chain(n, h, reward, gamma)?
        }
        "grid" => {
            let dims = head.ok_or_else(|| bad(spec, "missing grid size WxH"))?;
            let (w, hh) = dims
                .split_once('x')
                .ok_or_else(|| bad(spec, "grid size must look like 5x5"))?;
            let (width, height): (usize, usize) =
                (num(spec, "width", w)?, num(spec, "height", hh)?);
            let goal = match get("goal") {
                Some(g) => {
                    let (x, y) = g
                        .split_once('_')
                        .ok_or_else(|| bad(spec, "goal must look like 4_4"))?;
                    GridCell::new(num(spec, "goal", x)?, num(spec, "goal", y)?)
                }
                None => GridCell::new(width.saturating_sub(1), height.saturating_sub(1)),
            };
            let horizon = get("h")
                .map(|v| num(spec, "h", v))
                .transpose()?
                .unwrap_or(8);
            let gamma = get("gamma")
                .map(|v| num(spec, "gamma", v))
                .transpose()?
                .unwrap_or(0.9);
            let slip = get("slip")
                .map(|v| num(spec, "slip", v))
                .transpose()?
                .unwrap_or(0.0);
            let m = make_gridworld(width, height, goal, horizon, gamma, slip)?;
            grid = Some(Grid {
                width,
                height,
                goal: goal.y * width + goal.x,
            });
            m
        }
        "bandit" => {
            let arms: Vec<f64> = match head {
                Some(h) => h
                    .split('/')
                    .map(|r| num(spec, "arm reward", r))
                    .collect::<Result<_>>()?,
                None => vec![0.0, 1.0],
            };
            let h = get("h")
                .map(|v| num(spec, "h", v))
                .transpose()?
                .unwrap_or(1);
            make_bandit(&arms, h)?
        }
        _ => {
            let seed: u64 = num(spec, "seed", head.ok_or_else(|| bad(spec, "missing seed"))?)?;
            let mut cfg = RandomMdpConfig::small(seed);
            if let Some(v) = get("s") {
                cfg.num_states = num(spec, "s", v)?;
            }
            if let Some(v) = get("a") {
                cfg.num_actions = num(spec, "a", v)?;
            }
            if let Some(v) = get("h") {
                cfg.horizon = num(spec, "h", v)?;
            }
            if let Some(v) = get("gamma") {
                cfg.discount = num(spec, "gamma", v)?;
            }
            make_random(&cfg, seed)?
        }
    };
    Ok(Source {
        mdp,
        embedded_policy: None,
        grid,
    })
}

pub fn load(path: &Path) -> Result<Source> {
    let (mdp, embedded_policy) = load_mdp(path)?;
    Ok(Source {
        mdp,
        embedded_policy,
        grid: None,
    })
}

/// Resolves `--policy` arguments. Without any, the policy stored in the MDP
/// file is used, else the uniform policy.
pub fn policies(src: &Source, args: &[String]) -> Result<Vec<TabularPolicy>> {
    if args.is_empty() {
        return Ok(vec![src
            .embedded_policy
            .clone()
            .unwrap_or_else(|| uniform_policy(&src.mdp))]);
    }
    args.iter()
        .map(|a| match a.as_str() {
            "uniform" => Ok(uniform_policy(&src.mdp)),
            path => load_policy(path, &src.mdp),
        })
        .collect()
}

/// Manhattan metric from `x_y` state labels, as written for gridworlds.
fn metric_from_labels(m: &Mdp) -> Option<Vec<Vec<f64>>> {
    let cells = m
        .labels
        .as_ref()?
        .iter()
        .map(|l| {
            let (x, y) = l.split_once('_')?;
            Some((x.parse::<i64>().ok()?, y.parse::<i64>().ok()?))
        })
        .collect::<Option<Vec<_>>>()?;
    Some(
        cells
            .iter()
            .map(|a| {
                cells
                    .iter()
                    .map(|b| ((a.0 - b.0).abs() + (a.1 - b.1).abs()) as f64)
                    .collect()
            })
            .collect(),
    )
}

/// A named reward transform, `None` standing for the untransformed MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTransform {
    pub name: String,
    pub transform: Option<ShapingTransform>,
}

/// Parses a comma-separated transform list:
/// `none`, `constant:C`, `negdist[:GOAL]`, `potential:zero` or
/// `potential:V1/V2/...`. An empty list means `none` alone.
pub fn transforms(src: &Source, list: &str) -> Result<Vec<NamedTransform>> {
    let items: Vec<&str> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Ok(vec![NamedTransform {
            name: "none".into(),
            transform: None,
        }]);
    }
    let n = src.mdp.num_states;
    let bad = |item: &str, why: &str| Error::InvalidParameter(format!("transform `{item}`: {why}"));
    items
        .into_iter()
        .map(|item| {
            let (kind, arg) = item.split_once(':').unwrap_or((item, ""));
            let transform = match kind {
                "none" => None,
                "constant" => Some(ShapingTransform::constant(
                    arg.parse().map_err(|_| bad(item, "expected constant:C"))?,
                )),
                "negdist" => {
                    let (metric, default_goal) = match src.grid {
                        Some(g) => (manhattan_metric(g.width, g.height), Some(g.goal)),
                        None => (
                            metric_from_labels(&src.mdp).ok_or_else(|| {
                                bad(item, "needs a gridworld or x_y state labels")
                            })?,
                            None,
                        ),
                    };
                    let goal = if arg.is_empty() {
                        default_goal.ok_or_else(|| bad(item, "expected negdist:GOAL_STATE"))?
                    } else {
                        arg.parse()
                            .map_err(|_| bad(item, "goal must be a state index"))?
                    };
                    Some(ShapingTransform::NegatedDistance { goal, metric })
                }
                "potential" => {
                    let potential = if arg == "zero" {
                        vec![0.0; n]
                    } else {
                        arg.split('/')
                            .map(|v| v.parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| {
                                bad(item, "expected potential:zero or potential:V1/V2/...")
                            })?
                    };
                    Some(ShapingTransform::PotentialBased { potential })
                }
                _ => {
                    return Err(bad(
                        item,
                        "expected none, constant:C, negdist or potential:...",
                    ))
                }
            };
            Ok(NamedTransform {
                name: item.to_string(),
                transform,
            })
        })
        .collect()
}

/// Parses a comma-separated list of positive integers, allowing `1e5`.
pub fn sizes(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let v: f64 = s.parse().map_err(|_| {
                Error::InvalidParameter(format!("sample size `{s}` is not a number"))
            })?;
            if v < 1.0 || v.fract() != 0.0 || v > usize::MAX as f64 {
                return Err(Error::InvalidParameter(format!(
                    "sample size `{s}` must be a positive integer"
                )));
            }
            Ok(v as usize)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_spec() {
        let src = generate("chain:4,h=3").unwrap();
        assert_eq!(
            (src.mdp.num_states, src.mdp.horizon, src.mdp.discount),
            (4, 3, 0.9)
        );
        assert_eq!(generate("chain:4").unwrap().mdp.horizon, 3);
    }

    #[test]
    fn grid_spec() {
        let src = generate("grid:5x5,goal=4_4,slip=0.1").unwrap();
        assert_eq!(
            (src.mdp.num_states, src.mdp.num_actions, src.mdp.horizon),
            (25, 4, 8)
        );
        let t = transforms(&src, "negdist").unwrap();
        match &t[0].transform {
            Some(ShapingTransform::NegatedDistance { goal, .. }) => assert_eq!(*goal, 24),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bandit_and_random_specs() {
        let b = generate("bandit").unwrap();
        assert_eq!(b.mdp.reward, vec![vec![0.0, 1.0]]);
        let b = generate("bandit:1/2/3,h=2").unwrap();
        assert_eq!((b.mdp.num_actions, b.mdp.horizon), (3, 2));
        let r = generate("random:7,s=3,a=2,h=2").unwrap();
        assert_eq!(
            (r.mdp.num_states, r.mdp.num_actions, r.mdp.horizon),
            (3, 2, 2)
        );
    }

    #[test]
    fn bad_specs_name_the_problem() {
        for (spec, needle) in [
            ("maze:3", "unknown generator"),
            ("chain:x", "invalid value"),
            ("grid:5,goal=1_1", "5x5"),
            ("chain:4,depth=2", "unknown option"),
            ("chain:1", "at least"),
        ] {
            let err = generate(spec).unwrap_err().to_string();
            assert!(err.contains(needle), "{spec}: {err}");
        }
    }

    #[test]
    fn transform_lists() {
        let src = generate("chain:4,h=3").unwrap();
        let t = transforms(&src, "").unwrap();
        assert_eq!(t.len(), 1);
        assert!(t[0].transform.is_none());
        let t = transforms(&src, "none,constant:5,potential:zero").unwrap();
        assert_eq!(t[1].transform, Some(ShapingTransform::constant(5.0)));
        assert!(transforms(&src, "negdist").is_err());
        assert!(transforms(&src, "scale:2").is_err());
    }

    #[test]
    fn labels_give_a_metric() {
        let mut src = generate("grid:3x3").unwrap();
        src.grid = None;
        let t = transforms(&src, "negdist:8").unwrap();
        match &t[0].transform {
            Some(ShapingTransform::NegatedDistance { metric, .. }) => assert_eq!(metric[0][8], 4.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn size_lists() {
        assert_eq!(sizes("1e2,1000, 1e5").unwrap(), vec![100, 1000, 100_000]);
        assert!(sizes("0").is_err());
        assert!(sizes("1.5").is_err());
    }
}
