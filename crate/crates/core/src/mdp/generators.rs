use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mdp, TabularPolicy};
use crate::error::{Error, Result};

pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_RIGHT: usize = 1;

/// `n`-state chain with actions {left, right}. Movement is deterministic and
/// clipped at both ends; the only rewarded transition is the one entering
/// state `n - 1`. Episodes start in state 0.
pub fn make_chain(n: usize, horizon: usize, goal_reward: f64, discount: f64) -> Result<Mdp> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "chain needs at least 2 states, got {n}"
        )));
    }
    let mut reward = vec![vec![0.0; 2]; n];
    let mut transition = vec![vec![vec![0.0; n]; 2]; n];
    for s in 0..n {
        transition[s][CHAIN_LEFT][s.saturating_sub(1)] = 1.0;
        transition[s][CHAIN_RIGHT][(s + 1).min(n - 1)] = 1.0;
    }
    reward[n - 2][CHAIN_RIGHT] = goal_reward;
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    Mdp::new(reward, transition, horizon, initial, discount)
}

/// Single-state MDP whose arms pay the given deterministic rewards.
pub fn make_bandit(arm_rewards: &[f64], horizon: usize) -> Result<Mdp> {
    if arm_rewards.is_empty() {
        return Err(Error::InvalidParameter(
            "bandit needs at least one arm".into(),
        ));
    }
    let a = arm_rewards.len();
    Mdp::new(
        vec![arm_rewards.to_vec()],
        vec![vec![vec![1.0]; a]],
        horizon,
        vec![1.0],
        1.0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCell {
    pub x: usize,
    pub y: usize,
}

impl GridCell {
    pub fn new(x: usize, y: usize) -> Self {
        GridCell { x, y }
    }
}

const MOVES: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

/// Gridworld with the four cardinal actions (north, east, south, west). With
/// probability `slip` the move direction is replaced by a uniformly random
/// one. Entering the goal pays 1, realized as `R(s, a) = P(s' = goal | s, a)`;
/// the goal is absorbing with zero reward. Episodes start uniformly over the
/// non-goal cells. State index is `y * width + x`.
pub fn make_gridworld(
    width: usize,
    height: usize,
    goal: GridCell,
    horizon: usize,
    discount: f64,
    slip: f64,
) -> Result<Mdp> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(
            "grid dimensions must be positive".into(),
        ));
    }
    if goal.x >= width || goal.y >= height {
        return Err(Error::InvalidParameter(format!(
            "goal ({}, {}) outside {width}x{height} grid",
            goal.x, goal.y
        )));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(Error::InvalidParameter(format!(
            "slip {slip} outside [0, 1]"
        )));
    }
    let n = width * height;
    if n < 2 {
        return Err(Error::InvalidParameter("grid has no non-goal cell".into()));
    }
    let goal_idx = goal.y * width + goal.x;
    let step = |s: usize, dir: usize| -> usize {
        let (x, y) = ((s % width) as i64, (s / width) as i64);
        let (dx, dy) = MOVES[dir];
        let nx = (x + dx).clamp(0, width as i64 - 1);
        let ny = (y + dy).clamp(0, height as i64 - 1);
        ny as usize * width + nx as usize
    };

    let mut transition = vec![vec![vec![0.0; n]; 4]; n];
    let mut reward = vec![vec![0.0; 4]; n];
    for s in 0..n {
        for a in 0..4 {
            let row = &mut transition[s][a];
            if s == goal_idx {
                row[goal_idx] = 1.0;
                continue;
            }
            row[step(s, a)] += 1.0 - slip;
            for dir in 0..4 {
                row[step(s, dir)] += slip / 4.0;
            }
            reward[s][a] = row[goal_idx];
        }
    }
    let start = 1.0 / (n - 1) as f64;
    let initial = (0..n)
        .map(|s| if s == goal_idx { 0.0 } else { start })
        .collect();
    let labels = (0..n)
        .map(|s| format!("{}_{}", s % width, s / width))
        .collect();
    Ok(Mdp::new(reward, transition, horizon, initial, discount)?.with_labels(labels))
}

/// Manhattan distance table between the cells of a `width x height` grid.
pub fn manhattan_metric(width: usize, height: usize) -> Vec<Vec<f64>> {
    let n = width * height;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let dx = (i % width).abs_diff(j % width);
                    let dy = (i / width).abs_diff(j / width);
                    (dx + dy) as f64
                })
                .collect()
        })
        .collect()
}

/// Parameters for [`make_random`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMdpConfig {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub discount: f64,
    /// Rewards are drawn uniformly from these levels. A coarse lattice makes
    /// distinct trajectories collide on the same return.
    pub reward_levels: Vec<f64>,
    /// Probability that a transition or initial-state entry is forced to zero.
    pub zero_prob: f64,
}

impl RandomMdpConfig {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize, discount: f64) -> Self {
        RandomMdpConfig {
            num_states,
            num_actions,
            horizon,
            discount,
            reward_levels: vec![-1.0, -0.5, 0.0, 0.5, 1.0, 2.0],
            zero_prob: 0.3,
        }
    }

    /// Draws dimensions with `S <= 4`, `A <= 3`, `H <= 4` and a positive discount.
    pub fn small(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1e5);
        let discount = [0.5, 0.9, 1.0][rng.gen_range(0..3)];
        RandomMdpConfig::new(
            rng.gen_range(1..=4),
            rng.gen_range(1..=3),
            rng.gen_range(1..=4),
            discount,
        )
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, len: usize, zero_prob: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len)
        .map(|_| {
            if rng.gen::<f64>() < zero_prob {
                0.0
            } else {
                rng.gen_range(0.05..1.0)
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[rng.gen_range(0..len)] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Random MDP with deterministic rewards on the configured lattice.
pub fn make_random(cfg: &RandomMdpConfig, seed: u64) -> Result<Mdp> {
    if cfg.num_states == 0 || cfg.num_actions == 0 || cfg.horizon == 0 {
        return Err(Error::InvalidParameter(
            "random MDP dimensions must be positive".into(),
        ));
    }
    if cfg.reward_levels.is_empty() {
        return Err(Error::InvalidParameter("no reward levels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s_n, a_n) = (cfg.num_states, cfg.num_actions);
    let reward = (0..s_n)
        .map(|_| {
            (0..a_n)
                .map(|_| cfg.reward_levels[rng.gen_range(0..cfg.reward_levels.len())])
                .collect()
        })
        .collect();
    let transition = (0..s_n)
        .map(|_| {
            (0..a_n)
                .map(|_| random_simplex(&mut rng, s_n, cfg.zero_prob))
                .collect()
        })
        .collect();
    let initial = random_simplex(&mut rng, s_n, cfg.zero_prob);
    Mdp::new(reward, transition, cfg.horizon, initial, cfg.discount)
}

/// Random non-stationary policy; roughly one row in five is deterministic.
pub fn random_policy(m: &Mdp, seed: u64) -> TabularPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_step = (0..m.horizon)
        .map(|_| {
            (0..m.num_states)
                .map(|_| {
                    if rng.gen::<f64>() < 0.2 {
                        let mut row = vec![0.0; m.num_actions];
                        row[rng.gen_range(0..m.num_actions)] = 1.0;
                        row
                    } else {
                        random_simplex(&mut rng, m.num_actions, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    TabularPolicy::new(per_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate_mdp, PROB_TOL};

    #[test]
    fn chain_has_single_reward_entry() {
        let m = make_chain(4, 3, 1.0, 0.9).unwrap();
        assert_eq!((m.num_states, m.num_actions, m.horizon), (4, 2, 3));
        let nonzero: Vec<_> = (0..4)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .filter(|&(s, a)| m.reward(s, a) != 0.0)
            .collect();
        assert_eq!(nonzero, vec![(2, CHAIN_RIGHT)]);
        assert_eq!(m.initial_dist, vec![1.0, 0.0, 0.0, 0.0]);
        // clipped at both ends
        assert_eq!(m.transition[0][CHAIN_LEFT][0], 1.0);
        assert_eq!(m.transition[3][CHAIN_RIGHT][3], 1.0);
    }

    #[test]
    fn two_state_chain_is_one_step_bandit_like() {
        let m = make_chain(2, 1, 1.0, 1.0).unwrap();
        assert_eq!(m.reward, vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(m.horizon, 1);
    }

    #[test]
    fn chain_rejects_single_state() {
        assert!(matches!(
            make_chain(1, 3, 1.0, 0.9),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn deterministic_grid() {
        let m = make_gridworld(3, 3, GridCell::new(2, 2), 4, 0.9, 0.0).unwrap();
        assert_eq!((m.num_states, m.num_actions), (9, 4));
        for rows in &m.transition {
            for row in rows {
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
            }
        }
        // (1,2) east enters the goal at (2,2)
        assert_eq!(m.reward(7, 1), 1.0);
        assert_eq!(m.initial_dist[8], 0.0);
        assert!((m.initial_dist[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn full_slip_erases_action_influence() {
        let m = make_gridworld(2, 2, GridCell::new(1, 1), 2, 1.0, 1.0).unwrap();
        assert!(m.has_action_independent_transitions());
        assert!(m.has_action_independent_rewards());
    }

    #[test]
    fn slippery_rows_normalized() {
        let m = make_gridworld(5, 5, GridCell::new(4, 4), 3, 0.9, 0.1).unwrap();
        for rows in &m.transition {
            for row in rows {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL);
            }
        }
    }

    #[test]
    fn goal_outside_grid_rejected() {
        assert!(make_gridworld(3, 3, GridCell::new(3, 0), 2, 1.0, 0.0).is_err());
        assert!(make_gridworld(3, 3, GridCell::new(0, 0), 2, 1.0, 1.5).is_err());
    }

    #[test]
    fn manhattan_is_symmetric() {
        let d = manhattan_metric(3, 2);
        assert_eq!(d[0][5], 3.0);
        assert_eq!(d[5][0], 3.0);
        assert_eq!(d[4][4], 0.0);
    }

    #[test]
    fn random_mdps_are_valid_and_reproducible() {
        for seed in 0..50 {
            let cfg = RandomMdpConfig::small(seed);
            let m = make_random(&cfg, seed).unwrap();
            assert!(validate_mdp(&m).is_empty());
            assert_eq!(m, make_random(&cfg, seed).unwrap());
            let pi = random_policy(&m, seed);
            assert!(crate::mdp::validate_policy(&m, &pi).is_empty());
        }
    }
}
