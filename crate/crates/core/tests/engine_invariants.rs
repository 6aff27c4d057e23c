mod common;

use credit_lens::engine::{
    categorical_return_dp, count_trajectories, enumerate_trajectories, occupancy,
    occupancy_forward, rollout_return_distribution, value_functions, ReturnIndex, DEFAULT_BUDGET,
    DEFAULT_MERGE_TOL,
};
use credit_lens::Error;

#[test]
fn enumeration_is_a_distribution_with_the_counted_size() {
    for (seed, m, pi) in common::random_instances(100) {
        let t = enumerate_trajectories(&m, &pi, DEFAULT_BUDGET).unwrap();
        assert_eq!(t.len() as u128, count_trajectories(&m, &pi), "seed {seed}");
        assert!((t.total_probability() - 1.0).abs() < 1e-9, "seed {seed}");
        assert!(t.probs().iter().all(|&p| p > 0.0));
    }
}

#[test]
fn returns_follow_the_backward_recursion() {
    for (seed, m, pi) in common::random_instances(100) {
        let t = enumerate_trajectories(&m, &pi, DEFAULT_BUDGET).unwrap();
        for r in t.rows() {
            let last = m.horizon - 1;
            assert_eq!(r.returns[last], r.rewards[last]);
            for h in 0..last {
                let expect = r.rewards[h] + m.discount * r.returns[h + 1];
                assert_eq!(r.returns[h], expect, "seed {seed}");
            }
        }
    }
}

#[test]
fn budget_refusal_reports_the_exact_count() {
    for (_, m, pi) in common::random_instances(30) {
        let count = count_trajectories(&m, &pi);
        if count < 2 {
            continue;
        }
        let budget = (count - 1) as u64;
        match enumerate_trajectories(&m, &pi, budget) {
            Err(Error::BudgetExceeded {
                count: c,
                budget: b,
            }) => assert_eq!((c, b), (count, budget)),
            other => panic!("expected refusal, got {other:?}"),
        }
    }
}

#[test]
fn enumerated_and_forward_occupancy_agree() {
    for (seed, m, pi) in common::random_instances(100) {
        let t = enumerate_trajectories(&m, &pi, DEFAULT_BUDGET).unwrap();
        let a = occupancy(&t);
        let b = occupancy_forward(&m, &pi).unwrap();
        assert!((a.normalizer - m.discount_mass()).abs() < 1e-12);
        for h in 0..m.horizon {
            for s in 0..m.num_states {
                for act in 0..m.num_actions {
                    let (x, y) = (a.weight(h, s, act), b.weight(h, s, act));
                    assert!(
                        (x - y).abs() < 1e-12,
                        "seed {seed} ({h},{s},{act}): {x} vs {y}"
                    );
                }
            }
        }
    }
}

#[test]
fn enumerated_means_match_bellman_q() {
    for (seed, m, pi) in common::random_instances(100) {
        let t = enumerate_trajectories(&m, &pi, DEFAULT_BUDGET).unwrap();
        let index = ReturnIndex::build(&t, DEFAULT_MERGE_TOL);
        let vf = value_functions(&m, &pi).unwrap();
        for (h, s, a) in index.cells() {
            let mean = index.get(h, s, a).unwrap().mean();
            assert!((mean - vf.q[h][s][a]).abs() < 1e-9, "seed {seed}");
        }
    }
}

#[test]
fn rollouts_reproduce_enumerated_conditionals() {
    for (seed, m, pi) in common::random_instances(60) {
        let t = enumerate_trajectories(&m, &pi, DEFAULT_BUDGET).unwrap();
        let index = ReturnIndex::build(&t, DEFAULT_MERGE_TOL);
        for (h, s, a) in index.cells() {
            let exact = index.get(h, s, a).unwrap();
            let rolled = rollout_return_distribution(&m, &pi, h, s, a, DEFAULT_MERGE_TOL).unwrap();
            assert!(
                exact.wasserstein1(&rolled) < 1e-9,
                "seed {seed} ({h},{s},{a})"
            );
            assert!(exact.kl(&rolled).unwrap().value() < 1e-9);
        }
    }
}

#[test]
fn categorical_distributions_are_normalized() {
    for (seed, m, pi) in common::random_instances(40) {
        let cat = categorical_return_dp(&m, &pi, 51).unwrap();
        for h in 0..m.horizon {
            for s in 0..m.num_states {
                for a in 0..m.num_actions {
                    let mass: f64 = cat.probs(h, s, a).iter().sum();
                    assert!((mass - 1.0).abs() < 1e-9, "seed {seed}");
                }
            }
        }
    }
}
