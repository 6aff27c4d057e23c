mod common;

use credit_lens::credit::{
    check_analysis, directed_info_credit, hca_credit, hindsight_table, history_cmi,
    information_sparsity, initial_state_information, leave_one_out_cmi, stepwise_reward_entropy,
    Analysis, Verdict,
};
use credit_lens::engine::{DEFAULT_BUDGET, DEFAULT_MERGE_TOL};
use credit_lens::mdp::{
    make_gridworld, make_random, random_policy, uniform_policy, GridCell, RandomMdpConfig,
};

fn analyze(m: &credit_lens::mdp::Mdp, pi: &credit_lens::mdp::TabularPolicy) -> Analysis {
    Analysis::new(m, pi, DEFAULT_BUDGET, DEFAULT_MERGE_TOL).unwrap()
}

#[test]
fn checker_has_no_assumption_satisfied_discrepancies() {
    for (seed, m, pi) in common::random_instances(100) {
        for v in check_analysis(&analyze(&m, &pi), 1e-9).unwrap() {
            assert!(!v.is_failure(), "seed {seed}: {v:?}");
            assert_eq!(
                v.verdict == Verdict::EqualWithinTol,
                v.abs_diff <= v.tolerance
            );
        }
    }
}

#[test]
fn first_step_hindsight_gap_is_the_initial_state_information() {
    // hca(1) + I(Z; S_1) = I(Z; τ_1) for every horizon
    for (seed, m, pi) in common::random_instances(100) {
        let an = analyze(&m, &pi);
        let j = an.joint().unwrap();
        let ht = hindsight_table(j, DEFAULT_MERGE_TOL).unwrap();
        let lhs = hca_credit(j, &ht, &pi, 0).unwrap().value()
            + initial_state_information(j).unwrap().value();
        let rhs = history_cmi(j, 0).unwrap().value();
        assert!((lhs - rhs).abs() <= 1e-9, "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn hindsight_ratio_matches_history_at_horizon_one_with_a_point_start() {
    let mut checked = 0;
    for seed in 0..200u64 {
        let cfg = RandomMdpConfig {
            horizon: 1,
            ..RandomMdpConfig::small(seed)
        };
        let mut m = make_random(&cfg, seed).unwrap();
        m.initial_dist = (0..m.num_states)
            .map(|s| if s == 0 { 1.0 } else { 0.0 })
            .collect();
        let pi = random_policy(&m, seed);
        let an = analyze(&m, &pi);
        let j = an.joint().unwrap();
        let ht = hindsight_table(j, DEFAULT_MERGE_TOL).unwrap();
        let gap = hca_credit(j, &ht, &pi, 0).unwrap().value() - history_cmi(j, 0).unwrap().value();
        assert!(gap.abs() <= 1e-9, "seed {seed}: {gap}");
        checked += 1;
    }
    assert_eq!(checked, 200);
}

#[test]
fn leave_one_out_equals_reward_entropy_with_memoryless_transitions() {
    for (seed, mut m, pi) in common::random_instances(60) {
        let row = m.transition[0][0].clone();
        m.transition
            .iter_mut()
            .flatten()
            .for_each(|r| *r = row.clone());
        if m.discount == 0.0 {
            continue;
        }
        let an = analyze(&m, &pi);
        let j = an.joint().unwrap();
        for h in 0..m.horizon {
            let gap = leave_one_out_cmi(j, h).unwrap().value()
                - stepwise_reward_entropy(j, h).unwrap().value();
            assert!(gap.abs() <= 1e-9, "seed {seed} h {h}: {gap}");
        }
    }
}

#[test]
fn full_slip_gridworld_check_passes_with_diagnostic_rows() {
    let m = make_gridworld(3, 3, GridCell::new(2, 2), 3, 0.9, 1.0).unwrap();
    let verdicts = check_analysis(&analyze(&m, &uniform_policy(&m)), 1e-9).unwrap();
    let prop1: Vec<_> = verdicts.iter().filter(|v| v.id == "prop1").collect();
    assert!(prop1.iter().all(|v| v
        .assumption_flags
        .iter()
        .any(|f| f == "action_independent_transitions")));
    assert!(prop1.iter().all(|v| !v.is_failure()));
    // only the last step is covered by the identity on this instance
    assert!(prop1.last().unwrap().assumption_satisfied);
    assert!(prop1[..2]
        .iter()
        .all(|v| !v.assumption_satisfied && v.verdict == Verdict::Discrepant));
}

#[test]
fn action_free_dynamics_and_rewards_carry_no_information() {
    for (seed, mut m, pi) in common::random_instances(60) {
        for s in 0..m.num_states {
            let (t, r) = (m.transition[s][0].clone(), m.reward[s][0]);
            for a in 0..m.num_actions {
                m.transition[s][a] = t.clone();
                m.reward[s][a] = r;
            }
        }
        let v = information_sparsity(&analyze(&m, &pi)).unwrap().value();
        assert!(v <= 1e-12, "seed {seed}: {v}");
    }
}

#[test]
fn reversed_definition_matches_directed_credit() {
    for (seed, m, pi) in common::random_instances(100) {
        let an = analyze(&m, &pi);
        let dc = directed_info_credit(an.joint().unwrap()).unwrap();
        assert!(
            (dc.directed.value() - dc.reversed_definition.value()).abs() <= 1e-9,
            "seed {seed}"
        );
        assert!(dc.forward_definition.value() >= 0.0);
    }
}
