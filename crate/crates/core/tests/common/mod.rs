#![allow(dead_code)]

use credit_lens::mdp::{make_random, random_policy, Mdp, RandomMdpConfig, TabularPolicy};

/// The shared random-instance suite: small MDPs (S ≤ 4, A ≤ 3, H ≤ 4) with
/// deterministic rewards, each paired with a random policy.
pub fn random_instances(count: u64) -> Vec<(u64, Mdp, TabularPolicy)> {
    (0..count)
        .map(|seed| {
            let m = make_random(&RandomMdpConfig::small(seed), seed).expect("valid config");
            let pi = random_policy(&m, seed.wrapping_mul(0x9e37_79b9) ^ 0xa5a5);
            (seed, m, pi)
        })
        .collect()
}
