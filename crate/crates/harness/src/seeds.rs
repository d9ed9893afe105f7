use attn_core::cmaes::mix64;

/// Seed streams that never overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SeedDomain {
    Train,
    Eval,
    Analysis,
}

impl SeedDomain {
    fn tag(self) -> u64 {
        match self {
            SeedDomain::Train => 0x7472_6169_6e00_0001,
            SeedDomain::Eval => 0x6576_616c_0000_0002,
            SeedDomain::Analysis => 0x616e_6c79_0000_0003,
        }
    }
}

/// Episode seed for `(run seed, domain, generation, individual, rollout)`.
pub fn derive_seed(run_seed: u64, domain: SeedDomain, generation: u64, individual: u64, rollout: u64) -> u64 {
    let mut h = mix64(run_seed ^ domain.tag());
    for part in [generation, individual, rollout] {
        h = mix64(h ^ mix64(part.wrapping_add(0x9e37_79b9)));
    }
    h
}

/// Seeds for `count` episodes in `domain`, shared by every generation.
pub fn episode_seeds(run_seed: u64, domain: SeedDomain, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(run_seed, domain, 0, 0, i)).collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn domains_and_indices_do_not_collide() {
        let mut seen = HashSet::new();
        for domain in [SeedDomain::Train, SeedDomain::Eval, SeedDomain::Analysis] {
            for g in 0..20 {
                for i in 0..20 {
                    for r in 0..5 {
                        assert!(seen.insert(derive_seed(3, domain, g, i, r)));
                    }
                }
            }
        }
        assert_ne!(derive_seed(1, SeedDomain::Train, 0, 0, 0), derive_seed(2, SeedDomain::Train, 0, 0, 0));
    }
}
