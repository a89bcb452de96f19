//! Exact automaton quantities against plain simulation of the walk process.

use std::collections::BTreeMap;

use surprise_core::automata::*;

#[path = "support/mc.rs"]
mod mc;

const WALKS: usize = 200_000;

fn check(dfa: &Dfa, seed: u64) {
    let s = mc::score(dfa, WALKS, seed);
    assert!(s.occupancy_rate() >= 0.95, "occupancy {:?}", s.occupancy);
    assert!(s.rate() >= 0.95, "{:?} cells within 3 SE", s.all);
}

#[test]
fn small_alphabet_automata_match_simulation() {
    for seed in 0..3 {
        let mut cfg = DfaConfig::with_seed(seed);
        cfg.alphabet_size = 12;
        check(&generate_dfa(&cfg).unwrap(), 100 + seed);
    }
}

#[test]
fn default_automaton_matches_simulation() {
    check(&generate_dfa(&DfaConfig::with_seed(7)).unwrap(), 8);
}

#[test]
fn hand_built_cycle_has_closed_form_occupancy() {
    // 0 -a-> 1 -b-> 0, only state 1 accepts: visits to 1 are geometric
    // with stop probability 1/2, and every visit to 1 follows one to 0.
    let dfa = Dfa::new(
        2,
        2,
        0,
        [1].into(),
        BTreeMap::from([((0, 0), 1), ((1, 1), 0)]),
    )
    .unwrap();
    let mu = occupancy_measure(&dfa).unwrap();
    assert!((mu[0] - 2.0).abs() < 1e-12 && (mu[1] - 2.0).abs() < 1e-12, "{mu:?}");
    let local_a = ground_truth_local(&dfa, 0).unwrap();
    assert_eq!(local_a.probs(), &[0.0, 0.5, 0.5]);
    let global = ground_truth_global(&dfa, &[]).unwrap();
    assert_eq!(global.probs(), &[0.0, 0.5, 0.5]);
}
