//! Plain simulation of the walk process, compared cell by cell against the
//! exact automaton quantities.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use surprise_core::automata::*;
use surprise_core::Symbol;

struct Tally {
    /// Per-walk visit counts summed, and their squares.
    visits: Vec<(f64, f64)>,
    /// Per-walk emission counts summed, and their squares.
    emissions: Vec<(f64, f64)>,
    /// Token after each non-EOS step out of a state, keyed by that state.
    after_state: Vec<Vec<u64>>,
    /// Token after each occurrence of a symbol, keyed by the symbol.
    after_symbol: Vec<Vec<u64>>,
}

fn simulate(dfa: &Dfa, walks: usize, seed: u64) -> Tally {
    let n = dfa.num_states();
    let d = dfa.dist_len();
    let eos = dfa.eos() as usize;
    let mut t = Tally {
        visits: vec![(0.0, 0.0); n],
        emissions: vec![(0.0, 0.0); d],
        after_state: vec![vec![0; d]; n],
        after_symbol: vec![vec![0; d]; dfa.alphabet_size()],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visit = vec![0.0; n];
    let mut emit = vec![0.0; d];
    for _ in 0..walks {
        let walk = sample_walk(dfa, &mut rng, None);
        assert!(walk.terminated);
        visit.iter_mut().for_each(|v| *v = 0.0);
        emit.iter_mut().for_each(|v| *v = 0.0);
        let mut out: Vec<usize> = walk.tokens.iter().map(|&s| s as usize).collect();
        out.push(eos);
        let mut state = dfa.start();
        for (i, &tok) in out.iter().enumerate() {
            visit[state as usize] += 1.0;
            emit[tok] += 1.0;
            if tok == eos {
                break;
            }
            t.after_state[state as usize][out[i + 1]] += 1;
            t.after_symbol[tok][out[i + 1]] += 1;
            state = dfa.transition(state, tok as u32).unwrap();
        }
        for (acc, v) in t.visits.iter_mut().zip(&visit) {
            acc.0 += v;
            acc.1 += v * v;
        }
        for (acc, v) in t.emissions.iter_mut().zip(&emit) {
            acc.0 += v;
            acc.1 += v * v;
        }
    }
    t
}

/// (cells within 3 standard errors of the exact value, cells checked).
/// A cell with exact probability 0 must have no observations.
fn proportion_cells(exact: &[f64], counts: &[u64]) -> (usize, usize) {
    let total: u64 = counts.iter().sum();
    let mut ok = 0;
    for (&p, &c) in exact.iter().zip(counts) {
        let est = c as f64 / total as f64;
        let good = if p == 0.0 {
            c == 0
        } else {
            (est - p).abs() <= 3.0 * (p * (1.0 - p) / total as f64).sqrt() + 1e-12
        };
        ok += usize::from(good);
    }
    (ok, exact.len())
}

fn mean_cells(exact: &[f64], sums: &[(f64, f64)], walks: usize) -> (usize, usize) {
    let n = walks as f64;
    let mut ok = 0;
    for (&m, &(s, s2)) in exact.iter().zip(sums) {
        let mean = s / n;
        let var = (s2 - n * mean * mean) / (n - 1.0);
        ok += usize::from((mean - m).abs() <= 3.0 * (var / n).sqrt() + 1e-12);
    }
    (ok, exact.len())
}

fn shortest_prefixes(dfa: &Dfa) -> BTreeMap<StateId, Vec<Symbol>> {
    let mut found = BTreeMap::from([(dfa.start(), vec![])]);
    let mut queue = VecDeque::from([dfa.start()]);
    while let Some(s) = queue.pop_front() {
        for &(sym, dst) in dfa.out_edges(s) {
            if !found.contains_key(&dst) {
                let mut p = found[&s].clone();
                p.push(sym);
                found.insert(dst, p);
                queue.push_back(dst);
            }
        }
    }
    found
}

/// Cells within 3 standard errors, as (ok, checked).
#[derive(Debug, Default, Clone, Copy)]
pub struct Score {
    pub occupancy: (usize, usize),
    pub all: (usize, usize),
}

impl Score {
    pub fn occupancy_rate(&self) -> f64 {
        self.occupancy.0 as f64 / self.occupancy.1 as f64
    }

    pub fn rate(&self) -> f64 {
        self.all.0 as f64 / self.all.1 as f64
    }
}

/// Occupancy, emission means, local and global next-token distributions.
pub fn score(dfa: &Dfa, walks: usize, seed: u64) -> Score {
    let tally = simulate(dfa, walks, seed);
    let mut ok = 0;
    let mut cells = 0;
    let mut add = |(a, b): (usize, usize)| {
        ok += a;
        cells += b;
    };

    let mu = occupancy_measure(dfa).unwrap();
    let occupancy = mean_cells(&mu, &tally.visits, walks);
    add(occupancy);

    add(mean_cells(&emission_marginal(dfa).unwrap(), &tally.emissions, walks));

    for sym in dfa.used_symbols() {
        let exact = ground_truth_local_with(dfa, &mu, sym).unwrap();
        add(proportion_cells(exact.probs(), &tally.after_symbol[sym as usize]));
    }
    for (state, prefix) in shortest_prefixes(dfa) {
        if dfa.out_edges(state).is_empty() {
            assert!(ground_truth_global(dfa, &prefix).is_err());
            continue;
        }
        let exact = ground_truth_global(dfa, &prefix).unwrap();
        add(proportion_cells(exact.probs(), &tally.after_state[state as usize]));
    }
    Score {
        occupancy,
        all: (ok, cells),
    }
}
