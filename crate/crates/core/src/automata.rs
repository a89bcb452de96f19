//! Random deterministic finite automata, uniform random walks over them, and
//! the exact next-token distributions they induce.
//!
//! A walk starts at the start state and, at every step, picks uniformly among
//! the state's out-edges plus termination (EOS) when the state is accepting.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::CategoricalDist;
use crate::error::{Error, Result};
use crate::seq::{SurprisingContext, Symbol, TokenSeq};

pub type StateId = u32;

/// Attempts made by [`generate_dfa`] before giving up.
pub const MAX_GENERATION_ATTEMPTS: usize = 10_000;

/// Default cap on walk length used for corpora.
pub const DEFAULT_MAX_WALK_LEN: usize = 64;

/// Walk resamples attempted by [`make_surprising_context`].
pub const MAX_CONTEXT_RETRIES: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfaConfig {
    #[serde(default = "defaults::num_states")]
    pub num_states: usize,
    #[serde(default = "defaults::alphabet_size")]
    pub alphabet_size: usize,
    #[serde(default = "defaults::num_neighbors")]
    pub num_neighbors: usize,
    #[serde(default = "defaults::num_symbol_uses")]
    pub num_symbol_uses: usize,
    #[serde(default = "defaults::accept_prob")]
    pub accept_prob: f64,
    pub seed: u64,
}

mod defaults {
    pub fn num_states() -> usize {
        8
    }
    pub fn alphabet_size() -> usize {
        128
    }
    pub fn num_neighbors() -> usize {
        4
    }
    pub fn num_symbol_uses() -> usize {
        4
    }
    pub fn accept_prob() -> f64 {
        0.5
    }
}

impl DfaConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            num_states: defaults::num_states(),
            alphabet_size: defaults::alphabet_size(),
            num_neighbors: defaults::num_neighbors(),
            num_symbol_uses: defaults::num_symbol_uses(),
            accept_prob: defaults::accept_prob(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_states", self.num_states),
            ("alphabet_size", self.alphabet_size),
            ("num_neighbors", self.num_neighbors),
            ("num_symbol_uses", self.num_symbol_uses),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.accept_prob) {
            return Err(Error::InvalidConfig(format!(
                "accept_prob {} outside [0, 1]",
                self.accept_prob
            )));
        }
        if self.num_states > StateId::MAX as usize || self.alphabet_size >= Symbol::MAX as usize {
            return Err(Error::InvalidConfig("automaton too large".into()));
        }
        Ok(())
    }

    /// Out-symbols each state may carry.
    pub fn symbols_per_state(&self) -> usize {
        self.alphabet_size.div_ceil(self.num_states)
    }
}

/// A deterministic finite automaton over symbols `0..alphabet_size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dfa {
    num_states: usize,
    alphabet_size: usize,
    start: StateId,
    accepting: BTreeSet<StateId>,
    edges: BTreeMap<(StateId, Symbol), StateId>,
    /// Out-edges per state sorted by symbol; derived from `edges`.
    out: Vec<Vec<(Symbol, StateId)>>,
}

/// On-disk layout of a [`Dfa`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DfaJson {
    num_states: usize,
    alphabet_size: usize,
    start: StateId,
    accepting: Vec<StateId>,
    edges: Vec<[u32; 3]>,
}

impl Serialize for Dfa {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DfaJson {
            num_states: self.num_states,
            alphabet_size: self.alphabet_size,
            start: self.start,
            accepting: self.accepting.iter().copied().collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(src, sym), &dst)| [src, sym, dst])
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dfa {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = DfaJson::deserialize(d)?;
        let mut edges = BTreeMap::new();
        for [src, sym, dst] in raw.edges {
            if edges.insert((src, sym), dst).is_some() {
                return Err(serde::de::Error::custom(format!(
                    "duplicate edge for state {src}, symbol {sym}"
                )));
            }
        }
        Dfa::new(
            raw.num_states,
            raw.alphabet_size,
            raw.start,
            raw.accepting.into_iter().collect(),
            edges,
        )
        .map_err(serde::de::Error::custom)
    }
}

impl Dfa {
    /// Builds an automaton, checking ids are in range. Structural properties
    /// (reachability, stranding) are checked by [`Dfa::check_invariants`].
    pub fn new(
        num_states: usize,
        alphabet_size: usize,
        start: StateId,
        accepting: BTreeSet<StateId>,
        edges: BTreeMap<(StateId, Symbol), StateId>,
    ) -> Result<Self> {
        let state_ok = |s: StateId| (s as usize) < num_states;
        if !state_ok(start) {
            return Err(Error::Invariant(format!("start state {start} out of range")));
        }
        if let Some(&s) = accepting.iter().find(|&&s| !state_ok(s)) {
            return Err(Error::Invariant(format!("accepting state {s} out of range")));
        }
        let mut out = vec![Vec::new(); num_states];
        for (&(src, sym), &dst) in &edges {
            if !state_ok(src) || !state_ok(dst) || sym as usize >= alphabet_size {
                return Err(Error::Invariant(format!(
                    "edge ({src}, {sym}, {dst}) out of range"
                )));
            }
            out[src as usize].push((sym, dst));
        }
        Ok(Self {
            num_states,
            alphabet_size,
            start,
            accepting,
            edges,
            out,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    /// Size of next-token distributions: alphabet plus EOS.
    pub fn dist_len(&self) -> usize {
        self.alphabet_size + 1
    }

    pub fn eos(&self) -> Symbol {
        self.alphabet_size as Symbol
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn accepting(&self) -> &BTreeSet<StateId> {
        &self.accepting
    }

    pub fn is_accepting(&self, state: StateId) -> bool {
        self.accepting.contains(&state)
    }

    pub fn edges(&self) -> &BTreeMap<(StateId, Symbol), StateId> {
        &self.edges
    }

    pub fn transition(&self, state: StateId, symbol: Symbol) -> Option<StateId> {
        self.edges.get(&(state, symbol)).copied()
    }

    /// Out-edges of `state`, sorted by symbol.
    pub fn out_edges(&self, state: StateId) -> &[(Symbol, StateId)] {
        &self.out[state as usize]
    }

    /// Number of choices a walk has at `state`, counting termination.
    pub fn num_options(&self, state: StateId) -> usize {
        self.out[state as usize].len() + usize::from(self.is_accepting(state))
    }

    /// States reachable from the start state (including it).
    pub fn reachable(&self) -> BTreeSet<StateId> {
        let mut seen = BTreeSet::from([self.start]);
        let mut queue = VecDeque::from([self.start]);
        while let Some(s) = queue.pop_front() {
            for &(_, dst) in self.out_edges(s) {
                if seen.insert(dst) {
                    queue.push_back(dst);
                }
            }
        }
        seen
    }

    /// Symbols labeling at least one edge.
    pub fn used_symbols(&self) -> BTreeSet<Symbol> {
        self.edges.keys().map(|&(_, sym)| sym).collect()
    }

    /// Checks reachability of every edge endpoint and that no reachable
    /// state strands a walk.
    pub fn check_invariants(&self) -> Result<()> {
        let reachable = self.reachable();
        for &(src, sym) in self.edges.keys() {
            if !reachable.contains(&src) {
                return Err(Error::Invariant(format!(
                    "edge ({src}, {sym}) leaves unreachable state"
                )));
            }
        }
        for &s in &reachable {
            if self.num_options(s) == 0 {
                return Err(Error::Invariant(format!(
                    "reachable state {s} is non-accepting with no out-edges"
                )));
            }
        }
        Ok(())
    }

    /// Checks that from every reachable state some accepting state is
    /// reachable, i.e. the uniform walk terminates with probability 1.
    pub fn check_terminating(&self) -> Result<()> {
        let reachable = self.reachable();
        // Backward search from accepting states over reversed edges.
        let mut can_finish: BTreeSet<StateId> = self
            .accepting
            .iter()
            .copied()
            .filter(|s| reachable.contains(s))
            .collect();
        let mut changed = true;
        while changed {
            changed = false;
            for &s in &reachable {
                if !can_finish.contains(&s)
                    && self.out_edges(s).iter().any(|(_, d)| can_finish.contains(d))
                {
                    can_finish.insert(s);
                    changed = true;
                }
            }
        }
        match reachable.iter().find(|s| !can_finish.contains(s)) {
            Some(s) => Err(Error::NonTerminating(format!(
                "no accepting state reachable from state {s}"
            ))),
            None => Ok(()),
        }
    }
}

/// Generates a random automaton. Each state samples `num_neighbors` distinct
/// successor states and deals its `⌈alphabet_size / num_states⌉` out-symbols
/// round-robin across them, drawing each symbol uniformly among those with
/// remaining global budget. Candidates that end up empty, stranding, or
/// non-terminating after pruning are regenerated.
pub fn generate_dfa(config: &DfaConfig) -> Result<Dfa> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let quota = config.symbols_per_state();
    let n_neighbors = config.num_neighbors.min(config.num_states);
    let mut last_reason = String::new();

    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut budget = vec![config.num_symbol_uses; config.alphabet_size];
        let mut edges = BTreeMap::new();
        let mut accepting = BTreeSet::new();

        for state in 0..config.num_states as StateId {
            let neighbors: Vec<StateId> = sample_indices(&mut rng, config.num_states, n_neighbors)
                .into_iter()
                .map(|s| s as StateId)
                .collect();
            let mut used = vec![false; config.alphabet_size];
            for slot in 0..quota {
                let available: Vec<Symbol> = (0..config.alphabet_size)
                    .filter(|&s| budget[s] > 0 && !used[s])
                    .map(|s| s as Symbol)
                    .collect();
                if available.is_empty() {
                    break;
                }
                let symbol = available[rng.gen_range(0..available.len())];
                edges.insert((state, symbol), neighbors[slot % neighbors.len()]);
                used[symbol as usize] = true;
                budget[symbol as usize] -= 1;
            }
            if rng.gen_bool(config.accept_prob) {
                accepting.insert(state);
            }
        }

        let dfa = prune_unreachable(&Dfa::new(
            config.num_states,
            config.alphabet_size,
            0,
            accepting,
            edges,
        )?);
        if dfa.edges.is_empty() {
            last_reason = "start state has no out-edges after pruning".into();
            continue;
        }
        if let Err(e) = dfa.check_invariants() {
            last_reason = e.to_string();
            continue;
        }
        if let Err(e) = dfa.check_terminating() {
            last_reason = e.to_string();
            continue;
        }
        return Ok(dfa);
    }
    Err(Error::GenerationFailed {
        attempts: MAX_GENERATION_ATTEMPTS,
        reason: last_reason,
    })
}

/// Drops every edge whose source is unreachable from the start state.
pub fn prune_unreachable(dfa: &Dfa) -> Dfa {
    let reachable = dfa.reachable();
    let edges = dfa
        .edges
        .iter()
        .filter(|((src, _), _)| reachable.contains(src))
        .map(|(&k, &v)| (k, v))
        .collect();
    Dfa::new(
        dfa.num_states,
        dfa.alphabet_size,
        dfa.start,
        dfa.accepting.clone(),
        edges,
    )
    .expect("pruning preserves id ranges")
}

/// Runs the automaton from its start state.
pub fn run(dfa: &Dfa, tokens: &[Symbol]) -> Result<StateId> {
    let mut state = dfa.start;
    for (index, &symbol) in tokens.iter().enumerate() {
        state = dfa
            .transition(state, symbol)
            .ok_or(Error::Rejected { index, symbol })?;
    }
    Ok(state)
}

/// Uniform distribution over the out-symbols of `state`, plus EOS when accepting.
pub fn next_token_distribution(dfa: &Dfa, state: StateId) -> Result<CategoricalDist> {
    let options = dfa.num_options(state);
    if options == 0 {
        return Err(Error::Invariant(format!(
            "state {state} has no out-edges and is not accepting"
        )));
    }
    let p = 1.0 / options as f64;
    let mut probs = vec![0.0; dfa.dist_len()];
    for &(sym, _) in dfa.out_edges(state) {
        probs[sym as usize] = p;
    }
    if dfa.is_accepting(state) {
        probs[dfa.alphabet_size] = p;
    }
    CategoricalDist::new(probs)
}

/// Samples one uniform random walk. With `max_len`, a walk reaching that
/// many tokens stops without EOS.
pub fn sample_walk<R: Rng + ?Sized>(dfa: &Dfa, rng: &mut R, max_len: Option<usize>) -> TokenSeq {
    let mut state = dfa.start;
    let mut tokens = Vec::new();
    loop {
        if max_len.is_some_and(|m| tokens.len() >= m) {
            return TokenSeq::new(tokens, false);
        }
        let out = dfa.out_edges(state);
        let options = out.len() + usize::from(dfa.is_accepting(state));
        debug_assert!(options > 0, "walk stranded at state {state}");
        let pick = rng.gen_range(0..options);
        if pick == out.len() {
            return TokenSeq::new(tokens, true);
        }
        let (sym, dst) = out[pick];
        tokens.push(sym);
        state = dst;
    }
}

/// Sub-stochastic state-transition matrix of the uniform walk, row = source.
fn transition_matrix(dfa: &Dfa) -> Vec<Vec<f64>> {
    let n = dfa.num_states;
    let mut p = vec![vec![0.0; n]; n];
    for s in 0..n as StateId {
        let options = dfa.num_options(s);
        if options == 0 {
            continue;
        }
        for &(_, dst) in dfa.out_edges(s) {
            p[s as usize][dst as usize] += 1.0 / options as f64;
        }
    }
    p
}

/// Expected number of visits to each state per walk: solves
/// `μ = e_start + μP` restricted to reachable states.
pub fn occupancy_measure(dfa: &Dfa) -> Result<Vec<f64>> {
    dfa.check_invariants()?;
    dfa.check_terminating()?;
    let reachable: Vec<StateId> = dfa.reachable().into_iter().collect();
    let index: BTreeMap<StateId, usize> =
        reachable.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let p = transition_matrix(dfa);
    let m = reachable.len();

    // (I - Pᵀ) μ = e_start over the reachable block.
    let mut a = vec![vec![0.0; m + 1]; m];
    for (i, &si) in reachable.iter().enumerate() {
        a[i][i] += 1.0;
        for (j, &sj) in reachable.iter().enumerate() {
            a[i][j] -= p[sj as usize][si as usize];
        }
    }
    a[index[&dfa.start]][m] = 1.0;
    let mu_reach = solve_augmented(a)
        .ok_or_else(|| Error::NonTerminating("occupancy system is singular".into()))?;

    let mut mu = vec![0.0; dfa.num_states];
    for (i, &s) in reachable.iter().enumerate() {
        if !(mu_reach[i].is_finite() && mu_reach[i] >= -1e-12) {
            return Err(Error::NonTerminating(format!(
                "occupancy of state {s} is {}",
                mu_reach[i]
            )));
        }
        mu[s as usize] = mu_reach[i].max(0.0);
    }
    Ok(mu)
}

/// Gaussian elimination with partial pivoting on an `m × (m+1)` augmented matrix.
fn solve_augmented(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..m {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..=m {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    Some((0..m).map(|i| a[i][m] / a[i][i]).collect())
}

/// Expected number of emissions of each token (alphabet plus EOS) per walk.
pub fn emission_marginal(dfa: &Dfa) -> Result<Vec<f64>> {
    let mu = occupancy_measure(dfa)?;
    let mut counts = vec![0.0; dfa.dist_len()];
    for s in 0..dfa.num_states as StateId {
        let options = dfa.num_options(s);
        if options == 0 || mu[s as usize] == 0.0 {
            continue;
        }
        let w = mu[s as usize] / options as f64;
        for &(sym, _) in dfa.out_edges(s) {
            counts[sym as usize] += w;
        }
        if dfa.is_accepting(s) {
            counts[dfa.alphabet_size] += w;
        }
    }
    Ok(counts)
}

/// Exact unigram distribution of the walk process (EOS included).
pub fn ground_truth_unigram(dfa: &Dfa) -> Result<CategoricalDist> {
    CategoricalDist::from_weights(emission_marginal(dfa)?)
}

/// Smallest probability any in-support step of the walk can have.
pub fn min_step_probability(dfa: &Dfa) -> f64 {
    dfa.reachable()
        .into_iter()
        .map(|s| dfa.num_options(s))
        .filter(|&o| o > 0)
        .map(|o| 1.0 / o as f64)
        .fold(1.0, f64::min)
}

/// Samples a walk prefix `X_G` and appends a symbol `X_L` that labels no
/// out-edge of the state reached. `X_L` is drawn uniformly among symbols
/// that occur somewhere in the language, so it is marginally likely while
/// impossible in context. Walks ending in a state with no continuation, or
/// with every occurring symbol producible, are resampled.
pub fn make_surprising_context<R: Rng + ?Sized>(
    dfa: &Dfa,
    rng: &mut R,
    max_len: Option<usize>,
) -> Result<SurprisingContext> {
    let used = dfa.used_symbols();
    let tau = min_step_probability(dfa);
    for _ in 0..MAX_CONTEXT_RETRIES {
        let walk = sample_walk(dfa, rng, max_len);
        let state = run(dfa, &walk.tokens)?;
        let out = dfa.out_edges(state);
        if out.is_empty() {
            continue;
        }
        let candidates: Vec<Symbol> = used
            .iter()
            .copied()
            .filter(|&sym| dfa.transition(state, sym).is_none())
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let local_token = candidates[rng.gen_range(0..candidates.len())];
        // True probability is exactly zero, so any positive threshold works;
        // record the smallest in-support step probability.
        return Ok(SurprisingContext {
            global_ctx: walk.tokens,
            local_token,
            epsilon: tau,
            tau,
        });
    }
    Err(Error::RetriesExhausted(MAX_CONTEXT_RETRIES))
}

/// Probability the automaton assigns to `symbol` right after `prefix`
/// (zero when the prefix is rejected).
pub fn true_next_probability(dfa: &Dfa, prefix: &[Symbol], symbol: Symbol) -> f64 {
    match run(dfa, prefix) {
        Ok(state) => match next_token_distribution(dfa, state) {
            Ok(d) => d.prob(symbol as usize),
            Err(_) => 0.0,
        },
        Err(_) => 0.0,
    }
}

/// Next-token distribution after `X_G` with the following token marginalized
/// out: uniform over the non-EOS out-symbols `v` of the state reached, each
/// followed by the distribution of the state `v` leads to.
pub fn ground_truth_global(dfa: &Dfa, global_ctx: &[Symbol]) -> Result<CategoricalDist> {
    let state = run(dfa, global_ctx)?;
    let out = dfa.out_edges(state);
    if out.is_empty() {
        return Err(Error::Invariant(format!(
            "state {state} has no continuation past the global context"
        )));
    }
    let w = 1.0 / out.len() as f64;
    let mut probs = vec![0.0; dfa.dist_len()];
    for &(_, dst) in out {
        let next = next_token_distribution(dfa, dst)?;
        for (acc, p) in probs.iter_mut().zip(next.probs()) {
            *acc += w * p;
        }
    }
    CategoricalDist::from_weights(probs)
}

/// Next-token distribution given only the previous token: a mixture over all
/// edges labeled `local_token`, weighted by how often the walk traverses
/// each edge.
pub fn ground_truth_local(dfa: &Dfa, local_token: Symbol) -> Result<CategoricalDist> {
    let mu = occupancy_measure(dfa)?;
    ground_truth_local_with(dfa, &mu, local_token)
}

/// [`ground_truth_local`] with a precomputed occupancy measure.
pub fn ground_truth_local_with(
    dfa: &Dfa,
    occupancy: &[f64],
    local_token: Symbol,
) -> Result<CategoricalDist> {
    let mut probs = vec![0.0; dfa.dist_len()];
    let mut total = 0.0;
    for (&(src, sym), &dst) in dfa.edges() {
        if sym != local_token {
            continue;
        }
        let weight = occupancy[src as usize] / dfa.num_options(src) as f64;
        if weight == 0.0 {
            continue;
        }
        total += weight;
        let next = next_token_distribution(dfa, dst)?;
        for (acc, p) in probs.iter_mut().zip(next.probs()) {
            *acc += weight * p;
        }
    }
    if total == 0.0 {
        return Err(Error::Invariant(format!(
            "symbol {local_token} labels no reachable edge"
        )));
    }
    CategoricalDist::from_weights(probs)
}
