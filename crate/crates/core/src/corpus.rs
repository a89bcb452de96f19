//! Token-stream statistics and surprising-context construction for generic
//! pre-tokenized corpora.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::CategoricalDist;
use crate::error::{Error, Result};
use crate::model::NextTokenModel;
use crate::seq::{SurprisingContext, Symbol, TokenSeq};

/// Truncation points tried per requested context before giving up.
pub const MAX_TRUNCATION_RETRIES: usize = 1_000;

/// Unigram and bigram counts. EOS (id `vocab_size`) is counted as a
/// next-token event: it appears in `eos_count` and as the second component
/// of bigram keys, never in `unigram`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    vocab_size: usize,
    unigram: BTreeMap<Symbol, u64>,
    eos_count: u64,
    bigram: BTreeMap<(Symbol, Symbol), u64>,
    /// Σ over next tokens of `bigram[(prev, next)]`, per `prev`.
    context_totals: BTreeMap<Symbol, u64>,
    total_tokens: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountTableJson {
    vocab_size: usize,
    total_tokens: u64,
    eos_count: u64,
    unigram: Vec<[u64; 2]>,
    bigram: Vec<[u64; 3]>,
}

impl Serialize for CountTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CountTableJson {
            vocab_size: self.vocab_size,
            total_tokens: self.total_tokens,
            eos_count: self.eos_count,
            unigram: self.unigram.iter().map(|(&t, &c)| [t as u64, c]).collect(),
            bigram: self
                .bigram
                .iter()
                .map(|(&(a, b), &c)| [a as u64, b as u64, c])
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CountTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = CountTableJson::deserialize(d)?;
        let mut table = CountTable::empty(raw.vocab_size);
        for [t, c] in raw.unigram {
            table.unigram.insert(t as Symbol, c);
        }
        table.eos_count = raw.eos_count;
        for [a, b, c] in raw.bigram {
            table.bigram.insert((a as Symbol, b as Symbol), c);
            *table.context_totals.entry(a as Symbol).or_default() += c;
        }
        table.total_tokens = raw.total_tokens;
        table.check().map_err(D::Error::custom)?;
        Ok(table)
    }
}

impl CountTable {
    pub fn empty(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            unigram: BTreeMap::new(),
            eos_count: 0,
            bigram: BTreeMap::new(),
            context_totals: BTreeMap::new(),
            total_tokens: 0,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn eos(&self) -> Symbol {
        self.vocab_size as Symbol
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn eos_count(&self) -> u64 {
        self.eos_count
    }

    pub fn unigram(&self, token: Symbol) -> u64 {
        self.unigram.get(&token).copied().unwrap_or(0)
    }

    pub fn bigram(&self, prev: Symbol, next: Symbol) -> u64 {
        self.bigram.get(&(prev, next)).copied().unwrap_or(0)
    }

    pub fn bigrams(&self) -> impl Iterator<Item = ((Symbol, Symbol), u64)> + '_ {
        self.bigram.iter().map(|(&k, &v)| (k, v))
    }

    /// The `k` most frequent alphabet symbols, ties broken toward lower ids.
    pub fn top_k(&self, k: usize) -> Vec<Symbol> {
        let mut by_count: Vec<(Symbol, u64)> = self.unigram.iter().map(|(&t, &c)| (t, c)).collect();
        by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        by_count.into_iter().take(k).map(|(t, _)| t).collect()
    }

    fn check(&self) -> Result<()> {
        let sum: u64 = self.unigram.values().sum();
        if sum != self.total_tokens {
            return Err(Error::Invariant(format!(
                "unigram counts sum to {sum}, total_tokens is {}",
                self.total_tokens
            )));
        }
        let eos = self.eos();
        for &(a, b) in self.bigram.keys() {
            let ok_a = a != eos && self.unigram(a) > 0;
            let ok_b = if b == eos { self.eos_count > 0 } else { self.unigram(b) > 0 };
            if !ok_a || !ok_b {
                return Err(Error::Invariant(format!("bigram ({a}, {b}) has an unseen component")));
            }
        }
        Ok(())
    }
}

/// Counts unigrams and bigrams. A terminated sequence contributes a final
/// `(last, EOS)` bigram; a truncated one does not.
pub fn count_corpus<'a, I>(sequences: I, vocab_size: usize) -> Result<CountTable>
where
    I: IntoIterator<Item = &'a TokenSeq>,
{
    let mut table = CountTable::empty(vocab_size);
    let eos = vocab_size as Symbol;
    for (si, seq) in sequences.into_iter().enumerate() {
        for (pos, &tok) in seq.tokens.iter().enumerate() {
            if tok as usize >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    sequence: si,
                    position: pos,
                    token: tok,
                    vocab_size,
                });
            }
            *table.unigram.entry(tok).or_default() += 1;
            table.total_tokens += 1;
            let next = match seq.tokens.get(pos + 1) {
                Some(&n) => Some(n),
                None if seq.terminated => Some(eos),
                None => None,
            };
            if let Some(next) = next {
                if next as usize > vocab_size {
                    return Err(Error::TokenOutOfRange {
                        sequence: si,
                        position: pos + 1,
                        token: next,
                        vocab_size,
                    });
                }
                *table.bigram.entry((tok, next)).or_default() += 1;
                *table.context_totals.entry(tok).or_default() += 1;
            }
        }
        if seq.terminated {
            table.eos_count += 1;
        }
    }
    Ok(table)
}

/// Context-free marginal over alphabet symbols and EOS.
pub fn unigram_dist(counts: &CountTable) -> Result<CategoricalDist> {
    if counts.total_tokens + counts.eos_count == 0 {
        return Err(Error::EmptyCounts);
    }
    let mut weights = vec![0.0; counts.vocab_size + 1];
    for (&t, &c) in &counts.unigram {
        weights[t as usize] = c as f64;
    }
    weights[counts.vocab_size] = counts.eos_count as f64;
    CategoricalDist::from_weights(weights)
}

/// `count(x_l, next) / count(x_l)`, where `count(x_l)` counts occurrences of
/// `x_l` that have a recorded successor (all of them in EOS-terminated
/// corpora). No smoothing.
pub fn bigram_dist(counts: &CountTable, x_l: Symbol) -> Result<CategoricalDist> {
    let total = counts.context_totals.get(&x_l).copied().unwrap_or(0);
    if total == 0 {
        return Err(Error::UnseenToken(x_l));
    }
    let mut probs = vec![0.0; counts.vocab_size + 1];
    for (&(_, next), &c) in counts.bigram.range((x_l, 0)..=(x_l, Symbol::MAX)) {
        probs[next as usize] = c as f64 / total as f64;
    }
    CategoricalDist::from_weights(probs)
}

/// Builds `num_contexts` surprising contexts from held-out sentences: `X_G`
/// truncates a uniformly chosen sentence to a uniform length in
/// `1..len`, and `X_L` is uniform over the `top_k` most frequent symbols
/// the model gives probability below `1/top_k` after `X_G`.
pub fn make_surprising_natural<M, R>(
    lm: &M,
    sentences: &[TokenSeq],
    counts: &CountTable,
    top_k: usize,
    num_contexts: usize,
    rng: &mut R,
) -> Result<Vec<SurprisingContext>>
where
    M: NextTokenModel + ?Sized,
    R: Rng + ?Sized,
{
    if lm.vocab_size() != counts.vocab_size() {
        return Err(Error::InvalidConfig(format!(
            "model vocabulary {} does not match counts vocabulary {}",
            lm.vocab_size(),
            counts.vocab_size()
        )));
    }
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be at least 1".into()));
    }
    let eligible: Vec<&TokenSeq> = sentences.iter().filter(|s| s.len() >= 2).collect();
    if eligible.is_empty() {
        return Err(Error::InvalidConfig("no sentence has at least two tokens".into()));
    }
    let frequent = counts.top_k(top_k);
    let epsilon = 1.0 / top_k as f64;

    let mut out = Vec::with_capacity(num_contexts);
    for _ in 0..num_contexts {
        let mut found = None;
        for _ in 0..MAX_TRUNCATION_RETRIES {
            let sentence = eligible[rng.gen_range(0..eligible.len())];
            let cut = rng.gen_range(1..sentence.len());
            let global_ctx = &sentence.tokens[..cut];
            let next = lm.next_dist(global_ctx)?;
            let candidates: Vec<Symbol> = frequent
                .iter()
                .copied()
                .filter(|&x| next.prob(x as usize) < epsilon)
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let local_token = candidates[rng.gen_range(0..candidates.len())];
            let tau = in_context_min_prob(lm, global_ctx)?;
            found = Some(SurprisingContext {
                global_ctx: global_ctx.to_vec(),
                local_token,
                epsilon,
                tau,
            });
            break;
        }
        out.push(found.ok_or(Error::RetriesExhausted(MAX_TRUNCATION_RETRIES))?);
    }
    Ok(out)
}

/// Smallest probability the model assigns to a token of `ctx` given its prefix.
fn in_context_min_prob<M: NextTokenModel + ?Sized>(lm: &M, ctx: &[Symbol]) -> Result<f64> {
    let mut min = 1.0f64;
    for i in 0..ctx.len() {
        min = min.min(lm.next_dist(&ctx[..i])?.prob(ctx[i] as usize));
    }
    Ok(min)
}

/// Header of a token file: vocabulary size plus free-form provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_walk_len: Option<usize>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

/// Writes a token file: a `# {json header}` line, then one sequence per line
/// as space-separated ids. Terminated sequences end with the EOS id
/// (`vocab_size`).
pub fn write_token_file<W: Write>(mut w: W, header: &CorpusHeader, sequences: &[TokenSeq]) -> Result<()> {
    writeln!(w, "# {}", serde_json::to_string(header)?)?;
    let eos = header.vocab_size as Symbol;
    let mut line = String::new();
    for seq in sequences {
        line.clear();
        for (i, t) in seq.tokens.iter().chain(seq.terminated.then_some(&eos)).enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&t.to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_token_file<R: BufRead>(r: R) -> Result<(CorpusHeader, Vec<TokenSeq>)> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Parse("token file is empty".into()))??;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("token file must start with a '# {json}' header".into()))?;
    let header: CorpusHeader = serde_json::from_str(json.trim())?;
    let eos = header.vocab_size as Symbol;
    let mut sequences = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let mut tokens = line
            .split_whitespace()
            .map(|t| {
                t.parse::<Symbol>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        let terminated = tokens.last() == Some(&eos);
        if terminated {
            tokens.pop();
        }
        if let Some(pos) = tokens.iter().position(|&t| t as usize >= header.vocab_size) {
            return Err(Error::TokenOutOfRange {
                sequence: sequences.len(),
                position: pos,
                token: tokens[pos],
                vocab_size: header.vocab_size,
            });
        }
        sequences.push(TokenSeq::new(tokens, terminated));
    }
    Ok((header, sequences))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(tokens: &[Symbol]) -> TokenSeq {
        TokenSeq::new(tokens.to_vec(), true)
    }

    #[test]
    fn counts_one_sentence() {
        // "a b" with a = 0, b = 1, EOS = 2.
        let t = count_corpus(&[seq(&[0, 1])], 2).unwrap();
        assert_eq!((t.unigram(0), t.unigram(1)), (1, 1));
        assert_eq!(t.bigram(0, 1), 1);
        assert_eq!(t.bigram(1, 2), 1);
        assert_eq!(t.bigrams().count(), 2);
        assert_eq!(t.total_tokens(), 2);
    }

    #[test]
    fn empty_corpus() {
        let t = count_corpus(&[], 5).unwrap();
        assert_eq!(t.total_tokens(), 0);
        assert_eq!(t.bigrams().count(), 0);
        assert!(matches!(unigram_dist(&t), Err(Error::EmptyCounts)));
    }

    #[test]
    fn out_of_range_token_reports_position() {
        match count_corpus(&[seq(&[0]), seq(&[1, 7])], 3) {
            Err(Error::TokenOutOfRange { sequence, position, token, .. }) => {
                assert_eq!((sequence, position, token), (1, 1, 7))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unigram_normalizes() {
        let t = count_corpus(&[TokenSeq::new(vec![0, 0, 0, 1], false)], 2).unwrap();
        assert_eq!(unigram_dist(&t).unwrap().probs(), &[0.75, 0.25, 0.0]);
        let single = count_corpus(&[TokenSeq::new(vec![1], false)], 2).unwrap();
        assert_eq!(unigram_dist(&single).unwrap().probs(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn bigram_ratios() {
        // a->b three times, a->c once.
        let corpus = [seq(&[0, 1]), seq(&[0, 1]), seq(&[0, 1]), seq(&[0, 2])];
        let t = count_corpus(&corpus, 3).unwrap();
        assert_eq!(bigram_dist(&t, 0).unwrap().probs(), &[0.0, 0.75, 0.25, 0.0]);

        let once = count_corpus(&[seq(&[2])], 3).unwrap();
        assert_eq!(bigram_dist(&once, 2).unwrap().probs(), &[0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(bigram_dist(&once, 1), Err(Error::UnseenToken(1))));
    }

    #[test]
    fn truncated_tail_has_no_successor() {
        let t = count_corpus(&[TokenSeq::new(vec![0, 1, 0], false), seq(&[0, 0])], 2).unwrap();
        // Occurrences of 0 with successors: (0,1), (0,0), (0,EOS).
        let d = bigram_dist(&t, 0).unwrap();
        assert_eq!(d.probs(), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn count_table_json_round_trip() {
        let t = count_corpus(&[seq(&[0, 1, 1]), TokenSeq::new(vec![2], false)], 3).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<CountTable>(&s).unwrap(), t);
    }

    #[test]
    fn token_file_round_trip() {
        let header = CorpusHeader {
            vocab_size: 4,
            seed: Some(3),
            max_walk_len: Some(64),
            config: serde_json::json!({"k": 1}),
        };
        let seqs = vec![seq(&[0, 3]), TokenSeq::new(vec![1, 2], false), seq(&[])];
        let mut buf = Vec::new();
        write_token_file(&mut buf, &header, &seqs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap() == "0 3 4");
        let (h, s) = read_token_file(&buf[..]).unwrap();
        assert_eq!((h, s), (header, seqs));
        assert!(read_token_file(&b"0 1 2\n"[..]).is_err());
    }

    /// Uniform over the alphabet, zero mass on EOS.
    struct Flat(usize);

    impl NextTokenModel for Flat {
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn next_dist(&self, _: &[Symbol]) -> Result<CategoricalDist> {
            let mut p = vec![1.0 / self.0 as f64; self.0];
            p.push(0.0);
            CategoricalDist::new(p)
        }
    }

    /// Puts almost all mass on symbol 0.
    struct Peaked(usize);

    impl NextTokenModel for Peaked {
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn next_dist(&self, _: &[Symbol]) -> Result<CategoricalDist> {
            let mut p = vec![0.001; self.0 + 1];
            p[0] = 1.0 - 0.001 * self.0 as f64;
            CategoricalDist::new(p)
        }
    }

    #[test]
    fn natural_contexts_satisfy_predicates() {
        let sentences: Vec<TokenSeq> = (0..20)
            .map(|i| seq(&[(i % 5) as Symbol, 1, 2, 3, (i % 3) as Symbol]))
            .collect();
        let counts = count_corpus(&sentences, 6).unwrap();
        let lm = Peaked(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ctxs = make_surprising_natural(&lm, &sentences, &counts, 3, 30, &mut rng).unwrap();
        let top = counts.top_k(3);
        for c in &ctxs {
            assert!(top.contains(&c.local_token));
            assert!(lm.next_dist(&c.global_ctx).unwrap().prob(c.local_token as usize) < 1.0 / 3.0);
            assert!(!c.global_ctx.is_empty() && c.global_ctx.len() < 5);
            assert_eq!(c.epsilon, 1.0 / 3.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let again = make_surprising_natural(&lm, &sentences, &counts, 3, 30, &mut rng).unwrap();
        assert_eq!(ctxs, again);
    }

    #[test]
    fn uniform_model_exhausts_retries() {
        let sentences = vec![seq(&[0, 1, 2, 3]); 4];
        let counts = count_corpus(&sentences, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            make_surprising_natural(&Flat(4), &sentences, &counts, 4, 1, &mut rng),
            Err(Error::RetriesExhausted(_))
        ));
    }
}
