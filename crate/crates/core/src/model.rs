use crate::dist::CategoricalDist;
use crate::error::Result;
use crate::seq::Symbol;

/// Anything that predicts the next token (or EOS) after a context.
pub trait NextTokenModel {
    /// Number of alphabet symbols; distributions have one more entry for EOS.
    fn vocab_size(&self) -> usize;

    fn next_dist(&self, context: &[Symbol]) -> Result<CategoricalDist>;

    /// Distributions after each of several continuations of a shared prefix.
    /// The default just calls [`NextTokenModel::next_dist`] per continuation.
    fn next_dists_after(&self, prefix: &[Symbol], continuations: &[Symbol]) -> Result<Vec<CategoricalDist>> {
        let mut ctx = prefix.to_vec();
        ctx.push(0);
        continuations
            .iter()
            .map(|&v| {
                *ctx.last_mut().expect("nonempty") = v;
                self.next_dist(&ctx)
            })
            .collect()
    }
}

impl<M: NextTokenModel + ?Sized> NextTokenModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_dist(&self, context: &[Symbol]) -> Result<CategoricalDist> {
        (**self).next_dist(context)
    }

    fn next_dists_after(&self, prefix: &[Symbol], continuations: &[Symbol]) -> Result<Vec<CategoricalDist>> {
        (**self).next_dists_after(prefix, continuations)
    }
}
