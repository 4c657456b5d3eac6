//! Order-preserving map that uses rayon when the `parallel` feature is on.

#[cfg(feature = "parallel")]
pub(crate) fn map_ordered<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync + Send) -> Vec<O> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_ordered<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync + Send) -> Vec<O> {
    items.iter().map(f).collect()
}
