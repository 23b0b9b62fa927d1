//! Execution mode for the data-parallel kernels.
//!
//! Every kernel that can fan out over rayon keeps a fixed per-item reduction
//! order, so `Sequential` and `Parallel` produce bit-identical results. When the
//! crate is built without the `parallel` feature, `Parallel` runs sequentially.

/// Below this many multiply-adds a kernel stays on the calling thread.
pub const PAR_MIN_WORK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True when this mode should fan out for a kernel of the given size.
    pub fn fans_out(self, work: usize) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel && work >= PAR_MIN_WORK
    }
}

/// Apply `f` to each `chunk`-sized mutable slice of `data`, with its chunk index.
pub(crate) fn for_each_chunk_mut<F>(exec: Exec, work: usize, data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.fans_out(work) {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = (exec, work);
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Map `f` over `items`, preserving order.
pub fn map_ordered<T, U, F>(exec: Exec, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}
