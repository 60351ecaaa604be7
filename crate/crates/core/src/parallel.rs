//! Data-parallel execution helpers.
//!
//! Heavy kernels split their output into disjoint row blocks; each block is
//! computed by the same sequential inner loop whether it runs on one thread
//! or many, so results are bit-identical with parallelism on or off. The
//! `parallel` feature compiles the rayon path in; [`set_parallel`] toggles
//! it at runtime (used by the benchmarks to compare both modes in one run).

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enable or disable the rayon path at runtime. A no-op without the
/// `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Split `out` into contiguous blocks of `block_rows * row_width` elements
/// and run `f(block_index, block)` on each. Blocks are processed in parallel
/// when enabled and the work is large enough to amortize dispatch.
pub fn for_each_block<S: Send, F>(out: &mut [S], row_width: usize, block_rows: usize, f: F)
where
    F: Fn(usize, &mut [S]) + Sync,
{
    assert!(row_width > 0 && block_rows > 0);
    let block_len = block_rows * row_width;
    let n_blocks = out.len().div_ceil(block_len.max(1));

    #[cfg(feature = "parallel")]
    if parallel_enabled() && n_blocks > 1 {
        use rayon::prelude::*;
        out.par_chunks_mut(block_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
        return;
    }

    for (i, chunk) in out.chunks_mut(block_len).enumerate() {
        f(i, chunk);
    }
}

/// Rows per block so that every available thread gets work, with a floor
/// to keep per-block work worth the dispatch.
pub fn block_rows_for(total_rows: usize, min_rows: usize) -> usize {
    let threads = max_threads();
    (total_rows.div_ceil(threads)).max(min_rows).max(1)
}

fn max_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_output_in_order() {
        let mut out = vec![0usize; 103];
        for_each_block(&mut out, 1, 10, |i, chunk| {
            for (j, v) in chunk.iter_mut().enumerate() {
                *v = i * 10 + j;
            }
        });
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i);
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let work = |out: &mut Vec<f32>| {
            for_each_block(out.as_mut_slice(), 4, 3, |i, chunk| {
                for (j, v) in chunk.iter_mut().enumerate() {
                    *v = (i as f32).sqrt() + (j as f32) * 0.25;
                }
            });
        };
        let mut a = vec![0.0; 4 * 57];
        let mut b = vec![0.0; 4 * 57];
        set_parallel(false);
        work(&mut a);
        set_parallel(true);
        work(&mut b);
        set_parallel(cfg!(feature = "parallel"));
        assert_eq!(a, b);
    }
}
