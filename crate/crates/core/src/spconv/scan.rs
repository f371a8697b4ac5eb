//! Prefix sums and active-site compaction.

use rayon::prelude::*;

use super::tensor::{ActiveMask, FeatureMap, SparseFeatureMap};
use super::ConvError;

/// Exclusive prefix sum. Returns the scanned values and the total.
pub fn exclusive_scan(values: &[u32]) -> (Vec<u32>, u32) {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0u32;
    for &v in values {
        out.push(acc);
        acc += v;
    }
    (out, acc)
}

/// Three-phase blocked scan: per-block totals in parallel, a sequential scan
/// of the block totals, then per-block local scans seeded with their offsets.
pub fn exclusive_scan_parallel(values: &[u32], block: usize) -> (Vec<u32>, u32) {
    let block = block.max(1);
    let totals: Vec<u32> = values.par_chunks(block).map(|c| c.iter().sum()).collect();
    let (offsets, total) = exclusive_scan(&totals);
    let mut out = vec![0u32; values.len()];
    out.par_chunks_mut(block)
        .zip(values.par_chunks(block))
        .zip(offsets.par_iter())
        .for_each(|((dst, src), &base)| {
            let mut acc = base;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = acc;
                acc += s;
            }
        });
    (out, total)
}

const PARALLEL_SCAN_THRESHOLD: usize = 1 << 16;

/// Index of each active site in the compacted order, computed as an exclusive
/// prefix sum over the flattened mask.
pub(crate) fn site_offsets(mask: &ActiveMask) -> (Vec<u32>, u32) {
    let flags: Vec<u32> = mask.flags().iter().map(|&f| f as u32).collect();
    if flags.len() >= PARALLEL_SCAN_THRESHOLD {
        exclusive_scan_parallel(&flags, 4096)
    } else {
        exclusive_scan(&flags)
    }
}

/// Packs the features of every active site into a [`SparseFeatureMap`].
pub fn compact_active_sites(
    mask: &ActiveMask,
    input: &FeatureMap,
) -> Result<SparseFeatureMap, ConvError> {
    mask.check_dims(input.height(), input.width())?;
    let (offsets, total) = site_offsets(mask);
    let c = input.channels();
    let w = input.width();
    let mut coords = vec![(0usize, 0usize); total as usize];
    let mut features = vec![0.0f32; total as usize * c];
    for (idx, (&flag, &slot)) in mask.flags().iter().zip(&offsets).enumerate() {
        if !flag {
            continue;
        }
        let slot = slot as usize;
        let (y, x) = (idx / w, idx % w);
        coords[slot] = (y, x);
        features[slot * c..(slot + 1) * c].copy_from_slice(input.pixel(y, x));
    }
    Ok(SparseFeatureMap::from_parts_unchecked(
        input.height(),
        input.width(),
        c,
        coords,
        features,
    ))
}
