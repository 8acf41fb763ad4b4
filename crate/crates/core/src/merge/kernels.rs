//! Slice-level building blocks shared by the in-memory task-vector operations
//! and the streaming merge engine.

use crate::rng::{dare_keeps, CounterRng};

/// Number of entries a trim at `density` keeps out of `n`: `ceil(density * n)`,
/// at least one for non-empty input. The product is nudged down by a relative
/// 1e-12 so that e.g. `0.7 * 10 = 7.000000000000001` keeps 7, not 8.
pub fn keep_count(density: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = density * n as f64;
    let k = (raw * (1.0 - 1e-12)).ceil();
    (k as usize).clamp(1, n)
}

#[inline]
fn magnitude_key(v: f32) -> u32 {
    // Non-negative IEEE floats order like their bit patterns.
    v.to_bits() & 0x7FFF_FFFF
}

/// Zeroes all but the `keep_count(density, n)` largest-magnitude entries.
/// Among equal magnitudes the lower index wins.
///
/// Exact two-pass radix select on the 16-bit halves of `|v|`'s bit pattern,
/// followed by one masking pass. Scratch is a fixed 64Ki-entry histogram, so
/// memory does not grow with the tensor.
pub fn trim_in_place(values: &mut [f32], density: f64) {
    let n = values.len();
    let k = keep_count(density, n);
    if k >= n {
        return;
    }
    let mut hist = vec![0usize; 1 << 16];
    for v in values.iter() {
        hist[(magnitude_key(*v) >> 16) as usize] += 1;
    }
    let mut above = 0usize;
    let mut hi = 0usize;
    for bucket in (0..hist.len()).rev() {
        if above + hist[bucket] >= k {
            hi = bucket;
            break;
        }
        above += hist[bucket];
    }

    hist.fill(0);
    for v in values.iter() {
        let key = magnitude_key(*v);
        if (key >> 16) as usize == hi {
            hist[(key & 0xFFFF) as usize] += 1;
        }
    }
    let mut lo = 0usize;
    for bucket in (0..hist.len()).rev() {
        if above + hist[bucket] >= k {
            lo = bucket;
            break;
        }
        above += hist[bucket];
    }

    let threshold = ((hi as u32) << 16) | lo as u32;
    let mut ties_left = k - above;
    for v in values.iter_mut() {
        let key = magnitude_key(*v);
        if key > threshold {
            continue;
        }
        if key == threshold && ties_left > 0 {
            ties_left -= 1;
            continue;
        }
        *v = 0.0;
    }
}

/// Bernoulli-drops entries with probability `drop_p` and rescales survivors
/// by `1 / (1 - drop_p)`. The mask bit of entry `i` depends only on
/// `(stream, i)`.
pub fn dare_in_place(values: &mut [f32], drop_p: f64, stream: &CounterRng) {
    if drop_p == 0.0 {
        return;
    }
    let keep = 1.0 - drop_p;
    for (i, v) in values.iter_mut().enumerate() {
        *v = if dare_keeps(stream, i as u64, drop_p) {
            (*v as f64 / keep) as f32
        } else {
            0.0
        };
    }
}

fn pairwise_sum(values: &[f32]) -> f32 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Float32 sum: left-to-right for up to 8 terms, pairwise beyond that.
#[inline]
pub fn accumulate(values: &[f32]) -> f32 {
    if values.len() <= 8 {
        values.iter().fold(0.0f32, |acc, v| acc + v)
    } else {
        pairwise_sum(values)
    }
}

/// Sign of the sum of `values`, or 0 for an exactly cancelling sum.
///
/// The sum is taken in f64: for a handful of f32 terms this is exact or
/// nearly so, which keeps the election independent of expert order.
#[inline]
pub fn elected_sign(values: &[f32]) -> i8 {
    let sum: f64 = values.iter().map(|v| *v as f64).sum();
    if sum > 0.0 {
        1
    } else if sum < 0.0 {
        -1
    } else {
        0
    }
}

#[inline]
fn matches_sign(v: f32, sign: i8) -> bool {
    (sign > 0 && v > 0.0) || (sign < 0 && v < 0.0)
}

/// Mean over the entries whose sign equals `sign`. Zero entries never match,
/// and an empty match set (including `sign == 0`) yields 0.
#[inline]
pub fn disjoint_mean(values: &[f32], sign: i8, scratch: &mut Vec<f32>) -> f32 {
    scratch.clear();
    scratch.extend(values.iter().copied().filter(|v| matches_sign(*v, sign)));
    if scratch.is_empty() {
        0.0
    } else {
        accumulate(scratch) / scratch.len() as f32
    }
}
