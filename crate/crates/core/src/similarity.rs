//! Exact top-N cosine search over a [`VectorIndex`].
//!
//! Every (query, row) similarity is produced by [`dot`], whose accumulation
//! order depends only on the dimension. Candidates are totally ordered by
//! descending similarity, then ascending record id, so the top-N set is unique
//! and the result does not depend on chunking or thread count.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{norm_f64, VectorIndex, UNIT_NORM_TOLERANCE};

/// Rows scanned per parallel work item.
pub const CHUNK_ROWS: usize = 4096;

/// Rows kept hot in cache while a block of queries is scored against them.
const BLOCK_ROWS: usize = 64;

/// Queries handled per pass over the index; bounds per-chunk candidate memory.
const QUERY_BATCH: usize = 1024;

const LANES: usize = 8;

/// Dot product with a fixed accumulation order.
///
/// Element `i` of the first `D - D % 8` entries is accumulated into lane
/// `i % 8`, in increasing `i`. Lanes are then folded pairwise
/// (`l` with `l + 4`, then `+ 2`, `+ 1`) and the tail entries are added
/// sequentially. The blocked kernels used by the scan follow exactly the same
/// order per pair, so every path yields bit-identical similarities.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    dots::<1, 1>([a], [b])[0][0]
}

#[inline(always)]
fn fold(mut acc: [f32; LANES]) -> f32 {
    let mut width = LANES / 2;
    while width > 0 {
        for l in 0..width {
            acc[l] += acc[l + width];
        }
        width /= 2;
    }
    acc[0]
}

/// All `Q x R` dot products of a few queries against a few rows.
#[inline(always)]
fn dots<const Q: usize, const R: usize>(queries: [&[f32]; Q], rows: [&[f32]; R]) -> [[f32; R]; Q] {
    let d = queries[0].len();
    let blocks = d / LANES;
    let q_lanes = queries.map(|q| &q.as_chunks::<LANES>().0[..blocks]);
    let r_lanes = rows.map(|r| &r.as_chunks::<LANES>().0[..blocks]);
    let mut acc = [[[0f32; LANES]; R]; Q];
    for k in 0..blocks {
        for qi in 0..Q {
            let q = &q_lanes[qi][k];
            for ri in 0..R {
                let r = &r_lanes[ri][k];
                for l in 0..LANES {
                    acc[qi][ri][l] += q[l] * r[l];
                }
            }
        }
    }
    let body = blocks * LANES;
    let mut out = [[0f32; R]; Q];
    for qi in 0..Q {
        for ri in 0..R {
            let mut sum = fold(acc[qi][ri]);
            for j in body..d {
                sum += queries[qi][j] * rows[ri][j];
            }
            out[qi][ri] = sum;
        }
    }
    out
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    check_unit(a)?;
    check_unit(b)?;
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

fn check_unit(v: &[f32]) -> Result<()> {
    let norm = norm_f64(v);
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::NotUnitNorm { norm });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub record_id: u64,
    pub similarity: f32,
}

impl Hit {
    /// Ranking order: higher similarity first, then lower record id.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then(self.record_id.cmp(&other.record_id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_record_id: Option<u64>,
    pub hits: Vec<Hit>,
}

// Ordered so that the binary heap's maximum is the worst retained hit.
#[derive(Clone, Copy)]
struct Ranked(Hit);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

struct TopN {
    n: usize,
    heap: BinaryHeap<Ranked>,
}

impl TopN {
    fn new(n: usize) -> Self {
        Self {
            n,
            heap: BinaryHeap::with_capacity(n + 1),
        }
    }

    #[inline]
    fn offer(&mut self, hit: Hit) {
        if self.heap.len() < self.n {
            self.heap.push(Ranked(hit));
            return;
        }
        let worst = self.heap.peek().expect("n >= 1").0;
        if hit.similarity < worst.similarity {
            return;
        }
        if hit.rank_cmp(&worst) == Ordering::Less {
            self.heap.pop();
            self.heap.push(Ranked(hit));
        }
    }

    fn into_sorted(self) -> Vec<Hit> {
        self.heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
    }
}

struct Query<'a> {
    vector: &'a [f32],
    exclude: Option<u64>,
}

fn validate(query: &[f32], index: &VectorIndex, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if query.len() != index.dimension() {
        return Err(Error::DimensionMismatch {
            expected: index.dimension(),
            found: query.len(),
        });
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { record_id: None });
    }
    check_unit(query)
}

/// Similarities of `queries` against rows `start..end`, written query-major
/// into `out` (`queries.len() x (end - start)`). `kernel` computes a 2x4 tile.
#[inline(always)]
fn score_block_with(
    queries: &[Query<'_>],
    index: &VectorIndex,
    start: usize,
    end: usize,
    out: &mut [f32],
    kernel: impl Fn([&[f32]; 2], [&[f32]; 4]) -> [[f32; 4]; 2],
) {
    let width = end - start;
    let row = |r: usize| index.vector(r);
    let mut qi = 0;
    while qi < queries.len() {
        if qi + 2 <= queries.len() {
            let qs = [queries[qi].vector, queries[qi + 1].vector];
            let mut r = start;
            while r + 4 <= end {
                let s = kernel(qs, [row(r), row(r + 1), row(r + 2), row(r + 3)]);
                for k in 0..2 {
                    out[(qi + k) * width + r - start..][..4].copy_from_slice(&s[k]);
                }
                r += 4;
            }
            for r in r..end {
                out[qi * width + r - start] = dot(qs[0], row(r));
                out[(qi + 1) * width + r - start] = dot(qs[1], row(r));
            }
            qi += 2;
        } else {
            let q = queries[qi].vector;
            for r in start..end {
                out[qi * width + r - start] = dot(q, row(r));
            }
            qi += 1;
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;
    use std::mem::transmute;

    use super::{fold, LANES};

    /// Same accumulation order as [`super::dots`]: one 8-wide register per
    /// pair holds the lanes, separate multiply and add, scalar fold and tail.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn dots_2x4(queries: [&[f32]; 2], rows: [&[f32]; 4]) -> [[f32; 4]; 2] {
        let d = queries[0].len();
        let blocks = d / LANES;
        let q_lanes = queries.map(|q| &q.as_chunks::<LANES>().0[..blocks]);
        let r_lanes = rows.map(|r| &r.as_chunks::<LANES>().0[..blocks]);
        let mut acc = [[_mm256_setzero_ps(); 4]; 2];
        // Chunks move in and out of registers by value: the same unaligned
        // moves as loadu/storeu without their debug-build pointer checks.
        for k in 0..blocks {
            let q0 = transmute::<[f32; LANES], __m256>(q_lanes[0][k]);
            let q1 = transmute::<[f32; LANES], __m256>(q_lanes[1][k]);
            for ri in 0..4 {
                let r = transmute::<[f32; LANES], __m256>(r_lanes[ri][k]);
                acc[0][ri] = _mm256_add_ps(acc[0][ri], _mm256_mul_ps(q0, r));
                acc[1][ri] = _mm256_add_ps(acc[1][ri], _mm256_mul_ps(q1, r));
            }
        }
        let body = blocks * LANES;
        let mut out = [[0f32; 4]; 2];
        for qi in 0..2 {
            for ri in 0..4 {
                let mut sum = fold(transmute::<__m256, [f32; LANES]>(acc[qi][ri]));
                for j in body..d {
                    sum += queries[qi][j] * rows[ri][j];
                }
                out[qi][ri] = sum;
            }
        }
        out
    }
}

fn score_block(queries: &[Query<'_>], index: &VectorIndex, start: usize, end: usize, out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        debug_assert!(queries.iter().all(|q| q.vector.len() == index.dimension()));
        // SAFETY: AVX2 is available and every slice has the index dimension.
        // No FMA is used, so results match the portable path bit for bit.
        return score_block_with(queries, index, start, end, out, |q, r| unsafe { avx2::dots_2x4(q, r) });
    }
    score_block_with(queries, index, start, end, out, dots::<2, 4>)
}

/// Scores every query against one contiguous row range.
fn scan_chunk(queries: &[Query<'_>], index: &VectorIndex, rows: std::ops::Range<usize>, n: usize) -> Vec<Vec<Hit>> {
    let mut tops: Vec<TopN> = queries.iter().map(|_| TopN::new(n)).collect();
    let mut sims = vec![0f32; queries.len() * BLOCK_ROWS];
    let mut start = rows.start;
    while start < rows.end {
        let end = (start + BLOCK_ROWS).min(rows.end);
        let width = end - start;
        score_block(queries, index, start, end, &mut sims[..queries.len() * width]);
        for (qi, (q, top)) in queries.iter().zip(tops.iter_mut()).enumerate() {
            for (offset, &sim) in sims[qi * width..(qi + 1) * width].iter().enumerate() {
                let record_id = index.record_id(start + offset);
                if q.exclude == Some(record_id) {
                    continue;
                }
                top.offer(Hit {
                    record_id,
                    similarity: sim.clamp(-1.0, 1.0),
                });
            }
        }
        start = end;
    }
    tops.into_iter().map(TopN::into_sorted).collect()
}

/// Exact scan over the whole index for a batch of validated queries.
fn scan(queries: &[Query<'_>], index: &VectorIndex, n: usize) -> Vec<Vec<Hit>> {
    let chunks: Vec<std::ops::Range<usize>> = (0..index.len())
        .step_by(CHUNK_ROWS)
        .map(|s| s..(s + CHUNK_ROWS).min(index.len()))
        .collect();
    let partial: Vec<Vec<Vec<Hit>>> = chunks
        .into_par_iter()
        .map(|rows| scan_chunk(queries, index, rows, n))
        .collect();

    // Merge in chunk order; the total order makes the result independent of it.
    (0..queries.len())
        .map(|qi| {
            let mut merged: Vec<Hit> = partial.iter().flat_map(|p| p[qi].iter().copied()).collect();
            merged.sort_by(Hit::rank_cmp);
            merged.truncate(n);
            merged
        })
        .collect()
}

/// The `n` most similar index rows to `query`, skipping `exclude_id` if given.
pub fn top_n(query: &[f32], index: &VectorIndex, n: usize, exclude_id: Option<u64>) -> Result<RetrievalResult> {
    validate(query, index, n)?;
    let hits = scan(
        &[Query {
            vector: query,
            exclude: exclude_id,
        }],
        index,
        n,
    )
    .pop()
    .unwrap_or_default();
    Ok(RetrievalResult {
        query_record_id: exclude_id,
        hits,
    })
}

/// [`top_n`] for many queries. Output order follows `queries`; with
/// `exclude_self` each query's own record id is skipped.
pub fn batch_top_n(
    queries: &[(u64, &[f32])],
    index: &VectorIndex,
    n: usize,
    exclude_self: bool,
) -> Result<Vec<RetrievalResult>> {
    for &(record_id, vector) in queries {
        validate(vector, index, n).map_err(|e| Error::Query {
            record_id,
            source: Box::new(e),
        })?;
    }
    let mut out = Vec::with_capacity(queries.len());
    for batch in queries.chunks(QUERY_BATCH) {
        let prepared: Vec<Query<'_>> = batch
            .iter()
            .map(|&(id, vector)| Query {
                vector,
                exclude: exclude_self.then_some(id),
            })
            .collect();
        let hits = scan(&prepared, index, n);
        out.extend(batch.iter().zip(hits).map(|(&(id, _), hits)| RetrievalResult {
            query_record_id: Some(id),
            hits,
        }));
    }
    Ok(out)
}
