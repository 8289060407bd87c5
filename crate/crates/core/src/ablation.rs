//! Index-size ablation: P@1 on a fixed query set while the index holds `N`
//! samples per class.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{judge, precision_at_n_micro};
use crate::similarity::batch_top_n;
use crate::store::{ClassId, VectorIndex};

pub const DEFAULT_N_SCHEDULE: [usize; 10] = [5, 10, 25, 50, 100, 250, 500, 1000, 2000, 3000];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Classes need strictly more train samples than this to take part.
    pub min_class_size: usize,
    pub queries_per_class: usize,
    pub n_schedule: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    /// Draw each N's subset afresh instead of growing one nested subset.
    pub independent_draws: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            min_class_size: 3000,
            queries_per_class: 38,
            n_schedule: DEFAULT_N_SCHEDULE.to_vec(),
            repetitions: 3,
            seed: 0,
            independent_draws: false,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_schedule.is_empty() || self.n_schedule[0] == 0 {
            return bad("n_schedule must be non-empty and positive".into());
        }
        if self.n_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_schedule must be strictly increasing".into());
        }
        if let Some(&n) = self.n_schedule.iter().find(|&&n| n > self.min_class_size) {
            return bad(format!("N = {n} exceeds min_class_size {}", self.min_class_size));
        }
        if self.queries_per_class == 0 {
            return bad("queries_per_class must be at least 1".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        Ok(())
    }

    /// Seed of repetition `rep`.
    pub fn repetition_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }
}

/// Classes with strictly more than `min_class_size` rows, in class-id order.
pub fn eligible_classes(pool: &VectorIndex, min_class_size: usize) -> Vec<ClassId> {
    pool.class_counts()
        .iter()
        .enumerate()
        .filter(|(_, &count)| count > min_class_size)
        .map(|(c, _)| c as ClassId)
        .collect()
}

/// Seeded sample of `queries_per_class` rows of `queries` per eligible class.
/// Returned rows are grouped by class (in `eligible` order), ascending within a class.
pub fn fixed_query_set(
    queries: &VectorIndex,
    eligible: &[ClassId],
    queries_per_class: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let by_class = queries.rows_by_class();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(eligible.len() * queries_per_class);
    for &c in eligible {
        let mut rows = by_class.get(c as usize).cloned().unwrap_or_default();
        if rows.len() < queries_per_class {
            return Err(Error::InsufficientQueries {
                class: queries.classes().name(c).to_string(),
                required: queries_per_class,
                available: rows.len(),
            });
        }
        rows.shuffle(&mut rng);
        rows.truncate(queries_per_class);
        rows.sort_unstable();
        out.extend(rows);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub n: usize,
    pub repetition: usize,
    pub seed: u64,
    pub p_at_1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub eligible_classes: Vec<String>,
    pub query_count: usize,
    pub rows: Vec<AblationRow>,
    pub means: Vec<NSummary>,
}

impl AblationCurve {
    fn from_rows(eligible_classes: Vec<String>, query_count: usize, rows: Vec<AblationRow>) -> Self {
        let mut grouped: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            grouped.entry(r.n).or_default().push(r.p_at_1);
        }
        let means = grouped
            .into_iter()
            .map(|(n, v)| NSummary {
                n,
                mean: v.iter().sum::<f64>() / v.len() as f64,
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
            .collect();
        Self {
            eligible_classes,
            query_count,
            rows,
            means,
        }
    }

    /// Smallest N from which every later mean stays within `tolerance` of the last one.
    pub fn saturation_point(&self, tolerance: f64) -> Option<usize> {
        let last = self.means.last()?.mean;
        let mut point = None;
        for s in self.means.iter().rev() {
            if (s.mean - last).abs() <= tolerance {
                point = Some(s.n);
            } else {
                break;
            }
        }
        point
    }

    pub fn mean_at(&self, n: usize) -> Option<f64> {
        self.means.iter().find(|s| s.n == n).map(|s| s.mean)
    }

    /// `n,seed,p_at_1` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["n", "seed", "p_at_1"])?;
        for r in &self.rows {
            csv.write_record([r.n.to_string(), r.seed.to_string(), r.p_at_1.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Pool rows of every eligible class for each N of one repetition, in
/// schedule order. `pool_by_class` is [`VectorIndex::rows_by_class`] of the pool.
pub fn draw_subsets(
    pool_by_class: &[Vec<usize>],
    eligible: &[ClassId],
    config: &AblationConfig,
    rep_seed: u64,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let nested: Vec<Vec<usize>> = eligible
        .iter()
        .map(|&c| {
            let mut rows = pool_by_class[c as usize].clone();
            rows.shuffle(&mut rng);
            rows
        })
        .collect();
    config
        .n_schedule
        .iter()
        .map(|&n| {
            if config.independent_draws {
                let mut rng = ChaCha8Rng::seed_from_u64(rep_seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                eligible
                    .iter()
                    .flat_map(|&c| {
                        let mut rows = pool_by_class[c as usize].clone();
                        rows.shuffle(&mut rng);
                        rows.truncate(n);
                        rows
                    })
                    .collect()
            } else {
                nested.iter().flat_map(|rows| rows[..n].iter().copied()).collect()
            }
        })
        .collect()
}

/// Runs every (N, repetition) cell: a fresh index of N pool rows per eligible
/// class, searched with the fixed query set drawn from `queries`.
pub fn run_ablation(pool: &VectorIndex, queries: &VectorIndex, config: &AblationConfig) -> Result<AblationCurve> {
    config.validate()?;
    let eligible = eligible_classes(pool, config.min_class_size);
    if eligible.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no class has more than {} samples",
            config.min_class_size
        )));
    }
    let query_rows = fixed_query_set(queries, &eligible, config.queries_per_class, config.seed)?;
    let query_set = queries.subset(&query_rows);
    let query_refs = query_set.queries();
    let pool_by_class = pool.rows_by_class();

    let mut rows = Vec::with_capacity(config.n_schedule.len() * config.repetitions);
    let mut cells: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for rep in 0..config.repetitions {
        let subsets = draw_subsets(&pool_by_class, &eligible, config, config.repetition_seed(rep));
        for (&n, subset) in config.n_schedule.iter().zip(subsets) {
            cells.push((n, rep, subset));
        }
    }
    // Report N-major so rows for one N are adjacent.
    cells.sort_by_key(|&(n, rep, _)| (n, rep));

    for (n, rep, subset) in cells {
        let index = pool.subset(&subset);
        let results = batch_top_n(&query_refs, &index, 1, false)?;
        let judgments = results
            .iter()
            .zip(query_set.labels())
            .map(|(r, &c)| judge(r, c, &index, 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(AblationRow {
            n,
            repetition: rep,
            seed: config.repetition_seed(rep),
            p_at_1: precision_at_n_micro(&judgments, 1)?,
        });
    }

    let names = eligible.iter().map(|&c| pool.classes().name(c).to_string()).collect();
    Ok(AblationCurve::from_rows(names, query_set.len(), rows))
}
