//! Seeded synthetic corpora: Gaussian clusters around random unit centers.
//!
//! Used by tests, the acceptance suite, the CLI's `synth` command and the
//! browser demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::store::{ClassKind, EmbeddingRecord, ManifestEntry, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    pub classes: usize,
    pub dimension: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Expected Euclidean norm of the isotropic noise added to each center.
    pub noise: f32,
    /// Class `c` gets `round(count * size_decay^c)` samples per split (at least 1).
    pub size_decay: f64,
    /// Share of classes flagged anatomical (the rest are pathological).
    pub anatomical_fraction: f64,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            dimension: 32,
            train_per_class: 100,
            val_per_class: 20,
            test_per_class: 20,
            noise: 0.5,
            size_decay: 1.0,
            anatomical_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub dimension: usize,
    pub manifest: Vec<ManifestEntry>,
    pub embeddings: Vec<EmbeddingRecord>,
    pub centers: Vec<Vec<f32>>,
}

pub fn class_name(c: usize) -> String {
    format!("class_{c:03}")
}

fn scaled(count: usize, decay: f64, c: usize) -> usize {
    ((count as f64) * decay.powi(c as i32)).round().max(1.0) as usize
}

/// Generates records split-major (train, val, test), class-major within a
/// split, with consecutive record ids from 0.
pub fn gaussian_clusters(spec: &ClusterSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dimension;
    let centers: Vec<Vec<f32>> = (0..spec.classes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| (x / norm) as f32).collect()
        })
        .collect();
    let anatomical = (spec.classes as f64 * spec.anatomical_fraction).round() as usize;
    let sigma = spec.noise / (d as f32).sqrt();

    let mut manifest = Vec::new();
    let mut embeddings = Vec::new();
    let mut next_id = 0u64;
    for (split, per_class) in [
        (Split::Train, spec.train_per_class),
        (Split::Val, spec.val_per_class),
        (Split::Test, spec.test_per_class),
    ] {
        if per_class == 0 {
            continue;
        }
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..scaled(per_class, spec.size_decay, c) {
                let vector: Vec<f32> = center
                    .iter()
                    .map(|&x| {
                        let z: f32 = StandardNormal.sample(&mut rng);
                        x + sigma * z
                    })
                    .collect();
                let mut hash = [0u8; 32];
                rng.fill(&mut hash);
                manifest.push(ManifestEntry {
                    record_id: next_id,
                    source_path: format!("synthetic/{split}/{}/{next_id:08}.png", class_name(c)),
                    labels: vec![class_name(c)],
                    dataset: "synthetic".into(),
                    split,
                    patient_id: Some(format!("patient_{:06}", next_id / 2)),
                    content_hash: Some(hash),
                    class_kind: if c >= spec.classes - anatomical {
                        ClassKind::Anatomical
                    } else {
                        ClassKind::Pathological
                    },
                });
                embeddings.push(EmbeddingRecord {
                    record_id: next_id,
                    vector,
                });
                next_id += 1;
            }
        }
    }
    SyntheticCorpus {
        dimension: d,
        manifest,
        embeddings,
        centers,
    }
}

impl SyntheticCorpus {
    pub fn index(&self, split: Split) -> crate::Result<crate::VectorIndex> {
        crate::build_index(self.embeddings.iter().cloned(), &self.manifest, split)
    }
}

/// `count` random unit vectors of dimension `dimension`, row-major.
pub fn random_unit_vectors(count: usize, dimension: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * dimension);
    for _ in 0..count {
        let v: Vec<f32> = (0..dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
        out.extend(crate::l2_normalize(&v).expect("gaussian sample is non-zero"));
    }
    out
}
