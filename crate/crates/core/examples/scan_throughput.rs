//! Brute-force batch search throughput on random unit vectors.
//!
//! `cargo run --release -p cbir-core --example scan_throughput -- [M] [D] [queries] [n]`

use std::sync::Arc;
use std::time::Instant;

use cbir_core::similarity::batch_top_n;
use cbir_core::store::{ClassKind, ClassTable, VectorIndex};
use cbir_core::synth::random_unit_vectors;

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let m = args.first().copied().unwrap_or(100_000);
    let d = args.get(1).copied().unwrap_or(512);
    let q = args.get(2).copied().unwrap_or(200);
    let n = args.get(3).copied().unwrap_or(10);

    let classes = Arc::new(ClassTable::from_parts(vec!["x".into()], vec![ClassKind::Anatomical]).unwrap());
    let index = VectorIndex::from_normalized(
        d,
        random_unit_vectors(m, d, 1),
        vec![0; m],
        (0..m as u64).collect(),
        classes,
    )
    .expect("unit vectors");
    let queries = random_unit_vectors(q, d, 2);
    let refs: Vec<(u64, &[f32])> = queries.chunks(d).enumerate().map(|(i, v)| (i as u64, v)).collect();

    let start = Instant::now();
    let results = batch_top_n(&refs, &index, n, false).expect("search");
    let secs = start.elapsed().as_secs_f64();
    println!(
        "M={m} D={d} queries={q} n={n} threads={} : {:.3}s, {:.1} queries/s (first hit {:?})",
        rayon::current_num_threads(),
        secs,
        q as f64 / secs,
        results[0].hits[0]
    );
}
