#![allow(dead_code)]

use herofilter_core::{Graph, Matrix, Splits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi edges over `n` nodes with edge probability `p`.
pub fn random_edges(n: usize, p: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if r.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Random spanning tree plus `extra` random chords, so the graph is connected.
pub fn connected_edges(n: usize, extra: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut r = rng(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (r.random_range(0..v), v)).collect();
    for _ in 0..extra {
        let u = r.random_range(0..n);
        let v = r.random_range(0..n);
        edges.push((u, v));
    }
    edges
}

pub fn random_features(n: usize, d: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_vec(
        n,
        d,
        (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(0..classes)).collect()
}

/// Graph with random labels and features and an even three-way split.
pub fn labelled_graph(
    n: usize,
    classes: usize,
    d: usize,
    edges: &[(usize, usize)],
    seed: u64,
) -> Graph {
    let labels = random_labels(n, classes, seed ^ 0x5eed);
    let features = random_features(n, d, seed ^ 0xfea7);
    let splits = Splits {
        train: (0..n).filter(|v| v % 3 == 0).collect(),
        val: (0..n).filter(|v| v % 3 == 1).collect(),
        test: (0..n).filter(|v| v % 3 == 2).collect(),
    };
    Graph::new(n, classes, edges, features, labels, splits).unwrap()
}

pub fn structure_only(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::new(
        n,
        1,
        edges,
        Matrix::zeros(n, 1),
        vec![0; n],
        Splits::default(),
    )
    .unwrap()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}
