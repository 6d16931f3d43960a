mod common;

use herofilter_core::spectral::{
    eigendecompose, eigendecompose_symmetric, filter_response, graph_fourier,
    inverse_graph_fourier, relevance_matrix,
};
use herofilter_core::{
    normalize_adjacency, Activation, Matrix, NormMode, PolyFilter, SpectralDecomposition,
};
use proptest::prelude::*;
use rand::Rng;

use common::{connected_edges, norm, random_edges, random_vec, rng, structure_only};

fn decompose(n: usize, edges: &[(usize, usize)]) -> (Matrix, SpectralDecomposition) {
    let a = normalize_adjacency(&structure_only(n, edges), NormMode::Sym);
    let dec = eigendecompose(&a).unwrap();
    (a.matrix().clone(), dec)
}

/// `Σ_k U_ik λ_k U_jk`, one entry at a time.
fn rebuild(dec: &SpectralDecomposition) -> Matrix {
    let n = dec.len();
    let u = &dec.eigenvectors;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (0..n)
                .map(|k| u[(i, k)] * dec.eigenvalues[k] * u[(j, k)])
                .sum();
        }
    }
    out
}

fn matrix_power(a: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::identity(a.rows());
    for _ in 0..k {
        out = out.matmul(a).unwrap();
    }
    out
}

#[test]
fn reconstruction_and_orthonormality_on_assorted_graphs() {
    let mut cases: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for seed in 0..6 {
        let n = 10 + 15 * seed as usize;
        cases.push((n, random_edges(n, 0.1, seed)));
        cases.push((n, connected_edges(n, n / 2, seed + 100)));
    }
    cases.push((8, vec![]));
    cases.push((30, (0..29).map(|i| (i, i + 1)).collect()));
    cases.push((
        12,
        (0..12)
            .flat_map(|i| ((i + 1)..12).map(move |j| (i, j)))
            .collect(),
    ));
    for (n, edges) in cases {
        let (a, dec) = decompose(n, &edges);
        let err = rebuild(&dec).sub(&a).unwrap().frobenius_norm();
        assert!(err <= 1e-8 * n as f64, "n={n}: reconstruction {err:e}");
        let ut_u = dec
            .eigenvectors
            .transpose()
            .matmul(&dec.eigenvectors)
            .unwrap();
        let orth = ut_u.sub(&Matrix::identity(n)).unwrap().max_abs();
        assert!(orth <= 1e-8, "n={n}: orthonormality {orth:e}");
        assert!(dec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn eigenvector_signs_follow_the_largest_entry_rule() {
    let (_, dec) = decompose(40, &random_edges(40, 0.15, 9));
    for k in 0..dec.len() {
        let col = dec.eigenvectors.column(k);
        let top = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let first = col.iter().position(|x| x.abs() == top).unwrap();
        assert!(col[first] > 0.0, "column {k}");
    }
}

#[test]
fn parseval_on_random_signals() {
    let (_, dec) = decompose(60, &connected_edges(60, 40, 3));
    let mut r = rng(17);
    for _ in 0..100 {
        let x = random_vec(&mut r, 60);
        let x_hat = graph_fourier(&dec.eigenvectors, &x).unwrap();
        assert!((norm(&x_hat) - norm(&x)).abs() <= 1e-9);
        let back = inverse_graph_fourier(&dec.eigenvectors, &x_hat).unwrap();
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-9));
    }
}

#[test]
fn monomial_filters_reproduce_adjacency_powers() {
    for (seed, n) in [(1u64, 12usize), (2, 30), (3, 50)] {
        let (a, dec) = decompose(n, &random_edges(n, 0.2, seed));
        for k in 1..=3 {
            let mut weights = vec![vec![0.0; n]; k];
            weights[k - 1] = vec![1.0; n];
            let f = PolyFilter::new(weights, Activation::Identity).unwrap();
            let r = relevance_matrix(&dec, &f).unwrap();
            let err = r.sub(&matrix_power(&a, k)).unwrap().max_abs();
            assert!(err <= 1e-8, "n={n}, k={k}: {err:e}");
        }
    }
}

#[test]
fn raw_polynomial_relevance_ignores_the_activation() {
    let n = 20;
    let (a, dec) = decompose(n, &connected_edges(n, 10, 4));
    let mut f = PolyFilter::new(vec![vec![0.5; n], vec![2.0; n]], Activation::Tanh).unwrap();
    f.apply_activation_in_relevance = false;
    let r = relevance_matrix(&dec, &f).unwrap();
    let a2 = matrix_power(&a, 2);
    for i in 0..n {
        for j in 0..n {
            let expect = 0.5 * a[(i, j)] + 2.0 * a2[(i, j)];
            assert!((r[(i, j)] - expect).abs() <= 1e-10);
        }
    }
}

#[test]
fn jacobi_handles_dense_random_symmetric_matrices() {
    let mut r = rng(5);
    for n in [1usize, 2, 3, 7, 25] {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = r.random_range(-3.0..3.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let dec = eigendecompose_symmetric(&m).unwrap();
        assert!(dec.reconstruction_error(&m).unwrap() <= 1e-10 * (n as f64).max(1.0));
        let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
        assert!((dec.eigenvalues.iter().sum::<f64>() - trace).abs() <= 1e-10);
    }
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Identity),
        Just(Activation::Tanh),
        Just(Activation::Relu)
    ]
}

proptest! {
    #[test]
    fn filter_response_commutes_with_eigen_permutations(
        (n, order) in (1usize..12, 1usize..4),
        seed in any::<u64>(),
        act in activation(),
    ) {
        let mut r = rng(seed);
        let lambda: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let weights: Vec<Vec<f64>> = (0..order).map(|_| random_vec(&mut r, n)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let f = PolyFilter::new(weights.clone(), act).unwrap();
        let g = filter_response(&f, &lambda).unwrap();
        let lambda_p: Vec<f64> = perm.iter().map(|&i| lambda[i]).collect();
        let weights_p: Vec<Vec<f64>> = weights.iter().map(|w| perm.iter().map(|&i| w[i]).collect()).collect();
        let g_p = filter_response(&PolyFilter::new(weights_p, act).unwrap(), &lambda_p).unwrap();
        for (slot, &i) in perm.iter().enumerate() {
            prop_assert_eq!(g_p[slot].to_bits(), g[i].to_bits());
        }
        for i in 0..n {
            let expect: f64 = (0..order).map(|k| act.apply(weights[k][i] * lambda[i].powi(k as i32 + 1))).sum();
            prop_assert!((g[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_response(n in 1usize..20, order in 1usize..4, act in activation()) {
        let lambda: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let f = PolyFilter::constant(order, n, 0.0, act).unwrap();
        prop_assert!(filter_response(&f, &lambda).unwrap().iter().all(|&g| g == 0.0));
    }
}
