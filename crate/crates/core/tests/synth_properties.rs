use std::collections::BTreeSet;

use herofilter_core::heterophily::{mean, node_heterophily};
use herofilter_core::spectral::{band_filter, eigendecompose, low_pass_reference};
use herofilter_core::synth::{
    default_bands, frequency_response_rows, heterophily_sweep, synth_graph, SynthSpec,
};
use herofilter_core::train::TrainConfig;
use herofilter_core::{normalize_adjacency, NormMode};
use proptest::prelude::*;

#[test]
fn measured_heterophily_tracks_the_target() {
    for step in 1..=9 {
        let target = step as f64 / 10.0;
        for seed in 0..10 {
            let n = if seed % 2 == 0 { 500 } else { 1000 };
            let spec = SynthSpec {
                n,
                target_h: target,
                seed,
                ..SynthSpec::default()
            };
            let h = mean(&node_heterophily(&synth_graph(&spec).unwrap()));
            assert!(
                (h - target).abs() <= 0.05,
                "target {target}, seed {seed}: measured {h}"
            );
        }
    }
}

#[test]
fn generated_graphs_have_the_requested_shape() {
    let spec = SynthSpec {
        n: 503,
        num_classes: 4,
        feature_dim: 6,
        feature_noise: 0.0,
        avg_degree: 8.0,
        seed: 3,
        ..SynthSpec::default()
    };
    let g = synth_graph(&spec).unwrap();
    assert_eq!(
        (g.num_nodes(), g.num_classes(), g.feature_dim()),
        (503, 4, 6)
    );
    assert_eq!(g.edges().len(), (503.0f64 * 8.0 / 2.0).round() as usize);
    let mut counts = [0usize; 4];
    for &y in g.labels() {
        counts[y] += 1;
    }
    assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    for v in 0..503 {
        let row = g.features().row(v);
        let expect: Vec<f64> = (0..6)
            .map(|k| if k == g.labels()[v] { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(row, expect.as_slice());
    }
    let s = g.splits();
    assert_eq!(
        (s.train.len(), s.val.len()),
        (503 * 48 / 100, 503 * 32 / 100)
    );
    let all: BTreeSet<usize> = s
        .train
        .iter()
        .chain(&s.val)
        .chain(&s.test)
        .copied()
        .collect();
    assert_eq!(all.len(), 503);
    assert_eq!(s.train.len() + s.val.len() + s.test.len(), 503);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_a_function_of_the_spec(
        n in 20usize..120,
        classes in 2usize..5,
        target in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let spec = SynthSpec {
            n,
            num_classes: classes,
            target_h: target,
            avg_degree: 4.0,
            feature_dim: 4,
            seed,
            ..SynthSpec::default()
        };
        prop_assume!(synth_graph(&spec).is_ok());
        prop_assert_eq!(synth_graph(&spec).unwrap(), synth_graph(&spec).unwrap());
        let h = node_heterophily(&synth_graph(&spec).unwrap());
        prop_assert!(h.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

#[test]
fn extreme_targets_are_exact() {
    for seed in 0..3 {
        let homo = SynthSpec {
            n: 300,
            target_h: 0.0,
            seed,
            ..SynthSpec::default()
        };
        assert!(node_heterophily(&synth_graph(&homo).unwrap())
            .iter()
            .all(|&h| h == 0.0));
        let bip = SynthSpec {
            n: 300,
            num_classes: 2,
            target_h: 1.0,
            seed,
            ..SynthSpec::default()
        };
        let g = synth_graph(&bip).unwrap();
        assert!(g
            .edges()
            .iter()
            .all(|&(u, v)| g.labels()[u] != g.labels()[v]));
    }
}

fn sweep_spec() -> (SynthSpec, TrainConfig) {
    let spec = SynthSpec {
        n: 80,
        num_classes: 3,
        avg_degree: 5.0,
        feature_dim: 4,
        feature_noise: 0.3,
        seed: 11,
        ..SynthSpec::default()
    };
    let cfg = TrainConfig {
        hidden: 8,
        patch_size: 3,
        max_epochs: 20,
        patience: 5,
        ..TrainConfig::default()
    };
    (spec, cfg)
}

#[test]
fn sweep_grid_covers_every_cell_in_range() {
    let (spec, cfg) = sweep_spec();
    let hs = [0.1, 0.5, 0.9];
    let grid = heterophily_sweep(&hs, &default_bands(), &spec, &cfg).unwrap();
    assert_eq!(grid.len(), 15);
    for (i, cell) in grid.iter().enumerate() {
        assert_eq!(cell.h, hs[i / 5]);
        assert_eq!((cell.band_lo, cell.band_hi), default_bands()[i % 5]);
        assert!((0.0..=1.0).contains(&cell.test_acc));
        assert_eq!(cell.seed, spec.seed);
    }
    assert_eq!(
        heterophily_sweep(&hs, &default_bands(), &spec, &cfg).unwrap(),
        grid
    );
}

#[test]
fn full_band_on_a_homophilous_graph_beats_chance() {
    let spec = SynthSpec {
        n: 300,
        num_classes: 3,
        target_h: 0.0,
        avg_degree: 6.0,
        feature_dim: 8,
        feature_noise: 0.2,
        seed: 2,
    };
    let cfg = TrainConfig {
        hidden: 16,
        patch_size: 4,
        ..TrainConfig::default()
    };
    let grid = heterophily_sweep(&[0.0], &[(0.0, 2.0)], &spec, &cfg).unwrap();
    assert_eq!(grid.len(), 1);
    assert!(
        grid[0].test_acc > 1.0 / 3.0 + 0.3,
        "accuracy {}",
        grid[0].test_acc
    );
}

#[test]
fn response_tables() {
    let spec = SynthSpec {
        n: 60,
        avg_degree: 4.0,
        seed: 1,
        ..SynthSpec::default()
    };
    let g = synth_graph(&spec).unwrap();
    let dec = eigendecompose(&normalize_adjacency(&g, NormMode::Sym)).unwrap();

    let zero = frequency_response_rows(&dec, &vec![0.0; 60]).unwrap();
    assert!(zero
        .iter()
        .all(|r| r.g == 0.0 && (r.log10_g + 12.0).abs() <= 1e-12));

    let low = frequency_response_rows(&dec, &low_pass_reference(&dec.eigenvalues)).unwrap();
    let mut by_freq: Vec<(f64, f64)> = low.iter().map(|r| (r.lambda_lap, r.g)).collect();
    by_freq.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(by_freq
        .windows(2)
        .all(|w| w[0].0 == w[1].0 || w[1].1 < w[0].1));

    let band = band_filter(&dec.eigenvalues, 0.0, 0.4).unwrap();
    let rows = frequency_response_rows(&dec, &band).unwrap();
    for r in rows {
        let inside = r.lambda_lap < 0.4;
        assert_eq!(r.g, if inside { 1.0 } else { 0.0 });
    }
}
