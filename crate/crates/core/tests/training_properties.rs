mod common;

use herofilter_core::graph::Split;
use herofilter_core::mixer::{cross_entropy, mixer_backward, mixer_forward, predict, MixerModel};
use herofilter_core::patcher::extract_patches;
use herofilter_core::synth::{synth_graph, SynthSpec};
use herofilter_core::train::{
    adam_step, build_patches, evaluate, ranked_vs_random_ablation, train, AdamHyper, AdamState,
    PatcherMode, TrainConfig,
};
use herofilter_core::Graph;
use rand::Rng;

use common::{random_vec, rng};

fn small_graph(h: f64, seed: u64) -> Graph {
    synth_graph(&SynthSpec {
        n: 120,
        num_classes: 3,
        target_h: h,
        avg_degree: 6.0,
        feature_dim: 6,
        feature_noise: 0.5,
        seed,
    })
    .unwrap()
}

fn quick(patcher: PatcherMode) -> TrainConfig {
    TrainConfig {
        hidden: 8,
        patch_size: 4,
        max_epochs: 60,
        patience: 8,
        patcher,
        ..TrainConfig::default()
    }
}

#[test]
fn adam_matches_a_scalar_trace_with_weight_decay() {
    let hp = AdamHyper::new(0.05, 0.1);
    let mut params = vec![0.7, -1.2, 0.0];
    let mut state = AdamState::new(3);
    let grads = [
        vec![0.3, -0.1, 2.0],
        vec![-0.4, 0.2, 1.0],
        vec![0.0, 0.0, -3.0],
        vec![1e-3, 5.0, 0.5],
    ];
    let mut oracle: Vec<(f64, f64, f64)> = params.iter().map(|&p| (p, 0.0, 0.0)).collect();
    for (t, g) in grads.iter().enumerate() {
        adam_step(&mut params, g, &mut state, &hp).unwrap();
        let t = t as i32 + 1;
        for (i, (theta, m, v)) in oracle.iter_mut().enumerate() {
            let gi = g[i] + 0.1 * *theta;
            *m = 0.9 * *m + 0.1 * gi;
            *v = 0.999 * *v + 0.001 * gi * gi;
            let mh = *m / (1.0 - 0.9f64.powi(t));
            let vh = *v / (1.0 - 0.999f64.powi(t));
            *theta -= 0.05 * mh / (vh.sqrt() + 1e-8);
        }
        for (p, o) in params.iter().zip(&oracle) {
            assert!((p - o.0).abs() <= 1e-12);
        }
    }
    assert_eq!(state.t, 4);
}

#[test]
fn zero_learning_rate_never_moves_parameters() {
    let mut r = rng(1);
    let init = random_vec(&mut r, 50);
    let mut params = init.clone();
    let mut state = AdamState::new(50);
    for _ in 0..100 {
        let g = random_vec(&mut r, 50);
        adam_step(&mut params, &g, &mut state, &AdamHyper::new(0.0, 5e-4)).unwrap();
    }
    assert_eq!(params, init);
}

#[test]
fn first_step_lowers_the_training_loss() {
    let g = small_graph(0.3, 3);
    let cfg = TrainConfig {
        dropout: 0.0,
        ..quick(PatcherMode::Fast)
    };
    let patches = extract_patches(&g, &build_patches(&g, &cfg, None).unwrap()).unwrap();
    let train_nodes = &g.splits().train;
    let loss = |m: &MixerModel| {
        let (logits, _) = mixer_forward(&patches, m, false, 0).unwrap();
        cross_entropy(&logits, g.labels(), train_nodes).unwrap().0
    };
    let mut failures = 0;
    for seed in 0..20 {
        let mut model =
            MixerModel::init(cfg.mixer_config(g.feature_dim(), g.num_classes()), seed).unwrap();
        let (logits, tape) = mixer_forward(&patches, &model, false, 0).unwrap();
        let (before, dl) = cross_entropy(&logits, g.labels(), train_nodes).unwrap();
        let grads = mixer_backward(&model, &tape, &dl).unwrap();
        let mut state = AdamState::new(model.num_params());
        adam_step(
            model.params_mut(),
            &grads.params,
            &mut state,
            &AdamHyper::new(0.01, 0.0),
        )
        .unwrap();
        if loss(&model) >= before {
            failures += 1;
        }
    }
    assert!(
        failures <= 2,
        "{failures}/20 seeds did not decrease the loss"
    );
}

#[test]
fn early_stopping_respects_its_limits() {
    let mut r = rng(5);
    for trial in 0..6u64 {
        let g = small_graph(r.random_range(0.0..1.0), trial);
        let cfg = TrainConfig {
            patience: r.random_range(1..10),
            max_epochs: r.random_range(5..40),
            lr: [0.001, 0.01, 0.1][trial as usize % 3],
            seed: trial,
            ..quick(PatcherMode::Fast)
        };
        let rep = train(&g, &cfg).unwrap().report;
        let n = rep.epochs.len();
        assert!(n >= 1 && n <= cfg.max_epochs);
        assert!(n - rep.best_epoch <= cfg.patience, "trial {trial}");
        assert!(n == cfg.max_epochs || n - rep.best_epoch == cfg.patience);
        let min = rep
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(rep.epochs[rep.best_epoch - 1].val_loss, min);
        assert_eq!(rep.best_val_loss, min);
        assert!(rep.epochs.iter().enumerate().all(|(i, e)| e.epoch == i + 1));
    }
}

#[test]
fn evaluation_agrees_with_a_direct_recomputation() {
    let g = small_graph(0.5, 9);
    let cfg = quick(PatcherMode::Fast);
    let out = train(&g, &cfg).unwrap();
    let t = extract_patches(&g, &out.patches).unwrap();
    let logits = predict(&t, &out.model).unwrap();
    for split in [Split::Train, Split::Val, Split::Test] {
        let (loss, acc) = evaluate(&out.model, &g, &out.patches, split).unwrap();
        let mask = g.splits().get(split);
        assert_eq!(loss, cross_entropy(&logits, g.labels(), mask).unwrap().0);
        let hits = mask
            .iter()
            .filter(|&&v| {
                let row = logits.row(v);
                let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                best == g.labels()[v]
            })
            .count();
        assert_eq!(acc, hits as f64 / mask.len() as f64);
    }
    assert_eq!(
        evaluate(&out.model, &g, &out.patches, Split::Test)
            .unwrap()
            .1,
        out.report.test_acc
    );
}

#[test]
fn single_entry_patches_have_nothing_to_shuffle() {
    let g = small_graph(0.8, 2);
    let cfg = TrainConfig {
        patch_size: 1,
        max_epochs: 15,
        ..quick(PatcherMode::Fast)
    };
    let (ranked, shuffled) = ranked_vs_random_ablation(&g, &cfg, 2).unwrap();
    assert_eq!(ranked, shuffled);
    assert_eq!(
        ranked_vs_random_ablation(&g, &cfg, 2).unwrap(),
        (ranked, shuffled)
    );
}

#[test]
fn every_patcher_mode_trains_deterministically() {
    let g = small_graph(0.4, 4);
    for mode in [
        PatcherMode::Static,
        PatcherMode::Spectral,
        PatcherMode::Fast,
        PatcherMode::LowPass,
    ] {
        let cfg = TrainConfig {
            max_epochs: 10,
            refresh_interval: if mode == PatcherMode::Spectral { 3 } else { 0 },
            ..quick(mode)
        };
        let a = train(&g, &cfg).unwrap();
        let b = train(&g, &cfg).unwrap();
        assert_eq!(a, b, "{mode:?}");
        assert!((0.0..=1.0).contains(&a.report.test_acc));
    }
}
