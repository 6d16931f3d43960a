use std::path::Path;
use std::time::Instant;

use herofilter_core::graph::{normalize_adjacency, Split};
use herofilter_core::heterophily::{
    binary_instance, check_average_response, check_error_bound, construct_aligning_weights,
    error_bound_constant, heterophily_profile,
};
use herofilter_core::math::norm2;
use herofilter_core::patcher::patch_induced_graph;
use herofilter_core::spectral::eigendecompose;
use herofilter_core::synth::{
    frequency_response_rows, heterophily_sweep, synth_graph, SweepCell, SynthSpec,
};
use herofilter_core::train::{
    build_patches, evaluate_tensor, train as train_model, weighted_patches, TrainConfig,
};
use herofilter_core::{Error as CoreError, Graph, PatchMode, SpectralDecomposition};
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{resolve, AnalysisConfig, Overrides, SweepConfig};
use super::{
    AnalyzeArgs, BoundsArgs, CliError, EvalArgs, ExportArgs, FilterArgs, PatchArgs, SweepArgs,
    SynthArgs, TrainArgs,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::dataset::{load_dataset, save_dataset};
use crate::formats::{
    read_patches_csv, write_edges_csv, write_json, write_metrics_csv, write_patches_csv,
    write_response_csv, write_spectrum_csv, write_sweep_csv,
};

const EFFECTIVE_CONFIG: &str = "effective_config.json";

type CmdResult = Result<(), CliError>;

fn print_json(value: &Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("JSON values serialize")
    );
}

fn echo_config<T: Serialize>(dir: &Path, cfg: &T) -> Result<(), CliError> {
    Ok(write_json(&dir.join(EFFECTIVE_CONFIG), cfg)?)
}

fn spectrum(g: &Graph, cfg: &AnalysisConfig) -> Result<SpectralDecomposition, CliError> {
    Ok(eigendecompose(&normalize_adjacency(g, cfg.norm_mode))?)
}

fn filter_overrides(f: &FilterArgs) -> Overrides {
    let mut o = Overrides::default();
    o.set("filter", &f.filter)
        .set("band_lo", &f.band_lo)
        .set("band_hi", &f.band_hi)
        .set("order", &f.order)
        .set("init", &f.init)
        .set("norm_mode", &f.norm_mode)
        .set("eps", &f.eps);
    o
}

pub(super) fn synth(a: SynthArgs) -> CmdResult {
    let mut o = Overrides::default();
    o.set("n", &a.n)
        .set("num_classes", &a.classes)
        .set("target_h", &a.heterophily)
        .set("avg_degree", &a.avg_degree)
        .set("feature_dim", &a.feature_dim)
        .set("feature_noise", &a.noise)
        .set("seed", &a.seed);
    let spec: SynthSpec = resolve(&SynthSpec::default(), a.config.as_deref(), o)?;
    let g = synth_graph(&spec)?;
    save_dataset(&g, &a.out)?;
    echo_config(&a.out, &spec)?;
    let h = herofilter_core::heterophily::node_heterophily(&g);
    print_json(&json!({
        "num_nodes": g.num_nodes(),
        "num_edges": g.edges().len(),
        "mean_h": herofilter_core::heterophily::mean(&h),
    }));
    Ok(())
}

pub(super) fn analyze(a: AnalyzeArgs) -> CmdResult {
    let cfg: AnalysisConfig = resolve(
        &AnalysisConfig::default(),
        a.config.as_deref(),
        filter_overrides(&a.filter),
    )?;
    let g = load_dataset(&a.data)?;
    let dec = spectrum(&g, &cfg)?;
    let profile = heterophily_profile(&g, &dec)?;
    let response = cfg.response(&dec)?;
    let degrees = herofilter_core::degree_vector(&g);
    let summary = json!({
        "num_nodes": g.num_nodes(),
        "num_edges": g.edges().len(),
        "num_classes": g.num_classes(),
        "feature_dim": g.feature_dim(),
        "isolated_nodes": degrees.iter().filter(|&&d| d == 0).count(),
        "mean_h": profile.mean_h,
        "h_norm": norm2(&profile.h),
        "h_hat_norm": norm2(&profile.h_hat),
        "lambda_min": dec.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min),
        "lambda_max": dec.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "filter": cfg.filter,
    });
    if let Some(out) = &a.out {
        write_json(&out.join("analysis.json"), &summary)?;
        write_spectrum_csv(&out.join("spectrum.csv"), &dec, &response)?;
        write_response_csv(
            &out.join("frequency_response.csv"),
            &frequency_response_rows(&dec, &response)?,
        )?;
        let rows: Vec<Value> = (0..g.num_nodes())
            .map(|i| json!({"node": i, "h": profile.h[i], "h_hat": profile.h_hat[i]}))
            .collect();
        write_json(&out.join("heterophily.json"), &rows)?;
        echo_config(out, &cfg)?;
    }
    print_json(&summary);
    Ok(())
}

pub(super) fn bounds(a: BoundsArgs) -> CmdResult {
    let cfg: AnalysisConfig = resolve(
        &AnalysisConfig::default(),
        a.config.as_deref(),
        filter_overrides(&a.filter),
    )?;
    let g = load_dataset(&a.data)?;
    let dec = spectrum(&g, &cfg)?;
    let profile = heterophily_profile(&g, &dec)?;
    let response = cfg.response(&dec)?;

    let avg = check_average_response(&response, &profile.h_hat, cfg.eps)?;
    let average_response = json!({
        "lhs": avg.bound.lhs,
        "rhs": avg.bound.rhs,
        "holds": avg.bound.holds,
        "amgm_holds": avg.amgm_holds,
        "amgm_arithmetic": avg.amgm_arithmetic,
        "amgm_geometric": avg.amgm_geometric,
        "log_denominator": avg.log_denominator,
        "excluded": avg.bound.excluded_indices,
        "notes": avg.bound.notes,
    });

    let alignment = match construct_aligning_weights(g.labels(), &dec.eigenvalues, cfg.order) {
        Ok((_, alignment)) => json!({"alignment": alignment, "order": cfg.order}),
        Err(e @ (CoreError::SingularSpectrum(_) | CoreError::Degenerate(_))) => {
            json!({"alignment": null, "order": cfg.order, "note": e.to_string()})
        }
        Err(e) => return Err(e.into()),
    };

    let error_bound = match binary_instance(&g) {
        Ok(inst) => {
            let r = check_error_bound(
                &response,
                &dec,
                &inst.x0,
                &inst.x1,
                &inst.y0,
                &inst.y1,
                &profile.h_hat,
                cfg.eps,
            )?;
            json!({
                "applicable": true,
                "error": r.error,
                "bound": r.bound,
                "holds": r.holds,
                "proof_chain_bound": r.proof_chain_bound,
                "proof_chain_holds": r.proof_chain_holds,
                "c1": r.c1,
                "excluded": r.excluded,
                "notes": r.notes,
            })
        }
        Err(CoreError::Precondition(msg)) => json!({
            "applicable": false,
            "error": null,
            "bound": null,
            "holds": false,
            "c1": error_bound_constant(),
            "notes": [msg],
        }),
        Err(e) => return Err(e.into()),
    };

    let report = json!({"filter": cfg.filter, "average_response": average_response, "alignment": alignment, "error_bound": error_bound});
    if let Some(out) = &a.out {
        write_json(&out.join("bounds.json"), &report)?;
        echo_config(out, &cfg)?;
    }
    print_json(&report);
    Ok(())
}

fn spectrum_for(g: &Graph, cfg: &TrainConfig) -> Result<Option<SpectralDecomposition>, CliError> {
    if cfg.needs_spectrum() {
        Ok(Some(eigendecompose(&normalize_adjacency(
            g,
            cfg.norm_mode,
        ))?))
    } else {
        Ok(None)
    }
}

pub(super) fn patch(a: PatchArgs) -> CmdResult {
    let mut o = Overrides::default();
    o.set("patcher", &a.patcher)
        .set("patch_size", &a.patch_size)
        .set("ppr_c", &a.c)
        .set("ppr_order", &a.k)
        .set("filter_order", &a.filter_order)
        .set("norm_mode", &a.norm_mode);
    let cfg: TrainConfig = resolve(&TrainConfig::default(), a.config.as_deref(), o)?;
    cfg.validate()?;
    let g = load_dataset(&a.data)?;
    let dec = spectrum_for(&g, &cfg)?;
    let ps = build_patches(&g, &cfg, dec.as_ref())?;
    let induced = patch_induced_graph(&ps);
    write_patches_csv(&a.out.join("patches.csv"), &ps)?;
    write_edges_csv(&a.out.join("induced_edges.csv"), &induced)?;
    echo_config(&a.out, &cfg)?;
    print_json(&json!({
        "num_nodes": ps.num_nodes(),
        "patch_size": ps.patch_size(),
        "induced_edges": induced.len(),
    }));
    Ok(())
}

pub(super) fn train(a: TrainArgs) -> CmdResult {
    let mut o = Overrides::default();
    o.set("seed", &a.seed)
        .set("patcher", &a.patcher)
        .set("lr", &a.lr)
        .set("weight_decay", &a.weight_decay)
        .set("max_epochs", &a.max_epochs)
        .set("patience", &a.patience)
        .set("hidden", &a.hidden)
        .set("dropout", &a.dropout)
        .set("layers", &a.layers)
        .set("patch_size", &a.patch_size)
        .set("filter_order", &a.filter_order)
        .set("refresh_interval", &a.refresh_interval);
    let cfg: TrainConfig = resolve(&TrainConfig::default(), a.config.as_deref(), o)?;
    let g = load_dataset(&a.data)?;
    let start = Instant::now();
    let mut outcome = train_model(&g, &cfg)?;
    outcome.report.wall_time_s = start.elapsed().as_secs_f64();

    let out = &a.out;
    write_json(&out.join("report.json"), &outcome.report)?;
    write_metrics_csv(&out.join("metrics.csv"), &outcome.report.epochs)?;
    write_patches_csv(&out.join("patches.csv"), &outcome.patches)?;
    save_checkpoint(
        &out.join("model.ckpt"),
        &Checkpoint {
            model: outcome.model.clone(),
            seed: cfg.seed,
            patch_mode: outcome.patches.mode,
            patch_weights: outcome.patch_weights.clone(),
        },
    )?;
    if let Some(f) = &outcome.filter {
        write_json(&out.join("filter.json"), f)?;
    }
    echo_config(out, &cfg)?;
    print_json(&json!({
        "best_epoch": outcome.report.best_epoch,
        "best_val_loss": outcome.report.best_val_loss,
        "test_acc": outcome.report.test_acc,
        "epochs": outcome.report.epochs.len(),
    }));
    Ok(())
}

pub(super) fn eval(a: EvalArgs) -> CmdResult {
    let split: Split = serde_json::from_value(Value::String(a.split.clone())).map_err(|_| {
        CliError::Usage(format!(
            "--split must be train, val or test, got {:?}",
            a.split
        ))
    })?;
    let ckpt = load_checkpoint(&a.run.join("model.ckpt"))?;
    let ps = read_patches_csv(&a.run.join("patches.csv"), ckpt.patch_mode)?;
    let g = load_dataset(&a.data)?;
    let tensor = weighted_patches(&g, &ps, ckpt.patch_weights.as_deref())?;
    let (loss, acc) = evaluate_tensor(&ckpt.model, &g, &tensor, split)?;
    let report = json!({"split": split, "loss": loss, "acc": acc});
    if let Some(out) = &a.out {
        write_json(&out.join("eval.json"), &report)?;
        echo_config(out, &json!({"run": a.run, "data": a.data, "split": split}))?;
    }
    print_json(&report);
    Ok(())
}

pub(super) fn sweep(a: SweepArgs, thread_cap: Option<usize>) -> CmdResult {
    let mut synth = Overrides::default();
    synth
        .set("n", &a.n)
        .set("num_classes", &a.classes)
        .set("avg_degree", &a.avg_degree)
        .set("feature_dim", &a.feature_dim)
        .set("feature_noise", &a.noise);
    let mut train = Overrides::default();
    train
        .set("max_epochs", &a.max_epochs)
        .set("patience", &a.patience)
        .set("patch_size", &a.patch_size);
    let mut o = Overrides::default();
    o.set("h_values", &a.h_values)
        .nest("synth", synth)
        .nest("train", train);
    let mut cfg: SweepConfig = resolve(&SweepConfig::default(), a.config.as_deref(), o)?;
    if a.seed.is_some() || a.repeats.is_some() {
        let start = a.seed.or(cfg.seeds.first().copied()).unwrap_or(0);
        cfg.seeds = (0..a.repeats.unwrap_or(1)).map(|i| start + i).collect();
    }
    if cfg.seeds.is_empty() || cfg.h_values.is_empty() {
        return Err(CliError::Usage(
            "sweep needs at least one seed and one h value".to_string(),
        ));
    }
    let jobs = match (a.jobs, thread_cap) {
        (Some(0), _) => return Err(CliError::Usage("--jobs must be positive".to_string())),
        (Some(j), Some(cap)) => j.min(cap),
        (Some(j), None) => j,
        (None, cap) => cap.unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    let cells = pool.install(|| -> Result<Vec<SweepCell>, CliError> {
        let mut cells = Vec::new();
        for &seed in &cfg.seeds {
            let base = SynthSpec {
                seed,
                ..cfg.synth.clone()
            };
            let train_cfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            cells.extend(heterophily_sweep(
                &cfg.h_values,
                &cfg.bands,
                &base,
                &train_cfg,
            )?);
        }
        Ok(cells)
    })?;
    write_sweep_csv(&a.out.join("sweep_grid.csv"), &cells)?;
    echo_config(&a.out, &cfg)?;
    print_json(&json!({"cells": cells.len(), "seeds": cfg.seeds}));
    Ok(())
}

pub(super) fn export_induced(a: ExportArgs) -> CmdResult {
    let ps = read_patches_csv(&a.patches, PatchMode::Spectral)?;
    let edges = patch_induced_graph(&ps);
    write_edges_csv(&a.out.join("edges.csv"), &edges)?;
    echo_config(&a.out, &json!({"patches": a.patches}))?;
    print_json(&json!({"num_nodes": ps.num_nodes(), "num_edges": edges.len()}));
    Ok(())
}
