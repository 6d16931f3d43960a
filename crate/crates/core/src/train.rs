//! Adam, the training loop with validation-loss early stopping, patcher
//! construction for each training mode, evaluation, and the ranked-vs-shuffled
//! patch order ablation.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{normalize_adjacency, Graph, NormMode, Split};
use crate::linalg::Matrix;
use crate::math::sqrt;
use crate::mixer::{
    accuracy, cross_entropy, mixer_backward, mixer_forward_nodes, predict, Aggregation,
    MixerConfig, MixerModel, Nonlinearity, NormAxis,
};
use crate::patcher::{
    extract_patches, fast_patch, top_p_computed, PatchIndex, PatchMode, PatchSet, PatchTensor,
};
use crate::spectral::{
    eigendecompose, low_pass_reference, Activation, PolyFilter, SpectralDecomposition,
};

/// How patches are chosen during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatcherMode {
    /// Filter fixed at its initial weights; patches selected once.
    #[default]
    Static,
    /// Learnable filter: relevance scores weight the patch rows and receive
    /// gradients; selection is redone every `refresh_interval` epochs.
    Spectral,
    /// Truncated personalized PageRank rank vectors.
    Fast,
    /// Relevance under the fixed low-pass reference response.
    LowPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Width of the feature-mixing and head MLPs.
    pub hidden: usize,
    /// Width of the patch-mixing MLP; `None` means `2p`.
    pub hidden_patch: Option<usize>,
    pub dropout: f64,
    pub layers: usize,
    pub patch_size: usize,
    pub filter_order: usize,
    pub patcher: PatcherMode,
    pub refresh_interval: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub nonlinearity: Nonlinearity,
    pub residual: bool,
    /// Axis of the layer norm in front of the patch-mixing MLP.
    pub patch_norm_axis: NormAxis,
    pub norm_mode: NormMode,
    pub filter_activation: Activation,
    /// Initial value of every filter weight.
    pub filter_init: f64,
    /// One weight per polynomial order instead of one per eigenvalue.
    pub shared_filter_weights: bool,
    /// Dangling scalar `c` of the fast patcher.
    pub ppr_c: f64,
    /// Neumann truncation order of the fast patcher.
    pub ppr_order: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            max_epochs: 500,
            patience: 50,
            hidden: 64,
            hidden_patch: None,
            dropout: 0.5,
            layers: 2,
            patch_size: 8,
            filter_order: 2,
            patcher: PatcherMode::Static,
            refresh_interval: 0,
            seed: 0,
            aggregation: Aggregation::Mean,
            nonlinearity: Nonlinearity::Gelu,
            residual: false,
            patch_norm_axis: NormAxis::Feature,
            norm_mode: NormMode::Sym,
            filter_activation: Activation::Tanh,
            filter_init: 1.0,
            shared_filter_weights: false,
            ppr_c: 0.5,
            ppr_order: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Param(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Param(
                "weight_decay must be non-negative".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Param(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Param(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.patch_size == 0 || self.filter_order == 0 || self.hidden == 0 {
            return Err(Error::Param(
                "patch_size, filter_order and hidden must be positive".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.ppr_c) {
            return Err(Error::Param(format!(
                "ppr_c must lie in [0, 1), got {}",
                self.ppr_c
            )));
        }
        Ok(())
    }

    pub fn mixer_config(&self, feature_dim: usize, num_classes: usize) -> MixerConfig {
        let mut m = MixerConfig::new(self.patch_size, feature_dim, num_classes);
        m.layers = self.layers;
        m.hidden_patch = self.hidden_patch.unwrap_or(2 * self.patch_size);
        m.hidden_feature = self.hidden;
        m.hidden_head = self.hidden;
        m.dropout = self.dropout;
        m.residual = self.residual;
        m.aggregation = self.aggregation;
        m.nonlinearity = self.nonlinearity;
        m.patch_norm_axis = self.patch_norm_axis;
        m
    }

    pub fn needs_spectrum(&self) -> bool {
        self.patcher != PatcherMode::Fast
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_acc: f64,
    /// Filled in by callers that can read a clock.
    pub wall_time_s: f64,
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step with the weight decay added to the gradient.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hp: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(shape_err!(
            "adam step on {} parameters with {} gradients and {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    state.t += 1;
    let bc1 = 1.0 - powi_u64(hp.beta1, state.t);
    let bc2 = 1.0 - powi_u64(hp.beta2, state.t);
    for i in 0..params.len() {
        let g = grads[i] + hp.weight_decay * params[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hp.lr * m_hat / (sqrt(v_hat) + hp.eps);
    }
    Ok(())
}

fn powi_u64(x: f64, t: u64) -> f64 {
    crate::math::powf(x, t as f64)
}

/// Top-p patches of `U diag(q) Uᵀ` for an arbitrary response `q`.
pub fn patches_from_response(dec: &SpectralDecomposition, q: &[f64], p: usize) -> Result<PatchSet> {
    let r = dec.synthesize(q)?;
    let n = r.rows();
    if p > n {
        return Err(Error::Size { p, n });
    }
    let rows: Vec<Result<_>> = (0..n).map(|v| top_p_computed(r.row(v), p)).collect();
    let mut indices = Vec::with_capacity(n * p);
    let mut scores = Vec::with_capacity(n * p);
    for row in rows {
        let (i, s) = row?;
        indices.extend(i);
        scores.extend(s);
    }
    PatchSet::from_parts(n, p, indices, scores, PatchMode::Spectral)
}

/// Trainable filter parameters: either one weight per `(k, i)` or one per `k`.
#[derive(Debug, Clone, PartialEq)]
struct FilterParams {
    theta: Vec<f64>,
    order: usize,
    n: usize,
    shared: bool,
    activation: Activation,
}

impl FilterParams {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        let len = if cfg.shared_filter_weights {
            cfg.filter_order
        } else {
            cfg.filter_order * n
        };
        Self {
            theta: vec![cfg.filter_init; len],
            order: cfg.filter_order,
            n,
            shared: cfg.shared_filter_weights,
            activation: cfg.filter_activation,
        }
    }

    fn filter(&self) -> PolyFilter {
        let weights = (0..self.order)
            .map(|k| {
                if self.shared {
                    vec![self.theta[k]; self.n]
                } else {
                    self.theta[k * self.n..(k + 1) * self.n].to_vec()
                }
            })
            .collect();
        PolyFilter {
            weights,
            activation: self.activation,
            apply_activation_in_relevance: true,
        }
    }

    /// Pulls `∂L/∂q` back to the parameter vector.
    fn pull_back(&self, dq: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
        let dqdw = self.filter().relevance_diagonal_grad(lambda)?;
        let mut out = vec![0.0; self.theta.len()];
        for (k, row) in dqdw.iter().enumerate() {
            for i in 0..self.n {
                let g = dq[i] * row[i];
                if self.shared {
                    out[k] += g;
                } else {
                    out[k * self.n + i] += g;
                }
            }
        }
        Ok(out)
    }
}

/// Patch selection used before training starts, for every mode.
pub fn build_patches(
    g: &Graph,
    cfg: &TrainConfig,
    dec: Option<&SpectralDecomposition>,
) -> Result<PatchSet> {
    if cfg.patch_size > g.num_nodes() {
        return Err(Error::Size {
            p: cfg.patch_size,
            n: g.num_nodes(),
        });
    }
    match cfg.patcher {
        PatcherMode::Fast => {
            let a = normalize_adjacency(g, cfg.norm_mode);
            fast_patch(g, &a, cfg.ppr_c, cfg.ppr_order, cfg.patch_size)
        }
        mode => {
            let dec = dec.ok_or_else(|| {
                Error::Precondition("this patcher mode needs a spectrum".to_string())
            })?;
            if dec.len() != g.num_nodes() {
                return Err(shape_err!(
                    "spectrum has {} entries for {} nodes",
                    dec.len(),
                    g.num_nodes()
                ));
            }
            let q = if mode == PatcherMode::LowPass {
                low_pass_reference(&dec.eigenvalues)
            } else {
                FilterParams::new(cfg, g.num_nodes())
                    .filter()
                    .relevance_diagonal(&dec.eigenvalues)?
            };
            patches_from_response(dec, &q, cfg.patch_size)
        }
    }
}

/// Everything needed to reproduce predictions of a trained run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MixerModel,
    pub patches: PatchSet,
    /// Row weights of the patch tensor in soft-weighted mode, flat `n × p`.
    pub patch_weights: Option<Vec<f64>>,
    /// Learned filter in soft-weighted mode.
    pub filter: Option<PolyFilter>,
    pub report: TrainReport,
}

impl TrainOutcome {
    /// The patch tensor the model was evaluated on.
    pub fn patch_tensor(&self, g: &Graph) -> Result<PatchTensor> {
        weighted_patches(g, &self.patches, self.patch_weights.as_deref())
    }
}

/// `P[v][j] = w_{v,j} · X[idx_{v,j}]`, or plain rows when `weights` is `None`.
pub fn weighted_patches<P: PatchIndex + ?Sized>(
    g: &Graph,
    ps: &P,
    weights: Option<&[f64]>,
) -> Result<PatchTensor> {
    let mut t = extract_patches(g, ps)?;
    if let Some(w) = weights {
        if w.len() != ps.num_nodes() * ps.patch_size() {
            return Err(shape_err!(
                "{} patch weights for {}x{} patches",
                w.len(),
                ps.num_nodes(),
                ps.patch_size()
            ));
        }
        let d = t.d;
        for (slot, &s) in w.iter().enumerate() {
            for x in &mut t.data[slot * d..(slot + 1) * d] {
                *x *= s;
            }
        }
    }
    Ok(t)
}

/// Computes the spectrum if the configured patcher needs one, then trains.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dec = if cfg.needs_spectrum() {
        Some(eigendecompose(&normalize_adjacency(g, cfg.norm_mode))?)
    } else {
        None
    };
    train_with_spectrum(g, cfg, dec.as_ref())
}

pub fn train_with_spectrum(
    g: &Graph,
    cfg: &TrainConfig,
    dec: Option<&SpectralDecomposition>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let patches = build_patches(g, cfg, dec)?;
    if cfg.patcher == PatcherMode::Spectral {
        let dec =
            dec.ok_or_else(|| Error::Precondition("spectral mode needs a spectrum".to_string()))?;
        return train_soft(g, cfg, dec, patches);
    }
    let tensor = extract_patches(g, &patches)?;
    let (model, report) = train_on_tensor(g, cfg, &tensor)?;
    Ok(TrainOutcome {
        model,
        patches,
        patch_weights: None,
        filter: None,
        report,
    })
}

fn check_splits(g: &Graph) -> Result<()> {
    for (name, s) in [
        ("train", Split::Train),
        ("val", Split::Val),
        ("test", Split::Test),
    ] {
        if g.splits().get(s).is_empty() {
            return Err(Error::Degenerate(format!("{name} split is empty")));
        }
    }
    Ok(())
}

/// Early-stopping bookkeeping shared by both training loops.
struct Stopper {
    best_epoch: usize,
    best_val_loss: f64,
    patience: usize,
}

impl Stopper {
    /// Records an epoch; returns whether it is the new best.
    fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if self.best_epoch == 0 || val_loss < self.best_val_loss {
            self.best_epoch = epoch;
            self.best_val_loss = val_loss;
            true
        } else {
            false
        }
    }

    fn exhausted(&self, epoch: usize) -> bool {
        epoch - self.best_epoch >= self.patience
    }
}

fn epoch_loss_check(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite training loss at epoch {epoch}"
        )));
    }
    Ok(())
}

fn split_metrics(logits: &Matrix, g: &Graph, split: Split) -> Result<(f64, f64)> {
    let mask = g.splits().get(split);
    let (loss, _) = cross_entropy(logits, g.labels(), mask)?;
    Ok((loss, accuracy(logits, g.labels(), mask)?))
}

/// Mixer training on a fixed patch tensor.
pub fn train_on_tensor(
    g: &Graph,
    cfg: &TrainConfig,
    tensor: &PatchTensor,
) -> Result<(MixerModel, TrainReport)> {
    cfg.validate()?;
    check_splits(g)?;
    let mut model = MixerModel::init(cfg.mixer_config(g.feature_dim(), g.num_classes()), cfg.seed)?;
    let hp = AdamHyper::new(cfg.lr, cfg.weight_decay);
    let mut adam = AdamState::new(model.num_params());
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    epoch_rng.set_stream(1);
    let train_nodes = g.splits().train.clone();
    let train_labels: Vec<usize> = train_nodes.iter().map(|&v| g.labels()[v]).collect();
    let rows: Vec<usize> = (0..train_nodes.len()).collect();

    let mut stopper = Stopper {
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        patience: cfg.patience,
    };
    let mut best_params = model.params().to_vec();
    let mut best_test = 0.0;
    let mut epochs = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let seed = epoch_rng.random::<u64>();
        let (logits, tape) = mixer_forward_nodes(tensor, &model, &train_nodes, true, seed)?;
        let (train_loss, dl) = cross_entropy(&logits, &train_labels, &rows)?;
        epoch_loss_check(train_loss, epoch)?;
        let grads = mixer_backward(&model, &tape, &dl)?;
        adam_step(model.params_mut(), &grads.params, &mut adam, &hp)?;

        let logits = predict(tensor, &model)?;
        let (val_loss, val_acc) = split_metrics(&logits, g, Split::Val)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        if stopper.observe(epoch, val_loss) {
            best_params.copy_from_slice(model.params());
            best_test = split_metrics(&logits, g, Split::Test)?.1;
        }
        if stopper.exhausted(epoch) {
            break;
        }
    }
    let model = MixerModel::from_params(model.config().clone(), best_params)?;
    Ok((
        model,
        TrainReport {
            epochs,
            best_epoch: stopper.best_epoch,
            best_val_loss: stopper.best_val_loss,
            test_acc: best_test,
            wall_time_s: 0.0,
        },
    ))
}

/// Relevance `R[v, u] = Σ_i U[v,i] U[u,i] q_i` for every selected pair.
fn pair_relevance(dec: &SpectralDecomposition, ps: &PatchSet, q: &[f64]) -> Vec<f64> {
    let u = &dec.eigenvectors;
    let p = ps.patch_size();
    ps.indices()
        .iter()
        .enumerate()
        .map(|(slot, &w)| {
            let (a, b) = (u.row(slot / p), u.row(w));
            (0..q.len()).map(|i| a[i] * b[i] * q[i]).sum()
        })
        .collect()
}

/// Mixer parameters, filter weights, patches and patch weights at the best
/// validation epoch.
type SpectralSnapshot = (Vec<f64>, Vec<f64>, PatchSet, Vec<f64>);

/// Spectral mode: patch rows weighted by relevance, filter trained jointly.
fn train_soft(
    g: &Graph,
    cfg: &TrainConfig,
    dec: &SpectralDecomposition,
    initial: PatchSet,
) -> Result<TrainOutcome> {
    check_splits(g)?;
    let n = g.num_nodes();
    let (p, d) = (cfg.patch_size, g.feature_dim());
    let lambda = &dec.eigenvalues;
    let mut model = MixerModel::init(cfg.mixer_config(d, g.num_classes()), cfg.seed)?;
    let mut filter = FilterParams::new(cfg, n);
    let hp = AdamHyper::new(cfg.lr, cfg.weight_decay);
    let mut adam = AdamState::new(model.num_params());
    let mut filter_adam = AdamState::new(filter.theta.len());
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    epoch_rng.set_stream(1);
    let train_nodes = g.splits().train.clone();
    let train_labels: Vec<usize> = train_nodes.iter().map(|&v| g.labels()[v]).collect();
    let rows: Vec<usize> = (0..train_nodes.len()).collect();
    let x = g.features();

    let mut patches = initial;
    let mut stopper = Stopper {
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        patience: cfg.patience,
    };
    let mut best: Option<SpectralSnapshot> = None;
    let mut best_test = 0.0;
    let mut epochs = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        if cfg.refresh_interval > 0 && epoch > 1 && (epoch - 1) % cfg.refresh_interval == 0 {
            let q = filter.filter().relevance_diagonal(lambda)?;
            patches = patches_from_response(dec, &q, p)?;
        }
        let q = filter.filter().relevance_diagonal(lambda)?;
        let weights = pair_relevance(dec, &patches, &q);
        let tensor = weighted_patches(g, &patches, Some(&weights))?;

        let seed = epoch_rng.random::<u64>();
        let (logits, tape) = mixer_forward_nodes(&tensor, &model, &train_nodes, true, seed)?;
        let (train_loss, dl) = cross_entropy(&logits, &train_labels, &rows)?;
        epoch_loss_check(train_loss, epoch)?;
        let grads = mixer_backward(&model, &tape, &dl)?;

        // chain rule through P[v][j] = s_{v,j} X[u] and s_{v,j} = Σ_i U[v,i] U[u,i] q_i
        let mut dq = vec![0.0; n];
        let u = &dec.eigenvectors;
        for (row, &v) in train_nodes.iter().enumerate() {
            for j in 0..p {
                let w = patches.row_indices(v)[j];
                let dp = &grads.inputs[(row * p + j) * d..(row * p + j + 1) * d];
                let ds: f64 = dp.iter().zip(x.row(w)).map(|(a, b)| a * b).sum();
                if ds == 0.0 {
                    continue;
                }
                let (a, b) = (u.row(v), u.row(w));
                for i in 0..n {
                    dq[i] += ds * a[i] * b[i];
                }
            }
        }
        let dtheta = filter.pull_back(&dq, lambda)?;
        adam_step(model.params_mut(), &grads.params, &mut adam, &hp)?;
        adam_step(&mut filter.theta, &dtheta, &mut filter_adam, &hp)?;

        let q = filter.filter().relevance_diagonal(lambda)?;
        let weights = pair_relevance(dec, &patches, &q);
        let tensor = weighted_patches(g, &patches, Some(&weights))?;
        let logits = predict(&tensor, &model)?;
        let (val_loss, val_acc) = split_metrics(&logits, g, Split::Val)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        if stopper.observe(epoch, val_loss) {
            best = Some((
                model.params().to_vec(),
                filter.theta.clone(),
                patches.clone(),
                weights,
            ));
            best_test = split_metrics(&logits, g, Split::Test)?.1;
        }
        if stopper.exhausted(epoch) {
            break;
        }
    }
    let (params, theta, patches, weights) = match best {
        Some(b) => b,
        None => {
            let q = filter.filter().relevance_diagonal(lambda)?;
            let w = pair_relevance(dec, &patches, &q);
            (model.params().to_vec(), filter.theta.clone(), patches, w)
        }
    };
    filter.theta = theta;
    Ok(TrainOutcome {
        model: MixerModel::from_params(model.config().clone(), params)?,
        patches,
        patch_weights: Some(weights),
        filter: Some(filter.filter()),
        report: TrainReport {
            epochs,
            best_epoch: stopper.best_epoch,
            best_val_loss: stopper.best_val_loss,
            test_acc: best_test,
            wall_time_s: 0.0,
        },
    })
}

/// Eval-mode loss and accuracy on one split, with plain patch rows.
pub fn evaluate(model: &MixerModel, g: &Graph, ps: &PatchSet, split: Split) -> Result<(f64, f64)> {
    evaluate_tensor(model, g, &extract_patches(g, ps)?, split)
}

pub fn evaluate_tensor(
    model: &MixerModel,
    g: &Graph,
    tensor: &PatchTensor,
    split: Split,
) -> Result<(f64, f64)> {
    if tensor.n != g.num_nodes() {
        return Err(shape_err!(
            "patch tensor covers {} nodes, graph has {}",
            tensor.n,
            g.num_nodes()
        ));
    }
    split_metrics(&predict(tensor, model)?, g, split)
}

/// Mean test accuracy over `trials` seeds with ranked patch rows and with
/// each row's order shuffled.
pub fn ranked_vs_random_ablation(
    g: &Graph,
    cfg: &TrainConfig,
    trials: usize,
) -> Result<(f64, f64)> {
    ranked_vs_random_trials(g, cfg, trials).map(|runs| {
        let t = runs.len() as f64;
        (
            runs.iter().map(|r| r.0).sum::<f64>() / t,
            runs.iter().map(|r| r.1).sum::<f64>() / t,
        )
    })
}

/// Per-trial `(ranked, shuffled)` test accuracies; trial `t` uses seed
/// `cfg.seed + t` for both model and shuffle.
pub fn ranked_vs_random_trials(
    g: &Graph,
    cfg: &TrainConfig,
    trials: usize,
) -> Result<Vec<(f64, f64)>> {
    if trials == 0 {
        return Err(Error::Param(
            "ablation needs at least one trial".to_string(),
        ));
    }
    cfg.validate()?;
    let hard = TrainConfig {
        patcher: if cfg.patcher == PatcherMode::Spectral {
            PatcherMode::Static
        } else {
            cfg.patcher
        },
        ..cfg.clone()
    };
    let dec = if hard.needs_spectrum() {
        Some(eigendecompose(&normalize_adjacency(g, hard.norm_mode))?)
    } else {
        None
    };
    let patches = build_patches(g, &hard, dec.as_ref())?;
    let ranked = extract_patches(g, &patches)?;
    let p = patches.patch_size();
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let trial_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(t as u64),
            ..hard.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(trial_cfg.seed);
        rng.set_stream(2);
        let shuffled = patches.permuted_rows(|_| {
            let mut order: Vec<usize> = (0..p).collect();
            order.shuffle(&mut rng);
            order
        });
        let shuffled = extract_patches(g, &shuffled)?;
        let a = train_on_tensor(g, &trial_cfg, &ranked)?.1.test_acc;
        let b = train_on_tensor(g, &trial_cfg, &shuffled)?.1.test_acc;
        out.push((a, b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Splits;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![0.5, -1.0, 2.0];
        let mut s = AdamState::new(3);
        for _ in 0..3 {
            adam_step(&mut p, &[0.0; 3], &mut s, &AdamHyper::new(0.1, 0.0)).unwrap();
        }
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_is_sign_step() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut s = AdamState::new(3);
        adam_step(
            &mut p,
            &[3.0, -0.2, 1e-3],
            &mut s,
            &AdamHyper::new(0.01, 0.0),
        )
        .unwrap();
        for (x, sgn) in p.iter().zip([1.0, -1.0, 1.0]) {
            assert!((x - (1.0 - 0.01 * sgn)).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_matches_scalar_trace() {
        let hp = AdamHyper::new(0.05, 0.1);
        let mut p = vec![0.7];
        let mut s = AdamState::new(1);
        let (mut theta, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            adam_step(&mut p, &[0.4], &mut s, &hp).unwrap();
            let g = 0.4 + 0.1 * theta;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - theta).abs() < 1e-12);
        }
        assert!(adam_step(&mut p, &[0.0, 1.0], &mut s, &hp).is_err());
    }

    #[test]
    fn stopper_follows_patience() {
        let mut s = Stopper {
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
            patience: 1,
        };
        assert!(s.observe(1, 1.0));
        assert!(!s.exhausted(1));
        assert!(!s.observe(2, 1.5));
        assert!(s.exhausted(2));
        assert_eq!(s.best_epoch, 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..Default::default()
            },
            TrainConfig {
                patience: 600,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Param(_))));
        }
    }

    fn toy_graph() -> Graph {
        // two cliques of 10, class features orthogonal
        let n = 20;
        let mut edges = vec![];
        for a in 0..n {
            for b in a + 1..n {
                if a / 10 == b / 10 {
                    edges.push((a, b));
                }
            }
        }
        let labels: Vec<usize> = (0..n).map(|v| v / 10).collect();
        let x = Matrix::from_vec(
            n,
            2,
            labels
                .iter()
                .flat_map(|&y| if y == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
                .collect(),
        )
        .unwrap();
        let splits = Splits {
            train: vec![0, 1, 2, 3, 10, 11, 12, 13],
            val: vec![4, 5, 6, 14, 15, 16],
            test: vec![7, 8, 9, 17, 18, 19],
        };
        Graph::new(n, 2, &edges, x, labels, splits).unwrap()
    }

    fn quick(mode: PatcherMode) -> TrainConfig {
        TrainConfig {
            patch_size: 3,
            hidden: 8,
            max_epochs: 200,
            patience: 50,
            patcher: mode,
            refresh_interval: if mode == PatcherMode::Spectral { 20 } else { 0 },
            ..Default::default()
        }
    }

    #[test]
    fn separable_toy_graph_is_learned_in_every_mode() {
        let g = toy_graph();
        for mode in [
            PatcherMode::Static,
            PatcherMode::Spectral,
            PatcherMode::Fast,
            PatcherMode::LowPass,
        ] {
            let out = train(&g, &quick(mode)).unwrap();
            assert_eq!(out.report.test_acc, 1.0, "{mode:?}");
            let t = out.patch_tensor(&g).unwrap();
            assert_eq!(
                evaluate_tensor(&out.model, &g, &t, Split::Test).unwrap().1,
                out.report.test_acc
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let g = toy_graph();
        let cfg = TrainConfig {
            max_epochs: 30,
            patience: 30,
            ..quick(PatcherMode::Spectral)
        };
        assert_eq!(train(&g, &cfg).unwrap(), train(&g, &cfg).unwrap());
    }

    #[test]
    fn best_epoch_has_minimal_val_loss_and_patience_is_respected() {
        let g = toy_graph();
        let cfg = TrainConfig {
            patience: 5,
            max_epochs: 400,
            lr: 0.05,
            ..quick(PatcherMode::Static)
        };
        let r = train(&g, &cfg).unwrap().report;
        let min = r
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.epochs[r.best_epoch - 1].val_loss, min);
        assert!(r.epochs.len() <= cfg.max_epochs);
        assert!(r.epochs.len() - r.best_epoch <= cfg.patience);
    }

    #[test]
    fn zero_lr_equivalent_keeps_initial_model() {
        let g = toy_graph();
        let cfg = TrainConfig {
            max_epochs: 5,
            patience: 5,
            ..quick(PatcherMode::Static)
        };
        let patches = build_patches(
            &g,
            &cfg,
            Some(&eigendecompose(&normalize_adjacency(&g, NormMode::Sym)).unwrap()),
        )
        .unwrap();
        let t = extract_patches(&g, &patches).unwrap();
        let init = MixerModel::init(cfg.mixer_config(2, 2), cfg.seed).unwrap();
        let mut m = init.clone();
        let mut s = AdamState::new(m.num_params());
        let grads = vec![0.3; m.num_params()];
        adam_step(
            m.params_mut(),
            &grads,
            &mut s,
            &AdamHyper {
                lr: 0.0,
                ..AdamHyper::new(0.0, 5e-4)
            },
        )
        .unwrap();
        assert_eq!(m.params(), init.params());
        assert_eq!(predict(&t, &m).unwrap(), predict(&t, &init).unwrap());
    }

    #[test]
    fn untrained_zero_model_predicts_class_zero() {
        let g = toy_graph();
        let cfg = quick(PatcherMode::Static);
        let len = MixerModel::init(cfg.mixer_config(2, 2), 0)
            .unwrap()
            .num_params();
        let zero = MixerModel::from_params(cfg.mixer_config(2, 2), vec![0.0; len]).unwrap();
        let ps = build_patches(
            &g,
            &cfg,
            Some(&eigendecompose(&normalize_adjacency(&g, NormMode::Sym)).unwrap()),
        )
        .unwrap();
        let (loss, acc) = evaluate(&zero, &g, &ps, Split::Test).unwrap();
        assert_eq!(acc, 0.5);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ablation_with_single_patch_is_identical() {
        let g = toy_graph();
        let cfg = TrainConfig {
            patch_size: 1,
            max_epochs: 20,
            patience: 20,
            ..quick(PatcherMode::Fast)
        };
        for (a, b) in ranked_vs_random_trials(&g, &cfg, 2).unwrap() {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_split_is_degenerate() {
        let g = toy_graph();
        let g = Graph::new(
            20,
            2,
            g.edges(),
            g.features().clone(),
            g.labels().to_vec(),
            Splits {
                train: vec![0],
                val: vec![],
                test: vec![1],
            },
        )
        .unwrap();
        assert!(matches!(
            train(&g, &quick(PatcherMode::Fast)),
            Err(Error::Degenerate(_))
        ));
    }
}
