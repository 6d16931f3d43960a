use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Aggregation, LayerOffsets, MixerModel, Nonlinearity, NormAxis};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::math::sqrt;
use crate::par::map_range;
use crate::patcher::PatchTensor;

/// Nodes per gradient accumulation chunk. Chunk sums are added in chunk
/// order, so gradients do not depend on the thread count.
const CHUNK: usize = 16;

/// `(x − mean) / sqrt(var + eps) ⊙ gain + bias` over the whole slice.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / sqrt(var + eps);
    x.iter()
        .zip(gain)
        .zip(bias)
        .map(|((v, g), b)| (v - mean) * rstd * g + b)
        .collect()
}

/// Groups of a `p × d` block normalized together: `(groups, members, index)`
/// with `index(group, member)` the flat position and the gain indexed by
/// member.
fn norm_groups(
    p: usize,
    d: usize,
    axis: NormAxis,
) -> (usize, usize, impl Fn(usize, usize) -> usize) {
    let (groups, members) = match axis {
        NormAxis::Patch => (d, p),
        NormAxis::Feature => (p, d),
    };
    (groups, members, move |g: usize, t: usize| match axis {
        NormAxis::Patch => t * d + g,
        NormAxis::Feature => g * d + t,
    })
}

/// Returns `(xhat, rstd, normed)`.
fn block_norm(
    x: &[f64],
    p: usize,
    d: usize,
    axis: NormAxis,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (groups, members, at) = norm_groups(p, d, axis);
    let mut xhat = vec![0.0; p * d];
    let mut normed = vec![0.0; p * d];
    let mut rstd = vec![0.0; groups];
    for g in 0..groups {
        let mean = (0..members).map(|t| x[at(g, t)]).sum::<f64>() / members as f64;
        let var = (0..members)
            .map(|t| {
                let c = x[at(g, t)] - mean;
                c * c
            })
            .sum::<f64>()
            / members as f64;
        let r = 1.0 / sqrt(var + eps);
        rstd[g] = r;
        for t in 0..members {
            let i = at(g, t);
            xhat[i] = (x[i] - mean) * r;
            normed[i] = xhat[i] * gain[t] + bias[t];
        }
    }
    (xhat, rstd, normed)
}

/// Adds the input gradient of [`block_norm`] to `dx` and accumulates the
/// gain and bias gradients.
#[allow(clippy::too_many_arguments)]
fn block_norm_backward(
    da: &[f64],
    cache: &BlockCache,
    p: usize,
    d: usize,
    axis: NormAxis,
    gain: &[f64],
    gain_grad: &mut [f64],
    bias_grad: &mut [f64],
    dx: &mut [f64],
) {
    let (groups, members, at) = norm_groups(p, d, axis);
    let mut dxhat = vec![0.0; members];
    for g in 0..groups {
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for t in 0..members {
            let i = at(g, t);
            gain_grad[t] += da[i] * cache.xhat[i];
            bias_grad[t] += da[i];
            dxhat[t] = da[i] * gain[t];
            mean_g += dxhat[t];
            mean_gx += dxhat[t] * cache.xhat[i];
        }
        mean_g /= members as f64;
        mean_gx /= members as f64;
        let r = cache.rstd[g];
        for t in 0..members {
            let i = at(g, t);
            dx[i] += r * (dxhat[t] - mean_g - cache.xhat[i] * mean_gx);
        }
    }
}

/// Intermediates of one mixing block for one node.
#[derive(Debug, Clone, PartialEq)]
struct BlockCache {
    /// normalized input, `p × d`
    xhat: Vec<f64>,
    /// per normalized group: columns for patch mixing, rows for feature mixing
    rstd: Vec<f64>,
    /// layer-norm output, `p × d`
    normed: Vec<f64>,
    /// pre-activation hidden units: `hp × d` (patch) or `p × hf` (feature)
    hidden: Vec<f64>,
    /// dropout scale per output entry; empty in eval mode
    mask: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct NodeTape {
    blocks: Vec<(BlockCache, BlockCache)>,
    aggregated: Vec<f64>,
    head_hidden: Vec<f64>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    nodes: Vec<usize>,
    tapes: Vec<NodeTape>,
    generation: u64,
    num_params: usize,
    pub seed: u64,
    pub train_mode: bool,
}

impl ForwardTape {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }
}

/// Parameter gradient (same layout as the model) and the gradient with
/// respect to each taped node's `p × d` input patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Vec<f64>,
}

struct Dims {
    p: usize,
    d: usize,
    hp: usize,
    hf: usize,
    hh: usize,
    c: usize,
    agg: usize,
}

fn dims(model: &MixerModel) -> Dims {
    let cfg = model.config();
    Dims {
        p: cfg.patch_size,
        d: cfg.feature_dim,
        hp: cfg.hidden_patch,
        hf: cfg.hidden_feature,
        hh: cfg.hidden_head,
        c: cfg.num_classes,
        agg: cfg.aggregated_dim(),
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

/// Patch-axis block. `x` is `p × d`; normalization and the MLP run down
/// each feature column.
#[allow(clippy::too_many_arguments)]
fn patch_block(
    x: &[f64],
    params: &[f64],
    o: &LayerOffsets,
    dm: &Dims,
    axis: NormAxis,
    act: Nonlinearity,
    eps: f64,
    residual: bool,
    mask: Vec<f64>,
) -> (Vec<f64>, BlockCache) {
    let (p, d, hp) = (dm.p, dm.d, dm.hp);
    let gain = &params[o.patch_ln_gain.clone()];
    let bias = &params[o.patch_ln_bias.clone()];
    let w1 = &params[o.patch_w1.clone()];
    let b1 = &params[o.patch_b1.clone()];
    let w2 = &params[o.patch_w2.clone()];
    let b2 = &params[o.patch_b2.clone()];

    let (xhat, rstd, normed) = block_norm(x, p, d, axis, gain, bias, eps);
    let mut hidden = vec![0.0; hp * d];
    for m in 0..hp {
        let row = &mut hidden[m * d..(m + 1) * d];
        row.fill(b1[m]);
        for j in 0..p {
            let w = w1[m * p + j];
            for (h, a) in row.iter_mut().zip(&normed[j * d..(j + 1) * d]) {
                *h += w * a;
            }
        }
    }
    let activated: Vec<f64> = hidden.iter().map(|&h| act.apply(h)).collect();
    let mut out = vec![0.0; p * d];
    for j in 0..p {
        let row = &mut out[j * d..(j + 1) * d];
        row.fill(b2[j]);
        for m in 0..hp {
            let w = w2[j * hp + m];
            for (y, u) in row.iter_mut().zip(&activated[m * d..(m + 1) * d]) {
                *y += w * u;
            }
        }
    }
    finish_block(&mut out, x, &mask, residual);
    (
        out,
        BlockCache {
            xhat,
            rstd,
            normed,
            hidden,
            mask,
        },
    )
}

/// Feature-axis block. Normalization and the MLP run along each patch row.
#[allow(clippy::too_many_arguments)]
fn feature_block(
    x: &[f64],
    params: &[f64],
    o: &LayerOffsets,
    dm: &Dims,
    act: Nonlinearity,
    eps: f64,
    residual: bool,
    mask: Vec<f64>,
) -> (Vec<f64>, BlockCache) {
    let (p, d, hf) = (dm.p, dm.d, dm.hf);
    let gain = &params[o.feature_ln_gain.clone()];
    let bias = &params[o.feature_ln_bias.clone()];
    let w1 = &params[o.feature_w1.clone()];
    let b1 = &params[o.feature_b1.clone()];
    let w2 = &params[o.feature_w2.clone()];
    let b2 = &params[o.feature_b2.clone()];

    let (xhat, rstd, normed) = block_norm(x, p, d, NormAxis::Feature, gain, bias, eps);
    let mut hidden = vec![0.0; p * hf];
    for j in 0..p {
        let a = &normed[j * d..(j + 1) * d];
        for m in 0..hf {
            let w = &w1[m * d..(m + 1) * d];
            hidden[j * hf + m] = b1[m] + a.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    let activated: Vec<f64> = hidden.iter().map(|&h| act.apply(h)).collect();
    let mut out = vec![0.0; p * d];
    for j in 0..p {
        let u = &activated[j * hf..(j + 1) * hf];
        for k in 0..d {
            let w = &w2[k * hf..(k + 1) * hf];
            out[j * d + k] = b2[k] + u.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    finish_block(&mut out, x, &mask, residual);
    (
        out,
        BlockCache {
            xhat,
            rstd,
            normed,
            hidden,
            mask,
        },
    )
}

fn finish_block(out: &mut [f64], input: &[f64], mask: &[f64], residual: bool) {
    if !mask.is_empty() {
        for (y, m) in out.iter_mut().zip(mask) {
            *y *= m;
        }
    }
    if residual {
        for (y, x) in out.iter_mut().zip(input) {
            *y += x;
        }
    }
}

fn check_layer(model: &MixerModel, layer: usize, block: &[f64]) -> Result<Dims> {
    let dm = dims(model);
    if layer >= model.layout().layers.len() {
        return Err(Error::Param(format!(
            "layer {layer} requested from a {}-layer model",
            model.layout().layers.len()
        )));
    }
    if block.len() != dm.p * dm.d {
        return Err(shape_err!(
            "patch block has {} entries, expected {}x{}",
            block.len(),
            dm.p,
            dm.d
        ));
    }
    Ok(dm)
}

/// Patch-axis mixing of one node's `p × d` block (eval mode).
pub fn patch_mixing(block: &[f64], model: &MixerModel, layer: usize) -> Result<Vec<f64>> {
    let dm = check_layer(model, layer, block)?;
    let cfg = model.config();
    let o = &model.layout().layers[layer];
    Ok(patch_block(
        block,
        model.params(),
        o,
        &dm,
        cfg.patch_norm_axis,
        cfg.nonlinearity,
        cfg.ln_eps,
        cfg.residual,
        Vec::new(),
    )
    .0)
}

/// Feature-axis mixing of one node's `p × d` block (eval mode).
pub fn feature_mixing(block: &[f64], model: &MixerModel, layer: usize) -> Result<Vec<f64>> {
    let dm = check_layer(model, layer, block)?;
    let cfg = model.config();
    let o = &model.layout().layers[layer];
    Ok(feature_block(
        block,
        model.params(),
        o,
        &dm,
        cfg.nonlinearity,
        cfg.ln_eps,
        cfg.residual,
        Vec::new(),
    )
    .0)
}

fn forward_node(
    patch: &[f64],
    model: &MixerModel,
    node: usize,
    train_mode: bool,
    seed: u64,
    keep_tape: bool,
) -> (Vec<f64>, Option<NodeTape>) {
    let cfg = model.config();
    let dm = dims(model);
    let params = model.params();
    let use_dropout = train_mode && cfg.dropout > 0.0;
    let mut rng = use_dropout.then(|| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(node as u64);
        r
    });
    let mut mask = |len: usize| match rng.as_mut() {
        Some(r) => dropout_mask(r, len, cfg.dropout),
        None => Vec::new(),
    };

    let mut x = patch.to_vec();
    let mut blocks = Vec::with_capacity(if keep_tape { cfg.layers } else { 0 });
    for o in &model.layout().layers {
        let (y, c1) = patch_block(
            &x,
            params,
            o,
            &dm,
            cfg.patch_norm_axis,
            cfg.nonlinearity,
            cfg.ln_eps,
            cfg.residual,
            mask(dm.p * dm.d),
        );
        let (z, c2) = feature_block(
            &y,
            params,
            o,
            &dm,
            cfg.nonlinearity,
            cfg.ln_eps,
            cfg.residual,
            mask(dm.p * dm.d),
        );
        if keep_tape {
            blocks.push((c1, c2));
        }
        x = z;
    }

    let aggregated = match cfg.aggregation {
        Aggregation::Flatten => x,
        Aggregation::Mean | Aggregation::Sum => {
            let mut acc = vec![0.0; dm.d];
            for j in 0..dm.p {
                for (a, v) in acc.iter_mut().zip(&x[j * dm.d..(j + 1) * dm.d]) {
                    *a += v;
                }
            }
            if cfg.aggregation == Aggregation::Mean {
                for a in &mut acc {
                    *a /= dm.p as f64;
                }
            }
            acc
        }
    };

    let head = &model.layout().head;
    let w1 = &params[head.w1.clone()];
    let b1 = &params[head.b1.clone()];
    let w2 = &params[head.w2.clone()];
    let b2 = &params[head.b2.clone()];
    let head_hidden: Vec<f64> = (0..dm.hh)
        .map(|m| b1[m] + dot(&w1[m * dm.agg..(m + 1) * dm.agg], &aggregated))
        .collect();
    let u: Vec<f64> = head_hidden
        .iter()
        .map(|&h| cfg.nonlinearity.apply(h))
        .collect();
    let logits: Vec<f64> = (0..dm.c)
        .map(|c| b2[c] + dot(&w2[c * dm.hh..(c + 1) * dm.hh], &u))
        .collect();
    let tape = keep_tape.then_some(NodeTape {
        blocks,
        aggregated,
        head_hidden,
    });
    (logits, tape)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_input(patches: &PatchTensor, model: &MixerModel) -> Result<()> {
    let cfg = model.config();
    if patches.p != cfg.patch_size || patches.d != cfg.feature_dim {
        return Err(shape_err!(
            "patch tensor is {}x{} per node, model expects {}x{}",
            patches.p,
            patches.d,
            cfg.patch_size,
            cfg.feature_dim
        ));
    }
    Ok(())
}

/// Forward pass over every node. Dropout (train mode only) draws from a
/// stream keyed by `(seed, node)`.
pub fn mixer_forward(
    patches: &PatchTensor,
    model: &MixerModel,
    train_mode: bool,
    seed: u64,
) -> Result<(Matrix, ForwardTape)> {
    let nodes: Vec<usize> = (0..patches.n).collect();
    mixer_forward_nodes(patches, model, &nodes, train_mode, seed)
}

/// Forward pass over a subset of nodes; row `i` of the logits belongs to
/// `nodes[i]`.
pub fn mixer_forward_nodes(
    patches: &PatchTensor,
    model: &MixerModel,
    nodes: &[usize],
    train_mode: bool,
    seed: u64,
) -> Result<(Matrix, ForwardTape)> {
    check_input(patches, model)?;
    if let Some(&bad) = nodes.iter().find(|&&v| v >= patches.n) {
        return Err(Error::Index {
            what: "forward node".into(),
            index: bad,
            bound: patches.n,
        });
    }
    let outs = map_range(nodes.len(), |i| {
        let v = nodes[i];
        forward_node(patches.patch(v), model, v, train_mode, seed, true)
    });
    let c = model.config().num_classes;
    let mut logits = Vec::with_capacity(nodes.len() * c);
    let mut tapes = Vec::with_capacity(nodes.len());
    for (row, tape) in outs {
        logits.extend(row);
        tapes.extend(tape);
    }
    Ok((
        Matrix::from_vec(nodes.len(), c, logits)?,
        ForwardTape {
            nodes: nodes.to_vec(),
            tapes,
            generation: model.generation(),
            num_params: model.num_params(),
            seed,
            train_mode,
        },
    ))
}

/// Eval-mode logits for every node, without recording a tape.
pub fn predict(patches: &PatchTensor, model: &MixerModel) -> Result<Matrix> {
    check_input(patches, model)?;
    let rows = map_range(patches.n, |v| {
        forward_node(patches.patch(v), model, v, false, 0, false).0
    });
    Matrix::from_vec(patches.n, model.config().num_classes, rows.concat())
}

/// Exact gradients of `Σ dlogits ⊙ logits` for the taped forward pass.
pub fn mixer_backward(
    model: &MixerModel,
    tape: &ForwardTape,
    dlogits: &Matrix,
) -> Result<Gradients> {
    if tape.generation != model.generation() || tape.num_params != model.num_params() {
        return Err(Error::State(format!(
            "tape recorded at parameter generation {} but model is at {}",
            tape.generation,
            model.generation()
        )));
    }
    let dm = dims(model);
    if dlogits.rows() != tape.nodes.len() || dlogits.cols() != dm.c {
        return Err(shape_err!(
            "upstream gradient is {}x{}, expected {}x{}",
            dlogits.rows(),
            dlogits.cols(),
            tape.nodes.len(),
            dm.c
        ));
    }
    let count = tape.nodes.len();
    let chunks = count.div_ceil(CHUNK);
    let pd = dm.p * dm.d;
    let partial = map_range(chunks, |ci| {
        let mut grad = vec![0.0; model.num_params()];
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(count);
        let mut inputs = vec![0.0; (hi - lo) * pd];
        for i in lo..hi {
            let up = dlogits.row(i);
            let dx = &mut inputs[(i - lo) * pd..(i - lo + 1) * pd];
            if up.iter().all(|&g| g == 0.0) {
                continue;
            }
            backward_node(model, &dm, &tape.tapes[i], up, &mut grad, dx);
        }
        (grad, inputs)
    });
    let mut params = vec![0.0; model.num_params()];
    let mut inputs = Vec::with_capacity(count * pd);
    for (g, dx) in partial {
        for (a, b) in params.iter_mut().zip(&g) {
            *a += b;
        }
        inputs.extend(dx);
    }
    Ok(Gradients { params, inputs })
}

fn backward_node(
    model: &MixerModel,
    dm: &Dims,
    nt: &NodeTape,
    up: &[f64],
    grad: &mut [f64],
    dx_out: &mut [f64],
) {
    let cfg = model.config();
    let params = model.params();
    let act = cfg.nonlinearity;
    let head = &model.layout().head;

    // head
    let w1 = &params[head.w1.clone()];
    let w2 = &params[head.w2.clone()];
    let u: Vec<f64> = nt.head_hidden.iter().map(|&h| act.apply(h)).collect();
    let mut du = vec![0.0; dm.hh];
    for c in 0..dm.c {
        let g = up[c];
        grad[head.b2.start + c] += g;
        let gw = &mut grad[head.w2.start + c * dm.hh..head.w2.start + (c + 1) * dm.hh];
        for m in 0..dm.hh {
            gw[m] += g * u[m];
            du[m] += g * w2[c * dm.hh + m];
        }
    }
    let dh: Vec<f64> = du
        .iter()
        .zip(&nt.head_hidden)
        .map(|(d, &h)| d * act.derivative(h))
        .collect();
    let mut dz = vec![0.0; dm.agg];
    for m in 0..dm.hh {
        let g = dh[m];
        if g == 0.0 {
            continue;
        }
        grad[head.b1.start + m] += g;
        let gw = &mut grad[head.w1.start + m * dm.agg..head.w1.start + (m + 1) * dm.agg];
        let w = &w1[m * dm.agg..(m + 1) * dm.agg];
        for k in 0..dm.agg {
            gw[k] += g * nt.aggregated[k];
            dz[k] += g * w[k];
        }
    }

    // aggregation
    let (p, d) = (dm.p, dm.d);
    let mut dx = match cfg.aggregation {
        Aggregation::Flatten => dz,
        Aggregation::Sum | Aggregation::Mean => {
            let scale = if cfg.aggregation == Aggregation::Mean {
                1.0 / p as f64
            } else {
                1.0
            };
            let mut out = vec![0.0; p * d];
            for j in 0..p {
                for k in 0..d {
                    out[j * d + k] = dz[k] * scale;
                }
            }
            out
        }
    };

    for (o, (pc, fc)) in model.layout().layers.iter().zip(&nt.blocks).rev() {
        dx = feature_block_backward(params, o, dm, act, cfg.residual, fc, &dx, grad);
        dx = patch_block_backward(
            params,
            o,
            dm,
            cfg.patch_norm_axis,
            act,
            cfg.residual,
            pc,
            &dx,
            grad,
        );
    }
    dx_out.copy_from_slice(&dx);
}

/// Disjoint mutable views of two adjacent-or-ordered ranges, `a` before `b`.
fn split_pair(
    buf: &mut [f64],
    a: core::ops::Range<usize>,
    b: core::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.len()])
}

#[allow(clippy::too_many_arguments)]
fn feature_block_backward(
    params: &[f64],
    o: &LayerOffsets,
    dm: &Dims,
    act: Nonlinearity,
    residual: bool,
    cache: &BlockCache,
    dout: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let (p, d, hf) = (dm.p, dm.d, dm.hf);
    let gain = &params[o.feature_ln_gain.clone()];
    let w1 = &params[o.feature_w1.clone()];
    let w2 = &params[o.feature_w2.clone()];

    let d_o: Vec<f64> = if cache.mask.is_empty() {
        dout.to_vec()
    } else {
        dout.iter().zip(&cache.mask).map(|(g, m)| g * m).collect()
    };
    let activated: Vec<f64> = cache.hidden.iter().map(|&h| act.apply(h)).collect();
    let mut du = vec![0.0; p * hf];
    for j in 0..p {
        let u = &activated[j * hf..(j + 1) * hf];
        let duj = &mut du[j * hf..(j + 1) * hf];
        for k in 0..d {
            let g = d_o[j * d + k];
            if g == 0.0 {
                continue;
            }
            grad[o.feature_b2.start + k] += g;
            let gw = &mut grad[o.feature_w2.start + k * hf..o.feature_w2.start + (k + 1) * hf];
            let w = &w2[k * hf..(k + 1) * hf];
            for m in 0..hf {
                gw[m] += g * u[m];
                duj[m] += g * w[m];
            }
        }
    }
    let dh: Vec<f64> = du
        .iter()
        .zip(&cache.hidden)
        .map(|(g, &h)| g * act.derivative(h))
        .collect();
    let mut da = vec![0.0; p * d];
    for j in 0..p {
        let a = &cache.normed[j * d..(j + 1) * d];
        let daj = &mut da[j * d..(j + 1) * d];
        for m in 0..hf {
            let g = dh[j * hf + m];
            if g == 0.0 {
                continue;
            }
            grad[o.feature_b1.start + m] += g;
            let gw = &mut grad[o.feature_w1.start + m * d..o.feature_w1.start + (m + 1) * d];
            let w = &w1[m * d..(m + 1) * d];
            for k in 0..d {
                gw[k] += g * a[k];
                daj[k] += g * w[k];
            }
        }
    }
    let mut dx = if residual {
        dout.to_vec()
    } else {
        vec![0.0; p * d]
    };
    let (gg, bg) = split_pair(grad, o.feature_ln_gain.clone(), o.feature_ln_bias.clone());
    block_norm_backward(&da, cache, p, d, NormAxis::Feature, gain, gg, bg, &mut dx);
    dx
}

#[allow(clippy::too_many_arguments)]
fn patch_block_backward(
    params: &[f64],
    o: &LayerOffsets,
    dm: &Dims,
    axis: NormAxis,
    act: Nonlinearity,
    residual: bool,
    cache: &BlockCache,
    dout: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let (p, d, hp) = (dm.p, dm.d, dm.hp);
    let gain = &params[o.patch_ln_gain.clone()];
    let w1 = &params[o.patch_w1.clone()];
    let w2 = &params[o.patch_w2.clone()];

    let d_o: Vec<f64> = if cache.mask.is_empty() {
        dout.to_vec()
    } else {
        dout.iter().zip(&cache.mask).map(|(g, m)| g * m).collect()
    };
    let activated: Vec<f64> = cache.hidden.iter().map(|&h| act.apply(h)).collect();
    // O = W2 U + b2: W2 is p × hp, U is hp × d
    let mut du = vec![0.0; hp * d];
    for j in 0..p {
        let g_row = &d_o[j * d..(j + 1) * d];
        grad[o.patch_b2.start + j] += g_row.iter().sum::<f64>();
        for m in 0..hp {
            let u_row = &activated[m * d..(m + 1) * d];
            grad[o.patch_w2.start + j * hp + m] += dot(g_row, u_row);
            let w = w2[j * hp + m];
            for (dv, g) in du[m * d..(m + 1) * d].iter_mut().zip(g_row) {
                *dv += w * g;
            }
        }
    }
    let dh: Vec<f64> = du
        .iter()
        .zip(&cache.hidden)
        .map(|(g, &h)| g * act.derivative(h))
        .collect();
    // H = W1 A + b1: W1 is hp × p, A is p × d
    let mut da = vec![0.0; p * d];
    for m in 0..hp {
        let g_row = &dh[m * d..(m + 1) * d];
        grad[o.patch_b1.start + m] += g_row.iter().sum::<f64>();
        for j in 0..p {
            let a_row = &cache.normed[j * d..(j + 1) * d];
            grad[o.patch_w1.start + m * p + j] += dot(g_row, a_row);
            let w = w1[m * p + j];
            for (dv, g) in da[j * d..(j + 1) * d].iter_mut().zip(g_row) {
                *dv += w * g;
            }
        }
    }
    let mut dx = if residual {
        dout.to_vec()
    } else {
        vec![0.0; p * d]
    };
    let (gg, bg) = split_pair(grad, o.patch_ln_gain.clone(), o.patch_ln_bias.clone());
    block_norm_backward(&da, cache, p, d, axis, gain, gg, bg, &mut dx);
    dx
}
