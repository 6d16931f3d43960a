//! Synthetic graphs with a target node heterophily, the heterophily × band
//! accuracy sweep, and frequency-response tables.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, Splits};
use crate::linalg::Matrix;
use crate::math::{abs, log10};
use crate::par::map_range;
use crate::patcher::extract_patches;
use crate::spectral::{band_filter, eigendecompose, SpectralDecomposition};
use crate::train::{patches_from_response, train_on_tensor, TrainConfig};

/// Resampling budget per stub before the generator gives up.
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub num_classes: usize,
    pub target_h: f64,
    pub avg_degree: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            num_classes: 5,
            target_h: 0.5,
            avg_degree: 10.0,
            feature_dim: 16,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_h) {
            return Err(Error::Param(format!(
                "target_h must lie in [0, 1], got {}",
                self.target_h
            )));
        }
        if !(self.avg_degree >= 1.0) {
            return Err(Error::Param(format!(
                "avg_degree must be at least 1, got {}",
                self.avg_degree
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Param("at least two classes are needed".to_string()));
        }
        if self.n < 2 * self.num_classes {
            return Err(Error::Param(format!(
                "{} nodes cannot hold two nodes of each of {} classes",
                self.n, self.num_classes
            )));
        }
        if self.feature_dim < self.num_classes {
            return Err(Error::Param(format!(
                "feature_dim {} is below the class count {}; class means must be orthogonal",
                self.feature_dim, self.num_classes
            )));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(Error::Param(
                "feature_noise must be non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Random graph whose edges are intra-class with probability `1 − h`.
///
/// Each node initiates about `avg_degree / 2` stubs; a stub's partner is a
/// uniform same-class node with probability `1 − h`, otherwise a uniform node
/// of another class. Duplicate edges are redrawn.
pub fn synth_graph(spec: &SynthSpec) -> Result<Graph> {
    spec.validate()?;
    let (n, c) = (spec.n, spec.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut labels: Vec<usize> = (0..n).map(|v| v % c).collect();
    labels.shuffle(&mut rng);
    let mut members = vec![Vec::new(); c];
    for (v, &y) in labels.iter().enumerate() {
        members[y].push(v);
    }

    let m = libm::round(n as f64 * spec.avg_degree / 2.0) as usize;
    let intra: usize = members.iter().map(|s| s.len() * (s.len() - 1) / 2).sum();
    let cross = n * (n - 1) / 2 - intra;
    let want_intra = libm::ceil(m as f64 * (1.0 - spec.target_h)) as usize;
    let want_cross = libm::ceil(m as f64 * spec.target_h) as usize;
    if m > n * (n - 1) / 2
        || (spec.target_h < 1.0 && want_intra > intra)
        || (spec.target_h > 0.0 && want_cross > cross)
    {
        return Err(Error::Param(format!(
            "{m} edges at heterophily {} do not fit without multi-edges",
            spec.target_h
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut seen = BTreeSet::new();
    let mut edges = Vec::with_capacity(m);
    for (rank, &v) in order.iter().enumerate() {
        let stubs = m / n + usize::from(rank < m % n);
        for _ in 0..stubs {
            let mut placed = false;
            for _ in 0..MAX_ATTEMPTS {
                let u = draw_partner(&mut rng, v, labels[v], &members, n, spec.target_h);
                let e = if u < v { (u, v) } else { (v, u) };
                if seen.insert(e) {
                    edges.push(e);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Param(format!(
                    "could not place a new edge at node {v} after {MAX_ATTEMPTS} draws; lower avg_degree"
                )));
            }
        }
    }

    let noise = Normal::new(0.0, spec.feature_noise).map_err(|e| Error::Param(e.to_string()))?;
    let d = spec.feature_dim;
    let mut x = Matrix::zeros(n, d);
    for v in 0..n {
        let row = x.row_mut(v);
        for (k, val) in row.iter_mut().enumerate() {
            *val = noise.sample(&mut rng) + if k == labels[v] { 1.0 } else { 0.0 };
        }
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let n_train = n * 48 / 100;
    let n_val = n * 32 / 100;
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    Graph::new(n, c, &edges, x, labels, Splits { train, val, test })
}

fn draw_partner(
    rng: &mut ChaCha8Rng,
    v: usize,
    y: usize,
    members: &[Vec<usize>],
    n: usize,
    h: f64,
) -> usize {
    let same = &members[y];
    if rng.random::<f64>() >= h {
        loop {
            let u = same[rng.random_range(0..same.len())];
            if u != v {
                return u;
            }
        }
    }
    let mut t = rng.random_range(0..n - same.len());
    for (c, s) in members.iter().enumerate() {
        if c == y {
            continue;
        }
        if t < s.len() {
            return s[t];
        }
        t -= s.len();
    }
    unreachable!("other-class index within range")
}

/// One sweep cell result. `seed` is the sweep's base seed; the cell's own
/// generator and training seeds are derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub h: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub test_acc: f64,
    pub seed: u64,
}

/// Five Laplacian bands of width 0.4 covering `[0, 2]`.
pub fn default_bands() -> Vec<(f64, f64)> {
    let edges = [0.0, 0.4, 0.8, 1.2, 1.6, 2.0];
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_mul(1 << 20).wrapping_add(b).wrapping_add(3));
    rng.random()
}

/// Accuracy for every `(h, band)` pair: the graph for `h` is generated once
/// (seed derived from `(seed, h index)`), and each band trains a mixer on
/// patches from the band-indicator relevance (seed derived from
/// `(seed, h index, band index)`). Rows are ordered by `h`, then band.
pub fn heterophily_sweep(
    h_values: &[f64],
    bands: &[(f64, f64)],
    base: &SynthSpec,
    cfg: &TrainConfig,
) -> Result<Vec<SweepCell>> {
    check_bands(bands)?;
    cfg.validate()?;
    let per_h = map_range(h_values.len(), |hi| -> Result<Vec<SweepCell>> {
        let spec = SynthSpec {
            target_h: h_values[hi],
            seed: mix_seed(base.seed, hi as u64, 0),
            ..base.clone()
        };
        let g = synth_graph(&spec)?;
        let dec = eigendecompose(&normalize_adjacency(&g, cfg.norm_mode))?;
        let cells = map_range(bands.len(), |bi| {
            let train_seed = mix_seed(base.seed, hi as u64, bi as u64 + 1);
            sweep_cell(
                &g,
                &dec,
                bands[bi],
                cfg,
                train_seed,
                spec.target_h,
                base.seed,
            )
        });
        cells.into_iter().collect()
    });
    let mut out = Vec::with_capacity(h_values.len() * bands.len());
    for row in per_h {
        out.extend(row?);
    }
    Ok(out)
}

fn sweep_cell(
    g: &Graph,
    dec: &SpectralDecomposition,
    band: (f64, f64),
    cfg: &TrainConfig,
    train_seed: u64,
    h: f64,
    sweep_seed: u64,
) -> Result<SweepCell> {
    let q = band_filter(&dec.eigenvalues, band.0, band.1)?;
    let ps = patches_from_response(dec, &q, cfg.patch_size)?;
    let tensor = extract_patches(g, &ps)?;
    let run_cfg = TrainConfig {
        seed: train_seed,
        ..cfg.clone()
    };
    let (_, report) = train_on_tensor(g, &run_cfg, &tensor)?;
    Ok(SweepCell {
        h,
        band_lo: band.0,
        band_hi: band.1,
        test_acc: report.test_acc,
        seed: sweep_seed,
    })
}

/// Bands must be increasing, non-overlapping and cover `[0, 2]`.
pub fn check_bands(bands: &[(f64, f64)]) -> Result<()> {
    const TOL: f64 = 1e-9;
    if bands.is_empty() {
        return Err(Error::Param("no bands given".to_string()));
    }
    if abs(bands[0].0) > TOL || abs(bands[bands.len() - 1].1 - 2.0) > TOL {
        return Err(Error::Param(
            "bands must start at 0 and end at 2".to_string(),
        ));
    }
    for (i, &(lo, hi)) in bands.iter().enumerate() {
        if !(lo < hi) {
            return Err(Error::Param(format!("band {i} is empty: [{lo}, {hi})")));
        }
        if i > 0 && abs(bands[i - 1].1 - lo) > TOL {
            return Err(Error::Param(format!(
                "band {i} does not start where band {} ends",
                i - 1
            )));
        }
    }
    Ok(())
}

/// A row of a frequency-response table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub lambda_lap: f64,
    pub g: f64,
    /// `log10(|g| + 1e-12)`.
    pub log10_g: f64,
}

/// Pairs each Laplacian eigenvalue with its response.
pub fn frequency_response_rows(
    dec: &SpectralDecomposition,
    response: &[f64],
) -> Result<Vec<ResponseRow>> {
    if response.len() != dec.len() {
        return Err(Error::Shape(format!(
            "{} response values for {} eigenvalues",
            response.len(),
            dec.len()
        )));
    }
    Ok(dec
        .laplacian_eigenvalues()
        .into_iter()
        .zip(response)
        .map(|(mu, &g)| ResponseRow {
            lambda_lap: mu,
            g,
            log10_g: log10(abs(g) + 1e-12),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heterophily::{mean, node_heterophily};
    use crate::spectral::low_pass_reference;

    #[test]
    fn zero_heterophily_is_exact() {
        let g = synth_graph(&SynthSpec {
            n: 300,
            target_h: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(mean(&node_heterophily(&g)), 0.0);
        assert!(g
            .edges()
            .iter()
            .all(|&(u, v)| g.labels()[u] == g.labels()[v]));
    }

    #[test]
    fn full_heterophily_two_classes_is_bipartite() {
        let g = synth_graph(&SynthSpec {
            n: 300,
            num_classes: 2,
            target_h: 1.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(mean(&node_heterophily(&g)), 1.0);
    }

    #[test]
    fn mid_heterophily_hits_target() {
        for seed in 0..10 {
            let g = synth_graph(&SynthSpec {
                seed,
                ..Default::default()
            })
            .unwrap();
            let h = mean(&node_heterophily(&g));
            assert!((0.45..=0.55).contains(&h), "seed {seed}: {h}");
        }
    }

    #[test]
    fn generator_shape_and_determinism() {
        let spec = SynthSpec {
            n: 200,
            seed: 3,
            ..Default::default()
        };
        let a = synth_graph(&spec).unwrap();
        assert_eq!(a, synth_graph(&spec).unwrap());
        assert_eq!(a.edges().len(), 1000);
        let counts: Vec<usize> = (0..5)
            .map(|c| a.labels().iter().filter(|&&y| y == c).count())
            .collect();
        assert_eq!(counts, vec![40; 5]);
        let s = a.splits();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (96, 64, 40));
        assert_ne!(a, synth_graph(&SynthSpec { seed: 4, ..spec }).unwrap());
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let too_dense = SynthSpec {
            n: 20,
            num_classes: 2,
            avg_degree: 30.0,
            ..Default::default()
        };
        assert!(matches!(synth_graph(&too_dense), Err(Error::Param(_))));
        let narrow = SynthSpec {
            feature_dim: 3,
            ..Default::default()
        };
        assert!(matches!(synth_graph(&narrow), Err(Error::Param(_))));
        let bad_h = SynthSpec {
            target_h: 1.5,
            ..Default::default()
        };
        assert!(matches!(synth_graph(&bad_h), Err(Error::Param(_))));
    }

    #[test]
    fn band_checks() {
        assert!(check_bands(&default_bands()).is_ok());
        assert!(check_bands(&[(0.0, 2.0)]).is_ok());
        assert!(check_bands(&[(0.0, 1.0), (1.2, 2.0)]).is_err());
        assert!(check_bands(&[(0.0, 1.0)]).is_err());
    }

    fn small_dec() -> SpectralDecomposition {
        let g = synth_graph(&SynthSpec {
            n: 40,
            avg_degree: 4.0,
            ..Default::default()
        })
        .unwrap();
        eigendecompose(&normalize_adjacency(&g, crate::graph::NormMode::Sym)).unwrap()
    }

    #[test]
    fn response_rows() {
        let dec = small_dec();
        let zero = frequency_response_rows(&dec, &vec![0.0; 40]).unwrap();
        assert!(zero.iter().all(|r| r.log10_g == -12.0));
        let lp = frequency_response_rows(&dec, &low_pass_reference(&dec.eigenvalues)).unwrap();
        let mut sorted = lp.clone();
        sorted.sort_by(|a, b| a.lambda_lap.total_cmp(&b.lambda_lap));
        assert!(sorted.windows(2).all(|w| w[0].g >= w[1].g));
        let band = band_filter(&dec.eigenvalues, 0.0, 0.4).unwrap();
        for (row, b) in frequency_response_rows(&dec, &band)
            .unwrap()
            .iter()
            .zip(&band)
        {
            assert_eq!(row.g, if row.lambda_lap < 0.4 { 1.0 } else { 0.0 });
            assert_eq!(row.g, *b);
        }
    }

    #[test]
    fn sweep_grid_shape_range_and_determinism() {
        let base = SynthSpec {
            n: 60,
            avg_degree: 4.0,
            seed: 1,
            ..Default::default()
        };
        let cfg = TrainConfig {
            patch_size: 4,
            hidden: 8,
            max_epochs: 10,
            patience: 5,
            ..Default::default()
        };
        let hs = [0.2, 0.8];
        let a = heterophily_sweep(&hs, &default_bands(), &base, &cfg).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|c| (0.0..=1.0).contains(&c.test_acc)));
        assert_eq!(
            a,
            heterophily_sweep(&hs, &default_bands(), &base, &cfg).unwrap()
        );
        assert_eq!((a[0].h, a[5].h, a[6].band_lo), (0.2, 0.8, 0.4));
    }
}
