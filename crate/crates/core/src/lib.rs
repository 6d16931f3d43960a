//! Adaptive polynomial graph filters and the patch/mixer node classifier.
//!
//! This crate is `no_std` (it needs `alloc`) and holds every numerical piece
//! of the pipeline:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`graph`] | graph data model, degrees, normalized adjacency |
//! | [`spectral`] | Jacobi eigensolver, graph Fourier transform, polynomial/band/low-pass filters, relevance matrix |
//! | [`heterophily`] | node and spectral heterophily, numerical checks of the filter bounds |
//! | [`patcher`] | top-p patch selection, personalized PageRank rank vectors, patch-induced graphs |
//! | [`mixer`] | patch-mixing / feature-mixing network with exact backward pass |
//! | [`train`] | Adam, early stopping, evaluation, ranked-vs-shuffled ablation |
//! | [`synth`] | synthetic graphs with controlled heterophily, band sweep |
//!
//! File formats, the CLI and anything touching the OS live in the companion
//! `herofilter` crate.
//!
//! Enable the `parallel` feature (implies `std`) to spread per-node work over
//! rayon. Results are bitwise identical with or without it.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod graph;
pub mod heterophily;
pub mod linalg;
pub mod math;
pub mod mixer;
pub mod patcher;
pub mod spectral;
pub mod synth;
pub mod train;

mod par;

pub use error::{Error, Result};
pub use graph::{degree_vector, normalize_adjacency, Graph, NormMode, NormalizedAdjacency, Splits};
pub use linalg::Matrix;
pub use patcher::{PatchMode, PatchSet, RankVector};
pub use spectral::{Activation, PolyFilter, SpectralDecomposition};
