//! Graph data model and adjacency normalization.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::math::sqrt;

/// Train/validation/test node index sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Which split a metric is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Undirected node-labelled graph with dense features.
///
/// Edges are stored canonically: `u < v`, sorted, no duplicates, no
/// self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    num_classes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Vec<usize>,
    splits: Splits,
}

/// Sort, orient `u < v`, drop self-loops and duplicates.
pub fn canonicalize_edges(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let set: BTreeSet<(usize, usize)> = edges
        .iter()
        .filter(|(u, v)| u != v)
        .map(|&(u, v)| if u < v { (u, v) } else { (v, u) })
        .collect();
    set.into_iter().collect()
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        num_classes: usize,
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<usize>,
        splits: Splits,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Param("a graph needs at least one node".to_string()));
        }
        for &(u, v) in edges {
            for x in [u, v] {
                if x >= num_nodes {
                    return Err(Error::Index {
                        what: "edge endpoint".to_string(),
                        index: x,
                        bound: num_nodes,
                    });
                }
            }
        }
        if features.rows() != num_nodes {
            return Err(shape_err!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                num_nodes
            ));
        }
        if labels.len() != num_nodes {
            return Err(shape_err!(
                "{} labels for {} nodes",
                labels.len(),
                num_nodes
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Index {
                what: "class label".to_string(),
                index: bad,
                bound: num_classes,
            });
        }
        let mut seen = vec![false; num_nodes];
        for (name, set) in [
            ("train", &splits.train),
            ("val", &splits.val),
            ("test", &splits.test),
        ] {
            for &i in set {
                if i >= num_nodes {
                    return Err(Error::Index {
                        what: format!("{name} split entry"),
                        index: i,
                        bound: num_nodes,
                    });
                }
                if seen[i] {
                    return Err(Error::Format(format!(
                        "node {i} appears twice across splits (second time in {name})"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(Self {
            num_nodes,
            num_classes,
            edges: canonicalize_edges(edges),
            features,
            labels,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    /// Same nodes, features, labels and splits with a different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            self.num_nodes,
            self.num_classes,
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.splits.clone(),
        )
    }

    /// Sorted neighbor lists.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

pub fn degree_vector(g: &Graph) -> Vec<usize> {
    let mut deg = vec![0usize; g.num_nodes];
    for &(u, v) in &g.edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    deg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `D^-1/2 A D^-1/2`
    #[default]
    Sym,
    /// `D̂^-1/2 (A + I) D̂^-1/2`
    SymSelfloop,
}

/// Symmetrically normalized adjacency, kept both dense and as weighted
/// neighbor lists for matrix-vector products.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    matrix: Matrix,
    mode: NormMode,
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn num_nodes(&self) -> usize {
        self.matrix.rows()
    }

    /// Nonzero entries of row `i` as `(column, value)`.
    pub fn sparse_row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `Ã x` using only the nonzero entries.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }
}

pub fn normalize_adjacency(g: &Graph, mode: NormMode) -> NormalizedAdjacency {
    let n = g.num_nodes;
    let loops = matches!(mode, NormMode::SymSelfloop);
    let deg = degree_vector(g);
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| {
            let d = d + usize::from(loops);
            if d == 0 {
                0.0
            } else {
                1.0 / sqrt(d as f64)
            }
        })
        .collect();
    let mut matrix = Matrix::zeros(n, n);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(u, v) in &g.edges {
        let w = inv_sqrt[u] * inv_sqrt[v];
        matrix[(u, v)] = w;
        matrix[(v, u)] = w;
        rows[u].push((v, w));
        rows[v].push((u, w));
    }
    if loops {
        for i in 0..n {
            let w = inv_sqrt[i] * inv_sqrt[i];
            matrix[(i, i)] = w;
            rows[i].push((i, w));
        }
    }
    for row in &mut rows {
        row.sort_unstable_by_key(|&(j, _)| j);
    }
    NormalizedAdjacency { matrix, mode, rows }
}
