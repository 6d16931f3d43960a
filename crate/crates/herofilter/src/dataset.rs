//! Dataset directories: `meta.json`, `edges.csv`, `features.csv`,
//! `labels.csv` and `splits.json`.

use std::fs;
use std::path::Path;

use herofilter_core::graph::Splits;
use herofilter_core::{Error as CoreError, Graph, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{
    fmt_f64, parse_field, read_edges_csv, read_json, read_records, write_edges_csv, write_json,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
}

pub fn load_dataset(dir: &Path) -> Result<Graph> {
    let meta: Meta = read_json(&dir.join("meta.json"))?;
    let n = meta.num_nodes;
    let edges = read_edges_csv(&dir.join("edges.csv"))?;

    let path = dir.join("features.csv");
    let rows = read_records(&path)?;
    if rows.len() != n {
        return Err(CoreError::Shape(format!(
            "features.csv has {} rows for {n} nodes",
            rows.len()
        ))
        .into());
    }
    let mut data = Vec::with_capacity(n * meta.feature_dim);
    for (line, rec) in rows.iter().enumerate() {
        if rec.len() != meta.feature_dim {
            return Err(CoreError::Shape(format!(
                "features.csv line {} has {} values, expected {}",
                line + 1,
                rec.len(),
                meta.feature_dim
            ))
            .into());
        }
        for field in rec {
            data.push(parse_field::<f64>(&path, line, field)?);
        }
    }
    let features = Matrix::from_vec(n, meta.feature_dim, data)?;

    let path = dir.join("labels.csv");
    let rows = read_records(&path)?;
    if rows.len() != n {
        return Err(
            CoreError::Shape(format!("labels.csv has {} rows for {n} nodes", rows.len())).into(),
        );
    }
    let labels = rows
        .iter()
        .enumerate()
        .map(|(line, rec)| {
            if rec.len() != 1 {
                return Err(Error::format(
                    &path,
                    format!("line {}: expected one label", line + 1),
                ));
            }
            parse_field(&path, line, &rec[0])
        })
        .collect::<Result<Vec<usize>>>()?;

    let splits: Splits = read_json(&dir.join("splits.json"))?;
    Ok(Graph::new(
        n,
        meta.num_classes,
        &edges,
        features,
        labels,
        splits,
    )?)
}

pub fn save_dataset(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        num_nodes: g.num_nodes(),
        num_classes: g.num_classes(),
        feature_dim: g.feature_dim(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    write_edges_csv(&dir.join("edges.csv"), g.edges())?;

    let x = g.features();
    let mut text = String::with_capacity(x.rows() * x.cols() * 25);
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|&v| fmt_f64(v)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join("features.csv");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    let labels: String = g.labels().iter().map(|y| format!("{y}\n")).collect();
    let path = dir.join("labels.csv");
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;

    write_json(&dir.join("splits.json"), g.splits())
}
