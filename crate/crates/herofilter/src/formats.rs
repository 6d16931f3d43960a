//! CSV and JSON artifact formats.
//!
//! Every float written to CSV uses 17 significant digits so that reading
//! a file back reproduces the exact bits.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use herofilter_core::patcher::{PatchMode, PatchSet};
use herofilter_core::synth::{ResponseRow, SweepCell};
use herofilter_core::train::EpochRecord;
use herofilter_core::SpectralDecomposition;
use serde::Serialize;

use crate::error::{Error, Result};

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_lines<I>(path: &Path, header: Option<&str>, lines: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    let mut w = create(path)?;
    let mut put = |line: &str| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    if let Some(h) = header {
        put(h)?;
    }
    for line in lines {
        put(&line)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads every record of a headerless CSV file, skipping blank lines.
pub(crate) fn read_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    if !path.is_file() {
        return Err(Error::format(path, "missing file"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn parse_field<T: FromStr>(path: &Path, line: usize, field: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field.parse().map_err(|e| {
        Error::format(
            path,
            format!("line {}: cannot parse {field:?}: {e}", line + 1),
        )
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::format(path, "missing file"));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// `src,dst` per line, no header.
pub fn write_edges_csv(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    write_lines(path, None, edges.iter().map(|(u, v)| format!("{u},{v}")))
}

pub fn read_edges_csv(path: &Path) -> Result<Vec<(usize, usize)>> {
    read_records(path)?
        .iter()
        .enumerate()
        .map(|(line, rec)| {
            if rec.len() != 2 {
                return Err(Error::format(
                    path,
                    format!("line {}: expected \"src,dst\"", line + 1),
                ));
            }
            Ok((
                parse_field(path, line, &rec[0])?,
                parse_field(path, line, &rec[1])?,
            ))
        })
        .collect()
}

/// Header `node,idx_1..idx_p,score_1..score_p`, then one row per node.
pub fn write_patches_csv(path: &Path, ps: &PatchSet) -> Result<()> {
    let p = ps.patch_size();
    let header: Vec<String> = std::iter::once("node".to_string())
        .chain((1..=p).map(|j| format!("idx_{j}")))
        .chain((1..=p).map(|j| format!("score_{j}")))
        .collect();
    let rows = (0..ps.num_nodes()).map(|v| {
        let mut fields = vec![v.to_string()];
        fields.extend(ps.row_indices(v).iter().map(usize::to_string));
        fields.extend(ps.row_scores(v).iter().map(|&s| fmt_f64(s)));
        fields.join(",")
    });
    write_lines(path, Some(&header.join(",")), rows)
}

pub fn read_patches_csv(path: &Path, mode: PatchMode) -> Result<PatchSet> {
    let records = read_records(path)?;
    let (header, rows) = records
        .split_first()
        .ok_or_else(|| Error::format(path, "empty patch file"))?;
    if header.len() < 3 || header.len() % 2 == 0 || &header[0] != "node" {
        return Err(Error::format(
            path,
            "header must be node,idx_1..idx_p,score_1..score_p",
        ));
    }
    let p = (header.len() - 1) / 2;
    let n = rows.len();
    let mut indices = Vec::with_capacity(n * p);
    let mut scores = Vec::with_capacity(n * p);
    for (v, rec) in rows.iter().enumerate() {
        let line = v + 1;
        if rec.len() != header.len() {
            return Err(Error::format(
                path,
                format!("line {}: expected {} fields", line + 1, header.len()),
            ));
        }
        let node: usize = parse_field(path, line, &rec[0])?;
        if node != v {
            return Err(Error::format(
                path,
                format!("line {}: rows must be ordered by node", line + 1),
            ));
        }
        for j in 0..p {
            indices.push(parse_field(path, line, &rec[1 + j])?);
            scores.push(parse_field(path, line, &rec[1 + p + j])?);
        }
    }
    Ok(PatchSet::from_parts(n, p, indices, scores, mode)?)
}

/// Header `index,lambda_adj,lambda_lap,filter_response`.
pub fn write_spectrum_csv(
    path: &Path,
    dec: &SpectralDecomposition,
    response: &[f64],
) -> Result<()> {
    if response.len() != dec.len() {
        return Err(herofilter_core::Error::Shape(format!(
            "{} response values for {} eigenvalues",
            response.len(),
            dec.len()
        ))
        .into());
    }
    let rows = dec
        .eigenvalues
        .iter()
        .zip(response)
        .enumerate()
        .map(|(i, (&l, &g))| format!("{i},{},{},{}", fmt_f64(l), fmt_f64(1.0 - l), fmt_f64(g)));
    write_lines(
        path,
        Some("index,lambda_adj,lambda_lap,filter_response"),
        rows,
    )
}

/// Header `lambda_lap,g,log10_g`.
pub fn write_response_csv(path: &Path, rows: &[ResponseRow]) -> Result<()> {
    let lines = rows.iter().map(|r| {
        format!(
            "{},{},{}",
            fmt_f64(r.lambda_lap),
            fmt_f64(r.g),
            fmt_f64(r.log10_g)
        )
    });
    write_lines(path, Some("lambda_lap,g,log10_g"), lines)
}

/// Header `h,band_lo,band_hi,test_acc,seed`.
pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let lines = cells.iter().map(|c| {
        format!(
            "{},{},{},{},{}",
            fmt_f64(c.h),
            fmt_f64(c.band_lo),
            fmt_f64(c.band_hi),
            fmt_f64(c.test_acc),
            c.seed
        )
    });
    write_lines(path, Some("h,band_lo,band_hi,test_acc,seed"), lines)
}

/// Header `epoch,train_loss,val_loss,val_acc`.
pub fn write_metrics_csv(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let lines = epochs.iter().map(|e| {
        format!(
            "{},{},{},{}",
            e.epoch,
            fmt_f64(e.train_loss),
            fmt_f64(e.val_loss),
            fmt_f64(e.val_acc)
        )
    });
    write_lines(path, Some("epoch,train_loss,val_loss,val_acc"), lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, f64::MAX, 123456789.12345679, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            let digits = s
                .split('e')
                .next()
                .unwrap()
                .chars()
                .filter(char::is_ascii_digit)
                .count();
            assert_eq!(digits, 17);
        }
    }

    #[test]
    fn edges_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.csv");
        write_edges_csv(&path, &[(0, 1), (2, 5)]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "0,1\n2,5\n");
        assert_eq!(read_edges_csv(&path).unwrap(), vec![(0, 1), (2, 5)]);
    }

    #[test]
    fn patches_round_trip() {
        let ps = PatchSet::from_parts(
            3,
            2,
            vec![0, 1, 1, 2, 2, 0],
            vec![0.9, 0.1, 0.5, 0.5, 1.0 / 3.0, -0.25],
            PatchMode::Fast,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patches.csv");
        write_patches_csv(&path, &ps).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("node,idx_1,idx_2,score_1,score_2\n0,0,1,"));
        assert_eq!(read_patches_csv(&path, PatchMode::Fast).unwrap(), ps);
    }

    #[test]
    fn malformed_patch_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patches.csv");
        fs::write(&path, "node,idx_1,score_1\n0,0,1.0\n1,x,1.0\n").unwrap();
        assert!(matches!(
            read_patches_csv(&path, PatchMode::Fast),
            Err(Error::Core(herofilter_core::Error::Format(_)))
        ));
        assert!(read_patches_csv(&dir.path().join("absent.csv"), PatchMode::Fast).is_err());
    }
}
