//! File formats: grid JSON, series/profile CSV, kernel JSON and report
//! tables. Floats in CSV are written with 17 significant digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::features::{KernelRecord, VolterraKernels};
use crate::grid::{Line, RadialGrid};
use crate::identify::{EvaluationReport, RocCurve};
use crate::powerflow::{InjectionProfile, VoltageSeries};

/// Formats with 17 significant digits (lossless for `f64`).
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:.16e}")
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<(), IoError> {
    w.flush().map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// On-disk grid description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub buses: usize,
    pub lines: Vec<Line>,
}

impl From<&RadialGrid> for GridFile {
    fn from(g: &RadialGrid) -> Self {
        Self {
            buses: g.n(),
            lines: g.lines().to_vec(),
        }
    }
}

impl GridFile {
    pub fn into_grid(self) -> Result<RadialGrid, IoError> {
        let grid = RadialGrid::new(self.lines)?;
        if grid.n() != self.buses {
            return Err(IoError::Format {
                what: "grid",
                detail: format!("declares {} buses but lines describe {}", self.buses, grid.n()),
            });
        }
        Ok(grid)
    }
}

pub fn grid_to_json(grid: &RadialGrid) -> Result<String, IoError> {
    Ok(serde_json::to_string_pretty(&GridFile::from(grid))?)
}

pub fn grid_from_json(text: &str) -> Result<RadialGrid, IoError> {
    serde_json::from_str::<GridFile>(text)?.into_grid()
}

pub fn read_grid(path: &Path) -> Result<RadialGrid, IoError> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|source| IoError::File {
            path: path.display().to_string(),
            source,
        })?;
    grid_from_json(&text)
}

pub fn write_grid(path: &Path, grid: &RadialGrid) -> Result<(), IoError> {
    write_json(path, &GridFile::from(grid))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    flush(w, path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_reader(open(path)?)?)
}

/// Writes `t,bus_1,…,bus_N`.
pub fn write_series<W: Write>(w: W, series: &VoltageSeries) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    let n = series.buses();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|b| format!("bus_{b}")));
    out.write_record(&header)?;
    for (t, row) in series.values().row_iter().enumerate() {
        let mut rec = vec![series.timestamps()[t].to_string()];
        rec.extend(row.iter().map(|&x| fmt_f64(x)));
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn parse_rows<R: Read>(
    r: R,
    what: &'static str,
    check_header: impl Fn(&csv::StringRecord) -> Result<usize, String>,
) -> Result<(Vec<i64>, DMatrix<f64>), IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let cols = check_header(&header).map_err(|detail| IoError::Format { what, detail })?;
    let mut stamps = Vec::new();
    let mut data = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols + 1 {
            return Err(IoError::Format {
                what,
                detail: format!("row {} has {} fields, expected {}", line + 1, rec.len(), cols + 1),
            });
        }
        let bad = |field: &str| IoError::Format {
            what,
            detail: format!("row {}: cannot parse {field:?}", line + 1),
        };
        stamps.push(rec[0].trim().parse::<i64>().map_err(|_| bad(&rec[0]))?);
        for f in rec.iter().skip(1) {
            data.push(f.trim().parse::<f64>().map_err(|_| bad(f))?);
        }
    }
    if stamps.is_empty() {
        return Err(IoError::Format {
            what,
            detail: "no data rows".into(),
        });
    }
    Ok((stamps.clone(), DMatrix::from_row_slice(stamps.len(), cols, &data)))
}

pub fn read_series<R: Read>(r: R) -> Result<VoltageSeries, IoError> {
    let (stamps, values) = parse_rows(r, "voltage series", |h| {
        if h.get(0) != Some("t") {
            return Err("first column must be `t`".into());
        }
        for (k, name) in h.iter().enumerate().skip(1) {
            if name != format!("bus_{k}") {
                return Err(format!("column {k} is {name:?}, expected bus_{k}"));
            }
        }
        Ok(h.len() - 1)
    })?;
    VoltageSeries::new(values, stamps).map_err(|e| IoError::Format {
        what: "voltage series",
        detail: e.to_string(),
    })
}

pub fn write_series_file(path: &Path, series: &VoltageSeries) -> Result<(), IoError> {
    let w = create(path)?;
    write_series(w, series)
}

pub fn read_series_file(path: &Path) -> Result<VoltageSeries, IoError> {
    read_series(open(path)?)
}

/// Writes `t,p_1,…,p_N,q_1,…,q_N`.
pub fn write_profiles<W: Write>(w: W, profile: &InjectionProfile) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    let n = profile.buses();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|b| format!("p_{b}")));
    header.extend((1..=n).map(|b| format!("q_{b}")));
    out.write_record(&header)?;
    for t in 0..profile.len() {
        let mut rec = vec![t.to_string()];
        rec.extend(profile.p.row(t).iter().map(|&x| fmt_f64(x)));
        rec.extend(profile.q.row(t).iter().map(|&x| fmt_f64(x)));
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_profiles<R: Read>(r: R, v0: f64) -> Result<InjectionProfile, IoError> {
    let (_, values) = parse_rows(r, "injection profiles", |h| {
        if h.get(0) != Some("t") || h.len() % 2 != 1 || h.len() < 3 {
            return Err("expected t,p_1..p_N,q_1..q_N".into());
        }
        let n = (h.len() - 1) / 2;
        for k in 1..=n {
            if h.get(k) != Some(format!("p_{k}").as_str()) || h.get(n + k) != Some(format!("q_{k}").as_str()) {
                return Err(format!("bad column names around bus {k}"));
            }
        }
        Ok(h.len() - 1)
    })?;
    let n = values.ncols() / 2;
    InjectionProfile::new(
        values.columns(0, n).into_owned(),
        values.columns(n, n).into_owned(),
        v0,
    )
    .map_err(|e| IoError::Format {
        what: "injection profiles",
        detail: e.to_string(),
    })
}

pub fn write_profiles_file(path: &Path, profile: &InjectionProfile) -> Result<(), IoError> {
    write_profiles(create(path)?, profile)
}

pub fn read_profiles_file(path: &Path, v0: f64) -> Result<InjectionProfile, IoError> {
    read_profiles(open(path)?, v0)
}

pub fn write_kernels(path: &Path, kernels: &VolterraKernels) -> Result<(), IoError> {
    write_json(path, &kernels.to_records())
}

pub fn read_kernels(path: &Path) -> Result<VolterraKernels, IoError> {
    let recs: Vec<KernelRecord> = read_json(path)?;
    VolterraKernels::from_records(&recs).map_err(|e| IoError::Format {
        what: "kernels",
        detail: e.to_string(),
    })
}

pub fn write_roc(path: &Path, roc: &RocCurve) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record(["threshold", "fpr", "tpr"])?;
    for p in &roc.points {
        out.write_record([fmt_f64(p.threshold), fmt_f64(p.fpr), fmt_f64(p.tpr)])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `roc_<method>.csv`, `edges_<method>.csv`, `auc.json` and
/// `triads_volterra.csv` into `dir`.
pub fn write_report(dir: &Path, report: &EvaluationReport) -> Result<(), IoError> {
    for (name, m) in &report.methods {
        write_roc(&dir.join(format!("roc_{name}.csv")), &m.roc)?;
        let mut out = csv::Writer::from_writer(create(&dir.join(format!("edges_{name}.csv")))?);
        out.write_record(["i", "j", "score", "truth"])?;
        for e in &m.edges {
            out.write_record([e.i.to_string(), e.j.to_string(), fmt_f64(e.score), (e.truth as u8).to_string()])?;
        }
        out.flush().map_err(csv::Error::from)?;
    }
    if report.methods.contains_key("volterra") {
        let mut out = csv::Writer::from_writer(create(&dir.join("triads_volterra.csv"))?);
        out.write_record(["n", "i", "j", "score", "truth"])?;
        for t in &report.triads {
            out.write_record([
                t.center.to_string(),
                t.i.to_string(),
                t.j.to_string(),
                fmt_f64(t.score),
                (t.truth as u8).to_string(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
    }
    #[derive(Serialize)]
    struct AucFile {
        auc: std::collections::BTreeMap<String, f64>,
        triad_auc_volterra: Option<f64>,
        buses: usize,
        samples: usize,
    }
    write_json(
        &dir.join("auc.json"),
        &AucFile {
            auc: report.auc_table(),
            triad_auc_volterra: report.triad_roc.as_ref().map(|r| r.auc),
            buses: report.buses,
            samples: report.samples,
        },
    )?;
    write_json(&dir.join("report.json"), report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerflow::{synth_profiles, ProfileParams};
    use proptest::prelude::*;

    #[test]
    fn grid_json_round_trip() {
        let g = RadialGrid::random(12, 4, 1.0).unwrap();
        let text = grid_to_json(&g).unwrap();
        assert_eq!(grid_from_json(&text).unwrap(), g);
        let bad = r#"{"buses": 3, "lines": [{"child":1,"parent":0,"r":0.1,"x":0.1}]}"#;
        assert!(grid_from_json(bad).is_err());
    }

    #[test]
    fn profiles_round_trip() {
        let g = RadialGrid::random(5, 1, 1.0).unwrap();
        let p = synth_profiles(&g, 7, 3, &ProfileParams::default()).unwrap();
        let mut buf = Vec::new();
        write_profiles(&mut buf, &p).unwrap();
        assert_eq!(read_profiles(buf.as_slice(), 1.0).unwrap(), p);
    }

    #[test]
    fn malformed_series_rejected() {
        let text = "t,bus_1,bus_3\n0,1.0,1.0\n";
        assert!(read_series(text.as_bytes()).is_err());
        let text = "t,bus_1\n0,abc\n";
        assert!(read_series(text.as_bytes()).is_err());
        let text = "t,bus_1\n0,-1.0\n";
        assert!(read_series(text.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn series_csv_round_trip(vals in proptest::collection::vec(1e-3f64..10.0, 1..40), n in 1usize..5) {
            let t_len = (vals.len() / n).max(1);
            let m = DMatrix::from_fn(t_len, n, |t, b| vals[(t * n + b) % vals.len()]);
            let s = VoltageSeries::from_matrix(m).unwrap();
            let mut buf = Vec::new();
            write_series(&mut buf, &s).unwrap();
            let back = read_series(buf.as_slice()).unwrap();
            for (a, b) in back.values().iter().zip(s.values().iter()) {
                prop_assert!((a - b).abs() <= 1e-15 * b.abs());
            }
            prop_assert_eq!(back.timestamps(), s.timestamps());
        }
    }
}
