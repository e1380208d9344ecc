//! Delimited-text artifacts: datasets, loss curves, residual grids.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rarpinn::net::Point;
use rarpinn::oracle::{FieldSample, GridSpec};
use rarpinn::training::{BoundaryData, LossRecord, TrainingDataSets};

use crate::CliError;

pub const DATASET_HEADER: [&str; 6] = ["x", "t", "u1", "v1", "u2", "v2"];
pub const LOSS_HEADER: [&str; 6] = ["phase", "iteration", "loss0", "lossb", "lossf", "total"];
pub const RESIDUAL_HEADER: [&str; 3] = ["x", "t", "score"];

/// 17 significant digits: enough to round-trip any f64.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::File(format!("{}: {e}", path.display()))
}

pub fn write_dataset(path: &Path, rows: &[FieldSample]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(DATASET_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let rec = [r.point.x, r.point.t, r.u1, r.v1, r.u2, r.v2].map(num);
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<FieldSample>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_owned).collect();
    if header != DATASET_HEADER {
        return Err(CliError::File(format!(
            "{}: header must be `{}`, found `{}`",
            path.display(),
            DATASET_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let mut v = [0.0f64; 6];
        for (k, slot) in v.iter_mut().enumerate() {
            let field = rec.get(k).ok_or_else(|| {
                CliError::File(format!("{}: line {line}: missing column `{}`", path.display(), DATASET_HEADER[k]))
            })?;
            *slot = field.trim().parse().map_err(|_| {
                CliError::File(format!(
                    "{}: line {line}, column `{}`: `{field}` is not a number",
                    path.display(),
                    DATASET_HEADER[k]
                ))
            })?;
            if !slot.is_finite() {
                return Err(CliError::File(format!(
                    "{}: line {line}, column `{}`: non-finite value",
                    path.display(),
                    DATASET_HEADER[k]
                )));
            }
        }
        out.push(FieldSample { point: Point::new(v[0], v[1]), u1: v[2], v1: v[3], u2: v[4], v2: v[5] });
    }
    Ok(out)
}

/// Checks that `rows` are the nodes of `grid` in grid order.
pub fn check_on_grid(path: &Path, rows: &[FieldSample], grid: &GridSpec) -> Result<(), CliError> {
    if rows.len() != grid.len() {
        return Err(CliError::File(format!(
            "{}: {} rows, but the {}x{} grid has {} nodes",
            path.display(),
            rows.len(),
            grid.nx,
            grid.nt,
            grid.len()
        )));
    }
    let tol = 1e-9 * (grid.x_max - grid.x_min).abs().max(grid.t_max - grid.t_min).max(1.0);
    for (i, (row, p)) in rows.iter().zip(grid.points()).enumerate() {
        if (row.point.x - p.x).abs() > tol || (row.point.t - p.t).abs() > tol {
            return Err(CliError::File(format!(
                "{}: line {}: point ({}, {}) is not grid node ({}, {})",
                path.display(),
                i + 2,
                row.point.x,
                row.point.t,
                p.x,
                p.t
            )));
        }
    }
    Ok(())
}

pub fn write_losses(path: &Path, records: &[LossRecord]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(LOSS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        let l = r.loss;
        w.write_record([
            r.phase.name(),
            r.iteration.to_string(),
            num(l.loss0),
            num(l.lossb),
            num(l.lossf),
            num(l.total),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_scores(path: &Path, scores: &[(Point, f64)]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(RESIDUAL_HEADER).map_err(|e| csv_err(path, e))?;
    for (p, s) in scores {
        w.write_record([num(p.x), num(p.t), num(*s)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// |h| of prediction and reference with their absolute difference.
pub fn write_magnitudes(path: &Path, pred: &[FieldSample], exact: &[FieldSample]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["x", "t", "h1_pred", "h1_exact", "h1_abs_err", "h2_pred", "h2_exact", "h2_abs_err"])
        .map_err(|e| csv_err(path, e))?;
    for (p, e) in pred.iter().zip(exact) {
        let (p1, p2) = p.magnitudes();
        let (e1, e2) = e.magnitudes();
        w.write_record([p.point.x, p.point.t, p1, e1, (p1 - e1).abs(), p2, e2, (p2 - e2).abs()].map(num))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Training point sets as (set, x, t); periodic boundary pairs are written
/// as their two end points.
pub fn write_points(path: &Path, data: &TrainingDataSets, added: &[Point]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["set", "x", "t"]).map_err(|e| csv_err(path, e))?;
    let mut put = |set: &str, p: Point| w.write_record([set.to_owned(), num(p.x), num(p.t)]);
    for s in data.tau0.iter().flatten() {
        put("initial", s.point).map_err(|e| csv_err(path, e))?;
    }
    match &data.taub {
        BoundaryData::Absent => {}
        BoundaryData::Periodic(times) => {
            for &t in times {
                put("boundary", Point::new(data.domain.x_lo, t)).map_err(|e| csv_err(path, e))?;
                put("boundary", Point::new(data.domain.x_hi, t)).map_err(|e| csv_err(path, e))?;
            }
        }
        BoundaryData::Supervised(s) => {
            for b in s {
                put("boundary", b.point).map_err(|e| csv_err(path, e))?;
            }
        }
    }
    let n_base = data.tauf.len() - added.len();
    for &p in &data.tauf[..n_base] {
        put("collocation", p).map_err(|e| csv_err(path, e))?;
    }
    for &p in added {
        put("refined", p).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}
