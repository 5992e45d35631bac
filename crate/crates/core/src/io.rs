//! Text encodings of trajectories.
//!
//! CSV: one row per node, `t, re_c_j_k, im_c_j_k, …` in flat mode order,
//! every number written with 17 significant digits.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::TimeGrid;
use crate::trajectory::CoefficientTrajectory;
use crate::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_header(j_count: usize, k_count: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for j in 0..j_count {
        for k in 0..k_count {
            h.push(format!("re_c_{j}_{k}"));
            h.push(format!("im_c_{j}_{k}"));
        }
    }
    h
}

pub fn write_trajectory_csv<W: Write>(traj: &CoefficientTrajectory, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header(traj.j_count(), traj.k_count()))?;
    for n in 0..traj.n_nodes() {
        let mut row = vec![fmt_f64(traj.grid().time(n))];
        for c in traj.node(n) {
            row.push(fmt_f64(c.re));
            row.push(fmt_f64(c.im));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory CSV written for `grid` and a `J × K` mode layout.
pub fn read_trajectory_csv<R: Read>(reader: R, grid: TimeGrid, j_count: usize, k_count: usize) -> Result<CoefficientTrajectory> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let expected = csv_header(j_count, k_count);
    if header != expected {
        return Err(Error::Shape(format!(
            "trajectory header has {} columns, expected {} for J={j_count}, K={k_count}",
            header.len(),
            expected.len()
        )));
    }
    let m = j_count * k_count;
    let mut values = Vec::with_capacity(grid.n_nodes() * m);
    let mut rows = 0;
    for (n, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != expected.len() {
            return Err(Error::Shape(format!("row {} has {} fields, expected {}", n + 1, record.len(), expected.len())));
        }
        let nums: Vec<f64> = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Shape(format!("row {}: {e}", n + 1)))?;
        if n < grid.n_nodes() {
            let t = grid.time(n);
            if (nums[0] - t).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::Shape(format!("row {} has t = {}, grid expects {t}", n + 1, nums[0])));
            }
        }
        values.extend(nums[1..].chunks_exact(2).map(|p| Complex64::new(p[0], p[1])));
        rows += 1;
    }
    if rows != grid.n_nodes() {
        return Err(Error::Shape(format!("trajectory has {rows} rows, grid has {} nodes", grid.n_nodes())));
    }
    CoefficientTrajectory::new(grid, j_count, k_count, values)
}

/// JSON form: grid metadata plus real and imaginary arrays, node-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryJson {
    pub t_i: f64,
    pub t_f: f64,
    pub n_nodes: usize,
    pub j_count: usize,
    pub k_count: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&CoefficientTrajectory> for TrajectoryJson {
    fn from(traj: &CoefficientTrajectory) -> Self {
        let g = traj.grid();
        Self {
            t_i: g.t_i(),
            t_f: g.t_f(),
            n_nodes: g.n_nodes(),
            j_count: traj.j_count(),
            k_count: traj.k_count(),
            re: (0..g.n_nodes()).map(|n| traj.node(n).iter().map(|c| c.re).collect()).collect(),
            im: (0..g.n_nodes()).map(|n| traj.node(n).iter().map(|c| c.im).collect()).collect(),
        }
    }
}

impl TryFrom<TrajectoryJson> for CoefficientTrajectory {
    type Error = Error;

    fn try_from(j: TrajectoryJson) -> Result<Self> {
        let grid = TimeGrid::new(j.t_i, j.t_f, j.n_nodes)?;
        if j.re.len() != j.n_nodes || j.im.len() != j.n_nodes {
            return Err(Error::Shape("re/im arrays must have one row per node".into()));
        }
        let mut values = Vec::new();
        for (re, im) in j.re.iter().zip(&j.im) {
            if re.len() != im.len() {
                return Err(Error::Shape("re/im rows differ in length".into()));
            }
            values.extend(re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)));
        }
        CoefficientTrajectory::new(grid, j.j_count, j.k_count, values)
    }
}

pub fn write_trajectory_json<W: Write>(traj: &CoefficientTrajectory, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, &TrajectoryJson::from(traj))?;
    Ok(())
}

pub fn read_trajectory_json<R: Read>(reader: R) -> Result<CoefficientTrajectory> {
    let j: TrajectoryJson = serde_json::from_reader(reader)?;
    j.try_into()
}
