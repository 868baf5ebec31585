//! CSV tables and JSON reports.
//!
//! Floats are written with 17 significant digits so that every value reads
//! back bit-identical. Each artifact starts with the tool version and the
//! hash of the configuration that produced it.

use serde::Serialize;
use std::fmt::Write as _;

use crate::amplitude::AmplitudeGrid;
use crate::frame::angle;
use crate::flow::Trajectory;
use crate::relation::RelationSample;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV table with a provenance comment line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push_numbers(&mut self, values: impl IntoIterator<Item = f64>) {
        self.rows.push(values.into_iter().map(num).collect());
    }

    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = format!("# scatrel {TOOL_VERSION} schema {SCHEMA_VERSION} config {config_hash}\n");
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Per-direction columns: the polar angle for `n = 2`, components otherwise.
fn direction_columns(prefix: &str, n: usize) -> Vec<String> {
    if n == 2 {
        vec![prefix.to_string()]
    } else {
        (0..n).map(|k| format!("{prefix}_{k}")).collect()
    }
}

fn direction_values(v: &[f64]) -> Vec<String> {
    if v.len() == 2 {
        vec![num(angle(v))]
    } else {
        v.iter().map(|x| num(*x)).collect()
    }
}

/// `(h, omega, theta, Re K, Im K, flag)` rows.
pub fn amplitude_table(grid: &AmplitudeGrid) -> Table {
    let n = grid.dimension;
    let mut cols = vec!["h".to_string()];
    cols.extend(direction_columns("omega", n));
    cols.extend(direction_columns("theta", n));
    cols.extend(["re_k", "im_k", "flag"].map(String::from));
    let mut t = Table::new(cols);
    for (k, h) in grid.h_values.iter().enumerate() {
        for (i, om) in grid.omega_grid.iter().enumerate() {
            for (j, th) in grid.theta_grid.iter().enumerate() {
                let v = grid.at(k, i, j);
                let mut row = vec![num(*h)];
                row.extend(direction_values(om));
                row.extend(direction_values(th));
                row.extend([num(v.re), num(v.im), grid.flag(i, j).as_str().to_string()]);
                t.rows.push(row);
            }
        }
    }
    t
}

/// `(t, q, p, energy_error)` rows.
pub fn trajectory_table(traj: &Trajectory) -> Table {
    let n = traj.dimension();
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n).map(|k| format!("q_{k}")));
    cols.extend((0..n).map(|k| format!("p_{k}")));
    cols.push("energy_error".into());
    let mut t = Table::new(cols);
    for i in 0..traj.len() {
        let row = std::iter::once(traj.times()[i])
            .chain(traj.q(i).iter().copied())
            .chain(traj.p(i).iter().copied())
            .chain(std::iter::once(traj.energy_error(i)));
        t.push_numbers(row);
    }
    t
}

/// Parameters, chart coordinates and extraction error of each sample point.
pub fn relation_table(sample: &RelationSample) -> Table {
    let m = sample.dimension - 1;
    let mut cols: Vec<String> = (0..2 * m).map(|k| format!("param_{k}")).collect();
    for block in ["base_in", "fiber_in", "base_out", "fiber_out"] {
        cols.extend((0..m).map(|k| format!("{block}_{k}")));
    }
    cols.push("extraction_error".into());
    let mut t = Table::new(cols);
    for p in &sample.points {
        t.push_numbers(p.params.iter().chain(&p.chart_coords).copied().chain([p.extraction_error]));
    }
    t
}

/// JSON artifact wrapper.
#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub schema_version: u32,
    pub tool_version: &'a str,
    pub config_hash: &'a str,
    pub kind: &'a str,
    pub data: &'a T,
}

pub fn json_report<T: Serialize>(kind: &str, config_hash: &str, data: &T) -> String {
    let r = Report { schema_version: SCHEMA_VERSION, tool_version: TOOL_VERSION, config_hash, kind, data };
    let mut s = serde_json::to_string_pretty(&r).expect("report serializes");
    let _ = writeln!(s);
    s
}
