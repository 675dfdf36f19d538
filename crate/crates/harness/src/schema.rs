//! Versioned CSV layouts. The first line of every file names the schema;
//! the second is the column header.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

use crate::experiment::ExperimentRow;
use crate::oracles::{AmplifyRow, Bb84Row};

pub const SWEEP_VERSION: &str = "# kljn-csv sweep v1";
pub const SWEEP_HEADER: &str = "kind,param,n_trials,p,ci95,leak_fraction,leak_mi,alarms,ber,sift_fraction";
pub const BB84_VERSION: &str = "# kljn-csv bb84 v1";
pub const BB84_HEADER: &str = "n,analytic,empirical,ci";
pub const AMPLIFY_VERSION: &str = "# kljn-csv amplify v1";
pub const AMPLIFY_HEADER: &str = "p,steps,bits_before,bits_after,predicted,empirical,ci";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Sweep rows. Session-only rows leave the attack columns empty.
pub fn sweep_csv(rows: &[ExperimentRow]) -> String {
    let mut out = format!("{SWEEP_VERSION}\n{SWEEP_HEADER}\n");
    for r in rows {
        let a = r.attack.as_ref();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.kind,
            opt(r.param),
            r.n_trials,
            opt(a.map(|a| a.success_rate)),
            opt(a.map(|a| a.ci95)),
            opt(a.map(|a| a.leak_fraction)),
            opt(a.map(|a| a.leak_mutual_info)),
            r.alarms,
            r.ber,
            r.sift_fraction,
        )
        .unwrap();
    }
    out
}

pub fn bb84_csv(rows: &[Bb84Row]) -> String {
    let mut out = format!("{BB84_VERSION}\n{BB84_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.n, r.analytic, r.empirical, r.ci).unwrap();
    }
    out
}

pub fn amplify_csv(rows: &[AmplifyRow]) -> String {
    let mut out = format!("{AMPLIFY_VERSION}\n{AMPLIFY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.p, r.steps, r.bits_before, r.bits_after, r.predicted, r.empirical, r.ci
        )
        .unwrap();
    }
    out
}

/// A CSV read back with its schema checked.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub version: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Parses any of the known layouts; unknown versions, header drift and
/// ragged rows are errors.
pub fn read_table(text: &str) -> Result<Table> {
    let mut lines = text.lines();
    let version = lines.next().context("empty file")?.trim().to_string();
    let expected = match version.as_str() {
        SWEEP_VERSION => SWEEP_HEADER,
        BB84_VERSION => BB84_HEADER,
        AMPLIFY_VERSION => AMPLIFY_HEADER,
        v => bail!("unknown schema line `{v}`"),
    };
    let header = lines.next().context("missing header")?.trim();
    if header != expected {
        let got: Vec<&str> = header.split(',').collect();
        let want: Vec<&str> = expected.split(',').collect();
        let first_bad = want
            .iter()
            .zip(got.iter().map(Some).chain(std::iter::repeat(None)))
            .find(|(w, g)| Some(*w) != *g)
            .map(|(w, _)| *w)
            .unwrap_or_else(|| got.get(want.len()).copied().unwrap_or(""));
        bail!("header mismatch at column `{first_bad}` for {version}");
    }
    let columns: Vec<String> = expected.split(',').map(String::from).collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, l)| {
            let cells: Vec<String> = l.split(',').map(String::from).collect();
            if cells.len() != columns.len() {
                bail!("row {} has {} cells, expected {}", k + 1, cells.len(), columns.len());
            }
            Ok(cells)
        })
        .collect::<Result<_>>()?;
    Ok(Table { version, columns, rows })
}

impl Table {
    /// Fixed-width rendering for the terminal.
    pub fn render(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.columns[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        let mut out = format!("{}\n{}\n", self.version.trim_start_matches("# "), line(&self.columns));
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}
