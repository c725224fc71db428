use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::args::Format;

/// The emitted report. Field order is fixed, so serializing the same run
/// twice yields byte-identical output.
#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub model: ModelInfo,
    pub controls: Controls,
    pub results: Vec<Row>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Serialize)]
pub struct ModelInfo {
    pub lambda: f64,
    pub dist: String,
    #[serde(rename = "K")]
    pub k: u32,
    pub rho: f64,
}

/// Echo of the effective numeric controls; only the ones the command uses
/// appear.
#[derive(Debug, Default, Serialize)]
pub struct Controls {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub departures: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batches: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// One scalar result. `u`, `n`, and `r` qualify the quantity where they
/// apply; `ci_halfwidth` accompanies simulation estimates.
#[derive(Debug, Serialize)]
pub struct Row {
    pub name: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_halfwidth: Option<f64>,
}

impl Row {
    pub fn new(name: &'static str, value: f64) -> Self {
        Row { name, u: None, n: None, r: None, value, ci_halfwidth: None }
    }

    pub fn at_u(mut self, u: f64) -> Self {
        self.u = Some(u);
        self
    }

    pub fn at_n(mut self, n: u64) -> Self {
        self.n = Some(n);
        self
    }

    pub fn at_r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    pub fn with_ci(mut self, halfwidth: f64) -> Self {
        self.ci_halfwidth = Some(halfwidth);
        self
    }
}

#[derive(Debug, Default, Serialize)]
pub struct Diagnostics {
    pub truncation_terms: Option<u64>,
    pub grid_step: Option<f64>,
    pub iterations: Option<u64>,
}

fn opt(v: Option<impl std::fmt::Display>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn to_csv(report: &Report) -> String {
    let mut out = String::from("name,u,n,r,value,ci_halfwidth\n");
    for row in &report.results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.name,
            opt(row.u),
            opt(row.n),
            opt(row.r),
            row.value,
            opt(row.ci_halfwidth),
        );
    }
    out
}

fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Csv => to_csv(report),
    }
}

pub fn emit(report: &Report, format: Format, out: Option<&Path>) -> io::Result<()> {
    let text = render(report, format);
    match out {
        Some(path) => fs::write(path, text),
        None => io::stdout().write_all(text.as_bytes()),
    }
}

/// Engine failures in JSON mode become a machine-readable object on stdout;
/// in CSV mode the message goes to stderr.
pub fn emit_error(err: &psq_core::Error, format: Format) {
    match format {
        Format::Json => {
            let obj = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            println!("{obj:#}");
        }
        Format::Csv => eprintln!("error: {err}"),
    }
}
