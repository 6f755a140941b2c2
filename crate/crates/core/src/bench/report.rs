//! Markdown and CSV rendering of NoC results, optionally next to published
//! reference numbers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Published NoC@90/95 numbers shipped with the crate.
pub const REFERENCE_FIXTURES: &str = include_str!("../../fixtures/reference_noc.json");

/// One measured (model, mode, dataset) cell pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub model: String,
    pub mode: String,
    pub dataset: String,
    pub noc90: f64,
    pub noc95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub dataset: String,
    pub model: String,
    pub mode: String,
    pub noc90: f64,
    pub noc95: f64,
}

/// Reference numbers for one model, matched to measured rows by
/// (dataset, mode).
#[derive(Debug, Clone, PartialEq)]
pub struct References {
    pub model: String,
    pub fixtures: Vec<Fixture>,
}

impl References {
    pub fn parse(json: &str, model: &str) -> Result<Self> {
        let all: Vec<Fixture> = serde_json::from_str(json)?;
        Ok(Self {
            model: model.to_string(),
            fixtures: all.into_iter().filter(|f| f.model == model).collect(),
        })
    }

    /// The shipped fixtures for `model`.
    pub fn builtin(model: &str) -> Self {
        Self::parse(REFERENCE_FIXTURES, model).expect("shipped fixtures parse")
    }

    pub fn lookup(&self, dataset: &str, mode: &str) -> Option<&Fixture> {
        self.fixtures
            .iter()
            .find(|f| f.dataset.eq_ignore_ascii_case(dataset) && f.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub markdown: String,
    pub csv: String,
}

fn unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// One row per (model, mode) in first-seen order, two NoC columns per
/// dataset, plus a reference column per dataset when `refs` is given.
pub fn render_report(entries: &[ReportEntry], refs: Option<&References>) -> RenderedReport {
    let datasets = unique(entries.iter().map(|e| e.dataset.as_str()));
    let mut rows: Vec<(&str, &str)> = Vec::new();
    for e in entries {
        if !rows.contains(&(e.model.as_str(), e.mode.as_str())) {
            rows.push((e.model.as_str(), e.mode.as_str()));
        }
    }

    let mut md = String::from("| Model | Mode |");
    let mut sep = String::from("|---|---|");
    let mut csv = String::from("model,mode,dataset,noc90,noc95");
    for d in &datasets {
        let _ = write!(md, " {d} NoC@90 | {d} NoC@95 |");
        sep.push_str("---:|---:|");
        if refs.is_some() {
            let _ = write!(md, " {d} Reference |");
            sep.push_str("---:|");
        }
    }
    if refs.is_some() {
        csv.push_str(",ref_noc90,ref_noc95");
    }
    md.push('\n');
    md.push_str(&sep);
    md.push('\n');
    csv.push('\n');

    for (model, mode) in rows {
        let _ = write!(md, "| {model} | {mode} |");
        for d in &datasets {
            match entries
                .iter()
                .find(|e| e.model == model && e.mode == mode && e.dataset == *d)
            {
                Some(e) => {
                    let _ = write!(md, " {:.2} | {:.2} |", e.noc90, e.noc95);
                    let _ = write!(csv, "{model},{mode},{d},{:.2},{:.2}", e.noc90, e.noc95);
                    if let Some(r) = refs {
                        match r.lookup(d, mode) {
                            Some(f) => {
                                let _ = write!(csv, ",{:.2},{:.2}", f.noc90, f.noc95);
                            }
                            None => csv.push_str(",,"),
                        }
                    }
                    csv.push('\n');
                }
                None => md.push_str(" - | - |"),
            }
            if let Some(r) = refs {
                match r.lookup(d, mode) {
                    Some(f) => {
                        let _ = write!(md, " {:.2} / {:.2} |", f.noc90, f.noc95);
                    }
                    None => md.push_str(" - |"),
                }
            }
        }
        md.push('\n');
    }
    RenderedReport { markdown: md, csv }
}
