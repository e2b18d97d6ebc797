//! Markdown and CSV rendering of result tables.

use std::io;

use serde::{Deserialize, Serialize};

use crate::analysis::{CrossPromptStats, DistanceReport, HammingReport, InternalReport, L0Report, L2Report, L0_BUCKETS};
use crate::client::LatencyReport;

#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    Cells(Vec<String>),
    /// A full-width group heading.
    Section(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    /// Number of leading text columns; the rest are right-aligned.
    pub label_columns: usize,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>, label_columns: usize) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            label_columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.headers.len());
        self.rows.push(Row::Cells(cells));
    }

    pub fn section(&mut self, title: impl Into<String>) {
        self.rows.push(Row::Section(title.into()));
    }

    pub fn to_markdown(&self) -> String {
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        let mut out = line(&self.headers);
        let align: Vec<String> = (0..self.headers.len())
            .map(|i| if i < self.label_columns { "---" } else { "---:" }.to_owned())
            .collect();
        out.push_str(&line(&align));
        for row in &self.rows {
            match row {
                Row::Cells(cells) => out.push_str(&line(cells)),
                Row::Section(title) => {
                    let mut cells = vec![format!("*{title}*")];
                    cells.resize(self.headers.len(), String::new());
                    out.push_str(&line(&cells));
                }
            }
        }
        out
    }

    /// CSV with the header row; section headings become a leading `group`
    /// column when present.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let grouped = self.rows.iter().any(|r| matches!(r, Row::Section(_)));
        let mut w = csv::Writer::from_writer(out);
        let mut header = Vec::new();
        if grouped {
            header.push("group".to_owned());
        }
        header.extend(self.headers.iter().cloned());
        w.write_record(&header)?;
        let mut group = String::new();
        for row in &self.rows {
            match row {
                Row::Section(title) => group = title.clone(),
                Row::Cells(cells) => {
                    let mut rec = Vec::with_capacity(cells.len() + 1);
                    if grouped {
                        rec.push(group.clone());
                    }
                    rec.extend(cells.iter().cloned());
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Fixed-point formatting that never prints `-0.000`.
pub fn fixed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_owned()
    } else {
        s
    }
}

fn opt(x: Option<f64>, decimals: usize) -> String {
    x.map_or_else(|| "n/a".to_owned(), |v| fixed(v, decimals))
}

/// `0.05` → `5%`, `0.125` → `12.5%`.
pub fn percent_label(rho: f64) -> String {
    let s = format!("{:.6}", rho * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

pub const PAUC_DECIMALS: usize = 5;
pub const PERCENT_DECIMALS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaucRow {
    pub method: String,
    /// One value per ρ, in the table's column order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaucGroup {
    #[serde(default)]
    pub title: Option<String>,
    pub rows: Vec<PaucRow>,
}

/// Method × ρ table of normalized pAUC values.
pub fn pauc_table(rhos: &[f64], groups: &[PaucGroup]) -> Table {
    let mut headers = vec!["Method".to_owned()];
    headers.extend(rhos.iter().map(|&r| format!("AUC @ {}", percent_label(r))));
    let mut t = Table::new(headers, 1);
    for g in groups {
        if let Some(title) = &g.title {
            t.section(title.clone());
        }
        for r in &g.rows {
            let mut cells = vec![r.method.clone()];
            cells.extend(r.values.iter().map(|&v| fixed(v, PAUC_DECIMALS)));
            t.push(cells);
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPaucRow {
    pub model: String,
    pub variant: String,
    pub values: Vec<f64>,
}

/// Model × prompt variant × ρ table; the model name is printed once per block.
pub fn prompt_pauc_table(rhos: &[f64], rows: &[PromptPaucRow]) -> Table {
    let mut headers = vec!["Model".to_owned(), "Variant".to_owned()];
    headers.extend(rhos.iter().map(|&r| format!("AUC @ {}", percent_label(r))));
    let mut t = Table::new(headers, 2);
    let mut last: Option<&str> = None;
    for r in rows {
        let model = if last == Some(r.model.as_str()) {
            String::new()
        } else {
            r.model.clone()
        };
        last = Some(&r.model);
        let mut cells = vec![model, r.variant.clone()];
        cells.extend(r.values.iter().map(|&v| fixed(v, PAUC_DECIMALS)));
        t.push(cells);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L0Row {
    pub model: String,
    pub percent: [f64; 4],
    pub quality: [Option<f64>; 4],
}

impl L0Row {
    pub fn from_report(model: impl Into<String>, r: &L0Report) -> Self {
        Self {
            model: model.into(),
            percent: [0, 1, 2, 3].map(|i| r.buckets[i].percent),
            quality: [0, 1, 2, 3].map(|i| r.buckets[i].mean_quality),
        }
    }
}

pub fn l0_table(rows: &[L0Row]) -> Table {
    let mut headers = vec!["Model".to_owned()];
    for b in L0_BUCKETS {
        let b = if b == ">=3" { "≥3" } else { b };
        headers.push(format!("{b} FP %"));
        headers.push(format!("{b} FP QS"));
    }
    let mut t = Table::new(headers, 1);
    for r in rows {
        let mut cells = vec![r.model.clone()];
        for i in 0..4 {
            cells.push(fixed(r.percent[i], PERCENT_DECIMALS));
            cells.push(opt(r.quality[i], PERCENT_DECIMALS));
        }
        t.push(cells);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Row {
    pub model: String,
    pub completeness: [f64; 4],
    pub hard_recall: f64,
}

impl L2Row {
    pub fn from_report(model: impl Into<String>, r: &L2Report) -> Self {
        Self {
            model: model.into(),
            completeness: r.completeness,
            hard_recall: r.hard_recall,
        }
    }
}

pub fn l2_table(rows: &[L2Row]) -> Table {
    let mut t = Table::new(["Model", "0/3", "1/3", "2/3", "3/3", "Hard Artifact Recall (%)"], 1);
    for r in rows {
        let mut cells = vec![r.model.clone()];
        cells.extend(r.completeness.iter().map(|&v| fixed(v, PERCENT_DECIMALS)));
        cells.push(fixed(r.hard_recall, PERCENT_DECIMALS));
        t.push(cells);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammingRow {
    pub model: String,
    pub distribution: [f64; 6],
}

impl HammingRow {
    pub fn from_report(model: impl Into<String>, r: &HammingReport) -> Self {
        Self {
            model: model.into(),
            distribution: r.distribution,
        }
    }
}

pub fn hamming_table(rows: &[HammingRow]) -> Table {
    let mut t = Table::new(["Model", "D0", "D1", "D2", "D3", "D4", "D5"], 1);
    for r in rows {
        let mut cells = vec![r.model.clone()];
        cells.extend(r.distribution.iter().map(|&v| fixed(v, PERCENT_DECIMALS)));
        t.push(cells);
    }
    t
}

pub fn cross_prompt_table(model: &str, rows: &[CrossPromptStats]) -> Table {
    let mut t = Table::new(["Model", "Reference", "Variant", "n", "MAE", "Pearson", "Bias"], 3);
    for r in rows {
        t.push(vec![
            model.to_owned(),
            r.variant_a.to_string(),
            r.variant_b.to_string(),
            r.n.to_string(),
            fixed(r.mae, 2),
            opt(r.pearson, 3),
            fixed(r.bias, 2),
        ]);
    }
    t
}

pub fn internal_table(report: &InternalReport) -> Table {
    let mut t = Table::new(["Dimension", "Label", "n", "Mean", "Q1", "Median", "Q3"], 2);
    for g in &report.groups {
        for l in &g.labels {
            let q = l.quartiles;
            t.push(vec![
                g.dimension.name().to_owned(),
                l.label.to_owned(),
                l.count.to_string(),
                opt(l.mean, 1),
                opt(q.map(|q| q[0]), 1),
                opt(q.map(|q| q[1]), 1),
                opt(q.map(|q| q[2]), 1),
            ]);
        }
    }
    t
}

pub fn chain_table(report: &InternalReport) -> Table {
    let mut t = Table::new(["Dimension", "Chain", "Monotone"], 3);
    for g in &report.groups {
        for c in &g.chains {
            t.push(vec![
                g.dimension.name().to_owned(),
                c.chain.to_owned(),
                if c.monotone_ok { "yes" } else { "no" }.to_owned(),
            ]);
        }
    }
    t
}

pub fn distance_table(report: &DistanceReport) -> Table {
    let mut t = Table::new(["Distance", "n", "Mean", "Std"], 1);
    for r in &report.rows {
        t.push(vec![
            r.distance.name().to_owned(),
            r.count.to_string(),
            opt(r.mean, 1),
            opt(r.std, 1),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub method: String,
    pub mean_ms: Option<f64>,
    #[serde(default)]
    pub images: Option<usize>,
    #[serde(default)]
    pub cache_hits: Option<usize>,
}

impl LatencyRow {
    pub fn from_report(method: impl Into<String>, r: &LatencyReport) -> Self {
        Self {
            method: method.into(),
            mean_ms: r.mean_ms,
            images: Some(r.count),
            cache_hits: Some(r.cache_hits),
        }
    }
}

pub fn latency_table(rows: &[LatencyRow]) -> Table {
    let mut t = Table::new(["Method", "ms/image", "Images", "Cache hits"], 1);
    let count = |c: Option<usize>| c.map_or_else(|| "-".to_owned(), |c| c.to_string());
    for r in rows {
        t.push(vec![r.method.clone(), opt(r.mean_ms, 1), count(r.images), count(r.cache_hits)]);
    }
    t
}

/// Published or hand-entered numbers to render in the standard layouts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFixture {
    #[serde(default)]
    pub rhos: Vec<f64>,
    #[serde(default)]
    pub pauc: Vec<PaucGroup>,
    #[serde(default)]
    pub prompt_pauc: Vec<PromptPaucRow>,
    #[serde(default)]
    pub l0: Vec<L0Row>,
    #[serde(default)]
    pub l2: Vec<L2Row>,
    #[serde(default)]
    pub hamming: Vec<HammingRow>,
    #[serde(default)]
    pub latency: Vec<LatencyRow>,
}

impl TableFixture {
    /// Non-empty tables with their headings, in a fixed order.
    pub fn tables(&self) -> Vec<(&'static str, Table)> {
        let rhos = if self.rhos.is_empty() {
            crate::evr::DEFAULT_RHOS.to_vec()
        } else {
            self.rhos.clone()
        };
        let mut out = Vec::new();
        if !self.pauc.is_empty() {
            out.push(("Partial AUC", pauc_table(&rhos, &self.pauc)));
        }
        if !self.prompt_pauc.is_empty() {
            out.push(("Partial AUC by prompt", prompt_pauc_table(&rhos, &self.prompt_pauc)));
        }
        if !self.l0.is_empty() {
            out.push(("L0 false positives", l0_table(&self.l0)));
        }
        if !self.l2.is_empty() {
            out.push(("L2 completeness and hard-artifact recall", l2_table(&self.l2)));
        }
        if !self.hamming.is_empty() {
            out.push(("Hamming distance", hamming_table(&self.hamming)));
        }
        if !self.latency.is_empty() {
            out.push(("Latency", latency_table(&self.latency)));
        }
        out
    }
}

/// Joins titled Markdown fragments into one document.
pub fn document(title: &str, sections: &[(String, String)]) -> String {
    let mut out = format!("# {title}\n");
    for (heading, body) in sections {
        out.push_str(&format!("\n## {heading}\n\n{}", body.trim_end()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_formatting() {
        assert_eq!(fixed(0.000912, 5), "0.00091");
        assert_eq!(fixed(-0.00001, 2), "0.00");
        assert_eq!(fixed(-1.5, 1), "-1.5");
        assert_eq!(percent_label(0.01), "1%");
        assert_eq!(percent_label(0.2), "20%");
        assert_eq!(percent_label(0.125), "12.5%");
    }

    #[test]
    fn markdown_and_csv_layout() {
        let t = pauc_table(
            &[0.01, 0.05],
            &[PaucGroup {
                title: Some("Baselines".into()),
                rows: vec![PaucRow {
                    method: "A".into(),
                    values: vec![0.1, 0.2],
                }],
            }],
        );
        assert_eq!(
            t.to_markdown(),
            "| Method | AUC @ 1% | AUC @ 5% |\n| --- | ---: | ---: |\n| *Baselines* |  |  |\n| A | 0.10000 | 0.20000 |\n"
        );
        assert_eq!(t.to_csv(), "group,Method,AUC @ 1%,AUC @ 5%\nBaselines,A,0.10000,0.20000\n");
    }

    #[test]
    fn prompt_table_prints_model_once() {
        let rows = vec![
            PromptPaucRow {
                model: "M".into(),
                variant: "simple".into(),
                values: vec![0.5],
            },
            PromptPaucRow {
                model: "M".into(),
                variant: "utility".into(),
                values: vec![0.25],
            },
        ];
        let md = prompt_pauc_table(&[0.1], &rows).to_markdown();
        assert!(md.contains("| M | simple | 0.50000 |"));
        assert!(md.contains("|  | utility | 0.25000 |"));
    }
}
