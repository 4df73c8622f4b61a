//! Benchmark summaries: acceptance ratio, model size and runtime per benchmark,
//! plus precision/recall per mined pair, in a table and as `key=value` lines.

use std::fmt::Write as _;

use flowmine::evaluator::FlowComparison;

use crate::failure::Failure;
use crate::kv::KvFile;

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub start: u32,
    pub end: u32,
    pub precision: f64,
    pub recall: f64,
}

/// One benchmark's results.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub name: String,
    /// Acceptance rate; `None` when nothing could be evaluated.
    pub ratio: Option<f64>,
    /// Why the ratio is missing.
    pub ratio_note: Option<String>,
    /// The ratio is a lower bound (search budget ran out).
    pub lower_bound: bool,
    pub size: usize,
    /// Wall-clock seconds spent producing the flows.
    pub rt: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub pairs: Vec<PairRow>,
}

impl Row {
    pub fn with_comparison(mut self, cmp: &FlowComparison) -> Self {
        self.precision = Some(cmp.precision);
        self.recall = Some(cmp.recall);
        self.pairs = cmp
            .pairs
            .iter()
            .map(|p| PairRow {
                start: p.start,
                end: p.ends.iter().next().copied().unwrap_or(0),
                precision: p.precision,
                recall: p.recall,
            })
            .collect();
        self
    }

    /// `key=value` lines under `prefix` (empty for a standalone row).
    pub fn to_kv(&self, prefix: &str) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{prefix}{k}={v}");
        };
        put("name", self.name.clone());
        put("ratio", opt(self.ratio));
        if let Some(n) = &self.ratio_note {
            put("ratio_note", n.clone());
        }
        put("lower_bound", self.lower_bound.to_string());
        put("size", self.size.to_string());
        put("rt", opt(self.rt));
        put("precision", opt(self.precision));
        put("recall", opt(self.recall));
        for p in &self.pairs {
            put(&format!("pair.{}-{}.precision", p.start, p.end), num(p.precision));
            put(&format!("pair.{}-{}.recall", p.start, p.end), num(p.recall));
        }
        out
    }

    /// Reads a row back from `key=value` text (extra keys are ignored).
    pub fn from_kv(f: &KvFile) -> Result<Self, Failure> {
        let name = f.get("name").ok_or_else(|| Failure::data("report has no `name`"))?.to_string();
        let mut row = Row {
            name,
            ratio: opt_parse(f, "ratio")?,
            ratio_note: f.get("ratio_note").map(str::to_string),
            lower_bound: f.parsed("lower_bound")?.unwrap_or(false),
            size: f.parsed("size")?.unwrap_or(0),
            rt: opt_parse(f, "rt")?,
            precision: opt_parse(f, "precision")?,
            recall: opt_parse(f, "recall")?,
            pairs: Vec::new(),
        };
        for (k, v) in &f.entries {
            let Some(rest) = k.strip_prefix("pair.") else { continue };
            let Some((pair, "precision")) = rest.split_once('.') else { continue };
            let (s, e) = pair
                .split_once('-')
                .ok_or_else(|| Failure::data(format!("bad pair key `{k}`")))?;
            let parse_id = |x: &str| x.parse::<u32>().map_err(|_| Failure::data(format!("bad pair key `{k}`")));
            let recall = f
                .get(&format!("pair.{pair}.recall"))
                .ok_or_else(|| Failure::data(format!("pair {pair} has no recall")))?;
            row.pairs.push(PairRow {
                start: parse_id(s)?,
                end: parse_id(e)?,
                precision: parse_num(k, v)?,
                recall: parse_num(k, recall)?,
            });
        }
        row.pairs.sort_by_key(|p| (p.start, p.end));
        Ok(row)
    }
}

/// Shortest decimal rendering with at most four fraction digits.
pub fn num(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), num)
}

fn parse_num(key: &str, v: &str) -> Result<f64, Failure> {
    v.parse().map_err(|_| Failure::data(format!("bad number `{v}` for `{key}`")))
}

fn opt_parse(f: &KvFile, key: &str) -> Result<Option<f64>, Failure> {
    match f.get(key) {
        None | Some("n/a") => Ok(None),
        Some(v) => parse_num(key, v).map(Some),
    }
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Arithmetic mean over the rows that have each field.
pub fn mean_row(rows: &[Row]) -> Row {
    Row {
        name: "mean".into(),
        ratio: mean(rows.iter().map(|r| r.ratio)),
        ratio_note: None,
        lower_bound: rows.iter().any(|r| r.lower_bound),
        size: if rows.is_empty() {
            0
        } else {
            (rows.iter().map(|r| r.size).sum::<usize>() as f64 / rows.len() as f64).round() as usize
        },
        rt: mean(rows.iter().map(|r| r.rt)),
        precision: mean(rows.iter().map(|r| r.precision)),
        recall: mean(rows.iter().map(|r| r.recall)),
        pairs: Vec::new(),
    }
}

/// Human-readable table; a mean row is appended when there are several rows.
pub fn render_table(rows: &[Row]) -> String {
    let mut all: Vec<Row> = rows.to_vec();
    if rows.len() > 1 {
        all.push(mean_row(rows));
    }
    let ratio_cell = |r: &Row| match (r.ratio, &r.ratio_note) {
        (Some(x), _) if r.lower_bound => format!(">={}", num(x)),
        (Some(x), _) => num(x),
        (None, Some(note)) => format!("n/a ({note})"),
        (None, None) => "n/a".into(),
    };
    let w = all.iter().map(|r| r.name.len()).max().unwrap_or(0).max(9);
    let mut out = String::new();
    let _ = writeln!(out, "{:<w$}  {:>10}  {:>6}  {:>8}  {:>9}  {:>6}", "benchmark", "Ratio", "size", "RT(s)", "precision", "recall");
    for r in &all {
        let _ = writeln!(
            out,
            "{:<w$}  {:>10}  {:>6}  {:>8}  {:>9}  {:>6}",
            r.name,
            ratio_cell(r),
            r.size,
            opt(r.rt),
            opt(r.precision),
            opt(r.recall)
        );
    }
    for r in rows.iter().filter(|r| !r.pairs.is_empty()) {
        let _ = writeln!(out, "\n{}: per-pair edge precision / recall", r.name);
        for p in &r.pairs {
            let _ = writeln!(out, "  msg_{} -> msg_{}  {:>6}  {:>6}", p.start, p.end, num(p.precision), num(p.recall));
        }
    }
    out
}

/// Machine-readable counterpart of [`render_table`].
pub fn render_kv(rows: &[Row]) -> String {
    let mut out = format!("rows={}\n", rows.len());
    for (i, r) in rows.iter().enumerate() {
        out += &r.to_kv(&format!("row.{i}."));
    }
    if rows.len() > 1 {
        out += &mean_row(rows).to_kv("mean.");
    }
    out
}
