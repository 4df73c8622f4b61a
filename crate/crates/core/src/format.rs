//! Text formats for catalogs (`.cat`), traces (`.trc`) and flows (`.flow`).
//!
//! ```text
//! # id,src,dest,cmd
//! start: 1 2
//! end: 4 6
//! 1,CPU_0,Cache,rd_req
//! ```
//!
//! Trace files hold one trace per line as space-separated decimal ids. Flow files
//! use `flow <name>`, `start <id>`, `end <id>` and `edge <id> <id>` lines.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Catalog, FlowSpec, Message, MsgId, Trace};

pub const CATALOG_HEADER: &str = "# id,src,dest,cmd";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_id(tok: &str, line: usize) -> Result<MsgId> {
    match tok.parse::<i64>() {
        Ok(v) if v > 0 && v <= MsgId::MAX as i64 => Ok(v as MsgId),
        Ok(v) => Err(Error::parse(line, format!("id {v} out of range"))),
        Err(_) => Err(Error::parse(line, format!("`{tok}` is not an id"))),
    }
}

fn parse_id_list(body: &str, line: usize) -> Result<Vec<MsgId>> {
    body.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| parse_id(t, line))
        .collect()
}

pub fn parse_catalog_str(text: &str) -> Result<Catalog> {
    let mut messages = Vec::new();
    let mut starts = BTreeSet::new();
    let mut ends = BTreeSet::new();
    let mut directive_lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("start:") {
            for id in parse_id_list(rest, lineno)? {
                starts.insert(id);
                directive_lines.push((id, lineno));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("end:") {
            for id in parse_id_list(rest, lineno)? {
                ends.insert(id);
                directive_lines.push((id, lineno));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(lineno, format!("expected 4 fields, got {}", fields.len())));
        }
        let id = parse_id(fields[0], lineno)?;
        if fields[1].is_empty() || fields[2].is_empty() {
            return Err(Error::parse(lineno, "empty src or dest"));
        }
        if messages.iter().any(|m: &Message| m.id == id) {
            return Err(Error::DuplicateMessage(format!("id {id} (line {lineno})")));
        }
        messages.push(Message::new(id, fields[1], fields[2], fields[3]));
    }
    for (id, lineno) in directive_lines {
        if !messages.iter().any(|m| m.id == id) {
            return Err(Error::UnknownId {
                id: id as i64,
                line: lineno,
                position: 0,
            });
        }
    }
    Catalog::new(messages, starts, ends)
}

pub fn parse_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    parse_catalog_str(&read(path.as_ref())?)
}

fn join_ids<'a>(ids: impl IntoIterator<Item = &'a MsgId>) -> String {
    ids.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn catalog_to_string(catalog: &Catalog) -> String {
    let mut out = String::new();
    out.push_str(CATALOG_HEADER);
    out.push('\n');
    if !catalog.start_ids.is_empty() {
        let _ = writeln!(out, "start: {}", join_ids(&catalog.start_ids));
    }
    if !catalog.end_ids.is_empty() {
        let _ = writeln!(out, "end: {}", join_ids(&catalog.end_ids));
    }
    for m in catalog.messages() {
        let _ = writeln!(out, "{},{},{},{}", m.id, m.src, m.dest, m.cmd);
    }
    out
}

pub fn write_catalog(path: impl AsRef<Path>, catalog: &Catalog) -> Result<()> {
    write(path.as_ref(), &catalog_to_string(catalog))
}

/// Parsed trace file; empty lines are skipped and counted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceSet {
    pub traces: Vec<Trace>,
    pub skipped_empty: usize,
}

pub fn parse_traces_str(text: &str, catalog: &Catalog) -> Result<TraceSet> {
    let mut set = TraceSet::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            set.skipped_empty += 1;
            continue;
        }
        let mut events = Vec::new();
        for (pos, tok) in line.split_whitespace().enumerate() {
            let v: i64 = tok
                .parse()
                .map_err(|_| Error::parse(lineno, format!("`{tok}` is not an id")))?;
            if v <= 0 || v > MsgId::MAX as i64 || !catalog.contains(v as MsgId) {
                return Err(Error::UnknownId {
                    id: v,
                    line: lineno,
                    position: pos + 1,
                });
            }
            events.push(v as MsgId);
        }
        set.traces.push(Trace::new(events));
    }
    if set.skipped_empty > 0 {
        log::warn!("skipped {} empty trace line(s)", set.skipped_empty);
    }
    Ok(set)
}

pub fn parse_traces(path: impl AsRef<Path>, catalog: &Catalog) -> Result<TraceSet> {
    parse_traces_str(&read(path.as_ref())?, catalog)
}

pub fn traces_to_string(traces: &[Trace]) -> String {
    let mut out = String::new();
    for t in traces {
        out.push_str(&join_ids(&t.events));
        out.push('\n');
    }
    out
}

pub fn write_traces(path: impl AsRef<Path>, traces: &[Trace]) -> Result<()> {
    write(path.as_ref(), &traces_to_string(traces))
}

/// Parses one or more flows from a `.flow` document. Each `flow <name>` line opens a new flow.
pub fn parse_flows_str(text: &str) -> Result<Vec<FlowSpec>> {
    struct Partial {
        name: String,
        line: usize,
        start: Option<MsgId>,
        ends: BTreeSet<MsgId>,
        edges: BTreeSet<(MsgId, MsgId)>,
    }
    fn finish(p: Partial) -> Result<FlowSpec> {
        let start = p
            .start
            .ok_or_else(|| Error::parse(p.line, format!("flow `{}` has no start", p.name)))?;
        FlowSpec::new(p.name, start, p.ends, p.edges)
    }

    let mut flows = Vec::new();
    let mut cur: Option<Partial> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let kw = toks.next().unwrap();
        let args: Vec<&str> = toks.collect();
        if kw == "flow" {
            if args.len() != 1 {
                return Err(Error::parse(lineno, "expected `flow <name>`"));
            }
            if let Some(p) = cur.take() {
                flows.push(finish(p)?);
            }
            cur = Some(Partial {
                name: args[0].to_string(),
                line: lineno,
                start: None,
                ends: BTreeSet::new(),
                edges: BTreeSet::new(),
            });
            continue;
        }
        let p = cur
            .as_mut()
            .ok_or_else(|| Error::parse(lineno, format!("`{kw}` before any `flow` line")))?;
        match (kw, args.as_slice()) {
            ("start", [id]) => {
                if p.start.is_some() {
                    return Err(Error::parse(lineno, "duplicate start"));
                }
                p.start = Some(parse_id(id, lineno)?);
            }
            ("end", [id]) => {
                p.ends.insert(parse_id(id, lineno)?);
            }
            ("edge", [a, b]) => {
                p.edges.insert((parse_id(a, lineno)?, parse_id(b, lineno)?));
            }
            _ => return Err(Error::parse(lineno, format!("unrecognized line `{line}`"))),
        }
    }
    if let Some(p) = cur.take() {
        flows.push(finish(p)?);
    }
    Ok(flows)
}

pub fn parse_flows(path: impl AsRef<Path>) -> Result<Vec<FlowSpec>> {
    parse_flows_str(&read(path.as_ref())?)
}

pub fn flow_to_string(flow: &FlowSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "flow {}", flow.name);
    let _ = writeln!(out, "start {}", flow.start);
    for e in &flow.ends {
        let _ = writeln!(out, "end {e}");
    }
    for (a, b) in &flow.edges {
        let _ = writeln!(out, "edge {a} {b}");
    }
    out
}

pub fn flows_to_string(flows: &[FlowSpec]) -> String {
    flows.iter().map(flow_to_string).collect::<Vec<_>>().join("\n")
}

pub fn write_flows(path: impl AsRef<Path>, flows: &[FlowSpec]) -> Result<()> {
    write(path.as_ref(), &flows_to_string(flows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn six() -> Catalog {
        let text = "# id,src,dest,cmd\nstart: 1\nend: 6\n\
                    1,CPU_0,Cache,rd_req\n2,B,C,x\n3,C,D,x\n4,D,E,x\n5,E,F,x\n6,F,G,x\n";
        parse_catalog_str(text).unwrap()
    }

    #[test]
    fn catalog_line_parses_into_triple() {
        let c = six();
        assert_eq!(c.get(1), Some(&Message::new(1, "CPU_0", "Cache", "rd_req")));
        assert_eq!(c.start_ids, BTreeSet::from([1]));
    }

    #[test]
    fn header_only_catalog_is_empty() {
        let c = parse_catalog_str("# id,src,dest,cmd\n").unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn duplicate_catalog_id() {
        let err = parse_catalog_str("# id,src,dest,cmd\n1,A,B,x\n1,A,C,y\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateMessage(_)));
    }

    #[test]
    fn malformed_catalog_line_reports_line() {
        let err = parse_catalog_str("# id,src,dest,cmd\n1,A,B,x\n2,A\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn start_directive_must_name_known_id() {
        let err = parse_catalog_str("# id,src,dest,cmd\nstart: 9\n1,A,B,x\n").unwrap_err();
        assert!(matches!(err, Error::UnknownId { id: 9, .. }));
    }

    #[test]
    fn trace_line_length() {
        let set = parse_traces_str("1 3 5 1 5 6 2 3 6 2 4 4\n", &six()).unwrap();
        assert_eq!(set.traces.len(), 1);
        assert_eq!(set.traces[0].len(), 12);
    }

    #[test]
    fn empty_trace_line_is_skipped() {
        let set = parse_traces_str("\n1 2\n\n", &six()).unwrap();
        assert_eq!(set.traces.len(), 1);
        assert_eq!(set.skipped_empty, 2);
    }

    #[test]
    fn unknown_trace_id_position() {
        let err = parse_traces_str("1 99\n", &six()).unwrap_err();
        assert!(matches!(err, Error::UnknownId { id: 99, line: 1, position: 2 }));
    }

    #[test]
    fn flow_file_with_comments() {
        let text = "# two flows\nflow a\nstart 1\nend 3 # tail\nedge 1 2\nedge 2 3\n\nflow b\nstart 4\nend 5\nedge 4 5\n";
        let flows = parse_flows_str(text).unwrap();
        assert_eq!(flows.len(), 2);
        assert_eq!(flows[0].edges, BTreeSet::from([(1, 2), (2, 3)]));
        assert_eq!(parse_flows_str(&flows_to_string(&flows)).unwrap(), flows);
    }

    #[test]
    fn flow_file_cycle_is_typed_error() {
        let err = parse_flows_str("flow a\nstart 1\nend 3\nedge 1 2\nedge 2 1\nedge 2 3\n").unwrap_err();
        assert!(matches!(err, Error::InvalidFlow { .. }));
    }
}
