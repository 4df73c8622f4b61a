//! Domain types: messages, catalogs, traces and flow specifications.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use crate::error::{Error, Result};

/// Message identifier. `0` is reserved for padding and never names a message.
pub type MsgId = u32;

/// One message type exchanged between two IP blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub id: MsgId,
    pub src: String,
    pub dest: String,
    pub cmd: String,
}

impl Message {
    pub fn new(id: MsgId, src: impl Into<String>, dest: impl Into<String>, cmd: impl Into<String>) -> Self {
        Message {
            id,
            src: src.into(),
            dest: dest.into(),
            cmd: cmd.into(),
        }
    }
}

/// The message catalog with start/end annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    messages: Vec<Message>,
    index: HashMap<MsgId, usize>,
    pub start_ids: BTreeSet<MsgId>,
    pub end_ids: BTreeSet<MsgId>,
}

impl Catalog {
    pub fn new(
        messages: Vec<Message>,
        start_ids: BTreeSet<MsgId>,
        end_ids: BTreeSet<MsgId>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(messages.len());
        let mut triples = HashSet::with_capacity(messages.len());
        for (pos, m) in messages.iter().enumerate() {
            if m.id == 0 {
                return Err(Error::Config("message id 0 is reserved".into()));
            }
            if m.src.is_empty() || m.dest.is_empty() {
                return Err(Error::Config(format!("msg_{} has an empty endpoint", m.id)));
            }
            if index.insert(m.id, pos).is_some() {
                return Err(Error::DuplicateMessage(format!("id {}", m.id)));
            }
            if !triples.insert((&m.src, &m.dest, &m.cmd)) {
                return Err(Error::DuplicateMessage(format!(
                    "({}:{}:{})",
                    m.src, m.dest, m.cmd
                )));
            }
        }
        for &id in start_ids.iter().chain(end_ids.iter()) {
            if !index.contains_key(&id) {
                return Err(Error::UnknownId {
                    id: id as i64,
                    line: 0,
                    position: 0,
                });
            }
        }
        Ok(Catalog {
            messages,
            index,
            start_ids,
            end_ids,
        })
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn get(&self, id: MsgId) -> Option<&Message> {
        self.index.get(&id).map(|&i| &self.messages[i])
    }

    pub fn contains(&self, id: MsgId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = MsgId> + '_ {
        self.messages.iter().map(|m| m.id)
    }

    /// All annotated (start, end) pairs in ascending order.
    pub fn start_end_pairs(&self) -> Vec<(MsgId, MsgId)> {
        let mut pairs = Vec::new();
        for &s in &self.start_ids {
            for &e in &self.end_ids {
                pairs.push((s, e));
            }
        }
        pairs
    }
}

/// A totally ordered sequence of message occurrences; index is discrete time.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct Trace {
    pub events: Vec<MsgId>,
}

impl Trace {
    pub fn new(events: Vec<MsgId>) -> Self {
        Trace { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self, catalog: &Catalog, line: usize) -> Result<()> {
        for (pos, &id) in self.events.iter().enumerate() {
            if !catalog.contains(id) {
                return Err(Error::UnknownId {
                    id: id as i64,
                    line,
                    position: pos + 1,
                });
            }
        }
        Ok(())
    }
}

impl From<Vec<MsgId>> for Trace {
    fn from(events: Vec<MsgId>) -> Self {
        Trace { events }
    }
}

/// A rooted DAG over message ids. Branches are alternative execution paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSpec {
    pub name: String,
    pub start: MsgId,
    pub ends: BTreeSet<MsgId>,
    pub edges: BTreeSet<(MsgId, MsgId)>,
}

impl FlowSpec {
    /// Builds and validates a flow.
    pub fn new(
        name: impl Into<String>,
        start: MsgId,
        ends: impl IntoIterator<Item = MsgId>,
        edges: impl IntoIterator<Item = (MsgId, MsgId)>,
    ) -> Result<Self> {
        let flow = FlowSpec {
            name: name.into(),
            start,
            ends: ends.into_iter().collect(),
            edges: edges.into_iter().collect(),
        };
        flow.validate()?;
        Ok(flow)
    }

    pub fn nodes(&self) -> BTreeSet<MsgId> {
        let mut nodes = BTreeSet::new();
        nodes.insert(self.start);
        nodes.extend(self.ends.iter().copied());
        for &(a, b) in &self.edges {
            nodes.insert(a);
            nodes.insert(b);
        }
        nodes
    }

    pub fn successors(&self) -> BTreeMap<MsgId, Vec<MsgId>> {
        let mut succ: BTreeMap<MsgId, Vec<MsgId>> = BTreeMap::new();
        for &(a, b) in &self.edges {
            succ.entry(a).or_default().push(b);
        }
        succ
    }

    pub fn is_end(&self, id: MsgId) -> bool {
        self.ends.contains(&id)
    }

    /// Checks acyclicity, reachability from start, co-reachability of some end,
    /// and that start has no incoming edge.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidFlow {
            name: self.name.clone(),
            msg,
        };
        if self.start == 0 || self.ends.contains(&0) || self.edges.iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(bad("id 0 is reserved".into()));
        }
        if self.ends.is_empty() {
            return Err(bad("no end message".into()));
        }
        if self.edges.iter().any(|&(a, b)| a == b) {
            return Err(bad("self-loop".into()));
        }
        if self.edges.iter().any(|&(_, b)| b == self.start) {
            return Err(bad(format!("start msg_{} has an incoming edge", self.start)));
        }
        let nodes = self.nodes();
        let succ = self.successors();
        let mut pred: BTreeMap<MsgId, Vec<MsgId>> = BTreeMap::new();
        for &(a, b) in &self.edges {
            pred.entry(b).or_default().push(a);
        }

        // Kahn's algorithm for acyclicity.
        let mut indeg: BTreeMap<MsgId, usize> = nodes.iter().map(|&n| (n, 0)).collect();
        for &(_, b) in &self.edges {
            *indeg.get_mut(&b).unwrap() += 1;
        }
        let mut queue: VecDeque<MsgId> =
            indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut seen = 0;
        while let Some(n) = queue.pop_front() {
            seen += 1;
            for &m in succ.get(&n).into_iter().flatten() {
                let d = indeg.get_mut(&m).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(m);
                }
            }
        }
        if seen != nodes.len() {
            return Err(bad("cycle detected".into()));
        }

        let fwd = bfs(self.start, &succ);
        if let Some(n) = nodes.iter().find(|n| !fwd.contains(n)) {
            return Err(bad(format!("msg_{n} is unreachable from start")));
        }
        let mut bwd = BTreeSet::new();
        for &e in &self.ends {
            bwd.extend(bfs(e, &pred));
        }
        if let Some(n) = nodes.iter().find(|n| !bwd.contains(n)) {
            return Err(bad(format!("msg_{n} reaches no end")));
        }
        Ok(())
    }

    /// Enumerates every start-to-end path. A path stops at the first end node it reaches.
    pub fn paths(&self) -> Vec<Vec<MsgId>> {
        let succ = self.successors();
        let mut out = Vec::new();
        let mut stack = vec![vec![self.start]];
        while let Some(path) = stack.pop() {
            let last = *path.last().unwrap();
            if self.is_end(last) {
                out.push(path);
                continue;
            }
            for &n in succ.get(&last).into_iter().flatten().rev() {
                let mut p = path.clone();
                p.push(n);
                stack.push(p);
            }
        }
        out
    }
}

pub(crate) fn bfs(from: MsgId, adj: &BTreeMap<MsgId, Vec<MsgId>>) -> BTreeSet<MsgId> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    seen.insert(from);
    queue.push_back(from);
    while let Some(n) = queue.pop_front() {
        for &m in adj.get(&n).into_iter().flatten() {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_id_rejected() {
        let msgs = vec![Message::new(1, "A", "B", "x"), Message::new(1, "A", "C", "y")];
        assert!(matches!(
            Catalog::new(msgs, BTreeSet::new(), BTreeSet::new()),
            Err(Error::DuplicateMessage(_))
        ));
    }

    #[test]
    fn duplicate_triple_rejected() {
        let msgs = vec![Message::new(1, "A", "B", "x"), Message::new(2, "A", "B", "x")];
        assert!(matches!(
            Catalog::new(msgs, BTreeSet::new(), BTreeSet::new()),
            Err(Error::DuplicateMessage(_))
        ));
    }

    #[test]
    fn flow_rejects_cycle() {
        let err = FlowSpec::new("c", 1, [4], [(1, 2), (2, 3), (3, 2), (3, 4)]).unwrap_err();
        assert!(matches!(err, Error::InvalidFlow { .. }));
    }

    #[test]
    fn flow_rejects_dead_branch() {
        let err = FlowSpec::new("d", 1, [3], [(1, 2), (2, 3), (1, 5)]).unwrap_err();
        assert!(err.to_string().contains("msg_5 reaches no end"));
    }

    #[test]
    fn flow_rejects_edge_into_start() {
        assert!(FlowSpec::new("s", 1, [3], [(1, 2), (2, 3), (2, 1)]).is_err());
    }

    #[test]
    fn paths_of_diamond() {
        let f = FlowSpec::new("d", 1, [4], [(1, 2), (1, 3), (2, 4), (3, 4)]).unwrap();
        assert_eq!(f.paths(), vec![vec![1, 2, 4], vec![1, 3, 4]]);
    }
}
