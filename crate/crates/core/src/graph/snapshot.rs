//! Line-delimited snapshot format. The first line is a header carrying the
//! format version, embedding widths, epoch and record counts; then one JSON
//! record per node (index order) and one per edge. Reals are written with
//! 17 significant digits so a save/load round trip is bit-exact.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DynamicEdge, EntityNode, GraphDims, KnowledgeGraph, RuleEdge};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    d_m: usize,
    d_s: usize,
    epoch: u64,
    nodes: usize,
    rule_edges: usize,
    dynamic_edges: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Node(EntityNode),
    Edge(EdgeRecord),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum EdgeRecord {
    Rule(RuleEdge),
    Dynamic(DynamicEdge),
}

impl KnowledgeGraph {
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<(), SnapshotError> {
        let header = Header {
            format_version: SNAPSHOT_FORMAT_VERSION,
            d_m: self.dims.d_m,
            d_s: self.dims.d_s,
            epoch: self.epoch,
            nodes: self.nodes.len(),
            rule_edges: self.rule_edges.len(),
            dynamic_edges: self.dynamic_edges.len(),
        };
        out.write_all(line(&header)?.as_bytes())?;
        for n in self.nodes.values() {
            out.write_all(line(&Record::Node(n.clone()))?.as_bytes())?;
        }
        for e in self.rule_edges.values() {
            out.write_all(line(&Record::Edge(EdgeRecord::Rule(e.clone())))?.as_bytes())?;
        }
        for e in self.dynamic_edges.values() {
            out.write_all(line(&Record::Edge(EdgeRecord::Dynamic(e.clone())))?.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_snapshot_string(&self) -> Result<String, SnapshotError> {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf)?;
        String::from_utf8(buf).map_err(|e| SnapshotError::Corrupt(e.to_string()))
    }

    /// SHA-256 of the snapshot encoding, hex.
    pub fn snapshot_hash(&self) -> Result<String, SnapshotError> {
        Ok(hex::encode(Sha256::digest(self.to_snapshot_string()?.as_bytes())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SnapshotError> {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SnapshotError> {
        Self::read_snapshot(fs::File::open(path)?)
    }

    pub fn read_snapshot<R: Read>(input: R) -> Result<Self, SnapshotError> {
        let mut lines = BufReader::new(input).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| SnapshotError::Corrupt("missing header".into()))??;
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| SnapshotError::Corrupt(format!("header: {e}")))?;
        if header.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(SnapshotError::VersionMismatch {
                expected: SNAPSHOT_FORMAT_VERSION,
                found: header.format_version,
            });
        }
        let mut g = KnowledgeGraph::new(GraphDims {
            d_m: header.d_m,
            d_s: header.d_s,
        });
        g.epoch = header.epoch;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line)
                .map_err(|e| SnapshotError::Corrupt(format!("line {}: {e}", lineno + 2)))?;
            let res = match record {
                Record::Node(n) => g.restore_entity(n),
                Record::Edge(EdgeRecord::Rule(e)) => {
                    let (s, d, w) = (e.src.clone(), e.dst.clone(), e.weight);
                    g.add_weighted_rule_edge(&s, &d, e.relation, w).map(|_| ())
                }
                Record::Edge(EdgeRecord::Dynamic(e)) => g.insert_dynamic_edge(e),
            };
            res.map_err(|e| SnapshotError::Corrupt(format!("line {}: {e}", lineno + 2)))?;
        }
        let counts = (g.nodes.len(), g.rule_edges.len(), g.dynamic_edges.len());
        let expected = (header.nodes, header.rule_edges, header.dynamic_edges);
        if counts != expected {
            return Err(SnapshotError::Corrupt(format!(
                "record counts {counts:?} do not match header {expected:?} (truncated?)"
            )));
        }
        Ok(g)
    }
}

fn line<T: Serialize>(value: &T) -> Result<String, SnapshotError> {
    let mut s = serde_json::to_string(value).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
