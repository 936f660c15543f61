//! Input files for `ingest` and `cycle`: triples (JSON lines, see
//! `ingest_triples`) plus optional per-entity metadata, also JSON lines:
//!
//! `{"entity": "pump-7", "kind": "equipment", "metadata": [..d_m reals..], "attributes": {"health": 0.9}}`
//!
//! Only `entity` is required. Entities without a `kind` become documents.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use kgdrive_core::fusion::{ingest_triples, TripleRecord};
use kgdrive_core::graph::{EntityNode, KnowledgeGraph, NodeEmbedder, NodeId, NodeKind};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataRecord {
    pub entity: String,
    #[serde(default)]
    pub kind: Option<NodeKind>,
    #[serde(default)]
    pub metadata: Option<Vec<f64>>,
    #[serde(default)]
    pub attributes: BTreeMap<String, f64>,
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// All triples of a file, or every bad line with its number. Blank lines
/// are allowed.
pub fn read_triples(path: &Path) -> Result<Vec<TripleRecord>, CliError> {
    let report = ingest_triples(open(path)?).map_err(|e| CliError::io(path, e))?;
    let bad: Vec<String> = report
        .skipped
        .iter()
        .filter(|s| s.reason != "blank line")
        .map(|s| format!("line {}: {}", s.line, s.reason))
        .collect();
    if !bad.is_empty() {
        return Err(CliError::Parse {
            path: path.to_owned(),
            lines: bad,
        });
    }
    Ok(report.records)
}

/// Metadata records, each vector checked against the configured width.
pub fn read_metadata(path: &Path, d_m: usize) -> Result<Vec<MetadataRecord>, CliError> {
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetadataRecord>(&line) {
            Ok(r) if r.entity.trim().is_empty() => bad.push(format!("line {}: empty entity", i + 1)),
            Ok(r) => out.push(r),
            Err(e) => bad.push(format!("line {}: {e}", i + 1)),
        }
    }
    if !bad.is_empty() {
        return Err(CliError::Parse {
            path: path.to_owned(),
            lines: bad,
        });
    }
    if let Some(r) = out.iter().find(|r| r.metadata.as_ref().is_some_and(|m| m.len() != d_m)) {
        return Err(CliError::Invalid(format!(
            "metadata for `{}` has {} entries, expected {d_m}",
            r.entity,
            r.metadata.as_ref().map_or(0, Vec::len)
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub triples: usize,
    pub entities: usize,
    pub rule_edges: usize,
    /// Triples whose object is not an entity; kept out of the graph.
    pub literal_objects: usize,
    /// Metadata entries naming no entity.
    pub unused_metadata: usize,
}

/// Candidate entities: every distinct subject, plus objects that have a
/// metadata entry, in first-appearance order. Ids already present in
/// `existing` are skipped.
pub fn candidate_entities(
    triples: &[TripleRecord],
    metadata: &[MetadataRecord],
    existing: Option<&KnowledgeGraph>,
) -> Result<(Vec<EntityNode>, usize), CliError> {
    let mut meta: HashMap<&str, &MetadataRecord> = HashMap::new();
    for m in metadata {
        if meta.insert(m.entity.as_str(), m).is_some() {
            return Err(CliError::Invalid(format!("duplicate metadata for `{}`", m.entity)));
        }
    }
    let mut seen: Vec<&str> = Vec::new();
    for t in triples {
        for (name, always) in [(t.subject.as_str(), true), (t.object.as_str(), false)] {
            if (always || meta.contains_key(name)) && !seen.contains(&name) {
                seen.push(name);
            }
        }
    }
    let unused = meta.keys().filter(|k| !seen.contains(k)).count();
    let nodes = seen
        .into_iter()
        .filter(|name| existing.is_none_or(|g| g.node(&NodeId::new(*name)).is_none()))
        .map(|name| {
            let m = meta.get(name);
            let mut node = EntityNode::new(name, m.and_then(|m| m.kind).unwrap_or(NodeKind::Document));
            if let Some(m) = m {
                node.attributes = m.attributes.clone();
                node.metadata_embedding = m.metadata.clone();
            }
            node
        })
        .collect();
    Ok((nodes, unused))
}

/// Adds a rule edge per triple whose endpoints are both in the graph.
/// Returns (edges added or reinforced, literal objects).
pub fn link_triples(graph: &mut KnowledgeGraph, triples: &[TripleRecord]) -> Result<(usize, usize), CliError> {
    let (mut edges, mut literals) = (0, 0);
    for t in triples {
        let (s, o) = (NodeId::new(t.subject.as_str()), NodeId::new(t.object.as_str()));
        if graph.node(&s).is_some() && graph.node(&o).is_some() {
            graph.add_rule_edge(&s, &o, t.relation.as_str())?;
            edges += 1;
        } else {
            literals += 1;
        }
    }
    Ok((edges, literals))
}

/// A fresh graph from triples and metadata, every node embedded.
pub fn build_graph(
    graph: &mut KnowledgeGraph,
    triples: &[TripleRecord],
    metadata: &[MetadataRecord],
    embedder: &mut dyn NodeEmbedder,
) -> Result<IngestSummary, CliError> {
    let (nodes, unused) = candidate_entities(triples, metadata, None)?;
    let entities = nodes.len();
    for mut node in nodes {
        node.semantic_vector = Some(embedder.embed_node(&node)?);
        graph.add_entity(node)?;
    }
    let (rule_edges, literal_objects) = link_triples(graph, triples)?;
    Ok(IngestSummary {
        triples: triples.len(),
        entities,
        rule_edges,
        literal_objects,
        unused_metadata: unused,
    })
}
