//! Citation graph loading, train/validation/test splits and the
//! labeled/unlabeled edge partition used by the graph loss.
//!
//! Input files follow the `.content` / `.cites` layout distributed with
//! Cora and Citeseer:
//!
//! ```text
//! <paper_id> <f feature values...> <class_label>     # .content
//! <cited_paper_id> <citing_paper_id>                 # .cites
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NodeNetError, Result};

/// Rows of a `.content` file before label strings are mapped to indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentTable {
    pub node_ids: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Vec<String>,
}

/// Result of reading a `.cites` file against a known id index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CitesSummary {
    /// Undirected, deduplicated edges with `u < v`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Number of non-empty citation lines in the file.
    pub raw_lines: usize,
    pub self_loops: usize,
    /// Lines dropped because an endpoint id is not in the content file.
    pub unknown_id_lines: usize,
    /// Lines that repeated an already seen unordered pair.
    pub duplicate_lines: usize,
}

/// A node-labelled, undirected citation graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CitationGraph {
    node_ids: Vec<String>,
    features: Array2<f64>,
    labels: Vec<usize>,
    label_names: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl CitationGraph {
    /// Builds a graph, normalizing edges to sorted unique `(min, max)` pairs.
    ///
    /// Fails on self-loops, out-of-range endpoints or labels, mismatched
    /// lengths, or fewer than two classes.
    pub fn new(
        node_ids: Vec<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        label_names: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if features.nrows() != n || labels.len() != n {
            return Err(NodeNetError::Shape(format!(
                "{} node ids, {} feature rows, {} labels",
                n,
                features.nrows(),
                labels.len()
            )));
        }
        if label_names.len() < 2 {
            return Err(NodeNetError::InvalidInput(format!(
                "need at least 2 classes, got {}",
                label_names.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_names.len()) {
            return Err(NodeNetError::InvalidInput(format!(
                "label index {bad} out of range for {} classes",
                label_names.len()
            )));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(NodeNetError::InvalidInput(format!("self-loop on node {u}")));
            }
            if u >= n || v >= n {
                return Err(NodeNetError::InvalidInput(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            set.insert((u.min(v), u.max(v)));
        }
        Ok(Self {
            node_ids,
            features,
            labels,
            label_names,
            edges: set.into_iter().collect(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Same graph with a replaced feature matrix of identical shape.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(NodeNetError::Shape(format!(
                "replacement features {:?} vs {:?}",
                features.dim(),
                self.features.dim()
            )));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Same nodes, different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(
            self.node_ids.clone(),
            self.features.clone(),
            self.labels.clone(),
            self.label_names.clone(),
            edges,
        )
    }

    pub fn id_index(&self) -> HashMap<String, usize> {
        self.node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect()
    }

    /// Writes the graph's nodes back out in `.content` layout.
    pub fn write_content<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, id) in self.node_ids.iter().enumerate() {
            write!(out, "{id}")?;
            for v in self.features.row(i) {
                write!(out, "\t{v}")?;
            }
            writeln!(out, "\t{}", self.label_names[self.labels[i]])?;
        }
        Ok(())
    }

    /// Writes the undirected edges in `.cites` layout, one line per edge.
    pub fn write_cites<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for &(u, v) in &self.edges {
            writeln!(out, "{}\t{}", self.node_ids[u], self.node_ids[v])?;
        }
        Ok(())
    }
}

/// Parses a `.content` stream. Every non-empty line must have the same
/// number of columns: id, features, label.
pub fn parse_content<R: BufRead>(reader: R) -> Result<ContentTable> {
    let mut node_ids = Vec::new();
    let mut labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| NodeNetError::Format {
            line: line_no,
            message: e.to_string(),
        })?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < 3 {
            return Err(NodeNetError::Format {
                line: line_no,
                message: format!(
                    "expected id, features and label, got {} columns",
                    tokens.len()
                ),
            });
        }
        match width {
            None => width = Some(tokens.len()),
            Some(w) if w != tokens.len() => {
                return Err(NodeNetError::Format {
                    line: line_no,
                    message: format!("expected {} columns, got {}", w, tokens.len()),
                })
            }
            Some(_) => {}
        }
        let feature_tokens = &tokens[1..tokens.len() - 1];
        for tok in feature_tokens {
            let v: f64 = tok.parse().map_err(|_| NodeNetError::Parse {
                line: line_no,
                token: (*tok).to_string(),
            })?;
            values.push(v);
        }
        node_ids.push(tokens[0].to_string());
        labels.push(tokens[tokens.len() - 1].to_string());
    }

    let f = width.map(|w| w - 2).unwrap_or(0);
    let features = Array2::from_shape_vec((node_ids.len(), f), values)
        .map_err(|e| NodeNetError::Shape(e.to_string()))?;
    Ok(ContentTable {
        node_ids,
        features,
        labels,
    })
}

/// Parses a `.cites` stream into an undirected, deduplicated edge set.
///
/// Self-loops and lines naming unknown ids are dropped and counted. Only
/// I/O failures are errors.
pub fn parse_cites<R: BufRead>(
    reader: R,
    id_index: &HashMap<String, usize>,
) -> Result<CitesSummary> {
    let mut summary = CitesSummary::default();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| NodeNetError::Format {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let mut tokens = line.split_whitespace();
        let (Some(a), Some(b)) = (tokens.next(), tokens.next()) else {
            if !line.trim().is_empty() {
                return Err(NodeNetError::Format {
                    line: idx + 1,
                    message: "expected two ids".into(),
                });
            }
            continue;
        };
        summary.raw_lines += 1;
        let (Some(&u), Some(&v)) = (id_index.get(a), id_index.get(b)) else {
            summary.unknown_id_lines += 1;
            continue;
        };
        if u == v {
            summary.self_loops += 1;
            continue;
        }
        if !seen.insert((u.min(v), u.max(v))) {
            summary.duplicate_lines += 1;
        }
    }
    summary.edges = seen.into_iter().collect();
    Ok(summary)
}

/// Maps label strings to indices in lexicographic order of the distinct
/// strings. Returns `(indices, sorted_names)`.
pub fn index_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let names: Vec<String> = raw
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let lookup: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let indices = raw.iter().map(|s| lookup[s.as_str()]).collect();
    (indices, names)
}

/// A graph together with the bookkeeping from reading its cites file.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub graph: CitationGraph,
    pub cites: CitesSummary,
}

impl LoadedDataset {
    pub fn stats(&self, name: &str) -> DatasetStats {
        DatasetStats {
            name: name.to_string(),
            nodes: self.graph.num_nodes(),
            edges_raw: self.cites.raw_lines,
            edges_undirected: self.graph.edges().len(),
            features: self.graph.num_features(),
            classes: self.graph.num_classes(),
        }
    }
}

/// Builds a graph from in-memory `.content` and `.cites` streams.
pub fn load_from_readers<C: BufRead, E: BufRead>(content: C, cites: E) -> Result<LoadedDataset> {
    let table = parse_content(content)?;
    let (labels, label_names) = index_labels(&table.labels);
    let index: HashMap<String, usize> = table
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    if index.len() != table.node_ids.len() {
        return Err(NodeNetError::InvalidInput(
            "duplicate node id in content file".into(),
        ));
    }
    let cites = parse_cites(cites, &index)?;
    let graph = CitationGraph::new(
        table.node_ids,
        table.features,
        labels,
        label_names,
        cites.edges.iter().copied(),
    )?;
    Ok(LoadedDataset { graph, cites })
}

/// Loads a dataset from `.content` and `.cites` files on disk.
pub fn load_dataset(content_path: &Path, cites_path: &Path) -> Result<LoadedDataset> {
    let content = File::open(content_path).map_err(|e| NodeNetError::io(content_path, e))?;
    let cites = File::open(cites_path).map_err(|e| NodeNetError::io(cites_path, e))?;
    load_from_readers(BufReader::new(content), BufReader::new(cites)).map_err(|e| match e {
        NodeNetError::Format { line, message } => NodeNetError::Format {
            line,
            message: format!("{}: {message}", content_path.display()),
        },
        other => other,
    })
}

/// One row of the dataset statistics table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub nodes: usize,
    pub edges_raw: usize,
    pub edges_undirected: usize,
    pub features: usize,
    pub classes: usize,
}

/// Renders stats rows as an aligned text table.
pub fn format_stats_table(rows: &[DatasetStats]) -> String {
    let header = [
        "dataset",
        "nodes",
        "edges_raw",
        "edges_undirected",
        "features",
        "classes",
    ];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                r.nodes.to_string(),
                r.edges_raw.to_string(),
                r.edges_undirected.to_string(),
                r.features.to_string(),
                r.classes.to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: Vec<&str>| {
        let line: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    push_row(header.to_vec());
    for row in &body {
        push_row(row.iter().map(String::as_str).collect());
    }
    out
}

/// Disjoint train/validation/test node sets. Train nodes are the labeled
/// set for the loss; every other node counts as unlabeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl SplitMasks {
    /// Checks disjointness, range and per-class train coverage.
    pub fn validate(&self, graph: &CitationGraph) -> Result<()> {
        let n = graph.num_nodes();
        let mut seen = vec![false; n];
        for &i in self
            .train_idx
            .iter()
            .chain(&self.val_idx)
            .chain(&self.test_idx)
        {
            if i >= n {
                return Err(NodeNetError::Split(format!(
                    "node {i} out of range for {n} nodes"
                )));
            }
            if seen[i] {
                return Err(NodeNetError::Split(format!(
                    "node {i} appears in more than one set"
                )));
            }
            seen[i] = true;
        }
        let mut covered = vec![false; graph.num_classes()];
        for &i in &self.train_idx {
            covered[graph.labels()[i]] = true;
        }
        if let Some(k) = covered.iter().position(|c| !c) {
            return Err(NodeNetError::Split(format!(
                "class {k} has no training node"
            )));
        }
        Ok(())
    }

    /// Membership vector: `true` for train (labeled) nodes.
    pub fn labeled_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.train_idx {
            mask[i] = true;
        }
        mask
    }
}

/// How to draw a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Fixed number of train nodes per class, then fixed validation and
    /// test counts drawn from the remaining nodes.
    Planetoid {
        train_per_class: usize,
        val: usize,
        test: usize,
    },
    /// Per-class fractions, rounded to nearest.
    Stratified { train: f64, val: f64, test: f64 },
}

impl SplitStrategy {
    pub const PLANETOID: SplitStrategy = SplitStrategy::Planetoid {
        train_per_class: 20,
        val: 500,
        test: 1000,
    };
}

/// Draws a split deterministically from `(graph, strategy, seed)`.
pub fn make_split(graph: &CitationGraph, strategy: SplitStrategy, seed: u64) -> Result<SplitMasks> {
    let k = graph.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..graph.num_nodes()).collect();
    order.shuffle(&mut rng);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in &order {
        by_class[graph.labels()[i]].push(i);
    }

    let mut masks = match strategy {
        SplitStrategy::Planetoid {
            train_per_class,
            val,
            test,
        } => {
            if train_per_class * k < k {
                return Err(NodeNetError::Split(format!(
                    "{} training nodes cannot cover {k} classes",
                    train_per_class * k
                )));
            }
            let mut train = Vec::with_capacity(train_per_class * k);
            for (class, members) in by_class.iter().enumerate() {
                if members.len() < train_per_class {
                    return Err(NodeNetError::Split(format!(
                        "class {class} has {} nodes, fewer than {train_per_class}",
                        members.len()
                    )));
                }
                train.extend_from_slice(&members[..train_per_class]);
            }
            let in_train: BTreeSet<usize> = train.iter().copied().collect();
            let rest: Vec<usize> = order
                .iter()
                .copied()
                .filter(|i| !in_train.contains(i))
                .collect();
            if val + test > rest.len() {
                return Err(NodeNetError::Split(format!(
                    "{val} validation + {test} test nodes exceed the {} non-training nodes",
                    rest.len()
                )));
            }
            SplitMasks {
                train_idx: train,
                val_idx: rest[..val].to_vec(),
                test_idx: rest[val..val + test].to_vec(),
            }
        }
        SplitStrategy::Stratified { train, val, test } => {
            for (name, frac) in [("train", train), ("val", val), ("test", test)] {
                if !(0.0..=1.0).contains(&frac) {
                    return Err(NodeNetError::Split(format!(
                        "{name} fraction {frac} outside [0, 1]"
                    )));
                }
            }
            if train + val + test > 1.0 + 1e-9 {
                return Err(NodeNetError::Split("fractions sum to more than 1".into()));
            }
            let mut masks = SplitMasks {
                train_idx: Vec::new(),
                val_idx: Vec::new(),
                test_idx: Vec::new(),
            };
            for (class, members) in by_class.iter().enumerate() {
                let n_c = members.len() as f64;
                let n_train = (train * n_c).round() as usize;
                if n_train == 0 {
                    return Err(NodeNetError::Split(format!(
                        "train fraction {train} leaves class {class} without training nodes"
                    )));
                }
                let n_val = ((val * n_c).round() as usize).min(members.len() - n_train);
                let n_test = ((test * n_c).round() as usize).min(members.len() - n_train - n_val);
                masks.train_idx.extend_from_slice(&members[..n_train]);
                masks
                    .val_idx
                    .extend_from_slice(&members[n_train..n_train + n_val]);
                masks
                    .test_idx
                    .extend_from_slice(&members[n_train + n_val..n_train + n_val + n_test]);
            }
            masks
        }
    };
    masks.train_idx.sort_unstable();
    masks.val_idx.sort_unstable();
    masks.test_idx.sort_unstable();
    masks.validate(graph)?;
    Ok(masks)
}

/// An edge with its weight in the graph loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Which bucket an edge falls in, by how many endpoints are labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeBucket {
    LabeledLabeled,
    LabeledUnlabeled,
    UnlabeledUnlabeled,
}

impl fmt::Display for EdgeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeBucket::LabeledLabeled => "LL",
            EdgeBucket::LabeledUnlabeled => "LU",
            EdgeBucket::UnlabeledUnlabeled => "UU",
        })
    }
}

/// Graph edges split into labeled-labeled, labeled-unlabeled and
/// unlabeled-unlabeled buckets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgePartition {
    pub ll: Vec<WeightedEdge>,
    pub lu: Vec<WeightedEdge>,
    pub uu: Vec<WeightedEdge>,
}

impl EdgePartition {
    pub fn bucket(&self, which: EdgeBucket) -> &[WeightedEdge] {
        match which {
            EdgeBucket::LabeledLabeled => &self.ll,
            EdgeBucket::LabeledUnlabeled => &self.lu,
            EdgeBucket::UnlabeledUnlabeled => &self.uu,
        }
    }

    pub fn buckets(&self) -> [(EdgeBucket, &[WeightedEdge]); 3] {
        [
            (EdgeBucket::LabeledLabeled, &self.ll),
            (EdgeBucket::LabeledUnlabeled, &self.lu),
            (EdgeBucket::UnlabeledUnlabeled, &self.uu),
        ]
    }

    pub fn len(&self) -> usize {
        self.ll.len() + self.lu.len() + self.uu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps only one bucket; the others are emptied.
    pub fn only(&self, which: EdgeBucket) -> EdgePartition {
        let mut out = EdgePartition::default();
        let edges = self.bucket(which).to_vec();
        match which {
            EdgeBucket::LabeledLabeled => out.ll = edges,
            EdgeBucket::LabeledUnlabeled => out.lu = edges,
            EdgeBucket::UnlabeledUnlabeled => out.uu = edges,
        }
        out
    }
}

/// Buckets every graph edge by the train membership of its endpoints.
/// All edges get `default_weight`.
pub fn partition_edges(
    graph: &CitationGraph,
    masks: &SplitMasks,
    default_weight: f64,
) -> EdgePartition {
    let labeled = masks.labeled_mask(graph.num_nodes());
    let mut part = EdgePartition::default();
    for &(u, v) in graph.edges() {
        let edge = WeightedEdge {
            u,
            v,
            weight: default_weight,
        };
        match (labeled[u], labeled[v]) {
            (true, true) => part.ll.push(edge),
            (false, false) => part.uu.push(edge),
            _ => part.lu.push(edge),
        }
    }
    part
}
