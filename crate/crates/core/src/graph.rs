//! Cross-sentence dependency graph.
//!
//! Every sentence tree is kept as-is and the roots of consecutive sentences
//! are joined by a `NEXTS` edge, so a whole document is one tree. Paths
//! between entity heads are therefore unique; subtrees hang off path words
//! and never cross a `NEXTS` edge.

use std::collections::{HashSet, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntityMention, Sentence};
use crate::error::{Error, Result};

pub const NEXTS: &str = "NEXTS";

/// A token of a document: 0-based sentence, 1-based token index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub sentence: usize,
    pub token: usize,
}

impl NodeRef {
    pub fn new(sentence: usize, token: usize) -> Self {
        NodeRef { sentence, token }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}:{}", self.sentence, self.token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeLabel {
    Dep(String),
    Nexts,
}

impl EdgeLabel {
    pub fn as_str(&self) -> &str {
        match self {
            EdgeLabel::Dep(l) => l,
            EdgeLabel::Nexts => NEXTS,
        }
    }
}

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    label: EdgeLabel,
}

#[derive(Debug, Clone)]
pub struct DocumentGraph {
    nodes: Vec<NodeRef>,
    surfaces: Vec<String>,
    deprels: Vec<String>,
    offsets: Vec<usize>,
    adjacency: Vec<Vec<Edge>>,
    /// Dependency children per node, ascending token order.
    dependents: Vec<Vec<usize>>,
    roots: Vec<usize>,
    edge_count: usize,
}

impl DocumentGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn nexts_count(&self) -> usize {
        self.roots.len().saturating_sub(1)
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn contains(&self, n: NodeRef) -> bool {
        self.id(n).is_some()
    }

    fn id(&self, n: NodeRef) -> Option<usize> {
        let start = *self.offsets.get(n.sentence)?;
        let end = self.offsets.get(n.sentence + 1).copied().unwrap_or(self.nodes.len());
        let id = start + n.token.checked_sub(1)?;
        (id < end).then_some(id)
    }

    pub fn surface(&self, n: NodeRef) -> Option<&str> {
        self.id(n).map(|i| self.surfaces[i].as_str())
    }

    /// Relation of `n` to its governor (`root` for sentence roots).
    pub fn deprel(&self, n: NodeRef) -> Option<&str> {
        self.id(n).map(|i| self.deprels[i].as_str())
    }

    pub fn sentence_root(&self, sentence: usize) -> Option<NodeRef> {
        self.roots.get(sentence).map(|&i| self.nodes[i])
    }

    /// Undirected neighbours of `n` with edge labels.
    pub fn neighbours(&self, n: NodeRef) -> Vec<(NodeRef, &str)> {
        self.id(n)
            .map(|i| {
                self.adjacency[i]
                    .iter()
                    .map(|e| (self.nodes[e.to], e.label.as_str()))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Graphviz rendering; path nodes are filled and NEXTS edges dashed.
    pub fn to_dot(&self, highlight: Option<&ShortestPath>) -> String {
        let on_path: HashSet<NodeRef> = highlight
            .map(|p| p.nodes.iter().copied().collect())
            .unwrap_or_default();
        let name = |i: usize| {
            let n = self.nodes[i];
            format!("s{}:{}/{}", n.sentence, n.token, self.surfaces[i]).replace('"', "\\\"")
        };
        let mut out = String::from("graph document {\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let style = if on_path.contains(n) { " [style=filled, fillcolor=gray]" } else { "" };
            let _ = writeln!(out, "  \"{}\"{style};", name(i));
        }
        for (i, edges) in self.adjacency.iter().enumerate() {
            for e in edges.iter().filter(|e| e.to > i) {
                let style = match e.label {
                    EdgeLabel::Nexts => ", style=dashed",
                    EdgeLabel::Dep(_) => "",
                };
                let _ = writeln!(
                    out,
                    "  \"{}\" -- \"{}\" [label=\"{}\"{style}];",
                    name(i),
                    name(e.to),
                    e.label.as_str()
                );
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Builds the NEXTS-linked document tree.
pub fn build_document_graph(doc: &Document) -> Result<DocumentGraph> {
    let total = doc.num_tokens();
    let mut g = DocumentGraph {
        nodes: Vec::with_capacity(total),
        surfaces: Vec::with_capacity(total),
        deprels: Vec::with_capacity(total),
        offsets: Vec::with_capacity(doc.sentences.len()),
        adjacency: vec![Vec::new(); total],
        dependents: vec![Vec::new(); total],
        roots: Vec::with_capacity(doc.sentences.len()),
        edge_count: 0,
    };
    for (si, s) in doc.sentences.iter().enumerate() {
        s.check_tree().map_err(|v| {
            Error::Graph(format!(
                "document {} sentence {si}: token {}: {}",
                doc.id, v.token, v.message
            ))
        })?;
        g.offsets.push(g.nodes.len());
        for t in &s.tokens {
            g.nodes.push(NodeRef::new(si, t.index));
            g.surfaces.push(t.surface.clone());
            g.deprels.push(t.deprel.clone());
        }
    }

    let add_edge = |g: &mut DocumentGraph, a: usize, b: usize, label: EdgeLabel| -> Result<()> {
        if g.adjacency[a].iter().any(|e| e.to == b) {
            return Err(Error::Graph(format!(
                "document {}: duplicate edge between {} and {}",
                doc.id, g.nodes[a], g.nodes[b]
            )));
        }
        g.adjacency[a].push(Edge { to: b, label: label.clone() });
        g.adjacency[b].push(Edge { to: a, label });
        g.edge_count += 1;
        Ok(())
    };

    for (si, s) in doc.sentences.iter().enumerate() {
        let base = g.offsets[si];
        for t in &s.tokens {
            let child = base + t.index - 1;
            if t.head == 0 {
                g.roots.push(child);
            } else {
                let head = base + t.head - 1;
                add_edge(&mut g, head, child, EdgeLabel::Dep(t.deprel.clone()))?;
                g.dependents[head].push(child);
            }
        }
    }
    for w in 0..g.roots.len().saturating_sub(1) {
        let (a, b) = (g.roots[w], g.roots[w + 1]);
        add_edge(&mut g, a, b, EdgeLabel::Nexts)?;
    }

    if total > 0 {
        if g.edge_count != total - 1 {
            return Err(Error::Graph(format!(
                "document {}: {} edges over {total} nodes is not a tree",
                doc.id, g.edge_count
            )));
        }
        let mut seen = vec![false; total];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            for e in &g.adjacency[i] {
                if !seen[e.to] {
                    seen[e.to] = true;
                    reached += 1;
                    queue.push_back(e.to);
                }
            }
        }
        if reached != total {
            return Err(Error::Graph(format!("document {}: graph is disconnected", doc.id)));
        }
    }
    Ok(g)
}

/// The token in the span whose head lies outside it; the rightmost such
/// token if several do, or the rightmost span token if none does.
pub fn entity_head(mention: &EntityMention, sentence: &Sentence) -> Result<usize> {
    if mention.first == 0 || mention.first > mention.last || mention.last > sentence.len() {
        return Err(Error::Graph(format!(
            "mention {} has empty or invalid span [{}, {}]",
            mention.id, mention.first, mention.last
        )));
    }
    let span = mention.first..=mention.last;
    let head = span
        .clone()
        .rev()
        .find(|&i| !span.contains(&sentence.tokens[i - 1].head))
        .unwrap_or(mention.last);
    Ok(head)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortestPath {
    pub nodes: Vec<NodeRef>,
    /// `edge_labels[i]` joins `nodes[i]` and `nodes[i + 1]`.
    pub edge_labels: Vec<String>,
}

impl ShortestPath {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nexts_crossings(&self) -> usize {
        self.edge_labels.iter().filter(|l| *l == NEXTS).count()
    }

    pub fn reversed(&self) -> ShortestPath {
        ShortestPath {
            nodes: self.nodes.iter().rev().copied().collect(),
            edge_labels: self.edge_labels.iter().rev().cloned().collect(),
        }
    }
}

/// Breadth-first search for the unique tree path from `a` to `b`.
pub fn shortest_path(graph: &DocumentGraph, a: NodeRef, b: NodeRef) -> Result<ShortestPath> {
    let ia = graph
        .id(a)
        .ok_or_else(|| Error::Graph(format!("node {a} is not in the graph")))?;
    let ib = graph
        .id(b)
        .ok_or_else(|| Error::Graph(format!("node {b} is not in the graph")))?;

    let mut parent: Vec<Option<(usize, usize)>> = vec![None; graph.node_count()];
    let mut seen = vec![false; graph.node_count()];
    seen[ia] = true;
    let mut queue = VecDeque::from([ia]);
    while let Some(i) = queue.pop_front() {
        if i == ib {
            break;
        }
        let from = parent[i].map(|(p, _)| p);
        for (k, e) in graph.adjacency[i].iter().enumerate() {
            if Some(e.to) == from {
                continue;
            }
            if seen[e.to] {
                return Err(Error::Graph(format!(
                    "path from {a} to {b} is not unique: graph has a cycle at {}",
                    graph.nodes[e.to]
                )));
            }
            seen[e.to] = true;
            parent[e.to] = Some((i, k));
            queue.push_back(e.to);
        }
    }
    if !seen[ib] {
        return Err(Error::Graph(format!("{b} is unreachable from {a}")));
    }

    let mut nodes = vec![graph.nodes[ib]];
    let mut labels = Vec::new();
    let mut cur = ib;
    while let Some((p, k)) = parent[cur] {
        labels.push(graph.adjacency[p][k].label.as_str().to_string());
        nodes.push(graph.nodes[p]);
        cur = p;
    }
    nodes.reverse();
    labels.reverse();
    Ok(ShortestPath {
        nodes,
        edge_labels: labels,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtree {
    pub root: NodeRef,
    /// `(relation of child to root, child subtree)`, ascending token order.
    pub children: Vec<(String, Subtree)>,
}

impl Subtree {
    pub fn leaf(root: NodeRef) -> Self {
        Subtree {
            root,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Number of strict descendants.
    pub fn size(&self) -> usize {
        self.children.iter().map(|(_, c)| 1 + c.size()).sum()
    }

    pub fn depth(&self) -> usize {
        self.children.iter().map(|(_, c)| 1 + c.depth()).max().unwrap_or(0)
    }

    /// Strict descendants in pre-order.
    pub fn descendants(&self) -> Vec<NodeRef> {
        let mut out = Vec::new();
        for (_, c) in &self.children {
            out.push(c.root);
            out.extend(c.descendants());
        }
        out
    }
}

/// Dependency subtree below `word`, skipping `excluded` nodes. `max_depth`
/// of `None` keeps the full subtree.
pub fn extract_subtree(
    graph: &DocumentGraph,
    word: NodeRef,
    excluded: &HashSet<NodeRef>,
    max_depth: Option<usize>,
) -> Subtree {
    let Some(id) = graph.id(word) else {
        return Subtree::leaf(word);
    };
    collect_subtree(graph, id, excluded, max_depth)
}

fn collect_subtree(graph: &DocumentGraph, id: usize, excluded: &HashSet<NodeRef>, depth: Option<usize>) -> Subtree {
    let root = graph.nodes[id];
    if depth == Some(0) {
        return Subtree::leaf(root);
    }
    let children = graph.dependents[id]
        .iter()
        .filter(|&&c| !excluded.contains(&graph.nodes[c]))
        .map(|&c| {
            (
                graph.deprels[c].clone(),
                collect_subtree(graph, c, excluded, depth.map(|d| d - 1)),
            )
        })
        .collect();
    Subtree { root, children }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedPath {
    pub path: ShortestPath,
    pub subtrees: Vec<Subtree>,
}

/// Attaches to every path word its off-path dependency subtree.
pub fn build_adp(graph: &DocumentGraph, path: &ShortestPath, max_depth: Option<usize>) -> AugmentedPath {
    let excluded: HashSet<NodeRef> = path.nodes.iter().copied().collect();
    let subtrees = path
        .nodes
        .iter()
        .map(|&n| extract_subtree(graph, n, &excluded, max_depth))
        .collect();
    AugmentedPath {
        path: path.clone(),
        subtrees,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marker {
    E1Start,
    E1End,
    E2Start,
    E2End,
}

impl Marker {
    pub const ALL: [Marker; 4] = [Marker::E1Start, Marker::E1End, Marker::E2Start, Marker::E2End];

    pub fn as_str(self) -> &'static str {
        match self {
            Marker::E1Start => "<e1>",
            Marker::E1End => "</e1>",
            Marker::E2Start => "<e2>",
            Marker::E2End => "</e2>",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenUnit {
    Marker(Marker),
    Word(NodeRef),
}

/// Wraps the first node in `<e1> … </e1>` and the last in `<e2> … </e2>`.
pub fn path_token_sequence(nodes: &[NodeRef]) -> Vec<TokenUnit> {
    let n = nodes.len();
    let mut out = Vec::with_capacity(n + 4);
    for (i, &node) in nodes.iter().enumerate() {
        if i == 0 {
            out.push(TokenUnit::Marker(Marker::E1Start));
        }
        if i == n - 1 {
            out.push(TokenUnit::Marker(Marker::E2Start));
        }
        out.push(TokenUnit::Word(node));
        if i == 0 {
            out.push(TokenUnit::Marker(Marker::E1End));
        }
        if i == n - 1 {
            out.push(TokenUnit::Marker(Marker::E2End));
        }
    }
    out
}

/// Surface tokens in document order from `a` to `b` inclusive, reversed when
/// `b` precedes `a`.
pub fn linear_sequence(doc: &Document, a: NodeRef, b: NodeRef) -> Vec<NodeRef> {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut out = Vec::new();
    for s in lo.sentence..=hi.sentence {
        let Some(sentence) = doc.sentences.get(s) else { break };
        let from = if s == lo.sentence { lo.token } else { 1 };
        let to = if s == hi.sentence { hi.token } else { sentence.len() };
        out.extend((from..=to).map(|t| NodeRef::new(s, t)));
    }
    if b < a {
        out.reverse();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::{sentence, tok};
    use crate::corpus::{Document, EntityMention};

    fn doc_of(sentences: Vec<Sentence>) -> Document {
        Document::new("d", None, sentences, vec![], vec![]).unwrap()
    }

    #[test]
    fn nexts_edges_join_consecutive_roots() {
        let one = build_document_graph(&doc_of(vec![sentence(&[0, 1])])).unwrap();
        assert_eq!(one.nexts_count(), 0);
        assert_eq!(one.edge_count(), 1);

        let d = doc_of(vec![sentence(&[2, 0]), sentence(&[0, 1, 1]), sentence(&[3, 3, 0])]);
        let g = build_document_graph(&d).unwrap();
        let nexts: usize = g
            .nodes()
            .iter()
            .map(|&n| g.neighbours(n).iter().filter(|(_, l)| *l == NEXTS).count())
            .sum::<usize>()
            / 2;
        assert_eq!(nexts, 2);
        assert_eq!(g.edge_count(), g.node_count() - 1);
        let r0 = g.sentence_root(0).unwrap();
        assert!(g.neighbours(r0).contains(&(NodeRef::new(1, 1), NEXTS)));
        let r1 = g.sentence_root(1).unwrap();
        assert!(g.neighbours(r1).contains(&(NodeRef::new(2, 3), NEXTS)));
    }

    #[test]
    fn malformed_sentence_names_it() {
        let mut d = doc_of(vec![sentence(&[0, 1]), sentence(&[0, 1])]);
        d.sentences[1].tokens[1].head = 2;
        let err = build_document_graph(&d).unwrap_err().to_string();
        assert!(err.contains("sentence 1"), "{err}");
    }

    #[test]
    fn entity_heads() {
        // "Paul Allen Group": Group governs Paul and Allen, Group's head is outside.
        let s = Sentence {
            doc_index: 0,
            tokens: vec![
                tok(1, "Paul", 3, "compound"),
                tok(2, "Allen", 3, "compound"),
                tok(3, "Group", 4, "nsubj"),
                tok(4, "based", 0, "root"),
            ],
        };
        let m = |first, last| EntityMention::new("m", 0, first, last, "Org");
        assert_eq!(entity_head(&m(2, 2), &s).unwrap(), 2);
        assert_eq!(entity_head(&m(1, 3), &s).unwrap(), 3);
        // Tokens 1 and 2 both point at 3, outside [1, 2]: rightmost wins.
        assert_eq!(entity_head(&m(1, 2), &s).unwrap(), 2);
        assert!(entity_head(&m(3, 2), &s).is_err());
        // Oracle scan: heads outside the span, rightmost.
        for (a, b) in [(1, 4), (2, 3), (1, 1), (3, 4)] {
            let oracle = (a..=b).filter(|&i| !(a..=b).contains(&s.tokens[i - 1].head)).max().unwrap_or(b);
            assert_eq!(entity_head(&m(a, b), &s).unwrap(), oracle);
        }
    }

    #[test]
    fn path_on_chain_and_trivial_path() {
        // a <- b <- c as a chain: 1 governed by 2, 2 by 3.
        let g = build_document_graph(&doc_of(vec![sentence(&[2, 3, 0])])).unwrap();
        let a = NodeRef::new(0, 1);
        let c = NodeRef::new(0, 3);
        let p = shortest_path(&g, a, c).unwrap();
        assert_eq!(p.nodes, vec![a, NodeRef::new(0, 2), c]);
        assert_eq!(p.edge_labels, vec!["dep", "dep"]);
        let same = shortest_path(&g, a, a).unwrap();
        assert_eq!(same.nodes, vec![a]);
        assert!(same.edge_labels.is_empty());
        assert!(shortest_path(&g, a, NodeRef::new(3, 1)).is_err());
    }

    #[test]
    fn subtree_extraction() {
        // 1 root; 2 <- 1; 3 <- 2; 4 <- 3; 5 <- 1
        let g = build_document_graph(&doc_of(vec![sentence(&[0, 1, 2, 3, 1])])).unwrap();
        let none = HashSet::new();
        let leaf = extract_subtree(&g, NodeRef::new(0, 4), &none, None);
        assert!(leaf.is_leaf());
        let full = extract_subtree(&g, NodeRef::new(0, 2), &none, None);
        assert_eq!(full.depth(), 2);
        let cut = extract_subtree(&g, NodeRef::new(0, 2), &none, Some(1));
        assert_eq!(cut.depth(), 1);
        assert_eq!(cut.size(), 1);

        // Path [1, 2]: off-path dependents are 5 (of 1) and 3 (of 2).
        let path = shortest_path(&g, NodeRef::new(0, 1), NodeRef::new(0, 2)).unwrap();
        let adp = build_adp(&g, &path, Some(1));
        let sizes: Vec<usize> = adp.subtrees.iter().map(Subtree::size).collect();
        assert_eq!(sizes, vec![1, 1]);
        assert_eq!(adp.subtrees[1].children[0].1.root, NodeRef::new(0, 3));
    }

    #[test]
    fn subtrees_stay_within_sentence() {
        let g = build_document_graph(&doc_of(vec![sentence(&[0, 1]), sentence(&[0, 1])])).unwrap();
        let t = extract_subtree(&g, NodeRef::new(0, 1), &HashSet::new(), None);
        assert_eq!(t.descendants(), vec![NodeRef::new(0, 2)]);
    }

    #[test]
    fn marker_wrapping() {
        let [a, b, c] = [NodeRef::new(0, 1), NodeRef::new(0, 2), NodeRef::new(0, 3)];
        let seq = path_token_sequence(&[a, b, c]);
        let m = TokenUnit::Marker;
        let w = TokenUnit::Word;
        assert_eq!(
            seq,
            vec![m(Marker::E1Start), w(a), m(Marker::E1End), w(b), m(Marker::E2Start), w(c), m(Marker::E2End)]
        );
        assert_eq!(path_token_sequence(&[a, b]).len(), 6);
    }

    #[test]
    fn linear_sequence_crosses_sentences() {
        let d = doc_of(vec![sentence(&[0, 1, 1]), sentence(&[0, 1])]);
        let seq = linear_sequence(&d, NodeRef::new(0, 2), NodeRef::new(1, 1));
        assert_eq!(seq, vec![NodeRef::new(0, 2), NodeRef::new(0, 3), NodeRef::new(1, 1)]);
        let back = linear_sequence(&d, NodeRef::new(1, 1), NodeRef::new(0, 2));
        assert_eq!(back.len(), 3);
        assert_eq!(back[0], NodeRef::new(1, 1));
    }

    #[test]
    fn dot_marks_nexts_dashed() {
        let g = build_document_graph(&doc_of(vec![sentence(&[0]), sentence(&[0])])).unwrap();
        let dot = g.to_dot(None);
        assert!(dot.contains("\"s0:1/t1\" -- \"s1:1/t1\" [label=\"NEXTS\", style=dashed]"), "{dot}");
    }
}
