//! Unrooted binary trees with branch lengths.
//!
//! Leaves `0..n` carry taxon labels in sorted order; internal nodes follow.
//! Edges are stored once with both endpoints, so topology moves only
//! rewire endpoints and branch lengths travel with their edges.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{PhyloError, Result};
use crate::scalar::Real;
use crate::seqio::validate_label;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge<T> {
    pub a: usize,
    pub b: usize,
    pub length: T,
}

impl<T> Edge<T> {
    pub fn other(&self, node: usize) -> usize {
        if self.a == node {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhyloTree<T> {
    taxa: Vec<String>,
    /// Edge ids incident to each node.
    adjacency: Vec<Vec<usize>>,
    edges: Vec<Edge<T>>,
}

/// Bipartition of the taxa induced by an edge. Stored as the side holding
/// taxon 0 (the lexicographically smallest label).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Split {
    bits: Vec<u64>,
    ntax: usize,
}

impl Split {
    pub(crate) fn from_side(side: &[bool]) -> Self {
        let ntax = side.len();
        let flip = !side[0];
        let mut bits = vec![0u64; ntax.div_ceil(64)];
        for (i, &s) in side.iter().enumerate() {
            if s ^ flip {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        Split { bits, ntax }
    }

    pub fn contains(&self, taxon: usize) -> bool {
        self.bits[taxon / 64] >> (taxon % 64) & 1 == 1
    }

    /// Taxa on the canonical side.
    pub fn members(&self) -> Vec<usize> {
        (0..self.ntax).filter(|&i| self.contains(i)).collect()
    }

    /// Taxa on the side without taxon 0.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.ntax).filter(|&i| !self.contains(i)).collect()
    }

    pub fn size(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ntax(&self) -> usize {
        self.ntax
    }

    /// Leaf edges split off a single taxon.
    pub fn is_trivial(&self) -> bool {
        let k = self.size();
        k <= 1 || k + 1 >= self.ntax
    }

    /// Two splits can coexist in one tree iff one of the four side
    /// intersections is empty.
    pub fn compatible(&self, other: &Split) -> bool {
        let mut ab = false; // A ∩ B
        let mut a_nb = false; // A ∩ B'
        let mut na_b = false; // A' ∩ B
        for i in 0..self.ntax {
            match (self.contains(i), other.contains(i)) {
                (true, true) => ab = true,
                (true, false) => a_nb = true,
                (false, true) => na_b = true,
                (false, false) => {}
            }
        }
        // Both sets contain taxon 0, so A ∩ B is never empty; A' ∩ B' may be.
        let na_nb = (0..self.ntax).any(|i| !self.contains(i) && !other.contains(i));
        !(ab && a_nb && na_b && na_nb)
    }

    /// `{a,b}|{c,d}` with the given labels.
    pub fn display(&self, taxa: &[String]) -> String {
        let side = |v: Vec<usize>| {
            v.into_iter()
                .map(|i| taxa[i].as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("{{{}}}|{{{}}}", side(self.members()), side(self.complement()))
    }
}

impl<T: Real> PhyloTree<T> {
    /// Builds a tree from labels and edges over node ids, where leaves are
    /// `0..taxa.len()` in the order given. Labels are re-sorted internally.
    pub fn from_edges(taxa: &[String], edges: Vec<(usize, usize, T)>) -> Result<Self> {
        let n = taxa.len();
        if n < 3 {
            return Err(PhyloError::TooFewTaxa(n));
        }
        let mut unique = HashSet::new();
        for t in taxa {
            validate_label(t, 0).map_err(|_| PhyloError::InvalidLabel(t.clone()))?;
            if !unique.insert(t) {
                return Err(PhyloError::DuplicateTaxon(t.clone()));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| taxa[x].cmp(&taxa[y]));
        // old leaf id -> new leaf id
        let mut remap = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let map = |v: usize| if v < n { remap[v] } else { v };
        let nodes = 2 * n - 2;
        let mut tree = PhyloTree {
            taxa: order.iter().map(|&i| taxa[i].clone()).collect(),
            adjacency: vec![Vec::new(); nodes],
            edges: Vec::with_capacity(edges.len()),
        };
        for (a, b, length) in edges {
            if a >= nodes || b >= nodes || a == b {
                return Err(PhyloError::InvalidStructure(format!("bad edge ({a},{b})")));
            }
            tree.push_edge(map(a), map(b), length);
        }
        tree.validate()?;
        Ok(tree)
    }

    fn push_edge(&mut self, a: usize, b: usize, length: T) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { a, b, length });
        self.adjacency[a].push(id);
        self.adjacency[b].push(id);
        id
    }

    /// Checks degree, edge count, connectivity and branch lengths.
    pub fn validate(&self) -> Result<()> {
        let n = self.taxa.len();
        if self.edges.len() != 2 * n - 3 || self.adjacency.len() != 2 * n - 2 {
            return Err(PhyloError::InvalidStructure(format!(
                "{} taxa need {} edges, found {}",
                n,
                2 * n - 3,
                self.edges.len()
            )));
        }
        for (v, adj) in self.adjacency.iter().enumerate() {
            let want = if v < n { 1 } else { 3 };
            if adj.len() != want {
                return Err(PhyloError::InvalidStructure(format!(
                    "node {v} has degree {}, expected {want}",
                    adj.len()
                )));
            }
        }
        for e in &self.edges {
            if !(e.length > T::zero()) || !e.length.is_finite() {
                return Err(PhyloError::BranchLength(format!(
                    "branch length {} must be positive and finite",
                    e.length
                )));
            }
        }
        if self.postorder(self.default_root()).len() != self.adjacency.len() {
            return Err(PhyloError::InvalidStructure("tree is not connected".into()));
        }
        Ok(())
    }

    pub fn ntax(&self) -> usize {
        self.taxa.len()
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edges(&self) -> &[Edge<T>] {
        &self.edges
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.taxa.len()
    }

    pub fn incident(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn branch_length(&self, edge: usize) -> T {
        self.edges[edge].length
    }

    pub fn set_branch_length(&mut self, edge: usize, length: T) {
        self.edges[edge].length = length;
    }

    pub fn set_all_branch_lengths(&mut self, length: T) {
        for e in &mut self.edges {
            e.length = length;
        }
    }

    pub fn tree_length(&self) -> T {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Edges whose endpoints are both internal.
    pub fn internal_edges(&self) -> Vec<usize> {
        let n = self.ntax();
        (0..self.edges.len())
            .filter(|&e| self.edges[e].a >= n && self.edges[e].b >= n)
            .collect()
    }

    /// The internal node next to taxon 0; used as the canonical root.
    pub fn default_root(&self) -> usize {
        self.edges[self.adjacency[0][0]].other(0)
    }

    /// `(node, parent edge)` pairs with children before parents; the root
    /// comes last with `None`.
    pub fn postorder(&self, root: usize) -> Vec<(usize, Option<usize>)> {
        let mut order = Vec::with_capacity(self.adjacency.len());
        let mut stack = vec![(root, None::<usize>, false)];
        while let Some((v, via, expanded)) = stack.pop() {
            if expanded {
                order.push((v, via));
                continue;
            }
            stack.push((v, via, true));
            for &e in self.adjacency[v].iter().rev() {
                if Some(e) != via {
                    stack.push((self.edges[e].other(v), Some(e), false));
                }
            }
        }
        order
    }

    /// Smallest leaf index below each node when rooted at `root`.
    fn min_leaf(&self, root: usize) -> Vec<usize> {
        let mut best = vec![usize::MAX; self.adjacency.len()];
        for (v, via) in self.postorder(root) {
            let mut m = if self.is_leaf(v) { v } else { usize::MAX };
            for &e in &self.adjacency[v] {
                if Some(e) != via {
                    m = m.min(best[self.edges[e].other(v)]);
                }
            }
            best[v] = m;
        }
        best
    }

    fn write(&self, lengths: bool, label: &dyn Fn(usize) -> String) -> String {
        let root = self.default_root();
        let min = self.min_leaf(root);
        let mut out = String::new();
        self.write_node(root, None, &min, lengths, label, &mut out);
        out.push(';');
        out
    }

    fn write_node(
        &self,
        v: usize,
        via: Option<usize>,
        min: &[usize],
        lengths: bool,
        label: &dyn Fn(usize) -> String,
        out: &mut String,
    ) {
        if self.is_leaf(v) {
            out.push_str(&label(v));
        } else {
            let mut kids: Vec<(usize, usize)> = self.adjacency[v]
                .iter()
                .filter(|&&e| Some(e) != via)
                .map(|&e| (self.edges[e].other(v), e))
                .collect();
            kids.sort_by_key(|&(c, _)| min[c]);
            out.push('(');
            for (k, &(c, e)) in kids.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                self.write_node(c, Some(e), min, lengths, label, out);
            }
            out.push(')');
        }
        if lengths {
            if let Some(e) = via {
                let _ = write!(out, ":{}", self.edges[e].length);
            }
        }
    }

    /// Canonical Newick with branch lengths.
    pub fn to_newick(&self) -> String {
        self.write(true, &|v| self.taxa[v].clone())
    }

    /// Canonical Newick with leaves renamed (for translate tables).
    pub fn to_newick_with(&self, label: impl Fn(usize, &str) -> String) -> String {
        self.write(true, &|v| label(v, &self.taxa[v]))
    }

    /// Canonical topology string without branch lengths.
    pub fn topology(&self) -> String {
        self.write(false, &|v| self.taxa[v].clone())
    }

    /// Every edge's bipartition, indexed like `edges()`.
    pub fn edge_splits(&self) -> Vec<Split> {
        let n = self.ntax();
        let root = 0; // leaf 0: every edge's far side excludes taxon 0
        let mut below: Vec<Vec<bool>> = vec![Vec::new(); self.adjacency.len()];
        let mut out = vec![None; self.edges.len()];
        for (v, via) in self.postorder(root) {
            let mut side = vec![false; n];
            if self.is_leaf(v) && v != root {
                side[v] = true;
            }
            for &e in &self.adjacency[v] {
                if Some(e) != via {
                    let child = self.edges[e].other(v);
                    for (s, c) in side.iter_mut().zip(&below[child]) {
                        *s |= *c;
                    }
                }
            }
            if let Some(e) = via {
                out[e] = Some(Split::from_side(&side));
            }
            below[v] = side;
        }
        out.into_iter().map(|s| s.expect("every edge visited")).collect()
    }

    /// Non-trivial bipartitions, sorted.
    pub fn splits(&self) -> Vec<Split> {
        let mut s: Vec<Split> = self
            .edge_splits()
            .into_iter()
            .filter(|s| !s.is_trivial())
            .collect();
        s.sort();
        s
    }

    /// Nearest-neighbor interchange around internal edge `edge`: the
    /// `pick_u`-th subtree hanging off one end is exchanged with the
    /// `pick_v`-th subtree off the other end (`pick_*` in 0..2).
    pub fn nni(&mut self, edge: usize, pick_u: usize, pick_v: usize) -> Result<()> {
        let n = self.ntax();
        let (u, v) = (self.edges[edge].a, self.edges[edge].b);
        if u < n || v < n {
            return Err(PhyloError::InvalidStructure(format!(
                "edge {edge} is not internal"
            )));
        }
        let side_u: Vec<usize> = self.adjacency[u].iter().copied().filter(|&e| e != edge).collect();
        let side_v: Vec<usize> = self.adjacency[v].iter().copied().filter(|&e| e != edge).collect();
        let eu = side_u[pick_u % 2];
        let ev = side_v[pick_v % 2];
        self.reattach(eu, u, v);
        self.reattach(ev, v, u);
        Ok(())
    }

    /// Moves endpoint `from` of edge `e` to node `to`.
    fn reattach(&mut self, e: usize, from: usize, to: usize) {
        let edge = &mut self.edges[e];
        if edge.a == from {
            edge.a = to;
        } else {
            edge.b = to;
        }
        let pos = self.adjacency[from]
            .iter()
            .position(|&x| x == e)
            .expect("edge incident to node");
        self.adjacency[from].remove(pos);
        self.adjacency[to].push(e);
    }

    /// Same topology and labels (ignores branch lengths).
    pub fn same_topology(&self, other: &PhyloTree<T>) -> bool {
        self.topology() == other.topology()
    }

    /// Converts branch lengths to another scalar type.
    pub fn cast<U: Real>(&self) -> PhyloTree<U> {
        PhyloTree {
            taxa: self.taxa.clone(),
            adjacency: self.adjacency.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    a: e.a,
                    b: e.b,
                    length: U::of(e.length.as_f64()),
                })
                .collect(),
        }
    }
}

impl<T: Real> PartialEq for PhyloTree<T> {
    fn eq(&self, other: &Self) -> bool {
        self.to_newick() == other.to_newick()
    }
}

/// Partially built tree used by stepwise addition.
struct Growing<T> {
    tree: PhyloTree<T>,
    next_internal: usize,
}

impl<T: Real> Growing<T> {
    /// Star on the first three (sorted) taxa.
    fn start(sorted: Vec<String>, length: T) -> Self {
        let n = sorted.len();
        let mut tree = PhyloTree {
            taxa: sorted,
            adjacency: vec![Vec::new(); 2 * n - 2],
            edges: Vec::with_capacity(2 * n - 3),
        };
        for leaf in 0..3 {
            tree.push_edge(n, leaf, length);
        }
        Growing {
            tree,
            next_internal: n + 1,
        }
    }

    /// Attaches `leaf` to the middle of edge `e`.
    fn insert(&mut self, leaf: usize, e: usize, length: T) {
        let mid = self.next_internal;
        self.next_internal += 1;
        let far = self.tree.edges[e].b;
        // e now ends at mid; a new edge continues to the old far end.
        self.tree.reattach(e, far, mid);
        self.tree.push_edge(mid, far, length);
        self.tree.push_edge(mid, leaf, length);
    }
}

fn sorted_labels(taxa: &[String]) -> Result<Vec<String>> {
    let mut sorted = taxa.to_vec();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(PhyloError::DuplicateTaxon(w[0].clone()));
        }
    }
    for t in &sorted {
        validate_label(t, 0).map_err(|_| PhyloError::InvalidLabel(t.clone()))?;
    }
    Ok(sorted)
}

/// Every unrooted binary topology on `taxa` (3 to 7 labels). Branch
/// lengths are set to 1 as placeholders.
pub fn enumerate_topologies<T: Real>(taxa: &[String]) -> Result<Vec<PhyloTree<T>>> {
    let n = taxa.len();
    if n < 3 {
        return Err(PhyloError::TooFewTaxa(n));
    }
    if n > super::MAX_ENUMERATE_TAXA {
        return Err(PhyloError::TooManyTaxa {
            n,
            max: super::MAX_ENUMERATE_TAXA,
        });
    }
    let sorted = sorted_labels(taxa)?;
    let mut frontier = vec![Growing::start(sorted, T::one())];
    for leaf in 3..n {
        let mut next = Vec::with_capacity(frontier.len() * (2 * leaf - 3));
        for g in &frontier {
            for e in 0..g.tree.edges.len() {
                let mut child = Growing {
                    tree: g.tree.clone(),
                    next_internal: g.next_internal,
                };
                child.insert(leaf, e, T::one());
                next.push(child);
            }
        }
        frontier = next;
    }
    Ok(frontier.into_iter().map(|g| g.tree).collect())
}

/// Uniform random topology by stepwise addition, branch lengths drawn from
/// an exponential with the given mean.
pub fn random_tree<T: Real, R: Rng + ?Sized>(
    taxa: &[String],
    mean_branch_length: f64,
    rng: &mut R,
) -> Result<PhyloTree<T>> {
    let n = taxa.len();
    if n < 3 {
        return Err(PhyloError::TooFewTaxa(n));
    }
    let sorted = sorted_labels(taxa)?;
    let mut g = Growing::start(sorted, T::one());
    for leaf in 3..n {
        let e = rng.random_range(0..g.tree.edges.len());
        g.insert(leaf, e, T::one());
    }
    let exp = Exp::new(1.0 / mean_branch_length)
        .map_err(|e| PhyloError::InvalidModel(format!("branch length prior: {e}")))?;
    for e in 0..g.tree.edges.len() {
        let mut x: f64 = exp.sample(rng);
        while x <= 0.0 {
            x = exp.sample(rng);
        }
        g.tree.edges[e].length = T::of(x);
    }
    Ok(g.tree)
}

// ---------------------------------------------------------------- Newick

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    _src: &'a str,
}

/// Rooted intermediate form produced by the parser.
struct RawNode {
    label: Option<String>,
    length: Option<f64>,
    children: Vec<RawNode>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            chars: src.chars().collect(),
            pos: 0,
            _src: src,
        }
    }

    fn err(&self, msg: impl Into<String>) -> PhyloError {
        PhyloError::Newick {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip(&mut self) -> Result<()> {
        loop {
            match self.chars.get(self.pos) {
                Some(c) if c.is_whitespace() => self.pos += 1,
                Some('[') => {
                    let start = self.pos;
                    while self.chars.get(self.pos).is_some_and(|&c| c != ']') {
                        self.pos += 1;
                    }
                    if self.pos >= self.chars.len() {
                        self.pos = start;
                        return Err(self.err("unterminated comment"));
                    }
                    self.pos += 1;
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<char>> {
        self.skip()?;
        Ok(self.chars.get(self.pos).copied())
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|&c| !matches!(c, '(' | ')' | ',' | ':' | ';' | '[') && !c.is_whitespace())
        {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn node(&mut self, depth: usize) -> Result<RawNode> {
        if depth > 10_000 {
            return Err(self.err("nesting too deep"));
        }
        let pos = self.pos;
        let mut children = Vec::new();
        if self.peek()? == Some('(') {
            self.pos += 1;
            loop {
                children.push(self.node(depth + 1)?);
                match self.peek()? {
                    Some(',') => self.pos += 1,
                    Some(')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or ')'")),
                }
            }
        }
        self.skip()?;
        let label = self.word();
        let label = if label.is_empty() { None } else { Some(label) };
        let mut length = None;
        if self.peek()? == Some(':') {
            self.pos += 1;
            self.skip()?;
            let at = self.pos;
            let text = self.word();
            let value: f64 = text.parse().map_err(|_| PhyloError::Newick {
                pos: at,
                msg: format!("invalid branch length '{text}'"),
            })?;
            length = Some(value);
        }
        Ok(RawNode {
            label,
            length,
            children,
            pos,
        })
    }
}

/// Parses Newick. Every non-root node needs a positive branch length; a
/// bifurcating root is unrooted by joining its two edges.
pub fn parse_newick<T: Real>(text: &str) -> Result<PhyloTree<T>> {
    let mut p = Parser::new(text);
    let root = p.node(0)?;
    if p.peek()? != Some(';') {
        return Err(p.err("expected ';'"));
    }
    p.pos += 1;
    if p.peek()?.is_some() {
        return Err(p.err("trailing text after ';'"));
    }
    if root.children.is_empty() {
        return Err(PhyloError::Newick {
            pos: 0,
            msg: "tree has a single node".into(),
        });
    }

    let mut labels: Vec<String> = Vec::new();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut internal = 0usize;

    // First pass: count leaves so internal ids can start after them.
    fn count_leaves(n: &RawNode) -> usize {
        if n.children.is_empty() {
            1
        } else {
            n.children.iter().map(count_leaves).sum()
        }
    }
    let nleaves = count_leaves(&root);

    fn walk(
        n: &RawNode,
        id: usize,
        nleaves: usize,
        labels: &mut Vec<String>,
        edges: &mut Vec<(usize, usize, f64)>,
        internal: &mut usize,
    ) -> Result<()> {
        for c in &n.children {
            let length = c.length.ok_or(PhyloError::BranchLength(format!(
                "missing branch length at position {}",
                c.pos
            )))?;
            if !(length > 0.0) || !length.is_finite() {
                return Err(PhyloError::BranchLength(format!(
                    "branch length {length} at position {} must be positive",
                    c.pos
                )));
            }
            let cid = if c.children.is_empty() {
                let label = c.label.clone().ok_or(PhyloError::Newick {
                    pos: c.pos,
                    msg: "leaf without a label".into(),
                })?;
                validate_label(&label, 0).map_err(|_| PhyloError::InvalidLabel(label.clone()))?;
                labels.push(label);
                labels.len() - 1
            } else {
                if c.children.len() != 2 {
                    return Err(PhyloError::NonBinary {
                        pos: c.pos,
                        degree: c.children.len() + 1,
                    });
                }
                if c.label.is_some() {
                    return Err(PhyloError::Newick {
                        pos: c.pos,
                        msg: "internal node labels are not supported".into(),
                    });
                }
                *internal += 1;
                nleaves + *internal - 1
            };
            edges.push((id, cid, length));
            walk(c, cid, nleaves, labels, edges, internal)?;
        }
        Ok(())
    }

    if root.label.is_some() {
        return Err(PhyloError::Newick {
            pos: root.pos,
            msg: "root labels are not supported".into(),
        });
    }
    internal += 1;
    let root_id = nleaves;
    walk(&root, root_id, nleaves, &mut labels, &mut edges, &mut internal)?;

    match root.children.len() {
        3 => {}
        2 => {
            // Join the two root edges into one.
            let mut root_edges: Vec<usize> = edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.0 == root_id)
                .map(|(i, _)| i)
                .collect();
            root_edges.sort_unstable();
            let (e2, e1) = (root_edges[1], root_edges[0]);
            let (_, c2, l2) = edges.remove(e2);
            let (_, c1, l1) = edges[e1];
            edges[e1] = (c1, c2, l1 + l2);
            // Renumber internals above the removed root.
            for e in &mut edges {
                for v in [&mut e.0, &mut e.1] {
                    if *v > root_id {
                        *v -= 1;
                    }
                }
            }
        }
        d => {
            return Err(PhyloError::NonBinary {
                pos: root.pos,
                degree: d,
            })
        }
    }
    if labels.len() < 3 {
        return Err(PhyloError::TooFewTaxa(labels.len()));
    }
    let edges = edges
        .into_iter()
        .map(|(a, b, l)| (a, b, T::of(l)))
        .collect();
    PhyloTree::from_edges(&labels, edges)
}

/// Orders trees by canonical topology string (deterministic reporting).
pub fn topology_cmp<T: Real>(a: &PhyloTree<T>, b: &PhyloTree<T>) -> Ordering {
    a.topology().cmp(&b.topology())
}
