use serde::{Deserialize, Serialize};

use super::{AlignError, Result};

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    d: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, d: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if d.len() != n || d.iter().any(|row| row.len() != n) {
            return Err(AlignError::InvalidMatrix("shape does not match labels".into()));
        }
        for i in 0..n {
            if d[i][i] != 0.0 {
                return Err(AlignError::InvalidMatrix("non-zero diagonal".into()));
            }
            for j in 0..n {
                let v = d[i][j];
                if !v.is_finite() || v < 0.0 {
                    return Err(AlignError::InvalidMatrix(format!("bad entry d[{i}][{j}]={v}")));
                }
                if v != d[j][i] {
                    return Err(AlignError::InvalidMatrix("not symmetric".into()));
                }
            }
        }
        Ok(Self { labels, d })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GuideNode {
    Leaf(String),
    Merge { left: usize, right: usize, height: f64 },
}

/// Rooted binary clustering tree; the root is the last node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideTree {
    nodes: Vec<GuideNode>,
}

impl GuideTree {
    pub fn nodes(&self) -> &[GuideNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn leaves(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                GuideNode::Leaf(l) => Some(l.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn height(&self, node: usize) -> f64 {
        match self.nodes[node] {
            GuideNode::Leaf(_) => 0.0,
            GuideNode::Merge { height, .. } => height,
        }
    }

    /// Nested-parenthesis rendering, e.g. `((A,B),C)`.
    pub fn to_newick_topology(&self) -> String {
        fn go(t: &GuideTree, n: usize, out: &mut String) {
            match &t.nodes[n] {
                GuideNode::Leaf(l) => out.push_str(l),
                GuideNode::Merge { left, right, .. } => {
                    out.push('(');
                    go(t, *left, out);
                    out.push(',');
                    go(t, *right, out);
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        go(self, self.root(), &mut s);
        s
    }

    /// Merge nodes in bottom-up (creation) order.
    pub fn merges(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            GuideNode::Merge { left, right, height } => Some((i, *left, *right, *height)),
            _ => None,
        })
    }
}

struct Cluster {
    node: usize,
    size: usize,
    /// Smallest leaf label, used for tie-breaking.
    key: String,
}

/// UPGMA (average linkage). Among equally close pairs the one whose
/// `(smaller label, larger label)` is lexicographically lowest merges
/// first, where a cluster's label is its smallest leaf label.
pub fn build_guide_tree(dm: &DistanceMatrix) -> Result<GuideTree> {
    let n = dm.len();
    if n < 2 {
        return Err(AlignError::TooFewSequences { needed: 2, got: n });
    }
    let mut nodes: Vec<GuideNode> = dm.labels().iter().cloned().map(GuideNode::Leaf).collect();
    let mut clusters: Vec<Option<Cluster>> = dm
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Some(Cluster {
                node: i,
                size: 1,
                key: l.clone(),
            })
        })
        .collect();
    let mut d: Vec<Vec<f64>> = dm.rows().to_vec();

    for _ in 1..n {
        let mut best: Option<(f64, (String, String), usize, usize)> = None;
        for i in 0..n {
            let Some(ci) = &clusters[i] else { continue };
            for j in (i + 1)..n {
                let Some(cj) = &clusters[j] else { continue };
                let dist = d[i][j];
                let key = if ci.key <= cj.key {
                    (ci.key.clone(), cj.key.clone())
                } else {
                    (cj.key.clone(), ci.key.clone())
                };
                let better = match &best {
                    None => true,
                    Some((bd, bk, _, _)) => dist < *bd || (dist == *bd && key < *bk),
                };
                if better {
                    best = Some((dist, key, i, j));
                }
            }
        }
        let (dist, _, i, j) = best.expect("at least two clusters remain");
        let ci = clusters[i].take().expect("live cluster");
        let cj = clusters[j].take().expect("live cluster");
        let (wi, wj) = (ci.size as f64, cj.size as f64);
        let size = ci.size + cj.size;
        let (first, second) = if ci.key <= cj.key { (ci, cj) } else { (cj, ci) };
        nodes.push(GuideNode::Merge {
            left: first.node,
            right: second.node,
            height: dist / 2.0,
        });
        // Average linkage update into slot i.
        for k in 0..n {
            if k == i || k == j || clusters[k].is_none() {
                continue;
            }
            let merged = (d[i][k] * wi + d[j][k] * wj) / (wi + wj);
            d[i][k] = merged;
            d[k][i] = merged;
        }
        clusters[i] = Some(Cluster {
            node: nodes.len() - 1,
            size,
            key: first.key,
        });
    }
    Ok(GuideTree { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(labels: &[&str], d: Vec<Vec<f64>>) -> DistanceMatrix {
        DistanceMatrix::new(labels.iter().map(|s| s.to_string()).collect(), d).unwrap()
    }

    #[test]
    fn hand_executed_upgma() {
        let dm = matrix(
            &["A", "B", "C"],
            vec![vec![0.0, 2.0, 4.0], vec![2.0, 0.0, 4.0], vec![4.0, 4.0, 0.0]],
        );
        let t = build_guide_tree(&dm).unwrap();
        assert_eq!(t.to_newick_topology(), "((A,B),C)");
        let heights: Vec<f64> = t.merges().map(|m| m.3).collect();
        assert_eq!(heights, vec![1.0, 2.0]);
    }

    #[test]
    fn two_taxa_single_cherry() {
        let dm = matrix(&["x", "y"], vec![vec![0.0, 0.3], vec![0.3, 0.0]]);
        let t = build_guide_tree(&dm).unwrap();
        assert_eq!(t.to_newick_topology(), "(x,y)");
        assert_eq!(t.height(t.root()), 0.15);
    }

    #[test]
    fn equal_distances_follow_label_order() {
        // Every pair ties. Step 1 joins (A,B); the new cluster keeps key A,
        // so step 2 picks (A,C) over (C,D); then the rest.
        let labels = ["D", "C", "B", "A"];
        let d = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        let t = build_guide_tree(&matrix(&labels, d)).unwrap();
        assert_eq!(t.to_newick_topology(), "(((A,B),C),D)");
    }

    #[test]
    fn average_linkage_weights_by_size() {
        // After (A,B) joins, d((AB),C) = (4 + 6) / 2 = 5 > d(C,D) = 4.5.
        let dm = matrix(
            &["A", "B", "C", "D"],
            vec![
                vec![0.0, 1.0, 4.0, 9.0],
                vec![1.0, 0.0, 6.0, 9.0],
                vec![4.0, 6.0, 0.0, 4.5],
                vec![9.0, 9.0, 4.5, 0.0],
            ],
        );
        let t = build_guide_tree(&dm).unwrap();
        assert_eq!(t.to_newick_topology(), "((A,B),(C,D))");
        let heights: Vec<f64> = t.merges().map(|m| m.3).collect();
        assert_eq!(heights, vec![0.5, 2.25, (4.0 + 6.0 + 9.0 + 9.0) / 4.0 / 2.0]);
    }

    #[test]
    fn rejects_asymmetric() {
        let r = DistanceMatrix::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.0, 1.0], vec![2.0, 0.0]],
        );
        assert!(r.is_err());
    }
}
