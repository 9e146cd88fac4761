//! Post-processing of tree samples: burn-in, split frequencies, the
//! majority-rule consensus, the between-run diagnostic, tree-file reading,
//! and the exact posterior used to check the sampler on tiny problems.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

use super::{McmcError, Result};
use crate::phylomodel::{
    enumerate_topologies, log_likelihood_patterns, parse_newick, PhyloTree, SitePatterns, Split,
    SubstitutionModel,
};
use crate::scalar::{fmt_sig6, Real};
use crate::seqio::{nexus_blocks, Alignment};

pub const DEFAULT_BURNIN: f64 = 0.25;
pub const MAX_EXACT_TAXA: usize = 6;

/// Drops the first `ceil(fraction·len)` items.
pub fn burn_in<S>(samples: &[S], fraction: f64) -> Result<&[S]> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(McmcError::BurnInFraction(fraction));
    }
    let total = samples.len();
    let dropped = ((fraction * total as f64).ceil() as usize).min(total);
    if dropped == total {
        return Err(McmcError::EmptyRetained { dropped, total });
    }
    Ok(&samples[dropped..])
}

fn check_taxa<T: Real>(trees: &[PhyloTree<T>]) -> Result<()> {
    if let Some(first) = trees.first() {
        if trees.iter().any(|t| t.taxa() != first.taxa()) {
            return Err(McmcError::TaxaMismatch);
        }
    }
    Ok(())
}

/// Fraction of trees containing each non-trivial split.
pub fn split_frequencies<T: Real>(trees: &[PhyloTree<T>]) -> Result<BTreeMap<Split, f64>> {
    check_taxa(trees)?;
    let mut counts: BTreeMap<Split, usize> = BTreeMap::new();
    for t in trees {
        for s in t.splits() {
            *counts.entry(s).or_default() += 1;
        }
    }
    let n = trees.len() as f64;
    Ok(counts.into_iter().map(|(s, c)| (s, c as f64 / n)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusClade {
    pub split: Split,
    /// Posterior probability (split frequency), in (0.5, 1].
    pub pp: f64,
    /// Mean length of the edge over the trees containing the split.
    pub length: f64,
}

/// Majority-rule consensus. Possibly multifurcating.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTree {
    pub taxa: Vec<String>,
    pub clades: Vec<ConsensusClade>,
    /// Mean terminal branch length per taxon.
    pub leaf_lengths: Vec<f64>,
    pub ntrees: usize,
}

impl ConsensusTree {
    /// Newick drawn from the smallest taxon: the root's children are that
    /// taxon plus the maximal clades. Internal edges carry `[&pp=...]`.
    pub fn to_newick(&self) -> String {
        let n = self.taxa.len();
        // Clusters are the sides away from taxon 0.
        let clusters: Vec<Vec<bool>> = self
            .clades
            .iter()
            .map(|c| (0..n).map(|i| !c.split.contains(i)).collect())
            .collect();
        let size = |c: &Vec<bool>| c.iter().filter(|&&b| b).count();
        let subset = |a: &Vec<bool>, b: &Vec<bool>| a.iter().zip(b).all(|(&x, &y)| !x || y);
        // Parent of each clade: the smallest strictly larger cluster holding it.
        let parent: Vec<Option<usize>> = (0..clusters.len())
            .map(|i| {
                (0..clusters.len())
                    .filter(|&j| j != i && size(&clusters[j]) > size(&clusters[i]))
                    .filter(|&j| subset(&clusters[i], &clusters[j]))
                    .min_by_key(|&j| size(&clusters[j]))
            })
            .collect();
        // Innermost clade of each leaf.
        let leaf_parent: Vec<Option<usize>> = (0..n)
            .map(|leaf| {
                (0..clusters.len())
                    .filter(|&j| clusters[j][leaf])
                    .min_by_key(|&j| size(&clusters[j]))
            })
            .collect();
        #[derive(Clone, Copy)]
        enum Node {
            Leaf(usize),
            Clade(usize),
        }
        let min_leaf = |node: Node| match node {
            Node::Leaf(l) => l,
            Node::Clade(c) => clusters[c].iter().position(|&b| b).unwrap_or(0),
        };
        let children = |of: Option<usize>| {
            let mut v: Vec<Node> = (0..n)
                .filter(|&l| leaf_parent[l] == of)
                .map(Node::Leaf)
                .chain((0..clusters.len()).filter(|&c| parent[c] == of).map(Node::Clade))
                .collect();
            v.sort_by_key(|&x| min_leaf(x));
            v
        };
        fn emit(
            node: Node,
            out: &mut String,
            tree: &ConsensusTree,
            children: &dyn Fn(Option<usize>) -> Vec<Node>,
        ) {
            match node {
                Node::Leaf(l) => {
                    let _ = write!(out, "{}:{}", tree.taxa[l], fmt_sig6(tree.leaf_lengths[l]));
                }
                Node::Clade(c) => {
                    out.push('(');
                    for (k, ch) in children(Some(c)).into_iter().enumerate() {
                        if k > 0 {
                            out.push(',');
                        }
                        emit(ch, out, tree, children);
                    }
                    let cl = &tree.clades[c];
                    let _ = write!(out, ")[&pp={}]:{}", fmt_sig6(cl.pp), fmt_sig6(cl.length));
                }
            }
        }
        let mut out = String::from("(");
        for (k, ch) in children(None).into_iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            emit(ch, &mut out, self, &children);
        }
        out.push_str(");");
        out
    }

    /// Posterior probability of a split, if it is in the consensus.
    pub fn pp(&self, split: &Split) -> Option<f64> {
        self.clades.iter().find(|c| &c.split == split).map(|c| c.pp)
    }
}

/// Majority-rule consensus of the trees left after burn-in.
pub fn majority_rule_consensus<T: Real>(
    trees: &[PhyloTree<T>],
    burnin: f64,
) -> Result<ConsensusTree> {
    let kept = burn_in(trees, burnin)?;
    check_taxa(kept)?;
    let first = &kept[0];
    let n = first.ntax();
    let mut acc: BTreeMap<Split, (usize, f64)> = BTreeMap::new();
    let mut leaf_sum = vec![0.0; n];
    for t in kept {
        for (e, s) in t.edge_splits().into_iter().enumerate() {
            let len = t.branch_length(e).as_f64();
            if s.is_trivial() {
                let leaf = (0..n)
                    .find(|&i| if s.size() == 1 { s.contains(i) } else { !s.contains(i) })
                    .expect("trivial split has a singleton side");
                leaf_sum[leaf] += len;
            } else {
                let entry = acc.entry(s).or_default();
                entry.0 += 1;
                entry.1 += len;
            }
        }
    }
    let total = kept.len();
    let clades: Vec<ConsensusClade> = acc
        .into_iter()
        .filter(|(_, (c, _))| 2 * c > total)
        .map(|(split, (c, sum))| ConsensusClade {
            split,
            pp: c as f64 / total as f64,
            length: sum / c as f64,
        })
        .collect();
    for (i, a) in clades.iter().enumerate() {
        for b in &clades[i + 1..] {
            assert!(a.split.compatible(&b.split), "majority splits must be compatible");
        }
    }
    Ok(ConsensusTree {
        taxa: first.taxa().to_vec(),
        clades,
        leaf_lengths: leaf_sum.into_iter().map(|s| s / total as f64).collect(),
        ntrees: total,
    })
}

/// Mean over all observed splits of the standard deviation (n − 1
/// denominator) of their per-run frequencies.
pub fn convergence_diag<T: Real>(runs: &[Vec<PhyloTree<T>>], burnin: f64) -> Result<f64> {
    if runs.len() < 2 {
        return Err(McmcError::TooFewRuns(runs.len()));
    }
    let mut per_run = Vec::with_capacity(runs.len());
    let mut taxa: Option<&[String]> = None;
    for r in runs {
        let kept = burn_in(r, burnin)?;
        let t = kept[0].taxa();
        if taxa.is_some_and(|x| x != t) {
            return Err(McmcError::TaxaMismatch);
        }
        taxa = Some(t);
        per_run.push(split_frequencies(kept)?);
    }
    let mut union: Vec<&Split> = per_run.iter().flat_map(|m| m.keys()).collect();
    union.sort();
    union.dedup();
    if union.is_empty() {
        return Ok(0.0);
    }
    let k = runs.len() as f64;
    let mut total = 0.0;
    for s in &union {
        let f: Vec<f64> = per_run.iter().map(|m| m.get(*s).copied().unwrap_or(0.0)).collect();
        let mean = f.iter().sum::<f64>() / k;
        let var = f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        total += var.sqrt();
    }
    Ok(total / union.len() as f64)
}

/// Consensus of several independent runs: each run is trimmed by
/// `burnin`, the rest is pooled. The convergence diagnostic is present
/// when there are two or more runs.
pub fn consensus_of_runs<T: Real>(
    runs: &[Vec<PhyloTree<T>>],
    burnin: f64,
) -> Result<(ConsensusTree, Option<f64>)> {
    let mut pooled = Vec::new();
    for r in runs {
        pooled.extend_from_slice(burn_in(r, burnin)?);
    }
    let tree = majority_rule_consensus(&pooled, 0.0)?;
    let convergence = if runs.len() >= 2 {
        Some(convergence_diag(runs, burnin)?)
    } else {
        None
    };
    Ok((tree, convergence))
}

/// One `tree` command of a tree file.
#[derive(Debug, Clone)]
pub struct TreeSample<T> {
    pub name: String,
    /// Generation parsed from names of the form `gen.<g>`.
    pub gen: Option<u64>,
    pub tree: PhyloTree<T>,
}

/// Reads the TREES block of a NEXUS tree file, applying its translate
/// table. A file still being written (no `end;`, or a partial last line)
/// yields the complete trees so far.
pub fn parse_tree_file<T: Real>(text: &str) -> Result<Vec<TreeSample<T>>> {
    let err = |m: String| McmcError::TreeFile(m);
    let complete = match text.rfind(';') {
        Some(i) => &text[..=i],
        None => return Err(err("no complete commands".into())),
    };
    let blocks = nexus_blocks(complete, true).map_err(|e| err(e.to_string()))?;
    let block = blocks
        .iter()
        .find(|b| b.name == "trees")
        .ok_or_else(|| err("no trees block".into()))?;
    let mut translate: HashMap<String, String> = HashMap::new();
    let mut out = Vec::new();
    for cmd in &block.commands {
        let kw = cmd.tokens[0].text.to_ascii_lowercase();
        let rest: Vec<&str> = cmd.tokens[1..].iter().map(|t| t.text.as_str()).collect();
        match kw.as_str() {
            "translate" => {
                for pair in rest.join(" ").split(',') {
                    let parts: Vec<&str> = pair.split_whitespace().collect();
                    if parts.len() != 2 {
                        return Err(err(format!("line {}: bad translate entry '{pair}'", cmd.line)));
                    }
                    translate.insert(parts[0].to_string(), parts[1].to_string());
                }
            }
            "tree" | "utree" => {
                if rest.len() < 3 || rest[1] != "=" {
                    return Err(err(format!("line {}: expected 'tree name = newick'", cmd.line)));
                }
                let newick = format!("{};", rest[2..].concat());
                let raw: PhyloTree<T> =
                    parse_newick(&newick).map_err(|e| err(format!("line {}: {e}", cmd.line)))?;
                let tree = if translate.is_empty() {
                    raw
                } else {
                    let labels: Vec<String> = raw
                        .taxa()
                        .iter()
                        .map(|k| {
                            translate
                                .get(k)
                                .cloned()
                                .ok_or_else(|| err(format!("line {}: untranslated label '{k}'", cmd.line)))
                        })
                        .collect::<Result<_>>()?;
                    let edges = raw.edges().iter().map(|e| (e.a, e.b, e.length)).collect();
                    PhyloTree::from_edges(&labels, edges)?
                };
                let name = rest[0].to_string();
                let gen = name.strip_prefix("gen.").and_then(|g| g.parse().ok());
                out.push(TreeSample { name, gen, tree });
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Exact posterior over topologies with every branch fixed to
/// `branch_length` under a uniform topology prior.
#[derive(Debug, Clone)]
pub struct TopologyPosterior {
    /// `(canonical topology, probability)` in enumeration order.
    pub entries: Vec<(String, f64)>,
}

impl TopologyPosterior {
    pub fn probability(&self, topology: &str) -> f64 {
        self.entries
            .iter()
            .find(|(t, _)| t == topology)
            .map(|e| e.1)
            .unwrap_or(0.0)
    }

    pub fn argmax(&self) -> &str {
        &self
            .entries
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty")
            .0
    }

    /// Total variation distance to an empirical distribution.
    pub fn total_variation(&self, freqs: &HashMap<String, f64>) -> f64 {
        let mut tv: f64 = self
            .entries
            .iter()
            .map(|(t, p)| (p - freqs.get(t).copied().unwrap_or(0.0)).abs())
            .sum();
        tv += freqs
            .iter()
            .filter(|(t, _)| !self.entries.iter().any(|(u, _)| u == *t))
            .map(|(_, f)| f)
            .sum::<f64>();
        tv / 2.0
    }
}

pub fn exact_topology_posterior<T: Real>(
    data: &Alignment,
    m: &SubstitutionModel<T>,
    branch_length: T,
) -> Result<TopologyPosterior> {
    let n = data.ntax();
    if n > MAX_EXACT_TAXA {
        return Err(McmcError::TooManyTaxa {
            n,
            max: MAX_EXACT_TAXA,
        });
    }
    let taxa: Vec<String> = data.taxa().iter().map(|s| s.to_string()).collect();
    let mut trees: Vec<PhyloTree<T>> = enumerate_topologies(&taxa)?;
    let pats = SitePatterns::new(trees[0].taxa(), data)?;
    let mut lnl = Vec::with_capacity(trees.len());
    for t in &mut trees {
        t.set_all_branch_lengths(branch_length);
        lnl.push(log_likelihood_patterns(t, &pats, m)?.as_f64());
    }
    let max = lnl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lnl.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(TopologyPosterior {
        entries: trees
            .iter()
            .zip(w)
            .map(|(t, wi)| (t.topology(), wi / z))
            .collect(),
    })
}
