//! Felsenstein pruning over compressed site patterns.

use std::collections::HashMap;

use super::model::SubstitutionModel;
use super::tree::PhyloTree;
use super::{PhyloError, Result};
use crate::scalar::Real;
use crate::seqio::Alignment;

/// Nucleotide index in A, C, G, T order; anything else is missing data.
pub fn state_index(b: u8) -> Option<u8> {
    match b {
        b'A' | b'a' => Some(0),
        b'C' | b'c' => Some(1),
        b'G' | b'g' => Some(2),
        b'T' | b't' => Some(3),
        _ => None,
    }
}

/// Unique alignment columns with multiplicities, with rows in tree leaf
/// order (sorted taxon labels).
#[derive(Debug, Clone, PartialEq)]
pub struct SitePatterns {
    taxa: Vec<String>,
    /// `patterns[p][leaf]`
    patterns: Vec<Vec<Option<u8>>>,
    weights: Vec<usize>,
    nsites: usize,
}

impl SitePatterns {
    /// Compresses `a` for the given leaf order. All-missing columns are
    /// dropped since they contribute nothing.
    pub fn new(taxa: &[String], a: &Alignment) -> Result<Self> {
        let nchar = a.nchar().ok_or(PhyloError::NotAligned)?;
        let mut tax_sorted: Vec<&str> = a.taxa();
        tax_sorted.sort();
        let mut want: Vec<&str> = taxa.iter().map(String::as_str).collect();
        want.sort();
        if tax_sorted != want {
            return Err(PhyloError::TaxaMismatch);
        }
        let rows: Vec<&[u8]> = taxa
            .iter()
            .map(|t| a.get(t).expect("taxon checked").residues.as_bytes())
            .collect();
        let mut index: HashMap<Vec<Option<u8>>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut weights = Vec::new();
        for col in 0..nchar {
            let pat: Vec<Option<u8>> = rows.iter().map(|r| state_index(r[col])).collect();
            if pat.iter().all(Option::is_none) {
                continue;
            }
            match index.get(&pat) {
                Some(&i) => weights[i] += 1,
                None => {
                    index.insert(pat.clone(), patterns.len());
                    patterns.push(pat);
                    weights.push(1);
                }
            }
        }
        Ok(Self {
            taxa: taxa.to_vec(),
            patterns,
            weights,
            nsites: nchar,
        })
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn nsites(&self) -> usize {
        self.nsites
    }

    pub fn pattern(&self, p: usize) -> &[Option<u8>] {
        &self.patterns[p]
    }

    pub fn weight(&self, p: usize) -> usize {
        self.weights[p]
    }
}

/// ln P(data | tree, model), gamma categories weighted equally.
pub fn log_likelihood<T: Real>(
    t: &PhyloTree<T>,
    a: &Alignment,
    m: &SubstitutionModel<T>,
) -> Result<T> {
    let pats = SitePatterns::new(t.taxa(), a)?;
    log_likelihood_patterns(t, &pats, m)
}

/// As [`log_likelihood`] on precompressed patterns.
pub fn log_likelihood_patterns<T: Real>(
    t: &PhyloTree<T>,
    pats: &SitePatterns,
    m: &SubstitutionModel<T>,
) -> Result<T> {
    log_likelihood_rooted_at(t, pats, m, t.default_root())
}

/// Pruning with an explicit virtual root node; the value is the same for
/// every choice of root in a reversible model.
pub fn log_likelihood_rooted_at<T: Real>(
    t: &PhyloTree<T>,
    pats: &SitePatterns,
    m: &SubstitutionModel<T>,
    root: usize,
) -> Result<T> {
    if pats.taxa() != t.taxa() {
        return Err(PhyloError::TaxaMismatch);
    }
    if root >= t.node_count() {
        return Err(PhyloError::InvalidStructure(format!("no node {root}")));
    }
    let n = t.ntax();
    let np = pats.len();
    let rates = m.category_rates();
    let nc = rates.len();
    let eig = m.eigensystem();
    // probs[edge][cat]
    let probs: Vec<Vec<[[T; 4]; 4]>> = t
        .edges()
        .iter()
        .map(|e| rates.iter().map(|&r| eig.transition(e.length * r).p).collect())
        .collect();

    // partial[node] is np * nc * 4, filled in postorder.
    let width = np * nc;
    let mut partial: Vec<Vec<[T; 4]>> = vec![Vec::new(); t.node_count()];
    let mut log_scale = vec![T::zero(); np];
    let order = t.postorder(root);
    for &(v, via) in &order {
        let mut cl = if v < n {
            let mut cl = Vec::with_capacity(width);
            for p in 0..np {
                let vec = match pats.pattern(p)[v] {
                    Some(s) => {
                        let mut x = [T::zero(); 4];
                        x[s as usize] = T::one();
                        x
                    }
                    None => [T::one(); 4],
                };
                cl.extend(std::iter::repeat_n(vec, nc));
            }
            if via.is_some() {
                partial[v] = cl;
                continue;
            }
            cl
        } else {
            vec![[T::one(); 4]; width]
        };
        for &e in t.incident(v) {
            if Some(e) == via {
                continue;
            }
            let child = t.edges()[e].other(v);
            let cp = std::mem::take(&mut partial[child]);
            for p in 0..np {
                for c in 0..nc {
                    let pm = &probs[e][c];
                    let x = &cp[p * nc + c];
                    let out = &mut cl[p * nc + c];
                    for i in 0..4 {
                        let mut s = T::zero();
                        for j in 0..4 {
                            s += pm[i][j] * x[j];
                        }
                        out[i] *= s;
                    }
                }
            }
        }
        // Rescale this node's partials per pattern by their maximum.
        for p in 0..np {
            let mut mx = T::zero();
            for c in 0..nc {
                for &x in &cl[p * nc + c] {
                    mx = mx.max(x);
                }
            }
            if mx > T::zero() && mx != T::one() {
                for c in 0..nc {
                    for x in cl[p * nc + c].iter_mut() {
                        *x /= mx;
                    }
                }
                log_scale[p] += mx.ln();
            }
        }
        partial[v] = cl;
    }

    let root_cl = &partial[root];
    let freqs = m.freqs();
    let inv_nc = T::one() / T::of(nc as f64);
    let mut total = T::zero();
    for p in 0..np {
        let mut site = T::zero();
        for c in 0..nc {
            let x = &root_cl[p * nc + c];
            for i in 0..4 {
                site += freqs[i] * x[i];
            }
        }
        let lnl = (site * inv_nc).ln() + log_scale[p];
        total += T::of(pats.weight(p) as f64) * lnl;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phylomodel::{parse_newick, Nst, RateVariation};
    use crate::seqio::Alignment;

    fn aln(rows: &[(&str, &str)]) -> Alignment {
        Alignment::from_pairs(rows.iter().map(|&(a, b)| (a.to_string(), b.to_string()))).unwrap()
    }

    #[test]
    fn two_copy_doubles() {
        let t: PhyloTree<f64> = parse_newick("((a:0.1,b:0.2):0.05,c:0.3,d:0.4);").unwrap();
        let m = SubstitutionModel::new(Nst::Two, RateVariation::Gamma);
        let one = aln(&[("a", "A"), ("b", "C"), ("c", "A"), ("d", "G")]);
        let two = aln(&[("a", "AA"), ("b", "CC"), ("c", "AA"), ("d", "GG")]);
        let l1 = log_likelihood(&t, &one, &m).unwrap();
        let l2 = log_likelihood(&t, &two, &m).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12 * l1.abs());
    }

    #[test]
    fn missing_column_is_free() {
        let t: PhyloTree<f64> = parse_newick("((a:0.1,b:0.2):0.05,c:0.3,d:0.4);").unwrap();
        let m = SubstitutionModel::jukes_cantor();
        let base = aln(&[("a", "AC"), ("b", "AC"), ("c", "AT"), ("d", "GT")]);
        let plus = aln(&[("a", "A-C"), ("b", "ANC"), ("c", "A-T"), ("d", "GNT")]);
        assert_eq!(
            log_likelihood(&t, &base, &m).unwrap(),
            log_likelihood(&t, &plus, &m).unwrap()
        );
    }

    #[test]
    fn single_missing_leaf_marginalizes() {
        // With d missing the value equals the 3-taxon likelihood where the
        // a/b cherry's edge merges with d's attachment.
        let t: PhyloTree<f64> = parse_newick("((a:0.1,b:0.2):0.05,c:0.3,d:0.4);").unwrap();
        let t3: PhyloTree<f64> = parse_newick("(a:0.1,b:0.2,c:0.35);").unwrap();
        let m = SubstitutionModel::jukes_cantor();
        let l4 = log_likelihood(&t, &aln(&[("a", "A"), ("b", "C"), ("c", "G"), ("d", "N")]), &m).unwrap();
        let l3 = log_likelihood(&t3, &aln(&[("a", "A"), ("b", "C"), ("c", "G")]), &m).unwrap();
        assert!((l4 - l3).abs() < 1e-12);
    }

    #[test]
    fn taxa_mismatch() {
        let t: PhyloTree<f64> = parse_newick("(a:0.1,b:0.2,c:0.3);").unwrap();
        let m = SubstitutionModel::jukes_cantor();
        let a = aln(&[("a", "A"), ("b", "C"), ("x", "G")]);
        assert!(matches!(log_likelihood(&t, &a, &m), Err(PhyloError::TaxaMismatch)));
    }

    #[test]
    fn every_root_agrees() {
        let t: PhyloTree<f64> =
            parse_newick("((a:0.1,b:0.2):0.05,(c:0.3,e:0.02):0.2,d:0.4);").unwrap();
        let mut m = SubstitutionModel::new(Nst::Six, RateVariation::Gamma);
        m.set_freqs([0.3, 0.2, 0.1, 0.4]).unwrap();
        m.set_exchangeabilities([1.0, 3.0, 0.5, 0.8, 4.0, 1.0]).unwrap();
        let a = aln(&[
            ("a", "ACGTTA-"),
            ("b", "ACGATAC"),
            ("c", "TCGTNAC"),
            ("d", "ACCTTGC"),
            ("e", "GCGTTAA"),
        ]);
        let p = SitePatterns::new(t.taxa(), &a).unwrap();
        let base = log_likelihood_patterns(&t, &p, &m).unwrap();
        for r in 0..t.node_count() {
            let l = log_likelihood_rooted_at(&t, &p, &m, r).unwrap();
            assert!((l - base).abs() < 1e-9, "root {r}");
        }
    }

    #[test]
    fn scaling_handles_many_taxa() {
        let taxa: Vec<String> = (0..200).map(|i| format!("t{i:03}")).collect();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let t: PhyloTree<f64> = crate::phylomodel::random_tree(&taxa, 0.5, &mut rng).unwrap();
        let rows: Vec<(String, String)> = taxa
            .iter()
            .enumerate()
            .map(|(i, x)| (x.clone(), ["ACGT", "TGCA", "GATC"][i % 3].to_string()))
            .collect();
        let a = Alignment::from_pairs(rows).unwrap();
        let l = log_likelihood(&t, &a, &SubstitutionModel::jukes_cantor()).unwrap();
        assert!(l.is_finite() && l < 0.0);
    }
}
