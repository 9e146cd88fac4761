//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod formats;
pub mod pairs;
pub mod wf;

use phylogrid_core::phylomodel::{
    random_tree, Nst, PhyloTree, RateVariation, SubstitutionModel, RATE_PAIRS,
};
use phylogrid_core::seqio::Alignment;
use rand::Rng;

pub type Mat4 = [[f64; 4]; 4];

fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// Rate matrix assembled directly from frequencies and exchangeabilities,
/// normalized to one expected substitution per unit time.
pub fn reference_q(m: &SubstitutionModel<f64>) -> Mat4 {
    let pi = m.freqs();
    let r = m.exchangeabilities();
    let mut q = [[0.0; 4]; 4];
    for (k, &(i, j)) in RATE_PAIRS.iter().enumerate() {
        q[i][j] = r[k] * pi[j];
        q[j][i] = r[k] * pi[i];
    }
    for i in 0..4 {
        q[i][i] = -(0..4).filter(|&j| j != i).map(|j| q[i][j]).sum::<f64>();
    }
    let mu: f64 = (0..4).map(|i| -pi[i] * q[i][i]).sum();
    q.map(|row| row.map(|x| x / mu))
}

/// `exp(Q t)` by scaling and squaring with a 30-term Taylor series.
pub fn expm(q: &Mat4, t: f64) -> Mat4 {
    let norm = q
        .iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * t;
    let mut s = 0u32;
    while norm / 2f64.powi(s as i32) > 0.25 {
        s += 1;
    }
    let h = t / 2f64.powi(s as i32);
    let a = q.map(|row| row.map(|x| x * h));
    let mut result = [[0.0; 4]; 4];
    let mut term = [[0.0; 4]; 4];
    for i in 0..4 {
        result[i][i] = 1.0;
        term[i][i] = 1.0;
    }
    for k in 1..30 {
        term = matmul(&term, &a).map(|row| row.map(|x| x / k as f64));
        for i in 0..4 {
            for j in 0..4 {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    result
}

fn base_state(b: u8) -> Option<usize> {
    "ACGT".bytes().position(|c| c == b)
}

/// Site likelihoods by summing over every assignment of states to the
/// unobserved nodes (internal nodes and missing tips).
pub fn brute_force_lnl(t: &PhyloTree<f64>, a: &Alignment, m: &SubstitutionModel<f64>) -> f64 {
    let n = t.ntax();
    let nodes = t.node_count();
    let root = n; // any internal node
    // Parent pointers from a breadth-first walk.
    let mut parent: Vec<Option<(usize, f64)>> = vec![None; nodes];
    let mut seen = vec![false; nodes];
    seen[root] = true;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for e in t.edges() {
            let w = if e.a == v {
                e.b
            } else if e.b == v {
                e.a
            } else {
                continue;
            };
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some((v, e.length));
                queue.push_back(w);
            }
        }
    }
    let q = reference_q(m);
    let pi = m.freqs();
    let rates = m.category_rates();
    let nsites = a.nchar().unwrap();
    let mut total = 0.0;
    for site in 0..nsites {
        let tips: Vec<Option<usize>> = t
            .taxa()
            .iter()
            .map(|x| base_state(a.get(x).unwrap().residues.as_bytes()[site]))
            .collect();
        let free: Vec<usize> = (0..nodes)
            .filter(|&v| v >= n || tips[v].is_none())
            .collect();
        let mut site_l = 0.0;
        for &r in &rates {
            let probs: Vec<Option<Mat4>> = parent
                .iter()
                .map(|p| p.map(|(_, len)| expm(&q, len * r)))
                .collect();
            let mut states = vec![0usize; nodes];
            for v in 0..n {
                if let Some(s) = tips[v] {
                    states[v] = s;
                }
            }
            let mut cat_l = 0.0;
            for code in 0..4usize.pow(free.len() as u32) {
                let mut c = code;
                for &v in &free {
                    states[v] = c % 4;
                    c /= 4;
                }
                let mut p = pi[states[root]];
                for v in 0..nodes {
                    if let Some((u, _)) = parent[v] {
                        p *= probs[v].unwrap()[states[u]][states[v]];
                    }
                }
                cat_l += p;
            }
            site_l += cat_l / rates.len() as f64;
        }
        total += site_l.ln();
    }
    total
}

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

pub fn random_model<R: Rng>(rng: &mut R, nst: Nst, rates: RateVariation) -> SubstitutionModel<f64> {
    let mut m = SubstitutionModel::new(nst, rates);
    let f = [0; 4].map(|_| rng.random_range(0.05..1.0));
    m.set_freqs(f).unwrap();
    match nst {
        Nst::One => {}
        Nst::Two => m.set_kappa(rng.random_range(0.2..10.0)).unwrap(),
        Nst::Six => m
            .set_exchangeabilities([0; 6].map(|_| rng.random_range(0.1..5.0)))
            .unwrap(),
    }
    m.set_gamma_shape(rng.random_range(0.1..5.0)).unwrap();
    m
}

/// Random alignment with some missing entries.
pub fn random_alignment<R: Rng>(rng: &mut R, taxa: &[String], sites: usize) -> Alignment {
    let rows: Vec<(String, String)> = taxa
        .iter()
        .map(|t| {
            let s: String = (0..sites)
                .map(|_| b"ACGTACGTACGTN-"[rng.random_range(0..14)] as char)
                .collect();
            (t.clone(), s)
        })
        .collect();
    Alignment::from_pairs(rows).unwrap()
}

pub fn random_instance<R: Rng>(
    rng: &mut R,
) -> (PhyloTree<f64>, Alignment, SubstitutionModel<f64>) {
    let n = rng.random_range(4..=5);
    let taxa = labels(n);
    let tree = random_tree(&taxa, 0.2, rng).unwrap();
    let nst = [Nst::One, Nst::Two, Nst::Six][rng.random_range(0..3)];
    let rates = if rng.random_bool(0.5) {
        RateVariation::Gamma
    } else {
        RateVariation::Equal
    };
    let m = random_model(rng, nst, rates);
    let sites = rng.random_range(1..=6);
    (tree, random_alignment(rng, &taxa, sites), m)
}

/// Category means of a discretized Gamma(shape, rate = shape), computed by
/// Simpson quadrature in the variable u = x^min(shape, 1), which removes
/// the singularity at zero for small shapes.
pub fn quadrature_gamma_rates(shape: f64, ncat: usize) -> Vec<f64> {
    let a = shape;
    let upper_x: f64 = 60.0 / a.min(1.0) + 60.0;
    let pw = a.min(1.0);
    let umax = upper_x.powf(pw);
    let steps = 400_000usize;
    let h = umax / steps as f64;
    // density in u, up to a constant: u^(a/pw - 1) exp(-a u^(1/pw))
    let dens = |u: f64| {
        let x = u.powf(1.0 / pw);
        let lead = if a / pw - 1.0 == 0.0 { 1.0 } else { u.powf(a / pw - 1.0) };
        lead * (-a * x).exp()
    };
    let mut mass = vec![0.0; steps];
    let mut first = vec![0.0; steps];
    for k in 0..steps {
        let u0 = k as f64 * h;
        let um = u0 + h / 2.0;
        let u1 = u0 + h;
        mass[k] = h / 6.0 * (dens(u0) + 4.0 * dens(um) + dens(u1));
        first[k] = h / 6.0
            * (u0.powf(1.0 / pw) * dens(u0) + 4.0 * um.powf(1.0 / pw) * dens(um) + u1.powf(1.0 / pw) * dens(u1));
    }
    let total: f64 = mass.iter().sum();
    let mut out = vec![0.0; ncat];
    let mut acc = 0.0;
    for k in 0..steps {
        // Split a step that straddles a bin boundary proportionally.
        let mut m = mass[k] / total;
        let mut f = first[k] / total;
        while m > 0.0 {
            let bin = ((acc * ncat as f64) as usize).min(ncat - 1);
            let room = (bin + 1) as f64 / ncat as f64 - acc;
            if m <= room || bin == ncat - 1 {
                out[bin] += f;
                acc += m;
                m = 0.0;
            } else {
                let frac = room / m;
                out[bin] += f * frac;
                f -= f * frac;
                m -= room;
                acc = (bin + 1) as f64 / ncat as f64;
            }
        }
    }
    out.iter().map(|x| x * ncat as f64).collect()
}

/// Simulates `sites` columns down `tree` under Jukes-Cantor.
pub fn simulate_jc<R: Rng>(tree: &PhyloTree<f64>, sites: usize, rng: &mut R) -> Alignment {
    let n = tree.ntax();
    let nodes = tree.node_count();
    let root = n;
    let mut cols: Vec<Vec<u8>> = vec![Vec::with_capacity(sites); n];
    for _ in 0..sites {
        let mut state = vec![usize::MAX; nodes];
        state[root] = rng.random_range(0..4);
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for e in tree.edges() {
                let w = if e.a == v { e.b } else if e.b == v { e.a } else { continue };
                if state[w] != usize::MAX {
                    continue;
                }
                let same = 0.25 + 0.75 * (-4.0 * e.length / 3.0).exp();
                state[w] = if rng.random::<f64>() < same {
                    state[v]
                } else {
                    let mut s = rng.random_range(0..3);
                    if s >= state[v] {
                        s += 1;
                    }
                    s
                };
                stack.push(w);
            }
        }
        for leaf in 0..n {
            cols[leaf].push(b"ACGT"[state[leaf]]);
        }
    }
    let rows: Vec<(String, String)> = tree
        .taxa()
        .iter()
        .zip(cols)
        .map(|(t, c)| (t.clone(), String::from_utf8(c).unwrap()))
        .collect();
    Alignment::from_pairs(rows).unwrap()
}

/// Four taxa, weakly favouring the ((a,b),(c,d)) split.
pub fn oracle_alignment_4() -> Alignment {
    Alignment::from_pairs([
        ("a", "ACGTACGTAC"),
        ("b", "ACGTTCGTAA"),
        ("c", "AGGAACCTAA"),
        ("d", "TGCAACCTAC"),
    ])
    .unwrap()
}

pub fn oracle_alignment_5() -> Alignment {
    Alignment::from_pairs([
        ("a", "ACGTACGTAC"),
        ("b", "ACGTTCGTAA"),
        ("c", "AGGAACCTAA"),
        ("d", "TGCAACCTAC"),
        ("e", "TGCAACGTAC"),
    ])
    .unwrap()
}

/// Topology-only MCMC on fixed branch lengths; returns the total
/// variation distance between sampled and exact topology frequencies.
pub fn posterior_oracle_tv(data: &Alignment, ngen: u64, seed: u64) -> f64 {
    use phylogrid_core::mcmc::*;
    use std::collections::{BTreeMap, HashMap};
    let m = SubstitutionModel::<f64>::jukes_cantor();
    let cfg = McmcConfig {
        ngen,
        samplefreq: 10,
        seed,
        nchains: 4,
        proposal_weights: BTreeMap::from([(ProposalKind::Nni, 1.0)]),
        fixed_branch_length: Some(0.1),
        filebase: "oracle".into(),
        ..Default::default()
    };
    let r = run_single(&cfg, data, &m, 1, &OutputSink::Memory, &|_| {}, None).unwrap();
    let mut counts: HashMap<String, f64> = HashMap::new();
    for s in &r.samples {
        let t: PhyloTree<f64> = phylogrid_core::phylomodel::parse_newick(&s.tree).unwrap();
        *counts.entry(t.topology()).or_default() += 1.0;
    }
    let total = r.samples.len() as f64;
    for v in counts.values_mut() {
        *v /= total;
    }
    let exact = exact_topology_posterior(data, &m, 0.1).unwrap();
    exact.total_variation(&counts)
}
