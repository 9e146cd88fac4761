//! Chain states, the proposal kernel, and the Metropolis-Hastings and
//! chain-swap acceptance rules.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use super::config::{McmcConfig, Priors, ProposalKind};
use super::Result;
use crate::phylomodel::{
    log_likelihood_patterns, Nst, PhyloTree, RateVariation, SitePatterns, SubstitutionModel,
};
use crate::scalar::Real;

/// One Metropolis-coupled chain. `heat` belongs to the chain's slot and
/// stays put when states are exchanged; `lineage` identifies the state
/// and travels with it.
#[derive(Debug, Clone)]
pub struct ChainState<T> {
    pub tree: PhyloTree<T>,
    pub model: SubstitutionModel<T>,
    pub lnl: f64,
    pub ln_prior: f64,
    pub heat: f64,
    pub lineage: usize,
}

impl<T: Real> ChainState<T> {
    /// Builds a state and fills both caches.
    pub fn new(
        tree: PhyloTree<T>,
        model: SubstitutionModel<T>,
        pats: &SitePatterns,
        kernel: &Proposal,
        heat: f64,
        lineage: usize,
    ) -> Result<Self> {
        let mut s = Self {
            tree,
            model,
            lnl: 0.0,
            ln_prior: 0.0,
            heat,
            lineage,
        };
        s.refresh(pats, kernel)?;
        Ok(s)
    }

    pub fn refresh(&mut self, pats: &SitePatterns, kernel: &Proposal) -> Result<()> {
        self.lnl = log_likelihood_patterns(&self.tree, pats, &self.model)?.as_f64();
        self.ln_prior = log_prior(&self.tree, &self.model, &kernel.priors, kernel.fixed_lengths);
        Ok(())
    }

    pub fn log_posterior(&self) -> f64 {
        self.lnl + self.ln_prior
    }
}

/// Log prior density: uniform topology, exponential branch lengths (unless
/// fixed), exponential gamma shape, flat Dirichlet on freqs and rates.
pub fn log_prior<T: Real>(
    tree: &PhyloTree<T>,
    model: &SubstitutionModel<T>,
    priors: &Priors,
    fixed_lengths: bool,
) -> f64 {
    let n = tree.ntax();
    let mut lp = -(3..n).map(|k| ((2 * k - 3) as f64).ln()).sum::<f64>();
    if !fixed_lengths {
        let rate = 1.0 / priors.branch_mean;
        for e in tree.edges() {
            lp += rate.ln() - rate * e.length.as_f64();
        }
    }
    if model.rate_variation() == RateVariation::Gamma {
        let rate = 1.0 / priors.shape_mean;
        lp += rate.ln() - rate * model.gamma_shape().as_f64();
    }
    lp += ln_gamma(4.0);
    match model.nst() {
        Nst::One => {}
        Nst::Two => lp += ln_gamma(2.0),
        Nst::Six => lp += ln_gamma(6.0),
    }
    lp
}

/// The move mix of a run after dropping kinds that do not apply.
#[derive(Debug, Clone)]
pub struct Proposal {
    moves: Vec<(ProposalKind, f64)>,
    total: f64,
    lambda: f64,
    alpha: f64,
    pub priors: Priors,
    pub fixed_lengths: bool,
}

impl Proposal {
    pub fn new<T: Real>(cfg: &McmcConfig, model: &SubstitutionModel<T>, ntax: usize) -> Self {
        let applies = |k: ProposalKind| match k {
            ProposalKind::Nni => ntax >= 4,
            ProposalKind::BranchLength => cfg.fixed_branch_length.is_none(),
            ProposalKind::GammaShape => model.rate_variation() == RateVariation::Gamma,
            ProposalKind::Freqs => true,
            ProposalKind::RelRates => model.nst() != Nst::One,
        };
        let moves: Vec<(ProposalKind, f64)> = cfg
            .proposal_weights
            .iter()
            .filter(|(&k, _)| applies(k))
            .map(|(&k, &w)| (k, w))
            .collect();
        let total = moves.iter().map(|m| m.1).sum();
        Self {
            moves,
            total,
            lambda: cfg.multiplier_lambda,
            alpha: cfg.dirichlet_alpha,
            priors: cfg.priors,
            fixed_lengths: cfg.fixed_branch_length.is_some(),
        }
    }

    /// Active moves and their selection probabilities.
    pub fn probabilities(&self) -> Vec<(ProposalKind, f64)> {
        self.moves.iter().map(|&(k, w)| (k, w / self.total)).collect()
    }

    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<ProposalKind> {
        if self.moves.is_empty() {
            return None;
        }
        let mut x = rng.random::<f64>() * self.total;
        for &(k, w) in &self.moves {
            if x < w {
                return Some(k);
            }
            x -= w;
        }
        self.moves.last().map(|m| m.0)
    }
}

/// Multiplier move `x' = x·exp(λ(u − 0.5))`; returns `x'` and the log
/// Hastings ratio `ln(x'/x)`.
pub fn multiplier(x: f64, lambda: f64, u: f64) -> (f64, f64) {
    let m = lambda * (u - 0.5);
    (x * m.exp(), m)
}

fn ln_dirichlet(x: &[f64], a: &[f64]) -> f64 {
    let sa: f64 = a.iter().sum();
    ln_gamma(sa) - a.iter().map(|&ai| ln_gamma(ai)).sum::<f64>()
        + x.iter().zip(a).map(|(&xi, &ai)| (ai - 1.0) * xi.ln()).sum::<f64>()
}

/// Draws `y ~ Dirichlet(alpha·x)`; returns `y` and the log Hastings ratio.
/// A draw with an underflowed component yields `-inf` (certain rejection).
fn dirichlet_nudge<R: Rng + ?Sized>(x: &[f64], alpha: f64, rng: &mut R) -> (Vec<f64>, f64) {
    let a: Vec<f64> = x.iter().map(|&xi| alpha * xi).collect();
    let mut y: Vec<f64> = a
        .iter()
        .map(|&ai| Gamma::new(ai, 1.0).map(|g| g.sample(rng)).unwrap_or(0.0))
        .collect();
    let sum: f64 = y.iter().sum();
    for v in &mut y {
        *v /= sum;
    }
    if y.iter().any(|&v| !(v > 1e-300)) || !sum.is_finite() {
        return (x.to_vec(), f64::NEG_INFINITY);
    }
    let b: Vec<f64> = y.iter().map(|&yi| alpha * yi).collect();
    let h = ln_dirichlet(x, &b) - ln_dirichlet(&y, &a);
    (y, h)
}

/// Rates as a point on the simplex: `(kappa, 1)` for nst=2, all six
/// exchangeabilities for nst=6.
fn rate_simplex<T: Real>(m: &SubstitutionModel<T>) -> Vec<f64> {
    let raw: Vec<f64> = match m.nst() {
        Nst::One => vec![1.0],
        Nst::Two => vec![m.kappa().as_f64(), 1.0],
        Nst::Six => m.exchangeabilities().iter().map(|r| r.as_f64()).collect(),
    };
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / s).collect()
}

/// Applies one move of kind `kind` to a copy of `state` without touching
/// the caches. Returns the candidate and its log Hastings ratio.
pub fn perturb<T: Real, R: Rng + ?Sized>(
    state: &ChainState<T>,
    kind: ProposalKind,
    kernel: &Proposal,
    rng: &mut R,
) -> (ChainState<T>, f64) {
    let mut c = state.clone();
    let h = match kind {
        ProposalKind::Nni => {
            let internal = c.tree.internal_edges();
            let e = internal[rng.random_range(0..internal.len())];
            let pv = rng.random_range(0..2);
            c.tree.nni(e, 0, pv).expect("internal edge");
            0.0
        }
        ProposalKind::BranchLength => {
            let e = rng.random_range(0..c.tree.edges().len());
            let (x, h) = multiplier(c.tree.branch_length(e).as_f64(), kernel.lambda, rng.random());
            c.tree.set_branch_length(e, T::of(x));
            h
        }
        ProposalKind::GammaShape => {
            let (x, h) = multiplier(c.model.gamma_shape().as_f64(), kernel.lambda, rng.random());
            match c.model.set_gamma_shape(T::of(x)) {
                Ok(()) => h,
                Err(_) => f64::NEG_INFINITY,
            }
        }
        ProposalKind::Freqs => {
            let f: Vec<f64> = c.model.freqs().iter().map(|x| x.as_f64()).collect();
            let (y, h) = dirichlet_nudge(&f, kernel.alpha, rng);
            let ok = c
                .model
                .set_freqs([y[0], y[1], y[2], y[3]].map(T::of))
                .is_ok();
            if ok {
                h
            } else {
                f64::NEG_INFINITY
            }
        }
        ProposalKind::RelRates => {
            let s = rate_simplex(&c.model);
            let (y, h) = dirichlet_nudge(&s, kernel.alpha, rng);
            let ok = match c.model.nst() {
                Nst::One => true,
                Nst::Two => c.model.set_kappa(T::of(y[0] / y[1])).is_ok(),
                Nst::Six => {
                    let mut r = [T::zero(); 6];
                    for (ri, yi) in r.iter_mut().zip(&y) {
                        *ri = T::of(*yi);
                    }
                    c.model.set_exchangeabilities(r).is_ok()
                }
            };
            if ok {
                h
            } else {
                f64::NEG_INFINITY
            }
        }
    };
    (c, h)
}

/// Picks a move, applies it and evaluates the candidate. Returns `None`
/// when the kernel has no applicable moves.
pub fn propose<T: Real, R: Rng + ?Sized>(
    state: &ChainState<T>,
    kernel: &Proposal,
    pats: &SitePatterns,
    rng: &mut R,
) -> Result<Option<(ChainState<T>, f64, ProposalKind)>> {
    let Some(kind) = kernel.choose(rng) else {
        return Ok(None);
    };
    let (mut c, h) = perturb(state, kind, kernel, rng);
    if h.is_finite() {
        c.refresh(pats, kernel)?;
    }
    Ok(Some((c, h, kind)))
}

/// Metropolis-Hastings test on the heated posterior.
pub fn mh_accept<T: Real, R: Rng + ?Sized>(
    current: &ChainState<T>,
    candidate: &ChainState<T>,
    log_hastings: f64,
    beta: f64,
    rng: &mut R,
) -> bool {
    if !log_hastings.is_finite() || !candidate.log_posterior().is_finite() {
        return false;
    }
    let delta = candidate.log_posterior() - current.log_posterior();
    let ln_r = if beta == 0.0 { 0.0 } else { beta * delta } + log_hastings;
    if ln_r >= 0.0 {
        return true;
    }
    rng.random::<f64>().ln() < ln_r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapOutcome {
    pub i: usize,
    pub j: usize,
    pub accepted: bool,
}

/// Proposes exchanging the states of two distinct random slots. Heats stay
/// with the slots. No-op (returns `None`) with fewer than two chains.
pub fn swap_attempt<T: Real, R: Rng + ?Sized>(
    chains: &mut [ChainState<T>],
    rng: &mut R,
) -> Option<SwapOutcome> {
    let n = chains.len();
    if n < 2 {
        return None;
    }
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let (bi, bj) = (chains[i].heat, chains[j].heat);
    let ln_r = (bi - bj) * (chains[j].log_posterior() - chains[i].log_posterior());
    let accepted = if ln_r >= 0.0 {
        true
    } else {
        rng.random::<f64>().ln() < ln_r
    };
    if accepted {
        chains.swap(i, j);
        chains[i].heat = bi;
        chains[j].heat = bj;
    }
    Some(SwapOutcome { i, j, accepted })
}
