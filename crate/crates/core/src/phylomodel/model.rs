//! Reversible nucleotide substitution models (JC/F81, HKY-style, GTR) with
//! optional discrete-gamma rate variation. State order is A, C, G, T.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use super::{PhyloError, Result};
use crate::scalar::Real;

/// Exchangeability order used everywhere: AC, AG, AT, CG, CT, GT.
pub const RATE_LABELS: [&str; 6] = ["AC", "AG", "AT", "CG", "CT", "GT"];
/// State pair for each exchangeability.
pub const RATE_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Nst {
    One,
    Two,
    Six,
}

impl Nst {
    pub fn as_u8(self) -> u8 {
        match self {
            Nst::One => 1,
            Nst::Two => 2,
            Nst::Six => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateVariation {
    Equal,
    Gamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionModel<T> {
    nst: Nst,
    freqs: [T; 4],
    /// Exchangeabilities in [`RATE_LABELS`] order, scaled so GT = 1.
    exchange: [T; 6],
    rates: RateVariation,
    gamma_shape: T,
    ncat: usize,
}

impl<T: Real> SubstitutionModel<T> {
    /// Default parameters for a given `nst`/`rates` setting: uniform
    /// frequencies, unit exchangeabilities, shape 0.5, four categories.
    pub fn new(nst: Nst, rates: RateVariation) -> Self {
        Self {
            nst,
            freqs: [T::of(0.25); 4],
            exchange: [T::one(); 6],
            rates,
            gamma_shape: T::of(0.5),
            ncat: 4,
        }
    }

    pub fn jukes_cantor() -> Self {
        Self::new(Nst::One, RateVariation::Equal)
    }

    pub fn nst(&self) -> Nst {
        self.nst
    }

    pub fn rate_variation(&self) -> RateVariation {
        self.rates
    }

    pub fn freqs(&self) -> [T; 4] {
        self.freqs
    }

    pub fn gamma_shape(&self) -> T {
        self.gamma_shape
    }

    pub fn ncat(&self) -> usize {
        match self.rates {
            RateVariation::Equal => 1,
            RateVariation::Gamma => self.ncat,
        }
    }

    /// All six exchangeabilities (GT = 1).
    pub fn exchangeabilities(&self) -> [T; 6] {
        self.exchange
    }

    /// Free relative-rate parameters: none meaningful for nst=1 (reported
    /// as `[1]`), kappa for nst=2, all six for nst=6.
    pub fn rel_rates(&self) -> Vec<T> {
        match self.nst {
            Nst::One => vec![T::one()],
            Nst::Two => vec![self.kappa()],
            Nst::Six => self.exchange.to_vec(),
        }
    }

    /// Transition/transversion rate ratio (AG and CT over the others).
    pub fn kappa(&self) -> T {
        self.exchange[1]
    }

    pub fn set_freqs(&mut self, freqs: [T; 4]) -> Result<()> {
        let sum: T = freqs.iter().copied().sum();
        if freqs.iter().any(|&f| !(f > T::zero()) || !f.is_finite()) || sum <= T::zero() {
            return Err(PhyloError::InvalidModel("state frequencies must be positive".into()));
        }
        self.freqs = freqs.map(|f| f / sum);
        Ok(())
    }

    pub fn set_kappa(&mut self, kappa: T) -> Result<()> {
        if self.nst != Nst::Two {
            return Err(PhyloError::InvalidModel("kappa only applies to nst=2".into()));
        }
        if !(kappa > T::zero()) || !kappa.is_finite() {
            return Err(PhyloError::InvalidModel("kappa must be positive".into()));
        }
        self.exchange = [T::one(), kappa, T::one(), T::one(), kappa, T::one()];
        Ok(())
    }

    /// Sets GTR exchangeabilities; they are rescaled so that GT = 1.
    pub fn set_exchangeabilities(&mut self, rates: [T; 6]) -> Result<()> {
        if self.nst != Nst::Six {
            return Err(PhyloError::InvalidModel("exchangeabilities only apply to nst=6".into()));
        }
        if rates.iter().any(|&r| !(r > T::zero()) || !r.is_finite()) {
            return Err(PhyloError::InvalidModel("rates must be positive".into()));
        }
        let gt = rates[5];
        self.exchange = rates.map(|r| r / gt);
        Ok(())
    }

    pub fn set_gamma_shape(&mut self, shape: T) -> Result<()> {
        if !(shape > T::zero()) || !shape.is_finite() {
            return Err(PhyloError::InvalidModel("gamma shape must be positive".into()));
        }
        self.gamma_shape = shape;
        Ok(())
    }

    pub fn set_ncat(&mut self, ncat: usize) -> Result<()> {
        if ncat == 0 {
            return Err(PhyloError::InvalidModel("ncat must be at least 1".into()));
        }
        self.ncat = ncat;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let sum: T = self.freqs.iter().copied().sum();
        if (sum - T::one()).abs() > T::of(1e-12).max(T::epsilon() * T::of(8.0)) {
            return Err(PhyloError::InvalidModel(format!("frequencies sum to {sum}")));
        }
        if self.freqs.iter().any(|&f| !(f > T::zero())) {
            return Err(PhyloError::InvalidModel("frequencies must be positive".into()));
        }
        if self.exchange.iter().any(|&r| !(r > T::zero())) || self.exchange[5] != T::one() {
            return Err(PhyloError::InvalidModel("rates must be positive with GT = 1".into()));
        }
        if !(self.gamma_shape > T::zero()) || self.ncat == 0 {
            return Err(PhyloError::InvalidModel("bad gamma settings".into()));
        }
        Ok(())
    }

    /// `nst=<k> rates=<equal|gamma>` as used on an `lset` line.
    pub fn lset_params(&self) -> String {
        format!(
            "nst={} rates={}",
            self.nst.as_u8(),
            match self.rates {
                RateVariation::Equal => "equal",
                RateVariation::Gamma => "gamma",
            }
        )
    }

    /// Instantaneous rate matrix scaled to one expected substitution per
    /// unit time.
    pub fn rate_matrix(&self) -> [[T; 4]; 4] {
        let mut q = [[T::zero(); 4]; 4];
        for (k, &(i, j)) in RATE_PAIRS.iter().enumerate() {
            q[i][j] = self.exchange[k] * self.freqs[j];
            q[j][i] = self.exchange[k] * self.freqs[i];
        }
        let mut mu = T::zero();
        for i in 0..4 {
            let out: T = (0..4).filter(|&j| j != i).map(|j| q[i][j]).sum();
            q[i][i] = -out;
            mu += self.freqs[i] * out;
        }
        for row in &mut q {
            for x in row.iter_mut() {
                *x /= mu;
            }
        }
        q
    }

    /// Spectral decomposition of the scaled rate matrix.
    pub fn eigensystem(&self) -> Eigensystem<T> {
        Eigensystem::new(self)
    }

    /// Category rate multipliers (mean 1). `[1]` without rate variation.
    pub fn category_rates(&self) -> Vec<T> {
        match self.rates {
            RateVariation::Equal => vec![T::one()],
            RateVariation::Gamma => discrete_gamma_rates(self.gamma_shape.as_f64(), self.ncat)
                .into_iter()
                .map(T::of)
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> SubstitutionModel<U> {
        SubstitutionModel {
            nst: self.nst,
            freqs: self.freqs.map(|x| U::of(x.as_f64())),
            exchange: self.exchange.map(|x| U::of(x.as_f64())),
            rates: self.rates,
            gamma_shape: U::of(self.gamma_shape.as_f64()),
            ncat: self.ncat,
        }
    }
}

impl<T: Real> fmt::Display for SubstitutionModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.lset_params())
    }
}

/// Eigen decomposition of a reversible rate matrix through its symmetrized
/// form `S = Π^½ Q Π^-½`, so `P(t)_ij = Σ_k left[i][k] e^{λ_k t} right[k][j]`.
#[derive(Debug, Clone)]
pub struct Eigensystem<T> {
    pub values: [T; 4],
    left: [[T; 4]; 4],
    right: [[T; 4]; 4],
}

impl<T: Real> Eigensystem<T> {
    fn new(m: &SubstitutionModel<T>) -> Self {
        let q = m.rate_matrix();
        let sq: [T; 4] = m.freqs.map(|p| p.sqrt());
        let mut s = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] = sq[i] * q[i][j] / sq[j];
            }
        }
        // Average the two triangles so rounding cannot break symmetry.
        for i in 0..4 {
            for j in (i + 1)..4 {
                let v = (s[i][j] + s[j][i]) / T::of(2.0);
                s[i][j] = v;
                s[j][i] = v;
            }
        }
        let (values, vectors) = jacobi_eigen(s);
        let mut left = [[T::zero(); 4]; 4];
        let mut right = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for k in 0..4 {
                left[i][k] = vectors[i][k] / sq[i];
                right[k][i] = vectors[i][k] * sq[i];
            }
        }
        Self {
            values,
            left,
            right,
        }
    }

    /// `P(t)` for an already rate-scaled time `t`.
    pub fn transition(&self, t: T) -> TransitionMatrix<T> {
        let ex = self.values.map(|l| (l * t).exp());
        let mut p = [[T::zero(); 4]; 4];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut v = T::zero();
                for k in 0..4 {
                    v += self.left[i][k] * ex[k] * self.right[k][j];
                }
                *cell = v.max(T::zero()).min(T::one());
            }
        }
        TransitionMatrix { p }
    }
}

/// Cyclic Jacobi rotations for a symmetric 4×4 matrix. Returns eigenvalues
/// and eigenvectors as columns.
fn jacobi_eigen<T: Real>(mut a: [[T; 4]; 4]) -> ([T; 4], [[T; 4]; 4]) {
    let mut v = [[T::zero(); 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    for _sweep in 0..100 {
        let off: T = (0..4)
            .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: T = (0..4).map(|i| a[i][i] * a[i][i]).sum::<T>() + off;
        if off <= scale * T::epsilon() * T::epsilon() {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..4 {
                if a[p][q] == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::of(2.0) * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2], a[3][3]], v)
}

/// Row-stochastic matrix of state change probabilities over a branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix<T> {
    pub p: [[T; 4]; 4],
}

impl<T: Real> TransitionMatrix<T> {
    pub fn row_sums(&self) -> [T; 4] {
        self.p.map(|row| row.iter().copied().sum())
    }
}

/// `P(t) = exp(Q r t)` for branch length `t` and category rate `r`.
pub fn transition_matrix<T: Real>(m: &SubstitutionModel<T>, t: T, r: T) -> TransitionMatrix<T> {
    m.eigensystem().transition(t * r)
}

/// Mean rate of each of `ncat` equal-probability bins of a Gamma(shape,
/// rate = shape) distribution, normalized to mean exactly 1.
pub fn discrete_gamma_rates(shape: f64, ncat: usize) -> Vec<f64> {
    if ncat <= 1 {
        return vec![1.0];
    }
    let a = shape;
    let cuts: Vec<f64> = (1..ncat)
        .map(|k| gamma_quantile(a, k as f64 / ncat as f64))
        .collect();
    // Partial expectations via the shape+1 incomplete gamma.
    let mut prev = 0.0;
    let mut rates = Vec::with_capacity(ncat);
    for k in 0..ncat {
        let upper = if k + 1 < ncat {
            gamma_lr(a + 1.0, a * cuts[k])
        } else {
            1.0
        };
        rates.push((upper - prev) * ncat as f64);
        prev = upper;
    }
    let mean = rates.iter().sum::<f64>() / ncat as f64;
    rates.into_iter().map(|r| r / mean).collect()
}

/// Quantile of Gamma(shape, rate = shape) by bisection on the CDF.
fn gamma_quantile(shape: f64, p: f64) -> f64 {
    let cdf = |x: f64| gamma_lr(shape, shape * x);
    let mut hi = 1.0;
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Parses an `lset` command, e.g. `lset nst=6 rates=gamma;`.
pub fn lset_parse<T: Real>(text: &str) -> Result<SubstitutionModel<T>> {
    let cleaned = text.trim().trim_end_matches(';').replace('=', " = ");
    let toks: Vec<&str> = cleaned.split_whitespace().collect();
    match toks.first() {
        Some(k) if k.eq_ignore_ascii_case("lset") => {}
        _ => return Err(PhyloError::Lset("expected 'lset key=value ...'".into())),
    }
    let mut nst = Nst::One;
    let mut rates = RateVariation::Equal;
    let mut i = 1;
    while i < toks.len() {
        if toks.get(i + 1) != Some(&"=") || i + 2 >= toks.len() {
            return Err(PhyloError::Lset(format!("expected key=value near '{}'", toks[i])));
        }
        let key = toks[i].to_ascii_lowercase();
        let value = toks[i + 2].to_ascii_lowercase();
        match key.as_str() {
            "nst" => {
                nst = match value.as_str() {
                    "1" => Nst::One,
                    "2" => Nst::Two,
                    "6" => Nst::Six,
                    _ => return Err(PhyloError::IllegalValue { key, value }),
                }
            }
            "rates" => {
                rates = match value.as_str() {
                    "equal" => RateVariation::Equal,
                    "gamma" => RateVariation::Gamma,
                    _ => return Err(PhyloError::IllegalValue { key, value }),
                }
            }
            _ => return Err(PhyloError::UnknownKey(key)),
        }
        i += 3;
    }
    Ok(SubstitutionModel::new(nst, rates))
}
