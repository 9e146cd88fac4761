use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{McmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Nni,
    BranchLength,
    GammaShape,
    Freqs,
    RelRates,
}

impl ProposalKind {
    pub const ALL: [ProposalKind; 5] = [
        ProposalKind::Nni,
        ProposalKind::BranchLength,
        ProposalKind::GammaShape,
        ProposalKind::Freqs,
        ProposalKind::RelRates,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProposalKind::Nni => "nni",
            ProposalKind::BranchLength => "branch_length",
            ProposalKind::GammaShape => "gamma_shape",
            ProposalKind::Freqs => "freqs",
            ProposalKind::RelRates => "rel_rates",
        }
    }
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Prior constants. Topology prior is uniform; freqs and rates get flat
/// Dirichlet priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Mean of the exponential prior on each branch length.
    pub branch_mean: f64,
    /// Mean of the exponential prior on the gamma shape.
    pub shape_mean: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            branch_mean: 0.1,
            shape_mean: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub nruns: usize,
    pub ngen: u64,
    pub samplefreq: u64,
    pub nchains: usize,
    pub heat_lambda: f64,
    pub seed: u64,
    pub filebase: String,
    /// Relative move frequencies. Kinds absent from the map are never
    /// proposed; kinds that do not apply to the model are skipped.
    pub proposal_weights: BTreeMap<ProposalKind, f64>,
    pub priors: Priors,
    /// Window of the multiplier moves, `x' = x·exp(λ(u − 0.5))`.
    pub multiplier_lambda: f64,
    /// Concentration of the Dirichlet moves on freqs and rates.
    pub dirichlet_alpha: f64,
    /// When set, every branch has this length and branch moves are off.
    pub fixed_branch_length: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        let proposal_weights = BTreeMap::from([
            (ProposalKind::Nni, 5.0),
            (ProposalKind::BranchLength, 10.0),
            (ProposalKind::GammaShape, 1.0),
            (ProposalKind::Freqs, 1.0),
            (ProposalKind::RelRates, 1.0),
        ]);
        Self {
            nruns: 1,
            ngen: 10_000,
            samplefreq: 100,
            nchains: 4,
            heat_lambda: 0.1,
            seed: 1,
            filebase: "out".into(),
            proposal_weights,
            priors: Priors::default(),
            multiplier_lambda: 2.0 * 1.2f64.ln(),
            dirichlet_alpha: 300.0,
            fixed_branch_length: None,
        }
    }
}

/// Heat of chain slot `k` (0-based): `1 / (1 + λk)`, so slot 0 is cold.
pub fn heat(lambda: f64, k: usize) -> f64 {
    1.0 / (1.0 + lambda * k as f64)
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(McmcError::Config(m.to_string()));
        if self.nruns < 1 {
            return bad("nruns must be at least 1");
        }
        if self.ngen < 1 {
            return bad("ngen must be at least 1");
        }
        if self.samplefreq < 1 {
            return bad("samplefreq must be at least 1");
        }
        if self.samplefreq > self.ngen {
            return bad("samplefreq must not exceed ngen");
        }
        if self.nchains < 1 {
            return bad("nchains must be at least 1");
        }
        if !(self.heat_lambda > 0.0) || !self.heat_lambda.is_finite() {
            return bad("heat_lambda must be positive");
        }
        if self.filebase.is_empty() || self.filebase.contains(['/', '\\']) {
            return bad("filebase must be a plain file name");
        }
        if self
            .proposal_weights
            .values()
            .any(|&w| !(w > 0.0) || !w.is_finite())
        {
            return bad("proposal weights must be positive");
        }
        if !(self.priors.branch_mean > 0.0) || !(self.priors.shape_mean > 0.0) {
            return bad("prior means must be positive");
        }
        if !(self.multiplier_lambda > 0.0) || !(self.dirichlet_alpha > 0.0) {
            return bad("tuning parameters must be positive");
        }
        if let Some(b) = self.fixed_branch_length {
            if !(b > 0.0) || !b.is_finite() {
                return bad("fixed branch length must be positive");
            }
        }
        Ok(())
    }

    /// Chain heats in slot order.
    pub fn heats(&self) -> Vec<f64> {
        (0..self.nchains).map(|k| heat(self.heat_lambda, k)).collect()
    }

    /// Number of sampled rows per run (generation 0 included).
    pub fn sample_count(&self) -> u64 {
        self.ngen / self.samplefreq + 1
    }

    /// Output file stem of run `run` (1-based): the filebase with the run
    /// number appended.
    pub fn run_stem(&self, run: usize) -> String {
        format!("{}{}", self.filebase, run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heats_follow_incremental_scheme() {
        let c = McmcConfig::default();
        let h = c.heats();
        assert_eq!(h[0], 1.0);
        assert!((h[1] - 1.0 / 1.1).abs() < 1e-15);
        assert!((h[3] - 1.0 / 1.3).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        let mut c = McmcConfig::default();
        c.validate().unwrap();
        c.samplefreq = c.ngen + 1;
        assert!(c.validate().is_err());
        let mut c = McmcConfig::default();
        c.proposal_weights.insert(ProposalKind::Nni, 0.0);
        assert!(c.validate().is_err());
        let c = McmcConfig {
            nchains: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn counts_and_stems() {
        let c = McmcConfig {
            filebase: "primates.nex".into(),
            ..Default::default()
        };
        assert_eq!(c.sample_count(), 101);
        assert_eq!(c.run_stem(2), "primates.nex2");
    }

    #[test]
    fn config_json_uses_snake_case_weights() {
        let c = McmcConfig::default();
        let j = serde_json::to_string(&c).unwrap();
        assert!(j.contains("\"branch_length\":10.0"));
        let back: McmcConfig = serde_json::from_str(&j).unwrap();
        assert_eq!(back, c);
        let partial: McmcConfig = serde_json::from_str(r#"{"ngen": 50, "samplefreq": 5}"#).unwrap();
        assert_eq!(partial.nchains, 4);
    }
}
