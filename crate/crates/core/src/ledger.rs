//! The constant ledger.
//!
//! Every universal constant used by the testers lives here, is serialized
//! into each report, and can be overridden from a JSON file named by the
//! `DISTTEST_LEDGER` environment variable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEDGER_ENV: &str = "DISTTEST_LEDGER";

/// How the lattice tester's effective-support check decides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PmdSupportRule {
    /// Reject if any sample falls outside the fundamental domain.
    Any,
    /// Reject if the outside count reaches `(9/40)·ε·m`, as for SIIRVs.
    Count,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ledger {
    /// Sample-size constant of the Fourier support tests (1-D and lattice).
    pub fourier_c: f64,
    /// Width constant of the SIIRV frequency set.
    pub c_prime: f64,
    /// Constant in the SIIRV coefficient threshold delta.
    pub c_double_prime: f64,
    /// Multiplier of |S|/eps^2 for empirical learning.
    pub empirical_c: f64,
    /// Effective-support check uses ceil(support_c / eps) samples.
    pub support_c: f64,
    /// L2 identity tester constant.
    pub l2_c: f64,
    /// Moment samples for the lattice tester: pmd_moment_c * k^4.
    pub pmd_moment_c: f64,
    /// Scale of the lattice columns and of the dual-ball radius.
    pub lattice_c: f64,
    pub pmd_support_rule: PmdSupportRule,
    /// Under the `any` rule the lattice support check draws
    /// ceil(pmd_support_c / eps) samples.
    pub pmd_support_c: f64,
    /// Moment samples for the log-concave tester.
    pub lc_moment_samples: u64,
    /// Window constant: M = 1 + 2 ceil(lc_interval_c * sigma * ln(1/eps)).
    pub lc_interval_c: f64,
    /// Frequency cutoff constant: |xi| <= lc_freq_c * ln(1/eps)^2 / eps^2.
    pub lc_freq_c: f64,
    /// Final-stage sample constant.
    pub lc_final_c: f64,
    /// MLE stage uses lc_mle_c * ln(M/eps) / eps^(5/2) samples.
    pub lc_mle_c: f64,
    /// Constant of the log-concave Fourier tail cutoff.
    pub lc_tail_theta: f64,
    pub mle_max_iter: u64,
    pub mle_tol: f64,
    /// PBD projection switches to the shifted-binomial fit above alpha/eps^2.
    pub pbd_alpha: f64,
    /// Cover radius, as a fraction of eps, for total-variation projection.
    pub tv_cover_fraction: f64,
    pub cover_budget: u64,
    pub candidate_budget: u64,
}

impl Default for Ledger {
    fn default() -> Self {
        Ledger {
            fourier_c: 2000.0,
            c_prime: 2.0,
            c_double_prime: 10.0,
            empirical_c: 4.0,
            support_c: 720.0,
            l2_c: 61.0,
            pmd_moment_c: 50.0,
            lattice_c: 2.0,
            pmd_support_rule: PmdSupportRule::Any,
            pmd_support_c: 3.0,
            lc_moment_samples: 200,
            lc_interval_c: 2.0,
            lc_freq_c: 2.0,
            lc_final_c: 10.0,
            lc_mle_c: 20.0,
            lc_tail_theta: 100.0 / (std::f64::consts::PI * std::f64::consts::PI),
            mle_max_iter: 100_000,
            mle_tol: 1e-8,
            pbd_alpha: 0.5,
            tv_cover_fraction: 0.25,
            cover_budget: 5_000_000,
            candidate_budget: 20_000_000,
        }
    }
}

impl Ledger {
    pub fn from_json(text: &str) -> Result<Self> {
        let ledger: Ledger = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("ledger: {e}")))?;
        ledger.validate()?;
        Ok(ledger)
    }

    /// Defaults, overridden by the file named in `DISTTEST_LEDGER` if set.
    pub fn from_env() -> Result<Self> {
        match std::env::var(LEDGER_ENV) {
            Ok(path) if !path.is_empty() => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("ledger file {path}: {e}")))?;
                Self::from_json(&text)
            }
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fourier_c", self.fourier_c),
            ("c_prime", self.c_prime),
            ("c_double_prime", self.c_double_prime),
            ("empirical_c", self.empirical_c),
            ("support_c", self.support_c),
            ("l2_c", self.l2_c),
            ("pmd_moment_c", self.pmd_moment_c),
            ("lattice_c", self.lattice_c),
            ("pmd_support_c", self.pmd_support_c),
            ("lc_interval_c", self.lc_interval_c),
            ("lc_freq_c", self.lc_freq_c),
            ("lc_final_c", self.lc_final_c),
            ("lc_mle_c", self.lc_mle_c),
            ("lc_tail_theta", self.lc_tail_theta),
            ("mle_tol", self.mle_tol),
            ("pbd_alpha", self.pbd_alpha),
            ("tv_cover_fraction", self.tv_cover_fraction),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("ledger field {name} must be positive, got {v}")));
            }
        }
        if self.lc_moment_samples < 2 {
            return Err(Error::Config("ledger field lc_moment_samples must be at least 2".into()));
        }
        Ok(())
    }

    /// Sample count of the effective-support check at accuracy `eps`.
    pub fn support_samples(&self, eps: f64) -> u64 {
        (self.support_c / eps).ceil() as u64
    }
}
