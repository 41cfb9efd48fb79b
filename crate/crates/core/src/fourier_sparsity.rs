//! Testing that an unknown distribution's DFT mass lies on a known set S,
//! and learning the coefficients on S when it does.
//!
//! Both variants Poissonize the sample size, reject on an oversized draw,
//! reject when the empirical collision norm exceeds the bound b, and reject
//! when the empirical energy outside S is too large. They differ in the
//! sample-size formula and in the second threshold; each follows its own
//! algorithm box as printed.

use std::collections::BTreeMap;

use crate::dft::{dft_dense, inverse_dft_1d, lattice_dft_counts, normalize_freqs, FourierCoeffs, LatticeBasis, LatticeFourierCoeffs};
use crate::dist_core::{poisson_draw, Pmf, Sampler, VecSampler};
use crate::error::{domain, Result};
use crate::numeric::kahan_sum;
use crate::report::{Run, Stage};
use crate::rng::TestRng;

/// Intermediate quantities of one effective-support test.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparsityStats {
    pub m: u64,
    pub m_prime: u64,
    /// ‖Q′‖².
    pub l2_emp: f64,
    /// ‖Q̂′1_S‖².
    pub in_s_energy: f64,
    /// Left side of the norm check, m′²‖Q′‖² - m′.
    pub norm_lhs: f64,
    /// (3/2)·b·m².
    pub norm_threshold: f64,
    /// Left side of the sparsity check.
    pub sparsity_lhs: f64,
    pub sparsity_threshold: f64,
}

impl SparsityStats {
    /// Copies the statistics into a run under a common prefix.
    pub fn record(&self, run: &mut Run, prefix: &str) {
        run.stat(&format!("{prefix}m"), self.m as f64);
        run.stat(&format!("{prefix}m_prime"), self.m_prime as f64);
        run.stat(&format!("{prefix}l2_emp"), self.l2_emp);
        run.stat(&format!("{prefix}in_s_energy"), self.in_s_energy);
        run.stat(&format!("{prefix}norm_lhs"), self.norm_lhs);
        run.stat(&format!("{prefix}norm_threshold"), self.norm_threshold);
        run.stat(&format!("{prefix}sparsity_lhs"), self.sparsity_lhs);
        run.stat(&format!("{prefix}sparsity_threshold"), self.sparsity_threshold);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SparsityVerdict<C> {
    Reject(Stage),
    Learned(C),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsityOutcome<C> {
    pub verdict: SparsityVerdict<C>,
    pub stats: SparsityStats,
}

impl<C> SparsityOutcome<C> {
    pub fn rejected(&self) -> Option<Stage> {
        match self.verdict {
            SparsityVerdict::Reject(st) => Some(st),
            SparsityVerdict::Learned(_) => None,
        }
    }

    pub fn coefficients(&self) -> Option<&C> {
        match &self.verdict {
            SparsityVerdict::Learned(c) => Some(c),
            SparsityVerdict::Reject(_) => None,
        }
    }
}

/// m = ⌈C(√b/ε² + |S|/(Mε²) + √M)⌉.
pub fn sample_size_1d(c: f64, b: f64, epsilon: f64, s_len: usize, modulus: u64) -> u64 {
    let e2 = epsilon * epsilon;
    (c * (b.sqrt() / e2 + s_len as f64 / (modulus as f64 * e2) + (modulus as f64).sqrt())).ceil() as u64
}

/// m = ⌈C(√b/ε² + √det M)⌉.
pub fn sample_size_lattice(c: f64, b: f64, epsilon: f64, volume: u64) -> u64 {
    (c * (b.sqrt() / (epsilon * epsilon) + (volume as f64).sqrt())).ceil() as u64
}

fn check_params(s_has_zero: bool, epsilon: f64, b: f64) -> Result<()> {
    if !s_has_zero {
        return domain("the frequency set must contain 0");
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return domain(format!("epsilon = {epsilon}, expected a value in (0, 1]"));
    }
    if !(b > 0.0) {
        return domain(format!("norm bound b = {b}, expected b > 0"));
    }
    Ok(())
}

/// Decision of the one-dimensional test from counts on the window
/// `[anchor, anchor + M - 1]` and the planned sample size m.
pub fn evaluate_1d(
    counts: &[u64],
    anchor: i64,
    modulus: u64,
    s: &[i64],
    epsilon: f64,
    b: f64,
    m: u64,
) -> SparsityOutcome<FourierCoeffs> {
    assert_eq!(counts.len() as u64, modulus, "counts must cover the window");
    let m_prime: u64 = counts.iter().sum();
    let mut stats = SparsityStats {
        m,
        m_prime,
        norm_threshold: 1.5 * b * (m as f64).powi(2),
        ..Default::default()
    };
    if m_prime == 0 {
        return SparsityOutcome { verdict: SparsityVerdict::Reject(Stage::SparsityCheck), stats };
    }
    let mp = m_prime as f64;
    let sum_sq = kahan_sum(counts.iter().map(|&x| (x as f64) * (x as f64)));
    stats.l2_emp = sum_sq / (mp * mp);
    stats.norm_lhs = sum_sq - mp;
    let weights: Vec<f64> = counts.iter().map(|&x| x as f64 / mp).collect();
    let coeffs = dft_dense(anchor, &weights, modulus, s);
    stats.in_s_energy = coeffs.energy();
    stats.sparsity_lhs = stats.l2_emp - stats.in_s_energy / modulus as f64;
    stats.sparsity_threshold = 3.0 * epsilon * epsilon * (mp / m as f64).powi(2) + 1.0 / mp;
    let verdict = if stats.norm_lhs > stats.norm_threshold {
        SparsityVerdict::Reject(Stage::NormCheck)
    } else if stats.sparsity_lhs >= stats.sparsity_threshold {
        SparsityVerdict::Reject(Stage::SparsityCheck)
    } else {
        SparsityVerdict::Learned(coeffs)
    };
    SparsityOutcome { verdict, stats }
}

/// One-dimensional effective-support test.
///
/// `sampler` must produce values in `[anchor, anchor + M - 1]` (wrap it in
/// [`crate::dist_core::ModSampler`] to simulate `P mod M`).
#[allow(clippy::too_many_arguments)]
pub fn test_fourier_support_1d(
    sampler: &dyn Sampler,
    modulus: u64,
    anchor: i64,
    s: &[i64],
    epsilon: f64,
    b: f64,
    c: f64,
    rng: &mut TestRng,
) -> Result<SparsityOutcome<FourierCoeffs>> {
    let s = normalize_freqs(modulus, s);
    check_params(s.first() == Some(&0), epsilon, b)?;
    let m = sample_size_1d(c, b, epsilon, s.len(), modulus);
    let m_prime = poisson_draw(m, rng);
    if m_prime > 2 * m {
        return Ok(SparsityOutcome {
            verdict: SparsityVerdict::Reject(Stage::PoissonOverflow),
            stats: SparsityStats { m, m_prime, ..Default::default() },
        });
    }
    let counts = sampler.draw_counts(m_prime, rng);
    let hi = anchor + modulus as i64 - 1;
    if counts.outside(anchor, hi) > 0 {
        return domain(format!("sampler produced values outside [{anchor}, {hi}]"));
    }
    Ok(evaluate_1d(&counts.window(anchor, hi), anchor, modulus, &s, epsilon, b, m))
}

/// Decision of the lattice test from counts over a fundamental domain.
pub fn evaluate_lattice(
    counts: &BTreeMap<Vec<i64>, u64>,
    basis: &LatticeBasis,
    s: &[Vec<i64>],
    epsilon: f64,
    b: f64,
    m: u64,
) -> SparsityOutcome<LatticeFourierCoeffs> {
    let m_prime: u64 = counts.values().sum();
    let mut stats = SparsityStats {
        m,
        m_prime,
        norm_threshold: 1.5 * b * (m as f64).powi(2),
        ..Default::default()
    };
    if m_prime == 0 {
        return SparsityOutcome { verdict: SparsityVerdict::Reject(Stage::SparsityCheck), stats };
    }
    let mp = m_prime as f64;
    let sum_sq = kahan_sum(counts.values().map(|&x| (x as f64) * (x as f64)));
    stats.l2_emp = sum_sq / (mp * mp);
    stats.norm_lhs = sum_sq - mp;
    let coeffs = lattice_dft_counts(counts, basis, s);
    stats.in_s_energy = coeffs.energy();
    // Plancherel over L*/Z^k carries 1/det(M), as 1/M does in one dimension.
    stats.sparsity_lhs = stats.l2_emp - stats.in_s_energy / basis.volume() as f64;
    stats.sparsity_threshold = 3.0 * epsilon * epsilon + 1.0 / mp;
    let verdict = if stats.norm_lhs > stats.norm_threshold {
        SparsityVerdict::Reject(Stage::NormCheck)
    } else if stats.sparsity_lhs >= stats.sparsity_threshold {
        SparsityVerdict::Reject(Stage::SparsityCheck)
    } else {
        SparsityVerdict::Learned(coeffs)
    };
    SparsityOutcome { verdict, stats }
}

/// Lattice effective-support test. `sampler` must produce points of the
/// fundamental domain `center + M·(-1/2, 1/2]^k`.
#[allow(clippy::too_many_arguments)]
pub fn test_fourier_support_lattice(
    sampler: &dyn VecSampler,
    basis: &LatticeBasis,
    center: &[f64],
    s: &[Vec<i64>],
    epsilon: f64,
    b: f64,
    c: f64,
    rng: &mut TestRng,
) -> Result<SparsityOutcome<LatticeFourierCoeffs>> {
    let zero = vec![0i64; basis.k()];
    let has_zero = s.iter().any(|v| basis.dual_key(v) == basis.dual_key(&zero));
    check_params(has_zero, epsilon, b)?;
    let m = sample_size_lattice(c, b, epsilon, basis.volume());
    let m_prime = poisson_draw(m, rng);
    if m_prime > 2 * m {
        return Ok(SparsityOutcome {
            verdict: SparsityVerdict::Reject(Stage::PoissonOverflow),
            stats: SparsityStats { m, m_prime, ..Default::default() },
        });
    }
    let counts = sampler.draw_counts(m_prime, rng);
    if let Some(x) = counts.keys().find(|x| !basis.in_domain(x, center)) {
        return domain(format!("sampler produced {x:?} outside the fundamental domain"));
    }
    Ok(evaluate_lattice(&counts, basis, s, epsilon, b, m))
}

/// Plancherel split of the empirical statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    /// ‖Q′‖² - (1/M)‖Q̂′1_S‖², which equals (1/M)‖Q̂′1_{S̄}‖².
    pub outside_energy: f64,
    /// (1/M)‖Q̂1_S - Q̂′1_S‖², when the exact Q is supplied.
    pub learn_error: Option<f64>,
    /// |‖Q′ - H‖² - (learn_error + outside_energy)| with H the inverse of
    /// Q̂1_S, when the exact Q is supplied.
    pub identity_residual: Option<f64>,
}

/// Splits ‖Q′ - H‖² into its in-S learning error and out-of-S energy.
pub fn plancherel_decomposition(q_emp: &Pmf, s: &[i64], modulus: u64, exact: Option<&Pmf>) -> Decomposition {
    let s = normalize_freqs(modulus, s);
    let emp = dft_dense(q_emp.offset(), q_emp.weights(), modulus, &s);
    let outside_energy = q_emp.l2_sq() - emp.energy() / modulus as f64;
    let (learn_error, identity_residual) = match exact {
        None => (None, None),
        Some(q) => {
            let qhat = dft_dense(q.offset(), q.weights(), modulus, &s);
            let learn = qhat.distance_sq(&emp) / modulus as f64;
            let h = inverse_dft_1d(&qhat, q_emp.offset()).pmf;
            let lo = q_emp.offset();
            let hi = lo + modulus as i64 - 1;
            let dist = kahan_sum((lo..=hi).map(|x| (q_emp.get(x) - h.get(x)).powi(2)));
            (Some(learn), Some((dist - (learn + outside_energy)).abs()))
        }
    };
    Decomposition { outside_energy, learn_error, identity_residual }
}
