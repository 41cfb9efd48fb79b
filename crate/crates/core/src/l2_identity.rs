//! Tolerant L2 identity testing against a known (pseudo-)distribution.

use crate::dist_core::{poisson_draw, Counts, Pmf, Sampler};
use crate::error::{domain, Result};
use crate::numeric::kahan_sum;
use crate::rng::TestRng;

#[derive(Clone, Debug, PartialEq)]
pub struct L2Statistic {
    /// Z = Σ (X_i - m P*(i))² - X_i.
    pub z: f64,
    pub m: u64,
    pub m_prime: u64,
    /// Per-symbol counts on the window the statistic was computed over.
    pub counts: Vec<u64>,
}

impl L2Statistic {
    /// Z / m², the unbiased estimate of ‖P - P*‖².
    pub fn normalized(&self) -> f64 {
        self.z / (self.m as f64).powi(2)
    }
}

/// Z for counts aligned with `pstar`'s window.
pub fn compute_statistic(counts: &[u64], m: u64, pstar: &Pmf) -> Result<L2Statistic> {
    if counts.len() != pstar.len() {
        return domain(format!(
            "counts cover {} symbols but the reference covers {}",
            counts.len(),
            pstar.len()
        ));
    }
    let mf = m as f64;
    let z = kahan_sum(counts.iter().zip(pstar.weights()).map(|(&x, &p)| {
        let x = x as f64;
        (x - mf * p).powi(2) - x
    }));
    Ok(L2Statistic {
        z,
        m,
        m_prime: counts.iter().sum(),
        counts: counts.to_vec(),
    })
}

/// Z for a sparse histogram; symbols outside `pstar`'s window have P* = 0.
pub fn statistic_from_counts(counts: &Counts, m: u64, pstar: &Pmf) -> L2Statistic {
    let lo = counts.min().map_or(pstar.offset(), |x| x.min(pstar.offset()));
    let hi = counts.max().map_or(pstar.hi(), |x| x.max(pstar.hi()));
    let dense = counts.window(lo, hi);
    let aligned = Pmf::pseudo(lo, pstar.window(lo, hi));
    compute_statistic(&dense, m, &aligned).expect("aligned by construction")
}

#[derive(Clone, Debug, PartialEq)]
pub struct L2Outcome {
    pub accept: bool,
    pub stat: L2Statistic,
    pub threshold: f64,
}

/// Sample count ⌈c√b/ε²⌉.
pub fn l2_sample_size(c: f64, b: f64, epsilon: f64) -> u64 {
    (c * b.sqrt() / (epsilon * epsilon)).ceil() as u64
}

/// Poissonized tester: accepts when ‖P - P*‖ ≤ ε and rejects when
/// ‖P - P*‖ ≥ 2ε, each with probability at least 3/4, given
/// b ≥ max(‖P‖², ‖P*‖²).
///
/// Rejects iff Z > 3m²ε², which equals √Z/m > √3·ε for Z ≥ 0 and is
/// well defined for negative Z.
pub fn tolerant_l2_test(
    sampler: &dyn Sampler,
    pstar: &Pmf,
    epsilon: f64,
    b: f64,
    c: f64,
    rng: &mut TestRng,
) -> Result<L2Outcome> {
    if !(b > 0.0) {
        return domain(format!("norm bound b = {b}, expected b > 0"));
    }
    if !(epsilon > 0.0) {
        return domain(format!("epsilon = {epsilon}, expected epsilon > 0"));
    }
    let m = l2_sample_size(c, b, epsilon);
    let m_prime = poisson_draw(m, rng);
    let counts = sampler.draw_counts(m_prime, rng);
    let stat = statistic_from_counts(&counts, m, pstar);
    Ok(decide(stat, epsilon))
}

/// Applies the Z > 3m²ε² rule.
pub fn decide(stat: L2Statistic, epsilon: f64) -> L2Outcome {
    let threshold = 3.0 * (stat.m as f64).powi(2) * epsilon * epsilon;
    L2Outcome {
        accept: stat.z <= threshold,
        stat,
        threshold,
    }
}

/// (Z ≤ 2.9m²ε², Z ≥ 3.1m²ε²).
pub fn strong_thresholds(stat: &L2Statistic, epsilon: f64) -> (bool, bool) {
    let unit = (stat.m as f64).powi(2) * epsilon * epsilon;
    (stat.z <= 2.9 * unit, stat.z >= 3.1 * unit)
}
