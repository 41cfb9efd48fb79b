//! Fixtures shared by the benchmarks.

use disttest_core::dist_core::PmfSampler;
use disttest_core::{Counts, Pmf, RngTree, Sampler, SiirvSpec};

/// Histogram of `m` draws from Bin(n, p) on a fixed seed.
pub fn binomial_counts(n: u64, p: f64, m: u64) -> Counts {
    let s = PmfSampler::from_pmf(&Pmf::binomial(n, p)).expect("binomial is normalized");
    s.draw_counts(m, &mut RngTree::new(7).child("bench").rng())
}

/// n summands on {0, 1, 2} with slowly varying weights.
pub fn ramp_siirv(n: usize) -> SiirvSpec {
    let summands = (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) / n as f64;
            let q = [0.2 + 0.3 * t, 0.5 - 0.2 * t, 0.3 - 0.1 * t];
            q.to_vec()
        })
        .collect();
    SiirvSpec::new(3, summands).expect("weights sum to one")
}
