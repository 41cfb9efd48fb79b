//! Discrete Fourier transforms modulo an integer and modulo an integer
//! lattice, with e(x) = exp(-2iπx).
//!
//! Frequencies are stored as integers (or integer vectors `v` naming the dual
//! point (Mᵀ)⁻¹v), and every phase is reduced modulo 1 with exact integer
//! arithmetic before it reaches floating point.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::dist_core::{MultiPmf, Pmf};
use crate::error::{Error, Result};
use crate::report::{Coefficient, LatticeCoefficient};

/// e(x) = exp(-2iπx).
pub fn e(x: f64) -> Complex64 {
    let f = x - x.floor();
    Complex64::from_polar(1.0, -2.0 * PI * f)
}

/// e(r/q) for integers, with r reduced modulo q first.
pub fn e_ratio(r: i128, q: i128) -> Complex64 {
    let q_abs = q.abs();
    let r = if q < 0 { -r } else { r };
    let r = r.rem_euclid(q_abs);
    Complex64::from_polar(1.0, -2.0 * PI * (r as f64 / q_abs as f64))
}

/// Compensated complex accumulator.
#[derive(Clone, Copy, Default)]
struct KahanC {
    sum: Complex64,
    c: Complex64,
}

impl KahanC {
    fn add(&mut self, v: Complex64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Twiddle table e(r/M) for r in [0, M).
fn twiddles(m: u64) -> Vec<Complex64> {
    (0..m).map(|r| e_ratio(r as i128, m as i128)).collect()
}

/// Sparse Fourier coefficients on a subset of [M].
#[derive(Clone, Debug, PartialEq)]
pub struct FourierCoeffs {
    modulus: u64,
    entries: BTreeMap<i64, Complex64>,
}

impl FourierCoeffs {
    pub fn new(modulus: u64, entries: BTreeMap<i64, Complex64>) -> Self {
        FourierCoeffs { modulus, entries }
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Coefficient at ξ (reduced mod M); zero when absent.
    pub fn get(&self, xi: i64) -> Complex64 {
        let xi = xi.rem_euclid(self.modulus as i64);
        self.entries.get(&xi).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.entries.iter().map(|(&x, &c)| (x, c))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Σ |c(ξ)|² over the stored frequencies.
    pub fn energy(&self) -> f64 {
        self.entries.values().map(|c| c.norm_sqr()).sum()
    }

    /// Σ_ξ |self(ξ) - other(ξ)|² over the union of stored frequencies.
    pub fn distance_sq(&self, other: &FourierCoeffs) -> f64 {
        let keys: std::collections::BTreeSet<i64> =
            self.entries.keys().chain(other.entries.keys()).copied().collect();
        keys.into_iter()
            .map(|x| (self.get(x) - other.get(x)).norm_sqr())
            .sum()
    }

    pub fn to_report(&self) -> Vec<Coefficient> {
        self.iter()
            .map(|(xi, c)| Coefficient { xi, re: c.re, im: c.im })
            .collect()
    }
}

/// Normalizes a frequency list: reduced mod M, sorted, deduplicated.
pub fn normalize_freqs(m: u64, s: &[i64]) -> Vec<i64> {
    let mut v: Vec<i64> = s.iter().map(|x| x.rem_euclid(m as i64)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Σ_x w(x) e(ξx/M) for dense weights starting at `offset`.
pub fn dft_dense(offset: i64, weights: &[f64], m: u64, s: &[i64]) -> FourierCoeffs {
    assert!(m >= 1, "modulus must be positive");
    let tw = twiddles(m);
    let mi = m as i128;
    let mut entries = BTreeMap::new();
    for xi in normalize_freqs(m, s) {
        let mut acc = KahanC::default();
        let step = xi as i128;
        let mut r = (step * offset as i128).rem_euclid(mi);
        for &w in weights {
            if w != 0.0 {
                acc.add(tw[r as usize] * w);
            }
            r += step;
            if r >= mi {
                r -= mi;
            }
        }
        entries.insert(xi, acc.sum);
    }
    FourierCoeffs { modulus: m, entries }
}

pub fn dft_1d(p: &Pmf, m: u64, s: &[i64]) -> FourierCoeffs {
    dft_dense(p.offset(), p.weights(), m, s)
}

/// All frequencies of [M].
pub fn full_set(m: u64) -> Vec<i64> {
    (0..m as i64).collect()
}

/// Result of inverting a (possibly truncated) coefficient set.
#[derive(Clone, Debug)]
pub struct Inversion {
    pub pmf: Pmf,
    /// Largest |imaginary part| among the reconstructed values.
    pub max_imag: f64,
    /// Set when the imaginary residue is not negligible.
    pub flagged: bool,
}

/// F(x) = (1/M) Σ_ξ e(-ξx/M) c(ξ) for x in [anchor, anchor + M - 1].
/// Absent coefficients count as zero.
pub fn inverse_dft_1d(c: &FourierCoeffs, anchor: i64) -> Inversion {
    let m = c.modulus();
    let tw = twiddles(m);
    let mi = m as i128;
    let mut re = vec![0.0; m as usize];
    let mut im = vec![0.0; m as usize];
    for (i, (r_out, i_out)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
        let x = anchor as i128 + i as i128;
        let mut acc = KahanC::default();
        for (xi, v) in c.iter() {
            let r = (-(xi as i128) * x).rem_euclid(mi);
            acc.add(tw[r as usize] * v);
        }
        *r_out = acc.sum.re / m as f64;
        *i_out = acc.sum.im / m as f64;
    }
    let max_imag = im.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    Inversion {
        pmf: Pmf::pseudo(anchor, re),
        max_imag,
        flagged: max_imag >= 1e-6,
    }
}

/// |‖p‖² - (1/M)‖p̂‖²| over the full frequency set.
pub fn plancherel_residual(p: &Pmf, m: u64) -> f64 {
    let c = dft_1d(p, m, &full_set(m));
    (p.l2_sq() - c.energy() / m as f64).abs()
}

/// Closed-form DFT of a piecewise log-linear function.
///
/// Each piece `(a, b, alpha, beta)` contributes Σ_{j=a}^{b} exp(alpha + beta j)
/// e(ξj/M), summed as a geometric series with ratio exp(beta)·e(ξ/M). The
/// series is evaluated through complex expm1 to avoid cancellation, and
/// falls back to direct summation when the ratio is within 1e-8 of one.
pub fn dft_piecewise_exponential(pieces: &[(i64, i64, f64, f64)], m: u64, s: &[i64]) -> FourierCoeffs {
    let mut entries = BTreeMap::new();
    for xi in normalize_freqs(m, s) {
        let mut acc = KahanC::default();
        // ξ/M reduced to (-1/2, 1/2] so the exponent has a small imaginary part.
        let mut frac = xi as f64 / m as f64;
        if frac > 0.5 {
            frac -= 1.0;
        }
        for &(a, b, alpha, beta) in pieces {
            let len = (b - a + 1) as f64;
            let z = Complex64::new(beta, -2.0 * PI * frac);
            let first = Complex64::from_polar((alpha + beta * a as f64).exp(), 0.0)
                * e_ratio(xi as i128 * a as i128, m as i128);
            let denom = cexpm1(z);
            if denom.norm() < 1e-8 {
                for j in a..=b {
                    acc.add(
                        e_ratio(xi as i128 * j as i128, m as i128) * (alpha + beta * j as f64).exp(),
                    );
                }
            } else {
                acc.add(first * (cexpm1(z * len) / denom));
            }
        }
        entries.insert(xi, acc.sum);
    }
    FourierCoeffs { modulus: m, entries }
}

/// exp(z) - 1 without cancellation near z = 0.
fn cexpm1(z: Complex64) -> Complex64 {
    let (x, y) = (z.re, z.im);
    let s = (y / 2.0).sin();
    let re = x.exp_m1() * y.cos() - 2.0 * s * s;
    let im = x.exp() * y.sin();
    Complex64::new(re, im)
}

fn det_bareiss(m: &[Vec<i64>]) -> i128 {
    let n = m.len();
    if n == 0 {
        return 1;
    }
    let mut a: Vec<Vec<i128>> = m
        .iter()
        .map(|r| r.iter().map(|&x| x as i128).collect())
        .collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if a[k][k] == 0 {
            match (k + 1..n).find(|&i| a[i][k] != 0) {
                Some(i) => {
                    a.swap(i, k);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}

/// Integer k×k lattice basis (columns generate L = M Z^k).
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeBasis {
    m: Vec<Vec<i64>>,
    det: i64,
    /// Adjugate: M⁻¹ = adj / det.
    adj: Vec<Vec<i64>>,
    inv: Vec<Vec<f64>>,
}

impl LatticeBasis {
    pub fn new(m: Vec<Vec<i64>>) -> Result<Self> {
        let k = m.len();
        if k == 0 || m.iter().any(|r| r.len() != k) {
            return Err(Error::Geometry("lattice basis must be a nonempty square matrix".into()));
        }
        let det = det_bareiss(&m);
        if det == 0 {
            return Err(Error::Geometry("lattice basis is singular".into()));
        }
        let det = i64::try_from(det).map_err(|_| Error::Geometry("determinant overflows i64".into()))?;
        let mut adj = vec![vec![0i64; k]; k];
        if k == 1 {
            adj[0][0] = 1;
        } else {
            for i in 0..k {
                for j in 0..k {
                    let minor: Vec<Vec<i64>> = (0..k)
                        .filter(|&r| r != j)
                        .map(|r| (0..k).filter(|&c| c != i).map(|c| m[r][c]).collect())
                        .collect();
                    let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
                    adj[i][j] = (sign * det_bareiss(&minor)) as i64;
                }
            }
        }
        let inv = adj
            .iter()
            .map(|r| r.iter().map(|&x| x as f64 / det as f64).collect())
            .collect();
        Ok(LatticeBasis { m, det, adj, inv })
    }

    pub fn diagonal(d: &[i64]) -> Result<Self> {
        let k = d.len();
        Self::new(
            (0..k)
                .map(|i| (0..k).map(|j| if i == j { d[i] } else { 0 }).collect())
                .collect(),
        )
    }

    pub fn k(&self) -> usize {
        self.m.len()
    }

    pub fn matrix(&self) -> &[Vec<i64>] {
        &self.m
    }

    pub fn det(&self) -> i64 {
        self.det
    }

    /// Number of points in a fundamental domain.
    pub fn volume(&self) -> u64 {
        self.det.unsigned_abs()
    }

    pub fn inverse(&self) -> &[Vec<f64>] {
        &self.inv
    }

    /// Column norms, for Hadamard's bound det ≤ Π‖M_i‖.
    pub fn column_norms(&self) -> Vec<f64> {
        let k = self.k();
        (0..k)
            .map(|j| (0..k).map(|i| (self.m[i][j] as f64).powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    /// vᵀ adj(M) x, so that ξ·x = this / det for ξ = (Mᵀ)⁻¹v.
    fn dual_numerator(&self, v: &[i64], x: &[i64]) -> i128 {
        let k = self.k();
        let mut t = 0i128;
        for i in 0..k {
            if v[i] == 0 {
                continue;
            }
            let mut row = 0i128;
            for j in 0..k {
                row += self.adj[i][j] as i128 * x[j] as i128;
            }
            t += v[i] as i128 * row;
        }
        t
    }

    /// e(ξ·x) for the dual point named by v.
    pub fn phase(&self, v: &[i64], x: &[i64]) -> Complex64 {
        e_ratio(self.dual_numerator(v, x), self.det as i128)
    }

    /// Canonical key of v modulo Mᵀ Z^k: adj(M)ᵀv reduced mod |det|.
    pub fn dual_key(&self, v: &[i64]) -> Vec<i64> {
        let k = self.k();
        let d = self.det.unsigned_abs() as i128;
        (0..k)
            .map(|j| {
                let s: i128 = (0..k).map(|i| self.adj[i][j] as i128 * v[i] as i128).sum();
                s.rem_euclid(d) as i64
            })
            .collect()
    }

    /// Representative of x in center + M·(-1/2, 1/2]^k.
    pub fn fundamental_reduce(&self, x: &[i64], center: &[f64]) -> Vec<i64> {
        let k = self.k();
        let diff: Vec<f64> = (0..k).map(|i| x[i] as f64 - center[i]).collect();
        let b: Vec<i64> = (0..k)
            .map(|i| {
                let t: f64 = (0..k).map(|j| self.adj[i][j] as f64 * diff[j]).sum::<f64>()
                    / self.det as f64;
                (0.5 - t).floor() as i64
            })
            .collect();
        (0..k)
            .map(|i| x[i] + (0..k).map(|j| self.m[i][j] * b[j]).sum::<i64>())
            .collect()
    }

    /// Whether x lies in center + M·(-1/2, 1/2]^k.
    pub fn in_domain(&self, x: &[i64], center: &[f64]) -> bool {
        self.fundamental_reduce(x, center) == x
    }
}

/// Integer vectors with ‖v‖ ≤ radius, one per class of L*/Z^k, shortest
/// representatives first (ties broken lexicographically).
pub fn lattice_dual_ball(basis: &LatticeBasis, radius: f64) -> Vec<Vec<i64>> {
    let k = basis.k();
    let r = radius.max(0.0).floor() as i64;
    let r2 = radius * radius;
    let mut pts: Vec<(i64, Vec<i64>)> = Vec::new();
    let mut v = vec![-r; k];
    loop {
        let n2: i64 = v.iter().map(|x| x * x).sum();
        if (n2 as f64) <= r2 + 1e-9 {
            pts.push((n2, v.clone()));
        }
        let mut i = 0;
        loop {
            if i == k {
                pts.sort();
                let mut seen = HashSet::new();
                return pts
                    .into_iter()
                    .filter(|(_, v)| seen.insert(basis.dual_key(v)))
                    .map(|(_, v)| v)
                    .collect();
            }
            v[i] += 1;
            if v[i] > r {
                v[i] = -r;
                i += 1;
            } else {
                break;
            }
        }
    }
}

/// One integer representative v of every class of L*/Z^k (|det M| of them),
/// taken from the fundamental domain of Mᵀ centred at the origin.
pub fn dual_representatives(basis: &LatticeBasis) -> Vec<Vec<i64>> {
    let k = basis.k();
    let m = basis.matrix();
    let mt: Vec<Vec<i64>> = (0..k).map(|i| (0..k).map(|j| m[j][i]).collect()).collect();
    let dual = LatticeBasis::new(mt).expect("transpose of a nonsingular basis");
    // The parallelepiped Mᵀ(-1/2, 1/2]^k fits in this box.
    let half: Vec<i64> = (0..k)
        .map(|i| (0..k).map(|j| m[j][i].abs()).sum::<i64>() / 2 + 1)
        .collect();
    let center = vec![0.0; k];
    let mut out = Vec::with_capacity(basis.volume() as usize);
    let mut v: Vec<i64> = half.iter().map(|h| -h).collect();
    loop {
        if dual.in_domain(&v, &center) {
            out.push(v.clone());
        }
        let mut i = 0;
        loop {
            if i == k {
                return out;
            }
            v[i] += 1;
            if v[i] > half[i] {
                v[i] = -half[i];
                i += 1;
            } else {
                break;
            }
        }
    }
}

/// Lattice Fourier coefficients, keyed by the integer vector v.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeFourierCoeffs {
    basis: LatticeBasis,
    entries: Vec<(Vec<i64>, Complex64)>,
}

impl LatticeFourierCoeffs {
    pub fn basis(&self) -> &LatticeBasis {
        &self.basis
    }

    pub fn entries(&self) -> &[(Vec<i64>, Complex64)] {
        &self.entries
    }

    pub fn get(&self, v: &[i64]) -> Option<Complex64> {
        let key = self.basis.dual_key(v);
        self.entries
            .iter()
            .find(|(w, _)| self.basis.dual_key(w) == key)
            .map(|(_, c)| *c)
    }

    pub fn energy(&self) -> f64 {
        self.entries.iter().map(|(_, c)| c.norm_sqr()).sum()
    }

    pub fn to_report(&self) -> Vec<LatticeCoefficient> {
        self.entries
            .iter()
            .map(|(v, c)| LatticeCoefficient { v: v.clone(), re: c.re, im: c.im })
            .collect()
    }
}

/// Σ_x w(x) e(ξ·x) for weighted points.
pub fn lattice_dft_weighted(points: &[(&Vec<i64>, f64)], basis: &LatticeBasis, s: &[Vec<i64>]) -> LatticeFourierCoeffs {
    let entries = s
        .iter()
        .map(|v| {
            let mut acc = KahanC::default();
            for &(x, w) in points {
                acc.add(basis.phase(v, x) * w);
            }
            (v.clone(), acc.sum)
        })
        .collect();
    LatticeFourierCoeffs { basis: basis.clone(), entries }
}

pub fn lattice_dft(p: &MultiPmf, basis: &LatticeBasis, s: &[Vec<i64>]) -> LatticeFourierCoeffs {
    let pts: Vec<_> = p.iter().collect();
    lattice_dft_weighted(&pts, basis, s)
}

/// DFT of the empirical distribution of vector counts.
pub fn lattice_dft_counts(
    counts: &BTreeMap<Vec<i64>, u64>,
    basis: &LatticeBasis,
    s: &[Vec<i64>],
) -> LatticeFourierCoeffs {
    let total: u64 = counts.values().sum();
    let t = total.max(1) as f64;
    let pts: Vec<_> = counts.iter().map(|(x, &c)| (x, c as f64 / t)).collect();
    lattice_dft_weighted(&pts, basis, s)
}
