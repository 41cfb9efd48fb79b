//! Reference computations for the acceptance suite. Written directly from
//! definitions and kept independent of the library's own routines.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Σ_x w(x) exp(-2iπ ξ x / M), summed term by term.
pub fn naive_dft(offset: i64, w: &[f64], m: u64, xi: i64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, &v) in w.iter().enumerate() {
        let x = offset + j as i64;
        let r = (xi as i128 * x as i128).rem_euclid(m as i128) as f64;
        acc += Complex64::from_polar(v, -2.0 * PI * r / m as f64);
    }
    acc
}

/// Characteristic function of a sum of independent summands at frequency
/// ξ/M, as the product of the summands' transforms.
pub fn siirv_transform(summands: &[Vec<f64>], m: u64, xi: i64) -> Complex64 {
    summands.iter().map(|q| naive_dft(0, q, m, xi)).product()
}

/// Weights of `w` (starting at `offset`) folded onto [0, M).
pub fn fold(offset: i64, w: &[f64], m: u64) -> Vec<f64> {
    let mut out = vec![0.0; m as usize];
    for (j, &v) in w.iter().enumerate() {
        out[(offset + j as i64).rem_euclid(m as i64) as usize] += v;
    }
    out
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// ½ Σ (√p - √q)² over a common window.
pub fn hellinger_sq(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum::<f64>()
}

/// Binomial pmf by the multiplicative recurrence from p(0).
pub fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    let mut logc = 0.0f64;
    for (k, v) in w.iter_mut().enumerate() {
        if k > 0 {
            logc += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        *v = (logc + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
    }
    w
}

/// Positive on a contiguous range and p(j)² ≥ p(j-1)p(j+1) inside it.
pub fn is_logconcave(w: &[f64], rel_tol: f64) -> bool {
    let Some(lo) = w.iter().position(|&x| x > 0.0) else { return false };
    let hi = w.iter().rposition(|&x| x > 0.0).unwrap();
    if w[lo..=hi].iter().any(|&x| x <= 0.0) {
        return false;
    }
    (lo + 1..hi).all(|j| w[j] * w[j] >= w[j - 1] * w[j + 1] * (1.0 - rel_tol))
}

/// First differences change sign at most once, from up to down.
pub fn is_unimodal(w: &[f64], tol: f64) -> bool {
    let mut descending = false;
    for pair in w.windows(2) {
        let d = pair[1] - pair[0];
        if d < -tol {
            descending = true;
        } else if d > tol && descending {
            return false;
        }
    }
    true
}

/// Mean log-likelihood of counts under a pmf on the same window.
pub fn mean_loglik(counts: &[u64], p: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(p)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &q)| c as f64 * q.ln())
        .sum::<f64>()
        / total as f64
}

/// Best mean log-likelihood over log-concave pmfs on the window of
/// `counts`, for windows of at most five points.
///
/// log p is parametrized by its first slope s and the nonnegative slope
/// decrements d_1.. d_{L-2}; every such choice is concave. A coarse grid
/// picks the start, then compass search with step halving polishes it.
/// In these coordinates the objective is concave and the feasible set is
/// a box, so compass search cannot stall at a non-optimal corner.
pub fn logconcave_grid_oracle(counts: &[u64]) -> f64 {
    let len = counts.len();
    assert!((2..=5).contains(&len));
    let nvar = len - 1;
    let eval = |v: &[f64]| -> f64 {
        let mut phi = vec![0.0; len];
        let mut slope = v[0];
        for j in 1..len {
            if j >= 2 {
                slope -= v[j - 1];
            }
            phi[j] = phi[j - 1] + slope;
        }
        let top = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = phi.iter().map(|f| (f - top).exp()).sum();
        let p: Vec<f64> = phi.iter().map(|f| (f - top).exp() / z).collect();
        mean_loglik(counts, &p)
    };
    let slopes: Vec<f64> = (-24..=24).map(|i| i as f64 * 0.5).collect();
    let decs: Vec<f64> = (0..=24).map(|i| i as f64 * 0.5).collect();
    let mut best = vec![0.0; nvar];
    let mut best_val = f64::NEG_INFINITY;
    let mut cur = vec![0.0; nvar];
    fn walk(i: usize, cur: &mut Vec<f64>, slopes: &[f64], decs: &[f64], f: &dyn Fn(&[f64]) -> f64, best: &mut Vec<f64>, best_val: &mut f64) {
        if i == cur.len() {
            let v = f(cur);
            if v > *best_val {
                *best_val = v;
                best.clone_from(cur);
            }
            return;
        }
        let grid = if i == 0 { slopes } else { decs };
        for &g in grid {
            cur[i] = g;
            walk(i + 1, cur, slopes, decs, f, best, best_val);
        }
    }
    walk(0, &mut cur, &slopes, &decs, &eval, &mut best, &mut best_val);

    let mut step = 0.25;
    while step > 1e-11 {
        let mut improved = false;
        for i in 0..nvar {
            for dir in [1.0, -1.0] {
                let mut trial = best.clone();
                trial[i] += dir * step;
                if i > 0 && trial[i] < 0.0 {
                    trial[i] = 0.0;
                }
                let v = eval(&trial);
                if v > best_val + 1e-15 {
                    best_val = v;
                    best = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best_val
}

/// Lower bound on the TV distance between ½δ_x + ½δ_{x+g+1} and any
/// unimodal law. With a = Q(x), b = Q(x+g+1), unimodality forces each of
/// the g points between them to carry at least min(a, b), so
/// a + b + g·min(a, b) ≤ 1 and TV = ½(|½-a| + |½-b| + 1 - a - b).
/// Minimizing over that region gives g / (2(g+1)), attained at
/// min(a, b) = 1/(2(g+1)), max(a, b) = ½.
pub fn two_spike_unimodal_tv(gap: u64) -> f64 {
    let g = gap as f64;
    // Verify the closed form against a dense scan of the feasible region.
    let mut scan = f64::INFINITY;
    let steps = 4000;
    for i in 0..=steps {
        let a = 0.5 * i as f64 / steps as f64;
        let b_max = (1.0 - a - g * a).min(1.0 - a);
        if b_max < a {
            continue;
        }
        for b in [a, b_max.min(0.5), b_max] {
            if b >= a && b <= b_max {
                let tv = 0.5 * ((0.5 - a).abs() + (0.5 - b).abs() + 1.0 - a - b);
                scan = scan.min(tv);
            }
        }
    }
    let closed = g / (2.0 * (g + 1.0));
    assert!(scan >= closed - 1e-3, "scan {scan} below closed form {closed}");
    closed
}

/// Lower bound on the TV distance from the uniform law on {0, ..., n}
/// to any law with variance at most n/4 (every PBD on n trials, and so the
/// first coordinate of every (n, 2)-PMD). For the event A = {|X - μ| ≥ t}
/// Chebyshev gives Q(A) ≤ n/(4t²), while at most ⌊2t⌋ + 1 integers lie
/// within distance t of any μ, so P(A) ≥ 1 - (⌊2t⌋ + 1)/(n + 1).
pub fn uniform_vs_bounded_variance_tv(n: u64) -> f64 {
    let nf = n as f64;
    (1..=4 * n)
        .map(|i| {
            let t = i as f64 * 0.25;
            let p_a = 1.0 - ((2.0 * t).floor() + 1.0) / (nf + 1.0);
            p_a - nf / (4.0 * t * t)
        })
        .fold(0.0, f64::max)
}

/// Exact minimum TV distance from `p` (weights from `offset`) to the
/// uniform laws on intervals with length in [min_len, max_len].
pub fn min_tv_to_intervals(offset: i64, p: &[f64], min_len: u64, max_len: u64) -> f64 {
    let lo = offset - max_len as i64;
    let hi = offset + p.len() as i64;
    let get = |x: i64| -> f64 {
        let j = x - offset;
        if j >= 0 && (j as usize) < p.len() {
            p[j as usize]
        } else {
            0.0
        }
    };
    let mut best = f64::INFINITY;
    for len in min_len..=max_len {
        for a in lo..=hi {
            let u = 1.0 / len as f64;
            let mut l1 = 0.0;
            for x in (lo.min(a))..=(hi.max(a + len as i64)) {
                let q = if x >= a && x < a + len as i64 { u } else { 0.0 };
                l1 += (get(x) - q).abs();
            }
            best = best.min(0.5 * l1);
        }
    }
    best
}

/// Integer determinant by cofactor expansion (k ≤ 4).
pub fn int_det(m: &[Vec<i64>]) -> i128 {
    let k = m.len();
    if k == 1 {
        return m[0][0] as i128;
    }
    (0..k)
        .map(|j| {
            let minor: Vec<Vec<i64>> = m[1..].iter().map(|r| r.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, &v)| v).collect()).collect();
            let sign = if j % 2 == 0 { 1 } else { -1 };
            sign * m[0][j] as i128 * int_det(&minor)
        })
        .sum()
}
