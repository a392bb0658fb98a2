//! Brute-force and iterative reference solvers shared by the integration
//! tests. None of these call into the library routine they are used to check.

#![allow(dead_code)]

use gridid::lpsolve::LinearProgram;
use gridid::netmodel::{GridTopology, Line};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        // Box-Muller keeps this file free of distribution crates.
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

/// Minimizer of a convex function on `[lo, hi]` by ternary search.
pub fn ternary_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..300 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

/// argmin_x 1/2 (x - z)^2 + alpha |x|
pub fn soft_threshold_oracle(z: f64, alpha: f64) -> f64 {
    let r = z.abs() + alpha + 1.0;
    ternary_min(|x| 0.5 * (x - z).powi(2) + alpha * x.abs(), -r, r)
}

/// argmin_{b <= 0} rho/2 (b - z)^2 + kappa |b|
pub fn nonpositive_shrink_oracle(z: f64, kappa: f64, rho: f64) -> f64 {
    let r = z.abs() + kappa / rho + 1.0;
    ternary_min(|b| 0.5 * rho * (b - z).powi(2) + kappa * b.abs(), -r, 0.0)
}

/// argmin_Z 1/2 ||Z - X||^2 + alpha ||Z||_* through the factored form
/// `Z = U V'` with penalty `alpha/2 (||U||^2 + ||V||^2)`, solved by
/// alternating ridge regressions. Uses no spectral decomposition.
pub fn svt_oracle(x: &DMatrix<f64>, alpha: f64, seed: u64) -> DMatrix<f64> {
    let (m, n) = x.shape();
    let k = m.min(n);
    let mut r = rng(seed);
    let mut u = gaussian_matrix(&mut r, m, k);
    let mut v = gaussian_matrix(&mut r, n, k);
    let eye = DMatrix::<f64>::identity(k, k);
    let mut prev = &u * v.transpose();
    for it in 0..200_000 {
        let gv = v.transpose() * &v + &eye * alpha;
        u = (x * &v) * gv.try_inverse().expect("ridge system is SPD");
        let gu = u.transpose() * &u + &eye * alpha;
        v = (x.transpose() * &u) * gu.try_inverse().expect("ridge system is SPD");
        if it % 50 == 0 {
            let z = &u * v.transpose();
            if (&z - &prev).amax() < 1e-14 {
                return z;
            }
            prev = z;
        }
    }
    &u * v.transpose()
}

/// Zoom grid search for a convex function of three variables. Each round
/// evaluates a `(2g+1)^3` grid and recentres on the best point.
pub fn zoom_min3(f: impl Fn([f64; 3]) -> f64, mut center: [f64; 3], mut half: [f64; 3], g: i32, shrink: f64, until: f64) -> ([f64; 3], f64) {
    let mut best = (center, f(center));
    while half.iter().any(|h| *h > until) {
        let mut round_best = best;
        for i in -g..=g {
            for j in -g..=g {
                for k in -g..=g {
                    let p = [
                        center[0] + half[0] * i as f64 / g as f64,
                        center[1] + half[1] * j as f64 / g as f64,
                        center[2] + half[2] * k as f64 / g as f64,
                    ];
                    let v = f(p);
                    if v < round_best.1 {
                        round_best = (p, v);
                    }
                }
            }
        }
        best = round_best;
        center = best.0;
        for h in &mut half {
            *h *= shrink;
        }
    }
    best
}

/// argmin over symmetric positive definite 2x2 X of
/// `1/2 ||X - A||_F^2 - alpha log det X`, by zoom grid over `(x11, x12, x22)`.
pub fn logdet_prox_oracle_2x2(a: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let f = |p: [f64; 3]| {
        let det = p[0] * p[2] - p[1] * p[1];
        if p[0] <= 0.0 || det <= 0.0 {
            return f64::INFINITY;
        }
        let x = DMatrix::from_row_slice(2, 2, &[p[0], p[1], p[1], p[2]]);
        0.5 * (x - a).norm_squared() - alpha * det.ln()
    };
    let r = a.norm() + 2.0 * alpha.sqrt() + 1.0;
    let (p, _) = zoom_min3(f, [r, 0.0, r], [r, r, r], 10, 0.5, 1e-10);
    DMatrix::from_row_slice(2, 2, &[p[0], p[1], p[1], p[2]])
}

/// Prox of `k2 ||S||_1 + k3 ||S||_*` at `z`, by the proximal Dykstra
/// iteration over the two separate proxes (nalgebra's SVD for the nuclear
/// part).
pub fn sparse_lowrank_prox(z: &DMatrix<f64>, k2: f64, k3: f64) -> DMatrix<f64> {
    let soft = |m: &DMatrix<f64>| m.map(|v| v.signum() * (v.abs() - k2).max(0.0));
    let svt = |m: &DMatrix<f64>| {
        let mut d = m.clone().svd(true, true);
        for s in d.singular_values.iter_mut() {
            *s = (*s - k3).max(0.0);
        }
        d.recompose().expect("factors requested")
    };
    let mut x = z.clone();
    let mut p = DMatrix::zeros(z.nrows(), z.ncols());
    let mut q = p.clone();
    for _ in 0..20_000 {
        let y = soft(&(&x + &p));
        p = &x + &p - &y;
        let x_next = svt(&(&y + &q));
        q = &y + &q - &x_next;
        let done = (&x_next - &x).amax() < 1e-14;
        x = x_next;
        if done {
            break;
        }
    }
    x
}

/// Global minimum of the recovery objective for N = 2 by a zoom grid over
/// B (symmetric, positive definite, off-diagonal <= 0) with S minimized
/// exactly for every grid point.
pub fn tiny_objective_grid(l: &DMatrix<f64>, k: [f64; 4]) -> (DMatrix<f64>, f64) {
    assert_eq!(l.nrows(), 2);
    let value = |p: [f64; 3]| {
        let det = p[0] * p[2] - p[1] * p[1];
        if p[0] <= 0.0 || det <= 0.0 || p[1] > 0.0 {
            return f64::INFINITY;
        }
        let b = DMatrix::from_row_slice(2, 2, &[p[0], p[1], p[1], p[2]]);
        let z = &b * l;
        let s = sparse_lowrank_prox(&z, k[1], k[2]);
        let nuclear: f64 = s.clone().svd(false, false).singular_values.iter().sum();
        0.5 * (z - &s).norm_squared()
            + k[0] * 2.0 * p[1].abs()
            + k[1] * s.iter().map(|v| v.abs()).sum::<f64>()
            + k[2] * nuclear
            - k[3] * det.ln()
    };
    let r = 4.0;
    let (p, v) = zoom_min3(value, [r, -r / 2.0, r], [r, r / 2.0, r], 6, 0.6, 1e-5);
    (DMatrix::from_row_slice(2, 2, &[p[0], p[1], p[1], p[2]]), v)
}

/// Optimal objective by enumerating every basic solution; `None` if no
/// feasible vertex exists.
pub fn lp_vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let p = lp.eq_rows.len();
    let mut rows: Vec<(Vec<f64>, f64)> = lp
        .le_rows
        .iter()
        .cloned()
        .zip(lp.le_rhs.iter().copied())
        .collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        if lp.upper[j].is_finite() {
            e[j] = 1.0;
            rows.push((e.clone(), lp.upper[j]));
        }
        if lp.lower[j].is_finite() {
            e[j] = -1.0;
            rows.push((e, -lp.lower[j]));
        }
    }
    let need = n.checked_sub(p)?;
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..need).collect();
    if need > rows.len() {
        return None;
    }
    loop {
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for (i, (row, rhs)) in lp.eq_rows.iter().zip(&lp.eq_rhs).enumerate() {
            for j in 0..n {
                a[(i, j)] = row[j];
            }
            b[i] = *rhs;
        }
        for (k, &r) in subset.iter().enumerate() {
            for j in 0..n {
                a[(p + k, j)] = rows[r].0[j];
            }
            b[p + k] = rows[r].1;
        }
        let lu = a.clone().lu();
        let det = lu.determinant();
        if det.abs() > 1e-9 {
            if let Some(x) = lu.solve(&b) {
                let feasible = rows.iter().all(|(row, rhs)| {
                    row.iter().zip(x.iter()).map(|(r, v)| r * v).sum::<f64>() <= rhs + 1e-9 * (1.0 + rhs.abs())
                });
                if feasible {
                    let obj = lp.objective_at(x.as_slice());
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
        }
        // Next combination in lexicographic order.
        let mut i = need;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < rows.len() - need + i {
                subset[i] += 1;
                for j in i + 1..need {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// A random LP that is feasible (it contains a known interior point) and
/// bounded (its cost is a nonnegative combination of constraint normals).
pub fn random_bounded_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.random_range(1..=6usize);
    let p = if n > 1 && rng.random_bool(0.3) { 1 } else { 0 };
    let m = rng.random_range(n..=12usize);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut cost = vec![0.0; n];
    let mut lp = LinearProgram::new(vec![0.0; n]);
    for _ in 0..m {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let at: f64 = row.iter().zip(&x0).map(|(a, b)| a * b).sum();
        let weight = if rng.random_bool(0.6) { rng.random_range(0.0..2.0) } else { 0.0 };
        for j in 0..n {
            cost[j] -= weight * row[j];
        }
        lp.push_le(row, at + rng.random_range(0.0..1.0));
    }
    for _ in 0..p {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let at: f64 = row.iter().zip(&x0).map(|(a, b)| a * b).sum();
        let weight = rng.random_range(-1.0..1.0);
        for j in 0..n {
            cost[j] -= weight * row[j];
        }
        lp.push_eq(row, at);
    }
    for j in 0..n {
        match rng.random_range(0..4) {
            0 => {
                lp.set_bounds(j, x0[j] - rng.random_range(0.0..2.0), f64::INFINITY);
                cost[j] += rng.random_range(0.0..1.0);
            }
            1 => {
                lp.set_bounds(j, x0[j] - rng.random_range(0.0..2.0), x0[j] + rng.random_range(0.0..2.0));
                cost[j] += rng.random_range(-1.0..1.0);
            }
            _ => {}
        }
    }
    lp.cost = cost;
    lp
}

/// Random connected grid: a random spanning tree plus extra distinct lines.
pub fn random_connected_grid(rng: &mut ChaCha8Rng, max_buses: usize) -> GridTopology {
    let n = rng.random_range(2..=max_buses);
    let mut lines = Vec::new();
    let mut used = std::collections::HashSet::new();
    for k in 1..n {
        let j = rng.random_range(0..k);
        used.insert((j, k));
        lines.push(Line::new(j, k, rng.random_range(0.01..1.0), 100.0));
    }
    for _ in 0..rng.random_range(0..=n) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let key = (a.min(b), a.max(b));
        if a != b && used.insert(key) {
            lines.push(Line::new(key.0, key.1, rng.random_range(0.01..1.0), 100.0));
        }
    }
    let reference = rng.random_range(0..n);
    GridTopology::new(n, lines, reference).expect("spanning tree keeps the grid connected")
}
