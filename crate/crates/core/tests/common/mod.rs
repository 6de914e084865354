#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Probability vector from normalised exponentials; entries are zeroed with
/// probability `sparsity` (at least one entry stays positive).
pub fn random_simplex_point(rng: &mut impl Rng, k: usize, sparsity: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| {
            if rng.random::<f64>() < sparsity {
                0.0
            } else {
                -rng.random::<f64>().max(1e-12).ln()
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[rng.random_range(0..k)] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Bounded, feasible standard-form instance: `J - 1` random nonnegative rows and a
/// final all-ones row, with `b = A p0` for a random probability vector `p0`.
pub fn random_bounded_lp(
    rng: &mut impl Rng,
    j: usize,
    k: usize,
    sparsity: f64,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(j, k);
    for r in 0..j - 1 {
        for col in 0..k {
            a[(r, col)] = if rng.random::<f64>() < 0.3 {
                0.0
            } else {
                rng.random::<f64>()
            };
        }
    }
    for col in 0..k {
        a[(j - 1, col)] = 1.0;
    }
    let p0 = DVector::from_vec(random_simplex_point(rng, k, sparsity));
    let b = &a * p0;
    let c = DVector::from_fn(k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    (a, b, c)
}

/// `(min, max)` of `<c, p>` over all basic feasible solutions, by trying every
/// `J`-subset of columns.
pub fn brute_force_extremes(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Option<(f64, f64)> {
    let (j, k) = a.shape();
    let mut best: Option<(f64, f64)> = None;
    let mut subset: Vec<usize> = (0..j).collect();
    loop {
        let a_b = a.select_columns(subset.iter());
        if a_b.determinant().abs() > 1e-10 {
            if let Some(x) = a_b.lu().solve(b) {
                if x.iter().all(|&v| v >= -1e-9) {
                    let value: f64 = subset.iter().zip(x.iter()).map(|(&col, &v)| c[col] * v).sum();
                    best = Some(match best {
                        None => (value, value),
                        Some((lo, hi)) => (lo.min(value), hi.max(value)),
                    });
                }
            }
        }
        // Next combination in lexicographic order.
        let mut i = j;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < k - j + i {
                subset[i] += 1;
                for t in i + 1..j {
                    subset[t] = subset[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Fréchet-Hoeffding bounds on `P(Y0 = 0, Y1 = 1)` given `P(Y0 = 1) = p0` and
/// `P(Y1 = 1) = p1`.
pub fn frechet_cell_bounds(p0: f64, p1: f64) -> (f64, f64) {
    let a = 1.0 - p0;
    (f64::max(0.0, a + p1 - 1.0), a.min(p1))
}

/// Central difference quotient of a vector-valued map along coordinate `i`.
pub fn central_difference(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    at: &DVector<f64>,
    i: usize,
    h: f64,
) -> DVector<f64> {
    let mut up = at.clone();
    let mut down = at.clone();
    up[i] += h;
    down[i] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

/// Ridders' extrapolated derivative of a vector function along coordinate `i`.
/// Tableaux of ten steps shrinking by 1.4 are started from `h0`, `h0 / 10`, ...
/// and the entry with the smallest error estimate wins, so instances with sharp
/// curvature still find a usable step. Estimates include a round-off term
/// `1e-14 / h`; without it, steps too small to move `f` at all look exact.
/// Returns `(derivative, error estimate)`;
/// steps where `f` fails are skipped.
pub fn ridders_derivative(
    f: &dyn Fn(&DVector<f64>) -> Option<DVector<f64>>,
    at: &DVector<f64>,
    i: usize,
    h0: f64,
) -> Option<(DVector<f64>, f64)> {
    const SHRINK: f64 = 1.4;
    const ROWS: usize = 10;
    let con2 = SHRINK * SHRINK;
    let diff = |h: f64| {
        let mut up = at.clone();
        let mut down = at.clone();
        up[i] += h;
        down[i] -= h;
        Some((f(&up)? - f(&down)?) / (2.0 * h))
    };
    let mut best: Option<(DVector<f64>, f64)> = None;
    for start in 0..6 {
        let mut h = h0 / 10f64.powi(start);
        let mut prev: Vec<DVector<f64>> = Vec::new();
        for _ in 0..ROWS {
            let Some(d) = diff(h) else {
                prev.clear();
                h /= SHRINK;
                continue;
            };
            let mut row = vec![d];
            let mut fac = con2;
            for j in 1..=prev.len() {
                let next = (&row[j - 1] * fac - &prev[j - 1]) / (fac - 1.0);
                fac *= con2;
                let err = (&next - &row[j - 1])
                    .amax()
                    .max((&next - &prev[j - 1]).amax())
                    .max(1e-14 / h);
                if best.as_ref().is_none_or(|(_, e)| err <= *e) {
                    best = Some((next.clone(), err));
                }
                row.push(next);
            }
            prev = row;
            h /= SHRINK;
        }
    }
    best
}

/// Exhaustive search over a square grid in two parameters, re-centred on the best
/// point with a 10x finer spacing `rounds` times. Returns the smallest value and
/// where it was found.
pub fn refined_grid_min(
    f: &dyn Fn(f64, f64) -> f64,
    centre: (f64, f64),
    half_width: f64,
    points: usize,
    rounds: usize,
) -> (f64, (f64, f64)) {
    let mut best = (f64::INFINITY, centre);
    let mut width = half_width;
    for _ in 0..rounds {
        let c = best.1;
        for i in 0..points {
            for j in 0..points {
                let u = c.0 - width + 2.0 * width * i as f64 / (points - 1) as f64;
                let v = c.1 - width + 2.0 * width * j as f64 / (points - 1) as f64;
                let value = f(u, v);
                if value < best.0 {
                    best = (value, (u, v));
                }
            }
        }
        width /= 10.0;
    }
    best
}

/// Golden-section minimisation of a unimodal function on `[lo, hi]`.
pub fn golden_section_min(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    let x = 0.5 * (lo + hi);
    (f(x), x)
}
