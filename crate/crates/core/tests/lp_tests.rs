mod common;

use std::sync::Arc;

use clp_bounds::lp::*;
use clp_bounds::problems::{build_iv, build_joint_po, Setting};
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solve(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, sense: Sense) -> BasisSolution {
    let lp = StandardFormLp::new(a.clone(), b.clone(), c.clone(), sense).unwrap();
    solve_simplex(&lp).unwrap()
}

fn binary_joint(p0: f64, p1: f64) -> (Arc<ConstraintMatrix>, DVector<f64>) {
    let (a, _) = build_joint_po(2, 2).unwrap();
    (Arc::new(a), DVector::from_vec(vec![p0, p1, 1.0]))
}

fn cell_indicator(k: usize, cell: usize) -> DVector<f64> {
    DVector::from_fn(k, |i, _| if i == cell { 1.0 } else { 0.0 })
}

#[test]
fn simplex_picks_smallest_coefficient() {
    let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
    let sol = solve(&a, &DVector::from_vec(vec![1.0]), &DVector::from_vec(vec![0.3, 0.1, 0.5]), Sense::Minimize);
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.value - 0.1).abs() < 1e-12);
    assert_eq!(sol.basis, vec![1]);
    assert_eq!(sol.primal, vec![0.0, 1.0, 0.0]);
}

#[test]
fn binary_cell_matches_frechet_bounds() {
    let (m, b) = binary_joint(0.4, 0.7);
    // Cell (y0 = 0, y1 = 1) has index 1.
    let c = cell_indicator(4, 1);
    let hi = solve_simplex(&StandardFormLp::with_matrix(m.clone(), b.clone(), c.clone(), Sense::Maximize).unwrap()).unwrap();
    let lo = solve_simplex(&StandardFormLp::with_matrix(m.clone(), b.clone(), c.clone(), Sense::Minimize).unwrap()).unwrap();
    assert!((hi.value - 0.6).abs() < 1e-12);
    assert!((lo.value - 0.3).abs() < 1e-12);
    let (blo, bhi) = brute_force_extremes(m.matrix(), &b, &c).unwrap();
    assert!((blo - 0.3).abs() < 1e-12 && (bhi - 0.6).abs() < 1e-12);
}

#[test]
fn basis_apply_reproduces_simplex_primal() {
    let (m, b) = binary_joint(0.25, 0.55);
    let c = DVector::from_vec(vec![0.2, -0.4, 0.9, 0.1]);
    let sol = solve(m.matrix(), &b, &c, Sense::Minimize);
    let p = basis_apply(&sol.basis, m.matrix(), &b).unwrap();
    for (x, y) in p.iter().zip(&sol.primal) {
        assert!((x - y).abs() < 1e-12);
    }
    let zero = basis_apply(&sol.basis, m.matrix(), &DVector::zeros(3)).unwrap();
    assert_eq!(zero.amax(), 0.0);
    let id = DMatrix::identity(3, 3);
    let v = DVector::from_vec(vec![0.5, -2.0, 7.0]);
    assert_eq!(basis_apply(&[0, 1, 2], &id, &v).unwrap(), v);
}

#[test]
fn probe_examples() {
    let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
    let b = DVector::from_vec(vec![1.0]);
    let lp = StandardFormLp::new(a.clone(), b.clone(), DVector::from_vec(vec![0.3, 0.1, 0.5]), Sense::Minimize).unwrap();
    let sol = solve_simplex(&lp).unwrap();
    let probe = probe_suboptimality(&lp, &sol, ProbeMethod::VertexEnumeration).unwrap();
    assert!((probe.second_best_value.unwrap() - 0.3).abs() < 1e-12);
    assert!((probe.gap_lower_bound - 0.2).abs() < 1e-12);

    let flat = StandardFormLp::new(a, b, DVector::zeros(3), Sense::Minimize).unwrap();
    let sol = solve_simplex(&flat).unwrap();
    for method in [ProbeMethod::VertexEnumeration, ProbeMethod::ReducedCostBound] {
        assert_eq!(probe_suboptimality(&flat, &sol, method).unwrap().gap_lower_bound, 0.0);
    }
}

#[test]
fn probe_on_binary_cell_matches_vertex_scan() {
    let (m, b) = binary_joint(0.4, 0.7);
    let c = cell_indicator(4, 1);
    let lp = StandardFormLp::with_matrix(m.clone(), b.clone(), c.clone(), Sense::Maximize).unwrap();
    let sol = solve_simplex(&lp).unwrap();
    let probe = probe_suboptimality(&lp, &sol, ProbeMethod::VertexEnumeration).unwrap();
    // Independent scan: the feasible joints are a segment in t = P(0, 1); its two
    // end points are the only vertices, so the second-best value is the minimum.
    let (lo, hi) = frechet_cell_bounds(0.4, 0.7);
    assert!((probe.second_best_value.unwrap() - lo).abs() < 1e-12);
    assert!((probe.gap_lower_bound - (hi - lo)).abs() < 1e-12);
    let rc = probe_suboptimality(&lp, &sol, ProbeMethod::ReducedCostBound).unwrap();
    assert!(rc.gap_lower_bound <= probe.gap_lower_bound + 1e-12);
}

#[test]
fn feasibility_examples() {
    let (m, _) = build_joint_po(2, 3).unwrap();
    let m = Arc::new(m);
    let b = DVector::from_vec(vec![0.2, 0.5, 0.3, 0.3, 1.0]);
    assert_eq!(check_feasibility(&m, &b).unwrap(), Feasibility::Feasible);
    let bad = DVector::from_vec(vec![-0.1, 0.5, 0.3, 0.3, 1.0]);
    assert_eq!(check_feasibility(&m, &bad).unwrap(), Feasibility::Infeasible);
}

#[test]
fn iv_feasibility_agrees_with_basis_scan() {
    let (m, setting) = build_iv(2).unwrap();
    let m = Arc::new(m);
    let Setting::Iv { .. } = setting else { panic!() };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut feasible, mut infeasible) = (0, 0);
    for _ in 0..60 {
        let joint = DVector::from_vec(random_simplex_point(&mut rng, m.cols(), 0.3));
        let mut b = m.matrix() * joint;
        for j in 0..m.rows() - 1 {
            b[j] += (rng.random::<f64>() - 0.5) * 0.3;
        }
        let scan = brute_force_extremes(m.matrix(), &b, &DVector::zeros(m.cols())).is_some();
        let verdict = check_feasibility(&m, &b).unwrap() == Feasibility::Feasible;
        assert_eq!(verdict, scan, "b = {b}");
        if scan {
            feasible += 1;
        } else {
            infeasible += 1;
        }
    }
    assert!(feasible > 0 && infeasible > 0, "{feasible} / {infeasible}");
}

#[test]
fn rank_deficient_rows_are_rejected() {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0]);
    assert!(matches!(ConstraintMatrix::new(a), Err(LpError::RankDeficient { .. })));
}

/// Dual of `min/max <c, p>, A p = b, p >= 0` in standard form over `(y+, y-, s)`.
fn dual_value(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, sense: Sense) -> f64 {
    let (j, k) = a.shape();
    let mut d = DMatrix::zeros(k, 2 * j + k);
    let at = a.transpose();
    d.view_mut((0, 0), (k, j)).copy_from(&at);
    d.view_mut((0, j), (k, j)).copy_from(&(-&at));
    let slack = if sense == Sense::Minimize { 1.0 } else { -1.0 };
    for i in 0..k {
        d[(i, 2 * j + i)] = slack;
    }
    let mut obj = DVector::zeros(2 * j + k);
    obj.rows_mut(0, j).copy_from(b);
    obj.rows_mut(j, j).copy_from(&(-b));
    let dual_sense = if sense == Sense::Minimize { Sense::Maximize } else { Sense::Minimize };
    let sol = solve(&d, c, &obj, dual_sense);
    assert_eq!(sol.status, LpStatus::Optimal);
    sol.value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn simplex_matches_basis_enumeration(seed in any::<u64>(), j in 2usize..=6, extra in 0usize..=6, sparse in 0.0f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = j + extra.max(1);
        let (a, b, c) = random_bounded_lp(&mut rng, j, k, sparse);
        prop_assume!(ConstraintMatrix::new(a.clone()).is_ok());
        let (lo, hi) = brute_force_extremes(&a, &b, &c).unwrap();
        let min = solve(&a, &b, &c, Sense::Minimize);
        let max = solve(&a, &b, &c, Sense::Maximize);
        prop_assert!((min.value - lo).abs() <= 1e-9, "min {} vs {}", min.value, lo);
        prop_assert!((max.value - hi).abs() <= 1e-9, "max {} vs {}", max.value, hi);
    }

    #[test]
    fn optimal_solutions_are_consistent(seed in any::<u64>(), j in 2usize..=6, extra in 1usize..=8, sparse in 0.0f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = j + extra;
        let (a, b, c) = random_bounded_lp(&mut rng, j, k, sparse);
        prop_assume!(ConstraintMatrix::new(a.clone()).is_ok());
        for sense in [Sense::Minimize, Sense::Maximize] {
            let lp = StandardFormLp::new(a.clone(), b.clone(), c.clone(), sense).unwrap();
            let sol = solve_simplex(&lp).unwrap();
            prop_assert_eq!(sol.status, LpStatus::Optimal);
            let p = DVector::from_vec(sol.primal.clone());
            prop_assert!(p.min() >= -lp.tol_feas());
            prop_assert!((&a * &p - &b).amax() <= lp.tol_feas());
            prop_assert!((c.dot(&p) - sol.value).abs() <= 1e-9 * (1.0 + sol.value.abs()));
            for (i, &v) in sol.primal.iter().enumerate() {
                if !sol.basis.contains(&i) {
                    prop_assert!(v.abs() <= lp.tol_feas());
                }
            }
            prop_assert!(a.select_columns(sol.basis.iter()).determinant().abs() > 1e-12);
            // Complementary slackness.
            for (i, &r) in sol.reduced_costs.iter().enumerate() {
                if sol.basis.contains(&i) {
                    prop_assert!(r.abs() <= lp.tol_opt());
                } else if sense == Sense::Minimize {
                    prop_assert!(r >= -lp.tol_opt());
                } else {
                    prop_assert!(r <= lp.tol_opt());
                }
            }
            // Strong duality against an independently posed dual LP.
            let dual = dual_value(&a, &b, &c, sense);
            prop_assert!((dual - sol.value).abs() <= 1e-9 * (1.0 + sol.value.abs()), "{} vs {}", dual, sol.value);
        }
    }

    #[test]
    fn scaling_the_objective_scales_the_value(seed in any::<u64>(), s in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = random_bounded_lp(&mut rng, 4, 9, 0.2);
        prop_assume!(ConstraintMatrix::new(a.clone()).is_ok());
        let base = solve(&a, &b, &c, Sense::Minimize);
        let scaled_c = &c * s;
        let scaled = solve(&a, &b, &scaled_c, Sense::Minimize);
        prop_assert!((scaled.value - s * base.value).abs() <= 1e-9 * (1.0 + scaled.value.abs()));
        // The original basis is still optimal: its reduced costs for the scaled
        // objective are nonnegative.
        let a_b = a.select_columns(base.basis.iter());
        let c_b = DVector::from_iterator(base.basis.len(), base.basis.iter().map(|&i| scaled_c[i]));
        let y = a_b.transpose().lu().solve(&c_b).unwrap();
        let rc = &scaled_c - a.transpose() * y;
        prop_assert!(rc.min() >= -1e-9 * (1.0 + scaled_c.amax()));
    }
}
