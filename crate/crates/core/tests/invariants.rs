//! Property tests for the numeric kernels, basis distances, projections and masks.

mod common;

use common::*;
use etcl::masks::{self, AccumulatedMask};
use etcl::numerics::{solve_transport, svd, Matrix};
use etcl::similarity::{basis_distance, BasisSource, RepresentationBasis};
use etcl::transfer::{gpm_project, merge_bases, project_out, GpmMemory};
use proptest::prelude::*;

fn basis(vectors: Matrix) -> RepresentationBasis {
    RepresentationBasis {
        task_id: 0,
        source: BasisSource::Original,
        vectors,
    }
}

fn columns(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.cols()).map(|j| m.column(j)).collect()
}

fn fro(m: &Matrix) -> f64 {
    m.frobenius_sq().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transport_matches_permutation_search(seed in any::<u64>(), k in 1usize..=5, dim in 2usize..6) {
        let mut r = rng(seed);
        let a = columns(&random_orthonormal(&mut r, dim.max(k), k));
        let b = columns(&random_orthonormal(&mut r, dim.max(k), k));
        let got = basis_distance(&basis(Matrix::from_columns(dim.max(k), &a).unwrap()), &basis(Matrix::from_columns(dim.max(k), &b).unwrap())).unwrap();
        let want = brute_force_w1(&a, &b);
        prop_assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }

    #[test]
    fn transport_plan_is_feasible(seed in any::<u64>(), m in 1usize..7, n in 1usize..7) {
        let mut r = rng(seed);
        let cost = random_matrix(&mut r, m, n, 1.0);
        let cost = Matrix::new(m, n, cost.as_slice().iter().map(|v| v.abs()).collect()).unwrap();
        let src = vec![1.0 / m as f64; m];
        let dst = vec![1.0 / n as f64; n];
        let plan = solve_transport(&cost, &src, &dst).unwrap();
        for i in 0..m {
            prop_assert!((plan.coupling.row(i).iter().sum::<f64>() - src[i]).abs() <= 1e-12);
        }
        for j in 0..n {
            prop_assert!((plan.coupling.column(j).iter().sum::<f64>() - dst[j]).abs() <= 1e-12);
        }
        prop_assert!(plan.coupling.as_slice().iter().all(|&v| v >= -1e-15));
        let total: f64 = plan.coupling.as_slice().iter().zip(cost.as_slice()).map(|(p, c)| p * c).sum();
        prop_assert!((total - plan.cost).abs() <= 1e-12);
        // no cheaper than the row-wise lower bound
        let lower: f64 = (0..m).map(|i| cost.row(i).iter().cloned().fold(f64::INFINITY, f64::min) * src[i]).sum();
        prop_assert!(plan.cost >= lower - 1e-12);
    }

    #[test]
    fn basis_distance_is_a_sign_and_order_invariant_pseudometric(seed in any::<u64>(), dim in 3usize..9, ka in 1usize..4, kb in 1usize..4, kc in 1usize..4) {
        let mut r = rng(seed);
        let a = random_orthonormal(&mut r, dim, ka);
        let b = random_orthonormal(&mut r, dim, kb);
        let c = random_orthonormal(&mut r, dim, kc);
        let d = |x: &Matrix, y: &Matrix| basis_distance(&basis(x.clone()), &basis(y.clone())).unwrap();
        prop_assert!(d(&a, &a).abs() <= 1e-12);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert!(d(&a, &b) >= 0.0);

        let mut cols = columns(&a);
        cols.reverse();
        for (j, col) in cols.iter_mut().enumerate() {
            if j % 2 == 0 {
                col.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let flipped = Matrix::from_columns(dim, &cols).unwrap();
        prop_assert!((d(&flipped, &b) - d(&a, &b)).abs() <= 1e-12);
        prop_assert!(d(&flipped, &a).abs() <= 1e-12);
    }

    #[test]
    fn svd_round_trips(seed in any::<u64>(), rows in 1usize..=64, cols in 1usize..=64) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, rows, cols, 1.0);
        let res = svd(&a).unwrap();
        prop_assert!(fro(&res.reconstruct().sub(&a).unwrap()) <= 1e-6 * fro(&a).max(1e-300));
        prop_assert!(res.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(res.sigma.iter().all(|&s| s >= 0.0));
        let k = res.sigma.iter().filter(|&&s| s > 1e-10 * res.sigma[0]).count();
        let u = res.u.leading_columns(k);
        let gram = u.t_matmul(&u).unwrap();
        prop_assert!(fro(&gram.sub(&Matrix::identity(k)).unwrap()) <= 1e-8);
    }

    #[test]
    fn projection_is_idempotent_and_contracting(seed in any::<u64>(), dim in 2usize..10, k1 in 0usize..4, k2 in 0usize..4, rows in 1usize..4) {
        let mut r = rng(seed);
        let k1 = k1.min(dim);
        let k2 = k2.min(dim);
        let m1 = GpmMemory { owner_task: 1, basis: random_orthonormal(&mut r, dim, k1) };
        let m2 = GpmMemory { owner_task: 2, basis: random_orthonormal(&mut r, dim, k2) };
        let g = random_matrix(&mut r, rows, dim, 1.0);
        let p = gpm_project(&g, &[&m1, &m2]).unwrap();
        let pp = gpm_project(&p, &[&m1, &m2]).unwrap();
        prop_assert!(fro(&pp.sub(&p).unwrap()) <= 1e-10);
        prop_assert!(fro(&p) <= fro(&g) + 1e-12);
        prop_assert!(p.matmul(&m1.basis).unwrap().max_abs() <= 1e-10);
        prop_assert!(p.matmul(&m2.basis).unwrap().max_abs() <= 1e-10);
        let merged = merge_bases(dim, &[&m1.basis, &m2.basis]).unwrap();
        prop_assert!(merged.cols() <= (k1 + k2).min(dim));
        prop_assert!(fro(&project_out(&g, &merged).unwrap().sub(&p).unwrap()) <= 1e-12);
    }

    #[test]
    fn masks_keep_the_top_scores(seed in any::<u64>(), rows in 1usize..12, cols in 1usize..12, capacity in 0.01f64..=1.0) {
        let mut r = rng(seed);
        let scores = vec![random_matrix(&mut r, rows, cols, 1.0), random_matrix(&mut r, cols, rows, 1.0)];
        let mask = masks::select_mask(&scores, capacity, 3).unwrap();
        for (s, m) in scores.iter().zip(&mask.layers) {
            prop_assert_eq!(m.count_ones(), masks::kept_count(capacity, s.len()));
            let kept_min = (0..s.len()).filter(|&k| m.get_flat(k)).map(|k| s.as_slice()[k]).fold(f64::INFINITY, f64::min);
            let dropped_max = (0..s.len()).filter(|&k| !m.get_flat(k)).map(|k| s.as_slice()[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(kept_min >= dropped_max);
            prop_assert_eq!(m.storage_bytes(), s.len().div_ceil(64) * 8);
        }
        let shapes: Vec<(usize, usize)> = scores.iter().map(|s| s.shape()).collect();
        let empty = AccumulatedMask::empty(&shapes);
        let once = masks::accumulate(&empty, &mask).unwrap();
        prop_assert_eq!(once.count_ones(), mask.count_ones());
        prop_assert!(masks::accumulate(&once, &mask).is_err());
        let other = masks::select_mask(&[scores[0].scale(-1.0), scores[1].scale(-1.0)], capacity, 4).unwrap();
        let twice = masks::accumulate(&once, &other).unwrap();
        prop_assert!(twice.count_ones() >= once.count_ones());
        prop_assert!(twice.count_ones() <= mask.count_ones() + other.count_ones());
        if mask.count_ones() > 0 {
            prop_assert!((masks::reuse_fraction(&mask, &once).unwrap() - 1.0).abs() <= 1e-15);
        } else {
            prop_assert!(masks::reuse_fraction(&mask, &once).is_err());
        }
    }
}
