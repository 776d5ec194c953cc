//! Randomized invariant checks over the tensor, graph, layer, and data
//! machinery.

use proptest::prelude::*;
use stgf_core::data::{synth_diffusion, window_split, NormStats};
use stgf_core::graph::{
    build_initial_stg, build_stg, build_ttg, evolve_stg, kernel_weight, GraphParams, StgMode,
    StgOptions,
};
use stgf_core::layers::{sgcl_forward, SpatialKernel};
use stgf_core::model::{loss, LossKind};
use stgf_core::spectral::{LiftedGraph, Provenance};
use stgf_core::{DenseTensor, Matrix};
use stgf_testkit::{seeded_matrix, seeded_tensor};

/// Strategy: a tensor with the given shape and entries in [-10, 10].
fn tensor_with_shape(shape: Vec<usize>) -> impl Strategy<Value = DenseTensor> {
    let len: usize = shape.iter().product();
    prop::collection::vec(-10.0f64..10.0, len)
        .prop_map(move |data| DenseTensor::from_vec(&shape, data).unwrap())
}

fn small_shape(max_rank: usize, max_extent: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_extent, 1..=max_rank)
}

proptest! {
    #[test]
    fn unfold_fold_roundtrip_is_bitwise(shape in small_shape(4, 5), seed in 0u64..1000) {
        let x = seeded_tensor(&shape, seed);
        for mode in 0..shape.len() {
            let u = x.unfold(mode).unwrap();
            let back = DenseTensor::fold(&u, mode, &shape).unwrap();
            prop_assert_eq!(x.data(), back.data());
        }
    }

    #[test]
    fn distinct_mode_products_commute(
        shape in small_shape(3, 4).prop_filter("need two modes", |s| s.len() >= 2),
        seed in 0u64..1000,
    ) {
        let x = seeded_tensor(&shape, seed);
        let rank = shape.len();
        let (m1, m2) = (0, rank - 1);
        let a = seeded_matrix(3, shape[m1], seed + 1);
        let b = seeded_matrix(2, shape[m2], seed + 2);
        let ab = x.mode_n_product(&a, m1).unwrap().mode_n_product(&b, m2).unwrap();
        let ba = x.mode_n_product(&b, m2).unwrap().mode_n_product(&a, m1).unwrap();
        prop_assert!(ab.max_abs_diff(&ba) < 1e-12);
    }

    #[test]
    fn softmax_rows_are_probability_vectors(rows in 1usize..6, cols in 1usize..6, seed in 0u64..500) {
        let m = seeded_matrix(rows, cols, seed).scale(8.0);
        let p = m.row_softmax();
        for r in 0..rows {
            let mut sum = 0.0;
            for c in 0..cols {
                let v = p.get(r, c);
                prop_assert!(v > 0.0 && v <= 1.0);
                sum += v;
            }
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_weight_is_monotone_and_thresholded(
        d1 in 0.0f64..5.0,
        d2 in 0.0f64..5.0,
        sigma2 in 0.05f64..4.0,
        epsilon in 0.01f64..1.0,
    ) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let w_lo = kernel_weight(lo, sigma2, epsilon).unwrap();
        let w_hi = kernel_weight(hi, sigma2, epsilon).unwrap();
        // Closer nodes never get a smaller weight.
        prop_assert!(w_lo >= w_hi);
        for w in [w_lo, w_hi] {
            prop_assert!(w == 0.0 || (epsilon..=1.0).contains(&w));
        }
    }

    #[test]
    fn initial_spatial_graph_is_symmetric_with_unit_diagonal(
        n in 2usize..6,
        seed in 0u64..500,
        sigma2 in 0.1f64..3.0,
        epsilon in 0.05f64..0.9,
    ) {
        let x = seeded_tensor(&[1, 1, n, 3], seed);
        let a = build_initial_stg(&x, &GraphParams { sigma2, epsilon }).unwrap();
        for i in 0..n {
            prop_assert_eq!(a.get(i, i), 0.0);
            for j in 0..n {
                let v = a.get(i, j);
                prop_assert_eq!(v, a.get(j, i));
                prop_assert!(v == 0.0 || (epsilon..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn evolved_graph_entries_never_decrease(
        n in 2usize..5,
        t in 2usize..5,
        seed in 0u64..300,
        alpha in 0.0f64..2.0,
    ) {
        let x = seeded_tensor(&[1, 1, n, 2], seed);
        let a0 = build_initial_stg(&x, &GraphParams { sigma2: 1.0, epsilon: 0.1 }).unwrap();
        let g = evolve_stg(&a0, t, n.min(3), alpha).unwrap();
        for tt in 1..t {
            let prev = g.slice(tt - 1);
            let cur = g.slice(tt);
            for i in 0..n {
                let mut row_gain = 0.0;
                for j in 0..n {
                    let delta = cur.get(i, j) - prev.get(i, j);
                    prop_assert!(delta >= -1e-12);
                    row_gain += delta;
                }
                // Each row gains exactly alpha: the increment is a
                // softmax row scaled by the step size.
                prop_assert!((row_gain - alpha).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spatial_layer_is_linear(seed in 0u64..200, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let (b, t, n, ci, co, k) = (2, 3, 3, 2, 2, 2);
        let x = seeded_tensor(&[b, t, n, ci], seed);
        let y = seeded_tensor(&[b, t, n, ci], seed + 1);
        let filters = seeded_tensor(&[n, n, k, t], seed + 2);
        let w = SpatialKernel::new(seeded_tensor(&[k * ci, co, t], seed + 3)).unwrap();
        let a4 = LiftedGraph {
            filters,
            provenance: Provenance::Spatial,
            lambda_max: vec![2.0; t],
            warned: false,
        };
        let mixed = x.scale(alpha).add(&y.scale(beta));
        let lhs = sgcl_forward(&mixed, &a4, &w).unwrap();
        let rhs = sgcl_forward(&x, &a4, &w).unwrap().scale(alpha)
            .add(&sgcl_forward(&y, &a4, &w).unwrap().scale(beta));
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn loss_is_zero_only_for_equal_tensors(shape in small_shape(3, 4), seed in 0u64..300) {
        let x = seeded_tensor(&shape, seed);
        prop_assert_eq!(loss(&x, &x, LossKind::Mean).unwrap(), 0.0);
        let mut bumped = x.clone();
        bumped.data_mut()[0] += 0.5;
        prop_assert!(loss(&x, &bumped, LossKind::Mean).unwrap() > 0.0);
        prop_assert!(loss(&x, &bumped, LossKind::Sum).unwrap() > 0.0);
    }

    #[test]
    fn normalization_roundtrips(n in 1usize..4, d in 1usize..3, steps in 4usize..12, seed in 0u64..200) {
        let segment = seeded_tensor(&[steps, n, d], seed).scale(5.0);
        let stats = NormStats::fit(&segment);
        let mut z = segment.clone();
        stats.normalize(&mut z);
        stats.denormalize(&mut z);
        prop_assert!(z.max_abs_diff(&segment) < 1e-10);
    }
}

#[test]
fn all_equal_data_yields_complete_graphs() {
    // Zero distance everywhere puts every kernel weight at exp(0) = 1.
    let x = DenseTensor::from_fn(&[1, 4, 5, 2], |_| 3.25);
    let g = build_stg(
        &x,
        &StgOptions {
            params: GraphParams::default(),
            mode: StgMode::Kernel,
            embed_rank: 2,
            alpha: 1.0,
        },
    )
    .unwrap();
    for t in 0..4 {
        let s = g.slice(t);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(s.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
    }
    let ttg = build_ttg(&x, &GraphParams::default()).unwrap();
    for n in 0..5 {
        let s = ttg.slice(n);
        for t1 in 0..4 {
            for t2 in 0..4 {
                assert_eq!(s.get(t1, t2), if t1 == t2 { 0.0 } else { 1.0 });
            }
        }
    }
}

#[test]
fn window_counts_match_direct_enumeration() {
    // Every (l, horizon, length, fractions) combination below is checked
    // against a literal enumeration of admissible window start positions.
    let (tbl, _) = synth_diffusion(3, 60, 11, 0.1).unwrap();
    for (l, h) in [(3usize, 1usize), (5, 2), (8, 3)] {
        for fractions in [(0.6, 0.2, 0.2), (0.7, 0.0, 0.3), (1.0, 0.0, 0.0)] {
            let split = match window_split(&tbl, l, h, fractions) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let n_tr = (60.0 * fractions.0).floor() as usize;
            let n_val = (60.0 * fractions.1).floor() as usize;
            let n_te = (60.0 * fractions.2).floor() as usize;
            for (set, seg) in [
                (&split.train, n_tr),
                (&split.val, n_val),
                (&split.test, n_te),
            ] {
                let expect = (0..seg).filter(|s| s + l + h <= seg).count();
                assert_eq!(set.len(), expect, "l {l} h {h} seg {seg}");
            }
        }
    }
}

#[test]
fn metrics_are_nonnegative() {
    for seed in 0..20u64 {
        let t = seeded_tensor(&[4, 3], seed);
        let p = seeded_tensor(&[4, 3], seed + 100);
        let m = stgf_core::metrics::evaluate(&t, &p).unwrap();
        assert!(m.mae >= 0.0);
        assert!(m.rmse >= m.mae - 1e-15); // RMSE dominates MAE.
        if let Some(mape) = m.mape {
            assert!(mape >= 0.0);
        }
    }
}
