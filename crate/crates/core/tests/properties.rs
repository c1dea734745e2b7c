//! Randomized invariants of the tensor kernels, the quantizer, ALS and the
//! file format.

use proptest::prelude::*;
use qcpd::cpd::{cp_als_traced, random_factors};
use qcpd::io::{decode, encode};
use qcpd::linalg::Cholesky;
use qcpd::quant::project_values;
use qcpd::tensor::khatri_rao_except;
use qcpd::{
    balance_factors, fold, gram, mttkrp, reconstruct, unfold, AlsConfig, DenseTensor, FactorSet, Matrix, QuantGrid,
    QuantScheme,
};

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![
        prop::collection::vec(1usize..6, 2),
        prop::collection::vec(1usize..6, 3),
    ]
}

fn tensor_strategy() -> impl Strategy<Value = DenseTensor> {
    tensor_with_shape(shape_strategy())
}

fn tensor_with_shape(shapes: impl Strategy<Value = Vec<usize>>) -> impl Strategy<Value = DenseTensor> {
    shapes.prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-10.0f64..10.0, n).prop_map(move |d| DenseTensor::new(shape.clone(), d).unwrap())
    })
}

fn tensor_and_factors() -> impl Strategy<Value = (DenseTensor, FactorSet)> {
    (tensor_strategy(), 1usize..4, any::<u64>()).prop_map(|(t, rank, seed)| {
        let fs = random_factors(t.shape(), rank, 1.0 + t.frobenius_norm(), seed).unwrap();
        (t, fs)
    })
}

fn grid_strategy() -> impl Strategy<Value = QuantGrid> {
    (2u32..=8, 1e-3f64..2.0, any::<bool>()).prop_flat_map(|(bits, scale, symmetric)| {
        let half = 1i32 << (bits - 1);
        let zp = if symmetric { (0..=0).boxed() } else { (-half..half).boxed() };
        zp.prop_map(move |z| QuantGrid::new(bits, scale, z, symmetric).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fold_inverts_unfold(t in tensor_strategy()) {
        for mode in 0..t.ndim() {
            let m = unfold(&t, mode).unwrap();
            prop_assert_eq!(m.rows(), t.shape()[mode]);
            let back = fold(&m, mode, t.shape()).unwrap();
            prop_assert_eq!(&back, &t);
        }
    }

    #[test]
    fn mttkrp_matches_unfold_times_khatri_rao((t, fs) in tensor_and_factors()) {
        for mode in 0..t.ndim() {
            let fast = mttkrp(&t, &fs, mode).unwrap();
            let slow = unfold(&t, mode).unwrap().matmul(&khatri_rao_except(&fs, mode).unwrap()).unwrap();
            prop_assert!(rel_diff(slow.data(), fast.data()) <= 1e-12);
        }
    }

    #[test]
    fn reconstruct_matches_rank_one_sum((t, fs) in tensor_and_factors()) {
        let shape = t.shape().to_vec();
        let fast = reconstruct(&fs, &shape).unwrap();
        let brute = DenseTensor::from_fn(&shape, |ix| {
            (0..fs.rank())
                .map(|r| ix.iter().enumerate().map(|(m, &i)| fs.factor(m)[(i, r)]).product::<f64>())
                .sum()
        })
        .unwrap();
        prop_assert!(rel_diff(brute.data(), fast.data()) <= 1e-12);
    }

    #[test]
    fn gram_is_symmetric_psd(
        rows in 1usize..8,
        cols in 1usize..6,
        seed in any::<u64>(),
        probe in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let a = random_factors(&[rows, 1], cols, 1.0, seed).unwrap().factor(0).clone();
        let g = gram(&a);
        let x = &probe[..cols];
        let mut q = 0.0;
        for i in 0..cols {
            for j in 0..cols {
                prop_assert_eq!(g[(i, j)], g[(j, i)]);
                q += x[i] * g[(i, j)] * x[j];
            }
        }
        prop_assert!(q >= -1e-12 * g.frobenius_norm());
    }

    #[test]
    fn cholesky_solve_has_small_residual(n in 1usize..8, seed in any::<u64>(), rhs_rows in 1usize..4) {
        let a = random_factors(&[n + 2, rhs_rows], n, 1.0, seed).unwrap();
        let mut g = gram(a.factor(0));
        for i in 0..n {
            g[(i, i)] += 1e-3;
        }
        let b = a.factor(1);
        let x = Cholesky::factor(&g).unwrap().solve_rows(b).unwrap();
        let back = x.matmul(&g).unwrap();
        prop_assert!(rel_diff(b.data(), back.data()) < 1e-10);
    }

    #[test]
    fn snap_is_a_nearest_node(grid in grid_strategy(), x in -600.0f64..600.0) {
        let v = grid.snap(x);
        let d = (x - v).abs();
        for node in grid.nodes() {
            prop_assert!(d <= (x - node).abs());
        }
        prop_assert_eq!(grid.snap(v), v);
        prop_assert_eq!(grid.decode(grid.encode(x)), v);
    }

    #[test]
    fn symmetric_grid_is_odd(bits in 2u32..=8, scale in 1e-3f64..2.0, u in -1.0f64..1.0) {
        let grid = QuantGrid::symmetric(bits, scale).unwrap();
        let x = u * scale * f64::from(grid.code_max());
        prop_assert_eq!(grid.snap(-x), -grid.snap(x));
    }

    #[test]
    fn mse_never_loses_to_symmetric_minmax(
        bits in 2u32..=8,
        values in prop::collection::vec(-5.0f64..5.0, 1..64),
    ) {
        let sq = |p: &[f64]| values.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mse = project_values(&values, bits, QuantScheme::mse()).unwrap();
        let mm = project_values(&values, bits, QuantScheme::minmax(true)).unwrap();
        prop_assert!(sq(&mse.values) <= sq(&mm.values));
    }

    #[test]
    fn fixed_grid_projection_is_idempotent(grid in grid_strategy(), values in prop::collection::vec(-50.0f64..50.0, 1..32)) {
        let once: Vec<f64> = values.iter().map(|&x| grid.snap(x)).collect();
        let twice: Vec<f64> = once.iter().map(|&x| grid.snap(x)).collect();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn balancing_keeps_the_reconstruction((t, fs) in tensor_and_factors()) {
        let b = balance_factors(&fs);
        let before = reconstruct(&fs, t.shape()).unwrap();
        let after = reconstruct(&b, t.shape()).unwrap();
        prop_assert!(rel_diff(before.data(), after.data()) <= 1e-12);
        let norms: Vec<Vec<f64>> = b.factors().iter().map(Matrix::column_norms).collect();
        for r in 0..b.rank() {
            for n in &norms[1..] {
                prop_assert!((n[r] - norms[0][r]).abs() <= 1e-12 * norms[0][r]);
            }
        }
    }

    #[test]
    fn file_round_trip_is_bit_exact(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let mut x = seed;
        let data: Vec<f64> = (0..n)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits(x)
            })
            .collect();
        let t = DenseTensor::new(shape, data).unwrap();
        let back = decode(&encode(&t)).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let a: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn als_error_never_increases(
        t in tensor_with_shape(prop_oneof![
            prop::collection::vec(2usize..7, 2),
            prop::collection::vec(2usize..7, 3),
        ]),
        rank in 1usize..4,
        seed in any::<u64>(),
    ) {
        // below every extent the fit is not exact, so the trace is not
        // rounding noise around zero
        let rank = rank.min(*t.shape().iter().min().unwrap() - 1);
        let cfg = AlsConfig { rank, max_iters: 15, tol: 0.0, seed };
        let out = cp_als_traced(&t, &cfg).unwrap();
        for w in out.errors.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{:?}", out.errors);
        }
    }
}
