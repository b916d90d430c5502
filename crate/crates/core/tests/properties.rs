use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use romforge::ann::{init_mlp, lr_at_epoch};
use romforge::config::RunConfig;
use romforge::eval::metric_e_u;
use romforge::fem::{FemModel, LoadParams, Mesh, ResidualModel};
use romforge::manifold::PromAnnManifold;
use romforge::pod::{build_bases, compute_svd};
use romforge::snapshots::{radical_inverse, sample_parameters, ParamBox};

fn small_beam() -> FemModel {
    FemModel::new(Mesh::cantilever(6, 2, 1.0, 0.25).unwrap(), 3.0e5, 0.4).unwrap()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

/// A snapshot-like matrix with a geometric spectrum, well above the rank guard.
fn graded(seed: DMatrix<f64>) -> DMatrix<f64> {
    let svd = seed.svd(true, true);
    let k = svd.singular_values.len();
    let s = DVector::from_fn(k, |i, _| 0.5f64.powi(i as i32));
    svd.u.unwrap() * DMatrix::from_diagonal(&s) * svd.v_t.unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radical_inverse_reverses_digits(index in 0u64..1_000_000, base in prop::sample::select(vec![2u64, 3, 5, 7])) {
        let mut k = index;
        let mut digits = Vec::new();
        while k > 0 {
            digits.push(k % base);
            k /= base;
        }
        let mut num = 0u128;
        for &d in &digits {
            num = num * base as u128 + d as u128;
        }
        let den = (base as u128).pow(digits.len() as u32);
        let r = radical_inverse(index, base);
        prop_assert!((0.0..1.0).contains(&r));
        prop_assert_eq!(r, num as f64 / den as f64);
    }

    #[test]
    fn sampled_loads_stay_in_the_box(lo in -5000.0f64..0.0, w in 1.0f64..5000.0, start in 1u64..1000) {
        let domain = ParamBox { px: [lo, lo + w], py: [lo, lo + 2.0 * w] };
        for p in sample_parameters(50, &domain, start) {
            prop_assert!(domain.contains(&p));
        }
    }

    #[test]
    fn svd_factors_are_orthonormal_and_ordered(s in matrix(30, 8)) {
        let f = compute_svd(&s).unwrap();
        let k = f.sigma.len();
        prop_assert!(f.sigma.as_slice().windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((f.u.transpose() * &f.u - DMatrix::identity(k, k)).amax() <= 1e-10);
        let back = &f.u * DMatrix::from_diagonal(&f.sigma) * f.v.transpose();
        prop_assert!((back - &s).norm() <= 1e-8 * s.norm());
    }

    #[test]
    fn linear_part_inverts_and_bases_are_orthogonal(seed in matrix(40, 10), q in prop::collection::vec(-2.0f64..2.0, 3)) {
        let s = graded(seed);
        let b = build_bases(&compute_svd(&s).unwrap(), 3, 4, 10).unwrap();
        prop_assert!((b.phi.transpose() * &b.phi_bar).amax() <= 1e-10);
        let q = DVector::from_vec(q);
        prop_assert!((b.encode(&b.decode_linear_part(&q)) - &q).amax() <= 1e-10);
    }

    #[test]
    fn manifold_preserves_the_origin_and_has_exact_jacobian(seed in matrix(40, 10), net_seed in 0u64..1000, q in prop::collection::vec(-1.0f64..1.0, 3)) {
        let s = graded(seed);
        let b = build_bases(&compute_svd(&s).unwrap(), 3, 4, 10).unwrap();
        let mf = PromAnnManifold::scaled(b, init_mlp(&[3, 6, 4], net_seed).unwrap()).unwrap();
        let zero = DVector::zeros(40);
        prop_assert!(mf.decode(&mf.encode(&zero)).iter().all(|&x| x == 0.0));
        let q = DVector::from_vec(q);
        let jac = mf.decode_jacobian(&q);
        let h = 1e-6;
        for k in 0..3 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let fd = (mf.decode(&qp) - mf.decode(&qm)) / (2.0 * h);
            prop_assert!((&fd - jac.column(k)).norm() <= 1e-6 * jac.column(k).norm().max(1e-12));
        }
    }

    #[test]
    fn bias_free_network_maps_zero_to_zero(widths in prop::collection::vec(1usize..12, 1..4), seed in 0u64..1000) {
        let mut dims = vec![4];
        dims.extend(widths);
        dims.push(5);
        let net = init_mlp(&dims, seed).unwrap();
        prop_assert!(net.forward(&DVector::zeros(4)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cosine_schedule_decays_within_bounds(lr0 in 1e-5f64..1e-1, ratio in 1e-4f64..1.0, total in 1usize..500) {
        let lr_min = lr0 * ratio;
        let lrs: Vec<f64> = (0..=total).map(|e| lr_at_epoch(lr0, lr_min, e, total)).collect();
        prop_assert!((lrs[0] - lr0).abs() <= 1e-15 * lr0);
        prop_assert!((lrs[total] - lr_min).abs() <= 1e-12 * lr0);
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0] + 1e-18));
    }

    #[test]
    fn relative_error_is_scale_invariant(truth in matrix(12, 5), noise in matrix(12, 5), c in 0.1f64..100.0) {
        let truth = truth.add_scalar(2.0);
        let pred = &truth + noise * 1e-3;
        let a = metric_e_u(&pred, &truth).unwrap();
        let b = metric_e_u(&(pred * c), &(truth.clone() * c)).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a);
        prop_assert_eq!(metric_e_u(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn tangent_is_load_independent_and_matches_vjp(
        u in prop::collection::vec(-0.01f64..0.01, 36),
        w in prop::collection::vec(-1.0f64..1.0, 36),
        px in -3000.0f64..3000.0,
        py in -3000.0f64..3000.0,
    ) {
        let model = small_beam();
        prop_assert_eq!(model.n_dofs(), 36);
        let u = DVector::from_vec(u);
        let w = DVector::from_vec(w);
        let load = LoadParams::new(px, py);
        let j0 = model.jacobian(&u, &LoadParams::default()).unwrap().to_dense();
        let j1 = model.jacobian(&u, &load).unwrap().to_dense();
        prop_assert_eq!(&j0, &j1);
        let vjp = model.residual_vjp(&u, &load, &w).unwrap();
        let explicit = j1.transpose() * &w;
        prop_assert!((&vjp - &explicit).norm() <= 1e-12 * explicit.norm());
    }

    #[test]
    fn residual_is_external_force_at_rest(px in -3000.0f64..3000.0, py in -3000.0f64..3000.0) {
        let model = small_beam();
        let load = LoadParams::new(px, py);
        let r = model.residual(&DVector::zeros(model.n_dofs()), &load).unwrap();
        let f = model.external_force(&load);
        prop_assert!((r + f).amax() <= 1e-9 * (px.abs() + py.abs()).max(1.0));
    }

    #[test]
    fn config_hashes_survive_json_round_trip(seed in 0u64..1000, train in 60usize..800) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.sampling.train = train;
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(back.dataset_hash(), cfg.dataset_hash());
        prop_assert_eq!(back.training_hash(), cfg.training_hash());
    }
}
