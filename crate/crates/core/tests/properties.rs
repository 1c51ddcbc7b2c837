use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use mhe_core::analysis::{c1, gamma, partition_horizons, CertificateRatios};
use mhe_core::certificates::{membership_margin, ObservabilityCertificate};
use mhe_core::harness::{generate_disturbances, ComponentSpec, RunRecord};
use mhe_core::linalg::{gen_max_eig, min_eigenvalue, quad};
use mhe_core::model::{project_box, simulate_truth, BoxSet, ChuaModel, LinearModel};
use mhe_core::monitor::{observability_gramian, MonitorConfig};
use mhe_core::solver::{solve, NlsProblem, SolveOptions};

fn spd(n: usize, seed: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

fn ratios(eta_w: f64, eta_o: f64, sw: f64, po: f64) -> CertificateRatios {
    CertificateRatios {
        po_wbar: po,
        sw_vlow: sw,
        wbar_wlow: 1.3,
        vbar_vlow: 1.7,
        vbar_so: 0.8,
        eta_w,
        eta_o,
    }
}

struct Linear {
    a: DMatrix<f64>,
    b: DVector<f64>,
    bounds: BoxSet,
}

impl NlsProblem for Linear {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }
    fn residuals(&self, d: &DVector<f64>) -> DVector<f64> {
        &self.a * d - &self.b
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_idempotent_and_in_box(
        lo in prop::collection::vec(-5.0f64..0.0, 4),
        width in prop::collection::vec(0.0f64..3.0, 4),
        v in prop::collection::vec(-10.0f64..10.0, 4),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let b = BoxSet::from_slices(&lo, &hi).unwrap();
        let v = DVector::from_vec(v);
        let p = project_box(&b, &v);
        prop_assert_eq!(project_box(&b, &p), p.clone());
        prop_assert!(b.contains(&p, 0.0));
        if b.contains(&v, 0.0) {
            prop_assert_eq!(p, v);
        }
    }

    #[test]
    fn c1_closed_form_matches_summation(
        eta in 0.05f64..0.99,
        r in 0.5f64..50.0,
        s in 0usize..60,
        sw in 0.0f64..2.0,
        eta_w in 0.01f64..0.9,
    ) {
        let rt = ratios(eta_w, 0.1, sw, 2.0);
        let lead = r.max(sw / eta_w);
        let direct: f64 = (0..=s).map(|i| eta.powi(i as i32)).sum::<f64>() * (s as f64 + 1.0) * lead;
        let closed = c1(&rt, eta, r, s);
        prop_assert!((closed - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn gamma_is_nonincreasing(eta_w in 0.0f64..0.99, eta_o in 0.0f64..0.99, po in 0.0f64..10.0, s in 0usize..100) {
        let rt = ratios(eta_w, eta_o, 0.1, po);
        prop_assert!(gamma(&rt, s + 1) <= gamma(&rt, s));
    }

    #[test]
    fn generalized_eigenvalue_bounds_quadratic_forms(
        sa in prop::collection::vec(-2.0f64..2.0, 9),
        sb in prop::collection::vec(-2.0f64..2.0, 9),
        x in prop::collection::vec(-3.0f64..3.0, 3),
        scale in 0.1f64..10.0,
    ) {
        let a = spd(3, &sa);
        let b = spd(3, &sb);
        let l = gen_max_eig(&a, &b).unwrap();
        let x = DVector::from_vec(x);
        prop_assert!(quad(&x, &a) <= l * quad(&x, &b) * (1.0 + 1e-10) + 1e-12);
        let ls = gen_max_eig(&(&a * scale), &b).unwrap();
        prop_assert!((ls - scale * l).abs() <= 1e-9 * ls.abs().max(1.0));
        prop_assert!((gen_max_eig(&b, &b).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn partition_matches_brute_force(flags in prop::collection::vec(any::<bool>(), 1..120), n in 1usize..12) {
        let t = flags.len() - 1;
        let p = partition_horizons(&flags, t, n);
        let mut brute: Vec<usize> = (n..=t).filter(|&tau| (t - tau) % n == 0 && flags[tau]).collect();
        brute.reverse();
        prop_assert_eq!(p.l, t % n);
        prop_assert_eq!(p.times.clone(), brute.clone());
        prop_assert_eq!(p.k(), brute.len());
        prop_assert_eq!(p.t_m(p.k() + 1), t % n);
    }

    #[test]
    fn membership_margin_monotone_in_output_weight(
        seed in any::<u64>(),
        dz in -1.0f64..1.0,
        r1 in 0.0f64..5.0,
        dr in 0.0f64..5.0,
    ) {
        let m = LinearModel::scalar(0.7, 1.0, 1.0);
        let spec = vec![ComponentSpec::Uniform { bound: 0.1 }];
        let w = generate_disturbances(&spec, seed, 8).unwrap();
        let us = vec![DVector::zeros(0); 8];
        let a = simulate_truth(&m, &DVector::from_element(1, 0.2), &DVector::from_element(1, 0.3), &us, &w).unwrap();
        let b = simulate_truth(&m, &DVector::from_element(1, -0.1), &DVector::from_element(1, 0.3 + dz), &us, &w).unwrap();
        let cert = |r: f64| ObservabilityCertificate {
            s_o: DMatrix::identity(1, 1),
            p_o: DMatrix::identity(1, 1),
            q_o: DMatrix::identity(1, 1),
            r_o: DMatrix::from_element(1, 1, r),
            eta_o: 0.5,
        };
        let lo = membership_margin(&cert(r1), &a, &b).unwrap();
        let hi = membership_margin(&cert(r1 + dr), &a, &b).unwrap();
        prop_assert!(hi >= lo - 1e-15);
    }

    #[test]
    fn solver_matches_least_squares(sa in prop::collection::vec(-2.0f64..2.0, 24), sb in prop::collection::vec(-2.0f64..2.0, 6)) {
        let a = DMatrix::from_fn(6, 4, |i, j| sa[i * 4 + j]) + DMatrix::from_fn(6, 4, |i, j| if i == j { 3.0 } else { 0.0 });
        let b = DVector::from_vec(sb);
        let p = Linear { a: a.clone(), b: b.clone(), bounds: BoxSet::unbounded(4) };
        let res = solve(&p, &DVector::zeros(4), &SolveOptions::default()).unwrap();
        let exact = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &b));
        prop_assert!((&res.d_opt - &exact).norm() <= 1e-6 * exact.norm().max(1.0));
    }

    #[test]
    fn disturbances_within_declared_bounds(seed in any::<u64>(), bound in 1e-6f64..1.0) {
        let spec = vec![ComponentSpec::Uniform { bound }, ComponentSpec::SquareWaves {
            amplitudes: vec![bound / 2.0, bound / 2.0], periods: vec![7, 11], phases: vec![0, 3] }];
        for w in generate_disturbances(&spec, seed, 200).unwrap() {
            prop_assert!(w[0].abs() <= bound);
            prop_assert!(w[1].abs() <= bound);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn monitor_gramian_psd_and_scales_with_c(
        x1 in prop::collection::vec(-1.0f64..3.0, 2..40),
        sigma in 0.1f64..10.0,
        c in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let m = ChuaModel::nominal();
        let n = x1.len();
        let xs: Vec<DVector<f64>> = x1.iter().map(|&v| DVector::from_vec(vec![v, 0.1, -0.2])).collect();
        let zs = vec![DVector::from_element(1, 0.45); n];
        let us = vec![DVector::zeros(0); n];
        let ws = vec![DVector::zeros(5); n];
        let cm = DMatrix::from_row_slice(1, 3, &c);
        let cfg = MonitorConfig::with_defaults(cm.clone());
        let out = observability_gramian(&cfg, &m, &xs, &zs, &us, &ws).unwrap();
        prop_assert!(min_eigenvalue(&out.o) >= -1e-12);
        prop_assert!(out.alpha_t >= -1e-12);
        let cfg_s = MonitorConfig::with_defaults(&cm * sigma);
        let out_s = observability_gramian(&cfg_s, &m, &xs, &zs, &us, &ws).unwrap();
        let expect = sigma * sigma * out.alpha_t;
        prop_assert!((out_s.alpha_t - expect).abs() <= 1e-12 * expect.abs() + 1e-300);
        prop_assert!((&out_s.o - &out.o * (sigma * sigma)).amax() <= 1e-12 * out_s.o.amax() + 1e-300);
    }

    #[test]
    fn monitor_discount_after_unexcited_step(x1 in prop::collection::vec(0.5f64..3.0, 2..30)) {
        // Φ = 0 and both the old and the appended last point have ∂f/∂z = 0 (x₁ = 0).
        let m = ChuaModel::nominal();
        let cfg = MonitorConfig::new(0.9, DMatrix::zeros(3, 3), DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]), 1e-3).unwrap();
        let mut xs: Vec<DVector<f64>> = x1.iter().map(|&v| DVector::from_vec(vec![v, 0.0, 0.0])).collect();
        xs.push(DVector::zeros(3));
        let pad = |k: usize| (vec![DVector::from_element(1, 0.45); k], vec![DVector::zeros(0); k], vec![DVector::zeros(5); k]);
        let (zs, us, ws) = pad(xs.len());
        let a = observability_gramian(&cfg, &m, &xs, &zs, &us, &ws).unwrap();
        xs.push(DVector::zeros(3));
        let (zs, us, ws) = pad(xs.len());
        let b = observability_gramian(&cfg, &m, &xs, &zs, &us, &ws).unwrap();
        prop_assert!(b.alpha_t >= 0.9 * a.alpha_t * (1.0 - 1e-12));
        prop_assert!(b.alpha_t <= a.alpha_t);
    }

    #[test]
    fn record_csv_round_trip(vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 12)) {
        use mhe_core::harness::record::{RecordDims, RunRow};
        let s = |v: f64| DVector::from_element(1, v);
        let mut rec = RunRecord::new(RecordDims { n_x: 1, n_z: 1, n_w: 1, n_y: 1 }, false);
        rec.rows.push(RunRow {
            t: 0, x: s(vals[0]), z: s(vals[1]), w: Some(s(vals[2])), y: Some(s(vals[3])),
            x_hat: s(vals[4]), z_hat: s(vals[5]), z_win: s(vals[6]), z_bar: s(vals[7]),
            ex_norm: vals[8], ez_norm: vals[9], alpha: vals[10], observable: true, member: Some(false),
            iterations: 5, objective: vals[11], candidate_cost: vals[0], candidate_objective: vals[1],
            solver_objective: vals[2], candidate_feasible: false, baseline: None,
        });
        let back = RunRecord::read_csv(rec.to_csv_string().unwrap().as_bytes()).unwrap();
        prop_assert_eq!(rec, back);
    }
}
