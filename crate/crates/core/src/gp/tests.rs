use super::*;
use crate::design::{lhc_maximin, random_test_design, Domain};
use proptest::prelude::*;

fn unit_line() -> Domain {
    Domain::from_bounds(&[("x", 0.0, 1.0)]).unwrap()
}

fn cube3() -> Domain {
    Domain::from_bounds(&[("a", 0.0, 1.0), ("b", -2.0, 2.0), ("c", 5.0, 20.0)]).unwrap()
}

fn line_design(xs: &[f64]) -> DesignMatrix {
    DesignMatrix::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>(), unit_line()).unwrap()
}

fn smooth3(x: &[f64]) -> f64 {
    (2.0 * x[0]).sin() + 0.3 * x[1] * x[1] + 0.05 * x[2] + 0.2 * x[0] * x[1]
}

/// Textbook kriging equations with explicit dense inverses, kept apart from
/// the Cholesky-based implementation.
fn dense_oracle(xs: &[f64], f: &[f64], delta: f64, nugget: f64, linear: bool, x: f64) -> (f64, f64) {
    let n = xs.len();
    let r = |a: f64, b: f64| (-(a - b) * (a - b) / (delta * delta)).exp();
    let hrow = |a: f64| if linear { vec![1.0, a] } else { vec![1.0] };
    let m = hrow(0.0).len();
    let big_r = DMatrix::from_fn(n, n, |i, j| r(xs[i], xs[j]) + if i == j { nugget } else { 0.0 });
    let rinv = big_r.clone().try_inverse().unwrap();
    let big_h = DMatrix::from_fn(n, m, |i, j| hrow(xs[i])[j]);
    let fv = DVector::from_column_slice(f);
    let a = big_h.transpose() * &rinv * &big_h;
    let ainv = a.try_inverse().unwrap();
    let beta = &ainv * big_h.transpose() * &rinv * &fv;
    let resid = &fv - &big_h * &beta;
    let sigma2 = (resid.transpose() * &rinv * &resid)[(0, 0)] / (n - m) as f64;
    let rx = DVector::from_fn(n, |i, _| r(x, xs[i]));
    let hx = DVector::from_vec(hrow(x));
    let mean = hx.dot(&beta) + (rx.transpose() * &rinv * &resid)[(0, 0)];
    let u = &hx - big_h.transpose() * &rinv * &rx;
    let var = sigma2 * (1.0 - (rx.transpose() * &rinv * &rx)[(0, 0)] + (u.transpose() * &ainv * &u)[(0, 0)]);
    (mean, var)
}

#[test]
fn constant_outputs_give_constant_mean() {
    let d = lhc_maximin(12, &cube3(), 5, 2).unwrap();
    let f = vec![3.25; 12];
    let m = fit_gp(&d, &f, TrendKind::Constant, &FitOptions::default()).unwrap();
    let test = random_test_design(20, &cube3(), 4).unwrap();
    for x in test.rows() {
        let p = m.predict(&x).unwrap();
        assert!((p.mean - 3.25).abs() < 1e-9, "{p:?}");
    }
    for x in d.rows() {
        let p = m.predict(&x).unwrap();
        assert!(p.variance <= 10.0 * m.nugget() * m.sigma2().max(1e-300));
    }
}

#[test]
fn linear_trend_recovers_a_line() {
    let xs = [0.0, 0.2, 0.45, 0.7, 1.0];
    let d = line_design(&xs);
    let m = fit_gp(&d, &xs, TrendKind::Linear, &FitOptions::default()).unwrap();
    assert!(m.beta()[0].abs() < 1e-8, "{}", m.beta());
    assert!((m.beta()[1] - 1.0).abs() < 1e-8, "{}", m.beta());
    assert!(m.alpha().amax() * m.sigma2().sqrt() < 1e-6);
}

#[test]
fn sine_prediction_matches_dense_oracle() {
    let xs = [0.03, 0.21, 0.38, 0.55, 0.74, 0.96];
    let f: Vec<f64> = xs.iter().map(|x| (2.0 * std::f64::consts::PI * x).sin()).collect();
    let d = line_design(&xs);
    for trend in [TrendKind::Constant, TrendKind::Linear] {
        let linear = trend == TrendKind::Linear;
        let fixed = fit_gp_with_kernel(&d, &f, trend, &KernelSpec::new(vec![0.3], 1e-8).unwrap()).unwrap();
        let fitted = fit_gp(&d, &f, trend, &FitOptions::default()).unwrap();
        for m in [fixed, fitted] {
            for x in [0.1, 0.47, 0.66, 0.9] {
                let p = m.predict(&[x]).unwrap();
                let (om, ov) = dense_oracle(&xs, &f, m.lengthscales()[0], m.nugget(), linear, x);
                assert!((p.mean - om).abs() < 1e-8, "mean {} vs {}", p.mean, om);
                assert!((p.variance - ov.max(0.0)).abs() < 1e-8, "var {} vs {}", p.variance, ov);
            }
        }
    }
}

#[test]
fn interpolates_training_points() {
    let d = lhc_maximin(20, &cube3(), 10, 3).unwrap();
    let f: Vec<f64> = d.rows().iter().map(|x| smooth3(x)).collect();
    let m = fit_gp(&d, &f, TrendKind::Linear, &FitOptions::default()).unwrap();
    for (x, y) in d.rows().iter().zip(&f) {
        let p = m.predict(x).unwrap();
        assert!((p.mean - y).abs() <= 1e-6 * (1.0 + y.abs()), "{} vs {}", p.mean, y);
        assert!(p.variance <= 10.0 * m.nugget() * m.sigma2());
        assert!(!p.extrapolated);
    }
}

#[test]
fn far_queries_revert_to_prior_variance() {
    let xs = [0.0, 0.25, 0.5, 0.75, 1.0];
    let f = [0.3, -0.1, 0.4, 0.2, -0.3];
    let m = fit_gp_with_kernel(
        &line_design(&xs),
        &f,
        TrendKind::Linear,
        &KernelSpec::new(vec![0.02], 1e-8).unwrap(),
    )
    .unwrap();
    let p = m.predict(&[0.125]).unwrap();
    assert!(!p.extrapolated);
    assert!(p.variance >= m.sigma2() * (1.0 - 1e-9));
    let far = m.predict(&[3.0]).unwrap();
    assert!(far.extrapolated);
    assert!(far.variance >= m.sigma2());
}

#[test]
fn profile_objective_is_location_invariant_and_scale_equivariant() {
    let d = lhc_maximin(15, &cube3(), 5, 8).unwrap();
    let x = d.unit_points();
    let f: Vec<f64> = d.rows().iter().map(|x| smooth3(x)).collect();
    let k = KernelSpec::new(vec![0.4, 0.7, 1.3], 1e-8).unwrap();
    for trend in [TrendKind::Constant, TrendKind::Linear] {
        let base = loglik_profile(&x, &f, trend, &k);
        let shifted: Vec<f64> = f.iter().map(|v| v + 17.0).collect();
        assert!((loglik_profile(&x, &shifted, trend, &k) - base).abs() < 1e-7);
        let c: f64 = 3.5;
        let scaled: Vec<f64> = f.iter().map(|v| v * c).collect();
        let m = trend.n_coeffs(3) as f64;
        let expect = base - (15.0 - m) * c.ln();
        assert!((loglik_profile(&x, &scaled, trend, &k) - expect).abs() < 1e-7);
    }
}

#[test]
fn optimum_beats_random_lengthscales() {
    let d = lhc_maximin(20, &cube3(), 10, 5).unwrap();
    let f: Vec<f64> = d.rows().iter().map(|x| smooth3(x)).collect();
    let opts = FitOptions::default();
    let m = fit_gp(&d, &f, TrendKind::Linear, &opts).unwrap();
    let best = m.log_posterior();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = d.unit_points();
    for _ in 0..20 {
        let ls: Vec<f64> = (0..3)
            .map(|_| rand::Rng::random_range(&mut rng, opts.min_lengthscale.ln()..opts.max_lengthscale.ln()).exp())
            .collect();
        let v = loglik_profile(&x, &f, TrendKind::Linear, &KernelSpec::new(ls, opts.nugget).unwrap());
        assert!(best >= v, "{best} < {v}");
    }
}

#[test]
fn row_order_does_not_matter() {
    let d = lhc_maximin(18, &cube3(), 5, 6).unwrap();
    let f: Vec<f64> = d.rows().iter().map(|x| smooth3(x)).collect();
    let mut idx: Vec<usize> = (0..18).collect();
    idx.reverse();
    idx.swap(2, 9);
    let d2 = d.select_rows(&idx);
    let f2: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
    let opts = FitOptions::default();
    let a = fit_gp(&d, &f, TrendKind::Linear, &opts).unwrap();
    let b = fit_gp(&d2, &f2, TrendKind::Linear, &opts).unwrap();
    for x in random_test_design(10, &cube3(), 1).unwrap().rows() {
        let (pa, pb) = (a.predict(&x).unwrap(), b.predict(&x).unwrap());
        assert!((pa.mean - pb.mean).abs() <= 1e-10 * (1.0 + pa.mean.abs()));
        assert!((pa.variance - pb.variance).abs() <= 1e-10 * (1.0 + pa.variance));
    }
}

#[test]
fn lengthscales_survive_affine_output_changes() {
    let d = lhc_maximin(20, &cube3(), 10, 12).unwrap();
    let f: Vec<f64> = d.rows().iter().map(|x| smooth3(x)).collect();
    let g: Vec<f64> = f.iter().map(|v| 250.0 * v - 40.0).collect();
    let opts = FitOptions::default();
    let a = fit_gp(&d, &f, TrendKind::Linear, &opts).unwrap();
    let b = fit_gp(&d, &g, TrendKind::Linear, &opts).unwrap();
    for (la, lb) in a.lengthscales().iter().zip(b.lengthscales()) {
        assert!(
            (la.ln() - lb.ln()).abs() < 1e-3,
            "{:?} vs {:?}",
            a.lengthscales(),
            b.lengthscales()
        );
    }
}

#[test]
fn rejects_duplicates_and_small_ensembles() {
    let d = line_design(&[0.1, 0.5, 0.5, 0.9]);
    let r = fit_gp(&d, &[1.0, 2.0, 2.0, 3.0], TrendKind::Constant, &FitOptions::default());
    assert!(matches!(r, Err(Error::IllConditioned(_))));
    let d = line_design(&[0.1, 0.5, 0.9]);
    let r = fit_gp(&d, &[1.0, 2.0, 3.0], TrendKind::Linear, &FitOptions::default());
    assert!(matches!(r, Err(Error::InsufficientData(_))));
}

#[test]
fn serialisation_round_trip_and_tamper_check() {
    let d = lhc_maximin(15, &cube3(), 5, 21).unwrap();
    let f: Vec<f64> = d.rows().iter().map(|x| smooth3(x)).collect();
    let m = fit_gp(&d, &f, TrendKind::Linear, &FitOptions::default()).unwrap();
    let json = serde_json::to_string(&m).unwrap();
    let back: GpModel = serde_json::from_str(&json).unwrap();
    let x = [0.3, 0.1, 11.0];
    assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());

    let mut doc = m.to_doc();
    doc.outputs[3] += 0.5;
    let r = GpModel::from_doc(&doc);
    assert!(
        matches!(r, Err(Error::Checksum(_))),
        "{:?} {}",
        r.as_ref().map(|m| m.alpha_checksum()),
        m.alpha_checksum()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn variance_is_never_negative(a in -0.5f64..1.5, b in -3.0f64..3.0, c in 0.0f64..25.0) {
        let d = lhc_maximin(12, &cube3(), 3, 17).unwrap();
        let f: Vec<f64> = d.rows().iter().map(|x| smooth3(x)).collect();
        let m = fit_gp_with_kernel(&d, &f, TrendKind::Linear, &KernelSpec::new(vec![0.5, 0.8, 2.0], 1e-8).unwrap()).unwrap();
        let p = m.predict(&[a, b, c]).unwrap();
        prop_assert!(p.variance >= 0.0);
    }
}
