use super::*;
use crate::basis::{Ensemble, Truncation};
use crate::design::{lhc_maximin, random_test_design, DesignMatrix, Domain};
use crate::mvem::{fit_mv, run_ensemble, MvOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Adaptive Simpson on `[a, b]`.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `E[g(W)]` for `W ~ N(m, v)` by quadrature over the standard normal.
fn gauss_expect<G: Fn(f64) -> f64>(m: f64, v: f64, g: G) -> f64 {
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |t: f64| phi(t) * g(m + v.sqrt() * t);
    let panels = 2400;
    let h = 24.0 / panels as f64;
    (0..panels)
        .map(|i| {
            let a = -12.0 + i as f64 * h;
            simpson(&f, a, a + h, 1e-15)
        })
        .sum()
}

fn r(x: f64, w: f64, d: f64) -> f64 {
    (-(x - w).powi(2) / (d * d)).exp()
}

fn check_tuple(m: f64, v: f64, d: f64, w: f64, d2: f64, w2: f64) {
    let q_xi = gauss_expect(m, v, |x| r(x, w, d));
    let q_zeta = gauss_expect(m, v, |x| r(x, w, d) * r(x, w2, d));
    let q_psi = gauss_expect(m, v, |x| x * r(x, w, d));
    let q_cross = gauss_expect(m, v, |x| r(x, w, d) * r(x, w2, d2));
    let ctx = format!("m={m} v={v} d={d} w={w} d2={d2} w2={w2}");
    assert!((xi_factor(m, v, d, w) - q_xi).abs() <= 1e-8, "xi {ctx}");
    assert!((zeta_factor(m, v, d, w, w2) - q_zeta).abs() <= 1e-8, "zeta {ctx}");
    assert!((psi_factor(m, v, d, w) - q_psi).abs() <= 1e-8, "psi {ctx}");
    assert!(
        (cross_factor(m, v, d, w, d2, w2) - q_cross).abs() <= 1e-8,
        "cross {ctx}"
    );
}

#[test]
fn factors_match_quadrature_on_worked_case() {
    check_tuple(0.3, 0.04, 0.5, 0.7, 0.5, 0.7);
    let q = gauss_expect(0.3, 0.04, |x| r(x, 0.7, 0.5));
    assert!((xi_factor(0.3, 0.04, 0.5, 0.7) - q).abs() <= 1e-12);
}

#[test]
fn factors_match_quadrature_on_random_tuples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let m = rng.random_range(-1.0..1.0);
        let v = 10f64.powf(rng.random_range(-6.0..0.0));
        let d = 10f64.powf(rng.random_range(0.05f64.log10()..5f64.log10()));
        let d2 = 10f64.powf(rng.random_range(0.05f64.log10()..5f64.log10()));
        let w = rng.random_range(-1.0..1.0);
        let w2 = rng.random_range(-1.0..1.0);
        check_tuple(m, v, d, w, d2, w2);
    }
}

#[test]
fn cross_factor_reduces_to_zeta() {
    for &(m, v, d, a, b) in &[(0.1, 0.3, 0.4, -0.2, 0.9), (0.0, 1e-4, 2.0, 0.5, 0.5)] {
        let (x, y) = (cross_factor(m, v, d, a, d, b), zeta_factor(m, v, d, a, b));
        assert!((x - y).abs() <= 1e-14 * y.max(1e-300), "{x} {y}");
    }
}

#[test]
fn factors_collapse_without_variance() {
    let (m, d, a, b) = (0.25, 0.3, 0.6, -0.1);
    assert!((xi_factor(m, 0.0, d, a) - r(m, a, d)).abs() < 1e-15);
    assert!((zeta_factor(m, 0.0, d, a, b) - r(m, a, d) * r(m, b, d)).abs() < 1e-15);
    assert!((psi_factor(m, 0.0, d, a) - m * r(m, a, d)).abs() < 1e-15);
}

#[test]
fn diffuse_input_decorrelates() {
    assert!(xi_factor(0.4, 1e12, 0.5, 0.4) < 1e-5);
    assert!(xi_factor(0.4, 1e12, 0.5, 0.4) > 0.0);
}

// Two chained toy simulators. The first maps (a, b) to a 10-point curve; the
// second maps that curve's basis coefficients and an external z to another.

fn toy_labels(l: usize) -> Vec<String> {
    (0..l).map(|j| format!("y{j}")).collect()
}

fn sim1(x: &[f64]) -> Vec<f64> {
    (0..10)
        .map(|j| {
            let t = j as f64 / 9.0;
            (1.0 + x[0]) * (1.0 + 0.5 * t) + x[1] * (2.0 * t).cos() + 0.2 * x[0] * x[1] * t
        })
        .collect()
}

fn sim2(y: &[f64], z: f64) -> Vec<f64> {
    let total: f64 = y.iter().sum();
    let first = y[0];
    (0..8)
        .map(|j| {
            let s = j as f64 / 7.0;
            (total / 10.0) * (1.0 + z * s) + 0.3 * (first * (1.0 + s)).sin()
        })
        .collect()
}

struct Toy {
    net: LinkedNetwork,
    train2: Ensemble,
    opts: MvOptions,
}

fn toy() -> Toy {
    let d1 = Domain::from_bounds(&[("a", 0.0, 1.0), ("b", -1.0, 1.0)]).unwrap();
    let x1 = lhc_maximin(20, &d1, 10, 21).unwrap();
    let opts = MvOptions {
        truncation: Truncation::Components(2),
        ..Default::default()
    };
    let e1 = run_ensemble(&x1, toy_labels(10), |x| Ok(sim1(x))).unwrap();
    let em1 = fit_mv(&e1, &opts).unwrap();

    let d0 = Domain::from_bounds(&[("a", 0.0, 1.0), ("b", -1.0, 1.0), ("z", 0.0, 1.0)]).unwrap();
    let x2 = lhc_maximin(25, &d0, 10, 22).unwrap();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for x in x2.rows() {
        let y = sim1(&x[..2]);
        let c = em1.basis().project(&y).unwrap();
        rows.push(vec![c[0], c[1], x[2]]);
        runs.push(sim2(&y, x[2]));
    }
    let pad = |k: usize| {
        let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
        let w = hi - lo;
        (lo - 0.05 * w, hi + 0.05 * w)
    };
    let (b1, b2) = (pad(0), pad(1));
    let d2 = Domain::from_bounds(&[("c1", b1.0, b1.1), ("c2", b2.0, b2.1), ("z", 0.0, 1.0)]).unwrap();
    let train2 = Ensemble::from_runs(DesignMatrix::from_rows(&rows, d2).unwrap(), &runs, toy_labels(8)).unwrap();
    let em2 = fit_mv(&train2, &opts).unwrap().with_provenance(em1.basis().checksum());
    let net = LinkedNetwork::two_layer(em1, em2, 1).unwrap();
    Toy { net, train2, opts }
}

fn query_points(k: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = Domain::from_bounds(&[("a", 0.1, 0.9), ("b", -0.8, 0.8), ("z", 0.1, 0.9)]).unwrap();
    random_test_design(k, &d, seed).unwrap().rows()
}

#[test]
fn kernel_moments_satisfy_jensen() {
    let t = toy();
    let em2 = &t.net.nodes()[1].emulator;
    let p1 = t.net.nodes()[0].emulator.predict_mv(&[0.4, 0.1]).unwrap();
    let inputs = [
        InputMoment {
            mean: p1.coeff.means[0],
            var: p1.coeff.variances[0] + 0.01,
        },
        InputMoment {
            mean: p1.coeff.means[1],
            var: p1.coeff.variances[1] + 0.01,
        },
        InputMoment::fixed(0.5),
    ];
    let km = kernel_moments(&em2.models()[0], &inputs).unwrap();
    for i in 0..km.xi.len() {
        assert!(km.xi[i] > 0.0 && km.xi[i] <= 1.0);
        assert!(km.zeta[(i, i)] >= km.xi[i].powi(2));
        for j in 0..km.xi.len() {
            assert_eq!(km.zeta[(i, j)], km.zeta[(j, i)]);
        }
    }
}

#[test]
fn zero_input_variance_is_plain_prediction() {
    let t = toy();
    let em2 = &t.net.nodes()[1].emulator;
    let x = [0.3, -0.2, 0.6];
    let ins: Vec<InputMoment> = x.iter().map(|&v| InputMoment::fixed(v)).collect();
    let lp = linked_moments(em2, &ins).unwrap();
    let p = em2.predict_mv(&x).unwrap();
    for j in 0..8 {
        assert!((lp.mean[j] - p.mean[j]).abs() <= 1e-10 * p.mean[j].abs().max(1.0));
        assert!((lp.variance[j] - p.variance[j]).abs() <= 1e-10 * p.variance[j].max(1.0));
    }
}

#[test]
fn tiny_input_variance_is_continuous() {
    let t = toy();
    let em2 = &t.net.nodes()[1].emulator;
    let x = [0.3, -0.2, 0.6];
    let p = em2.predict_mv(&x).unwrap();
    let ins = [
        InputMoment { mean: x[0], var: 1e-12 },
        InputMoment { mean: x[1], var: 1e-12 },
        InputMoment::fixed(x[2]),
    ];
    let lp = linked_moments(em2, &ins).unwrap();
    for k in 0..2 {
        let (a, b) = (lp.coeff.variances[k], p.coeff.variances[k]);
        assert!((a - b).abs() <= 1e-6 * b.max(1e-12), "coeff {k}: {a} vs {b}");
        assert!((lp.coeff.means[k] - p.coeff.means[k]).abs() <= 1e-8);
    }
    for j in 0..8 {
        assert!((lp.mean[j] - p.mean[j]).abs() <= 1e-8 * p.mean[j].abs().max(1.0));
        assert!((lp.variance[j] - p.variance[j]).abs() <= 1e-6 * p.variance[j].max(1e-12));
    }
}

#[test]
fn linked_moments_ignore_training_order() {
    let t = toy();
    let idx: Vec<usize> = (0..t.train2.n()).rev().collect();
    let em1 = t.net.nodes()[0].emulator.clone();
    let em2 = fit_mv(&t.train2.select_runs(&idx), &t.opts)
        .unwrap()
        .with_provenance(em1.basis().checksum());
    let other = LinkedNetwork::two_layer(em1, em2, 1).unwrap();
    for q in query_points(3, 5) {
        let a = t.net.linked_predict(&q[..2], &q[2..]).unwrap();
        let b = other.linked_predict(&q[..2], &q[2..]).unwrap();
        for j in 0..8 {
            assert!((a.mean[j] - b.mean[j]).abs() <= 1e-10 * a.mean[j].abs().max(1.0));
            assert!((a.variance[j] - b.variance[j]).abs() <= 1e-10 * a.variance[j].max(1.0));
        }
    }
}

#[test]
fn linked_agrees_with_monte_carlo() {
    let t = toy();
    for (i, q) in query_points(3, 6).into_iter().enumerate() {
        let lp = t.net.linked_predict(&q[..2], &q[2..]).unwrap();
        let mc = t.net.mc_propagate(&q[..2], &q[2..], 100_000, 100 + i as u64).unwrap();
        for j in 0..8 {
            assert!(
                (lp.mean[j] - mc.mean[j]).abs() <= 3.0 * mc.mean_se[j],
                "point {i} output {j}: {} vs {} (se {})",
                lp.mean[j],
                mc.mean[j],
                mc.mean_se[j]
            );
            assert!(
                (lp.variance[j] - mc.variance[j]).abs() <= 0.05 * mc.variance[j],
                "point {i} output {j}: {} vs {}",
                lp.variance[j],
                mc.variance[j]
            );
        }
    }
}

#[test]
fn monte_carlo_error_shrinks_with_samples() {
    let t = toy();
    let q = [0.5, 0.0, 0.5];
    let a = t.net.mc_propagate(&q[..2], &q[2..], 20_000, 1).unwrap();
    let b = t.net.mc_propagate(&q[..2], &q[2..], 40_000, 1).unwrap();
    for j in 0..8 {
        let ratio = b.mean_se[j] / a.mean_se[j];
        assert!((ratio * 2f64.sqrt() - 1.0).abs() <= 0.2, "{ratio}");
    }
    let again = t.net.mc_propagate(&q[..2], &q[2..], 20_000, 1).unwrap();
    assert_eq!(a, again);
    assert!(t.net.mc_propagate(&q[..2], &q[2..], 99, 1).is_err());
}

#[test]
fn monte_carlo_without_upstream_noise_matches_composition() {
    let t = toy();
    let em1 = &t.net.nodes()[0].emulator;
    let x1 = em1.models()[0].inputs().row(3).iter().copied().collect::<Vec<_>>();
    let p1 = em1.predict_mv(&x1).unwrap();
    assert!(p1.coeff.variances.iter().all(|&v| v < 1e-20));
    let composed = t.net.composed_predict(&x1, &[0.5]).unwrap();
    let mc = t.net.mc_propagate(&x1, &[0.5], 50_000, 3).unwrap();
    for j in 0..8 {
        assert!((composed.mean[j] - mc.mean[j]).abs() <= 3.0 * mc.mean_se[j]);
        assert!((composed.variance[j] - mc.variance[j]).abs() <= 0.05 * mc.variance[j]);
    }
}

#[test]
fn wiring_is_validated() {
    let t = toy();
    let em1 = t.net.nodes()[0].emulator.clone();
    let em2 = t.net.nodes()[1].emulator.clone();
    assert!(matches!(
        LinkedNetwork::two_layer(em1.clone(), em2.clone(), 2),
        Err(Error::Config(_))
    ));
    let unstamped = em2.clone().with_provenance("");
    assert!(matches!(
        LinkedNetwork::two_layer(em1.clone(), unstamped, 1),
        Err(Error::Checksum(_))
    ));
    let backwards = vec![
        LinkedNode {
            emulator: em2.clone(),
            wiring: vec![
                Wire::Upstream { node: 1, coeff: 0 },
                Wire::Upstream { node: 1, coeff: 1 },
                Wire::External(0),
            ],
        },
        LinkedNode {
            emulator: em1.clone(),
            wiring: vec![Wire::External(1), Wire::External(2)],
        },
    ];
    assert!(matches!(LinkedNetwork::new(backwards), Err(Error::Config(_))));
    let twice = vec![LinkedNode {
        emulator: em1.clone(),
        wiring: vec![Wire::External(0), Wire::External(0)],
    }];
    assert!(matches!(LinkedNetwork::new(twice), Err(Error::Config(_))));
    assert!(t.net.linked_predict(&[0.5], &[0.5]).is_err());
}

#[test]
fn network_round_trips_through_json() {
    let t = toy();
    let s = serde_json::to_string(&t.net).unwrap();
    let back: LinkedNetwork = serde_json::from_str(&s).unwrap();
    let q = [0.2, 0.3, 0.4];
    assert_eq!(
        t.net.linked_predict(&q[..2], &q[2..]).unwrap(),
        back.linked_predict(&q[..2], &q[2..]).unwrap()
    );
}
