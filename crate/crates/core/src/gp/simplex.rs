//! Box-constrained Nelder-Mead used for lengthscale search.
//!
//! Bounds are enforced by projecting every trial point onto the box before
//! evaluation.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop once the spread of objective values over the simplex drops below this.
    pub f_tol: f64,
    /// ... and the simplex diameter drops below this.
    pub x_tol: f64,
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_evals: 1500,
            f_tol: 1e-10,
            x_tol: 1e-7,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(l, u);
    }
}

/// Maximises `f` over the box `[lower, upper]` starting from `x0`.
///
/// Non-finite objective values are treated as -inf.
pub fn maximize<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let dim = x0.len();
    let evals = std::cell::Cell::new(0usize);
    // minimise the negation
    let eval = |x: &mut Vec<f64>| -> f64 {
        project(x, lower, upper);
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    let mut start = x0.to_vec();
    let fs = eval(&mut start);
    pts.push(start.clone());
    let mut vals = vec![fs];
    for k in 0..dim {
        let mut p = start.clone();
        // step away from the nearer bound so the vertex stays distinct
        let step = opts.initial_step;
        p[k] = if p[k] + step <= upper[k] {
            p[k] + step
        } else {
            p[k] - step
        };
        vals.push(eval(&mut p));
        pts.push(p);
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[dim] - vals[0];
        let diameter = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let converged = (spread.is_finite() && spread <= opts.f_tol * (1.0 + vals[0].abs())) && diameter <= opts.x_tol;
        if converged || evals.get() >= opts.max_evals {
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|k| pts[..dim].iter().map(|p| p[k]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&pts[dim]).map(|(c, w)| c + t * (c - w)).collect() };

        let mut xr = along(alpha);
        let fr = eval(&mut xr);
        if fr < vals[0] {
            let mut xe = along(gamma);
            let fe = eval(&mut xe);
            if fe < fr {
                pts[dim] = xe;
                vals[dim] = fe;
            } else {
                pts[dim] = xr;
                vals[dim] = fr;
            }
        } else if fr < vals[dim - 1] {
            pts[dim] = xr;
            vals[dim] = fr;
        } else {
            let (mut xc, fc) = if fr < vals[dim] {
                let mut xc = along(rho);
                let fc = eval(&mut xc);
                (xc, fc)
            } else {
                let mut xc = along(-rho);
                let fc = eval(&mut xc);
                (xc, fc)
            };
            if fc < vals[dim].min(fr) {
                pts[dim] = std::mem::take(&mut xc);
                vals[dim] = fc;
            } else {
                for i in 1..=dim {
                    let mut p: Vec<f64> = pts[0].iter().zip(&pts[i]).map(|(b, x)| b + sigma * (x - b)).collect();
                    vals[i] = eval(&mut p);
                    pts[i] = p;
                }
            }
        }
    }

    let best = (0..=dim)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    SimplexResult {
        x: pts[best].clone(),
        value: -vals[best],
        evals: evals.get(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum() {
        let f = |x: &[f64]| -((x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.7).powi(2));
        let r = maximize(f, &[1.0, 1.0], &[-2.0, -2.0], &[2.0, 2.0], &SimplexOptions::default());
        assert!((r.x[0] - 0.3).abs() < 1e-5, "{:?}", r);
        assert!((r.x[1] + 0.7).abs() < 1e-5, "{:?}", r);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| x[0] + x[1];
        let r = maximize(f, &[0.0, 0.0], &[-1.0, -1.0], &[1.0, 0.5], &SimplexOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!((r.x[1] - 0.5).abs() < 1e-6);
    }
}
