use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{LinkedNetwork, Wire};
use crate::basis::GaussianVector;
use crate::error::{Error, Result};

const SHARDS: usize = 16;
pub const MIN_SAMPLES: usize = 100;

/// Sample moments of the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: DVector<f64>,
    /// Sample variance plus the output basis's truncation residual.
    pub variance: DVector<f64>,
    pub mean_se: DVector<f64>,
    pub variance_se: DVector<f64>,
    pub n_samples: usize,
}

impl McEstimate {
    pub fn sd(&self) -> DVector<f64> {
        self.variance.map(f64::sqrt)
    }
}

fn draw(g: &GaussianVector, rng: &mut ChaCha8Rng) -> Vec<f64> {
    g.means
        .iter()
        .zip(&g.variances)
        .map(|(m, v)| {
            let z: f64 = rng.sample(StandardNormal);
            m + v.sqrt() * z
        })
        .collect()
}

pub(super) fn propagate(net: &LinkedNetwork, ext: &[f64], n: usize, seed: u64) -> Result<McEstimate> {
    net.check_external(ext)?;
    if n < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "{n} samples; need at least {MIN_SAMPLES}"
        )));
    }
    let roots = net
        .nodes
        .iter()
        .map(|node| {
            if node.wiring.iter().all(|w| matches!(w, Wire::External(_))) {
                let x: Vec<f64> = node
                    .wiring
                    .iter()
                    .map(|w| match *w {
                        Wire::External(e) => ext[e],
                        Wire::Upstream { .. } => unreachable!(),
                    })
                    .collect();
                node.emulator.predict_coefficients(&x).map(|(g, _)| Some(g))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let sample = |rng: &mut ChaCha8Rng| -> Result<DVector<f64>> {
        let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(net.nodes.len());
        for (node, root) in net.nodes.iter().zip(&roots) {
            let g = match root {
                Some(g) => draw(g, rng),
                None => {
                    let x: Vec<f64> = node
                        .wiring
                        .iter()
                        .map(|w| match *w {
                            Wire::External(e) => ext[e],
                            Wire::Upstream { node, coeff } => coeffs[node][coeff],
                        })
                        .collect();
                    let (g, _) = node.emulator.predict_coefficients(&x)?;
                    draw(&g, rng)
                }
            };
            coeffs.push(g);
        }
        net.output().basis().reconstruct(coeffs.last().expect("non-empty"))
    };

    let samples: Vec<DVector<f64>> = (0..SHARDS)
        .into_par_iter()
        .map(|shard| {
            let size = n / SHARDS + usize::from(shard < n % SHARDS);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard as u64);
            (0..size).map(|_| sample(&mut rng)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let l = net.output().basis().l();
    let nf = n as f64;
    let mean = samples.iter().fold(DVector::<f64>::zeros(l), |acc, y| acc + y) / nf;
    let mut m2 = DVector::<f64>::zeros(l);
    let mut m4 = DVector::<f64>::zeros(l);
    for y in &samples {
        for j in 0..l {
            let d2 = (y[j] - mean[j]).powi(2);
            m2[j] += d2;
            m4[j] += d2 * d2;
        }
    }
    let var = &m2 / (nf - 1.0);
    let mean_se = var.map(|v| (v / nf).sqrt());
    let variance_se = DVector::from_fn(l, |j, _| {
        let (c2, c4) = (m2[j] / nf, m4[j] / nf);
        ((c4 - c2 * c2).max(0.0) / nf).sqrt()
    });
    Ok(McEstimate {
        variance: var + net.output().basis().residual_var(),
        mean,
        mean_se,
        variance_se,
        n_samples: n,
    })
}
