//! Feed-forward networks of multivariate emulators, linked by propagating
//! Gaussian coefficient moments from upstream nodes into downstream inputs.

mod mc;
mod moments;
#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvem::MvEmulator;

pub use mc::McEstimate;
pub use moments::{
    cross_factor, kernel_moments, linked_moments, psi_factor, xi_factor, zeta_factor, InputMoment, KernelMoments,
    LinkedPrediction,
};

/// Source of one node input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wire {
    /// Coefficient `coeff` of an earlier node.
    Upstream { node: usize, coeff: usize },
    /// Entry of the external input vector.
    External(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkedNode {
    pub emulator: MvEmulator,
    /// One wire per input dimension of `emulator`.
    pub wiring: Vec<Wire>,
}

/// Emulators in topological order; the last node is the network output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NetworkDoc", into = "NetworkDoc")]
pub struct LinkedNetwork {
    nodes: Vec<LinkedNode>,
    n_external: usize,
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    nodes: Vec<LinkedNode>,
}

impl TryFrom<NetworkDoc> for LinkedNetwork {
    type Error = Error;
    fn try_from(d: NetworkDoc) -> Result<Self> {
        LinkedNetwork::new(d.nodes)
    }
}

impl From<LinkedNetwork> for NetworkDoc {
    fn from(n: LinkedNetwork) -> Self {
        NetworkDoc { nodes: n.nodes }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Linked,
    Composed,
}

impl LinkedNetwork {
    /// Checks wiring and provenance. A node fed by an upstream node must
    /// list that node's basis checksum in its provenance.
    pub fn new(nodes: Vec<LinkedNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Config("network has no nodes".into()));
        }
        let mut externals = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            let p = node.emulator.domain().len();
            if node.wiring.len() != p {
                return Err(Error::Config(format!(
                    "node {i}: {} wires for {p} inputs",
                    node.wiring.len()
                )));
            }
            for (k, w) in node.wiring.iter().enumerate() {
                if node.wiring[..k].contains(w) {
                    return Err(Error::Config(format!("node {i}: {w:?} wired twice")));
                }
                match *w {
                    Wire::External(e) => externals.push(e),
                    Wire::Upstream { node: up, coeff } => {
                        if up >= i {
                            return Err(Error::Config(format!(
                                "node {i}: input from node {up} breaks feed-forward order"
                            )));
                        }
                        if coeff >= nodes[up].emulator.q() {
                            return Err(Error::Config(format!("node {i}: node {up} has no coefficient {coeff}")));
                        }
                        let sum = nodes[up].emulator.basis().checksum();
                        if !node.emulator.provenance().contains(&sum) {
                            return Err(Error::Checksum(format!(
                                "node {i} was not trained on projections with node {up}'s basis"
                            )));
                        }
                    }
                }
            }
        }
        externals.sort_unstable();
        externals.dedup();
        let n_external = externals.len();
        if externals.iter().enumerate().any(|(i, &e)| i != e) {
            return Err(Error::Config(format!(
                "external inputs are not contiguous: {externals:?}"
            )));
        }
        Ok(Self { nodes, n_external })
    }

    /// `layer2` takes the coefficients of `layer1` followed by `n_z`
    /// external inputs. External inputs are `x1` followed by `z`.
    pub fn two_layer(layer1: MvEmulator, layer2: MvEmulator, n_z: usize) -> Result<Self> {
        let p1 = layer1.domain().len();
        let q1 = layer1.q();
        if layer2.domain().len() != q1 + n_z {
            return Err(Error::Config(format!(
                "second layer has {} inputs; expected {q1} coefficients plus {n_z} external",
                layer2.domain().len()
            )));
        }
        let w1 = (0..p1).map(Wire::External).collect();
        let w2 = (0..q1)
            .map(|coeff| Wire::Upstream { node: 0, coeff })
            .chain((0..n_z).map(|j| Wire::External(p1 + j)))
            .collect();
        Self::new(vec![
            LinkedNode {
                emulator: layer1,
                wiring: w1,
            },
            LinkedNode {
                emulator: layer2,
                wiring: w2,
            },
        ])
    }

    pub fn nodes(&self) -> &[LinkedNode] {
        &self.nodes
    }

    pub fn n_external(&self) -> usize {
        self.n_external
    }

    pub fn output(&self) -> &MvEmulator {
        &self.nodes.last().expect("non-empty").emulator
    }

    fn check_external(&self, ext: &[f64]) -> Result<()> {
        if ext.len() != self.n_external {
            return Err(Error::Config(format!(
                "{} external inputs given; network takes {}",
                ext.len(),
                self.n_external
            )));
        }
        Ok(())
    }

    fn propagate(&self, ext: &[f64], mode: Mode) -> Result<Vec<LinkedPrediction>> {
        self.check_external(ext)?;
        let mut states: Vec<LinkedPrediction> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let inputs: Vec<InputMoment> = node
                .wiring
                .iter()
                .map(|w| match *w {
                    Wire::External(e) => InputMoment::fixed(ext[e]),
                    Wire::Upstream { node, coeff } => {
                        let c = &states[node].coeff;
                        InputMoment {
                            mean: c.means[coeff],
                            var: if mode == Mode::Linked { c.variances[coeff] } else { 0.0 },
                        }
                    }
                })
                .collect();
            let mut p = linked_moments(&node.emulator, &inputs)?;
            p.extrapolated |= node.wiring.iter().any(|w| match *w {
                Wire::Upstream { node, .. } => states[node].extrapolated,
                Wire::External(_) => false,
            });
            states.push(p);
        }
        Ok(states)
    }

    /// Closed-form moments of the network output at the given external
    /// inputs.
    pub fn predict(&self, ext: &[f64]) -> Result<LinkedPrediction> {
        Ok(self.propagate(ext, Mode::Linked)?.pop().expect("non-empty"))
    }

    /// Each node evaluated at its upstream means, ignoring upstream
    /// uncertainty.
    pub fn predict_composed(&self, ext: &[f64]) -> Result<LinkedPrediction> {
        Ok(self.propagate(ext, Mode::Composed)?.pop().expect("non-empty"))
    }

    /// Moments of every node, in order.
    pub fn predict_all(&self, ext: &[f64]) -> Result<Vec<LinkedPrediction>> {
        self.propagate(ext, Mode::Linked)
    }

    pub fn linked_predict(&self, x1: &[f64], z: &[f64]) -> Result<LinkedPrediction> {
        self.predict(&concat(x1, z))
    }

    pub fn composed_predict(&self, x1: &[f64], z: &[f64]) -> Result<LinkedPrediction> {
        self.predict_composed(&concat(x1, z))
    }

    /// Monte Carlo estimate of the output moments; deterministic in `seed`.
    pub fn mc_propagate(&self, x1: &[f64], z: &[f64], n_samples: usize, seed: u64) -> Result<McEstimate> {
        mc::propagate(self, &concat(x1, z), n_samples, seed)
    }

    pub fn mc_predict(&self, ext: &[f64], n_samples: usize, seed: u64) -> Result<McEstimate> {
        mc::propagate(self, ext, n_samples, seed)
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}
