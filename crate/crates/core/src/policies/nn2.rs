//! One-hidden-layer ReLU network benchmark policy:
//!
//! ```text
//! f_k(x) = (1/m) · Σ_{i=1..m} a_i^k · ReLU((w_i^k)ᵀ x + b_i^k)
//! ```
//!
//! Each output k owns its private hidden layer, so the parameter count is
//! m·d_z·(d_x+2). The flat layout stores, per output k: the m output
//! coefficients a^k, the m biases b^k, then the m×d_x weight rows.
//! The ReLU subgradient at 0 is taken as 0.

use super::{DecisionRule, PolicyError};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    d_x: usize,
    d_z: usize,
    m: usize,
    theta: Vec<f64>,
}

impl TwoLayerNet {
    /// Builds a network with output coefficients iid N(0, 1/m), hidden
    /// weights iid N(0, 1/d_x) and zero biases.
    pub fn init(d_x: usize, d_z: usize, m: usize, rng: &mut impl Rng) -> Result<Self, PolicyError> {
        let mut net = Self::zeros(d_x, d_z, m)?;
        let sd_a = (1.0 / m as f64).sqrt();
        let sd_w = (1.0 / d_x as f64).sqrt();
        for k in 0..d_z {
            for i in 0..m {
                let idx = net.a_index(k, i);
                let z: f64 = rng.sample(StandardNormal);
                net.theta[idx] = sd_a * z;
            }
            for i in 0..m {
                for j in 0..d_x {
                    let idx = net.w_index(k, i) + j;
                    let z: f64 = rng.sample(StandardNormal);
                    net.theta[idx] = sd_w * z;
                }
            }
        }
        Ok(net)
    }

    pub fn zeros(d_x: usize, d_z: usize, m: usize) -> Result<Self, PolicyError> {
        if d_x < 1 || d_z < 1 || m < 1 {
            return Err(PolicyError::InvalidConfig(format!(
                "need d_x, d_z, m ≥ 1; got {d_x}, {d_z}, {m}"
            )));
        }
        Ok(TwoLayerNet {
            d_x,
            d_z,
            m,
            theta: vec![0.0; m * d_z * (d_x + 2)],
        })
    }

    pub fn hidden_width(&self) -> usize {
        self.m
    }

    fn block(&self, k: usize) -> usize {
        k * self.m * (self.d_x + 2)
    }

    fn a_index(&self, k: usize, i: usize) -> usize {
        self.block(k) + i
    }

    fn b_index(&self, k: usize, i: usize) -> usize {
        self.block(k) + self.m + i
    }

    fn w_index(&self, k: usize, i: usize) -> usize {
        self.block(k) + 2 * self.m + i * self.d_x
    }
}

impl DecisionRule for TwoLayerNet {
    fn d_x(&self) -> usize {
        self.d_x
    }

    fn d_z(&self) -> usize {
        self.d_z
    }

    fn num_params(&self) -> usize {
        self.theta.len()
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let inv_m = 1.0 / self.m as f64;
        (0..self.d_z)
            .map(|k| {
                let mut acc = 0.0;
                for i in 0..self.m {
                    let wi = self.w_index(k, i);
                    let z: f64 = self.theta[wi..wi + self.d_x]
                        .iter()
                        .zip(x)
                        .map(|(w, xi)| w * xi)
                        .sum::<f64>()
                        + self.theta[self.b_index(k, i)];
                    if z > 0.0 {
                        acc += self.theta[self.a_index(k, i)] * z;
                    }
                }
                inv_m * acc
            })
            .collect()
    }

    fn vjp_theta(&self, x: &[f64], upstream: &[f64], acc: &mut [f64]) {
        debug_assert_eq!(upstream.len(), self.d_z);
        debug_assert_eq!(acc.len(), self.theta.len());
        let inv_m = 1.0 / self.m as f64;
        for (k, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            for i in 0..self.m {
                let wi = self.w_index(k, i);
                let z: f64 = self.theta[wi..wi + self.d_x]
                    .iter()
                    .zip(x)
                    .map(|(w, xi)| w * xi)
                    .sum::<f64>()
                    + self.theta[self.b_index(k, i)];
                if z > 0.0 {
                    let a = self.theta[self.a_index(k, i)];
                    acc[self.a_index(k, i)] += u * inv_m * z;
                    acc[self.b_index(k, i)] += u * inv_m * a;
                    for (j, xi) in x.iter().enumerate() {
                        acc[wi + j] += u * inv_m * a * xi;
                    }
                } else {
                    // Active only through a_i when z > 0; at z ≤ 0 the
                    // ReLU output and subgradient are both 0.
                    continue;
                }
            }
        }
    }
}
