//! Soft regression forest: an ensemble of complete binary soft decision
//! trees with sigmoid gating.
//!
//! Each internal node j of a tree holds a gate (w_j, b_j); an input x goes
//! left with probability S((w_jᵀx + b_j)/τ) where S is the sigmoid and τ
//! the gating temperature. A leaf's routing probability is the product of
//! its path's branch probabilities, and the forest decision averages the
//! leaf-value expectations across trees:
//!
//! ```text
//! f_k(x) = (1/T) · Σ_t Σ_l p_{l,t}(x) · [π_{l,t}]_k
//! ```
//!
//! Everything here is analytic: routing probabilities are smooth in both
//! x and the parameters, which yields closed-form Jacobians, Hessians and
//! parameter vector–Jacobian products (no autodiff), plus explicit
//! Lipschitz/smoothness constants and the hard-routing τ → 0 limit.
//!
//! Node storage uses heap indexing: the root is node 1, node j has
//! children 2j and 2j+1, and leaf l ∈ {0, …, 2^D−1} of a depth-D tree sits
//! below the path spelled by the bits of l read most-significant first
//! (0 = left). All parameters live in one flat vector, ordered tree by
//! tree with the gate block (w then b per node) before the leaf block.

use super::{DecisionRule, PolicyError};
use crate::numerics::{sigmoid, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;

/// Soft regression forest parameters and structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftForest {
    d_x: usize,
    d_z: usize,
    /// Gating temperature τ > 0. Training uses 1; evaluation may anneal
    /// it toward 0 to approach the hard forest.
    pub tau: f64,
    depths: Vec<usize>,
    /// Flat parameter vector; see module docs for the layout.
    theta: Vec<f64>,
    /// Start of each tree's gate block in `theta`.
    gate_off: Vec<usize>,
    /// Start of each tree's leaf block in `theta`.
    leaf_off: Vec<usize>,
}

impl SoftForest {
    /// Builds a forest with all-equal leaf values and freshly drawn gates
    /// (weights iid N(0, 1/d_x), biases zero).
    pub fn init(
        d_x: usize,
        d_z: usize,
        depths: &[usize],
        tau: f64,
        leaf_value: &[f64],
        rng: &mut impl Rng,
    ) -> Result<Self, PolicyError> {
        let mut forest = Self::zeros(d_x, d_z, depths, tau)?;
        let sd = (1.0 / d_x as f64).sqrt();
        for t in 0..forest.depths.len() {
            for j in 1..=forest.internal_count(t) {
                let (w, _) = forest.gate_mut(t, j);
                for wi in w.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *wi = sd * z;
                }
            }
            for l in 0..forest.leaf_count(t) {
                forest.leaf_mut(t, l).copy_from_slice(leaf_value);
            }
        }
        Ok(forest)
    }

    /// Builds a forest with every parameter zero.
    pub fn zeros(
        d_x: usize,
        d_z: usize,
        depths: &[usize],
        tau: f64,
    ) -> Result<Self, PolicyError> {
        if depths.is_empty() {
            return Err(PolicyError::InvalidConfig("need at least one tree".into()));
        }
        if depths.iter().any(|&d| d < 1 || d > 24) {
            return Err(PolicyError::InvalidConfig(format!(
                "tree depths must lie in [1, 24], got {depths:?}"
            )));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(PolicyError::InvalidConfig(format!(
                "temperature must be positive and finite, got {tau}"
            )));
        }
        if d_x < 1 || d_z < 1 {
            return Err(PolicyError::InvalidConfig(format!(
                "need d_x ≥ 1 and d_z ≥ 1, got {d_x}, {d_z}"
            )));
        }
        let mut gate_off = Vec::with_capacity(depths.len());
        let mut leaf_off = Vec::with_capacity(depths.len());
        let mut len = 0usize;
        for &d in depths {
            let internal = (1usize << d) - 1;
            let leaves = 1usize << d;
            gate_off.push(len);
            len += (d_x + 1) * internal;
            leaf_off.push(len);
            len += d_z * leaves;
        }
        Ok(SoftForest {
            d_x,
            d_z,
            tau,
            depths: depths.to_vec(),
            theta: vec![0.0; len],
            gate_off,
            leaf_off,
        })
    }

    pub fn tree_count(&self) -> usize {
        self.depths.len()
    }

    pub fn depth(&self, t: usize) -> usize {
        self.depths[t]
    }

    pub fn internal_count(&self, t: usize) -> usize {
        (1 << self.depths[t]) - 1
    }

    pub fn leaf_count(&self, t: usize) -> usize {
        1 << self.depths[t]
    }

    /// Gate parameters of internal node j ∈ [1, 2^D−1] of tree t: (w, b).
    pub fn gate(&self, t: usize, j: usize) -> (&[f64], f64) {
        let base = self.gate_off[t] + (j - 1) * (self.d_x + 1);
        (
            &self.theta[base..base + self.d_x],
            self.theta[base + self.d_x],
        )
    }

    fn gate_mut(&mut self, t: usize, j: usize) -> (&mut [f64], &mut f64) {
        let base = self.gate_off[t] + (j - 1) * (self.d_x + 1);
        let (w, rest) = self.theta[base..].split_at_mut(self.d_x);
        (w, &mut rest[0])
    }

    /// Leaf decision vector π of leaf l ∈ [0, 2^D−1] of tree t.
    pub fn leaf(&self, t: usize, l: usize) -> &[f64] {
        let base = self.leaf_off[t] + l * self.d_z;
        &self.theta[base..base + self.d_z]
    }

    fn leaf_mut(&mut self, t: usize, l: usize) -> &mut [f64] {
        let base = self.leaf_off[t] + l * self.d_z;
        &mut self.theta[base..base + self.d_z]
    }

    /// Index of the flat-θ slot holding component k of leaf l in tree t.
    pub fn leaf_param_index(&self, t: usize, l: usize, k: usize) -> usize {
        self.leaf_off[t] + l * self.d_z + k
    }

    /// The root-to-leaf path of leaf l in a depth-D tree: the visited
    /// internal node indices paired with the branch taken (true = left).
    pub fn leaf_path(depth: usize, l: usize) -> Vec<(usize, bool)> {
        let mut node = 1usize;
        let mut path = Vec::with_capacity(depth);
        for level in (0..depth).rev() {
            let go_left = (l >> level) & 1 == 0;
            path.push((node, go_left));
            node = 2 * node + usize::from(!go_left);
        }
        path
    }

    /// Left-branch probabilities S((w_jᵀx + b_j)/τ) for every internal
    /// node of tree t; entry 0 is unused padding so that node j sits at
    /// index j.
    pub fn node_activations(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let n = self.internal_count(t);
        let mut s = vec![f64::NAN; n + 1];
        for j in 1..=n {
            let (w, b) = self.gate(t, j);
            let z: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
            s[j] = sigmoid(z / self.tau);
        }
        s
    }

    /// Routing probabilities of all 2^D leaves of tree t at input x.
    /// Computed top-down so each leaf probability is exactly the product
    /// of its path's branch probabilities in root-to-leaf order.
    pub fn route_probs(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let s = self.node_activations(t, x);
        self.route_probs_from(t, &s)
    }

    fn route_probs_from(&self, t: usize, s: &[f64]) -> Vec<f64> {
        let d = self.depths[t];
        let leaves = 1usize << d;
        // node_probs[j] = probability of reaching heap node j; the leaf
        // level occupies indices 2^D .. 2^{D+1}.
        let mut node_probs = vec![0.0; 2 * leaves];
        node_probs[1] = 1.0;
        for j in 1..leaves {
            let p = node_probs[j];
            node_probs[2 * j] = p * s[j];
            node_probs[2 * j + 1] = p * (1.0 - s[j]);
        }
        node_probs[leaves..2 * leaves].to_vec()
    }

    /// Deterministic τ → 0 routing: descend each tree going left exactly
    /// when w_jᵀx + b_j > 0 and average the selected leaves. Errors when x
    /// lies on any gate's decision boundary, where the limit is undefined.
    pub fn hard_forward(&self, x: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check_dim(x)?;
        // The limit is ill-defined if any gate is exactly at its boundary,
        // so scan them all rather than just the traversed route.
        for t in 0..self.tree_count() {
            for j in 1..=self.internal_count(t) {
                let (w, b) = self.gate(t, j);
                let z: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
                if z == 0.0 {
                    return Err(PolicyError::BoundaryInput { tree: t, node: j });
                }
            }
        }
        let mut out = vec![0.0; self.d_z];
        for t in 0..self.tree_count() {
            let d = self.depths[t];
            let mut node = 1usize;
            for _ in 0..d {
                let (w, b) = self.gate(t, node);
                let z: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
                node = 2 * node + usize::from(z <= 0.0);
            }
            let l = node - (1 << d);
            for (o, v) in out.iter_mut().zip(self.leaf(t, l)) {
                *o += v;
            }
        }
        let inv_t = 1.0 / self.tree_count() as f64;
        out.iter_mut().for_each(|o| *o *= inv_t);
        Ok(out)
    }

    /// Jacobian ∂f/∂x as a d_z × d_x matrix. Row k collects
    /// (1/T)·Σ_t Σ_l [π_{l,t}]_k · ∂p_{l,t}/∂x, with
    /// ∂p_l/∂x = p_l · Σ_{j on path} ψ_j w_j / τ and ψ_j = 1−S_j on left
    /// branches, −S_j on right branches.
    pub fn grad_x(&self, x: &[f64]) -> Matrix {
        let mut jac = Matrix::zeros(self.d_z, self.d_x);
        let inv_t = 1.0 / self.tree_count() as f64;
        for t in 0..self.tree_count() {
            let d = self.depths[t];
            let s = self.node_activations(t, x);
            let probs = self.route_probs_from(t, &s);
            for l in 0..self.leaf_count(t) {
                let g = self.path_log_grad(t, d, l, &s);
                let pi = self.leaf(t, l);
                for k in 0..self.d_z {
                    let c = inv_t * pi[k] * probs[l];
                    for (j, gj) in g.iter().enumerate() {
                        jac.add(k, j, c * gj);
                    }
                }
            }
        }
        jac
    }

    /// ∇_x log p_{l,t}(x) = Σ_{j on path} ψ_j w_j / τ.
    fn path_log_grad(&self, t: usize, d: usize, l: usize, s: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d_x];
        for (node, went_left) in Self::leaf_path(d, l) {
            let psi = if went_left { 1.0 - s[node] } else { -s[node] };
            let (w, _) = self.gate(t, node);
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi += psi * wi / self.tau;
            }
        }
        g
    }

    /// Hessian ∇²_x f_k as a d_x × d_x matrix:
    /// (1/T)·Σ_t Σ_l [π_{l,t}]_k · p_l · (g_l g_lᵀ − Σ_{j on path}
    /// S_j(1−S_j) w_j w_jᵀ / τ²), where g_l = ∇ log p_l.
    pub fn hessian_x(&self, x: &[f64], k: usize) -> Matrix {
        assert!(k < self.d_z, "output index {k} out of range");
        let mut h = Matrix::zeros(self.d_x, self.d_x);
        let inv_t = 1.0 / self.tree_count() as f64;
        for t in 0..self.tree_count() {
            let d = self.depths[t];
            let s = self.node_activations(t, x);
            let probs = self.route_probs_from(t, &s);
            for l in 0..self.leaf_count(t) {
                let c = inv_t * self.leaf(t, l)[k] * probs[l];
                if c == 0.0 {
                    continue;
                }
                let g = self.path_log_grad(t, d, l, &s);
                for a in 0..self.d_x {
                    for b in 0..self.d_x {
                        h.add(a, b, c * g[a] * g[b]);
                    }
                }
                for (node, _) in Self::leaf_path(d, l) {
                    let curv = s[node] * (1.0 - s[node]) / (self.tau * self.tau);
                    let (w, _) = self.gate(t, node);
                    for a in 0..self.d_x {
                        for b in 0..self.d_x {
                            h.add(a, b, -c * curv * w[a] * w[b]);
                        }
                    }
                }
            }
        }
        h
    }

    /// Lipschitz and smoothness constants of x ↦ f(x) at temperature 1:
    /// L = W_max·Π_max·(D_max−1) and S = W_max²·Π_max·(D_max−1)·(D_max−¾),
    /// where W_max = max_j ‖w_j‖₂, Π_max = max_l ‖π_l‖₂ and D_max is the
    /// deepest tree. For depth-1 forests the L formula degenerates to 0
    /// even though the map is not constant; callers relying on the bound
    /// should use depth ≥ 2.
    pub fn lipschitz_bounds(&self) -> (f64, f64) {
        let mut w_max = 0.0_f64;
        let mut pi_max = 0.0_f64;
        let mut d_max = 0usize;
        for t in 0..self.tree_count() {
            d_max = d_max.max(self.depths[t]);
            for j in 1..=self.internal_count(t) {
                let (w, _) = self.gate(t, j);
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                w_max = w_max.max(norm);
            }
            for l in 0..self.leaf_count(t) {
                let norm = self.leaf(t, l).iter().map(|v| v * v).sum::<f64>().sqrt();
                pi_max = pi_max.max(norm);
            }
        }
        let dm = d_max as f64;
        let l = w_max * pi_max * (dm - 1.0);
        let s = w_max * w_max * pi_max * (dm - 1.0) * (dm - 0.75);
        (l, s)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), PolicyError> {
        if x.len() != self.d_x {
            return Err(PolicyError::DimensionMismatch {
                got: x.len(),
                want: self.d_x,
            });
        }
        Ok(())
    }
}

impl DecisionRule for SoftForest {
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
        let mut out = vec![0.0; self.d_z];
        let inv_t = 1.0 / self.tree_count() as f64;
        for t in 0..self.tree_count() {
            let probs = self.route_probs(t, x);
            for (l, p) in probs.iter().enumerate() {
                let pi = self.leaf(t, l);
                for (o, v) in out.iter_mut().zip(pi) {
                    *o += inv_t * p * v;
                }
            }
        }
        out
    }

    fn vjp_theta(&self, x: &[f64], upstream: &[f64], acc: &mut [f64]) {
        debug_assert_eq!(upstream.len(), self.d_z);
        debug_assert_eq!(acc.len(), self.theta.len());
        let inv_t = 1.0 / self.tree_count() as f64;
        for t in 0..self.tree_count() {
            let leaves = self.leaf_count(t);
            let s = self.node_activations(t, x);
            let probs = self.route_probs_from(t, &s);

            // Leaf block: ∂f_k/∂[π_l]_k = p_l / T.
            for (l, p) in probs.iter().enumerate() {
                let base = self.leaf_off[t] + l * self.d_z;
                for (k, u) in upstream.iter().enumerate() {
                    acc[base + k] += inv_t * p * u;
                }
            }

            // Gate block. With c_l = p_l·(upstreamᵀπ_l)/T, the derivative
            // with respect to node j's pre-activation z_j is
            // (1−S_j)·Σ_{left subtree} c_l − S_j·Σ_{right subtree} c_l,
            // so accumulate subtree sums bottom-up over the heap.
            let mut node_sum = vec![0.0; 2 * leaves];
            for (l, p) in probs.iter().enumerate() {
                let pi = self.leaf(t, l);
                let dot: f64 = upstream.iter().zip(pi).map(|(u, v)| u * v).sum();
                node_sum[leaves + l] = inv_t * p * dot;
            }
            for j in (1..leaves).rev() {
                node_sum[j] = node_sum[2 * j] + node_sum[2 * j + 1];
            }
            for j in 1..leaves {
                let a = ((1.0 - s[j]) * node_sum[2 * j] - s[j] * node_sum[2 * j + 1]) / self.tau;
                let base = self.gate_off[t] + (j - 1) * (self.d_x + 1);
                for (i, xi) in x.iter().enumerate() {
                    acc[base + i] += a * xi;
                }
                acc[base + self.d_x] += a;
            }
        }
    }

    fn clip_decision_params_nonneg(&mut self) {
        for t in 0..self.tree_count() {
            let lo = self.leaf_off[t];
            let hi = lo + self.leaf_count(t) * self.d_z;
            for v in &mut self.theta[lo..hi] {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_forest(
        d_x: usize,
        d_z: usize,
        depths: &[usize],
        tau: f64,
        seed: u64,
    ) -> SoftForest {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SoftForest::init(d_x, d_z, depths, tau, &vec![0.0; d_z], &mut rng).unwrap();
        for v in f.params_mut() {
            *v += rng.gen_range(-1.0..1.0);
        }
        f
    }

    #[test]
    fn zero_gate_depth_one_splits_half_half() {
        let f = SoftForest::zeros(2, 1, &[1], 1.0, ).unwrap();
        let probs = f.route_probs(0, &[0.3, -0.7]);
        assert_eq!(probs.len(), 2);
        assert_abs_diff_eq!(probs[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn depth_one_zero_gate_averages_leaves() {
        let mut f = SoftForest::zeros(1, 1, &[1], 1.0).unwrap();
        f.leaf_mut(0, 0)[0] = 2.0;
        f.leaf_mut(0, 1)[0] = 4.0;
        let out = f.forward(&[0.9]);
        assert_abs_diff_eq!(out[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn route_probs_sum_to_one() {
        let f = random_forest(4, 2, &[3, 2, 4], 0.7, 5);
        let x = [0.1, -0.5, 2.0, 0.3];
        for t in 0..f.tree_count() {
            let probs = f.route_probs(t, &x);
            let sum: f64 = probs.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn saturated_gates_route_to_leftmost_leaf() {
        let mut f = SoftForest::zeros(1, 1, &[2], 1.0).unwrap();
        // Every gate fires hard left at x = 1: w·x + b = 40.
        for j in 1..=f.internal_count(0) {
            let (w, b) = f.gate_mut(0, j);
            w[0] = 20.0;
            *b = 20.0;
        }
        let probs = f.route_probs(0, &[1.0]);
        assert_abs_diff_eq!(probs[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn leaf_path_bit_order() {
        // Depth 3, leaf 5 = 0b101: right at root (node 1), left at node 3,
        // right at node 6.
        let path = SoftForest::leaf_path(3, 5);
        assert_eq!(path, vec![(1, false), (3, true), (6, false)]);
        // Leaf 0 is the all-left path.
        assert_eq!(
            SoftForest::leaf_path(3, 0),
            vec![(1, true), (2, true), (4, true)]
        );
    }

    #[test]
    fn identical_trees_match_single_tree() {
        let one = random_forest(3, 2, &[3], 1.0, 9);
        let mut two = SoftForest::zeros(3, 2, &[3, 3], 1.0).unwrap();
        let n = one.num_params();
        two.params_mut()[..n].copy_from_slice(one.params());
        two.params_mut()[n..].copy_from_slice(one.params());
        let x = [0.2, -0.4, 1.1];
        let a = one.forward(&x);
        let b = two.forward(&x);
        for (u, v) in a.iter().zip(&b) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-14);
        }
    }

    #[test]
    fn constant_leaves_give_zero_jacobian_and_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = SoftForest::init(3, 2, &[2, 3], 1.0, &[1.0, -2.0], &mut rng).unwrap();
        let x = [0.5, 0.1, -0.9];
        let jac = f.grad_x(&x);
        for k in 0..2 {
            for j in 0..3 {
                assert_abs_diff_eq!(jac.get(k, j), 0.0, epsilon = 1e-12);
            }
        }
        let h = f.hessian_x(&x, 0);
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(h.get(a, b), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grad_x_matches_finite_differences() {
        let f = random_forest(3, 2, &[2, 3], 1.0, 11);
        let x = [0.25, -0.6, 0.8];
        let jac = f.grad_x(&x);
        let h = 1e-5;
        for k in 0..2 {
            for j in 0..3 {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += h;
                xm[j] -= h;
                let fd = (f.forward(&xp)[k] - f.forward(&xm)[k]) / (2.0 * h);
                let err = (jac.get(k, j) - fd).abs() / fd.abs().max(1.0);
                assert!(err < 1e-5, "({k},{j}): analytic {} fd {fd}", jac.get(k, j));
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_and_is_symmetric() {
        let f = random_forest(3, 1, &[3], 1.0, 17);
        let x = [0.4, -0.2, 0.1];
        let h = f.hessian_x(&x, 0);
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(h.get(a, b), h.get(b, a), epsilon = 1e-12);
            }
        }
        let step = 1e-4;
        for a in 0..3 {
            for b in 0..3 {
                let mut xs = [x.to_vec(), x.to_vec(), x.to_vec(), x.to_vec()];
                xs[0][a] += step;
                xs[0][b] += step;
                xs[1][a] += step;
                xs[1][b] -= step;
                xs[2][a] -= step;
                xs[2][b] += step;
                xs[3][a] -= step;
                xs[3][b] -= step;
                let fd = (f.forward(&xs[0])[0] - f.forward(&xs[1])[0] - f.forward(&xs[2])[0]
                    + f.forward(&xs[3])[0])
                    / (4.0 * step * step);
                let err = (h.get(a, b) - fd).abs() / fd.abs().max(1.0);
                assert!(err < 1e-3, "({a},{b}): analytic {} fd {fd}", h.get(a, b));
            }
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut f = random_forest(2, 2, &[2], 1.0, 23);
        let x = [0.7, -0.3];
        let upstream = [1.3, -0.4];
        let mut acc = vec![0.0; f.num_params()];
        f.vjp_theta(&x, &upstream, &mut acc);
        let h = 1e-6;
        let scalar = |f: &SoftForest| -> f64 {
            f.forward(&x).iter().zip(&upstream).map(|(a, u)| a * u).sum()
        };
        for i in 0..f.num_params() {
            let orig = f.params()[i];
            f.params_mut()[i] = orig + h;
            let up = scalar(&f);
            f.params_mut()[i] = orig - h;
            let dn = scalar(&f);
            f.params_mut()[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            let err = (acc[i] - fd).abs() / fd.abs().max(1.0);
            assert!(err < 1e-5, "param {i}: analytic {} fd {fd}", acc[i]);
        }
    }

    #[test]
    fn vjp_leaf_entry_is_probability_over_trees() {
        // Depth-1 single tree with a zero gate: both leaves have p = 0.5,
        // so with upstream (1) the leaf-block gradient entries equal 0.5.
        let f = SoftForest::zeros(1, 1, &[1], 1.0).unwrap();
        let mut acc = vec![0.0; f.num_params()];
        f.vjp_theta(&[0.4], &[1.0], &mut acc);
        let l0 = f.leaf_param_index(0, 0, 0);
        let l1 = f.leaf_param_index(0, 1, 0);
        assert_abs_diff_eq!(acc[l0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(acc[l1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn vjp_is_linear_in_upstream() {
        let f = random_forest(3, 2, &[2, 2], 1.0, 31);
        let x = [0.1, 0.2, -0.5];
        let mut a = vec![0.0; f.num_params()];
        let mut b = vec![0.0; f.num_params()];
        let mut ab = vec![0.0; f.num_params()];
        f.vjp_theta(&x, &[1.0, 0.0], &mut a);
        f.vjp_theta(&x, &[0.0, -2.0], &mut b);
        f.vjp_theta(&x, &[1.0, -2.0], &mut ab);
        for i in 0..f.num_params() {
            assert_abs_diff_eq!(a[i] + b[i], ab[i], epsilon = 1e-12);
        }
        let mut zero = vec![0.0; f.num_params()];
        f.vjp_theta(&x, &[0.0, 0.0], &mut zero);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lipschitz_hand_example() {
        // Construct W_max = 1, Π_max = 2, D_max = 3:
        // L = 1·2·2 = 4, S = 1·2·2·2.25 = 9.
        let mut f = SoftForest::zeros(1, 1, &[3], 1.0).unwrap();
        let (w, _) = f.gate_mut(0, 1);
        w[0] = 1.0;
        f.leaf_mut(0, 0)[0] = 2.0;
        let (l, s) = f.lipschitz_bounds();
        assert_abs_diff_eq!(l, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 9.0, epsilon = 1e-12);
        // All-zero gates → both constants vanish.
        let z = SoftForest::zeros(2, 1, &[3], 1.0).unwrap();
        assert_eq!(z.lipschitz_bounds(), (0.0, 0.0));
    }

    #[test]
    fn hard_forward_routes_by_sign() {
        let mut f = SoftForest::zeros(1, 1, &[1], 1.0).unwrap();
        let (w, _) = f.gate_mut(0, 1);
        w[0] = 1.0;
        f.leaf_mut(0, 0)[0] = 10.0; // left leaf
        f.leaf_mut(0, 1)[0] = -10.0; // right leaf
        assert_abs_diff_eq!(f.hard_forward(&[3.0]).unwrap()[0], 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.hard_forward(&[-3.0]).unwrap()[0], -10.0, epsilon = 1e-15);
        assert!(matches!(
            f.hard_forward(&[0.0]),
            Err(PolicyError::BoundaryInput { tree: 0, node: 1 })
        ));
    }

    #[test]
    fn annealed_soft_forward_approaches_hard_route() {
        let mut f = random_forest(3, 2, &[3, 2], 1.0, 41);
        let x = [0.9, -0.2, 0.4];
        let hard = f.hard_forward(&x).unwrap();
        f.tau = 1e-4;
        let soft = f.forward(&x);
        for (a, b) in soft.iter().zip(&hard) {
            assert!((a - b).abs() < 1e-6, "soft {a} vs hard {b}");
        }
    }

    #[test]
    fn gate_scaling_matches_temperature_reduction() {
        let f = random_forest(2, 1, &[2], 1.0, 43);
        let mut scaled = f.clone();
        let c = 3.5;
        for j in 1..=scaled.internal_count(0) {
            let (w, b) = scaled.gate_mut(0, j);
            w.iter_mut().for_each(|v| *v *= c);
            *b *= c;
        }
        let mut cooled = f.clone();
        cooled.tau = 1.0 / c;
        let x = [0.3, -0.8];
        assert_abs_diff_eq!(
            scaled.forward(&x)[0],
            cooled.forward(&x)[0],
            epsilon = 1e-12
        );
        // Hard routing ignores the common positive factor entirely.
        let a = f.hard_forward(&x).unwrap();
        let b = scaled.hard_forward(&x).unwrap();
        assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-15);
    }

    #[test]
    fn leaf_clipping_zeroes_negative_leaves_only() {
        let mut f = random_forest(2, 2, &[2], 1.0, 47);
        let gates_before: Vec<f64> =
            f.params()[..f.leaf_off[0]].to_vec();
        f.clip_decision_params_nonneg();
        assert_eq!(&f.params()[..f.leaf_off[0]], gates_before.as_slice());
        for t in 0..f.tree_count() {
            for l in 0..f.leaf_count(t) {
                assert!(f.leaf(t, l).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn jacobian_spectral_norm_within_lipschitz_bound() {
        let f = random_forest(3, 2, &[3, 2], 1.0, 53);
        let (l_bound, _) = f.lipschitz_bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let norm = f.grad_x(&x).spectral_norm();
            assert!(norm <= l_bound + 1e-9, "‖J‖ = {norm} exceeds bound {l_bound}");
        }
    }
}
