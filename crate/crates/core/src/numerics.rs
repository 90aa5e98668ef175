//! Shared numerical utilities: stabilized log-sum-exp reductions, vector
//! helpers, a small dense-matrix type, Cholesky factorization, and simplex
//! projection.
//!
//! Every exponentiated reduction in this crate routes through
//! [`log_sum_exp`] / [`log_mean_exp`] so that only *differences* from the
//! running maximum are ever exponentiated.

/// log(Σᵢ exp(aᵢ)) with max-shift stabilization.
///
/// Returns −∞ for an empty slice (the sum of zero terms). Entries of −∞
/// contribute nothing; if all entries are −∞ the result is −∞.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max; // empty, all -inf, or a +inf/NaN entry propagates
    }
    let sum: f64 = a.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// log((1/n)·Σᵢ exp(aᵢ)). Exact (returns `a[0]`) when all entries are equal,
/// because every shifted exponent is exp(0) = 1 and ln(n/n) = 0.
pub fn log_mean_exp(a: &[f64]) -> f64 {
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mean: f64 = a.iter().map(|&v| (v - max).exp()).sum::<f64>() / a.len() as f64;
    max + mean.ln()
}

/// Softmax of `a` into a fresh probability vector (max-shifted).
pub fn softmax(a: &[f64]) -> Vec<f64> {
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = a.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Numerically stable logistic sigmoid 1/(1+e^{−z}).
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_l1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn norm_l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// ‖a − b‖ under the ℓ1 (p=1) or ℓ2 (p=2) norm.
pub fn diff_norm(a: &[f64], b: &[f64], p: u8) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match p {
        1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        2 => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        _ => panic!("diff_norm: only p in {{1,2}} supported"),
    }
}

/// Dense row-major matrix, sized for the small Jacobians/Hessians produced
/// by the decision rules (dimensions ≤ a few hundred).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// y = A·x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// y = Aᵀ·x.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let r = self.row(i);
            for j in 0..self.cols {
                out[j] += r[j] * x[i];
            }
        }
        out
    }

    /// Largest singular value by power iteration on AᵀA.
    ///
    /// Deterministic start (all-ones direction plus a fixed perturbation) so
    /// repeated calls agree; 200 iterations with a 1e-12 relative tolerance
    /// is far tighter than any use in the bound checks.
    pub fn spectral_norm(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..self.cols)
            .map(|j| 1.0 + 1e-3 * (j as f64 + 1.0).sin())
            .collect();
        let nv = norm_l2(&v);
        for x in &mut v {
            *x /= nv;
        }
        let mut sigma = 0.0_f64;
        for _ in 0..200 {
            let av = self.matvec(&v);
            let atav = self.matvec_t(&av);
            let n = norm_l2(&atav);
            if n == 0.0 {
                return 0.0;
            }
            let new_sigma = n.sqrt();
            for (x, y) in v.iter_mut().zip(&atav) {
                *x = y / n;
            }
            if (new_sigma - sigma).abs() <= 1e-12 * new_sigma.max(1.0) {
                return new_sigma;
            }
            sigma = new_sigma;
        }
        sigma
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix
/// given as row-major `n×n` data. Panics on a non-PD input (the covariances
/// factored here are fixed analytic forms, always PD).
pub fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(s > 0.0, "cholesky: matrix not positive definite");
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    l
}

/// Euclidean projection of `v` onto the probability simplex
/// {w : wᵢ ≥ 0, Σwᵢ = 1} (sort-based algorithm).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    assert!(n > 0);
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut rho = 0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            rho = i;
            theta = t;
        }
    }
    let _ = rho;
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Central finite-difference gradient of a scalar function, used as the
/// derivative oracle in tests.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Relative error of `got` against `want` with an absolute floor, the
/// comparison used by the finite-difference checks.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_sum_exp_matches_naive_on_moderate_values() {
        let a = [0.3_f64, -1.2, 2.5, 0.0];
        let naive: f64 = a.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(log_sum_exp(&a), naive, epsilon = 1e-14);
    }

    #[test]
    fn log_sum_exp_survives_huge_inputs() {
        let a = [1000.0, 1001.0, 1002.0];
        let v = log_sum_exp(&a);
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, 1002.0 + (1.0 + (-1.0f64).exp() + (-2.0f64).exp()).ln(), epsilon = 1e-12);
    }

    #[test]
    fn log_mean_exp_is_exact_on_constant_input() {
        let a = [2.5, 2.5, 2.5];
        assert_eq!(log_mean_exp(&a), 2.5);
    }

    #[test]
    fn softmax_sums_to_one_and_orders() {
        let w = softmax(&[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(w[2] > w[1] && w[1] > w[0]);
    }

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        assert_abs_diff_eq!(sigmoid(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sigmoid(3.0) + sigmoid(-3.0), 1.0, epsilon = 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn spectral_norm_of_diagonal_is_max_entry() {
        let mut m = Matrix::zeros(3, 3);
        m.set(0, 0, 1.0);
        m.set(1, 1, -4.0);
        m.set(2, 2, 2.0);
        assert_abs_diff_eq!(m.spectral_norm(), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn cholesky_recovers_known_factor() {
        // A = L·Lᵀ with L = [[2,0],[1,3]] → A = [[4,2],[2,10]].
        let a = [4.0, 2.0, 2.0, 10.0];
        let l = cholesky(&a, 2);
        assert_abs_diff_eq!(l[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[2], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[3], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn simplex_projection_is_feasible_and_fixes_interior_points() {
        let p = project_simplex(&[0.2, 0.3, 0.5]);
        assert_abs_diff_eq!(p[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.5, epsilon = 1e-12);
        let q = project_simplex(&[5.0, -3.0, 0.1]);
        assert_abs_diff_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(q.iter().all(|&v| v >= 0.0));
        assert_abs_diff_eq!(q[0], 1.0, epsilon = 1e-12);
    }
}
