//! Polynomial term libraries and sparse coefficient matrices.

use serde::{Deserialize, Serialize};

use crate::dynamics::DynSystem;

use super::RecoveryError;

/// `C(n, k)` without overflow for the sizes used here.
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Candidate monomials over `(x_1..x_n, u_1..u_m)` with total degree at
/// most `order`, in graded lexicographic order: constant first, then by
/// degree, and within a degree by descending exponent of the earliest
/// variable (`x², xy, y²`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermLibrary {
    n: usize,
    m: usize,
    order: u32,
    terms: Vec<Vec<u32>>,
}

fn push_exponents(vars: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() == vars - 1 {
        prefix.push(degree);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in (0..=degree).rev() {
        prefix.push(e);
        push_exponents(vars, degree - e, prefix, out);
        prefix.pop();
    }
}

pub fn build_library(n: usize, m: usize, order: u32) -> Result<TermLibrary, RecoveryError> {
    if order < 1 {
        return Err(RecoveryError::Config(
            "library order must be at least 1".into(),
        ));
    }
    if n == 0 {
        return Err(RecoveryError::Config(
            "library needs at least one state".into(),
        ));
    }
    let vars = n + m;
    let mut terms = Vec::new();
    for degree in 0..=order {
        push_exponents(vars, degree, &mut Vec::with_capacity(vars), &mut terms);
    }
    Ok(TermLibrary { n, m, order, terms })
}

impl TermLibrary {
    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Vec<u32>] {
        &self.terms
    }

    /// Position of the monomial with exponents `exps`.
    pub fn index_of(&self, exps: &[u32]) -> Option<usize> {
        self.terms.iter().position(|t| t == exps)
    }

    /// Human-readable names such as `1`, `x1`, `x1*x2`, `x2^2`, `u1`.
    pub fn term_names(&self) -> Vec<String> {
        let var = |i: usize| {
            if i < self.n {
                format!("x{}", i + 1)
            } else {
                format!("u{}", i - self.n + 1)
            }
        };
        self.terms
            .iter()
            .map(|t| {
                let parts: Vec<String> = t
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(i, &e)| {
                        if e == 1 {
                            var(i)
                        } else {
                            format!("{}^{e}", var(i))
                        }
                    })
                    .collect();
                if parts.is_empty() {
                    "1".to_string()
                } else {
                    parts.join("*")
                }
            })
            .collect()
    }

    fn check(&self, x: &[f64], u: &[f64]) -> Result<(), RecoveryError> {
        if x.len() != self.n || u.len() != self.m {
            return Err(RecoveryError::Dimension(format!(
                "library over {} states and {} inputs evaluated at {} states and {} inputs",
                self.n,
                self.m,
                x.len(),
                u.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, RecoveryError> {
        self.check(x, u)?;
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, u, &mut out);
        Ok(out)
    }

    pub(crate) fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t
                .iter()
                .enumerate()
                .map(|(i, &e)| {
                    let v = if i < self.n { x[i] } else { u[i - self.n] };
                    v.powi(e as i32)
                })
                .product();
        }
    }

    /// `out[k*n + j] = ∂L_k/∂x_j`.
    pub(crate) fn state_jacobian_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let value = |i: usize| if i < n { x[i] } else { u[i - n] };
        for (k, t) in self.terms.iter().enumerate() {
            for j in 0..n {
                out[k * n + j] = if t[j] == 0 {
                    0.0
                } else {
                    let mut d = t[j] as f64 * x[j].powi(t[j] as i32 - 1);
                    for (i, &e) in t.iter().enumerate() {
                        if i != j && e > 0 {
                            d *= value(i).powi(e as i32);
                        }
                    }
                    d
                };
            }
        }
    }
}

/// Coefficients `A` (states × terms, row-major) with an active-term mask.
/// Masked-out entries are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffVector {
    n: usize,
    p: usize,
    values: Vec<f64>,
    support: Vec<bool>,
}

impl CoeffVector {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            values: vec![0.0; n * p],
            support: vec![false; n * p],
        }
    }

    /// Dense coefficients; the support is every nonzero entry.
    pub fn from_dense(n: usize, p: usize, values: Vec<f64>) -> Result<Self, RecoveryError> {
        if values.len() != n * p {
            return Err(RecoveryError::Dimension(format!(
                "{} coefficients for a {n}×{p} matrix",
                values.len()
            )));
        }
        let support = values.iter().map(|&v| v != 0.0).collect();
        Ok(Self {
            n,
            p,
            values,
            support,
        })
    }

    /// Sets `(equation, exponents) = value` entries on an empty matrix.
    pub fn from_terms(lib: &TermLibrary, entries: &[(usize, &[u32], f64)]) -> Option<Self> {
        let mut c = Self::zeros(lib.state_dim(), lib.len());
        for &(eq, exps, v) in entries {
            let k = lib.index_of(exps)?;
            c.values[eq * c.p + k] = v;
            c.support[eq * c.p + k] = v != 0.0;
        }
        Some(c)
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn num_terms(&self) -> usize {
        self.p
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn support_size(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }

    pub fn row(&self, eq: usize) -> &[f64] {
        &self.values[eq * self.p..(eq + 1) * self.p]
    }

    /// Zeroes every entry with `|v| < threshold`.
    pub fn threshold(&self, threshold: f64) -> Self {
        let mut out = self.clone();
        for (v, s) in out.values.iter_mut().zip(out.support.iter_mut()) {
            if !*s || v.abs() < threshold {
                *v = 0.0;
                *s = false;
            }
        }
        out
    }

    /// Keeps only the `k` largest-magnitude active entries (ties broken by
    /// position).
    pub fn keep_largest(&self, k: usize) -> Self {
        let mut order: Vec<usize> = (0..self.values.len())
            .filter(|&i| self.support[i])
            .collect();
        order.sort_by(|&a, &b| {
            self.values[b]
                .abs()
                .total_cmp(&self.values[a].abs())
                .then(a.cmp(&b))
        });
        let mut out = self.clone();
        for &i in order.iter().skip(k) {
            out.values[i] = 0.0;
            out.support[i] = false;
        }
        out
    }

    /// Mean squared difference over all entries.
    pub fn mse(&self, other: &CoeffVector) -> f64 {
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        sum / self.values.len() as f64
    }

    pub fn max_abs_diff(&self, other: &CoeffVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The library-defined right-hand side `ẋ_i = Σ_k A[i,k] L_k(x, u)`;
/// `θ` is `A` flattened row-major.
pub struct LibraryDynamics<'a> {
    lib: &'a TermLibrary,
}

impl<'a> LibraryDynamics<'a> {
    pub fn new(lib: &'a TermLibrary) -> Self {
        Self { lib }
    }
}

impl DynSystem for LibraryDynamics<'_> {
    fn name(&self) -> &str {
        "library"
    }
    fn state_dim(&self) -> usize {
        self.lib.n
    }
    fn input_dim(&self) -> usize {
        self.lib.m
    }
    fn param_dim(&self) -> usize {
        self.lib.n * self.lib.len()
    }
    fn rhs(&self, x: &[f64], u: &[f64], theta: &[f64], out: &mut [f64]) {
        let p = self.lib.len();
        let mut terms = vec![0.0; p];
        self.lib.eval_into(x, u, &mut terms);
        for (i, o) in out.iter_mut().enumerate() {
            *o = theta[i * p..(i + 1) * p]
                .iter()
                .zip(&terms)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_state_quadratic_library() {
        let lib = build_library(2, 0, 2).unwrap();
        assert_eq!(lib.term_names(), ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2"]);
        assert_eq!(
            lib.eval(&[0.0, 0.0], &[]).unwrap(),
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            lib.eval(&[2.0, 3.0], &[]).unwrap(),
            [1.0, 2.0, 3.0, 4.0, 6.0, 9.0]
        );
    }

    #[test]
    fn library_sizes() {
        assert_eq!(build_library(1, 0, 3).unwrap().len(), 4);
        assert_eq!(
            build_library(3, 1, 2).unwrap().len(),
            binomial(6, 4) as usize
        );
        assert_eq!(binomial(6, 4), 15);
        assert!(build_library(2, 0, 0).is_err());
    }

    #[test]
    fn eval_dimension_mismatch() {
        let lib = build_library(2, 1, 2).unwrap();
        assert!(matches!(
            lib.eval(&[1.0, 2.0], &[]),
            Err(RecoveryError::Dimension(_))
        ));
    }

    #[test]
    fn eval_matches_naive_monomials() {
        let lib = build_library(2, 1, 3).unwrap();
        let (x, u) = ([0.7, -1.3], [2.1]);
        let vals = lib.eval(&x, &u).unwrap();
        for (t, v) in lib.terms().iter().zip(vals) {
            let mut naive = 1.0;
            for _ in 0..t[0] {
                naive *= x[0];
            }
            for _ in 0..t[1] {
                naive *= x[1];
            }
            for _ in 0..t[2] {
                naive *= u[0];
            }
            assert!((naive - v).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_differences() {
        let lib = build_library(2, 1, 3).unwrap();
        let (x, u) = ([0.7, -1.3], [0.4]);
        let mut jac = vec![0.0; lib.len() * 2];
        lib.state_jacobian_into(&x, &u, &mut jac);
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            xp[j] += h;
            let mut xm = x;
            xm[j] -= h;
            let (fp, fm) = (lib.eval(&xp, &u).unwrap(), lib.eval(&xm, &u).unwrap());
            for k in 0..lib.len() {
                assert!(((fp[k] - fm[k]) / (2.0 * h) - jac[k * 2 + j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn threshold_and_top_k() {
        let c = CoeffVector::from_dense(1, 4, vec![0.5, -0.01, 2.0, -0.3]).unwrap();
        let t = c.threshold(0.1);
        assert_eq!(t.values(), &[0.5, 0.0, 2.0, -0.3]);
        assert_eq!(t.support_size(), 3);
        assert_eq!(c.keep_largest(2).values(), &[0.5, 0.0, 2.0, 0.0]);
    }

    proptest! {
        #[test]
        fn library_count_law(n in 1usize..5, m in 0usize..3, order in 1u32..5) {
            let lib = build_library(n, m, order).unwrap();
            let vars = (n + m) as u64;
            prop_assert_eq!(lib.len() as u64, binomial(order as u64 + vars, vars));
            prop_assert_eq!(&lib.terms()[0], &vec![0u32; n + m]);
        }

        #[test]
        fn threshold_is_idempotent(vals in proptest::collection::vec(-3.0f64..3.0, 12), lam in 0.0f64..2.0) {
            let c = CoeffVector::from_dense(2, 6, vals).unwrap();
            let once = c.threshold(lam);
            prop_assert_eq!(once.threshold(lam), once);
        }
    }
}
