//! B-spline basis on `[0, T]`: construction, pointwise evaluation with
//! derivatives, and exact Gram/penalty matrices.
//!
//! The basis is clamped (open): boundary knots are repeated `d + 1` times so
//! that `L = K + d + 1` basis functions are defined on the closed domain,
//! where `K` is the number of equally spaced interior knots and `d` the
//! degree. Gram matrices are integrated per knot segment with Gauss-Legendre
//! quadrature, which is exact for the piecewise-polynomial integrands.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamped B-spline basis with equally spaced interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    domain_end: f64,
    degree: usize,
    interior_knot_count: usize,
    /// Full clamped knot vector, length `L + d + 1`.
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Builds the basis on `[0, domain_end]` with `interior_knot_count`
    /// equally spaced interior knots and the given degree.
    pub fn new(domain_end: f64, interior_knot_count: usize, degree: usize) -> Result<Self> {
        if !domain_end.is_finite() || domain_end <= 0.0 {
            return Err(Error::invalid(format!(
                "domain end must be positive and finite, got {domain_end}"
            )));
        }
        let k = interior_knot_count;
        let d = degree;
        let mut knots = Vec::with_capacity(k + 2 * d + 2);
        knots.extend(std::iter::repeat_n(0.0, d + 1));
        let h = domain_end / (k + 1) as f64;
        for m in 1..=k {
            knots.push(m as f64 * h);
        }
        knots.extend(std::iter::repeat_n(domain_end, d + 1));
        Ok(Self {
            domain_end,
            degree: d,
            interior_knot_count: k,
            knots,
        })
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knot_count(&self) -> usize {
        self.interior_knot_count
    }

    /// Number of basis functions, `L = K + d + 1`.
    pub fn num_basis(&self) -> usize {
        self.interior_knot_count + self.degree + 1
    }

    /// Number of knot segments, `K + 1`.
    pub fn segment_count(&self) -> usize {
        self.interior_knot_count + 1
    }

    /// Full clamped knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Segment boundaries `tau_0 .. tau_{K+1}` (the distinct knots).
    pub fn breakpoints(&self) -> Vec<f64> {
        let d = self.degree;
        self.knots[d..=d + self.interior_knot_count + 1].to_vec()
    }

    /// Index of the knot span containing `t`; `t = T` maps to the last
    /// non-degenerate span so the basis is defined on the closed domain.
    fn find_span(&self, t: f64) -> usize {
        let d = self.degree;
        let last = d + self.interior_knot_count;
        let raw = self.knots.partition_point(|&x| x <= t);
        raw.saturating_sub(1).clamp(d, last)
    }

    /// Evaluates all `L` basis functions (or their derivative of the given
    /// order) at `t`. At most `d + 1` entries are non-zero.
    pub fn eval(&self, t: f64, deriv_order: usize) -> Result<DVector<f64>> {
        if !t.is_finite() || t < 0.0 || t > self.domain_end {
            return Err(Error::OutOfDomain {
                value: t,
                domain_end: self.domain_end,
            });
        }
        if deriv_order > 2 {
            return Err(Error::invalid(format!(
                "derivative order must be 0, 1, or 2, got {deriv_order}"
            )));
        }
        Ok(DVector::from_vec(self.eval_unchecked(t, deriv_order)))
    }

    /// Cox-de Boor evaluation. Degree-0 indicators are propagated up to
    /// degree `d - r`, then the derivative recurrence is applied `r` times.
    fn eval_unchecked(&self, t: f64, deriv_order: usize) -> Vec<f64> {
        let d = self.degree;
        let l = self.num_basis();
        if deriv_order > d {
            return vec![0.0; l];
        }
        let knots = &self.knots;
        let nk = knots.len();
        let span = self.find_span(t);

        // Degree-0 indicator of the span.
        let mut cur = vec![0.0; nk - 1];
        cur[span] = 1.0;

        let base_degree = d - deriv_order;
        for g in 1..=base_degree {
            let count = nk - g - 1;
            let mut next = vec![0.0; count];
            for i in 0..count {
                let mut v = 0.0;
                let den_left = knots[i + g] - knots[i];
                if den_left > 0.0 {
                    v += (t - knots[i]) / den_left * cur[i];
                }
                let den_right = knots[i + g + 1] - knots[i + 1];
                if den_right > 0.0 {
                    v += (knots[i + g + 1] - t) / den_right * cur[i + 1];
                }
                next[i] = v;
            }
            cur = next;
        }

        // Derivative steps: values of degree g-1 combine into the derivative
        // of degree-g functions.
        for r in 1..=deriv_order {
            let g = base_degree + r;
            let count = nk - g - 1;
            let mut next = vec![0.0; count];
            for i in 0..count {
                let mut v = 0.0;
                let den_left = knots[i + g] - knots[i];
                if den_left > 0.0 {
                    v += cur[i] / den_left;
                }
                let den_right = knots[i + g + 1] - knots[i + 1];
                if den_right > 0.0 {
                    v -= cur[i + 1] / den_right;
                }
                next[i] = g as f64 * v;
            }
            cur = next;
        }
        debug_assert_eq!(cur.len(), l);
        cur
    }

    /// Exact integral of `B^{(r)}(t) B^{(r)}(t)^T` over `[lower, upper]`,
    /// accumulated per knot segment with Gauss-Legendre quadrature.
    pub fn gram_matrix(&self, deriv_order: usize, lower: f64, upper: f64) -> Result<DMatrix<f64>> {
        if deriv_order > 2 {
            return Err(Error::invalid(format!(
                "derivative order must be 0, 1, or 2, got {deriv_order}"
            )));
        }
        if !(lower.is_finite() && upper.is_finite()) || lower < 0.0 || upper > self.domain_end {
            return Err(Error::invalid(format!(
                "integration bounds [{lower}, {upper}] must lie within [0, {}]",
                self.domain_end
            )));
        }
        if lower >= upper {
            return Err(Error::invalid(format!(
                "degenerate integration interval [{lower}, {upper}]"
            )));
        }
        let l = self.num_basis();
        let d = self.degree;
        let num_nodes = (2 * d + 1).div_ceil(2) + 1;
        let (nodes, weights) = gauss_legendre(num_nodes);
        let breaks = self.breakpoints();
        let mut gram = DMatrix::zeros(l, l);
        for m in 0..self.segment_count() {
            let a = breaks[m].max(lower);
            let b = breaks[m + 1].min(upper);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            for (&x, &w) in nodes.iter().zip(weights.iter()) {
                let t = mid + half * x;
                let vals = self.eval_unchecked(t, deriv_order);
                let span = self.find_span(t);
                let lo = span - d;
                let scale = w * half;
                for i in lo..=span {
                    for j in lo..=span {
                        gram[(i, j)] += scale * vals[i] * vals[j];
                    }
                }
            }
        }
        Ok(gram)
    }

    /// Bundles the Gram matrices the estimator needs: the roughness penalty
    /// `V`, the mass matrix `G0`, and the per-segment mass matrices `V_m`.
    pub fn grams(&self) -> BasisGrams {
        let t = self.domain_end;
        let breaks = self.breakpoints();
        let segments = (0..self.segment_count())
            .map(|m| {
                self.gram_matrix(0, breaks[m], breaks[m + 1])
                    .expect("segment bounds are valid")
            })
            .collect();
        BasisGrams {
            roughness: self.gram_matrix(2, 0.0, t).expect("domain bounds are valid"),
            mass: self.gram_matrix(0, 0.0, t).expect("domain bounds are valid"),
            segments,
            domain_end: t,
        }
    }

    /// Serializable description of this basis.
    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            domain_end: self.domain_end,
            interior_knot_count: self.interior_knot_count,
            degree: self.degree,
            knots: self.knots.clone(),
        }
    }

    /// Rebuilds a basis from its serialized description.
    pub fn from_spec(spec: &BasisSpec) -> Result<Self> {
        let basis = Self::new(spec.domain_end, spec.interior_knot_count, spec.degree)?;
        if spec.knots.len() != basis.knots.len()
            || spec
                .knots
                .iter()
                .zip(basis.knots.iter())
                .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::invalid(
                "stored knot vector does not match an equally spaced clamped basis".to_string(),
            ));
        }
        Ok(basis)
    }
}

/// Serialized form of a basis: `{T, K, d, knots}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSpec {
    #[serde(rename = "T")]
    pub domain_end: f64,
    #[serde(rename = "K")]
    pub interior_knot_count: usize,
    #[serde(rename = "d")]
    pub degree: usize,
    pub knots: Vec<f64>,
}

/// Gram matrices derived from a basis, shared by the solver and penalties.
#[derive(Debug, Clone)]
pub struct BasisGrams {
    /// `V = ∫ B''(t) B''(t)^T dt` over the full domain.
    pub roughness: DMatrix<f64>,
    /// `G0 = ∫ B(t) B(t)^T dt` over the full domain.
    pub mass: DMatrix<f64>,
    /// `V_m = ∫ B(t) B(t)^T dt` over each knot segment.
    pub segments: Vec<DMatrix<f64>>,
    pub domain_end: f64,
}

impl BasisGrams {
    /// `(K + 1) / T`, the reciprocal segment width.
    pub fn segment_rate(&self) -> f64 {
        self.segments.len() as f64 / self.domain_end
    }

    pub fn num_basis(&self) -> usize {
        self.mass.nrows()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn benchmark_basis() -> BSplineBasis {
        BSplineBasis::new(10.0, 9, 3).unwrap()
    }

    /// Greville abscissae: coefficients representing f(t) = t exactly.
    fn greville(basis: &BSplineBasis) -> DVector<f64> {
        let d = basis.degree();
        let knots = basis.knots();
        DVector::from_iterator(
            basis.num_basis(),
            (0..basis.num_basis())
                .map(|l| knots[l + 1..=l + d].iter().sum::<f64>() / d as f64),
        )
    }

    #[test]
    fn basis_count_matches_knots_and_degree() {
        assert_eq!(benchmark_basis().num_basis(), 13);
        let constant = BSplineBasis::new(1.0, 0, 0).unwrap();
        assert_eq!(constant.num_basis(), 1);
        assert_eq!(constant.eval(0.5, 0).unwrap()[0], 1.0);
        assert_eq!(constant.eval(1.0, 0).unwrap()[0], 1.0);
    }

    #[test]
    fn rejects_invalid_construction_and_domain() {
        assert!(BSplineBasis::new(0.0, 9, 3).is_err());
        assert!(BSplineBasis::new(-1.0, 9, 3).is_err());
        assert!(BSplineBasis::new(f64::NAN, 9, 3).is_err());
        let basis = benchmark_basis();
        assert!(matches!(
            basis.eval(-0.1, 0),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            basis.eval(10.1, 0),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(basis.eval(2.0, 3).is_err());
        assert!(basis.gram_matrix(0, 5.0, 5.0).is_err());
        assert!(basis.gram_matrix(0, 3.0, 2.0).is_err());
        assert!(basis.gram_matrix(0, -1.0, 2.0).is_err());
    }

    #[test]
    fn partition_of_unity_at_random_points() {
        let basis = benchmark_basis();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..1000 {
            let t = rng.random_range(0.0..=10.0);
            let sum: f64 = basis.eval(t, 0).unwrap().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum {sum} at t {t}");
        }
        let sum_end: f64 = basis.eval(10.0, 0).unwrap().iter().sum();
        assert!((sum_end - 1.0).abs() < 1e-12);
        let sum_given: f64 = basis.eval(2.37, 0).unwrap().iter().sum();
        assert!((sum_given - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamped_endpoints_hit_single_basis_function() {
        let basis = benchmark_basis();
        let at_zero = basis.eval(0.0, 0).unwrap();
        assert_eq!(at_zero[0], 1.0);
        assert!(at_zero.iter().skip(1).all(|&v| v == 0.0));
        let at_end = basis.eval(10.0, 0).unwrap();
        assert_eq!(at_end[12], 1.0);
        assert!(at_end.iter().take(12).all(|&v| v == 0.0));
    }

    #[test]
    fn compact_support_on_fine_grid() {
        let basis = benchmark_basis();
        let k = basis.interior_knot_count();
        let d = basis.degree();
        let breaks = basis.breakpoints();
        for li in 0..basis.num_basis() {
            let lo = breaks[li.saturating_sub(d)];
            let hi = breaks[(li + 1).min(k + 1)];
            for step in 0..=2000 {
                let t = 10.0 * step as f64 / 2000.0;
                if t < lo - 1e-12 || t > hi + 1e-12 {
                    let v = basis.eval(t, 0).unwrap()[li];
                    assert_eq!(v, 0.0, "basis {li} non-zero at t {t}");
                }
            }
        }
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let basis = benchmark_basis();
        let mut rng = StdRng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..200 {
            let t = rng.random_range(h..(10.0 - h));
            let d1 = basis.eval(t, 1).unwrap();
            let fwd = basis.eval(t + h, 0).unwrap();
            let bwd = basis.eval(t - h, 0).unwrap();
            for l in 0..basis.num_basis() {
                let fd = (fwd[l] - bwd[l]) / (2.0 * h);
                let scale = d1[l].abs().max(1.0);
                assert!(
                    (fd - d1[l]).abs() <= 1e-6 * scale,
                    "basis {l} at t {t}: fd {fd} vs {}",
                    d1[l]
                );
            }
        }
    }

    #[test]
    fn linear_function_has_zero_curvature() {
        let basis = benchmark_basis();
        let coef = greville(&basis);
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..100 {
            let t = rng.random_range(0.0..=10.0);
            let value = coef.dot(&basis.eval(t, 0).unwrap());
            assert!((value - t).abs() < 1e-12, "greville identity at t {t}");
            let second = coef.dot(&basis.eval(t, 2).unwrap());
            assert!(second.abs() < 1e-10, "curvature {second} at t {t}");
        }
        let v = basis.gram_matrix(2, 0.0, 10.0).unwrap();
        let quad = (v.clone() * &coef).dot(&coef);
        assert!(quad.abs() < 1e-10, "c'Vc = {quad}");
    }

    #[test]
    fn gram_matrices_symmetric_and_psd() {
        let basis = benchmark_basis();
        for deriv in [0usize, 2] {
            let g = basis.gram_matrix(deriv, 0.0, 10.0).unwrap();
            let asym = (&g - g.transpose()).abs().max();
            assert!(asym < 1e-14);
            let eig = g.clone().symmetric_eigen();
            let min = eig.eigenvalues.min();
            assert!(min > -1e-10, "min eigenvalue {min} for deriv {deriv}");
        }
    }

    #[test]
    fn segment_grams_sum_to_full_mass_matrix() {
        let basis = benchmark_basis();
        let grams = basis.grams();
        let mut total = DMatrix::zeros(13, 13);
        for seg in &grams.segments {
            total += seg;
        }
        let diff = (&total - &grams.mass).abs().max();
        assert!(diff < 1e-12, "additivity gap {diff}");
    }

    #[test]
    fn function_norm_matches_dense_quadrature() {
        let basis = benchmark_basis();
        let grams = basis.grams();
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..5 {
            let coef = DVector::from_fn(13, |_, _| rng.random_range(-2.0..2.0));
            let exact = (grams.mass.clone() * &coef).dot(&coef);
            // Composite Simpson over a fine grid.
            let n = 20_000;
            let h = 10.0 / n as f64;
            let mut sum = 0.0;
            for i in 0..=n {
                let t = i as f64 * h;
                let f = coef.dot(&basis.eval(t, 0).unwrap()).powi(2);
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                sum += w * f;
            }
            let dense = sum * h / 3.0;
            assert!(
                (exact - dense).abs() <= 1e-8 * dense.abs().max(1e-12),
                "norm {exact} vs dense {dense}"
            );
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (nodes, weights) = gauss_legendre(5);
        for k in 0..=9u32 {
            let integral: f64 = nodes
                .iter()
                .zip(weights.iter())
                .map(|(&x, &w)| w * (0.5 * x + 0.5).powi(k as i32) * 0.5)
                .sum();
            let exact = 1.0 / (k as f64 + 1.0);
            assert!(
                (integral - exact).abs() < 1e-14,
                "degree {k}: {integral} vs {exact}"
            );
        }
    }

    #[test]
    fn basis_spec_round_trip() {
        let basis = benchmark_basis();
        let spec = basis.spec();
        let rebuilt = BSplineBasis::from_spec(&spec).unwrap();
        assert_eq!(basis, rebuilt);
        let mut bad = basis.spec();
        bad.knots[4] += 0.5;
        assert!(BSplineBasis::from_spec(&bad).is_err());
    }
}
