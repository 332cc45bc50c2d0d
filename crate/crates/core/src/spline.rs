//! B-spline bases and univariate spline functions over clamped knot grids.
//!
//! Two evaluation paths exist. [`bspline_basis`] is the textbook Cox-de Boor
//! recursion on a raw knot slice and serves as the reference. [`KnotVector`]
//! evaluates only the `k + 1` bases that are non-zero on the knot span that
//! contains `x`, which is what the network layers use on the hot path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported spline degree for span-local evaluation.
pub const MAX_DEGREE: usize = 7;

/// Fixed-capacity buffer holding the non-zero basis values on one span.
pub type BasisRow = [f64; MAX_DEGREE + 1];

/// Evaluates `B_{i,k}(x)` by direct Cox-de Boor recursion.
///
/// Terms whose knot-span denominator is zero contribute 0. The degree-0
/// indicator is half-open `[t_i, t_{i+1})`, except that the last non-empty
/// interval is also closed at the final knot so the bases still sum to one at
/// the right end of a clamped knot vector.
pub fn bspline_basis(i: usize, k: usize, x: f64, knots: &[f64]) -> Result<f64> {
    let num_basis = knots.len().saturating_sub(k + 1);
    if i >= num_basis {
        return Err(Error::IndexOutOfRange {
            index: i,
            num_basis,
        });
    }
    Ok(basis_recursive(i, k, x, knots))
}

fn basis_recursive(i: usize, k: usize, x: f64, t: &[f64]) -> f64 {
    if k == 0 {
        let last = t[t.len() - 1];
        let inside = t[i] <= x && x < t[i + 1];
        let right_end = x == last && t[i + 1] == last && t[i] < t[i + 1];
        return if inside || right_end { 1.0 } else { 0.0 };
    }
    let mut value = 0.0;
    let left_den = t[i + k] - t[i];
    if left_den != 0.0 {
        value += (x - t[i]) / left_den * basis_recursive(i, k - 1, x, t);
    }
    let right_den = t[i + k + 1] - t[i + 1];
    if right_den != 0.0 {
        value += (t[i + k + 1] - x) / right_den * basis_recursive(i + 1, k - 1, x, t);
    }
    value
}

/// Non-decreasing knot sequence together with its degree and valid domain.
///
/// The domain is `[t_k, t_{n}]` where `n = num_basis`; on a clamped knot
/// vector this is the span from the first to the last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
    domain_min: f64,
    domain_max: f64,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::InvalidKnots(format!(
                "degree {degree} exceeds maximum {MAX_DEGREE}"
            )));
        }
        if knots.len() < degree + 2 {
            return Err(Error::InvalidKnots(format!(
                "{} knots cannot support degree {degree}",
                knots.len()
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be non-decreasing".into()));
        }
        let num_basis = knots.len() - degree - 1;
        let domain_min = knots[degree];
        let domain_max = knots[num_basis];
        if domain_min >= domain_max {
            return Err(Error::InvalidDomain {
                min: domain_min,
                max: domain_max,
            });
        }
        Ok(Self {
            knots,
            degree,
            domain_min,
            domain_max,
        })
    }

    /// Clamped uniform knots: `G + 1` evenly spaced breakpoints over the
    /// domain with each end repeated `k` extra times, giving `G + k` bases.
    pub fn uniform(domain_min: f64, domain_max: f64, grid_size: usize, degree: usize) -> Result<Self> {
        if !(domain_min < domain_max) {
            return Err(Error::InvalidDomain {
                min: domain_min,
                max: domain_max,
            });
        }
        if grid_size < 1 {
            return Err(Error::InvalidGrid(grid_size));
        }
        let step = (domain_max - domain_min) / grid_size as f64;
        let mut knots = Vec::with_capacity(grid_size + 2 * degree + 1);
        knots.extend(std::iter::repeat_n(domain_min, degree));
        for j in 0..=grid_size {
            knots.push(if j == grid_size {
                domain_max
            } else {
                domain_min + step * j as f64
            });
        }
        knots.extend(std::iter::repeat_n(domain_max, degree));
        Self::new(knots, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Number of grid intervals `G` (equals `num_basis - degree`).
    pub fn grid_size(&self) -> usize {
        self.num_basis() - self.degree
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_min, self.domain_max)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.domain_min, self.domain_max)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain_min && x <= self.domain_max
    }

    /// Index `s` of the knot span `[t_s, t_{s+1})` holding `x`, for `x` already
    /// inside the domain. The right end maps to the last non-empty span.
    fn find_span(&self, x: f64) -> usize {
        let n = self.num_basis();
        let k = self.degree;
        if x >= self.knots[n] {
            return n - 1;
        }
        // Largest s in [k, n-1] with t_s <= x.
        let (mut lo, mut hi) = (k, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Runs the triangular Cox-de Boor scheme on one span. Returns the span
    /// index; `row[m]` holds `B_{span-k+m, k}(x)`. When `lower` is given it
    /// receives the degree `k - 1` row on the same span (`B_{span-k+1+m, k-1}`).
    fn triangle(&self, x: f64, row: &mut BasisRow, mut lower: Option<&mut BasisRow>) -> usize {
        let k = self.degree;
        let t = &self.knots;
        let span = self.find_span(x);
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        row[0] = 1.0;
        if k == 1 {
            if let Some(l) = lower.as_deref_mut() {
                l[0] = 1.0;
            }
        }
        for j in 1..=k {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = row[r] / (right[r + 1] + left[j - r]);
                row[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            row[j] = saved;
            if j + 1 == k {
                if let Some(l) = lower.as_deref_mut() {
                    l[..k].copy_from_slice(&row[..k]);
                }
            }
        }
        span
    }

    /// Non-zero basis values at `x` (clamped into the domain). Returns the
    /// index of the first non-zero basis; `row[..=degree]` is filled.
    pub fn basis_row(&self, x: f64, row: &mut BasisRow) -> usize {
        let x = self.clamp(x);
        self.triangle(x, row, None) - self.degree
    }

    /// Like [`basis_row`](Self::basis_row) but also fills `deriv` with the
    /// x-derivatives of the same bases. Derivatives are zero outside the domain
    /// because evaluation clamps there.
    pub fn basis_row_with_derivatives(&self, x: f64, row: &mut BasisRow, deriv: &mut BasisRow) -> usize {
        let k = self.degree;
        let inside = self.contains(x);
        let xc = self.clamp(x);
        deriv[..=k].fill(0.0);
        if k == 0 {
            return self.triangle(xc, row, None);
        }
        let mut lower = [0.0; MAX_DEGREE + 1];
        let span = self.triangle(xc, row, Some(&mut lower));
        let first = span - k;
        if inside {
            let t = &self.knots;
            let kf = k as f64;
            for m in 0..=k {
                let i = first + m;
                let mut d = 0.0;
                if m >= 1 {
                    let den = t[i + k] - t[i];
                    if den != 0.0 {
                        d += kf * lower[m - 1] / den;
                    }
                }
                if m < k {
                    let den = t[i + k + 1] - t[i + 1];
                    if den != 0.0 {
                        d -= kf * lower[m] / den;
                    }
                }
                deriv[m] = d;
            }
        }
        first
    }

    /// `B_{i,k}(x)` for one basis, through the span-local path.
    pub fn basis(&self, i: usize, x: f64) -> Result<f64> {
        let n = self.num_basis();
        if i >= n {
            return Err(Error::IndexOutOfRange {
                index: i,
                num_basis: n,
            });
        }
        let mut row = [0.0; MAX_DEGREE + 1];
        let first = self.basis_row(x, &mut row);
        Ok(if i >= first && i <= first + self.degree {
            row[i - first]
        } else {
            0.0
        })
    }

    /// Greville abscissae: averages of `k` consecutive interior knots.
    pub fn greville(&self) -> Vec<f64> {
        let k = self.degree;
        (0..self.num_basis())
            .map(|i| {
                if k == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + k].iter().sum::<f64>() / k as f64
                }
            })
            .collect()
    }
}

/// Builds the clamped uniform knot vector used throughout the network.
pub fn make_uniform_knots(domain_min: f64, domain_max: f64, grid_size: usize, degree: usize) -> Result<KnotVector> {
    KnotVector::uniform(domain_min, domain_max, grid_size, degree)
}

/// One learnable univariate function `f(x) = sum_i c_i B_{i,k}(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFunction {
    knots: KnotVector,
    coefficients: Vec<f64>,
}

impl SplineFunction {
    pub fn new(knots: KnotVector, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != knots.num_basis() {
            return Err(Error::InvalidSpline(format!(
                "{} coefficients for {} basis functions",
                coefficients.len(),
                knots.num_basis()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidSpline("non-finite coefficient".into()));
        }
        Ok(Self { knots, coefficients })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Value at `x`; inputs outside the domain are clamped to its boundary.
    pub fn eval(&self, x: f64) -> f64 {
        let mut row = [0.0; MAX_DEGREE + 1];
        let first = self.knots.basis_row(x, &mut row);
        let k = self.knots.degree();
        row[..=k]
            .iter()
            .zip(&self.coefficients[first..=first + k])
            .map(|(b, c)| b * c)
            .sum()
    }

    /// `df/dx`. Zero for degree 0 and outside the domain.
    pub fn input_derivative(&self, x: f64) -> f64 {
        let mut row = [0.0; MAX_DEGREE + 1];
        let mut deriv = [0.0; MAX_DEGREE + 1];
        let first = self.knots.basis_row_with_derivatives(x, &mut row, &mut deriv);
        let k = self.knots.degree();
        deriv[..=k]
            .iter()
            .zip(&self.coefficients[first..=first + k])
            .map(|(d, c)| d * c)
            .sum()
    }

    /// `df/dc_i` for every coefficient, i.e. the full basis vector at `x`.
    pub fn coefficient_gradient(&self, x: f64) -> Vec<f64> {
        let mut row = [0.0; MAX_DEGREE + 1];
        let first = self.knots.basis_row(x, &mut row);
        let mut grad = vec![0.0; self.coefficients.len()];
        let k = self.knots.degree();
        grad[first..=first + k].copy_from_slice(&row[..=k]);
        grad
    }
}

pub fn eval_spline(s: &SplineFunction, x: f64) -> f64 {
    s.eval(x)
}

pub fn spline_input_derivative(s: &SplineFunction, x: f64) -> f64 {
    s.input_derivative(x)
}

pub fn spline_coefficient_gradient(s: &SplineFunction, x: f64) -> Vec<f64> {
    s.coefficient_gradient(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spline(rng: &mut ChaCha8Rng, g: usize, k: usize) -> SplineFunction {
        let kv = KnotVector::uniform(-1.0, 1.0, g, k).unwrap();
        let coeffs = (0..kv.num_basis()).map(|_| rng.random_range(-1.0..1.0)).collect();
        SplineFunction::new(kv, coeffs).unwrap()
    }

    #[test]
    fn uniform_knots_examples() {
        let kv = make_uniform_knots(0.0, 2.0, 2, 0).unwrap();
        assert_eq!(kv.knots(), &[0.0, 1.0, 2.0]);
        assert_eq!(kv.num_basis(), 2);

        let kv = make_uniform_knots(0.0, 1.0, 4, 3).unwrap();
        assert_eq!(
            kv.knots(),
            &[0.0, 0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(kv.num_basis(), 7);
        assert_eq!(kv.grid_size(), 4);

        assert!(matches!(
            make_uniform_knots(1.0, 0.0, 4, 3),
            Err(Error::InvalidDomain { .. })
        ));
        assert!(matches!(make_uniform_knots(0.0, 1.0, 0, 3), Err(Error::InvalidGrid(0))));
    }

    #[test]
    fn recursion_examples() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(bspline_basis(0, 0, 0.5, &t).unwrap(), 1.0);
        assert_eq!(bspline_basis(0, 1, 0.5, &t).unwrap(), 0.5);
        assert_eq!(bspline_basis(0, 1, 1.0, &t).unwrap(), 1.0);
        assert!(matches!(
            bspline_basis(1, 1, 0.5, &t),
            Err(Error::IndexOutOfRange { index: 1, num_basis: 1 })
        ));
    }

    #[test]
    fn degree_zero_lookup() {
        let kv = KnotVector::new(vec![0.0, 1.0, 2.0], 0).unwrap();
        let s = SplineFunction::new(kv, vec![2.0, 5.0]).unwrap();
        assert_eq!(s.eval(0.5), 2.0);
        assert_eq!(s.coefficient_gradient(1.5), vec![0.0, 1.0]);
        assert_eq!(s.input_derivative(0.5), 0.0);
    }

    #[test]
    fn constant_reproduction_and_clamping() {
        let kv = KnotVector::uniform(-1.0, 1.0, 5, 3).unwrap();
        let s = SplineFunction::new(kv, vec![3.7; 8]).unwrap();
        for &x in &[-0.99, -0.3, 0.0, 0.41, 0.999] {
            assert!((s.eval(x) - 3.7).abs() < 1e-12);
            assert!(s.input_derivative(x).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_spline(&mut rng, 4, 2);
        assert_eq!(r.eval(11.0), r.eval(1.0));
        assert_eq!(r.eval(-7.5), r.eval(-1.0));
        assert_eq!(r.input_derivative(3.0), 0.0);
    }

    #[test]
    fn hat_function_slope() {
        // Three unit hats on [-1,0,1,2,3]; the middle one rises on [0,1].
        let kv = KnotVector::new(vec![-1.0, 0.0, 1.0, 2.0, 3.0], 1).unwrap();
        let s = SplineFunction::new(kv, vec![0.0, 1.0, 0.0]).unwrap();
        assert!((s.input_derivative(0.5) - 1.0).abs() < 1e-15);
        assert!((s.eval(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn span_local_matches_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..=4 {
            for g in [1, 3, 5, 8] {
                let kv = KnotVector::uniform(-1.0, 1.0, g, k).unwrap();
                for _ in 0..50 {
                    let x = rng.random_range(-1.0..=1.0);
                    for i in 0..kv.num_basis() {
                        let a = kv.basis(i, x).unwrap();
                        let b = bspline_basis(i, k, x, kv.knots()).unwrap();
                        assert!((a - b).abs() < 1e-12, "k={k} g={g} i={i} x={x}: {a} vs {b}");
                    }
                }
                for x in [-1.0, 1.0] {
                    for i in 0..kv.num_basis() {
                        let a = kv.basis(i, x).unwrap();
                        let b = bspline_basis(i, k, x, kv.knots()).unwrap();
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for k in 1..=3 {
            let s = random_spline(&mut rng, 5, k);
            let knots = s.knots().knots().to_vec();
            let mut checked = 0;
            while checked < 100 {
                let x: f64 = rng.random_range(-0.999..0.999);
                // The finite difference is only meaningful away from knots
                // where lower-degree splines have kinks.
                if knots.iter().any(|t| (t - x).abs() < 2.0 * h) {
                    continue;
                }
                let fd = (s.eval(x + h) - s.eval(x - h)) / (2.0 * h);
                assert!((fd - s.input_derivative(x)).abs() < 1e-6, "k={k} x={x}");
                checked += 1;
            }
        }
    }

    #[test]
    fn coefficient_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_spline(&mut rng, 5, 3);
        let x = 0.237;
        let grad = s.coefficient_gradient(x);
        assert!((grad.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..grad.len() {
            let mut plus = s.coefficients().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let sp = SplineFunction::new(s.knots().clone(), plus).unwrap();
            let sm = SplineFunction::new(s.knots().clone(), minus).unwrap();
            let fd = (sp.eval(x) - sm.eval(x)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn greville_reproduces_identity() {
        for k in 1..=3 {
            let kv = KnotVector::uniform(-1.0, 1.0, 5, k).unwrap();
            let s = SplineFunction::new(kv.clone(), kv.greville()).unwrap();
            for x in [-0.8, -0.1, 0.33, 0.9] {
                assert!((s.eval(x) - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(KnotVector::new(vec![0.0, 2.0, 1.0], 0).is_err());
        assert!(KnotVector::new(vec![0.0, 0.0, 0.0], 1).is_err());
        let kv = KnotVector::uniform(-1.0, 1.0, 3, 2).unwrap();
        assert!(SplineFunction::new(kv.clone(), vec![0.0; 4]).is_err());
        assert!(SplineFunction::new(kv, vec![f64::NAN; 5]).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn partition_of_unity_and_support(k in 0usize..=3, g in 1usize..10, u in 0.0f64..1.0) {
            let kv = KnotVector::uniform(-1.0, 1.0, g, k).unwrap();
            let x = -1.0 + 2.0 * u;
            let t = kv.knots();
            let mut sum = 0.0;
            for i in 0..kv.num_basis() {
                let b = bspline_basis(i, k, x, t).unwrap();
                prop_assert!(b >= 0.0);
                if x < t[i] || x > t[i + k + 1] {
                    prop_assert_eq!(b, 0.0);
                }
                sum += b;
            }
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
