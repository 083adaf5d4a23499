//! Iterative quadratic tone curve.
//!
//! Starting from an image `I0` in [0, 1], each iteration applies
//!
//! ```text
//! I_n = I_{n-1} + alpha_n * I_{n-1} * (1 - I_{n-1}),   alpha_n in [-1, 1]
//! ```
//!
//! with one scalar `alpha_n` per iteration for the whole image, so equal input
//! values always map to equal outputs. For `|alpha| <= 1` one step maps
//! `x` into `[x^2, 2x - x^2]`, keeps 0 and 1 fixed and has slope
//! `1 + alpha (1 - 2x) >= 0`, so no clamping is ever needed.
//!
//! Gradients are written out as the explicit chain-rule recurrence:
//!
//! ```text
//! dI_n / dI_{n-1} = 1 + alpha_n (1 - 2 I_{n-1})
//! dI_n / dalpha_n = I_{n-1} (1 - I_{n-1})
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::UnitImage;
use crate::nn::Scalar;

/// Default number of iterations.
pub const DEFAULT_ITERATIONS: usize = 8;

/// Per-iteration coefficients `alpha_1 .. alpha_N`, each in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveCoefficients<T = f32> {
    alphas: Vec<T>,
}

impl<T: Scalar> CurveCoefficients<T> {
    pub fn new(alphas: Vec<T>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::EmptyCurve);
        }
        for (index, a) in alphas.iter().enumerate() {
            if !(a.abs() <= T::one()) {
                return Err(Error::CoefficientRange { index, value: a.as_f64() });
            }
        }
        Ok(Self { alphas })
    }

    /// All-zero coefficients (identity curve).
    pub fn identity(iterations: usize) -> Result<Self> {
        Self::new(vec![T::zero(); iterations])
    }

    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Map one value through all iterations.
    #[inline]
    pub fn map(&self, x: T) -> T {
        self.alphas.iter().fold(x, |x, &a| x + a * x * (T::one() - x))
    }

    pub fn apply_in_place(&self, values: &mut [T]) {
        for v in values {
            *v = self.map(*v);
        }
    }

    /// `dI_N / dalpha_n` for every iteration `n` (outer index) and pixel (inner index).
    pub fn grad_alpha(&self, x0: &[T]) -> Vec<Vec<T>> {
        let n = self.alphas.len();
        let mut out = vec![vec![T::zero(); x0.len()]; n];
        let mut states = vec![T::zero(); n];
        for (p, &x) in x0.iter().enumerate() {
            let mut x = x;
            for (s, &a) in states.iter_mut().zip(&self.alphas) {
                *s = x;
                x = x + a * x * (T::one() - x);
            }
            // Walk backwards carrying dI_N / dI_k.
            let mut carry = T::one();
            for k in (0..n).rev() {
                let s = states[k];
                out[k][p] = carry * s * (T::one() - s);
                carry *= T::one() + self.alphas[k] * (T::one() - s - s);
            }
        }
        out
    }

    /// `dI_N / dI_0` per pixel: the product of the per-step slopes.
    pub fn grad_input(&self, x0: &[T]) -> Vec<T> {
        x0.iter()
            .map(|&x| {
                let mut x = x;
                let mut d = T::one();
                for &a in &self.alphas {
                    d *= T::one() + a * (T::one() - x - x);
                    x = x + a * x * (T::one() - x);
                }
                d
            })
            .collect()
    }

    /// Vector-Jacobian product: given `dL/dI_N` per pixel, return `dL/dalpha`
    /// (length N) summed over pixels.
    pub fn backprop(&self, x0: &[T], grad_out: &[T]) -> Result<Vec<T>> {
        if x0.len() != grad_out.len() {
            return Err(Error::LengthMismatch(x0.len(), grad_out.len()));
        }
        let n = self.alphas.len();
        let mut ga = vec![T::zero(); n];
        let mut states = vec![T::zero(); n];
        for (&x, &g) in x0.iter().zip(grad_out) {
            let mut x = x;
            for (s, &a) in states.iter_mut().zip(&self.alphas) {
                *s = x;
                x = x + a * x * (T::one() - x);
            }
            let mut g = g;
            for k in (0..n).rev() {
                let s = states[k];
                ga[k] += g * s * (T::one() - s);
                g *= T::one() + self.alphas[k] * (T::one() - s - s);
            }
        }
        Ok(ga)
    }
}

impl CurveCoefficients<f32> {
    /// Apply the curve to every pixel of an image.
    pub fn apply(&self, img: &UnitImage) -> UnitImage {
        let mut values = img.values().to_vec();
        self.apply_in_place(&mut values);
        UnitImage::new(img.width(), img.height(), values).expect("curve preserves [0, 1]")
    }
}

/// Free-function form of [`CurveCoefficients::apply`].
pub fn apply_curve(img: &UnitImage, coefficients: &CurveCoefficients<f32>) -> UnitImage {
    coefficients.apply(img)
}

/// Result of [`fit_curve_to_target`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit {
    pub coefficients: CurveCoefficients<f64>,
    /// Largest absolute deviation from the target over the grid.
    pub max_error: f64,
}

fn grid(len: usize) -> Vec<f64> {
    (0..len).map(|i| i as f64 / (len - 1) as f64).collect()
}

fn max_error(alphas: &[f64], xs: &[f64], target: &[f64]) -> f64 {
    let c = CurveCoefficients { alphas: alphas.to_vec() };
    xs.iter().zip(target).map(|(&x, &t)| (c.map(x) - t).abs()).fold(0.0, f64::max)
}

/// Solve a small symmetric positive-definite system in place by Cholesky.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    true
}

/// Damped Gauss-Newton on the weighted squared residual, with box clamping.
fn weighted_least_squares(alphas: &mut [f64], xs: &[f64], target: &[f64], w: &[f64], iters: usize) {
    let n = alphas.len();
    let objective = |al: &[f64]| {
        let c = CurveCoefficients { alphas: al.to_vec() };
        xs.iter()
            .zip(target)
            .zip(w)
            .map(|((&x, &t), &wi)| {
                wi * {
                    let d = c.map(x) - t;
                    d * d
                }
            })
            .sum::<f64>()
    };
    let mut lambda = 1e-3;
    let mut current = objective(alphas);
    for _ in 0..iters {
        let c = CurveCoefficients { alphas: alphas.to_vec() };
        let jac = c.grad_alpha(xs);
        let mut jtj = vec![0.0; n * n];
        let mut jtr = vec![0.0; n];
        for p in 0..xs.len() {
            let r = c.map(xs[p]) - target[p];
            for i in 0..n {
                jtr[i] += w[p] * jac[i][p] * r;
                for j in 0..=i {
                    jtj[i * n + j] += w[p] * jac[i][p] * jac[j][p];
                }
            }
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    a[i * n + j] = jtj[i * n + j];
                    a[j * n + i] = jtj[i * n + j];
                }
                a[i * n + i] += lambda * (jtj[i * n + i] + 1e-12);
            }
            let mut step: Vec<f64> = jtr.iter().map(|v| -v).collect();
            if cholesky_solve(&mut a, &mut step, n) {
                let trial: Vec<f64> = alphas.iter().zip(&step).map(|(a, s)| (a + s).clamp(-1.0, 1.0)).collect();
                let value = objective(&trial);
                if value < current {
                    alphas.copy_from_slice(&trial);
                    current = value;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
}

/// Fit `iterations` coefficients so the curve approximates `target`, a
/// monotone map sampled on a uniform grid over [0, 1] (`target[0]` is the
/// value at 0, the last entry the value at 1).
///
/// Weighted least squares with Lawson reweighting drives the solution toward
/// the minimax fit, then coordinate descent on the max-grid error polishes it.
pub fn fit_curve_to_target(target: &[f64], iterations: usize) -> Result<CurveFit> {
    if iterations == 0 {
        return Err(Error::EmptyCurve);
    }
    if target.len() < 2 {
        return Err(Error::Empty);
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target curve"));
    }
    if target[0].abs() > 1e-12 || (target[target.len() - 1] - 1.0).abs() > 1e-12 {
        return Err(Error::TargetFixedPoints);
    }
    let xs = grid(target.len());
    let mut alphas = vec![0.0; iterations];
    let mut best = (max_error(&alphas, &xs, target), alphas.clone());
    if best.0 == 0.0 {
        return Ok(CurveFit { coefficients: CurveCoefficients { alphas }, max_error: 0.0 });
    }

    let mut w = vec![1.0 / xs.len() as f64; xs.len()];
    for _ in 0..60 {
        weighted_least_squares(&mut alphas, &xs, target, &w, 30);
        let err = max_error(&alphas, &xs, target);
        if err < best.0 {
            best = (err, alphas.clone());
        }
        // Lawson update: emphasize the grid points with the largest residuals.
        let c = CurveCoefficients { alphas: alphas.clone() };
        let mut sum = 0.0;
        for (wi, (&x, &t)) in w.iter_mut().zip(xs.iter().zip(target)) {
            *wi *= (c.map(x) - t).abs() + 1e-15;
            sum += *wi;
        }
        if !(sum > 0.0) {
            break;
        }
        w.iter_mut().for_each(|wi| *wi /= sum);
    }

    // Coordinate descent on the max error, golden-section per coordinate.
    let mut alphas = best.1.clone();
    let mut radius = 0.05;
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    for _ in 0..40 {
        for k in 0..iterations {
            let eval = |v: f64, al: &mut Vec<f64>| {
                al[k] = v;
                max_error(al, &xs, target)
            };
            let mut work = alphas.clone();
            let (mut lo, mut hi) = ((alphas[k] - radius).max(-1.0), (alphas[k] + radius).min(1.0));
            let mut a = hi - inv_phi * (hi - lo);
            let mut b = lo + inv_phi * (hi - lo);
            let (mut fa, mut fb) = (eval(a, &mut work), eval(b, &mut work));
            for _ in 0..40 {
                if fa < fb {
                    hi = b;
                    b = a;
                    fb = fa;
                    a = hi - inv_phi * (hi - lo);
                    fa = eval(a, &mut work);
                } else {
                    lo = a;
                    a = b;
                    fa = fb;
                    b = lo + inv_phi * (hi - lo);
                    fb = eval(b, &mut work);
                }
            }
            let (v, f) = if fa < fb { (a, fa) } else { (b, fb) };
            if f < best.0 {
                alphas[k] = v;
                best = (f, alphas.clone());
            }
        }
        radius *= 0.7;
    }
    Ok(CurveFit { coefficients: CurveCoefficients { alphas: best.1 }, max_error: best.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c64(a: &[f64]) -> CurveCoefficients<f64> {
        CurveCoefficients::new(a.to_vec()).unwrap()
    }

    #[test]
    fn forward_examples() {
        assert_eq!(c64(&[0.0]).map(0.5), 0.5);
        assert_eq!(c64(&[1.0]).map(0.5), 0.75);
        assert_eq!(c64(&[1.0, 1.0]).map(0.5), 0.9375);
        for a in [-1.0, -0.3, 0.0, 0.6, 1.0] {
            let c = c64(&[a, -a, a]);
            assert_eq!(c.map(0.0), 0.0);
            assert_eq!(c.map(1.0), 1.0);
        }
    }

    #[test]
    fn invalid_coefficients() {
        assert_eq!(
            CurveCoefficients::new(vec![0.2f64, 1.5]).unwrap_err(),
            Error::CoefficientRange { index: 1, value: 1.5 }
        );
        assert!(CurveCoefficients::<f64>::new(vec![f64::NAN]).is_err());
        assert_eq!(CurveCoefficients::<f64>::new(vec![]).unwrap_err(), Error::EmptyCurve);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(c64(&[0.3]).grad_alpha(&[0.5])[0][0], 0.25);
        let g = c64(&[0.4, -0.9, 1.0]).grad_alpha(&[0.0]);
        assert!(g.iter().all(|row| row[0] == 0.0));
        assert_eq!(c64(&[0.0; 5]).grad_input(&[0.1, 0.7]), [1.0, 1.0]);
        assert_eq!(c64(&[1.0]).grad_input(&[0.5]), [1.0]);
    }

    #[test]
    fn backprop_equals_summed_jacobian() {
        let c = c64(&[0.3, -0.7, 0.9, -0.1]);
        let x = [0.05, 0.3, 0.5, 0.81, 0.99];
        let g = [0.2, -1.0, 0.5, 3.0, -0.25];
        let jac = c.grad_alpha(&x);
        let vjp = c.backprop(&x, &g).unwrap();
        for k in 0..4 {
            let direct: f64 = jac[k].iter().zip(&g).map(|(j, g)| j * g).sum();
            assert_abs_diff_eq!(direct, vjp[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn unit_image_application_keeps_dimensions() {
        let img = UnitImage::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let out = apply_curve(&img, &CurveCoefficients::new(vec![1.0f32]).unwrap());
        assert_eq!((out.width(), out.height()), (2, 2));
        assert_eq!(out.values(), &[0.0, 0.4375, 0.75, 1.0]);
    }

    #[test]
    fn fit_identity_is_exact() {
        let xs = grid(64);
        let fit = fit_curve_to_target(&xs, 4).unwrap();
        assert_eq!(fit.max_error, 0.0);
        assert!(fit.coefficients.alphas().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn fit_recovers_single_coefficient() {
        let xs = grid(1024);
        let truth = c64(&[0.7]);
        let target: Vec<f64> = xs.iter().map(|&x| truth.map(x)).collect();
        let fit = fit_curve_to_target(&target, 1).unwrap();
        assert_abs_diff_eq!(fit.coefficients.alphas()[0], 0.7, epsilon = 1e-7);
        assert!(fit.max_error < 1e-8, "max error {}", fit.max_error);
    }

    #[test]
    fn fit_rejects_moved_fixed_points() {
        let target: Vec<f64> = grid(16).iter().map(|x| 0.1 + 0.9 * x).collect();
        assert_eq!(fit_curve_to_target(&target, 3).unwrap_err(), Error::TargetFixedPoints);
    }

    fn alphas_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..=1.0, 1..=8)
    }

    proptest! {
        #[test]
        fn output_stays_in_unit_interval(x in 0.0f64..=1.0, a in alphas_strategy()) {
            let y = c64(&a).map(x);
            prop_assert!((0.0..=1.0).contains(&y));
        }

        #[test]
        fn single_step_bounds(x in 0.0f64..=1.0, a in -1.0f64..=1.0) {
            let y = c64(&[a]).map(x);
            prop_assert!(y >= x * x - 1e-15 && y <= 2.0 * x - x * x + 1e-15);
        }

        #[test]
        fn monotone_in_input(x1 in 0.0f64..=1.0, x2 in 0.0f64..=1.0, a in alphas_strategy()) {
            let c = c64(&a);
            let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
            prop_assert!(c.map(lo) <= c.map(hi));
        }

        #[test]
        fn strictly_increasing_for_interior_coefficients(
            x in 0.0f64..0.99,
            a in proptest::collection::vec(-0.99f64..0.99, 1..=8),
        ) {
            let c = c64(&a);
            prop_assert!(c.grad_input(&[x])[0] > 0.0);
            prop_assert!(c.map(x) < c.map(x + 0.01));
        }

        #[test]
        fn equal_inputs_map_to_equal_outputs(v in 0.0f32..=1.0, a in proptest::collection::vec(-1.0f32..=1.0, 1..=8)) {
            let img = UnitImage::new(3, 1, vec![v, 0.5, v]).unwrap();
            let out = CurveCoefficients::new(a).unwrap().apply(&img);
            prop_assert_eq!(out.values()[0].to_bits(), out.values()[2].to_bits());
        }
    }
}
