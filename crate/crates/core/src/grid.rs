//! Uniform periodic 1D grid: spectral and fourth-order finite-difference
//! derivatives, quadrature, cumulative integrals and smooth flat-top windows.
//!
//! Point `i` sits at `x_min + i * dx` with `dx = (x_max - x_min) / n`; the
//! point `x_max` itself is the periodic image of `x_min` and is not stored.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Minimum number of grid points.
pub const MIN_POINTS: usize = 16;

/// Below this many points per taper a flat-top window stops being
/// spectrally clean.
const MIN_TAPER_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeMethod {
    /// Fourier differentiation, exact for band-limited periodic input.
    #[default]
    Spectral,
    /// Fourth-order central stencils with periodic wrap.
    Fd4,
}

impl std::str::FromStr for DerivativeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "fd4" => Ok(Self::Fd4),
            other => Err(Error::Config(format!("unknown derivative method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CumulativeRule {
    /// Cumulative trapezoid, second order.
    Trapezoid,
    /// Trapezoid with a four-point end correction per interval, fourth order.
    #[default]
    Fourth,
    /// Fourier antiderivative. Only valid when the integrand decays at both
    /// edges (its periodic extension is smooth).
    Spectral,
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

#[derive(Clone)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n: usize,
    plans: Arc<Plans>,
}

impl fmt::Debug for Grid1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid1D")
            .field("x_min", &self.x_min)
            .field("x_max", &self.x_max)
            .field("n", &self.n)
            .finish()
    }
}

impl PartialEq for Grid1D {
    fn eq(&self, other: &Self) -> bool {
        self.x_min == other.x_min && self.x_max == other.x_max && self.n == other.n
    }
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) {
            return Err(Error::Grid(format!("non-finite bounds [{x_min}, {x_max}]")));
        }
        if n < MIN_POINTS {
            return Err(Error::Grid(format!("n = {n} < {MIN_POINTS}")));
        }
        if x_max <= x_min {
            return Err(Error::Grid(format!("empty domain [{x_min}, {x_max}]")));
        }
        let mut planner = FftPlanner::new();
        let plans = Plans {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        };
        Ok(Self {
            x_min,
            x_max,
            n,
            plans: Arc::new(plans),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    /// Largest stored coordinate, `x_max - dx`.
    pub fn last_point(&self) -> f64 {
        self.point(self.n - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Angular wavenumbers in FFT order; the Nyquist mode carries `-pi/dx`.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n as i64;
        let dk = 2.0 * PI / self.length();
        (0..n)
            .map(|j| if j < (n + 1) / 2 { j } else { j - n })
            .map(|j| j as f64 * dk)
            .collect()
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.plans.forward.process(data);
    }

    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.plans.inverse.process(data);
        let scale = 1.0 / self.n as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::InvalidField(format!(
                "field length {len} does not match grid size {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Derivative of the given order (1, 2 or 3).
    pub fn derivative(
        &self,
        f: &[Complex64],
        order: usize,
        method: DerivativeMethod,
    ) -> Result<Vec<Complex64>> {
        Ok(self.derivatives(f, order, method)?.pop().expect("order >= 1"))
    }

    pub fn derivative_real(&self, f: &[f64], order: usize, method: DerivativeMethod) -> Result<Vec<f64>> {
        let z: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Ok(self.derivative(&z, order, method)?.into_iter().map(|z| z.re).collect())
    }

    /// All derivatives of orders `1..=max_order`, sharing one forward transform.
    pub fn derivatives(
        &self,
        f: &[Complex64],
        max_order: usize,
        method: DerivativeMethod,
    ) -> Result<Vec<Vec<Complex64>>> {
        self.check_len(f.len())?;
        if !(1..=3).contains(&max_order) {
            return Err(Error::Grid(format!("derivative order {max_order} not supported")));
        }
        ensure_finite("f", f.iter().flat_map(|z| [z.re, z.im]))?;
        Ok(match method {
            DerivativeMethod::Spectral => self.spectral_derivatives(f, max_order),
            DerivativeMethod::Fd4 => (1..=max_order).map(|o| self.fd4(f, o)).collect(),
        })
    }

    fn spectral_derivatives(&self, f: &[Complex64], max_order: usize) -> Vec<Vec<Complex64>> {
        let mut spectrum = f.to_vec();
        self.forward(&mut spectrum);
        let k = self.wavenumbers();
        let nyquist = (self.n % 2 == 0).then_some(self.n / 2);
        (1..=max_order)
            .map(|order| {
                let mut out: Vec<Complex64> = spectrum
                    .iter()
                    .zip(&k)
                    .map(|(&c, &kj)| c * Complex64::new(0.0, kj).powu(order as u32))
                    .collect();
                if let (Some(j), true) = (nyquist, order % 2 == 1) {
                    out[j] = Complex64::new(0.0, 0.0);
                }
                self.inverse(&mut out);
                out
            })
            .collect()
    }

    fn fd4(&self, f: &[Complex64], order: usize) -> Vec<Complex64> {
        let n = self.n;
        let h = self.dx();
        let at = |i: usize, s: isize| f[(i as isize + s).rem_euclid(n as isize) as usize];
        (0..n)
            .map(|i| match order {
                1 => (-at(i, 2) + at(i, 1) * 8.0 - at(i, -1) * 8.0 + at(i, -2)) / (12.0 * h),
                2 => {
                    (-at(i, 2) + at(i, 1) * 16.0 - f[i] * 30.0 + at(i, -1) * 16.0 - at(i, -2))
                        / (12.0 * h * h)
                }
                _ => {
                    (-at(i, 3) + at(i, 2) * 8.0 - at(i, 1) * 13.0 + at(i, -1) * 13.0
                        - at(i, -2) * 8.0
                        + at(i, -3))
                        / (8.0 * h * h * h)
                }
            })
            .collect()
    }

    /// Periodic rectangle rule.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f.len())?;
        ensure_finite("f", f.iter().copied())?;
        Ok(f.iter().sum::<f64>() * self.dx())
    }

    /// Rectangle rule restricted to the points where `mask` is set.
    pub fn integrate_masked(&self, f: &[f64], mask: &[bool]) -> Result<f64> {
        self.check_len(f.len())?;
        self.check_len(mask.len())?;
        ensure_finite("f", f.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v))?;
        Ok(f.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).sum::<f64>() * self.dx())
    }

    /// `F(x) = \int_{x_ref}^{x} f dx'` on every grid point.
    pub fn cumulative_integral(&self, f: &[f64], x_ref: f64, rule: CumulativeRule) -> Result<Vec<f64>> {
        self.check_len(f.len())?;
        ensure_finite("f", f.iter().copied())?;
        let (lo, hi) = (self.x_min, self.last_point());
        if !(lo..=hi).contains(&x_ref) {
            return Err(Error::Domain { x: x_ref, lo, hi });
        }
        let h = self.dx();
        let n = self.n;
        let mut cum = vec![0.0; n];
        match rule {
            CumulativeRule::Trapezoid => {
                for i in 0..n - 1 {
                    cum[i + 1] = cum[i] + 0.5 * h * (f[i] + f[i + 1]);
                }
            }
            CumulativeRule::Fourth => {
                for i in 0..n - 1 {
                    let piece = if i == 0 {
                        9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3]
                    } else if i == n - 2 {
                        f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] + 9.0 * f[n - 1]
                    } else {
                        -f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2]
                    };
                    cum[i + 1] = cum[i] + h / 24.0 * piece;
                }
            }
            CumulativeRule::Spectral => return Ok(self.spectral_antiderivative(f, x_ref)),
        }
        let offset = self.interpolate_cubic(&cum, x_ref);
        cum.iter_mut().for_each(|v| *v -= offset);
        Ok(cum)
    }

    fn spectral_antiderivative(&self, f: &[f64], x_ref: f64) -> Vec<f64> {
        let n = self.n;
        let mean = f.iter().sum::<f64>() / n as f64;
        let mut spec: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v - mean, 0.0)).collect();
        self.forward(&mut spec);
        let k = self.wavenumbers();
        for (c, &kj) in spec.iter_mut().zip(&k) {
            *c = if kj == 0.0 { Complex64::new(0.0, 0.0) } else { *c / Complex64::new(0.0, kj) };
        }
        if n % 2 == 0 {
            spec[n / 2] = Complex64::new(0.0, 0.0);
        }
        // periodic part evaluated at x_ref by direct Fourier synthesis
        let s = x_ref - self.x_min;
        let g_ref = spec
            .iter()
            .zip(&k)
            .map(|(c, &kj)| (c * Complex64::from_polar(1.0, kj * s)).re)
            .sum::<f64>()
            / n as f64;
        self.inverse(&mut spec);
        spec.iter()
            .enumerate()
            .map(|(i, g)| mean * (self.point(i) - x_ref) + g.re - g_ref)
            .collect()
    }

    /// Four-point Lagrange interpolation of grid values at `x`.
    fn interpolate_cubic(&self, values: &[f64], x: f64) -> f64 {
        let s = (x - self.x_min) / self.dx();
        let j = s.floor() as isize;
        if (s - s.round()).abs() < 1e-12 {
            return values[s.round() as usize];
        }
        let start = (j - 1).clamp(0, self.n as isize - 4) as usize;
        let nodes: Vec<f64> = (start..start + 4).map(|i| i as f64).collect();
        (0..4)
            .map(|a| {
                let weight: f64 = (0..4)
                    .filter(|&b| b != a)
                    .map(|b| (s - nodes[b]) / (nodes[a] - nodes[b]))
                    .product();
                weight * values[start + a]
            })
            .sum()
    }

    /// Largest magnitude among the outermost `width` points on either side.
    pub fn edge_magnitude(&self, f: &[Complex64], width: usize) -> f64 {
        let w = width.min(self.n / 2);
        f[..w].iter().chain(&f[self.n - w..]).map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Domain-adequacy check for spectral treatment of a localized field.
    pub fn check_decayed(&self, f: &[Complex64], tolerance: f64) -> Result<()> {
        let edge = self.edge_magnitude(f, 4);
        if edge > tolerance {
            return Err(Error::Grid(format!(
                "field has magnitude {edge:.3e} at the domain edge (tolerance {tolerance:.1e})"
            )));
        }
        Ok(())
    }

    /// Smooth window equal to one (to roundoff) on the points `flat.0..=flat.1`
    /// and negligible outside `support.0..=support.1`. A side where the
    /// support reaches the domain edge is left untapered.
    pub fn flat_top_window(&self, support: (usize, usize), flat: (usize, usize)) -> Result<SmoothWindow> {
        let (s_lo, s_hi) = support;
        let (f_lo, f_hi) = flat;
        if !(s_lo <= f_lo && f_lo <= f_hi && f_hi <= s_hi && s_hi < self.n) {
            return Err(Error::Grid(format!(
                "window flat region {flat:?} not inside support {support:?}"
            )));
        }
        let h = self.dx();
        let taper = |outer: usize, inner: usize| -> Result<Option<(f64, f64)>> {
            let gap = outer.abs_diff(inner);
            if gap < MIN_TAPER_POINTS {
                return Err(Error::Grid(format!(
                    "window taper spans {gap} points (< {MIN_TAPER_POINTS})"
                )));
            }
            let margin = gap as f64 * h;
            let centre = 0.5 * (self.point(outer) + self.point(inner));
            // erfc(6) ~ 2e-17: flat to roundoff at the taper ends
            Ok(Some((centre, margin / 12.0)))
        };
        let left = if f_lo == 0 { None } else { taper(s_lo, f_lo)? };
        let right = if f_hi == self.n - 1 { None } else { taper(s_hi, f_hi)? };
        let values = (0..self.n)
            .map(|i| {
                let x = self.point(i);
                let l = left.map_or(1.0, |(c, w)| 0.5 * (1.0 + libm::erf((x - c) / w)));
                let r = right.map_or(1.0, |(c, w)| 0.5 * (1.0 - libm::erf((x - c) / w)));
                l * r
            })
            .collect();
        Ok(SmoothWindow { values, flat })
    }

    /// Derivatives of `window * f`, which coincide with those of `f` on the
    /// window's flat region.
    pub fn windowed_derivatives(
        &self,
        f: &[Complex64],
        window: &SmoothWindow,
        max_order: usize,
        method: DerivativeMethod,
    ) -> Result<Vec<Vec<Complex64>>> {
        self.check_len(f.len())?;
        let tapered: Vec<Complex64> = f.iter().zip(&window.values).map(|(z, w)| z * w).collect();
        self.derivatives(&tapered, max_order, method)
    }

    pub fn windowed_derivative_real(
        &self,
        f: &[f64],
        window: &SmoothWindow,
        order: usize,
        method: DerivativeMethod,
    ) -> Result<Vec<f64>> {
        let z: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut d = self.windowed_derivatives(&z, window, order, method)?;
        Ok(d.pop().expect("order >= 1").into_iter().map(|z| z.re).collect())
    }
}

#[derive(Debug, Clone)]
pub struct SmoothWindow {
    values: Vec<f64>,
    flat: (usize, usize),
}

impl SmoothWindow {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_range(&self) -> (usize, usize) {
        self.flat
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    #[test]
    fn rejects_small_or_empty_grids() {
        assert!(matches!(Grid1D::new(0.0, 1.0, 8), Err(Error::Grid(_))));
        assert!(matches!(Grid1D::new(1.0, 1.0, 64), Err(Error::Grid(_))));
        let g = Grid1D::new(-1.0, 1.0, 32).unwrap();
        let x = g.points();
        assert!(x.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(x[0], -1.0);
    }

    #[test]
    fn spectral_derivative_of_single_mode() {
        let g = Grid1D::new(0.0, 3.0, 64).unwrap();
        let l = g.length();
        let f: Vec<f64> = g.points().iter().map(|x| (2.0 * PI * x / l).sin()).collect();
        let d = g.derivative_real(&f, 1, DerivativeMethod::Spectral).unwrap();
        for (x, v) in g.points().iter().zip(&d) {
            assert_abs_diff_eq!(*v, 2.0 * PI / l * (2.0 * PI * x / l).cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_has_zero_derivative() {
        let g = Grid1D::new(0.0, 1.0, 32).unwrap();
        for method in [DerivativeMethod::Spectral, DerivativeMethod::Fd4] {
            for order in 1..=3 {
                let d = g.derivative(&vec![c(2.5); 32], order, method).unwrap();
                assert!(d.iter().all(|z| z.norm() < 1e-12));
            }
        }
    }

    #[test]
    fn gaussian_derivative_matches_analytic() {
        let g = Grid1D::new(-10.0, 10.0, 512).unwrap();
        let f: Vec<f64> = g.points().iter().map(|x| (-x * x).exp()).collect();
        let d = g.derivative_real(&f, 1, DerivativeMethod::Spectral).unwrap();
        let err = g
            .points()
            .iter()
            .zip(&d)
            .map(|(x, v)| (v + 2.0 * x * (-x * x).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10, "err = {err:e}");
    }

    #[test]
    fn fd4_is_fourth_order() {
        let err = |n: usize| {
            let g = Grid1D::new(0.0, 2.0 * PI, n).unwrap();
            let f: Vec<f64> = g.points().iter().map(|x| x.sin()).collect();
            (1..=3)
                .map(|o| {
                    let d = g.derivative_real(&f, o, DerivativeMethod::Fd4).unwrap();
                    let exact = |x: f64| match o {
                        1 => x.cos(),
                        2 => -x.sin(),
                        _ => -x.cos(),
                    };
                    g.points().iter().zip(&d).map(|(&x, v)| (v - exact(x)).abs()).fold(0.0, f64::max)
                })
                .collect::<Vec<_>>()
        };
        let (coarse, fine) = (err(32), err(64));
        for (a, b) in coarse.iter().zip(&fine) {
            let order = (a / b).log2();
            assert!(order > 3.8, "observed order {order}");
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let g = Grid1D::new(0.0, 1.0, 16).unwrap();
        let mut f = vec![0.0; 16];
        f[3] = f64::NAN;
        assert!(matches!(g.integrate(&f), Err(Error::InvalidField(_))));
        assert!(matches!(
            g.derivative_real(&f, 1, DerivativeMethod::Spectral),
            Err(Error::InvalidField(_))
        ));
        assert!(matches!(
            g.derivative_real(&[0.0; 16], 4, DerivativeMethod::Spectral),
            Err(Error::Grid(_))
        ));
    }

    #[test]
    fn integrate_simple_cases() {
        let g = Grid1D::new(0.0, 1.0, 37).unwrap();
        assert_abs_diff_eq!(g.integrate(&vec![1.0; 37]).unwrap(), 1.0, epsilon = 1e-14);
        let f: Vec<f64> = g.points().iter().map(|x| (2.0 * PI * x).sin()).collect();
        assert_abs_diff_eq!(g.integrate(&f).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn cumulative_integral_of_polynomials() {
        let g = Grid1D::new(-1.0, 1.0, 64).unwrap();
        let x = g.points();
        let ones = vec![1.0; 64];
        for rule in [CumulativeRule::Trapezoid, CumulativeRule::Fourth] {
            let f = g.cumulative_integral(&ones, 0.0, rule).unwrap();
            for (xi, fi) in x.iter().zip(&f) {
                assert_abs_diff_eq!(*fi, *xi, epsilon = 1e-13);
            }
            let two_x: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            let f = g.cumulative_integral(&two_x, 0.0, rule).unwrap();
            for (xi, fi) in x.iter().zip(&f) {
                assert_abs_diff_eq!(*fi, xi * xi, epsilon = 1e-12);
            }
        }
        assert!(matches!(
            g.cumulative_integral(&ones, 1.5, CumulativeRule::Fourth),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn cumulative_integral_off_grid_reference() {
        let g = Grid1D::new(-8.0, 8.0, 1024).unwrap();
        let f: Vec<f64> = g.points().iter().map(|x| (-x * x).exp()).collect();
        let x_ref = 0.123;
        let exact = |x: f64| 0.5 * PI.sqrt() * (libm::erf(x) - libm::erf(x_ref));
        for (rule, tol) in [(CumulativeRule::Fourth, 1e-8), (CumulativeRule::Spectral, 1e-13)] {
            let cum = g.cumulative_integral(&f, x_ref, rule).unwrap();
            let err = g.points().iter().zip(&cum).map(|(&x, v)| (v - exact(x)).abs()).fold(0.0, f64::max);
            assert!(err < tol, "{rule:?}: {err:e}");
        }
    }

    #[test]
    fn windowed_derivative_of_non_periodic_field() {
        // a ramp plus a tanh front: wildly non-periodic, smooth on the flat region
        let g = Grid1D::new(-4.0, 6.0, 1024).unwrap();
        let f: Vec<Complex64> = g.points().iter().map(|&x| c(3.0 * x + (5.0 * (x - 1.0)).tanh())).collect();
        let idx = |x: f64| ((x - g.x_min()) / g.dx()).round() as usize;
        let w = g.flat_top_window((idx(-2.0), idx(4.0)), (idx(-1.0), idx(3.0))).unwrap();
        let d = g.windowed_derivatives(&f, &w, 2, DerivativeMethod::Spectral).unwrap();
        let (lo, hi) = w.flat_range();
        for i in lo..=hi {
            let x = g.point(i);
            let s = 1.0 / (5.0 * (x - 1.0)).cosh().powi(2);
            assert_abs_diff_eq!(d[0][i].re, 3.0 + 5.0 * s, epsilon = 1e-9);
            assert_abs_diff_eq!(d[1][i].re, -50.0 * s * (5.0 * (x - 1.0)).tanh(), epsilon = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn integrate_is_linear(a in -5.0f64..5.0, b in -5.0f64..5.0, seed in 0u64..1000) {
            let g = Grid1D::new(0.0, 2.0, 64).unwrap();
            let f: Vec<f64> = g.points().iter().map(|x| (x * (seed as f64 + 1.0)).sin()).collect();
            let h: Vec<f64> = g.points().iter().map(|x| (x * x + seed as f64).cos()).collect();
            let combo: Vec<f64> = f.iter().zip(&h).map(|(u, v)| a * u + b * v).collect();
            let lhs = g.integrate(&combo).unwrap();
            let rhs = a * g.integrate(&f).unwrap() + b * g.integrate(&h).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs()));
        }

        #[test]
        fn derivative_inverts_cumulative_integral(width in 0.5f64..1.5, shift in -1.0f64..1.0) {
            let g = Grid1D::new(-10.0, 10.0, 512).unwrap();
            let f: Vec<f64> = g.points().iter().map(|x| (-((x - shift) / width).powi(2)).exp()).collect();
            let cum = g.cumulative_integral(&f, g.x_min(), CumulativeRule::Trapezoid).unwrap();
            // interior only: the antiderivative of a bump is not periodic
            let d = g.fd4(&cum.iter().map(|&v| c(v)).collect::<Vec<_>>(), 1);
            let h2 = g.dx() * g.dx();
            for i in 10..502 {
                prop_assert!((d[i].re - f[i]).abs() < h2 * 2.0 / (width * width));
            }
        }
    }
}
