//! Closed-form fields of the exactly solvable two-level model: a gaussian
//! nuclear density performing damped oscillations, a conditional state built
//! from two logistic fronts, and the Hamiltonian entries that generate it.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ef::TwoComponentWavefunction;
use crate::error::{Error, Result};
use crate::grid::{CumulativeRule, Grid1D};

/// Points per logistic front width below which the front counts as under-resolved.
pub const REQUIRED_POINTS_PER_FRONT: f64 = 10.0;

/// Smallest admissible `|sin theta|`, `|sin phi|` in the Hamiltonian denominators.
pub const SINGULAR_GAUGE_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub eta: f64,
    pub mass: f64,
    pub gamma: f64,
    /// Inverse mass; defaults to `1 / mass`.
    pub inertia: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            mass: 10.0,
            gamma: 40.0,
            inertia: 0.1,
        }
    }
}

impl ModelParams {
    /// Parameters with `inertia = 1 / mass`.
    pub fn new(eta: f64, mass: f64, gamma: f64) -> Result<Self> {
        let p = Self {
            eta,
            mass,
            gamma,
            inertia: 1.0 / mass,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_inertia(self, inertia: f64) -> Result<Self> {
        let p = Self { inertia, ..self };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::Config(format!("eta = {} must lie in (0, 1/2)", self.eta)));
        }
        for (name, v) in [("mass", self.mass), ("gamma", self.gamma), ("inertia", self.inertia)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    fn kappa(&self) -> f64 {
        1.0 / (3.0 * self.mass.sqrt())
    }

    fn damping(&self, t: f64) -> f64 {
        1.0 + self.eta * t
    }

    /// Mean nuclear position `1 - cos t / (1 + eta t)`.
    pub fn mean_position(&self, t: f64) -> f64 {
        1.0 - t.cos() / self.damping(t)
    }

    pub fn mean_velocity(&self, t: f64) -> f64 {
        let q = self.damping(t);
        t.sin() / q + self.eta * t.cos() / (q * q)
    }

    pub fn mean_acceleration(&self, t: f64) -> f64 {
        let (q, e) = (self.damping(t), self.eta);
        t.cos() / q - 2.0 * e * t.sin() / (q * q) - 2.0 * e * e * t.cos() / (q * q * q)
    }

    /// Packet width `[1 + (1 + eta t) cos^2 t] / (3 sqrt M)`.
    pub fn width(&self, t: f64) -> f64 {
        self.kappa() * (1.0 + self.damping(t) * t.cos().powi(2))
    }

    pub fn width_rate(&self, t: f64) -> f64 {
        self.kappa() * (self.eta * t.cos().powi(2) - self.damping(t) * (2.0 * t).sin())
    }

    pub fn width_acceleration(&self, t: f64) -> f64 {
        self.kappa() * (-2.0 * self.eta * (2.0 * t).sin() - 2.0 * self.damping(t) * (2.0 * t).cos())
    }

    /// `|chi(x, t)|^2`, a normalized gaussian.
    pub fn nuclear_density(&self, x: f64, t: f64) -> f64 {
        let s = self.width(t);
        let u = (x - self.mean_position(t)) / s;
        (-u * u).exp() / (PI.sqrt() * s)
    }

    /// `|chi(x, t)|`, evaluated without squaring underflow.
    pub fn chi_abs(&self, x: f64, t: f64) -> f64 {
        let s = self.width(t);
        let u = (x - self.mean_position(t)) / s;
        (-0.5 * u * u).exp() / (PI * s * s).powf(0.25)
    }

    /// `d|chi|^2/dt` at fixed `x`.
    pub fn density_rate(&self, x: f64, t: f64) -> f64 {
        let s = self.width(t);
        let ds = self.width_rate(t);
        let u = (x - self.mean_position(t)) / s;
        self.nuclear_density(x, t) * (2.0 * u * (self.mean_velocity(t) + u * ds) / s - ds / s)
    }

    /// `A = (xbar' + u sigma') / I`: the density-flux potential with the
    /// integration limit at minus infinity.
    pub fn vector_potential(&self, x: f64, t: f64) -> f64 {
        let u = (x - self.mean_position(t)) / self.width(t);
        (self.mean_velocity(t) + u * self.width_rate(t)) / self.inertia
    }

    /// `dA/dx`, constant in space.
    pub fn vector_potential_gradient(&self, t: f64) -> f64 {
        self.width_rate(t) / (self.width(t) * self.inertia)
    }

    /// Logistic front stiffness `gamma (1 + eta t)`.
    pub fn front_stiffness(&self, t: f64) -> f64 {
        self.gamma * self.damping(t)
    }
}

/// Logistic `L(z) = 1/(1+e^z)` and its first three derivatives.
fn logistic(z: f64) -> [f64; 4] {
    let (p, q) = if z > 0.0 {
        let e = (-z).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    } else {
        let e = z.exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    };
    let pq = p * q;
    let d1 = -pq;
    let d2 = pq * (1.0 - 2.0 * p);
    let d3 = -pq * (1.0 - 6.0 * pq);
    [p, d1, d2, d3]
}

/// Bloch-sphere parametrization of the model state at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochState {
    pub t: f64,
    /// `cos theta`.
    pub w: Vec<f64>,
    pub phi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub chi_abs: Vec<f64>,
}

/// Every closed-form field and partial derivative the Hamiltonian needs.
#[derive(Debug, Clone)]
pub struct FieldJet {
    pub t: f64,
    pub w: Vec<f64>,
    pub w_x: Vec<f64>,
    pub w_xx: Vec<f64>,
    pub w_t: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_x: Vec<f64>,
    pub phi_xx: Vec<f64>,
    pub phi_t: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_x: Vec<f64>,
    pub alpha_xx: Vec<f64>,
    /// Analytic `d alpha / dt`.
    pub alpha_t: Vec<f64>,
    pub chi_abs: Vec<f64>,
    pub density: Vec<f64>,
    pub density_t: Vec<f64>,
    pub vector_potential: Vec<f64>,
    /// `d ln|chi| / dx`.
    pub ln_chi_x: Vec<f64>,
    /// `d^2 ln|chi| / dx^2`, uniform in space.
    pub ln_chi_xx: f64,
}

impl FieldJet {
    pub fn bloch(&self) -> BlochState {
        BlochState {
            t: self.t,
            w: self.w.clone(),
            phi: self.phi.clone(),
            alpha: self.alpha.clone(),
            chi_abs: self.chi_abs.clone(),
        }
    }
}

/// Hamiltonian `h0 I + h1 sigma_1 + h3 sigma_3` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    pub t: f64,
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub h3: Vec<f64>,
}

impl Hamiltonian {
    pub fn zero(t: f64, n: usize) -> Self {
        Self {
            t,
            h0: vec![0.0; n],
            h1: vec![0.0; n],
            h3: vec![0.0; n],
        }
    }

    /// Matrix entries `(H11, H12, H22)` at point `i`; `H21 = H12`.
    pub fn entries(&self, i: usize) -> (f64, f64, f64) {
        (self.h0[i] + self.h3[i], self.h1[i], self.h0[i] - self.h3[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDerivativeMethod {
    /// Fourth-order central differences of the Bloch fields.
    FiniteDifference { dt: f64 },
    Analytic,
}

impl Default for TimeDerivativeMethod {
    fn default() -> Self {
        Self::FiniteDifference { dt: 1e-5 }
    }
}

/// Model parameters bound to a grid.
#[derive(Debug, Clone)]
pub struct ModelSystem {
    pub params: ModelParams,
    pub grid: Grid1D,
    pub time_derivatives: TimeDerivativeMethod,
    /// Quadrature for the `w phi_x` part of `alpha`.
    pub alpha_rule: CumulativeRule,
}

impl ModelSystem {
    pub fn new(params: ModelParams, grid: Grid1D) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            grid,
            time_derivatives: TimeDerivativeMethod::default(),
            alpha_rule: CumulativeRule::Spectral,
        })
    }

    pub fn with_time_derivatives(mut self, method: TimeDerivativeMethod) -> Self {
        self.time_derivatives = method;
        self
    }

    pub fn with_alpha_rule(mut self, rule: CumulativeRule) -> Self {
        self.alpha_rule = rule;
        self
    }

    /// Grid points per logistic front width `1 / (gamma (1 + eta t))`.
    pub fn front_resolution(&self, t: f64) -> f64 {
        1.0 / (self.params.front_stiffness(t) * self.grid.dx())
    }

    /// Advisory check; the field evaluators do not call it.
    pub fn check_front_resolution(&self, t: f64) -> Result<()> {
        let points = self.front_resolution(t);
        if points < REQUIRED_POINTS_PER_FRONT {
            return Err(Error::Resolution {
                t,
                points_per_width: points,
                required: REQUIRED_POINTS_PER_FRONT,
            });
        }
        Ok(())
    }

    pub fn bloch_fields(&self, t: f64) -> Result<BlochState> {
        Ok(self.field_jet(t)?.bloch())
    }

    pub fn field_jet(&self, t: f64) -> Result<FieldJet> {
        let p = &self.params;
        let n = self.grid.n();
        let x = self.grid.points();
        let x0 = self.grid.x_min();
        let c = 1.0 - 2.0 * p.eta;
        let s = p.front_stiffness(t);
        let s_t = p.gamma * p.eta;
        let (xb, xv, xa) = (p.mean_position(t), p.mean_velocity(t), p.mean_acceleration(t));
        let (sg, sv, sa) = (p.width(t), p.width_rate(t), p.width_acceleration(t));
        let inv_i = 1.0 / p.inertia;

        let mut jet = FieldJet {
            t,
            w: Vec::with_capacity(n),
            w_x: Vec::with_capacity(n),
            w_xx: Vec::with_capacity(n),
            w_t: Vec::with_capacity(n),
            phi: Vec::with_capacity(n),
            phi_x: Vec::with_capacity(n),
            phi_xx: Vec::with_capacity(n),
            phi_t: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
            alpha_x: Vec::with_capacity(n),
            alpha_xx: Vec::with_capacity(n),
            alpha_t: Vec::with_capacity(n),
            chi_abs: Vec::with_capacity(n),
            density: Vec::with_capacity(n),
            density_t: Vec::with_capacity(n),
            vector_potential: Vec::with_capacity(n),
            ln_chi_x: Vec::with_capacity(n),
            ln_chi_xx: -1.0 / (sg * sg),
        };
        // integrands for the numerically integrated part of alpha and alpha_t
        let mut w_phix = Vec::with_capacity(n);
        let mut w_phix_t = Vec::with_capacity(n);
        let (la, lb) = ((1.0 + t).ln(), (1.0 + 3.0 * t).ln());
        let (la_t, lb_t) = (1.0 / (1.0 + t), 3.0 / (1.0 + 3.0 * t));

        for &xi in &x {
            let d = xi - 1.0;
            let (za, zb) = (s * d - la, s * d - lb);
            let (za_t, zb_t) = (s_t * d - la_t, s_t * d - lb_t);
            let [pa, pa1, pa2, _] = logistic(za);
            let [pb, pb1, pb2, _] = logistic(zb);

            let w = p.eta + c * pa;
            let w_x = c * s * pa1;
            let w_xx = c * s * s * pa2;
            let w_t = c * pa1 * za_t;
            let phi = -p.eta - c * pb;
            let phi_x = -c * s * pb1;
            let phi_xx = -c * s * s * pb2;
            let phi_t = -c * pb1 * zb_t;
            let phi_xt = -c * (pb2 * zb_t * s + pb1 * s_t);

            let u = (xi - xb) / sg;
            let a = inv_i * (xv + u * sv);
            let rho = p.nuclear_density(xi, t);

            jet.w.push(w);
            jet.w_x.push(w_x);
            jet.w_xx.push(w_xx);
            jet.w_t.push(w_t);
            jet.phi.push(phi);
            jet.phi_x.push(phi_x);
            jet.phi_xx.push(phi_xx);
            jet.phi_t.push(phi_t);
            jet.alpha_x.push(2.0 * a + w * phi_x);
            jet.alpha_xx.push(2.0 * inv_i * sv / sg + w_x * phi_x + w * phi_xx);
            jet.chi_abs.push(p.chi_abs(xi, t));
            jet.density.push(rho);
            jet.density_t.push(rho * (2.0 * u * (xv + u * sv) / sg - sv / sg));
            jet.vector_potential.push(a);
            jet.ln_chi_x.push(-(xi - xb) / (sg * sg));
            w_phix.push(w * phi_x);
            w_phix_t.push(w_t * phi_x + w * phi_xt);
        }

        // alpha = int_{x_min}^x (2A + w phi_x): the 2A part is a quadratic in x
        let front = self.grid.cumulative_integral(&w_phix, x0, self.alpha_rule)?;
        let front_t = self.grid.cumulative_integral(&w_phix_t, x0, self.alpha_rule)?;
        let ratio_t = sa / (2.0 * sg) - sv * sv / (2.0 * sg * sg);
        for (i, &xi) in x.iter().enumerate() {
            let quad = (xi - xb).powi(2) - (x0 - xb).powi(2);
            let a_part = 2.0 * inv_i * (xv * (xi - x0) + sv * quad / (2.0 * sg));
            let a_part_t =
                2.0 * inv_i * (xa * (xi - x0) + ratio_t * quad + sv / sg * xv * (x0 - xi));
            jet.alpha.push(a_part + front[i]);
            jet.alpha_t.push(a_part_t + front_t[i]);
        }
        Ok(jet)
    }

    /// `theta_t`, `phi_t`, `alpha_t` by the configured method.
    fn time_derivatives_at(&self, jet: &FieldJet) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let sin_theta: Vec<f64> = jet.w.iter().map(|w| (1.0 - w * w).sqrt()).collect();
        match self.time_derivatives {
            TimeDerivativeMethod::Analytic => Ok((
                jet.w_t.iter().zip(&sin_theta).map(|(wt, st)| -wt / st).collect(),
                jet.phi_t.clone(),
                jet.alpha_t.clone(),
            )),
            TimeDerivativeMethod::FiniteDifference { dt } => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(Error::Config(format!("time-difference step {dt} must be positive")));
                }
                let t = jet.t;
                let states = [2.0, 1.0, -1.0, -2.0]
                    .iter()
                    .map(|k| self.bloch_fields(t + k * dt))
                    .collect::<Result<Vec<_>>>()?;
                let diff = |field: fn(&BlochState) -> &Vec<f64>| -> Vec<f64> {
                    let [p2, p1, m1, m2] = [0, 1, 2, 3].map(|j| field(&states[j]));
                    (0..p2.len())
                        .map(|i| (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * dt))
                        .collect()
                };
                let w_t = diff(|b| &b.w);
                let theta_t = w_t.iter().zip(&sin_theta).map(|(wt, st)| -wt / st).collect();
                Ok((theta_t, diff(|b| &b.phi), diff(|b| &b.alpha)))
            }
        }
    }

    pub fn hamiltonian(&self, t: f64) -> Result<Hamiltonian> {
        let jet = self.field_jet(t)?;
        self.hamiltonian_from_jet(&jet)
    }

    pub fn hamiltonian_from_jet(&self, jet: &FieldJet) -> Result<Hamiltonian> {
        let inertia = self.params.inertia;
        let (theta_t, phi_t, alpha_t) = self.time_derivatives_at(jet)?;
        let n = jet.w.len();
        let mut h = Hamiltonian::zero(jet.t, n);
        let l2 = jet.ln_chi_xx;
        for i in 0..n {
            let w = jet.w[i];
            let st = (1.0 - w * w).sqrt();
            let (sp, cp) = jet.phi[i].sin_cos();
            let x = || self.grid.point(i);
            if st < SINGULAR_GAUGE_LIMIT {
                return Err(Error::SingularGauge { angle: "theta", value: st, x: x() });
            }
            if sp.abs() < SINGULAR_GAUGE_LIMIT {
                return Err(Error::SingularGauge { angle: "phi", value: sp.abs(), x: x() });
            }
            let (w_x, w_xx) = (jet.w_x[i], jet.w_xx[i]);
            let th_x = -w_x / st;
            let th_xx = -(w_xx / st + w * w_x * w_x / (st * st * st));
            let (ph_x, ph_xx) = (jet.phi_x[i], jet.phi_xx[i]);
            let a_x = jet.alpha_x[i];
            let l1 = jet.ln_chi_x[i];

            let h1 = (-0.5 * theta_t[i]
                - 0.5 * inertia * st * l1 * ph_x
                - 0.25 * inertia * st * ph_xx
                - 0.25 * inertia * th_x * (a_x + w * ph_x))
                / sp;
            let h3 = (h1 * w * cp + 0.5 * st * phi_t[i] - 0.5 * inertia * l1 * th_x
                + 0.25 * inertia * st * a_x * ph_x
                - 0.25 * inertia * th_xx)
                / st;
            let h0 = -h1 * st * cp - h3 * w - 0.5 * alpha_t[i]
                + 0.5 * w * phi_t[i]
                + 0.5 * inertia * (l2 + l1 * l1)
                - 0.125 * inertia * (a_x * a_x + ph_x * ph_x - 2.0 * w * a_x * ph_x)
                - 0.125 * inertia * th_x * th_x;
            h.h0[i] = h0;
            h.h1[i] = h1;
            h.h3[i] = h3;
        }
        Ok(h)
    }

    /// `Psi = |chi| (e^{i(alpha-phi)/2} cos(theta/2), e^{i(alpha+phi)/2} sin(theta/2))`.
    pub fn psi(&self, t: f64) -> Result<TwoComponentWavefunction> {
        let b = self.bloch_fields(t)?;
        Ok(assemble_psi(&self.grid, &b))
    }
}

pub fn assemble_psi(grid: &Grid1D, b: &BlochState) -> TwoComponentWavefunction {
    let n = b.w.len();
    let mut psi1 = Vec::with_capacity(n);
    let mut psi2 = Vec::with_capacity(n);
    for i in 0..n {
        // half-angle forms avoid arccos: cos^2(theta/2) = (1+w)/2
        let c = (0.5 * (1.0 + b.w[i])).sqrt();
        let s = (0.5 * (1.0 - b.w[i])).sqrt();
        let chi = b.chi_abs[i];
        psi1.push(Complex64::from_polar(chi * c, 0.5 * (b.alpha[i] - b.phi[i])));
        psi2.push(Complex64::from_polar(chi * s, 0.5 * (b.alpha[i] + b.phi[i])));
    }
    TwoComponentWavefunction::from_parts(grid.clone(), psi1, psi2)
}

/// Closed-form metric, `C` and `D` of the model from `w`, `phi` and their
/// spatial derivatives.
pub fn closed_form_tensors(jet: &FieldJet) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = jet.w.len();
    let mut g = Vec::with_capacity(n);
    let mut cc = Vec::with_capacity(n);
    let mut dd = Vec::with_capacity(n);
    for i in 0..n {
        let (w, wx, wxx) = (jet.w[i], jet.w_x[i], jet.w_xx[i]);
        let (px, pxx) = (jet.phi_x[i], jet.phi_xx[i]);
        let q = 1.0 - w * w;
        g.push(0.25 * wx * wx / q + 0.25 * q * px * px);
        cc.push(-0.25 / q * (-w * q * q * px.powi(3) - 3.0 * w * wx * wx * px + q * (wx * pxx - wxx * px)));
        dd.push(
            -0.125 / (q * q)
                * (2.0 * w * wx * (q * q * px * px + wx * wx)
                    - q * (4.0 * w * q * wx * px * px - 2.0 * q * q * px * pxx - 2.0 * wx * wxx)),
        );
    }
    (g, cc, dd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn default_system(n: usize) -> ModelSystem {
        ModelSystem::new(ModelParams::default(), Grid1D::new(-4.0, 6.0, n).unwrap()).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 10.0, 40.0).is_err());
        assert!(ModelParams::new(0.5, 10.0, 40.0).is_err());
        assert!(ModelParams::new(0.1, -1.0, 40.0).is_err());
        assert!(ModelParams::new(0.1, 10.0, 0.0).is_err());
        let p = ModelParams::new(0.2, 4.0, 10.0).unwrap();
        assert_eq!(p.inertia, 0.25);
        assert!(ModelParams::default().validate().is_ok());
    }

    #[test]
    fn mean_position_values() {
        let p = ModelParams::default();
        assert_abs_diff_eq!(p.mean_position(0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.mean_position(PI / 2.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.mean_position(2.0 * PI), 0.385870, epsilon = 1e-6);
    }

    #[test]
    fn width_values() {
        let p = ModelParams::default();
        assert_abs_diff_eq!(p.width(PI / 2.0), 0.105409, epsilon = 1e-6);
        assert_abs_diff_eq!(p.width(0.0), 0.210819, epsilon = 1e-6);
        assert_abs_diff_eq!(p.width(PI), (2.0 + 0.1 * PI) / (3.0 * 10f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(p.width(PI), 0.243934, epsilon = 1e-6);
    }

    #[test]
    fn time_derivatives_of_moments_match_differences() {
        let p = ModelParams::default();
        let h = 1e-4;
        let d = |f: &dyn Fn(f64) -> f64, t: f64| {
            (-f(t + 2.0 * h) + 8.0 * f(t + h) - 8.0 * f(t - h) + f(t - 2.0 * h)) / (12.0 * h)
        };
        for t in [0.3, 1.7, 4.0, 9.2] {
            assert_abs_diff_eq!(d(&|s| p.mean_position(s), t), p.mean_velocity(t), epsilon = 1e-10);
            assert_abs_diff_eq!(d(&|s| p.mean_velocity(s), t), p.mean_acceleration(t), epsilon = 1e-10);
            assert_abs_diff_eq!(d(&|s| p.width(s), t), p.width_rate(t), epsilon = 1e-10);
            assert_abs_diff_eq!(d(&|s| p.width_rate(s), t), p.width_acceleration(t), epsilon = 1e-10);
        }
        assert_abs_diff_eq!(p.mean_velocity(0.0), p.eta, epsilon = 1e-15);
    }

    #[test]
    fn density_peak_and_width() {
        let p = ModelParams::default();
        let t = 0.8;
        let peak = p.nuclear_density(p.mean_position(t), t);
        assert_abs_diff_eq!(peak, 1.0 / (PI.sqrt() * p.width(t)), epsilon = 1e-13);
        let off = p.nuclear_density(p.mean_position(t) + p.width(t), t);
        assert_abs_diff_eq!(off, peak * (-1.0f64).exp(), epsilon = 1e-13);
        let x = 0.37;
        assert_abs_diff_eq!(p.chi_abs(x, t).powi(2), p.nuclear_density(x, t), epsilon = 1e-13);
    }

    #[test]
    fn vector_potential_at_origin() {
        let p = ModelParams::default();
        assert_abs_diff_eq!(p.vector_potential(0.0, 0.0), 1.0, epsilon = 1e-14);
        let t = 2.3;
        assert_abs_diff_eq!(
            p.vector_potential(p.mean_position(t), t),
            p.mean_velocity(t) / p.inertia,
            epsilon = 1e-12
        );
    }

    #[test]
    fn vector_potential_matches_flux_quadrature() {
        // A = -(1/I)(1/rho) int_{-inf}^x d_t rho
        let sys = default_system(4096);
        let p = sys.params;
        for t in [0.0, 0.9, 3.3] {
            let x = sys.grid.points();
            let rate: Vec<f64> = x.iter().map(|&xi| p.density_rate(xi, t)).collect();
            let cum = sys.grid.cumulative_integral(&rate, sys.grid.x_min(), CumulativeRule::Spectral).unwrap();
            let peak = p.nuclear_density(p.mean_position(t), t);
            for (i, &xi) in x.iter().enumerate() {
                let rho = p.nuclear_density(xi, t);
                if rho > 1e-3 * peak {
                    let a = -cum[i] / (rho * p.inertia);
                    assert_abs_diff_eq!(a, p.vector_potential(xi, t), epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn density_rate_matches_cdf_closed_form() {
        // int_{x_min}^x d_t rho = -rho (xbar' + u sigma') for a decayed left tail
        let sys = default_system(4096);
        let p = sys.params;
        let x = sys.grid.points();
        let rate: Vec<f64> = x.iter().map(|&xi| p.density_rate(xi, 0.0)).collect();
        let cum = sys.grid.cumulative_integral(&rate, sys.grid.x_min(), CumulativeRule::Fourth).unwrap();
        for (i, &xi) in x.iter().enumerate() {
            let u = (xi - p.mean_position(0.0)) / p.width(0.0);
            let exact = -p.nuclear_density(xi, 0.0) * (p.mean_velocity(0.0) + u * p.width_rate(0.0));
            assert_abs_diff_eq!(cum[i], exact, epsilon = 1e-8);
        }
    }

    #[test]
    fn front_values_and_limits() {
        let sys = default_system(1000);
        let b = sys.bloch_fields(0.0).unwrap();
        let i = ((1.0 - sys.grid.x_min()) / sys.grid.dx()).round() as usize;
        assert_abs_diff_eq!(sys.grid.point(i), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.w[i], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(b.phi[i], -0.5, epsilon = 1e-14);
        let last = sys.grid.n() - 1;
        assert_abs_diff_eq!(b.w[last], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(b.w[0], 0.9, epsilon = 1e-12);
        assert!(b.w.iter().all(|w| w.abs() < 1.0));
        assert!(b.chi_abs.iter().all(|c| *c > 0.0));
    }

    #[test]
    fn resolution_check_is_advisory() {
        let sys = default_system(4096);
        assert!(sys.check_front_resolution(0.0).is_ok());
        assert!(matches!(sys.check_front_resolution(10.0), Err(Error::Resolution { .. })));
        assert!(sys.bloch_fields(10.0).is_ok());
    }

    #[test]
    fn jet_space_derivatives_match_spectral() {
        // w_x, phi_x, alpha_x against differentiation of the sampled fields;
        // the fronts and alpha are not periodic so compare on a windowed interior
        let sys = default_system(4096);
        let g = &sys.grid;
        let jet = sys.field_jet(1.3).unwrap();
        let idx = |x: f64| ((x - g.x_min()) / g.dx()).round() as usize;
        let win = g.flat_top_window((idx(-3.5), idx(5.5)), (idx(-2.5), idx(4.5))).unwrap();
        for (f, fx) in [(&jet.w, &jet.w_x), (&jet.phi, &jet.phi_x), (&jet.alpha, &jet.alpha_x), (&jet.w_x, &jet.w_xx)] {
            let d = g
                .windowed_derivative_real(f, &win, 1, crate::grid::DerivativeMethod::Spectral)
                .unwrap();
            let scale = fx.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in idx(-2.5)..=idx(4.5) {
                assert!((d[i] - fx[i]).abs() < 1e-9 * scale, "{} vs {}", d[i], fx[i]);
            }
        }
    }

    #[test]
    fn analytic_time_derivatives_match_differences() {
        let sys = default_system(2048);
        let jet = sys.field_jet(2.1).unwrap();
        let h = 1e-5;
        let b: Vec<BlochState> = [2.0, 1.0, -1.0, -2.0].iter().map(|k| sys.bloch_fields(2.1 + k * h).unwrap()).collect();
        let d = |f: fn(&BlochState) -> &Vec<f64>, i: usize| {
            (-f(&b[0])[i] + 8.0 * f(&b[1])[i] - 8.0 * f(&b[2])[i] + f(&b[3])[i]) / (12.0 * h)
        };
        for i in (0..2048).step_by(7) {
            assert_abs_diff_eq!(d(|s| &s.w, i), jet.w_t[i], epsilon = 1e-7);
            assert_abs_diff_eq!(d(|s| &s.phi, i), jet.phi_t[i], epsilon = 1e-7);
            assert_abs_diff_eq!(d(|s| &s.alpha, i), jet.alpha_t[i], epsilon = 1e-6 * (1.0 + jet.alpha_t[i].abs()));
        }
    }

    /// Residuals of the four defining equations of the model, with time
    /// derivatives taken by differencing the closed-form fields.
    fn implicit_residuals(sys: &ModelSystem, t: f64) -> [f64; 4] {
        let i_ = sys.params.inertia;
        let jet = sys.field_jet(t).unwrap();
        let h = sys.hamiltonian(t).unwrap();
        let dt = 1e-5;
        let b: Vec<FieldJet> = [2.0, 1.0, -1.0, -2.0].iter().map(|k| sys.field_jet(t + k * dt).unwrap()).collect();
        let d = |f: &dyn Fn(&FieldJet, usize) -> f64, i: usize| {
            (-f(&b[0], i) + 8.0 * f(&b[1], i) - 8.0 * f(&b[2], i) + f(&b[3], i)) / (12.0 * dt)
        };
        let mut res = [0.0f64; 4];
        let peak = jet.density.iter().cloned().fold(0.0, f64::max);
        for i in 0..jet.w.len() {
            if jet.density[i] < 1e-10 * peak {
                continue;
            }
            let w = jet.w[i];
            let st = (1.0 - w * w).sqrt();
            let (sp, cp) = jet.phi[i].sin_cos();
            let th_x = -jet.w_x[i] / st;
            let th_xx = -(jet.w_xx[i] / st + w * jet.w_x[i].powi(2) / st.powi(3));
            let (px, pxx, ax, axx, l1, l2) =
                (jet.phi_x[i], jet.phi_xx[i], jet.alpha_x[i], jet.alpha_xx[i], jet.ln_chi_x[i], jet.ln_chi_xx);
            let lnchi_t = d(&|j, i| j.chi_abs[i].ln(), i);
            let th_t = d(&|j, i| j.w[i].acos(), i);
            let ph_t = d(&|j, i| j.phi[i], i);
            let al_t = d(&|j, i| j.alpha[i], i);
            let r0 = lnchi_t
                - (-0.5 * i_ * l1 * (ax - w * px) - 0.25 * i_ * (axx - w * pxx) - 0.25 * i_ * st * th_x * px);
            let r1 = th_t
                - (-2.0 * h.h1[i] * sp - i_ * st * l1 * px - 0.5 * i_ * st * pxx - 0.5 * i_ * th_x * (ax + w * px));
            let r2 = st * ph_t
                - (2.0 * (-h.h1[i] * w * cp + h.h3[i] * st) + i_ * l1 * th_x - 0.5 * i_ * st * ax * px
                    + 0.5 * i_ * th_xx);
            let r3 = al_t - w * ph_t
                - (-2.0 * (h.h0[i] + h.h1[i] * st * cp + h.h3[i] * w) + i_ * l2 + i_ * l1 * l1
                    - 0.25 * i_ * (ax * ax + px * px - 2.0 * w * ax * px)
                    - 0.25 * i_ * th_x * th_x);
            for (r, v) in res.iter_mut().zip([r0, r1, r2, r3]) {
                *r = r.max(v.abs());
            }
        }
        res
    }

    #[test]
    fn hamiltonian_reproduces_defining_equations() {
        let sys = default_system(4096);
        for t in [0.0, 0.7, 4.0] {
            let r = implicit_residuals(&sys, t);
            assert!(r.iter().all(|v| *v <= 1e-6), "t = {t}: {r:?}");
        }
    }

    #[test]
    fn analytic_and_difference_hamiltonians_agree() {
        let sys = default_system(2048);
        let fd = sys.hamiltonian(3.0).unwrap();
        let an = sys.clone().with_time_derivatives(TimeDerivativeMethod::Analytic).hamiltonian(3.0).unwrap();
        let jet = sys.field_jet(3.0).unwrap();
        let peak = jet.density.iter().cloned().fold(0.0, f64::max);
        for i in 0..2048 {
            if jet.density[i] > 1e-12 * peak {
                assert_abs_diff_eq!(fd.h0[i], an.h0[i], epsilon = 1e-6 * (1.0 + an.h0[i].abs()));
                assert_abs_diff_eq!(fd.h1[i], an.h1[i], epsilon = 1e-7 * (1.0 + an.h1[i].abs()));
                assert_abs_diff_eq!(fd.h3[i], an.h3[i], epsilon = 1e-7 * (1.0 + an.h3[i].abs()));
            }
        }
    }

    #[test]
    fn psi_norm_and_bloch_vector() {
        let sys = default_system(4096);
        for t in [0.0, 1.0, 6.5] {
            let psi = sys.psi(t).unwrap();
            let b = sys.bloch_fields(t).unwrap();
            let dens: Vec<f64> = psi.density();
            assert_abs_diff_eq!(sys.grid.integrate(&dens).unwrap(), 1.0, epsilon = 1e-12);
            for i in 0..4096 {
                let c2 = b.chi_abs[i] * b.chi_abs[i];
                assert_abs_diff_eq!(dens[i], c2, epsilon = 1e-14 * (1.0 + c2));
                if c2 > 1e-200 {
                    let pol = (psi.psi1()[i].norm_sqr() - psi.psi2()[i].norm_sqr()) / c2;
                    assert_abs_diff_eq!(pol, b.w[i], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn singular_gauge_detected() {
        // fake a state with phi = 0 to hit the sin(phi) denominator
        let sys = default_system(64);
        let mut jet = sys.field_jet(0.0).unwrap();
        jet.phi[10] = 0.0;
        let an = sys.with_time_derivatives(TimeDerivativeMethod::Analytic);
        assert!(matches!(
            an.hamiltonian_from_jet(&jet),
            Err(Error::SingularGauge { angle: "phi", .. })
        ));
    }

    proptest! {
        #[test]
        fn logistic_derivatives_consistent(z in -40.0f64..40.0) {
            let h = 1e-4;
            let f = |z: f64| logistic(z);
            for k in 0..3 {
                let d = (-f(z + 2.0 * h)[k] + 8.0 * f(z + h)[k] - 8.0 * f(z - h)[k] + f(z - 2.0 * h)[k]) / (12.0 * h);
                prop_assert!((d - f(z)[k + 1]).abs() < 1e-9);
            }
            prop_assert!((f(z)[0] + f(-z)[0] - 1.0).abs() < 1e-15);
        }

        #[test]
        fn bloch_angles_stay_inside_open_interval(eta in 0.01f64..0.49, t in 0.0f64..10.0, x in -4.0f64..6.0) {
            let p = ModelParams::new(eta, 10.0, 40.0).unwrap();
            let s = p.front_stiffness(t);
            let w = eta + (1.0 - 2.0 * eta) * logistic(s * (x - 1.0) - (1.0 + t).ln())[0];
            let phi = -eta - (1.0 - 2.0 * eta) * logistic(s * (x - 1.0) - (1.0 + 3.0 * t).ln())[0];
            let slack = 1e-15;
            prop_assert!(w >= eta - slack && w <= 1.0 - eta + slack);
            prop_assert!(phi <= -eta + slack && phi >= -(1.0 - eta) - slack);
        }
    }
}
