//! Both sides of the energy-transfer identity for the geometric part of the
//! nuclear kinetic energy,
//!
//! ```text
//! dT_geo/dt = T1 + T2 + T3 + T4
//! T1 = -∫ I Im<Phi|dH|dPhi> |chi|^2
//! T2 = +∫ I A <Phi|dH|Phi> w
//! T3 = -1/2 ∫ I^2 d(C |chi|^2)
//! T4 = -∫ I^2 g dA w
//! ```
//!
//! with weight `w = 1` (reading A, the model form as printed) or
//! `w = |chi|^2` (reading B, the one-dimensional case of the general form).
//! The left side is a time difference of `T_geo`, the right side uses only
//! quantities at a single time, so the two are computed independently.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ef::{DecomposeOptions, EFDecomposition, TwoComponentWavefunction};
use crate::error::{Error, Result};
use crate::grid::{DerivativeMethod, Grid1D};
use crate::model::{Hamiltonian, ModelParams, ModelSystem, TimeDerivativeMethod};

/// A time-dependent two-component state together with the Hamiltonian that
/// generates it.
pub trait Dynamics: Sync {
    fn grid(&self) -> &Grid1D;
    fn inertia(&self) -> f64;
    fn wavefunction(&self, t: f64) -> Result<TwoComponentWavefunction>;
    fn hamiltonian(&self, t: f64) -> Result<Hamiltonian>;
    /// Earliest time at which the state may be evaluated.
    fn earliest_time(&self) -> f64 {
        f64::NEG_INFINITY
    }
}

impl Dynamics for ModelSystem {
    fn grid(&self) -> &Grid1D {
        &self.grid
    }

    fn inertia(&self) -> f64 {
        self.params.inertia
    }

    fn wavefunction(&self, t: f64) -> Result<TwoComponentWavefunction> {
        self.psi(t)
    }

    fn hamiltonian(&self, t: f64) -> Result<Hamiltonian> {
        ModelSystem::hamiltonian(self, t)
    }

    fn earliest_time(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reading {
    A,
    B,
}

impl fmt::Display for Reading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reading::A => write!(f, "A"),
            Reading::B => write!(f, "B"),
        }
    }
}

/// Deliberate corruption of the right-hand side, to check that the harness
/// can tell a wrong identity from a right one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Mutation {
    /// Negate T1..T4.
    pub flip: [bool; 4],
    /// Drop the `|chi|^2` weight from T1.
    pub drop_t1_weight: bool,
}

impl Mutation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn flip(term: usize) -> Self {
        let mut m = Self::default();
        m.flip[term - 1] = true;
        m
    }

    pub fn is_none(&self) -> bool {
        *self == Self::default()
    }
}

impl FromStr for Mutation {
    type Err = Error;

    /// Comma-separated list of `t1`..`t4` (sign flips) and `t1-weight`;
    /// `none` or the empty string for no mutation.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = Self::default();
        for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "none" => {}
                "t1" => m.flip[0] = true,
                "t2" => m.flip[1] = true,
                "t3" => m.flip[2] = true,
                "t4" => m.flip[3] = true,
                "t1-weight" => m.drop_t1_weight = true,
                other => return Err(Error::Config(format!("unknown mutation '{other}'"))),
            }
        }
        Ok(m)
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> =
            (0..4).filter(|&k| self.flip[k]).map(|k| format!("t{}", k + 1)).collect();
        if self.drop_t1_weight {
            parts.push("t1-weight".into());
        }
        if parts.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", parts.join(","))
        }
    }
}

/// Right-hand-side terms at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhsTerms {
    pub t1: f64,
    pub t2_a: f64,
    pub t2_b: f64,
    pub t3: f64,
    pub t4_a: f64,
    pub t4_b: f64,
}

impl RhsTerms {
    pub fn total(&self, reading: Reading) -> f64 {
        match reading {
            Reading::A => self.t1 + self.t2_a + self.t3 + self.t4_a,
            Reading::B => self.t1 + self.t2_b + self.t3 + self.t4_b,
        }
    }

    fn mutated(mut self, m: &Mutation) -> Self {
        if m.flip[0] {
            self.t1 = -self.t1;
        }
        if m.flip[1] {
            self.t2_a = -self.t2_a;
            self.t2_b = -self.t2_b;
        }
        if m.flip[2] {
            self.t3 = -self.t3;
        }
        if m.flip[3] {
            self.t4_a = -self.t4_a;
            self.t4_b = -self.t4_b;
        }
        self
    }
}

/// The one-dimensional specialization of the general identity, evaluated
/// from `(P - A) Phi` and the current `J` instead of the model-form terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralFormTerms {
    /// `-∫ |chi|^2 I Re<Phi|dH|(P - A)Phi>`.
    pub force: f64,
    /// Berry-curvature term; zero in one dimension.
    pub curvature: f64,
    /// `-∫ |chi|^2 I g d(J/|chi|^2)`.
    pub strain: f64,
}

impl GeneralFormTerms {
    pub fn total(&self) -> f64 {
        self.force + self.curvature + self.strain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentityConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    /// Step of the time difference giving the left-hand side.
    pub dt: f64,
    /// Pass threshold on `max_t |lhs - rhs| / max_t |lhs|`.
    pub tolerance: f64,
    pub decompose: DecomposeOptions,
    pub mutation: Mutation,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 10.0,
            samples: 101,
            dt: 1e-4,
            tolerance: 1e-3,
            decompose: DecomposeOptions::default(),
            mutation: Mutation::none(),
        }
    }
}

impl IdentityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || !(self.t_end > self.t_start) {
            return Err(Error::Config(format!(
                "time range [{}, {}] with {} samples needs at least two distinct times",
                self.t_start, self.t_end, self.samples
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance = {} must be positive", self.tolerance)));
        }
        self.decompose.validate()
    }

    pub fn times(&self) -> Vec<f64> {
        let span = self.t_end - self.t_start;
        (0..self.samples)
            .map(|k| self.t_start + span * k as f64 / (self.samples - 1) as f64)
            .collect()
    }
}

/// Outcome of verifying one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub times: Vec<f64>,
    pub t_geo: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs_terms: Vec<RhsTerms>,
    pub rhs_a: Vec<f64>,
    pub rhs_b: Vec<f64>,
    pub residual_a: Vec<f64>,
    pub residual_b: Vec<f64>,
    /// `max_t |lhs - rhs| / max_t |lhs|`.
    pub relative_residual_a: f64,
    pub relative_residual_b: f64,
    pub max_abs_t3: f64,
    /// Largest deviation of the general-form evaluator from reading B, relative
    /// to `max_t |lhs|`.
    pub general_form_deviation: f64,
    pub winner: Reading,
    pub tolerance: f64,
    pub passed: bool,
    pub mutation: Mutation,
    pub config: IdentityConfig,
}

impl IdentityReport {
    pub fn relative_residual(&self, reading: Reading) -> f64 {
        match reading {
            Reading::A => self.relative_residual_a,
            Reading::B => self.relative_residual_b,
        }
    }

    pub fn best_residual(&self) -> f64 {
        self.relative_residual(self.winner)
    }
}

/// Five-point derivative of a uniformly sampled series: fourth-order central
/// in the interior, fourth-order one-sided at the two points next to each end.
pub fn lhs_rate(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 5 {
        return Err(Error::Config(format!("time difference needs at least 5 samples, got {n}")));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt = {dt} must be positive")));
    }
    let f = series;
    let h12 = 12.0 * dt;
    Ok((0..n)
        .map(|i| match i {
            0 => (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / h12,
            1 => (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / h12,
            _ if i == n - 2 => {
                (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) / h12
            }
            _ if i == n - 1 => {
                (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5])
                    / h12
            }
            _ => (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / h12,
        })
        .collect())
}

/// `T_geo(t)` for each time.
pub fn t_geo_series(dynamics: &dyn Dynamics, times: &[f64], options: DecomposeOptions) -> Result<Vec<f64>> {
    times
        .par_iter()
        .map(|&t| t_geo(dynamics, t, options))
        .collect()
}

fn t_geo(dynamics: &dyn Dynamics, t: f64, options: DecomposeOptions) -> Result<f64> {
    let psi = dynamics.wavefunction(t)?;
    let dec = EFDecomposition::new(&psi, options)?;
    Ok(dec.energies(dynamics.inertia())?.geometric)
}

/// `dT_geo/dt` at `t` from a local five-point stencil, forward-sided when
/// the backward points would precede the earliest admissible time.
fn local_rate(dynamics: &dyn Dynamics, t: f64, dt: f64, options: DecomposeOptions) -> Result<(f64, f64)> {
    let central = t - 2.0 * dt >= dynamics.earliest_time();
    let (offsets, index) = if central { ([-2.0, -1.0, 0.0, 1.0, 2.0], 2) } else { ([0.0, 1.0, 2.0, 3.0, 4.0], 0) };
    let series = offsets
        .iter()
        .map(|k| t_geo(dynamics, t + k * dt, options))
        .collect::<Result<Vec<_>>>()?;
    Ok((series[index], lhs_rate(&series, dt)?[index]))
}

/// `(dH11, dH12, dH22)` on the decomposition's support window.
fn hamiltonian_gradient(dec: &EFDecomposition, h: &Hamiltonian) -> Result<[Vec<f64>; 3]> {
    let d0 = dec.derivative_on_support(&h.h0)?;
    let d1 = dec.derivative_on_support(&h.h1)?;
    let d3 = dec.derivative_on_support(&h.h3)?;
    let upper = d0.iter().zip(&d3).map(|(a, b)| a + b).collect();
    let lower = d0.iter().zip(&d3).map(|(a, b)| a - b).collect();
    Ok([upper, d1, lower])
}

struct Evaluation {
    terms: RhsTerms,
    general: GeneralFormTerms,
}

fn evaluate(dynamics: &dyn Dynamics, t: f64, options: DecomposeOptions, mutation: &Mutation) -> Result<Evaluation> {
    let psi = dynamics.wavefunction(t)?;
    let dec = EFDecomposition::new(&psi, options)?;
    let h = dynamics.hamiltonian(t)?;
    let inertia = dynamics.inertia();
    let dh = hamiltonian_gradient(&dec, &h)?;
    let m = (&dh[0][..], &dh[1][..], &dh[2][..]);
    let rho = dec.density();
    let (a, a_x, g) = (dec.connection(), dec.connection_gradient(), dec.metric());
    let (c, c_x, dln) = (dec.tensor_c(), dec.tensor_c_gradient(), dec.log_density_gradient());
    let dphi = dec.conditional_derivative(1);
    let phi = dec.conditional();
    let chi1 = dec.covariant_derivative();

    let current = psi.current(inertia, options.method)?;
    let dcurrent = dec.grid().derivative_real(&current, 1, options.method)?;

    let n = rho.len();
    let mut f = [(); 8].map(|_| vec![0.0; n]);
    for i in 0..n {
        if !dec.mask()[i] {
            continue;
        }
        let force_grad = dec.sandwich(m, dphi, i).im;
        let force = dec.sandwich(m, phi, i).re;
        let weight_t1 = if mutation.drop_t1_weight { 1.0 } else { rho[i] };
        f[0][i] = -inertia * force_grad * weight_t1;
        f[1][i] = inertia * a[i] * force;
        f[2][i] = inertia * a[i] * force * rho[i];
        // d(C rho) = rho (C' + C d ln rho)
        f[3][i] = -0.5 * inertia * inertia * rho[i] * (c_x[i] + c[i] * dln[i]);
        f[4][i] = -inertia * inertia * g[i] * a_x[i];
        f[5][i] = f[4][i] * rho[i];
        // general form: rho d(J/rho) = dJ - J d ln rho
        f[6][i] = -rho[i] * inertia * dec.sandwich(m, chi1, i).re;
        f[7][i] = -inertia * g[i] * (dcurrent[i] - current[i] * dln[i]);
    }
    let int = |k: usize| dec.integrate(&f[k]);
    let terms = RhsTerms {
        t1: int(0)?,
        t2_a: int(1)?,
        t2_b: int(2)?,
        t3: int(3)?,
        t4_a: int(4)?,
        t4_b: int(5)?,
    }
    .mutated(mutation);
    let general = GeneralFormTerms {
        force: int(6)?,
        // B vanishes identically for a single nuclear coordinate
        curvature: 0.0,
        strain: int(7)?,
    };
    Ok(Evaluation { terms, general })
}

/// Right-hand-side terms at a single time.
pub fn rhs_terms(dynamics: &dyn Dynamics, t: f64, options: DecomposeOptions) -> Result<RhsTerms> {
    Ok(evaluate(dynamics, t, options, &Mutation::none())?.terms)
}

/// General-form right-hand side at a single time.
pub fn general_form_terms(dynamics: &dyn Dynamics, t: f64, options: DecomposeOptions) -> Result<GeneralFormTerms> {
    Ok(evaluate(dynamics, t, options, &Mutation::none())?.general)
}

fn relative(residual: &[f64], lhs: &[f64]) -> f64 {
    let scale = lhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = residual.iter().fold(0.0f64, |m, v| m.max(*v));
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Evaluates both sides over the configured times. Returns the report on
/// success and `VerificationFailure` (carrying the report) when the better
/// reading exceeds the tolerance.
pub fn verify(dynamics: &dyn Dynamics, config: &IdentityConfig) -> Result<IdentityReport> {
    let report = evaluate_identity(dynamics, config)?;
    if report.passed {
        Ok(report)
    } else {
        Err(Error::VerificationFailure {
            residual: report.best_residual(),
            tolerance: report.tolerance,
            report: Box::new(report),
        })
    }
}

/// Like [`verify`] but always returns the report.
pub fn evaluate_identity(dynamics: &dyn Dynamics, config: &IdentityConfig) -> Result<IdentityReport> {
    config.validate()?;
    let times = config.times();
    let rows = times
        .par_iter()
        .map(|&t| {
            let (t_geo, lhs) = local_rate(dynamics, t, config.dt, config.decompose)?;
            let ev = evaluate(dynamics, t, config.decompose, &config.mutation)?;
            Ok((t_geo, lhs, ev))
        })
        .collect::<Result<Vec<_>>>()?;

    let t_geo: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let lhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let rhs_terms: Vec<RhsTerms> = rows.iter().map(|r| r.2.terms).collect();
    let rhs_a: Vec<f64> = rhs_terms.iter().map(|r| r.total(Reading::A)).collect();
    let rhs_b: Vec<f64> = rhs_terms.iter().map(|r| r.total(Reading::B)).collect();
    let residual_a: Vec<f64> = lhs.iter().zip(&rhs_a).map(|(l, r)| (l - r).abs()).collect();
    let residual_b: Vec<f64> = lhs.iter().zip(&rhs_b).map(|(l, r)| (l - r).abs()).collect();
    let relative_residual_a = relative(&residual_a, &lhs);
    let relative_residual_b = relative(&residual_b, &lhs);
    let max_abs_t3 = rhs_terms.iter().fold(0.0f64, |m, r| m.max(r.t3.abs()));
    // compare the unmutated reading-B total without T3, which the general form
    // absorbs as a vanishing divergence
    let unmutated: Vec<RhsTerms> = rows
        .iter()
        .map(|r| r.2.terms.mutated(&config.mutation))
        .collect();
    let deviations: Vec<f64> = rows
        .iter()
        .zip(&unmutated)
        .map(|(r, u)| (r.2.general.total() - (u.t1 + u.t2_b + u.t4_b)).abs())
        .collect();
    let general_form_deviation = relative(&deviations, &lhs);
    let winner = if relative_residual_b <= relative_residual_a { Reading::B } else { Reading::A };
    let best = relative_residual_a.min(relative_residual_b);
    Ok(IdentityReport {
        times,
        t_geo,
        lhs,
        rhs_terms,
        rhs_a,
        rhs_b,
        residual_a,
        residual_b,
        relative_residual_a,
        relative_residual_b,
        max_abs_t3,
        general_form_deviation,
        winner,
        tolerance: config.tolerance,
        passed: best.is_finite() && best <= config.tolerance,
        mutation: config.mutation,
        config: *config,
    })
}

/// Pointwise comparison of `dE_geo/dt` with its local right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub t: f64,
    pub max_residual: f64,
    pub max_rate: f64,
    pub relative_residual: f64,
}

/// Compares the time derivative of `E_geo = I g / 2` (five-point difference
/// with step `dt`) against
/// `-I Re<Phi|dH|(P-A)Phi> - I^2 C'/2 - I^2 C dln|chi|^2/2 - (J/|chi|^2) dE_geo - I g d(J/|chi|^2)`
/// on the points that lie in the mask at all five times.
pub fn pointwise_egeo_check(
    dynamics: &dyn Dynamics,
    t: f64,
    dt: f64,
    options: DecomposeOptions,
) -> Result<PointwiseReport> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt = {dt} must be positive")));
    }
    let inertia = dynamics.inertia();
    let decs = [-2.0, -1.0, 1.0, 2.0]
        .par_iter()
        .map(|k| EFDecomposition::new(&dynamics.wavefunction(t + k * dt)?, options))
        .collect::<Result<Vec<_>>>()?;
    let dec = EFDecomposition::new(&dynamics.wavefunction(t)?, options)?;
    let h = dynamics.hamiltonian(t)?;
    let dh = hamiltonian_gradient(&dec, &h)?;
    let m = (&dh[0][..], &dh[1][..], &dh[2][..]);
    let chi1 = dec.covariant_derivative();
    let (a, a_x, g, g_x) = (dec.connection(), dec.connection_gradient(), dec.metric(), dec.metric_gradient());
    let (c, c_x, dln) = (dec.tensor_c(), dec.tensor_c_gradient(), dec.log_density_gradient());

    let mut max_residual = 0.0f64;
    let mut max_rate = 0.0f64;
    for i in 0..g.len() {
        if !(dec.mask()[i] && decs.iter().all(|d| d.mask()[i])) {
            continue;
        }
        let e = |d: &EFDecomposition| 0.5 * inertia * d.metric()[i];
        let rate = (-e(&decs[3]) + 8.0 * e(&decs[2]) - 8.0 * e(&decs[1]) + e(&decs[0])) / (12.0 * dt);
        // J/|chi|^2 = I A and dE_geo = I g'/2
        let rhs = -inertia * dec.sandwich(m, chi1, i).re
            - 0.5 * inertia * inertia * c_x[i]
            - 0.5 * inertia * inertia * c[i] * dln[i]
            - inertia * a[i] * 0.5 * inertia * g_x[i]
            - inertia * inertia * g[i] * a_x[i];
        max_residual = max_residual.max((rate - rhs).abs());
        max_rate = max_rate.max(rate.abs());
    }
    Ok(PointwiseReport {
        t,
        max_residual,
        max_rate,
        relative_residual: if max_rate > 0.0 { max_residual / max_rate } else { max_residual },
    })
}

/// Residuals of the identity at one grid/step level and at a doubled one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub n: [usize; 2],
    pub dt: [f64; 2],
    pub method: DerivativeMethod,
    pub relative_residual_a: [f64; 2],
    pub relative_residual_b: [f64; 2],
    /// Coarse over fine residual.
    pub ratio_a: f64,
    pub ratio_b: f64,
    /// The reading whose residual is both the smaller on the fine level and
    /// decreasing by at least `min_ratio`, if any.
    pub converging: Option<Reading>,
    pub min_ratio: f64,
}

/// Runs the model identity at `(n, dt)` and `(2n, dt/2)` with the given
/// derivative method. Intended for fourth-order differences, where the
/// discretization error is visible above roundoff.
pub fn refinement_study(
    params: ModelParams,
    x_range: (f64, f64),
    n: usize,
    config: &IdentityConfig,
    method: DerivativeMethod,
    min_ratio: f64,
) -> Result<RefinementReport> {
    let run = |n: usize, dt: f64| -> Result<IdentityReport> {
        let grid = Grid1D::new(x_range.0, x_range.1, n)?;
        let sys = ModelSystem::new(params, grid)?.with_time_derivatives(TimeDerivativeMethod::Analytic);
        let cfg = IdentityConfig {
            dt,
            decompose: DecomposeOptions { method, ..config.decompose },
            ..*config
        };
        evaluate_identity(&sys, &cfg)
    };
    let coarse = run(n, config.dt)?;
    let fine = run(2 * n, 0.5 * config.dt)?;
    let ratio_a = coarse.relative_residual_a / fine.relative_residual_a;
    let ratio_b = coarse.relative_residual_b / fine.relative_residual_b;
    let best = if fine.relative_residual_b <= fine.relative_residual_a { Reading::B } else { Reading::A };
    let best_ratio = if best == Reading::B { ratio_b } else { ratio_a };
    Ok(RefinementReport {
        n: [n, 2 * n],
        dt: [config.dt, 0.5 * config.dt],
        method,
        relative_residual_a: [coarse.relative_residual_a, fine.relative_residual_a],
        relative_residual_b: [coarse.relative_residual_b, fine.relative_residual_b],
        ratio_a,
        ratio_b,
        converging: (best_ratio >= min_ratio).then_some(best),
        min_ratio,
    })
}
