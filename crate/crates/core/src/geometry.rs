//! Rank-3 geometric tensors of a two-level conditional state on a
//! `d`-dimensional parameter grid (`d <= 3`), and checks of the identities
//! relating them to the connection, curvature and metric.
//!
//! The state is `Phi = e^{ia} (e^{-i phi/2} cos(theta/2), e^{i phi/2} sin(theta/2))`
//! with `w = cos(theta)`. All derivatives are central 4th-order stencils
//! (optionally Richardson-extrapolated to 6th order). Tensors follow their
//! definitions literally, e.g. `C + iD = <chi_mu|(P_nu - A_nu) chi_tau>` with
//! `chi_tau = (P_tau - A_tau) Phi` differentiated again as a field.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Smallest number of points per axis.
pub const MIN_AXIS_POINTS: usize = 32;
/// Largest admissible `|w|`.
pub const MAX_POLARIZATION: f64 = 1.0 - 1e-3;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Periodic,
    /// Non-periodic axis; stencils turn one-sided at the ends.
    ZeroFlux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    /// 5-point central difference.
    Fourth,
    /// `(16 D_h - D_2h) / 15` of the 5-point stencil.
    #[default]
    Richardson,
}

impl std::str::FromStr for Stencil {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourth" => Ok(Self::Fourth),
            "richardson" => Ok(Self::Richardson),
            other => Err(Error::Config(format!("unknown stencil '{other}'"))),
        }
    }
}

/// Uniform grid over a box in parameter space. Point `i` on axis `mu` sits at
/// `origin[mu] + i * length[mu] / n` (periodic) or `origin[mu] + i * length[mu] / (n - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    origin: Vec<f64>,
    length: Vec<f64>,
    shape: Vec<usize>,
    boundary: Vec<Boundary>,
}

impl ParamGrid {
    pub fn new(origin: Vec<f64>, length: Vec<f64>, shape: Vec<usize>, boundary: Vec<Boundary>) -> Result<Self> {
        let d = shape.len();
        if !(1..=3).contains(&d) {
            return Err(Error::Config(format!("parameter dimension {d} not in 1..=3")));
        }
        if origin.len() != d || length.len() != d || boundary.len() != d {
            return Err(Error::Config("origin, length, shape and boundary must have equal lengths".into()));
        }
        if let Some(n) = shape.iter().find(|&&n| n < MIN_AXIS_POINTS) {
            return Err(Error::Config(format!("{n} points on an axis; at least {MIN_AXIS_POINTS} required")));
        }
        if length.iter().chain(&origin).any(|v| !v.is_finite()) || length.iter().any(|&l| l <= 0.0) {
            return Err(Error::Config("axis lengths must be positive and finite".into()));
        }
        Ok(Self { origin, length, shape, boundary })
    }

    /// `[0, 2 pi)^d` with `n` points per axis.
    pub fn periodic(d: usize, n: usize) -> Result<Self> {
        Self::new(vec![0.0; d], vec![2.0 * PI; d], vec![n; d], vec![Boundary::Periodic; d])
    }

    /// Same box and boundaries with `n` points per axis.
    pub fn with_points(&self, n: usize) -> Result<Self> {
        Self::new(self.origin.clone(), self.length.clone(), vec![n; self.dim()], self.boundary.clone())
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn boundary(&self) -> &[Boundary] {
        &self.boundary
    }

    pub fn length(&self) -> &[f64] {
        &self.length
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, mu: usize) -> f64 {
        match self.boundary[mu] {
            Boundary::Periodic => self.length[mu] / self.shape[mu] as f64,
            Boundary::ZeroFlux => self.length[mu] / (self.shape[mu] - 1) as f64,
        }
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|mu| self.spacing(mu)).product()
    }

    fn stride(&self, mu: usize) -> usize {
        self.shape[mu + 1..].iter().product()
    }

    /// Flat (row-major) index of a multi-index.
    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().enumerate().map(|(mu, &i)| i * self.stride(mu)).sum()
    }

    /// Coordinates of the flat index `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|mu| {
                let i = (idx / self.stride(mu)) % self.shape[mu];
                self.origin[mu] + i as f64 * self.spacing(mu)
            })
            .collect()
    }

    /// Derivative along axis `mu` of a real or complex field.
    pub fn derivative<T>(&self, f: &[T], mu: usize, stencil: Stencil) -> Vec<T>
    where
        T: Copy + Send + Sync + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
    {
        let n = self.shape[mu] as isize;
        let stride = self.stride(mu);
        let h = self.spacing(mu);
        let periodic = self.boundary[mu] == Boundary::Periodic;
        (0..f.len())
            .into_par_iter()
            .map(|idx| {
                let i = ((idx / stride) % n as usize) as isize;
                let base = idx - i as usize * stride;
                let at = |j: isize| f[base + j.rem_euclid(n) as usize * stride];
                let central = |s: isize| (at(i - 2 * s) - at(i + 2 * s) + (at(i + s) - at(i - s)) * 8.0) * (1.0 / (12.0 * s as f64 * h));
                if periodic || (i >= 4 && i < n - 4) {
                    match stencil {
                        Stencil::Fourth => central(1),
                        Stencil::Richardson => (central(1) * 16.0 - central(2)) * (1.0 / 15.0),
                    }
                } else if i >= 2 && i < n - 2 {
                    central(1)
                } else {
                    // one-sided 5-point stencils, mirrored at the upper end
                    let (sign, k, o) = if i < 2 { (1.0, 1, i) } else { (-1.0, -1, n - 1 - i) };
                    let p = |m: isize| at(i + k * (m - o));
                    let v = if o == 0 {
                        p(1) * 48.0 - p(0) * 25.0 - p(2) * 36.0 + p(3) * 16.0 - p(4) * 3.0
                    } else {
                        p(2) * 18.0 - p(0) * 3.0 - p(1) * 10.0 - p(3) * 6.0 + p(4)
                    };
                    v * (sign / (12.0 * h))
                }
            })
            .collect()
    }
}

/// `amplitude * cos(k . Q + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub amplitude: f64,
    pub wavevector: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
}

/// `constant + linear . Q + sum of modes`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldRecipe {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub modes: Vec<Mode>,
}

impl FieldRecipe {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Default::default() }
    }

    pub fn mode(mut self, amplitude: f64, wavevector: &[f64], phase: f64) -> Self {
        self.modes.push(Mode { amplitude, wavevector: wavevector.to_vec(), phase });
        self
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(q).map(|(c, q)| c * q).sum();
        let modes: f64 = self
            .modes
            .iter()
            .map(|m| m.amplitude * (m.wavevector.iter().zip(q).map(|(k, q)| k * q).sum::<f64>() + m.phase).cos())
            .sum();
        self.constant + lin + modes
    }

    /// Checks that the field is periodic on periodic axes. A linear term
    /// must wind by a multiple of `winding` across the box.
    fn check(&self, name: &str, grid: &ParamGrid, winding: Option<f64>) -> Result<()> {
        let d = grid.dim();
        if self.linear.len() > d || self.modes.iter().any(|m| m.wavevector.len() > d) {
            return Err(Error::Recipe(format!("{name}: more coefficients than parameter dimensions")));
        }
        let values = std::iter::once(self.constant)
            .chain(self.linear.iter().copied())
            .chain(self.modes.iter().flat_map(|m| m.wavevector.iter().copied().chain([m.amplitude, m.phase])));
        ensure_finite(name, values).map_err(|e| Error::Recipe(e.to_string()))?;
        let integral = |x: f64| (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0);
        for mu in (0..d).filter(|&mu| grid.boundary[mu] == Boundary::Periodic) {
            let len = grid.length[mu];
            for m in &self.modes {
                let k = m.wavevector.get(mu).copied().unwrap_or(0.0);
                if !integral(k * len / (2.0 * PI)) {
                    return Err(Error::Recipe(format!("{name}: wavevector {k} is not periodic on axis {mu}")));
                }
            }
            let c = self.linear.get(mu).copied().unwrap_or(0.0);
            match winding {
                _ if c == 0.0 => {}
                Some(wind) if integral(c * len / wind) => {}
                _ => {
                    return Err(Error::Recipe(format!(
                        "{name}: linear term {c} on periodic axis {mu} breaks periodicity of Phi"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Synthetic family: `w = cos(theta)`, relative phase `phi`, global phase `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyRecipe {
    pub name: String,
    pub w: FieldRecipe,
    pub phi: FieldRecipe,
    #[serde(default)]
    pub a: FieldRecipe,
}

impl FamilyRecipe {
    pub const PRESETS: [&'static str; 4] = ["smooth", "pure-gauge", "constant", "linear-phase"];

    /// Built-in families on `[0, 2 pi)^d`.
    pub fn preset(name: &str, d: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::Config(format!("parameter dimension {d} not in 1..=3")));
        }
        let e = |mu: usize| -> Vec<f64> { (0..d).map(|nu| if nu == mu { 1.0 } else { 0.0 }).collect() };
        let sum = |a: usize, b: usize, s: f64| -> Vec<f64> {
            (0..d).map(|nu| if nu == a { 1.0 } else if nu == b { s } else { 0.0 }).collect()
        };
        let (w, phi, a) = match name {
            "smooth" => {
                let mut w = FieldRecipe::default();
                let mut a = FieldRecipe::default();
                if d == 1 {
                    w = w.mode(0.3, &e(0), -FRAC_PI_2);
                    a = a.mode(0.3, &e(0), 0.0);
                } else {
                    // 0.3 sin(Q1) cos(Q2)
                    w = w.mode(0.15, &sum(0, 1, 1.0), -FRAC_PI_2).mode(0.15, &sum(0, 1, -1.0), -FRAC_PI_2);
                    a = a.mode(0.3, &sum(0, 1, -1.0), 0.0);
                }
                if d == 3 {
                    w = w.mode(0.2, &e(2), 0.0);
                    a = a.mode(0.2, &sum(1, 2, 1.0), 0.0);
                }
                let phi = (0..d).fold(FieldRecipe::default(), |f, mu| f.mode(0.6, &e(mu), mu as f64 * FRAC_PI_2));
                (w, phi, a)
            }
            "pure-gauge" => {
                let mut a = FieldRecipe::default().mode(0.3, &e(0), 0.0);
                if d > 1 {
                    a = a.mode(0.2, &sum(0, 1, 1.0), -FRAC_PI_2);
                }
                (FieldRecipe::constant(0.2), FieldRecipe::constant(0.4), a)
            }
            "constant" => (FieldRecipe::constant(0.2), FieldRecipe::constant(0.4), FieldRecipe::default()),
            "linear-phase" => {
                // phi = 2 Q1 winds by 4 pi across the box
                let phi = FieldRecipe { linear: e(0).iter().map(|v| 2.0 * v).collect(), ..Default::default() };
                (FieldRecipe::constant(0.3), phi, FieldRecipe::default())
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown recipe '{other}' (known: {})",
                    Self::PRESETS.join(", ")
                )))
            }
        };
        Ok(Self { name: name.to_string(), w, phi, a })
    }
}

/// Sampled family on a parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelFamily {
    grid: ParamGrid,
    w: Vec<f64>,
    phi: Vec<f64>,
    a: Vec<f64>,
}

impl TwoLevelFamily {
    pub fn build(recipe: &FamilyRecipe, grid: &ParamGrid) -> Result<Self> {
        recipe.w.check("w", grid, None)?;
        recipe.phi.check("phi", grid, Some(4.0 * PI))?;
        recipe.a.check("a", grid, Some(2.0 * PI))?;
        let sample = |f: &FieldRecipe| (0..grid.len()).map(|i| f.eval(&grid.point(i))).collect::<Vec<_>>();
        Self::from_fields(grid.clone(), sample(&recipe.w), sample(&recipe.phi), sample(&recipe.a))
    }

    pub fn from_fields(grid: ParamGrid, w: Vec<f64>, phi: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if w.len() != n || phi.len() != n || a.len() != n {
            return Err(Error::Recipe(format!("field lengths do not match the {n} grid points")));
        }
        ensure_finite("family", w.iter().chain(&phi).chain(&a).copied()).map_err(|e| Error::Recipe(e.to_string()))?;
        if let Some((i, w)) = w.iter().enumerate().find(|(_, w)| w.abs() > MAX_POLARIZATION) {
            return Err(Error::Recipe(format!(
                "|w| = {} exceeds {MAX_POLARIZATION} at {:?}",
                w.abs(),
                grid.point(i)
            )));
        }
        Ok(Self { grid, w, phi, a })
    }

    pub fn grid(&self) -> &ParamGrid {
        &self.grid
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Adds `theta` to the global phase.
    pub fn regauged(&self, theta: &[f64]) -> Result<Self> {
        let a = self.a.iter().zip(theta).map(|(a, t)| a + t).collect();
        Self::from_fields(self.grid.clone(), self.w.clone(), self.phi.clone(), a)
    }

    /// The two spinor components of `Phi`.
    pub fn state(&self) -> [Vec<Complex64>; 2] {
        let comp = |sign: f64| -> Vec<Complex64> {
            (0..self.grid.len())
                .map(|i| {
                    let amp = (0.5 * (1.0 + sign * self.w[i])).sqrt();
                    Complex64::from_polar(amp, self.a[i] - sign * 0.5 * self.phi[i])
                })
                .collect()
        };
        [comp(1.0), comp(-1.0)]
    }
}

type Spinor = [Vec<Complex64>; 2];

fn inner(u: &Spinor, v: &Spinor) -> Vec<Complex64> {
    (0..u[0].len()).map(|i| u[0][i].conj() * v[0][i] + u[1][i].conj() * v[1][i]).collect()
}

/// Connection, curvature, metric, `C`, `D` and the Christoffel symbols of
/// the first kind `Gamma_{mu nu tau} = (d_tau g_{mu nu} + d_nu g_{mu tau} - d_mu g_{nu tau}) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFieldSet {
    grid: ParamGrid,
    stencil: Stencil,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
}

impl TensorFieldSet {
    fn i2(&self, m: usize, n: usize) -> usize {
        m * self.grid.dim() + n
    }

    fn i3(&self, m: usize, n: usize, t: usize) -> usize {
        (m * self.grid.dim() + n) * self.grid.dim() + t
    }

    pub fn grid(&self) -> &ParamGrid {
        &self.grid
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    /// `A_mu = Im<Phi|d_mu Phi>`.
    pub fn connection(&self, mu: usize) -> &[f64] {
        &self.a[mu]
    }

    /// `B_{mu nu} = d_mu A_nu - d_nu A_mu`, evaluated as `2 Im<chi_mu|chi_nu>`.
    /// The curl of the discrete connection differs at truncation order and
    /// does not vanish for a pure gauge; [`TensorChecks::curvature_curl`]
    /// tracks the difference.
    pub fn curvature(&self, mu: usize, nu: usize) -> &[f64] {
        &self.b[self.i2(mu, nu)]
    }

    pub fn metric(&self, mu: usize, nu: usize) -> &[f64] {
        &self.g[self.i2(mu, nu)]
    }

    pub fn tensor_c(&self, mu: usize, nu: usize, tau: usize) -> &[f64] {
        &self.c[self.i3(mu, nu, tau)]
    }

    pub fn tensor_d(&self, mu: usize, nu: usize, tau: usize) -> &[f64] {
        &self.d[self.i3(mu, nu, tau)]
    }

    pub fn christoffel(&self, mu: usize, nu: usize, tau: usize) -> &[f64] {
        &self.gamma[self.i3(mu, nu, tau)]
    }

    /// Smallest eigenvalue of `g` over the grid.
    pub fn min_metric_eigenvalue(&self) -> f64 {
        let d = self.grid.dim();
        (0..self.grid.len())
            .map(|i| {
                let m: Vec<f64> = (0..d * d).map(|k| self.g[k][i]).collect();
                min_symmetric_eigenvalue(&m, d)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Smallest eigenvalue of a symmetric `d x d` matrix (`d <= 3`, row-major),
/// by cyclic Jacobi rotations. Closed-form cubic roots lose about half the
/// digits when the metric is rank-deficient, which it is for `d = 3`.
fn min_symmetric_eigenvalue(m: &[f64], d: usize) -> f64 {
    let mut a = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            a[i][j] = 0.5 * (m[i * d + j] + m[j * d + i]);
        }
    }
    for _ in 0..50 {
        let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off <= 1e-300 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
}

/// Derivatives of `Phi` and of the connection, shared by the tensor
/// construction and the decomposition checks.
struct Jet {
    phi: Spinor,
    dphi: Vec<Spinor>,
    a: Vec<Vec<f64>>,
    /// `da[tau][nu] = d_nu A_tau`.
    da: Vec<Vec<Vec<f64>>>,
}

fn spinor_derivative(grid: &ParamGrid, s: &Spinor, mu: usize, stencil: Stencil) -> Spinor {
    [grid.derivative(&s[0], mu, stencil), grid.derivative(&s[1], mu, stencil)]
}

fn jet(family: &TwoLevelFamily, stencil: Stencil) -> Jet {
    let grid = &family.grid;
    let d = grid.dim();
    let phi = family.state();
    let dphi: Vec<Spinor> = (0..d).map(|mu| spinor_derivative(grid, &phi, mu, stencil)).collect();
    let a: Vec<Vec<f64>> = dphi.iter().map(|dp| inner(&phi, dp).iter().map(|z| z.im).collect()).collect();
    let da = a
        .iter()
        .map(|a_tau| (0..d).map(|nu| grid.derivative(a_tau, nu, stencil)).collect())
        .collect();
    Jet { phi, dphi, a, da }
}

/// Evaluates all tensors of a family.
pub fn tensors(family: &TwoLevelFamily, stencil: Stencil) -> TensorFieldSet {
    let grid = family.grid.clone();
    let d = grid.dim();
    let n = grid.len();
    let jet = jet(family, stencil);
    // chi_mu = (P_mu - A_mu) Phi = -i d_mu Phi - A_mu Phi
    let chi: Vec<Spinor> = (0..d)
        .map(|mu| {
            let make = |c: usize| -> Vec<Complex64> {
                (0..n).map(|i| -I * jet.dphi[mu][c][i] - jet.a[mu][i] * jet.phi[c][i]).collect()
            };
            [make(0), make(1)]
        })
        .collect();
    let mut b = vec![vec![0.0; n]; d * d];
    let mut g = vec![vec![0.0; n]; d * d];
    for m in 0..d {
        for nu in 0..d {
            let q = inner(&chi[m], &chi[nu]);
            g[m * d + nu] = q.iter().map(|z| z.re).collect();
            b[m * d + nu] = q.iter().map(|z| 2.0 * z.im).collect();
        }
    }
    let mut c = vec![Vec::new(); d * d * d];
    let mut dd = vec![Vec::new(); d * d * d];
    for nu in 0..d {
        for tau in 0..d {
            // (P_nu - A_nu) chi_tau, composed literally
            let dchi = spinor_derivative(&grid, &chi[tau], nu, stencil);
            let outer: Spinor = [0, 1].map(|k| (0..n).map(|i| -I * dchi[k][i] - jet.a[nu][i] * chi[tau][k][i]).collect());
            for m in 0..d {
                let z = inner(&chi[m], &outer);
                c[(m * d + nu) * d + tau] = z.iter().map(|z| z.re).collect();
                dd[(m * d + nu) * d + tau] = z.iter().map(|z| z.im).collect();
            }
        }
    }
    // dg[k][s] = d_s g_k
    let dg: Vec<Vec<Vec<f64>>> = g.iter().map(|gk| (0..d).map(|s| grid.derivative(gk, s, stencil)).collect()).collect();
    let mut gamma = vec![Vec::new(); d * d * d];
    for m in 0..d {
        for nu in 0..d {
            for tau in 0..d {
                gamma[(m * d + nu) * d + tau] = (0..n)
                    .map(|i| 0.5 * (dg[m * d + nu][tau][i] + dg[m * d + tau][nu][i] - dg[nu * d + tau][m][i]))
                    .collect();
            }
        }
    }
    TensorFieldSet { grid, stencil, a: jet.a, b, g, c, d: dd, gamma }
}

/// Max and grid-L2 norm of a residual over all index tuples and points.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residual {
    pub max: f64,
    pub l2: f64,
}

impl Residual {
    fn accumulate(&mut self, values: impl Iterator<Item = f64>, cell: f64) {
        let mut sq = self.l2 * self.l2;
        for v in values {
            self.max = self.max.max(v.abs());
            sq += v * v * cell;
        }
        self.l2 = sq.sqrt();
    }
}

fn triples(d: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..d).flat_map(move |m| (0..d).flat_map(move |n| (0..d).map(move |t| (m, n, t))))
}

/// Residual of `C_{tau sigma mu} - C_{mu sigma tau} - (1/2) d_sigma B_{tau mu}`.
pub fn check_cb_identity(ts: &TensorFieldSet) -> Residual {
    let d = ts.grid.dim();
    let cell = ts.grid.cell_volume();
    let mut r = Residual::default();
    for (tau, sigma, mu) in triples(d) {
        let db = ts.grid.derivative(ts.curvature(tau, mu), sigma, ts.stencil);
        let (c1, c2) = (ts.tensor_c(tau, sigma, mu), ts.tensor_c(mu, sigma, tau));
        r.accumulate((0..ts.grid.len()).map(|i| c1[i] - c2[i] - 0.5 * db[i]), cell);
    }
    r
}

/// Residuals of the decompositions of `D` and `C` through
/// `<d_mu Phi|d_nu d_tau Phi>`, and of the real-part identity
/// `2 Re<d_mu Phi|d_nu d_tau Phi> = d_tau(g+AA)_{mu nu} + d_nu(g+AA)_{mu tau} - d_mu(g+AA)_{nu tau}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecompositionResiduals {
    pub d_decomposition: Residual,
    pub c_decomposition: Residual,
    pub real_part_identity: Residual,
}

pub fn check_decompositions(family: &TwoLevelFamily, ts: &TensorFieldSet) -> DecompositionResiduals {
    let grid = &family.grid;
    let (d, n, cell, stencil) = (grid.dim(), grid.len(), grid.cell_volume(), ts.stencil);
    let jet = jet(family, stencil);
    let a = &jet.a;
    // s[k] = g_k + A A, k = mu * d + nu
    let s: Vec<Vec<f64>> = (0..d * d)
        .map(|k| (0..n).map(|i| ts.g[k][i] + a[k / d][i] * a[k % d][i]).collect())
        .collect();
    let ds: Vec<Vec<Vec<f64>>> = s.iter().map(|sk| (0..d).map(|q| grid.derivative(sk, q, stencil)).collect()).collect();
    let mut out = DecompositionResiduals::default();
    for nu in 0..d {
        for tau in 0..d {
            let ddphi = spinor_derivative(grid, &jet.dphi[tau], nu, stencil);
            for mu in 0..d {
                let z = inner(&jet.dphi[mu], &ddphi);
                let (b_mn, b_mt) = (ts.curvature(mu, nu), ts.curvature(mu, tau));
                let g = |p: usize, q: usize| &ts.g[p * d + q];
                out.d_decomposition.accumulate(
                    (0..n).map(|i| {
                        let raw = -z[i].re - 0.5 * b_mn[i] * a[tau][i] - 0.5 * b_mt[i] * a[nu][i]
                            + 0.5 * a[mu][i] * jet.da[tau][nu][i]
                            + 0.5 * a[mu][i] * jet.da[nu][tau][i];
                        raw - ts.tensor_d(mu, nu, tau)[i]
                    }),
                    cell,
                );
                out.c_decomposition.accumulate(
                    (0..n).map(|i| {
                        let raw = z[i].im - a[mu][i] * g(nu, tau)[i] - a[nu][i] * g(mu, tau)[i] - a[tau][i] * g(mu, nu)[i]
                            - a[mu][i] * a[nu][i] * a[tau][i];
                        raw - ts.tensor_c(mu, nu, tau)[i]
                    }),
                    cell,
                );
                out.real_part_identity.accumulate(
                    (0..n).map(|i| {
                        2.0 * z[i].re - (ds[mu * d + nu][tau][i] + ds[mu * d + tau][nu][i] - ds[nu * d + tau][mu][i])
                    }),
                    cell,
                );
            }
        }
    }
    out
}

/// All residuals for one family on one grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorChecks {
    pub points_per_axis: usize,
    pub metric_symmetry: Residual,
    pub curvature_antisymmetry: Residual,
    pub c_symmetry: Residual,
    pub d_symmetry: Residual,
    pub d_plus_christoffel: Residual,
    /// `B - (d_mu A_nu - d_nu A_mu)`.
    pub curvature_curl: Residual,
    pub cb_identity: Residual,
    #[serde(flatten)]
    pub decompositions: DecompositionResiduals,
    pub min_metric_eigenvalue: f64,
}

impl TensorChecks {
    /// The identities that hold only up to discretization error, by name.
    pub fn identities(&self) -> [(&'static str, Residual); 8] {
        [
            ("d_plus_christoffel", self.d_plus_christoffel),
            ("curvature_curl", self.curvature_curl),
            ("cb_identity", self.cb_identity),
            ("d_decomposition", self.decompositions.d_decomposition),
            ("c_decomposition", self.decompositions.c_decomposition),
            ("real_part_identity", self.decompositions.real_part_identity),
            ("c_symmetry", self.c_symmetry),
            ("d_symmetry", self.d_symmetry),
        ]
    }
}

pub fn check_all(family: &TwoLevelFamily, stencil: Stencil) -> TensorChecks {
    let ts = tensors(family, stencil);
    let grid = &ts.grid;
    let (d, n, cell) = (grid.dim(), grid.len(), grid.cell_volume());
    let mut checks = TensorChecks {
        points_per_axis: grid.shape.iter().copied().min().unwrap_or(0),
        metric_symmetry: Residual::default(),
        curvature_antisymmetry: Residual::default(),
        c_symmetry: Residual::default(),
        d_symmetry: Residual::default(),
        d_plus_christoffel: Residual::default(),
        curvature_curl: Residual::default(),
        cb_identity: check_cb_identity(&ts),
        decompositions: check_decompositions(family, &ts),
        min_metric_eigenvalue: ts.min_metric_eigenvalue(),
    };
    for m in 0..d {
        for nu in 0..d {
            let (g1, g2) = (ts.metric(m, nu), ts.metric(nu, m));
            checks.metric_symmetry.accumulate((0..n).map(|i| g1[i] - g2[i]), cell);
            let (b1, b2) = (ts.curvature(m, nu), ts.curvature(nu, m));
            checks.curvature_antisymmetry.accumulate((0..n).map(|i| b1[i] + b2[i]), cell);
            let (dn_am, dm_an) = (grid.derivative(&ts.a[m], nu, ts.stencil), grid.derivative(&ts.a[nu], m, ts.stencil));
            checks.curvature_curl.accumulate((0..n).map(|i| b1[i] - (dm_an[i] - dn_am[i])), cell);
        }
    }
    for (m, nu, tau) in triples(d) {
        let (c1, c2) = (ts.tensor_c(m, nu, tau), ts.tensor_c(m, tau, nu));
        checks.c_symmetry.accumulate((0..n).map(|i| c1[i] - c2[i]), cell);
        let (d1, d2) = (ts.tensor_d(m, nu, tau), ts.tensor_d(m, tau, nu));
        checks.d_symmetry.accumulate((0..n).map(|i| d1[i] - d2[i]), cell);
        let gam = ts.christoffel(m, nu, tau);
        checks.d_plus_christoffel.accumulate((0..n).map(|i| d1[i] + gam[i]), cell);
    }
    checks
}

/// Max residual per refinement level and fitted order of one identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityConvergence {
    pub max: Vec<f64>,
    /// Least-squares slope of `-ln(max)` against `ln(points)`; `None` when
    /// every level sits at roundoff.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub recipe: String,
    pub stencil: Stencil,
    pub points: Vec<usize>,
    pub levels: Vec<TensorChecks>,
    pub identities: BTreeMap<String, IdentityConvergence>,
}

impl ConvergenceReport {
    /// Smallest fitted order over the identities that are above roundoff.
    pub fn min_order(&self) -> Option<f64> {
        self.identities.values().filter_map(|c| c.order).reduce(f64::min)
    }

    /// Largest max-residual of any identity on the coarsest level.
    pub fn coarse_max_residual(&self) -> f64 {
        self.identities.values().map(|c| c.max[0]).fold(0.0, f64::max)
    }
}

/// Residuals below this are treated as exact when fitting orders.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Evaluates the checks on `grid` refined to each entry of `points`.
pub fn convergence_study(recipe: &FamilyRecipe, grid: &ParamGrid, points: &[usize], stencil: Stencil) -> Result<ConvergenceReport> {
    if points.is_empty() {
        return Err(Error::Config("convergence study needs at least one grid".into()));
    }
    let levels = points
        .iter()
        .map(|&n| Ok(check_all(&TwoLevelFamily::build(recipe, &grid.with_points(n)?)?, stencil)))
        .collect::<Result<Vec<_>>>()?;
    let mut identities = BTreeMap::new();
    for (k, (name, _)) in levels[0].identities().iter().enumerate() {
        let max: Vec<f64> = levels.iter().map(|l| l.identities()[k].1.max).collect();
        let order = (points.len() > 1 && max.iter().any(|&m| m > ROUNDOFF_FLOOR)).then(|| {
            let xs: Vec<f64> = points.iter().map(|&n| (n as f64).ln()).collect();
            let ys: Vec<f64> = max.iter().map(|m| -m.max(f64::MIN_POSITIVE).ln()).collect();
            let c = xs.len() as f64;
            let (mx, my) = (xs.iter().sum::<f64>() / c, ys.iter().sum::<f64>() / c);
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            cov / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
        });
        identities.insert(name.to_string(), IdentityConvergence { max, order });
    }
    Ok(ConvergenceReport {
        recipe: recipe.name.clone(),
        stencil,
        points: points.to_vec(),
        levels,
        identities,
    })
}
