//! Exact factorization of a two-component wavefunction into a marginal
//! amplitude `|chi|` and a conditional spinor `Phi`, and the geometric
//! quantities built from `Phi`: connection, metric, the rank-3 tensors
//! `C`/`D`, the current, and the kinetic energy partition.
//!
//! `Phi` is only defined where the density is non-zero. Derivatives of `Phi`
//! are taken spectrally after multiplying by a smooth flat-top window that
//! equals one on the mask `{|chi|^2 > floor}` and vanishes outside the wider
//! support `{|chi|^2 > support_floor}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::grid::{DerivativeMethod, Grid1D, SmoothWindow};

const NORM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoComponentWavefunction {
    grid: Grid1D,
    psi1: Vec<Complex64>,
    psi2: Vec<Complex64>,
}

impl TwoComponentWavefunction {
    /// Validated constructor: lengths match the grid, entries are finite and
    /// the state is normalized to within `1e-10`.
    pub fn new(grid: Grid1D, psi1: Vec<Complex64>, psi2: Vec<Complex64>) -> Result<Self> {
        let psi = Self::checked(grid, psi1, psi2)?;
        let norm = psi.norm()?;
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidField(format!("wavefunction norm {norm} differs from 1")));
        }
        Ok(psi)
    }

    /// Rescales the input to unit norm.
    pub fn normalized(grid: Grid1D, psi1: Vec<Complex64>, psi2: Vec<Complex64>) -> Result<Self> {
        let mut psi = Self::checked(grid, psi1, psi2)?;
        let norm = psi.norm()?;
        if norm == 0.0 {
            return Err(Error::DegenerateState("wavefunction vanishes identically".into()));
        }
        let scale = 1.0 / norm.sqrt();
        psi.psi1.iter_mut().chain(psi.psi2.iter_mut()).for_each(|z| *z *= scale);
        Ok(psi)
    }

    fn checked(grid: Grid1D, psi1: Vec<Complex64>, psi2: Vec<Complex64>) -> Result<Self> {
        if psi1.len() != grid.n() || psi2.len() != grid.n() {
            return Err(Error::InvalidField(format!(
                "component lengths ({}, {}) do not match grid size {}",
                psi1.len(),
                psi2.len(),
                grid.n()
            )));
        }
        ensure_finite("psi", psi1.iter().chain(&psi2).flat_map(|z| [z.re, z.im]))?;
        Ok(Self { grid, psi1, psi2 })
    }

    pub(crate) fn from_parts(grid: Grid1D, psi1: Vec<Complex64>, psi2: Vec<Complex64>) -> Self {
        Self { grid, psi1, psi2 }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn psi1(&self) -> &[Complex64] {
        &self.psi1
    }

    pub fn psi2(&self) -> &[Complex64] {
        &self.psi2
    }

    pub fn into_parts(self) -> (Vec<Complex64>, Vec<Complex64>) {
        (self.psi1, self.psi2)
    }

    /// `|psi1|^2 + |psi2|^2`.
    pub fn density(&self) -> Vec<f64> {
        self.psi1.iter().zip(&self.psi2).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).collect()
    }

    pub fn norm(&self) -> Result<f64> {
        self.grid.integrate(&self.density())
    }

    /// `e^{i theta(x)} Psi`.
    pub fn with_phase(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.grid.n() {
            return Err(Error::InvalidField("phase length does not match grid".into()));
        }
        let rot = |z: &Complex64, th: &f64| z * Complex64::from_polar(1.0, *th);
        Ok(Self {
            grid: self.grid.clone(),
            psi1: self.psi1.iter().zip(theta).map(|(z, t)| rot(z, t)).collect(),
            psi2: self.psi2.iter().zip(theta).map(|(z, t)| rot(z, t)).collect(),
        })
    }

    /// `<Psi| -I/2 d^2/dx^2 |Psi>` by the given derivative method.
    pub fn kinetic_energy(&self, inertia: f64, method: DerivativeMethod) -> Result<f64> {
        let mut total = 0.0;
        for comp in [&self.psi1, &self.psi2] {
            let d2 = self.grid.derivative(comp, 2, method)?;
            total += comp.iter().zip(&d2).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        }
        Ok(-0.5 * inertia * total * self.grid.dx())
    }

    /// Probability current `I Im(Psi^dagger dPsi/dx)`.
    pub fn current(&self, inertia: f64, method: DerivativeMethod) -> Result<Vec<f64>> {
        let d1 = self.grid.derivative(&self.psi1, 1, method)?;
        let d2 = self.grid.derivative(&self.psi2, 1, method)?;
        Ok((0..self.grid.n())
            .map(|i| inertia * ((self.psi1[i].conj() * d1[i]).im + (self.psi2[i].conj() * d2[i]).im))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeOptions {
    /// Mask threshold relative to the peak density.
    pub floor: f64,
    /// Relative threshold beyond which `Phi` is not formed at all; the window
    /// tapers between this and the mask.
    pub support_floor: f64,
    pub method: DerivativeMethod,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            floor: 1e-13,
            support_floor: 1e-60,
            method: DerivativeMethod::Spectral,
        }
    }
}

impl DecomposeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::Config(format!("density floor {} must lie in (0, 1)", self.floor)));
        }
        if !(self.support_floor > 0.0 && self.support_floor <= self.floor) {
            return Err(Error::Config(format!(
                "support floor {} must lie in (0, floor]",
                self.support_floor
            )));
        }
        Ok(())
    }
}

/// Spinor-valued field, one vector per component.
type Spinor = [Vec<Complex64>; 2];

fn inner(a: &Spinor, b: &Spinor, i: usize) -> Complex64 {
    a[0][i].conj() * b[0][i] + a[1][i].conj() * b[1][i]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticEnergies {
    pub marginal: f64,
    pub geometric: f64,
    /// Computed directly from `Psi`, independent of the decomposition.
    pub total: f64,
}

impl KineticEnergies {
    pub fn partition_residual(&self) -> f64 {
        self.total - self.marginal - self.geometric
    }
}

/// Exact-factorization fields of one wavefunction. Tensor fields are zero
/// off the mask.
#[derive(Debug, Clone)]
pub struct EFDecomposition {
    grid: Grid1D,
    options: DecomposeOptions,
    density: Vec<f64>,
    mask: Vec<bool>,
    window: SmoothWindow,
    phi: Spinor,
    /// `Phi'`, `Phi''`, `Phi'''`.
    dphi: [Spinor; 3],
    /// `(P - A) Phi`.
    chi1: Spinor,
    a: Vec<f64>,
    a_x: Vec<f64>,
    g: Vec<f64>,
    g_x: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    c_x: Vec<f64>,
    dln_density: Vec<f64>,
    total_kinetic_unit: f64,
}

/// First and last index where `pred` holds.
fn bounds(values: &[f64], pred: impl Fn(f64) -> bool) -> Option<(usize, usize)> {
    let lo = values.iter().position(|&v| pred(v))?;
    let hi = values.iter().rposition(|&v| pred(v))?;
    Some((lo, hi))
}

/// Fills entries outside `keep` with the value at the nearest kept index.
fn continue_nearest<T: Copy>(values: &mut [T], keep: &[bool]) {
    let n = values.len();
    let mut left: Vec<Option<usize>> = vec![None; n];
    let mut right: Vec<Option<usize>> = vec![None; n];
    let mut cur = None;
    for i in 0..n {
        if keep[i] {
            cur = Some(i);
        }
        left[i] = cur;
    }
    cur = None;
    for i in (0..n).rev() {
        if keep[i] {
            cur = Some(i);
        }
        right[i] = cur;
    }
    let snapshot: Vec<T> = values.to_vec();
    for i in 0..n {
        if keep[i] {
            continue;
        }
        let src = match (left[i], right[i]) {
            (Some(l), Some(r)) => {
                if i - l <= r - i {
                    l
                } else {
                    r
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => continue,
        };
        values[i] = snapshot[src];
    }
}

impl EFDecomposition {
    pub fn new(psi: &TwoComponentWavefunction, options: DecomposeOptions) -> Result<Self> {
        options.validate()?;
        let grid = psi.grid().clone();
        let n = grid.n();
        let density = psi.density();
        let peak = density.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::DegenerateState("density vanishes everywhere".into()));
        }
        let mask: Vec<bool> = density.iter().map(|&r| r > options.floor * peak).collect();
        let support: Vec<bool> = density.iter().map(|&r| r > options.support_floor * peak).collect();
        let flat = bounds(&density, |r| r > options.floor * peak).expect("peak is in the mask");
        let supp = bounds(&density, |r| r > options.support_floor * peak).expect("mask inside support");
        let window = grid.flat_top_window(supp, flat).map_err(|e| {
            Error::DegenerateState(format!("no room to taper between mask and support ({e})"))
        })?;

        let mut phi: Spinor = [vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]];
        for i in 0..n {
            if support[i] {
                let chi = density[i].sqrt();
                phi[0][i] = psi.psi1()[i] / chi;
                phi[1][i] = psi.psi2()[i] / chi;
            }
        }
        continue_nearest(&mut phi[0], &support);
        continue_nearest(&mut phi[1], &support);

        let d0 = grid.windowed_derivatives(&phi[0], &window, 3, options.method)?;
        let d1 = grid.windowed_derivatives(&phi[1], &window, 3, options.method)?;
        let mut it0 = d0.into_iter();
        let mut it1 = d1.into_iter();
        let mut next = || -> Spinor { [it0.next().unwrap(), it1.next().unwrap()] };
        let dphi: [Spinor; 3] = [next(), next(), next()];

        let mut ln_density: Vec<f64> =
            density.iter().zip(&support).map(|(&r, &s)| if s { r.ln() } else { 0.0 }).collect();
        continue_nearest(&mut ln_density, &support);
        let dln_density = grid.windowed_derivative_real(&ln_density, &window, 1, options.method)?;

        let zero = Complex64::new(0.0, 0.0);
        let mut chi1: Spinor = [vec![zero; n], vec![zero; n]];
        let mut a = vec![0.0; n];
        let mut a_x = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut g_x = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut c_x = vec![0.0; n];
        let i_unit = Complex64::new(0.0, 1.0);
        let [f1, f2, f3] = &dphi;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let a0 = inner(&phi, f1, i).im;
            let a1 = inner(&phi, f2, i).im;
            let a2 = inner(f1, f2, i).im + inner(&phi, f3, i).im;
            let mut x1 = [zero; 2];
            let mut x1p = [zero; 2];
            let mut x2 = [zero; 2];
            let mut x2p = [zero; 2];
            for k in 0..2 {
                let (p, p1, p2, p3) = (phi[k][i], f1[k][i], f2[k][i], f3[k][i]);
                x1[k] = -i_unit * p1 - a0 * p;
                x1p[k] = -i_unit * p2 - a1 * p - a0 * p1;
                let x1pp = -i_unit * p3 - a2 * p - 2.0 * a1 * p1 - a0 * p2;
                x2[k] = -i_unit * x1p[k] - a0 * x1[k];
                x2p[k] = -i_unit * x1pp - a1 * x1[k] - a0 * x1p[k];
            }
            let dot = |u: &[Complex64; 2], v: &[Complex64; 2]| u[0].conj() * v[0] + u[1].conj() * v[1];
            let cd = dot(&x1, &x2);
            let cd_x = dot(&x1p, &x2) + dot(&x1, &x2p);
            a[i] = a0;
            a_x[i] = a1;
            g[i] = dot(&x1, &x1).re;
            g_x[i] = 2.0 * dot(&x1, &x1p).re;
            c[i] = cd.re;
            d[i] = cd.im;
            c_x[i] = cd_x.re;
            chi1[0][i] = x1[0];
            chi1[1][i] = x1[1];
        }

        let total_kinetic_unit = psi.kinetic_energy(1.0, options.method)?;
        Ok(Self {
            grid,
            options,
            density,
            mask,
            window,
            phi,
            dphi,
            chi1,
            a,
            a_x,
            g,
            g_x,
            c,
            d,
            c_x,
            dln_density,
            total_kinetic_unit,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn options(&self) -> &DecomposeOptions {
        &self.options
    }

    /// Marginal density `|chi|^2`.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn window(&self) -> &SmoothWindow {
        &self.window
    }

    /// Conditional spinor components; continued by the nearest defined value
    /// where the density is below the support floor.
    pub fn conditional(&self) -> (&[Complex64], &[Complex64]) {
        (&self.phi[0], &self.phi[1])
    }

    /// `d^k Phi / dx^k` for `k = 1, 2, 3`, valid on the mask.
    pub fn conditional_derivative(&self, order: usize) -> (&[Complex64], &[Complex64]) {
        let d = &self.dphi[order - 1];
        (&d[0], &d[1])
    }

    /// `(P - A) Phi` on the mask.
    pub fn covariant_derivative(&self) -> (&[Complex64], &[Complex64]) {
        (&self.chi1[0], &self.chi1[1])
    }

    /// Berry connection `A = Im<Phi|dPhi/dx>`.
    pub fn connection(&self) -> &[f64] {
        &self.a
    }

    pub fn connection_gradient(&self) -> &[f64] {
        &self.a_x
    }

    /// Quantum metric `g = |(P - A) Phi|^2`.
    pub fn metric(&self) -> &[f64] {
        &self.g
    }

    pub fn metric_gradient(&self) -> &[f64] {
        &self.g_x
    }

    /// `C = Re<(P-A)Phi|(P-A)(P-A)Phi>`.
    pub fn tensor_c(&self) -> &[f64] {
        &self.c
    }

    pub fn tensor_c_gradient(&self) -> &[f64] {
        &self.c_x
    }

    /// `D = Im<(P-A)Phi|(P-A)(P-A)Phi>`.
    pub fn tensor_d(&self) -> &[f64] {
        &self.d
    }

    /// `d ln|chi|^2 / dx` on the mask.
    pub fn log_density_gradient(&self) -> &[f64] {
        &self.dln_density
    }

    /// Geometric energy density `E_geo = I g / 2`.
    pub fn geometric_energy_density(&self, inertia: f64) -> Vec<f64> {
        self.g.iter().map(|g| 0.5 * inertia * g).collect()
    }

    /// `J = I |chi|^2 A` on the mask.
    pub fn current(&self, inertia: f64) -> Vec<f64> {
        self.density.iter().zip(&self.a).map(|(r, a)| inertia * r * a).collect()
    }

    /// Derivative of a field that is smooth on the support, exact on the mask.
    pub fn derivative_on_support(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.grid.windowed_derivative_real(f, &self.window, 1, self.options.method)
    }

    /// `<Phi| M |Psi_k>` where `M` is the real symmetric matrix field
    /// `(m11, m12; m12, m22)` and `rhs` is a spinor field.
    pub fn sandwich(
        &self,
        m: (&[f64], &[f64], &[f64]),
        rhs: (&[Complex64], &[Complex64]),
        i: usize,
    ) -> Complex64 {
        let (m11, m12, m22) = (m.0[i], m.1[i], m.2[i]);
        let v0 = rhs.0[i] * m11 + rhs.1[i] * m12;
        let v1 = rhs.0[i] * m12 + rhs.1[i] * m22;
        self.phi[0][i].conj() * v0 + self.phi[1][i].conj() * v1
    }

    /// Masked integral of a field.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.grid.integrate_masked(f, &self.mask)
    }

    pub fn energies(&self, inertia: f64) -> Result<KineticEnergies> {
        let n = self.grid.n();
        let geo: Vec<f64> = (0..n).map(|i| 0.5 * inertia * self.density[i] * self.g[i]).collect();
        let marg: Vec<f64> = (0..n)
            .map(|i| {
                let half_log = 0.5 * self.dln_density[i];
                0.5 * inertia * self.density[i] * (half_log * half_log + self.a[i] * self.a[i])
            })
            .collect();
        Ok(KineticEnergies {
            marginal: self.integrate(&marg)?,
            geometric: self.integrate(&geo)?,
            total: inertia * self.total_kinetic_unit,
        })
    }
}

/// `EFDecomposition::new` with explicit floor and default settings otherwise.
pub fn decompose(psi: &TwoComponentWavefunction, floor: f64) -> Result<EFDecomposition> {
    EFDecomposition::new(
        psi,
        DecomposeOptions {
            floor,
            support_floor: DecomposeOptions::default().support_floor.min(floor),
            ..Default::default()
        },
    )
}
