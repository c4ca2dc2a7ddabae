//! Strang split-operator propagation of the two-component Schrödinger
//! equation `i dPsi/dt = (-I/2 d^2/dx^2 + h0 + h1 sigma_1 + h3 sigma_3) Psi`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlannerScalar};
use serde::{Deserialize, Serialize};

use crate::ef::{DecomposeOptions, EFDecomposition, TwoComponentWavefunction};
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::model::{Hamiltonian, ModelSystem, TimeDerivativeMethod};

/// Source of the potential matrix at a given time.
pub trait Potential: Sync {
    fn hamiltonian(&self, t: f64) -> Result<Hamiltonian>;
}

impl Potential for ModelSystem {
    fn hamiltonian(&self, t: f64) -> Result<Hamiltonian> {
        ModelSystem::hamiltonian(self, t)
    }
}

impl<F> Potential for F
where
    F: Fn(f64) -> Result<Hamiltonian> + Sync,
{
    fn hamiltonian(&self, t: f64) -> Result<Hamiltonian> {
        self(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HUpdate {
    /// Both potential half-steps use `H(t + dt/2)`.
    #[default]
    PerStep,
    /// The half-steps use `H(t)` and `H(t + dt)`; the latter is reused by the next step.
    PerHalfStep,
}

impl std::str::FromStr for HUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-step" => Ok(Self::PerStep),
            "per-half-step" => Ok(Self::PerHalfStep),
            other => Err(Error::Config(format!("unknown h_update '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagatorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub h_update: HUpdate,
    /// Number of recording intervals; errors are recorded at `samples + 1` times.
    pub samples: usize,
    /// Largest admissible step.
    pub max_dt: f64,
    /// Keep the wavefunction at every recording time.
    pub snapshots: bool,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_end: 2.0,
            h_update: HUpdate::PerStep,
            samples: 20,
            max_dt: 1e-3,
            snapshots: false,
        }
    }
}

impl PropagatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end = {} must be non-negative", self.t_end)));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if self.dt > self.max_dt {
            return Err(Error::AccuracyGuard { dt: self.dt, max: self.max_dt });
        }
        Ok(())
    }

    /// Number of steps and the step actually taken (`<= dt`).
    pub fn steps(&self) -> (usize, f64) {
        if self.t_end == 0.0 {
            return (0, self.dt);
        }
        let steps = (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize;
        (steps, self.t_end / steps as f64)
    }
}

/// Split-operator stepper bound to a grid and an inertia.
#[derive(Clone)]
pub struct Propagator {
    grid: Grid1D,
    inertia: f64,
    k2: Vec<f64>,
    // The SIMD plans carry a larger systematic round-trip norm bias, which
    // accumulates over 1e4 steps of a slowly varying state.
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Propagator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Propagator")
            .field("grid", &self.grid)
            .field("inertia", &self.inertia)
            .finish_non_exhaustive()
    }
}

impl Propagator {
    pub fn new(grid: Grid1D, inertia: f64) -> Self {
        let k2 = grid.wavenumbers().iter().map(|k| k * k).collect();
        let mut planner = FftPlannerScalar::new();
        let forward = planner.plan_fft_forward(grid.n());
        let inverse = planner.plan_fft_inverse(grid.n());
        Self { grid, inertia, k2, forward, inverse }
    }

    /// `exp(-i tau (h0 + h1 sigma_1 + h3 sigma_3))` applied pointwise.
    fn potential_step(&self, psi: &mut [Vec<Complex64>; 2], h: &Hamiltonian, tau: f64) {
        let [p1, p2] = psi;
        for i in 0..p1.len() {
            let (a, b1, b3) = (h.h0[i], h.h1[i], h.h3[i]);
            let norm = (b1 * b1 + b3 * b3).sqrt();
            let (s, c) = (tau * norm).sin_cos();
            let (n1, n3) = if norm > 0.0 { (b1 / norm, b3 / norm) } else { (0.0, 0.0) };
            let phase = Complex64::from_polar(1.0, -tau * a);
            let mis = Complex64::new(0.0, -s);
            let (u, v) = (p1[i], p2[i]);
            p1[i] = phase * (u * c + mis * (n3 * u + n1 * v));
            p2[i] = phase * (v * c + mis * (n1 * u - n3 * v));
        }
    }

    fn kinetic_step(&self, psi: &mut [Vec<Complex64>; 2], dt: f64) {
        let symbol: Vec<Complex64> = self
            .k2
            .iter()
            .map(|k2| Complex64::from_polar(1.0, -0.5 * dt * self.inertia * k2))
            .collect();
        let scale = 1.0 / self.grid.n() as f64;
        for comp in psi.iter_mut() {
            self.forward.process(comp);
            comp.iter_mut().zip(&symbol).for_each(|(z, s)| *z *= s);
            self.inverse.process(comp);
            comp.iter_mut().for_each(|z| *z *= scale);
        }
    }

    /// One Strang step from `t` to `t + dt` with the given half-step potentials.
    pub fn step_with(&self, psi: &mut [Vec<Complex64>; 2], first: &Hamiltonian, second: &Hamiltonian, t: f64, dt: f64) -> Result<()> {
        self.potential_step(psi, first, 0.5 * dt);
        self.kinetic_step(psi, dt);
        self.potential_step(psi, second, 0.5 * dt);
        let finite = psi.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite());
        if !finite {
            return Err(Error::NumericalBlowup { t: t + dt });
        }
        Ok(())
    }

    /// One step with the potential evaluated at the midpoint.
    pub fn step(&self, psi: &TwoComponentWavefunction, t: f64, dt: f64, potential: &dyn Potential) -> Result<TwoComponentWavefunction> {
        let h = potential.hamiltonian(t + 0.5 * dt)?;
        let (a, b) = psi.clone().into_parts();
        let mut state = [a, b];
        self.step_with(&mut state, &h, &h, t, dt)?;
        let [a, b] = state;
        Ok(TwoComponentWavefunction::from_parts(self.grid.clone(), a, b))
    }

    /// Evolves `psi` from `t0` over `steps` steps of size `dt`, calling
    /// `observe(step_index, t, state)` after every step.
    pub fn evolve(
        &self,
        psi: &TwoComponentWavefunction,
        t0: f64,
        dt: f64,
        steps: usize,
        update: HUpdate,
        potential: &dyn Potential,
        mut observe: impl FnMut(usize, f64, &[Vec<Complex64>; 2]) -> Result<()>,
    ) -> Result<TwoComponentWavefunction> {
        let (a, b) = psi.clone().into_parts();
        let mut state = [a, b];
        let mut cached: Option<Hamiltonian> = None;
        for k in 0..steps {
            let t = t0 + k as f64 * dt;
            match update {
                HUpdate::PerStep => {
                    let h = potential.hamiltonian(t + 0.5 * dt)?;
                    self.step_with(&mut state, &h, &h, t, dt)?;
                }
                HUpdate::PerHalfStep => {
                    let first = match cached.take() {
                        Some(h) => h,
                        None => potential.hamiltonian(t)?,
                    };
                    let second = potential.hamiltonian(t + dt)?;
                    self.step_with(&mut state, &first, &second, t, dt)?;
                    cached = Some(second);
                }
            }
            observe(k + 1, t + dt, &state)?;
        }
        let [a, b] = state;
        Ok(TwoComponentWavefunction::from_parts(self.grid.clone(), a, b))
    }
}

/// Errors of the propagated state against the closed form at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationRecord {
    pub t: f64,
    /// `||Psi_num - Psi_exact||_2`.
    pub l2_error: f64,
    pub density_error: f64,
    /// Max error of `w = (|psi1|^2 - |psi2|^2)/|chi|^2` where the density
    /// exceeds `1e-8` of its peak.
    pub w_error: f64,
    pub t_geo: f64,
    pub t_geo_error: f64,
    pub norm_drift: f64,
    pub mean_position: f64,
    pub mean_position_error: f64,
    pub width: f64,
    pub width_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub config: PropagatorConfig,
    pub n: usize,
    pub steps: usize,
    pub dt_effective: f64,
    pub records: Vec<PropagationRecord>,
    pub final_l2_error: f64,
    pub max_norm_drift: f64,
    pub max_moment_error: f64,
}

#[derive(Debug, Clone)]
pub struct PropagationOutcome {
    pub report: PropagationReport,
    pub snapshots: Vec<(f64, TwoComponentWavefunction)>,
}

/// Decomposition settings for propagated states: their tails carry
/// splitting error, so the mask and support stop well above roundoff.
pub fn propagated_decompose_options() -> DecomposeOptions {
    DecomposeOptions {
        floor: 1e-8,
        support_floor: 1e-14,
        ..Default::default()
    }
}

fn record(sys: &ModelSystem, t: f64, psi: &TwoComponentWavefunction, norm0: f64) -> Result<PropagationRecord> {
    let grid = &sys.grid;
    let exact = sys.psi(t)?;
    let dx = grid.dx();
    let l2 = psi
        .psi1()
        .iter()
        .zip(exact.psi1())
        .chain(psi.psi2().iter().zip(exact.psi2()))
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        * dx;
    let rho = psi.density();
    let rho_exact = exact.density();
    let peak = rho_exact.iter().cloned().fold(0.0, f64::max);
    let mut density_error = 0.0f64;
    let mut w_error = 0.0f64;
    for i in 0..rho.len() {
        density_error = density_error.max((rho[i] - rho_exact[i]).abs());
        if rho_exact[i] > 1e-8 * peak {
            let w = |p: &TwoComponentWavefunction, r: f64| (p.psi1()[i].norm_sqr() - p.psi2()[i].norm_sqr()) / r;
            w_error = w_error.max((w(psi, rho[i]) - w(&exact, rho_exact[i])).abs());
        }
    }
    let opts = propagated_decompose_options();
    let inertia = sys.params.inertia;
    let t_geo = EFDecomposition::new(psi, opts)?.energies(inertia)?.geometric;
    let t_geo_exact = EFDecomposition::new(&exact, opts)?.energies(inertia)?.geometric;

    let x = grid.points();
    let norm = grid.integrate(&rho)?;
    let mean = x.iter().zip(&rho).map(|(x, r)| x * r).sum::<f64>() * dx / norm;
    let var = x.iter().zip(&rho).map(|(x, r)| (x - mean).powi(2) * r).sum::<f64>() * dx / norm;
    // a gaussian |chi|^2 = exp(-u^2)/(sqrt(pi) sigma) has variance sigma^2 / 2
    let width = (2.0 * var).sqrt();
    Ok(PropagationRecord {
        t,
        l2_error: l2.sqrt(),
        density_error,
        w_error,
        t_geo,
        t_geo_error: (t_geo - t_geo_exact).abs(),
        norm_drift: (norm - norm0).abs(),
        mean_position: mean,
        mean_position_error: (mean - sys.params.mean_position(t)).abs(),
        width,
        width_error: (width - sys.params.width(t)).abs(),
    })
}

/// Propagates the model state from `t = 0` to `cfg.t_end` and compares it
/// with the closed form at `cfg.samples + 1` evenly spaced times. The
/// Hamiltonian uses analytic time derivatives.
pub fn propagate(sys: &ModelSystem, cfg: &PropagatorConfig) -> Result<PropagationOutcome> {
    cfg.validate()?;
    let sys = sys.clone().with_time_derivatives(TimeDerivativeMethod::Analytic);
    let (steps, dt) = cfg.steps();
    let psi0 = sys.psi(0.0)?;
    let norm0 = psi0.norm()?;
    let record_at: Vec<usize> = (0..=cfg.samples)
        .map(|k| ((k * steps) as f64 / cfg.samples as f64).round() as usize)
        .collect();
    let mut records = vec![record(&sys, 0.0, &psi0, norm0)?];
    let mut snapshots = Vec::new();
    if cfg.snapshots {
        snapshots.push((0.0, psi0.clone()));
    }
    let propagator = Propagator::new(sys.grid.clone(), sys.params.inertia);
    let mut next = 1;
    propagator.evolve(&psi0, 0.0, dt, steps, cfg.h_update, &sys, |k, t, state| {
        while next < record_at.len() && record_at[next] == k {
            let psi = TwoComponentWavefunction::from_parts(sys.grid.clone(), state[0].clone(), state[1].clone());
            records.push(record(&sys, t, &psi, norm0)?);
            if cfg.snapshots {
                snapshots.push((t, psi));
            }
            next += 1;
        }
        Ok(())
    })?;
    // with zero steps every record time coincides with t = 0
    records.dedup_by(|a, b| a.t == b.t);
    let last = records.last().expect("initial record");
    let report = PropagationReport {
        config: *cfg,
        n: sys.grid.n(),
        steps,
        dt_effective: dt,
        final_l2_error: last.l2_error,
        max_norm_drift: records.iter().fold(0.0, |m, r| m.max(r.norm_drift)),
        max_moment_error: records
            .iter()
            .fold(0.0, |m, r| m.max(r.mean_position_error).max(r.width_error)),
        records,
    };
    Ok(PropagationOutcome { report, snapshots })
}

/// Least-squares slope of `ln error` against `ln dt`.
pub fn convergence_order(dts: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn constant(h0: f64, h1: f64, h3: f64, n: usize) -> impl Fn(f64) -> Result<Hamiltonian> + Sync {
        move |t| {
            Ok(Hamiltonian {
                t,
                h0: vec![h0; n],
                h1: vec![h1; n],
                h3: vec![h3; n],
            })
        }
    }

    fn free_gaussian(grid: &Grid1D, s0: f64, inertia: f64, t: f64) -> Vec<Complex64> {
        let a = Complex64::new(s0 * s0, 0.5 * inertia * t);
        let pref = (2.0 * PI * s0 * s0).powf(-0.25) * (Complex64::new(s0 * s0, 0.0) / a).sqrt();
        grid.points().iter().map(|&x| pref * (-x * x / (4.0 * a)).exp()).collect()
    }

    #[test]
    fn config_guards() {
        assert!(matches!(
            PropagatorConfig { dt: 1.0, ..Default::default() }.validate(),
            Err(Error::AccuracyGuard { .. })
        ));
        assert!(matches!(PropagatorConfig { dt: 0.0, ..Default::default() }.validate(), Err(Error::Config(_))));
        assert!(matches!(PropagatorConfig { t_end: -1.0, ..Default::default() }.validate(), Err(Error::Config(_))));
        let (steps, dt) = PropagatorConfig { dt: 3e-4, t_end: 1.0, ..Default::default() }.steps();
        assert_eq!(steps, 3334);
        assert_abs_diff_eq!(dt * steps as f64, 1.0, epsilon = 1e-12);
        assert_eq!(PropagatorConfig::default().steps().0, 20000);
    }

    #[test]
    fn constant_scalar_potential_is_a_global_phase() {
        let grid = Grid1D::new(-10.0, 10.0, 256).unwrap();
        let p = Propagator::new(grid.clone(), 0.0);
        let psi0 = free_gaussian(&grid, 1.0, 0.0, 0.0);
        let psi = TwoComponentWavefunction::from_parts(grid.clone(), psi0.clone(), vec![Complex64::new(0.0, 0.0); 256]);
        let out = p.step(&psi, 0.0, 0.01, &constant(2.5, 0.0, 0.0, 256)).unwrap();
        let phase = Complex64::from_polar(1.0, -2.5 * 0.01);
        for (a, b) in out.psi1().iter().zip(&psi0) {
            assert!((a - phase * b).norm() < 1e-15);
        }
    }

    #[test]
    fn rabi_oscillation_between_components() {
        // h1 = omega, no kinetic energy: populations cos^2(omega t), sin^2(omega t)
        let grid = Grid1D::new(-10.0, 10.0, 128).unwrap();
        let p = Propagator::new(grid.clone(), 0.0);
        let chi = free_gaussian(&grid, 1.0, 0.0, 0.0);
        let psi = TwoComponentWavefunction::from_parts(grid.clone(), chi, vec![Complex64::new(0.0, 0.0); 128]);
        let omega = 0.7;
        let out = p
            .evolve(&psi, 0.0, 0.01, 100, HUpdate::PerStep, &constant(0.0, omega, 0.0, 128), |_, _, _| Ok(()))
            .unwrap();
        let n1 = grid.integrate(&out.psi1().iter().map(|z| z.norm_sqr()).collect::<Vec<_>>()).unwrap();
        assert_abs_diff_eq!(n1, omega.cos().powi(2), epsilon = 1e-12);
    }

    #[test]
    fn free_gaussian_spreading() {
        let grid = Grid1D::new(-20.0, 20.0, 512).unwrap();
        let inertia = 0.5;
        let p = Propagator::new(grid.clone(), inertia);
        let zero = vec![Complex64::new(0.0, 0.0); 512];
        let psi = TwoComponentWavefunction::from_parts(grid.clone(), free_gaussian(&grid, 1.0, inertia, 0.0), zero.clone());
        let out = p
            .evolve(&psi, 0.0, 1e-3, 1000, HUpdate::PerStep, &constant(0.0, 0.0, 0.0, 512), |_, _, _| Ok(()))
            .unwrap();
        let exact = free_gaussian(&grid, 1.0, inertia, 1.0);
        let err = out.psi1().iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "{err:e}");
    }

    #[test]
    fn norm_is_conserved_over_many_steps() {
        let grid = Grid1D::new(-10.0, 10.0, 256).unwrap();
        let p = Propagator::new(grid.clone(), 0.1);
        let x = grid.points();
        let chi = free_gaussian(&grid, 1.0, 0.0, 0.0);
        let psi = TwoComponentWavefunction::normalized(grid.clone(), chi.clone(), chi).unwrap();
        let potential = |t: f64| -> Result<Hamiltonian> {
            Ok(Hamiltonian {
                t,
                h0: x.iter().map(|x| 0.5 * x * x).collect(),
                h1: x.iter().map(|x| 0.3 * (x - t).tanh()).collect(),
                h3: x.iter().map(|x| 0.2 * x).collect(),
            })
        };
        let out = p.evolve(&psi, 0.0, 1e-3, 10_000, HUpdate::PerHalfStep, &potential, |_, _, _| Ok(())).unwrap();
        let drift = (out.norm().unwrap() - 1.0).abs();
        assert!(drift <= 1e-12, "{drift:e}");
    }

    #[test]
    fn blowup_is_reported() {
        let grid = Grid1D::new(-10.0, 10.0, 64).unwrap();
        let p = Propagator::new(grid.clone(), 0.1);
        let chi = free_gaussian(&grid, 1.0, 0.0, 0.0);
        let psi = TwoComponentWavefunction::from_parts(grid.clone(), chi.clone(), chi);
        let bad = constant(f64::NAN, 0.0, 0.0, 64);
        assert!(matches!(p.step(&psi, 0.0, 1e-3, &bad), Err(Error::NumericalBlowup { .. })));
    }

    #[test]
    fn convergence_order_of_exact_power_law() {
        let dts = [1e-3, 5e-4, 2.5e-4];
        let errs: Vec<f64> = dts.iter().map(|d| 3.0 * d * d).collect();
        assert_abs_diff_eq!(convergence_order(&dts, &errs), 2.0, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn potential_step_is_unitary(h0 in -5.0f64..5.0, h1 in -5.0f64..5.0, h3 in -5.0f64..5.0, tau in 0.0f64..0.5) {
            let grid = Grid1D::new(0.0, 1.0, 16).unwrap();
            let p = Propagator::new(grid.clone(), 0.0);
            let h = constant(h0, h1, h3, 16)(0.0).unwrap();
            let mut psi = [
                (0..16).map(|i| Complex64::new(i as f64, 1.0)).collect::<Vec<_>>(),
                (0..16).map(|i| Complex64::new(-1.0, 0.5 * i as f64)).collect::<Vec<_>>(),
            ];
            let before: Vec<f64> = (0..16).map(|i| psi[0][i].norm_sqr() + psi[1][i].norm_sqr()).collect();
            p.potential_step(&mut psi, &h, tau);
            for i in 0..16 {
                let after = psi[0][i].norm_sqr() + psi[1][i].norm_sqr();
                prop_assert!((after - before[i]).abs() <= 1e-12 * before[i].max(1.0));
            }
        }
    }
}
