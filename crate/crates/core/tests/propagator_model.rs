//! Split-operator propagation of the model state against its closed form.

use efgeo::propagator::{convergence_order, propagate, HUpdate, PropagatorConfig};
use efgeo::{Error, Grid1D, ModelParams, ModelSystem};

fn system() -> ModelSystem {
    ModelSystem::new(ModelParams::default(), Grid1D::new(-4.0, 6.0, 4096).unwrap()).unwrap()
}

#[test]
fn zero_horizon_is_the_identity() {
    let out = propagate(&system(), &PropagatorConfig { t_end: 0.0, ..Default::default() }).unwrap();
    assert_eq!(out.report.steps, 0);
    assert_eq!(out.report.records.len(), 1);
    assert_eq!(out.report.final_l2_error, 0.0);
}

#[test]
fn large_step_is_refused() {
    let err = propagate(&system(), &PropagatorConfig { dt: 1.0, ..Default::default() }).unwrap_err();
    assert!(matches!(err, Error::AccuracyGuard { .. }));
}

#[test]
fn second_order_in_time() {
    let sys = system();
    let dts = [1e-3, 5e-4, 2.5e-4];
    let errors: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let cfg = PropagatorConfig { dt, t_end: 0.5, samples: 1, ..Default::default() };
            propagate(&sys, &cfg).unwrap().report.final_l2_error
        })
        .collect();
    let slope = convergence_order(&dts, &errors);
    assert!((1.8..=2.2).contains(&slope), "slope {slope}, errors {errors:?}");
}

#[test]
fn half_step_update_tracks_the_closed_form() {
    let cfg = PropagatorConfig {
        dt: 2e-4,
        t_end: 1.0,
        samples: 4,
        h_update: HUpdate::PerHalfStep,
        snapshots: true,
        ..Default::default()
    };
    let out = propagate(&system(), &cfg).unwrap();
    let r = &out.report;
    assert_eq!(out.snapshots.len(), 5);
    assert!(r.final_l2_error <= 1e-5, "{:e}", r.final_l2_error);
    assert!(r.max_moment_error <= 1e-6);
    assert!(r.max_norm_drift <= 1e-12);
    let last = r.records.last().unwrap();
    assert!((last.t - 1.0).abs() < 1e-12);
    assert!(last.density_error <= 1e-5 && last.w_error <= 1e-4 && last.t_geo_error <= 1e-8);
}
