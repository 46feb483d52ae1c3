//! Composite estimator for a plain (non-switched) LTI plant.
//!
//! Same filters, excitation latch and update law as the switched pipeline,
//! without a schedule or memory stacks. A switched run with a single
//! subsystem must reproduce its trace exactly.

use nalgebra::DVector;

use crate::error::{mismatch, Error, Result};
use crate::estimator::{auto_switching_gain, composite_step, switching_snapshot, EstimatorGains, FilterTerms};
use crate::excitation::IieStatus;
use crate::identifier::IdentifierOptions;
use crate::filters::FilterBankState;
use crate::linalg::all_finite_vec;
use crate::plant::{rk4_plant, step_count, ExcitationInput, SwitchedPlant};

/// Estimate and plant state at one grid sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSample {
    pub t: f64,
    pub x: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub latched: bool,
}

/// Runs the composite estimator on a single-subsystem plant from `t0` to
/// `t_end` and returns every sample, starting with `t0`.
#[allow(clippy::too_many_arguments)]
pub fn run_composite(
    plant: &SwitchedPlant,
    input: &ExcitationInput,
    x0: &DVector<f64>,
    mut gains: EstimatorGains,
    theta0: DVector<f64>,
    options: &IdentifierOptions,
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Vec<BaselineSample>> {
    let dims = *plant.dims();
    if dims.subsystems() != 1 {
        return Err(mismatch("subsystem count", 1, dims.subsystems()));
    }
    if theta0.len() != dims.param_len() {
        return Err(mismatch("initial estimate", dims.param_len(), theta0.len()));
    }
    input.validate(&dims)?;
    let steps = step_count(t0, t_end, dt)?;
    let mut filters = FilterBankState::new(dims, t0, x0)?;
    let mut excitation = IieStatus::new(&dims, options.eps_pd)?.with_refresh(options.refresh_snapshot);
    let mut x = x0.clone();
    let mut theta = theta0;

    let mut out = Vec::with_capacity(steps + 1);
    out.push(BaselineSample {
        t: t0,
        x: x.clone(),
        theta_hat: theta.clone(),
        latched: false,
    });
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let t_next = t0 + (k + 1) as f64 * dt;
        let before = filters.clone();
        let step = rk4_plant(plant, 0, input, t, &x, dt);
        if !all_finite_vec(&step.next) {
            return Err(Error::NonFinite {
                what: "plant state".into(),
                t: t_next,
            });
        }
        let layer1 = filters.layer1_step(&step, &options.filter_gains, dt)?;
        filters.layer2_step(&layer1, &options.filter_gains, dt, t_next)?;
        let detection = excitation.update(
            0,
            &filters.gram,
            &filters.moment,
            &layer1.gram_increment(dt),
            t_next,
            false,
        )?;
        if let (Some(d), true) = (&detection, options.auto_switching_gain) {
            gains.set_switching_gain(auto_switching_gain(gains.target_rate(), d.lambda_min))?;
        }
        let switching = switching_snapshot(excitation.subsystem(0), 0)?;
        theta = composite_step(
            options.scheme,
            &theta,
            &FilterTerms::live(&before),
            &FilterTerms::live(&filters),
            switching,
            &gains,
            dt,
        );
        x = step.next;
        out.push(BaselineSample {
            t: t_next,
            x: x.clone(),
            theta_hat: theta.clone(),
            latched: excitation.subsystem(0).is_latched(),
        });
    }
    Ok(out)
}
