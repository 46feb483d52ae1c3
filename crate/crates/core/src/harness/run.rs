//! Executes a scenario, streams the trace and builds the report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::Error;
use crate::estimator::{
    check_envelope, convergence_bounds, fit_decay_rate, lyapunov_value, uniform_bound, verify_gain_condition,
};
use crate::excitation::sandwich_margins;
use crate::harness::config::Scenario;
use crate::harness::report::{format_float, report_check, CheckOutcome, Criteria, InactivePhase, RunReport, SubsystemReport};
use crate::identifier::Identifier;
use crate::linalg::lambda_min;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Pipeline(#[from] Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Column names of `trace.csv`.
pub fn csv_header(n: usize, m: usize, p: usize, subsystems: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "sigma".to_string()];
    cols.extend((1..=n).map(|j| format!("x{j}")));
    cols.extend((1..=m).map(|j| format!("u{j}")));
    for i in 1..=subsystems {
        cols.extend((1..=p).map(|j| format!("theta_hat_{i}_{j}")));
        cols.push(format!("theta_tilde_norm_{i}"));
        cols.push(format!("V_{i}"));
        cols.push(format!("s_{i}"));
    }
    cols.push("lambda_min_Q".into());
    cols
}

struct SampleView<'a> {
    t: f64,
    sigma: usize,
    x: &'a DVector<f64>,
    u: &'a DVector<f64>,
    estimates: &'a [DVector<f64>],
    norms: &'a [f64],
    lyapunov: &'a [f64],
    latched: &'a [bool],
    lambda_min_q: f64,
}

fn write_row(w: &mut dyn Write, s: &SampleView<'_>) -> std::io::Result<()> {
    let mut row = String::with_capacity(512);
    use std::fmt::Write as _;
    let _ = write!(row, "{},{}", format_float(s.t), s.sigma + 1);
    for v in s.x.iter().chain(s.u.iter()) {
        let _ = write!(row, ",{}", format_float(*v));
    }
    for i in 0..s.estimates.len() {
        for v in s.estimates[i].iter() {
            let _ = write!(row, ",{}", format_float(*v));
        }
        let _ = write!(
            row,
            ",{},{},{}",
            format_float(s.norms[i]),
            format_float(s.lyapunov[i]),
            u8::from(s.latched[i])
        );
    }
    let _ = writeln!(row, ",{}", format_float(s.lambda_min_q));
    w.write_all(row.as_bytes())
}

/// Per-subsystem bookkeeping gathered while stepping.
#[derive(Default)]
struct Tracker {
    norms: Vec<f64>,
    lyapunov: Vec<f64>,
    sigma_at_detection: Option<usize>,
    min_lambda_after_detection: Option<f64>,
    /// `Some(start)` while the first activation window is open.
    first_window: Option<f64>,
    first_window_done: bool,
    sandwich_lower: Option<f64>,
    sandwich_upper: Option<f64>,
}

fn min_opt(acc: &mut Option<f64>, v: f64) {
    *acc = Some(acc.map_or(v, |a| a.min(v)));
}

/// Runs `scenario`, writing the CSV trace to `trace` if given.
///
/// On a pipeline failure the rows written so far are flushed before the
/// error is returned.
pub fn run(scenario: &Scenario, trace: Option<&mut dyn Write>) -> Result<RunReport, RunError> {
    let started = Instant::now();
    let dims = *scenario.plant.dims();
    let count = dims.subsystems();
    let truth: Vec<DVector<f64>> = (0..count)
        .map(|i| scenario.plant.true_params(i).map(|p| p.as_vector().clone()))
        .collect::<Result<_, _>>()?;
    let mut id = Identifier::new(
        scenario.plant.clone(),
        &scenario.schedule,
        scenario.input.clone(),
        scenario.x0.clone(),
        scenario.gains.clone(),
        scenario.initial_estimates.clone(),
        scenario.options.clone(),
        scenario.dt,
        scenario.t_end,
    )?;

    let mut writer = trace.map(BufWriter::new);
    if let Some(w) = writer.as_mut() {
        let header = csv_header(dims.states(), dims.inputs(), dims.param_len(), count);
        writeln!(w, "{}", header.join(","))?;
    }

    let steps = id.total_steps();
    let mut times = Vec::with_capacity(steps + 1);
    let mut active_per_step = Vec::with_capacity(steps);
    let mut trackers: Vec<Tracker> = (0..count).map(|_| Tracker::default()).collect();
    let mut max_filter_residual: f64 = 0.0;
    let mut max_moment_residual: f64 = 0.0;
    let mut min_lambda_q = f64::INFINITY;
    let k_s = scenario.options.filter_gains.k_s();

    let record = |id: &Identifier,
                  trackers: &mut [Tracker],
                  times: &mut Vec<f64>,
                  writer: &mut Option<BufWriter<&mut dyn Write>>,
                  lambda_q: f64|
     -> std::io::Result<()> {
        let t = id.time();
        times.push(t);
        let mut norms = Vec::with_capacity(count);
        let mut vs = Vec::with_capacity(count);
        let mut latched = Vec::with_capacity(count);
        for (i, tr) in trackers.iter_mut().enumerate() {
            let tilde = id.estimators().estimate(i) - &truth[i];
            let v = lyapunov_value(&tilde, id.estimators().gains(i));
            tr.norms.push(tilde.norm());
            tr.lyapunov.push(v);
            norms.push(tilde.norm());
            vs.push(v);
            latched.push(id.excitation().subsystem(i).is_latched());
        }
        let k = id.step_index();
        if let Some(w) = writer.as_mut() {
            if k.is_multiple_of(scenario.log_every) || id.is_finished() {
                let u = id.input().evaluate(t);
                write_row(
                    w,
                    &SampleView {
                        t,
                        sigma: id.sigma_now(),
                        x: id.state(),
                        u: &u,
                        estimates: id.estimators().estimates(),
                        norms: &norms,
                        lyapunov: &vs,
                        latched: &latched,
                        lambda_min_q: lambda_q,
                    },
                )?;
            }
        }
        Ok(())
    };

    record(&id, &mut trackers, &mut times, &mut writer, lambda_min(&id.filters().gram))?;

    while !id.is_finished() {
        let outcome = match id.step() {
            Ok(o) => o,
            Err(e) => {
                if let Some(w) = writer.as_mut() {
                    w.flush()?;
                }
                return Err(e.into());
            }
        };
        let active = outcome.active;
        let t = id.time();
        active_per_step.push(active);

        let filters = id.filters();
        max_filter_residual = max_filter_residual.max((&filters.derivative - &filters.regressor * &truth[active]).norm());
        max_moment_residual = max_moment_residual.max((&filters.moment - &filters.gram * &truth[active]).norm());
        let lambda_q = lambda_min(&filters.gram);
        min_lambda_q = min_lambda_q.min(lambda_q);

        if let Some(d) = &outcome.detection {
            trackers[d.subsystem].sigma_at_detection = Some(active);
        }
        for (i, tr) in trackers.iter_mut().enumerate() {
            if i != active {
                if tr.first_window.is_some() {
                    tr.first_window = None;
                    tr.first_window_done = true;
                }
                continue;
            }
            if tr.first_window.is_none() && !tr.first_window_done {
                tr.first_window = Some(t - id.dt());
            }
            if let Some(start) = tr.first_window {
                let margins = sandwich_margins(&filters.gram, id.excitation().subsystem(i).accumulated(), k_s, t - start);
                min_opt(&mut tr.sandwich_lower, margins.lower);
                min_opt(&mut tr.sandwich_upper, margins.upper);
            }
            if id.excitation().subsystem(i).is_latched() {
                min_opt(&mut tr.min_lambda_after_detection, lambda_q);
            }
        }

        record(&id, &mut trackers, &mut times, &mut writer, lambda_q)?;
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }

    let mut warnings = Vec::new();
    let mut subsystems = Vec::with_capacity(count);
    for (i, tr) in trackers.iter().enumerate() {
        let gains = id.estimators().gains(i);
        let excitation = id.excitation().subsystem(i);
        let detected_at = excitation.detected_at();
        let gain_margin = match verify_gain_condition(i, gains, excitation) {
            Ok(c) => {
                if !c.satisfied {
                    warnings.push(format!("gain condition violated for subsystem {} (margin {:e})", i + 1, c.margin));
                }
                Some(c.margin)
            }
            Err(_) => None,
        };
        let bounds = convergence_bounds(gains, &id.stacks().slot(i)?.gram);
        let initial_error = tr.norms[0];
        let final_error = *tr.norms.last().expect("at least one sample");

        let (mut fitted_rate, mut fit_samples) = (None, 0);
        let mut envelope = None;
        let mut error_at_detection = None;
        if let Some(t_detect) = detected_at {
            if let Some(k) = times.iter().position(|&t| t >= t_detect) {
                error_at_detection = Some(tr.norms[k]);
            }
            if let Ok(fit) = fit_decay_rate(&times, &tr.norms, t_detect, scenario.t_end) {
                fitted_rate = Some(fit.rate);
                fit_samples = fit.samples;
            }
            envelope = Some(check_envelope(&times, &tr.norms, t_detect, bounds.gamma_1, bounds.gamma_2));
        }

        let bound = uniform_bound(gains, initial_error) * (1.0 + 1e-9);
        let uniform_bound_violations = tr.norms.iter().filter(|&&v| v > bound).count();
        let max_v = tr.lyapunov.iter().copied().fold(0.0, f64::max);
        let mut lyapunov_increases = 0;
        let mut max_lyapunov_increase: f64 = 0.0;
        for w in tr.lyapunov.windows(2) {
            let rise = w[1] - w[0];
            if max_v > 0.0 {
                max_lyapunov_increase = max_lyapunov_increase.max(rise / max_v);
            }
            if rise > 1e-10 * max_v {
                lyapunov_increases += 1;
            }
        }

        let mut inactive_phases = Vec::new();
        if let Some(t_detect) = detected_at {
            let mut k = 0;
            while k < active_per_step.len() {
                if active_per_step[k] == i || times[k] < t_detect {
                    k += 1;
                    continue;
                }
                let start = k;
                while k < active_per_step.len() && active_per_step[k] != i {
                    k += 1;
                }
                inactive_phases.push(InactivePhase {
                    start: times[start],
                    end: times[k],
                    error_start: tr.norms[start],
                    error_end: tr.norms[k],
                });
            }
        }

        subsystems.push(SubsystemReport {
            label: i + 1,
            detected_at,
            sigma_at_detection: tr.sigma_at_detection.map(|s| s + 1),
            lambda_min_snapshot: excitation.lambda_min_at_detection(),
            k_sw: gains.k_sw(),
            gain_margin,
            initial_error,
            error_at_detection,
            final_error,
            fitted_rate,
            fit_samples,
            gamma_1: bounds.gamma_1,
            gamma_2: detected_at.map(|_| bounds.gamma_2),
            envelope_checked: envelope.map_or(0, |e| e.checked),
            envelope_violations: envelope.map_or(0, |e| e.violations),
            first_envelope_violation: envelope.and_then(|e| e.first_violation),
            envelope_below_floor: envelope.map_or(0, |e| e.below_floor),
            uniform_bound_violations,
            lyapunov_increases,
            max_lyapunov_increase,
            min_lambda_q_after_detection: tr.min_lambda_after_detection,
            sandwich_lower_margin: tr.sandwich_lower,
            sandwich_upper_margin: tr.sandwich_upper,
            inactive_phases,
        });
    }

    Ok(RunReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        steps,
        dt: scenario.dt,
        t_end: scenario.t_end,
        wall_time: started.elapsed().as_secs_f64(),
        max_filter_residual,
        max_moment_residual,
        min_lambda_q: if min_lambda_q.is_finite() { min_lambda_q } else { 0.0 },
        subsystems,
        warnings,
    })
}

/// Runs `scenario` and writes `trace.csv` and `report.txt` into `dir`.
pub fn run_to_dir(scenario: &Scenario, dir: &Path, criteria: &Criteria) -> Result<(RunReport, CheckOutcome), RunError> {
    std::fs::create_dir_all(dir)?;
    let mut file = File::create(dir.join("trace.csv"))?;
    let report = run(scenario, Some(&mut file))?;
    let checks = report_check(&report, criteria);
    std::fs::write(dir.join("report.txt"), report.to_text(&checks))?;
    Ok((report, checks))
}
