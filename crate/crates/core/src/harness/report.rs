//! Run summary and pass/fail evaluation.

use std::fmt::Write as _;

/// One maximal stretch of steps during which a subsystem was inactive,
/// after its detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InactivePhase {
    pub start: f64,
    pub end: f64,
    pub error_start: f64,
    pub error_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemReport {
    /// One-based label.
    pub label: usize,
    pub detected_at: Option<f64>,
    /// One-based label of the subsystem active when detection fired.
    pub sigma_at_detection: Option<usize>,
    pub lambda_min_snapshot: Option<f64>,
    pub k_sw: f64,
    pub gain_margin: Option<f64>,
    pub initial_error: f64,
    pub error_at_detection: Option<f64>,
    pub final_error: f64,
    pub fitted_rate: Option<f64>,
    pub fit_samples: usize,
    pub gamma_1: f64,
    pub gamma_2: Option<f64>,
    pub envelope_checked: usize,
    pub envelope_violations: usize,
    pub first_envelope_violation: Option<f64>,
    pub envelope_below_floor: usize,
    pub uniform_bound_violations: usize,
    /// Steps on which `V` rose by more than `1e-10 · max V`.
    pub lyapunov_increases: usize,
    /// Largest per-step increase of `V` relative to `max V`.
    pub max_lyapunov_increase: f64,
    /// Smallest `λ_min(Q)` over the samples of this subsystem's activation
    /// windows after detection.
    pub min_lambda_q_after_detection: Option<f64>,
    /// Smallest `λ_min(Q - e^{-k_s τ} N_acc)` over the first activation window.
    pub sandwich_lower_margin: Option<f64>,
    /// Smallest `λ_min(N_acc - Q)` over the first activation window.
    pub sandwich_upper_margin: Option<f64>,
    pub inactive_phases: Vec<InactivePhase>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub dt: f64,
    pub t_end: f64,
    pub wall_time: f64,
    pub max_filter_residual: f64,
    pub max_moment_residual: f64,
    pub min_lambda_q: f64,
    pub subsystems: Vec<SubsystemReport>,
    pub warnings: Vec<String>,
}

/// Tolerances used by [`report_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Criteria {
    pub filter_identity: f64,
    pub psd_tolerance: f64,
    pub sandwich_tolerance: f64,
    pub lyapunov_relative: f64,
    pub final_error_ratio: f64,
    pub rate_factor: f64,
    /// Samples below this norm count as converged in the inactive-phase check.
    pub floor: f64,
}

impl Default for Criteria {
    fn default() -> Self {
        Self {
            filter_identity: 1e-5,
            psd_tolerance: 1e-9,
            sandwich_tolerance: 1e-8,
            lyapunov_relative: 1e-10,
            final_error_ratio: 1e-3,
            rate_factor: 0.5,
            floor: crate::estimator::NUMERICAL_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CriterionResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckOutcome {
    pub results: Vec<CriterionResult>,
}

impl CheckOutcome {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CriterionResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

fn outcome(name: &'static str, failures: Vec<String>, ok_detail: String) -> CriterionResult {
    CriterionResult {
        name,
        passed: failures.is_empty(),
        detail: if failures.is_empty() { ok_detail } else { failures.join("; ") },
    }
}

/// Evaluates a finished run against `criteria`.
pub fn report_check(report: &RunReport, criteria: &Criteria) -> CheckOutcome {
    let subs = &report.subsystems;
    let mut results = Vec::new();

    let mut f = Vec::new();
    if !(report.max_filter_residual < criteria.filter_identity) {
        f.push(format!("max |g - N theta| = {:e}", report.max_filter_residual));
    }
    if !(report.max_moment_residual < criteria.filter_identity) {
        f.push(format!("max |G - Q theta| = {:e}", report.max_moment_residual));
    }
    results.push(outcome(
        "filter_identity",
        f,
        format!("max residuals {:e} and {:e}", report.max_filter_residual, report.max_moment_residual),
    ));

    let mut f = Vec::new();
    if !(report.min_lambda_q >= -criteria.psd_tolerance) {
        f.push(format!("lambda_min(Q) reached {:e}", report.min_lambda_q));
    }
    for s in subs {
        if let Some(v) = s.min_lambda_q_after_detection {
            if !(v > 0.0) {
                f.push(format!("Q lost definiteness after detection of subsystem {}", s.label));
            }
        }
        for (side, margin) in [("lower", s.sandwich_lower_margin), ("upper", s.sandwich_upper_margin)] {
            if let Some(m) = margin {
                if !(m >= -criteria.sandwich_tolerance) {
                    f.push(format!("{side} sandwich bound of subsystem {} off by {m:e}", s.label));
                }
            }
        }
    }
    results.push(outcome("gram_bounds", f, format!("min lambda_min(Q) = {:e}", report.min_lambda_q)));

    let mut f = Vec::new();
    for s in subs {
        match (s.detected_at, s.sigma_at_detection) {
            (None, _) => f.push(format!("IIE not achieved for subsystem {}", s.label)),
            (Some(t), Some(sigma)) if sigma != s.label => {
                f.push(format!("subsystem {} detected at t = {t} while {sigma} was active", s.label))
            }
            _ => {}
        }
    }
    let times: Vec<String> = subs
        .iter()
        .map(|s| s.detected_at.map_or("-".into(), |t| format!("{t}")))
        .collect();
    results.push(outcome("iie_detection", f, format!("detected at {}", times.join(", "))));

    let mut f = Vec::new();
    for s in subs {
        if let Some(margin) = s.gain_margin {
            if margin < 0.0 {
                f.push(format!("gain condition violated for subsystem {} (margin {margin:e})", s.label));
            }
        }
    }
    results.push(outcome("gain_condition", f, "k_sw lambda_min(S_Q) >= target rate".into()));

    let mut f = Vec::new();
    for s in subs {
        if s.max_lyapunov_increase > criteria.lyapunov_relative {
            f.push(format!(
                "V of subsystem {} increased on {} steps (max {:e} of max V)",
                s.label, s.lyapunov_increases, s.max_lyapunov_increase
            ));
        }
        if s.uniform_bound_violations > 0 {
            f.push(format!("subsystem {} left the uniform bound {} times", s.label, s.uniform_bound_violations));
        }
    }
    results.push(outcome("lyapunov", f, "V non-increasing for every subsystem".into()));

    let mut f = Vec::new();
    for s in subs {
        if s.envelope_violations > 0 {
            f.push(format!(
                "envelope violated for subsystem {} at t = {}",
                s.label,
                s.first_envelope_violation.unwrap_or(f64::NAN)
            ));
        }
    }
    results.push(outcome("envelope", f, "no envelope crossings".into()));

    let mut f = Vec::new();
    for s in subs {
        match (s.fitted_rate, s.gamma_2) {
            (Some(rate), Some(g2)) if rate < criteria.rate_factor * g2 => {
                f.push(format!("subsystem {} decays at {rate:.4} < {:.4}", s.label, criteria.rate_factor * g2))
            }
            (None, _) if s.detected_at.is_some() => f.push(format!("no decay fit for subsystem {}", s.label)),
            _ => {}
        }
    }
    results.push(outcome("decay_rate", f, "fitted rates meet the bound".into()));

    let mut f = Vec::new();
    for s in subs {
        if !(s.final_error < criteria.final_error_ratio * s.initial_error) {
            f.push(format!(
                "subsystem {} final error {:e} vs initial {:e}",
                s.label, s.final_error, s.initial_error
            ));
        }
    }
    results.push(outcome("final_error", f, "final errors below the target ratio".into()));

    let mut f = Vec::new();
    let mut resolved = 0;
    for s in subs {
        for phase in &s.inactive_phases {
            if phase.error_start <= criteria.floor {
                continue;
            }
            resolved += 1;
            if !(phase.error_end < phase.error_start) {
                f.push(format!(
                    "subsystem {} error did not decrease over [{}, {}]",
                    s.label, phase.start, phase.end
                ));
            }
        }
    }
    results.push(outcome(
        "inactive_learning",
        f,
        format!("{resolved} inactive phases above the floor, all decreasing"),
    ));

    CheckOutcome { results }
}

/// Plain notation for moderate magnitudes, scientific otherwise. Both are
/// shortest round-trip representations.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-3..1e6).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("none".into(), format_float)
}

impl RunReport {
    /// `key: value` lines, followed by the check results.
    pub fn to_text(&self, checks: &CheckOutcome) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}: {v}");
        };
        line("scenario", self.scenario.clone());
        line("seed", self.seed.to_string());
        line("steps", self.steps.to_string());
        line("dt", format_float(self.dt));
        line("t_end", format_float(self.t_end));
        line("wall_time_s", format!("{:.3}", self.wall_time));
        line("max_filter_residual", format_float(self.max_filter_residual));
        line("max_moment_residual", format_float(self.max_moment_residual));
        line("min_lambda_min_q", format_float(self.min_lambda_q));
        for sub in &self.subsystems {
            let p = format!("subsystem_{}", sub.label);
            let mut kv = |k: &str, v: String| line(&format!("{p}.{k}"), v);
            kv("detected_at", opt(sub.detected_at));
            kv("sigma_at_detection", sub.sigma_at_detection.map_or("none".into(), |v| v.to_string()));
            kv("lambda_min_snapshot", opt(sub.lambda_min_snapshot));
            kv("k_sw", format_float(sub.k_sw));
            kv("gain_margin", opt(sub.gain_margin));
            kv("initial_error", format_float(sub.initial_error));
            kv("error_at_detection", opt(sub.error_at_detection));
            kv("final_error", format_float(sub.final_error));
            kv("fitted_rate", opt(sub.fitted_rate));
            kv("fit_samples", sub.fit_samples.to_string());
            kv("gamma_1", format_float(sub.gamma_1));
            kv("gamma_2", opt(sub.gamma_2));
            kv("envelope_checked", sub.envelope_checked.to_string());
            kv("envelope_violations", sub.envelope_violations.to_string());
            kv("first_envelope_violation", opt(sub.first_envelope_violation));
            kv("envelope_below_floor", sub.envelope_below_floor.to_string());
            kv("uniform_bound_violations", sub.uniform_bound_violations.to_string());
            kv("lyapunov_increases", sub.lyapunov_increases.to_string());
            kv("max_lyapunov_increase", format_float(sub.max_lyapunov_increase));
            kv("min_lambda_q_after_detection", opt(sub.min_lambda_q_after_detection));
            kv("sandwich_lower_margin", opt(sub.sandwich_lower_margin));
            kv("sandwich_upper_margin", opt(sub.sandwich_upper_margin));
            kv("inactive_phases", sub.inactive_phases.len().to_string());
        }
        for w in &self.warnings {
            line("warning", w.clone());
        }
        for r in &checks.results {
            line(
                &format!("check.{}", r.name),
                format!("{} ({})", if r.passed { "pass" } else { "fail" }, r.detail),
            );
        }
        line("result", if checks.all_passed() { "pass" } else { "fail" }.into());
        s
    }
}
