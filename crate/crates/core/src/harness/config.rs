//! Scenario files.
//!
//! Scenarios are TOML documents. Every section except `[system]` and
//! `[schedule]` is optional; omitted keys take the defaults listed on the
//! corresponding struct. Subsystem indices are one-based.
//!
//! ```toml
//! name = "two-mode"
//!
//! [system]
//! states = 2
//! inputs = 1
//! x0 = [1.0, 0.0]
//!
//! [[system.subsystems]]
//! a = [[0.0, 1.0], [-2.0, -3.0]]
//! b = [[0.0], [1.0]]
//!
//! [[system.subsystems]]
//! a = [[0.0, 1.0], [-1.0, -1.0]]
//! b = [[0.0], [2.0]]
//!
//! [schedule]
//! periodic = { pattern = [1, 2], dwell = 2.0 }
//!
//! [input]
//! kind = "multisine"
//! tones = [[{ amplitude = 1.0, frequency = 1.0 }, { amplitude = 0.5, frequency = 3.0 }]]
//!
//! [estimator]
//! learning_gain = 100.0
//! k_sw = "auto"
//!
//! [run]
//! dt = 1e-3
//! t_end = 40.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::{EstimatorGains, EstimatorScheme};
use crate::filters::FilterGains;
use crate::identifier::IdentifierOptions;
use crate::plant::{grid_index, ExcitationInput, Subsystem, SwitchEvent, SwitchedPlant, SwitchingSchedule, Tone};
use crate::regressor::Dimensions;

/// One validation problem, located by its dotted field path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", list(.0))]
    Invalid(Vec<Issue>),
}

fn list(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ConfigError::Invalid(issues) => issues,
            _ => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub system: SystemConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub filters: FilterConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub variation: VariationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub states: usize,
    pub inputs: usize,
    /// Defaults to `[1, 0, ..., 0]`.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub subsystems: Vec<SubsystemConfig>,
    /// Draw the subsystems from the run seed instead of listing them.
    #[serde(default)]
    pub random: Option<RandomSystemConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemConfig {
    /// Rows of `A`.
    pub a: Vec<Vec<f64>>,
    /// Rows of `B`.
    pub b: Vec<Vec<f64>>,
}

/// Random stable subsystems with `ρ(A) ≤ spectral_radius` and every
/// eigenvalue's real part at most `-stability_margin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSystemConfig {
    pub count: usize,
    #[serde(default = "default_radius")]
    pub spectral_radius: f64,
    #[serde(default = "default_margin")]
    pub stability_margin: f64,
    /// Entries of `B` are uniform in `[-input_scale, input_scale]`.
    #[serde(default = "one")]
    pub input_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub t0: f64,
    /// Active subsystem at `t0` when `events` is used.
    #[serde(default = "one_index")]
    pub initial: usize,
    #[serde(default)]
    pub events: Vec<EventConfig>,
    #[serde(default)]
    pub periodic: Option<PeriodicConfig>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { t0: 0.0, initial: 1, events: Vec::new(), periodic: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub time: f64,
    pub subsystem: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicConfig {
    pub pattern: Vec<usize>,
    pub dwell: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InputConfig {
    /// Without `tones`, a default multisine rich enough for the regressor.
    Multisine {
        #[serde(default)]
        tones: Option<Vec<Vec<ToneConfig>>>,
    },
    Zero,
    Constant {
        value: Vec<f64>,
    },
    Piecewise {
        segments: Vec<SegmentConfig>,
    },
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig::Multisine { tones: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneConfig {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub start: f64,
    pub value: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "one")]
    pub k_f: f64,
    #[serde(default = "one")]
    pub k_s: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { k_f: 1.0, k_s: 1.0 }
    }
}

/// `Γ` as a multiple of the identity or as a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SwitchingGainSpec {
    Value(f64),
    /// Only `"auto"` is accepted.
    Keyword(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Exponential,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_learning_gain")]
    pub learning_gain: GainSpec,
    #[serde(default = "one")]
    pub k_l: f64,
    #[serde(default = "one")]
    pub k_ll: f64,
    #[serde(default = "auto")]
    pub k_sw: SwitchingGainSpec,
    #[serde(default = "one")]
    pub target_rate: f64,
    /// One vector of length `p` per subsystem; zero when omitted.
    #[serde(default)]
    pub initial_estimates: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default = "yes")]
    pub inactive_learning: bool,
    #[serde(default)]
    pub refresh_snapshot: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            learning_gain: default_learning_gain(),
            k_l: 1.0,
            k_ll: 1.0,
            k_sw: auto(),
            target_rate: 1.0,
            initial_estimates: None,
            integrator: Integrator::default(),
            inactive_learning: true,
            refresh_snapshot: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_eps_pd")]
    pub eps_pd: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Write every `log_every`-th sample to the trace.
    #[serde(default = "one_index")]
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_end: default_t_end(),
            eps_pd: default_eps_pd(),
            seed: 0,
            out_dir: None,
            log_every: 1,
        }
    }
}

/// Seeded perturbations applied on top of the nominal scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VariationConfig {
    /// Each entry of `x0` moves by a uniform draw in `[-x0_spread, x0_spread]`.
    #[serde(default)]
    pub x0_spread: f64,
    /// Same for every entry of every initial estimate.
    #[serde(default)]
    pub estimate_spread: f64,
    /// Replace every multisine phase by a uniform draw in `[0, 2π)`.
    #[serde(default)]
    pub random_phases: bool,
}

fn one() -> f64 {
    1.0
}
fn one_index() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn auto() -> SwitchingGainSpec {
    SwitchingGainSpec::Keyword("auto".into())
}
fn default_learning_gain() -> GainSpec {
    GainSpec::Scalar(100.0)
}
fn default_radius() -> f64 {
    2.0
}
fn default_margin() -> f64 {
    0.5
}
fn default_dt() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    40.0
}
fn default_eps_pd() -> f64 {
    crate::excitation::DEFAULT_EPS_PD
}

/// A validated scenario with every random draw resolved.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub plant: SwitchedPlant,
    pub schedule: SwitchingSchedule,
    pub input: ExcitationInput,
    pub x0: DVector<f64>,
    pub gains: Vec<EstimatorGains>,
    pub initial_estimates: Vec<DVector<f64>>,
    pub options: IdentifierOptions,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub log_every: usize,
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let config = ScenarioConfig::from_toml(&text)?;
    config.build()?;
    Ok(config)
}

impl ScenarioConfig {
    /// Parses without validating.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Validates every field and resolves the random draws for `run.seed`.
    /// All problems are reported together.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let mut issues = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.run.seed);
        let run = &self.run;

        if !(run.dt > 0.0 && run.dt.is_finite()) {
            push(&mut issues, "run.dt", "dt must be positive");
        }
        if !(run.t_end > self.schedule.t0 && run.t_end.is_finite()) {
            push(&mut issues, "run.t_end", "t_end must exceed schedule.t0");
        }
        if !(run.eps_pd > 0.0) {
            push(&mut issues, "run.eps_pd", "eps_pd must be positive");
        }
        if run.log_every == 0 {
            push(&mut issues, "run.log_every", "log_every must be at least 1");
        }

        let subsystems = self.build_subsystems(&mut rng, &mut issues);
        let count = subsystems.as_ref().map_or(0, |s| s.len());
        let dims = Dimensions::new(self.system.states, self.system.inputs, count.max(1));
        let dims = match dims {
            Ok(d) => d,
            Err(e) => {
                push(&mut issues, "system", e.to_string());
                return Err(ConfigError::Invalid(issues));
            }
        };
        let plant = subsystems.and_then(|subs| match SwitchedPlant::new(dims, subs) {
            Ok(p) => Some(p),
            Err(e) => {
                push(&mut issues, "system.subsystems", e.to_string());
                None
            }
        });
        let schedule = self.build_schedule(count, &mut issues);
        let filter_gains = self.build_filter_gains(&mut issues);
        let (gains, auto_sw) = self.build_estimator_gains(&dims, &mut issues);
        let mut initial_estimates = self.build_initial_estimates(&dims, &mut issues);
        let mut x0 = self.build_x0(&dims, &mut issues);
        let mut input = self.build_input(&dims, &mut issues);

        let variation = &self.variation;
        for (path, v) in [
            ("variation.x0_spread", variation.x0_spread),
            ("variation.estimate_spread", variation.estimate_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                push(&mut issues, path, "spread must be non-negative");
            }
        }

        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues));
        }
        let (Some(plant), Some(schedule), Some(filter_gains), Some(gains), Some(input_ok)) =
            (plant, schedule, filter_gains, gains, input.as_mut())
        else {
            unreachable!("every missing part records an issue");
        };

        jitter(&mut x0, variation.x0_spread, &mut rng);
        for theta in &mut initial_estimates {
            jitter(theta, variation.estimate_spread, &mut rng);
        }
        if variation.random_phases {
            if let ExcitationInput::Multisine { channels } = input_ok {
                for tone in channels.iter_mut().flatten() {
                    tone.phase = rng.random_range(0.0..std::f64::consts::TAU);
                }
            }
        }

        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| "scenario".into()),
            plant,
            schedule,
            input: input.expect("checked above"),
            x0,
            gains,
            initial_estimates,
            options: IdentifierOptions {
                filter_gains,
                eps_pd: run.eps_pd,
                scheme: match self.estimator.integrator {
                    Integrator::Exponential => EstimatorScheme::Exponential,
                    Integrator::Rk4 => EstimatorScheme::Rk4,
                },
                inactive_learning: self.estimator.inactive_learning,
                refresh_snapshot: self.estimator.refresh_snapshot,
                auto_switching_gain: auto_sw,
            },
            dt: run.dt,
            t_end: run.t_end,
            seed: run.seed,
            out_dir: run.out_dir.clone(),
            log_every: run.log_every,
        })
    }

    fn build_subsystems(&self, rng: &mut ChaCha8Rng, issues: &mut Vec<Issue>) -> Option<Vec<Subsystem>> {
        let (n, m) = (self.system.states, self.system.inputs);
        match (&self.system.random, self.system.subsystems.is_empty()) {
            (Some(_), false) => {
                push(issues, "system", "give either subsystems or random, not both");
                None
            }
            (None, true) => {
                push(issues, "system.subsystems", "at least one subsystem is required");
                None
            }
            (Some(r), true) => random_subsystems(r, n, m, rng, issues),
            (None, false) => {
                let mut out = Vec::new();
                for (j, s) in self.system.subsystems.iter().enumerate() {
                    let a = matrix(&s.a, n, n, &format!("system.subsystems[{j}].a"), issues);
                    let b = matrix(&s.b, n, m, &format!("system.subsystems[{j}].b"), issues);
                    if let (Some(a), Some(b)) = (a, b) {
                        out.push(Subsystem { a, b });
                    }
                }
                (out.len() == self.system.subsystems.len()).then_some(out)
            }
        }
    }

    fn build_schedule(&self, count: usize, issues: &mut Vec<Issue>) -> Option<SwitchingSchedule> {
        let s = &self.schedule;
        let dt = self.run.dt;
        if count == 0 {
            return None;
        }
        let index = |label: usize, path: &str, issues: &mut Vec<Issue>| -> Option<usize> {
            if label == 0 || label > count {
                push(issues, path, format!("subsystem {label} out of range 1..={count}"));
                None
            } else {
                Some(label - 1)
            }
        };
        let mut ok = true;
        let schedule = match &s.periodic {
            Some(periodic) => {
                if !s.events.is_empty() {
                    push(issues, "schedule", "give either events or periodic, not both");
                    return None;
                }
                let mut pattern = Vec::new();
                for (j, &label) in periodic.pattern.iter().enumerate() {
                    match index(label, &format!("schedule.periodic.pattern[{j}]"), issues) {
                        Some(i) => pattern.push(i),
                        None => ok = false,
                    }
                }
                if dt > 0.0 && grid_index(s.t0 + periodic.dwell, s.t0, dt).is_none() {
                    push(issues, "schedule.periodic.dwell", format!("off-grid event: dwell {} is not a multiple of dt = {dt}", periodic.dwell));
                    ok = false;
                }
                if !ok {
                    return None;
                }
                SwitchingSchedule::periodic(s.t0, &pattern, periodic.dwell, self.run.t_end, count)
                    .map_err(|e| push(issues, "schedule.periodic", e.to_string()))
                    .ok()?
            }
            None => {
                let initial = index(s.initial, "schedule.initial", issues);
                let mut events = Vec::new();
                for (j, e) in s.events.iter().enumerate() {
                    match index(e.subsystem, &format!("schedule.events[{j}].subsystem"), issues) {
                        Some(i) => events.push(SwitchEvent { time: e.time, subsystem: i }),
                        None => ok = false,
                    }
                    if dt > 0.0 && grid_index(e.time, s.t0, dt).is_none() {
                        push(issues, format!("schedule.events[{j}].time"), format!("off-grid event at t = {} (dt = {dt})", e.time));
                        ok = false;
                    }
                }
                let initial = initial?;
                if !ok {
                    return None;
                }
                SwitchingSchedule::new(s.t0, initial, events, count)
                    .map_err(|e| push(issues, "schedule.events", e.to_string()))
                    .ok()?
            }
        };
        Some(schedule)
    }

    fn build_filter_gains(&self, issues: &mut Vec<Issue>) -> Option<FilterGains> {
        let f = &self.filters;
        let mut ok = true;
        for (path, name, v) in [("filters.k_f", "k_f", f.k_f), ("filters.k_s", "k_s", f.k_s)] {
            if !(v > 0.0 && v.is_finite()) {
                push(issues, path, format!("{name} must be positive"));
                ok = false;
            }
        }
        if !ok {
            return None;
        }
        FilterGains::new(f.k_f, f.k_s).ok()
    }

    fn build_estimator_gains(&self, dims: &Dimensions, issues: &mut Vec<Issue>) -> (Option<Vec<EstimatorGains>>, bool) {
        let e = &self.estimator;
        let p = dims.param_len();
        let mut ok = true;
        for (name, v) in [("k_l", e.k_l), ("k_ll", e.k_ll), ("target_rate", e.target_rate)] {
            if !(v > 0.0 && v.is_finite()) {
                push(issues, format!("estimator.{name}"), format!("{name} must be positive"));
                ok = false;
            }
        }
        // placeholder until detection when auto-tuned; the switching term is
        // inactive before then
        let (k_sw, auto_sw) = match &e.k_sw {
            SwitchingGainSpec::Value(v) if *v > 0.0 && v.is_finite() => (*v, false),
            SwitchingGainSpec::Value(_) => {
                push(issues, "estimator.k_sw", "k_sw must be positive");
                ok = false;
                (1.0, false)
            }
            SwitchingGainSpec::Keyword(k) if k == "auto" => (1.0, true),
            SwitchingGainSpec::Keyword(k) => {
                push(issues, "estimator.k_sw", format!("expected a number or \"auto\", got \"{k}\""));
                ok = false;
                (1.0, false)
            }
        };
        let gamma = match &e.learning_gain {
            GainSpec::Scalar(g) => Some(DMatrix::identity(p, p) * *g),
            GainSpec::Matrix(rows) => matrix(rows, p, p, "estimator.learning_gain", issues),
        };
        let Some(gamma) = gamma else {
            return (None, auto_sw);
        };
        match EstimatorGains::new(gamma, 1.0, 1.0, 1.0, 1.0) {
            Err(_) => {
                push(issues, "estimator.learning_gain", "learning gain must be symmetric positive definite");
                (None, auto_sw)
            }
            Ok(g) if ok => {
                let g = EstimatorGains::new(g.learning_gain().clone(), e.k_l, e.k_ll, k_sw, e.target_rate)
                    .expect("every gain checked above");
                (Some(vec![g; dims.subsystems()]), auto_sw)
            }
            Ok(_) => (None, auto_sw),
        }
    }

    fn build_initial_estimates(&self, dims: &Dimensions, issues: &mut Vec<Issue>) -> Vec<DVector<f64>> {
        let p = dims.param_len();
        let count = dims.subsystems();
        match &self.estimator.initial_estimates {
            None => vec![DVector::zeros(p); count],
            Some(list) => {
                if list.len() != count {
                    push(issues, "estimator.initial_estimates", format!("expected {count} vectors, got {}", list.len()));
                }
                list.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        if v.len() != p {
                            push(issues, format!("estimator.initial_estimates[{j}]"), format!("expected length {p}, got {}", v.len()));
                        }
                        finite_all(v, &format!("estimator.initial_estimates[{j}]"), issues);
                        DVector::from_column_slice(v)
                    })
                    .collect()
            }
        }
    }

    fn build_x0(&self, dims: &Dimensions, issues: &mut Vec<Issue>) -> DVector<f64> {
        let n = dims.states();
        match &self.system.x0 {
            None => DVector::from_fn(n, |r, _| if r == 0 { 1.0 } else { 0.0 }),
            Some(v) => {
                if v.len() != n {
                    push(issues, "system.x0", format!("expected length {n}, got {}", v.len()));
                }
                finite_all(v, "system.x0", issues);
                DVector::from_column_slice(v)
            }
        }
    }

    fn build_input(&self, dims: &Dimensions, issues: &mut Vec<Issue>) -> Option<ExcitationInput> {
        let m = dims.inputs();
        let input = match &self.input {
            InputConfig::Multisine { tones: None } => ExcitationInput::default_multisine(dims),
            InputConfig::Multisine { tones: Some(channels) } => {
                for (c, tones) in channels.iter().enumerate() {
                    for (k, t) in tones.iter().enumerate() {
                        if !(t.amplitude.is_finite() && t.frequency.is_finite() && t.phase.is_finite()) {
                            push(issues, format!("input.tones[{c}][{k}]"), "tone parameters must be finite");
                        }
                    }
                }
                ExcitationInput::Multisine {
                    channels: channels
                        .iter()
                        .map(|tones| {
                            tones
                                .iter()
                                .map(|t| Tone {
                                    amplitude: t.amplitude,
                                    frequency: t.frequency,
                                    phase: t.phase,
                                })
                                .collect()
                        })
                        .collect(),
                }
            }
            InputConfig::Zero => ExcitationInput::Zero { channels: m },
            InputConfig::Constant { value } => {
                finite_all(value, "input.value", issues);
                ExcitationInput::Constant {
                    value: DVector::from_column_slice(value),
                }
            }
            InputConfig::Piecewise { segments } => ExcitationInput::Piecewise {
                segments: segments
                    .iter()
                    .enumerate()
                    .map(|(j, s)| {
                        finite_all(&s.value, &format!("input.segments[{j}].value"), issues);
                        (s.start, DVector::from_column_slice(&s.value))
                    })
                    .collect(),
            },
        };
        match input.validate(dims) {
            Ok(()) => Some(input),
            Err(e) => {
                push(issues, "input", e.to_string());
                None
            }
        }
    }
}

fn push(issues: &mut Vec<Issue>, path: impl Into<String>, message: impl Into<String>) {
    issues.push(Issue {
        path: path.into(),
        message: message.into(),
    });
}

fn finite_all(v: &[f64], path: &str, issues: &mut Vec<Issue>) {
    if v.iter().any(|x| !x.is_finite()) {
        push(issues, path, "entries must be finite");
    }
}

fn matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, path: &str, issues: &mut Vec<Issue>) -> Option<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        let found = rows.iter().map(Vec::len).max().unwrap_or(0);
        push(issues, path, format!("expected {nrows}x{ncols}, got {}x{found}", rows.len()));
        return None;
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        push(issues, path, "entries must be finite");
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

fn jitter(v: &mut DVector<f64>, spread: f64, rng: &mut ChaCha8Rng) {
    if spread > 0.0 {
        for x in v.iter_mut() {
            *x += rng.random_range(-spread..=spread);
        }
    }
}

/// `A = c R / ρ(R) - (c + margin) I` with `c = (cap - margin) / 2` puts every
/// eigenvalue in the disc of radius `c` centred at `-(c + margin)`.
fn random_subsystems(
    r: &RandomSystemConfig,
    n: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
    issues: &mut Vec<Issue>,
) -> Option<Vec<Subsystem>> {
    let mut ok = true;
    if r.count == 0 {
        push(issues, "system.random.count", "count must be at least 1");
        ok = false;
    }
    if !(r.stability_margin >= 0.0 && r.spectral_radius > r.stability_margin && r.spectral_radius.is_finite()) {
        push(issues, "system.random.spectral_radius", "spectral_radius must exceed stability_margin >= 0");
        ok = false;
    }
    if !(r.input_scale > 0.0 && r.input_scale.is_finite()) {
        push(issues, "system.random.input_scale", "input_scale must be positive");
        ok = false;
    }
    if !ok || n == 0 {
        return None;
    }
    let c = 0.5 * (r.spectral_radius - r.stability_margin);
    let subsystems = (0..r.count)
        .map(|_| {
            let (raw, rho) = loop {
                let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
                let rho = raw
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max);
                if rho > 1e-6 {
                    break (raw, rho);
                }
            };
            let a = raw * (c / rho) - DMatrix::identity(n, n) * (c + r.stability_margin);
            let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-r.input_scale..=r.input_scale));
            Subsystem { a, b }
        })
        .collect();
    Some(subsystems)
}
