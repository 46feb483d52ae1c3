//! Ground-truth switched LTI plant `ẋ = A_σ x + B_σ u` under a known
//! switching schedule.
//!
//! Subsystem indices are zero-based throughout the library. Scenario files,
//! CSV traces and reports use one-based labels.

use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, Error, Result};
use crate::linalg::all_finite_vec;
use crate::regressor::{pack_params, Dimensions, ParamVector};

/// Relative tolerance (in units of `dt`) used when matching event times to
/// the sample grid.
pub const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Subsystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchedPlant {
    dims: Dimensions,
    subsystems: Vec<Subsystem>,
    true_params: Vec<ParamVector>,
}

impl SwitchedPlant {
    pub fn new(dims: Dimensions, subsystems: Vec<Subsystem>) -> Result<Self> {
        if subsystems.len() != dims.subsystems() {
            return Err(mismatch("subsystem count", dims.subsystems(), subsystems.len()));
        }
        let true_params = subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| pack_params(&s.a, &s.b, &dims).map(|p| p.with_subsystem(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims,
            subsystems,
            true_params,
        })
    }

    pub fn dims(&self) -> &Dimensions {
        &self.dims
    }

    pub fn subsystem(&self, i: usize) -> Result<&Subsystem> {
        self.dims.check_subsystem(i)?;
        Ok(&self.subsystems[i])
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    /// `θ_i = [vec(A_iᵀ); vec(B_iᵀ)]`.
    pub fn true_params(&self, i: usize) -> Result<&ParamVector> {
        self.dims.check_subsystem(i)?;
        Ok(&self.true_params[i])
    }

    /// `A_i x + B_i u`.
    pub fn derivative(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let s = &self.subsystems[i];
        &s.a * x + &s.b * u
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub subsystem: usize,
}

/// Piecewise-constant, right-continuous switching signal.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingSchedule {
    t0: f64,
    initial: usize,
    events: Vec<SwitchEvent>,
}

impl SwitchingSchedule {
    pub fn new(t0: f64, initial: usize, events: Vec<SwitchEvent>, subsystems: usize) -> Result<Self> {
        if initial >= subsystems {
            return Err(Error::IndexOutOfRange {
                index: initial,
                count: subsystems,
            });
        }
        let mut prev_time = t0;
        let mut prev_index = initial;
        for e in &events {
            if e.subsystem >= subsystems {
                return Err(Error::IndexOutOfRange {
                    index: e.subsystem,
                    count: subsystems,
                });
            }
            if !(e.time > prev_time) {
                return Err(Error::InvalidSchedule(format!(
                    "event times must be strictly increasing and after t0 (t = {} follows {})",
                    e.time, prev_time
                )));
            }
            if e.subsystem == prev_index {
                return Err(Error::InvalidSchedule(format!(
                    "event at t = {} does not change the active subsystem",
                    e.time
                )));
            }
            prev_time = e.time;
            prev_index = e.subsystem;
        }
        Ok(Self { t0, initial, events })
    }

    /// Cycles through `pattern`, holding each entry for `dwell` seconds, up to
    /// (but excluding) `t_end`.
    pub fn periodic(t0: f64, pattern: &[usize], dwell: f64, t_end: f64, subsystems: usize) -> Result<Self> {
        if pattern.is_empty() {
            return Err(Error::InvalidSchedule("periodic pattern is empty".into()));
        }
        if !(dwell > 0.0) {
            return Err(Error::NonPositive {
                what: "dwell time",
                value: dwell,
            });
        }
        let mut events = Vec::new();
        let mut k = 1usize;
        loop {
            let time = t0 + k as f64 * dwell;
            if time >= t_end {
                break;
            }
            let next = pattern[k % pattern.len()];
            let current = pattern[(k - 1) % pattern.len()];
            if next != current {
                events.push(SwitchEvent { time, subsystem: next });
            }
            k += 1;
        }
        Self::new(t0, pattern[0], events, subsystems)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn events(&self) -> &[SwitchEvent] {
        &self.events
    }

    /// Active subsystem at time `t` (right-continuous: `σ(t_k)` is the new index).
    pub fn sigma_at(&self, t: f64) -> Result<usize> {
        if t < self.t0 {
            return Err(Error::BeforeStart { t, t0: self.t0 });
        }
        let k = self.events.partition_point(|e| e.time <= t);
        Ok(if k == 0 { self.initial } else { self.events[k - 1].subsystem })
    }

    /// Verifies that every event lies on the grid `t0 + k dt`.
    pub fn check_grid(&self, dt: f64) -> Result<()> {
        self.event_steps(dt).map(|_| ())
    }

    /// Grid index of every event, `(step, incoming subsystem)`.
    pub fn event_steps(&self, dt: f64) -> Result<Vec<(usize, usize)>> {
        self.events
            .iter()
            .map(|e| {
                grid_index(e.time, self.t0, dt)
                    .map(|step| (step, e.subsystem))
                    .ok_or(Error::OffGridEvent { time: e.time, dt })
            })
            .collect()
    }
}

/// Index `k` with `time = t0 + k dt`, or `None` if `time` is off the grid or
/// before `t0`.
pub fn grid_index(time: f64, t0: f64, dt: f64) -> Option<usize> {
    let ratio = (time - t0) / dt;
    let step = ratio.round();
    if step < 0.0 || (ratio - step).abs() > GRID_TOLERANCE * ratio.abs().max(1.0) {
        return None;
    }
    Some(step as usize)
}

/// One sinusoidal component `amplitude · sin(frequency · t + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tone {
    pub amplitude: f64,
    /// rad/s
    pub frequency: f64,
    pub phase: f64,
}

/// Exogenous input `u(t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ExcitationInput {
    Zero { channels: usize },
    Constant { value: DVector<f64> },
    /// One list of tones per input channel.
    Multisine { channels: Vec<Vec<Tone>> },
    /// `(start time, value)` pairs in increasing time order; the first value
    /// also applies before its start time.
    Piecewise { segments: Vec<(f64, DVector<f64>)> },
}

impl ExcitationInput {
    /// Per-channel multisine with `⌈p/2⌉` distinct frequencies, which is
    /// enough spectral content to excite a `p`-dimensional regressor.
    pub fn default_multisine(dims: &Dimensions) -> Self {
        const FREQUENCIES: [f64; 12] = [1.0, 3.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0];
        const AMPLITUDES: [f64; 3] = [1.0, 0.5, 0.3];
        let tones = dims.param_len().div_ceil(2);
        let channels = (0..dims.inputs())
            .map(|c| {
                (0..tones)
                    .map(|k| Tone {
                        amplitude: *AMPLITUDES.get(k).unwrap_or(&0.2),
                        frequency: FREQUENCIES.get(k).copied().unwrap_or(2.0 * k as f64 + 1.0),
                        phase: 0.7 * c as f64,
                    })
                    .collect()
            })
            .collect();
        ExcitationInput::Multisine { channels }
    }

    pub fn channels(&self) -> usize {
        match self {
            ExcitationInput::Zero { channels } => *channels,
            ExcitationInput::Constant { value } => value.len(),
            ExcitationInput::Multisine { channels } => channels.len(),
            ExcitationInput::Piecewise { segments } => segments.first().map_or(0, |(_, v)| v.len()),
        }
    }

    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        if self.channels() != dims.inputs() {
            return Err(mismatch("input channels", dims.inputs(), self.channels()));
        }
        if let ExcitationInput::Piecewise { segments } = self {
            if segments.is_empty() {
                return Err(Error::InvalidInput("piecewise input needs at least one segment".into()));
            }
            for w in segments.windows(2) {
                if !(w[1].0 > w[0].0) {
                    return Err(Error::InvalidInput("piecewise segment times must increase".into()));
                }
                if w[1].1.len() != w[0].1.len() {
                    return Err(Error::InvalidInput("piecewise segments differ in width".into()));
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, t: f64) -> DVector<f64> {
        match self {
            ExcitationInput::Zero { channels } => DVector::zeros(*channels),
            ExcitationInput::Constant { value } => value.clone(),
            ExcitationInput::Multisine { channels } => DVector::from_iterator(
                channels.len(),
                channels.iter().map(|tones| {
                    tones
                        .iter()
                        .map(|tone| tone.amplitude * (tone.frequency * t + tone.phase).sin())
                        .sum::<f64>()
                }),
            ),
            ExcitationInput::Piecewise { segments } => {
                let k = segments.partition_point(|(start, _)| *start <= t);
                segments[k.saturating_sub(1)].1.clone()
            }
        }
    }

    /// Upper bound on `|u_c(t)|` over all channels and times.
    pub fn bound(&self) -> f64 {
        match self {
            ExcitationInput::Zero { .. } => 0.0,
            ExcitationInput::Constant { value } => value.amax(),
            ExcitationInput::Multisine { channels } => channels
                .iter()
                .map(|tones| tones.iter().map(|t| t.amplitude.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            ExcitationInput::Piecewise { segments } => segments.iter().map(|(_, v)| v.amax()).fold(0.0, f64::max),
        }
    }
}

/// States and inputs at the four RK4 stage points of one step. Downstream
/// filters reuse these so the plant and filter cascade is one RK4 system.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSamples {
    pub times: [f64; 4],
    pub states: [DVector<f64>; 4],
    pub inputs: [DVector<f64>; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantStep {
    pub next: DVector<f64>,
    pub active: usize,
    pub stages: StageSamples,
}

/// Classical RK4 step of `ẋ = A_σ x + B_σ u(t)` with `σ` constant over
/// `[t, t + dt)`.
pub fn integrate_plant_step(
    plant: &SwitchedPlant,
    schedule: &SwitchingSchedule,
    input: &ExcitationInput,
    t: f64,
    x: &DVector<f64>,
    dt: f64,
) -> Result<PlantStep> {
    if !(dt > 0.0) {
        return Err(Error::NonPositive { what: "dt", value: dt });
    }
    if x.len() != plant.dims().states() {
        return Err(mismatch("state vector", plant.dims().states(), x.len()));
    }
    let slack = GRID_TOLERANCE * dt;
    if let Some(e) = schedule
        .events()
        .iter()
        .find(|e| e.time > t + slack && e.time < t + dt - slack)
    {
        return Err(Error::EventInsideStep {
            time: e.time,
            start: t,
            end: t + dt,
        });
    }
    // the midpoint is unambiguous once no event lies inside the step
    let active = schedule.sigma_at(t + 0.5 * dt)?;
    Ok(rk4_plant(plant, active, input, t, x, dt))
}

pub(crate) fn rk4_plant(
    plant: &SwitchedPlant,
    active: usize,
    input: &ExcitationInput,
    t: f64,
    x: &DVector<f64>,
    dt: f64,
) -> PlantStep {
    let half = 0.5 * dt;
    let u1 = input.evaluate(t);
    let u2 = input.evaluate(t + half);
    let u4 = input.evaluate(t + dt);

    let k1 = plant.derivative(active, x, &u1);
    let x2 = x + &k1 * half;
    let k2 = plant.derivative(active, &x2, &u2);
    let x3 = x + &k2 * half;
    let k3 = plant.derivative(active, &x3, &u2);
    let x4 = x + &k3 * dt;
    let k4 = plant.derivative(active, &x4, &u4);
    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);

    PlantStep {
        next,
        active,
        stages: StageSamples {
            times: [t, t + half, t + half, t + dt],
            states: [x.clone(), x2, x3, x4],
            inputs: [u1, u2.clone(), u2, u4],
        },
    }
}

/// Uniformly sampled plant trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub sigma: Vec<usize>,
    /// True `ẋ` at each sample. Only tests read this; the identification
    /// path never does.
    pub xdot_oracle: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Number of grid steps covering `[t0, t_end]`.
pub fn step_count(t0: f64, t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::NonPositive { what: "dt", value: dt });
    }
    if !(t_end > t0) {
        return Err(Error::InvalidSchedule(format!("t_end ({t_end}) must exceed t0 ({t0})")));
    }
    Ok(((t_end - t0) / dt * (1.0 + 1e-12)).floor() as usize)
}

pub fn simulate(
    plant: &SwitchedPlant,
    schedule: &SwitchingSchedule,
    input: &ExcitationInput,
    x0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let dims = plant.dims();
    if x0.len() != dims.states() {
        return Err(mismatch("initial state", dims.states(), x0.len()));
    }
    input.validate(dims)?;
    let steps = step_count(schedule.t0(), t_end, dt)?;
    let switches = schedule.event_steps(dt)?;

    let mut traj = Trajectory {
        dt,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        sigma: Vec::with_capacity(steps + 1),
        xdot_oracle: Vec::with_capacity(steps + 1),
    };
    let mut x = x0.clone();
    let mut active = schedule.initial();
    let mut next_switch = 0usize;
    for k in 0..=steps {
        let t = schedule.t0() + k as f64 * dt;
        while next_switch < switches.len() && switches[next_switch].0 <= k {
            active = switches[next_switch].1;
            next_switch += 1;
        }
        let u = input.evaluate(t);
        traj.xdot_oracle.push(plant.derivative(active, &x, &u));
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.inputs.push(u);
        traj.sigma.push(active);
        if k == steps {
            break;
        }
        let step = rk4_plant(plant, active, input, t, &x, dt);
        if !all_finite_vec(&step.next) {
            return Err(Error::NonFinite {
                what: "plant state".into(),
                t: t + dt,
            });
        }
        x = step.next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::{build_regressor, predict_derivative};
    use approx::assert_abs_diff_eq;

    fn scalar_plant(a: f64, b: f64) -> SwitchedPlant {
        let dims = Dimensions::new(1, 1, 1).unwrap();
        SwitchedPlant::new(
            dims,
            vec![Subsystem {
                a: DMatrix::from_element(1, 1, a),
                b: DMatrix::from_element(1, 1, b),
            }],
        )
        .unwrap()
    }

    fn two_subsystem_plant() -> SwitchedPlant {
        let dims = Dimensions::new(2, 1, 2).unwrap();
        SwitchedPlant::new(
            dims,
            vec![
                Subsystem {
                    a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
                    b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
                },
                Subsystem {
                    a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]),
                    b: DMatrix::from_row_slice(2, 1, &[0.0, 2.0]),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn sigma_is_right_continuous() {
        let s = SwitchingSchedule::new(
            0.0,
            0,
            vec![
                SwitchEvent { time: 2.0, subsystem: 1 },
                SwitchEvent { time: 5.0, subsystem: 0 },
            ],
            2,
        )
        .unwrap();
        assert_eq!(s.sigma_at(0.0).unwrap(), 0);
        assert_eq!(s.sigma_at(1.999).unwrap(), 0);
        assert_eq!(s.sigma_at(2.0).unwrap(), 1);
        assert_eq!(s.sigma_at(4.999).unwrap(), 1);
        assert_eq!(s.sigma_at(5.0).unwrap(), 0);
        assert!(matches!(s.sigma_at(-0.1), Err(Error::BeforeStart { .. })));

        let empty = SwitchingSchedule::new(0.0, 1, vec![], 2).unwrap();
        assert_eq!(empty.sigma_at(123.0).unwrap(), 1);
    }

    #[test]
    fn schedule_validation() {
        let ev = |time, subsystem| SwitchEvent { time, subsystem };
        assert!(SwitchingSchedule::new(0.0, 0, vec![ev(1.0, 0)], 2).is_err());
        assert!(SwitchingSchedule::new(0.0, 0, vec![ev(2.0, 1), ev(1.0, 0)], 2).is_err());
        assert!(SwitchingSchedule::new(0.0, 0, vec![ev(0.0, 1)], 2).is_err());
        assert!(SwitchingSchedule::new(0.0, 0, vec![ev(1.0, 2)], 2).is_err());
        assert!(SwitchingSchedule::new(0.0, 3, vec![], 2).is_err());

        let s = SwitchingSchedule::new(0.0, 0, vec![ev(0.0015, 1)], 2).unwrap();
        assert!(matches!(s.check_grid(1e-3), Err(Error::OffGridEvent { .. })));
        let s = SwitchingSchedule::new(0.0, 0, vec![ev(0.002, 1)], 2).unwrap();
        assert_eq!(s.event_steps(1e-3).unwrap(), vec![(2, 1)]);
    }

    #[test]
    fn periodic_schedule_alternates() {
        let s = SwitchingSchedule::periodic(0.0, &[0, 1], 2.0, 10.0, 2).unwrap();
        let times: Vec<f64> = s.events().iter().map(|e| e.time).collect();
        assert_eq!(times, vec![2.0, 4.0, 6.0, 8.0]);
        assert_eq!(s.sigma_at(2.0).unwrap(), 1);
        assert_eq!(s.sigma_at(4.5).unwrap(), 0);
        // total variation equals the number of events
        let mut changes = 0;
        let mut prev = s.sigma_at(0.0).unwrap();
        for k in 1..10_000 {
            let cur = s.sigma_at(k as f64 * 1e-3).unwrap();
            if cur != prev {
                changes += 1;
            }
            prev = cur;
        }
        assert_eq!(changes, 4);
    }

    #[test]
    fn zero_dynamics_step_is_identity() {
        let plant = scalar_plant(0.0, 0.0);
        let sched = SwitchingSchedule::new(0.0, 0, vec![], 1).unwrap();
        let input = ExcitationInput::Constant {
            value: DVector::from_element(1, 3.0),
        };
        let x = DVector::from_element(1, 1.7);
        let step = integrate_plant_step(&plant, &sched, &input, 0.0, &x, 0.1).unwrap();
        assert_eq!(step.next, x);
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let plant = scalar_plant(-1.0, 0.0);
        let sched = SwitchingSchedule::new(0.0, 0, vec![], 1).unwrap();
        let input = ExcitationInput::Zero { channels: 1 };
        let step = integrate_plant_step(&plant, &sched, &input, 0.0, &DVector::from_element(1, 1.0), 0.01).unwrap();
        assert!((step.next[0] - (-0.01f64).exp()).abs() < 1e-10);
        assert_abs_diff_eq!(step.next[0], 0.990_049_83, epsilon = 1e-8);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let plant = scalar_plant(-1.0, 0.0);
        let sched = SwitchingSchedule::new(0.0, 0, vec![], 1).unwrap();
        let input = ExcitationInput::Zero { channels: 1 };
        let x0 = DVector::from_element(1, 1.0);
        let error = |dt: f64| {
            let traj = simulate(&plant, &sched, &input, &x0, 2.0, dt).unwrap();
            (traj.states.last().unwrap()[0] - (-2.0f64).exp()).abs()
        };
        let ratio = error(0.2) / error(0.1);
        assert!((8.0..32.0).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn oscillator_returns_after_full_period() {
        let dims = Dimensions::new(2, 1, 1).unwrap();
        let plant = SwitchedPlant::new(
            dims,
            vec![Subsystem {
                a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
                b: DMatrix::zeros(2, 1),
            }],
        )
        .unwrap();
        let sched = SwitchingSchedule::new(0.0, 0, vec![], 1).unwrap();
        let input = ExcitationInput::Zero { channels: 1 };
        let dt = 1e-3;
        let steps = (2.0 * std::f64::consts::PI / dt).round() as usize;
        let mut x = DVector::from_vec(vec![1.0, 0.0]);
        for k in 0..steps {
            x = integrate_plant_step(&plant, &sched, &input, k as f64 * dt, &x, dt).unwrap().next;
        }
        // rotate back the sub-step residual of the period
        let residual = steps as f64 * dt - 2.0 * std::f64::consts::PI;
        let expected = DVector::from_vec(vec![residual.cos(), -residual.sin()]);
        assert!((x - expected).amax() < 1e-6);
    }

    #[test]
    fn step_rejects_event_inside_interval() {
        let plant = two_subsystem_plant();
        let sched = SwitchingSchedule::new(0.0, 0, vec![SwitchEvent { time: 0.0015, subsystem: 1 }], 2).unwrap();
        let input = ExcitationInput::Zero { channels: 1 };
        let err = integrate_plant_step(&plant, &sched, &input, 0.001, &DVector::zeros(2), 0.001).unwrap_err();
        assert!(matches!(err, Error::EventInsideStep { .. }));
        // an event at the start of the step selects the new subsystem
        let sched = SwitchingSchedule::new(0.0, 0, vec![SwitchEvent { time: 0.002, subsystem: 1 }], 2).unwrap();
        let step = integrate_plant_step(&plant, &sched, &input, 0.002, &DVector::zeros(2), 0.001).unwrap();
        assert_eq!(step.active, 1);
    }

    #[test]
    fn zero_input_zero_state_stays_zero() {
        let plant = two_subsystem_plant();
        let sched = SwitchingSchedule::periodic(0.0, &[0, 1], 0.5, 3.0, 2).unwrap();
        let traj = simulate(&plant, &sched, &ExcitationInput::Zero { channels: 1 }, &DVector::zeros(2), 3.0, 1e-3).unwrap();
        assert!(traj.states.iter().all(|x| x.iter().all(|&v| v == 0.0)));
        assert_eq!(traj.len(), 3001);
    }

    #[test]
    fn constant_input_reaches_steady_state() {
        let dims = Dimensions::new(2, 1, 1).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let plant = SwitchedPlant::new(dims, vec![Subsystem { a: a.clone(), b: b.clone() }]).unwrap();
        let sched = SwitchingSchedule::new(0.0, 0, vec![], 1).unwrap();
        let u = DVector::from_element(1, 1.5);
        let traj = simulate(&plant, &sched, &ExcitationInput::Constant { value: u.clone() }, &DVector::zeros(2), 30.0, 1e-3).unwrap();
        let steady = -(a.try_inverse().unwrap() * b * u);
        assert!((traj.states.last().unwrap() - steady).amax() < 1e-9);
    }

    #[test]
    fn trajectory_is_continuous_and_oracle_consistent() {
        let plant = two_subsystem_plant();
        let sched = SwitchingSchedule::periodic(0.0, &[0, 1], 0.5, 3.0, 2).unwrap();
        let input = ExcitationInput::default_multisine(plant.dims());
        let traj = simulate(&plant, &sched, &input, &DVector::from_vec(vec![1.0, -1.0]), 3.0, 1e-3).unwrap();
        let dims = *plant.dims();
        for k in 0..traj.len() {
            let y = build_regressor(&traj.states[k], &traj.inputs[k], &dims).unwrap();
            let pred = predict_derivative(&y, plant.true_params(traj.sigma[k]).unwrap()).unwrap();
            assert!((pred - &traj.xdot_oracle[k]).amax() <= 1e-12);
        }
        for e in sched.events() {
            let k = (e.time / 1e-3).round() as usize;
            assert_eq!(traj.sigma[k], e.subsystem);
            // the state changes by one smooth step across the switch, no jump
            let before = (&traj.states[k] - &traj.states[k - 1]).amax();
            let after = (&traj.states[k + 1] - &traj.states[k]).amax();
            assert!(before < 1e-2 && after < 1e-2);
        }
    }

    #[test]
    fn simulate_reports_divergence() {
        let plant = scalar_plant(800.0, 0.0);
        let sched = SwitchingSchedule::new(0.0, 0, vec![], 1).unwrap();
        let err = simulate(&plant, &sched, &ExcitationInput::Zero { channels: 1 }, &DVector::from_element(1, 1.0), 10.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn input_evaluation_is_bounded() {
        let dims = Dimensions::new(2, 2, 1).unwrap();
        let input = ExcitationInput::default_multisine(&dims);
        let bound = input.bound();
        for k in 0..5000 {
            let u = input.evaluate(k as f64 * 0.013);
            assert!(u.amax() <= bound + 1e-12);
            assert_eq!(u, input.evaluate(k as f64 * 0.013));
        }
        let pw = ExcitationInput::Piecewise {
            segments: vec![(1.0, DVector::from_element(1, 2.0)), (3.0, DVector::from_element(1, -1.0))],
        };
        assert_eq!(pw.evaluate(0.0)[0], 2.0);
        assert_eq!(pw.evaluate(3.0)[0], -1.0);
        assert_eq!(pw.bound(), 2.0);
    }
}
