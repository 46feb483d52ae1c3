//! The full identification loop: plant, filters, excitation monitor and
//! estimator bank advanced together on a fixed grid.
//!
//! Each call to [`Identifier::step`] moves from sample `t_k` to `t_{k+1}`:
//!
//! 1. switch handling at `t_k` (store the outgoing filters, restore the
//!    incoming ones),
//! 2. one RK4 step of the plant,
//! 3. layer-1 then layer-2 filter steps driven by the plant's stage values,
//! 4. excitation monitor update,
//! 5. estimator steps from the filter values at both ends of the step.
//!
//! Logging is left to the caller, which reads the state after `step`.

use nalgebra::DVector;

use crate::error::{mismatch, Error, Result};
use crate::estimator::{auto_switching_gain, EstimatorBank, EstimatorGains, EstimatorScheme};
use crate::excitation::{Detection, IieStatus};
use crate::filters::{on_switch, FilterBankState, FilterGains, Layer1Stages, MemoryStacks};
use crate::linalg::all_finite_vec;
use crate::plant::{rk4_plant, step_count, ExcitationInput, PlantStep, SwitchedPlant, SwitchingSchedule};

#[derive(Clone, Debug, PartialEq)]
pub struct IdentifierOptions {
    pub filter_gains: FilterGains,
    pub eps_pd: f64,
    pub scheme: EstimatorScheme,
    pub inactive_learning: bool,
    pub refresh_snapshot: bool,
    /// Replace `k_sw` by [`auto_switching_gain`] when a subsystem is detected.
    pub auto_switching_gain: bool,
}

/// What happened during one call to [`Identifier::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Subsystem active over the step.
    pub active: usize,
    /// Set when the step started with a switch; holds the outgoing index.
    pub switched_from: Option<usize>,
    pub plant: PlantStep,
    pub layer1: Layer1Stages,
    pub detection: Option<Detection>,
}

#[derive(Clone, Debug)]
pub struct Identifier {
    plant: SwitchedPlant,
    input: ExcitationInput,
    options: IdentifierOptions,
    t0: f64,
    dt: f64,
    total_steps: usize,
    switches: Vec<(usize, usize)>,
    next_switch: usize,
    step: usize,
    active: usize,
    x: DVector<f64>,
    filters: FilterBankState,
    stacks: MemoryStacks,
    iie: IieStatus,
    bank: EstimatorBank,
}

impl Identifier {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        plant: SwitchedPlant,
        schedule: &SwitchingSchedule,
        input: ExcitationInput,
        x0: DVector<f64>,
        gains: Vec<EstimatorGains>,
        initial_estimates: Vec<DVector<f64>>,
        options: IdentifierOptions,
        dt: f64,
        t_end: f64,
    ) -> Result<Self> {
        let dims = *plant.dims();
        if x0.len() != dims.states() {
            return Err(mismatch("initial state", dims.states(), x0.len()));
        }
        if schedule.initial() >= dims.subsystems() {
            return Err(Error::IndexOutOfRange {
                index: schedule.initial(),
                count: dims.subsystems(),
            });
        }
        input.validate(&dims)?;
        let total_steps = step_count(schedule.t0(), t_end, dt)?;
        let switches = schedule.event_steps(dt)?;
        let filters = FilterBankState::new(dims, schedule.t0(), &x0)?;
        let iie = IieStatus::new(&dims, options.eps_pd)?.with_refresh(options.refresh_snapshot);
        let bank = EstimatorBank::new(&dims, gains, initial_estimates)?
            .with_scheme(options.scheme)
            .with_inactive_learning(options.inactive_learning);
        Ok(Self {
            stacks: MemoryStacks::new(&dims),
            active: schedule.initial(),
            t0: schedule.t0(),
            plant,
            input,
            options,
            dt,
            total_steps,
            switches,
            next_switch: 0,
            step: 0,
            x: x0,
            filters,
            iie,
            bank,
        })
    }

    pub fn plant(&self) -> &SwitchedPlant {
        &self.plant
    }

    pub fn input(&self) -> &ExcitationInput {
        &self.input
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Index of the current sample.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps
    }

    pub fn time(&self) -> f64 {
        self.time_of(self.step)
    }

    fn time_of(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    /// Subsystem that drove the most recent step (the initial one before
    /// the first step).
    pub fn active(&self) -> usize {
        self.active
    }

    /// Right-continuous switching signal at the current sample.
    pub fn sigma_now(&self) -> usize {
        match self.switches.get(self.next_switch) {
            Some(&(k, incoming)) if k == self.step => incoming,
            _ => self.active,
        }
    }

    pub fn filters(&self) -> &FilterBankState {
        &self.filters
    }

    pub fn stacks(&self) -> &MemoryStacks {
        &self.stacks
    }

    pub fn excitation(&self) -> &IieStatus {
        &self.iie
    }

    pub fn estimators(&self) -> &EstimatorBank {
        &self.bank
    }

    pub fn options(&self) -> &IdentifierOptions {
        &self.options
    }

    /// True if a switch happens at sample `k`.
    fn switch_at(&self, k: usize) -> Option<usize> {
        self.switches
            .get(self.next_switch)
            .filter(|(step, _)| *step == k)
            .map(|(_, incoming)| *incoming)
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.is_finished() {
            return Err(Error::InvalidSchedule(format!(
                "run already reached its final sample ({} steps)",
                self.total_steps
            )));
        }
        let t = self.time();
        let dt = self.dt;

        let mut switched_from = None;
        if let Some(incoming) = self.switch_at(self.step) {
            self.next_switch += 1;
            if incoming != self.active {
                on_switch(&mut self.filters, &mut self.stacks, self.active, incoming, t, &self.x)?;
                switched_from = Some(self.active);
                self.active = incoming;
            }
        }
        let active = self.active;
        let before = self.filters.clone();

        let plant_step = rk4_plant(&self.plant, active, &self.input, t, &self.x, dt);
        let t_next = self.time_of(self.step + 1);
        if !all_finite_vec(&plant_step.next) {
            return Err(Error::NonFinite {
                what: "plant state".into(),
                t: t_next,
            });
        }

        let layer1 = self.filters.layer1_step(&plant_step, &self.options.filter_gains, dt)?;
        self.filters.layer2_step(&layer1, &self.options.filter_gains, dt, t_next)?;

        let switching_out = self.switch_at(self.step + 1).is_some_and(|incoming| incoming != active);
        let increment = layer1.gram_increment(dt);
        let detection = self.iie.update(
            active,
            &self.filters.gram,
            &self.filters.moment,
            &increment,
            t_next,
            switching_out,
        )?;
        if let Some(d) = &detection {
            if self.options.auto_switching_gain {
                let gains = self.bank.gains_mut(d.subsystem);
                let k_sw = auto_switching_gain(gains.target_rate(), d.lambda_min);
                gains.set_switching_gain(k_sw)?;
            }
        }

        self.bank
            .step_all(active, &before, &self.filters, &self.stacks, &self.iie, dt, t_next)?;

        self.x.copy_from(&plant_step.next);
        self.step += 1;
        Ok(StepOutcome {
            active,
            switched_from,
            plant: plant_step,
            layer1,
            detection,
        })
    }
}
