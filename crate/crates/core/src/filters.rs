//! Dual-layer low-pass filters with per-subsystem memory stacks.
//!
//! Layer 1 (reset at every switching instant from the incoming subsystem's
//! stack slot):
//!
//! ```text
//! Ṅ = -k_f N + Y(x, u)        filtered regressor      (n × p)
//! ḣ = -k_f h + x              filtered state          (n)
//! g = filtered ẋ, rebuilt from x and h without differentiation
//! ```
//!
//! Layer 2:
//!
//! ```text
//! Q̇ = -k_s Q + NᵀN            (p × p, symmetric PSD)
//! Ġ = -k_s G + Nᵀg            (p)
//! ```
//!
//! With consistent resets these satisfy `g = N θ_σ` and `G = Q θ_σ` at all
//! times. The plant, layer 1 and layer 2 form a cascade that is advanced as
//! one RK4 system: every stage reuses the plant's own stage states.

use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, Error, Result};
use crate::linalg::{all_finite_mat, all_finite_vec, symmetrize};
use crate::plant::PlantStep;
use crate::regressor::{regressor_unchecked, Dimensions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterGains {
    k_f: f64,
    k_s: f64,
}

impl FilterGains {
    pub fn new(k_f: f64, k_s: f64) -> Result<Self> {
        if !(k_f > 0.0 && k_f.is_finite()) {
            return Err(Error::NonPositive { what: "k_f", value: k_f });
        }
        if !(k_s > 0.0 && k_s.is_finite()) {
            return Err(Error::NonPositive { what: "k_s", value: k_s });
        }
        Ok(Self { k_f, k_s })
    }

    /// First-layer bandwidth (1/s).
    pub fn k_f(&self) -> f64 {
        self.k_f
    }

    /// Second-layer bandwidth (1/s).
    pub fn k_s(&self) -> f64 {
        self.k_s
    }
}

/// Values captured at the most recent reset; the derivative-free
/// reconstruction of `g` integrates forward from here.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub time: f64,
    pub state: DVector<f64>,
    pub derivative: DVector<f64>,
    pub filtered_state: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBankState {
    dims: Dimensions,
    /// `N`
    pub regressor: DMatrix<f64>,
    /// `g`
    pub derivative: DVector<f64>,
    /// `h`
    pub state: DVector<f64>,
    /// `Q`
    pub gram: DMatrix<f64>,
    /// `G`
    pub moment: DVector<f64>,
    pub anchor: Anchor,
}

/// Layer-1 values at the four RK4 stage points of the last step, consumed by
/// layer 2 and by the excitation accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer1Stages {
    pub regressors: [DMatrix<f64>; 4],
    pub derivatives: [DVector<f64>; 4],
}

const RK4_WEIGHTS: [f64; 4] = [1.0, 2.0, 2.0, 1.0];

impl Layer1Stages {
    /// RK4 quadrature of `∫ NᵀN dτ` over the step.
    pub fn gram_increment(&self, dt: f64) -> DMatrix<f64> {
        let p = self.regressors[0].ncols();
        let mut acc = DMatrix::zeros(p, p);
        for (w, n) in RK4_WEIGHTS.iter().zip(&self.regressors) {
            acc += n.transpose() * n * *w;
        }
        acc *= dt / 6.0;
        symmetrize(&mut acc);
        acc
    }
}

impl FilterBankState {
    /// All filters zero at `t0`; the anchor records `x(t0)`.
    pub fn new(dims: Dimensions, t0: f64, x0: &DVector<f64>) -> Result<Self> {
        if x0.len() != dims.states() {
            return Err(mismatch("initial state", dims.states(), x0.len()));
        }
        let (n, p) = (dims.states(), dims.param_len());
        Ok(Self {
            dims,
            regressor: DMatrix::zeros(n, p),
            derivative: DVector::zeros(n),
            state: DVector::zeros(n),
            gram: DMatrix::zeros(p, p),
            moment: DVector::zeros(p),
            anchor: Anchor {
                time: t0,
                state: x0.clone(),
                derivative: DVector::zeros(n),
                filtered_state: DVector::zeros(n),
            },
        })
    }

    pub fn dims(&self) -> &Dimensions {
        &self.dims
    }

    /// `g(t) = e^{-k_f (t - t_a)} (g_a - x_a + k_f h_a) + x(t) - k_f h(t)`,
    /// the by-parts solution of `ġ = -k_f g + ẋ` from the anchor `t_a`.
    /// Uses the current `h`, so call it with `x_now` and `t_now` matching the
    /// filter state.
    pub fn reconstruct_g(&self, x_now: &DVector<f64>, t_now: f64, gains: &FilterGains) -> Result<DVector<f64>> {
        if t_now < self.anchor.time {
            return Err(Error::BeforeStart {
                t: t_now,
                t0: self.anchor.time,
            });
        }
        if x_now.len() != self.dims.states() {
            return Err(mismatch("state vector", self.dims.states(), x_now.len()));
        }
        let k_f = gains.k_f;
        let decay = (-k_f * (t_now - self.anchor.time)).exp();
        Ok(self.anchor_offset(k_f) * decay + x_now - &self.state * k_f)
    }

    fn anchor_offset(&self, k_f: f64) -> DVector<f64> {
        &self.anchor.derivative - &self.anchor.state + &self.anchor.filtered_state * k_f
    }

    /// Advances `N` and `h` by one RK4 step driven by the plant's stage
    /// states, then rebuilds `g` at the end of the step.
    pub fn layer1_step(&mut self, step: &PlantStep, gains: &FilterGains, dt: f64) -> Result<Layer1Stages> {
        let (n, m) = (self.dims.states(), self.dims.inputs());
        let stages = &step.stages;
        let t_start = stages.times[0];
        let t_end = stages.times[3];
        if t_start < self.anchor.time {
            return Err(Error::BeforeStart {
                t: t_start,
                t0: self.anchor.time,
            });
        }
        let k_f = gains.k_f;
        let half = 0.5 * dt;

        let y: Vec<DMatrix<f64>> = (0..4)
            .map(|j| regressor_unchecked(&stages.states[j], &stages.inputs[j], n, m))
            .collect();

        let n1 = self.regressor.clone();
        let kn1 = &y[0] - &n1 * k_f;
        let n2 = &n1 + &kn1 * half;
        let kn2 = &y[1] - &n2 * k_f;
        let n3 = &n1 + &kn2 * half;
        let kn3 = &y[2] - &n3 * k_f;
        let n4 = &n1 + &kn3 * dt;
        let kn4 = &y[3] - &n4 * k_f;
        let n_next = &n1 + (&kn1 + (&kn2 + &kn3) * 2.0 + &kn4) * (dt / 6.0);

        let h1 = self.state.clone();
        let kh1 = &stages.states[0] - &h1 * k_f;
        let h2 = &h1 + &kh1 * half;
        let kh2 = &stages.states[1] - &h2 * k_f;
        let h3 = &h1 + &kh2 * half;
        let kh3 = &stages.states[2] - &h3 * k_f;
        let h4 = &h1 + &kh3 * dt;
        let kh4 = &stages.states[3] - &h4 * k_f;
        let h_next = &h1 + (&kh1 + (&kh2 + &kh3) * 2.0 + &kh4) * (dt / 6.0);

        // Stage values of g. The exponential factor is replaced by the RK4
        // stage polynomials of ẇ = -k_f w so that g - Nθ at each stage is the
        // same multiple of its step-start value as the RK4 stages of N and h.
        let offset = self.anchor_offset(k_f) * (-k_f * (t_start - self.anchor.time)).exp();
        let z = k_f * dt;
        let decay = [1.0, 1.0 - 0.5 * z, 1.0 - 0.5 * z + 0.25 * z * z, 1.0 - z + 0.5 * z * z - 0.25 * z * z * z];
        let hs = [&h1, &h2, &h3, &h4];
        let derivatives: [DVector<f64>; 4] =
            std::array::from_fn(|j| &offset * decay[j] + &stages.states[j] - hs[j] * k_f);

        if !all_finite_mat(&n_next) || !all_finite_vec(&h_next) {
            return Err(Error::NonFinite {
                what: "layer-1 filter state".into(),
                t: t_end,
            });
        }
        self.regressor = n_next;
        self.state = h_next;
        self.derivative = self.reconstruct_g(&step.next, t_end, gains)?;

        Ok(Layer1Stages {
            regressors: [n1, n2, n3, n4],
            derivatives,
        })
    }

    /// Advances `Q` and `G` by one RK4 step using the layer-1 stage values,
    /// then symmetrizes `Q`.
    pub fn layer2_step(&mut self, l1: &Layer1Stages, gains: &FilterGains, dt: f64, t_end: f64) -> Result<()> {
        let k_s = gains.k_s;
        let half = 0.5 * dt;
        let info: Vec<DMatrix<f64>> = l1.regressors.iter().map(|n| n.transpose() * n).collect();
        let cross: Vec<DVector<f64>> = l1
            .regressors
            .iter()
            .zip(&l1.derivatives)
            .map(|(n, g)| n.transpose() * g)
            .collect();

        let q1 = &self.gram;
        let kq1 = &info[0] - q1 * k_s;
        let q2 = q1 + &kq1 * half;
        let kq2 = &info[1] - &q2 * k_s;
        let q3 = q1 + &kq2 * half;
        let kq3 = &info[2] - &q3 * k_s;
        let q4 = q1 + &kq3 * dt;
        let kq4 = &info[3] - &q4 * k_s;
        let mut q_next = q1 + (&kq1 + (&kq2 + &kq3) * 2.0 + &kq4) * (dt / 6.0);
        symmetrize(&mut q_next);

        let g1 = &self.moment;
        let kg1 = &cross[0] - g1 * k_s;
        let g2 = g1 + &kg1 * half;
        let kg2 = &cross[1] - &g2 * k_s;
        let g3 = g1 + &kg2 * half;
        let kg3 = &cross[2] - &g3 * k_s;
        let g4 = g1 + &kg3 * dt;
        let kg4 = &cross[3] - &g4 * k_s;
        let g_next = g1 + (&kg1 + (&kg2 + &kg3) * 2.0 + &kg4) * (dt / 6.0);

        if !all_finite_mat(&q_next) || !all_finite_vec(&g_next) {
            return Err(Error::NonFinite {
                what: "layer-2 filter state".into(),
                t: t_end,
            });
        }
        self.gram = q_next;
        self.moment = g_next;
        Ok(())
    }
}

/// Filter values of one subsystem captured at its latest switch-out.
#[derive(Clone, Debug, PartialEq)]
pub struct StackSlot {
    pub regressor: DMatrix<f64>,
    pub derivative: DVector<f64>,
    pub state: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub moment: DVector<f64>,
    /// Time and plant state of the switch-out that wrote this slot.
    pub switched_out: Option<(f64, DVector<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryStacks {
    slots: Vec<StackSlot>,
}

impl MemoryStacks {
    pub fn new(dims: &Dimensions) -> Self {
        let (n, p) = (dims.states(), dims.param_len());
        let empty = StackSlot {
            regressor: DMatrix::zeros(n, p),
            derivative: DVector::zeros(n),
            state: DVector::zeros(n),
            gram: DMatrix::zeros(p, p),
            moment: DVector::zeros(p),
            switched_out: None,
        };
        Self {
            slots: vec![empty; dims.subsystems()],
        }
    }

    pub fn slot(&self, i: usize) -> Result<&StackSlot> {
        self.slots.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            count: self.slots.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Store-then-reset at a switching instant `t_k`: the current filter values
/// (the `t_k⁻` values) go into the outgoing subsystem's slot, the filters are
/// overwritten from the incoming subsystem's slot, and the anchor moves to
/// `(t_k, x(t_k))`.
pub fn on_switch(
    state: &mut FilterBankState,
    stacks: &mut MemoryStacks,
    outgoing: usize,
    incoming: usize,
    t_k: f64,
    x_at_tk: &DVector<f64>,
) -> Result<()> {
    let count = stacks.slots.len();
    for index in [outgoing, incoming] {
        if index >= count {
            return Err(Error::IndexOutOfRange { index, count });
        }
    }
    if outgoing == incoming {
        return Err(Error::InvalidSchedule(format!(
            "switch at t = {t_k} keeps subsystem {} active",
            outgoing + 1
        )));
    }
    if x_at_tk.len() != state.dims.states() {
        return Err(mismatch("state vector", state.dims.states(), x_at_tk.len()));
    }

    let out = &mut stacks.slots[outgoing];
    out.regressor.copy_from(&state.regressor);
    out.derivative.copy_from(&state.derivative);
    out.state.copy_from(&state.state);
    out.gram.copy_from(&state.gram);
    out.moment.copy_from(&state.moment);
    out.switched_out = Some((t_k, x_at_tk.clone()));

    let inc = &stacks.slots[incoming];
    state.regressor.copy_from(&inc.regressor);
    state.derivative.copy_from(&inc.derivative);
    state.state.copy_from(&inc.state);
    state.gram.copy_from(&inc.gram);
    state.moment.copy_from(&inc.moment);
    state.anchor = Anchor {
        time: t_k,
        state: x_at_tk.clone(),
        derivative: inc.derivative.clone(),
        filtered_state: inc.state.clone(),
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{rk4_plant, ExcitationInput, Subsystem, SwitchedPlant};

    fn gains() -> FilterGains {
        FilterGains::new(1.0, 0.5).unwrap()
    }

    #[test]
    fn gains_must_be_positive() {
        assert!(matches!(FilterGains::new(-1.0, 1.0), Err(Error::NonPositive { what: "k_f", .. })));
        assert!(matches!(FilterGains::new(1.0, 0.0), Err(Error::NonPositive { what: "k_s", .. })));
        assert!(FilterGains::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn reconstruct_at_anchor_returns_anchor_value() {
        let dims = Dimensions::new(2, 1, 1).unwrap();
        let mut f = FilterBankState::new(dims, 0.0, &DVector::zeros(2)).unwrap();
        f.anchor = Anchor {
            time: 3.0,
            state: DVector::from_vec(vec![0.4, -1.2]),
            derivative: DVector::from_vec(vec![2.0, 5.0]),
            filtered_state: DVector::from_vec(vec![0.3, 0.7]),
        };
        f.state = f.anchor.filtered_state.clone();
        let g = f.reconstruct_g(&f.anchor.state.clone(), 3.0, &gains()).unwrap();
        assert!((g - &f.anchor.derivative).amax() < 1e-15);
        assert!(matches!(
            f.reconstruct_g(&DVector::zeros(2), 2.0, &gains()),
            Err(Error::BeforeStart { .. })
        ));
    }

    #[test]
    fn zero_trajectory_keeps_filters_at_zero() {
        let dims = Dimensions::new(2, 1, 1).unwrap();
        let plant = SwitchedPlant::new(
            dims,
            vec![Subsystem {
                a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]),
                b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            }],
        )
        .unwrap();
        let input = ExcitationInput::Zero { channels: 1 };
        let mut f = FilterBankState::new(dims, 0.0, &DVector::zeros(2)).unwrap();
        let mut x = DVector::zeros(2);
        for k in 0..100 {
            let step = rk4_plant(&plant, 0, &input, k as f64 * 0.01, &x, 0.01);
            let l1 = f.layer1_step(&step, &gains(), 0.01).unwrap();
            f.layer2_step(&l1, &gains(), 0.01, step.stages.times[3]).unwrap();
            x = step.next;
        }
        assert!(f.regressor.iter().chain(f.gram.iter()).all(|&v| v == 0.0));
        assert!(f.derivative.iter().chain(f.state.iter()).chain(f.moment.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn constant_regressor_settles_to_first_order_lag_limit() {
        // n = 1, m = 1 with x ≡ 0 and u ≡ c: the U-block of N obeys Ṅ = -k_f N + c.
        let dims = Dimensions::new(1, 1, 1).unwrap();
        let plant = SwitchedPlant::new(
            dims,
            vec![Subsystem {
                a: DMatrix::zeros(1, 1),
                b: DMatrix::zeros(1, 1),
            }],
        )
        .unwrap();
        let c = 2.5;
        let k_f = 4.0;
        let g = FilterGains::new(k_f, 1.0).unwrap();
        let input = ExcitationInput::Constant {
            value: DVector::from_element(1, c),
        };
        let mut f = FilterBankState::new(dims, 0.0, &DVector::zeros(1)).unwrap();
        let dt = 1e-3;
        let steps = (10.0 / k_f / dt).round() as usize;
        let x = DVector::zeros(1);
        for k in 0..steps {
            let step = rk4_plant(&plant, 0, &input, k as f64 * dt, &x, dt);
            f.layer1_step(&step, &g, dt).unwrap();
        }
        let limit = c / k_f;
        assert!((f.regressor[(0, 1)] - limit).abs() < 1e-4 * limit);
        assert_eq!(f.regressor[(0, 0)], 0.0);
    }

    #[test]
    fn switch_into_fresh_subsystem_zeroes_filters() {
        let dims = Dimensions::new(2, 1, 3).unwrap();
        let mut f = FilterBankState::new(dims, 0.0, &DVector::zeros(2)).unwrap();
        f.regressor.fill(1.5);
        f.derivative.fill(-0.5);
        f.state.fill(0.25);
        f.gram = DMatrix::identity(6, 6);
        f.moment.fill(3.0);
        let before = f.clone();
        let mut stacks = MemoryStacks::new(&dims);
        let x = DVector::from_vec(vec![0.1, 0.2]);
        on_switch(&mut f, &mut stacks, 0, 2, 1.0, &x).unwrap();

        assert!(f.regressor.iter().chain(f.gram.iter()).all(|&v| v == 0.0));
        assert!(f.derivative.iter().chain(f.state.iter()).chain(f.moment.iter()).all(|&v| v == 0.0));
        assert_eq!(f.anchor.time, 1.0);
        assert_eq!(f.anchor.state, x);

        let slot = stacks.slot(0).unwrap();
        assert_eq!(slot.regressor, before.regressor);
        assert_eq!(slot.gram, before.gram);
        assert_eq!(slot.moment, before.moment);
        assert_eq!(slot.switched_out.as_ref().unwrap().0, 1.0);
        // untouched slot
        assert!(stacks.slot(1).unwrap().switched_out.is_none());

        // and back again restores the stored values bit for bit
        on_switch(&mut f, &mut stacks, 2, 0, 1.001, &x).unwrap();
        assert_eq!(f.regressor, before.regressor);
        assert_eq!(f.derivative, before.derivative);
        assert_eq!(f.state, before.state);
        assert_eq!(f.anchor.derivative, before.derivative);
        assert_eq!(f.anchor.filtered_state, before.state);
    }

    #[test]
    fn switch_rejects_bad_indices() {
        let dims = Dimensions::new(1, 1, 2).unwrap();
        let mut f = FilterBankState::new(dims, 0.0, &DVector::zeros(1)).unwrap();
        let mut stacks = MemoryStacks::new(&dims);
        let x = DVector::zeros(1);
        assert!(matches!(on_switch(&mut f, &mut stacks, 0, 2, 1.0, &x), Err(Error::IndexOutOfRange { .. })));
        assert!(on_switch(&mut f, &mut stacks, 1, 1, 1.0, &x).is_err());
        assert!(stacks.slot(5).is_err());
    }

    #[test]
    fn gram_increment_of_constant_regressor() {
        let n = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let l1 = Layer1Stages {
            regressors: [n.clone(), n.clone(), n.clone(), n.clone()],
            derivatives: std::array::from_fn(|_| DVector::zeros(1)),
        };
        let inc = l1.gram_increment(0.5);
        let expected = n.transpose() * &n * 0.5;
        assert!((inc - expected).amax() < 1e-15);
    }
}
