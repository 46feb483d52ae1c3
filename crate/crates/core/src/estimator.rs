//! Bank of per-subsystem parameter estimators.
//!
//! Each estimate follows
//!
//! ```text
//! θ̂̇_i = Γ_i (T_l + T_ll + s_i T_sw)
//! T_l  = k_l Nᵀ (g - N θ̂_i)
//! T_ll = k_ll (G - Q θ̂_i)
//! T_sw = k_sw (S_Ḡ_i - S_Q̄_i θ̂_i)
//! ```
//!
//! with `(N, g, Q, G)` taken from the live filters while `i` is active and
//! from its memory-stack slot while it is inactive. The law is linear in
//! `θ̂_i`, `θ̂̇_i = Γ_i (b - H θ̂_i)` with `H = k_l NᵀN + k_ll Q + s_i k_sw S_Q̄`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{mismatch, Error, Result};
use crate::excitation::{IieStatus, SubsystemExcitation};
use crate::filters::{FilterBankState, MemoryStacks, StackSlot};
use crate::linalg::{all_finite_vec, asymmetry, lambda_max, lambda_min, symmetrize};
use crate::regressor::Dimensions;

/// Below this norm an error trace is treated as converged to machine
/// precision by [`fit_decay_rate`] and [`check_envelope`].
pub const NUMERICAL_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct EstimatorGains {
    learning_gain: DMatrix<f64>,
    factor: DMatrix<f64>,
    k_l: f64,
    k_ll: f64,
    k_sw: f64,
    target_rate: f64,
}

impl PartialEq for EstimatorGains {
    fn eq(&self, other: &Self) -> bool {
        self.learning_gain == other.learning_gain
            && self.k_l == other.k_l
            && self.k_ll == other.k_ll
            && self.k_sw == other.k_sw
            && self.target_rate == other.target_rate
    }
}

fn positive(what: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonPositive { what, value })
    }
}

impl EstimatorGains {
    /// `learning_gain` is `Γ`; `target_rate` is the desired rate `η̄` used by
    /// the gain condition and the auto-tuning of `k_sw`.
    pub fn new(learning_gain: DMatrix<f64>, k_l: f64, k_ll: f64, k_sw: f64, target_rate: f64) -> Result<Self> {
        if !learning_gain.is_square() || asymmetry(&learning_gain) > 1e-12 * learning_gain.amax().max(1.0) {
            return Err(Error::GainNotPositiveDefinite);
        }
        if !(lambda_min(&learning_gain) > 0.0) {
            return Err(Error::GainNotPositiveDefinite);
        }
        let factor = Cholesky::new(learning_gain.clone())
            .ok_or(Error::GainNotPositiveDefinite)?
            .l();
        Ok(Self {
            learning_gain,
            factor,
            k_l: positive("k_l", k_l)?,
            k_ll: positive("k_ll", k_ll)?,
            k_sw: positive("k_sw", k_sw)?,
            target_rate: positive("target rate", target_rate)?,
        })
    }

    /// `Γ = gamma · I_p`.
    pub fn isotropic(p: usize, gamma: f64, k_l: f64, k_ll: f64, k_sw: f64, target_rate: f64) -> Result<Self> {
        Self::new(DMatrix::identity(p, p) * gamma, k_l, k_ll, k_sw, target_rate)
    }

    pub fn learning_gain(&self) -> &DMatrix<f64> {
        &self.learning_gain
    }

    pub fn k_l(&self) -> f64 {
        self.k_l
    }

    pub fn k_ll(&self) -> f64 {
        self.k_ll
    }

    pub fn k_sw(&self) -> f64 {
        self.k_sw
    }

    pub fn target_rate(&self) -> f64 {
        self.target_rate
    }

    pub fn set_switching_gain(&mut self, k_sw: f64) -> Result<()> {
        self.k_sw = positive("k_sw", k_sw)?;
        Ok(())
    }

    /// `(λ_min(Γ⁻¹), λ_max(Γ⁻¹))`.
    pub fn inverse_gain_bounds(&self) -> (f64, f64) {
        (1.0 / lambda_max(&self.learning_gain), 1.0 / lambda_min(&self.learning_gain))
    }

    fn dim(&self) -> usize {
        self.learning_gain.nrows()
    }
}

/// `(N, g, Q, G)` from either the live filters or a stack slot.
#[derive(Clone, Copy, Debug)]
pub struct FilterTerms<'a> {
    pub regressor: &'a DMatrix<f64>,
    pub derivative: &'a DVector<f64>,
    pub gram: &'a DMatrix<f64>,
    pub moment: &'a DVector<f64>,
}

impl<'a> FilterTerms<'a> {
    pub fn live(f: &'a FilterBankState) -> Self {
        Self {
            regressor: &f.regressor,
            derivative: &f.derivative,
            gram: &f.gram,
            moment: &f.moment,
        }
    }

    pub fn stored(s: &'a StackSlot) -> Self {
        Self {
            regressor: &s.regressor,
            derivative: &s.derivative,
            gram: &s.gram,
            moment: &s.moment,
        }
    }

    fn check(&self, p: usize) -> Result<()> {
        let n = self.regressor.nrows();
        if self.regressor.ncols() != p {
            return Err(mismatch("filtered regressor columns", p, self.regressor.ncols()));
        }
        if self.derivative.len() != n {
            return Err(mismatch("filtered derivative", n, self.derivative.len()));
        }
        if self.gram.shape() != (p, p) {
            return Err(mismatch("gram", format!("{p}x{p}"), format!("{}x{}", self.gram.nrows(), self.gram.ncols())));
        }
        if self.moment.len() != p {
            return Err(mismatch("moment", p, self.moment.len()));
        }
        Ok(())
    }
}

pub(crate) fn switching_snapshot(
    excitation: &SubsystemExcitation,
    subsystem: usize,
) -> Result<Option<(&DMatrix<f64>, &DVector<f64>)>> {
    if !excitation.is_latched() {
        return Ok(None);
    }
    excitation
        .snapshot()
        .map(Some)
        .ok_or(Error::MissingSnapshot { subsystem })
}

/// `T_l + T_ll + s T_sw`, without the learning gain.
fn bracket(
    theta_hat: &DVector<f64>,
    terms: &FilterTerms<'_>,
    switching: Option<(&DMatrix<f64>, &DVector<f64>)>,
    gains: &EstimatorGains,
) -> DVector<f64> {
    let residual = terms.derivative - terms.regressor * theta_hat;
    let mut out = terms.regressor.transpose() * residual * gains.k_l;
    out += (terms.moment - terms.gram * theta_hat) * gains.k_ll;
    if let Some((q_bar, g_bar)) = switching {
        out += (g_bar - q_bar * theta_hat) * gains.k_sw;
    }
    out
}

/// `H = k_l NᵀN + k_ll Q + s k_sw S_Q̄`.
fn stiffness(
    terms: &FilterTerms<'_>,
    switching: Option<(&DMatrix<f64>, &DVector<f64>)>,
    gains: &EstimatorGains,
) -> DMatrix<f64> {
    let mut h = terms.regressor.transpose() * terms.regressor * gains.k_l + terms.gram * gains.k_ll;
    if let Some((q_bar, _)) = switching {
        h += q_bar * gains.k_sw;
    }
    h
}

fn rate_checked(
    theta_hat: &DVector<f64>,
    terms: &FilterTerms<'_>,
    excitation: &SubsystemExcitation,
    gains: &EstimatorGains,
    subsystem: usize,
) -> Result<DVector<f64>> {
    let p = gains.dim();
    if theta_hat.len() != p {
        return Err(mismatch("parameter estimate", p, theta_hat.len()));
    }
    terms.check(p)?;
    let switching = switching_snapshot(excitation, subsystem)?;
    Ok(&gains.learning_gain * bracket(theta_hat, terms, switching, gains))
}

/// Update rate of the active subsystem from the live filters.
pub fn active_update_rhs(
    subsystem: usize,
    theta_hat: &DVector<f64>,
    live: FilterTerms<'_>,
    excitation: &SubsystemExcitation,
    gains: &EstimatorGains,
) -> Result<DVector<f64>> {
    rate_checked(theta_hat, &live, excitation, gains, subsystem)
}

/// Update rate of an inactive subsystem from its memory-stack slot. Zero
/// while the subsystem has never been active.
pub fn inactive_update_rhs(
    subsystem: usize,
    theta_hat: &DVector<f64>,
    slot: &StackSlot,
    excitation: &SubsystemExcitation,
    gains: &EstimatorGains,
) -> Result<DVector<f64>> {
    rate_checked(theta_hat, &FilterTerms::stored(slot), excitation, gains, subsystem)
}

/// Time discretization of the estimator flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EstimatorScheme {
    /// Exact solution of the linear flow with `H` and `b` averaged over the
    /// step. Unconditionally stable and contractive in the `Γ⁻¹` norm.
    #[default]
    Exponential,
    /// Classical RK4 with `H` and `b` interpolated linearly over the step.
    /// Only stable while `dt · ρ(Γ H)` stays below about 2.7.
    Rk4,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorBank {
    estimates: Vec<DVector<f64>>,
    gains: Vec<EstimatorGains>,
    scheme: EstimatorScheme,
    inactive_learning: bool,
}

impl EstimatorBank {
    pub fn new(dims: &Dimensions, gains: Vec<EstimatorGains>, initial: Vec<DVector<f64>>) -> Result<Self> {
        let (p, count) = (dims.param_len(), dims.subsystems());
        if gains.len() != count {
            return Err(mismatch("estimator gains", count, gains.len()));
        }
        if initial.len() != count {
            return Err(mismatch("initial estimates", count, initial.len()));
        }
        for g in &gains {
            if g.dim() != p {
                return Err(mismatch("learning gain size", p, g.dim()));
            }
        }
        for th in &initial {
            if th.len() != p {
                return Err(mismatch("initial estimate", p, th.len()));
            }
        }
        Ok(Self {
            estimates: initial,
            gains,
            scheme: EstimatorScheme::default(),
            inactive_learning: true,
        })
    }

    pub fn with_scheme(mut self, scheme: EstimatorScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Disabling inactive learning freezes every inactive estimate, which is
    /// the memoryless baseline.
    pub fn with_inactive_learning(mut self, enabled: bool) -> Self {
        self.inactive_learning = enabled;
        self
    }

    pub fn scheme(&self) -> EstimatorScheme {
        self.scheme
    }

    pub fn estimate(&self, i: usize) -> &DVector<f64> {
        &self.estimates[i]
    }

    pub fn estimates(&self) -> &[DVector<f64>] {
        &self.estimates
    }

    pub fn gains(&self, i: usize) -> &EstimatorGains {
        &self.gains[i]
    }

    pub fn gains_mut(&mut self, i: usize) -> &mut EstimatorGains {
        &mut self.gains[i]
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// Advances every estimate over `[t, t + dt]`.
    ///
    /// `before` is the filter state at `t` (after any switch handling) and
    /// `after` the state at `t + dt`. The active subsystem uses both; every
    /// other subsystem uses its constant stack slot. Updates are mutually
    /// independent, so the result does not depend on the iteration order.
    #[allow(clippy::too_many_arguments)]
    pub fn step_all(
        &mut self,
        active: usize,
        before: &FilterBankState,
        after: &FilterBankState,
        stacks: &MemoryStacks,
        iie: &IieStatus,
        dt: f64,
        t_next: f64,
    ) -> Result<()> {
        for i in 0..self.estimates.len() {
            self.step_one(i, active, before, after, stacks, iie, dt, t_next)?;
        }
        Ok(())
    }

    /// Advances a single estimate; see [`EstimatorBank::step_all`].
    #[allow(clippy::too_many_arguments)]
    pub fn step_one(
        &mut self,
        i: usize,
        active: usize,
        before: &FilterBankState,
        after: &FilterBankState,
        stacks: &MemoryStacks,
        iie: &IieStatus,
        dt: f64,
        t_next: f64,
    ) -> Result<()> {
        if i != active && !self.inactive_learning {
            return Ok(());
        }
        let gains = &self.gains[i];
        let excitation = iie.subsystem(i);
        let switching = switching_snapshot(excitation, i)?;
        let (start, end) = if i == active {
            (FilterTerms::live(before), FilterTerms::live(after))
        } else {
            let slot = FilterTerms::stored(stacks.slot(i)?);
            (slot, slot)
        };
        start.check(gains.dim())?;
        end.check(gains.dim())?;
        let next = composite_step(self.scheme, &self.estimates[i], &start, &end, switching, gains, dt);
        if !all_finite_vec(&next) {
            return Err(Error::NonFinite {
                what: format!("estimate of subsystem {}", i + 1),
                t: t_next,
            });
        }
        self.estimates[i] = next;
        Ok(())
    }
}

/// One step of the composite law over `[t, t + dt]` given the filter terms
/// at both ends and the latched switching snapshot, if any.
pub fn composite_step(
    scheme: EstimatorScheme,
    theta: &DVector<f64>,
    start: &FilterTerms<'_>,
    end: &FilterTerms<'_>,
    switching: Option<(&DMatrix<f64>, &DVector<f64>)>,
    gains: &EstimatorGains,
    dt: f64,
) -> DVector<f64> {
    match scheme {
        EstimatorScheme::Exponential => exponential_step(theta, start, end, switching, gains, dt),
        EstimatorScheme::Rk4 => rk4_step(theta, start, end, switching, gains, dt),
    }
}

fn exponential_step(
    theta: &DVector<f64>,
    start: &FilterTerms<'_>,
    end: &FilterTerms<'_>,
    switching: Option<(&DMatrix<f64>, &DVector<f64>)>,
    gains: &EstimatorGains,
    dt: f64,
) -> DVector<f64> {
    let residual = (bracket(theta, start, switching, gains) + bracket(theta, end, switching, gains)) * 0.5;
    if residual.iter().all(|&v| v == 0.0) {
        return theta.clone();
    }
    let h = (stiffness(start, switching, gains) + stiffness(end, switching, gains)) * 0.5;
    // Γ H = L (Lᵀ H L) L⁻¹ with Γ = L Lᵀ, so the flow is diagonalized by the
    // symmetric eigenproblem of Lᵀ H L.
    let l = &gains.factor;
    let mut s = l.transpose() * h * l;
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let projected = eig.eigenvectors.transpose() * (l.transpose() * residual);
    let weighted = DVector::from_iterator(
        projected.len(),
        projected
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(v, &lambda)| v * integrated_decay(lambda, dt)),
    );
    theta + l * (&eig.eigenvectors * weighted)
}

/// `∫_0^dt e^{-λτ} dτ`, accurate for tiny or slightly negative `λ`.
fn integrated_decay(lambda: f64, dt: f64) -> f64 {
    let z = lambda * dt;
    if z.abs() < 1e-8 {
        dt * (1.0 - 0.5 * z)
    } else {
        -(-z).exp_m1() / lambda
    }
}

fn rk4_step(
    theta: &DVector<f64>,
    start: &FilterTerms<'_>,
    end: &FilterTerms<'_>,
    switching: Option<(&DMatrix<f64>, &DVector<f64>)>,
    gains: &EstimatorGains,
    dt: f64,
) -> DVector<f64> {
    let gamma = &gains.learning_gain;
    let at_start = |th: &DVector<f64>| gamma * bracket(th, start, switching, gains);
    let at_end = |th: &DVector<f64>| gamma * bracket(th, end, switching, gains);
    let at_mid = |th: &DVector<f64>| (at_start(th) + at_end(th)) * 0.5;
    let k1 = at_start(theta);
    let k2 = at_mid(&(theta + &k1 * (0.5 * dt)));
    let k3 = at_mid(&(theta + &k2 * (0.5 * dt)));
    let k4 = at_end(&(theta + &k3 * dt));
    theta + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

/// `V = ½ θ̃ᵀ Γ⁻¹ θ̃`.
pub fn lyapunov_value(theta_tilde: &DVector<f64>, gains: &EstimatorGains) -> f64 {
    let chol: Cholesky<f64, Dyn> = Cholesky::new(gains.learning_gain.clone()).expect("validated at construction");
    let mut w = theta_tilde.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    0.5 * w.norm_squared()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainCondition {
    pub satisfied: bool,
    /// `k_sw λ_min(S_Q̄) - η̄`
    pub margin: f64,
}

/// Checks `k_sw λ_min(S_Q̄) ≥ η̄` for a latched subsystem.
pub fn verify_gain_condition(subsystem: usize, gains: &EstimatorGains, excitation: &SubsystemExcitation) -> Result<GainCondition> {
    let (q_bar, _) = excitation.snapshot().ok_or(Error::NotDetected { subsystem })?;
    Ok(gain_condition(gains.k_sw, lambda_min(q_bar), gains.target_rate))
}

pub fn gain_condition(k_sw: f64, lambda_min_snapshot: f64, target_rate: f64) -> GainCondition {
    let margin = k_sw * lambda_min_snapshot - target_rate;
    GainCondition {
        satisfied: margin >= 0.0,
        margin,
    }
}

/// `k_sw` that meets the gain condition with a factor-two margin.
pub fn auto_switching_gain(target_rate: f64, lambda_min_snapshot: f64) -> f64 {
    2.0 * target_rate / lambda_min_snapshot
}

/// Constants of the post-detection exponential bound
/// `‖θ̃(t)‖ ≤ γ₁ ‖θ̃(T)‖ e^{-γ₂ (t - T)}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceBounds {
    /// `λ_min(Γ⁻¹)`
    pub lambda_m: f64,
    /// `λ_max(Γ⁻¹)`
    pub lambda_big_m: f64,
    pub eta: f64,
    pub xi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_alpha: f64,
    pub gamma_beta: f64,
    pub gamma_1: f64,
    pub gamma_2: f64,
}

/// `stack_gram` is the subsystem's stored `S_Q`, which sets the inactive-phase
/// margin `η = k_ll λ_min(S_Q)`.
pub fn convergence_bounds(gains: &EstimatorGains, stack_gram: &DMatrix<f64>) -> ConvergenceBounds {
    let (lambda_m, lambda_big_m) = gains.inverse_gain_bounds();
    let eta = (gains.k_ll * lambda_min(stack_gram)).max(0.0);
    let xi = eta + gains.target_rate;
    let alpha = 2.0 * gains.target_rate / lambda_big_m;
    let beta = 2.0 * xi / lambda_big_m;
    let gamma_alpha = alpha / 2.0;
    let gamma_beta = beta / 2.0;
    ConvergenceBounds {
        lambda_m,
        lambda_big_m,
        eta,
        xi,
        alpha,
        beta,
        gamma_alpha,
        gamma_beta,
        gamma_1: (lambda_big_m / lambda_m).sqrt(),
        gamma_2: gamma_alpha.min(gamma_beta),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    /// Fitted exponential rate `-d ln‖θ̃‖ / dt`.
    pub rate: f64,
    pub samples: usize,
}

/// Least-squares slope of `ln‖θ̃‖` over `[t_detect, t_end]`, restricted to
/// the leading run of samples above [`NUMERICAL_FLOOR`].
pub fn fit_decay_rate(times: &[f64], norms: &[f64], t_detect: f64, t_end: f64) -> Result<DecayFit> {
    if times.len() != norms.len() {
        return Err(mismatch("decay series", times.len(), norms.len()));
    }
    let points: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(t, _)| **t >= t_detect && **t <= t_end)
        .take_while(|(_, v)| **v > NUMERICAL_FLOOR)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if points.len() < 2 {
        return Err(Error::InsufficientSamples(points.len()));
    }
    let count = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / count;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in &points {
        sxy += (t - mean_t) * (y - mean_y);
        sxx += (t - mean_t) * (t - mean_t);
    }
    Ok(DecayFit {
        rate: -sxy / sxx,
        samples: points.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeCheck {
    pub checked: usize,
    pub violations: usize,
    pub first_violation: Option<f64>,
    /// Samples at or below the floor that sit above the envelope. These are
    /// roundoff, not violations.
    pub below_floor: usize,
}

/// Counts samples after `t_detect` above `γ₁ ‖θ̃(T)‖ e^{-γ₂ (t - T)}`.
/// Samples already at the numerical floor cannot be resolved against the
/// envelope and are not counted.
pub fn check_envelope(times: &[f64], norms: &[f64], t_detect: f64, gamma_1: f64, gamma_2: f64) -> EnvelopeCheck {
    let mut out = EnvelopeCheck {
        checked: 0,
        violations: 0,
        first_violation: None,
        below_floor: 0,
    };
    let Some(anchor) = times.iter().position(|&t| t >= t_detect) else {
        return out;
    };
    let (t_anchor, norm_anchor) = (times[anchor], norms[anchor]);
    for (&t, &v) in times[anchor..].iter().zip(&norms[anchor..]) {
        let bound = gamma_1 * norm_anchor * (-gamma_2 * (t - t_anchor)).exp();
        let above = v > bound * (1.0 + 1e-12);
        if v <= NUMERICAL_FLOOR {
            out.below_floor += usize::from(above);
            continue;
        }
        out.checked += 1;
        if above {
            out.violations += 1;
            out.first_violation.get_or_insert(t);
        }
    }
    out
}

/// `‖θ̃(t)‖ ≤ sqrt(λ_M / λ_m) ‖θ̃(t0)‖`, valid at every time because `V` never
/// increases.
pub fn uniform_bound(gains: &EstimatorGains, initial_norm: f64) -> f64 {
    let (lm, lbig) = gains.inverse_gain_bounds();
    (lbig / lm).sqrt() * initial_norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterBankState;

    fn unit_gains(p: usize) -> EstimatorGains {
        EstimatorGains::isotropic(p, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn terms_for(theta: &DVector<f64>, regressor: DMatrix<f64>, gram: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let g = &regressor * theta;
        let moment = &gram * theta;
        (regressor, g, gram, moment)
    }

    #[test]
    fn gains_reject_bad_values() {
        assert!(matches!(
            EstimatorGains::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), 1.0, 1.0, 1.0, 1.0),
            Err(Error::GainNotPositiveDefinite)
        ));
        assert!(matches!(
            EstimatorGains::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), 1.0, 1.0, 1.0, 1.0),
            Err(Error::GainNotPositiveDefinite)
        ));
        assert!(matches!(EstimatorGains::isotropic(2, 1.0, 0.0, 1.0, 1.0, 1.0), Err(Error::NonPositive { what: "k_l", .. })));
        assert!(EstimatorGains::isotropic(2, 1.0, 1.0, 1.0, -1.0, 1.0).is_err());
        assert!(EstimatorGains::isotropic(2, 1.0, 1.0, 1.0, 1.0, 0.0).is_err());
        let mut g = unit_gains(2);
        assert!(g.set_switching_gain(0.0).is_err());
        g.set_switching_gain(3.0).unwrap();
        assert_eq!(g.k_sw(), 3.0);
    }

    #[test]
    fn scalar_active_rate_by_hand() {
        // N = 2, g = 2θ with θ = 3, θ̂ = 0, k_l = Γ = 1, Q = G = 0
        let regressor = DMatrix::from_element(1, 1, 2.0);
        let derivative = DVector::from_element(1, 6.0);
        let gram = DMatrix::zeros(1, 1);
        let moment = DVector::zeros(1);
        // only the latch flag of the status is read, so its size is irrelevant
        let status = IieStatus::new(&Dimensions::new(1, 1, 1).unwrap(), 1e-6).unwrap();
        let rate = active_update_rhs(
            0,
            &DVector::zeros(1),
            FilterTerms {
                regressor: &regressor,
                derivative: &derivative,
                gram: &gram,
                moment: &moment,
            },
            status.subsystem(0),
            &unit_gains(1),
        )
        .unwrap();
        assert_eq!(rate.as_slice(), &[12.0]);
    }

    #[test]
    fn true_parameters_are_a_fixed_point() {
        let dims = Dimensions::new(2, 1, 1).unwrap();
        let theta = DVector::from_vec(vec![0.0, 1.0, -2.0, -3.0, 0.0, 1.0]);
        let regressor = DMatrix::from_fn(2, 6, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let gram = regressor.transpose() * &regressor + DMatrix::identity(6, 6);
        let (n, g, q, m) = terms_for(&theta, regressor, gram);
        let mut status = IieStatus::new(&dims, 1e-6).unwrap();
        status.update(0, &q, &m, &DMatrix::zeros(6, 6), 0.0, false).unwrap();
        assert!(status.subsystem(0).is_latched());
        let gains = EstimatorGains::isotropic(6, 100.0, 1.0, 1.0, 5.0, 1.0).unwrap();
        let live = FilterTerms {
            regressor: &n,
            derivative: &g,
            gram: &q,
            moment: &m,
        };
        let rate = active_update_rhs(0, &theta, live, status.subsystem(0), &gains).unwrap();
        assert!(rate.amax() < 1e-12, "{rate}");

        let slot = StackSlot {
            regressor: n.clone(),
            derivative: g.clone(),
            state: DVector::zeros(2),
            gram: q.clone(),
            moment: m.clone(),
            switched_out: None,
        };
        let rate = inactive_update_rhs(0, &theta, &slot, status.subsystem(0), &gains).unwrap();
        assert!(rate.amax() < 1e-12);
    }

    #[test]
    fn zero_filters_give_zero_rate() {
        let dims = Dimensions::new(2, 1, 2).unwrap();
        let f = FilterBankState::new(dims, 0.0, &DVector::zeros(2)).unwrap();
        let stacks = MemoryStacks::new(&dims);
        let status = IieStatus::new(&dims, 1e-6).unwrap();
        let theta_hat = DVector::from_element(6, 4.2);
        let gains = unit_gains(6);
        let live = active_update_rhs(0, &theta_hat, FilterTerms::live(&f), status.subsystem(0), &gains).unwrap();
        assert!(live.iter().all(|&v| v == 0.0));
        let stored = inactive_update_rhs(1, &theta_hat, stacks.slot(1).unwrap(), status.subsystem(1), &gains).unwrap();
        assert!(stored.iter().all(|&v| v == 0.0));

        // a never-active estimate stays frozen bit for bit
        let mut bank = EstimatorBank::new(&dims, vec![gains.clone(), gains], vec![theta_hat.clone(), theta_hat.clone()]).unwrap();
        for _ in 0..10 {
            bank.step_all(0, &f, &f, &stacks, &status, 1e-3, 0.0).unwrap();
        }
        assert_eq!(bank.estimate(1), &theta_hat);
    }

    #[test]
    fn rate_rejects_wrong_sizes() {
        let dims = Dimensions::new(2, 1, 1).unwrap();
        let f = FilterBankState::new(dims, 0.0, &DVector::zeros(2)).unwrap();
        let status = IieStatus::new(&dims, 1e-6).unwrap();
        let gains = unit_gains(6);
        assert!(active_update_rhs(0, &DVector::zeros(5), FilterTerms::live(&f), status.subsystem(0), &gains).is_err());
        let small = unit_gains(4);
        assert!(active_update_rhs(0, &DVector::zeros(4), FilterTerms::live(&f), status.subsystem(0), &small).is_err());
    }

    #[test]
    fn exponential_step_matches_closed_form_for_constant_data() {
        // H constant: θ̃(t) = exp(-Γ H t) θ̃(0)
        let theta = DVector::from_vec(vec![1.0, -2.0]);
        let regressor = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let gram = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (n, g, q, m) = terms_for(&theta, regressor, gram);
        let gamma = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let gains = EstimatorGains::new(gamma.clone(), 1.0, 1.0, 1.0, 1.0).unwrap();
        let terms = FilterTerms {
            regressor: &n,
            derivative: &g,
            gram: &q,
            moment: &m,
        };
        let theta_hat = DVector::zeros(2);
        let dt = 0.37;
        let next = exponential_step(&theta_hat, &terms, &terms, None, &gains, dt);
        let h = n.transpose() * &n + &q;
        let expected = &theta + (-(&gamma * h) * dt).exp() * (&theta_hat - &theta);
        assert!((next - expected).amax() < 1e-12);
    }

    #[test]
    fn exponential_and_rk4_agree_on_mild_problem() {
        let theta = DVector::from_vec(vec![0.4, 1.0, -0.3]);
        let regressor = DMatrix::from_row_slice(2, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.5]);
        let gram = DMatrix::identity(3, 3) * 0.5;
        let (n, g, q, m) = terms_for(&theta, regressor, gram);
        let gains = unit_gains(3);
        let terms = FilterTerms {
            regressor: &n,
            derivative: &g,
            gram: &q,
            moment: &m,
        };
        let mut a = DVector::zeros(3);
        let mut b = DVector::zeros(3);
        for _ in 0..1000 {
            a = exponential_step(&a, &terms, &terms, None, &gains, 1e-3);
            b = rk4_step(&b, &terms, &terms, None, &gains, 1e-3);
        }
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn exponential_step_is_stable_where_rk4_is_not() {
        let theta = DVector::from_vec(vec![1.0, 1.0]);
        let regressor = DMatrix::zeros(1, 2);
        let gram = DMatrix::from_diagonal(&DVector::from_vec(vec![1e4, 1.0]));
        let (n, g, q, m) = terms_for(&theta, regressor, gram);
        let gains = EstimatorGains::isotropic(2, 100.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let terms = FilterTerms {
            regressor: &n,
            derivative: &g,
            gram: &q,
            moment: &m,
        };
        let mut a = DVector::zeros(2);
        let mut b = DVector::zeros(2);
        let v0 = lyapunov_value(&(&a - &theta), &gains);
        let mut prev = v0;
        for _ in 0..50 {
            a = exponential_step(&a, &terms, &terms, None, &gains, 1e-3);
            b = rk4_step(&b, &terms, &terms, None, &gains, 1e-3);
            let v = lyapunov_value(&(&a - &theta), &gains);
            assert!(v <= prev);
            prev = v;
        }
        assert!(!((&b - &theta).amax() < 1e3), "RK4 should have diverged");
    }

    #[test]
    fn lyapunov_examples() {
        let gains = unit_gains(3);
        assert_eq!(lyapunov_value(&DVector::zeros(3), &gains), 0.0);
        let tilde = DVector::from_vec(vec![1.0, 2.0, -2.0]);
        assert!((lyapunov_value(&tilde, &gains) - 4.5).abs() < 1e-15);

        let gamma = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let g = EstimatorGains::new(gamma.clone(), 1.0, 1.0, 1.0, 1.0).unwrap();
        let t = DVector::from_vec(vec![0.3, -1.1]);
        let direct = 0.5 * (t.transpose() * gamma.try_inverse().unwrap() * &t)[(0, 0)];
        let v = lyapunov_value(&t, &g);
        assert!((v - direct).abs() < 1e-14);
        let (lm, lbig) = g.inverse_gain_bounds();
        let norm2 = t.norm_squared();
        assert!(0.5 * lm * norm2 <= v + 1e-15 && v <= 0.5 * lbig * norm2 + 1e-15);
    }

    #[test]
    fn gain_condition_arithmetic() {
        let ok = gain_condition(10.0, 0.5, 1.0);
        assert!(ok.satisfied);
        assert_eq!(ok.margin, 4.0);
        let bad = gain_condition(1.0, 0.5, 1.0);
        assert!(!bad.satisfied);
        assert_eq!(bad.margin, -0.5);
        let tuned = auto_switching_gain(1.0, 1e-3);
        assert!(gain_condition(tuned, 1e-3, 1.0).margin > 0.0);

        let dims = Dimensions::new(1, 1, 1).unwrap();
        let status = IieStatus::new(&dims, 1e-6).unwrap();
        assert!(matches!(
            verify_gain_condition(0, &unit_gains(2), status.subsystem(0)),
            Err(Error::NotDetected { .. })
        ));
    }

    #[test]
    fn bounds_for_isotropic_gain() {
        let gains = EstimatorGains::isotropic(6, 100.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let b = convergence_bounds(&gains, &(DMatrix::identity(6, 6) * 0.25));
        assert!((b.gamma_1 - 1.0).abs() < 1e-12);
        assert!((b.lambda_big_m - 0.01).abs() < 1e-15);
        assert!((b.gamma_2 - 100.0).abs() < 1e-9);
        assert!((b.eta - 0.25).abs() < 1e-12);
        assert!((b.gamma_beta - 125.0).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_known_rate() {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 1e-3).collect();
        let norms: Vec<f64> = times.iter().map(|t| (-2.0 * t).exp()).collect();
        let fit = fit_decay_rate(&times, &norms, 0.0, 1.0).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-6);
        assert_eq!(fit.samples, 1001);

        // converged tail is cut at the floor
        let mut tail = norms.clone();
        for v in tail.iter_mut().skip(500) {
            *v = 0.0;
        }
        let fit = fit_decay_rate(&times, &tail, 0.0, 1.0).unwrap();
        assert_eq!(fit.samples, 500);
        assert!((fit.rate - 2.0).abs() < 1e-6);

        assert!(matches!(fit_decay_rate(&times, &vec![0.0; 1001], 0.0, 1.0), Err(Error::InsufficientSamples(0))));
    }

    #[test]
    fn envelope_counts_crossings() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.01).collect();
        let good: Vec<f64> = times.iter().map(|t| (-3.0 * t).exp()).collect();
        let c = check_envelope(&times, &good, 0.0, 1.0, 2.0);
        assert_eq!(c.violations, 0);
        assert_eq!(c.checked, 100);

        let mut bad = good.clone();
        bad[40] = 1.0;
        let c = check_envelope(&times, &bad, 0.0, 1.0, 2.0);
        assert_eq!(c.violations, 1);
        assert_eq!(c.first_violation, Some(times[40]));

        let mut plateau: Vec<f64> = times.iter().map(|t| (-50.0 * t).exp()).collect();
        for v in plateau.iter_mut().skip(60) {
            *v = 1e-11;
        }
        let c = check_envelope(&times, &plateau, 0.0, 1.0, 40.0);
        assert_eq!(c.violations, 0);
        assert!(c.below_floor > 0);
    }
}
