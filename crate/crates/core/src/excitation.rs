//! Online detection of intermittent initial excitation.
//!
//! The excitation of subsystem `i` accumulated over its active windows is
//! positive definite exactly when the live second-layer gram `Q` becomes
//! positive definite while `i` is active. At that instant the monitor latches
//! `s_i = 1` and snapshots `(Q, G)`; the estimator uses the snapshot for its
//! switching term from then on.

use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, Error, Result};
use crate::filters::{FilterBankState, MemoryStacks};
use crate::linalg::{asymmetry, lambda_min};
use crate::regressor::Dimensions;

/// Maximum asymmetry accepted by [`check_pd`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Default positive-definiteness threshold on `λ_min(Q)`.
pub const DEFAULT_EPS_PD: f64 = 1e-6;

/// `1` when subsystem `i` is the active one, `0` otherwise.
pub fn indicator(active: usize, i: usize) -> u8 {
    u8::from(active == i)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdCheck {
    pub positive: bool,
    pub lambda_min: f64,
}

/// `λ_min(q) > eps_pd`, with the eigenvalue reported for logging.
pub fn check_pd(q: &DMatrix<f64>, eps_pd: f64) -> Result<PdCheck> {
    if !q.is_square() {
        return Err(mismatch("gram matrix", "square", format!("{}x{}", q.nrows(), q.ncols())));
    }
    let skew = asymmetry(q);
    if skew > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry: skew });
    }
    let lambda_min = lambda_min(q);
    Ok(PdCheck {
        positive: lambda_min > eps_pd,
        lambda_min,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub subsystem: usize,
    pub time: f64,
    pub lambda_min: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemExcitation {
    latched: bool,
    detected_at: Option<f64>,
    lambda_min_at_detection: Option<f64>,
    gram_snapshot: Option<DMatrix<f64>>,
    moment_snapshot: Option<DVector<f64>>,
    snapshot_writes: usize,
    accumulated: DMatrix<f64>,
}

impl SubsystemExcitation {
    fn new(p: usize) -> Self {
        Self {
            latched: false,
            detected_at: None,
            lambda_min_at_detection: None,
            gram_snapshot: None,
            moment_snapshot: None,
            snapshot_writes: 0,
            accumulated: DMatrix::zeros(p, p),
        }
    }

    /// `s_i`
    pub fn is_latched(&self) -> bool {
        self.latched
    }

    pub fn switching_flag(&self) -> f64 {
        if self.latched {
            1.0
        } else {
            0.0
        }
    }

    pub fn detected_at(&self) -> Option<f64> {
        self.detected_at
    }

    pub fn lambda_min_at_detection(&self) -> Option<f64> {
        self.lambda_min_at_detection
    }

    /// `(S_Q̄, S_Ḡ)` once excitation has been detected.
    pub fn snapshot(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.gram_snapshot.as_ref().zip(self.moment_snapshot.as_ref())
    }

    /// Number of times the snapshot was written (1 unless refresh is on).
    pub fn snapshot_writes(&self) -> usize {
        self.snapshot_writes
    }

    /// `∫ 𝔍_i NᵀN dτ` since `t0`.
    pub fn accumulated(&self) -> &DMatrix<f64> {
        &self.accumulated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IieStatus {
    eps_pd: f64,
    refresh_snapshot: bool,
    subsystems: Vec<SubsystemExcitation>,
}

impl IieStatus {
    pub fn new(dims: &Dimensions, eps_pd: f64) -> Result<Self> {
        if !(eps_pd > 0.0 && eps_pd.is_finite()) {
            return Err(Error::NonPositive {
                what: "eps_pd",
                value: eps_pd,
            });
        }
        Ok(Self {
            eps_pd,
            refresh_snapshot: false,
            subsystems: vec![SubsystemExcitation::new(dims.param_len()); dims.subsystems()],
        })
    }

    /// Experimental: replace the snapshot whenever the live gram of the
    /// active, already-latched subsystem is better conditioned.
    pub fn with_refresh(mut self, refresh: bool) -> Self {
        self.refresh_snapshot = refresh;
        self
    }

    pub fn eps_pd(&self) -> f64 {
        self.eps_pd
    }

    pub fn subsystem(&self, i: usize) -> &SubsystemExcitation {
        &self.subsystems[i]
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn all_latched(&self) -> bool {
        self.subsystems.iter().all(|s| s.latched)
    }

    /// Per-step update after the filters reached `t`.
    ///
    /// `increment` is `∫ NᵀN dτ` over the step just taken by `active`; only
    /// that subsystem's accumulator moves. `switching_out` marks a sample
    /// that is also a switching instant: the gram there is the `t_k⁻` value
    /// and `active` no longer owns the sample, so detection waits for its
    /// next activation.
    pub fn update(
        &mut self,
        active: usize,
        gram: &DMatrix<f64>,
        moment: &DVector<f64>,
        increment: &DMatrix<f64>,
        t: f64,
        switching_out: bool,
    ) -> Result<Option<Detection>> {
        let count = self.subsystems.len();
        let eps_pd = self.eps_pd;
        let refresh = self.refresh_snapshot;
        let entry = self
            .subsystems
            .get_mut(active)
            .ok_or(Error::IndexOutOfRange { index: active, count })?;
        entry.accumulated += increment;
        if switching_out {
            return Ok(None);
        }
        if entry.latched && !refresh {
            return Ok(None);
        }
        let check = check_pd(gram, eps_pd)?;
        if !check.positive {
            return Ok(None);
        }
        if entry.latched {
            if check.lambda_min > entry.lambda_min_at_detection.unwrap_or(f64::INFINITY) {
                entry.gram_snapshot = Some(gram.clone());
                entry.moment_snapshot = Some(moment.clone());
                entry.lambda_min_at_detection = Some(check.lambda_min);
                entry.snapshot_writes += 1;
            }
            return Ok(None);
        }
        entry.latched = true;
        entry.detected_at = Some(t);
        entry.lambda_min_at_detection = Some(check.lambda_min);
        entry.gram_snapshot = Some(gram.clone());
        entry.moment_snapshot = Some(moment.clone());
        entry.snapshot_writes += 1;
        Ok(Some(Detection {
            subsystem: active,
            time: t,
            lambda_min: check.lambda_min,
        }))
    }
}

/// Second-layer gram of subsystem `i` gated by its indicator: the live `Q`
/// while `i` is active, the frozen stack value otherwise.
pub fn gated_gram<'a>(
    i: usize,
    active: usize,
    filters: &'a FilterBankState,
    stacks: &'a MemoryStacks,
) -> Result<&'a DMatrix<f64>> {
    if i == active {
        Ok(&filters.gram)
    } else {
        Ok(&stacks.slot(i)?.gram)
    }
}

/// True iff every gram in `grams` has `λ_min > eps`. Feed it the samples of
/// one subsystem's activation windows after its detection.
pub fn persists_positive_definite<'a>(grams: impl IntoIterator<Item = &'a DMatrix<f64>>, eps: f64) -> bool {
    grams.into_iter().all(|q| lambda_min(q) > eps)
}

/// Margins of `e^{-k_s (t - t0)} N_acc ⪯ Q_i ⪯ N_acc` in Loewner order;
/// both are `≥ 0` when the bounds hold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SandwichMargins {
    pub lower: f64,
    pub upper: f64,
}

pub fn sandwich_margins(gated: &DMatrix<f64>, accumulated: &DMatrix<f64>, k_s: f64, elapsed: f64) -> SandwichMargins {
    let lower = gated - accumulated * (-k_s * elapsed).exp();
    let upper = accumulated - gated;
    SandwichMargins {
        lower: lambda_min(&lower),
        upper: lambda_min(&upper),
    }
}
