//! Human-observer detection chain: ocular loss, rod absorption, dark events,
//! the Poisson threshold rule, and the three response paradigms.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

/// Observer parameters from cornea to perceptual threshold.
///
/// `pre_retinal_transmission` is the complement of the 90-97% ocular loss;
/// it lumps media absorption and photons that miss rods into one factor.
/// `dark_event_rate` pools spontaneous rod events over the stimulus area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EyeParams {
    pub pre_retinal_transmission: f64,
    pub rod_quantum_efficiency: f64,
    pub dark_event_rate: f64,
    pub integration_window: f64,
    pub threshold_n: u32,
    pub guess_bias_right: f64,
}

impl Default for EyeParams {
    fn default() -> Self {
        EyeParams {
            pre_retinal_transmission: 0.10,
            rod_quantum_efficiency: 0.33,
            dark_event_rate: 0.0,
            integration_window: 0.1,
            threshold_n: 1,
            guess_bias_right: 0.5,
        }
    }
}

impl EyeParams {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("pre_retinal_transmission", self.pre_retinal_transmission),
            ("rod_quantum_efficiency", self.rod_quantum_efficiency),
            ("guess_bias_right", self.guess_bias_right),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Config(format!("eye.{name} must be in [0,1]")));
            }
        }
        if self.dark_event_rate < 0.0 || !self.dark_event_rate.is_finite() {
            return Err(Error::Config("eye.dark_event_rate must be >= 0".into()));
        }
        if self.integration_window <= 0.0 || !self.integration_window.is_finite() {
            return Err(Error::Config("eye.integration_window must be > 0".into()));
        }
        if self.threshold_n < 1 {
            return Err(Error::Config("eye.threshold_n must be >= 1".into()));
        }
        Ok(())
    }

    /// End-to-end absorption probability for one corneal photon.
    pub fn absorption_prob(&self) -> f64 {
        self.pre_retinal_transmission * self.rod_quantum_efficiency
    }

    /// Expected dark events per integration window.
    pub fn dark_mean(&self) -> f64 {
        self.dark_event_rate * self.integration_window
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseSide {
    Left,
    Right,
}

/// Per-trial perceptual outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerceptionOutcome {
    pub absorbed_photons: u32,
    pub dark_events: u32,
    pub seen: bool,
    pub rating: Option<u8>,
}

/// Binomial thinning of corneal photons plus an independent Poisson dark
/// count for the integration window.
pub fn absorb<R: Rng + ?Sized>(photons_at_cornea: u32, eye: &EyeParams, rng: &mut R) -> (u32, u32) {
    let absorbed = if photons_at_cornea == 0 {
        0
    } else {
        Binomial::new(photons_at_cornea as u64, eye.absorption_prob())
            .expect("valid binomial parameters")
            .sample(rng) as u32
    };
    let dark_mean = eye.dark_mean();
    let dark = if dark_mean > 0.0 {
        Poisson::new(dark_mean).expect("valid poisson mean").sample(rng) as u32
    } else {
        0
    };
    (absorbed, dark)
}

/// Threshold perception rule: dark events are indistinguishable from
/// absorptions.
pub fn see_flash(absorbed: u32, dark: u32, eye: &EyeParams) -> bool {
    absorbed + dark >= eye.threshold_n
}

/// Analytic frequency-of-seeing curve: P(K >= n) for K ~ Poisson(alpha * mean_photons).
///
/// Uses the Poisson/gamma tail identity P(K >= n) = P(n, lambda) with the
/// regularized lower incomplete gamma function.
pub fn frequency_of_seeing(n: u32, alpha: f64, mean_photons: f64) -> f64 {
    assert!(n >= 1, "threshold n must be >= 1");
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0,1]");
    assert!(mean_photons >= 0.0);
    let lambda = alpha * mean_photons;
    if lambda == 0.0 {
        return 0.0;
    }
    gamma_lr(n as f64, lambda)
}

/// Forced choice: a uniquely seen side wins; ties (both or neither seen)
/// resolve by the guessing bias.
pub fn respond_2afc<R: Rng + ?Sized>(
    left_seen: bool,
    right_seen: bool,
    eye: &EyeParams,
    rng: &mut R,
) -> ResponseSide {
    match (left_seen, right_seen) {
        (true, false) => ResponseSide::Left,
        (false, true) => ResponseSide::Right,
        _ => {
            if rng.gen::<f64>() < eye.guess_bias_right {
                ResponseSide::Right
            } else {
                ResponseSide::Left
            }
        }
    }
}

/// Criterion-ladder rating: the number of cutoffs at or below the event count.
pub fn respond_rating(absorbed: u32, dark: u32, criteria: &[u32; 6]) -> Result<u8> {
    if !criteria.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config(
            "rating criteria must be strictly ascending".into(),
        ));
    }
    let total = absorbed + dark;
    Ok(criteria.iter().filter(|&&c| c <= total).count() as u8)
}
