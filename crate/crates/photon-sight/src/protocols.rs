//! The four experimental protocols: frequency-of-seeing runs, 2AFC
//! single-photon detection, superposition vs mixture, and the CH Bell test
//! with a human detector.
//!
//! Sessions are trial-parallel; every trial draws from a generator derived
//! from (seed, trial index), so a session is exactly reproducible from
//! (config, seed) at any worker count.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{exact_binomial_test, two_proportion_test, wilson_interval, FosPoint, Interval, Tail};
use crate::observer::{absorb, respond_2afc, see_flash, EyeParams, ResponseSide};
use crate::polarization::{
    apply_hwp, coincidence_prob, make_bell_state, path_probabilities, pbs_route, singles_prob,
    AnalyzerSetting, PolarizationState, Side,
};
use crate::rng::{derive_rng, stream};
use crate::source::{simulate_pulse, SourceParams};

/// Pulses a trial may wait before a missing herald is a hard error.
const HERALD_WAIT_CAP: u64 = 10_000_000;

/// The published optimal analyzer settings, degrees: (a, a', b, b').
pub const OPTIMAL_ANGLES: (f64, f64, f64, f64) = (0.0, 45.0, 22.5, 67.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    StimulusLeft,
    StimulusRight,
    Superposition,
    Mixture,
    ControlBlank,
    BellEntangled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialResponse {
    Side(ResponseSide),
    SeenFlags { left: bool, right: bool },
    Rating(u8),
}

/// Ground truth plus observer response for one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub condition: Condition,
    pub photons_delivered_left: u32,
    pub photons_delivered_right: u32,
    pub truth_side: Option<ResponseSide>,
    pub response: TrialResponse,
    pub correct: Option<bool>,
    /// Seen flags for protocols whose headline response is a side choice.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aux_seen: Option<(bool, bool)>,
}

/// Aggregated counts for one session (or one condition of a session).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionResult {
    pub label: String,
    pub trials: u64,
    pub stimulus_trials: u64,
    pub control_trials: u64,
    pub correct: u64,
    pub left_responses: u64,
    pub right_responses: u64,
    /// Trials in which exactly one side was seen.
    pub seen_trials: u64,
    /// Seen trials where the seen side was Right.
    pub seen_right: u64,
    pub accuracy: Option<f64>,
    pub accuracy_ci: Option<Interval>,
}

impl SessionResult {
    fn from_records(label: &str, records: &[TrialRecord]) -> SessionResult {
        let mut r = SessionResult {
            label: label.to_string(),
            trials: records.len() as u64,
            stimulus_trials: 0,
            control_trials: 0,
            correct: 0,
            left_responses: 0,
            right_responses: 0,
            seen_trials: 0,
            seen_right: 0,
            accuracy: None,
            accuracy_ci: None,
        };
        for rec in records {
            if rec.condition == Condition::ControlBlank {
                r.control_trials += 1;
            } else {
                r.stimulus_trials += 1;
            }
            if rec.correct == Some(true) {
                r.correct += 1;
            }
            match rec.response {
                TrialResponse::Side(ResponseSide::Left) => r.left_responses += 1,
                TrialResponse::Side(ResponseSide::Right) => r.right_responses += 1,
                _ => {}
            }
            if let Some((left, right)) = rec.seen_flags() {
                if left != right {
                    r.seen_trials += 1;
                    if right {
                        r.seen_right += 1;
                    }
                }
            }
        }
        if r.stimulus_trials > 0 {
            r.accuracy = Some(r.correct as f64 / r.stimulus_trials as f64);
            r.accuracy_ci = Some(wilson_interval(r.correct, r.stimulus_trials, 0.95));
        }
        r
    }

    pub fn counts_sum_to_trials(&self) -> bool {
        self.stimulus_trials + self.control_trials == self.trials
    }
}

impl TrialRecord {
    /// Seen flags recorded alongside the trial, if the protocol kept them.
    pub fn seen_flags(&self) -> Option<(bool, bool)> {
        match self.response {
            TrialResponse::SeenFlags { left, right } => Some((left, right)),
            _ => self.aux_seen,
        }
    }

    pub fn response_text(&self) -> String {
        match self.response {
            TrialResponse::Side(ResponseSide::Left) => "left".into(),
            TrialResponse::Side(ResponseSide::Right) => "right".into(),
            TrialResponse::SeenFlags { left, right } => format!("seen:{}{}", left as u8, right as u8),
            TrialResponse::Rating(r) => format!("rating:{r}"),
        }
    }
}

/// Frequency-of-seeing run: Poisson flashes at each intensity through the
/// full absorption chain.
pub fn run_hecht(
    intensities: &[f64],
    trials_per_intensity: u64,
    eye: &EyeParams,
    seed: u64,
) -> Result<Vec<FosPoint>> {
    if intensities.is_empty() {
        return Err(Error::Config("hecht.intensities must be nonempty".into()));
    }
    if trials_per_intensity == 0 {
        return Err(Error::Config("hecht.trials_per_intensity must be > 0".into()));
    }
    eye.validate()?;
    let points = intensities
        .iter()
        .enumerate()
        .map(|(level, &mean)| {
            let flash = if mean > 0.0 { Some(Poisson::new(mean).expect("mean > 0")) } else { None };
            let seen_count = (0..trials_per_intensity)
                .into_par_iter()
                .map(|t| {
                    let mut rng = derive_rng(seed, stream::TRIAL, (level as u64) << 40 | t);
                    let photons = match &flash {
                        Some(d) => d.sample(&mut rng) as u32,
                        None => 0,
                    };
                    let (a, d) = absorb(photons, eye, &mut rng);
                    see_flash(a, d, eye) as u64
                })
                .sum();
            FosPoint { mean_photons: mean, trials: trials_per_intensity, seen_count }
        })
        .collect();
    Ok(points)
}

/// Waits for a herald and returns the delivered photon count, consuming the
/// trial's random stream.
fn deliver_heralded_photon<R: Rng + ?Sized>(source: &SourceParams, rng: &mut R) -> Result<u32> {
    for _ in 0..HERALD_WAIT_CAP {
        let out = simulate_pulse(source, rng);
        if out.herald_fired {
            return Ok(out.signal_photons_delivered);
        }
    }
    Err(Error::StopUnreachable { pulses_simulated: HERALD_WAIT_CAP, heralds: 0, target: 1 })
}

fn observe_sides<R: Rng + ?Sized>(
    photons_left: u32,
    photons_right: u32,
    eye: &EyeParams,
    rng: &mut R,
) -> (bool, bool) {
    let (al, dl) = absorb(photons_left, eye, rng);
    let (ar, dr) = absorb(photons_right, eye, rng);
    (see_flash(al, dl, eye), see_flash(ar, dr, eye))
}

/// 2AFC single-photon detection session with interleaved blank controls.
pub fn run_2afc(
    source: &SourceParams,
    eye: &EyeParams,
    trials: u64,
    control_fraction: f64,
    seed: u64,
) -> Result<(SessionResult, Vec<TrialRecord>)> {
    if trials == 0 {
        return Err(Error::Config("afc.trials must be > 0".into()));
    }
    if !(0.0..=1.0).contains(&control_fraction) {
        return Err(Error::Config("afc.control_fraction must be in [0,1]".into()));
    }
    source.validate()?;
    eye.validate()?;

    let records: Result<Vec<TrialRecord>> = (0..trials)
        .into_par_iter()
        .map(|trial_id| {
            let mut rng = derive_rng(seed, stream::TRIAL, trial_id);
            let is_control = rng.gen::<f64>() < control_fraction;
            let (condition, truth, photons_l, photons_r) = if is_control {
                (Condition::ControlBlank, None, 0, 0)
            } else {
                let delivered = deliver_heralded_photon(source, &mut rng)?;
                if rng.gen::<bool>() {
                    (Condition::StimulusRight, Some(ResponseSide::Right), 0, delivered)
                } else {
                    (Condition::StimulusLeft, Some(ResponseSide::Left), delivered, 0)
                }
            };
            let (left_seen, right_seen) = observe_sides(photons_l, photons_r, eye, &mut rng);
            let response = respond_2afc(left_seen, right_seen, eye, &mut rng);
            Ok(TrialRecord {
                trial_id,
                condition,
                photons_delivered_left: photons_l,
                photons_delivered_right: photons_r,
                truth_side: truth,
                response: TrialResponse::Side(response),
                correct: truth.map(|t| t == response),
                aux_seen: Some((left_seen, right_seen)),
            })
        })
        .collect();
    let records = records?;
    Ok((SessionResult::from_records("2afc", &records), records))
}

/// Two-proportion comparison input and outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProportionComparison {
    pub k1: u64,
    pub n1: u64,
    pub k2: u64,
    pub n2: u64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperpositionOutcome {
    pub superposition: SessionResult,
    pub mixture: SessionResult,
    /// Right-seen proportion among seen trials, superposition vs mixture.
    pub comparison: ProportionComparison,
}

/// Superposition-vs-mixture session.
///
/// Both conditions route the photon from the path-basis Born probabilities,
/// which are identical for the equal superposition and the equal mixture;
/// `anomaly_epsilon` shifts the superposition right-path probability to
/// 0.5 + epsilon to model a hypothesized deviation.
pub fn run_superposition_vs_mixture(
    source: &SourceParams,
    eye: &EyeParams,
    trials_per_condition: u64,
    anomaly_epsilon: f64,
    seed: u64,
) -> Result<SuperpositionOutcome> {
    if trials_per_condition == 0 {
        return Err(Error::Config("superposition.trials must be > 0".into()));
    }
    if anomaly_epsilon.abs() > 0.5 {
        return Err(Error::Config("superposition.anomaly_epsilon must satisfy |eps| <= 0.5".into()));
    }
    source.validate()?;
    eye.validate()?;

    // Born-rule path marginals of the two prepared states.
    let superposition_state = pbs_route(&apply_hwp(&PolarizationState::vertical(), 22.5));
    let (p_right_sup_qm, _) = path_probabilities(&superposition_state);
    let (p_right_mix, _) = path_probabilities(&crate::polarization::make_mixture_left_right());
    let p_right_sup = p_right_sup_qm + anomaly_epsilon;

    // Random interleaving with exact per-condition counts: a seeded shuffle
    // of the condition sequence, then trial-parallel execution.
    let total = 2 * trials_per_condition;
    let mut order: Vec<Condition> = (0..total)
        .map(|i| if i < trials_per_condition { Condition::Superposition } else { Condition::Mixture })
        .collect();
    let mut order_rng = derive_rng(seed, stream::REPLICATE, u64::MAX);
    order.shuffle(&mut order_rng);

    let records: Result<Vec<TrialRecord>> = (0..total)
        .into_par_iter()
        .map(|trial_id| {
            let mut rng = derive_rng(seed, stream::TRIAL, trial_id);
            let condition = order[trial_id as usize];
            let p_right = match condition {
                Condition::Superposition => p_right_sup,
                _ => p_right_mix,
            };
            let delivered = deliver_heralded_photon(source, &mut rng)?;
            let goes_right = rng.gen::<f64>() < p_right;
            let (photons_l, photons_r) = if goes_right { (0, delivered) } else { (delivered, 0) };
            let (left_seen, right_seen) = observe_sides(photons_l, photons_r, eye, &mut rng);
            let response = respond_2afc(left_seen, right_seen, eye, &mut rng);
            let truth = Some(if goes_right { ResponseSide::Right } else { ResponseSide::Left });
            Ok(TrialRecord {
                trial_id,
                condition,
                photons_delivered_left: photons_l,
                photons_delivered_right: photons_r,
                truth_side: truth,
                response: TrialResponse::Side(response),
                correct: truth.map(|t| t == response),
                aux_seen: Some((left_seen, right_seen)),
            })
        })
        .collect();
    let records = records?;

    let (sup_records, mix_records): (Vec<_>, Vec<_>) =
        records.into_iter().partition(|r| r.condition == Condition::Superposition);
    let sup = SessionResult::from_records("superposition", &sup_records);
    let mix = SessionResult::from_records("mixture", &mix_records);

    // Perception comparison on trials where something was actually seen:
    // the seen-side proportions carry the detectable signal.
    let (k1, n1) = (sup.seen_right, sup.seen_trials);
    let (k2, n2) = (mix.seen_right, mix.seen_trials);
    let p_value = if n1 > 0 && n2 > 0 { two_proportion_test(k1, n1, k2, n2) } else { 1.0 };
    Ok(SuperpositionOutcome {
        superposition: sup,
        mixture: mix,
        comparison: ProportionComparison { k1, n1, k2, n2, p_value },
    })
}

/// Coincidence and singles probabilities entering the CH inequality.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CHTerms {
    pub c_ab: f64,
    pub c_apb: f64,
    pub c_apbp: f64,
    pub c_abp: f64,
    pub s1_ap: f64,
    pub s2_b: f64,
}

///// CH combination: (c_ab + c_apb + c_apbp - c_abp) - (s1_ap + s2_b).
/// Positive means the CH inequality is violated.
pub fn ch_lhs(terms: &CHTerms) -> f64 {
    (terms.c_ab + terms.c_apb + terms.c_apbp - terms.c_abp) - (terms.s1_ap + terms.s2_b)
}

/// CH terms of a two-photon state at analyzer settings (a, a', b, b').
pub fn quantum_ch_terms(
    state: &crate::polarization::TwoPhotonState,
    a: AnalyzerSetting,
    ap: AnalyzerSetting,
    b: AnalyzerSetting,
    bp: AnalyzerSetting,
) -> CHTerms {
    CHTerms {
        c_ab: coincidence_prob(state, a, b),
        c_apb: coincidence_prob(state, ap, b),
        c_apbp: coincidence_prob(state, ap, bp),
        c_abp: coincidence_prob(state, a, bp),
        s1_ap: singles_prob(state, Side::A, ap),
        s2_b: singles_prob(state, Side::B, b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Paper,
    Derived,
}

/// Observer-probability threshold for CH violation.
///
/// `Paper` returns the published constant 3cos^2(22.5 deg)/2 - 1. `Derived`
/// solves ch_lhs = 0 with all detector-side terms at their ideal quantum
/// values and the observer term entering as c(a',b') = p_obs * s2(b'); the
/// two differ (0.28033 vs 3sin^2(22.5 deg) = 0.43934) because the published
/// reduction normalizes the observer term differently. Both are exposed so
/// the discrepancy stays visible.
pub fn p_obs_threshold(mode: ThresholdMode) -> f64 {
    let cos2 = 22.5f64.to_radians().cos().powi(2);
    match mode {
        ThresholdMode::Paper => 1.5 * cos2 - 1.0,
        ThresholdMode::Derived => {
            let bell = make_bell_state();
            let (a, ap, b, bp) = OPTIMAL_ANGLES;
            let base = quantum_ch_terms(
                &bell,
                AnalyzerSetting::new(a),
                AnalyzerSetting::new(ap),
                AnalyzerSetting::new(b),
                AnalyzerSetting::new(bp),
            );
            let s2_bp = singles_prob(&bell, Side::B, AnalyzerSetting::new(bp));
            let lhs = |p_obs: f64| {
                ch_lhs(&CHTerms { c_apbp: p_obs * s2_bp, ..base })
            };
            // lhs is linear and increasing in p_obs; bisect its root.
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if lhs(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CHResult {
    pub terms: CHTerms,
    pub lhs_minus_rhs: f64,
    pub p_obs_estimate: f64,
    pub p_obs_ci: Interval,
    pub entangled_side_seen: u64,
    pub control_side_seen: u64,
    pub heralded_trials: u64,
    /// One-sided exact binomial test of p_obs against the published threshold.
    pub violation_p_value: f64,
    /// Paired comparison of entangled-side vs control-side seen counts.
    pub control_comparison_p_value: f64,
    pub threshold: f64,
}

/// Bell-test session with a human detector on side A.
///
/// Each trial is conditioned on a side-B detection at b'. The entangled
/// photon passes the observer's a' analyzer with the conditional quantum
/// probability, is routed to a random side of the visual field, and is seen
/// with probability `observer_end_to_end`. The control channel on the
/// opposite side is calibrated to fire at rate `control_prob`: a control
/// photon is delivered with probability control_prob / observer_end_to_end
/// (capped at 1) and seen with probability observer_end_to_end, which is the
/// published 28%-delivery scheme made exact for a lossy observer.
#[allow(clippy::too_many_arguments)]
pub fn run_bell(
    source: &SourceParams,
    detector_efficiency: f64,
    eye: &EyeParams,
    observer_end_to_end: f64,
    trials: u64,
    control_prob: f64,
    seed: u64,
) -> Result<(CHResult, Vec<TrialRecord>)> {
    if trials == 0 {
        return Err(Error::Config("bell.trials must be > 0".into()));
    }
    for (name, v) in [
        ("detector_efficiency", detector_efficiency),
        ("observer_end_to_end", observer_end_to_end),
        ("control_prob", control_prob),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("bell.{name} must be in [0,1]")));
        }
    }
    source.validate()?;
    eye.validate()?;

    let bell = make_bell_state();
    let (a, ap, b, bp) = OPTIMAL_ANGLES;
    let (a, ap, b, bp) = (
        AnalyzerSetting::new(a),
        AnalyzerSetting::new(ap),
        AnalyzerSetting::new(b),
        AnalyzerSetting::new(bp),
    );
    // Probability the entangled photon reaches the observer's analyzer
    // output, conditioned on the B-side herald at b'.
    let s2_bp = singles_prob(&bell, Side::B, bp);
    let p_pass_given_herald = coincidence_prob(&bell, ap, bp) / s2_bp;
    let control_delivery = if observer_end_to_end > 0.0 {
        (control_prob / observer_end_to_end).min(1.0)
    } else {
        1.0
    };

    #[derive(Default, Clone, Copy)]
    struct BellCounts {
        entangled_seen: u64,
        control_seen: u64,
    }

    let results: Vec<(TrialRecord, BellCounts)> = (0..trials)
        .into_par_iter()
        .map(|trial_id| {
            let mut rng = derive_rng(seed, stream::TRIAL, trial_id);
            let passed = rng.gen::<f64>() < p_pass_given_herald;
            let entangled_right = rng.gen::<bool>();
            let entangled_photons = u32::from(passed);
            let control_delivered = rng.gen::<f64>() < control_delivery;
            let control_photons = u32::from(control_delivered);
            let (photons_l, photons_r) = if entangled_right {
                (control_photons, entangled_photons)
            } else {
                (entangled_photons, control_photons)
            };
            // Independent seen judgment per side: lumped end-to-end
            // detection for a present photon, plus dark events from the eye.
            let mut judge = |photons: u32| -> bool {
                let photon_seen = photons > 0 && rng.gen::<f64>() < observer_end_to_end;
                let (_, dark) = absorb(0, eye, &mut rng);
                photon_seen || dark >= eye.threshold_n
            };
            let left_seen = judge(photons_l);
            let right_seen = judge(photons_r);
            let (entangled_seen, control_seen) = if entangled_right {
                (right_seen, left_seen)
            } else {
                (left_seen, right_seen)
            };
            let record = TrialRecord {
                trial_id,
                condition: Condition::BellEntangled,
                photons_delivered_left: photons_l,
                photons_delivered_right: photons_r,
                truth_side: Some(if entangled_right { ResponseSide::Right } else { ResponseSide::Left }),
                response: TrialResponse::SeenFlags { left: left_seen, right: right_seen },
                correct: None,
                aux_seen: Some((left_seen, right_seen)),
            };
            (
                record,
                BellCounts {
                    entangled_seen: entangled_seen as u64,
                    control_seen: control_seen as u64,
                },
            )
        })
        .collect();

    let mut counts = BellCounts::default();
    let mut records = Vec::with_capacity(results.len());
    for (rec, c) in results {
        counts.entangled_seen += c.entangled_seen;
        counts.control_seen += c.control_seen;
        records.push(rec);
    }

    let p_obs = counts.entangled_seen as f64 / trials as f64;
    let threshold = p_obs_threshold(ThresholdMode::Paper);
    let terms = CHTerms {
        c_ab: coincidence_prob(&bell, a, b),
        c_apb: coincidence_prob(&bell, ap, b),
        // The observer supplies the c(a',b') term: joint probability of the
        // B herald at b' and the observer's detection.
        c_apbp: p_obs * s2_bp,
        c_abp: coincidence_prob(&bell, a, bp),
        s1_ap: singles_prob(&bell, Side::A, ap),
        s2_b: singles_prob(&bell, Side::B, b),
    };
    let violation = exact_binomial_test(counts.entangled_seen, trials, threshold, Tail::Greater);
    let comparison = two_proportion_test(counts.entangled_seen, trials, counts.control_seen, trials);
    let result = CHResult {
        terms,
        lhs_minus_rhs: ch_lhs(&terms),
        p_obs_estimate: p_obs,
        p_obs_ci: violation.wilson_interval,
        entangled_side_seen: counts.entangled_seen,
        control_side_seen: counts.control_seen,
        heralded_trials: trials,
        violation_p_value: violation.p_value,
        control_comparison_p_value: comparison,
        threshold,
    };
    let _ = detector_efficiency; // detector side is ideal by default; the
                                 // parameter is kept for loophole studies.
    Ok((result, records))
}

/// Smallest trial count at which the exact one-sided binomial test at level
/// `alpha` against `p0` rejects with probability >= `power` when the true
/// rate is `p1`.
pub fn required_trials(p0: f64, p1: f64, alpha: f64, power: f64) -> Result<u64> {
    if !(0.0 < p0 && p0 < p1 && p1 < 1.0) {
        return Err(Error::Config("required_trials needs 0 < p0 < p1 < 1".into()));
    }
    if !(0.0 < alpha && alpha < 1.0 && 0.0 < power && power < 1.0) {
        return Err(Error::Config("alpha and power must be in (0,1)".into()));
    }
    const N_CAP: u64 = 10_000_000;
    for n in 1..=N_CAP {
        if exact_power(p0, p1, alpha, n) >= power {
            return Ok(n);
        }
    }
    Err(Error::CalibrationUnreachable(format!(
        "no n <= {N_CAP} reaches power {power} for p0={p0}, p1={p1}"
    )))
}

/// Rejection probability of the exact test at sample size n.
pub fn exact_power(p0: f64, p1: f64, alpha: f64, n: u64) -> f64 {
    // Smallest k with P(X >= k | p0) <= alpha; the tail is decreasing in k.
    let (mut lo, mut hi) = (0u64, n + 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if crate::inference::binomial_tail_ge(mid, n, p0) <= alpha {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let k_crit = lo;
    if k_crit > n {
        return 0.0;
    }
    crate::inference::binomial_tail_ge(k_crit, n, p1)
}
