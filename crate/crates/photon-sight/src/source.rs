//! Heralded SPDC source simulation at the pulse-statistics level.
//!
//! Pair number per pulse is Poisson(mu); mu is not a published quantity, so
//! it is calibrated against the measured heralded g2 via `calibrate_mu`.
//! The g2 measurement is modeled as a virtual 50/50 split of the signal arm
//! with two ideal counters. Pulse simulation derives per-pulse generators
//! from (seed, pulse index), so results do not depend on thread count.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, stream};

/// Physical parameters of the heralded source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceParams {
    /// Pump repetition rate, pulses per second.
    pub rep_rate: f64,
    /// Mean photon pairs per pulse (Poisson mu).
    pub mean_pairs_per_pulse: f64,
    /// Probability a produced idler photon registers a herald click.
    pub herald_detection_efficiency: f64,
    /// Lumped fiber + Pockels + PBS transmission of the signal arm.
    pub signal_path_transmission: f64,
    /// Probability of a spurious herald count per pulse.
    pub background_prob_per_pulse: f64,
    /// Probability an unheralded signal photon leaks through the gate.
    pub pockels_extinction: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        // Defaults sit at the published operating point: 80 kHz rep rate,
        // 38.5% lumped signal transmission, mu near the g2 = 0.0023 solution
        // and herald efficiency matching the ~52 Hz herald rate.
        SourceParams {
            rep_rate: 80_000.0,
            mean_pairs_per_pulse: 1.15e-3,
            herald_detection_efficiency: 0.565,
            signal_path_transmission: 0.385,
            background_prob_per_pulse: 0.0,
            pockels_extinction: 0.0,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if self.rep_rate <= 0.0 || !self.rep_rate.is_finite() {
            return Err(Error::Config("source.rep_rate must be > 0".into()));
        }
        if self.mean_pairs_per_pulse < 0.0 || !self.mean_pairs_per_pulse.is_finite() {
            return Err(Error::Config("source.mean_pairs_per_pulse must be >= 0".into()));
        }
        let probs = [
            ("herald_detection_efficiency", self.herald_detection_efficiency),
            ("signal_path_transmission", self.signal_path_transmission),
            ("background_prob_per_pulse", self.background_prob_per_pulse),
            ("pockels_extinction", self.pockels_extinction),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Config(format!("source.{name} must be in [0,1]")));
            }
        }
        Ok(())
    }
}

/// Outcome of a single pump pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseOutcome {
    pub pair_count: u32,
    pub herald_fired: bool,
    pub signal_photons_delivered: u32,
}

/// Accumulated counts and derived figures of merit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SourceStats {
    pub pulses: u64,
    pub heralds: u64,
    /// Heralded pulses with at least one signal photon at the output fiber.
    pub delivered_given_herald: u64,
    /// Heralded pulses where both halves of the virtual 50/50 split fired.
    pub triple_coincidences: u64,
    pub split_singles_1: u64,
    pub split_singles_2: u64,
    pub estimated_heralding_efficiency: f64,
    pub estimated_g2: Option<f64>,
    pub herald_rate: f64,
}

/// How long to run the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopCondition {
    PulseCount(u64),
    HeraldCount(u64),
}

/// Default pulse cap guarding unreachable herald-count targets.
pub const DEFAULT_PULSE_CAP: u64 = 10_000_000_000;

/// Simulates one pump pulse.
///
/// Pair count is Poisson(mu); the herald fires if any idler is detected or a
/// background count occurs; each signal photon survives the lumped arm
/// transmission; the Pockels gate passes survivors only on a herald (an
/// unheralded survivor leaks with `pockels_extinction`).
pub fn simulate_pulse<R: Rng + ?Sized>(params: &SourceParams, rng: &mut R) -> PulseOutcome {
    let sampler = PulseSampler::new(params);
    sampler.sample(rng).outcome
}

struct PulseObservation {
    outcome: PulseOutcome,
    split_1: bool,
    split_2: bool,
}

/// Precomputed per-pulse sampler for the hot loop.
struct PulseSampler {
    pair_dist: Option<Poisson<f64>>,
    herald_eff: f64,
    transmission: f64,
    background: f64,
    extinction: f64,
}

impl PulseSampler {
    fn new(params: &SourceParams) -> Self {
        let mu = params.mean_pairs_per_pulse;
        PulseSampler {
            pair_dist: if mu > 0.0 { Some(Poisson::new(mu).expect("mu > 0")) } else { None },
            herald_eff: params.herald_detection_efficiency,
            transmission: params.signal_path_transmission,
            background: params.background_prob_per_pulse,
            extinction: params.pockels_extinction,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PulseObservation {
        let pair_count = match &self.pair_dist {
            Some(d) => d.sample(rng) as u32,
            None => 0,
        };

        // Empty pulse with no background possibility: nothing to do.
        if pair_count == 0 && self.background == 0.0 {
            return PulseObservation {
                outcome: PulseOutcome { pair_count: 0, herald_fired: false, signal_photons_delivered: 0 },
                split_1: false,
                split_2: false,
            };
        }

        let idler_clicks = sample_binomial(pair_count, self.herald_eff, rng);
        let background_click = self.background > 0.0 && rng.gen::<f64>() < self.background;
        let herald_fired = idler_clicks > 0 || background_click;

        let survivors = sample_binomial(pair_count, self.transmission, rng);
        let delivered = if herald_fired {
            survivors
        } else {
            sample_binomial(survivors, self.extinction, rng)
        };

        // Virtual 50/50 split of the gated signal arm, for g2 estimation.
        let (mut split_1, mut split_2) = (false, false);
        if herald_fired {
            for _ in 0..delivered {
                if rng.gen::<bool>() {
                    split_1 = true;
                } else {
                    split_2 = true;
                }
            }
        }

        PulseObservation {
            outcome: PulseOutcome { pair_count, herald_fired, signal_photons_delivered: delivered },
            split_1,
            split_2,
        }
    }
}

fn sample_binomial<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    if n == 0 || p == 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n as u64, p).expect("valid binomial").sample(rng) as u32
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Accum {
    pulses: u64,
    heralds: u64,
    delivered_given_herald: u64,
    triples: u64,
    singles_1: u64,
    singles_2: u64,
}

impl Accum {
    fn add(&mut self, obs: &PulseObservation) {
        self.pulses += 1;
        if obs.outcome.herald_fired {
            self.heralds += 1;
            if obs.outcome.signal_photons_delivered > 0 {
                self.delivered_given_herald += 1;
            }
            if obs.split_1 {
                self.singles_1 += 1;
            }
            if obs.split_2 {
                self.singles_2 += 1;
            }
            if obs.split_1 && obs.split_2 {
                self.triples += 1;
            }
        }
    }

    fn merge(mut self, other: Accum) -> Accum {
        self.pulses += other.pulses;
        self.heralds += other.heralds;
        self.delivered_given_herald += other.delivered_given_herald;
        self.triples += other.triples;
        self.singles_1 += other.singles_1;
        self.singles_2 += other.singles_2;
        self
    }
}

fn accum_range(params: &SourceParams, seed: u64, start: u64, end: u64) -> Accum {
    const PAR_CHUNK: u64 = 1 << 16;
    let chunks: Vec<(u64, u64)> = (start..end)
        .step_by(PAR_CHUNK as usize)
        .map(|s| (s, (s + PAR_CHUNK).min(end)))
        .collect();
    chunks
        .into_par_iter()
        .map(|(s, e)| {
            let sampler = PulseSampler::new(params);
            let mut acc = Accum::default();
            for idx in s..e {
                let mut rng = derive_rng(seed, stream::SOURCE_PULSE, idx);
                acc.add(&sampler.sample(&mut rng));
            }
            acc
        })
        .reduce(Accum::default, Accum::merge)
}

fn finalize(acc: Accum, params: &SourceParams) -> SourceStats {
    let g2 = if acc.heralds > 0 && acc.singles_1 > 0 && acc.singles_2 > 0 {
        Some((acc.triples as f64 * acc.heralds as f64) / (acc.singles_1 as f64 * acc.singles_2 as f64))
    } else {
        None
    };
    SourceStats {
        pulses: acc.pulses,
        heralds: acc.heralds,
        delivered_given_herald: acc.delivered_given_herald,
        triple_coincidences: acc.triples,
        split_singles_1: acc.singles_1,
        split_singles_2: acc.singles_2,
        estimated_heralding_efficiency: if acc.heralds > 0 {
            acc.delivered_given_herald as f64 / acc.heralds as f64
        } else {
            0.0
        },
        estimated_g2: g2,
        herald_rate: if acc.pulses > 0 {
            acc.heralds as f64 / (acc.pulses as f64 / params.rep_rate)
        } else {
            0.0
        },
    }
}

/// Runs the source until the stop condition and accumulates statistics.
///
/// `pulse_cap` bounds herald-count runs whose target may be unreachable.
pub fn run_source(
    params: &SourceParams,
    stop: StopCondition,
    seed: u64,
    pulse_cap: u64,
) -> Result<SourceStats> {
    params.validate()?;
    match stop {
        StopCondition::PulseCount(n) => {
            if n == 0 {
                return Err(Error::Config("pulse count target must be > 0".into()));
            }
            Ok(finalize(accum_range(params, seed, 0, n), params))
        }
        StopCondition::HeraldCount(target) => {
            if target == 0 {
                return Err(Error::Config("herald count target must be > 0".into()));
            }
            // Fixed block size keeps the scan deterministic; within the final
            // block the exact cut pulse is located sequentially.
            const BLOCK: u64 = 1 << 20;
            let mut acc = Accum::default();
            let mut start = 0u64;
            while acc.heralds < target {
                if start >= pulse_cap {
                    return Err(Error::StopUnreachable {
                        pulses_simulated: acc.pulses,
                        heralds: acc.heralds,
                        target,
                    });
                }
                let end = (start + BLOCK).min(pulse_cap);
                let block = accum_range(params, seed, start, end);
                if acc.heralds + block.heralds >= target {
                    // Replay this block pulse by pulse up to the target herald.
                    let sampler = PulseSampler::new(params);
                    for idx in start..end {
                        let mut rng = derive_rng(seed, stream::SOURCE_PULSE, idx);
                        let obs = sampler.sample(&mut rng);
                        acc.add(&obs);
                        if acc.heralds == target {
                            return Ok(finalize(acc, params));
                        }
                    }
                    unreachable!("block recount must reach the herald target");
                }
                acc = acc.merge(block);
                start = end;
            }
            Ok(finalize(acc, params))
        }
    }
}

/// Standard heralded g2 estimator from split-arm counts.
pub fn estimate_g2(stats: &SourceStats) -> Result<f64> {
    if stats.heralds == 0 || stats.split_singles_1 == 0 || stats.split_singles_2 == 0 {
        return Err(Error::InsufficientCounts(format!(
            "g2 needs heralds and both split singles > 0 (got {}, {}, {})",
            stats.heralds, stats.split_singles_1, stats.split_singles_2
        )));
    }
    Ok((stats.triple_coincidences as f64 * stats.heralds as f64)
        / (stats.split_singles_1 as f64 * stats.split_singles_2 as f64))
}

/// Truncation depth for the exact pulse-model enumeration. Poisson weight
/// beyond 8 pairs is below 1e-12 for mu < 0.1.
const ENUM_MAX_PAIRS: u32 = 8;

fn poisson_pmf(mu: f64, k: u32) -> f64 {
    let mut p = (-mu).exp();
    for i in 1..=k {
        p *= mu / i as f64;
    }
    p
}

/// Exact per-pulse event probabilities of the enumeration model.
struct PulseModel {
    herald: f64,
    single: f64,
    triple: f64,
    delivered_and_herald: f64,
}

fn enumerate_model(params: &SourceParams, mu: f64) -> PulseModel {
    let eta = params.herald_detection_efficiency;
    let t = params.signal_path_transmission;
    let bg = params.background_prob_per_pulse;
    let mut m = PulseModel { herald: 0.0, single: 0.0, triple: 0.0, delivered_and_herald: 0.0 };
    for n in 0..=ENUM_MAX_PAIRS {
        let w = poisson_pmf(mu, n);
        // Herald: any idler detected, or a background click.
        let p_herald = 1.0 - (1.0 - bg) * (1.0 - eta).powi(n as i32);
        // Virtual split: P(arm i empty) = (1 - t/2)^n, P(both empty) = (1 - t)^n.
        let p_arm_fire = 1.0 - (1.0 - t / 2.0).powi(n as i32);
        let p_both = 1.0 - 2.0 * (1.0 - t / 2.0).powi(n as i32) + (1.0 - t).powi(n as i32);
        let p_any_delivered = 1.0 - (1.0 - t).powi(n as i32);
        m.herald += w * p_herald;
        m.single += w * p_herald * p_arm_fire;
        m.triple += w * p_herald * p_both;
        m.delivered_and_herald += w * p_herald * p_any_delivered;
    }
    m
}

/// Analytic heralded-g2 prediction of the pulse model at the given mu.
pub fn analytic_g2(params: &SourceParams, mu: f64) -> f64 {
    let m = enumerate_model(params, mu);
    if m.single <= 0.0 {
        return 0.0;
    }
    m.triple * m.herald / (m.single * m.single)
}

/// Analytic herald probability per pulse at the given mu.
pub fn analytic_herald_prob(params: &SourceParams, mu: f64) -> f64 {
    enumerate_model(params, mu).herald
}

/// Analytic heralding efficiency (delivery probability given herald).
pub fn analytic_heralding_efficiency(params: &SourceParams, mu: f64) -> f64 {
    let m = enumerate_model(params, mu);
    if m.herald <= 0.0 {
        0.0
    } else {
        m.delivered_and_herald / m.herald
    }
}

/// Inverts the analytic g2 model by bisection on mu in (0, 0.1].
pub fn calibrate_mu(target_g2: f64, params: &SourceParams) -> Result<f64> {
    if !(0.0..1.0).contains(&target_g2) || target_g2 == 0.0 {
        return Err(Error::CalibrationUnreachable(format!(
            "target g2 must be in (0, 1), got {target_g2}"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 0.1f64);
    if analytic_g2(params, hi) < target_g2 {
        return Err(Error::CalibrationUnreachable(format!(
            "target g2 {target_g2} exceeds model value {} at mu = 0.1",
            analytic_g2(params, hi)
        )));
    }
    // g2 is monotone increasing in mu (more multi-pair pulses).
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if analytic_g2(params, mid) < target_g2 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (analytic_g2(params, mid) - target_g2).abs() < 1e-6 * target_g2 {
            return Ok(mid);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves for the herald detection efficiency that hits a target herald
/// probability per pulse at fixed mu.
pub fn calibrate_herald_efficiency(target_prob: f64, params: &SourceParams, mu: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&target_prob) || target_prob == 0.0 || mu <= 0.0 {
        return Err(Error::CalibrationUnreachable(
            "target herald probability must be in (0,1) with mu > 0".into(),
        ));
    }
    let trial = |eta: f64| {
        let mut p = params.clone();
        p.herald_detection_efficiency = eta;
        analytic_herald_prob(&p, mu)
    };
    if trial(1.0) < target_prob {
        return Err(Error::CalibrationUnreachable(format!(
            "herald probability {target_prob} unreachable even at unit efficiency"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if trial(mid) < target_prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl SourceStats {
    pub const CSV_HEADER: &'static str = "pulses,heralds,delivered_given_herald,triple_coincidences,split_singles_1,split_singles_2,estimated_heralding_efficiency,estimated_g2,herald_rate";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.pulses,
            self.heralds,
            self.delivered_given_herald,
            self.triple_coincidences,
            self.split_singles_1,
            self.split_singles_2,
            self.estimated_heralding_efficiency,
            self.estimated_g2.map_or(String::from(""), |v| v.to_string()),
            self.herald_rate
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_source(mu: f64) -> SourceParams {
        SourceParams {
            rep_rate: 80_000.0,
            mean_pairs_per_pulse: mu,
            herald_detection_efficiency: 1.0,
            signal_path_transmission: 1.0,
            background_prob_per_pulse: 0.0,
            pockels_extinction: 0.0,
        }
    }

    #[test]
    fn empty_source_never_heralds() {
        let params = unit_source(0.0);
        let mut rng = derive_rng(1, stream::SOURCE_PULSE, 0);
        for _ in 0..1000 {
            let out = simulate_pulse(&params, &mut rng);
            assert!(!out.herald_fired);
            assert_eq!(out.signal_photons_delivered, 0);
        }
    }

    #[test]
    fn bright_source_always_heralds() {
        let params = unit_source(50.0);
        let mut heralds = 0;
        for i in 0..1000 {
            let mut rng = derive_rng(2, stream::SOURCE_PULSE, i);
            if simulate_pulse(&params, &mut rng).herald_fired {
                heralds += 1;
            }
        }
        assert_eq!(heralds, 1000);
    }

    #[test]
    fn herald_probability_matches_52hz_operating_point() {
        // Herald probability per pulse of 6.5e-4 gives ~52 Hz at 80 kHz.
        let mut params = SourceParams::default();
        let mu = params.mean_pairs_per_pulse;
        params.herald_detection_efficiency =
            calibrate_herald_efficiency(6.5e-4, &params, mu).unwrap();
        let n = 2_000_000u64;
        let mut heralds = 0u64;
        let sampler = PulseSampler::new(&params);
        for i in 0..n {
            let mut rng = derive_rng(3, stream::SOURCE_PULSE, i);
            if sampler.sample(&mut rng).outcome.herald_fired {
                heralds += 1;
            }
        }
        let p = heralds as f64 / n as f64;
        let se = (6.5e-4 / n as f64).sqrt();
        assert!((p - 6.5e-4).abs() < 3.0 * se, "herald prob {p}");
    }

    #[test]
    fn herald_count_stop_is_exact() {
        let params = unit_source(0.01);
        let stats = run_source(&params, StopCondition::HeraldCount(10), 4, 10_000_000).unwrap();
        assert_eq!(stats.heralds, 10);
    }

    #[test]
    fn unreachable_stop_reports_diagnostic() {
        let params = unit_source(0.0);
        let err = run_source(&params, StopCondition::HeraldCount(1), 5, 100_000).unwrap_err();
        match err {
            Error::StopUnreachable { pulses_simulated, heralds, target } => {
                assert_eq!(pulses_simulated, 100_000);
                assert_eq!(heralds, 0);
                assert_eq!(target, 1);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn lossless_source_heralding_efficiency_is_one() {
        let params = unit_source(0.01);
        let stats = run_source(&params, StopCondition::PulseCount(1_000_000), 6, 0).unwrap();
        assert_eq!(stats.delivered_given_herald, stats.heralds);
        assert_eq!(stats.estimated_heralding_efficiency, 1.0);
    }

    #[test]
    fn heralding_efficiency_converges_to_transmission() {
        let mut params = unit_source(0.002);
        params.signal_path_transmission = 0.385;
        params.herald_detection_efficiency = 0.5;
        let stats = run_source(&params, StopCondition::PulseCount(10_000_000), 7, 0).unwrap();
        let expect = analytic_heralding_efficiency(&params, 0.002);
        let se = (expect * (1.0 - expect) / stats.heralds as f64).sqrt();
        assert!(
            (stats.estimated_heralding_efficiency - expect).abs() < 3.0 * se,
            "got {} expected {expect}",
            stats.estimated_heralding_efficiency
        );
        // Small-mu limit: efficiency ~ transmission within O(mu).
        assert!((expect - 0.385).abs() < 0.385 * 0.01);
    }

    #[test]
    fn g2_formula_direct_evaluation() {
        let stats = SourceStats {
            pulses: 0,
            heralds: 1_000_000,
            delivered_given_herald: 0,
            triple_coincidences: 23,
            split_singles_1: 100_000,
            split_singles_2: 100_000,
            estimated_heralding_efficiency: 0.0,
            estimated_g2: None,
            herald_rate: 0.0,
        };
        assert!((estimate_g2(&stats).unwrap() - 0.0023).abs() < 1e-15);
        let zero_triples = SourceStats { triple_coincidences: 0, ..stats };
        assert_eq!(estimate_g2(&zero_triples).unwrap(), 0.0);
    }

    #[test]
    fn g2_insufficient_counts_error() {
        let stats = SourceStats {
            pulses: 0,
            heralds: 0,
            delivered_given_herald: 0,
            triple_coincidences: 0,
            split_singles_1: 0,
            split_singles_2: 0,
            estimated_heralding_efficiency: 0.0,
            estimated_g2: None,
            herald_rate: 0.0,
        };
        assert!(matches!(estimate_g2(&stats), Err(Error::InsufficientCounts(_))));
    }

    #[test]
    fn forced_single_pair_source_has_zero_g2() {
        // A source that never makes two pairs cannot produce a triple.
        // Approximate pair_count in {0,1} with a tiny mu and check the
        // analytic limit at Monte Carlo scale.
        let mut params = unit_source(1e-4);
        params.signal_path_transmission = 0.9;
        let stats = run_source(&params, StopCondition::PulseCount(10_000_000), 8, 0).unwrap();
        let g2 = estimate_g2(&stats).unwrap();
        assert!(g2 < 1e-4 * 3.0, "g2 = {g2}");
    }

    #[test]
    fn poissonian_unheralded_beam_has_g2_near_one() {
        // Ignore heralding: make every pulse "heralded" via background = 1,
        // so the split arms sample the raw Poisson beam.
        let mut params = unit_source(0.05);
        params.herald_detection_efficiency = 0.0;
        params.background_prob_per_pulse = 1.0;
        params.signal_path_transmission = 0.5;
        let stats = run_source(&params, StopCondition::PulseCount(10_000_000), 9, 0).unwrap();
        let g2 = estimate_g2(&stats).unwrap();
        // Standard error of the ratio is ~ 1/sqrt(triples).
        let se = 1.0 / (stats.triple_coincidences as f64).sqrt();
        assert!((g2 - 1.0).abs() < 3.0 * se + 0.05, "g2 = {g2}");
    }

    #[test]
    fn calibrate_mu_hits_target_and_is_monotone() {
        let params = SourceParams::default();
        let mu = calibrate_mu(0.0023, &params).unwrap();
        assert!(mu > 0.0 && mu < 0.01, "mu = {mu}");
        assert!((analytic_g2(&params, mu) - 0.0023).abs() < 1e-6);
        // Small targets give small mu.
        let tiny = calibrate_mu(1e-6, &params).unwrap();
        assert!(tiny < mu / 100.0);
        // Monotonicity of the enumeration model over a mu grid.
        let mut prev = 0.0;
        for i in 1..=20 {
            let m = 0.005 * i as f64;
            let g = analytic_g2(&params, m);
            assert!(g > prev, "g2 not monotone at mu = {m}");
            prev = g;
        }
        // Larger target g2 -> larger calibrated mu.
        let mu_low = calibrate_mu(0.001, &params).unwrap();
        let mu_high = calibrate_mu(0.01, &params).unwrap();
        assert!(mu_low < mu && mu < mu_high);
    }

    #[test]
    fn calibrated_mu_reproduces_g2_in_monte_carlo() {
        // Cross-check the enumeration oracle against simulation at 1e8 pulses
        // is done in the acceptance suite; here a cheaper 2e7-pulse check on
        // a brighter target keeps unit tests fast.
        let params = SourceParams::default();
        let target = 0.05;
        let mu = calibrate_mu(target, &params).unwrap();
        let mut p = params.clone();
        p.mean_pairs_per_pulse = mu;
        let stats = run_source(&p, StopCondition::PulseCount(20_000_000), 10, 0).unwrap();
        let g2 = estimate_g2(&stats).unwrap();
        let rel_se = 1.0 / (stats.triple_coincidences as f64).sqrt();
        assert!((g2 / target - 1.0).abs() < 3.0 * rel_se + 0.05, "g2 = {g2}");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let params = SourceParams::default();
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_source(&params, StopCondition::PulseCount(2_000_000), 42, 0).unwrap())
        };
        let a = run_with(1);
        let b = run_with(4);
        assert_eq!(a, b);
    }

    #[test]
    fn delivered_never_exceeds_pairs() {
        let mut params = unit_source(0.5);
        params.signal_path_transmission = 0.7;
        params.herald_detection_efficiency = 0.3;
        params.pockels_extinction = 0.1;
        for i in 0..200_000u64 {
            let mut rng = derive_rng(11, stream::SOURCE_PULSE, i);
            let out = simulate_pulse(&params, &mut rng);
            assert!(out.signal_photons_delivered <= out.pair_count);
            if !out.herald_fired && params.pockels_extinction == 0.0 {
                assert_eq!(out.signal_photons_delivered, 0);
            }
        }
    }
}
