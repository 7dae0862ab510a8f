//! Executes a resolved run configuration and writes the output artifacts:
//! a per-trial (or per-point) CSV, `summary.json`, and `config_echo`, a
//! resolved config that reproduces the run when fed back in.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::config::{to_ini, ProtocolConfig, RunConfig};
use crate::error::{Error, Result};
use crate::inference::{fit_hecht, FosPoint};
use crate::protocols::{
    exact_power, required_trials, run_2afc, run_bell, run_hecht, run_superposition_vs_mixture,
    TrialRecord,
};
use crate::source::{run_source, SourceStats, StopCondition};

pub const TRIALS_CSV_SCHEMA: &str = "# photon-sight trials.csv schema v1";
pub const POINTS_CSV_SCHEMA: &str = "# photon-sight points.csv schema v1";
pub const STATS_CSV_SCHEMA: &str = "# photon-sight stats.csv schema v1";

/// What a run produced: the headline line for stdout and the files written.
#[derive(Debug)]
pub struct RunOutput {
    pub headline: String,
    pub files: Vec<String>,
}

pub fn execute(config: &RunConfig) -> Result<RunOutput> {
    fs::create_dir_all(&config.output_dir)?;
    let mut files = Vec::new();

    let echo_path = config.output_dir.join("config_echo");
    fs::write(&echo_path, to_ini(config))?;
    files.push("config_echo".to_string());

    let (headline, summary) = match &config.protocol {
        ProtocolConfig::SourceStats { stop_pulses, stop_heralds, pulse_cap } => {
            let stop = match (stop_pulses, stop_heralds) {
                (Some(n), _) => StopCondition::PulseCount(*n),
                (_, Some(n)) => StopCondition::HeraldCount(*n),
                _ => return Err(Error::Config("no stop condition".into())),
            };
            let stats = run_source(&config.source, stop, config.seed, *pulse_cap)?;
            write_stats_csv(&config.output_dir, &stats)?;
            files.push("stats.csv".to_string());
            let headline = format!(
                "pulses={} heralds={} heralding_efficiency={:.4} g2={} herald_rate_hz={:.2}",
                stats.pulses,
                stats.heralds,
                stats.estimated_heralding_efficiency,
                stats.estimated_g2.map_or("n/a".to_string(), |v| format!("{v:.4}")),
                stats.herald_rate,
            );
            (headline, serde_json::to_value(&stats)?)
        }
        ProtocolConfig::Hecht { intensities, trials_per_intensity } => {
            let points = run_hecht(intensities, *trials_per_intensity, &config.eye, config.seed)?;
            write_points_csv(&config.output_dir, &points)?;
            files.push("points.csv".to_string());
            let fit = fit_hecht(&points);
            let headline = match &fit {
                Ok(f) => format!(
                    "points={} n_hat={} alpha_hat={:.4}",
                    points.len(),
                    f.n_hat,
                    f.alpha_hat
                ),
                Err(e) => format!("points={} fit_skipped={}", points.len(), e),
            };
            let summary = json!({
                "points": points,
                "fit": fit.ok(),
            });
            (headline, summary)
        }
        ProtocolConfig::Afc { trials, control_fraction } => {
            let (session, records) =
                run_2afc(&config.source, &config.eye, *trials, *control_fraction, config.seed)?;
            write_trials_csv(&config.output_dir, &records)?;
            files.push("trials.csv".to_string());
            let headline = match (session.accuracy, &session.accuracy_ci) {
                (Some(acc), Some(ci)) => {
                    format!("trials={} accuracy={:.4} ci95=[{:.4},{:.4}]", session.trials, acc, ci.lo, ci.hi)
                }
                _ => format!("trials={} accuracy=n/a", session.trials),
            };
            (headline, serde_json::to_value(&session)?)
        }
        ProtocolConfig::Superposition { trials_per_condition, anomaly_epsilon } => {
            let outcome = run_superposition_vs_mixture(
                &config.source,
                &config.eye,
                *trials_per_condition,
                *anomaly_epsilon,
                config.seed,
            )?;
            let headline = format!(
                "seen_superposition={}/{} seen_mixture={}/{} comparison_p={:.4e}",
                outcome.comparison.k1,
                outcome.comparison.n1,
                outcome.comparison.k2,
                outcome.comparison.n2,
                outcome.comparison.p_value,
            );
            (headline, serde_json::to_value(&outcome)?)
        }
        ProtocolConfig::Bell { trials, control_prob, observer_end_to_end, detector_efficiency } => {
            let (result, records) = run_bell(
                &config.source,
                *detector_efficiency,
                &config.eye,
                *observer_end_to_end,
                *trials,
                *control_prob,
                config.seed,
            )?;
            write_trials_csv(&config.output_dir, &records)?;
            files.push("trials.csv".to_string());
            let headline = format!(
                "p_obs={:.4} threshold={:.4} lhs_minus_rhs={:.4} violation_p={:.4e}",
                result.p_obs_estimate, result.threshold, result.lhs_minus_rhs, result.violation_p_value,
            );
            (headline, serde_json::to_value(&result)?)
        }
        ProtocolConfig::Fit { input } => {
            let points = read_points_csv(input)?;
            let fit = fit_hecht(&points)?;
            let headline = format!(
                "n_hat={} alpha_hat={:.6} alpha_ci=[{:.6},{:.6}]",
                fit.n_hat, fit.alpha_hat, fit.alpha_ci.lo, fit.alpha_ci.hi
            );
            (headline, serde_json::to_value(&fit)?)
        }
        ProtocolConfig::Power { p0, p1, alpha, power } => {
            let n = required_trials(*p0, *p1, *alpha, *power)?;
            let achieved = exact_power(*p0, *p1, *alpha, n);
            let headline = format!("required_trials={n} achieved_power={achieved:.4}");
            let summary = json!({
                "p0": p0, "p1": p1, "alpha": alpha, "target_power": power,
                "required_trials": n, "achieved_power": achieved,
            });
            (headline, summary)
        }
    };

    let envelope = json!({
        "command": config.command.name(),
        "seed": config.seed,
        "result": summary,
    });
    let mut buf = serde_json::to_vec_pretty(&envelope)?;
    buf.push(b'\n');
    fs::write(config.output_dir.join("summary.json"), buf)?;
    files.push("summary.json".to_string());

    Ok(RunOutput { headline, files })
}

fn write_stats_csv(dir: &Path, stats: &SourceStats) -> Result<()> {
    let mut f = fs::File::create(dir.join("stats.csv"))?;
    writeln!(f, "{STATS_CSV_SCHEMA}")?;
    writeln!(f, "{}", SourceStats::CSV_HEADER)?;
    writeln!(f, "{}", stats.to_csv_row())?;
    Ok(())
}

fn write_points_csv(dir: &Path, points: &[FosPoint]) -> Result<()> {
    let mut f = fs::File::create(dir.join("points.csv"))?;
    writeln!(f, "{POINTS_CSV_SCHEMA}")?;
    writeln!(f, "mean_photons,trials,seen_count")?;
    for p in points {
        writeln!(f, "{},{},{}", p.mean_photons, p.trials, p.seen_count)?;
    }
    Ok(())
}

/// Reads a frequency-of-seeing CSV as written by `write_points_csv`.
pub fn read_points_csv(path: &Path) -> Result<Vec<FosPoint>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, first)) if first.trim() == POINTS_CSV_SCHEMA => {}
        _ => {
            return Err(Error::Config(format!(
                "{}: missing schema line '{}'",
                path.display(),
                POINTS_CSV_SCHEMA
            )))
        }
    }
    match lines.next() {
        Some((_, header)) if header.trim() == "mean_photons,trials,seen_count" => {}
        _ => {
            return Err(Error::Config(format!(
                "{}: expected header 'mean_photons,trials,seen_count'",
                path.display()
            )))
        }
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Config(format!(
                "{} line {}: expected 3 fields, got {}",
                path.display(),
                idx + 1,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            Error::Config(format!("{} line {}: invalid {what}", path.display(), idx + 1))
        };
        points.push(FosPoint {
            mean_photons: fields[0].parse().map_err(|_| parse_err("mean_photons"))?,
            trials: fields[1].parse().map_err(|_| parse_err("trials"))?,
            seen_count: fields[2].parse().map_err(|_| parse_err("seen_count"))?,
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyData(format!("{}: no data rows", path.display())));
    }
    Ok(points)
}

fn write_trials_csv(dir: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut f = fs::File::create(dir.join("trials.csv"))?;
    writeln!(f, "{TRIALS_CSV_SCHEMA}")?;
    writeln!(
        f,
        "trial_id,condition,photons_left,photons_right,truth_side,response,correct,seen_left,seen_right"
    )?;
    for r in records {
        let truth = match r.truth_side {
            Some(crate::observer::ResponseSide::Left) => "left",
            Some(crate::observer::ResponseSide::Right) => "right",
            None => "",
        };
        let correct = r.correct.map_or(String::new(), |c| c.to_string());
        let (seen_left, seen_right) = match r.seen_flags() {
            Some((l, rgt)) => (l.to_string(), rgt.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            r.trial_id,
            condition_text(r.condition),
            r.photons_delivered_left,
            r.photons_delivered_right,
            truth,
            r.response_text(),
            correct,
            seen_left,
            seen_right,
        )?;
    }
    Ok(())
}

fn condition_text(c: crate::protocols::Condition) -> &'static str {
    use crate::protocols::Condition::*;
    match c {
        StimulusLeft => "stimulus_left",
        StimulusRight => "stimulus_right",
        Superposition => "superposition",
        Mixture => "mixture",
        ControlBlank => "control_blank",
        BellEntangled => "bell_entangled",
    }
}

/// Serializes a value to the exact JSON text used in summary.json; handy
/// for byte-identity checks in tests.
pub fn to_summary_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}
