//! Run configuration: an INI-like `key = value` format with `[sections]`,
//! `#` comments, strict validation (unknown keys are rejected, duplicates
//! are errors), and a resolved-config echo that parses back to the same run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use crate::observer::EyeParams;
use crate::source::{SourceParams, DEFAULT_PULSE_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SourceStats,
    Hecht,
    Afc,
    Superposition,
    Bell,
    Fit,
    Power,
}

impl Command {
    pub fn parse(s: &str) -> Option<Command> {
        Some(match s {
            "source-stats" => Command::SourceStats,
            "hecht" => Command::Hecht,
            "afc" => Command::Afc,
            "superposition" => Command::Superposition,
            "bell" => Command::Bell,
            "fit" => Command::Fit,
            "power" => Command::Power,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::SourceStats => "source-stats",
            Command::Hecht => "hecht",
            Command::Afc => "afc",
            Command::Superposition => "superposition",
            Command::Bell => "bell",
            Command::Fit => "fit",
            Command::Power => "power",
        }
    }

    /// Commands whose results depend on random draws must carry an explicit
    /// seed; nothing falls back to the wall clock.
    pub fn needs_seed(&self) -> bool {
        !matches!(self, Command::Fit | Command::Power)
    }
}

/// One validation failure, locatable in the source text.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum ProtocolConfig {
    SourceStats {
        stop_pulses: Option<u64>,
        stop_heralds: Option<u64>,
        pulse_cap: u64,
    },
    Hecht {
        intensities: Vec<f64>,
        trials_per_intensity: u64,
    },
    Afc {
        trials: u64,
        control_fraction: f64,
    },
    Superposition {
        trials_per_condition: u64,
        anomaly_epsilon: f64,
    },
    Bell {
        trials: u64,
        control_prob: f64,
        observer_end_to_end: f64,
        detector_efficiency: f64,
    },
    Fit {
        input: PathBuf,
    },
    Power {
        p0: f64,
        p1: f64,
        alpha: f64,
        power: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub source: SourceParams,
    pub eye: EyeParams,
    pub protocol: ProtocolConfig,
}

struct Entry {
    line: usize,
    value: String,
    consumed: bool,
}

/// Raw key/value store: (section, key) -> entry, with duplicate detection.
struct RawConfig {
    entries: BTreeMap<(String, String), Entry>,
    issues: Vec<ConfigIssue>,
}

impl RawConfig {
    fn parse(text: &str) -> RawConfig {
        let mut entries: BTreeMap<(String, String), Entry> = BTreeMap::new();
        let mut issues = Vec::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                match rest.strip_suffix(']') {
                    Some(name) if !name.trim().is_empty() => {
                        section = name.trim().to_string();
                    }
                    _ => issues.push(ConfigIssue {
                        line: Some(lineno),
                        message: format!("malformed section header '{line}'"),
                    }),
                }
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    let key = key.trim().to_string();
                    let value = value.trim().to_string();
                    if key.is_empty() {
                        issues.push(ConfigIssue {
                            line: Some(lineno),
                            message: "missing key before '='".into(),
                        });
                        continue;
                    }
                    let slot = (section.clone(), key.clone());
                    if let Some(prev) = entries.get(&slot) {
                        issues.push(ConfigIssue {
                            line: Some(lineno),
                            message: format!(
                                "duplicate key '{}' in {}: first set at line {}",
                                key,
                                section_label(&section),
                                prev.line
                            ),
                        });
                        continue;
                    }
                    entries.insert(slot, Entry { line: lineno, value, consumed: false });
                }
                None => issues.push(ConfigIssue {
                    line: Some(lineno),
                    message: format!("expected 'key = value', got '{line}'"),
                }),
            }
        }
        RawConfig { entries, issues }
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(&(section.to_string(), key.to_string())).map(|e| {
            e.consumed = true;
            (e.line, e.value.clone())
        })
    }

    fn reject_unconsumed(&mut self) {
        for ((section, key), entry) in &self.entries {
            if !entry.consumed {
                self.issues.push(ConfigIssue {
                    line: Some(entry.line),
                    message: format!("unknown key '{key}' in {}", section_label(section)),
                });
            }
        }
    }
}

fn section_label(section: &str) -> String {
    if section.is_empty() {
        "the top-level section".to_string()
    } else {
        format!("[{section}]")
    }
}

struct Builder<'a> {
    raw: &'a mut RawConfig,
}

impl<'a> Builder<'a> {
    fn issue(&mut self, line: Option<usize>, message: String) {
        self.raw.issues.push(ConfigIssue { line, message });
    }

    fn field<T: std::str::FromStr>(
        &mut self,
        section: &str,
        key: &str,
        default: Option<T>,
        type_name: &str,
    ) -> Option<T> {
        let label = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        match self.raw.take(section, key) {
            Some((line, value)) => match value.parse::<T>() {
                Ok(v) => Some(v),
                Err(_) => {
                    self.issue(Some(line), format!("{label} must be a valid {type_name}, got '{value}'"));
                    None
                }
            },
            None => match default {
                Some(d) => Some(d),
                None => {
                    self.issue(None, format!("missing required key {label}"));
                    None
                }
            },
        }
    }

    fn float_list(&mut self, section: &str, key: &str) -> Option<Vec<f64>> {
        match self.raw.take(section, key) {
            Some((line, value)) => {
                let mut out = Vec::new();
                for piece in value.split(',') {
                    match piece.trim().parse::<f64>() {
                        Ok(v) => out.push(v),
                        Err(_) => {
                            self.issue(
                                Some(line),
                                format!("{section}.{key} must be a comma-separated list of numbers, got '{piece}'"),
                            );
                            return None;
                        }
                    }
                }
                Some(out)
            }
            None => {
                self.issue(None, format!("missing required key {section}.{key}"));
                None
            }
        }
    }
}

/// Parses and fully validates a config text. Returns either a resolved
/// `RunConfig` (defaults applied) or every issue found.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigIssue>> {
    let mut raw = RawConfig::parse(text);
    let mut b = Builder { raw: &mut raw };

    let command = match b.field::<String>("", "command", None, "command name") {
        Some(name) => match Command::parse(&name) {
            Some(c) => Some(c),
            None => {
                b.issue(
                    None,
                    format!(
                        "command must be one of source-stats, hecht, afc, superposition, bell, fit, power; got '{name}'"
                    ),
                );
                None
            }
        },
        None => None,
    };

    let needs_seed = command.map(|c| c.needs_seed()).unwrap_or(false);
    let seed = if needs_seed {
        b.field::<u64>("", "seed", None, "64-bit unsigned integer")
    } else {
        b.field::<u64>("", "seed", Some(0), "64-bit unsigned integer")
    };
    let output_dir = b
        .field::<String>("", "output_dir", Some("out".to_string()), "path")
        .map(PathBuf::from);

    // [source]
    let d = SourceParams::default();
    let source = SourceParams {
        rep_rate: b.field("source", "rep_rate", Some(d.rep_rate), "number").unwrap_or(d.rep_rate),
        mean_pairs_per_pulse: b
            .field("source", "mean_pairs_per_pulse", Some(d.mean_pairs_per_pulse), "number")
            .unwrap_or(d.mean_pairs_per_pulse),
        herald_detection_efficiency: b
            .field("source", "herald_detection_efficiency", Some(d.herald_detection_efficiency), "number")
            .unwrap_or(d.herald_detection_efficiency),
        signal_path_transmission: b
            .field("source", "signal_path_transmission", Some(d.signal_path_transmission), "number")
            .unwrap_or(d.signal_path_transmission),
        background_prob_per_pulse: b
            .field("source", "background_prob_per_pulse", Some(d.background_prob_per_pulse), "number")
            .unwrap_or(d.background_prob_per_pulse),
        pockels_extinction: b
            .field("source", "pockels_extinction", Some(d.pockels_extinction), "number")
            .unwrap_or(d.pockels_extinction),
    };
    if let Err(e) = source.validate() {
        b.issue(None, e.to_string());
    }

    // [eye]
    let d = EyeParams::default();
    let eye = EyeParams {
        pre_retinal_transmission: b
            .field("eye", "pre_retinal_transmission", Some(d.pre_retinal_transmission), "number")
            .unwrap_or(d.pre_retinal_transmission),
        rod_quantum_efficiency: b
            .field("eye", "rod_quantum_efficiency", Some(d.rod_quantum_efficiency), "number")
            .unwrap_or(d.rod_quantum_efficiency),
        dark_event_rate: b
            .field("eye", "dark_event_rate", Some(d.dark_event_rate), "number")
            .unwrap_or(d.dark_event_rate),
        integration_window: b
            .field("eye", "integration_window", Some(d.integration_window), "number")
            .unwrap_or(d.integration_window),
        threshold_n: b
            .field("eye", "threshold_n", Some(d.threshold_n), "positive integer")
            .unwrap_or(d.threshold_n),
        guess_bias_right: b
            .field("eye", "guess_bias_right", Some(d.guess_bias_right), "number")
            .unwrap_or(d.guess_bias_right),
    };
    if let Err(e) = eye.validate() {
        b.issue(None, e.to_string());
    }

    // [protocol]
    let protocol = command.and_then(|cmd| build_protocol(&mut b, cmd));

    b.raw.reject_unconsumed();

    match (command, seed, output_dir, protocol) {
        (Some(command), Some(seed), Some(output_dir), Some(protocol)) if raw.issues.is_empty() => Ok(RunConfig {
            command,
            seed,
            output_dir,
            source,
            eye,
            protocol,
        }),
        _ => Err(raw.issues),
    }
}

fn build_protocol(b: &mut Builder<'_>, cmd: Command) -> Option<ProtocolConfig> {
    const S: &str = "protocol";
    match cmd {
        Command::SourceStats => {
            let stop_pulses = b.field::<u64>(S, "stop_pulses", Some(0), "integer")?;
            let stop_heralds = b.field::<u64>(S, "stop_heralds", Some(0), "integer")?;
            let pulse_cap = b.field::<u64>(S, "pulse_cap", Some(DEFAULT_PULSE_CAP), "integer")?;
            let stop_pulses = (stop_pulses > 0).then_some(stop_pulses);
            let stop_heralds = (stop_heralds > 0).then_some(stop_heralds);
            if stop_pulses.is_some() == stop_heralds.is_some() {
                b.issue(None, "protocol requires exactly one of stop_pulses or stop_heralds > 0".into());
                return None;
            }
            Some(ProtocolConfig::SourceStats { stop_pulses, stop_heralds, pulse_cap })
        }
        Command::Hecht => {
            let intensities = b.float_list(S, "intensities")?;
            let trials = b.field::<u64>(S, "trials_per_intensity", None, "integer")?;
            if intensities.is_empty() || intensities.iter().any(|&v| v < 0.0) {
                b.issue(None, "protocol.intensities must be nonempty and nonnegative".into());
                return None;
            }
            if trials == 0 {
                b.issue(None, "protocol.trials_per_intensity must be > 0".into());
                return None;
            }
            Some(ProtocolConfig::Hecht { intensities, trials_per_intensity: trials })
        }
        Command::Afc => {
            let trials = b.field::<u64>(S, "trials", None, "integer")?;
            let control_fraction = b.field::<f64>(S, "control_fraction", Some(0.5), "number")?;
            if trials == 0 {
                b.issue(None, "protocol.trials must be > 0".into());
                return None;
            }
            if !(0.0..=1.0).contains(&control_fraction) {
                b.issue(None, "protocol.control_fraction must be in [0,1]".into());
                return None;
            }
            Some(ProtocolConfig::Afc { trials, control_fraction })
        }
        Command::Superposition => {
            let trials = b.field::<u64>(S, "trials_per_condition", None, "integer")?;
            let eps = b.field::<f64>(S, "anomaly_epsilon", Some(0.0), "number")?;
            if trials == 0 {
                b.issue(None, "protocol.trials_per_condition must be > 0".into());
                return None;
            }
            if eps.abs() > 0.5 {
                b.issue(None, "protocol.anomaly_epsilon must satisfy |eps| <= 0.5".into());
                return None;
            }
            Some(ProtocolConfig::Superposition { trials_per_condition: trials, anomaly_epsilon: eps })
        }
        Command::Bell => {
            let trials = b.field::<u64>(S, "trials", None, "integer")?;
            let control_prob = b.field::<f64>(S, "control_prob", Some(0.28), "number")?;
            let observer = b.field::<f64>(S, "observer_end_to_end", None, "number")?;
            let det = b.field::<f64>(S, "detector_efficiency", Some(1.0), "number")?;
            if trials == 0 {
                b.issue(None, "protocol.trials must be > 0".into());
                return None;
            }
            for (name, v) in [
                ("control_prob", control_prob),
                ("observer_end_to_end", observer),
                ("detector_efficiency", det),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    b.issue(None, format!("protocol.{name} must be in [0,1]"));
                    return None;
                }
            }
            Some(ProtocolConfig::Bell {
                trials,
                control_prob,
                observer_end_to_end: observer,
                detector_efficiency: det,
            })
        }
        Command::Fit => {
            let input = b.field::<String>(S, "input", None, "path")?;
            Some(ProtocolConfig::Fit { input: PathBuf::from(input) })
        }
        Command::Power => {
            let p0 = b.field::<f64>(S, "p0", None, "number")?;
            let p1 = b.field::<f64>(S, "p1", None, "number")?;
            let alpha = b.field::<f64>(S, "alpha", Some(0.05), "number")?;
            let power = b.field::<f64>(S, "power", Some(0.9), "number")?;
            if !(0.0 < p0 && p0 < p1 && p1 < 1.0) {
                b.issue(None, "protocol requires 0 < p0 < p1 < 1".into());
                return None;
            }
            if !(0.0 < alpha && alpha < 1.0 && 0.0 < power && power < 1.0) {
                b.issue(None, "protocol.alpha and protocol.power must be in (0,1)".into());
                return None;
            }
            Some(ProtocolConfig::Power { p0, p1, alpha, power })
        }
    }
}

/// Renders the fully-resolved config back to parseable text. Parsing the
/// echo reproduces an identical run.
pub fn to_ini(config: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str("# photon-sight resolved config\n");
    s.push_str(&format!("command = {}\n", config.command.name()));
    s.push_str(&format!("seed = {}\n", config.seed));
    s.push_str(&format!("output_dir = {}\n\n", config.output_dir.display()));

    s.push_str("[source]\n");
    let src = &config.source;
    s.push_str(&format!("rep_rate = {}\n", src.rep_rate));
    s.push_str(&format!("mean_pairs_per_pulse = {}\n", src.mean_pairs_per_pulse));
    s.push_str(&format!("herald_detection_efficiency = {}\n", src.herald_detection_efficiency));
    s.push_str(&format!("signal_path_transmission = {}\n", src.signal_path_transmission));
    s.push_str(&format!("background_prob_per_pulse = {}\n", src.background_prob_per_pulse));
    s.push_str(&format!("pockels_extinction = {}\n\n", src.pockels_extinction));

    s.push_str("[eye]\n");
    let eye = &config.eye;
    s.push_str(&format!("pre_retinal_transmission = {}\n", eye.pre_retinal_transmission));
    s.push_str(&format!("rod_quantum_efficiency = {}\n", eye.rod_quantum_efficiency));
    s.push_str(&format!("dark_event_rate = {}\n", eye.dark_event_rate));
    s.push_str(&format!("integration_window = {}\n", eye.integration_window));
    s.push_str(&format!("threshold_n = {}\n", eye.threshold_n));
    s.push_str(&format!("guess_bias_right = {}\n\n", eye.guess_bias_right));

    s.push_str("[protocol]\n");
    match &config.protocol {
        ProtocolConfig::SourceStats { stop_pulses, stop_heralds, pulse_cap } => {
            s.push_str(&format!("stop_pulses = {}\n", stop_pulses.unwrap_or(0)));
            s.push_str(&format!("stop_heralds = {}\n", stop_heralds.unwrap_or(0)));
            s.push_str(&format!("pulse_cap = {pulse_cap}\n"));
        }
        ProtocolConfig::Hecht { intensities, trials_per_intensity } => {
            let list: Vec<String> = intensities.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("intensities = {}\n", list.join(", ")));
            s.push_str(&format!("trials_per_intensity = {trials_per_intensity}\n"));
        }
        ProtocolConfig::Afc { trials, control_fraction } => {
            s.push_str(&format!("trials = {trials}\n"));
            s.push_str(&format!("control_fraction = {control_fraction}\n"));
        }
        ProtocolConfig::Superposition { trials_per_condition, anomaly_epsilon } => {
            s.push_str(&format!("trials_per_condition = {trials_per_condition}\n"));
            s.push_str(&format!("anomaly_epsilon = {anomaly_epsilon}\n"));
        }
        ProtocolConfig::Bell { trials, control_prob, observer_end_to_end, detector_efficiency } => {
            s.push_str(&format!("trials = {trials}\n"));
            s.push_str(&format!("control_prob = {control_prob}\n"));
            s.push_str(&format!("observer_end_to_end = {observer_end_to_end}\n"));
            s.push_str(&format!("detector_efficiency = {detector_efficiency}\n"));
        }
        ProtocolConfig::Fit { input } => {
            s.push_str(&format!("input = {}\n", input.display()));
        }
        ProtocolConfig::Power { p0, p1, alpha, power } => {
            s.push_str(&format!("p0 = {p0}\n"));
            s.push_str(&format!("p1 = {p1}\n"));
            s.push_str(&format!("alpha = {alpha}\n"));
            s.push_str(&format!("power = {power}\n"));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_AFC: &str = "command = afc\nseed = 42\n[protocol]\ntrials = 100\n";

    #[test]
    fn minimal_afc_parses_with_defaults() {
        let cfg = parse_config(MINIMAL_AFC).unwrap();
        assert_eq!(cfg.command, Command::Afc);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.eye.rod_quantum_efficiency, 0.33);
        match cfg.protocol {
            ProtocolConfig::Afc { trials, control_fraction } => {
                assert_eq!(trials, 100);
                assert_eq!(control_fraction, 0.5);
            }
            _ => panic!("wrong protocol"),
        }
    }

    #[test]
    fn out_of_range_value_names_the_constraint() {
        let text = "command = afc\nseed = 1\n[eye]\npre_retinal_transmission = 1.5\n[protocol]\ntrials = 10\n";
        let issues = parse_config(text).unwrap_err();
        assert!(
            issues.iter().any(|i| i.message.contains("eye.pre_retinal_transmission must be in [0,1]")),
            "{issues:?}"
        );
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let text = "command = afc\nseed = 1\n[protocol]\ntrials = 10\ntrials = 20\n";
        let issues = parse_config(text).unwrap_err();
        let msg = issues.iter().find(|i| i.message.contains("duplicate key 'trials'")).unwrap();
        assert_eq!(msg.line, Some(5));
        assert!(msg.message.contains("line 4"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "command = afc\nseed = 1\nbogus = 3\n[protocol]\ntrials = 10\n";
        let issues = parse_config(text).unwrap_err();
        assert!(issues.iter().any(|i| i.message.contains("unknown key 'bogus'")), "{issues:?}");
    }

    #[test]
    fn missing_seed_is_an_error_for_simulation_commands() {
        let text = "command = bell\n[protocol]\ntrials = 10\nobserver_end_to_end = 0.3\n";
        let issues = parse_config(text).unwrap_err();
        assert!(issues.iter().any(|i| i.message.contains("missing required key seed")), "{issues:?}");
    }

    #[test]
    fn power_command_needs_no_seed() {
        let text = "command = power\n[protocol]\np0 = 0.5\np1 = 0.53\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let text = "command = afc\nseed = 1\nwhat is this\n[protocol]\ntrials = 10\n";
        let issues = parse_config(text).unwrap_err();
        let issue = issues.iter().find(|i| i.message.contains("expected 'key = value'")).unwrap();
        assert_eq!(issue.line, Some(3));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config(MINIMAL_AFC).unwrap();
        let echo = to_ini(&cfg);
        let cfg2 = parse_config(&echo).unwrap();
        assert_eq!(to_ini(&cfg2), echo);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# full line comment\ncommand = afc  # trailing\nseed = 7\n\n[protocol]\ntrials = 5\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.seed, 7);
    }
}
