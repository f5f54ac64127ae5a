//! Experiment configuration: a flat TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use spinprobe::estimation::ProtocolConfig;
use spinprobe::optimizer::OptimizerConfig;

use crate::error::{CliError, Result};

/// Chains at least this long only run with `--extended`.
pub const EXTENDED_MIN_SPINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    QfiSweep,
    Populations,
    Estimate,
    Oracle,
    BoundCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::QfiSweep => "qfi-sweep",
            Mode::Populations => "populations",
            Mode::Estimate => "estimate",
            Mode::Oracle => "oracle",
            Mode::BoundCheck => "bound-check",
        }
    }
}

/// Which estimation arms to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arms {
    Both,
    Controlled,
    Uncontrolled,
}

impl Arms {
    pub fn flags(self) -> Vec<bool> {
        match self {
            Arms::Both => vec![true, false],
            Arms::Controlled => vec![true],
            Arms::Uncontrolled => vec![false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub chain_length: usize,
    pub coupling: f64,
    /// Single probing time; ignored when `time_grid` is set.
    pub time: Option<f64>,
    pub time_grid: Option<Vec<f64>>,
    pub slots: usize,
    pub lambda_true: f64,
    pub lambda_init: f64,
    pub epsilon: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub amplitude_bound: Option<f64>,
    pub seed: u64,
    pub runs: usize,
    pub arms: Arms,
    pub warm_restarts: usize,
    pub max_rounds: usize,
    pub subsample_folds: usize,
    pub samples_per_slot: usize,
    /// Sector label of the initial state in `populations` mode.
    pub initial_site: usize,
    /// Use this constant amplitude instead of optimizing a pulse (`populations`).
    pub constant_control: Option<f64>,
    /// Pulse JSON to replay in `populations` mode.
    pub pulse_file: Option<PathBuf>,
    /// Step-2 field of the three-step protocol, in units of J (`oracle`).
    pub strong_field: f64,
    pub extended: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: None,
            chain_length: 5,
            coupling: 1.0,
            time: None,
            time_grid: None,
            slots: 20,
            lambda_true: 0.0,
            lambda_init: 0.1,
            epsilon: 0.01,
            restarts: 20,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            amplitude_bound: None,
            seed: 0,
            runs: 100,
            arms: Arms::Both,
            warm_restarts: 5,
            max_rounds: 50,
            subsample_folds: 10,
            samples_per_slot: 10,
            initial_site: 1,
            constant_control: None,
            pulse_file: None,
            strong_field: 200.0,
            extended: false,
            output_dir: None,
        }
    }
}

/// Values given on the command line; each one wins over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub chain_length: Option<usize>,
    pub coupling: Option<f64>,
    pub time: Option<f64>,
    pub time_grid: Option<Vec<f64>>,
    pub slots: Option<usize>,
    pub lambda_true: Option<f64>,
    pub lambda_init: Option<f64>,
    pub epsilon: Option<f64>,
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub extended: bool,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = o.$field.clone() {
                    self.$field = v;
                })*
            };
        }
        take!(chain_length, coupling, slots, lambda_true, lambda_init, epsilon, restarts, seed, runs);
        if let Some(t) = o.time {
            self.time = Some(t);
            self.time_grid = None;
        }
        if let Some(grid) = &o.time_grid {
            self.time_grid = Some(grid.clone());
        }
        if o.extended {
            self.extended = true;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = Some(dir.clone());
        }
    }

    /// The time grid, or the single time as a one-point grid.
    pub fn times(&self) -> Result<Vec<f64>> {
        let times = match (&self.time_grid, self.time) {
            (Some(grid), _) => grid.clone(),
            (None, Some(t)) => vec![t],
            (None, None) => {
                return Err(CliError::Config(
                    "a probing time is required (`time`, `time_grid`, --time or --time-grid)".into(),
                ))
            }
        };
        if times.is_empty() {
            return Err(CliError::Config("time grid is empty".into()));
        }
        if let Some(bad) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(CliError::Config(format!("probing times must be positive, got {bad}")));
        }
        Ok(times)
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        if self.chain_length < 2 {
            return Err(CliError::Config(format!("chain length must be at least 2, got {}", self.chain_length)));
        }
        if !(self.coupling.is_finite() && self.coupling > 0.0) {
            return Err(CliError::Config(format!("coupling must be positive, got {}", self.coupling)));
        }
        self.times()?;
        let positive = [
            ("slots", self.slots),
            ("restarts", self.restarts),
            ("runs", self.runs),
            ("samples_per_slot", self.samples_per_slot),
            ("max_rounds", self.max_rounds),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("{name} must be at least 1")));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(CliError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lambda_true.is_finite() && self.lambda_init.is_finite()) {
            return Err(CliError::Config("lambda values must be finite".into()));
        }
        if mode == Mode::Populations && self.initial_site > self.chain_length {
            return Err(CliError::Config(format!(
                "initial site {} outside the chain of {}",
                self.initial_site, self.chain_length
            )));
        }
        if mode != Mode::Oracle && self.chain_length >= EXTENDED_MIN_SPINS && !self.extended {
            return Err(CliError::Config(format!(
                "chains of {EXTENDED_MIN_SPINS} or more spins are long-running; pass --extended to run N = {}",
                self.chain_length
            )));
        }
        self.optimizer(0).validate()?;
        Ok(())
    }

    pub fn optimizer(&self, rng_seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            slots: self.slots,
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            amplitude_bound: self.amplitude_bound,
            rng_seed,
            ..Default::default()
        }
    }

    pub fn protocol(&self, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            optimizer: self.optimizer(seed),
            warm_restarts: self.warm_restarts,
            max_rounds: self.max_rounds,
            subsample_folds: self.subsample_folds,
            seed,
            ..Default::default()
        }
    }

    /// Rough wall-clock estimate in seconds on one core.
    pub fn runtime_estimate(&self, mode: Mode) -> f64 {
        // One QFI-plus-gradient evaluation for N = 5, m = 20 takes about a millisecond.
        let per_eval = 1e-3 * ((self.chain_length + 1) as f64 / 6.0).powi(3) * self.slots as f64 / 20.0;
        let per_optimization = per_eval * self.restarts as f64 * 300.0;
        let points = self.times().map(|t| t.len()).unwrap_or(1) as f64;
        let threads = rayon::current_num_threads() as f64;
        match mode {
            Mode::QfiSweep => points * per_optimization / threads,
            Mode::Populations => per_optimization,
            Mode::Estimate => {
                let per_run = per_optimization * (1.0 + 3.0 * self.warm_restarts as f64 / self.restarts as f64);
                points * self.runs as f64 * per_run / threads
            }
            Mode::Oracle => points * 0.05,
            Mode::BoundCheck => points * self.runs as f64 * per_eval,
        }
    }
}

/// Parses `a,b,c` or `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_time_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |e: &dyn std::fmt::Display| CliError::Config(format!("bad time grid `{text}`: {e}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|e| bad(&e)))
            .collect::<Result<_>>()?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0 && stop >= start) {
            return Err(bad(&"need start <= stop and a positive step"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count).map(|k| start + k as f64 * step).collect());
    }
    text.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| bad(&e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "mode = \"estimate\"\nchain_length = 3\ntime = 6.5\nrestarts = 4\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(cfg.mode, Some(Mode::Estimate));
        assert_eq!(cfg.chain_length, 3);
        assert_eq!(cfg.slots, 20);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text, Path::new("y")).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml_str("chain_lenght = 3\n", Path::new("x.toml")).unwrap_err();
        assert_eq!(e.kind(), "parse");
    }

    #[test]
    fn flags_win_over_file() {
        let mut cfg = ExperimentConfig {
            time_grid: Some(vec![1.0, 2.0]),
            seed: 3,
            ..Default::default()
        };
        cfg.apply(&Overrides {
            time: Some(4.0),
            seed: Some(9),
            extended: true,
            ..Default::default()
        });
        assert_eq!(cfg.times().unwrap(), vec![4.0]);
        assert_eq!(cfg.seed, 9);
        assert!(cfg.extended);
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.validate(Mode::QfiSweep).unwrap_err().kind(), "config");
        cfg.time = Some(5.0);
        cfg.validate(Mode::QfiSweep).unwrap();
        cfg.chain_length = 10;
        assert!(cfg.validate(Mode::QfiSweep).is_err());
        cfg.extended = true;
        cfg.validate(Mode::QfiSweep).unwrap();
        cfg.epsilon = 0.0;
        assert!(cfg.validate(Mode::Estimate).is_err());
    }

    #[test]
    fn time_grids() {
        assert_eq!(parse_time_grid("1,2.5, 4").unwrap(), vec![1.0, 2.5, 4.0]);
        assert_eq!(parse_time_grid("2:4:0.5").unwrap(), vec![2.0, 2.5, 3.0, 3.5, 4.0]);
        assert!(parse_time_grid("2:1:0.5").is_err());
        assert!(parse_time_grid("a,b").is_err());
    }
}
