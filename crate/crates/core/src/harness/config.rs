//! Run configuration, read from TOML and overridable field by field.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraint::{ActionSet, ConstraintAutomaton, ConstraintDescriptor};
use crate::continuum::{discretize, PiecewiseConstantLoss, StepFunction, SuperTaskGrid};
use crate::error::{Error, Result};
use crate::global::Aggregator;
use crate::lattice::EtaRule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub game: GameConfig,
    #[serde(default)]
    pub forecaster: ForecasterConfig,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    /// Unused in continuum mode, where the grid fixes the constraint.
    pub constraint: Option<ConstraintDescriptor>,
    pub tasks: Option<usize>,
    /// Number of actions, valued `1..=N`. Ignored when `action_values` is set.
    pub actions: Option<usize>,
    pub action_values: Option<Vec<f64>>,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_replicas() -> usize {
    1
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Standard,
    Tracking,
    Global,
    Continuum,
}

/// Learning rate: tuned from the horizon, or given.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum EtaSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl FromStr for EtaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "auto" {
            return Ok(EtaSetting::Auto);
        }
        let v: f64 =
            s.trim().parse().map_err(|_| Error::input(format!("eta must be `auto` or a number, got `{s}`")))?;
        EtaSetting::fixed(v)
    }
}

impl EtaSetting {
    fn fixed(v: f64) -> Result<Self> {
        if v >= 0.0 && v.is_finite() {
            Ok(EtaSetting::Fixed(v))
        } else {
            Err(Error::input(format!("eta must be finite and non-negative, got {v}")))
        }
    }
}

impl fmt::Display for EtaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtaSetting::Auto => f.write_str("auto"),
            EtaSetting::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EtaRepr {
    Number(f64),
    Text(String),
}

impl<'de> Deserialize<'de> for EtaSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let parsed = match EtaRepr::deserialize(d)? {
            EtaRepr::Number(v) => EtaSetting::fixed(v),
            EtaRepr::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

impl Serialize for EtaSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EtaSetting::Auto => s.serialize_str("auto"),
            EtaSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecasterConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub eta: EtaSetting,
    #[serde(default)]
    pub eta_rule: EtaRule,
    /// Switch budget `K` in tracking mode.
    pub switches: Option<usize>,
    pub aggregator: Option<Aggregator>,
    /// Grid resolution in continuum mode.
    pub eps: Option<f64>,
    /// Shift budget `m` in continuum mode.
    pub shifts: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Zero,
    #[default]
    Iid,
    Rotating,
    Piecewise,
    Continuum,
    /// Step functions listed in `environment.script`, replayed cyclically.
    Steps,
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" => Ok(EnvKind::Zero),
            "iid" => Ok(EnvKind::Iid),
            "rotating" => Ok(EnvKind::Rotating),
            "piecewise" => Ok(EnvKind::Piecewise),
            "continuum" => Ok(EnvKind::Continuum),
            "steps" => Ok(EnvKind::Steps),
            other => Err(Error::input(format!(
                "unknown environment `{other}`, expected zero, iid, rotating, piecewise, continuum or steps"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default)]
    pub kind: EnvKind,
    /// Every task sees the same per-action losses. Implied in global mode.
    #[serde(default)]
    pub common: bool,
    /// Rounds between moves of the favoured action (rotating).
    #[serde(default = "default_period")]
    pub period: usize,
    /// Number of distribution changes (piecewise).
    #[serde(default = "default_change_points")]
    pub change_points: usize,
    /// Candidate breakpoint positions drawn once per replica (continuum).
    #[serde(default = "default_pool")]
    pub breakpoint_pool: usize,
    /// Breakpoints per loss function per round (continuum).
    #[serde(default = "default_pieces")]
    pub pieces: usize,
    /// Rounds of step-function losses, one function per action (steps).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<Vec<StepSpec>>,
}

/// Breakpoints and values of one step function, as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub starts: Vec<f64>,
    pub values: Vec<f64>,
}

impl EnvironmentConfig {
    /// The scripted rounds as validated loss functions.
    pub fn scripted_losses(&self, actions: usize) -> Result<Vec<PiecewiseConstantLoss>> {
        self.script
            .iter()
            .enumerate()
            .map(|(t, round)| {
                if round.len() != actions {
                    return Err(Error::config(
                        format!("environment.script[{t}]"),
                        format!("expected {actions} step functions, got {}", round.len()),
                    ));
                }
                let per_action = round
                    .iter()
                    .enumerate()
                    .map(|(k, f)| {
                        StepFunction::new(f.starts.clone(), f.values.clone())
                            .map_err(|e| Error::config(format!("environment.script[{t}][{k}]"), e.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                PiecewiseConstantLoss::new(per_action)
            })
            .collect()
    }
}

fn default_period() -> usize {
    50
}

fn default_change_points() -> usize {
    2
}

fn default_pool() -> usize {
    32
}

fn default_pieces() -> usize {
    3
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig {
            kind: EnvKind::default(),
            common: false,
            period: default_period(),
            change_points: default_change_points(),
            breakpoint_pool: default_pool(),
            pieces: default_pieces(),
            script: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::input(format!("unknown format `{other}`, expected csv or json"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub format: Format,
    pub path: Option<PathBuf>,
}

/// Parses `K=<int>`.
pub fn parse_track(s: &str) -> Result<usize> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::input(format!("expected `K=<int>`, got `{s}`")))?;
    if k.trim() != "K" {
        return Err(Error::input(format!("expected `K=<int>`, got `{s}`")));
    }
    v.trim().parse().map_err(|_| Error::input(format!("switch budget `{}` is not a non-negative integer", v.trim())))
}

/// Parses `eps=<real>,m=<int>` in either order.
pub fn parse_continuum(s: &str) -> Result<(f64, usize)> {
    let (mut eps, mut m) = (None, None);
    for part in s.split(',') {
        let (k, v) =
            part.split_once('=').ok_or_else(|| Error::input(format!("expected `eps=<real>,m=<int>`, got `{s}`")))?;
        match k.trim() {
            "eps" => eps = Some(v.trim().parse().map_err(|_| Error::input(format!("bad eps `{}`", v.trim())))?),
            "m" => m = Some(v.trim().parse().map_err(|_| Error::input(format!("bad m `{}`", v.trim())))?),
            other => return Err(Error::input(format!("unknown continuum parameter `{other}`"))),
        }
    }
    match (eps, m) {
        (Some(e), Some(m)) => Ok((e, m)),
        _ => Err(Error::input(format!("expected `eps=<real>,m=<int>`, got `{s}`"))),
    }
}

impl Config {
    /// A single-replica standard game with an i.i.d. environment.
    pub fn new(constraint: ConstraintDescriptor, tasks: usize, actions: usize, rounds: usize) -> Self {
        let mut c = Self::skeleton(rounds);
        c.game.constraint = Some(constraint);
        c.game.tasks = Some(tasks);
        c.game.actions = Some(actions);
        c
    }

    /// Defaults everywhere and no game shape: fill in the fields, then `validate`.
    pub fn skeleton(rounds: usize) -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            game: GameConfig {
                constraint: None,
                tasks: None,
                actions: None,
                action_values: None,
                rounds,
                seed: 0,
                replicas: 1,
                delta: default_delta(),
            },
            forecaster: ForecasterConfig::default(),
            environment: EnvironmentConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parses and validates TOML text. Errors name the offending field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.message().to_owned()))?;
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<document>".to_owned() } else { path }, e.into_inner().message().to_owned())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// Checks cross-field requirements; run again after applying overrides.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let g = &self.game;
        if g.replicas == 0 {
            return Err(Error::config("game.replicas", "must be at least 1"));
        }
        if !(g.delta > 0.0 && g.delta < 1.0) {
            return Err(Error::config("game.delta", format!("must lie in (0, 1), got {}", g.delta)));
        }
        self.action_set()?;
        let f = &self.forecaster;
        let continuum = f.mode == Mode::Continuum;
        let step_env = matches!(self.environment.kind, EnvKind::Continuum | EnvKind::Steps);
        if continuum != step_env && self.environment.kind != EnvKind::Zero {
            return Err(Error::config(
                "environment.kind",
                "the continuum and steps environments go with continuum mode and only there",
            ));
        }
        if self.environment.kind == EnvKind::Steps {
            if self.environment.script.is_empty() {
                return Err(Error::config("environment.script", "the steps environment needs at least one round"));
            }
            self.environment.scripted_losses(self.action_set()?.len())?;
        }
        if continuum {
            self.grid()?;
            let shifts = f.shifts.ok_or_else(|| Error::config("forecaster.shifts", "required in continuum mode"))?;
            if shifts >= self.grid()?.cells() {
                return Err(Error::config("forecaster.shifts", "must be below the number of grid cells"));
            }
            if self.environment.pieces == 0 || self.environment.breakpoint_pool < self.environment.pieces {
                return Err(Error::config(
                    "environment.breakpoint_pool",
                    "must hold at least `pieces` positions, and `pieces` must be positive",
                ));
            }
        } else {
            match g.tasks {
                None => return Err(Error::config("game.tasks", "required outside continuum mode")),
                Some(0) => return Err(Error::config("game.tasks", "must be positive")),
                Some(_) => {}
            }
            if g.constraint.is_none() {
                return Err(Error::config("game.constraint", "required outside continuum mode"));
            }
            self.automaton()?;
        }
        if f.mode == Mode::Tracking && f.switches.is_none() {
            return Err(Error::config("forecaster.switches", "required in tracking mode"));
        }
        if f.mode == Mode::Global && f.aggregator.is_none() {
            return Err(Error::config("forecaster.aggregator", "required in global mode"));
        }
        let e = &self.environment;
        if e.kind == EnvKind::Rotating && e.period == 0 {
            return Err(Error::config("environment.period", "must be positive"));
        }
        Ok(())
    }

    pub fn action_set(&self) -> Result<ActionSet> {
        let g = &self.game;
        match (&g.action_values, g.actions) {
            (Some(v), _) => ActionSet::new(v.clone()).map_err(|e| Error::config("game.action_values", e.to_string())),
            (None, Some(n)) => ActionSet::integers(n).map_err(|e| Error::config("game.actions", e.to_string())),
            (None, None) => Err(Error::config("game.actions", "set `actions` or `action_values`")),
        }
    }

    /// The constraint automaton of a non-continuum game.
    pub fn automaton(&self) -> Result<ConstraintAutomaton> {
        let desc = self.game.constraint.as_ref().ok_or_else(|| Error::config("game.constraint", "missing"))?;
        let tasks = self.game.tasks.ok_or_else(|| Error::config("game.tasks", "missing"))?;
        desc.build(self.action_set()?, tasks).map_err(|e| Error::config("game.constraint", e.to_string()))
    }

    pub fn grid(&self) -> Result<SuperTaskGrid> {
        let eps = self.forecaster.eps.ok_or_else(|| Error::config("forecaster.eps", "required in continuum mode"))?;
        discretize(eps).map_err(|e| Error::config("forecaster.eps", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
schema_version = 1

[game]
constraint = "coherence:gamma=1"
tasks = 5
actions = 5
rounds = 100
seed = 3
replicas = 4

[forecaster]
mode = "tracking"
eta = 0.25
switches = 2

[environment]
kind = "piecewise"
change_points = 3

[output]
format = "json"
"#;

    #[test]
    fn parses_full_document() {
        let c = Config::from_toml_str(FULL).unwrap();
        assert_eq!(c.game.tasks, Some(5));
        assert_eq!(c.forecaster.mode, Mode::Tracking);
        assert_eq!(c.forecaster.eta, EtaSetting::Fixed(0.25));
        assert_eq!(c.environment.change_points, 3);
        assert_eq!(c.environment.period, 50);
        assert_eq!(c.output.format, Format::Json);
        assert_eq!(c.game.delta, 0.05);
        let again = Config::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = FULL.replace("tasks = 5", "tasks = \"five\"");
        match Config::from_toml_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "game.tasks"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = FULL.replace("eta = 0.25", "eta = \"fast\"");
        assert!(matches!(Config::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "forecaster.eta"));
        let bad = FULL.replace("seed = 3", "seed = 3\ncolour = 1");
        assert!(matches!(Config::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "game.colour"));
        let bad = FULL.replace("switches = 2", "");
        assert!(
            matches!(Config::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "forecaster.switches")
        );
        let bad = FULL.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(Config::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "schema_version"));
        let bad = FULL.replace("coherence:gamma=1", "coherence:gamma=-1");
        assert!(matches!(Config::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "game.constraint"));
        assert!(matches!(Config::from_toml_str("schema_version = ["), Err(Error::Config { .. })));
    }

    #[test]
    fn continuum_mode_needs_grid() {
        let text = r#"
schema_version = 1
[game]
actions = 3
rounds = 10
[forecaster]
mode = "continuum"
eps = 0.25
shifts = 2
[environment]
kind = "continuum"
"#;
        let c = Config::from_toml_str(text).unwrap();
        assert_eq!(c.grid().unwrap().cells(), 4);
        let bad = text.replace("shifts = 2", "shifts = 4");
        assert!(matches!(Config::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "forecaster.shifts"));
        let bad = text.replace("kind = \"continuum\"", "kind = \"iid\"");
        assert!(matches!(Config::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "environment.kind"));
    }

    #[test]
    fn scripted_steps_are_validated() {
        let text = r#"
schema_version = 1
[game]
actions = 2
rounds = 4
[forecaster]
mode = "continuum"
eps = 0.5
shifts = 1
[environment]
kind = "steps"
script = [
  [{ starts = [0.0, 0.5], values = [0.0, 1.0] }, { starts = [0.0], values = [0.5] }],
]
"#;
        let c = Config::from_toml_str(text).unwrap();
        assert_eq!(c.environment.scripted_losses(2).unwrap().len(), 1);
        let bad = text.replace("[0.0, 1.0]", "[0.0, 1.5]");
        assert!(
            matches!(Config::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "environment.script[0][0]")
        );
        let bad = text.replace(", { starts = [0.0], values = [0.5] }", "");
        assert!(
            matches!(Config::from_toml_str(&bad), Err(Error::Config { path, .. }) if path == "environment.script[0]")
        );
        let bad =
            text.replace("kind = \"steps\"", "kind = \"steps\"\nscript = []").replace("script = [\n  [", "x = [\n  [");
        assert!(Config::from_toml_str(&bad).is_err());
        assert_eq!(Config::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn flag_parsers() {
        assert_eq!(parse_track("K=2").unwrap(), 2);
        assert!(parse_track("k=2").is_err());
        assert!(parse_track("K=-1").is_err());
        assert_eq!(parse_continuum("eps=0.02,m=2").unwrap(), (0.02, 2));
        assert_eq!(parse_continuum("m=1, eps=0.5").unwrap(), (0.5, 1));
        assert!(parse_continuum("eps=0.1").is_err());
        assert!(parse_continuum("eps=0.1,q=2").is_err());
        assert_eq!("auto".parse::<EtaSetting>().unwrap(), EtaSetting::Auto);
        assert_eq!("0.5".parse::<EtaSetting>().unwrap(), EtaSetting::Fixed(0.5));
        assert!("-1".parse::<EtaSetting>().is_err());
    }
}
