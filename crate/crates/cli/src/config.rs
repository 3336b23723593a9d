//! Run configuration: TOML text in, validated run inputs out.

use std::path::PathBuf;

use basset::flowfield::{make_field, FieldSpec, FlowField, Params};
use basset::solver::{Scheme, SolverOptions, State};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ConfigError {
    /// Malformed text or unknown keys; the message carries line and column.
    #[error("{0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// Either `R`, `St`, `Re` or `mu`, `kappa`, `gamma`; `g` empty means zero gravity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(rename = "St", default, skip_serializing_if = "Option::is_none")]
    pub st: Option<f64>,
    #[serde(rename = "Re", default, skip_serializing_if = "Option::is_none")]
    pub re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

/// One `[initial]` table or a list of `[[initial]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Initial {
    One(StateConfig),
    Many(Vec<StateConfig>),
}

impl Initial {
    pub fn states(&self) -> &[StateConfig] {
        match self {
            Initial::One(s) => std::slice::from_ref(s),
            Initial::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub t0: f64,
    #[serde(rename = "T", default = "default_t_end")]
    pub t_end: f64,
    #[serde(rename = "N", default = "default_steps")]
    pub steps: usize,
}

fn default_t_end() -> f64 {
    1.0
}

fn default_steps() -> usize {
    256
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            t0: 0.0,
            t_end: default_t_end(),
            steps: default_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: Vec<f64>,
    pub picard_window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverConfig {
            scheme: o.scheme,
            tol: o.tol,
            max_iter: o.max_iter,
            restarts: o.restarts,
            picard_window: o.picard_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    /// Also evolve and write the inverse of the sensitivity matrix.
    pub inverse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundConfig {
    /// Relative truncation tolerance of the series.
    pub tol: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig { tol: 1e-14 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub random_cases: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let o = basset::diagnostics::suite::SuiteOptions::default();
        VerifyConfig {
            seed: o.seed,
            random_cases: o.random_cases,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub field: FieldSpec,
    pub params: ParamsConfig,
    /// Defaults to a particle at rest at the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Initial>,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub bound: BoundConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

/// Parses and validates.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Canonical text form; `parse_config(&render(c)) == c` for valid `c`.
pub fn render(config: &RunConfig) -> String {
    toml::to_string(config).expect("configs serialize to TOML")
}

/// Inputs derived from a valid configuration.
pub struct Run {
    pub field: Box<dyn FlowField>,
    pub params: Params,
    pub initial: Vec<State>,
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
    pub solver: SolverOptions,
}

fn finite(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(path, format!("must be finite, got {v}")))
    }
}

impl ParamsConfig {
    fn build(&self, dim: usize) -> Result<Params, ConfigError> {
        let g = if self.g.is_empty() {
            DVector::zeros(dim)
        } else if self.g.len() == dim {
            for (i, x) in self.g.iter().enumerate() {
                finite(&format!("params.g[{i}]"), *x)?;
            }
            DVector::from_column_slice(&self.g)
        } else {
            return Err(invalid("params.g", format!("expected {dim} entries, got {}", self.g.len())));
        };
        let nondim = [("R", self.r), ("St", self.st), ("Re", self.re)];
        let direct = [("mu", self.mu), ("kappa", self.kappa), ("gamma", self.gamma)];
        let any = |set: &[(&str, Option<f64>)]| set.iter().any(|(_, v)| v.is_some());
        let all = |set: &[(&'static str, Option<f64>)]| -> Result<Vec<f64>, ConfigError> {
            set.iter()
                .map(|(k, v)| {
                    let v = v.ok_or_else(|| invalid(format!("params.{k}"), "missing"))?;
                    finite(&format!("params.{k}"), v)
                })
                .collect()
        };
        let built = match (any(&nondim), any(&direct)) {
            (true, true) => {
                return Err(invalid("params", "ambiguous: give either R/St/Re or mu/kappa/gamma, not both"))
            }
            (false, false) => return Err(invalid("params", "give either R/St/Re or mu/kappa/gamma")),
            (true, false) => {
                let v = all(&nondim)?;
                Params::derive(v[0], v[1], v[2], g)
            }
            (false, true) => {
                let v = all(&direct)?;
                Params::from_coefficients(v[0], v[1], v[2], g)
            }
        };
        built.map_err(|e| invalid("params", e.to_string()))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build().map(|_| ())
    }

    pub fn build(&self) -> Result<Run, ConfigError> {
        let field = make_field(&self.field).map_err(|e| invalid("field", e.to_string()))?;
        let dim = field.dim();
        let params = self.params.build(dim)?;

        let initial = match &self.initial {
            None => vec![State::new(DVector::zeros(dim), DVector::zeros(dim)).expect("zero state is valid")],
            Some(init) => {
                if init.states().is_empty() {
                    return Err(invalid("initial", "need at least one state"));
                }
                init.states()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        for (k, v) in [("y", &s.y), ("w", &s.w)] {
                            if v.len() != dim {
                                return Err(invalid(
                                    format!("initial[{i}].{k}"),
                                    format!("expected {dim} entries, got {}", v.len()),
                                ));
                            }
                        }
                        State::from_slices(&s.y, &s.w).map_err(|e| invalid(format!("initial[{i}]"), e.to_string()))
                    })
                    .collect::<Result<_, _>>()?
            }
        };

        let t = &self.time;
        finite("time.t0", t.t0)?;
        finite("time.T", t.t_end)?;
        if t.t_end <= t.t0 {
            return Err(invalid("time.T", format!("must exceed t0 = {}, got {}", t.t0, t.t_end)));
        }
        if t.steps < 2 {
            return Err(invalid("time.N", format!("need at least 2 steps, got {}", t.steps)));
        }

        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol.is_finite()) {
            return Err(invalid("solver.tol", format!("must be positive, got {}", s.tol)));
        }
        if s.max_iter == 0 {
            return Err(invalid("solver.max_iter", "must be at least 1"));
        }
        if s.picard_window == 0 {
            return Err(invalid("solver.picard_window", "must be at least 1"));
        }
        for (i, r) in s.restarts.iter().enumerate() {
            if !(*r > t.t0 && *r < t.t_end) {
                return Err(invalid(format!("solver.restarts[{i}]"), format!("{r} outside ({}, {})", t.t0, t.t_end)));
            }
        }
        if !(self.bound.tol > 0.0 && self.bound.tol < 1.0) {
            return Err(invalid("bound.tol", format!("must lie in (0, 1), got {}", self.bound.tol)));
        }
        if self.verify.random_cases == 0 {
            return Err(invalid("verify.random_cases", "must be at least 1"));
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(invalid("output.dir", "must not be empty"));
        }

        Ok(Run {
            field,
            params,
            initial,
            t0: t.t0,
            t_end: t.t_end,
            steps: t.steps,
            solver: SolverOptions {
                scheme: s.scheme,
                tol: s.tol,
                max_iter: s.max_iter,
                restarts: s.restarts.clone(),
                picard_window: s.picard_window,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[params]\nR = 1\nSt = 1\nRe = 1\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.field, FieldSpec::Zero { dim: 2 });
        assert_eq!(c.time, TimeConfig::default());
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.output.dir, PathBuf::from("out"));
        let run = c.build().unwrap();
        assert_eq!(run.initial.len(), 1);
        assert_eq!(run.initial[0].norm(), 0.0);
        assert_eq!((run.t0, run.t_end, run.steps), (0.0, 1.0, 256));
    }

    #[test]
    fn both_parameter_blocks_are_ambiguous() {
        let e = parse_config("[params]\nR = 1\nSt = 1\nRe = 1\nmu = 1\n").unwrap_err();
        assert!(matches!(&e, ConfigError::Invalid { path, message } if path == "params" && message.contains("ambiguous")));
    }

    #[test]
    fn derived_coefficients() {
        let c = parse_config("[params]\nR = 0.6666666666666666\nSt = 0.1\nRe = 100\n").unwrap();
        let p = c.build().unwrap().params;
        assert!((p.mu - 20.0 / 3.0).abs() < 1e-12);
        assert!((p.kappa - (3.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((p.gamma - 0.03).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_and_syntax_errors() {
        let e = parse_config("[params]\nR = 1\nSt = 1\nRe = 1\n[time]\nsteps = 4\n").unwrap_err();
        assert!(matches!(&e, ConfigError::Syntax(m) if m.contains("line 6")), "{e}");
        let e = parse_config("[params]\nR = 1\nSt = \n").unwrap_err();
        assert!(matches!(&e, ConfigError::Syntax(m) if m.contains("line 3")), "{e}");
    }

    #[test]
    fn constraint_violations_name_the_key() {
        let path_of = |text: &str| match parse_config(text).unwrap_err() {
            ConfigError::Invalid { path, .. } => path,
            e => panic!("{e}"),
        };
        assert_eq!(path_of(&format!("{MINIMAL}[time]\nN = 1\n")), "time.N");
        assert_eq!(path_of(&format!("{MINIMAL}[time]\nT = 0\n")), "time.T");
        assert_eq!(path_of("[params]\nR = 1\nSt = 1\n"), "params.Re");
        assert_eq!(path_of("[params]\nmu = 1\nkappa = 0\ngamma = 0\ng = [1.0]\n"), "params.g");
        assert_eq!(path_of(&format!("{MINIMAL}[[initial]]\ny = [0.0, 0.0]\nw = [1.0]\n")), "initial[0].w");
        assert_eq!(path_of(&format!("{MINIMAL}[solver]\nrestarts = [2.0]\n")), "solver.restarts[0]");
        assert_eq!(path_of("[params]\nR = 3\nSt = 1\nRe = 1\n"), "params");
    }

    #[test]
    fn single_and_many_initial_states() {
        let one = parse_config(&format!("{MINIMAL}[initial]\ny = [1.0, 0.0]\nw = [0.0, 0.5]\n")).unwrap();
        assert!(matches!(one.initial, Some(Initial::One(_))));
        let many = parse_config(&format!(
            "{MINIMAL}[[initial]]\ny = [1.0, 0.0]\nw = [0.0, 0.0]\n[[initial]]\ny = [2.0, 0.0]\nw = [0.0, 0.0]\n"
        ))
        .unwrap();
        assert_eq!(many.build().unwrap().initial.len(), 2);
        for c in [one, many] {
            assert_eq!(parse_config(&render(&c)).unwrap(), c);
        }
    }
}
