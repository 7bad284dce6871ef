//! Experiment configuration: `key = value` lines with `#` comments, overridable
//! key by key from the command line.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Identities,
    Spectrum,
    Growth,
    Variation,
    GaugeFix,
    All,
}

impl Command {
    pub const SUITES: [Command; 5] = [Command::Identities, Command::Spectrum, Command::Growth, Command::Variation, Command::GaugeFix];

    pub fn name(self) -> &'static str {
        match self {
            Command::Identities => "identities",
            Command::Spectrum => "spectrum",
            Command::Growth => "growth",
            Command::Variation => "variation",
            Command::GaugeFix => "gauge_fix",
            Command::All => "all",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Command> {
        match s {
            "identities" => Ok(Command::Identities),
            "spectrum" => Ok(Command::Spectrum),
            "growth" => Ok(Command::Growth),
            "variation" => Ok(Command::Variation),
            "gauge_fix" | "gauge-fix" => Ok(Command::GaugeFix),
            "all" => Ok(Command::All),
            _ => Err(Error::Config(format!("unknown command `{s}`"))),
        }
    }
}

/// Pass/fail tolerances shared by the suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Finite-difference identity residual once the step-halving ratio reaches roundoff.
    pub identity_fd: f64,
    pub identity_analytic: f64,
    /// Smallest accepted convergence order under step halving.
    pub identity_order: f64,
    pub spectral: f64,
    pub commutator: f64,
    /// Hessian identity for function eigenmodes.
    pub hessian: f64,
    /// Slope fits against exactly known exponents.
    pub rigid_slope: f64,
    /// Slope fits against upper bounds.
    pub bound_slope: f64,
    pub first_variation: f64,
    pub second_variation: f64,
    pub k_identities: f64,
}

impl Default for Tolerances {
    fn default() -> Tolerances {
        Tolerances {
            identity_fd: 1e-6,
            identity_analytic: 1e-9,
            identity_order: 1.9,
            spectral: 1e-8,
            commutator: 1e-9,
            hessian: 1e-6,
            rigid_slope: 0.05,
            bound_slope: 0.5,
            first_variation: 1e-6,
            second_variation: 1e-5,
            k_identities: 1e-10,
        }
    }
}

/// Everything a suite run depends on. Unset options fall back to per-suite defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub model: Option<String>,
    pub degree: Option<usize>,
    pub op: Option<String>,
    pub k: Option<usize>,
    pub points: Option<usize>,
    pub step: Option<f64>,
    pub seed: u64,
    pub json: Option<PathBuf>,
    pub emit_csv: Option<PathBuf>,
    /// Gauge input `h`; `k` is read from the same path with `.k` appended when present.
    pub input: Option<PathBuf>,
    /// Where the gauge suite writes its generated pure-gauge input.
    pub write_input: Option<PathBuf>,
    pub radius: f64,
    pub iters: usize,
    pub window: (f64, f64),
    pub beta: f64,
    /// Variation directions such as `jacobi:x1^2-2`, `gauge:0;0;2*x1`, `conformal:x1*x2+0.5`.
    pub directions: Vec<String>,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            command: Command::All,
            model: None,
            degree: None,
            op: None,
            k: None,
            points: None,
            step: None,
            seed: 0,
            json: None,
            emit_csv: None,
            input: None,
            write_input: None,
            radius: 8.0,
            iters: 6,
            window: (4.0, 8.0),
            beta: 0.1,
            directions: Vec::new(),
            tolerances: Tolerances::default(),
        }
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
}

fn positive(key: &str, value: &str) -> Result<f64> {
    let v: f64 = number(key, value)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("`{key}` must be positive, got `{value}`")));
    }
    Ok(v)
}

fn count(key: &str, value: &str) -> Result<usize> {
    let v: usize = number(key, value)?;
    if v == 0 {
        return Err(Error::Config(format!("`{key}` must be positive")));
    }
    Ok(v)
}

impl ExperimentConfig {
    pub fn new(command: Command) -> ExperimentConfig {
        ExperimentConfig { command, ..ExperimentConfig::default() }
    }

    /// Parses a configuration file body.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Applies every `key = value` line of `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", no + 1)))?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", no + 1)),
                e => e,
            })?;
        }
        Ok(())
    }

    /// Sets one key. Numeric parameters must be positive.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.tolerances;
        match key {
            "command" => self.command = value.parse()?,
            "model" => {
                validate_model(value)?;
                self.model = Some(value.to_string());
            }
            "degree" => self.degree = Some(count(key, value)?),
            "op" => {
                value.parse::<crate::spectral::OpTag>().map_err(|e| Error::Config(e.to_string()))?;
                self.op = Some(value.to_string());
            }
            "k" => self.k = Some(count(key, value)?),
            "points" => self.points = Some(count(key, value)?),
            "step" => self.step = Some(positive(key, value)?),
            "seed" => self.seed = number(key, value)?,
            "json" => self.json = Some(PathBuf::from(value)),
            "emit_csv" | "emit-csv" => self.emit_csv = Some(PathBuf::from(value)),
            "input" => self.input = Some(PathBuf::from(value)),
            "write_input" | "write-input" => self.write_input = Some(PathBuf::from(value)),
            "R" | "radius" => self.radius = positive(key, value)?,
            "iters" => self.iters = count(key, value)?,
            "window" => {
                let (a, b) = value.split_once(',').ok_or_else(|| Error::Config(format!("`window` expects `lo,hi`, got `{value}`")))?;
                let (a, b) = (positive(key, a.trim())?, positive(key, b.trim())?);
                if b <= a {
                    return Err(Error::Config(format!("`window` needs lo < hi, got `{value}`")));
                }
                self.window = (a, b);
            }
            "beta" => self.beta = positive(key, value)?,
            "direction" => {
                validate_direction(value)?;
                self.directions.push(value.to_string());
            }
            "tol.identity_fd" => t.identity_fd = positive(key, value)?,
            "tol.identity_analytic" => t.identity_analytic = positive(key, value)?,
            "tol.identity_order" => t.identity_order = positive(key, value)?,
            "tol.spectral" => t.spectral = positive(key, value)?,
            "tol.commutator" => t.commutator = positive(key, value)?,
            "tol.hessian" => t.hessian = positive(key, value)?,
            "tol.rigid_slope" => t.rigid_slope = positive(key, value)?,
            "tol.bound_slope" => t.bound_slope = positive(key, value)?,
            "tol.first_variation" => t.first_variation = positive(key, value)?,
            "tol.second_variation" => t.second_variation = positive(key, value)?,
            "tol.k_identities" => t.k_identities = positive(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// Model descriptors: `gaussian:n`, `cylinder:l,n`, and `torus:n` for the identity suite.
pub fn validate_model(s: &str) -> Result<()> {
    if let Some(n) = s.strip_prefix("torus:") {
        return count("model", n.trim()).map(|_| ());
    }
    let kind: crate::model_spaces::ModelKind = s.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    match kind {
        crate::model_spaces::ModelKind::Gaussian { n } if n == 0 => Err(Error::Config("gaussian dimension must be positive".into())),
        crate::model_spaces::ModelKind::Cylinder { ell, n } if ell < 2 || n <= ell => {
            Err(Error::Config(format!("cylinder:{ell},{n} needs 2 <= l < n")))
        }
        _ => Ok(()),
    }
}

pub fn validate_direction(s: &str) -> Result<()> {
    let (kind, body) = s.split_once(':').ok_or_else(|| Error::Config(format!("direction `{s}` needs a `kind:` prefix")))?;
    if body.trim().is_empty() {
        return Err(Error::Config(format!("direction `{s}` is empty")));
    }
    match kind {
        "jacobi" | "gauge" | "conformal" => Ok(()),
        _ => Err(Error::Config(format!("direction kind `{kind}` (jacobi, gauge, conformal)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_comments_and_overrides() {
        let c = ExperimentConfig::parse(
            "# spectrum run\ncommand = spectrum\nmodel = gaussian:2  # the plane\ndegree = 6\nop = P\nk = 12\nseed = 17\nwindow = 4, 8\n",
        )
        .unwrap();
        assert_eq!(c.command, Command::Spectrum);
        assert_eq!(c.model.as_deref(), Some("gaussian:2"));
        assert_eq!((c.degree, c.k, c.seed), (Some(6), Some(12), 17));
        assert_eq!(c.window, (4.0, 8.0));
        let mut d = c.clone();
        d.set("degree", "4").unwrap();
        assert_eq!(d.degree, Some(4));
    }

    #[test]
    fn rejects_nonpositive_and_unknown() {
        for bad in ["step = 0", "step = -1e-3", "R = 0", "iters = 0", "k = 0", "window = 8,4", "beta = nan", "colour = red", "model = cylinder:1,3", "op = Q", "direction = bend:x1"] {
            let e = ExperimentConfig::parse(bad).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{bad}: {e}");
        }
        assert!(ExperimentConfig::parse("just words").is_err());
    }

    #[test]
    fn line_numbers_in_errors() {
        let e = ExperimentConfig::parse("seed = 1\n\nstep = 0\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn seed_is_kept_verbatim() {
        let c = ExperimentConfig::parse("seed = 18446744073709551615").unwrap();
        assert_eq!(c.seed, u64::MAX);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("18446744073709551615"));
    }
}
