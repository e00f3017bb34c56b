//! `key = value` experiment configuration.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use alstokes::al_precond::SchurVariant;
use alstokes::assembly::WChoice;
use alstokes::multigrid::{CycleKind, MgOptions, SmootherKind, TransferKind};
use alstokes::problems::{InnerSolve, StressUpdate, SystemKind};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Sinker,
    Viscoplastic,
    Constant,
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sinker" => Ok(Self::Sinker),
            "viscoplastic" => Ok(Self::Viscoplastic),
            "constant" | "custom-constant-viscosity" => Ok(Self::Constant),
            o => Err(format!("unknown problem '{o}'")),
        }
    }
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sinker => "sinker",
            Self::Viscoplastic => "viscoplastic",
            Self::Constant => "constant",
        }
    }
}

/// `W` choice, or the one that goes with the preconditioner variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WSetting {
    Auto,
    Fixed(WChoice),
}

impl WSetting {
    pub fn resolve(&self, variant: SchurVariant) -> WChoice {
        match self {
            Self::Auto => variant.default_w(),
            Self::Fixed(w) => *w,
        }
    }
}

pub fn w_name(w: WChoice) -> &'static str {
    match w {
        WChoice::Mp => "mp",
        WChoice::MpInvVisc => "mp-invvisc",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    /// Coarse cells; `None` picks the problem's default.
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub levels: usize,
    pub k: usize,
    pub gammas: Vec<f64>,
    pub drs: Vec<f64>,
    pub variants: Vec<SchurVariant>,
    pub w: WSetting,
    pub system: SystemName,
    pub inner: InnerName,
    pub mg: MgOptions,
    pub tol: f64,
    pub maxit: usize,
    pub seed: u64,
    pub sinkers: Option<usize>,
    pub viscosity: f64,
    pub output: Option<PathBuf>,
    pub newton_tol: f64,
    pub newton_max_steps: usize,
    pub stress_update: StressUpdate,
    pub linear_rheology: bool,
    pub yield_stress_mpa: f64,
    pub stop_on_linear_failure: bool,
    pub fields: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemName {
    Saddle,
    Velocity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerName {
    Multigrid,
    Exact,
}

impl ExperimentConfig {
    pub fn system(&self, variant: SchurVariant) -> SystemKind {
        match self.system {
            SystemName::Saddle => SystemKind::Saddle(variant),
            SystemName::Velocity => SystemKind::VelocityBlock,
        }
    }

    pub fn inner(&self) -> InnerSolve {
        match self.inner {
            InnerName::Multigrid => InnerSolve::Multigrid(self.mg),
            InnerName::Exact => InnerSolve::Exact,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Sinker,
            nx: None,
            ny: None,
            levels: 3,
            k: 2,
            gammas: vec![10.0],
            drs: vec![1e4],
            variants: vec![SchurVariant::P1],
            w: WSetting::Auto,
            system: SystemName::Saddle,
            inner: InnerName::Multigrid,
            mg: MgOptions::default(),
            tol: 1e-6,
            maxit: 300,
            seed: 1,
            sinkers: None,
            viscosity: 1.0,
            output: None,
            newton_tol: 1e-8,
            newton_max_steps: 15,
            stress_update: StressUpdate::StressVelocity,
            linear_rheology: false,
            yield_stress_mpa: 100.0,
            stop_on_linear_failure: false,
            fields: None,
        }
    }
}

/// Keys accepted in a config file, with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("problem", "sinker | viscoplastic | constant"),
    ("nx", "coarse cells in x (default 8; 32 for viscoplastic)"),
    ("ny", "coarse cells in y (default nx; 8 for viscoplastic)"),
    ("levels", "number of multigrid levels"),
    ("k", "velocity degree (>= 2); pressure degree is k-1"),
    ("gamma", "comma-separated augmentation parameters"),
    ("dr", "comma-separated sinker viscosity ratios"),
    ("variant", "comma-separated P1 | P2 | baseline"),
    ("w", "auto | mp | mp-invvisc"),
    ("system", "saddle | velocity"),
    ("inner", "multigrid | exact"),
    ("smoother", "star | jacobi"),
    ("transfer", "robust | standard"),
    ("cycle", "F | V"),
    ("pre_smooth", "pre-smoothing steps"),
    ("post_smooth", "post-smoothing steps"),
    ("tol", "relative FGMRES tolerance"),
    ("maxit", "FGMRES iteration cap"),
    ("seed", "sinker placement seed"),
    ("sinkers", "auto | sinker count"),
    ("viscosity", "viscosity of the constant problem"),
    ("output", "CSV output path"),
    ("newton_tol", "relative nonlinear residual tolerance"),
    ("newton_max_steps", "Newton step cap"),
    ("stress_update", "stress-velocity | standard"),
    ("linear_rheology", "true | false"),
    ("yield_stress_mpa", "yield stress in MPa"),
    ("stop_on_linear_failure", "true | false"),
    ("fields", "viscoplastic field CSV output path"),
];

fn parse_one<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("bad value '{v}': {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    let items: Vec<&str> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err("empty list".into());
    }
    items.into_iter().map(parse_one).collect()
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        o => Err(format!("expected true or false, got '{o}'")),
    }
}

fn positive(v: f64) -> Result<f64, String> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive number, got {v}"))
    }
}

fn apply(cfg: &mut ExperimentConfig, key: &str, v: &str) -> Result<(), String> {
    match key {
        "problem" => cfg.problem = parse_one(v)?,
        "nx" => cfg.nx = Some(parse_one(v)?),
        "ny" => cfg.ny = Some(parse_one(v)?),
        "levels" => cfg.levels = parse_one(v)?,
        "k" => cfg.k = parse_one(v)?,
        "gamma" => {
            cfg.gammas = parse_list(v)?;
            if let Some(g) = cfg.gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
                return Err(format!("gamma must be finite and >= 0, got {g}"));
            }
        }
        "dr" => {
            cfg.drs = parse_list(v)?;
            if let Some(d) = cfg.drs.iter().find(|d| !(**d >= 1.0 && d.is_finite())) {
                return Err(format!("dr must be >= 1, got {d}"));
            }
        }
        "variant" => cfg.variants = parse_list(v)?,
        "w" => {
            cfg.w = match v {
                "auto" => WSetting::Auto,
                "mp" => WSetting::Fixed(WChoice::Mp),
                "mp-invvisc" => WSetting::Fixed(WChoice::MpInvVisc),
                o => return Err(format!("unknown w '{o}'")),
            }
        }
        "system" => {
            cfg.system = match v {
                "saddle" => SystemName::Saddle,
                "velocity" => SystemName::Velocity,
                o => return Err(format!("unknown system '{o}'")),
            }
        }
        "inner" => {
            cfg.inner = match v {
                "multigrid" => InnerName::Multigrid,
                "exact" => InnerName::Exact,
                o => return Err(format!("unknown inner solve '{o}'")),
            }
        }
        "smoother" => {
            cfg.mg.smoother = match v {
                "robust" => SmootherKind::Star,
                o => parse_one(o)?,
            }
        }
        "transfer" => cfg.mg.transfer = parse_one::<TransferKind>(v)?,
        "cycle" => cfg.mg.cycle = parse_one::<CycleKind>(v)?,
        "pre_smooth" => cfg.mg.pre_smooth = parse_one(v)?,
        "post_smooth" => cfg.mg.post_smooth = parse_one(v)?,
        "tol" => cfg.tol = positive(parse_one(v)?)?,
        "maxit" => cfg.maxit = parse_one(v)?,
        "seed" => cfg.seed = parse_one(v)?,
        "sinkers" => {
            cfg.sinkers = match v {
                "auto" => None,
                n => Some(parse_one(n)?),
            }
        }
        "viscosity" => cfg.viscosity = positive(parse_one(v)?)?,
        "output" => cfg.output = Some(PathBuf::from(v)),
        "newton_tol" => cfg.newton_tol = positive(parse_one(v)?)?,
        "newton_max_steps" => cfg.newton_max_steps = parse_one(v)?,
        "stress_update" => {
            cfg.stress_update = match v {
                "stress-velocity" => StressUpdate::StressVelocity,
                "standard" => StressUpdate::Standard,
                o => return Err(format!("unknown stress update '{o}'")),
            }
        }
        "linear_rheology" => cfg.linear_rheology = parse_bool(v)?,
        "yield_stress_mpa" => cfg.yield_stress_mpa = positive(parse_one(v)?)?,
        "stop_on_linear_failure" => cfg.stop_on_linear_failure = parse_bool(v)?,
        "fields" => cfg.fields = Some(PathBuf::from(v)),
        _ => return Err(format!("unknown key '{key}'")),
    }
    Ok(())
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key '{key}'")));
            }
            apply(&mut cfg, key, value).map_err(err)?;
        }
        cfg.validate()
            .map_err(|message| ConfigError { line: 0, message })?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    /// Coarse cell counts `(nx, ny)` after problem defaults.
    pub fn cells(&self) -> (usize, usize) {
        match self.problem {
            ProblemKind::Viscoplastic => (self.nx.unwrap_or(32), self.ny.unwrap_or(8)),
            _ => {
                let n = self.nx.or(self.ny).unwrap_or(8);
                (n, self.ny.unwrap_or(n))
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let (nx, ny) = self.cells();
        if nx == 0 || ny == 0 || self.levels == 0 {
            return Err("nx, ny and levels must be at least 1".into());
        }
        if self.k < 2 {
            return Err(format!("k must be at least 2, got {}", self.k));
        }
        if self.maxit == 0 {
            return Err("maxit must be at least 1".into());
        }
        if self.problem != ProblemKind::Viscoplastic && nx != ny {
            return Err(format!(
                "unit-square problems need nx == ny, got {nx} and {ny}"
            ));
        }
        if self.sinkers == Some(0) {
            return Err("sinkers must be at least 1".into());
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        text.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists_comments_and_defaults() {
        let cfg: ExperimentConfig = "
            # sweep
            problem = sinker
            gamma = 0, 10,1000   # trailing comment
            dr = 1e4
            variant = P1, p2
            smoother = robust
            cycle = V
        "
        .parse()
        .unwrap();
        assert_eq!(cfg.gammas, vec![0.0, 10.0, 1000.0]);
        assert_eq!(cfg.variants, vec![SchurVariant::P1, SchurVariant::P2]);
        assert_eq!(cfg.mg.smoother, SmootherKind::Star);
        assert_eq!(cfg.mg.cycle, CycleKind::V);
        assert_eq!(cfg.maxit, 300);
        assert_eq!(cfg.cells(), (8, 8));
    }

    #[test]
    fn cell_defaults_follow_problem() {
        let c: ExperimentConfig = "problem = viscoplastic".parse().unwrap();
        assert_eq!(c.cells(), (32, 8));
        let c: ExperimentConfig = "problem = viscoplastic\nnx = 16".parse().unwrap();
        assert_eq!(c.cells(), (16, 8));
        let c: ExperimentConfig = "nx = 4".parse().unwrap();
        assert_eq!(c.cells(), (4, 4));
    }

    #[test]
    fn rejects_bad_input() {
        for (text, needle) in [
            ("gama = 1", "unknown key"),
            ("gamma = ", "empty list"),
            ("gamma = 1, -2", ">= 0"),
            ("nx 4", "key = value"),
            ("k = 1", "at least 2"),
            ("nx = 4\nnx = 5", "duplicate"),
            ("nx = 4\nny = 8", "nx == ny"),
            ("linear_rheology = maybe", "true or false"),
            ("smoother = gauss", "unknown"),
        ] {
            let e = text.parse::<ExperimentConfig>().unwrap_err();
            assert!(e.to_string().contains(needle), "{text}: {e}");
        }
    }

    #[test]
    fn error_reports_line_number() {
        let e = "nx = 4\n\n# x\nbogus = 1"
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert_eq!(e.line, 4);
    }

    #[test]
    fn every_documented_key_is_accepted() {
        for (key, _) in KEYS {
            let e = format!("{key} = ???").parse::<ExperimentConfig>();
            if let Err(e) = e {
                assert!(!e.message.contains("unknown key"), "{key}");
            }
        }
    }

    #[test]
    fn auto_w_follows_variant() {
        assert_eq!(WSetting::Auto.resolve(SchurVariant::P2), WChoice::MpInvVisc);
        assert_eq!(
            WSetting::Fixed(WChoice::Mp).resolve(SchurVariant::P2),
            WChoice::Mp
        );
    }
}
