use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_stokes, StokesAssembly, StokesBlocks, WChoice};
use crate::elements::DirichletSides;
use crate::error::{Error, Result};
use crate::mesh::{build_rect_mesh, Rect};
use crate::multigrid::LevelOperators;

use super::Discretization;

/// Smoothed circular inclusions of high viscosity in a weak matrix on the unit square.
#[derive(Clone, Debug, PartialEq)]
pub struct SinkerConfig {
    pub centers: Vec<[f64; 2]>,
    pub omega: f64,
    pub delta: f64,
    /// Dynamic ratio `μ_max / μ_min`.
    pub dr: f64,
    pub beta: f64,
    pub seed: u64,
}

impl SinkerConfig {
    /// `n` random sinkers with diameter 0.1, smoothing 200 and force 10.
    pub fn new(n: usize, dr: f64, seed: u64) -> Result<Self> {
        let omega = 0.1;
        let cfg = Self {
            centers: place_sinkers(n, omega, seed)?,
            omega,
            delta: 200.0,
            dr,
            beta: 10.0,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.delta > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidArgument(
                "omega, delta and beta must be positive".into(),
            ));
        }
        if !(self.dr >= 1.0) || !self.dr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dynamic ratio must be >= 1, got {}",
                self.dr
            )));
        }
        if self
            .centers
            .iter()
            .flatten()
            .any(|&c| !(0.0..=1.0).contains(&c))
        {
            return Err(Error::InvalidArgument(
                "sinker center outside the unit square".into(),
            ));
        }
        Ok(())
    }

    pub fn mu_max(&self) -> f64 {
        self.dr.sqrt()
    }

    pub fn mu_min(&self) -> f64 {
        1.0 / self.dr.sqrt()
    }
}

/// Sinker count for a coarse mesh: 24 once the coarse mesh has at least 32×32 cells, else 8.
pub fn default_sinker_count(coarse_nx: usize, coarse_ny: usize) -> usize {
    if coarse_nx >= 32 && coarse_ny >= 32 {
        24
    } else {
        8
    }
}

/// Deterministic centers, uniform in `[ω, 1 − ω]²`.
pub fn place_sinkers(n: usize, omega: f64, seed: u64) -> Result<Vec<[f64; 2]>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sinker".into()));
    }
    if !(omega > 0.0 && omega < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "sinker diameter {omega} out of range"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            [
                rng.gen_range(omega..=1.0 - omega),
                rng.gen_range(omega..=1.0 - omega),
            ]
        })
        .collect())
}

/// `χ(x) = Π_i [1 − exp(−δ max(0, |c_i − x| − ω/2))]`: 0 inside a sinker, 1 far away.
pub fn sinker_chi(cfg: &SinkerConfig, x: [f64; 2]) -> f64 {
    cfg.centers
        .iter()
        .map(|c| {
            let r = ((c[0] - x[0]).powi(2) + (c[1] - x[1]).powi(2)).sqrt();
            1.0 - (-cfg.delta * (r - 0.5 * cfg.omega).max(0.0)).exp()
        })
        .product()
}

/// `μ = (μ_max − μ_min)(1 − χ) + μ_min`.
pub fn sinker_viscosity(cfg: &SinkerConfig, x: [f64; 2]) -> f64 {
    let (hi, lo) = (cfg.mu_max(), cfg.mu_min());
    (hi - lo) * (1.0 - sinker_chi(cfg, x)) + lo
}

/// `f = (0, β(χ − 1))`.
pub fn sinker_rhs(cfg: &SinkerConfig, x: [f64; 2]) -> [f64; 2] {
    [0.0, cfg.beta * (sinker_chi(cfg, x) - 1.0)]
}

/// Sinker problem with no-slip walls on a hierarchy of uniform meshes of the unit square.
#[derive(Clone, Debug)]
pub struct SinkerProblem {
    pub config: SinkerConfig,
    pub disc: Discretization,
}

impl SinkerProblem {
    /// `coarse_n × coarse_n` cells on the coarsest of `n_levels` levels.
    pub fn new(config: SinkerConfig, coarse_n: usize, n_levels: usize, k: usize) -> Result<Self> {
        config.validate()?;
        let coarse = build_rect_mesh(Rect::UNIT, coarse_n, coarse_n)?;
        let disc = Discretization::new(coarse, n_levels, k, &DirichletSides::all(), true)?;
        Ok(Self { config, disc })
    }

    pub fn viscosity(&self) -> impl Fn([f64; 2]) -> f64 + Sync + '_ {
        move |x| sinker_viscosity(&self.config, x)
    }

    /// System on the finest level.
    pub fn blocks(&self, gamma: f64, w_choice: WChoice) -> Result<StokesBlocks> {
        let visc = self.viscosity();
        let force = |x: [f64; 2]| sinker_rhs(&self.config, x);
        let zero = |_: [f64; 2]| [0.0, 0.0];
        assemble_stokes(&StokesAssembly {
            velocity: self.disc.finest_velocity(),
            pressure: self.disc.finest_pressure(),
            viscosity: &visc,
            body_force: &force,
            boundary_values: &zero,
            gamma,
            w_choice,
        })
    }

    pub fn level_operators(&self, finest: &StokesBlocks) -> Result<Vec<LevelOperators>> {
        self.disc.level_operators(finest, |_| self.viscosity())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(c: [f64; 2]) -> SinkerConfig {
        SinkerConfig {
            centers: vec![c],
            omega: 0.1,
            delta: 200.0,
            dr: 1e4,
            beta: 10.0,
            seed: 0,
        }
    }

    #[test]
    fn chi_values() {
        let cfg = single([0.5, 0.5]);
        assert_eq!(sinker_chi(&cfg, [0.5, 0.5]), 0.0);
        let expected = 1.0 - (-2.0f64).exp();
        assert!((sinker_chi(&cfg, [0.5, 0.56]) - expected).abs() < 1e-12);
        assert!((sinker_chi(&cfg, [0.5, 0.5 + 0.05 + 40.0 / 200.0]) - 1.0).abs() < 1e-17);
    }

    #[test]
    fn viscosity_and_force_extremes() {
        let cfg = single([0.3, 0.7]);
        assert_eq!((cfg.mu_max(), cfg.mu_min()), (100.0, 0.01));
        assert!((sinker_viscosity(&cfg, [0.3, 0.7]) - 100.0).abs() < 1e-12);
        assert!((sinker_viscosity(&cfg, [0.95, 0.05]) - 0.01).abs() < 1e-12);
        assert_eq!(sinker_rhs(&cfg, [0.3, 0.7]), [0.0, -10.0]);
        assert!(sinker_rhs(&cfg, [0.95, 0.05])[1].abs() < 1e-12);
    }

    #[test]
    fn placement_is_deterministic_and_inside() {
        let a = place_sinkers(24, 0.1, 7).unwrap();
        assert_eq!(a, place_sinkers(24, 0.1, 7).unwrap());
        assert_ne!(a, place_sinkers(24, 0.1, 8).unwrap());
        assert_eq!(a.len(), 24);
        assert!(a.iter().flatten().all(|&c| (0.1..=0.9).contains(&c)));
        assert!(place_sinkers(0, 0.1, 1).is_err());
    }

    #[test]
    fn default_count_depends_on_mesh() {
        assert_eq!(default_sinker_count(8, 8), 8);
        assert_eq!(default_sinker_count(32, 32), 24);
        assert_eq!(default_sinker_count(32, 16), 8);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = single([0.5, 0.5]);
        cfg.dr = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = single([1.5, 0.5]);
        assert!(cfg.validate().is_err());
        cfg.centers[0] = [0.5, 0.5];
        cfg.delta = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn problem_levels_have_matching_sizes() {
        let p = SinkerProblem::new(SinkerConfig::new(3, 1e4, 1).unwrap(), 2, 2, 2).unwrap();
        let b = p.blocks(10.0, WChoice::Mp).unwrap();
        let ops = p.level_operators(&b).unwrap();
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[1].a_gamma.nrows(), b.n_u());
        assert_eq!(ops[0].velocity.mesh().nx(), 2);
        assert!(b.rhs_u.iter().any(|v| *v != 0.0));
    }
}
