//! The `table`, `verify` and `nonlinear` subcommands.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use alstokes::al_precond::SchurVariant;
use alstokes::assembly::WChoice;
use alstokes::multigrid::{CycleKind, SmootherKind, TransferKind};
use alstokes::problems::{
    newton_solve, LinearRun, NewtonOptions, NewtonResult, SystemKind, UnitSquareProblem,
    ViscoplasticConfig, ViscoplasticProblem,
};
use alstokes::sparse_linalg::FgmresOptions;
use alstokes::spectral::{variant_pair, verify_lemma, BoundReport, VerifyOptions};
use rayon::prelude::*;

use crate::config::{w_name, ExperimentConfig, InnerName, ProblemKind, SystemName};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or a problem beyond a size guard. Exit code 2.
    Config(String),
    /// Anything else. Exit code 1.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) | Self::Internal(m) => f.write_str(m),
        }
    }
}

impl From<alstokes::Error> for CliError {
    fn from(e: alstokes::Error) -> Self {
        use alstokes::Error as E;
        match e {
            E::InvalidArgument(_) | E::Unsupported(_) | E::TooLarge { .. } => {
                Self::Config(e.to_string())
            }
            _ => Self::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Columns of the `table` CSV.
pub const TABLE_COLUMNS: [&str; 20] = [
    "problem",
    "nx",
    "ny",
    "levels",
    "k",
    "dr",
    "gamma",
    "variant",
    "w",
    "system",
    "inner",
    "smoother",
    "transfer",
    "cycle",
    "n_u",
    "n_p",
    "iterations",
    "converged",
    "relative_residual",
    "wall_time",
];

/// Columns of the `nonlinear` CSV. Step 0 is the initial linear solve.
pub const NONLINEAR_COLUMNS: [&str; 8] = [
    "variant",
    "gamma",
    "step",
    "linear_iterations",
    "linear_converged",
    "residual",
    "step_length",
    "wall_time",
];

/// Columns of the `nonlinear` field file.
pub const FIELD_COLUMNS: [&str; 9] = [
    "variant",
    "gamma",
    "x",
    "z",
    "mu_eff",
    "strain_rate_ii",
    "u_x",
    "u_z",
    "p",
];

pub fn verify_columns() -> Vec<&'static str> {
    let mut c = vec!["dr"];
    c.extend(BoundReport::CSV_HEADER);
    c
}

fn variant_name(v: SchurVariant) -> &'static str {
    match v {
        SchurVariant::P1 => "P1",
        SchurVariant::P2 => "P2",
        SchurVariant::Baseline => "baseline",
    }
}

fn smoother_name(s: SmootherKind) -> &'static str {
    match s {
        SmootherKind::Star => "star",
        SmootherKind::Jacobi => "jacobi",
    }
}

fn transfer_name(t: TransferKind) -> &'static str {
    match t {
        TransferKind::Robust => "robust",
        TransferKind::Standard => "standard",
    }
}

fn cycle_name(c: CycleKind) -> &'static str {
    match c {
        CycleKind::V => "V",
        CycleKind::F => "F",
    }
}

fn linear_options(cfg: &ExperimentConfig) -> FgmresOptions {
    FgmresOptions {
        tol: cfg.tol,
        maxit: cfg.maxit,
        ..Default::default()
    }
}

fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Prints rows as a left-aligned text table.
fn print_aligned(out: &mut impl Write, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    writeln!(out, "{}", line(header.to_vec()))?;
    for r in rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

fn fmt_dr(dr: Option<f64>) -> String {
    dr.map(|d| format!("{d:e}")).unwrap_or_else(|| "-".into())
}

/// One linear run of a `table` sweep.
#[derive(Clone, Debug)]
struct TableCase {
    dr: Option<f64>,
    variant: Option<SchurVariant>,
    w: WChoice,
    run: LinearRun,
}

fn table_cases(cfg: &ExperimentConfig) -> CliResult<Vec<TableCase>> {
    let (n, _) = cfg.cells();
    let problems: Vec<(Option<f64>, UnitSquareProblem)> = match cfg.problem {
        ProblemKind::Sinker => cfg
            .drs
            .iter()
            .map(|&dr| {
                (
                    Some(dr),
                    UnitSquareProblem::Sinker {
                        dr,
                        n_sinkers: cfg.sinkers,
                        seed: cfg.seed,
                    },
                )
            })
            .collect(),
        ProblemKind::Constant => vec![(
            None,
            UnitSquareProblem::Constant {
                viscosity: cfg.viscosity,
            },
        )],
        ProblemKind::Viscoplastic => {
            return Err(CliError::Config(
                "the viscoplastic problem is run with the nonlinear command".into(),
            ))
        }
    };
    let variants: Vec<Option<SchurVariant>> = match cfg.system {
        SystemName::Saddle => cfg.variants.iter().copied().map(Some).collect(),
        SystemName::Velocity => vec![None],
    };
    let mut cases = Vec::new();
    for (dr, problem) in &problems {
        for &variant in &variants {
            let w = cfg.w.resolve(variant.unwrap_or(SchurVariant::P1));
            for &gamma in &cfg.gammas {
                cases.push(TableCase {
                    dr: *dr,
                    variant,
                    w,
                    run: LinearRun {
                        problem: *problem,
                        coarse_n: n,
                        n_levels: cfg.levels,
                        k: cfg.k,
                        gamma,
                        w_choice: w,
                        system: cfg.system(variant.unwrap_or(SchurVariant::P1)),
                        inner: cfg.inner(),
                        linear: linear_options(cfg),
                    },
                });
            }
        }
    }
    Ok(cases)
}

fn table_row(
    cfg: &ExperimentConfig,
    case: &TableCase,
    dump: Option<&Path>,
    idx: usize,
) -> CliResult<Vec<String>> {
    let prepared = case.run.prepare()?;
    if let Some(dir) = dump {
        prepared
            .blocks
            .write_matrix_market(&dir.join(format!("run-{idx:03}")))?;
    }
    let report = case.run.solve_prepared(&prepared)?;
    let (nx, ny) = cfg.cells();
    let (smoother, transfer, cycle) = match cfg.inner {
        InnerName::Multigrid => (
            smoother_name(cfg.mg.smoother),
            transfer_name(cfg.mg.transfer),
            cycle_name(cfg.mg.cycle),
        ),
        InnerName::Exact => ("-", "-", "-"),
    };
    Ok(vec![
        cfg.problem.name().into(),
        nx.to_string(),
        ny.to_string(),
        cfg.levels.to_string(),
        cfg.k.to_string(),
        fmt_dr(case.dr),
        case.run.gamma.to_string(),
        case.variant.map_or("-", variant_name).into(),
        w_name(case.w).into(),
        match case.run.system {
            SystemKind::Saddle(_) => "saddle",
            SystemKind::VelocityBlock => "velocity",
        }
        .into(),
        match cfg.inner {
            InnerName::Multigrid => "multigrid",
            InnerName::Exact => "exact",
        }
        .into(),
        smoother.into(),
        transfer.into(),
        cycle.into(),
        prepared.blocks.n_u().to_string(),
        prepared.blocks.n_p().to_string(),
        report.iterations.to_string(),
        report.converged.to_string(),
        format!("{:.6e}", report.relative_residual()),
        format!("{:.3}", report.wall_time),
    ])
}

/// Runs every (DR, variant, γ) combination and writes one CSV row per run.
pub fn run_table(
    cfg: &ExperimentConfig,
    dump: Option<&Path>,
    out: &mut impl Write,
) -> CliResult<()> {
    let cases = table_cases(cfg)?;
    let rows = cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| table_row(cfg, c, dump, i))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(path) = &cfg.output {
        write_csv(path, &TABLE_COLUMNS, &rows)?;
    }
    // iteration grid: one row per γ, one column per (variant, DR)
    let mut cols: Vec<(Option<f64>, Option<SchurVariant>)> = Vec::new();
    for c in &cases {
        if !cols.contains(&(c.dr, c.variant)) {
            cols.push((c.dr, c.variant));
        }
    }
    let header: Vec<String> = std::iter::once("gamma".to_string())
        .chain(cols.iter().map(|(dr, v)| match (dr, v) {
            (Some(d), Some(v)) => format!("{} DR={d:e}", variant_name(*v)),
            (Some(d), None) => format!("DR={d:e}"),
            (None, Some(v)) => variant_name(*v).to_string(),
            (None, None) => "iterations".to_string(),
        }))
        .collect();
    let grid: Vec<Vec<String>> = cfg
        .gammas
        .iter()
        .map(|&g| {
            std::iter::once(g.to_string())
                .chain(cols.iter().map(|col| {
                    cases
                        .iter()
                        .zip(&rows)
                        .find(|(c, _)| (c.dr, c.variant) == *col && c.run.gamma == g)
                        .map(|(_, r)| {
                            if r[17] == "true" {
                                r[16].clone()
                            } else {
                                "-".into()
                            }
                        })
                        .unwrap_or_default()
                }))
                .collect()
        })
        .collect();
    writeln!(
        out,
        "FGMRES iterations to a {:e} relative residual ('-': not converged in {})",
        cfg.tol, cfg.maxit
    )?;
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    print_aligned(out, &header_ref, &grid)?;
    Ok(())
}

/// Checks the eigenvalue bounds for every (DR, variant). Returns whether all hold.
pub fn run_verify(
    cfg: &ExperimentConfig,
    dump: Option<&Path>,
    corrupt_schur: Option<f64>,
    out: &mut impl Write,
) -> CliResult<bool> {
    if cfg.problem == ProblemKind::Viscoplastic {
        return Err(CliError::Config(
            "verify supports the sinker and constant problems".into(),
        ));
    }
    let opts = VerifyOptions {
        s_hat_scale: corrupt_schur.unwrap_or(1.0),
        ..Default::default()
    };
    let mut cases = Vec::new();
    for case in table_cases(&ExperimentConfig {
        gammas: vec![0.0],
        system: SystemName::Saddle,
        inner: InnerName::Exact,
        ..cfg.clone()
    })? {
        let variant = case.variant.expect("saddle cases carry a variant");
        let (s_hat, _) = variant_pair(variant)?;
        cases.push((case, s_hat));
    }
    let results = cases
        .par_iter()
        .enumerate()
        .map(|(i, (case, s_hat))| {
            let prepared = case.run.prepare()?;
            if let Some(dir) = dump {
                prepared
                    .blocks
                    .write_matrix_market(&dir.join(format!("case-{i:03}")))?;
            }
            Ok(verify_lemma(&prepared.blocks, *s_hat, &cfg.gammas, &opts)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut all_hold = true;
    for ((case, _), reports) in cases.iter().zip(&results) {
        for r in reports {
            all_hold &= r.holds;
            let mut row = vec![fmt_dr(case.dr)];
            row.extend(r.csv_record());
            rows.push(row);
            summary.push(vec![
                fmt_dr(case.dr),
                r.label.to_string(),
                r.gamma.to_string(),
                format!("{:.6}", r.f_mu),
                format!("{:.6}", r.lambda_min),
                format!("{:.6}", r.lambda_max),
                format!("{:.6}", r.big_f_mu),
                if r.holds { "yes" } else { "NO" }.into(),
            ]);
        }
    }
    if let Some(path) = &cfg.output {
        write_csv(path, &verify_columns(), &rows)?;
    }
    print_aligned(
        out,
        &[
            "dr",
            "pair",
            "gamma",
            "f_mu",
            "lambda_min",
            "lambda_max",
            "F_mu",
            "holds",
        ],
        &summary,
    )?;
    if !all_hold {
        writeln!(out, "eigenvalue bounds violated")?;
    }
    Ok(all_hold)
}

fn viscoplastic_config(cfg: &ExperimentConfig) -> ViscoplasticConfig {
    let (nx, ny) = cfg.cells();
    ViscoplasticConfig {
        coarse_nx: nx,
        coarse_ny: ny,
        n_levels: cfg.levels,
        k: cfg.k,
        linear: cfg.linear_rheology,
        ..Default::default()
    }
    .with_yield_stress_pa(cfg.yield_stress_mpa * 1e6)
}

fn newton_rows(variant: SchurVariant, gamma: f64, r: &NewtonResult) -> Vec<Vec<String>> {
    let head = |step: usize| {
        vec![
            variant_name(variant).to_string(),
            gamma.to_string(),
            step.to_string(),
        ]
    };
    let mut rows = vec![[
        head(0),
        vec![
            r.initial.iterations.to_string(),
            r.initial.converged.to_string(),
            format!("{:.6e}", r.initial_residual),
            String::new(),
            format!("{:.3}", r.initial.wall_time),
        ],
    ]
    .concat()];
    for s in &r.steps {
        rows.push(
            [
                head(s.step),
                vec![
                    s.linear_iterations.to_string(),
                    s.linear_converged.to_string(),
                    format!("{:.6e}", s.residual),
                    format!("{}", s.step_length),
                    format!("{:.3}", s.wall_time),
                ],
            ]
            .concat(),
        );
    }
    rows
}

/// Newton solves of the viscoplastic problem for every (variant, γ).
pub fn run_nonlinear(
    cfg: &ExperimentConfig,
    dump: Option<&Path>,
    out: &mut impl Write,
) -> CliResult<()> {
    if cfg.problem != ProblemKind::Viscoplastic {
        return Err(CliError::Config(
            "the nonlinear command needs problem = viscoplastic".into(),
        ));
    }
    if cfg.variants.contains(&SchurVariant::Baseline) {
        return Err(CliError::Config(
            "the nonlinear command needs variant P1 or P2".into(),
        ));
    }
    let problem = ViscoplasticProblem::new(viscoplastic_config(cfg))?;
    let cases: Vec<(SchurVariant, f64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.gammas.iter().map(move |&g| (v, g)))
        .collect();
    let results = cases
        .par_iter()
        .map(|&(variant, gamma)| {
            let opts = NewtonOptions {
                stress_update: cfg.stress_update,
                gamma,
                variant,
                w_choice: match cfg.w {
                    crate::config::WSetting::Auto => None,
                    crate::config::WSetting::Fixed(w) => Some(w),
                },
                mg: cfg.mg,
                linear: linear_options(cfg),
                tol: cfg.newton_tol,
                max_steps: cfg.newton_max_steps,
                stop_on_linear_failure: cfg.stop_on_linear_failure,
                ..Default::default()
            };
            let r = newton_solve(&problem, &opts)?;
            if let Some(dir) = dump {
                let w = opts.w_choice.unwrap_or(variant.default_w());
                problem
                    .newton_blocks(&r.state, gamma, w)?
                    .write_matrix_market(
                        &dir.join(format!("{}-gamma-{gamma}", variant_name(variant))),
                    )?;
            }
            Ok(r)
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut fields = Vec::new();
    for (&(variant, gamma), r) in cases.iter().zip(&results) {
        rows.extend(newton_rows(variant, gamma, r));
        let status = if r.converged {
            format!("converged in {} steps", r.steps.len())
        } else if r.any_linear_failure() {
            format!("linear solve failed after {} steps", r.steps.len())
        } else {
            format!("not converged after {} steps", r.steps.len())
        };
        let final_res = r.steps.last().map_or(r.initial_residual, |s| s.residual);
        writeln!(
            out,
            "{} gamma={gamma}: {status}, residual {final_res:.3e}, linear iterations mean {:.1} max {} (initial solve {})",
            variant_name(variant),
            r.mean_linear_iterations(),
            r.max_linear_iterations(),
            r.initial.iterations,
        )?;
        if cfg.fields.is_some() {
            for s in problem.field_samples(&r.state) {
                let mut row = vec![variant_name(variant).to_string(), gamma.to_string()];
                row.extend(s.iter().map(|v| format!("{v:.9e}")));
                fields.push(row);
            }
        }
    }
    if let Some(path) = &cfg.output {
        write_csv(path, &NONLINEAR_COLUMNS, &rows)?;
    }
    if let Some(path) = &cfg.fields {
        write_csv(path, &FIELD_COLUMNS, &fields)?;
    }
    Ok(())
}

/// Directory for `--dump-matrices`, created up front so that errors surface early.
pub fn prepare_dump_dir(dir: Option<PathBuf>) -> CliResult<Option<PathBuf>> {
    if let Some(d) = &dir {
        std::fs::create_dir_all(d)?;
    }
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small sinker config; `extra` lines replace the defaults with the same key.
    fn small(extra: &str) -> ExperimentConfig {
        let mut lines: Vec<String> = ["nx = 2", "levels = 2", "dr = 1e2", "sinkers = 2"]
            .iter()
            .map(|l| l.to_string())
            .collect();
        for e in extra.lines() {
            let key = e.split('=').next().unwrap().trim();
            lines.retain(|l| l.split('=').next().unwrap().trim() != key);
            lines.push(e.to_string());
        }
        lines.join("\n").parse().unwrap()
    }

    #[test]
    fn cases_cover_the_sweep_in_order() {
        let cfg = small("gamma = 0, 10\ndr = 1e2, 1e4\nvariant = P1, P2");
        let cases = table_cases(&cfg).unwrap();
        assert_eq!(cases.len(), 8);
        assert_eq!(cases[0].dr, Some(1e2));
        assert_eq!(cases[1].run.gamma, 10.0);
        assert_eq!(cases[2].variant, Some(SchurVariant::P2));
        assert_eq!(cases[2].w, WChoice::MpInvVisc);
        assert_eq!(cases[4].dr, Some(1e4));
    }

    #[test]
    fn velocity_system_has_no_variant_axis() {
        let cfg = small("system = velocity\nvariant = P1, P2\ngamma = 1");
        let cases = table_cases(&cfg).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].variant, None);
    }

    #[test]
    fn table_prints_grid() {
        let cfg = small("gamma = 0, 10");
        let mut buf = Vec::new();
        run_table(&cfg, None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("P1 DR=1e2"), "{text}");
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn verify_reports_and_detects_corruption() {
        let cfg = small("levels = 1\ngamma = 0, 10");
        let mut buf = Vec::new();
        assert!(run_verify(&cfg, None, None, &mut buf).unwrap());
        let mut buf = Vec::new();
        assert!(!run_verify(&cfg, None, Some(10.0), &mut buf).unwrap());
    }

    #[test]
    fn problem_command_mismatch_is_a_config_error() {
        let cfg = small("");
        let e = run_nonlinear(&cfg, None, &mut Vec::new()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let cfg: ExperimentConfig = "problem = viscoplastic".parse().unwrap();
        assert_eq!(
            run_table(&cfg, None, &mut Vec::new())
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn size_guard_maps_to_config_error() {
        let cfg = small("nx = 24\nlevels = 1");
        let e = run_verify(&cfg, None, None, &mut Vec::new()).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{e}");
    }
}
