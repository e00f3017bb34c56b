//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any
//! criterion fails. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --release -p alstokes --test acceptance -- 1 7`.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use alstokes::al_precond::SchurVariant;
use alstokes::assembly::{
    assemble_stokes, ConstantViscosity, StokesAssembly, StokesBlocks, ViscosityModel, WChoice,
};
use alstokes::elements::{make_pressure_space, make_velocity_space, DirichletSides, FunctionSpace};
use alstokes::mesh::{build_rect_mesh, vertex_stars, Rect};
use alstokes::multigrid::{
    assemble_level, kernel_decomposition_check, Augmentation, JacobiSmoother, MgOptions, Smoother,
    StarSmoother, Transfer,
};
use alstokes::problems::{
    newton_solve, InnerSolve, LinearRun, NewtonOptions, NewtonResult, SinkerConfig, SinkerProblem,
    SystemKind, UnitSquareProblem, ViscoplasticConfig, ViscoplasticProblem,
};
use alstokes::sparse_linalg::{generalized_sym_eig, spd_inverse, CsrMatrix, FgmresOptions};
use alstokes::spectral::{sherman_morrison_error, verify_lemma, VerifyOptions};

type Outcome = Result<(bool, String), String>;

const SEED: u64 = 1;

fn sinker_blocks(n: usize, dr: f64, k: usize, w: WChoice) -> Result<StokesBlocks, String> {
    let count = alstokes::problems::default_sinker_count(n, n);
    let cfg = SinkerConfig::new(count, dr, SEED).map_err(|e| e.to_string())?;
    let p = SinkerProblem::new(cfg, n, 1, k).map_err(|e| e.to_string())?;
    p.blocks(0.0, w).map_err(|e| e.to_string())
}

fn unit_blocks(n: usize, k: usize, w: WChoice) -> Result<StokesBlocks, String> {
    let m = build_rect_mesh(Rect::UNIT, n, n).map_err(|e| e.to_string())?;
    let v = make_velocity_space(&m, k)
        .map_err(|e| e.to_string())?
        .with_dirichlet(&DirichletSides::all());
    let q = make_pressure_space(&m, k)
        .map_err(|e| e.to_string())?
        .with_mean_constraint(true);
    assemble_stokes(&StokesAssembly {
        velocity: &v,
        pressure: &q,
        viscosity: &ConstantViscosity(1.0),
        body_force: &|_| [0.0, 0.0],
        boundary_values: &|_| [0.0, 0.0],
        gamma: 0.0,
        w_choice: w,
    })
    .map_err(|e| e.to_string())
}

fn sinker_run(coarse_n: usize, n_levels: usize, k: usize, dr: f64, gamma: f64) -> LinearRun {
    LinearRun {
        problem: UnitSquareProblem::Sinker {
            dr,
            n_sinkers: None,
            seed: SEED,
        },
        coarse_n,
        n_levels,
        k,
        gamma,
        w_choice: WChoice::Mp,
        system: SystemKind::VelocityBlock,
        inner: InnerSolve::Multigrid(MgOptions::default()),
        linear: FgmresOptions::default(),
    }
}

fn iterations(run: &LinearRun) -> Result<(usize, bool), String> {
    let r = run.solve().map_err(|e| e.to_string())?;
    Ok((r.iterations, r.converged))
}

fn c1_sherman_morrison() -> Outcome {
    let mut worst = 0.0f64;
    for w in [WChoice::Mp, WChoice::MpInvVisc] {
        let b = sinker_blocks(4, 1e4, 2, w)?;
        for g in [1.0, 10.0, 100.0] {
            worst = worst.max(sherman_morrison_error(&b, g).map_err(|e| e.to_string())?);
        }
    }
    Ok((
        worst <= 1e-9,
        format!("max relative error {worst:.2e} (limit 1e-9)"),
    ))
}

fn c2_lemma_bounds() -> Outcome {
    let gammas = [0.0, 1.0, 10.0, 100.0, 1e4];
    let mut ok = true;
    let mut worst_gap = 0.0f64;
    let mut worst_violation = f64::NEG_INFINITY;
    for n in [4, 8] {
        for dr in [1e2, 1e4] {
            for variant in [SchurVariant::P1, SchurVariant::P2] {
                let b = sinker_blocks(n, dr, 2, variant.default_w())?;
                let reports =
                    verify_lemma(&b, WChoice::MpInvVisc, &gammas, &VerifyOptions::default())
                        .map_err(|e| e.to_string())?;
                for r in &reports {
                    ok &= r.holds;
                    worst_violation = worst_violation
                        .max(r.f_mu - r.lambda_min)
                        .max(r.lambda_max - r.big_f_mu);
                    if r.gamma == 1e4 {
                        let gap = r.big_f_mu - r.f_mu;
                        worst_gap = worst_gap.max(gap);
                        ok &= gap <= 0.05;
                    }
                }
            }
        }
    }
    Ok((
        ok,
        format!(
            "max bound violation {worst_violation:.2e} (tol 1e-9), max F-f at gamma=1e4 {worst_gap:.4} (limit 0.05)"
        ),
    ))
}

fn c3_remark_formula() -> Outcome {
    let mut worst = 0.0f64;
    for b in [
        unit_blocks(4, 2, WChoice::Mp)?,
        sinker_blocks(4, 1e4, 2, WChoice::Mp)?,
    ] {
        let r = verify_lemma(&b, WChoice::Mp, &[5.0], &VerifyOptions::default())
            .map_err(|e| e.to_string())?;
        worst = worst.max(r[0].remark_error.ok_or("no remark check")?);
    }
    Ok((
        worst <= 1e-8,
        format!("max deviation {worst:.2e} (limit 1e-8)"),
    ))
}

fn c4_exact_inner_trend() -> Outcome {
    let mut ok = true;
    let mut rows = Vec::new();
    for dr in [1e4, 1e6] {
        let mut its = Vec::new();
        for g in [0.0, 10.0, 1000.0] {
            let mut run = sinker_run(32, 1, 3, dr, g);
            run.system = SystemKind::Saddle(SchurVariant::P1);
            run.inner = InnerSolve::Exact;
            let (n, conv) = iterations(&run)?;
            ok &= conv;
            its.push(n);
        }
        ok &= its[0] > its[1] && its[1] > its[2] && its[2] <= 8;
        rows.push(format!("DR={dr:e}: {its:?}"));
    }
    Ok((
        ok,
        format!("P1 iterations for gamma 0/10/1000: {}", rows.join(", ")),
    ))
}

fn c5_jacobi_failure() -> Outcome {
    let mut run = sinker_run(8, 3, 3, 1e4, 10.0);
    let (robust, robust_conv) = iterations(&run)?;
    run.inner = InnerSolve::Multigrid(MgOptions::jacobi());
    let (jac, jac_conv) = iterations(&run)?;
    Ok((
        !jac_conv && robust_conv && robust <= 40,
        format!(
            "Jacobi+standard: {jac} its (converged {jac_conv}); star+robust: {robust} its (limit 40)"
        ),
    ))
}

fn c6_gamma_robustness() -> Outcome {
    let mut its = Vec::new();
    let mut ok = true;
    for g in [0.0, 10.0, 1000.0] {
        // 16x16 coarse mesh and 24 sinkers, as in the reference table
        let mut run = sinker_run(16, 3, 3, 1e8, g);
        run.problem = UnitSquareProblem::Sinker {
            dr: 1e8,
            n_sinkers: Some(24),
            seed: SEED,
        };
        let (n, conv) = iterations(&run)?;
        ok &= conv && (1..=40).contains(&n);
        its.push(n);
    }
    let ratio = *its.iter().max().unwrap() as f64 / *its.iter().min().unwrap() as f64;
    ok &= ratio <= 2.0;
    Ok((
        ok,
        format!("iterations for gamma 0/10/1000: {its:?}, max/min {ratio:.2}"),
    ))
}

fn c7_kernel_decomposition() -> Outcome {
    let m = build_rect_mesh(Rect::UNIT, 3, 3).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [2, 3] {
        let v = make_velocity_space(&m, k)
            .map_err(|e| e.to_string())?
            .with_dirichlet(&DirichletSides::all());
        let q = make_pressure_space(&m, k).map_err(|e| e.to_string())?;
        let b = alstokes::assembly::assemble_divergence(&v, &q).map_err(|e| e.to_string())?;
        let r = kernel_decomposition_check(&v, &b).map_err(|e| e.to_string())?;
        ok &= r.holds;
        parts.push(format!(
            "Q{k}: dim N_h {} patch rank {}",
            r.kernel_dim, r.patch_rank
        ));
    }
    Ok((ok, parts.join(", ")))
}

/// Dense `D⁻¹` of an additive smoother on the free dofs, up to its damping factor.
fn dense_smoother_inverse(s: &dyn Smoother, n: usize, free: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(free.len(), free.len());
    let mut e = vec![0.0; n];
    let mut c = vec![0.0; n];
    for (j, &dj) in free.iter().enumerate() {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[dj] = 1.0;
        s.correction(&e, &mut c);
        for (i, &di) in free.iter().enumerate() {
            out[(i, j)] = c[di];
        }
    }
    (&out + out.transpose()) * 0.5
}

fn preconditioned_condition(
    a: &CsrMatrix,
    dinv: &DMatrix<f64>,
    free: &[usize],
) -> Result<f64, String> {
    let af = a.principal_submatrix(free);
    let d = spd_inverse(dinv).map_err(|e| e.to_string())?;
    let ev = generalized_sym_eig(&af, &d).map_err(|e| e.to_string())?;
    Ok(ev[ev.len() - 1] / ev[0])
}

fn c8_smoother_robustness() -> Outcome {
    let m = build_rect_mesh(Rect::UNIT, 5, 5).map_err(|e| e.to_string())?;
    let v = make_velocity_space(&m, 2)
        .map_err(|e| e.to_string())?
        .with_dirichlet(&DirichletSides::all());
    let q = make_pressure_space(&m, 2).map_err(|e| e.to_string())?;
    let patches = vertex_stars(&m, &v).map_err(|e| e.to_string())?;
    let free = v.free_dofs();
    let sinker = SinkerConfig::new(8, 1e4, SEED).map_err(|e| e.to_string())?;
    let sinker_mu = |x: [f64; 2]| alstokes::problems::sinker_viscosity(&sinker, x);
    let cases: [(&str, &dyn ViscosityModel); 2] = [
        ("mu=1", &ConstantViscosity(1.0)),
        ("sinker DR=1e4", &sinker_mu),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, visc) in cases {
        let mut star = Vec::new();
        let mut jac = Vec::new();
        for g in [0.0, 1e4] {
            let ops = assemble_level(&v, &q, visc, g, WChoice::Mp).map_err(|e| e.to_string())?;
            let a = &ops.a_gamma;
            let s = StarSmoother::new(a, &patches).map_err(|e| e.to_string())?;
            let j = JacobiSmoother::new(a).map_err(|e| e.to_string())?;
            star.push(preconditioned_condition(
                a,
                &dense_smoother_inverse(&s, a.nrows(), &free),
                &free,
            )?);
            jac.push(preconditioned_condition(
                a,
                &dense_smoother_inverse(&j, a.nrows(), &free),
                &free,
            )?);
        }
        let (gs, gj) = (star[1] / star[0], jac[1] / jac[0]);
        ok &= gs <= 5.0 && gj >= 50.0;
        parts.push(format!(
            "{name}: star growth {gs:.2} ({:.1} -> {:.1}), Jacobi growth {gj:.1e}",
            star[0], star[1]
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn energy(a: &CsrMatrix, u: &[f64]) -> f64 {
    let au = a.spmv(u).expect("sizes match");
    au.iter().zip(u).map(|(x, y)| x * y).sum::<f64>().sqrt()
}

/// Random combinations of an orthonormal basis of the discretely divergence-free
/// coarse fields.
fn random_kernel_fields(v: &FunctionSpace, b: &CsrMatrix, count: usize) -> Vec<Vec<f64>> {
    let free = v.free_dofs();
    let rows: Vec<usize> = (0..b.nrows()).collect();
    let bf = b.submatrix(&rows, &free);
    let n = free.len();
    let mut padded = DMatrix::zeros(n.max(bf.nrows()), n);
    padded.view_mut((0, 0), (bf.nrows(), n)).copy_from(&bf);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max();
    let kernel: Vec<usize> = (0..n)
        .filter(|&i| svd.singular_values[i] <= 1e-8 * smax)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    (0..count)
        .map(|_| {
            let mut f = DVector::zeros(n);
            for &i in &kernel {
                f += vt.row(i).transpose() * rng.gen_range(-1.0..1.0);
            }
            let mut u = vec![0.0; v.n_dofs()];
            for (j, &d) in free.iter().enumerate() {
                u[d] = f[j];
            }
            u
        })
        .collect()
}

fn c9_robust_prolongation() -> Outcome {
    let coarse = build_rect_mesh(Rect::UNIT, 4, 4).map_err(|e| e.to_string())?;
    let fine = build_rect_mesh(Rect::UNIT, 8, 8).map_err(|e| e.to_string())?;
    let space = |m| -> Result<(FunctionSpace, FunctionSpace), String> {
        Ok((
            make_velocity_space(m, 2)
                .map_err(|e| e.to_string())?
                .with_dirichlet(&DirichletSides::all()),
            make_pressure_space(m, 2).map_err(|e| e.to_string())?,
        ))
    };
    let (vc, qc) = space(&coarse)?;
    let (vf, qf) = space(&fine)?;
    let visc = ConstantViscosity(1.0);
    let mut robust = Vec::new();
    let mut standard = Vec::new();
    let mut fields = Vec::new();
    for g in [0.0, 1000.0] {
        let oc = assemble_level(&vc, &qc, &visc, g, WChoice::Mp).map_err(|e| e.to_string())?;
        let of = assemble_level(&vf, &qf, &visc, g, WChoice::Mp).map_err(|e| e.to_string())?;
        if fields.is_empty() {
            fields = random_kernel_fields(&vc, &oc.b, 20);
        }
        let aug = Augmentation {
            b: of.b.clone(),
            w: of.w.clone(),
            gamma: g,
        };
        let tr = Transfer::robust(&vc, &vf, &of.a_gamma, aug).map_err(|e| e.to_string())?;
        let ts = Transfer::standard(&vc, &vf).map_err(|e| e.to_string())?;
        let mut rmax = 0.0f64;
        let mut smax = 0.0f64;
        let mut uf = vec![0.0; vf.n_dofs()];
        for u in &fields {
            let base = energy(&oc.a_gamma, u);
            tr.prolong(u, &mut uf);
            rmax = rmax.max(energy(&of.a_gamma, &uf) / base);
            ts.prolong(u, &mut uf);
            smax = smax.max(energy(&of.a_gamma, &uf) / base);
        }
        robust.push(rmax);
        standard.push(smax);
    }
    let (gr, gs) = (robust[1] / robust[0], standard[1] / standard[0]);
    Ok((
        gr <= 3.0 && gs > 10.0,
        format!(
            "max energy ratio over 20 divergence-free coarse fields: robust {:.3} -> {:.3} (x{gr:.2}, limit 3), standard {:.3} -> {:.3} (x{gs:.1}, need > 10)",
            robust[0], robust[1], standard[0], standard[1]
        ),
    ))
}

fn c10_order_robustness() -> Outcome {
    let mut its = Vec::new();
    let mut ok = true;
    for k in [2, 3, 4] {
        let mut run = sinker_run(16, 2, k, 1e6, 1000.0);
        run.system = SystemKind::Saddle(SchurVariant::P2);
        run.w_choice = SchurVariant::P2.default_w();
        let (n, conv) = iterations(&run)?;
        ok &= conv && n <= 40;
        its.push(n);
    }
    ok &= its.windows(2).all(|p| p[1] <= p[0]);
    Ok((
        ok,
        format!("P2 iterations at gamma=1000 for k=2/3/4: {its:?}"),
    ))
}

fn newton_summary(r: &NewtonResult) -> String {
    let its: Vec<usize> = std::iter::once(r.initial.iterations)
        .chain(r.steps.iter().map(|s| s.linear_iterations))
        .collect();
    format!(
        "{} Newton steps, final residual {:.2e}, linear its {its:?}",
        r.steps.len(),
        r.steps.last().map_or(r.initial_residual, |s| s.residual)
    )
}

fn c11_viscoplastic() -> Outcome {
    let problem =
        ViscoplasticProblem::new(ViscoplasticConfig::default()).map_err(|e| e.to_string())?;
    let opts = NewtonOptions {
        gamma: 10.0,
        variant: SchurVariant::P2,
        ..Default::default()
    };
    let r10 = newton_solve(&problem, &opts).map_err(|e| e.to_string())?;
    let ok10 = r10.converged
        && r10.steps.len() <= 15
        && r10.initial.converged
        && r10.initial.iterations <= 150
        && r10
            .steps
            .iter()
            .all(|s| s.linear_converged && s.linear_iterations <= 150);
    let r0 = newton_solve(
        &problem,
        &NewtonOptions {
            gamma: 0.0,
            stop_on_linear_failure: true,
            ..opts
        },
    )
    .map_err(|e| e.to_string())?;
    let cap = opts.linear.maxit;
    let failed0 = !r0.initial.converged
        || r0
            .steps
            .iter()
            .any(|s| !s.linear_converged && s.linear_iterations >= cap);
    Ok((
        ok10 && failed0,
        format!(
            "gamma=10: {} (converged {}); gamma=0: {} (a solve hit the {cap} cap: {failed0})",
            newton_summary(&r10),
            r10.converged,
            newton_summary(&r0)
        ),
    ))
}

fn c12_level_stability() -> Outcome {
    let mut its = Vec::new();
    let mut ok = true;
    for levels in [2, 3] {
        let mut run = sinker_run(16, levels, 3, 1e6, 10.0);
        run.problem = UnitSquareProblem::Sinker {
            dr: 1e6,
            n_sinkers: Some(8),
            seed: SEED,
        };
        run.system = SystemKind::Saddle(SchurVariant::P1);
        let (n, conv) = iterations(&run)?;
        ok &= conv;
        its.push(n);
    }
    let diff = its[0].abs_diff(its[1]);
    Ok((
        ok && diff <= 10,
        format!(
            "P1 iterations, 16x16 coarse Q3 mesh refined to 2/3 levels: {its:?}, difference {diff}"
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 12] = [
        (1, "Sherman-Morrison identity", c1_sherman_morrison),
        (2, "eigenvalue bounds", c2_lemma_bounds),
        (
            3,
            "exact eigenvalues for matching pieces",
            c3_remark_formula,
        ),
        (4, "exact inner solve iteration trend", c4_exact_inner_trend),
        (5, "Jacobi multigrid failure", c5_jacobi_failure),
        (
            6,
            "gamma robustness of robust multigrid",
            c6_gamma_robustness,
        ),
        (7, "kernel decomposition", c7_kernel_decomposition),
        (8, "smoother gamma robustness", c8_smoother_robustness),
        (9, "robust prolongation energy", c9_robust_prolongation),
        (10, "order robustness", c10_order_robustness),
        (11, "viscoplastic Newton", c11_viscoplastic),
        (12, "multigrid level stability", c12_level_stability),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        if !pass {
            failures += 1;
        }
        println!(
            "{} [{id:>2}] {name}: {detail} ({secs:.1}s)",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
