//! Dense spectral analysis of the augmented Schur complement and its mass-matrix
//! approximations, for meshes small enough to form everything explicitly.

use nalgebra::DMatrix;

use crate::al_precond::{BlockPreconditioner, SchurApprox, SchurVariant};
use crate::assembly::{StokesBlocks, WChoice};
use crate::error::{Error, Result};
use crate::sparse_linalg::{
    generalized_sym_eig, spd_inverse, sym_eigenvalues, BandedCholesky, DenseMatrix, Preconditioner,
};

/// Largest `free velocity + pressure` dof count accepted by the dense routines.
pub const DENSE_LIMIT: usize = 3000;

fn check_size(blocks: &StokesBlocks) -> Result<()> {
    let size = blocks.free_velocity_dofs().len() + blocks.n_p();
    if size > DENSE_LIMIT {
        return Err(Error::TooLarge {
            size,
            limit: DENSE_LIMIT,
        });
    }
    Ok(())
}

fn piece(blocks: &StokesBlocks, which: WChoice) -> &crate::assembly::BlockDiag {
    match which {
        WChoice::Mp => &blocks.mp,
        WChoice::MpInvVisc => &blocks.mp_invvisc,
    }
}

/// Orthonormal columns spanning the complement of the constant pressure, or the identity
/// when the pressure carries no mean constraint.
pub fn deflation_basis(blocks: &StokesBlocks) -> DenseMatrix {
    let n = blocks.n_p();
    if !blocks.mean_constraint {
        return DenseMatrix::identity(n, n);
    }
    let c = nalgebra::DVector::from_column_slice(&blocks.constant_pressure);
    let mut v = c.normalize();
    v[0] -= 1.0;
    let nv = v.norm();
    // Householder reflector mapping the normalized constant onto e_0; the remaining
    // columns span its orthogonal complement.
    let h = if nv < 1e-14 {
        DenseMatrix::identity(n, n)
    } else {
        v /= nv;
        DenseMatrix::identity(n, n) - 2.0 * &v * v.transpose()
    };
    h.columns(1, n - 1).into_owned()
}

/// `(Zᵀ M⁻¹ Z)⁻¹` for a pressure mass matrix `M`.
pub fn reduced_pressure_matrix(blocks: &StokesBlocks, which: WChoice) -> Result<DenseMatrix> {
    let z = deflation_basis(blocks);
    let inv = piece(blocks, which).inverse_to_dense();
    spd_inverse(&(z.transpose() * inv * &z))
}

/// `Zᵀ B A_γ⁻¹ Bᵀ Z` with `A_γ = A + γ Bᵀ W⁻¹ B` formed and factored densely on the free
/// velocity dofs, `W` taken from `blocks.w_choice`.
pub fn dense_schur(blocks: &StokesBlocks, gamma: f64) -> Result<DenseMatrix> {
    check_size(blocks)?;
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be >= 0, got {gamma}"
        )));
    }
    let free = blocks.free_velocity_dofs();
    let rows: Vec<usize> = (0..blocks.n_p()).collect();
    let bf = blocks.b.submatrix(&rows, &free);
    let mut a = blocks.a.principal_submatrix(&free);
    if gamma > 0.0 {
        let winv = blocks.w().inverse_to_dense();
        a += bf.transpose() * winv * &bf * gamma;
    }
    let a = (&a + a.transpose()) * 0.5;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("augmented velocity block".into()))?;
    let z = deflation_basis(blocks);
    let bz = z.transpose() * &bf;
    let x = chol.solve(&bz.transpose());
    let s = &bz * x;
    Ok((&s + s.transpose()) * 0.5)
}

/// `‖S_γ⁻¹ − (S⁻¹ + γ W⁻¹)‖₂ / ‖S_γ⁻¹‖₂` on the deflated pressure space.
pub fn sherman_morrison_error(blocks: &StokesBlocks, gamma: f64) -> Result<f64> {
    let s0 = spd_inverse(&dense_schur(blocks, 0.0)?)?;
    let sg = spd_inverse(&dense_schur(blocks, gamma)?)?;
    let w = reduced_pressure_matrix(blocks, blocks.w_choice)?;
    let diff = &sg - (s0 + spd_inverse(&w)? * gamma);
    Ok(spectral_norm(&diff) / spectral_norm(&sg))
}

fn spectral_norm(m: &DenseMatrix) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Extreme generalized eigenvalues of the three pencils `(S, Ŝ)`, `(S, W)` and `(Ŝ, W)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalenceConstants {
    pub c_mu: f64,
    pub big_c_mu: f64,
    pub d_mu: f64,
    pub big_d_mu: f64,
    pub e_mu: f64,
    pub big_e_mu: f64,
}

fn extremes(a: &DenseMatrix, b: &DenseMatrix) -> Result<(f64, f64)> {
    let ev = generalized_sym_eig(a, b)?;
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "pencil has eigenvalue {lo:e}"
        )));
    }
    Ok((lo, hi))
}

pub fn measure_constants(
    s: &DenseMatrix,
    s_hat: &DenseMatrix,
    w: &DenseMatrix,
) -> Result<EquivalenceConstants> {
    if s.nrows() == 0 {
        return Err(Error::InvalidArgument("empty pressure space".into()));
    }
    let (c_mu, big_c_mu) = extremes(s, s_hat)?;
    let (d_mu, big_d_mu) = extremes(s, w)?;
    let (e_mu, big_e_mu) = extremes(s_hat, w)?;
    Ok(EquivalenceConstants {
        c_mu,
        big_c_mu,
        d_mu,
        big_d_mu,
        e_mu,
        big_e_mu,
    })
}

/// Lower and upper bounds `(f_μ, F_μ)` on the spectrum of `Ŝ_γ⁻¹ S_γ`.
pub fn lemma_bounds(k: &EquivalenceConstants, gamma: f64) -> (f64, f64) {
    let g = gamma;
    let (c, cc, d, dd, e, ee) = (k.c_mu, k.big_c_mu, k.d_mu, k.big_d_mu, k.e_mu, k.big_e_mu);
    let f1 = c / (1.0 + g * c * ee) + g * d / (1.0 + g * d);
    let f2 = (1.0 + g * e) / (1.0f64.max(1.0 / c) + g * e);
    let big_f1 = cc / (1.0 + g * cc * e) + g * dd / (1.0 + g * dd);
    let big_f2 = (1.0 + g * e) / (1.0f64.min(1.0 / cc) + g * e);
    (f1.max(f2), big_f1.min(big_f2))
}

/// Upper bound on the spectral condition number of the preconditioned saddle-point
/// system with exact velocity solves.
pub fn condition_bound(f_mu: f64, big_f_mu: f64) -> f64 {
    1.0f64.max(big_f_mu) / 1.0f64.min(f_mu)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub tol: f64,
    /// Multiplies `Ŝ_γ` before the spectrum is measured. Anything but 1 breaks the
    /// bounds and is only useful to show that the check can fail.
    pub s_hat_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            s_hat_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub gamma: f64,
    pub label: &'static str,
    pub constants: EquivalenceConstants,
    pub f_mu: f64,
    pub big_f_mu: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Largest deviation from `(1 + γ)/(ν⁻¹ + γ)`, present when `Ŝ = W`.
    pub remark_error: Option<f64>,
    pub holds: bool,
}

impl BoundReport {
    pub const CSV_HEADER: [&'static str; 14] = [
        "gamma",
        "variant",
        "c_mu",
        "C_mu",
        "d_mu",
        "D_mu",
        "e_mu",
        "E_mu",
        "f_mu",
        "F_mu",
        "lambda_min",
        "lambda_max",
        "remark_error",
        "holds",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let k = &self.constants;
        let mut out = vec![format!("{}", self.gamma), self.label.to_string()];
        out.extend(
            [
                k.c_mu,
                k.big_c_mu,
                k.d_mu,
                k.big_d_mu,
                k.e_mu,
                k.big_e_mu,
                self.f_mu,
                self.big_f_mu,
                self.lambda_min,
                self.lambda_max,
            ]
            .iter()
            .map(|v| format!("{v:.12e}")),
        );
        out.push(
            self.remark_error
                .map(|v| format!("{v:.3e}"))
                .unwrap_or_default(),
        );
        out.push(self.holds.to_string());
        out
    }
}

pub fn pair_label(s_hat: WChoice, w: WChoice) -> &'static str {
    match (s_hat, w) {
        (WChoice::MpInvVisc, WChoice::Mp) => "P1",
        (WChoice::MpInvVisc, WChoice::MpInvVisc) => "P2",
        (WChoice::Mp, WChoice::Mp) => "Mp/Mp",
        (WChoice::Mp, WChoice::MpInvVisc) => "Mp/Mp(1/mu)",
    }
}

/// `Ŝ` and `W` pieces used by a preconditioner variant.
pub fn variant_pair(variant: SchurVariant) -> Result<(WChoice, WChoice)> {
    match variant {
        SchurVariant::P1 => Ok((WChoice::MpInvVisc, WChoice::Mp)),
        SchurVariant::P2 => Ok((WChoice::MpInvVisc, WChoice::MpInvVisc)),
        SchurVariant::Baseline => Err(Error::Unsupported(
            "the baseline approximation ignores the augmentation".into(),
        )),
    }
}

/// Compares the spectrum of `Ŝ_γ⁻¹ S_γ` with `[f_μ, F_μ]` for every `γ`, where
/// `Ŝ_γ⁻¹ = Ŝ⁻¹ + γ W⁻¹` and `W` is `blocks.w_choice`.
pub fn verify_lemma(
    blocks: &StokesBlocks,
    s_hat: WChoice,
    gammas: &[f64],
    opts: &VerifyOptions,
) -> Result<Vec<BoundReport>> {
    check_size(blocks)?;
    let s = dense_schur(blocks, 0.0)?;
    let s_hat_m = reduced_pressure_matrix(blocks, s_hat)?;
    let w = reduced_pressure_matrix(blocks, blocks.w_choice)?;
    let consts = measure_constants(&s, &s_hat_m, &w)?;
    let nu = (s_hat == blocks.w_choice)
        .then(|| generalized_sym_eig(&s, &s_hat_m))
        .transpose()?;
    let s_hat_inv = spd_inverse(&s_hat_m)?;
    let w_inv = spd_inverse(&w)?;
    let label = pair_label(s_hat, blocks.w_choice);
    gammas
        .iter()
        .map(|&gamma| {
            let sg = dense_schur(blocks, gamma)?;
            let shg = spd_inverse(&(&s_hat_inv + &w_inv * gamma))? * opts.s_hat_scale;
            let ev = generalized_sym_eig(&sg, &shg)?;
            let (lambda_min, lambda_max) = (ev[0], ev[ev.len() - 1]);
            let (f_mu, big_f_mu) = lemma_bounds(&consts, gamma);
            let remark_error = nu.as_ref().map(|nu| {
                // The map ν ↦ (1 + γ)/(ν⁻¹ + γ) is increasing, so sorted lists pair up.
                nu.iter()
                    .zip(&ev)
                    .map(|(n, l)| ((1.0 + gamma) / (1.0 / n + gamma) - l).abs())
                    .fold(0.0, f64::max)
            });
            Ok(BoundReport {
                gamma,
                label,
                constants: consts,
                f_mu,
                big_f_mu,
                lambda_min,
                lambda_max,
                remark_error,
                holds: f_mu - opts.tol <= lambda_min && lambda_max <= big_f_mu + opts.tol,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionReport {
    /// `max |λ| / min |λ|` over the eigenvalues of the preconditioned system.
    pub condition: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Eigenvalue condition number of `P K` for the block preconditioner with an exact
/// `A_γ` solve, compared with `max(1, F_μ)/min(1, f_μ)`. The constant pressure mode,
/// which `P K` maps to zero under the mean constraint, is excluded.
pub fn condition_check(
    blocks: &StokesBlocks,
    variant: SchurVariant,
    tol: f64,
) -> Result<ConditionReport> {
    let n = blocks.n_u() + blocks.n_p();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge {
            size: n,
            limit: DENSE_LIMIT,
        });
    }
    let (s_hat, w) = variant_pair(variant)?;
    if w != blocks.w_choice {
        return Err(Error::InvalidArgument(format!(
            "variant {} expects W = {w:?}, blocks carry {:?}",
            variant.name(),
            blocks.w_choice
        )));
    }
    let s = dense_schur(blocks, 0.0)?;
    let consts = measure_constants(
        &s,
        &reduced_pressure_matrix(blocks, s_hat)?,
        &reduced_pressure_matrix(blocks, w)?,
    )?;
    let (f_mu, big_f_mu) = lemma_bounds(&consts, blocks.gamma);
    let bound = condition_bound(f_mu, big_f_mu);

    let inner = BandedCholesky::factor(&blocks.a_gamma)?;
    let pc = BlockPreconditioner::new(SchurApprox::from_blocks(variant, blocks), &inner, blocks);
    let (nu, np) = (blocks.n_u(), blocks.n_p());
    let bt = blocks.b.transpose();
    let mut col = vec![0.0; n];
    let mut z = vec![0.0; n];
    // Columns of P K. With an exact velocity solve P K = [[I, X], [0, T]], so its spectrum
    // is {1} together with the spectrum of T; the block structure is checked on the way.
    let mut structure_err = 0.0f64;
    let mut t = DMatrix::zeros(np, np);
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        // A_γ is symmetric, so its column j is row j; the columns of B are the rows of Bᵀ.
        if j < nu {
            let (idx, vals) = blocks.a_gamma.row(j);
            for (&i, &v) in idx.iter().zip(vals) {
                col[i] = v;
            }
            let (idx, vals) = bt.row(j);
            for (&i, &v) in idx.iter().zip(vals) {
                col[nu + i] = v;
            }
        } else {
            let (idx, vals) = blocks.b.row(j - nu);
            for (&i, &v) in idx.iter().zip(vals) {
                col[i] = v;
            }
        }
        pc.precondition(&col, &mut z)?;
        if j < nu {
            for (i, zi) in z.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                structure_err = structure_err.max((zi - expect).abs());
            }
        } else {
            for i in 0..np {
                t[(i, j - nu)] = z[nu + i];
            }
        }
    }
    if structure_err > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "preconditioned system is not block triangular (deviation {structure_err:e})"
        )));
    }
    let schur = nalgebra::linalg::Schur::try_new(t, 1e-14, 100_000)
        .ok_or_else(|| Error::NonFinite("eigenvalue iteration did not converge".into()))?;
    let mut mags: Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if blocks.mean_constraint {
        mags.remove(0);
    }
    mags.push(1.0);
    let (lo, hi) = mags.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &m| {
        (lo.min(m), hi.max(m))
    });
    let condition = hi / lo;
    Ok(ConditionReport {
        condition,
        bound,
        holds: condition <= bound + tol,
    })
}
