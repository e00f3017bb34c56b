use std::time::Instant;

use super::{axpy, dot, norm2, LinearOperator, Preconditioner};
use crate::error::{Error, Result};

/// Outcome of an iterative solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `[0]` is the initial true residual, the last entry the final true
    /// residual; entries in between are the Arnoldi least-squares residuals.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn relative_residual(&self) -> f64 {
        let r0 = self.residual_history[0];
        let r = *self.residual_history.last().unwrap();
        if r0 == 0.0 {
            0.0
        } else {
            r / r0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FgmresOptions {
    pub tol: f64,
    pub maxit: usize,
    pub restart: usize,
}

impl Default for FgmresOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            maxit: 300,
            restart: 300,
        }
    }
}

/// Right-preconditioned flexible GMRES. The preconditioner may change from one
/// iteration to the next; the preconditioned directions are stored explicitly.
pub fn fgmres<A, P>(
    op: &A,
    precond: &P,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: FgmresOptions,
) -> Result<(Vec<f64>, SolveReport)>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let start = Instant::now();
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    residual(op, b, &x, &mut r);
    let r0 = norm2(&r);
    let mut history = vec![r0];
    let target = opts.tol * r0;
    if r0 == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual_history: history,
                converged: true,
                wall_time: 0.0,
            },
        ));
    }
    let m = opts.restart.max(1);
    let mut iterations = 0;
    let mut beta = r0;
    let mut w = vec![0.0; n];

    'outer: while iterations < opts.maxit {
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        v.push(r.iter().map(|ri| ri / beta).collect());
        // Hessenberg columns after Givens rotation (upper triangular part).
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<(f64, f64)> = Vec::with_capacity(m);
        let mut g = vec![beta];
        let mut breakdown = false;

        for j in 0..m {
            if iterations >= opts.maxit {
                break;
            }
            let mut zj = vec![0.0; n];
            precond.precondition(&v[j], &mut zj)?;
            op.apply(&zj, &mut w);
            z.push(zj);
            let mut col = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                col[i] = hij;
                axpy(-hij, vi, &mut w);
            }
            // one reorthogonalization pass keeps the basis orthogonal for long runs
            for (i, vi) in v.iter().enumerate() {
                let c = dot(&w, vi);
                col[i] += c;
                axpy(-c, vi, &mut w);
            }
            let hnext = norm2(&w);
            col[j + 1] = hnext;
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, bb) = (col[i], col[i + 1]);
                col[i] = c * a + s * bb;
                col[i + 1] = -s * a + c * bb;
            }
            let (a, bb) = (col[j], col[j + 1]);
            let rho = a.hypot(bb);
            let (c, s) = if rho == 0.0 {
                (1.0, 0.0)
            } else {
                (a / rho, bb / rho)
            };
            col[j] = rho;
            col[j + 1] = 0.0;
            cs.push((c, s));
            let gj = g[j];
            g[j] = c * gj;
            g.push(-s * gj);
            col.truncate(j + 1);
            h.push(col);
            iterations += 1;
            let est = g[j + 1].abs();
            history.push(est);
            if rho == 0.0 {
                breakdown = true;
                break;
            }
            if est <= target || hnext <= f64::EPSILON * beta {
                break;
            }
            v.push(w.iter().map(|wi| wi / hnext).collect());
        }

        // back substitution on the triangular system, skipping singular pivots
        let k = h.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for l in i + 1..k {
                s -= h[l][i] * y[l];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (zi, yi) in z.iter().zip(&y) {
            axpy(*yi, zi, &mut x);
        }
        residual(op, b, &x, &mut r);
        beta = norm2(&r);
        if let Some(last) = history.last_mut() {
            *last = beta;
        }
        if beta <= target || breakdown {
            break 'outer;
        }
    }

    let converged = beta <= target;
    Ok((
        x,
        SolveReport {
            iterations,
            residual_history: history,
            converged,
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

fn residual<A: LinearOperator + ?Sized>(op: &A, b: &[f64], x: &[f64], r: &mut [f64]) {
    op.residual(b, x, r);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_linalg::{CsrMatrix, IdentityPreconditioner};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct DiagInverse(Vec<f64>);
    impl Preconditioner for DiagInverse {
        fn precondition(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
            for ((zi, ri), d) in z.iter_mut().zip(r).zip(&self.0) {
                *zi = ri / d;
            }
            Ok(())
        }
    }

    #[test]
    fn identity_operator_converges_in_one_iteration() {
        let a = CsrMatrix::identity(7);
        let b: Vec<f64> = (0..7).map(|i| i as f64 + 1.0).collect();
        let (x, rep) = fgmres(
            &a,
            &IdentityPreconditioner,
            &b,
            None,
            FgmresOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        for (u, v) in x.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_diagonal_preconditioner_converges_in_one_iteration() {
        let d: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        let trip: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        let a = CsrMatrix::from_triplets(6, 6, &trip).unwrap();
        let (_, rep) = fgmres(
            &a,
            &DiagInverse(d),
            &[1.0; 6],
            None,
            FgmresOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn random_spd_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-1.0..1.0));
        let m = &g * g.transpose() + DMatrix::identity(10, 10);
        let a = CsrMatrix::from_dense(&m);
        let b: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = FgmresOptions {
            tol: 1e-10,
            ..Default::default()
        };
        let (x, rep) = fgmres(&a, &IdentityPreconditioner, &b, None, opts).unwrap();
        assert!(rep.converged);
        let exact = m.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..10 {
            assert!((x[i] - exact[i]).abs() < 1e-8);
        }
        for w in rep.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let n = 40;
        let trip: Vec<_> = (0..n).map(|i| (i, i, 1.0 + i as f64 * 10.0)).collect();
        let a = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        let opts = FgmresOptions {
            tol: 1e-12,
            maxit: 3,
            restart: 3,
        };
        let (x, rep) = fgmres(&a, &IdentityPreconditioner, &vec![1.0; n], None, opts).unwrap();
        assert_eq!(rep.iterations, 3);
        assert!(!rep.converged);
        let r: Vec<f64> = a.spmv(&x).unwrap().iter().map(|v| 1.0 - v).collect();
        assert!((norm2(&r) - rep.residual_history.last().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn restarted_run_still_converges() {
        let n = 30;
        let trip: Vec<_> = (0..n).map(|i| (i, i, 1.0 + i as f64)).collect();
        let a = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        let opts = FgmresOptions {
            tol: 1e-8,
            maxit: 200,
            restart: 5,
        };
        let (_, rep) = fgmres(&a, &IdentityPreconditioner, &vec![1.0; n], None, opts).unwrap();
        assert!(rep.converged);
        assert!(rep.relative_residual() <= 1e-8);
    }
}
