//! Linear solvers and spectral diagnostics.
//!
//! Systems are solved with restarted GMRES, left-preconditioned by one
//! forward Gauss-Seidel sweep in ascending dof order. Convergence is judged
//! on the preconditioned relative residual, recomputed explicitly at every
//! restart; hitting the iteration cap downgrades to a warning instead of an
//! abort because the default tolerance of 1e-15 sits at the double-precision
//! floor.
//!
//! Condition numbers are measured directly: `kappa(A) = sigma_max/sigma_min`
//! together with the extremal eigenvalues of the symmetric part `B` and the
//! spectral radius of the skew part `C`, which bound the condition number by
//! `kappa(A) <= (lambda_max(B) + rho(C)) / lambda_min(B)`. A dense path
//! computes full spectra for small systems; the iterative path uses Lanczos
//! iteration (with full reorthogonalization) on `B`, `B^{-1}` via CG,
//! `C^T C`, `A^T A` and its inverse via GMRES solves.

use serde::Serialize;

use crate::error::PartialConditionReport;
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

// --- GMRES ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Relative residual tolerance (preconditioned).
    pub tol: f64,
    /// Total iteration cap across restarts.
    pub max_iter: usize,
    /// Krylov dimension per restart cycle.
    pub restart: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-15,
            max_iter: 1000,
            restart: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverStats {
    pub iterations: usize,
    /// Final preconditioned relative residual.
    pub residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` with Gauss-Seidel preconditioned restarted GMRES,
/// starting from `x0`. Returns the solution and iteration statistics;
/// non-convergence within the iteration cap is reported via
/// `stats.converged`, not as an error.
pub fn gmres_gs_solve(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolverStats)> {
    let n = a.n();
    assert_eq!(b.len(), n, "rhs dimension mismatch");
    assert_eq!(x0.len(), n, "initial guess dimension mismatch");
    for (i, &d) in a.diagonal().iter().enumerate() {
        if d == 0.0 {
            return Err(Error::Preconditioner(format!(
                "zero diagonal entry in row {i}"
            )));
        }
    }

    let precond = |r: &[f64], z: &mut [f64]| {
        a.gauss_seidel_forward(r, z).expect("diagonal checked above");
    };

    let mut zb = vec![0.0; n];
    precond(b, &mut zb);
    let norm_pb = norm(&zb);
    if norm_pb == 0.0 {
        return Ok((
            vec![0.0; n],
            SolverStats {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        ));
    }

    let mut x = x0.to_vec();
    let mut total_iter = 0usize;
    let m = opts.restart.max(1).min(n);
    let mut scratch = vec![0.0; n];
    let mut residual;

    'outer: loop {
        // explicit preconditioned residual
        a.matvec(&x, &mut scratch);
        let r: Vec<f64> = b.iter().zip(scratch.iter()).map(|(bi, ai)| bi - ai).collect();
        let mut z = vec![0.0; n];
        precond(&r, &mut z);
        let beta = norm(&z);
        residual = beta / norm_pb;
        if residual <= opts.tol || total_iter >= opts.max_iter {
            break 'outer;
        }

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(scaled(&z, 1.0 / beta));
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut k_used = 0;

        for j in 0..m {
            total_iter += 1;
            a.matvec(&basis[j], &mut scratch);
            let mut w = vec![0.0; n];
            precond(&scratch, &mut w);
            // modified Gram-Schmidt
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(v, &w);
                h[i][j] = hij;
                axpy(&mut w, -hij, v);
            }
            let hj1 = norm(&w);
            h[j + 1][j] = hj1;
            // apply accumulated Givens rotations to the new column
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = (h[j][j] * h[j][j] + hj1 * hj1).sqrt();
            if denom == 0.0 {
                k_used = j;
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = hj1 / denom;
            h[j][j] = denom;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            k_used = j + 1;

            let est = g[j + 1].abs() / norm_pb;
            if est <= opts.tol || total_iter >= opts.max_iter || hj1 == 0.0 {
                break;
            }
            basis.push(scaled(&w, 1.0 / hj1));
        }

        if k_used == 0 {
            break 'outer; // exact residual already, or breakdown at start
        }
        // back substitution in the triangularized Hessenberg system
        let mut y = vec![0.0f64; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in (i + 1)..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(&mut x, *yj, &basis[j]);
        }
        if total_iter >= opts.max_iter {
            // recompute the final residual once more before reporting
            a.matvec(&x, &mut scratch);
            let r: Vec<f64> = b.iter().zip(scratch.iter()).map(|(bi, ai)| bi - ai).collect();
            let mut z = vec![0.0; n];
            precond(&r, &mut z);
            residual = norm(&z) / norm_pb;
            break 'outer;
        }
    }

    let converged = residual <= opts.tol;
    Ok((
        x,
        SolverStats {
            iterations: total_iter,
            residual,
            converged,
        },
    ))
}

// --- small vector helpers ----------------------------------------------------

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

#[inline]
fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}

/// SplitMix64: tiny deterministic generator used for start vectors and
/// randomized tests; no external dependency, bit-stable across platforms.
#[derive(Debug, Clone)]
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in (-1, 1).
    pub fn next_sym(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }
}

// --- conjugate gradient (SPD inner solves) -----------------------------------

/// CG on an SPD operator; returns Err on indefiniteness or stagnation.
fn cg_solve(
    op: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> std::result::Result<Vec<f64>, String> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let norm_b = norm(b);
    if norm_b == 0.0 {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        op(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(format!("operator is not positive definite (p^T A p = {pap:e})"));
        }
        let alpha = rr / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * norm_b {
            return Ok(x);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(format!(
        "CG did not reach tolerance {tol:e} in {max_iter} iterations (residual {:e})",
        norm(&r) / norm_b
    ))
}

// --- symmetric eigenvalues ----------------------------------------------------

/// Eigenvalues of a symmetric tridiagonal matrix (diagonal `d`, off-diagonal
/// `e` with `e[0]` unused), by the implicit QL method with shifts.
fn tridiag_eigenvalues(
    d: &mut [f64],
    e: &mut [f64],
) -> std::result::Result<(), String> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err("tridiagonal QL failed to converge".into());
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            // a vanishing rotation radius cancels the sweep early; the
            // remaining updates must then be skipped and the sweep retried
            let mut broke_early = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    broke_early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if broke_early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(())
}

/// Eigenvalues of a dense symmetric matrix: Householder tridiagonalization
/// followed by the QL sweep above. Destroys `a`.
fn dense_sym_eigenvalues(a: &mut [Vec<f64>]) -> std::result::Result<Vec<f64>, String> {
    let n = a.len();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    // Householder reduction (EISPACK tred1-style, no eigenvectors)
    for i in (1..n).rev() {
        let l = i - 1;
        let mut scale = 0.0;
        let mut h = 0.0;
        if l > 0 {
            for k in 0..=l {
                scale += a[i][k].abs();
            }
            if scale == 0.0 {
                e[i] = a[i][l];
            } else {
                for k in 0..=l {
                    a[i][k] /= scale;
                    h += a[i][k] * a[i][k];
                }
                let mut f = a[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i][l] = f - g;
                f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[j][k] * a[i][k];
                    }
                    for k in (j + 1)..=l {
                        g += a[k][j] * a[i][k];
                    }
                    e[j] = g / h;
                    f += e[j] * a[i][j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[i][j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j][k] -= f * e[k] + g * a[i][k];
                    }
                }
            }
        } else {
            e[i] = a[i][l];
        }
        d[i] = h;
    }
    for i in 0..n {
        d[i] = a[i][i];
    }
    tridiag_eigenvalues(&mut d, &mut e)?;
    Ok(d)
}

// --- Lanczos ------------------------------------------------------------------

/// Magnitude of the bottom component of the unit eigenvector of the
/// symmetric tridiagonal (alpha, beta) for the eigenvalue `lambda`, by two
/// rounds of inverse iteration with a partially pivoted tridiagonal solve.
fn tridiag_eigvec_bottom(alpha: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let k = alpha.len();
    if k == 1 {
        return 1.0;
    }
    // tiny shift keeps T - lambda I invertible
    let scale = alpha
        .iter()
        .map(|a| a.abs())
        .chain(beta.iter().map(|b| b.abs()))
        .fold(0.0, f64::max)
        .max(1e-300);
    let shift = lambda + 1e-12 * scale;
    let mut v = vec![1.0 / (k as f64).sqrt(); k];
    for _ in 0..2 {
        // band solve of (T - shift I) x = v with fill-in one extra
        // superdiagonal from row swaps
        let mut d: Vec<f64> = alpha.iter().map(|a| a - shift).collect();
        let mut du: Vec<f64> = beta.to_vec(); // superdiagonal, len k-1
        let mut du2 = vec![0.0f64; k.saturating_sub(2)];
        let mut dl: Vec<f64> = beta.to_vec(); // subdiagonal being eliminated
        let mut b = v.clone();
        for i in 0..k - 1 {
            if dl[i].abs() > d[i].abs() {
                // swap rows i and i+1
                std::mem::swap(&mut d[i], &mut dl[i]);
                let t = du[i];
                du[i] = d[i + 1];
                d[i + 1] = t;
                if i + 2 < k {
                    du2[i] = du[i + 1];
                    du[i + 1] = 0.0;
                }
                b.swap(i, i + 1);
            }
            let piv = if d[i] != 0.0 { d[i] } else { 1e-300 };
            let m = dl[i] / piv;
            d[i + 1] -= m * du[i];
            if i + 2 < k {
                du[i + 1] -= m * du2[i];
            }
            b[i + 1] -= m * b[i];
        }
        // back substitution
        let mut x = vec![0.0f64; k];
        for i in (0..k).rev() {
            let mut s = b[i];
            if i + 1 < k {
                s -= du[i] * x[i + 1];
            }
            if i + 2 < k {
                s -= du2[i] * x[i + 2];
            }
            let piv = if d[i] != 0.0 { d[i] } else { 1e-300 };
            x[i] = s / piv;
        }
        let nx = norm(&x);
        if nx == 0.0 || !nx.is_finite() {
            return 1.0; // conservative: forces further Lanczos steps
        }
        v = scaled(&x, 1.0 / nx);
    }
    v[k - 1].abs()
}

/// Largest eigenvalue of a symmetric (semi-)definite operator by Lanczos
/// iteration with full reorthogonalization and a deterministic start
/// vector. Stops when the Ritz residual `beta_k |s_k|` of the extreme pair
/// drops below `rel_tol` times the eigenvalue scale, or when the Krylov
/// space is exhausted (which makes the Ritz value exact).
fn lanczos_max_eig(
    op: &dyn Fn(&[f64], &mut [f64]),
    n: usize,
    rel_tol: f64,
    max_steps: usize,
) -> std::result::Result<f64, String> {
    if n == 0 {
        return Err("empty operator".into());
    }
    let mut rng = SplitMix64::new(0x5eed_1234_dead_beef);
    let mut v: Vec<f64> = (0..n).map(|_| rng.next_sym()).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let steps = max_steps.min(n).max(1);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];

    for k in 0..steps {
        op(&basis[k], &mut w);
        let alpha = dot(&basis[k], &w);
        alphas.push(alpha);
        axpy(&mut w, -alpha, &basis[k]);
        if k > 0 {
            let beta_prev = betas[k - 1];
            axpy(&mut w, -beta_prev, &basis[k - 1]);
        }
        // full reorthogonalization, two passes
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                axpy(&mut w, -c, b);
            }
        }
        let beta = norm(&w);

        let mut d = alphas.clone();
        let mut e = vec![0.0; d.len()];
        e[1..].copy_from_slice(&betas[..d.len() - 1]);
        tridiag_eigenvalues(&mut d, &mut e)?;
        let lambda = *d.last().unwrap();
        let scale = lambda.abs().max(1e-300);

        if beta <= 1e-13 * scale.max(1.0) || k + 1 == n {
            // invariant subspace / full Krylov space: Ritz value is exact
            return Ok(lambda);
        }
        let bottom = tridiag_eigvec_bottom(&alphas, &betas, lambda);
        if beta * bottom <= rel_tol * scale {
            return Ok(lambda);
        }
        if k + 1 == steps {
            return Err(format!(
                "Lanczos did not converge in {steps} steps (residual {:.2e} vs target {:.2e})",
                beta * bottom,
                rel_tol * scale
            ));
        }
        betas.push(beta);
        basis.push(scaled(&w, 1.0 / beta));
    }
    unreachable!()
}

// --- condition estimation -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CondMethod {
    Dense,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondMode {
    Dense,
    Iterative,
    /// Dense up to 600 unknowns, iterative above.
    Auto,
}

/// Measured spectral quantities of one system matrix together with the
/// condition-number bound `(lambda_max(B) + rho(C)) / lambda_min(B)` from
/// the symmetric/skew split `A = B + C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    pub kappa: f64,
    pub lambda_max_b: f64,
    pub lambda_min_b: f64,
    pub rho_c: f64,
    pub bound: f64,
    pub method: CondMethod,
}

/// Relative accuracy target of the iterative estimates.
pub const COND_EST_TOL: f64 = 1e-3;

const DENSE_LIMIT: usize = 2000;
const AUTO_DENSE_LIMIT: usize = 600;

/// Estimates the spectral condition number of `A` and the quantities of the
/// symmetric/skew bound. The symmetric part `B = (A + A^T)/2` and skew part
/// `C = (A - A^T)/2` are formed from the matrix itself.
pub fn estimate_condition(a: &CsrMatrix, mode: CondMode) -> Result<ConditionReport> {
    let n = a.n();
    let dense = match mode {
        CondMode::Dense => {
            if n > DENSE_LIMIT {
                return Err(Error::Config(format!(
                    "dense condition estimation is limited to {DENSE_LIMIT} unknowns, got {n}"
                )));
            }
            true
        }
        CondMode::Iterative => false,
        CondMode::Auto => n <= AUTO_DENSE_LIMIT,
    };
    if dense {
        estimate_condition_dense(a)
    } else {
        estimate_condition_iterative(a)
    }
}

fn split_parts(a: &CsrMatrix) -> (CsrMatrix, CsrMatrix) {
    let at = a.transpose();
    let mut b = a.clone();
    b.add_scaled(1.0, &at);
    let mut c = a.clone();
    c.add_scaled(-1.0, &at);
    (b.scaled(0.5), c.scaled(0.5))
}

fn estimate_condition_dense(a: &CsrMatrix) -> Result<ConditionReport> {
    let n = a.n();
    let (b, c) = split_parts(a);
    let fail = |message: String, partial: PartialConditionReport| Error::Estimator {
        message,
        partial,
    };

    let mut bd = b.to_dense();
    let b_eigs = dense_sym_eigenvalues(&mut bd)
        .map_err(|e| fail(e, PartialConditionReport::default()))?;
    let lambda_min_b = b_eigs[0];
    let lambda_max_b = b_eigs[n - 1];

    // C^T C and A^T A assembled densely from the sparse rows
    let ctc = gram_dense(&c);
    let mut ctc_m = ctc;
    let c_eigs = dense_sym_eigenvalues(&mut ctc_m).map_err(|e| {
        fail(
            e,
            PartialConditionReport {
                lambda_max_b: Some(lambda_max_b),
                lambda_min_b: Some(lambda_min_b),
                ..Default::default()
            },
        )
    })?;
    let rho_c = c_eigs[n - 1].max(0.0).sqrt();

    let mut ata = gram_dense(a);
    let a_eigs = dense_sym_eigenvalues(&mut ata).map_err(|e| {
        fail(
            e,
            PartialConditionReport {
                lambda_max_b: Some(lambda_max_b),
                lambda_min_b: Some(lambda_min_b),
                rho_c: Some(rho_c),
                ..Default::default()
            },
        )
    })?;
    let sig_min2 = a_eigs[0];
    let sig_max2 = a_eigs[n - 1];
    if sig_min2 <= 0.0 {
        return Err(fail(
            format!("matrix is singular to working precision (sigma_min^2 = {sig_min2:e})"),
            PartialConditionReport {
                lambda_max_b: Some(lambda_max_b),
                lambda_min_b: Some(lambda_min_b),
                rho_c: Some(rho_c),
                ..Default::default()
            },
        ));
    }
    let kappa = (sig_max2 / sig_min2).sqrt();
    Ok(ConditionReport {
        kappa,
        lambda_max_b,
        lambda_min_b,
        rho_c,
        bound: (lambda_max_b + rho_c) / lambda_min_b,
        method: CondMethod::Dense,
    })
}

/// Dense M^T M for a sparse M, via outer products of its rows.
fn gram_dense(m: &CsrMatrix) -> Vec<Vec<f64>> {
    let n = m.n();
    let mut g = vec![vec![0.0f64; n]; n];
    for k in 0..n {
        let (cols, vals) = m.row(k);
        for (ci, vi) in cols.iter().zip(vals.iter()) {
            for (cj, vj) in cols.iter().zip(vals.iter()) {
                g[*ci][*cj] += vi * vj;
            }
        }
    }
    g
}

fn estimate_condition_iterative(a: &CsrMatrix) -> Result<ConditionReport> {
    let n = a.n();
    let (b, c) = split_parts(a);
    let mut partial = PartialConditionReport::default();
    let fail = |message: String, partial: &PartialConditionReport| Error::Estimator {
        message,
        partial: partial.clone(),
    };
    let lanczos_steps = 400;

    // λ_max(B)
    let b_op = |x: &[f64], y: &mut [f64]| b.matvec(x, y);
    let lambda_max_b = lanczos_max_eig(&b_op, n, COND_EST_TOL * 1e-2, lanczos_steps)
        .map_err(|e| fail(format!("lambda_max(B): {e}"), &partial))?;
    partial.lambda_max_b = Some(lambda_max_b);

    // λ_min(B) by inverse iteration: Lanczos on B^{-1} with CG solves
    let binv_op = |x: &[f64], y: &mut [f64]| {
        let z = cg_solve(&b_op, x, 1e-12, 50 * n + 1000).expect("CG failure handled below");
        y.copy_from_slice(&z);
    };
    // probe CG once so a non-SPD B fails cleanly instead of panicking
    let probe = vec![1.0; n];
    cg_solve(&b_op, &probe, 1e-12, 50 * n + 1000)
        .map_err(|e| fail(format!("CG on B: {e}"), &partial))?;
    let inv_lambda = lanczos_max_eig(&binv_op, n, COND_EST_TOL * 1e-2, lanczos_steps)
        .map_err(|e| fail(format!("lambda_min(B): {e}"), &partial))?;
    if inv_lambda <= 0.0 {
        return Err(fail(
            format!("B is not positive definite (1/lambda_min = {inv_lambda:e})"),
            &partial,
        ));
    }
    let lambda_min_b = 1.0 / inv_lambda;
    partial.lambda_min_b = Some(lambda_min_b);

    // rho(C) = ||C||_2 via C^T C (C is normal)
    let ct = c.transpose();
    let ctc_op = |x: &[f64], y: &mut [f64]| {
        let tmp = c.matvec_alloc(x);
        ct.matvec(&tmp, y);
    };
    let rho_c = lanczos_max_eig(&ctc_op, n, COND_EST_TOL * 1e-2, lanczos_steps)
        .map_err(|e| fail(format!("rho(C): {e}"), &partial))?
        .max(0.0)
        .sqrt();
    partial.rho_c = Some(rho_c);

    // sigma_max(A) via A^T A
    let at = a.transpose();
    let ata_op = |x: &[f64], y: &mut [f64]| {
        let tmp = a.matvec_alloc(x);
        at.matvec(&tmp, y);
    };
    let sig_max = lanczos_max_eig(&ata_op, n, COND_EST_TOL * 1e-2, lanczos_steps)
        .map_err(|e| fail(format!("sigma_max(A): {e}"), &partial))?
        .max(0.0)
        .sqrt();

    // sigma_min(A) via Lanczos on (A^T A)^{-1} = A^{-1} A^{-T}, applying the
    // inverses with tightly converged GMRES solves
    let inner = SolverOptions {
        tol: 1e-13,
        max_iter: 4000,
        restart: 200,
    };
    let zeros = vec![0.0; n];
    let inv_op = |x: &[f64], y: &mut [f64]| {
        let (u, s1) = gmres_gs_solve(&at, x, &zeros, &inner).expect("preconditioner ok");
        let (z, s2) = gmres_gs_solve(a, &u, &zeros, &inner).expect("preconditioner ok");
        // 1e-11 leaves slack over the 1e-13 target; failures below that are
        // caught by the probe solve before the Lanczos run
        debug_assert!(s1.residual < 1e-11 && s2.residual < 1e-11);
        y.copy_from_slice(&z);
    };
    let probe = vec![1.0; n];
    let (_, s1) = gmres_gs_solve(&at, &probe, &zeros, &inner)?;
    let (_, s2) = gmres_gs_solve(a, &probe, &zeros, &inner)?;
    if s1.residual > 1e-11 || s2.residual > 1e-11 {
        return Err(fail(
            format!(
                "inner GMRES solves stagnated (residuals {:.2e}, {:.2e})",
                s1.residual, s2.residual
            ),
            &partial,
        ));
    }
    let inv_sig2 = lanczos_max_eig(&inv_op, n, COND_EST_TOL * 1e-2, lanczos_steps)
        .map_err(|e| fail(format!("sigma_min(A): {e}"), &partial))?;
    if inv_sig2 <= 0.0 {
        return Err(fail(
            format!("A is singular to working precision (1/sigma_min^2 = {inv_sig2:e})"),
            &partial,
        ));
    }
    let sig_min = (1.0 / inv_sig2).sqrt();
    let kappa = sig_max / sig_min;

    Ok(ConditionReport {
        kappa,
        lambda_max_b,
        lambda_min_b,
        rho_c,
        bound: (lambda_max_b + rho_c) / lambda_min_b,
        method: CondMethod::Iterative,
    })
}
