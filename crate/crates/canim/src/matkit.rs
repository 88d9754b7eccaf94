//! Dense small-matrix primitives.
//!
//! Everything here operates on matrices of order at most eight or so;
//! the solvers trade asymptotic cleverness for directness. The Sylvester
//! and Lyapunov equations are solved by Kronecker vectorization plus a
//! dense LU factorization, and general eigenvalues come from a real
//! Schur decomposition with an iteration budget.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

/// Dense real matrix used throughout the crate.
pub type Mat = DMatrix<f64>;

/// Complex scalar, used for eigenvalues of real matrices.
pub type ComplexScalar = Complex<f64>;

/// Iteration budget handed to the Schur decomposition in [`eigvals`].
/// Generous for matrices of order <= 8; exceeding it signals
/// pathological input rather than a tight loop.
pub const EIG_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum MatError {
    /// The vectorized Sylvester system is singular: the two spectra
    /// overlap (or nearly so), so no unique solution exists.
    #[error("sylvester operator is singular: spectra of the two matrices overlap")]
    SpectraOverlap,
    /// A matrix required to be Hurwitz has an eigenvalue with
    /// nonnegative real part.
    #[error("matrix is not Hurwitz: eigenvalue with real part {0} >= 0")]
    NotHurwitz(f64),
    /// The eigenvalue iteration did not converge within [`EIG_MAX_ITERS`].
    #[error("eigenvalue iteration failed to converge within budget")]
    NoConvergence,
    /// Input to a symmetric-only routine was not symmetric within
    /// tolerance.
    #[error("matrix is not symmetric: max asymmetry {0:.3e}")]
    NotSymmetric(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Companion matrix with ones on the superdiagonal and `beta` as the
/// bottom row. Its characteristic polynomial is
/// `l^r - beta[r-1] l^(r-1) - ... - beta[0]`.
pub fn companion_bottom_row(beta: &[f64]) -> Mat {
    let r = beta.len();
    assert!(r >= 1, "companion matrix needs at least one coefficient");
    let mut m = Mat::zeros(r, r);
    for i in 0..r.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for (j, &b) in beta.iter().enumerate() {
        m[(r - 1, j)] = b;
    }
    m
}

/// Block-diagonal assembly of square or rectangular blocks.
pub fn blkdiag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Solves `T * phi - m * T = n * gamma` for `T` by vectorizing to an
/// `r^2 x r^2` linear system and factoring it with LU.
///
/// The caller guarantees `phi` and `m` share no eigenvalue (here: `m`
/// Hurwitz against a `phi` with purely imaginary spectrum), which makes
/// the solution unique and nonsingular.
pub fn solve_sylvester(phi: &Mat, m: &Mat, n: &Mat, gamma: &Mat) -> Result<Mat, MatError> {
    let r = phi.nrows();
    if phi.ncols() != r || m.nrows() != r || m.ncols() != r {
        return Err(MatError::DimensionMismatch(format!(
            "phi is {}x{}, m is {}x{}",
            phi.nrows(),
            phi.ncols(),
            m.nrows(),
            m.ncols()
        )));
    }
    let rhs_mat = n * gamma;
    if rhs_mat.nrows() != r || rhs_mat.ncols() != r {
        return Err(MatError::DimensionMismatch(format!(
            "n*gamma is {}x{}, expected {r}x{r}",
            rhs_mat.nrows(),
            rhs_mat.ncols()
        )));
    }

    // vec(T*phi) = (phi' kron I) vec(T), vec(m*T) = (I kron m) vec(T),
    // with column-major vec. Assemble A = phi' kron I - I kron m.
    let rr = r * r;
    let mut a = Mat::zeros(rr, rr);
    for j in 0..r {
        for i in 0..r {
            // (phi' kron I)[(j*r)+k, (i*r)+k] = phi[(i, j)]
            for k in 0..r {
                a[(j * r + k, i * r + k)] += phi[(i, j)];
            }
        }
        // -(I kron m): block diagonal copies of -m.
        for bi in 0..r {
            for bj in 0..r {
                a[(j * r + bi, j * r + bj)] -= m[(bi, bj)];
            }
        }
    }
    let b = DVector::from_fn(rr, |idx, _| rhs_mat[(idx % r, idx / r)]);

    let lu = a.clone().lu();
    let x = lu.solve(&b).ok_or(MatError::SpectraOverlap)?;
    // LU with partial pivoting only rejects exactly-zero pivots; check
    // the residual to catch near-singular operators as well.
    let resid = (&a * &x - &b).norm();
    if !resid.is_finite() || resid > 1e-8 * (1.0 + b.norm()) {
        return Err(MatError::SpectraOverlap);
    }

    let t = Mat::from_fn(r, r, |i, j| x[j * r + i]);
    Ok(t)
}

/// Solves `k' * P + P * k = -q` for symmetric positive definite `P`.
///
/// `k` must be Hurwitz and `q` symmetric positive definite. The result
/// is explicitly symmetrized to remove rounding skew.
pub fn solve_lyapunov(k: &Mat, q: &Mat) -> Result<Mat, MatError> {
    let n = k.nrows();
    if k.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(MatError::DimensionMismatch(format!(
            "k is {}x{}, q is {}x{}",
            k.nrows(),
            k.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let eigs = eigvals(k)?;
    if let Some(bad) = eigs.iter().find(|l| l.re >= 0.0) {
        return Err(MatError::NotHurwitz(bad.re));
    }
    // k'P + Pk = -q is P*k - (-k')*P = -q in Sylvester form.
    let p = solve_sylvester(k, &(-k.transpose()), &Mat::identity(n, n), &(-q))?;
    Ok((&p + p.transpose()) * 0.5)
}

/// Eigenvalues of a small real matrix via real Schur decomposition.
///
/// Returns `n` eigenvalues; complex ones appear in exact conjugate
/// pairs (they come from 2x2 blocks of the quasi-triangular factor).
pub fn eigvals(a: &Mat) -> Result<Vec<ComplexScalar>, MatError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigvals needs a square matrix");
    if n == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(MatError::NoConvergence);
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, EIG_MAX_ITERS)
        .ok_or(MatError::NoConvergence)?;
    let vals = schur.complex_eigenvalues();
    Ok(vals.iter().copied().collect())
}

/// Smallest eigenvalue of a symmetric matrix, by cyclic Jacobi sweeps.
///
/// Kept independent of [`eigvals`] so the two can cross-check each
/// other. Input must be symmetric within `1e-9` relative tolerance;
/// it is symmetrized before iterating.
pub fn min_eig_sym(s: &Mat) -> Result<f64, MatError> {
    let evs = sym_eigs(s)?;
    Ok(evs.into_iter().fold(f64::INFINITY, f64::min))
}

/// Ratio of extreme symmetric eigenvalue magnitudes; `f64::INFINITY`
/// when the matrix is singular to working precision.
pub fn cond_sym(s: &Mat) -> Result<f64, MatError> {
    let evs = sym_eigs(s)?;
    let max = evs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let min = evs.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
    if min <= max * 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// All eigenvalues of a symmetric matrix by the cyclic Jacobi method.
pub fn sym_eigs(s: &Mat) -> Result<Vec<f64>, MatError> {
    let n = s.nrows();
    assert_eq!(n, s.ncols(), "sym_eigs needs a square matrix");
    let scale = s.norm().max(1.0);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if asym > 1e-9 * scale {
        return Err(MatError::NotSymmetric(asym / scale));
    }
    let mut a = (s + s.transpose()) * 0.5;

    for _sweep in 0..50 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            return Ok((0..n).map(|i| a[(i, i)]).collect());
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    // Jacobi on symmetric matrices of this size converges in a handful
    // of sweeps; reaching here means the input was pathological.
    Err(MatError::NoConvergence)
}

/// Matrix exponential by scaling-and-squaring with a fixed Pade(6,6)
/// approximant. Adequate for the compensator matrices used here
/// (norms up to a few hundred after scaling by time).
pub fn expm(a: &Mat) -> Mat {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    let norm = a.abs().row_sum().max();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a_scaled = a / 2f64.powi(s);

    // Pade(6,6): N(A) = sum c_k A^k, D(A) = N(-A).
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let eye = Mat::identity(n, n);
    let mut num = &eye * C[0];
    let mut den = &eye * C[0];
    let mut pow = eye.clone();
    for (k, &c) in C.iter().enumerate().skip(1) {
        pow = &pow * &a_scaled;
        num += &pow * c;
        if k % 2 == 0 {
            den += &pow * c;
        } else {
            den -= &pow * c;
        }
    }
    let mut r = den
        .lu()
        .solve(&num)
        .expect("Pade denominator is nonsingular for scaled input");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Coefficients of the monic polynomial with the given real roots,
/// lowest degree first (constant term at index 0, leading 1 implied).
pub fn poly_from_real_roots(roots: &[f64]) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    for &r in roots {
        // multiply by (l - r)
        let mut next = vec![0.0; coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= r * c;
        }
        coeffs = next;
    }
    coeffs.pop(); // drop the leading 1
    coeffs
}

/// Companion matrix whose characteristic polynomial has the given real
/// roots.
pub fn companion_from_real_spectrum(spectrum: &[f64]) -> Mat {
    let coeffs = poly_from_real_roots(spectrum);
    // char poly l^r + c_{r-1} l^{r-1} + ... + c_0 maps to bottom row
    // beta_j = -c_{j-1} in the companion convention used here.
    let beta: Vec<f64> = coeffs.iter().map(|c| -c).collect();
    companion_bottom_row(&beta)
}
