//! Dense complex linear algebra used by the certificate pipelines.
//!
//! Storage and the SVD/LU factorizations come from `nalgebra`. The eigenvalue
//! routine is a self-contained complex Hessenberg reduction followed by
//! Wilkinson-shifted QR sweeps, so that the spectral radius oracle does not
//! depend on the same factorization code as the operator norms it is compared
//! against.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("shifted QR iteration did not converge within {budget} sweeps (dimension {dim})")]
    EigenFailure { dim: usize, budget: usize },
    #[error("singular value decomposition did not converge (dimension {dim})")]
    SvdFailure { dim: usize },
    #[error("matrix is numerically singular (smallest singular value {sigma_min:e})")]
    Singular { sigma_min: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

const SVD_MAX_ITER: usize = 10_000;

/// Largest singular value (spectral norm).
pub fn op_norm(m: &CMatrix) -> Result<f64, LinalgError> {
    Ok(singular_values(m)?.iter().copied().fold(0.0, f64::max))
}

/// Smallest singular value.
pub fn sigma_min(m: &CMatrix) -> Result<f64, LinalgError> {
    Ok(singular_values(m)?
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

pub fn singular_values(m: &CMatrix) -> Result<Vec<f64>, LinalgError> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let dim = m.nrows().max(m.ncols());
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(LinalgError::SvdFailure { dim })?;
    Ok(svd.singular_values.iter().copied().collect())
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `z I - A`.
pub fn shifted(a: &CMatrix, z: C64) -> CMatrix {
    let mut m = -a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += z;
    }
    m
}

/// Spectral norm of `(z I - A)^{-1}`, computed as `1 / sigma_min(z I - A)`.
pub fn resolvent_norm(a: &CMatrix, z: C64) -> Result<f64, LinalgError> {
    let s = sigma_min(&shifted(a, z))?;
    if s <= f64::MIN_POSITIVE {
        return Err(LinalgError::Singular { sigma_min: s });
    }
    Ok(1.0 / s)
}

/// Dense `(z I - A)^{-1}` by LU with partial pivoting.
pub fn resolvent(a: &CMatrix, z: C64) -> Result<CMatrix, LinalgError> {
    let m = shifted(a, z);
    let n = m.nrows();
    m.lu().try_inverse().ok_or(LinalgError::Singular {
        sigma_min: if n == 0 { 0.0 } else { f64::NAN },
    })
}

/// Bilinear pairing `sum_j xp_j x_j` (no conjugation).
pub fn pair(xp: &[C64], x: &[C64]) -> C64 {
    xp.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Eigenvalues of a square complex matrix.
///
/// Householder reduction to upper Hessenberg form, then single-shift QR
/// sweeps with Givens rotations on the active window. Deflation happens when a
/// subdiagonal entry drops below machine epsilon relative to its diagonal
/// neighbours. The iteration budget is `100 * n` sweeps in total; exceptional
/// shifts are used after 10 and 20 sweeps without deflation.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<C64>, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let n = m.nrows();
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![m[(0, 0)]]),
        _ => {}
    }
    let mut h = hessenberg(m);
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut eig = vec![ZERO; n];
    let budget = 100 * n;
    let mut total = 0usize;
    let mut since_deflation = 0usize;
    let mut hi = n - 1;

    loop {
        if hi == 0 {
            eig[0] = h[(0, 0)];
            break;
        }
        // locate the top of the unreduced block ending at `hi`
        let mut lo = hi;
        while lo > 0 {
            let sub = h[(lo, lo - 1)].norm();
            let mut diag = h[(lo, lo)].norm() + h[(lo - 1, lo - 1)].norm();
            if diag == 0.0 {
                diag = scale;
            }
            if sub <= f64::EPSILON * diag || sub <= f64::MIN_POSITIVE {
                h[(lo, lo - 1)] = ZERO;
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            eig[hi] = h[(hi, hi)];
            hi -= 1;
            since_deflation = 0;
            continue;
        }
        if total >= budget {
            return Err(LinalgError::EigenFailure { dim: n, budget });
        }
        total += 1;
        since_deflation += 1;

        let shift = if since_deflation.is_multiple_of(10) {
            // exceptional shift
            h[(hi, hi)] + C64::new(0.75 * h[(hi, hi - 1)].norm(), 0.4 * h[(hi, hi - 1)].norm())
        } else {
            wilkinson_shift(
                h[(hi - 1, hi - 1)],
                h[(hi - 1, hi)],
                h[(hi, hi - 1)],
                h[(hi, hi)],
            )
        };
        qr_sweep(&mut h, lo, hi, shift);
    }
    Ok(eig)
}

fn wilkinson_shift(a: C64, b: C64, c: C64, d: C64) -> C64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let mean = (a + d) * 0.5;
    let mu1 = mean + disc;
    let mu2 = mean - disc;
    if (mu1 - d).norm() <= (mu2 - d).norm() {
        mu1
    } else {
        mu2
    }
}

/// One explicit-shift QR step `H - mu = QR, H <- RQ + mu` on rows/columns
/// `lo..=hi`. Entries outside the window do not influence the eigenvalues of
/// the block and are left stale.
fn qr_sweep(h: &mut CMatrix, lo: usize, hi: usize, mu: C64) {
    for k in lo..=hi {
        h[(k, k)] -= mu;
    }
    let mut rots = Vec::with_capacity(hi - lo);
    for k in lo..hi {
        let a = h[(k, k)];
        let b = h[(k + 1, k)];
        let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let (c, s) = if r == 0.0 {
            (ONE, ZERO)
        } else {
            (a / r, b / r)
        };
        for j in k..=hi {
            let x = h[(k, j)];
            let y = h[(k + 1, j)];
            h[(k, j)] = c.conj() * x + s.conj() * y;
            h[(k + 1, j)] = -s * x + c * y;
        }
        rots.push((c, s));
    }
    for (idx, (c, s)) in rots.into_iter().enumerate() {
        let k = lo + idx;
        let last = (k + 2).min(hi);
        for i in lo..=last {
            let x = h[(i, k)];
            let y = h[(i, k + 1)];
            h[(i, k)] = x * c + y * s;
            h[(i, k + 1)] = -x * s.conj() + y * c.conj();
        }
    }
    for k in lo..=hi {
        h[(k, k)] += mu;
    }
}

/// Unitary similarity to upper Hessenberg form via Householder reflectors.
pub fn hessenberg(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let mut a = m.clone();
    if n < 3 {
        return a;
    }
    for k in 0..n - 2 {
        let len = n - k - 1;
        let mut v: Vec<C64> = (0..len).map(|i| a[(k + 1 + i, k)]).collect();
        let xnorm = vec_norm(&v);
        if xnorm == 0.0 {
            continue;
        }
        let phase = if v[0].norm() == 0.0 {
            ONE
        } else {
            v[0] / v[0].norm()
        };
        let alpha = -phase * xnorm;
        v[0] -= alpha;
        let vnorm = vec_norm(&v);
        if vnorm == 0.0 {
            continue;
        }
        for z in v.iter_mut() {
            *z /= vnorm;
        }
        // left: A <- (I - 2 v v^H) A on rows k+1..
        for j in 0..n {
            let dot: C64 = (0..len).map(|i| v[i].conj() * a[(k + 1 + i, j)]).sum();
            for i in 0..len {
                a[(k + 1 + i, j)] -= v[i] * dot * 2.0;
            }
        }
        // right: A <- A (I - 2 v v^H) on columns k+1..
        for i in 0..n {
            let dot: C64 = (0..len).map(|j| a[(i, k + 1 + j)] * v[j]).sum();
            for j in 0..len {
                a[(i, k + 1 + j)] -= dot * v[j].conj() * 2.0;
            }
        }
        for i in k + 2..n {
            a[(i, k)] = ZERO;
        }
    }
    a
}
