use super::{dot, norm2, CsrMatrix};
use crate::error::{Error, Result};

/// Incomplete LU with zero fill-in on the pattern of `A`.
pub struct Ilu0 {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let (rp, col, val) = a.parts();
        let n = a.n();
        let mut val = val.to_vec();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let mut diag = vec![usize::MAX; n];
        for r in 0..n {
            for k in rp[r]..rp[r + 1] {
                if col[k] == r {
                    diag[r] = k;
                }
            }
            if diag[r] == usize::MAX {
                return Err(Error::Singular(r));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for r in 0..n {
            for k in rp[r]..rp[r + 1] {
                pos[col[k]] = k;
            }
            for k in rp[r]..rp[r + 1] {
                let c = col[k];
                if c >= r {
                    break;
                }
                let piv = val[diag[c]];
                let m = val[k] / piv;
                val[k] = m;
                for kk in diag[c] + 1..rp[c + 1] {
                    let p = pos[col[kk]];
                    if p != usize::MAX {
                        val[p] -= m * val[kk];
                    }
                }
            }
            for k in rp[r]..rp[r + 1] {
                pos[col[k]] = usize::MAX;
            }
            if val[diag[r]] == 0.0 {
                // zero pivot, e.g. a bordering row: keep the preconditioner usable
                val[diag[r]] = scale;
            }
        }
        Ok(Self {
            n,
            row_ptr: rp.to_vec(),
            col: col.to_vec(),
            val,
            diag,
        })
    }

    /// Solves `L U z = r` in place.
    pub fn apply(&self, z: &mut [f64]) {
        for r in 0..self.n {
            let mut s = z[r];
            for k in self.row_ptr[r]..self.diag[r] {
                s -= self.val[k] * z[self.col[k]];
            }
            z[r] = s;
        }
        for r in (0..self.n).rev() {
            let mut s = z[r];
            for k in self.diag[r] + 1..self.row_ptr[r + 1] {
                s -= self.val[k] * z[self.col[k]];
            }
            z[r] = s / self.val[self.diag[r]];
        }
    }
}

#[derive(Clone, Debug)]
pub struct KrylovReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Right-preconditioned BiCGSTAB.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    pre: &Ilu0,
    rel_tol: f64,
    max_iter: usize,
) -> Result<KrylovReport> {
    let n = a.n();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(KrylovReport {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = a.mul(&x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rel = norm2(&r) / bnorm;
    if rel <= rel_tol {
        return Ok(KrylovReport {
            x,
            iterations: 0,
            relative_residual: rel,
        });
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        y.copy_from_slice(&p);
        pre.apply(&mut y);
        a.matvec(&y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / bnorm <= rel_tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(KrylovReport {
                x,
                iterations: it,
                relative_residual: norm2(&s) / bnorm,
            });
        }
        z.copy_from_slice(&s);
        pre.apply(&mut z);
        a.matvec(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt == 0.0 { 0.0 } else { dot(&t, &s) / tt };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm2(&r) / bnorm;
        if rel <= rel_tol {
            return Ok(KrylovReport {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
    }
    Err(Error::KrylovStall {
        iterations: max_iter,
        relative_residual: rel,
    })
}
