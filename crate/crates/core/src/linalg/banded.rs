use super::CsrMatrix;
use crate::error::{Error, Result};

/// LU factorization with partial pivoting for a banded matrix.
///
/// Row `i` keeps columns `i - kl ..= i + ku + kl`; the extra `kl` upper
/// diagonals absorb fill-in from row exchanges.
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    band: Vec<f64>,
    mult: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n();
        let (kl, ku) = a.bandwidth();
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for r in 0..n {
            for (c, v) in a.row(r) {
                band[r * width + c + kl - r] += v;
            }
        }
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let mut mult = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0usize; n];
        let at = |r: usize, c: usize| r * width + c + kl - r;

        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[at(k, k)].abs();
            for r in k + 1..=last {
                let v = band[at(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > 1e-18 * scale) {
                return Err(Error::Singular(k));
            }
            piv[k] = p;
            let cmax = (k + ku + kl).min(n - 1);
            if p != k {
                for c in k..=cmax {
                    band.swap(at(k, c), at(p, c));
                }
            }
            let pivot = band[at(k, k)];
            for r in k + 1..=last {
                let m = band[at(r, k)] / pivot;
                mult[k * kl.max(1) + (r - k - 1)] = m;
                band[at(r, k)] = 0.0;
                if m != 0.0 {
                    for c in k + 1..=cmax {
                        band[at(r, c)] -= m * band[at(k, c)];
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            width,
            band,
            mult,
            piv,
        })
    }

    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, w) = (self.n, self.kl, self.width);
        let stride = kl.max(1);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + kl).min(n - 1) {
                    b[r] -= self.mult[k * stride + (r - k - 1)] * bk;
                }
            }
        }
        let ku_total = w - kl - 1;
        for k in (0..n).rev() {
            let row = &self.band[k * w..(k + 1) * w];
            let mut s = b[k];
            for c in k + 1..=(k + ku_total).min(n - 1) {
                s -= row[c + kl - k] * b[c];
            }
            b[k] = s / row[kl];
        }
    }
}
