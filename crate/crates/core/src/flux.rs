//! Flux models `A(x, v)`, periodic in `x` with unit period.
//!
//! Points are `[x1, x2]`; one-dimensional problems pass `x2 = 0` and read
//! only the first component.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flux, its `v`-derivatives and its `x`-divergence at frozen `v`.
pub trait FluxModel: Send + Sync {
    fn flux(&self, x: [f64; 2], v: f64) -> [f64; 2];
    fn dv(&self, x: [f64; 2], v: f64) -> [f64; 2];
    fn dvv(&self, x: [f64; 2], v: f64) -> [f64; 2];
    fn div_x(&self, x: [f64; 2], v: f64) -> f64;

    /// False when `dvv` is a finite-difference approximation.
    fn exact_dvv(&self) -> bool {
        true
    }

    /// Cell average of the first component of the velocity field, for
    /// separable fluxes.
    fn mean_phi1(&self) -> Option<f64> {
        None
    }

    fn eval(&self, x: [f64; 2], v: f64) -> FluxEval {
        FluxEval {
            a: self.flux(x, v),
            dva: self.dv(x, v),
            div_x: self.div_x(x, v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxEval {
    pub a: [f64; 2],
    pub dva: [f64; 2],
    pub div_x: f64,
}

/// Finite Fourier series `sum_n c_n cos(2 pi n s) + s_n sin(2 pi n s)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Fourier {
    /// `(n, cos coefficient, sin coefficient)`.
    pub terms: Vec<(u32, f64, f64)>,
}

impl Fourier {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![(0, c, 0.0)],
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(n, c, sn)| {
                let t = 2.0 * PI * n as f64 * s;
                c * t.cos() + sn * t.sin()
            })
            .sum()
    }

    pub fn derivative(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(n, c, sn)| {
                let w = 2.0 * PI * n as f64;
                w * (sn * (w * s).cos() - c * (w * s).sin())
            })
            .sum()
    }

    /// Mean over one period.
    pub fn mean(&self) -> f64 {
        self.terms.iter().filter(|t| t.0 == 0).map(|t| t.1).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.terms
            .iter()
            .all(|&(n, c, s)| c == 0.0 && (s == 0.0 || n == 0))
    }
}

/// Polynomial `sum_k c_k v^k`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * v + c)
    }

    pub fn d1(&self, v: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * v + k as f64 * c)
    }

    pub fn d2(&self, v: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * v + (k * (k - 1)) as f64 * c)
    }
}

/// `A(x, v) = Phi(x) f(v)` with `Phi = (phi(x2), psi(x1))`, which is
/// divergence free by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableFlux {
    pub phi: Fourier,
    pub psi: Fourier,
    pub f: Polynomial,
}

impl SeparableFlux {
    pub fn new(phi: Fourier, psi: Fourier, f: Polynomial) -> Result<Self> {
        let finite = phi
            .terms
            .iter()
            .chain(&psi.terms)
            .all(|t| t.1.is_finite() && t.2.is_finite())
            && f.coeffs.iter().all(|c| c.is_finite());
        if !finite {
            return Err(Error::Validation("non-finite flux coefficient".into()));
        }
        Ok(Self { phi, psi, f })
    }

    /// x-independent flux `(c f(v), 0)`.
    pub fn homogeneous(c: f64, f: Polynomial) -> Self {
        Self {
            phi: Fourier::constant(c),
            psi: Fourier::default(),
            f,
        }
    }

    /// `(v^2, 0)`.
    pub fn burgers() -> Self {
        Self::homogeneous(1.0, Polynomial::new(vec![0.0, 0.0, 1.0]))
    }

    fn field(&self, x: [f64; 2]) -> [f64; 2] {
        [self.phi.eval(x[1]), self.psi.eval(x[0])]
    }
}

impl FluxModel for SeparableFlux {
    fn flux(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        let [p1, p2] = self.field(x);
        let f = self.f.eval(v);
        [p1 * f, p2 * f]
    }

    fn dv(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        let [p1, p2] = self.field(x);
        let d = self.f.d1(v);
        [p1 * d, p2 * d]
    }

    fn dvv(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        let [p1, p2] = self.field(x);
        let d = self.f.d2(v);
        [p1 * d, p2 * d]
    }

    fn div_x(&self, _x: [f64; 2], _v: f64) -> f64 {
        0.0
    }

    fn mean_phi1(&self) -> Option<f64> {
        Some(self.phi.mean())
    }
}

/// One-dimensional test flux `A1(x, v) = v + a sin(2 pi x1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForcedLinearFlux {
    pub amplitude: f64,
}

impl Default for ForcedLinearFlux {
    fn default() -> Self {
        Self { amplitude: 1.0 }
    }
}

impl FluxModel for ForcedLinearFlux {
    fn flux(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        [v + self.amplitude * (2.0 * PI * x[0]).sin(), 0.0]
    }

    fn dv(&self, _x: [f64; 2], _v: f64) -> [f64; 2] {
        [1.0, 0.0]
    }

    fn dvv(&self, _x: [f64; 2], _v: f64) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn div_x(&self, x: [f64; 2], _v: f64) -> f64 {
        2.0 * PI * self.amplitude * (2.0 * PI * x[0]).cos()
    }
}

type VecFn = Box<dyn Fn([f64; 2], f64) -> [f64; 2] + Send + Sync>;
type ScalarFn = Box<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

/// User-supplied flux from callables. Such fluxes report their own
/// divergence; a missing second derivative is replaced by central
/// differences of `dv`.
pub struct PluginFlux {
    flux: VecFn,
    dv: VecFn,
    div_x: ScalarFn,
    dvv: Option<VecFn>,
}

impl PluginFlux {
    pub fn new(
        flux: impl Fn([f64; 2], f64) -> [f64; 2] + Send + Sync + 'static,
        dv: impl Fn([f64; 2], f64) -> [f64; 2] + Send + Sync + 'static,
        div_x: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            flux: Box::new(flux),
            dv: Box::new(dv),
            div_x: Box::new(div_x),
            dvv: None,
        }
    }

    pub fn with_dvv(
        mut self,
        dvv: impl Fn([f64; 2], f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        self.dvv = Some(Box::new(dvv));
        self
    }
}

impl FluxModel for PluginFlux {
    fn flux(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        (self.flux)(x, v)
    }

    fn dv(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        (self.dv)(x, v)
    }

    fn dvv(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        match &self.dvv {
            Some(f) => f(x, v),
            None => {
                let d = 1e-5 * (1.0 + v.abs());
                let p = (self.dv)(x, v + d);
                let m = (self.dv)(x, v - d);
                [(p[0] - m[0]) / (2.0 * d), (p[1] - m[1]) / (2.0 * d)]
            }
        }
    }

    fn div_x(&self, x: [f64; 2], v: f64) -> f64 {
        (self.div_x)(x, v)
    }

    fn exact_dvv(&self) -> bool {
        self.dvv.is_some()
    }
}

/// `chi(v) A(x, v)` with a C2 bump `chi` equal to one on `[-r0, r0]` and
/// zero outside `[-r0 - 1, r0 + 1]`.
pub struct CutoffFlux<'a> {
    inner: &'a dyn FluxModel,
    r0: f64,
}

pub fn with_cutoff(model: &dyn FluxModel, r0: f64) -> CutoffFlux<'_> {
    CutoffFlux { inner: model, r0 }
}

impl CutoffFlux<'_> {
    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// `(chi, chi', chi'')` at `v`.
    pub fn chi(&self, v: f64) -> (f64, f64, f64) {
        let t = v.abs() - self.r0;
        if t <= 0.0 {
            return (1.0, 0.0, 0.0);
        }
        if t >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        // quintic smoothstep S(t) = 10t^3 - 15t^4 + 6t^5
        let s = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
        let s1 = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        let s2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
        let sg = v.signum();
        (1.0 - s, -sg * s1, -s2)
    }
}

impl FluxModel for CutoffFlux<'_> {
    fn flux(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        let (c, _, _) = self.chi(v);
        if c == 0.0 {
            return [0.0, 0.0];
        }
        let a = self.inner.flux(x, v);
        [a[0] * c, a[1] * c]
    }

    fn dv(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        let (c, c1, _) = self.chi(v);
        if c == 0.0 {
            return [0.0, 0.0];
        }
        let a = self.inner.flux(x, v);
        let d = self.inner.dv(x, v);
        [d[0] * c + a[0] * c1, d[1] * c + a[1] * c1]
    }

    fn dvv(&self, x: [f64; 2], v: f64) -> [f64; 2] {
        let (c, c1, c2) = self.chi(v);
        if c == 0.0 {
            return [0.0, 0.0];
        }
        let a = self.inner.flux(x, v);
        let d = self.inner.dv(x, v);
        let dd = self.inner.dvv(x, v);
        [
            dd[0] * c + 2.0 * d[0] * c1 + a[0] * c2,
            dd[1] * c + 2.0 * d[1] * c1 + a[1] * c2,
        ]
    }

    fn div_x(&self, x: [f64; 2], v: f64) -> f64 {
        self.chi(v).0 * self.inner.div_x(x, v)
    }

    fn exact_dvv(&self) -> bool {
        self.inner.exact_dvv()
    }

    fn mean_phi1(&self) -> Option<f64> {
        None
    }
}
