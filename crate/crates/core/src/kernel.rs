//! Compactly supported symmetric kernels and the moment constants used by
//! the bias, variance and extreme-value calculations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A symmetric probability density with compact support `[-c0, c0]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `0.75 (1 - t^2)_+`
    #[default]
    Epanechnikov,
    /// `0.5` on `[-1, 1]`
    Uniform,
    /// `35/32 (1 - t^2)^3_+`
    Triweight,
    /// Piecewise-linear profile on `[0, c0]`, mirrored to negative `t`.
    Tabulated(TabulatedKernel),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMoments {
    /// `∫ t² K(t) dt`
    pub mu2: f64,
    /// `∫ K²(t) dt`
    pub nu0: f64,
    /// `∫ K'(t)² dt` over the open support.
    pub dk2: f64,
    /// `K(c0)`, the value at the support boundary.
    pub k_at_c0: f64,
}

impl Kernel {
    pub fn support(&self) -> f64 {
        match self {
            Kernel::Epanechnikov | Kernel::Uniform | Kernel::Triweight => 1.0,
            Kernel::Tabulated(t) => t.c0,
        }
    }

    /// `K(t)`; zero outside `[-c0, c0]`.
    pub fn eval(&self, t: f64) -> f64 {
        let a = t.abs();
        if a > self.support() {
            return 0.0;
        }
        match self {
            Kernel::Epanechnikov => 0.75 * (1.0 - a * a),
            Kernel::Uniform => 0.5,
            Kernel::Triweight => {
                let v = 1.0 - a * a;
                35.0 / 32.0 * v * v * v
            }
            Kernel::Tabulated(tab) => tab.profile(a),
        }
    }

    /// `K_h(d) = K(d / h) / h`.
    #[inline]
    pub fn scaled(&self, d: f64, h: f64) -> f64 {
        self.eval(d / h) / h
    }

    /// `K'(t)` on the interior of the support (one-sided at breakpoints).
    pub fn derivative(&self, t: f64) -> f64 {
        let a = t.abs();
        if a >= self.support() {
            return 0.0;
        }
        let sign = if t < 0.0 { -1.0 } else { 1.0 };
        let d = match self {
            Kernel::Epanechnikov => -1.5 * a,
            Kernel::Uniform => 0.0,
            Kernel::Triweight => {
                let v = 1.0 - a * a;
                -105.0 / 16.0 * a * v * v
            }
            Kernel::Tabulated(tab) => tab.slope(a),
        };
        sign * d
    }

    /// Moment constants: closed forms for built-in kernels, adaptive
    /// quadrature for tabulated ones.
    pub fn moments(&self) -> Result<KernelMoments> {
        match self {
            Kernel::Epanechnikov => Ok(KernelMoments {
                mu2: 0.2,
                nu0: 0.6,
                dk2: 1.5,
                k_at_c0: 0.0,
            }),
            Kernel::Uniform => Ok(KernelMoments {
                mu2: 1.0 / 3.0,
                nu0: 0.5,
                dk2: 0.0,
                k_at_c0: 0.5,
            }),
            Kernel::Triweight => Ok(KernelMoments {
                mu2: 1.0 / 9.0,
                nu0: 350.0 / 429.0,
                dk2: 35.0 / 11.0,
                k_at_c0: 0.0,
            }),
            Kernel::Tabulated(tab) => tab.moments(),
        }
    }

    /// Numerical moments by quadrature, for any kernel. Used to cross-check
    /// the closed forms.
    pub fn moments_by_quadrature(&self) -> Result<KernelMoments> {
        let c0 = self.support();
        let breaks = match self {
            Kernel::Tabulated(tab) => tab.breakpoints(),
            _ => vec![0.0, c0],
        };
        // Even integrands: twice the integral over [0, c0].
        let integrate = |f: &dyn Fn(f64) -> f64| -> Result<f64> {
            let mut total = 0.0;
            for w in breaks.windows(2) {
                total += adaptive_simpson(f, w[0], w[1], 1e-13)?;
            }
            Ok(2.0 * total)
        };
        let mu2 = integrate(&|t| t * t * self.eval(t))?;
        let nu0 = integrate(&|t| self.eval(t).powi(2))?;
        let dk2 = integrate(&|t| {
            // Stay off the breakpoints where the one-sided slope is ambiguous.
            self.derivative(t).powi(2)
        })?;
        Ok(KernelMoments {
            mu2,
            nu0,
            dk2,
            k_at_c0: self.eval(c0),
        })
    }

    /// `∫ K(t) dt` by quadrature.
    pub fn mass(&self) -> Result<f64> {
        let breaks = match self {
            Kernel::Tabulated(tab) => tab.breakpoints(),
            _ => vec![0.0, self.support()],
        };
        let mut total = 0.0;
        for w in breaks.windows(2) {
            total += adaptive_simpson(&|t| self.eval(t), w[0], w[1], 1e-13)?;
        }
        Ok(2.0 * total)
    }
}

/// A user-supplied kernel: values of `K` on `n + 1` equally spaced nodes of
/// `[0, c0]`, linearly interpolated and mirrored. Values are rescaled so the
/// kernel integrates to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabulatedSpec", into = "TabulatedSpec")]
pub struct TabulatedKernel {
    c0: f64,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabulatedSpec {
    c0: f64,
    values: Vec<f64>,
}

impl TryFrom<TabulatedSpec> for TabulatedKernel {
    type Error = Error;
    fn try_from(spec: TabulatedSpec) -> Result<Self> {
        TabulatedKernel::new(spec.c0, spec.values)
    }
}

impl From<TabulatedKernel> for TabulatedSpec {
    fn from(k: TabulatedKernel) -> Self {
        TabulatedSpec {
            c0: k.c0,
            values: k.values,
        }
    }
}

impl TabulatedKernel {
    pub fn new(c0: f64, values: Vec<f64>) -> Result<Self> {
        if !(c0.is_finite() && c0 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tabulated kernel support must be positive, got {c0}"
            )));
        }
        if values.len() < 2 {
            return Err(Error::InvalidConfig(
                "tabulated kernel needs at least two nodes".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig(
                "tabulated kernel values must be finite and non-negative".into(),
            ));
        }
        // Trapezoid is exact for a piecewise-linear profile.
        let step = c0 / (values.len() - 1) as f64;
        let half: f64 = values
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]) * step)
            .sum();
        let mass = 2.0 * half;
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::QuadratureFailure(format!(
                "tabulated kernel has mass {mass}"
            )));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(TabulatedKernel { c0, values })
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn step(&self) -> f64 {
        self.c0 / (self.values.len() - 1) as f64
    }

    fn breakpoints(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.values.len()).map(|i| i as f64 * step).collect()
    }

    fn locate(&self, a: f64) -> (usize, f64) {
        let step = self.step();
        let last = self.values.len() - 2;
        let i = ((a / step).floor() as usize).min(last);
        (i, (a - i as f64 * step) / step)
    }

    fn profile(&self, a: f64) -> f64 {
        let (i, frac) = self.locate(a);
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    fn slope(&self, a: f64) -> f64 {
        let (i, _) = self.locate(a);
        (self.values[i + 1] - self.values[i]) / self.step()
    }

    fn moments(&self) -> Result<KernelMoments> {
        let m = Kernel::Tabulated(self.clone()).moments_by_quadrature()?;
        if !(m.mu2 > 0.0 && m.nu0 > 0.0 && m.dk2.is_finite()) {
            return Err(Error::QuadratureFailure(format!(
                "degenerate tabulated kernel moments {m:?}"
            )));
        }
        Ok(m)
    }
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

/// Adaptive Simpson quadrature on `[a, b]` with absolute tolerance `tol`.
pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    // Evaluate strictly inside the interval so one-sided kinks at the
    // endpoints do not leak into the estimate.
    let eps = (b - a) * 1e-15;
    let (a, b) = (a + eps, b - eps);
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::QuadratureFailure(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    if delta.abs() <= 15.0 * tol || (b - a) < 1e-12 {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::QuadratureFailure(format!(
            "no convergence on [{a}, {b}]"
        )));
    }
    Ok(
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)?
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)?,
    )
}
