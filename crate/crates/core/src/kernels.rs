//! Closed-form kernels and the stable coordinate-change identities.
//!
//! The stable kernels on `[0, ∞)²` are images of spline kernels on `[0, 1]²`
//! under `τ = e^{-αt}` (SS) or `τ = e^{-2βt}` (TC, DC):
//!
//! * `k_SS(t, s; α)    = w₂(e^{-αt}, e^{-αs})`
//! * `k_TC(t, s; β)    = w₁(e^{-2βt}, e^{-2βs})`
//! * `k_DC(t, s; α, β) = w₁ᴳˢ(e^{-2βt}, e^{-2βs}; (α-β)/(2β))`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family together with its hyperparameters.
///
/// Construct values through [`KernelSpec`], which validates them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelKind {
    /// Second-order stable spline, decay rate `alpha`.
    Ss { alpha: f64 },
    /// Tuned correlated (first-order stable spline), decay rate `beta`.
    Tc { beta: f64 },
    /// Diagonal correlated: `e^{-α(t+s)} e^{-β|t-s|}`.
    Dc { alpha: f64, beta: f64 },
    /// `min{τ, ν}` on `[0, 1]²`.
    Spline1,
    /// Second-order spline kernel on `[0, 1]²`.
    Spline2,
    /// Generalized first-order spline `τ^ρ ν^ρ min{τ, ν}` on `[0, 1]²`.
    GenSpline1 { rho: f64 },
}

/// Domain on which a kernel is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelDomain {
    Unit,
    HalfLine,
}

impl KernelDomain {
    fn describe(self) -> &'static str {
        match self {
            KernelDomain::Unit => "[0, 1]",
            KernelDomain::HalfLine => "[0, ∞)",
        }
    }

    pub fn contains(self, x: f64) -> bool {
        match self {
            KernelDomain::Unit => (0.0..=1.0).contains(&x),
            KernelDomain::HalfLine => x >= 0.0 && x.is_finite(),
        }
    }
}

/// A validated kernel. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelKind", into = "KernelKind")]
pub struct KernelSpec {
    kind: KernelKind,
}

impl TryFrom<KernelKind> for KernelSpec {
    type Error = Error;

    fn try_from(kind: KernelKind) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidHyperparameter(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        match kind {
            KernelKind::Ss { alpha } => positive("alpha", alpha)?,
            KernelKind::Tc { beta } => positive("beta", beta)?,
            KernelKind::Dc { alpha, beta } => {
                positive("alpha", alpha)?;
                positive("beta", beta)?;
            }
            KernelKind::GenSpline1 { rho } => {
                if !(rho > -0.5 && rho.is_finite()) {
                    return Err(Error::InvalidHyperparameter(format!(
                        "rho must exceed -0.5, got {rho}"
                    )));
                }
            }
            KernelKind::Spline1 | KernelKind::Spline2 => {}
        }
        Ok(Self { kind })
    }
}

impl From<KernelSpec> for KernelKind {
    fn from(spec: KernelSpec) -> Self {
        spec.kind
    }
}

impl KernelSpec {
    pub fn ss(alpha: f64) -> Result<Self> {
        KernelKind::Ss { alpha }.try_into()
    }

    pub fn tc(beta: f64) -> Result<Self> {
        KernelKind::Tc { beta }.try_into()
    }

    pub fn dc(alpha: f64, beta: f64) -> Result<Self> {
        KernelKind::Dc { alpha, beta }.try_into()
    }

    pub fn spline1() -> Self {
        Self {
            kind: KernelKind::Spline1,
        }
    }

    pub fn spline2() -> Self {
        Self {
            kind: KernelKind::Spline2,
        }
    }

    pub fn genspline1(rho: f64) -> Result<Self> {
        KernelKind::GenSpline1 { rho }.try_into()
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            KernelKind::Ss { .. } => "ss",
            KernelKind::Tc { .. } => "tc",
            KernelKind::Dc { .. } => "dc",
            KernelKind::Spline1 => "spline1",
            KernelKind::Spline2 => "spline2",
            KernelKind::GenSpline1 { .. } => "genspline1",
        }
    }

    pub fn domain(&self) -> KernelDomain {
        match self.kind {
            KernelKind::Ss { .. } | KernelKind::Tc { .. } | KernelKind::Dc { .. } => {
                KernelDomain::HalfLine
            }
            _ => KernelDomain::Unit,
        }
    }

    /// `(α, β)` for the exponentially decaying first-order kernels; TC is
    /// reported as `α = β`.
    pub fn decay_rates(&self) -> Option<(f64, f64)> {
        match self.kind {
            KernelKind::Tc { beta } => Some((beta, beta)),
            KernelKind::Dc { alpha, beta } => Some((alpha, beta)),
            _ => None,
        }
    }

    /// The exponent `ρ` of the mother kernel: `(α-β)/(2β)` for DC, 0 for TC
    /// and `Spline1`, `ρ` for the generalized spline.
    pub fn rho(&self) -> Option<f64> {
        match self.kind {
            KernelKind::Tc { .. } | KernelKind::Spline1 => Some(0.0),
            KernelKind::Dc { alpha, beta } => Some((alpha - beta) / (2.0 * beta)),
            KernelKind::GenSpline1 { rho } => Some(rho),
            _ => None,
        }
    }

    pub fn check_point(&self, x: f64) -> Result<()> {
        let domain = self.domain();
        if domain.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: x,
                domain: domain.describe(),
            })
        }
    }

    /// `k(t, s)` after checking both points against the kernel domain.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        self.check_point(t)?;
        self.check_point(s)?;
        Ok(self.value(t, s))
    }

    /// `k(t, s)` without domain checks. Symmetric bit-for-bit.
    #[inline]
    pub fn value(&self, t: f64, s: f64) -> f64 {
        let hi = t.max(s);
        let lo = t.min(s);
        match self.kind {
            KernelKind::Ss { alpha } => {
                (-alpha * (t + s)).exp() * (-alpha * hi).exp() / 2.0 - (-3.0 * alpha * hi).exp() / 6.0
            }
            KernelKind::Tc { beta } => dc_value(beta, beta, t + s, hi - lo),
            KernelKind::Dc { alpha, beta } => dc_value(alpha, beta, t + s, hi - lo),
            KernelKind::Spline1 => lo,
            KernelKind::Spline2 => spline2(t, s),
            KernelKind::GenSpline1 { rho } => genspline1(t, s, rho),
        }
    }
}

#[inline]
fn dc_value(alpha: f64, beta: f64, sum: f64, gap: f64) -> f64 {
    (-alpha * sum - beta * gap).exp()
}

/// First-order spline kernel `min{τ, ν}`.
#[inline]
pub fn spline1(tau: f64, nu: f64) -> f64 {
    tau.min(nu)
}

/// Second-order spline kernel `τν·min/2 - min³/6`.
#[inline]
pub fn spline2(tau: f64, nu: f64) -> f64 {
    let lo = tau.min(nu);
    0.5 * (tau * nu) * lo - lo * lo * lo / 6.0
}

/// Generalized first-order spline kernel `τ^ρ ν^ρ min{τ, ν}`.
#[inline]
pub fn genspline1(tau: f64, nu: f64, rho: f64) -> f64 {
    let lo = tau.min(nu);
    if lo == 0.0 {
        // lo^{ρ+1} → 0 for ρ > -1, while 0^ρ alone may be infinite.
        return 0.0;
    }
    (tau.powf(rho) * nu.powf(rho)) * lo
}

/// Free-function form of [`KernelSpec::eval`].
pub fn eval_kernel(spec: &KernelSpec, t: f64, s: f64) -> Result<f64> {
    spec.eval(t, s)
}

/// Maximum absolute deviation between a stable kernel and its spline image
/// over every pair of grid points.
pub fn verify_stable_spline_identity(spec: &KernelSpec, grid: &[f64]) -> Result<f64> {
    for &t in grid {
        spec.check_point(t)?;
    }
    let mother: Box<dyn Fn(f64, f64) -> f64> = match spec.kind() {
        KernelKind::Ss { alpha } => {
            Box::new(move |t: f64, s: f64| spline2((-alpha * t).exp(), (-alpha * s).exp()))
        }
        KernelKind::Tc { beta } => Box::new(move |t: f64, s: f64| {
            spline1((-2.0 * beta * t).exp(), (-2.0 * beta * s).exp())
        }),
        KernelKind::Dc { beta, .. } => {
            let rho = spec.rho().expect("DC has rho");
            Box::new(move |t: f64, s: f64| {
                genspline1((-2.0 * beta * t).exp(), (-2.0 * beta * s).exp(), rho)
            })
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "coordinate-change identity is defined for ss, tc and dc kernels, not {}",
                spec.name()
            )))
        }
    };
    let mut worst = 0.0_f64;
    for &t in grid {
        for &s in grid {
            worst = worst.max((spec.value(t, s) - mother(t, s)).abs());
        }
    }
    Ok(worst)
}
