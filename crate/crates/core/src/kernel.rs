//! Compactly supported one-dimensional smoothing kernels.
//!
//! Every kernel here is symmetric, supported on `[-1, 1]`, integrates to one
//! and has zero first moment. All of them vanish at `|x| = 1`, including the
//! box kernel, so "nonzero" is equivalent to `|x| < 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IsdeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `3/4 (1 - x^2)` on `(-1, 1)`.
    #[default]
    Epanechnikov,
    /// `1 - |x|` on `(-1, 1)`.
    Triangular,
    /// `1/2` on `(-1, 1)`.
    Box,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [
        KernelKind::Epanechnikov,
        KernelKind::Triangular,
        KernelKind::Box,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Epanechnikov => "epanechnikov",
            KernelKind::Triangular => "triangular",
            KernelKind::Box => "box",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = IsdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(KernelKind::Epanechnikov),
            "triangular" => Ok(KernelKind::Triangular),
            "box" => Ok(KernelKind::Box),
            other => Err(IsdeError::param(format!(
                "unknown kernel '{other}' (expected epanechnikov, triangular or box)"
            ))),
        }
    }
}

/// A kernel function. Cheap to copy; all methods are pure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Kernel {
    kind: KernelKind,
}

impl Kernel {
    pub const EPANECHNIKOV: Kernel = Kernel::new(KernelKind::Epanechnikov);

    pub const fn new(kind: KernelKind) -> Self {
        Kernel { kind }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// `‖K‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        match self.kind {
            KernelKind::Epanechnikov => 0.75,
            KernelKind::Triangular => 1.0,
            KernelKind::Box => 0.5,
        }
    }

    /// `‖K'‖_∞`, taken over the points where the derivative exists.
    pub fn derivative_sup_norm(&self) -> f64 {
        match self.kind {
            KernelKind::Epanechnikov => 1.5,
            KernelKind::Triangular => 1.0,
            KernelKind::Box => 0.0,
        }
    }

    /// `K(x)`. NaN input propagates to a NaN output; use
    /// [`Kernel::checked_evaluate`] to turn it into an error.
    #[inline]
    pub fn evaluate(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let a = x.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self.kind {
            KernelKind::Epanechnikov => 0.75 * (1.0 - x * x),
            KernelKind::Triangular => 1.0 - a,
            KernelKind::Box => 0.5,
        }
    }

    pub fn checked_evaluate(&self, x: f64) -> Result<f64> {
        if x.is_finite() {
            Ok(self.evaluate(x))
        } else {
            Err(IsdeError::param(format!("kernel argument must be finite, got {x}")))
        }
    }

    /// Tensor-product kernel `∏_j K(u_j)`.
    pub fn product(&self, u: &[f64]) -> Result<f64> {
        if u.is_empty() {
            return Err(IsdeError::param("product kernel needs at least one coordinate"));
        }
        Ok(u.iter().map(|&v| self.evaluate(v)).product())
    }

    /// Points in `(-1, 1)` where the kernel is not smooth. Used by the
    /// piecewise quadrature in tests and diagnostics.
    pub fn interior_breakpoints(&self) -> &'static [f64] {
        match self.kind {
            KernelKind::Triangular => &[0.0],
            _ => &[],
        }
    }
}

impl From<KernelKind> for Kernel {
    fn from(kind: KernelKind) -> Self {
        Kernel::new(kind)
    }
}

impl FromStr for Kernel {
    type Err = IsdeError;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<KernelKind>().map(Kernel::new)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;

    #[test]
    fn epanechnikov_values() {
        let k = Kernel::EPANECHNIKOV;
        assert_eq!(k.evaluate(0.0), 0.75);
        assert_eq!(k.evaluate(1.5), 0.0);
        assert_eq!(k.evaluate(0.5), 0.5625);
        assert_eq!(k.evaluate(1.0), 0.0);
        assert_eq!(k.evaluate(-1.0), 0.0);
    }

    #[test]
    fn box_vanishes_on_support_edge() {
        let k = Kernel::new(KernelKind::Box);
        assert_eq!(k.evaluate(0.999), 0.5);
        assert_eq!(k.evaluate(1.0), 0.0);
        assert_eq!(k.evaluate(-1.0), 0.0);
    }

    #[test]
    fn product_kernel_examples() {
        let k = Kernel::EPANECHNIKOV;
        assert_eq!(k.product(&[0.0, 0.0]).unwrap(), 0.5625);
        assert_eq!(k.product(&[0.5, 0.0]).unwrap(), 0.421875);
        for kind in KernelKind::ALL {
            assert_eq!(Kernel::new(kind).product(&[0.1, 2.0]).unwrap(), 0.0);
        }
        assert!(k.product(&[]).is_err());
    }

    #[test]
    fn non_finite_arguments() {
        let k = Kernel::EPANECHNIKOV;
        assert!(k.evaluate(f64::NAN).is_nan());
        assert!(k.checked_evaluate(f64::NAN).is_err());
        assert!(k.checked_evaluate(f64::INFINITY).is_err());
        assert_eq!(k.evaluate(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn symmetry_on_grid() {
        for kind in KernelKind::ALL {
            let k = Kernel::new(kind);
            for i in 0..=1000 {
                let x = -1.5 + 3.0 * i as f64 / 1000.0;
                assert_eq!(k.evaluate(x), k.evaluate(-x), "{kind} at {x}");
            }
        }
    }

    #[test]
    fn mass_and_first_moment() {
        let gl = GaussLegendre::new(64);
        for kind in KernelKind::ALL {
            let k = Kernel::new(kind);
            // integrate on the smooth pieces [-1, 0] and [0, 1]
            let mass = gl.integrate(-1.0, 0.0, |x| k.evaluate(x))
                + gl.integrate(0.0, 1.0, |x| k.evaluate(x));
            let first = gl.integrate(-1.0, 0.0, |x| x * k.evaluate(x))
                + gl.integrate(0.0, 1.0, |x| x * k.evaluate(x));
            assert!((mass - 1.0).abs() < 1e-10, "{kind}: mass {mass}");
            assert!(first.abs() < 1e-10, "{kind}: first moment {first}");
        }
    }

    #[test]
    fn sup_norms_match_grid_maxima() {
        for kind in KernelKind::ALL {
            let k = Kernel::new(kind);
            let grid_max = (0..=2000)
                .map(|i| k.evaluate(-1.0 + i as f64 / 1000.0))
                .fold(0.0, f64::max);
            assert!((grid_max - k.sup_norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in KernelKind::ALL {
            assert_eq!(kind.name().parse::<KernelKind>().unwrap(), kind);
        }
        assert!("gaussian".parse::<KernelKind>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn product_is_multiplicative(
                a in proptest::collection::vec(-1.5f64..1.5, 1..4),
                b in proptest::collection::vec(-1.5f64..1.5, 1..4),
            ) {
                for kind in KernelKind::ALL {
                    let k = Kernel::new(kind);
                    let mut ab = a.clone();
                    ab.extend_from_slice(&b);
                    let lhs = k.product(&ab).unwrap();
                    let rhs = k.product(&a).unwrap() * k.product(&b).unwrap();
                    prop_assert!((lhs - rhs).abs() <= 1e-15 * lhs.abs().max(1.0));
                }
            }
        }
    }
}
