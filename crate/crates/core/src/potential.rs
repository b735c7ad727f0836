//! Pair interactions `Φ` acting on the rescaled distance `r/σ`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied pair `(Φ, Φ')`. `Φ'` is trusted to be locally Lipschitz
/// on `(0, ∞)`.
#[derive(Clone)]
pub struct CustomPotential {
    name: String,
    phi: ScalarFn,
    dphi: ScalarFn,
}

impl CustomPotential {
    pub fn new(
        name: impl Into<String>,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            phi: Arc::new(phi),
            dphi: Arc::new(dphi),
        }
    }
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub enum PotentialSpec {
    /// `-Φ'(r) = r^{-p}`, `Φ(r) = r^{1-p}/(p-1)`, `p > 1`.
    PowerLaw { p: f64 },
    /// `Φ ≡ 0`; particles fly freely.
    Free,
    Custom(CustomPotential),
}

impl PotentialSpec {
    pub fn power_law(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::arg(format!("power-law exponent must exceed 1, got {p}")));
        }
        Ok(PotentialSpec::PowerLaw { p })
    }

    pub fn custom(
        name: impl Into<String>,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        PotentialSpec::Custom(CustomPotential::new(name, phi, dphi))
    }

    pub fn phi(&self, r: f64) -> f64 {
        match self {
            PotentialSpec::PowerLaw { p } => powm(r, p - 1.0) / (p - 1.0),
            PotentialSpec::Free => 0.0,
            PotentialSpec::Custom(c) => (c.phi)(r),
        }
    }

    pub fn dphi(&self, r: f64) -> f64 {
        match self {
            PotentialSpec::PowerLaw { p } => -powm(r, *p),
            PotentialSpec::Free => 0.0,
            PotentialSpec::Custom(c) => (c.dphi)(r),
        }
    }

    /// Magnitude of the rescaled pair force, `-(1/σ) Φ'(r/σ)`.
    #[inline]
    pub fn scaled_repulsion(&self, r: f64, sigma: f64) -> f64 {
        match self {
            PotentialSpec::PowerLaw { p } => powm(r / sigma, *p) / sigma,
            PotentialSpec::Free => 0.0,
            PotentialSpec::Custom(c) => -(c.dphi)(r / sigma) / sigma,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, PotentialSpec::Free)
    }

    /// Short text form, e.g. `power-law 2` or `free`. Custom potentials
    /// cannot be reconstructed from it.
    pub fn descriptor(&self) -> String {
        match self {
            PotentialSpec::PowerLaw { p } => format!("power-law {p}"),
            PotentialSpec::Free => "free".to_string(),
            PotentialSpec::Custom(c) => format!("custom {}", c.name),
        }
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some("free"), None, None) => Ok(PotentialSpec::Free),
            (Some("power-law"), Some(p), None) => {
                let p: f64 = p
                    .parse()
                    .map_err(|_| Error::arg(format!("bad power-law exponent '{p}'")))?;
                PotentialSpec::power_law(p)
            }
            _ => Err(Error::arg(format!("unrecognized potential '{s}'"))),
        }
    }

    /// Checks that `-Φ'` is nonincreasing on a logarithmic grid spanning
    /// `[r_lo, r_hi]`. Returns the first offending pair of radii on failure.
    pub fn check_repulsion_monotone(
        &self,
        r_lo: f64,
        r_hi: f64,
        samples: usize,
    ) -> std::result::Result<(), (f64, f64)> {
        if let PotentialSpec::PowerLaw { .. } | PotentialSpec::Free = self {
            return Ok(());
        }
        let samples = samples.max(2);
        let (a, b) = (r_lo.ln(), r_hi.max(r_lo).ln());
        let mut prev_r = r_lo;
        let mut prev = -self.dphi(r_lo);
        for k in 1..samples {
            let r = (a + (b - a) * k as f64 / (samples - 1) as f64).exp();
            let cur = -self.dphi(r);
            if cur > prev || !cur.is_finite() {
                return Err((prev_r, r));
            }
            prev = cur;
            prev_r = r;
        }
        Ok(())
    }
}

/// `r^{-e}`, using integer powers when the exponent is integral.
#[inline]
fn powm(r: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() <= 64.0 {
        r.powi(-(e as i32))
    } else {
        r.powf(-e)
    }
}
