//! Constitutive laws for the dimensionless Richards problem.
//!
//! A [`RetentionLaw`] maps pressure head `psi` to saturation `S(psi)` and to the
//! relative conductivity `K(S(psi))`. Saturation is normalised so that
//! `S = 1` at and above `psi = 0`; the saturated water content only enters the
//! model through the fracture/matrix porosity ratio.
//!
//! [`ConstitutiveModel`] bundles a law with a cached Kirchhoff table and exposes
//! the derived quantities (`u = K(psi)` potential, `b = S o K^-1`, storage
//! energy `W`).

mod bounds;
mod kirchhoff;

pub use bounds::{bounds_report, BoundsReport};
pub use kirchhoff::{KirchhoffTable, Potential, TableSpec};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Absolute tolerance used for every quadrature in this module.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// Van Genuchten–Mualem parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VanGenuchtenParams {
    pub alpha: f64,
    pub n: f64,
    pub theta_s: f64,
    pub theta_r: f64,
    /// Saturated hydraulic conductivity [m/s]; only its ratio between materials is used.
    pub k_s: f64,
}

impl VanGenuchtenParams {
    pub fn new(alpha: f64, n: f64, theta_s: f64, theta_r: f64, k_s: f64) -> Result<Self> {
        let p = Self {
            alpha,
            n,
            theta_s,
            theta_r,
            k_s,
        };
        p.validate()?;
        Ok(p)
    }

    /// Silt loam used for the matrix blocks in the reference injection example.
    pub fn silt_loam() -> Self {
        Self {
            alpha: 0.423,
            n: 2.06,
            theta_s: 0.396,
            theta_r: 0.131,
            k_s: 5.74e-7,
        }
    }

    /// Touchet silt loam used for the fracture in the reference injection example.
    pub fn touchet_silt_loam() -> Self {
        Self {
            alpha: 0.500,
            n: 7.09,
            theta_s: 0.469,
            theta_r: 0.190,
            k_s: 3.507e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.n > 1.0) {
            bad.push(format!("n = {} must exceed 1", self.n));
        }
        if !(self.alpha > 0.0) {
            bad.push(format!("alpha = {} must be positive", self.alpha));
        }
        if !(0.0 <= self.theta_r && self.theta_r < self.theta_s && self.theta_s <= 1.0) {
            bad.push(format!(
                "need 0 <= theta_r < theta_s <= 1, got theta_r = {}, theta_s = {}",
                self.theta_r, self.theta_s
            ));
        }
        if !(self.k_s > 0.0) {
            bad.push(format!("k_s = {} must be positive", self.k_s));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(bad.join("; ")))
        }
    }

    /// `theta_r / theta_s`, the saturation reached as `psi -> -inf`.
    pub fn residual_saturation(&self) -> f64 {
        self.theta_r / self.theta_s
    }

    fn m(&self) -> f64 {
        1.0 - 1.0 / self.n
    }

    /// `ln(1 + (-alpha psi)^n)` for `psi <= 0`, without overflow for large heads.
    fn log_one_plus_xn(&self, psi: f64) -> f64 {
        let x = -self.alpha * psi;
        if x <= 0.0 {
            0.0
        } else if x > 1.0 {
            let ln_x = x.ln();
            self.n * ln_x + (-self.n * ln_x).exp().ln_1p()
        } else {
            x.powf(self.n).ln_1p()
        }
    }

    /// Effective saturation `Theta_eff(psi)` in `[0, 1]`.
    pub fn effective_saturation(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            1.0
        } else {
            (-self.m() * self.log_one_plus_xn(psi)).exp()
        }
    }

    pub fn saturation(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            return 1.0;
        }
        let r = self.residual_saturation();
        r + (1.0 - r) * self.effective_saturation(psi)
    }

    /// `S(a) - S(b)` accurate relative to the difference itself, also when
    /// both saturations are close to each other or to 1.
    pub fn saturation_difference(&self, a: f64, b: f64) -> f64 {
        if a == b || (a >= 0.0 && b >= 0.0) {
            return 0.0;
        }
        let scale = 1.0 - self.residual_saturation();
        let m = self.m();
        if a >= 0.0 {
            return -scale * (-m * self.log_one_plus_xn(b)).exp_m1();
        }
        if b >= 0.0 {
            return scale * (-m * self.log_one_plus_xn(a)).exp_m1();
        }
        // L(a) - L(b) with L = ln(1 + x^n), x = -alpha psi, built from
        // ln(a / b) so that nothing cancels
        let log_ratio = ((a - b) / b).ln_1p();
        let x_b = -self.alpha * b;
        let share = 1.0 / (1.0 + (-self.n * x_b.ln()).exp());
        let dl = (share * (self.n * log_ratio).exp_m1()).ln_1p();
        scale * self.effective_saturation(b) * (-m * dl).exp_m1()
    }

    pub fn d_saturation(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            return 0.0;
        }
        let x = -self.alpha * psi;
        let m = self.m();
        let r = self.residual_saturation();
        let log_term = self.log_one_plus_xn(psi);
        // (1-r) m n alpha x^(n-1) (1+x^n)^(-m-1)
        let log_val = (self.n - 1.0) * x.ln() - (m + 1.0) * log_term;
        (1.0 - r) * m * self.n * self.alpha * log_val.exp()
    }

    /// Mualem conductivity written in terms of `w = Theta_eff^(1/m)`.
    fn mualem(&self, theta: f64, w: f64) -> f64 {
        if theta <= 0.0 {
            return 0.0;
        }
        let m = self.m();
        // 1 - (1 - w)^m, evaluated without cancellation for small w
        let bracket = -(m * (-w).ln_1p()).exp_m1();
        theta.sqrt() * bracket * bracket
    }

    /// Relative conductivity `K(S(psi))`.
    pub fn conductivity(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            return 1.0;
        }
        let log_term = self.log_one_plus_xn(psi);
        let theta = (-self.m() * log_term).exp();
        let w = (-log_term).exp();
        self.mualem(theta, w)
    }

    /// Relative conductivity as a function of dimensionless saturation.
    pub fn conductivity_of_saturation(&self, s: f64) -> Result<f64> {
        let r = self.residual_saturation();
        if !(s >= r - 1e-15 && s <= 1.0 + 1e-15) {
            return Err(Error::Domain {
                value: s,
                domain: format!("[{r}, 1]"),
            });
        }
        let theta = ((s - r) / (1.0 - r)).clamp(0.0, 1.0);
        if theta >= 1.0 {
            return Ok(1.0);
        }
        let w = theta.powf(1.0 / self.m());
        Ok(self.mualem(theta, w))
    }
}

/// Saturation/conductivity relation used by a material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum RetentionLaw {
    VanGenuchten(VanGenuchtenParams),
    /// Van Genuchten plus a linear storage term and a conductivity floor, so
    /// that `S' >= storage_slope > 0` and `K >= conductivity_floor > 0`.
    Regularized {
        base: VanGenuchtenParams,
        storage_slope: f64,
        conductivity_floor: f64,
    },
    /// `S(psi) = slope * psi`, `K = conductivity`.
    Linear { slope: f64, conductivity: f64 },
}

impl RetentionLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RetentionLaw::VanGenuchten(p) => p.validate(),
            RetentionLaw::Regularized {
                base,
                storage_slope,
                conductivity_floor,
            } => {
                base.validate()?;
                if !(storage_slope > 0.0) || !(conductivity_floor > 0.0 && conductivity_floor <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "regularized law needs storage_slope > 0 and conductivity_floor in (0, 1], got {storage_slope}, {conductivity_floor}"
                    )));
                }
                Ok(())
            }
            RetentionLaw::Linear { slope, conductivity } => {
                if !(slope >= 0.0) || !(conductivity > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "linear law needs slope >= 0 and conductivity > 0, got {slope}, {conductivity}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn saturation(&self, psi: f64) -> f64 {
        match *self {
            RetentionLaw::VanGenuchten(p) => p.saturation(psi),
            RetentionLaw::Regularized { base, storage_slope, .. } => base.saturation(psi) + storage_slope * psi,
            RetentionLaw::Linear { slope, .. } => slope * psi,
        }
    }

    /// `S(a) - S(b)` without cancellation between the two saturations.
    pub fn saturation_difference(&self, a: f64, b: f64) -> f64 {
        match *self {
            RetentionLaw::VanGenuchten(p) => p.saturation_difference(a, b),
            RetentionLaw::Regularized { base, storage_slope, .. } => {
                base.saturation_difference(a, b) + storage_slope * (a - b)
            }
            RetentionLaw::Linear { slope, .. } => slope * (a - b),
        }
    }

    pub fn d_saturation(&self, psi: f64) -> f64 {
        match *self {
            RetentionLaw::VanGenuchten(p) => p.d_saturation(psi),
            RetentionLaw::Regularized { base, storage_slope, .. } => base.d_saturation(psi) + storage_slope,
            RetentionLaw::Linear { slope, .. } => slope,
        }
    }

    pub fn conductivity(&self, psi: f64) -> f64 {
        match *self {
            RetentionLaw::VanGenuchten(p) => p.conductivity(psi),
            RetentionLaw::Regularized {
                base,
                conductivity_floor,
                ..
            } => conductivity_floor + (1.0 - conductivity_floor) * base.conductivity(psi),
            RetentionLaw::Linear { conductivity, .. } => conductivity,
        }
    }

    /// Van Genuchten parameters underlying the law, if any.
    pub fn van_genuchten(&self) -> Option<&VanGenuchtenParams> {
        match self {
            RetentionLaw::VanGenuchten(p) | RetentionLaw::Regularized { base: p, .. } => Some(p),
            RetentionLaw::Linear { .. } => None,
        }
    }
}

/// A retention law together with its tabulated Kirchhoff transform.
///
/// Cloning is cheap; the table is shared.
#[derive(Debug, Clone)]
pub struct ConstitutiveModel {
    law: RetentionLaw,
    table: Arc<KirchhoffTable>,
}

impl ConstitutiveModel {
    pub fn new(law: RetentionLaw, spec: TableSpec) -> Result<Self> {
        law.validate()?;
        let table = KirchhoffTable::build(&law, spec)?;
        Ok(Self {
            law,
            table: Arc::new(table),
        })
    }

    pub fn van_genuchten(params: VanGenuchtenParams) -> Result<Self> {
        Self::new(RetentionLaw::VanGenuchten(params), TableSpec::default())
    }

    pub fn law(&self) -> &RetentionLaw {
        &self.law
    }

    pub fn table(&self) -> &KirchhoffTable {
        &self.table
    }

    #[inline]
    pub fn saturation(&self, psi: f64) -> f64 {
        self.law.saturation(psi)
    }

    #[inline]
    pub fn d_saturation(&self, psi: f64) -> f64 {
        self.law.d_saturation(psi)
    }

    /// `S(a) - S(b)`, see [`RetentionLaw::saturation_difference`].
    #[inline]
    pub fn saturation_difference(&self, a: f64, b: f64) -> f64 {
        self.law.saturation_difference(a, b)
    }

    /// Relative conductivity `K(S(psi))`.
    #[inline]
    pub fn conductivity(&self, psi: f64) -> f64 {
        self.law.conductivity(psi)
    }

    /// Relative conductivity from a saturation value.
    ///
    /// Only defined for laws whose saturation is a closed-form van Genuchten
    /// curve (or constant conductivity).
    pub fn rel_conductivity(&self, s: f64) -> Result<f64> {
        match self.law {
            RetentionLaw::VanGenuchten(p) => p.conductivity_of_saturation(s),
            RetentionLaw::Linear { conductivity, .. } => Ok(conductivity),
            RetentionLaw::Regularized { .. } => Err(Error::InvalidParameter(
                "saturation-valued conductivity is not defined for the regularized law".into(),
            )),
        }
    }

    /// Kirchhoff potential `u = int_0^psi K(S(phi)) dphi`.
    pub fn kirchhoff(&self, psi: f64) -> Result<Potential> {
        self.table.forward(&self.law, psi)
    }

    /// Inverse Kirchhoff transform.
    pub fn kirchhoff_inv(&self, u: impl Into<Potential>) -> Result<f64> {
        self.table.inverse(&self.law, u.into())
    }

    /// `b(u) = S(K^-1(u))`.
    pub fn b_of_u(&self, u: impl Into<Potential>) -> Result<f64> {
        Ok(self.saturation(self.kirchhoff_inv(u)?))
    }

    /// Storage energy `W(psi) = int_0^psi S'(phi) phi dphi`.
    pub fn energy_w(&self, psi: f64) -> Result<f64> {
        self.table.check_range(psi)?;
        let law = self.law;
        Ok(quadrature::integrate(
            move |phi: f64| law.d_saturation(phi) * phi,
            0.0,
            psi,
            QUADRATURE_TOL,
        ))
    }
}
