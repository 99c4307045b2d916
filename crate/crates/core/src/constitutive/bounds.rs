use serde::Serialize;

use super::ConstitutiveModel;
use crate::error::{Error, Result};

/// Number of scan points used by [`bounds_report`].
pub const SCAN_POINTS: usize = 20_001;

/// Bounds of `S'` and `K` over a head interval, plus the discrete
/// `L^inf` constant `M_psi = max(M_rho, M_f / m_S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    pub m_s: f64,
    pub big_m_s: f64,
    pub m_k: f64,
    pub big_m_k: f64,
    pub psi_interval: (f64, f64),
    /// Bound on the source magnitude used for `m_psi`.
    pub m_f: f64,
    /// Bound on the initial head magnitude used for `m_psi`.
    pub m_rho: f64,
    pub m_psi: f64,
    /// `m_s == 0`: the storage term degenerates somewhere on the interval.
    pub degenerate: bool,
}

impl BoundsReport {
    /// `M_psi (t + 1)`, the a-priori bound on `|psi|` at time `t`.
    pub fn linf_bound(&self, t: f64) -> f64 {
        self.m_psi * (t + 1.0)
    }

    /// Lipschitz constant of `b = S o K^-1` on the interval.
    pub fn b_lipschitz(&self) -> f64 {
        self.big_m_s / self.m_k
    }
}

/// Scans `S'` and `K` on a uniform grid over `interval`.
pub fn bounds_report(model: &ConstitutiveModel, interval: (f64, f64), m_f: f64, m_rho: f64) -> Result<BoundsReport> {
    let (a, b) = interval;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidParameter(format!("degenerate head interval [{a}, {b}]")));
    }
    let mut m_s = f64::INFINITY;
    let mut big_m_s = 0.0f64;
    let mut m_k = f64::INFINITY;
    let mut big_m_k = 0.0f64;
    let h = (b - a) / (SCAN_POINTS - 1) as f64;
    let mut scan = |psi: f64| {
        let ds = model.d_saturation(psi);
        let k = model.conductivity(psi);
        m_s = m_s.min(ds);
        big_m_s = big_m_s.max(ds);
        m_k = m_k.min(k);
        big_m_k = big_m_k.max(k);
    };
    for i in 0..SCAN_POINTS {
        scan(if i + 1 == SCAN_POINTS { b } else { a + h * i as f64 });
    }
    // the saturated branch starts exactly at 0; make sure it is seen
    if a < 0.0 && b >= 0.0 {
        scan(0.0);
    }
    let degenerate = m_s <= 0.0;
    let m_s = m_s.max(0.0);
    let m_psi = if degenerate { f64::INFINITY } else { m_rho.max(m_f / m_s) };
    Ok(BoundsReport {
        m_s,
        big_m_s,
        m_k,
        big_m_k,
        psi_interval: interval,
        m_f,
        m_rho,
        m_psi,
        degenerate,
    })
}
