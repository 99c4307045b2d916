//! Tabulated Kirchhoff transform and its inverse.
//!
//! The potential `u(psi) = int_0^psi K(S(phi)) dphi` flattens out quickly for
//! dry heads (`K` of the fracture material drops below `1e-20` around
//! `psi = -40`), so a plain `f64` anchored at `u(0) = 0` cannot tell those heads
//! apart. Potentials are therefore carried as an unevaluated sum of two
//! doubles ([`Potential`]), which keeps the transform strictly invertible over
//! the whole table.

use serde::{Deserialize, Serialize};

use super::{RetentionLaw, QUADRATURE_TOL};
use crate::error::{Error, Result};
use crate::quadrature;

/// Kirchhoff potential stored as a normalised double-double `hi + lo`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Potential {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Potential {
    pub const ZERO: Potential = Potential { hi: 0.0, lo: 0.0 };

    fn normalized(hi: f64, lo: f64) -> Self {
        let (hi, lo) = fast_two_sum(hi, lo);
        Self { hi, lo }
    }

    /// Nearest `f64` to the potential.
    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add_f64(self, b: f64) -> Self {
        let (s, e) = two_sum(self.hi, b);
        Self::normalized(s, e + self.lo)
    }

    /// `self - other`, rounded once to `f64`.
    pub fn diff(self, other: Potential) -> f64 {
        let (s, e) = two_sum(self.hi, -other.hi);
        s + (e + (self.lo - other.lo))
    }
}

impl From<f64> for Potential {
    fn from(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }
}

/// Range and resolution of the Kirchhoff table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub psi_min: f64,
    pub psi_max: f64,
    pub nodes: usize,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            psi_min: -50.0,
            psi_max: 10.0,
            nodes: 4096,
        }
    }
}

/// Monotone table of `(psi_i, u_i)` pairs; `psi = 0` is always a node.
#[derive(Debug, Clone)]
pub struct KirchhoffTable {
    spec: TableSpec,
    psi: Vec<f64>,
    u: Vec<Potential>,
    interval_tol: f64,
}

impl KirchhoffTable {
    pub fn build(law: &RetentionLaw, spec: TableSpec) -> Result<Self> {
        if !(spec.psi_min < 0.0 && spec.psi_max >= 0.0) || spec.nodes < 2 {
            return Err(Error::InvalidParameter(format!(
                "Kirchhoff table needs psi_min < 0 <= psi_max and at least 2 nodes, got [{}, {}] with {}",
                spec.psi_min, spec.psi_max, spec.nodes
            )));
        }
        let h = (spec.psi_max - spec.psi_min) / (spec.nodes - 1) as f64;
        let mut psi: Vec<f64> = (0..spec.nodes).map(|i| spec.psi_min + h * i as f64).collect();
        *psi.last_mut().unwrap() = spec.psi_max;
        let zero = psi.partition_point(|&p| p < 0.0);
        if psi.get(zero) != Some(&0.0) {
            psi.insert(zero, 0.0);
        }
        let interval_tol = QUADRATURE_TOL / psi.len() as f64;
        let k = |p: f64| law.conductivity(p);

        let mut u = vec![Potential::ZERO; psi.len()];
        for i in zero + 1..psi.len() {
            let piece = quadrature::integrate(k, psi[i - 1], psi[i], interval_tol);
            u[i] = u[i - 1].add_f64(piece);
        }
        for i in (0..zero).rev() {
            let piece = quadrature::integrate(k, psi[i], psi[i + 1], interval_tol);
            u[i] = u[i + 1].add_f64(-piece);
        }
        for w in u.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidParameter(
                    "Kirchhoff table is not strictly increasing; conductivity vanishes inside the range".into(),
                ));
            }
        }
        Ok(Self {
            spec,
            psi,
            u,
            interval_tol,
        })
    }

    pub fn spec(&self) -> TableSpec {
        self.spec
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, Potential)> + '_ {
        self.psi.iter().copied().zip(self.u.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn check_range(&self, psi: f64) -> Result<()> {
        if psi >= self.spec.psi_min && psi <= self.spec.psi_max {
            Ok(())
        } else {
            Err(Error::Range {
                value: psi,
                min: self.spec.psi_min,
                max: self.spec.psi_max,
            })
        }
    }

    /// Index `i` with `psi[i] <= p <= psi[i + 1]`.
    fn interval(&self, p: f64) -> usize {
        self.psi.partition_point(|&x| x <= p).saturating_sub(1).min(self.psi.len() - 2)
    }

    pub(super) fn forward(&self, law: &RetentionLaw, p: f64) -> Result<Potential> {
        self.check_range(p)?;
        let i = self.interval(p);
        let local = quadrature::integrate(|x| law.conductivity(x), self.psi[i], p, self.interval_tol);
        Ok(self.u[i].add_f64(local))
    }

    pub(super) fn inverse(&self, law: &RetentionLaw, u: Potential) -> Result<f64> {
        let (first, last) = (self.u[0], self.u[self.u.len() - 1]);
        if u < first || u > last {
            return Err(Error::Range {
                value: u.value(),
                min: first.value(),
                max: last.value(),
            });
        }
        let i = self.u.partition_point(|&x| x <= u).saturating_sub(1);
        if i + 1 >= self.psi.len() {
            return Ok(self.psi[self.psi.len() - 1]);
        }
        let (a, b) = (self.psi[i], self.psi[i + 1]);
        let target = u.diff(self.u[i]);
        if target <= 0.0 {
            return Ok(a);
        }
        let full = self.u[i + 1].diff(self.u[i]);
        let g = |x: f64| quadrature::integrate(|s| law.conductivity(s), a, x, self.interval_tol) - target;

        // safeguarded Newton on the local integral, derivative K(x)
        let (mut lo, mut hi) = (a, b);
        let mut x = a + (b - a) * (target / full).clamp(0.0, 1.0);
        for _ in 0..200 {
            let gx = g(x);
            if gx == 0.0 {
                return Ok(x);
            }
            if gx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let slope = law.conductivity(x);
            let step = if slope > 0.0 { gx / slope } else { f64::INFINITY };
            let newton = x - step;
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - x).abs() <= 1e-14 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{ConstitutiveModel, VanGenuchtenParams};

    #[test]
    fn potential_arithmetic_keeps_low_order_bits() {
        let base = Potential::from(-0.75);
        let tiny = 3.0e-25;
        let p = base.add_f64(tiny);
        assert!(p > base);
        assert!((p.diff(base) - tiny).abs() < 1e-40);
        assert_eq!(p.value(), -0.75);
    }

    #[test]
    fn zero_is_a_node_with_zero_potential() {
        let m = ConstitutiveModel::van_genuchten(VanGenuchtenParams::silt_loam()).unwrap();
        assert!(m.table().nodes().any(|(p, u)| p == 0.0 && u == Potential::ZERO));
        assert_eq!(m.kirchhoff(0.0).unwrap(), Potential::ZERO);
        assert_eq!(m.kirchhoff_inv(0.0).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_is_reported() {
        let m = ConstitutiveModel::van_genuchten(VanGenuchtenParams::silt_loam()).unwrap();
        assert!(matches!(m.kirchhoff(-60.0), Err(Error::Range { .. })));
        assert!(matches!(m.kirchhoff(11.0), Err(Error::Range { .. })));
        assert!(matches!(m.kirchhoff_inv(100.0), Err(Error::Range { .. })));
        assert!(matches!(m.kirchhoff_inv(-100.0), Err(Error::Range { .. })));
    }

    #[test]
    fn bad_table_spec_rejected() {
        let law = RetentionLaw::VanGenuchten(VanGenuchtenParams::silt_loam());
        let spec = TableSpec {
            psi_min: 1.0,
            psi_max: 5.0,
            nodes: 10,
        };
        assert!(KirchhoffTable::build(&law, spec).is_err());
    }
}
