//! Ergodic drivers. The base point is implicit: `Tⁿω` is addressed by its
//! index `n`, and shifting the driver by `ℓ` realizes `ω ↦ T^ℓ ω`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::child_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverKind {
    /// Bernoulli shift over a counter-keyed generator.
    IidShift { seed: u64 },
    /// `θₙ = frac(ω₀ + nα)`; ergodic when `α` is irrational.
    Rotation { alpha: f64, omega0: f64 },
    /// Uniform measure on a periodic orbit of i.i.d. seeds.
    Cyclic { period: u64, seed: u64 },
    Constant,
}

/// Value of the driver at one index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriverPoint {
    Seed(u64),
    Phase(f64),
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicDriver {
    kind: DriverKind,
    offset: i64,
}

impl ErgodicDriver {
    pub fn new(kind: DriverKind) -> Result<Self> {
        match &kind {
            DriverKind::Rotation { alpha, omega0 } => {
                if !alpha.is_finite() || !(0.0..1.0).contains(omega0) {
                    return Err(Error::InvalidInput(format!(
                        "rotation needs finite alpha and omega0 in [0, 1), got alpha {alpha}, omega0 {omega0}"
                    )));
                }
            }
            DriverKind::Cyclic { period, .. } if *period == 0 => {
                return Err(Error::InvalidInput("cyclic driver needs period >= 1".into()));
            }
            _ => {}
        }
        Ok(Self { kind, offset: 0 })
    }

    pub fn kind(&self) -> &DriverKind {
        &self.kind
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    /// The driver seen from `T^ℓ ω`.
    pub fn shifted(&self, l: i64) -> Self {
        Self { kind: self.kind.clone(), offset: self.offset + l }
    }

    pub fn point_at(&self, n: i64) -> DriverPoint {
        let i = n + self.offset;
        match &self.kind {
            DriverKind::IidShift { seed } => DriverPoint::Seed(child_seed(*seed, "iid-shift", i)),
            DriverKind::Rotation { alpha, omega0 } => DriverPoint::Phase((omega0 + i as f64 * alpha).rem_euclid(1.0)),
            DriverKind::Cyclic { period, seed } => {
                DriverPoint::Seed(child_seed(*seed, "cyclic", i.rem_euclid(*period as i64)))
            }
            DriverKind::Constant => DriverPoint::Fixed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_is_index_translation() {
        let d = ErgodicDriver::new(DriverKind::IidShift { seed: 3 }).unwrap();
        let s = d.shifted(5);
        for n in -4..4 {
            assert_eq!(s.point_at(n), d.point_at(n + 5));
        }
        assert_ne!(d.point_at(0), d.point_at(1));
    }

    #[test]
    fn rotation_phases() {
        let d = ErgodicDriver::new(DriverKind::Rotation { alpha: 2f64.sqrt() - 1.0, omega0: 0.25 }).unwrap();
        match d.point_at(3) {
            DriverPoint::Phase(t) => assert!((t - (0.25 + 3.0 * (2f64.sqrt() - 1.0)).fract()).abs() < 1e-15),
            p => panic!("{p:?}"),
        }
        match d.point_at(-1) {
            DriverPoint::Phase(t) => assert!((0.0..1.0).contains(&t)),
            p => panic!("{p:?}"),
        }
    }

    #[test]
    fn cyclic_repeats() {
        let d = ErgodicDriver::new(DriverKind::Cyclic { period: 3, seed: 9 }).unwrap();
        assert_eq!(d.point_at(-2), d.point_at(1));
        assert_eq!(d.point_at(0), d.point_at(6));
        assert_ne!(d.point_at(0), d.point_at(1));
        assert!(ErgodicDriver::new(DriverKind::Cyclic { period: 0, seed: 9 }).is_err());
    }
}
