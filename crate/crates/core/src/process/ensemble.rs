//! Channel ensembles: `ω ↦ γ_ω` as a pure function of the driver point.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::driver::{DriverPoint, ErgodicDriver};
use crate::algebra::{Element, StateKind, TracialAlgebra};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::qmaps::{SuperOperator, Tri};
use crate::rng::stream;

/// One concrete channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Identity,
    Depolarizing {
        eps: f64,
    },
    Transpose,
    /// `x ↦ τ(x) x₀`; `target` lists per-block diagonals of `x₀` before
    /// normalization, default the tracial state.
    Replacement {
        #[serde(default)]
        target: Option<Vec<Vec<f64>>>,
    },
    /// A fixed random channel drawn from its own seed.
    RandomChannel {
        k: usize,
        mix: f64,
        #[serde(default)]
        target: Option<Vec<Vec<f64>>>,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleSpec {
    /// The same channel at every point.
    Fixed { channel: ChannelSpec },
    /// Channel `i` with probability `weights[i]`.
    Discrete { channels: Vec<ChannelSpec>, weights: Vec<f64> },
    /// A fresh random channel per point: `k` Kraus operators mixed with the
    /// replacement onto `target` at weight `mix`.
    RandomKraus {
        k: usize,
        mix: f64,
        #[serde(default)]
        target: Option<Vec<Vec<f64>>>,
    },
    /// `x ↦ Σᵢ τ(x aᵢ) mᵢ` with `pairs` random full-rank `aᵢ` and states `mᵢ`.
    StronglySummable { pairs: usize },
    /// `(1 − w)·from + w·to` with `w = (1 − cos 2πθ)/2`.
    Interpolated { from: ChannelSpec, to: ChannelSpec },
}

#[derive(Debug, Clone)]
pub struct ChannelEnsemble {
    alg: TracialAlgebra,
    spec: EnsembleSpec,
    tol: Tolerances,
    prebuilt: Vec<SuperOperator>,
    cumulative: Vec<f64>,
}

fn target_state(alg: &TracialAlgebra, target: &Option<Vec<Vec<f64>>>, tol: &Tolerances) -> Result<Element> {
    match target {
        None => Ok(alg.identity()),
        Some(diags) => {
            let rows: Vec<&[f64]> = diags.iter().map(|v| v.as_slice()).collect();
            Ok(alg.normalize(&alg.diag(&rows)?, tol)?.into_element())
        }
    }
}

fn check_weight(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidInput(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

impl ChannelSpec {
    pub fn build(&self, alg: &TracialAlgebra, tol: &Tolerances) -> Result<SuperOperator> {
        match self {
            ChannelSpec::Identity => Ok(SuperOperator::identity(alg, tol)),
            ChannelSpec::Depolarizing { eps } => SuperOperator::depolarizing(alg, *eps, tol),
            ChannelSpec::Transpose => Ok(SuperOperator::transpose(alg, tol)),
            ChannelSpec::Replacement { target } => SuperOperator::replacement(alg, &target_state(alg, target, tol)?, tol),
            ChannelSpec::RandomChannel { k, mix, target, seed } => {
                check_weight("mix", *mix)?;
                let x0 = target_state(alg, target, tol)?;
                SuperOperator::random_channel(alg, *k, *mix, &x0, &mut stream(*seed, "channel", 0), tol)
            }
        }
    }
}

impl ChannelEnsemble {
    pub fn new(alg: &TracialAlgebra, spec: EnsembleSpec, tol: &Tolerances) -> Result<Self> {
        let mut prebuilt = Vec::new();
        let mut cumulative = Vec::new();
        match &spec {
            EnsembleSpec::Fixed { channel } => prebuilt.push(channel.build(alg, tol)?),
            EnsembleSpec::Discrete { channels, weights } => {
                if channels.is_empty() || channels.len() != weights.len() {
                    return Err(Error::InvalidInput(format!(
                        "discrete ensemble needs matching non-empty channels and weights ({} vs {})",
                        channels.len(),
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::InvalidInput("discrete weights must be finite and non-negative".into()));
                }
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    return Err(Error::InvalidInput("discrete weights sum to zero".into()));
                }
                let mut acc = 0.0;
                for (c, w) in channels.iter().zip(weights) {
                    prebuilt.push(c.build(alg, tol)?);
                    acc += w / total;
                    cumulative.push(acc);
                }
            }
            EnsembleSpec::RandomKraus { k, mix, target } => {
                check_weight("mix", *mix)?;
                if *k == 0 {
                    return Err(Error::InvalidInput("random_kraus needs k >= 1".into()));
                }
                target_state(alg, target, tol)?;
            }
            EnsembleSpec::StronglySummable { pairs } => {
                if *pairs == 0 {
                    return Err(Error::InvalidInput("strongly_summable needs at least one pair".into()));
                }
            }
            EnsembleSpec::Interpolated { from, to } => {
                prebuilt.push(from.build(alg, tol)?);
                prebuilt.push(to.build(alg, tol)?);
            }
        }
        for s in &prebuilt {
            admissible(s)?;
        }
        Ok(Self { alg: alg.clone(), spec, tol: *tol, prebuilt, cumulative })
    }

    pub fn algebra(&self) -> &TracialAlgebra {
        &self.alg
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    /// `γ` at a driver point.
    pub fn channel_at(&self, point: DriverPoint) -> Result<SuperOperator> {
        let (mut rng, u) = match point {
            DriverPoint::Seed(s) => {
                let mut r = stream(s, "ensemble", 0);
                let u: f64 = r.random();
                (r, u)
            }
            DriverPoint::Phase(t) => (stream(t.to_bits(), "ensemble", 0), t),
            DriverPoint::Fixed => (stream(0, "ensemble", 0), 0.0),
        };
        let tol = &self.tol;
        let out = match &self.spec {
            EnsembleSpec::Fixed { .. } => return Ok(self.prebuilt[0].clone()),
            EnsembleSpec::Discrete { .. } => {
                let i = self.cumulative.iter().position(|&c| u < c).unwrap_or(self.cumulative.len() - 1);
                return Ok(self.prebuilt[i].clone());
            }
            EnsembleSpec::RandomKraus { k, mix, target } => {
                let x0 = target_state(&self.alg, target, tol)?;
                SuperOperator::random_channel(&self.alg, *k, *mix, &x0, &mut rng, tol)?
            }
            EnsembleSpec::StronglySummable { pairs } => {
                let list: Vec<(Element, Element)> = (0..*pairs)
                    .map(|_| {
                        let a = self.alg.random_state(StateKind::Full, &mut rng).into_element();
                        let m = self.alg.random_state(StateKind::Full, &mut rng).into_element();
                        (a, m)
                    })
                    .collect();
                SuperOperator::from_strongly_summable(&self.alg, &list, tol)?
            }
            EnsembleSpec::Interpolated { .. } => {
                let w = (1.0 - (2.0 * std::f64::consts::PI * u).cos()) / 2.0;
                self.prebuilt[0].mixed_with(&self.prebuilt[1], w, tol)
            }
        };
        admissible(&out)?;
        Ok(out)
    }
}

fn admissible(s: &SuperOperator) -> Result<()> {
    let f = s.flags();
    if f.positive == Tri::No {
        return Err(Error::InvalidInput("ensemble emitted a map that is not positive".into()));
    }
    if f.faithful == Tri::No {
        return Err(Error::NotFaithful("ensemble emitted a non-faithful map".into()));
    }
    Ok(())
}

/// A bi-infinite family of maps `n ↦ γ_{Tⁿω}` together with the dual family
/// `φ_{Tⁿω} = (γ_{Tⁿω})*`.
pub trait RandomMaps: Sync {
    fn algebra(&self) -> &TracialAlgebra;
    fn gamma_at(&self, n: i64) -> Result<SuperOperator>;
    fn phi_at(&self, n: i64) -> Result<SuperOperator> {
        Ok(self.gamma_at(n)?.predual())
    }
}

/// Channels of an ensemble sampled along a driver.
#[derive(Debug, Clone)]
pub struct DrivenChannels {
    pub driver: ErgodicDriver,
    pub ensemble: ChannelEnsemble,
}

impl DrivenChannels {
    pub fn new(driver: ErgodicDriver, ensemble: ChannelEnsemble) -> Self {
        Self { driver, ensemble }
    }

    pub fn shifted(&self, l: i64) -> Self {
        Self { driver: self.driver.shifted(l), ensemble: self.ensemble.clone() }
    }
}

impl RandomMaps for DrivenChannels {
    fn algebra(&self) -> &TracialAlgebra {
        self.ensemble.algebra()
    }

    fn gamma_at(&self, n: i64) -> Result<SuperOperator> {
        self.ensemble.channel_at(self.driver.point_at(n))
    }
}

/// Exchanges the roles of `γ` and `φ`.
pub struct Swapped<'a, M: RandomMaps + ?Sized>(pub &'a M);

impl<M: RandomMaps + ?Sized> RandomMaps for Swapped<'_, M> {
    fn algebra(&self) -> &TracialAlgebra {
        self.0.algebra()
    }

    fn gamma_at(&self, n: i64) -> Result<SuperOperator> {
        self.0.phi_at(n)
    }

    fn phi_at(&self, n: i64) -> Result<SuperOperator> {
        self.0.gamma_at(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::driver::DriverKind;

    #[test]
    fn channel_at_is_pure() {
        let alg = TracialAlgebra::full(2);
        let tol = Tolerances::default();
        let e = ChannelEnsemble::new(&alg, EnsembleSpec::RandomKraus { k: 3, mix: 0.1, target: None }, &tol).unwrap();
        let a = e.channel_at(DriverPoint::Seed(5)).unwrap();
        let b = e.channel_at(DriverPoint::Seed(5)).unwrap();
        let c = e.channel_at(DriverPoint::Seed(6)).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_ne!(a.matrix(), c.matrix());
        assert_eq!(a.flags().completely_positive, Tri::Yes);
        assert_eq!(a.flags().tracial, Tri::Yes);
    }

    #[test]
    fn discrete_frequencies() {
        let alg = TracialAlgebra::full(2);
        let tol = Tolerances::default();
        let spec = EnsembleSpec::Discrete {
            channels: vec![ChannelSpec::Transpose, ChannelSpec::Depolarizing { eps: 0.5 }],
            weights: vec![1.0, 1.0],
        };
        let e = ChannelEnsemble::new(&alg, spec, &tol).unwrap();
        let maps = DrivenChannels::new(ErgodicDriver::new(DriverKind::IidShift { seed: 1 }).unwrap(), e);
        let t = SuperOperator::transpose(&alg, &tol);
        let hits = (0..400).filter(|&n| maps.gamma_at(n).unwrap().matrix() == t.matrix()).count();
        assert!((160..240).contains(&hits), "{hits}");
    }

    #[test]
    fn interpolation_endpoints() {
        let alg = TracialAlgebra::full(2);
        let tol = Tolerances::default();
        let spec = EnsembleSpec::Interpolated { from: ChannelSpec::Identity, to: ChannelSpec::Depolarizing { eps: 1.0 } };
        let e = ChannelEnsemble::new(&alg, spec, &tol).unwrap();
        let id = SuperOperator::identity(&alg, &tol);
        let rep = SuperOperator::depolarizing(&alg, 1.0, &tol).unwrap();
        assert!((e.channel_at(DriverPoint::Phase(0.0)).unwrap().matrix() - id.matrix()).amax() < 1e-15);
        assert!((e.channel_at(DriverPoint::Phase(0.5)).unwrap().matrix() - rep.matrix()).amax() < 1e-15);
    }

    #[test]
    fn bad_specs_rejected() {
        let alg = TracialAlgebra::full(2);
        let tol = Tolerances::default();
        assert!(ChannelEnsemble::new(&alg, EnsembleSpec::RandomKraus { k: 0, mix: 0.1, target: None }, &tol).is_err());
        let spec = EnsembleSpec::Discrete { channels: vec![ChannelSpec::Transpose], weights: vec![] };
        assert!(ChannelEnsemble::new(&alg, spec, &tol).is_err());
    }
}
