//! Generators `E_ω: M ⊗ W → W` and the random families they form.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{gaussian_cmat, random_isometry, CMat, Element, Norm, TracialAlgebra, C64, ZERO};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::process::{DriverPoint, ErgodicDriver, RandomMaps};
use crate::qmaps::SuperOperator;
use crate::rng::stream;

const POSITIVITY_PROBES: usize = 8;

/// `E(y) = (1 − mix)·P_W(Σ Kᵢ* y Kᵢ) + mix·τ_{M⊗W}(y)·1_W` with
/// `Kᵢ: H_W → H_M ⊗ H_W` and `P_W` the compression onto the blocks of `W`.
#[derive(Debug, Clone)]
pub struct GeneratorMap {
    on_site: TracialAlgebra,
    bond: TracialAlgebra,
    kraus: Vec<CMat>,
    mix: f64,
}

/// Trace weight of each Hilbert-space index.
fn index_weights(alg: &TracialAlgebra) -> Vec<f64> {
    alg.dims().iter().zip(alg.weights()).flat_map(|(&n, &c)| std::iter::repeat_n(c, n)).collect()
}

/// Tensor-product trace of a dense operator on `H_M ⊗ H_W`.
fn tensor_trace(on_site: &TracialAlgebra, bond: &TracialAlgebra, y: &CMat) -> C64 {
    let (wm, ww) = (index_weights(on_site), index_weights(bond));
    let q = ww.len();
    let mut t = ZERO;
    for (i, ci) in wm.iter().enumerate() {
        for (j, cj) in ww.iter().enumerate() {
            t += y[(i * q + j, i * q + j)] * (ci * cj);
        }
    }
    t
}

impl GeneratorMap {
    /// Validates shapes, unitality and positivity on random PSD probes.
    pub fn from_kraus(
        on_site: &TracialAlgebra,
        bond: &TracialAlgebra,
        kraus: Vec<CMat>,
        mix: f64,
        tol: &Tolerances,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&mix) {
            return Err(Error::InvalidInput(format!("generator mix {mix} outside [0, 1]")));
        }
        if kraus.is_empty() {
            return Err(Error::InvalidInput("generator needs at least one Kraus operator".into()));
        }
        let (p, q) = (on_site.hilbert_dim(), bond.hilbert_dim());
        if let Some(k) = kraus.iter().find(|k| k.nrows() != p * q || k.ncols() != q) {
            return Err(Error::ShapeMismatch(format!(
                "generator Kraus operator is {}x{}, expected {}x{q}",
                k.nrows(),
                k.ncols(),
                p * q
            )));
        }
        let g = Self { on_site: on_site.clone(), bond: bond.clone(), kraus, mix };
        let defect = g.unitality_defect();
        if defect > tol.unital_tol {
            return Err(Error::InvalidInput(format!("generator is not unital (defect {defect:.3e})")));
        }
        let mut rng = stream(0, "generator-probes", 0);
        for _ in 0..POSITIVITY_PROBES {
            let h = gaussian_cmat(&mut rng, p * q, p * q);
            let y = on_site_bond_pinch(on_site, bond, &(&h * h.adjoint()));
            let out = g.apply_dense(&y);
            let scale = bond.norm(&out, Norm::Inf).max(1.0);
            let lo = bond.lambda_min(&out.hermitian_part());
            if lo < -tol.pos_tol * scale {
                return Err(Error::InvalidInput(format!("generator is not positive (eigenvalue {lo:.3e})")));
            }
        }
        Ok(g)
    }

    /// `E(a ⊗ x) = τ_M(a)·x`.
    pub fn product(on_site: &TracialAlgebra, bond: &TracialAlgebra, tol: &Tolerances) -> Result<Self> {
        let q = bond.hilbert_dim();
        let kraus = index_weights(on_site)
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut k = CMat::zeros(on_site.hilbert_dim() * q, q);
                for l in 0..q {
                    k[(i * q + l, l)] = C64::new(c.sqrt(), 0.0);
                }
                k
            })
            .collect();
        Self::from_kraus(on_site, bond, kraus, 0.0, tol)
    }

    /// Kraus operators cut from a Haar isometry `H_W → ℂ^r ⊗ H_M ⊗ H_W`.
    pub fn random_stinespring<R: Rng + ?Sized>(
        on_site: &TracialAlgebra,
        bond: &TracialAlgebra,
        r: usize,
        mix: f64,
        rng: &mut R,
        tol: &Tolerances,
    ) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidInput("stinespring generator needs at least one Kraus operator".into()));
        }
        let (p, q) = (on_site.hilbert_dim(), bond.hilbert_dim());
        let v = random_isometry(rng, r * p * q, q);
        let kraus = (0..r).map(|i| v.rows(i * p * q, p * q).into_owned()).collect();
        Self::from_kraus(on_site, bond, kraus, mix, tol)
    }

    pub fn on_site(&self) -> &TracialAlgebra {
        &self.on_site
    }

    pub fn bond(&self) -> &TracialAlgebra {
        &self.bond
    }

    pub fn kraus(&self) -> &[CMat] {
        &self.kraus
    }

    pub fn mix(&self) -> f64 {
        self.mix
    }

    /// `E` on a dense operator of `H_M ⊗ H_W`.
    pub fn apply_dense(&self, y: &CMat) -> Element {
        let q = self.bond.hilbert_dim();
        let mut acc = CMat::zeros(q, q);
        for k in &self.kraus {
            acc += k.adjoint() * y * k;
        }
        let mut out = self.bond.pinch(&acc.scale(1.0 - self.mix));
        if self.mix > 0.0 {
            let t = tensor_trace(&self.on_site, &self.bond, y) * self.mix;
            for b in &mut out.blocks {
                for i in 0..b.nrows() {
                    b[(i, i)] += t;
                }
            }
        }
        out
    }

    /// `E(a ⊗ x)` for `a ∈ M`, `x ∈ W`.
    pub fn apply(&self, a: &Element, x: &Element) -> Result<Element> {
        self.on_site.check(a)?;
        self.bond.check(x)?;
        Ok(self.apply_dense(&self.on_site.to_dense(a).kronecker(&self.bond.to_dense(x))))
    }

    /// `‖E(1 ⊗ 1) − 1‖_∞`.
    pub fn unitality_defect(&self) -> f64 {
        let one = self.bond.identity();
        let out = self.apply_dense(&CMat::identity(self.on_site.hilbert_dim(), self.on_site.hilbert_dim()).kronecker(&self.bond.to_dense(&one)));
        self.bond.norm(&(&out - &one), Norm::Inf)
    }

    /// `φ(x) = E(1 ⊗ x)`, a unital map on `W`.
    pub fn induced_phi(&self, tol: &Tolerances) -> Result<SuperOperator> {
        let one = self.on_site.identity();
        SuperOperator::from_fn(&self.bond, |x| self.apply(&one, x), tol)
    }
}

/// Compresses a dense operator on `H_M ⊗ H_W` onto the blocks of `M ⊗ W`.
fn on_site_bond_pinch(on_site: &TracialAlgebra, bond: &TracialAlgebra, y: &CMat) -> CMat {
    let block_of = |alg: &TracialAlgebra| -> Vec<usize> {
        alg.dims().iter().enumerate().flat_map(|(b, &n)| std::iter::repeat_n(b, n)).collect()
    };
    let (bm, bw) = (block_of(on_site), block_of(bond));
    let q = bw.len();
    DMatrix::from_fn(y.nrows(), y.ncols(), |r, c| {
        if bm[r / q] == bm[c / q] && bw[r % q] == bw[c % q] {
            y[(r, c)]
        } else {
            ZERO
        }
    })
}

/// One concrete generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// `E(a ⊗ x) = τ_M(a)·x`.
    Product,
    /// A fixed random Stinespring generator drawn from its own seed.
    Stinespring { kraus: usize, mix: f64, seed: u64 },
}

impl GeneratorSpec {
    pub fn build(&self, on_site: &TracialAlgebra, bond: &TracialAlgebra, tol: &Tolerances) -> Result<GeneratorMap> {
        match self {
            GeneratorSpec::Product => GeneratorMap::product(on_site, bond, tol),
            GeneratorSpec::Stinespring { kraus, mix, seed } => {
                GeneratorMap::random_stinespring(on_site, bond, *kraus, *mix, &mut stream(*seed, "generator", 0), tol)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorEnsembleSpec {
    Fixed { generator: GeneratorSpec },
    /// Generator `i` with probability `weights[i]`.
    Discrete { generators: Vec<GeneratorSpec>, weights: Vec<f64> },
    /// A fresh Stinespring generator per point.
    RandomStinespring { kraus: usize, mix: f64 },
}

/// `ω ↦ E_ω` as a pure function of the driver point.
#[derive(Debug, Clone)]
pub struct GeneratorEnsemble {
    on_site: TracialAlgebra,
    bond: TracialAlgebra,
    spec: GeneratorEnsembleSpec,
    tol: Tolerances,
    prebuilt: Vec<GeneratorMap>,
    cumulative: Vec<f64>,
}

impl GeneratorEnsemble {
    pub fn new(on_site: &TracialAlgebra, bond: &TracialAlgebra, spec: GeneratorEnsembleSpec, tol: &Tolerances) -> Result<Self> {
        let mut prebuilt = Vec::new();
        let mut cumulative = Vec::new();
        match &spec {
            GeneratorEnsembleSpec::Fixed { generator } => prebuilt.push(generator.build(on_site, bond, tol)?),
            GeneratorEnsembleSpec::Discrete { generators, weights } => {
                if generators.is_empty() || generators.len() != weights.len() {
                    return Err(Error::InvalidInput(format!(
                        "discrete generator ensemble needs matching non-empty generators and weights ({} vs {})",
                        generators.len(),
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
                for (g, w) in generators.iter().zip(weights) {
                    prebuilt.push(g.build(on_site, bond, tol)?);
                    acc += w / total;
                    cumulative.push(acc);
                }
            }
            GeneratorEnsembleSpec::RandomStinespring { kraus, mix } => {
                if *kraus == 0 || !(0.0..=1.0).contains(mix) {
                    return Err(Error::InvalidInput(format!(
                        "random_stinespring needs kraus >= 1 and mix in [0, 1], got {kraus} and {mix}"
                    )));
                }
            }
        }
        Ok(Self { on_site: on_site.clone(), bond: bond.clone(), spec, tol: *tol, prebuilt, cumulative })
    }

    pub fn on_site(&self) -> &TracialAlgebra {
        &self.on_site
    }

    pub fn bond(&self) -> &TracialAlgebra {
        &self.bond
    }

    pub fn spec(&self) -> &GeneratorEnsembleSpec {
        &self.spec
    }

    pub fn generator_at(&self, point: DriverPoint) -> Result<GeneratorMap> {
        let (mut rng, u) = match point {
            DriverPoint::Seed(s) => {
                let mut r = stream(s, "generator", 0);
                let u: f64 = r.random();
                (r, u)
            }
            DriverPoint::Phase(t) => (stream(t.to_bits(), "generator", 0), t),
            DriverPoint::Fixed => (stream(0, "generator", 0), 0.0),
        };
        match &self.spec {
            GeneratorEnsembleSpec::Fixed { .. } => Ok(self.prebuilt[0].clone()),
            GeneratorEnsembleSpec::Discrete { .. } => {
                let i = self.cumulative.iter().position(|&c| u < c).unwrap_or(self.cumulative.len() - 1);
                Ok(self.prebuilt[i].clone())
            }
            GeneratorEnsembleSpec::RandomStinespring { kraus, mix } => {
                GeneratorMap::random_stinespring(&self.on_site, &self.bond, *kraus, *mix, &mut rng, &self.tol)
            }
        }
    }
}

/// Generators sampled along a driver, with the induced processes on `W`:
/// `φ_{Tⁿω} = E_{Tⁿω}(1 ⊗ ·)` and `γ_{Tⁿω} = (φ_{Tⁿω})_*`.
#[derive(Debug, Clone)]
pub struct FcsMaps {
    pub driver: ErgodicDriver,
    pub ensemble: GeneratorEnsemble,
}

impl FcsMaps {
    pub fn new(driver: ErgodicDriver, ensemble: GeneratorEnsemble) -> Self {
        Self { driver, ensemble }
    }

    pub fn shifted(&self, l: i64) -> Self {
        Self { driver: self.driver.shifted(l), ensemble: self.ensemble.clone() }
    }

    pub fn on_site(&self) -> &TracialAlgebra {
        self.ensemble.on_site()
    }

    pub fn bond(&self) -> &TracialAlgebra {
        self.ensemble.bond()
    }

    pub fn generator_at(&self, n: i64) -> Result<GeneratorMap> {
        self.ensemble.generator_at(self.driver.point_at(n))
    }

    fn tol(&self) -> &Tolerances {
        &self.ensemble.tol
    }
}

impl RandomMaps for FcsMaps {
    fn algebra(&self) -> &TracialAlgebra {
        self.bond()
    }

    fn gamma_at(&self, n: i64) -> Result<SuperOperator> {
        Ok(self.phi_at(n)?.predual())
    }

    fn phi_at(&self, n: i64) -> Result<SuperOperator> {
        self.generator_at(n)?.induced_phi(self.tol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::DriverKind;
    use crate::qmaps::Tri;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn product_generator_traces_out_the_site() {
        let m = TracialAlgebra::new(&[1, 2], &[2.0, 1.0]).unwrap();
        let w = TracialAlgebra::full(2);
        let g = GeneratorMap::product(&m, &w, &tol()).unwrap();
        let mut rng = stream(1, "t", 0);
        let a = m.random_element(&mut rng);
        let x = w.random_element(&mut rng);
        let out = g.apply(&a, &x).unwrap();
        assert!(out.max_abs_diff(&x.scale_c(m.trace(&a))) < 1e-14);
        assert!(g.unitality_defect() < 1e-15);
    }

    #[test]
    fn induced_phi_matches_kraus_route() {
        let m = TracialAlgebra::full(2);
        let w = TracialAlgebra::full(3);
        let g = GeneratorMap::random_stinespring(&m, &w, 2, 0.0, &mut stream(7, "t", 0), &tol()).unwrap();
        let phi = g.induced_phi(&tol()).unwrap();
        let q = w.hilbert_dim();
        let mut ops = Vec::new();
        for k in g.kraus() {
            for j in 0..m.hilbert_dim() {
                ops.push(k.rows(j * q, q).adjoint());
            }
        }
        let kr = SuperOperator::from_kraus_dense(&w, ops, &tol()).unwrap();
        assert!((phi.matrix() - kr.matrix()).amax() < 1e-12);
        assert_eq!(phi.flags().unital, Tri::Yes);
        assert_eq!(phi.flags().completely_positive, Tri::Yes);
    }

    #[test]
    fn rejects_non_unital_kraus() {
        let m = TracialAlgebra::full(2);
        let w = TracialAlgebra::full(2);
        let k = CMat::identity(4, 2).scale(1.5);
        assert!(GeneratorMap::from_kraus(&m, &w, vec![k], 0.0, &tol()).is_err());
    }

    #[test]
    fn ensemble_is_a_function_of_the_point() {
        let m = TracialAlgebra::full(2);
        let ens = GeneratorEnsemble::new(&m, &m, GeneratorEnsembleSpec::RandomStinespring { kraus: 2, mix: 0.1 }, &tol()).unwrap();
        let maps = FcsMaps::new(ErgodicDriver::new(DriverKind::IidShift { seed: 5 }).unwrap(), ens);
        let a = maps.generator_at(3).unwrap();
        let b = maps.shifted(1).generator_at(2).unwrap();
        assert_eq!(a.kraus(), b.kraus());
        let phi = maps.phi_at(0).unwrap();
        assert_eq!(phi.flags().unital, Tri::Yes);
        assert_eq!(maps.gamma_at(0).unwrap().flags().tracial, Tri::Yes);
    }
}
