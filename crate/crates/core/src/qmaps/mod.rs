//! Positive linear maps on a tracial algebra, stored as real matrices in a
//! τ-orthonormal Hermitian basis.

mod basis;
mod contraction;
mod file;

pub use basis::HermitianBasis;
pub use file::{DenseJson, MapFile};
pub use contraction::{
    contraction_estimate, fixed_point, is_strict_contraction, sandwich_margin, ContractionEstimate, EstimateOptions,
    Verdict,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    eigh, gaussian_cmat, op_norm, random_isometry, CMat, Element, Norm, StateKind, TracialAlgebra, C64, ONE,
};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::rng;

/// Three-valued flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tri {
    Yes,
    No,
    Unverified,
}

impl Tri {
    fn from_bool(b: bool) -> Self {
        if b {
            Tri::Yes
        } else {
            Tri::No
        }
    }

    fn and(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::Yes, Tri::Yes) => Tri::Yes,
            _ => Tri::Unverified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub hermiticity_preserving: Tri,
    pub positive: Tri,
    /// Number of PSD probes behind an empirical `positive = yes`; zero when
    /// positivity holds by construction or via complete positivity.
    pub positive_probes: usize,
    pub completely_positive: Tri,
    pub unital: Tri,
    pub tracial: Tri,
    pub faithful: Tri,
}

/// How a map was built.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    /// `x ↦ P(Σ K x K*)` with `K` acting on `⊕ ℂ^{nᵢ}` and `P` the block pinching.
    Kraus(Vec<CMat>),
    Matrix,
    /// `x ↦ Σ τ(x aᵢ) mᵢ`.
    StronglySummable(Vec<(Element, Element)>),
    Composition { factors: usize },
    Predual(Box<Provenance>),
    Unitalized,
}

#[derive(Debug, Clone)]
pub struct SuperOperator {
    alg: TracialAlgebra,
    basis: HermitianBasis,
    matrix: DMatrix<f64>,
    flags: Flags,
    provenance: Provenance,
}

/// Outcome of the reducibility search.
#[derive(Debug, Clone)]
pub enum Irreducibility {
    NoInvariantProjectionFound,
    Reducible { p: Element, lambda: f64 },
}

const POSITIVITY_PROBES: usize = 1000;

fn matrix_of(basis: &HermitianBasis, f: impl Fn(&Element) -> Element) -> DMatrix<f64> {
    let d = basis.len();
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        let col = basis.coords_herm(&f(&basis.basis_element(j)));
        m.set_column(j, &col);
    }
    m
}

impl SuperOperator {
    fn with_flags(alg: &TracialAlgebra, basis: HermitianBasis, matrix: DMatrix<f64>, provenance: Provenance) -> Self {
        let flags = Flags {
            hermiticity_preserving: Tri::Yes,
            positive: Tri::Unverified,
            positive_probes: 0,
            completely_positive: Tri::Unverified,
            unital: Tri::Unverified,
            tracial: Tri::Unverified,
            faithful: Tri::Unverified,
        };
        Self { alg: alg.clone(), basis, matrix, flags, provenance }
    }

    /// Runs every flag check: Choi test, positivity probes when not CP,
    /// unitality, traciality and faithfulness.
    pub fn validated(mut self, tol: &Tolerances) -> Self {
        self.flags.completely_positive = Tri::from_bool(self.choi_min_eigenvalue() >= -tol.cp_tol);
        if self.flags.completely_positive == Tri::Yes {
            self.flags.positive = Tri::Yes;
            self.flags.positive_probes = 0;
        } else {
            let (ok, n) = self.probe_positivity(POSITIVITY_PROBES, tol);
            self.flags.positive = Tri::from_bool(ok);
            self.flags.positive_probes = n;
        }
        self.refresh_unital_tracial(tol);
        self.faithfulness_check(tol);
        self
    }

    fn refresh_unital_tracial(&mut self, tol: &Tolerances) {
        let one = self.alg.identity();
        let g1 = self.apply(&one);
        self.flags.unital = Tri::from_bool(self.alg.norm(&(&g1 - &one), Norm::Inf) <= tol.unital_tol);
        let u = self.basis.coords_herm(&one);
        let t = self.matrix.tr_mul(&u) - &u;
        self.flags.tracial = Tri::from_bool(t.amax() <= tol.unital_tol);
    }

    /// Map from an explicit real matrix in the Hermitian basis.
    pub fn from_matrix(alg: &TracialAlgebra, matrix: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        let d = alg.coord_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "superoperator matrix is {}x{}, algebra needs {d}x{d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("superoperator matrix has non-finite entries".into()));
        }
        Ok(Self::with_flags(alg, HermitianBasis::new(alg), matrix, Provenance::Matrix).validated(tol))
    }

    /// Map from a complex matrix; rejected unless it is real within `herm_tol`
    /// (real matrices are exactly the Hermiticity-preserving maps).
    pub fn from_complex_matrix(alg: &TracialAlgebra, matrix: &DMatrix<C64>, tol: &Tolerances) -> Result<Self> {
        let worst = matrix.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if worst > tol.herm_tol {
            return Err(Error::InvalidInput(format!(
                "map does not preserve Hermiticity (imaginary part {worst:.3e} in Hermitian basis)"
            )));
        }
        Self::from_matrix(alg, matrix.map(|z| z.re), tol)
    }

    /// `x ↦ Σ Kᵢ x Kᵢ*` for block-diagonal Kraus operators.
    pub fn from_kraus(alg: &TracialAlgebra, ops: &[Element], tol: &Tolerances) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::InvalidInput("no Kraus operators".into()));
        }
        for k in ops {
            alg.check(k)?;
        }
        let dense: Vec<CMat> = ops.iter().map(|k| alg.to_dense(k)).collect();
        Self::from_kraus_dense(alg, dense, tol)
    }

    /// `x ↦ P(Σ Kᵢ x Kᵢ*)` with `Kᵢ` acting on the whole Hilbert space and
    /// `P` the compression onto the block diagonal.
    pub fn from_kraus_dense(alg: &TracialAlgebra, ops: Vec<CMat>, tol: &Tolerances) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::InvalidInput("no Kraus operators".into()));
        }
        let h = alg.hilbert_dim();
        if let Some(k) = ops.iter().find(|k| k.nrows() != h || k.ncols() != h) {
            return Err(Error::ShapeMismatch(format!("Kraus operator is {}x{}, expected {h}x{h}", k.nrows(), k.ncols())));
        }
        let basis = HermitianBasis::new(alg);
        let matrix = matrix_of(&basis, |x| kraus_apply(alg, &ops, x));
        let mut s = Self::with_flags(alg, basis, matrix, Provenance::Kraus(ops)).validated(tol);
        if s.flags.completely_positive != Tri::Yes {
            return Err(Error::Internal("Choi self-test failed for a Kraus map".into()));
        }
        s.flags.positive = Tri::Yes;
        Ok(s)
    }

    /// `x ↦ Σᵢ τ(x aᵢ) mᵢ` for positive `aᵢ, mᵢ`.
    pub fn from_strongly_summable(alg: &TracialAlgebra, pairs: &[(Element, Element)], tol: &Tolerances) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("strongly summable map needs at least one pair".into()));
        }
        let mut pairs_h = Vec::with_capacity(pairs.len());
        for (a, m) in pairs {
            let a = alg.hermitize(a, tol.herm_tol)?;
            let m = alg.hermitize(m, tol.herm_tol)?;
            for z in [&a, &m] {
                let p = alg.is_positive(z, tol.pos_tol)?;
                if !p.positive {
                    return Err(Error::InvalidInput(format!(
                        "strongly summable pair is not positive (eigenvalue {:.3e})",
                        p.min_eigenvalue
                    )));
                }
            }
            pairs_h.push((a, m));
        }
        let basis = HermitianBasis::new(alg);
        let d = basis.len();
        let mut matrix = DMatrix::zeros(d, d);
        for (a, m) in &pairs_h {
            matrix += basis.coords_herm(m) * basis.coords_herm(a).transpose();
        }
        let s = Self::with_flags(alg, basis, matrix, Provenance::StronglySummable(pairs_h)).validated(tol);
        Ok(s)
    }

    /// Map given by its action; it must send Hermitian elements to Hermitian ones.
    pub fn from_fn(alg: &TracialAlgebra, f: impl Fn(&Element) -> Result<Element>, tol: &Tolerances) -> Result<Self> {
        let basis = HermitianBasis::new(alg);
        let d = basis.len();
        let mut matrix = DMatrix::zeros(d, d);
        for j in 0..d {
            let y = f(&basis.basis_element(j))?;
            alg.check(&y)?;
            let scale = alg.norm(&y, Norm::Inf).max(1.0);
            let y = alg.hermitize(&y, tol.herm_tol * scale)?;
            matrix.set_column(j, &basis.coords_herm(&y));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("map produced non-finite values".into()));
        }
        Ok(Self::with_flags(alg, basis, matrix, Provenance::Matrix).validated(tol))
    }

    pub fn identity(alg: &TracialAlgebra, tol: &Tolerances) -> Self {
        let d = alg.coord_dim();
        Self::with_flags(alg, HermitianBasis::new(alg), DMatrix::identity(d, d), Provenance::Matrix).validated(tol)
    }

    /// `x ↦ (1 − ε)x + ε τ(x) 1`.
    pub fn depolarizing(alg: &TracialAlgebra, eps: f64, tol: &Tolerances) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidInput(format!("depolarizing strength {eps} outside [0, 1]")));
        }
        let basis = HermitianBasis::new(alg);
        let u = basis.coords_herm(&alg.identity());
        let d = basis.len();
        let matrix = DMatrix::identity(d, d).scale(1.0 - eps) + (&u * u.transpose()).scale(eps);
        Ok(Self::with_flags(alg, basis, matrix, Provenance::Matrix).validated(tol))
    }

    /// Blockwise transpose.
    pub fn transpose(alg: &TracialAlgebra, tol: &Tolerances) -> Self {
        let basis = HermitianBasis::new(alg);
        let diag = DVector::from_iterator(basis.len(), basis.antisymmetric_mask().iter().map(|&a| if a { -1.0 } else { 1.0 }));
        let matrix = DMatrix::from_diagonal(&diag);
        Self::with_flags(alg, basis, matrix, Provenance::Matrix).validated(tol)
    }

    /// `x ↦ τ(x) x₀`.
    pub fn replacement(alg: &TracialAlgebra, x0: &Element, tol: &Tolerances) -> Result<Self> {
        Self::from_strongly_summable(alg, &[(alg.identity(), x0.clone())], tol)
    }

    /// `x ↦ Σ pᵢ Uᵢ x Uᵢ*` with Haar blockwise unitaries, mixed with
    /// `x ↦ τ(x) 1` at weight `mix`. Unital and tracial.
    pub fn random_mixed_unitary<R: Rng + ?Sized>(
        alg: &TracialAlgebra,
        k: usize,
        mix: f64,
        rng: &mut R,
        tol: &Tolerances,
    ) -> Result<Self> {
        let k = k.max(1);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let ops: Vec<CMat> = raw
            .iter()
            .map(|p| alg.to_dense(&alg.random_unitary(rng)).scale(((1.0 - mix) * p / total).sqrt()))
            .collect();
        let unitary_part = Self::from_kraus_dense(alg, ops, tol)?;
        let one = alg.identity();
        let rep = Self::replacement(alg, &one, tol)?;
        Ok(unitary_part.mixed_with(&rep, mix, tol))
    }

    /// A random CP map from a Stinespring isometry with `k` Kraus operators,
    /// rescaled to be trace preserving, then mixed with `x ↦ τ(x) target` at
    /// weight `mix`.
    pub fn random_channel<R: Rng + ?Sized>(
        alg: &TracialAlgebra,
        k: usize,
        mix: f64,
        target: &Element,
        rng: &mut R,
        tol: &Tolerances,
    ) -> Result<Self> {
        let h = alg.hilbert_dim();
        let k = k.max(1);
        let v = random_isometry(rng, h * k, h);
        let ops: Vec<CMat> = (0..k).map(|i| v.rows(i * h, h).into_owned()).collect();
        let raw = Self::from_kraus_dense(alg, ops, tol)?;
        let stoch = raw.make_tracial(tol)?;
        let rep = Self::replacement(alg, target, tol)?;
        Ok(stoch.mixed_with(&rep, mix, tol))
    }

    /// `x ↦ γ(H^{-½} x H^{-½})` with `H = γ*(1)`; trace preserving when `H`
    /// is invertible.
    pub fn make_tracial(&self, tol: &Tolerances) -> Result<Self> {
        let h = self.apply_dual(&self.alg.identity()).hermitian_part();
        if self.alg.lambda_min(&h) <= tol.rank_tol * self.alg.lambda_max(&h) {
            return Err(Error::NotFaithful("γ*(1) is singular".into()));
        }
        let hinv = self.alg.func(&h, |v| 1.0 / v.sqrt());
        let sandwich = matrix_of(&self.basis, |x| &(&hinv * x) * &hinv);
        let mut out = self.clone();
        out.matrix = &self.matrix * sandwich;
        out.provenance = Provenance::Composition { factors: self.factors() + 1 };
        out.refresh_unital_tracial(tol);
        Ok(out)
    }

    /// `(1 − w)·self + w·other`.
    pub fn mixed_with(&self, other: &SuperOperator, w: f64, tol: &Tolerances) -> Self {
        let matrix = self.matrix.scale(1.0 - w) + other.matrix.scale(w);
        let mut out = Self::with_flags(&self.alg, self.basis.clone(), matrix, Provenance::Matrix);
        out.flags.completely_positive = self.flags.completely_positive.and(other.flags.completely_positive);
        out.flags.positive = self.flags.positive.and(other.flags.positive);
        if out.flags.completely_positive != Tri::Yes {
            out = out.validated(tol);
        } else {
            out.refresh_unital_tracial(tol);
            out.faithfulness_check(tol);
        }
        out
    }

    pub fn algebra(&self) -> &TracialAlgebra {
        &self.alg
    }

    pub fn basis(&self) -> &HermitianBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn flags(&self) -> &Flags {
        &self.flags
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn factors(&self) -> usize {
        match self.provenance {
            Provenance::Composition { factors } => factors,
            _ => 1,
        }
    }

    /// `γ(x)` for any element (complex linear extension).
    pub fn apply(&self, x: &Element) -> Element {
        let (re, im) = self.basis.coords(x);
        let gr = &self.matrix * re;
        if im.amax() == 0.0 {
            self.basis.element(&gr, None)
        } else {
            let gi = &self.matrix * im;
            self.basis.element(&gr, Some(&gi))
        }
    }

    /// `γ*(a)` with `τ(γ(x) a) = τ(x γ*(a))`.
    pub fn apply_dual(&self, a: &Element) -> Element {
        let (re, im) = self.basis.coords(a);
        let gr = self.matrix.tr_mul(&re);
        if im.amax() == 0.0 {
            self.basis.element(&gr, None)
        } else {
            let gi = self.matrix.tr_mul(&im);
            self.basis.element(&gr, Some(&gi))
        }
    }

    /// Evaluation from the provenance data, when that is independent of the matrix.
    pub fn provenance_apply(&self, x: &Element) -> Option<Element> {
        match &self.provenance {
            Provenance::Kraus(ops) => Some(kraus_apply(&self.alg, ops, x)),
            Provenance::StronglySummable(pairs) => {
                let mut acc = self.alg.zero();
                for (a, m) in pairs {
                    acc = &acc + &m.scale_c(self.alg.trace_product(x, a));
                }
                Some(acc)
            }
            _ => None,
        }
    }

    /// Projective action `γ(x)/τ(γ(x))`.
    pub fn projective_action(&self, x: &Element, tol: &Tolerances) -> Result<Element> {
        let g = self.apply(x).hermitian_part();
        let t = self.alg.tr(&g);
        if t <= tol.kernel_tol {
            return Err(Error::KernelState(t));
        }
        Ok(g.scale(1.0 / t))
    }

    /// Adjoint for the trace pairing; the matrix transpose in this basis.
    pub fn predual(&self) -> Self {
        let f = self.flags;
        let flags = Flags {
            hermiticity_preserving: Tri::Yes,
            positive: f.positive,
            positive_probes: f.positive_probes,
            completely_positive: f.completely_positive,
            unital: f.tracial,
            tracial: f.unital,
            faithful: Tri::Unverified,
        };
        let provenance = match &self.provenance {
            Provenance::Predual(inner) => (**inner).clone(),
            p => Provenance::Predual(Box::new(p.clone())),
        };
        let mut out = Self { alg: self.alg.clone(), basis: self.basis.clone(), matrix: self.matrix.transpose(), flags, provenance };
        out.faithfulness_check(&Tolerances::default());
        out
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &SuperOperator) -> Result<Self> {
        if self.alg != other.alg {
            return Err(Error::ShapeMismatch("composition of maps on different algebras".into()));
        }
        let matrix = &self.matrix * &other.matrix;
        let (a, b) = (self.flags, other.flags);
        let flags = Flags {
            hermiticity_preserving: Tri::Yes,
            positive: a.positive.and(b.positive),
            positive_probes: a.positive_probes.max(b.positive_probes),
            completely_positive: a.completely_positive.and(b.completely_positive),
            unital: a.unital.and(b.unital),
            tracial: a.tracial.and(b.tracial),
            faithful: a.faithful.and(b.faithful),
        };
        Ok(Self {
            alg: self.alg.clone(),
            basis: self.basis.clone(),
            matrix,
            flags,
            provenance: Provenance::Composition { factors: self.factors() + other.factors() },
        })
    }

    /// Multiplies the matrix by a positive scalar. Projective quantities are unchanged.
    pub fn rescaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.matrix.scale_mut(s);
        if s != 1.0 {
            out.flags.unital = Tri::Unverified;
            out.flags.tracial = Tri::Unverified;
        }
        out
    }

    /// Unitalization `φ̃(x) = φ(x) + (τ − τ∘φ)(x)/(τ − τ∘φ)(1) · (1 − φ(1))`
    /// of a subunital subtracial map.
    pub fn unitalized(&self, tol: &Tolerances) -> Result<Self> {
        let u = self.basis.coords_herm(&self.alg.identity());
        let ell = &u - self.matrix.tr_mul(&u);
        let den = ell.dot(&u);
        if den <= tol.unital_tol {
            return Err(Error::InvalidInput("map is already tracial; nothing to unitalize".into()));
        }
        let r = &u - &self.matrix * &u;
        let matrix = &self.matrix + (r * ell.transpose()).scale(1.0 / den);
        Ok(Self::with_flags(&self.alg, self.basis.clone(), matrix, Provenance::Unitalized).validated(tol))
    }

    /// Smallest eigenvalue over all block-pair Choi matrices.
    pub fn choi_min_eigenvalue(&self) -> f64 {
        let mut worst = f64::INFINITY;
        let dims = self.alg.dims().to_vec();
        for (bi, &n) in dims.iter().enumerate() {
            let images: Vec<Vec<Element>> = (0..n)
                .map(|k| {
                    (0..n)
                        .map(|l| {
                            let mut e = self.alg.zero();
                            e.blocks[bi][(k, l)] = ONE;
                            self.apply(&e)
                        })
                        .collect()
                })
                .collect();
            for (bo, &m) in dims.iter().enumerate() {
                let mut choi = CMat::zeros(n * m, n * m);
                for k in 0..n {
                    for l in 0..n {
                        let blk = &images[k][l].blocks[bo];
                        choi.view_mut((k * m, l * m), (m, m)).copy_from(blk);
                    }
                }
                let scale = op_norm(&choi).max(1.0);
                let (vals, _) = eigh(&choi);
                if let Some(&v) = vals.first() {
                    worst = worst.min(v / scale);
                }
            }
        }
        worst
    }

    /// Empirical positivity on PSD probes from a fixed internal stream.
    fn probe_positivity(&self, n: usize, tol: &Tolerances) -> (bool, usize) {
        let mut rng = rng::stream(0, "positivity-probes", 0);
        for i in 0..n {
            let kind = if i % 2 == 0 { StateKind::Pure } else { StateKind::Full };
            let x = self.alg.random_state(kind, &mut rng).into_element();
            let g = self.apply(&x).hermitian_part();
            let scale = self.alg.norm(&g, Norm::Inf).max(1.0);
            if self.alg.lambda_min(&g) < -tol.pos_tol * scale {
                return (false, i + 1);
            }
        }
        (true, n)
    }

    /// Decides faithfulness: `γ*(1)` invertible, else the rank of
    /// `span{γ*(bᵢ) bⱼ}` over a basis.
    pub fn faithfulness_check(&mut self, tol: &Tolerances) -> Tri {
        if self.flags.positive != Tri::Yes {
            self.flags.faithful = Tri::Unverified;
            return self.flags.faithful;
        }
        let h = self.apply_dual(&self.alg.identity()).hermitian_part();
        let lmax = self.alg.lambda_max(&h);
        let verdict = if lmax > 0.0 && self.alg.lambda_min(&h) > tol.rank_tol * lmax {
            Tri::Yes
        } else {
            Tri::from_bool(self.span_rank() == self.basis.len())
        };
        self.flags.faithful = verdict;
        verdict
    }

    fn span_rank(&self) -> usize {
        let d = self.basis.len();
        let elems: Vec<Element> = (0..d).map(|i| self.basis.basis_element(i)).collect();
        let images: Vec<Element> = elems.iter().map(|e| self.apply_dual(e)).collect();
        let mut cols = DMatrix::<C64>::zeros(d, d * d);
        for (i, gi) in images.iter().enumerate() {
            for (j, bj) in elems.iter().enumerate() {
                let (re, im) = self.basis.coords(&(gi * bj));
                for r in 0..d {
                    cols[(r, i * d + j)] = C64::new(re[r], im[r]);
                }
            }
        }
        let sv = cols.singular_values();
        let top = sv.max();
        if top <= 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s > 1e-10 * top).count()
    }

    /// Searches for a nontrivial projection `p` with `γ(p) ≤ λp`.
    pub fn irreducibility_probe<R: Rng + ?Sized>(&self, fixed_point: Option<&Element>, rng: &mut R) -> Irreducibility {
        let alg = &self.alg;
        let mut seeds: Vec<Element> = Vec::new();
        if alg.num_blocks() > 1 {
            for b in 0..alg.num_blocks() {
                let mut p = alg.zero();
                p.blocks[b] = CMat::identity(alg.dims()[b], alg.dims()[b]);
                seeds.push(p);
            }
        }
        for (b, &n) in alg.dims().iter().enumerate() {
            for k in 0..n {
                let mut p = alg.zero();
                p.blocks[b][(k, k)] = ONE;
                seeds.push(p);
            }
        }
        if let Some(x0) = fixed_point {
            for (b, (vals, vecs)) in alg.eigh_blocks(x0).iter().enumerate() {
                for k in 0..vals.len() {
                    let mut p = alg.zero();
                    let v = vecs.column(k);
                    p.blocks[b] = v * v.adjoint();
                    seeds.push(p);
                }
            }
        }
        for _ in 0..8 {
            let b = rng.random_range(0..alg.num_blocks());
            let g = gaussian_cmat(rng, alg.dims()[b], 1);
            let mut p = alg.zero();
            p.blocks[b] = (&g * g.adjoint()).scale(1.0 / g.norm_squared());
            seeds.push(p);
        }
        let full_rank = alg.hilbert_dim();
        for seed in seeds {
            let mut p = seed;
            loop {
                let rank = projection_rank(&p);
                let next = alg.support_projection(&(&p + &self.apply(&p).hermitian_part()), 1e-10);
                let next_rank = projection_rank(&next);
                if next_rank == rank {
                    if rank < full_rank {
                        let gp = self.apply(&p).hermitian_part();
                        let lambda = alg.lambda_max(&gp).max(0.0);
                        return Irreducibility::Reducible { p, lambda };
                    }
                    break;
                }
                p = next;
            }
        }
        Irreducibility::NoInvariantProjectionFound
    }
}

fn projection_rank(p: &Element) -> usize {
    p.blocks.iter().map(|b| b.trace().re.round() as usize).sum()
}

fn kraus_apply(alg: &TracialAlgebra, ops: &[CMat], x: &Element) -> Element {
    let dx = alg.to_dense(x);
    let mut acc = CMat::zeros(dx.nrows(), dx.ncols());
    for k in ops {
        acc += k * &dx * k.adjoint();
    }
    alg.pinch(&acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn from_fn_matches_kraus() {
        let alg = TracialAlgebra::new(&[2, 1], &[1.0, 2.0]).unwrap();
        let mut rng = stream(4, "from-fn", 0);
        let u = crate::algebra::random_unitary(&mut rng, 3);
        let ops = vec![u.clone()];
        let a = SuperOperator::from_kraus_dense(&alg, ops.clone(), &tol()).unwrap();
        let b = SuperOperator::from_fn(&alg, |x| Ok(kraus_apply(&alg, &ops, x)), &tol()).unwrap();
        assert!((a.matrix() - b.matrix()).amax() < 1e-14);
        assert_eq!(b.flags().completely_positive, Tri::Yes);
        let skew = SuperOperator::from_fn(&alg, |x| Ok(x.scale_c(C64::new(0.0, 1.0))), &tol());
        assert!(matches!(skew, Err(Error::NotHermitian(_))));
    }

    #[test]
    fn kraus_identity_and_dephasing() {
        let alg = TracialAlgebra::full(2);
        let id = SuperOperator::from_kraus(&alg, &[alg.identity()], &tol()).unwrap();
        assert!((id.matrix() - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
        let p0 = alg.diag(&[&[1.0, 0.0]]).unwrap();
        let p1 = alg.diag(&[&[0.0, 1.0]]).unwrap();
        let deph = SuperOperator::from_kraus(&alg, &[p0.clone(), p1], &tol()).unwrap();
        let mut rng = stream(1, "qmaps-test", 0);
        let x = alg.random_hermitian(&mut rng);
        let y = deph.apply(&x);
        assert!(y.blocks[0][(0, 1)].norm() < 1e-14);
        assert!((y.blocks[0][(0, 0)] - x.blocks[0][(0, 0)]).norm() < 1e-14);
        assert_eq!(deph.flags().unital, Tri::Yes);
        match deph.irreducibility_probe(None, &mut rng) {
            Irreducibility::Reducible { p, lambda } => {
                assert_eq!(projection_rank(&p), 1);
                assert!((lambda - 1.0).abs() < 1e-12);
            }
            other => panic!("expected reducible, got {other:?}"),
        }
    }

    #[test]
    fn matrix_agrees_with_provenance() {
        let alg = TracialAlgebra::new(&[2, 1], &[1.0, 1.0]).unwrap();
        let mut rng = stream(2, "qmaps-test", 0);
        let h = alg.hilbert_dim();
        let v = random_isometry(&mut rng, 3 * h, h);
        let ops: Vec<CMat> = (0..3).map(|i| v.rows(i * h, h).into_owned()).collect();
        let raw = SuperOperator::from_kraus_dense(&alg, ops, &tol()).unwrap();
        for _ in 0..10 {
            let x = alg.random_element(&mut rng);
            assert!(raw.apply(&x).max_abs_diff(&raw.provenance_apply(&x).unwrap()) < 1e-12);
        }
        let target = alg.random_state(StateKind::Full, &mut rng).into_element();
        let ch = SuperOperator::random_channel(&alg, 3, 0.1, &target, &mut rng, &tol()).unwrap();
        assert_eq!(ch.flags().tracial, Tri::Yes);
        assert_eq!(ch.flags().completely_positive, Tri::Yes);
    }

    #[test]
    fn predual_pairing_and_involution() {
        let alg = TracialAlgebra::new(&[2, 2], &[1.0, 3.0]).unwrap();
        let mut rng = stream(3, "qmaps-test", 0);
        let target = alg.random_state(StateKind::Full, &mut rng).into_element();
        let g = SuperOperator::random_channel(&alg, 2, 0.2, &target, &mut rng, &tol()).unwrap();
        let gs = g.predual();
        for _ in 0..10 {
            let x = alg.random_element(&mut rng);
            let a = alg.random_element(&mut rng);
            let lhs = alg.trace_product(&gs.apply(&x), &a);
            let rhs = alg.trace_product(&x, &g.apply(&a));
            assert!((lhs - rhs).norm() < 1e-12);
        }
        assert!((gs.predual().matrix() - g.matrix()).amax() == 0.0);
        assert_eq!(gs.flags().positive, Tri::Yes);
    }

    #[test]
    fn predual_of_heisenberg_replacement() {
        let alg = TracialAlgebra::full(3);
        let mut rng = stream(4, "qmaps-test", 0);
        let x0 = alg.random_state(StateKind::Full, &mut rng).into_element();
        // φ(a) = τ(a x₀)·1
        let phi = SuperOperator::from_strongly_summable(&alg, &[(x0.clone(), alg.identity())], &tol()).unwrap();
        let gamma = SuperOperator::replacement(&alg, &x0, &tol()).unwrap();
        assert!((phi.predual().matrix() - gamma.matrix()).amax() < 1e-14);
    }

    #[test]
    fn predual_of_kraus_map() {
        let alg = TracialAlgebra::full(3);
        let mut rng = stream(5, "qmaps-test", 0);
        let ks: Vec<Element> = (0..2).map(|_| alg.random_element(&mut rng)).collect();
        let g = SuperOperator::from_kraus(&alg, &ks, &tol()).unwrap();
        let ks_adj: Vec<Element> = ks.iter().map(|k| k.adjoint()).collect();
        let h = SuperOperator::from_kraus(&alg, &ks_adj, &tol()).unwrap();
        assert!((g.predual().matrix() - h.matrix()).amax() < 1e-12);
    }

    #[test]
    fn depolarizing_scales_bloch_vector() {
        let alg = TracialAlgebra::full(2);
        let eps = 0.3;
        let g = SuperOperator::depolarizing(&alg, eps, &tol()).unwrap();
        // x = 1 + r·σ, τ-normalized state with Bloch vector r
        let r = [0.3, -0.4, 0.5];
        let mut x = alg.identity();
        x.blocks[0][(0, 0)] += C64::new(r[2], 0.0);
        x.blocks[0][(1, 1)] -= C64::new(r[2], 0.0);
        x.blocks[0][(0, 1)] = C64::new(r[0], -r[1]);
        x.blocks[0][(1, 0)] = C64::new(r[0], r[1]);
        let y = g.projective_action(&x, &tol()).unwrap();
        assert!((y.blocks[0][(0, 0)].re - 1.0 - (1.0 - eps) * r[2]).abs() < 1e-14);
        assert!((y.blocks[0][(1, 0)] - C64::new(r[0], r[1]) * (1.0 - eps)).norm() < 1e-14);
        assert_eq!(g.flags().completely_positive, Tri::Yes);
        assert_eq!(g.flags().unital, Tri::Yes);
        assert_eq!(g.flags().tracial, Tri::Yes);
    }

    #[test]
    fn transpose_is_positive_not_cp() {
        let alg = TracialAlgebra::full(2);
        let t = SuperOperator::transpose(&alg, &tol());
        assert_eq!(t.flags().completely_positive, Tri::No);
        assert_eq!(t.flags().positive, Tri::Yes);
        assert_eq!(t.flags().positive_probes, POSITIVITY_PROBES);
        assert_eq!(t.flags().faithful, Tri::Yes);
        let mut rng = stream(6, "qmaps-test", 0);
        let x = alg.random_element(&mut rng);
        assert!(t.apply(&x).max_abs_diff(&Element { blocks: vec![x.blocks[0].transpose()] }) < 1e-14);
    }

    #[test]
    fn compression_is_not_faithful() {
        let alg = TracialAlgebra::full(2);
        let q = alg.diag(&[&[0.0, 1.0]]).unwrap();
        let g = SuperOperator::from_kraus(&alg, &[q], &tol()).unwrap();
        assert_eq!(g.flags().faithful, Tri::No);
        let p = alg.diag(&[&[2.0, 0.0]]).unwrap();
        assert!(matches!(g.projective_action(&p, &tol()), Err(Error::KernelState(_))));
    }

    #[test]
    fn strongly_summable_faithfulness_follows_sum() {
        let alg = TracialAlgebra::full(2);
        let p0 = alg.diag(&[&[1.0, 0.0]]).unwrap();
        let p1 = alg.diag(&[&[0.0, 1.0]]).unwrap();
        let m = alg.identity();
        let g = SuperOperator::from_strongly_summable(&alg, &[(p0.clone(), m.clone()), (p1, m.clone())], &tol()).unwrap();
        assert_eq!(g.flags().faithful, Tri::Yes);
        let h = SuperOperator::from_strongly_summable(&alg, &[(p0, m)], &tol()).unwrap();
        assert_eq!(h.flags().faithful, Tri::No);
    }

    #[test]
    fn non_hermiticity_preserving_matrix_is_rejected() {
        let alg = TracialAlgebra::full(2);
        let mut m = DMatrix::<C64>::identity(4, 4);
        m[(0, 1)] = C64::new(0.0, 0.5);
        assert!(SuperOperator::from_complex_matrix(&alg, &m, &tol()).is_err());
    }

    #[test]
    fn identity_on_two_blocks_is_reducible() {
        let alg = TracialAlgebra::new(&[2, 2], &[1.0, 1.0]).unwrap();
        let g = SuperOperator::from_kraus(&alg, &[alg.identity()], &tol()).unwrap();
        let mut rng = stream(7, "qmaps-test", 0);
        assert!(matches!(g.irreducibility_probe(None, &mut rng), Irreducibility::Reducible { .. }));
    }

    #[test]
    fn unitalization_is_unital_and_tracial() {
        let alg = TracialAlgebra::full(2);
        let g = SuperOperator::depolarizing(&alg, 0.4, &tol()).unwrap().rescaled(0.7);
        let u = g.unitalized(&tol()).unwrap();
        assert_eq!(u.flags().unital, Tri::Yes);
        assert_eq!(u.flags().tracial, Tri::Yes);
        assert_eq!(u.flags().completely_positive, Tri::Yes);
    }
}
