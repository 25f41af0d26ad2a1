//! Finite-dimensional tracial algebras `M = ⊕ᵢ M_{nᵢ}(ℂ)` with trace
//! `τ = Σᵢ cᵢ Tr`, their elements, norms, order and support projections.
//!
//! Elements are stored as dense per-block complex matrices. In finite
//! dimension `L¹(M, τ)` and `M` coincide as sets, so one element type serves
//! both.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// A multimatrix algebra with a faithful tracial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracialAlgebra {
    dims: Vec<usize>,
    weights: Vec<f64>,
}

/// Which norm to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    One,
    Two,
    Inf,
}

/// Outcome of a positivity test.
#[derive(Debug, Clone)]
pub struct Positivity {
    pub positive: bool,
    pub min_eigenvalue: f64,
    /// Offending `(block, eigenvalue, eigenvector)` when not positive.
    pub witness: Option<(usize, f64, CVec)>,
}

/// Which connected piece of the state space a state sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// Invertible (bounded with bounded inverse).
    Invertible,
    /// Singular boundary state.
    Singular,
}

/// Sampling recipe for [`TracialAlgebra::random_state`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Pure,
    Ranked(usize),
    Full,
    Boundary,
}

/// Block-diagonal complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub blocks: Vec<CMat>,
}

/// Positive element of trace one.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    elem: Element,
    min_eigenvalue: f64,
    component: Component,
}

// ---------------------------------------------------------------------------
// dense helpers

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// `U diag(f(λ)) U*` for a Hermitian matrix.
pub fn hermitian_func(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = eigh(m);
    spectral_sum(&vals, &vecs, f)
}

pub(crate) fn spectral_sum(vals: &[f64], vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vecs.nrows();
    let mut scaled = vecs.clone();
    for (k, &v) in vals.iter().enumerate() {
        let s = f(v);
        for r in 0..n {
            scaled[(r, k)] *= s;
        }
    }
    &scaled * vecs.adjoint()
}

pub(crate) fn max_asym(m: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn op_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub(crate) fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub(crate) fn gaussian_cmat<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| gaussian_c64(rng))
}

pub(crate) fn gaussian_cvec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| gaussian_c64(rng))
}

/// Haar-distributed unitary from the QR decomposition of a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let g = gaussian_cmat(rng, n, n);
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Isometry `C^cols -> C^rows` (rows >= cols) with orthonormal columns.
pub fn random_isometry<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let g = gaussian_cmat(rng, rows, cols);
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..cols {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..rows {
            q[(i, j)] *= phase;
        }
    }
    q
}

// ---------------------------------------------------------------------------
// algebra

impl TracialAlgebra {
    /// Builds `⊕ M_{nᵢ}` with weights rescaled so that `Σ cᵢ nᵢ = 1`.
    ///
    /// Weights that already satisfy the normalization within `1e-12` are kept
    /// verbatim so that files round-trip exactly.
    pub fn new(block_dims: &[usize], raw_weights: &[f64]) -> Result<Self> {
        if block_dims.is_empty() {
            return Err(Error::InvalidInput("algebra needs at least one block".into()));
        }
        if block_dims.len() != raw_weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} block dims but {} weights",
                block_dims.len(),
                raw_weights.len()
            )));
        }
        if let Some(d) = block_dims.iter().find(|&&d| d == 0) {
            return Err(Error::InvalidInput(format!("block dimension {d} is not positive")));
        }
        if let Some(w) = raw_weights.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!("trace weight {w} is not strictly positive")));
        }
        let total: f64 = block_dims.iter().zip(raw_weights).map(|(&n, &w)| n as f64 * w).sum();
        let weights = if (total - 1.0).abs() <= 1e-12 {
            raw_weights.to_vec()
        } else {
            raw_weights.iter().map(|w| w / total).collect()
        };
        Ok(Self { dims: block_dims.to_vec(), weights })
    }

    /// `M_n(ℂ)` with the normalized trace `Tr / n`.
    pub fn full(n: usize) -> Self {
        Self::new(&[n], &[1.0]).expect("n > 0")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    /// Real dimension of the space of Hermitian elements, `Σ nᵢ²`.
    pub fn coord_dim(&self) -> usize {
        self.dims.iter().map(|n| n * n).sum()
    }

    /// Dimension of the Hilbert space the blocks act on, `Σ nᵢ`.
    pub fn hilbert_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn max_block_dim(&self) -> usize {
        *self.dims.iter().max().expect("non-empty")
    }

    pub fn zero(&self) -> Element {
        Element { blocks: self.dims.iter().map(|&n| CMat::zeros(n, n)).collect() }
    }

    pub fn identity(&self) -> Element {
        Element { blocks: self.dims.iter().map(|&n| CMat::identity(n, n)).collect() }
    }

    /// Element from explicit blocks; shapes are checked.
    pub fn element(&self, blocks: Vec<CMat>) -> Result<Element> {
        let e = Element { blocks };
        self.check(&e)?;
        Ok(e)
    }

    /// Diagonal element from real diagonal entries, block by block.
    pub fn diag(&self, entries: &[&[f64]]) -> Result<Element> {
        if entries.len() != self.dims.len() {
            return Err(Error::ShapeMismatch("one diagonal per block expected".into()));
        }
        let mut blocks = Vec::with_capacity(self.dims.len());
        for (&n, d) in self.dims.iter().zip(entries) {
            if d.len() != n {
                return Err(Error::ShapeMismatch(format!("diagonal of length {} for block {n}", d.len())));
            }
            blocks.push(CMat::from_diagonal(&CVec::from_iterator(n, d.iter().map(|&v| C64::new(v, 0.0)))));
        }
        Ok(Element { blocks })
    }

    pub fn check(&self, x: &Element) -> Result<()> {
        if x.blocks.len() != self.dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "element has {} blocks, algebra has {}",
                x.blocks.len(),
                self.dims.len()
            )));
        }
        for (i, (b, &n)) in x.blocks.iter().zip(&self.dims).enumerate() {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::ShapeMismatch(format!(
                    "block {i} is {}x{}, expected {n}x{n}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        Ok(())
    }

    /// `τ(x) = Σᵢ cᵢ Tr(xᵢ)`.
    pub fn trace(&self, x: &Element) -> C64 {
        x.blocks.iter().zip(&self.weights).map(|(b, &c)| b.trace() * c).sum()
    }

    /// Real part of the trace, for Hermitian inputs.
    pub fn tr(&self, x: &Element) -> f64 {
        self.trace(x).re
    }

    /// `τ(xy)` without forming the product.
    pub fn trace_product(&self, x: &Element, y: &Element) -> C64 {
        let mut acc = ZERO;
        for ((a, b), &c) in x.blocks.iter().zip(&y.blocks).zip(&self.weights) {
            let mut s = ZERO;
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    s += a[(i, j)] * b[(j, i)];
                }
            }
            acc += s * c;
        }
        acc
    }

    pub fn norm(&self, x: &Element, which: Norm) -> f64 {
        match which {
            Norm::One => x
                .blocks
                .iter()
                .zip(&self.weights)
                .map(|(b, &c)| if b.nrows() == 0 { 0.0 } else { c * b.clone().singular_values().sum() })
                .sum(),
            Norm::Two => self.trace_product(&x.adjoint(), x).re.max(0.0).sqrt(),
            Norm::Inf => x.blocks.iter().map(op_norm).fold(0.0, f64::max),
        }
    }

    /// `(x + x*)/2` when the asymmetry is at most `tol`, error otherwise.
    pub fn hermitize(&self, x: &Element, tol: f64) -> Result<Element> {
        let asym = x.max_asymmetry();
        if asym > tol {
            return Err(Error::NotHermitian(asym));
        }
        Ok(x.hermitian_part())
    }

    /// Per-block sorted eigendecomposition of a Hermitian element.
    pub fn eigh_blocks(&self, x: &Element) -> Vec<(Vec<f64>, CMat)> {
        x.blocks.iter().map(eigh).collect()
    }

    /// Largest eigenvalue over all blocks.
    pub fn lambda_max(&self, x: &Element) -> f64 {
        self.eigh_blocks(x)
            .iter()
            .filter_map(|(v, _)| v.last().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest eigenvalue over all blocks.
    pub fn lambda_min(&self, x: &Element) -> f64 {
        self.eigh_blocks(x)
            .iter()
            .filter_map(|(v, _)| v.first().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// PSD test: true iff every eigenvalue is at least `-tol`.
    pub fn is_positive(&self, x: &Element, tol: f64) -> Result<Positivity> {
        self.check(x)?;
        let asym = x.max_asymmetry();
        if asym > tol.max(1e-10) {
            return Err(Error::NotHermitian(asym));
        }
        let mut min_ev = f64::INFINITY;
        let mut witness = None;
        for (i, b) in x.blocks.iter().enumerate() {
            let (vals, vecs) = eigh(b);
            if let Some(&v) = vals.first() {
                if v < min_ev {
                    min_ev = v;
                    witness = Some((i, v, vecs.column(0).into_owned()));
                }
            }
        }
        let positive = min_ev >= -tol;
        Ok(Positivity { positive, min_eigenvalue: min_ev, witness: if positive { None } else { witness } })
    }

    /// Projection onto eigenvectors with eigenvalue `> rank_tol · λ_max`.
    pub fn support_projection(&self, x: &Element, rank_tol: f64) -> Element {
        let spectra = self.eigh_blocks(x);
        let lmax = spectra.iter().filter_map(|(v, _)| v.last().copied()).fold(0.0, f64::max);
        let cut = rank_tol * lmax;
        Element {
            blocks: spectra
                .iter()
                .map(|(vals, vecs)| spectral_sum(vals, vecs, |v| if lmax > 0.0 && v > cut { 1.0 } else { 0.0 }))
                .collect(),
        }
    }

    /// Applies a real function to the spectrum of a Hermitian element.
    pub fn func(&self, x: &Element, f: impl Fn(f64) -> f64 + Copy) -> Element {
        Element { blocks: x.blocks.iter().map(|b| hermitian_func(b, f)).collect() }
    }

    /// Validates and wraps a state.
    pub fn state(&self, x: Element, tol: &Tolerances) -> Result<State> {
        self.check(&x)?;
        let h = self.hermitize(&x, tol.herm_tol)?;
        let spectra = self.eigh_blocks(&h);
        let min_ev = spectra.iter().filter_map(|(v, _)| v.first().copied()).fold(f64::INFINITY, f64::min);
        let max_ev = spectra.iter().filter_map(|(v, _)| v.last().copied()).fold(f64::NEG_INFINITY, f64::max);
        if min_ev < -tol.pos_tol {
            return Err(Error::InvalidInput(format!("not positive: min eigenvalue {min_ev:.3e}")));
        }
        let t = self.trace(&h);
        if (t.re - 1.0).abs() > tol.trace_tol || t.im.abs() > tol.trace_tol {
            return Err(Error::InvalidInput(format!("trace {:.12} is not 1", t.re)));
        }
        let component = if min_ev > tol.rank_tol * max_ev { Component::Invertible } else { Component::Singular };
        Ok(State { elem: h, min_eigenvalue: min_ev, component })
    }

    /// Normalizes a non-zero positive element to a state.
    pub fn normalize(&self, x: &Element, tol: &Tolerances) -> Result<State> {
        let t = self.tr(x);
        if !(t > 0.0) {
            return Err(Error::ZeroInput);
        }
        self.state(x.scale(1.0 / t), tol)
    }

    /// Random state of the requested kind.
    pub fn random_state<R: Rng + ?Sized>(&self, kind: StateKind, rng: &mut R) -> State {
        let x = match kind {
            StateKind::Pure => {
                let b = rng.random_range(0..self.dims.len());
                self.pure_state(b, &gaussian_cvec(rng, self.dims[b]))
            }
            StateKind::Ranked(k) => {
                let k = k.max(1);
                let eligible: Vec<usize> = (0..self.dims.len()).filter(|&i| self.dims[i] >= k).collect();
                let b = if eligible.is_empty() {
                    self.dims.iter().enumerate().max_by_key(|(_, &n)| n).map(|(i, _)| i).unwrap_or(0)
                } else {
                    eligible[rng.random_range(0..eligible.len())]
                };
                let n = self.dims[b];
                let g = gaussian_cmat(rng, n, k.min(n));
                let mut e = self.zero();
                e.blocks[b] = &g * g.adjoint();
                e.scale(1.0 / self.tr(&e))
            }
            StateKind::Full => self.random_full_element(rng),
            StateKind::Boundary => {
                let full = self.random_full_element(rng);
                let b = rng.random_range(0..self.dims.len());
                let mut blocks = full.blocks;
                let (vals, vecs) = eigh(&blocks[b]);
                blocks[b] = spectral_sum(&vals, &vecs, |v| v);
                let mut zeroed = vals.clone();
                zeroed[0] = 0.0;
                blocks[b] = spectral_sum(&zeroed, &vecs, |v| v);
                let e = Element { blocks };
                e.scale(1.0 / self.tr(&e))
            }
        };
        let x = x.hermitian_part();
        let spectra = self.eigh_blocks(&x);
        let min_ev = spectra.iter().filter_map(|(v, _)| v.first().copied()).fold(f64::INFINITY, f64::min);
        let max_ev = spectra.iter().filter_map(|(v, _)| v.last().copied()).fold(f64::NEG_INFINITY, f64::max);
        let component = if min_ev > 1e-12 * max_ev { Component::Invertible } else { Component::Singular };
        State { elem: x, min_eigenvalue: min_ev, component }
    }

    fn random_full_element<R: Rng + ?Sized>(&self, rng: &mut R) -> Element {
        let delta = 1e-3;
        let blocks = self
            .dims
            .iter()
            .map(|&n| {
                let g = gaussian_cmat(rng, n, n);
                g.adjoint() * &g + CMat::identity(n, n).scale(delta)
            })
            .collect();
        let e = Element { blocks };
        e.scale(1.0 / self.tr(&e))
    }

    /// `vv*/τ(vv*)` for a vector in block `b`.
    pub fn pure_state(&self, b: usize, v: &CVec) -> Element {
        let mut e = self.zero();
        let nv = v.norm_squared();
        e.blocks[b] = (v * v.adjoint()).scale(1.0 / (self.weights[b] * nv));
        e
    }

    /// Random element with Gaussian entries.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> Element {
        Element { blocks: self.dims.iter().map(|&n| gaussian_cmat(rng, n, n)).collect() }
    }

    /// Random Hermitian element with Gaussian entries.
    pub fn random_hermitian<R: Rng + ?Sized>(&self, rng: &mut R) -> Element {
        self.random_element(rng).hermitian_part()
    }

    /// Random element with operator norm at most one.
    pub fn random_contraction<R: Rng + ?Sized>(&self, rng: &mut R) -> Element {
        let x = self.random_element(rng);
        let n = self.norm(&x, Norm::Inf);
        let s: f64 = rng.random_range(0.5..1.0);
        x.scale(s / n)
    }

    /// Blockwise unitary drawn from Haar measure on each block.
    pub fn random_unitary<R: Rng + ?Sized>(&self, rng: &mut R) -> Element {
        Element { blocks: self.dims.iter().map(|&n| random_unitary(rng, n)).collect() }
    }

    /// Block and in-block index of a global Hilbert-space index.
    pub fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (b, &n) in self.dims.iter().enumerate() {
            if idx < n {
                return (b, idx);
            }
            idx -= n;
        }
        panic!("index outside Hilbert space")
    }

    /// Block-diagonal embedding into `B(ℂ^{Σ nᵢ})`.
    pub fn to_dense(&self, x: &Element) -> CMat {
        let d = self.hilbert_dim();
        let mut m = CMat::zeros(d, d);
        let mut off = 0;
        for b in &x.blocks {
            let n = b.nrows();
            m.view_mut((off, off), (n, n)).copy_from(b);
            off += n;
        }
        m
    }

    /// Compression of a dense operator onto the block diagonal.
    pub fn pinch(&self, m: &CMat) -> Element {
        let mut off = 0;
        let mut blocks = Vec::with_capacity(self.dims.len());
        for &n in &self.dims {
            blocks.push(m.view((off, off), (n, n)).into_owned());
            off += n;
        }
        Element { blocks }
    }
}

// ---------------------------------------------------------------------------
// elements

impl Element {
    pub fn adjoint(&self) -> Element {
        Element { blocks: self.blocks.iter().map(|b| b.adjoint()).collect() }
    }

    pub fn scale(&self, s: f64) -> Element {
        Element { blocks: self.blocks.iter().map(|b| b.scale(s)).collect() }
    }

    pub fn scale_c(&self, s: C64) -> Element {
        Element { blocks: self.blocks.iter().map(|b| b * s).collect() }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Element) -> Element {
        Element { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a + b.scale(s)).collect() }
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.blocks.iter().map(max_asym).fold(0.0, f64::max)
    }

    pub fn hermitian_part(&self) -> Element {
        Element { blocks: self.blocks.iter().map(|b| (b + b.adjoint()).scale(0.5)).collect() }
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &Element) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

impl Add for &Element {
    type Output = Element;
    fn add(self, rhs: &Element) -> Element {
        Element { blocks: self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &Element {
    type Output = Element;
    fn sub(self, rhs: &Element) -> Element {
        Element { blocks: self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a - b).collect() }
    }
}

impl Mul for &Element {
    type Output = Element;
    fn mul(self, rhs: &Element) -> Element {
        Element { blocks: self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a * b).collect() }
    }
}

impl Neg for &Element {
    type Output = Element;
    fn neg(self) -> Element {
        self.scale(-1.0)
    }
}

impl State {
    pub fn element(&self) -> &Element {
        &self.elem
    }

    pub fn into_element(self) -> Element {
        self.elem
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn component(&self) -> Component {
        self.component
    }

    pub fn is_invertible(&self) -> bool {
        self.component == Component::Invertible
    }
}

impl AsRef<Element> for State {
    fn as_ref(&self) -> &Element {
        &self.elem
    }
}

impl AsRef<Element> for Element {
    fn as_ref(&self) -> &Element {
        self
    }
}

// ---------------------------------------------------------------------------
// matrix files

/// Algebra description as stored in files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraSpec {
    pub dims: Vec<usize>,
    pub weights: Vec<f64>,
}

impl AlgebraSpec {
    pub fn build(&self) -> Result<TracialAlgebra> {
        TracialAlgebra::new(&self.dims, &self.weights)
    }
}

impl From<&TracialAlgebra> for AlgebraSpec {
    fn from(a: &TracialAlgebra) -> Self {
        Self { dims: a.dims.clone(), weights: a.weights.clone() }
    }
}

/// Blocks as nested arrays of `[re, im]` pairs, row-major.
pub type BlocksJson = Vec<Vec<Vec<[f64; 2]>>>;

pub fn blocks_to_json(x: &Element) -> BlocksJson {
    x.blocks
        .iter()
        .map(|b| (0..b.nrows()).map(|i| (0..b.ncols()).map(|j| [b[(i, j)].re, b[(i, j)].im]).collect()).collect())
        .collect()
}

pub fn blocks_from_json(alg: &TracialAlgebra, raw: &BlocksJson) -> Result<Element> {
    if raw.len() != alg.num_blocks() {
        return Err(Error::ShapeMismatch(format!("{} blocks given, algebra has {}", raw.len(), alg.num_blocks())));
    }
    let mut blocks = Vec::with_capacity(raw.len());
    for (bi, (rows, &n)) in raw.iter().zip(alg.dims()).enumerate() {
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch(format!("block {bi} must be {n}x{n}")));
        }
        blocks.push(CMat::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])));
    }
    Ok(Element { blocks })
}

/// On-disk matrix: `{"algebra": {...}, "blocks": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub algebra: AlgebraSpec,
    pub blocks: BlocksJson,
}

impl MatrixFile {
    pub fn new(alg: &TracialAlgebra, x: &Element) -> Self {
        Self { algebra: alg.into(), blocks: blocks_to_json(x) }
    }

    pub fn decode(&self) -> Result<(TracialAlgebra, Element)> {
        let alg = self.algebra.build()?;
        let x = blocks_from_json(&alg, &self.blocks)?;
        Ok((alg, x))
    }

    pub fn from_json(s: &str) -> Result<(TracialAlgebra, Element)> {
        let f: MatrixFile = serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("matrix file: {e}")))?;
        f.decode()
    }

    pub fn to_json(alg: &TracialAlgebra, x: &Element) -> String {
        serde_json::to_string_pretty(&Self::new(alg, x)).expect("serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn weights_are_normalized() {
        let a = TracialAlgebra::new(&[2], &[1.0]).unwrap();
        assert_eq!(a.weights(), &[0.5]);
        let b = TracialAlgebra::new(&[1, 1], &[1.0, 1.0]).unwrap();
        assert_eq!(b.weights(), &[0.5, 0.5]);
        // 1·2 + 2·3 = 8
        let m = TracialAlgebra::new(&[2, 3], &[1.0, 2.0]).unwrap();
        assert!((m.weights()[0] - 1.0 / 8.0).abs() < 1e-15);
        assert!((m.weights()[1] - 2.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn bad_algebras_are_rejected() {
        assert!(TracialAlgebra::new(&[], &[]).is_err());
        assert!(TracialAlgebra::new(&[2], &[0.0]).is_err());
        assert!(TracialAlgebra::new(&[2], &[-1.0]).is_err());
        assert!(TracialAlgebra::new(&[2, 2], &[1.0]).is_err());
    }

    #[test]
    fn trace_examples() {
        let m2 = TracialAlgebra::full(2);
        assert!((m2.trace(&m2.identity()) - ONE).norm() < 1e-15);
        let p = m2.diag(&[&[1.0, 0.0]]).unwrap();
        assert!((m2.tr(&p) - 0.5).abs() < 1e-15);
        let a = TracialAlgebra::new(&[2, 1], &[0.25, 0.5]).unwrap();
        let x = a.diag(&[&[2.0, 0.0], &[0.0]]).unwrap();
        assert!((a.tr(&x) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn norm_examples() {
        let m2 = TracialAlgebra::full(2);
        let one = m2.identity();
        for w in [Norm::One, Norm::Two, Norm::Inf] {
            assert!((m2.norm(&one, w) - 1.0).abs() < 1e-14);
        }
        let x = m2.diag(&[&[1.0, -1.0]]).unwrap();
        assert!((m2.norm(&x, Norm::One) - 1.0).abs() < 1e-14);
        assert!((m2.norm(&x, Norm::Inf) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn positivity_and_witness() {
        let m2 = TracialAlgebra::full(2);
        assert!(m2.is_positive(&m2.identity(), 1e-9).unwrap().positive);
        let x = m2.diag(&[&[1.0, -1e-3]]).unwrap();
        let p = m2.is_positive(&x, 1e-9).unwrap();
        assert!(!p.positive);
        let (_, ev, _) = p.witness.unwrap();
        assert!((ev + 1e-3).abs() < 1e-15);
        let mut skew = m2.zero();
        skew.blocks[0][(0, 1)] = c(1.0);
        assert!(matches!(m2.is_positive(&skew, 1e-9), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn support_examples() {
        let m2 = TracialAlgebra::full(2);
        let p = m2.support_projection(&m2.identity(), 1e-12);
        assert!(p.max_abs_diff(&m2.identity()) < 1e-14);
        let x = m2.diag(&[&[2.0, 0.0]]).unwrap();
        let p = m2.support_projection(&x, 1e-12);
        assert!(p.max_abs_diff(&m2.diag(&[&[1.0, 0.0]]).unwrap()) < 1e-14);
        let y = m2.diag(&[&[1.0, 1e-15]]).unwrap();
        let p = m2.support_projection(&y, 1e-12);
        assert!(p.max_abs_diff(&m2.diag(&[&[1.0, 0.0]]).unwrap()) < 1e-14);
    }

    #[test]
    fn pure_state_on_basis_vector() {
        let m2 = TracialAlgebra::full(2);
        let v = CVec::from_vec(vec![ONE, ZERO]);
        let x = m2.pure_state(0, &v);
        assert!(x.max_abs_diff(&m2.diag(&[&[2.0, 0.0]]).unwrap()) < 1e-15);
    }

    #[test]
    fn random_states_are_valid() {
        let tol = Tolerances::default();
        let alg = TracialAlgebra::new(&[2, 3], &[1.0, 2.0]).unwrap();
        let mut rng = stream(1, "algebra-test", 0);
        for kind in [StateKind::Pure, StateKind::Ranked(2), StateKind::Full, StateKind::Boundary] {
            for _ in 0..50 {
                let s = alg.random_state(kind, &mut rng);
                let again = alg.state(s.element().clone(), &tol).unwrap();
                match kind {
                    StateKind::Full => assert_eq!(again.component(), Component::Invertible),
                    _ => assert_eq!(again.component(), Component::Singular),
                }
            }
        }
    }

    #[test]
    fn matrix_file_round_trip_is_exact() {
        let alg = TracialAlgebra::new(&[2, 3], &[1.0, 2.0]).unwrap();
        let mut rng = stream(2, "algebra-test", 0);
        let x = alg.random_element(&mut rng);
        let s = MatrixFile::to_json(&alg, &x);
        let (alg2, x2) = MatrixFile::from_json(&s).unwrap();
        assert_eq!(alg, alg2);
        assert_eq!(x, x2);
        assert!(MatrixFile::from_json(r#"{"algebra":{"dims":[1],"weights":[1]},"blocks":[[[[1,0]]]],"extra":1}"#).is_err());
    }
}
