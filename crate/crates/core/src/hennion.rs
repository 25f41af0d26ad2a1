//! The m-quantity `m(x, y) = max{λ : λy ≤ x}`, the Hennion metric built
//! from it, and the line-segment geometry of the state space.
//!
//! Three independent routes to `m` are provided: a generalized eigenvalue
//! pencil, bisection on the order relation, and sampling of the infimum
//! `inf τ(xa)/τ(ya)` over positive `a`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{eigh, gaussian_cmat, gaussian_cvec, CMat, CVec, Element, Norm, TracialAlgebra};
use crate::config::Tolerances;
use crate::error::{Error, Result};

/// Which route produced an m-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MMethod {
    EigenPencil,
    Bisection,
    InfSampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MQuantity {
    pub value: f64,
    pub method: MMethod,
    /// A λ for which `x − λy` is verified positive.
    pub certificate: f64,
}

/// Minimizer data for the pencil `inf ⟨w, Aw⟩ / ⟨w, Bw⟩`.
#[derive(Debug, Clone)]
pub struct PencilMin {
    pub value: f64,
    /// Block and vector attaining the infimum; `None` when the value is infinite.
    pub argmin: Option<(usize, CVec)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineDecomposition {
    pub t_plus: f64,
    pub t_minus: f64,
    pub a_plus: Element,
    pub a_minus: Element,
    pub r: f64,
    pub s: f64,
}

impl LineDecomposition {
    /// `(t₊ − t₋)/(t₋ + t₊ − 2t₋t₊)`.
    pub fn distance(&self) -> f64 {
        let (tp, tm) = (self.t_plus, self.t_minus);
        ((tp - tm) / (tm + tp - 2.0 * tm * tp)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentVerdict {
    SameComponent,
    DistanceOne,
}

// ---------------------------------------------------------------------------
// pencil

fn block_pencil(a: &CMat, b: &CMat, thr_a: f64, thr_b: f64, support_tol: f64) -> (f64, Option<CVec>) {
    let n = a.nrows();
    let (vb, ub) = eigh(b);
    if vb.last().is_none_or(|&v| v <= thr_b) {
        return (f64::INFINITY, None);
    }
    let (va, ua) = eigh(a);
    let supp: Vec<usize> = (0..n).filter(|&i| va[i] > thr_a).collect();
    let kern: Vec<usize> = (0..n).filter(|&i| va[i] <= thr_a).collect();

    if !kern.is_empty() {
        let uk = ua.select_columns(&kern);
        let pb_cols: Vec<usize> = (0..n).filter(|&i| vb[i] > thr_b).collect();
        let pb = ub.select_columns(&pb_cols);
        // ‖(1 − p_A) p_B‖ = ‖U_kᵀ V_B‖
        let overlap = crate::algebra::op_norm(&(uk.adjoint() * &pb));
        if overlap > support_tol {
            let k = uk.adjoint() * b * &uk;
            let (_, zk) = eigh(&k);
            let z = zk.column(zk.ncols() - 1).into_owned();
            return (0.0, Some(&uk * z));
        }
    }
    if supp.is_empty() {
        return (f64::INFINITY, None);
    }
    let mut w = ua.select_columns(&supp);
    for (k, &i) in supp.iter().enumerate() {
        let s = 1.0 / va[i].sqrt();
        for r in 0..n {
            w[(r, k)] *= s;
        }
    }
    let c = w.adjoint() * b * &w;
    let (vc, zc) = eigh(&c);
    let top = *vc.last().expect("non-empty");
    if top <= 0.0 {
        return (f64::INFINITY, None);
    }
    let z = zc.column(zc.ncols() - 1).into_owned();
    (1.0 / top, Some(&w * z))
}

/// `inf ⟨w, Aw⟩/⟨w, Bw⟩` over vectors with `⟨w, Bw⟩ > 0`, blockwise, for
/// positive `A` and `B`. Zero when `supp B ⊄ supp A`.
pub fn pencil(alg: &TracialAlgebra, a: &Element, b: &Element, tol: &Tolerances) -> Result<PencilMin> {
    alg.check(a)?;
    alg.check(b)?;
    let lb = alg.lambda_max(b);
    if !(lb > 0.0) {
        return Err(Error::ZeroInput);
    }
    let la = alg.lambda_max(a).max(0.0);
    let thr_a = tol.rank_tol * la;
    let thr_b = tol.rank_tol * lb;
    let mut best = PencilMin { value: f64::INFINITY, argmin: None };
    for (i, (ab, bb)) in a.blocks.iter().zip(&b.blocks).enumerate() {
        let (v, w) = if la > 0.0 {
            block_pencil(ab, bb, thr_a, thr_b, tol.support_tol)
        } else {
            let (vb, ub) = eigh(bb);
            match vb.last() {
                Some(&top) if top > thr_b => (0.0, Some(ub.column(ub.ncols() - 1).into_owned())),
                _ => (f64::INFINITY, None),
            }
        };
        if v < best.value {
            best = PencilMin { value: v, argmin: w.map(|w| (i, w)) };
        }
    }
    Ok(best)
}

fn check_pair(alg: &TracialAlgebra, x: &Element, y: &Element) -> Result<()> {
    alg.check(x)?;
    alg.check(y)?;
    if alg.norm(x, Norm::Inf) == 0.0 || alg.norm(y, Norm::Inf) == 0.0 {
        return Err(Error::ZeroInput);
    }
    Ok(())
}

/// `m(x, y)` from the eigenvalue pencil on the support of `x`.
pub fn m_quantity(alg: &TracialAlgebra, x: &Element, y: &Element, tol: &Tolerances) -> Result<MQuantity> {
    check_pair(alg, x, y)?;
    let p = pencil(alg, x, y, tol)?;
    let cap = alg.tr(x) / alg.tr(y);
    let value = p.value.min(cap).max(0.0);
    Ok(MQuantity { value, method: MMethod::EigenPencil, certificate: (value - 1e-12).max(0.0) })
}

/// PSD test used by the bisection routes, with a tolerance relative to the
/// size of the two terms.
fn combo_is_psd(alg: &TracialAlgebra, x: &Element, sx: f64, y: &Element, sy: f64, nx: f64, ny: f64) -> bool {
    let z = x.scale(sx).axpy(sy, y);
    let slack = 1e-13 * (sx.abs() * nx + sy.abs() * ny);
    alg.lambda_min(&z.hermitian_part()) >= -slack
}

/// `m(x, y)` by bisection on positivity of `x − λy` in `[0, τ(x)/τ(y)]`.
pub fn m_quantity_bisection(alg: &TracialAlgebra, x: &Element, y: &Element, width: f64) -> Result<MQuantity> {
    check_pair(alg, x, y)?;
    let nx = alg.norm(x, Norm::Inf);
    let ny = alg.norm(y, Norm::Inf);
    let psd = |lam: f64| combo_is_psd(alg, x, 1.0, y, -lam, nx, ny);
    let mut lo = 0.0;
    let mut hi = alg.tr(x) / alg.tr(y);
    if psd(hi) {
        return Ok(MQuantity { value: hi, method: MMethod::Bisection, certificate: hi });
    }
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if psd(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MQuantity { value: lo, method: MMethod::Bisection, certificate: lo })
}

/// Upper estimate `min τ(xa)/τ(ya)` over sampled positive probes `a`,
/// alternating rank-one and full-rank.
pub fn m_quantity_inf_sampling<R: Rng + ?Sized>(
    alg: &TracialAlgebra,
    x: &Element,
    y: &Element,
    n_samples: usize,
    rng: &mut R,
) -> Result<MQuantity> {
    check_pair(alg, x, y)?;
    let mut best = f64::INFINITY;
    for k in 0..n_samples {
        let mut a = alg.zero();
        if k % 2 == 0 {
            let b = rng.random_range(0..alg.num_blocks());
            let v = gaussian_cvec(rng, alg.dims()[b]);
            a.blocks[b] = &v * v.adjoint();
        } else {
            for (blk, &n) in a.blocks.iter_mut().zip(alg.dims()) {
                let g = gaussian_cmat(rng, n, n);
                *blk = &g * g.adjoint();
            }
        }
        let den = alg.trace_product(y, &a).re;
        if den <= 0.0 {
            continue;
        }
        let num = alg.trace_product(x, &a).re.max(0.0);
        best = best.min(num / den);
    }
    if !best.is_finite() {
        return Err(Error::DegenerateSampling);
    }
    Ok(MQuantity { value: best, method: MMethod::InfSampling, certificate: f64::NAN })
}

/// `d` from the product `m(x,y)·m(y,x)`.
pub fn distance_from_product(p: f64) -> f64 {
    if p < 1e-15 {
        return 1.0;
    }
    ((1.0 - p) / (1.0 + p)).clamp(0.0, 1.0)
}

/// `(m(x,y), m(y,x), d(x,y))`.
pub fn distance_parts(alg: &TracialAlgebra, x: &Element, y: &Element, tol: &Tolerances) -> Result<(f64, f64, f64)> {
    let mxy = m_quantity(alg, x, y, tol)?.value;
    let myx = m_quantity(alg, y, x, tol)?.value;
    Ok((mxy, myx, distance_from_product(mxy * myx)))
}

/// Hennion distance `(1 − m(x,y)m(y,x))/(1 + m(x,y)m(y,x))`.
pub fn hennion_distance(alg: &TracialAlgebra, x: &Element, y: &Element, tol: &Tolerances) -> Result<f64> {
    Ok(distance_parts(alg, x, y, tol)?.2)
}

/// Extreme points of the segment through `x` and `y` inside the state space.
pub fn line_decomposition(alg: &TracialAlgebra, x: &Element, y: &Element, tol: &Tolerances) -> Result<LineDecomposition> {
    check_pair(alg, x, y)?;
    let h = x - y;
    let gap = alg.norm(&h, Norm::One);
    if gap <= tol.state_eq_tol {
        return Err(Error::DegeneratePair);
    }
    let bound = 2.0 / gap;
    let ny = alg.norm(y, Norm::Inf);
    let nh = alg.norm(&h, Norm::Inf);
    // y + t(x − y)
    let psd = |t: f64| combo_is_psd(alg, y, 1.0, &h, t, ny, nh);
    let width = 1e-13 * bound.max(1.0);

    let t_plus = {
        let (mut lo, mut hi) = (1.0, bound.max(1.0));
        if psd(hi) {
            hi
        } else {
            while hi - lo > width {
                let mid = 0.5 * (lo + hi);
                if psd(mid) {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            lo
        }
    };
    let t_minus = {
        let (mut lo, mut hi) = (-bound, 0.0);
        if psd(lo) {
            lo
        } else {
            while hi - lo > width {
                let mid = 0.5 * (lo + hi);
                if psd(mid) {
                    hi = mid
                } else {
                    lo = mid
                }
            }
            hi
        }
    };
    let a_plus = y.axpy(t_plus, &h).hermitian_part();
    let a_minus = y.axpy(t_minus, &h).hermitian_part();
    let span = t_plus - t_minus;
    Ok(LineDecomposition { t_plus, t_minus, a_plus, a_minus, r: (t_plus - 1.0) / span, s: t_plus / span })
}

/// Whether two states lie at distance one.
pub fn classify_component(alg: &TracialAlgebra, x: &Element, y: &Element, tol: &Tolerances) -> Result<ComponentVerdict> {
    let (mxy, myx, _) = distance_parts(alg, x, y, tol)?;
    Ok(if mxy * myx < 1e-15 { ComponentVerdict::DistanceOne } else { ComponentVerdict::SameComponent })
}
