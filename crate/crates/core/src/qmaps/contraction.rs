//! Certified interval for the Hennion contraction constant.
//!
//! The lower end is a sampled and refined diameter of the projective image.
//! The upper end comes from the sandwich `η x₀ ≤ γ·x ≤ η⁻¹ x₀` around the
//! projective fixed point `x₀`, giving `c ≤ (1 − η⁴)/(1 + η⁴)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SuperOperator;
use crate::algebra::{gaussian_cvec, CVec, Element, Norm, StateKind, TracialAlgebra};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::hennion::{distance_from_product, m_quantity, pencil};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateOptions {
    /// Random state pairs for the sampled diameter.
    pub n_samples: usize,
    /// Coordinate-descent rounds per refinement start.
    pub refine_iters: usize,
    /// Best sampled pairs used as refinement starts.
    pub refine_starts: usize,
    /// Starts for each of the two η minimizations.
    pub eta_starts: usize,
    /// Skip the lower bound and report 0 (used when only the certificate matters).
    pub upper_only: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { n_samples: 200, refine_iters: 50, refine_starts: 4, eta_starts: 8, upper_only: false }
    }
}

#[derive(Debug, Clone)]
pub struct ContractionEstimate {
    pub lower: f64,
    pub upper: f64,
    pub fixed_point: Element,
    pub eta: f64,
    pub n_samples: usize,
    pub refine_iters: usize,
    /// Pure pair whose images realize `lower`.
    pub lower_pair: Option<(Element, Element)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedYes,
    CertifiedNo,
    Undecided,
}

/// Pure state `vv*` in `block`.
#[derive(Debug, Clone)]
struct Pure {
    block: usize,
    v: CVec,
}

impl Pure {
    fn element(&self, alg: &TracialAlgebra) -> Element {
        alg.pure_state(self.block, &self.v)
    }

    /// Top eigenvector of a positive element.
    fn dominant(alg: &TracialAlgebra, x: &Element) -> Self {
        let mut best = (f64::NEG_INFINITY, 0, CVec::zeros(0));
        for (b, (vals, vecs)) in alg.eigh_blocks(x).into_iter().enumerate() {
            if let Some(&top) = vals.last() {
                if top > best.0 {
                    best = (top, b, vecs.column(vecs.ncols() - 1).into_owned());
                }
            }
        }
        Pure { block: best.1, v: best.2 }
    }

    fn random<R: Rng + ?Sized>(alg: &TracialAlgebra, rng: &mut R) -> Self {
        let b = rng.random_range(0..alg.num_blocks());
        Pure { block: b, v: gaussian_cvec(rng, alg.dims()[b]) }
    }
}

fn projector(alg: &TracialAlgebra, block: usize, w: &CVec) -> Element {
    let mut p = alg.zero();
    p.blocks[block] = (w * w.adjoint()).scale(1.0 / w.norm_squared());
    p
}

/// `γ*(P_w)/c_b`, so that `⟨w, γ(X) w⟩ = c_x ⟨x, Q x⟩ / c_x` blockwise.
fn pulled_back(s: &SuperOperator, block: usize, w: &CVec) -> Element {
    let alg = s.algebra();
    s.apply_dual(&projector(alg, block, w)).hermitian_part().scale(1.0 / alg.weights()[block])
}

/// Projective fixed point by Banach iteration from the normalized identity.
/// After every 64 plain steps the iterated map is squared.
pub fn fixed_point(s: &SuperOperator, tol: &Tolerances) -> Result<Element> {
    let alg = s.algebra();
    let basis = s.basis();
    let u = basis.coords_herm(&alg.identity());
    let mut x = basis.coords_herm(&alg.identity());
    let mut m = s.matrix().clone();
    let mut last = f64::INFINITY;
    let rounds = 48;
    for _ in 0..rounds {
        for _ in 0..64 {
            let y = &m * &x;
            let t = y.dot(&u);
            if t <= tol.kernel_tol {
                return Err(Error::KernelState(t));
            }
            let y = y / t;
            let delta = alg.norm(&basis.element(&(&y - &x), None), Norm::One);
            x = y;
            last = delta;
            if delta <= tol.fixed_point_tol {
                return Ok(basis.element(&x, None));
            }
        }
        m = &m * &m;
        let top = m.amax();
        if top > 0.0 {
            m /= top;
        }
    }
    Err(Error::Convergence { iters: rounds * 64, last_step: last })
}

/// Minimizes `m(γ·u, γ·v)·m(γ·v, γ·u)` over pure pairs by exact block
/// coordinate steps; returns the product and the final pair.
fn refine_pair(s: &SuperOperator, mut u: Pure, mut v: Pure, iters: usize, tol: &Tolerances) -> (f64, Pure, Pure) {
    let alg = s.algebra();
    let mut best = f64::INFINITY;
    for _ in 0..=iters {
        let gu = s.apply(&u.element(alg)).hermitian_part();
        let gv = s.apply(&v.element(alg)).hermitian_part();
        let (Ok(p1), Ok(p2)) = (pencil(alg, &gv, &gu, tol), pencil(alg, &gu, &gv, tol)) else {
            break;
        };
        let prod = p1.value * p2.value;
        if prod <= 0.0 {
            return (0.0, u, v);
        }
        if prod >= best * (1.0 - 1e-13) {
            best = best.min(prod);
            break;
        }
        best = prod;
        let (Some((b1, w1)), Some((b2, w2))) = (p1.argmin, p2.argmin) else {
            break;
        };
        let q1 = pulled_back(s, b1, &w1);
        let q2 = pulled_back(s, b2, &w2);
        if let Ok(pv) = pencil(alg, &q1, &q2, tol) {
            if let Some((b, w)) = pv.argmin {
                v = Pure { block: b, v: w };
            }
        }
        if let Ok(pu) = pencil(alg, &q2, &q1, tol) {
            if let Some((b, w)) = pu.argmin {
                u = Pure { block: b, v: w };
            }
        }
    }
    (best, u, v)
}

#[derive(Clone, Copy)]
enum Side {
    /// `m(γ·x, x₀)`
    Below,
    /// `m(x₀, γ·x)`
    Above,
}

fn side_value(s: &SuperOperator, x0: &Element, p: &Pure, side: Side, tol: &Tolerances) -> Result<f64> {
    let g = s.projective_action(&p.element(s.algebra()), tol)?;
    Ok(match side {
        Side::Below => m_quantity(s.algebra(), &g, x0, tol)?.value,
        Side::Above => m_quantity(s.algebra(), x0, &g, tol)?.value,
    })
}

/// Alternating exact minimization of one side of the sandwich.
fn refine_side(
    s: &SuperOperator,
    x0: &Element,
    h: &Element,
    mut p: Pure,
    side: Side,
    iters: usize,
    tol: &Tolerances,
) -> Result<(f64, Pure)> {
    let alg = s.algebra();
    let mut best = side_value(s, x0, &p, side, tol)?;
    for _ in 0..iters {
        if best <= 0.0 {
            break;
        }
        let g = s.projective_action(&p.element(alg), tol)?;
        let pm = match side {
            Side::Below => pencil(alg, &g, x0, tol)?,
            Side::Above => pencil(alg, x0, &g, tol)?,
        };
        let Some((bw, w)) = pm.argmin else { break };
        let q = pulled_back(s, bw, &w);
        let next = match side {
            Side::Below => pencil(alg, &q, h, tol),
            Side::Above => pencil(alg, h, &q, tol),
        };
        let Ok(next) = next else { break };
        let Some((bx, xv)) = next.argmin else { break };
        let cand = Pure { block: bx, v: xv };
        let val = side_value(s, x0, &cand, side, tol)?;
        if val >= best * (1.0 - 1e-13) {
            best = best.min(val);
            break;
        }
        best = val;
        p = cand;
    }
    Ok((best, p))
}

/// Largest `η` found with `η x₀ ≤ γ·x ≤ η⁻¹ x₀` on pure states, and the
/// extremizers of the two sides.
fn eta_search<R: Rng + ?Sized>(
    s: &SuperOperator,
    x0: &Element,
    opts: &EstimateOptions,
    rng: &mut R,
    tol: &Tolerances,
) -> Result<(f64, Vec<Pure>)> {
    let alg = s.algebra();
    let one = alg.identity();
    let g1 = s.apply(&one).hermitian_part();
    let p0 = alg.support_projection(x0, tol.rank_tol);
    let outside = &one - &p0;
    let leak = &(&outside * &g1) * &outside;
    if alg.norm(&leak, Norm::Inf) > tol.support_tol * alg.norm(&g1, Norm::Inf) {
        return Ok((0.0, Vec::new()));
    }
    let h = s.apply_dual(&one).hermitian_part();
    let n_probe = opts.n_samples.max(64);
    let mut below: Vec<(f64, usize, Pure)> = Vec::new();
    let mut above: Vec<(f64, usize, Pure)> = Vec::new();
    for i in 0..n_probe {
        let p = Pure::random(alg, rng);
        below.push((side_value(s, x0, &p, Side::Below, tol)?, i, p.clone()));
        above.push((side_value(s, x0, &p, Side::Above, tol)?, i, p));
    }
    let mut eta = f64::INFINITY;
    let mut witnesses = Vec::new();
    for (mut list, side) in [(below, Side::Below), (above, Side::Above)] {
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut side_best = (f64::INFINITY, None);
        for (_, _, p) in list.into_iter().take(opts.eta_starts.max(1)) {
            let (v, q) = refine_side(s, x0, &h, p, side, 200, tol)?;
            if v < side_best.0 {
                side_best = (v, Some(q));
            }
        }
        eta = eta.min(side_best.0);
        witnesses.extend(side_best.1);
    }
    Ok((eta.clamp(0.0, 1.0), witnesses))
}

/// Certified contraction interval `[lower, upper]` for a faithful positive map.
pub fn contraction_estimate<R: Rng + ?Sized>(
    s: &SuperOperator,
    opts: &EstimateOptions,
    rng: &mut R,
    tol: &Tolerances,
) -> Result<ContractionEstimate> {
    use super::Tri;
    if s.flags().faithful == Tri::No {
        return Err(Error::NotFaithful("a faithful map is required; γ*(1) is singular and φ(M)M is not all of M".into()));
    }
    let alg = s.algebra();

    let mut lower = 0.0;
    let mut lower_pair = None;
    let mut starts: Vec<(f64, usize, Pure, Pure)> = Vec::new();
    if !opts.upper_only {
        for i in 0..opts.n_samples {
            let (ka, kb) = match i % 3 {
                0 => (StateKind::Pure, StateKind::Pure),
                1 => (StateKind::Boundary, StateKind::Boundary),
                _ => (StateKind::Pure, StateKind::Boundary),
            };
            let x = alg.random_state(ka, rng).into_element();
            let y = alg.random_state(kb, rng).into_element();
            let gx = s.projective_action(&x, tol)?;
            let gy = s.projective_action(&y, tol)?;
            let mxy = m_quantity(alg, &gx, &gy, tol)?.value;
            let myx = m_quantity(alg, &gy, &gx, tol)?.value;
            let d = distance_from_product(mxy * myx);
            if d > lower {
                lower = d;
                lower_pair = Some((x.clone(), y.clone()));
            }
            starts.push((d, i, Pure::dominant(alg, &x), Pure::dominant(alg, &y)));
        }
    }

    let fp = fixed_point(s, tol);
    let x0 = match fp {
        Ok(x0) => x0,
        Err(e) if lower < 1.0 - 1e-12 || opts.upper_only => return Err(e),
        Err(_) => alg.identity(),
    };

    let (eta, witnesses) = eta_search(s, &x0, opts, rng, tol)?;

    if !opts.upper_only {
        starts.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut pairs: Vec<(Pure, Pure)> =
            starts.into_iter().take(opts.refine_starts).map(|(_, _, u, v)| (u, v)).collect();
        if witnesses.len() == 2 {
            pairs.push((witnesses[0].clone(), witnesses[1].clone()));
        }
        for (u, v) in pairs {
            let (prod, u, v) = refine_pair(s, u, v, opts.refine_iters, tol);
            let d = distance_from_product(prod);
            if d > lower {
                lower = d;
                lower_pair = Some((u.element(alg), v.element(alg)));
            }
        }
    }

    if lower < tol.noise_floor {
        lower = 0.0;
    }
    let e4 = eta.powi(4);
    let mut upper = ((1.0 - e4) / (1.0 + e4)).clamp(lower, 1.0);
    if upper < tol.noise_floor {
        upper = 0.0;
    }
    Ok(ContractionEstimate {
        lower,
        upper,
        fixed_point: x0,
        eta,
        n_samples: opts.n_samples,
        refine_iters: opts.refine_iters,
        lower_pair,
    })
}

/// Verdict on `c(γ) < 1` from a computed interval.
pub fn is_strict_contraction(est: &ContractionEstimate) -> Verdict {
    if est.upper < 1.0 - 1e-6 {
        Verdict::CertifiedYes
    } else if est.lower > 1.0 - 1e-9 {
        Verdict::CertifiedNo
    } else {
        Verdict::Undecided
    }
}

/// `min(λ_min(γ·x − η x₀), λ_min(η⁻¹ x₀ − γ·x))`, scaled by `‖x₀‖_∞`.
pub fn sandwich_margin(s: &SuperOperator, x0: &Element, eta: f64, x: &Element, tol: &Tolerances) -> Result<f64> {
    let alg = s.algebra();
    let g = s.projective_action(x, tol)?;
    let scale = alg.norm(x0, Norm::Inf).max(alg.norm(&g, Norm::Inf));
    let lo = alg.lambda_min(&g.axpy(-eta, x0));
    let hi = if eta > 0.0 { alg.lambda_min(&x0.scale(1.0 / eta).axpy(-1.0, &g)) } else { f64::INFINITY };
    Ok(lo.min(hi) / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{C64, ONE};
    use crate::hennion::hennion_distance;
    use crate::rng::stream;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    /// Qubit pure state with Bloch angles, τ-normalized.
    fn bloch(alg: &TracialAlgebra, theta: f64, phi: f64) -> Element {
        let v = CVec::from_vec(vec![C64::new((theta / 2.0).cos(), 0.0), C64::from_polar((theta / 2.0).sin(), phi)]);
        alg.pure_state(0, &v)
    }

    #[test]
    fn replacement_interval_is_zero() {
        let alg = TracialAlgebra::full(2);
        let mut rng = stream(1, "contraction-test", 0);
        let x0 = alg.random_state(StateKind::Full, &mut rng).into_element();
        let g = SuperOperator::replacement(&alg, &x0, &tol()).unwrap();
        let est = contraction_estimate(&g, &EstimateOptions::default(), &mut rng, &tol()).unwrap();
        assert_eq!(est.lower, 0.0);
        assert_eq!(est.upper, 0.0);
        assert!(alg.norm(&(&est.fixed_point - &x0), Norm::One) < 1e-12);
        assert_eq!(is_strict_contraction(&est), Verdict::CertifiedYes);
    }

    #[test]
    fn transpose_is_an_isometry() {
        let alg = TracialAlgebra::full(2);
        let mut rng = stream(2, "contraction-test", 0);
        let g = SuperOperator::transpose(&alg, &tol());
        let est = contraction_estimate(&g, &EstimateOptions::default(), &mut rng, &tol()).unwrap();
        assert!(est.lower >= 0.99);
        assert_eq!(is_strict_contraction(&est), Verdict::CertifiedNo);
    }

    #[test]
    fn depolarizing_matches_grid_oracle() {
        let alg = TracialAlgebra::full(2);
        let g = SuperOperator::depolarizing(&alg, 0.5, &tol()).unwrap();
        // brute force over a Bloch-sphere grid
        let mut pts = Vec::new();
        for i in 0..=12 {
            for j in 0..12 {
                let th = std::f64::consts::PI * i as f64 / 12.0;
                let ph = 2.0 * std::f64::consts::PI * j as f64 / 12.0;
                pts.push(g.projective_action(&bloch(&alg, th, ph), &tol()).unwrap());
            }
        }
        let mut grid = 0.0f64;
        for a in &pts {
            for b in &pts {
                grid = grid.max(hennion_distance(&alg, a, b, &tol()).unwrap());
            }
        }
        assert!((grid - 0.8).abs() < 1e-9);
        let mut rng = stream(3, "contraction-test", 0);
        let est = contraction_estimate(&g, &EstimateOptions::default(), &mut rng, &tol()).unwrap();
        assert!(est.lower >= 0.8 - 1e-3 && est.lower <= 0.8 + 1e-9, "lower {}", est.lower);
        assert!((est.eta - 0.5).abs() < 1e-9, "eta {}", est.eta);
        assert!((est.upper - 15.0 / 17.0).abs() < 1e-9);
        assert_eq!(is_strict_contraction(&est), Verdict::CertifiedYes);
    }

    #[test]
    fn fixed_point_of_replacement_and_depolarizing() {
        let alg = TracialAlgebra::full(2);
        let x0 = alg.diag(&[&[1.5, 0.5]]).unwrap();
        let g = SuperOperator::replacement(&alg, &x0, &tol()).unwrap();
        assert!(fixed_point(&g, &tol()).unwrap().max_abs_diff(&x0) < 1e-14);
        let d = SuperOperator::depolarizing(&alg, 0.1, &tol()).unwrap();
        assert!(fixed_point(&d, &tol()).unwrap().max_abs_diff(&alg.identity()) < 1e-14);
    }

    #[test]
    fn fixed_point_is_unique_across_starts() {
        let alg = TracialAlgebra::full(3);
        let mut rng = stream(4, "contraction-test", 0);
        let target = alg.random_state(StateKind::Full, &mut rng).into_element();
        let g = SuperOperator::random_channel(&alg, 3, 0.1, &target, &mut rng, &tol()).unwrap();
        let x0 = fixed_point(&g, &tol()).unwrap();
        for _ in 0..10 {
            let mut x = alg.random_state(StateKind::Full, &mut rng).into_element();
            for _ in 0..2000 {
                x = g.projective_action(&x, &tol()).unwrap();
            }
            assert!(alg.norm(&(&x - &x0), Norm::One) < 1e-8);
        }
    }

    #[test]
    fn sandwich_holds_for_certified_map() {
        let alg = TracialAlgebra::full(2);
        let mut rng = stream(5, "contraction-test", 0);
        let target = alg.random_state(StateKind::Full, &mut rng).into_element();
        let g = SuperOperator::random_channel(&alg, 3, 0.2, &target, &mut rng, &tol()).unwrap();
        let est = contraction_estimate(&g, &EstimateOptions::default(), &mut rng, &tol()).unwrap();
        assert_eq!(is_strict_contraction(&est), Verdict::CertifiedYes);
        for _ in 0..300 {
            let x = alg.random_state(StateKind::Pure, &mut rng).into_element();
            assert!(sandwich_margin(&g, &est.fixed_point, est.eta, &x, &tol()).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn non_faithful_map_is_rejected() {
        let alg = TracialAlgebra::full(2);
        let mut q = alg.zero();
        q.blocks[0][(1, 1)] = ONE;
        let g = SuperOperator::from_kraus(&alg, &[q], &tol()).unwrap();
        let mut rng = stream(6, "contraction-test", 0);
        assert!(matches!(
            contraction_estimate(&g, &EstimateOptions::default(), &mut rng, &tol()),
            Err(Error::NotFaithful(_))
        ));
    }
}
