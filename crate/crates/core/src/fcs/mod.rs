//! Random finitely generated states on a spin chain: iterated generators,
//! the window values `Ψ_ω(a)`, translation covariance, clustering and
//! ergodic averages.

mod generator;
mod observable;

pub use generator::{FcsMaps, GeneratorEnsemble, GeneratorEnsembleSpec, GeneratorMap, GeneratorSpec};
pub use observable::{LocalObservable, DENSE_NORM_LIMIT};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{Element, Norm, C64, ZERO};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::process::{
    d_prefactor, default_kappa, estimate_rate_c, linear_fit, Direction, ProcessRecord, RandomMaps, RateEstimate,
    RecordOptions, Swapped,
};
use crate::rng::child_seed;

/// Correlations below this are treated as zero.
pub const CORR_FLOOR: f64 = 1e-14;

/// `N = max(30, ⌈5/|log κ|⌉)`.
pub fn default_window(kappa: f64) -> usize {
    if !(kappa > 0.0 && kappa < 1.0) {
        return 30;
    }
    30.max((5.0 / kappa.ln().abs()).ceil() as usize)
}

/// `E^{[m,n]}(a ⊗ 1_W)`, evaluated from site `n` down to site `m`.
pub fn iterate_generator(maps: &FcsMaps, m: i64, n: i64, a: &LocalObservable) -> Result<Element> {
    if a.start() < m || a.end() > n {
        return Err(Error::SupportExceeded(format!("[{}, {}] not inside [{m}, {n}]", a.start(), a.end())));
    }
    let bond = maps.bond();
    let one_site = maps.on_site().identity();
    let gens = (m..=n).map(|j| maps.generator_at(j)).collect::<Result<Vec<_>>>()?;
    let mut acc = bond.zero();
    for (t, (c, _)) in a.terms().iter().enumerate() {
        let mut x = bond.identity();
        for (i, g) in gens.iter().enumerate().rev() {
            let op = a.factor(t, m + i as i64).unwrap_or(&one_site);
            x = g.apply(op, &x)?;
        }
        acc = &acc + &x.scale_c(*c);
    }
    Ok(acc)
}

/// The same value through the induced process:
/// `φ_m ∘ ⋯ ∘ φ_{k−1}(E^{[k,ℓ]}(a))` with `[k, ℓ]` the interval of `a`.
pub fn factorized_value(maps: &FcsMaps, m: i64, n: i64, a: &LocalObservable) -> Result<Element> {
    if a.start() < m || a.end() > n {
        return Err(Error::SupportExceeded(format!("[{}, {}] not inside [{m}, {n}]", a.start(), a.end())));
    }
    let mut x = iterate_generator(maps, a.start(), a.end(), a)?;
    for j in (m..a.start()).rev() {
        x = maps.phi_at(j)?.apply(&x);
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PsiOptions {
    /// Length of the process behind `Z_{−N}`; 0 uses the window size.
    pub z_depth: usize,
    pub record: RecordOptions,
}


/// `Z_{−N} ≈ Γ_{−N−1, −N−L}·1` with the contraction interval of that
/// composition; `c_upper` is floored at the noise floor.
#[derive(Debug, Clone)]
pub struct ZEstimate {
    pub window: usize,
    pub depth: usize,
    pub state: Element,
    pub c_lower: f64,
    pub c_upper: f64,
}

pub fn z_estimate(maps: &FcsMaps, window: usize, opts: &PsiOptions, tol: &Tolerances) -> Result<ZEstimate> {
    let depth = if opts.z_depth == 0 { window.max(1) } else { opts.z_depth };
    let anchor = -(window as i64) - 1;
    let mut ro = opts.record;
    ro.stride = 0;
    ro.seed = child_seed(opts.record.seed, "z-estimate", anchor);
    let mut rec = ProcessRecord::new(Direction::GammaRight, anchor, maps.bond(), ro, tol);
    rec.grow(maps, depth, tol)?;
    rec.finalize(tol)?;
    let state = rec.composed().projective_action(&maps.bond().identity(), tol)?;
    Ok(ZEstimate { window, depth, state, c_lower: rec.c_lower(), c_upper: rec.c_upper().max(tol.noise_floor) })
}

#[derive(Debug, Clone)]
pub struct PsiEstimate {
    pub value: C64,
    pub window_n: usize,
    /// `8‖a‖_∞·c_upper` of the process behind `Z`.
    pub truncation_bound: f64,
    pub z_state: Element,
    pub z_c_upper: f64,
    /// `‖E^{[−N,N]}(a) − value·1‖_∞`.
    pub window_residual: f64,
    /// Set when the flanking process is not certified contracting.
    pub advisory: Option<String>,
}

/// `τ_W(E^{[−N,N]}(a)·Z)` with a precomputed `Z`.
pub fn psi_with(maps: &FcsMaps, z: &ZEstimate, a: &LocalObservable) -> Result<PsiEstimate> {
    let n = z.window as i64;
    let bond = maps.bond();
    let e = iterate_generator(maps, -n, n, a)?;
    let value = bond.trace_product(&e, &z.state);
    let window_residual = bond.norm(&(&e - &bond.identity().scale_c(value)), Norm::Inf);
    let advisory = (z.c_upper >= 1.0 - 1e-6).then(|| {
        format!(
            "flanking process not contracting after {} steps (c_upper {:.3e}); widen the window",
            z.depth, z.c_upper
        )
    });
    Ok(PsiEstimate {
        value,
        window_n: z.window,
        truncation_bound: 8.0 * a.norm_inf() * z.c_upper,
        z_state: z.state.clone(),
        z_c_upper: z.c_upper,
        window_residual,
        advisory,
    })
}

pub fn psi_value(maps: &FcsMaps, a: &LocalObservable, window: usize, opts: &PsiOptions, tol: &Tolerances) -> Result<PsiEstimate> {
    let n = window as i64;
    if a.start() < -n || a.end() > n {
        return Err(Error::SupportExceeded(format!("[{}, {}] not inside the window [{}, {n}]", a.start(), a.end(), -n)));
    }
    let z = z_estimate(maps, window, opts, tol)?;
    psi_with(maps, &z, a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub k: i64,
    /// `|Ψ_ω(α_k a) − Ψ_{T^kω}(a)|`.
    pub deviation: f64,
    /// Sum of the two truncation bounds.
    pub budget: f64,
    pub pass: bool,
}

pub fn translation_covariance_check(
    maps: &FcsMaps,
    a: &LocalObservable,
    k: i64,
    window: usize,
    opts: &PsiOptions,
    tol: &Tolerances,
) -> Result<CovarianceCheck> {
    let left = psi_value(maps, &a.shifted(k), window, opts, tol)?;
    let right = psi_value(&maps.shifted(k), a, window, opts, tol)?;
    let deviation = (left.value - right.value).norm();
    let budget = left.truncation_bound + right.truncation_bound;
    Ok(CovarianceCheck { k, deviation, budget, pass: deviation <= budget })
}

/// Prefactors of the induced process around an anchor `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiPrerun {
    pub anchor: i64,
    pub length: usize,
    pub rate: Option<RateEstimate>,
    pub kappa: Option<f64>,
    /// `sup_n c(Γ_{n,k})/κ^{n−k+1}`.
    pub d_forward: Option<f64>,
    /// `sup_m c(Γ_{k−1,m})/κ^{k−m}`.
    pub d_backward: Option<f64>,
    /// `8·d_forward·d_backward`.
    pub e_k: Option<f64>,
    /// Some composition was certified a strict contraction.
    pub certified: bool,
    pub c_upper_forward: f64,
    pub c_upper_backward: f64,
}

pub fn phi_prerun(
    maps: &FcsMaps,
    k: i64,
    length: usize,
    kappa: Option<f64>,
    burn_in: usize,
    opts: &RecordOptions,
    tol: &Tolerances,
) -> Result<PhiPrerun> {
    if length == 0 {
        return Err(Error::InvalidInput("prerun length must be at least 1".into()));
    }
    let mut fo = *opts;
    fo.seed = child_seed(opts.seed, "fcs-forward", k);
    let mut forward = ProcessRecord::new(Direction::PhiLeft, k, maps.bond(), fo, tol);
    forward.grow(&Swapped(maps), length, tol)?;
    forward.finalize(tol)?;
    let mut bo = *opts;
    bo.seed = child_seed(opts.seed, "fcs-backward", k);
    let mut backward = ProcessRecord::new(Direction::GammaRight, k - 1, maps.bond(), bo, tol);
    backward.grow(maps, length, tol)?;
    backward.finalize(tol)?;
    let rate = estimate_rate_c(&backward, burn_in).or_else(|_| estimate_rate_c(&forward, burn_in)).ok();
    let kappa = kappa.or(rate.map(|r| default_kappa(r.c)));
    if let Some(kp) = kappa {
        if !(kp > 0.0 && kp < 1.0) {
            return Err(Error::InvalidInput(format!("kappa {kp} outside (0, 1)")));
        }
    }
    let d_forward = kappa.map(|kp| d_prefactor(&forward, kp));
    let d_backward = kappa.map(|kp| d_prefactor(&backward, kp));
    let e_k = d_forward.zip(d_backward).map(|(a, b)| 8.0 * a * b);
    let certified = forward.nu().is_some() || backward.nu().is_some();
    Ok(PhiPrerun {
        anchor: k,
        length,
        rate,
        kappa,
        d_forward,
        d_backward,
        e_k,
        certified,
        c_upper_forward: forward.c_upper(),
        c_upper_backward: backward.c_upper(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringPlan {
    pub anchor: i64,
    pub gaps: Vec<usize>,
    /// Window size; default from `κ`.
    pub window: Option<usize>,
    pub record_length: usize,
    pub kappa: Option<f64>,
    pub burn_in: usize,
    pub psi: PsiOptions,
}

impl Default for ClusteringPlan {
    fn default() -> Self {
        Self {
            anchor: 0,
            gaps: (1..=12).collect(),
            window: None,
            record_length: 40,
            kappa: None,
            burn_in: 5,
            psi: PsiOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub gap: usize,
    /// Last site of `a`.
    pub left_end: i64,
    /// First site of `b`.
    pub right_start: i64,
    pub corr: f64,
    /// `E_k κ^{gap−1} ‖a‖‖b‖`.
    pub bound_rhs: Option<f64>,
    /// Numerical allowance from the truncation bounds of the three values.
    pub budget: f64,
    pub pass: bool,
    /// `left_end ≤ k − 2` and `right_start ≥ k + 1`.
    pub in_geometry: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub anchor: i64,
    pub window: usize,
    pub z_c_upper: f64,
    pub prerun: PhiPrerun,
    pub rows: Vec<GapRow>,
    pub kappa_fit: Option<f64>,
    pub e_fit: Option<f64>,
    pub fit_r2: Option<f64>,
    /// Every correlation below `CORR_FLOOR`.
    pub degenerate: bool,
    pub all_pass: bool,
    pub notice: Option<String>,
}

/// Places `a` to end at `m = n − gap` and `b` to start at `n`, with the
/// anchor in the middle of its admissible range `m + 2 ≤ k ≤ n − 1`.
fn placement(k: i64, gap: usize) -> (i64, i64) {
    let n = k + (gap.saturating_sub(1) / 2).max(1) as i64;
    (n - gap as i64, n)
}

pub fn clustering_experiment(
    maps: &FcsMaps,
    a: &LocalObservable,
    b: &LocalObservable,
    plan: &ClusteringPlan,
    tol: &Tolerances,
) -> Result<DecayReport> {
    if plan.gaps.is_empty() || plan.gaps.contains(&0) {
        return Err(Error::InvalidInput("gaps must be a non-empty list of positive integers".into()));
    }
    let k = plan.anchor;
    let prerun = phi_prerun(maps, k, plan.record_length, plan.kappa, plan.burn_in, &plan.psi.record, tol)?;
    let max_gap = *plan.gaps.iter().max().expect("non-empty") as i64;
    let (m_far, n_far) = placement(k, max_gap as usize);
    let reach = (m_far - (a.sites() as i64 - 1)).abs().max((n_far + b.sites() as i64 - 1).abs()).max(k.abs() + 2);
    let window = match plan.window {
        Some(w) if (w as i64) < reach => {
            return Err(Error::SupportExceeded(format!("window {w} does not contain the placed observables (needs {reach})")))
        }
        Some(w) => w,
        None => default_window(prerun.kappa.unwrap_or(0.0)).max(reach as usize),
    };
    let z = z_estimate(maps, window, &plan.psi, tol)?;
    let (na, nb) = (a.norm_inf(), b.norm_inf());
    let rows = plan
        .gaps
        .par_iter()
        .map(|&gap| -> Result<GapRow> {
            let (m, n) = placement(k, gap);
            let aa = a.shifted(m - a.end());
            let bb = b.shifted(n - b.start());
            let pa = psi_with(maps, &z, &aa)?;
            let pb = psi_with(maps, &z, &bb)?;
            let pab = psi_with(maps, &z, &aa.mul(&bb)?)?;
            let corr = (pab.value - pa.value * pb.value).norm();
            let budget = pab.truncation_bound + pa.truncation_bound * nb + pb.truncation_bound * na;
            let bound_rhs = prerun.e_k.zip(prerun.kappa).map(|(e, kp)| e * kp.powi(gap as i32 - 1) * na * nb);
            let pass = match bound_rhs {
                Some(r) => corr <= r + budget,
                None => corr < CORR_FLOOR,
            };
            Ok(GapRow { gap, left_end: m, right_start: n, corr, bound_rhs, budget, pass, in_geometry: m <= k - 2 && n > k })
        })
        .collect::<Result<Vec<_>>>()?;
    let degenerate = rows.iter().all(|r| r.corr < CORR_FLOOR);
    let fit_pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.corr >= CORR_FLOOR).map(|r| ((r.gap - 1) as f64, r.corr.ln())).collect();
    let (mut kappa_fit, mut e_fit, mut fit_r2) = (None, None, None);
    let mut notice = None;
    if degenerate {
        notice = Some("all correlations below the floor; product-like state, bound holds trivially".to_string());
    } else if fit_pts.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = fit_pts.into_iter().unzip();
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        kappa_fit = Some(slope.exp());
        e_fit = Some(intercept.exp());
        fit_r2 = Some(r2);
    } else {
        notice = Some("fewer than two correlations above the floor; no decay fit".to_string());
    }
    if prerun.e_k.is_none() && !degenerate {
        notice = Some("induced process has no rate estimate; E_k unavailable".to_string());
    }
    let all_pass = degenerate || rows.iter().all(|r| r.pass);
    Ok(DecayReport { anchor: k, window, z_c_upper: z.c_upper, prerun, rows, kappa_fit, e_fit, fit_r2, degenerate, all_pass, notice })
}

/// Partial ergodic averages along one `ω`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BirkhoffStream {
    /// `(2N+1)⁻¹ Σ_{|n|≤N} Ψ_{Tⁿω}(a)` for `N = 0..=n_max`.
    pub partial: Vec<[f64; 2]>,
    /// `|A_N − A_{n_max}|`.
    pub cauchy: Vec<f64>,
    /// The same average of `α₁(a)` at `n_max`.
    pub shifted_final: [f64; 2],
    pub translation_gap: f64,
    /// `2‖a‖/(2N+1)` plus twice the largest truncation bound.
    pub translation_budget: f64,
    pub max_truncation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BirkhoffReport {
    pub n_max: usize,
    pub window: usize,
    pub streams: Vec<BirkhoffStream>,
    pub mean: [f64; 2],
    /// Standard error of the stream finals (0 for one stream).
    pub std_err: f64,
    /// Largest distance between two stream finals.
    pub spread: f64,
}

fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

fn birkhoff_stream(
    maps: &FcsMaps,
    a: &LocalObservable,
    n_max: usize,
    window: usize,
    opts: &PsiOptions,
    tol: &Tolerances,
) -> Result<BirkhoffStream> {
    let shifted = a.shifted(1);
    let n = n_max as i64;
    let vals = (-n..=n)
        .into_par_iter()
        .map(|j| -> Result<(C64, C64, f64)> {
            let mj = maps.shifted(j);
            let z = z_estimate(&mj, window, opts, tol)?;
            let p = psi_with(&mj, &z, a)?;
            let q = psi_with(&mj, &z, &shifted)?;
            Ok((p.value, q.value, p.truncation_bound.max(q.truncation_bound)))
        })
        .collect::<Result<Vec<_>>>()?;
    let centre = n_max;
    let mut partial = Vec::with_capacity(n_max + 1);
    let (mut sum, mut sum_shift) = (ZERO, ZERO);
    for r in 0..=n_max {
        if r == 0 {
            sum += vals[centre].0;
            sum_shift += vals[centre].1;
        } else {
            sum += vals[centre - r].0 + vals[centre + r].0;
            sum_shift += vals[centre - r].1 + vals[centre + r].1;
        }
        partial.push(sum / (2 * r + 1) as f64);
    }
    let last = *partial.last().expect("n_max + 1 entries");
    let shifted_final = sum_shift / (2 * n_max + 1) as f64;
    let max_truncation = vals.iter().map(|v| v.2).fold(0.0, f64::max);
    Ok(BirkhoffStream {
        cauchy: partial.iter().map(|p| (p - last).norm()).collect(),
        partial: partial.into_iter().map(pair).collect(),
        shifted_final: pair(shifted_final),
        translation_gap: (shifted_final - last).norm(),
        translation_budget: 2.0 * a.norm_inf() / (2 * n_max + 1) as f64 + 2.0 * max_truncation,
        max_truncation,
    })
}

/// Ergodic averages of `Ψ_{Tⁿω}(a)` over one or more streams `ω`.
pub fn birkhoff_average(
    streams: &[FcsMaps],
    a: &LocalObservable,
    n_max: usize,
    window: usize,
    opts: &PsiOptions,
    tol: &Tolerances,
) -> Result<BirkhoffReport> {
    if streams.is_empty() {
        return Err(Error::InvalidInput("birkhoff average needs at least one stream".into()));
    }
    let w = window as i64;
    if a.start() < -w || a.end() + 1 > w {
        return Err(Error::SupportExceeded(format!(
            "[{}, {}] and its unit shift do not fit the window [{}, {w}]",
            a.start(),
            a.end(),
            -w
        )));
    }
    let out = streams.iter().map(|m| birkhoff_stream(m, a, n_max, window, opts, tol)).collect::<Result<Vec<_>>>()?;
    let finals: Vec<C64> = out.iter().map(|s| C64::new(s.partial[n_max][0], s.partial[n_max][1])).collect();
    let k = finals.len() as f64;
    let mean = finals.iter().sum::<C64>() / k;
    let std_err = if finals.len() > 1 {
        (finals.iter().map(|f| (f - mean).norm_sqr()).sum::<f64>() / (k - 1.0)).sqrt() / k.sqrt()
    } else {
        0.0
    };
    let mut spread: f64 = 0.0;
    for i in 0..finals.len() {
        for j in (i + 1)..finals.len() {
            spread = spread.max((finals[i] - finals[j]).norm());
        }
    }
    Ok(BirkhoffReport { n_max, window, streams: out, mean: pair(mean), std_err, spread })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::TracialAlgebra;
    use crate::process::{DriverKind, ErgodicDriver};

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn maps(spec: GeneratorEnsembleSpec, seed: u64) -> FcsMaps {
        let m = TracialAlgebra::full(2);
        let ens = GeneratorEnsemble::new(&m, &m, spec, &tol()).unwrap();
        FcsMaps::new(ErgodicDriver::new(DriverKind::IidShift { seed }).unwrap(), ens)
    }

    fn random_maps(seed: u64) -> FcsMaps {
        maps(GeneratorEnsembleSpec::RandomStinespring { kraus: 2, mix: 0.2 }, seed)
    }

    fn z_obs() -> Element {
        TracialAlgebra::full(2).diag(&[&[1.0, -1.0]]).unwrap()
    }

    #[test]
    fn identity_telescopes() {
        let mp = random_maps(1);
        let alg = mp.on_site().clone();
        let one = LocalObservable::identity(&alg, 0);
        let e = iterate_generator(&mp, -10, 10, &one).unwrap();
        assert!(e.max_abs_diff(&alg.identity()) < 1e-12);
    }

    #[test]
    fn product_generator_value() {
        let mp = maps(GeneratorEnsembleSpec::Fixed { generator: GeneratorSpec::Product }, 1);
        let alg = mp.on_site().clone();
        let a = alg.diag(&[&[0.3, 0.9]]).unwrap();
        let b = alg.diag(&[&[2.0, -1.0]]).unwrap();
        let obs = LocalObservable::product(&alg, -1, vec![a.clone(), alg.identity(), b.clone()]).unwrap();
        let p = psi_value(&mp, &obs, 5, &PsiOptions::default(), &tol()).unwrap();
        let want = alg.trace(&a) * alg.trace(&b);
        assert!((p.value - want).norm() < 1e-14);
        assert!(p.advisory.is_some());
    }

    #[test]
    fn factorization_identity() {
        let mp = random_maps(3);
        let alg = mp.on_site().clone();
        let mut rng = crate::rng::stream(3, "t", 0);
        let obs = LocalObservable::product(&alg, 2, vec![alg.random_element(&mut rng), alg.random_element(&mut rng)]).unwrap();
        let direct = iterate_generator(&mp, -4, 7, &obs).unwrap();
        let fact = factorized_value(&mp, -4, 7, &obs).unwrap();
        assert!(direct.max_abs_diff(&fact) < 1e-10);
        assert!(iterate_generator(&mp, 3, 7, &obs).is_err());
    }

    #[test]
    fn psi_is_stable_under_window_doubling() {
        let mp = random_maps(4);
        let alg = mp.on_site().clone();
        let obs = LocalObservable::single(&alg, 0, z_obs()).unwrap();
        let p1 = psi_value(&mp, &obs, 30, &PsiOptions::default(), &tol()).unwrap();
        let p2 = psi_value(&mp, &obs, 60, &PsiOptions::default(), &tol()).unwrap();
        assert!(p1.advisory.is_none());
        assert!((p1.value - p2.value).norm() <= p1.truncation_bound.max(1e-12));
        assert!(p1.window_residual < 1e-6);
    }

    #[test]
    fn covariance_for_zero_shift_and_product() {
        let mp = random_maps(5);
        let alg = mp.on_site().clone();
        let obs = LocalObservable::single(&alg, 0, z_obs()).unwrap();
        let c0 = translation_covariance_check(&mp, &obs, 0, 20, &PsiOptions::default(), &tol()).unwrap();
        assert_eq!(c0.deviation, 0.0);
        let c3 = translation_covariance_check(&mp, &obs, 3, 30, &PsiOptions::default(), &tol()).unwrap();
        assert!(c3.pass, "{c3:?}");
    }

    #[test]
    fn clustering_product_is_degenerate() {
        let mp = maps(GeneratorEnsembleSpec::Fixed { generator: GeneratorSpec::Product }, 1);
        let alg = mp.on_site().clone();
        let a = LocalObservable::single(&alg, 0, z_obs()).unwrap();
        let plan = ClusteringPlan { gaps: vec![1, 2, 5], record_length: 12, ..Default::default() };
        let r = clustering_experiment(&mp, &a, &a, &plan, &tol()).unwrap();
        assert!(r.degenerate && r.all_pass);
        assert!(r.rows.iter().all(|g| g.corr < 1e-12));
    }

    #[test]
    fn placement_geometry() {
        for gap in 3..20 {
            let (m, n) = placement(0, gap);
            assert_eq!(n - m, gap as i64);
            assert!(m <= -2 && n >= 1);
            assert!((n + m + 1).abs() <= 1);
        }
    }

    #[test]
    fn constant_driver_average_is_flat() {
        let m = TracialAlgebra::full(2);
        let ens = GeneratorEnsemble::new(
            &m,
            &m,
            GeneratorEnsembleSpec::Fixed { generator: GeneratorSpec::Stinespring { kraus: 2, mix: 0.2, seed: 9 } },
            &tol(),
        )
        .unwrap();
        let mp = FcsMaps::new(ErgodicDriver::new(DriverKind::Constant).unwrap(), ens);
        let obs = LocalObservable::single(&m, 0, z_obs()).unwrap();
        let r = birkhoff_average(&[mp], &obs, 3, 20, &PsiOptions::default(), &tol()).unwrap();
        let s = &r.streams[0];
        assert!(s.cauchy.iter().all(|c| *c < 1e-12));
        assert!(s.translation_gap <= s.translation_budget);
    }
}
