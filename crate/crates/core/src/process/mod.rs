//! Ergodic quantum processes: drivers, ensembles, composed records and the
//! rate, limit and collapse diagnostics built on them.

mod driver;
mod ensemble;
mod record;

pub use driver::{DriverKind, DriverPoint, ErgodicDriver};
pub use ensemble::{ChannelEnsemble, ChannelSpec, DrivenChannels, EnsembleSpec, RandomMaps, Swapped};
pub use record::{
    dual_limit_state, dual_normalized_value, limit_state_estimate, Direction, DualValue, LimitEstimate, ProcessRecord,
    RecordOptions, TracePoint,
};

use serde::{Deserialize, Serialize};

use crate::algebra::{Element, Norm, StateKind, TracialAlgebra, C64};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::qmaps::{contraction_estimate, EstimateOptions, SuperOperator};
use crate::rng::stream;

/// Contraction values below this are not used in log-scale fits.
pub const FIT_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// `exp(slope)` of the log-midpoint fit, or 0 for an exact collapse.
    pub c: f64,
    pub fit_r2: f64,
    /// Some estimated interval was exactly `[0, 0]`.
    pub exact_zero: bool,
    pub points: usize,
}

/// Least-squares slope and `R²` of `ys` against `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).min(1.0) };
    (slope, intercept, r2)
}

/// Kingman rate from the contraction trace: the slope of
/// `½ log(lower·upper)` against length past `burn_in`. A trace that reaches
/// `[0, 0]` before ten fit points exist is reported as an exact zero.
pub fn estimate_rate_c(record: &ProcessRecord, burn_in: usize) -> Result<RateEstimate> {
    let trace = record.c_trace();
    let pts: Vec<(f64, f64)> = trace
        .iter()
        .filter(|p| p.estimated && p.length > burn_in && p.upper < 1.0 - 1e-6 && p.lower > FIT_FLOOR)
        .map(|p| (p.length as f64, 0.5 * (p.lower.ln() + p.upper.ln())))
        .collect();
    if pts.len() < 10 && trace.iter().any(|p| p.estimated && p.upper == 0.0) {
        return Ok(RateEstimate { c: 0.0, fit_r2: 1.0, exact_zero: true, points: 0 });
    }
    if pts.len() < 10 {
        return Err(Error::NotEnoughData(format!(
            "{} contracting entries past burn-in {burn_in}; at least 10 are needed",
            pts.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (slope, _, r2) = linear_fit(&xs, &ys);
    Ok(RateEstimate { c: slope.exp().min(1.0), fit_r2: r2, exact_zero: false, points: xs.len() })
}

/// `κ = Ĉ + 0.05`, kept inside `(Ĉ, 1)`.
pub fn default_kappa(c: f64) -> f64 {
    (c + 0.05).min(0.5 * (1.0 + c))
}

/// Empirical `sup c_upper(ℓ)/κ^ℓ` over the trace.
pub fn d_prefactor(record: &ProcessRecord, kappa: f64) -> f64 {
    record.c_trace().iter().map(|p| p.upper / kappa.powi(p.length as i32)).fold(0.0, f64::max)
}

/// `‖γ_{n+1}·Xₙ − Xₙ₊₁‖₁` with both limits taken from `depth`-step
/// `GammaRight` compositions from the state `x`.
pub fn equivariance_residual(
    maps: &dyn RandomMaps,
    n: i64,
    depth: usize,
    x: &Element,
    tol: &Tolerances,
) -> Result<f64> {
    let alg = maps.algebra();
    let xn = deep_image(maps, n, depth, x, tol)?;
    let xn1 = deep_image(maps, n + 1, depth, x, tol)?;
    let pushed = maps.gamma_at(n + 1)?.projective_action(&xn, tol)?;
    Ok(alg.norm(&(&pushed - &xn1), Norm::One))
}

/// `Γ_{n, n−depth+1}·x`, normalized after every step.
fn deep_image(maps: &dyn RandomMaps, n: i64, depth: usize, x: &Element, tol: &Tolerances) -> Result<Element> {
    let mut y = x.clone();
    for i in (0..depth as i64).rev() {
        y = maps.gamma_at(n - i)?.projective_action(&y, tol)?;
    }
    Ok(y)
}

/// `γ_{to} ∘ ⋯ ∘ γ_{from}` (identity when `to < from`), rescaled to `τ(·(1)) = 1`.
fn chain(maps: &dyn RandomMaps, to: i64, from: i64, tol: &Tolerances) -> Result<SuperOperator> {
    let alg = maps.algebra();
    let mut acc = SuperOperator::identity(alg, tol);
    for i in from..=to {
        acc = normalized(maps.gamma_at(i)?.compose(&acc)?);
    }
    Ok(acc)
}

fn normalized(s: SuperOperator) -> SuperOperator {
    let alg = s.algebra();
    let t = alg.tr(&s.apply(&alg.identity()));
    if t > 0.0 && t.is_finite() && (t - 1.0).abs() > 1e-12 {
        s.rescaled(1.0 / t)
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapsePlan {
    /// Interval widenings after the initial `[k−1, k]`.
    pub steps: usize,
    /// Extra steps behind `m` and beyond `n` used for `Xₙ` and `Bₘ`.
    pub depth: usize,
    /// Stabilization is judged over this many trailing rows.
    pub window: usize,
    /// Also compute `c_upper(Γₙ,ₘ)` and check `lhs ≤ 16 c ‖a‖`.
    pub check_bound: bool,
}

impl Default for CollapsePlan {
    fn default() -> Self {
        Self { steps: 40, depth: 60, window: 20, check_bound: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub n: i64,
    pub m: i64,
    /// `‖Γ(a)/τ(Γ(1)) − τ(Bₘ a) Xₙ‖₁`.
    pub lhs: f64,
    pub c_upper: Option<f64>,
    /// Running `E_k`.
    pub e_running: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub anchor: i64,
    pub kappa: f64,
    pub rows: Vec<CollapseRow>,
    pub e_k: f64,
    /// Relative growth of the running `E_k` over the trailing window.
    pub trailing_change: f64,
    pub stabilized: bool,
    /// `lhs ≤ 16 c_upper ‖a‖` on every row where `c_upper` was computed.
    pub bound_holds: bool,
}

/// Rows with `lhs` below this multiple of `‖a‖_∞` are numerically
/// unresolved and do not update `E_k`.
pub const COLLAPSE_FLOOR: f64 = 1e-12;

/// Rank-one collapse at anchor `k`: widens `[m, n]` around `k` alternately on
/// each side and tracks the running sup of `lhs/(κ^{n−m+1}‖a‖_∞)`.
pub fn rank_one_collapse_check(
    maps: &dyn RandomMaps,
    k: i64,
    a: &Element,
    kappa: f64,
    plan: &CollapsePlan,
    seed: u64,
    tol: &Tolerances,
) -> Result<CollapseReport> {
    let alg = maps.algebra();
    alg.check(a)?;
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidInput(format!("kappa {kappa} outside (0, 1)")));
    }
    let a_norm = alg.norm(a, Norm::Inf);
    if a_norm == 0.0 {
        return Err(Error::ZeroInput);
    }
    let one = alg.identity();
    let (mut n, mut m) = (k, k - 1);
    let mut gamma = chain(maps, n, m, tol)?;
    let opts = EstimateOptions { upper_only: true, ..EstimateOptions::default() };
    let mut rows = Vec::with_capacity(plan.steps + 1);
    let mut e_running: f64 = 0.0;
    let mut bound_holds = true;
    for s in 0..=plan.steps {
        if s > 0 {
            if s % 2 == 1 {
                n += 1;
                gamma = normalized(maps.gamma_at(n)?.compose(&gamma)?);
            } else {
                m -= 1;
                gamma = normalized(gamma.compose(&maps.gamma_at(m)?)?);
            }
        }
        let tail = chain(maps, m - 1, m - plan.depth as i64, tol)?;
        let head = chain(maps, n + plan.depth as i64, n + 1, tol)?;
        let x_n = gamma.compose(&tail)?.projective_action(&one, tol)?;
        let b_m = head.compose(&gamma)?.predual().projective_action(&one, tol)?;
        let t = alg.tr(&gamma.apply(&one));
        let ga = gamma.apply(a).scale(1.0 / t);
        let tba: C64 = alg.trace_product(&b_m, a);
        let lhs = alg.norm(&(&ga - &x_n.scale_c(tba)), Norm::One);
        let len = (n - m + 1) as i32;
        if lhs > COLLAPSE_FLOOR * a_norm {
            e_running = e_running.max(lhs / (kappa.powi(len) * a_norm));
        }
        let c_upper = if plan.check_bound {
            let mut rng = stream(seed, "collapse-estimate", s as i64);
            let c = contraction_estimate(&gamma, &opts, &mut rng, tol)?.upper;
            if lhs > 16.0 * c * a_norm + 1e-12 {
                bound_holds = false;
            }
            Some(c)
        } else {
            None
        };
        rows.push(CollapseRow { n, m, lhs, c_upper, e_running });
    }
    let w = plan.window.min(rows.len() - 1);
    let before = rows[rows.len() - 1 - w].e_running;
    let trailing_change = if e_running > 0.0 { (e_running - before) / e_running } else { 0.0 };
    Ok(CollapseReport {
        anchor: k,
        kappa,
        rows,
        e_k: e_running,
        trailing_change,
        stabilized: trailing_change < 0.01,
        bound_holds,
    })
}

/// Which maps the `PhiLeft` record composes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMaps {
    /// `φ = γ*`.
    Predual,
    /// The ensemble maps themselves, read in the Heisenberg picture.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessPlan {
    pub anchor: i64,
    pub length: usize,
    pub directions: Vec<Direction>,
    /// Random pure probes besides the tracial state.
    pub probes: usize,
    /// Per-block diagonal of the Thm B observable; default alternating ±1.
    pub observable: Option<Vec<Vec<f64>>>,
    pub kappa: Option<f64>,
    pub burn_in: usize,
    pub phi_maps: PhiMaps,
    pub record: RecordOptions,
    /// Depth of the equivariance check; 0 skips it.
    pub equivariance_depth: usize,
    pub collapse: Option<CollapsePlan>,
    /// Stop a `GammaRight` run once `ν` is reached.
    pub stop_at_nu: bool,
}

impl Default for ProcessPlan {
    fn default() -> Self {
        Self {
            anchor: 0,
            length: 40,
            directions: vec![Direction::GammaRight, Direction::PhiLeft],
            probes: 4,
            observable: None,
            kappa: None,
            burn_in: 5,
            phi_maps: PhiMaps::Predual,
            record: RecordOptions::default(),
            equivariance_depth: 0,
            collapse: None,
            stop_at_nu: false,
        }
    }
}

impl ProcessPlan {
    pub fn observable(&self, alg: &TracialAlgebra) -> Result<Element> {
        match &self.observable {
            Some(d) => {
                let rows: Vec<&[f64]> = d.iter().map(|v| v.as_slice()).collect();
                alg.diag(&rows)
            }
            None => {
                let mut sign = 1.0;
                let rows: Vec<Vec<f64>> = alg
                    .dims()
                    .iter()
                    .map(|&n| {
                        (0..n)
                            .map(|_| {
                                let s = sign;
                                sign = -sign;
                                s
                            })
                            .collect()
                    })
                    .collect();
                let refs: Vec<&[f64]> = rows.iter().map(|v| v.as_slice()).collect();
                alg.diag(&refs)
            }
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessRow {
    pub run_id: u64,
    pub direction: Direction,
    pub length: usize,
    pub c_lower: f64,
    pub c_upper: f64,
    pub spread_l1: Option<f64>,
    pub residual_inf: Option<f64>,
    pub nu_hit: bool,
    pub log_norm_accum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for RunFailure {
    fn from(e: &Error) -> Self {
        Self { kind: e.kind().into(), message: e.to_string(), exit_code: e.exit_code() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionSummary {
    pub direction: Direction,
    pub length: usize,
    pub rate: Option<RateEstimate>,
    pub kappa: Option<f64>,
    pub d_prefactor: Option<f64>,
    pub nu: Option<usize>,
    pub nu_optimistic: Option<usize>,
    /// Slope of `log spread` (gamma_right) or `log residual` (phi_left) against length.
    pub diagnostic_slope: Option<f64>,
    /// Worst `spread/(2 c_upper)` or `residual/(8‖a‖ c_upper)`; at most 1 when the bound holds.
    pub bound_ratio: f64,
    /// `sup ‖Γ*(Γ(1)⁻¹)‖_∞` over the run, logged for the normalized dual process.
    pub sup_condition: Option<f64>,
}

/// Result of one `ω` stream. Partial results are kept when a step fails.
#[derive(Debug, Clone)]
pub struct ProcessRun {
    pub run_id: u64,
    pub rows: Vec<ProcessRow>,
    pub summaries: Vec<DirectionSummary>,
    pub records: Vec<ProcessRecord>,
    pub limit_state: Option<Element>,
    pub dual_limit: Option<Element>,
    pub equivariance_residual: Option<f64>,
    pub collapse: Option<CollapseReport>,
    pub failure: Option<RunFailure>,
}

struct PhiView<'a> {
    inner: &'a dyn RandomMaps,
    mode: PhiMaps,
}

impl RandomMaps for PhiView<'_> {
    fn algebra(&self) -> &TracialAlgebra {
        self.inner.algebra()
    }

    fn gamma_at(&self, n: i64) -> Result<SuperOperator> {
        self.inner.gamma_at(n)
    }

    fn phi_at(&self, n: i64) -> Result<SuperOperator> {
        match self.mode {
            PhiMaps::Predual => self.inner.phi_at(n),
            PhiMaps::Direct => self.inner.gamma_at(n),
        }
    }
}

/// Runs the plan on one stream of maps. Only invalid plans are returned as
/// errors; numerical failures end the run early and are reported in
/// `failure` next to everything computed so far.
pub fn run_experiment(maps: &dyn RandomMaps, plan: &ProcessPlan, run_id: u64, tol: &Tolerances) -> Result<ProcessRun> {
    let alg = maps.algebra().clone();
    if plan.length == 0 {
        return Err(Error::InvalidInput("plan length must be at least 1".into()));
    }
    let a = plan.observable(&alg)?;
    let mut probe_rng = stream(plan.record.seed, "probes", run_id as i64);
    let mut probes = vec![alg.identity()];
    for _ in 0..plan.probes.max(1) {
        probes.push(alg.random_state(StateKind::Pure, &mut probe_rng).into_element());
    }
    let mut run = ProcessRun {
        run_id,
        rows: Vec::new(),
        summaries: Vec::new(),
        records: Vec::new(),
        limit_state: None,
        dual_limit: None,
        equivariance_residual: None,
        collapse: None,
        failure: None,
    };
    let view = PhiView { inner: maps, mode: plan.phi_maps };
    let mut kappa_for_collapse = plan.kappa;
    for &dir in &plan.directions {
        let mut opts = plan.record;
        opts.seed = crate::rng::child_seed(plan.record.seed, dir.label(), run_id as i64);
        let mut rec = ProcessRecord::new(dir, plan.anchor, &alg, opts, tol);
        let mut diag: Vec<Option<f64>> = Vec::new();
        let mut bound_ratio: f64 = 0.0;
        let mut sup_condition: f64 = 0.0;
        let mut failure = None;
        for _ in 0..plan.length {
            let step = rec.grow(&view, 1, tol).and_then(|_| {
                let c = rec.c_upper();
                match dir {
                    Direction::GammaRight => {
                        let lim = limit_state_estimate(&rec, &probes, tol)?;
                        if c > 0.0 {
                            bound_ratio = bound_ratio.max(lim.spread / (2.0 * c));
                        } else if lim.spread > 1e-12 {
                            bound_ratio = f64::INFINITY;
                        }
                        run.limit_state = Some(lim.state);
                        sup_condition = sup_condition.max(final_condition(rec.composed())?);
                        Ok(Some(lim.spread))
                    }
                    Direction::PhiLeft => {
                        let v = dual_normalized_value(&rec, &a)?;
                        let a_norm = alg.norm(&a, Norm::Inf);
                        if c > 0.0 {
                            bound_ratio = bound_ratio.max(v.residual_inf / (8.0 * a_norm * c));
                        } else if v.residual_inf > 1e-12 {
                            bound_ratio = f64::INFINITY;
                        }
                        Ok(Some(v.residual_inf))
                    }
                }
            });
            match step {
                Ok(d) => diag.push(d),
                Err(e) => {
                    failure = Some(RunFailure::from(&e));
                    break;
                }
            }
            if plan.stop_at_nu && dir == Direction::GammaRight && rec.nu().is_some() {
                break;
            }
        }
        if failure.is_none() {
            if let Err(e) = rec.finalize(tol) {
                failure = Some(RunFailure::from(&e));
            }
        }
        if dir == Direction::PhiLeft && failure.is_none() {
            run.dual_limit = dual_limit_state(&rec, tol).ok();
        }
        let rate = estimate_rate_c(&rec, plan.burn_in).ok();
        let kappa = plan.kappa.or(rate.map(|r| default_kappa(r.c)));
        if dir == Direction::GammaRight && kappa_for_collapse.is_none() {
            kappa_for_collapse = kappa;
        }
        let nu = rec.nu();
        for (p, d) in rec.c_trace().iter().zip(&diag) {
            run.rows.push(ProcessRow {
                run_id,
                direction: dir,
                length: p.length,
                c_lower: p.lower,
                c_upper: p.upper,
                spread_l1: if dir == Direction::GammaRight { *d } else { None },
                residual_inf: if dir == Direction::PhiLeft { *d } else { None },
                nu_hit: nu.is_some_and(|v| p.length > v),
                log_norm_accum: rec.log_scale_at(p.length),
            });
        }
        let slope = diagnostic_slope(rec.c_trace(), &diag);
        run.summaries.push(DirectionSummary {
            direction: dir,
            length: rec.length(),
            rate,
            kappa,
            d_prefactor: kappa.map(|k| d_prefactor(&rec, k)),
            nu,
            nu_optimistic: rec.nu_optimistic(),
            diagnostic_slope: slope,
            bound_ratio,
            sup_condition: (dir == Direction::GammaRight).then_some(sup_condition),
        });
        run.records.push(rec);
        if let Some(f) = failure {
            run.failure = Some(f);
            return Ok(run);
        }
    }
    if plan.equivariance_depth > 0 {
        match equivariance_residual(maps, plan.anchor, plan.equivariance_depth, &alg.identity(), tol) {
            Ok(r) => run.equivariance_residual = Some(r),
            Err(e) => {
                run.failure = Some(RunFailure::from(&e));
                return Ok(run);
            }
        }
    }
    if let Some(cp) = &plan.collapse {
        let kappa = match kappa_for_collapse {
            Some(k) => k,
            None => {
                let e = Error::NotEnoughData("no rate estimate to choose kappa for the collapse check".into());
                run.failure = Some(RunFailure::from(&e));
                return Ok(run);
            }
        };
        let seed = crate::rng::child_seed(plan.record.seed, "collapse", run_id as i64);
        match rank_one_collapse_check(maps, plan.anchor, &a, kappa, cp, seed, tol) {
            Ok(r) => run.collapse = Some(r),
            Err(e) => run.failure = Some(RunFailure::from(&e)),
        }
    }
    Ok(run)
}

/// Slope of the log diagnostic against length over entries above the fit floor.
fn diagnostic_slope(trace: &[TracePoint], diag: &[Option<f64>]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = trace
        .iter()
        .zip(diag)
        .filter_map(|(p, d)| d.filter(|v| *v > FIT_FLOOR).map(|v| (p.length as f64, v.ln())))
        .unzip();
    (xs.len() >= 3).then(|| linear_fit(&xs, &ys).0)
}

/// `‖Γ*(Γ(1)⁻¹)‖_∞`, or infinity when `Γ(1)` is singular.
fn final_condition(s: &SuperOperator) -> Result<f64> {
    let alg = s.algebra();
    let g1 = s.apply(&alg.identity()).hermitian_part();
    let (lo, hi) = (alg.lambda_min(&g1), alg.lambda_max(&g1));
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Ok(f64::INFINITY);
    }
    // Γ and its rescalings give the same value: Γ*(Γ(1)⁻¹) is scale invariant.
    let inv = alg.func(&g1, |v| 1.0 / v);
    Ok(alg.norm(&s.apply_dual(&inv), Norm::Inf))
}
