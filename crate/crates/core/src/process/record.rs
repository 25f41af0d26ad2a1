//! Composed interval processes with their contraction traces.

use serde::{Deserialize, Serialize};

use super::ensemble::RandomMaps;
use crate::algebra::{Element, Norm, TracialAlgebra};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::qmaps::{contraction_estimate, ContractionEstimate, EstimateOptions, SuperOperator};
use crate::rng::stream;

/// Which end of the interval grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `Γₙ,ₘ₋₁ = Γₙ,ₘ ∘ γ_{T^{m−1}ω}`: `m` decreases, new maps act first.
    GammaRight,
    /// `Φₙ₊₁,ₘ = φ_{T^{n+1}ω} ∘ Φₙ,ₘ`: `n` increases, new maps act last.
    PhiLeft,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::GammaRight => "gamma_right",
            Direction::PhiLeft => "phi_left",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub length: usize,
    pub lower: f64,
    pub upper: f64,
    /// False when the interval was carried over from earlier lengths.
    pub estimated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordOptions {
    pub estimate: EstimateOptions,
    /// Estimate every `stride` steps; 0 estimates only on request.
    pub stride: usize,
    /// Rescale the composition every this many steps.
    pub renorm_every: usize,
    /// Seeds the estimator streams.
    pub seed: u64,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self { estimate: EstimateOptions::default(), stride: 1, renorm_every: 25, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ProcessRecord {
    direction: Direction,
    anchor: i64,
    composed: SuperOperator,
    steps: Vec<SuperOperator>,
    log_scale: f64,
    log_scales: Vec<f64>,
    c_trace: Vec<TracePoint>,
    last_estimate: Option<ContractionEstimate>,
    opts: RecordOptions,
}

impl ProcessRecord {
    /// Empty record. For `GammaRight` the anchor is `n`, for `PhiLeft` it is `m`.
    pub fn new(direction: Direction, anchor: i64, alg: &TracialAlgebra, opts: RecordOptions, tol: &Tolerances) -> Self {
        Self {
            direction,
            anchor,
            composed: SuperOperator::identity(alg, tol),
            steps: Vec::new(),
            log_scale: 0.0,
            log_scales: Vec::new(),
            c_trace: Vec::new(),
            last_estimate: None,
            opts,
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn anchor(&self) -> i64 {
        self.anchor
    }

    pub fn length(&self) -> usize {
        self.steps.len()
    }

    /// Interval `(n, m)` currently covered.
    pub fn interval(&self) -> (i64, i64) {
        let l = self.length() as i64;
        match self.direction {
            Direction::GammaRight => (self.anchor, self.anchor - l + 1),
            Direction::PhiLeft => (self.anchor + l - 1, self.anchor),
        }
    }

    /// Driver index of the next step.
    pub fn next_index(&self) -> i64 {
        let l = self.length() as i64;
        match self.direction {
            Direction::GammaRight => self.anchor - l,
            Direction::PhiLeft => self.anchor + l,
        }
    }

    /// The composition, up to the positive factor `exp(log_scale)`.
    pub fn composed(&self) -> &SuperOperator {
        &self.composed
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Accumulated log scale right after step `length`.
    pub fn log_scale_at(&self, length: usize) -> f64 {
        if length == 0 {
            0.0
        } else {
            self.log_scales[length - 1]
        }
    }

    pub fn steps(&self) -> &[SuperOperator] {
        &self.steps
    }

    pub fn c_trace(&self) -> &[TracePoint] {
        &self.c_trace
    }

    pub fn last_estimate(&self) -> Option<&ContractionEstimate> {
        self.last_estimate.as_ref()
    }

    pub fn options(&self) -> &RecordOptions {
        &self.opts
    }

    /// Upper end of the latest interval, 1 before any step.
    pub fn c_upper(&self) -> f64 {
        self.c_trace.last().map_or(1.0, |p| p.upper)
    }

    pub fn c_lower(&self) -> f64 {
        self.c_trace.last().map_or(1.0, |p| p.lower)
    }

    /// Adds one step on the growing end.
    pub fn extend(&mut self, step: &SuperOperator, tol: &Tolerances) -> Result<()> {
        if step.algebra() != self.composed.algebra() {
            return Err(Error::ShapeMismatch("step map lives on a different algebra than the process".into()));
        }
        self.composed = match self.direction {
            Direction::GammaRight => self.composed.compose(step)?,
            Direction::PhiLeft => step.compose(&self.composed)?,
        };
        self.steps.push(step.clone());
        let len = self.steps.len();
        if self.opts.renorm_every > 0 && len.is_multiple_of(self.opts.renorm_every) {
            self.renormalize();
        }
        self.log_scales.push(self.log_scale);
        let prev = self.c_trace.last().copied();
        self.c_trace.push(TracePoint {
            length: len,
            lower: 0.0,
            upper: prev.map_or(1.0, |p| p.upper),
            estimated: false,
        });
        if self.opts.stride > 0 && len.is_multiple_of(self.opts.stride) {
            self.estimate_now(tol)?;
        }
        Ok(())
    }

    /// Pulls `steps` maps from `maps` at the driver indices the direction asks for.
    pub fn grow(&mut self, maps: &dyn RandomMaps, steps: usize, tol: &Tolerances) -> Result<()> {
        for _ in 0..steps {
            let n = self.next_index();
            let step = match self.direction {
                Direction::GammaRight => maps.gamma_at(n)?,
                Direction::PhiLeft => maps.phi_at(n)?,
            };
            self.extend(&step, tol)?;
        }
        Ok(())
    }

    fn renormalize(&mut self) {
        let alg = self.composed.algebra();
        let t = alg.tr(&self.composed.apply(&alg.identity()));
        if t > 0.0 && t.is_finite() && (t - 1.0).abs() > 1e-12 {
            self.composed = self.composed.rescaled(1.0 / t);
            self.log_scale += t.ln();
        }
    }

    /// Contraction interval at the current length. Carried-over lower ends
    /// are raised to the new one; upper ends are kept non-increasing.
    pub fn estimate_now(&mut self, tol: &Tolerances) -> Result<()> {
        let len = self.length();
        let Some(last) = self.c_trace.last().copied() else {
            return Ok(());
        };
        if last.estimated {
            return Ok(());
        }
        let mut rng = stream(self.opts.seed, "process-estimate", len as i64);
        let est = contraction_estimate(&self.composed, &self.opts.estimate, &mut rng, tol)?;
        let upper = est.upper.min(last.upper);
        let lower = est.lower.min(upper);
        *self.c_trace.last_mut().expect("non-empty") = TracePoint { length: len, lower, upper, estimated: true };
        for p in self.c_trace.iter_mut().rev().skip(1) {
            if p.lower >= lower {
                break;
            }
            p.lower = lower.min(p.upper);
        }
        self.last_estimate = Some(est);
        Ok(())
    }

    /// Makes sure the final length carries a fresh interval.
    pub fn finalize(&mut self, tol: &Tolerances) -> Result<()> {
        self.estimate_now(tol)
    }

    /// Zero-based stopping time: one less than the first length whose
    /// certified upper bound is below 1.
    pub fn nu(&self) -> Option<usize> {
        self.c_trace.iter().find(|p| certified(p)).map(|p| p.length - 1)
    }

    /// Same, from the lower bound: the first length not certified to be 1.
    pub fn nu_optimistic(&self) -> Option<usize> {
        self.c_trace.iter().find(|p| p.estimated && p.lower <= 1.0 - 1e-9).map(|p| p.length - 1)
    }

    /// Recomputes the composition from the stored steps.
    pub fn recompose(&self, tol: &Tolerances) -> Result<SuperOperator> {
        let alg = self.composed.algebra();
        let mut acc = SuperOperator::identity(alg, tol);
        for s in &self.steps {
            acc = match self.direction {
                Direction::GammaRight => acc.compose(s)?,
                Direction::PhiLeft => s.compose(&acc)?,
            };
        }
        Ok(acc)
    }
}

/// Same threshold as the strict-contraction verdict.
fn certified(p: &TracePoint) -> bool {
    p.upper < 1.0 - 1e-6
}

/// Thm A diagnostic: projective images of the probes under a `GammaRight`
/// record.
#[derive(Debug, Clone)]
pub struct LimitEstimate {
    /// Image of the first probe.
    pub state: Element,
    /// Largest pairwise trace-norm distance between probe images.
    pub spread: f64,
}

pub fn limit_state_estimate(record: &ProcessRecord, probes: &[Element], tol: &Tolerances) -> Result<LimitEstimate> {
    if record.direction() != Direction::GammaRight {
        return Err(Error::InvalidInput("limit state estimate needs a gamma_right record".into()));
    }
    if probes.len() < 2 {
        return Err(Error::InvalidInput("limit state estimate needs at least two probes".into()));
    }
    let s = record.composed();
    let alg = s.algebra();
    let images = probes.iter().map(|x| s.projective_action(x, tol)).collect::<Result<Vec<_>>>()?;
    let mut spread: f64 = 0.0;
    for i in 0..images.len() {
        for j in (i + 1)..images.len() {
            spread = spread.max(alg.norm(&(&images[i] - &images[j]), Norm::One));
        }
    }
    Ok(LimitEstimate { state: images.into_iter().next().expect("two probes"), spread })
}

/// Thm B diagnostic on a `PhiLeft` record.
#[derive(Debug, Clone)]
pub struct DualValue {
    /// `τ(Z)` with `Z = Φ(1)^{-½} Φ(a) Φ(1)^{-½}`.
    pub scalar: crate::algebra::C64,
    /// `‖Z − τ(Z)·1‖_∞`.
    pub residual_inf: f64,
    pub z: Element,
}

pub fn dual_normalized_value(record: &ProcessRecord, a: &Element) -> Result<DualValue> {
    if record.direction() != Direction::PhiLeft {
        return Err(Error::InvalidInput("dual normalized value needs a phi_left record".into()));
    }
    let s = record.composed();
    let alg = s.algebra();
    alg.check(a)?;
    let p1 = s.apply(&alg.identity()).hermitian_part();
    let (lo, hi) = (alg.lambda_min(&p1), alg.lambda_max(&p1));
    if !(hi > 0.0) || lo <= 1e-10 * hi {
        return Err(Error::InvertibilityViolation(format!("Φ(1) has spectrum [{lo:.3e}, {hi:.3e}]")));
    }
    let w = alg.func(&p1, |v| 1.0 / v.sqrt());
    let z = &(&w * &s.apply(a)) * &w;
    let scalar = alg.trace(&z);
    let resid = &z - &alg.identity().scale_c(scalar);
    Ok(DualValue { scalar, residual_inf: alg.norm(&resid, Norm::Inf), z })
}

/// `Y`: projective image of `1` under the predual of a `PhiLeft` record.
pub fn dual_limit_state(record: &ProcessRecord, tol: &Tolerances) -> Result<Element> {
    if record.direction() != Direction::PhiLeft {
        return Err(Error::InvalidInput("dual limit state needs a phi_left record".into()));
    }
    let s = record.composed();
    s.predual().projective_action(&s.algebra().identity(), tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::StateKind;

    fn depol_record(len: usize, stride: usize) -> ProcessRecord {
        let alg = TracialAlgebra::full(2);
        let tol = Tolerances::default();
        let d = SuperOperator::depolarizing(&alg, 0.5, &tol).unwrap();
        let opts = RecordOptions { stride, ..Default::default() };
        let mut r = ProcessRecord::new(Direction::GammaRight, 0, &alg, opts, &tol);
        for _ in 0..len {
            r.extend(&d, &tol).unwrap();
        }
        r.finalize(&tol).unwrap();
        r
    }

    #[test]
    fn depolarizing_trace_matches_closed_form() {
        let r = depol_record(12, 1);
        for p in r.c_trace() {
            let a = 0.5f64.powi(p.length as i32);
            let c = 2.0 * a / (2.0 * a + (1.0 - a).powi(2));
            assert!(p.lower <= c + 1e-12 && c <= p.upper + 1e-12, "{p:?} vs {c}");
            assert!((p.lower - c).abs() < 1e-9, "{p:?} vs {c}");
        }
        assert_eq!(r.nu(), Some(0));
    }

    #[test]
    fn stride_backfills_lower_ends() {
        let r = depol_record(10, 4);
        let t = r.c_trace();
        assert_eq!(t.iter().filter(|p| p.estimated).count(), 3);
        for w in t.windows(2) {
            assert!(w[1].lower <= w[0].lower && w[1].upper <= w[0].upper);
        }
        // length 3 is bounded below by the estimate at length 4
        assert!(t[2].lower >= t[3].lower && t[3].lower > 0.0);
    }

    #[test]
    fn recompose_matches() {
        let alg = TracialAlgebra::full(2);
        let tol = Tolerances::default();
        let mut rng = stream(2, "record-test", 0);
        let opts = RecordOptions { stride: 0, renorm_every: 0, ..Default::default() };
        for dir in [Direction::GammaRight, Direction::PhiLeft] {
            let mut r = ProcessRecord::new(dir, 0, &alg, opts, &tol);
            for _ in 0..5 {
                let g = SuperOperator::random_channel(&alg, 2, 0.2, &alg.identity(), &mut rng, &tol).unwrap();
                r.extend(&g, &tol).unwrap();
            }
            let again = r.recompose(&tol).unwrap();
            assert!((again.matrix() - r.composed().matrix()).amax() < 1e-14);
        }
    }

    #[test]
    fn transpose_never_contracts() {
        let alg = TracialAlgebra::full(2);
        let tol = Tolerances::default();
        let t = SuperOperator::transpose(&alg, &tol);
        let mut r = ProcessRecord::new(Direction::GammaRight, 0, &alg, RecordOptions::default(), &tol);
        for _ in 0..4 {
            r.extend(&t, &tol).unwrap();
        }
        assert_eq!(r.nu(), None);
        assert!(r.c_trace().iter().all(|p| p.lower >= 0.99));
    }

    #[test]
    fn replacement_collapses_in_one_step() {
        let alg = TracialAlgebra::full(2);
        let tol = Tolerances::default();
        let mut rng = stream(3, "record-test", 0);
        let x0 = alg.random_state(StateKind::Full, &mut rng).into_element();
        let rep = SuperOperator::replacement(&alg, &x0, &tol).unwrap();
        let mut r = ProcessRecord::new(Direction::GammaRight, 0, &alg, RecordOptions::default(), &tol);
        r.extend(&rep, &tol).unwrap();
        assert_eq!((r.c_lower(), r.c_upper()), (0.0, 0.0));
        assert_eq!(r.nu(), Some(0));
        let probes: Vec<Element> = (0..3).map(|_| alg.random_state(StateKind::Pure, &mut rng).into_element()).collect();
        let lim = limit_state_estimate(&r, &probes, &tol).unwrap();
        assert!(lim.spread < 1e-14);
        assert!(lim.state.max_abs_diff(&x0) < 1e-14);
    }

    #[test]
    fn dual_value_of_identity_is_exact() {
        let alg = TracialAlgebra::full(2);
        let tol = Tolerances::default();
        let mut rng = stream(4, "record-test", 0);
        let mut r = ProcessRecord::new(Direction::PhiLeft, 0, &alg, RecordOptions { stride: 0, ..Default::default() }, &tol);
        for _ in 0..3 {
            let g = SuperOperator::random_channel(&alg, 2, 0.2, &alg.identity(), &mut rng, &tol).unwrap();
            r.extend(&g, &tol).unwrap();
        }
        let v = dual_normalized_value(&r, &alg.identity()).unwrap();
        assert!((v.scalar.re - 1.0).abs() < 1e-13 && v.residual_inf < 1e-13);
        assert!(dual_normalized_value(&depol_record(2, 1), &alg.identity()).is_err());
    }
}
