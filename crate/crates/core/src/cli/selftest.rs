//! Invariant suites of every module, at two sizes.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::io::SuiteResult;
use crate::algebra::{Norm, StateKind, TracialAlgebra};
use crate::config::Tolerances;
use crate::error::Result;
use crate::fcs::{
    clustering_experiment, translation_covariance_check, ClusteringPlan, FcsMaps, GeneratorEnsemble,
    GeneratorEnsembleSpec, GeneratorSpec, LocalObservable, PsiOptions,
};
use crate::hennion::{
    distance_parts, line_decomposition, m_quantity, m_quantity_bisection, m_quantity_inf_sampling,
};
use crate::process::{
    run_experiment, ChannelEnsemble, ChannelSpec, Direction, DriverKind, DrivenChannels, EnsembleSpec, ErgodicDriver,
    ProcessPlan,
};
use crate::qmaps::{contraction_estimate, EstimateOptions, MapFile, SuperOperator};
use crate::rng::{child_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Quick,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelftestReport {
    pub level: Level,
    pub suites: Vec<SuiteResult>,
    pub all_pass: bool,
}

type Check = fn(Level, u64, &Tolerances) -> Result<(bool, String)>;

fn pick(level: Level, quick: usize, full: usize) -> usize {
    match level {
        Level::Quick => quick,
        Level::Full => full,
    }
}

fn algebras() -> Vec<TracialAlgebra> {
    vec![
        TracialAlgebra::full(2),
        TracialAlgebra::full(3),
        TracialAlgebra::new(&[2, 2], &[0.125, 0.375]).expect("valid weights"),
    ]
}

/// `max |τ(γ(x) a) − τ(x δ(a))|` over random `x, a`; zero when `δ` is the
/// predual of `γ`.
pub fn pairing_defect(s: &SuperOperator, dual: &SuperOperator, samples: usize, seed: u64) -> f64 {
    let alg = s.algebra();
    let mut rng = stream(seed, "pairing", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = alg.random_element(&mut rng);
        let a = alg.random_element(&mut rng);
        let lhs = alg.trace_product(&s.apply(&x), &a);
        let rhs = alg.trace_product(&x, &dual.apply(&a));
        worst = worst.max((lhs - rhs).norm());
    }
    worst
}

fn m_oracles(level: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    let n = pick(level, 20, 200);
    let (mut worst_bis, mut worst_samp) = (0.0_f64, f64::NEG_INFINITY);
    for (i, alg) in algebras().iter().enumerate() {
        let mut rng = stream(seed, "selftest-m", i as i64);
        for _ in 0..n {
            let kind = if rng.random::<bool>() { StateKind::Full } else { StateKind::Ranked(2) };
            let x = alg.random_state(kind, &mut rng).into_element();
            let y = alg.random_state(StateKind::Full, &mut rng).into_element();
            let m = m_quantity(alg, &x, &y, tol)?.value;
            worst_bis = worst_bis.max((m - m_quantity_bisection(alg, &x, &y, 1e-13)?.value).abs());
            let s = m_quantity_inf_sampling(alg, &x, &y, 200, &mut rng)?.value;
            worst_samp = worst_samp.max(m - s);
        }
    }
    Ok((worst_bis <= 1e-8 && worst_samp <= 1e-9, format!("bisection {worst_bis:.2e}, sampling undershoot {worst_samp:.2e}")))
}

fn d_formulas(level: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    let n = pick(level, 30, 200);
    let mut worst: f64 = 0.0;
    for (i, alg) in algebras().iter().enumerate() {
        let mut rng = stream(seed, "selftest-d", i as i64);
        for _ in 0..n {
            let x = alg.random_state(StateKind::Full, &mut rng).into_element();
            let y = alg.random_state(StateKind::Full, &mut rng).into_element();
            let d = distance_parts(alg, &x, &y, tol)?.2;
            worst = worst.max((d - line_decomposition(alg, &x, &y, tol)?.distance()).abs());
        }
    }
    Ok((worst <= 1e-6, format!("max |d_m − d_line| {worst:.2e}")))
}

fn metric_axioms(level: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    let n = pick(level, 200, 3000);
    let mut bad = 0;
    let mut rng = stream(seed, "selftest-axioms", 0);
    for i in 0..n {
        let alg = &algebras()[i % 3];
        let s: Vec<_> = (0..3).map(|_| alg.random_state(StateKind::Full, &mut rng).into_element()).collect();
        let d = |a: usize, b: usize| distance_parts(alg, &s[a], &s[b], tol).map(|p| p.2);
        let (dxy, dyx, dyz, dxz) = (d(0, 1)?, d(1, 0)?, d(1, 2)?, d(0, 2)?);
        let l1 = alg.norm(&(&s[0] - &s[1]), Norm::One);
        if (dxy - dyx).abs() > 1e-10 || dxz > dxy + dyz + 1e-9 || 0.5 * l1 > dxy + 1e-10 {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{bad} violations in {n} triples")))
}

fn two_point_example(_: Level, _: u64, tol: &Tolerances) -> Result<(bool, String)> {
    let alg = TracialAlgebra::full(2);
    let x = |eta: f64| {
        let s = 2.0 / (1.0 + eta);
        alg.diag(&[&[s, s * eta]])
    };
    let (a, b) = (x(0.5)?, x(0.25)?);
    let (mab, mba, d) = distance_parts(&alg, &a, &b, tol)?;
    let p = mab * mba;
    Ok(((p - 0.5).abs() <= 1e-12 && (d - 1.0 / 3.0).abs() <= 1e-12, format!("product {p:.15}, d {d:.15}")))
}

fn pairing_identity(level: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (i, alg) in algebras().iter().enumerate() {
        for j in 0..pick(level, 3, 20) {
            let mut rng = stream(seed, "selftest-pairing", (10 * i + j) as i64);
            let s = SuperOperator::random_channel(alg, 2, 0.1, &alg.identity(), &mut rng, tol)?;
            worst = worst.max(pairing_defect(&s, &s.predual(), 20, seed));
        }
    }
    Ok((worst <= 1e-12, format!("max pairing defect {worst:.2e}")))
}

fn contraction_anchors(level: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    let alg = TracialAlgebra::full(2);
    let opts = EstimateOptions { n_samples: pick(level, 100, 200), ..EstimateOptions::default() };
    let mut rng = stream(seed, "selftest-contraction", 0);
    let rep = contraction_estimate(&SuperOperator::replacement(&alg, &alg.identity(), tol)?, &opts, &mut rng, tol)?;
    let tr = contraction_estimate(&SuperOperator::transpose(&alg, tol), &opts, &mut rng, tol)?;
    let dep = contraction_estimate(&SuperOperator::depolarizing(&alg, 0.5, tol)?, &opts, &mut rng, tol)?;
    let ok = rep.lower == 0.0 && rep.upper <= 1e-12 && tr.lower >= 0.99 && dep.lower >= 0.799 && dep.lower <= 0.8 + 1e-9 && dep.upper >= 0.8 - 1e-9;
    Ok((
        ok,
        format!(
            "replacement [{:.1e}, {:.1e}], transpose lower {:.4}, depolarizing [{:.4}, {:.4}]",
            rep.lower, rep.upper, tr.lower, dep.lower, dep.upper
        ),
    ))
}

fn map_files(_: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    let alg = TracialAlgebra::new(&[2, 1], &[1.0, 1.0])?;
    let mut rng = stream(seed, "selftest-files", 0);
    let s = SuperOperator::random_channel(&alg, 3, 0.2, &alg.identity(), &mut rng, tol)?;
    let back = MapFile::from_json(&MapFile::from_operator(&s).to_json())?.build(tol)?;
    Ok((back.matrix() == s.matrix(), "mixed channel round trip".into()))
}

fn kingman_rate(_: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    let alg = TracialAlgebra::full(2);
    let ens = ChannelEnsemble::new(&alg, EnsembleSpec::Fixed { channel: ChannelSpec::Depolarizing { eps: 0.5 } }, tol)?;
    let maps = DrivenChannels::new(ErgodicDriver::new(DriverKind::Constant)?, ens);
    let mut plan = ProcessPlan { length: 40, directions: vec![Direction::GammaRight], ..ProcessPlan::default() };
    plan.record.seed = seed;
    let run = run_experiment(&maps, &plan, 0, tol)?;
    let c = run.summaries[0].rate.map(|r| r.c).unwrap_or(f64::NAN);
    Ok(((c - 0.5).abs() <= 1e-3, format!("C = {c:.6}")))
}

fn iid_two_channel(weights_eps: Option<f64>) -> EnsembleSpec {
    match weights_eps {
        None => EnsembleSpec::Discrete {
            channels: vec![ChannelSpec::Transpose, ChannelSpec::Depolarizing { eps: 0.5 }],
            weights: vec![1.0, 1.0],
        },
        Some(mix) => EnsembleSpec::Discrete {
            channels: vec![
                ChannelSpec::RandomChannel { k: 2, mix, target: Some(vec![vec![3.0, 1.0]]), seed: 1 },
                ChannelSpec::Depolarizing { eps: 0.5 },
            ],
            weights: vec![1.0, 1.0],
        },
    }
}

fn rate_constancy(_: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    use rayon::prelude::*;
    let alg = TracialAlgebra::full(2);
    let ens = ChannelEnsemble::new(&alg, iid_two_channel(Some(0.2)), tol)?;
    let mut plan = ProcessPlan { length: 60, directions: vec![Direction::GammaRight], probes: 2, ..ProcessPlan::default() };
    plan.record.seed = seed;
    let cs = (0..20)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let d = ErgodicDriver::new(DriverKind::IidShift { seed: child_seed(seed, "omega", s) })?;
            let run = run_experiment(&DrivenChannels::new(d, ens.clone()), &plan, s as u64, tol)?;
            Ok(run.summaries[0].rate.map(|r| r.c).unwrap_or(f64::NAN))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    let sd = (cs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (cs.len() - 1) as f64).sqrt();
    Ok((sd <= 0.02, format!("mean {mean:.4}, stddev {sd:.4}")))
}

/// Chi-square p-value of counts of `ν = 0, 1, …` against geometric(½);
/// the last bin collects the tail.
pub fn geometric_half_p_value(hist: &[usize], missing: usize, bins: usize) -> f64 {
    let total = (hist.iter().sum::<usize>() + missing) as f64;
    let mut obs = vec![0.0; bins];
    for (v, &c) in hist.iter().enumerate() {
        obs[v.min(bins - 1)] += c as f64;
    }
    obs[bins - 1] += missing as f64;
    let stat: f64 = (0..bins)
        .map(|v| {
            let p = if v + 1 < bins { 0.5f64.powi(v as i32 + 1) } else { 0.5f64.powi(bins as i32 - 1) };
            let e = total * p;
            (obs[v] - e).powi(2) / e
        })
        .sum();
    ChiSquared::new((bins - 1) as f64).map(|d| d.sf(stat)).unwrap_or(0.0)
}

fn stopping_time(level: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    use rayon::prelude::*;
    let alg = TracialAlgebra::full(2);
    let ens = ChannelEnsemble::new(&alg, iid_two_channel(None), tol)?;
    let n = pick(level, 100, 1000);
    let mut plan =
        ProcessPlan { length: 40, directions: vec![Direction::GammaRight], probes: 1, stop_at_nu: true, ..ProcessPlan::default() };
    plan.record.seed = seed;
    let nus = (0..n)
        .into_par_iter()
        .map(|s| -> Result<Option<usize>> {
            let d = ErgodicDriver::new(DriverKind::IidShift { seed: child_seed(seed, "omega", s as i64) })?;
            Ok(run_experiment(&DrivenChannels::new(d, ens.clone()), &plan, s as u64, tol)?.summaries[0].nu)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hist = vec![0usize; 41];
    let mut missing = 0;
    for v in nus {
        match v {
            Some(v) => hist[v] += 1,
            None => missing += 1,
        }
    }
    let bins = if n >= 1000 { 7 } else { 4 };
    let p = geometric_half_p_value(&hist, missing, bins);
    Ok((p > 0.01, format!("p = {p:.3}, counts {:?}", &hist[..bins.min(hist.len())])))
}

fn fcs_suite(level: Level, seed: u64, tol: &Tolerances) -> Result<(bool, String)> {
    let m = TracialAlgebra::full(2);
    let a = LocalObservable::single(&m, 0, m.diag(&[&[1.0, -1.0]])?)?;
    let plan = ClusteringPlan { gaps: (1..=pick(level, 6, 12)).collect(), ..ClusteringPlan::default() };
    let product = GeneratorEnsemble::new(&m, &m, GeneratorEnsembleSpec::Fixed { generator: GeneratorSpec::Product }, tol)?;
    let pm = FcsMaps::new(ErgodicDriver::new(DriverKind::IidShift { seed })?, product);
    let pr = clustering_experiment(&pm, &a, &a, &plan, tol)?;
    let worst_product = pr.rows.iter().map(|r| r.corr).fold(0.0, f64::max);
    let ens = GeneratorEnsemble::new(&m, &m, GeneratorEnsembleSpec::RandomStinespring { kraus: 2, mix: 0.2 }, tol)?;
    let cm = FcsMaps::new(ErgodicDriver::new(DriverKind::IidShift { seed: child_seed(seed, "omega", 0) })?, ens);
    let cr = clustering_experiment(&cm, &a, &a, &plan, tol)?;
    let fit_ok = match (cr.kappa_fit, cr.prerun.kappa) {
        (Some(f), Some(k)) => f <= k + 0.05,
        _ => false,
    };
    let mut cov_ok = true;
    for k in 1..=pick(level, 1, 3) as i64 {
        cov_ok &= translation_covariance_check(&cm, &a, k, 30, &PsiOptions::default(), tol)?.pass;
    }
    Ok((
        worst_product < 1e-12 && cr.all_pass && fit_ok && cov_ok,
        format!(
            "product max corr {worst_product:.1e}; contracting pass {} κ_fit {:?} κ {:?}; covariance {cov_ok}",
            cr.all_pass, cr.kappa_fit, cr.prerun.kappa
        ),
    ))
}

pub fn suites(level: Level) -> Vec<(&'static str, Check)> {
    let mut v: Vec<(&'static str, Check)> = vec![
        ("m_oracle_agreement", m_oracles),
        ("d_formula_agreement", d_formulas),
        ("x_eta_example", two_point_example),
        ("metric_axioms", metric_axioms),
        ("pairing_identity", pairing_identity),
        ("map_file_round_trip", map_files),
        ("contraction_anchors", contraction_anchors),
        ("kingman_rate", kingman_rate),
        ("stopping_time", stopping_time),
        ("fcs_clustering_covariance", fcs_suite),
    ];
    if level == Level::Full {
        v.push(("rate_constancy", rate_constancy));
    }
    v
}

pub fn cmd_selftest(level: Level, seed: u64, tol: &Tolerances) -> SelftestReport {
    let mut out = Vec::new();
    for (name, check) in suites(level) {
        let t = Instant::now();
        let (pass, detail) = match check(level, seed, tol) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let detail = format!("{detail} ({:.1} s)", t.elapsed().as_secs_f64());
        out.push(SuiteResult { name: name.into(), pass, detail });
    }
    let all_pass = out.iter().all(|s| s.pass);
    SelftestReport { level, suites: out, all_pass }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flipped_predual_breaks_pairing() {
        let tol = Tolerances::default();
        let alg = TracialAlgebra::full(2);
        let s = SuperOperator::random_channel(&alg, 2, 0.1, &alg.identity(), &mut stream(3, "t", 0), &tol).unwrap();
        assert!(pairing_defect(&s, &s.predual(), 10, 1) < 1e-13);
        assert!(pairing_defect(&s, &s.predual().rescaled(-1.0), 10, 1) > 1e-3);
    }

    #[test]
    fn chi_square_accepts_geometric_counts() {
        let hist = [500, 250, 125, 63, 31, 16];
        assert!(geometric_half_p_value(&hist, 15, 6) > 0.5);
        assert!(geometric_half_p_value(&[900, 50, 25, 13, 6, 3], 3, 6) < 1e-6);
    }
}
