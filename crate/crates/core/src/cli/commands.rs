//! Subcommand bodies. Each one takes parsed inputs and an output
//! directory, so the binary and the tests drive the same code.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use super::config::ExperimentConfig;
use super::io::{unix_now, OutputDir, RunManifest, SuiteResult};
use crate::algebra::{Element, MatrixFile, TracialAlgebra};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::fcs::{
    birkhoff_average, clustering_experiment, translation_covariance_check, BirkhoffReport, CovarianceCheck, DecayReport,
    FcsMaps, GeneratorEnsemble, LocalObservable,
};
use crate::hennion::{
    line_decomposition, m_quantity, m_quantity_bisection, m_quantity_inf_sampling, distance_from_product,
    ComponentVerdict,
};
use crate::process::{
    run_experiment, ChannelEnsemble, CollapseReport, Direction, DirectionSummary, DrivenChannels, ProcessRow,
    RunFailure,
};
use crate::qmaps::{contraction_estimate, is_strict_contraction, EstimateOptions, Flags, MapFile, Tri, Verdict};
use crate::rng::stream;

// ---------------------------------------------------------------------------
// metric

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDeltas {
    /// `|m_eigen − m_bisection|` for `(x, y)` and `(y, x)`.
    pub bisection: [f64; 2],
    /// `m_inf_sampling − m_eigen`; non-negative up to rounding.
    pub sampling_gap: [f64; 2],
    /// `|d_from_m − d_from_line|` when the line decomposition exists.
    pub line: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub m_xy: f64,
    pub m_yx: f64,
    pub d: f64,
    pub d_line: Option<f64>,
    pub t_plus: Option<f64>,
    pub t_minus: Option<f64>,
    pub component_verdict: ComponentVerdict,
    pub oracle: OracleDeltas,
}

/// Hennion geometry of two matrix files, normalized to states.
pub fn cmd_metric(x_json: &str, y_json: &str, samples: usize, seed: u64, tol: &Tolerances) -> Result<MetricReport> {
    let (ax, x) = MatrixFile::from_json(x_json)?;
    let (ay, y) = MatrixFile::from_json(y_json)?;
    if ax != ay {
        return Err(Error::ShapeMismatch("the two matrices live on different algebras".into()));
    }
    let alg = ax;
    let x = alg.normalize(&alg.hermitize(&x, tol.herm_tol)?, tol)?.into_element();
    let y = alg.normalize(&alg.hermitize(&y, tol.herm_tol)?, tol)?.into_element();
    let m_xy = m_quantity(&alg, &x, &y, tol)?.value;
    let m_yx = m_quantity(&alg, &y, &x, tol)?.value;
    let d = distance_from_product(m_xy * m_yx);
    let bis = |p: &Element, q: &Element| m_quantity_bisection(&alg, p, q, 1e-13).map(|m| m.value);
    let mut rng = stream(seed, "sampling", 0);
    let mut samp = |p: &Element, q: &Element| m_quantity_inf_sampling(&alg, p, q, samples.max(1), &mut rng).map(|m| m.value);
    let bisection = [(m_xy - bis(&x, &y)?).abs(), (m_yx - bis(&y, &x)?).abs()];
    let sampling_gap = [samp(&x, &y)? - m_xy, samp(&y, &x)? - m_yx];
    let line = match line_decomposition(&alg, &x, &y, tol) {
        Ok(l) => Some(l),
        Err(Error::DegeneratePair) => None,
        Err(e) => return Err(e),
    };
    let d_line = line.as_ref().map(|l| l.distance());
    Ok(MetricReport {
        m_xy,
        m_yx,
        d,
        d_line,
        t_plus: line.as_ref().map(|l| l.t_plus),
        t_minus: line.as_ref().map(|l| l.t_minus),
        component_verdict: if m_xy * m_yx < 1e-15 { ComponentVerdict::DistanceOne } else { ComponentVerdict::SameComponent },
        oracle: OracleDeltas { bisection, sampling_gap, line: d_line.map(|v| (v - d).abs()) },
    })
}

// ---------------------------------------------------------------------------
// contraction

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub lower: f64,
    pub upper: f64,
    pub eta: f64,
    pub verdict: Verdict,
    pub fixed_point_file: String,
    pub n_samples: usize,
    pub refine_iters: usize,
    pub flags: Flags,
}

/// Contraction interval of a map file; writes the fixed point and the
/// report into `out`.
pub fn cmd_contraction(
    map_json: &str,
    n_samples: usize,
    refine: usize,
    seed: u64,
    out: &Path,
    tol: &Tolerances,
) -> Result<(ContractionReport, RunManifest)> {
    let started = unix_now();
    let file = MapFile::from_json(map_json)?;
    let s = file.build(tol)?;
    if s.flags().faithful != Tri::Yes {
        let alg = s.algebra();
        let h = s.apply_dual(&alg.identity()).hermitian_part();
        return Err(Error::NotFaithful(format!(
            "γ*(1) has spectrum in [{:.3e}, {:.3e}] and φ(M)M does not span M, so some state is sent to zero \
             and the projective action is undefined",
            alg.lambda_min(&h),
            alg.lambda_max(&h)
        )));
    }
    let opts = EstimateOptions { n_samples, refine_iters: refine, ..EstimateOptions::default() };
    let est = contraction_estimate(&s, &opts, &mut stream(seed, "sampling", 0), tol)?;
    let mut dir = OutputDir::create(out)?.started_at(started);
    dir.write("fixed_point.json", (MatrixFile::to_json(s.algebra(), &est.fixed_point) + "\n").as_bytes())?;
    let report = ContractionReport {
        lower: est.lower,
        upper: est.upper,
        eta: est.eta,
        verdict: is_strict_contraction(&est),
        fixed_point_file: dir.path("fixed_point.json").display().to_string(),
        n_samples: est.n_samples,
        refine_iters: est.refine_iters,
        flags: *s.flags(),
    };
    dir.write_json("contraction.json", &report)?;
    let hash = super::config::hex(&<sha2::Sha256 as sha2::Digest>::digest(map_json.as_bytes()));
    let suites = vec![SuiteResult {
        name: "interval_ordered".into(),
        pass: report.lower <= report.upper + 1e-12,
        detail: format!("[{:.6}, {:.6}]", report.lower, report.upper),
    }];
    let manifest = dir.finish("contraction", &hash, seed, suites)?;
    Ok((report, manifest))
}

// ---------------------------------------------------------------------------
// process

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionAggregate {
    pub direction: Direction,
    pub c_values: Vec<Option<f64>>,
    pub c_mean: Option<f64>,
    pub c_std: Option<f64>,
    pub exact_zero: usize,
    /// `nu_histogram[v]` streams first certified at `ν = v`.
    pub nu_histogram: Vec<usize>,
    pub nu_missing: usize,
    pub bound_ratio_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: u64,
    pub summaries: Vec<DirectionSummary>,
    pub equivariance_residual: Option<f64>,
    pub collapse_e_k: Option<f64>,
    pub collapse_trailing_change: Option<f64>,
    pub collapse_stabilized: Option<bool>,
    pub collapse_bound_holds: Option<bool>,
    pub failure: Option<RunFailure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessSummary {
    pub streams: usize,
    pub master_seed: u64,
    pub directions: Vec<DirectionAggregate>,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone)]
pub struct ProcessOutcome {
    pub summary: ProcessSummary,
    pub manifest: RunManifest,
    /// First stream failure; everything computed before it is on disk.
    pub failure: Option<RunFailure>,
}

#[derive(Serialize)]
struct CollapseCsvRow {
    run_id: u64,
    n: i64,
    m: i64,
    lhs: f64,
    c_upper: Option<f64>,
    e_running: f64,
}

#[derive(Serialize)]
struct NuCsvRow {
    direction: Direction,
    nu: String,
    count: usize,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    match v.len() {
        0 => (None, None),
        1 => (Some(v[0]), None),
        _ => (Some(v.mean()), Some(v.std_dev())),
    }
}

fn write_matrix(dir: &mut OutputDir, rel: &str, alg: &TracialAlgebra, x: &Element) -> Result<()> {
    dir.write(rel, (MatrixFile::to_json(alg, x) + "\n").as_bytes())?;
    Ok(())
}

pub fn cmd_process(cfg: &ExperimentConfig, out: &Path) -> Result<ProcessOutcome> {
    let started = unix_now();
    use rayon::prelude::*;
    cfg.check()?;
    let tol = &cfg.tolerances;
    let alg = cfg.algebra.build()?;
    let spec = cfg.ensemble.clone().ok_or_else(|| Error::InvalidInput("process needs an ensemble".into()))?;
    let ensemble = ChannelEnsemble::new(&alg, spec, tol)?;
    let plan = cfg.seeded_process_plan();
    let drivers = (0..cfg.streams).map(|i| cfg.driver.driver(cfg.master_seed, i)).collect::<Result<Vec<_>>>()?;
    let runs = drivers
        .into_par_iter()
        .enumerate()
        .map(|(i, d)| run_experiment(&DrivenChannels::new(d, ensemble.clone()), &plan, i as u64, tol))
        .collect::<Result<Vec<_>>>()?;

    let mut dir = OutputDir::create(out)?.started_at(started);
    dir.write("config.json", (cfg.canonical_json() + "\n").as_bytes())?;
    let rows: Vec<&ProcessRow> = runs.iter().flat_map(|r| &r.rows).collect();
    dir.write_csv("process.csv", &rows)?;

    let mut directions = Vec::new();
    let mut nu_rows = Vec::new();
    for &dirn in &plan.directions {
        let sums: Vec<Option<&DirectionSummary>> =
            runs.iter().map(|r| r.summaries.iter().find(|s| s.direction == dirn)).collect();
        let c_values: Vec<Option<f64>> = sums.iter().map(|s| s.and_then(|s| s.rate).map(|r| r.c)).collect();
        let present: Vec<f64> = c_values.iter().flatten().copied().collect();
        let (c_mean, c_std) = mean_std(&present);
        let mut nu_histogram = Vec::new();
        let mut nu_missing = 0;
        for s in &sums {
            match s.and_then(|s| s.nu) {
                Some(v) => {
                    if nu_histogram.len() <= v {
                        nu_histogram.resize(v + 1, 0);
                    }
                    nu_histogram[v] += 1;
                }
                None => nu_missing += 1,
            }
        }
        for (v, &count) in nu_histogram.iter().enumerate() {
            nu_rows.push(NuCsvRow { direction: dirn, nu: v.to_string(), count });
        }
        nu_rows.push(NuCsvRow { direction: dirn, nu: "none".into(), count: nu_missing });
        let blocks: Vec<Vec<(f64, f64)>> = runs
            .iter()
            .map(|r| r.rows.iter().filter(|w| w.direction == dirn).map(|w| (w.length as f64, w.c_upper)).collect())
            .collect();
        dir.write_dat(&format!("c_upper_{}.dat", dirn.label()), "length c_upper (one block per stream)", &blocks)?;
        let diag: Vec<Vec<(f64, f64)>> = runs
            .iter()
            .map(|r| {
                r.rows
                    .iter()
                    .filter(|w| w.direction == dirn)
                    .filter_map(|w| w.spread_l1.or(w.residual_inf).map(|v| (w.length as f64, v)))
                    .collect()
            })
            .collect();
        let (name, what) = match dirn {
            Direction::GammaRight => ("spread.dat", "length spread_l1 (one block per stream)"),
            Direction::PhiLeft => ("residual.dat", "length residual_inf (one block per stream)"),
        };
        dir.write_dat(name, what, &diag)?;
        directions.push(DirectionAggregate {
            direction: dirn,
            c_values,
            c_mean,
            c_std,
            exact_zero: sums.iter().filter(|s| s.and_then(|s| s.rate).is_some_and(|r| r.exact_zero)).count(),
            nu_histogram,
            nu_missing,
            bound_ratio_max: sums.iter().flatten().map(|s| s.bound_ratio).fold(0.0, f64::max),
        });
    }
    dir.write_csv("nu_distribution.csv", &nu_rows)?;

    let collapse_rows: Vec<CollapseCsvRow> = runs
        .iter()
        .flat_map(|r| {
            r.collapse.iter().flat_map(move |c: &CollapseReport| {
                c.rows.iter().map(move |w| CollapseCsvRow {
                    run_id: r.run_id,
                    n: w.n,
                    m: w.m,
                    lhs: w.lhs,
                    c_upper: w.c_upper,
                    e_running: w.e_running,
                })
            })
        })
        .collect();
    if !collapse_rows.is_empty() {
        dir.write_csv("collapse.csv", &collapse_rows)?;
    }
    for r in &runs {
        if let Some(x) = &r.limit_state {
            write_matrix(&mut dir, &format!("limits/limit_state_{}.json", r.run_id), &alg, x)?;
        }
        if let Some(x) = &r.dual_limit {
            write_matrix(&mut dir, &format!("limits/dual_limit_{}.json", r.run_id), &alg, x)?;
        }
    }

    let summary = ProcessSummary {
        streams: cfg.streams,
        master_seed: cfg.master_seed,
        directions,
        runs: runs
            .iter()
            .map(|r| RunSummary {
                run_id: r.run_id,
                summaries: r.summaries.clone(),
                equivariance_residual: r.equivariance_residual,
                collapse_e_k: r.collapse.as_ref().map(|c| c.e_k),
                collapse_trailing_change: r.collapse.as_ref().map(|c| c.trailing_change),
                collapse_stabilized: r.collapse.as_ref().map(|c| c.stabilized),
                collapse_bound_holds: r.collapse.as_ref().map(|c| c.bound_holds),
                failure: r.failure.clone(),
            })
            .collect(),
    };
    dir.write_json("rate_summary.json", &summary)?;

    let failure = runs.iter().find_map(|r| r.failure.clone());
    let mut suites = vec![
        SuiteResult {
            name: "streams_completed".into(),
            pass: failure.is_none(),
            detail: match &failure {
                Some(f) => format!("{}: {}", f.kind, f.message),
                None => format!("{} of {}", runs.len(), runs.len()),
            },
        },
        SuiteResult {
            name: "collapse_bounds".into(),
            pass: summary.directions.iter().all(|d| d.bound_ratio_max <= 1.0 + 1e-9),
            detail: summary
                .directions
                .iter()
                .map(|d| format!("{} ratio {:.3e}", d.direction.label(), d.bound_ratio_max))
                .collect::<Vec<_>>()
                .join(", "),
        },
    ];
    let eq: Vec<f64> = runs.iter().filter_map(|r| r.equivariance_residual).collect();
    if !eq.is_empty() {
        let worst = eq.iter().copied().fold(0.0, f64::max);
        suites.push(SuiteResult { name: "equivariance".into(), pass: worst <= 1e-6, detail: format!("max {worst:.3e}") });
    }
    let cb: Vec<bool> = runs.iter().filter_map(|r| r.collapse.as_ref().map(|c| c.bound_holds)).collect();
    if !cb.is_empty() {
        let ok = cb.iter().filter(|b| **b).count();
        suites.push(SuiteResult {
            name: "rank_one_collapse".into(),
            pass: ok == cb.len(),
            detail: format!("{ok} of {} streams within the bound", cb.len()),
        });
    }
    let manifest = dir.finish("process", &cfg.hash(), cfg.master_seed, suites)?;
    Ok(ProcessOutcome { summary, manifest, failure })
}

// ---------------------------------------------------------------------------
// fcs

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcsStreamSummary {
    pub stream: usize,
    pub kappa_fit: Option<f64>,
    pub e_fit: Option<f64>,
    pub fit_r2: Option<f64>,
    pub e_k: Option<f64>,
    pub kappa: Option<f64>,
    pub c: Option<f64>,
    pub window: usize,
    pub z_c_upper: f64,
    pub all_pass: bool,
    pub degenerate: bool,
    pub notice: Option<String>,
    pub driver_seed: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcsSummary {
    pub streams: Vec<FcsStreamSummary>,
    pub master_seed: u64,
    pub covariance: Vec<(usize, CovarianceCheck)>,
    pub birkhoff: Option<BirkhoffReport>,
}

#[derive(Debug, Clone)]
pub struct FcsOutcome {
    pub summary: FcsSummary,
    pub reports: Vec<DecayReport>,
    pub manifest: RunManifest,
}

#[derive(Serialize)]
struct DecayCsvRow {
    stream: usize,
    gap: usize,
    corr: f64,
    bound_rhs: Option<f64>,
    pass: bool,
    budget: f64,
    in_geometry: bool,
}

#[derive(Serialize)]
struct CovarianceCsvRow {
    stream: usize,
    k: i64,
    deviation: f64,
    budget: f64,
    pass: bool,
}

#[derive(Serialize)]
struct BirkhoffCsvRow {
    stream: usize,
    n: usize,
    re: f64,
    im: f64,
    cauchy: f64,
}

fn single_site(alg: &TracialAlgebra, diag: &Option<Vec<Vec<f64>>>) -> Result<LocalObservable> {
    let a = match diag {
        Some(d) => {
            let rows: Vec<&[f64]> = d.iter().map(|v| v.as_slice()).collect();
            alg.diag(&rows)?
        }
        None => crate::process::ProcessPlan::default().observable(alg)?,
    };
    LocalObservable::single(alg, 0, a)
}

fn driver_label(d: &crate::process::ErgodicDriver) -> String {
    serde_json::to_string(d.kind()).expect("serializable")
}

pub fn cmd_fcs(cfg: &ExperimentConfig, out: &Path) -> Result<FcsOutcome> {
    let started = unix_now();
    cfg.check()?;
    let tol = &cfg.tolerances;
    let on_site = cfg.algebra.build()?;
    let bond = cfg.bond.as_ref().ok_or_else(|| Error::InvalidInput("fcs needs a bond algebra".into()))?.build()?;
    let spec = cfg.generators.clone().ok_or_else(|| Error::InvalidInput("fcs needs a generator ensemble".into()))?;
    let ensemble = GeneratorEnsemble::new(&on_site, &bond, spec, tol)?;
    let a = single_site(&on_site, &cfg.fcs.observable_a)?;
    let b = single_site(&on_site, &cfg.fcs.observable_b)?;
    let mut plan = cfg.fcs.clustering.clone();
    plan.psi = cfg.seeded_psi_options();

    let mut maps = Vec::with_capacity(cfg.streams);
    for i in 0..cfg.streams {
        maps.push(FcsMaps::new(cfg.driver.driver(cfg.master_seed, i)?, ensemble.clone()));
    }
    let mut reports = Vec::new();
    let mut streams = Vec::new();
    let mut covariance = Vec::new();
    for (i, m) in maps.iter().enumerate() {
        let rep = clustering_experiment(m, &a, &b, &plan, tol)?;
        streams.push(FcsStreamSummary {
            stream: i,
            kappa_fit: rep.kappa_fit,
            e_fit: rep.e_fit,
            fit_r2: rep.fit_r2,
            e_k: rep.prerun.e_k,
            kappa: rep.prerun.kappa,
            c: rep.prerun.rate.map(|r| r.c),
            window: rep.window,
            z_c_upper: rep.z_c_upper,
            all_pass: rep.all_pass,
            degenerate: rep.degenerate,
            notice: rep.notice.clone(),
            driver_seed: driver_label(&m.driver),
        });
        reports.push(rep);
        if let Some(cp) = &cfg.fcs.covariance {
            for &k in &cp.shifts {
                covariance.push((i, translation_covariance_check(m, &a, k, cp.window, &plan.psi, tol)?));
            }
        }
    }
    let birkhoff = match &cfg.fcs.birkhoff {
        Some(bp) => Some(birkhoff_average(&maps, &a, bp.n_max, bp.window, &plan.psi, tol)?),
        None => None,
    };

    let mut dir = OutputDir::create(out)?.started_at(started);
    dir.write("config.json", (cfg.canonical_json() + "\n").as_bytes())?;
    let decay: Vec<DecayCsvRow> = reports
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.rows.iter().map(move |g| DecayCsvRow {
                stream: i,
                gap: g.gap,
                corr: g.corr,
                bound_rhs: g.bound_rhs,
                pass: g.pass,
                budget: g.budget,
                in_geometry: g.in_geometry,
            })
        })
        .collect();
    dir.write_csv("decay_report.csv", &decay)?;
    let corr_blocks: Vec<Vec<(f64, f64)>> =
        reports.iter().map(|r| r.rows.iter().map(|g| (g.gap as f64, g.corr)).collect()).collect();
    dir.write_dat("decay.dat", "gap corr (one block per stream)", &corr_blocks)?;
    let rhs_blocks: Vec<Vec<(f64, f64)>> = reports
        .iter()
        .map(|r| r.rows.iter().filter_map(|g| g.bound_rhs.map(|v| (g.gap as f64, v))).collect())
        .collect();
    dir.write_dat("decay_bound.dat", "gap bound_rhs (one block per stream)", &rhs_blocks)?;
    if !covariance.is_empty() {
        let rows: Vec<CovarianceCsvRow> = covariance
            .iter()
            .map(|(i, c)| CovarianceCsvRow { stream: *i, k: c.k, deviation: c.deviation, budget: c.budget, pass: c.pass })
            .collect();
        dir.write_csv("covariance.csv", &rows)?;
    }
    if let Some(br) = &birkhoff {
        let rows: Vec<BirkhoffCsvRow> = br
            .streams
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                s.partial.iter().zip(&s.cauchy).enumerate().map(move |(n, (p, c))| BirkhoffCsvRow {
                    stream: i,
                    n,
                    re: p[0],
                    im: p[1],
                    cauchy: *c,
                })
            })
            .collect();
        dir.write_csv("birkhoff.csv", &rows)?;
        let blocks: Vec<Vec<(f64, f64)>> = br
            .streams
            .iter()
            .map(|s| s.partial.iter().enumerate().map(|(n, p)| (n as f64, p[0])).collect())
            .collect();
        dir.write_dat("birkhoff.dat", "n Re(partial average) (one block per stream)", &blocks)?;
    }
    let summary = FcsSummary { streams, master_seed: cfg.master_seed, covariance, birkhoff };
    dir.write_json("fcs_summary.json", &summary)?;

    let mut suites = vec![SuiteResult {
        name: "clustering_bound".into(),
        pass: reports.iter().all(|r| r.all_pass),
        detail: format!("{} of {} streams pass at every gap", reports.iter().filter(|r| r.all_pass).count(), reports.len()),
    }];
    if !summary.covariance.is_empty() {
        let ok = summary.covariance.iter().filter(|(_, c)| c.pass).count();
        suites.push(SuiteResult {
            name: "translation_covariance".into(),
            pass: ok == summary.covariance.len(),
            detail: format!("{ok} of {} shifts within budget", summary.covariance.len()),
        });
    }
    if let Some(br) = &summary.birkhoff {
        let ok = br.streams.iter().all(|s| s.translation_gap <= s.translation_budget);
        suites.push(SuiteResult {
            name: "birkhoff_shift_invariance".into(),
            pass: ok,
            detail: format!("spread {:.3e}, std err {:.3e}", br.spread, br.std_err),
        });
    }
    let manifest = dir.finish("fcs", &cfg.hash(), cfg.master_seed, suites)?;
    Ok(FcsOutcome { summary, reports, manifest })
}

