//! One runner per subcommand. Each fills a [`Recorder`], a per-sample
//! [`Detail`] table and any plot data.

use isk_core::disorder::sample_disorder;
use isk_core::exact::{self, ENUMERATION_CAP};
use isk_core::fluctuation::{self, EnsembleModel, GammaConfig, PressureEnsemble};
use isk_core::hamiltonians::QuadraticForm;
use isk_core::lattice::{self, BoxGeometry};
use isk_core::mc::{self, ChainSeed, Engine};
use isk_core::rs::{self, Curvature, EngineChoice, EstimatorConfig, GridConfig, IterationConfig};
use isk_core::stats;
use rayon::prelude::*;

use crate::config::{EngineKind, ExperimentConfig, FluctuationModel, GeometrySpec, Subcommand};
use crate::error::{CliError, Context};
use crate::output::{num, Detail, PlotKind, Recorder, DIMENSIONLESS, PRESSURE_UNITS};

pub struct RunOutput {
    pub recorder: Recorder,
    pub detail: Detail,
    pub plots: Vec<(PlotKind, Vec<Vec<f64>>)>,
}

pub fn run(cfg: &ExperimentConfig, recorder: Recorder) -> Result<RunOutput, CliError> {
    let mut out = RunOutput {
        recorder,
        detail: Detail::new(&[]),
        plots: Vec::new(),
    };
    match cfg.subcommand {
        Subcommand::Pressure => pressure(cfg, &mut out)?,
        Subcommand::RsSolve => rs_solve(cfg, &mut out)?,
        Subcommand::InterpolateCheck => interpolate_check(cfg, &mut out)?,
        Subcommand::Dobrushin => dobrushin(cfg, &mut out)?,
        Subcommand::Fluctuations => fluctuations(cfg, &mut out)?,
        Subcommand::Gamma => gamma(cfg, &mut out)?,
        Subcommand::McValidate => mc_validate(cfg, &mut out)?,
    }
    Ok(out)
}

/// Exact below the enumeration cap, Monte Carlo above, unless forced.
fn ensemble_engine(cfg: &ExperimentConfig, volume: usize) -> Result<Engine, CliError> {
    match cfg.engine {
        EngineKind::Exact if volume > ENUMERATION_CAP => Err(CliError::Core {
            context: "engine selection",
            source: isk_core::Error::Size(format!(
                "exact enumeration is limited to {ENUMERATION_CAP} sites, box has {volume}"
            )),
        }),
        EngineKind::Exact => Ok(Engine::Exact),
        EngineKind::MonteCarlo => Ok(Engine::MonteCarlo(cfg.mc.clone())),
        EngineKind::Auto if volume <= ENUMERATION_CAP => Ok(Engine::Exact),
        EngineKind::Auto => Ok(Engine::MonteCarlo(cfg.mc.clone())),
        EngineKind::Quadrature => unreachable!("rejected during validation"),
    }
}

fn engine_name(e: &Engine) -> &'static str {
    match e {
        Engine::Exact => "exact",
        Engine::MonteCarlo(_) => "mc",
    }
}

fn pressure(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let g = cfg.box_geometry().ctx("geometry")?;
    let engine = ensemble_engine(cfg, g.volume())?;
    let rows: Vec<(f64, f64)> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|idx| {
            let sample = sample_disorder(&g, cfg.seed, idx);
            match &engine {
                Engine::Exact => Ok((exact::pressure(&g, &cfg.params, &sample, &cfg.kernel)?, 0.0)),
                Engine::MonteCarlo(mcfg) => {
                    let est = mc::thermo_integration_pressure(
                        &g,
                        &cfg.params,
                        &sample,
                        &cfg.kernel,
                        mcfg,
                        &ChainSeed::new(cfg.seed, &[idx]),
                    )?;
                    Ok((est.pressure.mean, est.pressure.stderr))
                }
            }
        })
        .collect::<isk_core::Result<_>>()
        .ctx("pressure")?;
    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let r = &mut out.recorder;
    r.note("engine", engine_name(&engine));
    r.note("volume", g.volume());
    let (mean, err) = if values.len() > 1 {
        (stats::mean(&values), Some(stats::std_error(&values)))
    } else {
        let err = if matches!(engine, Engine::Exact) { None } else { Some(rows[0].1) };
        (values[0], err)
    };
    r.push("mean_pressure", mean, err, PRESSURE_UNITS);
    if values.len() > 1 {
        let var = stats::variance(&values);
        r.push("variance", var, None, DIMENSIONLESS);
        r.push("rescaled_variance", g.volume() as f64 * var, None, DIMENSIONLESS);
    }
    out.detail = Detail::new(&["sample", "pressure", "stderr"]);
    for (idx, (p, se)) in rows.iter().enumerate() {
        out.detail.row(vec![idx.to_string(), num(*p), num(*se)]);
    }
    Ok(())
}

fn estimator(cfg: &ExperimentConfig) -> Result<EstimatorConfig, CliError> {
    let mut est = EstimatorConfig::new(cfg.box_geometry().ctx("geometry")?, cfg.kernel.clone(), cfg.n_samples, cfg.seed);
    est.engine = match cfg.engine {
        EngineKind::Auto => EngineChoice::Auto,
        EngineKind::Exact => EngineChoice::Exact,
        EngineKind::MonteCarlo => EngineChoice::MonteCarlo,
        EngineKind::Quadrature => EngineChoice::Quadrature(cfg.rs.quadrature_order),
    };
    est.mc = cfg.mc.clone();
    Ok(est)
}

fn iteration(cfg: &ExperimentConfig) -> IterationConfig {
    IterationConfig {
        omega: cfg.rs.omega,
        tolerance: cfg.rs.iteration_tolerance,
        max_iterations: cfg.rs.max_iterations,
        start: cfg.rs.start,
    }
}

fn rs_solve(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let est = estimator(cfg)?;
    let p = &cfg.params;
    let grid = GridConfig {
        step: cfg.rs.grid_step,
        tolerance: cfg.rs.tolerance,
    };
    let engine = est.select(p.kappa).ctx("rs-solver")?;
    let sol = rs::solve(p.kappa, p.beta, p.h, &grid, &iteration(cfg), &est).ctx("rs-solver")?;
    let r = &mut out.recorder;
    r.note("engine", engine.name());
    r.note("unique_minimizer", sol.is_unique());
    r.note(
        "near_degenerate",
        serde_json::Value::Array(sol.near_degenerate.iter().map(|&q| serde_json::json!(q)).collect()),
    );
    r.push("qbar", sol.qbar, None, DIMENSIONLESS);
    r.push("rs_pressure", sol.f_min, Some(sol.f_min_stderr), PRESSURE_UNITS);
    r.push("fixed_point_q", sol.fixed_point_q, None, DIMENSIONLESS);
    r.push("agreement_gap", sol.agreement_gap, None, DIMENSIONLESS);
    match rs::curvature_check(p.kappa, p.beta, p.h, sol.qbar, &est).ctx("rs-solver")? {
        Curvature::Value {
            second_derivative,
            stderr,
        } => r.push("second_derivative", second_derivative, Some(stderr), DIMENSIONLESS),
        Curvature::Boundary => r.note("curvature", "boundary"),
    }
    if p.kappa == 0.0 || cfg.kernel.is_zero() {
        let (q, pr) = rs::sk_rs_reference(p.beta, p.h, cfg.rs.quadrature_order).ctx("rs-solver")?;
        r.push("sk_reference_q", q, None, DIMENSIONLESS);
        r.push("sk_reference_pressure", pr, None, PRESSURE_UNITS);
    }
    out.detail = Detail::new(&["q", "rfim_pressure", "rfim_stderr", "F"]);
    let mut rows = Vec::new();
    for pt in &sol.grid {
        out.detail
            .row(vec![num(pt.q), num(pt.rfim_pressure), num(pt.rfim_stderr), num(pt.f_value)]);
        rows.push(vec![pt.q, pt.rfim_pressure, pt.rfim_stderr, pt.f_value]);
    }
    out.plots.push((PlotKind::FCurve, rows));
    Ok(())
}

fn interpolate_check(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let g = cfg.box_geometry().ctx("geometry")?;
    let samples: Vec<_> = (0..cfg.n_samples as u64).map(|i| sample_disorder(&g, cfg.seed, i)).collect();
    let pts = exact::interpolation_derivative_check(
        &cfg.interpolate.t_grid,
        cfg.interpolate.fd_step,
        &g,
        &cfg.params,
        &samples,
        &cfg.kernel,
    )
    .ctx("exact-engine")?;
    let r = &mut out.recorder;
    let worst = pts.iter().map(|p| p.max_relative_error).fold(0.0, f64::max);
    r.push("max_relative_error", worst, None, DIMENSIONLESS);
    r.note("all_residuals_within_3se", pts.iter().all(|p| p.residual_within(3.0)));
    out.detail = Detail::new(&[
        "t",
        "max_relative_error",
        "mean_derivative",
        "mean_prediction",
        "mean_residual",
        "residual_stderr",
    ]);
    let mut rows = Vec::new();
    for p in &pts {
        r.push(format!("residual_t{}", p.t), p.mean_residual, Some(p.residual_stderr), PRESSURE_UNITS);
        out.detail.row(vec![
            num(p.t),
            num(p.max_relative_error),
            num(p.mean_derivative),
            num(p.mean_prediction),
            num(p.mean_residual),
            num(p.residual_stderr),
        ]);
        rows.push(vec![p.t, p.mean_derivative, p.mean_prediction, p.mean_residual, p.residual_stderr]);
    }
    out.plots.push((PlotKind::TDerivative, rows));
    Ok(())
}

fn dobrushin(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let kappa = cfg.params.kappa;
    let rep = lattice::uniqueness_check(&cfg.kernel, kappa).ctx("lattice-kernel")?;
    let r = &mut out.recorder;
    r.note("inside", rep.inside);
    r.push("kappa1", rep.kappa1, None, DIMENSIONLESS);
    r.push("kernel_sum", rep.kernel_sum, None, DIMENSIONLESS);
    r.push("max_row_sum", rep.max_row_sum, None, DIMENSIONLESS);
    if let Some(xi) = rep.correlation_length() {
        r.push("correlation_length", xi, None, DIMENSIONLESS);
    }
    out.detail = Detail::new(&["displacement", "kernel", "coefficient_bound"]);
    for (disp, k) in cfg.kernel.entries() {
        let c = lattice::dobrushin_coefficient_bound(&cfg.kernel, kappa, disp).ctx("lattice-kernel")?;
        let d: Vec<String> = disp.iter().map(|x| x.to_string()).collect();
        out.detail.row(vec![d.join(" "), num(k), num(c)]);
    }
    Ok(())
}

fn fluctuations(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let p = &cfg.params;
    let model = match cfg.fluctuations.model {
        FluctuationModel::Isk => EnsembleModel::Interpolating(p.clone()),
        FluctuationModel::Rfim => EnsembleModel::Rfim {
            kappa: p.kappa,
            h: p.h,
            gamma: p.gamma,
        },
    };
    let geoms: Vec<BoxGeometry> = cfg
        .fluctuations
        .sizes
        .iter()
        .map(|&n| cfg.geometry_of(GeometrySpec::Length(n)))
        .collect::<isk_core::Result<_>>()
        .ctx("geometry")?;
    let largest = geoms.iter().map(|g| g.volume()).max().unwrap_or(0);
    let engine = ensemble_engine(cfg, largest)?;
    let r = &mut out.recorder;
    r.note("engine", engine_name(&engine));
    let ensembles: Vec<PressureEnsemble> = if geoms.len() >= 3 {
        let (rep, ens) = fluctuation::variance_scaling(&geoms, &model, &cfg.kernel, cfg.n_samples, cfg.seed, &engine)
            .ctx("fluctuation-lab")?;
        if rep.degenerate {
            r.note("scaling", "degenerate: zero variance");
        } else {
            r.push("variance_slope", rep.slope, Some(rep.slope_stderr), DIMENSIONLESS);
        }
        out.plots.push((
            PlotKind::VarianceScaling,
            rep.rows
                .iter()
                .map(|row| vec![row.volume as f64, row.variance, row.variance_stderr])
                .collect(),
        ));
        ens
    } else {
        geoms
            .iter()
            .map(|g| fluctuation::ensemble_pressures(g, &model, &cfg.kernel, cfg.n_samples, cfg.seed, &engine))
            .collect::<isk_core::Result<_>>()
            .ctx("fluctuation-lab")?
    };
    out.detail = Detail::new(&["volume", "sample", "pressure"]);
    for e in &ensembles {
        let v = e.volume;
        r.push(format!("mean_pressure_{v}"), e.mean, Some((e.variance / cfg.n_samples as f64).sqrt()), PRESSURE_UNITS);
        r.push(format!("rescaled_variance_{v}"), e.rescaled_variance, None, DIMENSIONLESS);
        for (idx, x) in &e.entries {
            out.detail.row(vec![v.to_string(), idx.to_string(), num(*x)]);
        }
    }
    let last = ensembles.last().expect("at least one size");
    if cfg.n_samples >= 100 {
        match fluctuation::clt_test(last) {
            Ok(clt) => {
                r.push("ks_distance", clt.ks_distance, None, DIMENSIONLESS);
                r.push("ks_pvalue", clt.ks_pvalue, None, DIMENSIONLESS);
                r.push("skewness", clt.skewness, None, DIMENSIONLESS);
                r.push("excess_kurtosis", clt.excess_kurtosis, None, DIMENSIONLESS);
            }
            Err(isk_core::Error::Degenerate(m)) => r.note("clt", m),
            Err(e) => return Err(e).ctx("fluctuation-lab"),
        }
    } else {
        r.note("clt", "skipped: fewer than 100 samples");
    }
    let scale = (last.volume as f64).sqrt();
    let z: Vec<f64> = last.values().iter().map(|x| scale * (x - last.mean)).collect();
    let (edges, counts) = stats::histogram(&z, cfg.fluctuations.bins);
    out.plots.push((
        PlotKind::Histogram,
        edges.iter().zip(&counts).map(|(e, c)| vec![*e, *c as f64]).collect(),
    ));
    out.plots.push((
        PlotKind::QqPairs,
        stats::qq_pairs(&z).into_iter().map(|(a, b)| vec![a, b]).collect(),
    ));
    Ok(())
}

fn gamma(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let p = &cfg.params;
    let qbar = match cfg.gamma.qbar {
        Some(q) => q,
        None => {
            let est = estimator(cfg)?;
            rs::fixed_point_qbar(p.kappa, p.beta, p.h, &iteration(cfg), &est)
                .ctx("rs-solver")?
                .q
        }
    };
    let gcfg = GammaConfig {
        kernel: cfg.kernel.clone(),
        buffer: cfg.gamma.buffer,
        n_outer: cfg.gamma.n_outer,
        n_inner: cfg.gamma.n_inner,
        quadrature_order: cfg.gamma.quadrature_order,
        master_seed: cfg.seed,
    };
    let g = fluctuation::estimate_gamma(p.kappa, p.beta, p.h, qbar, &gcfg).ctx("fluctuation-lab")?;
    let pred = fluctuation::variance_prediction(&g, p.beta, qbar);
    let r = &mut out.recorder;
    r.note("qbar_source", if cfg.gamma.qbar.is_some() { "config" } else { "fixed point" });
    r.note("nonpositive_warning", pred.nonpositive_warning);
    r.push("qbar", qbar, None, DIMENSIONLESS);
    r.push("gamma", g.gamma, Some(g.stderr), DIMENSIONLESS);
    r.push("variance_prediction", pred.value, Some(pred.stderr), DIMENSIONLESS);
    out.detail = Detail::new(&["quantity", "value", "stderr"]);
    out.detail.row(vec!["qbar".into(), num(qbar), num(0.0)]);
    out.detail.row(vec!["gamma".into(), num(g.gamma), num(g.stderr)]);
    out.detail
        .row(vec!["variance_prediction".into(), num(pred.value), num(pred.stderr)]);
    Ok(())
}

fn mc_validate(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let g = cfg.box_geometry().ctx("geometry")?;
    let n = g.volume();
    if n > ENUMERATION_CAP {
        return Err(CliError::Core {
            context: "mc-validate",
            source: isk_core::Error::Size(format!(
                "validation needs exact enumeration; box has {n} sites, cap is {ENUMERATION_CAP}"
            )),
        });
    }
    let nf = n as f64;
    let rows: Vec<Vec<(String, f64, f64, f64)>> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|idx| {
            let sample = sample_disorder(&g, cfg.seed, idx);
            let form = QuadraticForm::interpolating(&g, &cfg.kernel, &sample, &cfg.params)?;
            let seed = ChainSeed::new(cfg.seed, &[idx]);
            let magnetization = |s: &[i8]| s.iter().map(|&x| x as f64).sum::<f64>() / nf;
            let energy = |s: &[i8]| form.energy_of(s) / nf;
            let mut res = Vec::new();
            for (k, (name, obs)) in [
                ("magnetization", &magnetization as &(dyn Fn(&[i8]) -> f64 + Sync)),
                ("energy", &energy),
            ]
            .into_iter()
            .enumerate()
            {
                let truth = exact::expectation(&form, obs)?;
                let est = mc::estimate_expectation(&form, 1.0, obs, &cfg.mc, seed.child(k as u64))?;
                res.push((name.to_string(), truth, est.mean, est.stderr));
            }
            let truth = exact::log_partition(&form)? / nf;
            let ti = mc::thermo_integration_form(&form, &cfg.mc, &seed.child(2))?;
            res.push(("pressure".into(), truth, ti.pressure.mean, ti.pressure.stderr));
            Ok(res)
        })
        .collect::<isk_core::Result<_>>()
        .ctx("mc-engine")?;
    out.detail = Detail::new(&["sample", "observable", "exact", "mc", "stderr", "z"]);
    let mut worst: f64 = 0.0;
    let mut within = 0usize;
    let mut total = 0usize;
    for (idx, res) in rows.iter().enumerate() {
        for (name, truth, mean, se) in res {
            let z = (mean - truth) / se;
            worst = worst.max(z.abs());
            total += 1;
            within += usize::from(z.abs() <= 3.0);
            out.detail
                .row(vec![idx.to_string(), name.clone(), num(*truth), num(*mean), num(*se), num(z)]);
        }
    }
    let r = &mut out.recorder;
    r.push("max_abs_z", worst, None, DIMENSIONLESS);
    r.push("fraction_within_3se", within as f64 / total as f64, None, DIMENSIONLESS);
    if n <= 10 {
        let form = QuadraticForm::interpolating(&g, &cfg.kernel, &sample_disorder(&g, cfg.seed, 0), &cfg.params)
            .ctx("hamiltonians")?;
        let defect = mc::stationarity_defect(&form, 1.0).ctx("mc-engine")?;
        r.push("stationarity_defect", defect, None, DIMENSIONLESS);
    }
    Ok(())
}
