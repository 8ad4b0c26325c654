//! Subcommand implementations. Every command writes its outputs under one
//! directory and finishes with a manifest; nothing depends on wall-clock
//! state, so identical inputs give identical bytes.

use crate::config::ExperimentConfig;
use crate::manifest::Manifest;
use interaction_gp::dynamics::{generate_observations, NonCollectiveForce, Order};
use interaction_gp::evaluation::{
    empirical_rho, estimate_kernel_curve, predict_and_score, PredictionReport,
};
use interaction_gp::kernels::{KernelHyperparams, MaternNu};
use interaction_gp::theory::{
    convergence_study, estimate_coercivity, gp_krr_discrepancy, krr_fit, CoercivityConfig,
    ConvergenceConfig, PriorScaling,
};
use interaction_gp::training::fit;
use interaction_gp::{Error, ObservationSet64, State64, SystemSpec64, TrainedModel64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;

/// RNG stream for fresh prediction initial conditions.
const PREDICTION_STREAM_BASE: u64 = 6_000_000;

pub type CmdResult<T> = Result<T, Error>;

pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> CmdResult<()> {
    let spec = config.system_spec()?;
    let obs = generate_observations(
        &spec,
        config.data.m,
        config.data.l,
        config.data.t_end,
        config.data.sigma,
        config.seed,
    )?;
    let mut manifest = Manifest::new(out)?;
    manifest.write("config.json", &config.to_json_string())?;
    manifest.write("observations.json", &obs.to_json_string()?)?;
    manifest.write("observations.csv", &obs.to_csv_string())?;
    manifest.finish()?;
    println!("simulate: wrote {} observations (data hash {})", obs.dnml(), obs.data_hash());
    Ok(())
}

pub fn load_observations(path: &Path) -> CmdResult<ObservationSet64> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        ObservationSet64::from_csv_str(&text)
    } else {
        ObservationSet64::from_json_str(&text)
    }
}

fn trace_csv(model: &TrainedModel64) -> String {
    let mut text = String::from("iteration,value,grad_inf_norm,evals\n");
    for step in &model.trace_steps {
        text.push_str(&format!(
            "{},{},{},{}\n",
            step.iteration, step.value, step.grad_inf_norm, step.evals
        ));
    }
    text
}

pub fn cmd_train(config: &ExperimentConfig, data: &Path, out: &Path) -> CmdResult<()> {
    let spec = config.system_spec()?;
    let obs = load_observations(data)?;
    let fit_config = config.fit_config(&obs, &spec.force);
    let trained = fit(&obs, &spec.force, &fit_config)?;
    let mut manifest = Manifest::new(out)?;
    manifest.write("model.json", &trained.to_json_string()?)?;
    manifest.write("trace.csv", &trace_csv(&trained))?;
    manifest.finish()?;
    println!(
        "train: nll {} after {} evaluations (converged: {})",
        trained.nll, trained.trace.evals, trained.trace.converged
    );
    Ok(())
}

/// Everything `evaluate` reports, serialized as `metrics.json`.
#[derive(Debug, Serialize)]
pub struct EvaluationReport {
    pub kernel_rel_linf: f64,
    pub kernel_rel_l2_rho_tilde: f64,
    pub training_ics: PredictionReport<f64>,
    pub fresh_ics: PredictionReport<f64>,
    pub alpha: Vec<f64>,
    pub sigma: f64,
    pub r_max: f64,
    pub measure_samples: usize,
    pub measure_skipped: usize,
    pub variance_clips: usize,
}

pub fn cmd_evaluate(
    config: &ExperimentConfig,
    data: &Path,
    model_path: &Path,
    out: &Path,
) -> CmdResult<()> {
    let spec = config.system_spec()?;
    let obs = load_observations(data)?;
    let mut trained = TrainedModel64::from_json_str(&std::fs::read_to_string(model_path)?)?;
    // consistency gate: the model must reference exactly this data set
    trained.attach(&obs)?;

    let mut manifest = Manifest::new(out)?;
    let report = evaluate_model(config, &spec, &obs, &mut trained, &mut manifest)?;
    manifest.finish()?;
    println!(
        "evaluate: kernel errors Linf {:.3e}, L2 {:.3e}; trajectory error {:.3e} (train window)",
        report.kernel_rel_linf, report.kernel_rel_l2_rho_tilde, report.training_ics.train_error
    );
    Ok(())
}

pub fn evaluate_model(
    config: &ExperimentConfig,
    spec: &SystemSpec64,
    obs: &ObservationSet64,
    trained: &mut TrainedModel64,
    manifest: &mut Manifest,
) -> CmdResult<EvaluationReport> {
    let eval = &config.evaluation;
    let rho = empirical_rho(
        spec,
        eval.measure_trajectories,
        config.data.l,
        config.data.t_end,
        eval.bins,
        config.seed,
    )?;
    let top = rho.r_max * eval.grid_factor;
    let grid: Vec<f64> = (0..eval.grid_points)
        .map(|i| top * i as f64 / (eval.grid_points - 1) as f64)
        .collect();
    let curve = estimate_kernel_curve(trained, obs, &grid)?;

    // two comparison sets: the training initial conditions and fresh draws
    let training_ics: Vec<State64> = (0..obs.m_count)
        .map(|m| {
            let mut state = obs.state(m, 0).clone();
            state.t = 0.0;
            state
        })
        .collect();
    let fresh_ics: Vec<State64> = (0..eval.prediction_ics.max(1))
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(PREDICTION_STREAM_BASE + i as u64);
            spec.mu0.sample(spec.d, spec.n, spec.order, &mut rng)
        })
        .collect();
    let t_final = config.t_final();
    let train_report = predict_and_score(
        trained,
        obs,
        spec,
        &training_ics,
        config.data.t_end,
        t_final,
        &rho,
    )?;
    let fresh_report =
        predict_and_score(trained, obs, spec, &fresh_ics, config.data.t_end, t_final, &rho)?;

    let report = EvaluationReport {
        kernel_rel_linf: train_report.kernel_errors.rel_linf,
        kernel_rel_l2_rho_tilde: train_report.kernel_errors.rel_l2_rho_tilde,
        training_ics: train_report,
        fresh_ics: fresh_report,
        alpha: trained.alpha(),
        sigma: trained.sigma,
        r_max: rho.r_max,
        measure_samples: rho.samples,
        measure_skipped: rho.skipped,
        variance_clips: curve.clipped,
    };
    manifest.write("kernel_curve.csv", &curve.to_csv_string())?;
    manifest.write("metrics.json", &serde_json::to_string_pretty(&report)?)?;
    manifest.write("measure.json", &serde_json::to_string_pretty(&rho)?)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct GpKrrReport {
    seed: u64,
    lambda: f64,
    sigma: f64,
    discrepancy: f64,
    scale: f64,
    tolerance: f64,
    negative_control_discrepancy: f64,
    pass: bool,
}

/// GP = KRR equivalence on a seeded first-order instance, with the
/// mis-scaled prior as a negative control.
pub fn cmd_theory_gp_krr(seed: u64, out: Option<&Path>) -> CmdResult<bool> {
    let spec = gp_krr_instance();
    let obs = generate_observations(&spec, 2, 3, 1.0, 0.05, seed)?;
    let h = KernelHyperparams::new(MaternNu::ThreeHalves, 1.0, 0.6)?;
    let lambda = 0.1;
    let sigma = 0.3;
    let r_max = obs.max_pairwise_distance();
    let grid: Vec<f64> = (0..100).map(|i| r_max * 1.2 * i as f64 / 99.0).collect();

    let krr = krr_fit(&obs, &h, lambda)?;
    let scale = grid.iter().map(|&r| krr.eval(r).abs()).fold(1.0f64, f64::max);
    let discrepancy =
        gp_krr_discrepancy(&obs, &h, lambda, sigma, &grid, PriorScaling::Matched)?;
    let control =
        gp_krr_discrepancy(&obs, &h, lambda, sigma, &grid, PriorScaling::MissingDataFactor)?;
    let tolerance = 1e-8 * scale;
    let pass = discrepancy <= tolerance && control > 1e-3;
    let report = GpKrrReport {
        seed,
        lambda,
        sigma,
        discrepancy,
        scale,
        tolerance,
        negative_control_discrepancy: control,
        pass,
    };
    if let Some(dir) = out {
        let mut manifest = Manifest::new(dir)?;
        manifest.write("gp_krr.json", &serde_json::to_string_pretty(&report)?)?;
        manifest.finish()?;
    }
    println!(
        "theory gp-krr: discrepancy {discrepancy:.3e} (tolerance {tolerance:.3e}), negative control {control:.3e} => {}",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn gp_krr_instance() -> SystemSpec64 {
    SystemSpec64::new(
        1,
        4,
        Order::First,
        interaction_gp::dynamics::InteractionVariable::PositionDifference,
        NonCollectiveForce::Zero,
        interaction_gp::dynamics::InteractionKernel::PiecewiseOpinion,
        interaction_gp::dynamics::Mu0::positions(-1.0, 1.0),
    )
    .expect("static instance")
}

pub fn cmd_theory_coercivity(
    config: &ExperimentConfig,
    n_mc: usize,
    out: &Path,
) -> CmdResult<()> {
    let spec = config.system_spec()?;
    // quick ensemble just to size the probe domain
    let sizing = empirical_rho(&spec, 200, config.data.l, config.data.t_end, 50, config.seed)?;
    let cfg = CoercivityConfig {
        n_mc,
        l: config.data.l,
        t_end: config.data.t_end,
        seed: config.seed,
        random_probes: 3,
        probe_kernel: KernelHyperparams::new(MaternNu::ThreeHalves, 1.0, sizing.r_max / 4.0)?,
        r_max: sizing.r_max,
    };
    let probes = vec![
        (
            "constant".to_string(),
            interaction_gp::dynamics::InteractionKernel::Constant { value: 1.0 },
        ),
        ("true_kernel".to_string(), spec.kernel.clone()),
    ];
    let report = estimate_coercivity(&spec, &probes, &cfg)?;
    let mut manifest = Manifest::new(out)?;
    manifest.write("coercivity.json", &serde_json::to_string_pretty(&report)?)?;
    manifest.finish()?;
    println!(
        "theory coercivity: min ratio {:.4} over {} probes (upper bound {:.4})",
        report.min_ratio,
        report.probes.len(),
        report.upper_bound
    );
    Ok(())
}

/// The first-order benchmark system for the convergence study: five agents
/// on the line with a kernel inside the Matern RKHS.
pub fn convergence_instance() -> SystemSpec64 {
    SystemSpec64::new(
        1,
        5,
        Order::First,
        interaction_gp::dynamics::InteractionVariable::PositionDifference,
        NonCollectiveForce::Zero,
        interaction_gp::dynamics::InteractionKernel::RkhsSpan {
            nu: MaternNu::ThreeHalves,
            omega: 0.5,
            centers: vec![0.3, 0.8, 1.4],
            weights: vec![0.8, -0.4, 0.5],
        },
        interaction_gp::dynamics::Mu0::positions(-1.0, 1.0),
    )
    .expect("static instance")
}

pub fn cmd_theory_convergence(
    m_list: &[usize],
    seeds: &[u64],
    out: &Path,
) -> CmdResult<()> {
    let spec = convergence_instance();
    let h = KernelHyperparams::new(MaternNu::ThreeHalves, 1.0, 0.5)?;
    let cfg = ConvergenceConfig { seeds: seeds.to_vec(), ..ConvergenceConfig::default() };
    let table = convergence_study(&spec, &h, m_list, &cfg)?;
    let mut csv = String::from("m,seed,lambda,l2_error,sup_error\n");
    for cell in &table.cells {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.m, cell.seed, cell.lambda, cell.l2_error, cell.sup_error
        ));
    }
    let mut manifest = Manifest::new(out)?;
    manifest.write("convergence.csv", &csv)?;
    manifest.write("convergence.json", &serde_json::to_string_pretty(&table)?)?;
    manifest.finish()?;
    for (m, median) in &table.medians {
        println!("theory convergence: M = {m:>4} -> median L2 error {median:.4e}");
    }
    println!("theory convergence: log-log slope {:.3}", table.slope);
    Ok(())
}

/// One-shot reproduction: simulate, train, and evaluate into one directory.
pub fn cmd_reproduce(config: &ExperimentConfig, out: &Path) -> CmdResult<()> {
    let spec = config.system_spec()?;
    let obs = generate_observations(
        &spec,
        config.data.m,
        config.data.l,
        config.data.t_end,
        config.data.sigma,
        config.seed,
    )?;
    let fit_config = config.fit_config(&obs, &spec.force);
    let mut trained = fit(&obs, &spec.force, &fit_config)?;

    let mut manifest = Manifest::new(out)?;
    manifest.write("config.json", &config.to_json_string())?;
    manifest.write("observations.json", &obs.to_json_string()?)?;
    manifest.write("observations.csv", &obs.to_csv_string())?;
    manifest.write("model.json", &trained.to_json_string()?)?;
    manifest.write("trace.csv", &trace_csv(&trained))?;
    let report = evaluate_model(config, &spec, &obs, &mut trained, &mut manifest)?;
    manifest.finish()?;
    println!(
        "reproduce: alpha {:?}, sigma {:.4}; kernel Linf {:.3e}, L2 {:.3e}; train/future errors {:.3e}/{:.3e}",
        report.alpha,
        report.sigma,
        report.kernel_rel_linf,
        report.kernel_rel_l2_rho_tilde,
        report.training_ics.train_error,
        report.training_ics.future_error,
    );
    Ok(())
}
