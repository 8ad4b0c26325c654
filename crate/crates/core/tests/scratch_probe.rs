use interaction_gp::dynamics::generate_observations;
use interaction_gp::evaluation::empirical_rho;
use interaction_gp::training::fit;

#[test]
#[ignore]
fn sweep() {
    // run with: cargo test -p interaction-gp --test scratch_probe -- --ignored --nocapture
}

#[test]
fn od_fm_sweep() {
    for preset in ["od", "dorsogma"] {
        println!("=== {preset} ===");
        let config = interaction_gp_cli_config(preset);
        let spec = config.0;
        let (m, l, t_end, sigma) = config.1;
        let (init_alpha, init_sigma, budget) = config.2;
        let rho = empirical_rho(&spec, 2000, l, t_end, 200, 0).unwrap();
        for seed in 0..10u64 {
            let obs = generate_observations(&spec, m, l, t_end, sigma, seed).unwrap();
            let mut fc = interaction_gp::training::FitConfig::defaults(&obs, &spec.force);
            fc.init_alpha = init_alpha.clone();
            fc.init_sigma = init_sigma;
            fc.max_evals = budget;
            fc.seed = seed;
            let mut trained = fit(&obs, &spec.force, &fc).unwrap();
            let ics: Vec<_> = (0..m).map(|mm| { let mut s = obs.state(mm, 0).clone(); s.t = 0.0; s }).collect();
            let report = interaction_gp::evaluation::predict_and_score(
                &mut trained, &obs, &spec, &ics, t_end, t_end * 4.0 / 3.0, &rho).unwrap();
            println!(
                "seed {seed}: alpha {:?} sigma {:.4} linf {:.3} l2 {:.3} traj {:.3}/{:.3} evals {}",
                trained.alpha().iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>(),
                trained.sigma,
                report.kernel_errors.rel_linf,
                report.kernel_errors.rel_l2_rho_tilde,
                report.train_error,
                report.future_error,
                trained.trace.evals,
            );
        }
    }
}

type PresetTuple = (
    interaction_gp::SystemSpec64,
    (usize, usize, f64, f64),
    (Vec<f64>, f64, usize),
);

fn interaction_gp_cli_config(name: &str) -> PresetTuple {
    use interaction_gp::dynamics::*;
    match name {
        "od" => (
            interaction_gp::SystemSpec64::new(
                1, 10, Order::First, InteractionVariable::PositionDifference,
                NonCollectiveForce::StubbornOpinion { biases: vec![1.0, 0.0, -1.0], kappa: 10.0, stubborn: vec![0, 1, 2] },
                InteractionKernel::PiecewiseOpinion,
                Mu0::positions(-1.0, 1.0),
            ).unwrap(),
            (6, 4, 15.0, 0.05),
            (vec![0.5, 0.5, 0.5, 0.5], 0.5, 600),
        ),
        "dorsogma" => (
            interaction_gp::SystemSpec64::new(
                2, 10, Order::Second, InteractionVariable::PositionDifference,
                NonCollectiveForce::SelfPropulsion { gamma: 1.5, beta: 0.5 },
                InteractionKernel::Morse(MorseKernel::new(5.0, 0.5, 40.0, 4.0, 0.05).unwrap()),
                Mu0 { pos_low: -0.5, pos_high: 0.5, vel: VelocityInit::Zero },
            ).unwrap(),
            (3, 3, 5.0, 0.1),
            (vec![1.0, 1.0], 1.0, 600),
        ),
        _ => unreachable!(),
    }
}
