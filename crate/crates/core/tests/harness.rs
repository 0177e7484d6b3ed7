use quantspoof::estimator::SolverOptions;
use quantspoof::harness::{crb_curves, generate_data, run_experiment, run_trial};
use quantspoof::scenario::{make_scenario, Overrides, Preset, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_rss() -> Scenario {
    make_scenario(Preset::RssInjection, &Overrides::from_pairs([("N", "6")]).unwrap()).unwrap()
}

fn fast() -> SolverOptions {
    SolverOptions { em_max_iter: 50, restarts: 2, ..SolverOptions::default() }
}

#[test]
fn experiment_is_deterministic() {
    let sc = small_rss();
    let a = run_experiment(&sc, &[40, 20], 3, 9, &fast()).unwrap();
    let b = run_experiment(&sc, &[20, 40], 3, 9, &fast()).unwrap();
    assert_eq!(a.to_csv(false), b.to_csv(false));
    assert_eq!(a.rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![20, 40]);
}

#[test]
fn single_trial_matches_run_trial() {
    let sc = small_rss();
    let res = run_experiment(&sc, &[30], 1, 5, &fast()).unwrap();
    let row = &res.rows[0];
    let direct = run_trial(&sc, 30, 5, &fast()).unwrap();
    let from_exp = row.outcomes[0].as_ref().unwrap();
    assert_eq!(from_exp.theta_hat, direct.theta_hat);
    assert_eq!(from_exp.eta_hat, direct.eta_hat);
    assert_eq!(row.mse, direct.squared_errors());
    assert_eq!(row.misclass_frac, direct.misclassified() as f64 / 6.0);
}

#[test]
fn trials_use_distinct_streams() {
    let sc = small_rss();
    let res = run_experiment(&sc, &[30], 3, 5, &fast()).unwrap();
    let thetas: Vec<_> = res.rows[0].outcomes.iter().map(|o| o.as_ref().unwrap().theta_hat.clone()).collect();
    assert_ne!(thetas[0], thetas[1]);
    assert_ne!(thetas[1], thetas[2]);
}

#[test]
fn rejects_empty_inputs() {
    let sc = small_rss();
    assert!(run_experiment(&sc, &[0, 10], 2, 0, &fast()).is_err());
    assert!(run_experiment(&sc, &[], 2, 0, &fast()).is_err());
    assert!(run_experiment(&sc, &[10], 0, 0, &fast()).is_err());
}

#[test]
fn crb_scales_inversely_with_rounds() {
    for p in [Preset::DrfmDelay, Preset::DelayInjection, Preset::RssInjection, Preset::LinearDcPowerflow] {
        let sc = make_scenario(p, &Overrides::default()).unwrap();
        let rows = crb_curves(&sc, &[100, 200]).unwrap();
        for (a, b) in [
            (rows[0].crb_unattacked_trace, rows[1].crb_unattacked_trace),
            (rows[0].crb_esa_trace, rows[1].crb_esa_trace),
            (rows[0].crb_alldata_trace, rows[1].crb_alldata_trace),
        ] {
            assert!((a / 2.0 - b).abs() <= 1e-12 * b, "{p}: {a} vs {b}");
        }
    }
}

#[test]
fn csv_layout() {
    let sc = small_rss();
    let res = run_experiment(&sc, &[10, 20], 2, 1, &fast()).unwrap();
    let csv = res.to_csv(false);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "K,trials,misclass_frac,mse_theta1,mse_theta2,crb_unattacked_trace,crb_alldata_trace,failures,wall_ms"
    );
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 9);
        assert_eq!(*cols.last().unwrap(), "0");
        // 17 significant digits: d.dddddddddddddddde±x
        let mantissa = cols[2].split('e').next().unwrap();
        assert_eq!(mantissa.trim_start_matches('-').replace('.', "").len(), 17);
    }
}

#[test]
fn generated_levels_fit_the_model() {
    let sc = make_scenario(Preset::DrfmDelay, &Overrides::from_pairs([("K", "5")]).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = generate_data(&sc, &mut rng).unwrap();
    data.check(&sc.model).unwrap();
    assert_eq!(data.observations(0), 15);
}
