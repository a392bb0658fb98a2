use gridid::dispatch::GridModel;
use gridid::marketsim::{load_dataset, save_dataset, simulate_day, SimulationConfig};
use gridid::netmodel::GridTopology;
use gridid::recovery::{admm_solve, AdmmSettings, Kappa, RecoveryResult};
use gridid::tuneval::{evaluate, tune_kappa, KappaGrid, TuningConfig};

#[test]
fn simulation_is_reproducible_and_round_trips() {
    let model = GridModel::ieee14();
    let a = simulate_day(&model, &SimulationConfig::ieee14(11)).unwrap();
    let b = simulate_day(&model, &SimulationConfig::ieee14(11)).unwrap();
    assert_eq!(a.to_text().unwrap(), b.to_text().unwrap());
    let c = simulate_day(&model, &SimulationConfig::ieee14(12)).unwrap();
    assert_ne!(a.prices, c.prices);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("day.txt");
    save_dataset(&a, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.prices, a.prices);
    assert_eq!(back.multipliers, a.multipliers);
    assert_eq!(back.meta, a.meta);
}

#[test]
fn noisy_prices_differ_only_by_noise() {
    let model = GridModel::ieee14();
    let clean = simulate_day(&model, &SimulationConfig::ieee14(3)).unwrap();
    let mut cfg = SimulationConfig::ieee14(3);
    cfg.noise_sigma = 0.5;
    let noisy = simulate_day(&model, &cfg).unwrap();
    assert_eq!(clean.sources, noisy.sources);
    let diff = &noisy.prices - &clean.prices;
    assert!(diff.amax() > 0.0);
    // B (noise) has entries of size sigma.
    let w = model.laplacian().reduced.clone() * diff;
    let rms = (w.norm_squared() / w.len() as f64).sqrt();
    assert!((rms - 0.5).abs() < 0.05, "rms {rms}");
}

#[test]
fn short_pipeline_produces_a_valid_estimate() {
    let data = simulate_day(&GridModel::ieee14(), &SimulationConfig::ieee14(7)).unwrap();
    let mut settings = AdmmSettings::with_rho(1e3);
    settings.stop.max_iter = 300;
    let r = admm_solve(&data.prices, &Kappa::ieee14(), &settings).unwrap();
    assert_eq!(r.iterations, 300);
    assert_eq!(r.history.len(), 300);
    assert!(r.objective.is_finite());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("result.txt");
    r.save(&path, Some(serde_json::json!({"command": "test"}))).unwrap();
    let back = RecoveryResult::load(&path).unwrap();
    assert_eq!(back.b_hat, r.b_hat);
    assert_eq!(back.history, r.history);

    let truth = GridTopology::ieee14().laplacian().reduced;
    let e = evaluate(&back.b_hat, &back.s_hat, &truth, 0.05).unwrap();
    assert_eq!(e.sign_violations, 0);
    assert!(e.precision.is_finite() && e.recall.is_finite());
    assert!(e.frobenius_error < 1.0);

    let truncated = std::fs::read_to_string(&path).unwrap();
    let cut = &truncated[..truncated.len() / 2];
    assert!(RecoveryResult::from_text(cut).is_err());
}

#[test]
fn tuning_on_a_small_grid() {
    let data = simulate_day(&GridModel::ieee14(), &SimulationConfig::ieee14(1)).unwrap();
    let k = Kappa::ieee14();
    let mut grid = KappaGrid::single(&k);
    grid.k3 = vec![k.k3, 10.0 * k.k3];
    let mut cfg = TuningConfig::new(grid, 5);
    cfg.repeats = 2;
    cfg.admm.stop.max_iter = 50;
    let a = tune_kappa(&data.prices, &cfg).unwrap();
    let b = tune_kappa(&data.prices, &cfg).unwrap();
    assert_eq!(a.scores.len(), 2);
    assert_eq!(a.masked_entries, (0.1 * data.prices.len() as f64).round() as usize);
    assert_eq!(a.best, b.best);
    assert_eq!(
        a.scores.iter().map(|s| s.mse).collect::<Vec<_>>(),
        b.scores.iter().map(|s| s.mse).collect::<Vec<_>>()
    );
    assert!(a.scores.iter().all(|s| s.mse.is_finite()));
    assert_eq!(a.rank_of(&a.best), Some(1));
}

#[test]
fn shipped_fixtures_match_the_builtins() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let text = std::fs::read_to_string(format!("{dir}/ieee14_config.json")).unwrap();
    let cfg: SimulationConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, SimulationConfig::ieee14(0));
    let grid = KappaGrid::load(format!("{dir}/ieee14_kappa_grid.json")).unwrap();
    assert_eq!(grid.len(), 81);
    assert!(grid.candidates().unwrap().contains(&Kappa::ieee14()));
}
