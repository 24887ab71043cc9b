use std::path::Path;

use bisac::experiments::{
    fraction_below, run_convergence, run_peb_cdf, run_peb_heatmap, run_se_vs_snr,
};
use bisac::scenario::{Scale, Scenario, ScenarioConfig};

fn small() -> Scenario {
    let mut c = ScenarioConfig::desk();
    c.experiments.monte_carlo = 3;
    c.experiments.snr_db = vec![0.0];
    Scenario::new(c).unwrap()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn shipped_config_is_the_desk_preset() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = ScenarioConfig::load(&path, Scale::Desk).unwrap();
    assert_eq!(cfg, ScenarioConfig::desk());
}

#[test]
fn tables_do_not_depend_on_worker_count() {
    let scn = small();
    let a = in_pool(1, || run_se_vs_snr(&scn).unwrap().to_csv_string().unwrap());
    let b = in_pool(3, || run_se_vs_snr(&scn).unwrap().to_csv_string().unwrap());
    assert_eq!(a, b);
    let a = in_pool(1, || {
        run_convergence(&scn, &[0.4], 2)
            .unwrap()
            .summary
            .to_csv_string()
            .unwrap()
    });
    let b = in_pool(3, || {
        run_convergence(&scn, &[0.4], 2)
            .unwrap()
            .summary
            .to_csv_string()
            .unwrap()
    });
    assert_eq!(a, b);
}

#[test]
fn seed_changes_monte_carlo_output() {
    let a = small();
    let mut c = a.config.clone();
    c.seed += 1;
    let b = Scenario::new(c).unwrap();
    let (ta, tb) = (run_se_vs_snr(&a).unwrap(), run_se_vs_snr(&b).unwrap());
    assert_ne!(ta.column("se_mean").unwrap(), tb.column("se_mean").unwrap());
}

#[test]
fn larger_array_lowers_sector_peb() {
    let scn = Scenario::new(ScenarioConfig::desk()).unwrap();
    let cdf = run_peb_cdf(&scn, &[0.0], &[36, 100]).unwrap();
    for thr in [0.02, 0.05, 0.1, 0.2, 0.5] {
        let small = fraction_below(&cdf, 36, 0.0, thr).unwrap();
        let large = fraction_below(&cdf, 100, 0.0, thr).unwrap();
        assert!(large >= small, "threshold {thr}: {large} < {small}");
    }
}

#[test]
fn heatmap_stays_in_sector_and_is_positive() {
    let scn = Scenario::new(ScenarioConfig::desk()).unwrap();
    let t = run_peb_heatmap(&scn, 30.0, 12).unwrap();
    let (x, y, peb) = (
        t.column("x").unwrap(),
        t.column("y").unwrap(),
        t.column("peb").unwrap(),
    );
    assert!(!peb.is_empty());
    for i in 0..peb.len() {
        assert!(x[i].hypot(y[i]) <= 200.0 + 1e-9);
        assert!(peb[i] > 0.0);
    }
}
