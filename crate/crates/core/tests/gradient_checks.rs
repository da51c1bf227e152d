use std::time::Instant;

use pqd_core::gradcheck::{run_battery, run_check, BatteryConfig, BATTERY};

fn cfg(seed: u64) -> BatteryConfig {
    BatteryConfig {
        seed,
        instances: 20,
        tolerance: 1e-4,
    }
}

#[test]
fn every_layer_passes_at_default_settings() {
    let start = Instant::now();
    let reports = run_battery(&cfg(0)).unwrap();
    assert_eq!(reports.len(), BATTERY.len());
    for r in &reports {
        assert_eq!(r.instances, 20, "{}", r.name);
        assert!(r.passed, "{} max rel err {:e}", r.name, r.max_rel_error);
        assert!(r.max_rel_error.is_finite());
    }
    assert!(start.elapsed().as_secs() < 60, "battery took {:?}", start.elapsed());
}

#[test]
fn passes_for_other_seeds() {
    for seed in [7, 123] {
        for name in ["grouped-conv", "se-block", "bottleneck"] {
            let r = run_check(name, &cfg(seed)).unwrap();
            assert!(r.passed, "seed {seed} {name}: {:e}", r.max_rel_error);
        }
    }
}

#[test]
fn covers_every_required_layer() {
    for name in [
        "grouped-conv",
        "batchnorm",
        "h-swish",
        "swish",
        "sigmoid",
        "fully-connected",
        "se-block",
        "global-avg-pool",
        "cross-entropy",
        "bottleneck",
    ] {
        assert!(BATTERY.contains(&name), "{name}");
    }
}

#[test]
fn an_impossible_tolerance_fails() {
    let r = run_check(
        "batchnorm",
        &BatteryConfig {
            seed: 0,
            instances: 3,
            tolerance: 1e-14,
        },
    )
    .unwrap();
    assert!(!r.passed);
    assert!(run_check("no-such-layer", &cfg(0)).is_err());
}
