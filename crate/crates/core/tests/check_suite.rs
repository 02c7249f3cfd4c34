use warpadam::checks::{run_checks, CheckOptions};
use warpadam::tensor::Primitive;

#[test]
fn fresh_build_passes_every_check() {
    let results = run_checks(&CheckOptions::default()).unwrap();
    for r in &results {
        println!("{:<32} trials={:<4} max_rel_err={:.3e} tol={:.0e}", r.name, r.trials, r.max_rel_err, r.tolerance);
    }
    let primitive_trials: usize = results.iter().filter(|r| r.name.starts_with("grad/")).map(|r| r.trials).sum();
    assert!(primitive_trials >= 100);
    assert!(results.iter().all(|r| r.passed()));
}

#[test]
fn every_corrupted_rule_fails_the_suite() {
    for p in Primitive::ALL {
        let results = run_checks(&CheckOptions {
            fault: Some(p),
            ..CheckOptions::default()
        })
        .unwrap();
        assert!(results.iter().any(|r| !r.passed()), "{}", p.name());
    }
}
