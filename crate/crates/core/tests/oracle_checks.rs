use sdpg_core::oracle::run_verification;

#[test]
fn every_registered_check_passes() {
    let report = run_verification(0);
    print!("{}", report.to_table());
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    assert!(report.all_passed());
}

#[test]
fn report_is_deterministic_given_seed() {
    let a = run_verification(3);
    let b = run_verification(3);
    for (x, y) in a.checks.iter().zip(&b.checks) {
        assert_eq!((x.passed, x.error.to_bits()), (y.passed, y.error.to_bits()));
    }
}
