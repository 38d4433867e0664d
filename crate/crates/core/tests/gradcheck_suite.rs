use dekan_core::gradcheck::{run_suite, SuiteTolerances};

#[test]
fn every_operation_passes_gradient_check() {
    let start = std::time::Instant::now();
    let reports = run_suite(SuiteTolerances::default()).unwrap();
    for r in &reports {
        println!("{r}");
    }
    println!("suite time {:.1?}", start.elapsed());
    let failed: Vec<_> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
