//! One line per acceptance criterion; the test fails if any hard criterion fails.

use tfqkd::validate::{run_validate, Severity};

#[test]
fn acceptance_suite() {
    let summary = run_validate().expect("suite runs on bundled data");
    for r in &summary.results {
        println!("{r}");
    }
    for id in ["1 ", "2 ", "3a", "3b", "3c", "4a", "4b", "5 ", "6a", "6b", "7a", "7b", "7c", "8a", "8b", "8c"] {
        assert!(summary.get(id).is_some(), "criterion {id} missing");
    }
    let failed: Vec<_> = summary
        .results
        .iter()
        .filter(|r| r.severity == Severity::Hard && !r.passed())
        .map(|r| r.criterion.clone())
        .collect();
    assert!(failed.is_empty(), "hard criteria failed: {failed:?}");
}
