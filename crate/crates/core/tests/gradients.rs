mod common;

use common::grads::{chatbot_report, classifier_reports, primitive_reports, ATOL, RTOL};

#[test]
fn every_primitive_matches_central_differences() {
    for (name, report) in primitive_reports() {
        assert!(report.max_rel_error < RTOL, "{name}: {report:?}");
    }
}

#[test]
fn classifier_loss_gradient() {
    for report in classifier_reports() {
        assert!(report.passes(RTOL, ATOL), "{report:?}");
        assert!(report.max_rel_error < RTOL, "{report:?}");
    }
}

#[test]
fn chatbot_loss_gradient() {
    let report = chatbot_report();
    assert!(report.passes(RTOL, ATOL), "{report:?}");
}

