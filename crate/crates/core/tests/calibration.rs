use tipgan_core::boxmodel::{IntegrationOptions, ModelParams, ModelState};
use tipgan_core::calibrate::{calibrate, calibration_report, CalibrationError, Knob, SearchOptions};

fn quick(iterations: usize) -> SearchOptions {
    SearchOptions { iterations, report_rows: 3, ..SearchOptions::default() }
}

#[test]
fn bundled_parameters_meet_every_target() {
    let p = ModelParams::base();
    let (report, atlas) = calibration_report(&p, &ModelState::template(&p), &IntegrationOptions::default(), 5).unwrap();
    assert!(report.all_met(), "{}", report.to_text());
    assert!((15.0..=20.0).contains(&report.on_m_n));
    assert!(report.step_final_m_n < 0.0);
    assert!((report.band_share_percent - 34.9).abs() <= 10.0);
    assert_eq!(report.row_bands.len(), 5);
    assert_eq!(atlas.m_ek_grid.len(), 5);
    let text = report.to_text();
    assert!(text.contains("on m_n at 0.55 Sv") && !text.contains("VIOLATED"));
}

#[test]
fn search_is_deterministic_and_never_worsens_a_calibrated_start() {
    let p = ModelParams::base();
    let t = ModelState::template(&p);
    let o = IntegrationOptions::default();
    let (a, ra) = calibrate(&p, &t, &o, &quick(3)).unwrap();
    let (b, rb) = calibrate(&p, &t, &o, &quick(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert!(ra.all_met());
}

#[test]
fn missed_targets_are_named() {
    let p = ModelParams { lambda_hyd: 5.0, ..ModelParams::base() };
    let t = ModelState::template(&p);
    match calibrate(&p, &t, &IntegrationOptions::default(), &quick(0)) {
        Err(CalibrationError::CalibrationFailed(msg)) => assert!(msg.contains("m_n"), "{msg}"),
        other => panic!("expected a failure, got {other:?}"),
    }
}

#[test]
fn unknown_knobs_are_rejected() {
    let p = ModelParams::base();
    let search = SearchOptions { knobs: vec![Knob { name: "nope".into(), min: 0.0, max: 1.0 }], ..quick(1) };
    let r = calibrate(&p, &ModelState::template(&p), &IntegrationOptions::default(), &search);
    assert!(r.is_err());
}
