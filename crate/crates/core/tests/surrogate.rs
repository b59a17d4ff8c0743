use tipgan_core::boxmodel::{
    compute_fluxes, hysteresis_sweep, integrate, run_config, tendency, IntegrationOptions, Label, ModelParams,
    ModelState,
};
use tipgan_core::calibrate::step_response;
use tipgan_core::explorer::{linspace, Config, REFERENCE_BAND};

fn base() -> (ModelParams, ModelState) {
    let p = ModelParams::base();
    let t = ModelState::template(&p);
    (p, t)
}

#[test]
fn base_equilibrium_overturning_is_in_the_observed_range() {
    let (p, t) = base();
    let out = integrate(&p, &t, 4000.0).unwrap();
    assert!((15.0..=20.0).contains(&out.final_m_n), "m_n = {}", out.final_m_n);
    let later = integrate(&p, &t, 6000.0).unwrap();
    assert!((later.final_m_n - out.final_m_n).abs() < 0.05);
    let f = compute_fluxes(&p, &out.final_state).unwrap();
    assert!((f.m_n - out.final_m_n).abs() < 1e-9);
}

#[test]
fn freshwater_step_collapses_the_overturning() {
    let (p, t) = base();
    let (on, stepped) = step_response(&p, &t, &IntegrationOptions::default()).unwrap();
    assert!(on > 0.0);
    assert!(stepped < 0.0, "m_n after step = {stepped}");
}

#[test]
fn salt_is_conserved_along_a_trajectory() {
    let (p, t) = base();
    let start = ModelState { d_low: 250.0, ..t };
    let salt = start.total_salt(&p);
    for years in [1.0, 50.0, 2000.0] {
        let out = integrate(&p, &start, years).unwrap();
        let rel = (out.final_state.total_salt(&p) - salt).abs() / salt;
        assert!(rel < 1e-12, "after {years} yr relative drift {rel:e}");
    }
    let d = tendency(&p, &t).unwrap();
    let v = t.volumes(&p);
    let dv_low = p.area_low * d.d_low;
    let rate = v[0] * d.s_n + v[1] * d.s_s + v[2] * d.s_l + v[3] * d.s_d + dv_low * (t.s_l - t.s_d);
    let scale = v.iter().zip([t.s_n, t.s_s, t.s_l, t.s_d]).map(|(v, s)| v * s).sum::<f64>();
    assert!(rate.abs() / scale < 1e-13, "salt rate {rate:e}");
}

#[test]
fn configs_far_from_the_band_have_fixed_labels() {
    let (p, t) = base();
    let on = run_config(&Config { d_low0: 400.0, m_ek: 25.0, fw_n: 0.05 }, &p, &t).unwrap();
    assert_eq!(on.label, Label::On);
    for d in [100.0, 200.0, 300.0, 400.0] {
        let off = run_config(&Config { d_low0: d, m_ek: 25.0, fw_n: 1.55 }, &p, &t).unwrap();
        assert_eq!(off.label, Label::Off, "d_low0 = {d}");
    }
}

#[test]
fn initial_depth_decides_the_state_somewhere_inside_the_band() {
    let (p, t) = base();
    let split = linspace(REFERENCE_BAND.0, REFERENCE_BAND.1, 51).into_iter().find(|&fw| {
        let shallow = run_config(&Config { d_low0: 100.0, m_ek: 25.0, fw_n: fw }, &p, &t).unwrap();
        let deep = run_config(&Config { d_low0: 400.0, m_ek: 25.0, fw_n: fw }, &p, &t).unwrap();
        shallow.label != deep.label
    });
    assert!(split.is_some());
}

#[test]
fn quasi_static_sweep_shows_hysteresis() {
    let p = ModelParams::base();
    let on = integrate(&ModelParams { fw_n: 0.05, ..p }, &ModelState::template(&p), 4000.0).unwrap();
    let options = IntegrationOptions { horizon_years: 2000.0, ..Default::default() };
    let sweep = hysteresis_sweep(&p, &on.final_state, &linspace(0.05, 1.55, 61), &options).unwrap();
    assert!(sweep.has_hysteresis(), "up {:?}, down {:?}", sweep.up_transition, sweep.down_transition);
}
