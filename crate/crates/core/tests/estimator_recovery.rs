use phlink::{fit, simulate_trace, FitConfig, FitDomain, ModelParams, ModulationConfig, NoiseConfig, OpticalSchedule};

fn fig4_truth() -> ModelParams {
    ModelParams {
        c_eq_dark: 2.82e-6,
        c_eq_light: 5.79e-6,
        tau_dark: 6.39 * 60.0,
        tau_light: 8.48 * 60.0,
        drift_slope: 1e-11,
        c_init: 2.82e-6,
    }
}

/// One long light/dark cycle: both relaxations run for several time constants.
fn long_symbol() -> OpticalSchedule {
    phlink::schedule_from_bits(&"1".parse().unwrap(), &ModulationConfig::new(6600.0, 0.5).unwrap()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn noisy_traces_recover_equilibria_and_time_constants() {
    let truth = fig4_truth();
    let sched = long_symbol();
    let sigma = 0.05 * (truth.c_eq_light - truth.c_eq_dark);
    let fits: Vec<ModelParams> = (0..20)
        .map(|seed| {
            let trace = simulate_trace(&sched, &truth, &NoiseConfig { sigma, seed }, 1.0).unwrap().trace;
            let r = fit(&sched, &trace, &FitConfig { seed, ..FitConfig::default() }).unwrap();
            assert!(r.rss > 0.0);
            r.params
        })
        .collect();
    let med = |f: fn(&ModelParams) -> f64| median(fits.iter().map(|p| rel(f(p), f(&truth))).collect());
    assert!(med(|p| p.c_eq_dark) <= 0.05);
    assert!(med(|p| p.c_eq_light) <= 0.05);
    assert!(med(|p| p.tau_dark) <= 0.15);
    assert!(med(|p| p.tau_light) <= 0.15);
}

#[test]
fn concentration_and_ph_domains_agree_on_noiseless_data() {
    let truth = fig4_truth();
    let sched = long_symbol();
    let trace = simulate_trace(&sched, &truth, &NoiseConfig::noiseless(), 1.0).unwrap().trace;
    let ph = fit(&sched, &trace, &FitConfig::default()).unwrap();
    let conc = fit(&sched, &trace, &FitConfig { fit_domain: FitDomain::Concentration, ..FitConfig::default() }).unwrap();
    assert_eq!(conc.fit_domain, FitDomain::Concentration);
    for (a, b) in ph.params.to_array().iter().zip(conc.params.to_array()) {
        assert!(rel(*a, b) <= 1e-3, "{:?} vs {:?}", ph.params, conc.params);
    }
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let truth = fig4_truth();
    let sched = long_symbol();
    let trace = simulate_trace(&sched, &truth, &NoiseConfig { sigma: 5e-8, seed: 9 }, 1.0).unwrap().trace;
    let cfg = FitConfig { seed: 3, ..FitConfig::default() };
    assert_eq!(fit(&sched, &trace, &cfg).unwrap(), fit(&sched, &trace, &cfg).unwrap());
}
