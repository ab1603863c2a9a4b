use mstnet::config::ModelConfig;
use mstnet::diagnostics::{
    count_flops, count_parameters, gradcheck, kernel_pyramid_equivalence, random_hmu, GradcheckModule, EQUIVALENCE_TOLERANCE,
    GRADCHECK_TOLERANCE,
};

#[test]
fn module_gradchecks_pass() {
    for m in [GradcheckModule::Objective, GradcheckModule::Siu, GradcheckModule::Hmu, GradcheckModule::EndToEndTiny] {
        let eps = if m == GradcheckModule::EndToEndTiny { 1e-6 } else { 1e-5 };
        let out = gradcheck(m, eps, 3).unwrap();
        println!("{m:?}: {:.3e} ({})", out.max_rel_error, out.worst);
        assert!(out.coordinates >= 50);
        assert!(out.max_rel_error < GRADCHECK_TOLERANCE, "{m:?}: {}", out.worst);
    }
}

#[test]
fn equivalence_holds_for_every_group_count() {
    for g in [2, 3, 4, 6, 8] {
        let (hmu, store, x) = random_hmu(g, 11 + g as u64);
        let d = kernel_pyramid_equivalence(&hmu, &store, &x).unwrap();
        assert!(d < EQUIVALENCE_TOLERANCE, "G={g}: {d}");
    }
}

#[test]
fn accounting_is_deterministic() {
    let cfg = ModelConfig::tiny();
    assert_eq!(count_parameters(&cfg).unwrap(), count_parameters(&cfg).unwrap());
    assert_eq!(count_flops(&cfg, 64).unwrap(), count_flops(&cfg, 64).unwrap());
    assert!(count_flops(&cfg, 30).is_err());
}
