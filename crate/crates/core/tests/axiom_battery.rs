use cig_core::axioms::run_axioms;

#[test]
fn full_battery_passes() {
    let report = run_axioms(7).unwrap();
    print!("{}", report.render());
    assert!(report.all_passed(), "{}", report.render());
}
