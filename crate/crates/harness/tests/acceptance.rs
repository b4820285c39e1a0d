//! One test per acceptance criterion. Each prints a single pass/fail line
//! straight to stdout so the verdicts show up even when output is captured.

use std::io::Write;

use sdelab_harness::acceptance::*;

fn check(r: CriterionResult) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{r}").unwrap();
    out.flush().unwrap();
    assert!(r.pass, "{r}");
}

#[test]
fn criterion_01_hardy_form_bound() {
    check(hardy_form_bound());
}

#[test]
fn criterion_02_admissibility_reduction() {
    check(admissibility_reduction());
}

#[test]
fn criterion_03_resolvent_positivity() {
    check(resolvent_positivity());
}

#[test]
fn criterion_04_gradient_scaling() {
    check(star_scaling());
}

#[test]
fn criterion_05_weighted_estimates() {
    check(weighted_estimates());
}

#[test]
fn criterion_06_neumann_identity() {
    check(neumann_identity());
}

#[test]
fn criterion_07_martingale_suite() {
    check(martingale_suite());
}

#[test]
fn criterion_08_mc_semigroup_crosscheck() {
    check(mc_pde_crosscheck());
}

#[test]
fn criterion_09_dichotomy_trend() {
    check(dichotomy_trend());
}

#[test]
fn criterion_10_bound_preservation() {
    check(bound_preservation());
}

#[test]
fn criterion_11_determinism() {
    check(determinism());
}
