//! Acceptance suite: every check pins a measured quantity against the
//! tolerance fixed in `ewlab_core::suites`, printing one line per check.
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! lines on success as well.

use ewlab_core::suites;

fn run(name: &str) {
    let report = suites::run_suite(name).unwrap_or_else(|e| {
        panic!("suite {name} failed to run: {e}");
    });
    print!("{}", report.render());
    assert!(
        report.passed(),
        "suite {name} failed:\n{}",
        report.render()
    );
}

#[test]
fn acceptance_piola() {
    run("piola");
}

#[test]
fn acceptance_linear_waves() {
    run("linear-waves");
}

#[test]
fn acceptance_decoupling() {
    run("decoupling");
}

#[test]
fn acceptance_raychaudhuri() {
    run("raychaudhuri");
}

#[test]
fn acceptance_coercive() {
    run("coercive");
}

#[test]
fn acceptance_convergence() {
    run("convergence");
}
