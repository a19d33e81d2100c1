//! Frozen reports. Regenerate with `UPDATE_GOLDEN=1 cargo test --test golden`
//! after checking the new counts against the oracle tests.

mod common;

use common::*;
use unfold_por_core::explorer::{explore, ExploreOptions};
use unfold_por_core::report::JsonReport;

fn check(name: &str) {
    let opts = ExploreOptions::default();
    let x = explore(program(name), &opts).unwrap();
    let json = JsonReport::new(&format!("{name}.cp"), &opts, &x.report).to_json();
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{name}.json"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &json).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(json, expected, "{name}: report drifted from {}", path.display());
}

#[test]
fn condvar_example() {
    check("fig3");
}

#[test]
fn input_branch_example() {
    check("fig1");
}
