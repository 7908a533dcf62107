//! Holds the acceptance gate (`tests/acceptance.rs`). It is a separate
//! package so that it runs after the unit and integration suites of the
//! other crates.
