//! Acceptance checks live in `tests/acceptance.rs`; run them with
//! `cargo test -p pseudosurv-validation`. Set `ACCEPTANCE_ONLY=<n>` to run a
//! single criterion.
