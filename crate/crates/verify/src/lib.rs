//! Holds the `acceptance` test target. Run it with
//! `cargo test -p credit-lens-verify --test acceptance`.
