//! mdbook cannot run chapter snippets as tests by itself, so each chapter
//! is attached here as the documentation of an empty module and
//! `cargo test --doc` compiles and runs every fenced code block. Keep the
//! module list in sync with `book/src/SUMMARY.md`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
