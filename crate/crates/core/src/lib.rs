//! Clamp: a functional language whose arrows carry substructural qualifiers
//! (`-U>`, `-R>`, `-A>`, `-L>`) and whose duplication and discarding of values
//! is governed by the `Dup` and `Drop` type classes.
//!
//! The pipeline is: [`parser`] produces surface terms, [`elaborate`] inserts
//! explicit `dup`/`drop` annotations and lowers them to internal terms,
//! [`infer`] assigns qualified type schemes using the instances in
//! [`classes`], and [`eval`] runs internal terms against a reference-counted
//! store.

pub mod ast;
pub mod classes;
pub mod cli;
pub mod elaborate;
pub mod eval;
pub mod infer;
pub mod parser;

pub use parser::{parse_expr, parse_program, parse_scheme, parse_type, ParseError, Program};
