//! Call-by-need λ-calculus on the control stack.
//!
//! The crate packages three layers:
//!
//! * [`calculus`] — evaluation contexts, unique decomposition and the
//!   standard-reduction evaluator `eval_need`, used as the oracle;
//! * [`ckplus`] — the CK+ machine, which resolves a variable by indexing
//!   the continuation stack at its effective address instead of
//!   searching, plus the unload function relating states back to terms;
//! * [`sc`] — the stack-compaction scan that drops bind frames no live
//!   variable can reach.
//!
//! [`syntax`] and [`renaming`] supply terms and delayed index offsets;
//! [`harness`] has the corpus generator, the differential and trace
//! verifiers, and the lookup benchmark behind the `cbneed` CLI.

pub mod calculus;
pub mod ckplus;
pub mod harness;
pub mod renaming;
pub mod sc;
pub mod syntax;

pub use calculus::{decompose, eval_need, step_need, Decomposition, EvalOutcome};
pub use ckplus::{eval_ckplus, inject, step, unload, MachineState, Rule};
pub use sc::{compact, CompactionPolicy};
pub use syntax::{parse_term, print_term, Syntax, Term, TermRef};
