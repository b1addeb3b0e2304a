//! Timed weak bisimulation metrics for probabilistic timed IoT systems, and
//! an impact analysis for cyber-physical attacks on sensors built on top of
//! them.
//!
//! The crate is organised in five layers:
//!
//! * [`plts`] — exact rational sub-distributions and the finite pLTS
//!   representation everything else consumes;
//! * [`transport`] — the Kantorovich lifting of a state pseudometric via an
//!   exact network-simplex transportation solver, plus an independent
//!   enumeration oracle;
//! * [`calculus`] — the probabilistic timed process calculus: AST, concrete
//!   syntax, well-formedness checks and the two-level operational semantics;
//! * [`metric`] — weak transition closure and the timed bisimilarity metric
//!   tower `m^{k,h}`, `m^k`, `m^∞`, together with the untimed metric used for
//!   cross-checks;
//! * [`security`] — attack tolerance and vulnerability reports, composition
//!   bounds, and builders for the surveillance case study.

pub mod calculus;
pub mod metric;
pub mod plts;
pub mod security;
pub mod transport;

pub use plts::{rat, Act, FinitePlts, Rat, StateId, SubDistribution, DEADLOCK};
