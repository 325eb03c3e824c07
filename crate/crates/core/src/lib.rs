//! An obfuscating middle-end over a small textual IR.
//!
//! Control-flow passes: classic flattening, nested-switch flattening, bogus
//! control flow behind opaque predicates and in-degree obfuscation of bogus
//! blocks. Identifier passes: random, dictionary and homoglyph renaming plus
//! overload decoys. A reference interpreter checks that every pass preserves
//! behavior and a metrics suite scores how far a module moved from its
//! original.

pub mod bogus_flow;
pub mod cfg;
pub mod corpus;
pub mod error;
pub mod flatten;
pub mod identifier;
pub mod metrics;
pub mod pipeline;
pub mod interp;
pub mod ir;
pub mod rng;
