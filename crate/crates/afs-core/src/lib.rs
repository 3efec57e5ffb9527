//! Core library for the affine session calculus workbench.
//!
//! The pieces, bottom up:
//!
//! - [`types`]: session types, ground types, duality, interfaces
//! - [`syntax`]: processes, expressions, substitution, alpha-equivalence
//! - [`parse`]: source text to programs and types
//! - [`congruence`]: canonical forms and structural congruence
//! - [`typecheck`]: the affine typing discipline
//! - [`reduce`]: standard and cancellation reduction
//! - [`analysis`]: barbs, inactivity, characteristic processes, progress
//! - [`harness`]: seeded generation and the property suite

pub mod analysis;
pub mod congruence;
pub mod harness;
pub mod parse;
pub mod reduce;
pub mod syntax;
pub mod typecheck;
pub mod types;
