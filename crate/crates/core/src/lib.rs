//! Flowpipe over-approximation for polynomial ODEs and hybrid automata with
//! bounded uncertainty, built from chains of robust barrier tubes.
//!
//! Each tube is an axis-aligned enclosure box whose non-exit facets are
//! certified unreachable by barrier polynomials, plus a ring of barrier
//! certificates that pins the flowpipe to a sub-box of the exit facet. All
//! certificates are Handelman identities found by linear programming.

pub mod certify;
pub mod enclosure;
pub mod hybrid;
pub mod lp;
pub mod modelio;
pub mod par;
pub mod pipeline;
pub mod poly;
pub mod simulate;
pub mod tube;

pub use modelio::{Hyperrect, Model};
pub use poly::{LinearPolynomial, Polynomial};
