//! Phylogenetic invariants for the general Markov model on trees.
//!
//! The crate covers the whole pipeline from Newick trees to membership
//! verdicts: exact tensor algebra ([`tensor`]), the two model
//! parameterizations and site simulation ([`model`]), sparse polynomials
//! ([`poly`]), invariant generation ([`invariants`]), and rank-based
//! membership tests, decompositions and split scoring ([`membership`]).
//!
//! Exact rationals are the default scalar; `f64` is used for statistical
//! workflows on simulated or observed counts.

pub mod error;
pub mod invariants;
pub mod linalg;
pub mod membership;
pub mod model;
pub mod par;
pub mod poly;
pub mod scalar;
pub mod tensor;
pub mod tree;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use membership::{Factorization, Membership, MembershipMode, MembershipReport, Verdict};
pub use model::{GeneralParams, ModelParams, Params};
pub use par::Exec;
pub use poly::{GeneratorSet, Monomial, Polynomial, Source, Variable};
pub use scalar::{Scalar, Q};
pub use tensor::{AnyTensor, Axis, FlatteningSpec, Tensor};
pub use tree::{parse_newick, EdgeId, Split, Tree, Tripartition, VertexId};
