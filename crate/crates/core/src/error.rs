use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands have incompatible shapes.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A value or argument is outside its valid domain.
    Invalid(String),
    /// A forward or backward pass produced NaN or infinity.
    NonFinite { context: String },
    /// A triplet anchor has no positive or no negative candidate.
    MissingCandidate {
        anchor: usize,
        identity: usize,
        kind: &'static str,
    },
    /// A retrieval query has no gallery item of its identity.
    NoRelevant { query: usize, identity: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "{op}: dimension mismatch between {left:?} and {right:?}")
            }
            Error::Invalid(msg) => f.write_str(msg),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::MissingCandidate {
                anchor,
                identity,
                kind,
            } => write!(
                f,
                "anchor {anchor} (identity {identity}) has no {kind} candidate"
            ),
            Error::NoRelevant { query, identity } => write!(
                f,
                "query {query} (identity {identity}) has no matching gallery item"
            ),
        }
    }
}

impl core::error::Error for Error {}
