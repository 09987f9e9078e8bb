//! Crate-wide error type and result alias.
//!
//! Errors are grouped so the command-line front end can map them onto its
//! documented exit codes: configuration/validation problems, infeasible
//! mathematical constraints, and file-system/format problems.

use std::path::PathBuf;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All error conditions surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A symbol in the input is not present in the vocabulary.
    #[error("unknown symbol {0:?} is not in the vocabulary")]
    UnknownSymbol(String),

    /// A corpus contained no usable tokens.
    #[error("corpus is empty")]
    EmptyCorpus,

    /// A corpus is too short for the requested model order or split.
    #[error("corpus too short: need at least {need} tokens, got {got}")]
    CorpusTooShort {
        /// Minimum number of tokens required.
        need: usize,
        /// Number of tokens actually available.
        got: usize,
    },

    /// Interpolation weights are malformed (wrong length, negative entries,
    /// or not summing to one).
    #[error("bad interpolation weights: {0}")]
    BadWeights(String),

    /// A temperature outside the valid range was supplied.
    #[error("temperature must be finite and >= 0, got {0}")]
    BadTemperature(f64),

    /// A structural parameter (order, draft length, top-k, budget, ...) is
    /// outside its valid range.
    #[error("bad parameter {name}: {detail}")]
    BadParameter {
        /// Which parameter was rejected.
        name: &'static str,
        /// Why it was rejected.
        detail: String,
    },

    /// A redistribution violates one of the ordering-theorem constraints.
    /// `clause` names the violated constraint.
    #[error("constraint violation ({clause}): {detail}")]
    ConstraintViolation {
        /// Short name of the violated constraint.
        clause: &'static str,
        /// Human-readable description with the offending values.
        detail: String,
    },

    /// A requested transformation has no feasible solution (for example,
    /// concentrating more mass than the remaining headroom allows).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The cost model is malformed (non-positive or non-finite entries).
    #[error("bad cost model: {0}")]
    BadCosts(String),

    /// An experiment configuration failed validation or parsing.
    #[error("config error: {0}")]
    Config(String),

    /// A persisted model/vocabulary/report file is malformed or has an
    /// unsupported version tag.
    #[error("persisted file format error: {0}")]
    Persist(String),

    /// An operating-system I/O failure, annotated with the path involved.
    /// The underlying error is exposed through the source chain rather than
    /// the display string, so chained formatters print it exactly once.
    #[error("io error on {path}")]
    Io {
        /// File the operation was acting on.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wrap an I/O error with the path that produced it.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_error_messages_name_the_problem() {
        let e = Error::ConstraintViolation {
            clause: "budget",
            detail: "left sum 0.10 != right sum 0.05".into(),
        };
        let msg = e.to_string();
        assert!(msg.contains("budget"));
        assert!(msg.contains("0.10"));

        let e = Error::CorpusTooShort { need: 10, got: 3 };
        assert!(e.to_string().contains("need at least 10"));
    }
}
