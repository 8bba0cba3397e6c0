use std::fmt;

/// Error type shared by every module in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Two operands have incompatible shapes; both shapes are reported.
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// An argument or configuration value is out of range or malformed.
    Config(String),
    /// A tape does not belong to the weights/config it was replayed with.
    Tape(String),
    /// A tape audit found stored counts that disagree with the memory model.
    Audit(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn tape(msg: impl Into<String>) -> Self {
        Error::Tape(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Tape(msg) => write!(f, "tape mismatch: {msg}"),
            Error::Audit(msg) => write!(f, "tape audit failed:\n{msg}"),
        }
    }
}

impl std::error::Error for Error {}
