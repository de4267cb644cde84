use core::fmt;

/// Errors surfaced by the core numerics.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for `op`.
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A documented precondition on an argument does not hold.
    InvalidArgument(&'static str),
    /// Unrecognised acronym while parsing a kind or variant name.
    Parse {
        what: &'static str,
        input: alloc::string::String,
    },
    /// The distillation gradient vanished, so no weight ratio exists.
    VanishingGradient,
    /// Training produced a non-finite loss.
    Diverged { epoch: usize, step: usize },
    /// No fit start produced a finite residual.
    FitFailed,
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Parse { what, input } => write!(f, "unknown {what} `{input}`"),
            Error::VanishingGradient => write!(f, "distillation gradient norm vanished"),
            Error::Diverged { epoch, step } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}, step {step}")
            }
            Error::FitFailed => write!(f, "double-exponential fit failed from every start"),
        }
    }
}

impl core::error::Error for Error {}
