use std::fmt;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Configuration or input file rejected before any simulation ran.
    #[error("validation error at `{key}`: {msg}")]
    Validation { key: String, msg: String },

    /// A function was called outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The simulation produced an invalid state mid-run.
    #[error("numerical fault{}: {msg}", Location { step: *.step, particle: *.particle })]
    Numerical {
        step: Option<usize>,
        particle: Option<usize>,
        msg: String,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Location {
    step: Option<usize>,
    particle: Option<usize>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.step {
            write!(f, " at step {s}")?;
        }
        if let Some(p) = self.particle {
            write!(f, " (particle {p})")?;
        }
        Ok(())
    }
}

impl Error {
    pub fn validation(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical {
            step: None,
            particle: None,
            msg: msg.into(),
        }
    }

    /// Attaches a step index to a numerical fault that does not have one yet.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Numerical {
                step: None,
                particle,
                msg,
            } => Error::Numerical {
                step: Some(step),
                particle,
                msg,
            },
            other => other,
        }
    }

    /// True for errors caused by the simulation itself rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::Domain(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
