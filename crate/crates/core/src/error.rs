use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unknown word `{0}`")]
    Lexicon(String),

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("dimension mismatch ({context}): expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown speaker pair ({0}, {1})")]
    SpeakerCode(usize, usize),

    #[error("training diverged in epoch {epoch}")]
    Divergence { epoch: usize, trace: Vec<f64> },

    #[error("training phase out of order: net is `{found}`, `{required}` required")]
    PhaseOrder {
        found: &'static str,
        required: &'static str,
    },

    #[error("decode failed: {0}")]
    DecodeFailure(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
