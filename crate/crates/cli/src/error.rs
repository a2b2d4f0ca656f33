use poe_core::forge::ForgeError;
use poe_core::meta_eval::MetaEvalError;
use poe_core::numkit::NumkitError;
use poe_core::panel::PanelError;
use poe_core::trainer::TrainError;
use thiserror::Error;

/// Process exit status of a failed run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Io = 1,
    Usage = 2,
    Schema = 3,
    Checkpoint = 4,
    Numerical = 5,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Usage, message)
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Schema, message)
    }

    pub fn checkpoint(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Checkpoint, message)
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    /// Prefixes the message with where the error happened.
    pub fn context(mut self, what: impl std::fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ExitKind::Io, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(ExitKind::Io, e.to_string())
    }
}

impl From<NumkitError> for CliError {
    fn from(e: NumkitError) -> Self {
        let kind = match e {
            NumkitError::NonFinite { .. } | NumkitError::NonFiniteObjective => ExitKind::Numerical,
            _ => ExitKind::Checkpoint,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        if let PanelError::Numkit(n) = e {
            return n.into();
        }
        let kind = match &e {
            PanelError::NonFiniteParameter(_) => ExitKind::Numerical,
            PanelError::EmptyInput | PanelError::InvalidTokens(_) | PanelError::EmptyCorpus => {
                ExitKind::Schema
            }
            PanelError::InvalidConfig(_) | PanelError::MaxLenTooSmall(_) => ExitKind::Usage,
            PanelError::Io(_) => ExitKind::Io,
            _ => ExitKind::Checkpoint,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ForgeError> for CliError {
    fn from(e: ForgeError) -> Self {
        let kind = match &e {
            ForgeError::InvalidConfig(_) | ForgeError::InvalidThreshold(_) => ExitKind::Usage,
            ForgeError::Io(_) => ExitKind::Io,
            _ => ExitKind::Schema,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<MetaEvalError> for CliError {
    fn from(e: MetaEvalError) -> Self {
        let message = e.to_string();
        match e {
            MetaEvalError::Panel(p) => p.into(),
            MetaEvalError::NonFinite => Self::new(ExitKind::Numerical, message),
            MetaEvalError::TooFewResamples(_) => Self::usage(message),
            _ => Self::schema(message),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let message = e.to_string();
        let kind = match e {
            TrainError::Panel(p) => return p.into(),
            TrainError::Numkit(n) => return n.into(),
            TrainError::MetaEval(m) => return m.into(),
            TrainError::NonFiniteLoss { .. } => ExitKind::Numerical,
            TrainError::DomainMismatch { .. } => ExitKind::Checkpoint,
            TrainError::InvalidConfig(_) | TrainError::Indivisible { .. } => ExitKind::Usage,
            TrainError::Exhausted
            | TrainError::EmptyDataset(_)
            | TrainError::InvalidData(_)
            | TrainError::TooFewRecords(_) => ExitKind::Schema,
        };
        Self::new(kind, message)
    }
}
