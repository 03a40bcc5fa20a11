use std::fmt;
use std::path::Path;

use halknob_core::cond::CondError;
use halknob_core::corpus::CorpusError;
use halknob_core::eval::EvalError;
use halknob_core::halscore::ScoreError;
use halknob_core::model_io::ModelIoError;
use halknob_core::ngram::LmError;
use halknob_core::synth::SynthError;
use serde::Serialize;

/// Failure classes, one exit code each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Other,
    Usage,
    Io,
    Schema,
    ModelFormat,
    Data,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Schema => 4,
            Kind::ModelFormat => 5,
            Kind::Data => 6,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(Kind::Data, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(Kind::Io, format!("{}: {err}", path.display()))
    }

    pub fn model(path: &Path, err: ModelIoError) -> Self {
        match err {
            ModelIoError::Io(e) => Self::io(path, e),
            other => Self::new(Kind::ModelFormat, format!("{}: {other}", path.display())),
        }
    }

    pub fn json(path: &Path, err: serde_json::Error) -> Self {
        if err.is_io() {
            Self::new(Kind::Io, format!("{}: {err}", path.display()))
        } else {
            Self::new(Kind::Schema, format!("{}: {err}", path.display()))
        }
    }

    /// Single-line JSON for stderr.
    pub fn render(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind,
                "code": self.kind.exit_code(),
                "message": self.message,
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let kind = match e {
            CorpusError::Io { .. } => Kind::Io,
            _ => Kind::Schema,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        let kind = match e {
            LmError::EmptyCorpus => Kind::Data,
            LmError::Config(_) => Kind::Usage,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<CondError> for CliError {
    fn from(e: CondError) -> Self {
        let kind = match e {
            CondError::BadLambda(_) | CondError::BadKCopy(_) => Kind::Usage,
            _ => Kind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Lm(e) => e.into(),
            ScoreError::Cond(e) => e.into(),
            ScoreError::BadFraction(_) | ScoreError::BadFolds(_) | ScoreError::UnknownTag(_) => {
                Self::usage(e.to_string())
            }
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        let kind = match e {
            SynthError::MissingGold(_) => Kind::Data,
            _ => Kind::Usage,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::data(e.to_string())
    }
}
