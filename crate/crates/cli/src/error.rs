use std::path::PathBuf;

use mixroute::env::EnvError;
use mixroute::eval::EvalError;
use mixroute::grpo::GrpoError;
use mixroute::klst::KlstError;
use mixroute::router::RouterError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config:\n{}", .0.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<String>),
    #[error("invariant violated:\n{}", .0.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n"))]
    Invariant(Vec<String>),
    #[error("missing artifact {}: {reason}", .path.display())]
    MissingArtifact { path: PathBuf, reason: String },
    #[error("{} does not match its manifest: {reason}", .path.display())]
    Provenance { path: PathBuf, reason: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Klst(#[from] KlstError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::MissingArtifact { .. } | CliError::Provenance { .. } => 4,
            CliError::Klst(KlstError::NoSuccesses { .. }) => 3,
            CliError::Env(EnvError::InvalidConfig(_))
            | CliError::Klst(KlstError::InvalidConfig(_))
            | CliError::Grpo(GrpoError::InvalidConfig(_))
            | CliError::Eval(EvalError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}
