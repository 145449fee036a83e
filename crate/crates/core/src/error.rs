use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown nonterminal id {0}")]
    UnknownNonterminal(usize),
    #[error("unknown nonterminal name `{0}`")]
    UnknownNonterminalName(String),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("malformed tree: {0}")]
    MalformedAst(String),
    #[error("ast syntax error at byte {pos}: {msg}")]
    AstSyntax { pos: usize, msg: String },
    #[error("empty input")]
    EmptyInput,
    #[error("unparseable: no derivation (furthest token {furthest}{})", .found.as_ref().map(|t| format!(", found `{t}`")).unwrap_or_default())]
    Unparseable { furthest: usize, found: Option<String> },
    #[error("depth limit of {0} exceeded")]
    DepthLimit(usize),
    #[error("time limit of {0} s exceeded")]
    Timeout(f64),
    #[error("inconsistent parse: reconstruction does not match input")]
    InconsistentParse,
    #[error("bucket {0} is unsatisfiable")]
    UnsatisfiableBucket(String),
    #[error("invalid bucket: {0}")]
    InvalidBucket(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {rule} is not applicable to nonterminal {nt}")]
    InapplicableLabel { rule: String, nt: String },
    #[error("training diverged in stage {stage} (loss is NaN)")]
    Divergence { stage: usize },
    #[error("model/grammar mismatch: {0}")]
    ModelMismatch(String),
    #[error("model format error: {0}")]
    ModelFormat(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Attaches a path to a bare IO error.
    pub fn at(self, path: &std::path::Path) -> Error {
        match self {
            Error::Io(source) => Error::File { path: path.display().to_string(), source },
            other => other,
        }
    }

    /// Short kebab-case tag used in `ERROR <kind>` output lines and error histograms.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput => "empty-input",
            Error::Unparseable { .. } => "unparseable",
            Error::DepthLimit(_) => "depth-limit",
            Error::InconsistentParse => "inconsistent-parse",
            Error::Timeout(_) => "timeout",
            Error::UnknownToken(_) => "unknown-token",
            Error::Io(_) | Error::File { .. } => "io",
            _ => "error",
        }
    }
}
