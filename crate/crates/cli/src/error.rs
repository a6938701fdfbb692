use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Path,
    Shape,
    Io,
    Data,
    Check,
}

impl ErrorKind {
    fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Path => "path",
            ErrorKind::Shape => "shape",
            ErrorKind::Io => "io",
            ErrorKind::Data => "data",
            ErrorKind::Check => "check",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Path => 3,
            ErrorKind::Shape => 4,
            ErrorKind::Io => 5,
            ErrorKind::Data => 6,
            ErrorKind::Check => 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn path(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Path, message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {e}", path.display()))
    }

    /// `error kind=<kind> message="<escaped>"` on one line.
    pub fn to_line(&self) -> String {
        let escaped: String = self
            .message
            .chars()
            .flat_map(|c| match c {
                '"' => vec!['\\', '"'],
                '\\' => vec!['\\', '\\'],
                '\n' => vec!['\\', 'n'],
                '\r' => vec!['\\', 'r'],
                c => vec![c],
            })
            .collect();
        format!("error kind={} message=\"{escaped}\"", self.kind.as_str())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

impl std::error::Error for CliError {}

impl From<splice_mfcn::Error> for CliError {
    fn from(e: splice_mfcn::Error) -> Self {
        use splice_mfcn::Error as E;
        let kind = match &e {
            E::Shape { .. } => ErrorKind::Shape,
            E::Config(_) | E::InvalidArgument { .. } => ErrorKind::Config,
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorKind::Path
            }
            E::Io { .. } => ErrorKind::Io,
            E::Image { path, .. } if !path.exists() => ErrorKind::Path,
            E::Image { .. } | E::Csv(_) | E::Checkpoint(_) | E::Generation(_) => ErrorKind::Data,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::new(ErrorKind::Io, e.to_string())
    }
}
