use medsyn_core::flowcore::FlowError;
use medsyn_core::forge::ForgeError;
use medsyn_core::ingest::{IngestError, PgmError};
use medsyn_core::metrics::MetricsError;
use medsyn_core::prompts::PromptError;
use medsyn_core::scoring::ScoringError;
use medsyn_core::synergy::SynergyError;
use medsyn_core::toynet::NetError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Data, message: message.into() }
    }

    /// The one-line JSON written to stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn with_kind(kind: ErrorKind, e: impl std::fmt::Display) -> CliError {
    CliError { kind, message: e.to_string() }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        with_kind(ErrorKind::Data, e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        with_kind(ErrorKind::Data, e)
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        let kind = match e {
            FlowError::NonFinite { .. } => ErrorKind::Numeric,
            FlowError::Config(_) | FlowError::TOutOfRange(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        };
        with_kind(kind, e)
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Tensor(f) => f.into(),
            e => with_kind(ErrorKind::Data, e),
        }
    }
}

impl From<ForgeError> for CliError {
    fn from(e: ForgeError) -> Self {
        let kind = if matches!(e, ForgeError::Config(_)) { ErrorKind::Usage } else { ErrorKind::Data };
        with_kind(kind, e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let kind = if matches!(e, MetricsError::InvalidParams(_)) { ErrorKind::Usage } else { ErrorKind::Data };
        with_kind(kind, e)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        with_kind(ErrorKind::Data, e)
    }
}

impl From<PgmError> for CliError {
    fn from(e: PgmError) -> Self {
        with_kind(ErrorKind::Data, e)
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        with_kind(ErrorKind::Data, e)
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        let kind = if matches!(e, PromptError::UnknownRoute(_)) { ErrorKind::Usage } else { ErrorKind::Data };
        with_kind(kind, e)
    }
}

impl From<SynergyError> for CliError {
    fn from(e: SynergyError) -> Self {
        match e {
            SynergyError::Config(_) => with_kind(ErrorKind::Usage, e),
            SynergyError::Forge(f) => f.into(),
            SynergyError::Flow(f) => f.into(),
            SynergyError::Net(n) => n.into(),
            SynergyError::Metrics(m) => m.into(),
            e => with_kind(ErrorKind::Data, e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(CliError::from(FlowError::NonFinite { step: 3 }).kind.exit_code(), 3);
        assert_eq!(CliError::from(SynergyError::Config("x".into())).kind.exit_code(), 1);
        assert_eq!(CliError::from(SynergyError::Flow(FlowError::NonFinite { step: 0 })).kind.exit_code(), 3);
        assert_eq!(CliError::from(ForgeError::NoVolumes).kind.exit_code(), 2);
    }

    #[test]
    fn json_line_is_single_line() {
        let line = CliError::data("bad\nthing").to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"]["kind"], "data");
    }
}
