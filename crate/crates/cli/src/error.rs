//! Command failures and their process exit codes.

use guitarflow_core::audio::AudioError;
use guitarflow_core::audiodist::MetricError;
use guitarflow_core::flowmatch::FlowError;
use guitarflow_core::latentcodec::CodecError;
use guitarflow_core::mosstats::StatsError;
use guitarflow_core::neuralnet::NnError;
use guitarflow_core::odesolve::OdeError;
use guitarflow_core::stringsynth::SynthError;
use guitarflow_core::tabscore::TabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 1.
    #[error("usage: {0}")]
    Usage(String),
    /// Missing, malformed or inconsistent inputs; exit code 2.
    #[error("data: {0}")]
    Data(String),
    /// Non-finite values or solver breakdown; exit code 3.
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    /// Prefixes the message with `context`, keeping the class.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{context}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{context}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{context}: {m}")),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TabError> for CliError {
    fn from(e: TabError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Audio(a) => a.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<OdeError> for CliError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::InvalidSolver(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            FlowError::Net(n) => n.into(),
            FlowError::Ode(o) => o.into(),
            FlowError::Codec(c) => c.into(),
            FlowError::Config(m) => CliError::Usage(m),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::NonFinite | MetricError::NegativeEigenvalue(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Argument(m) => CliError::Usage(m),
            _ => CliError::Data(e.to_string()),
        }
    }
}
