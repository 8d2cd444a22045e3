use hop_core::HopError;
use hop_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config, paths or inputs.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Hop(#[from] HopError),
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Hop(HopError::from(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Hop(HopError::from(e))
    }
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 3 for a NaN or infinity raised by a tensor op, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Hop(e) if e.non_finite_op().is_some() => 3,
            _ => 2,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Hop(e) => match e.non_finite_op() {
                Some(op) => format!("numeric failure: op `{op}` produced a NaN or infinity"),
                None => e.to_string(),
            },
            CliError::Usage(m) => m.clone(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
