//! CLI failure classes with their documented exit codes.

use mlr_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, flags or model construction parameters. Exit 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// Broken, inconsistent or incompatible data/model artifacts. Exit 3.
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite values in training or evaluation. Exit 4.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Filesystem failures. Exit 5.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Build { .. } => CliError::Config(e.to_string()),
            CoreError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            CoreError::Shape { .. } | CoreError::Usage { .. } | CoreError::Data { .. } => {
                CliError::Data(e.to_string())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Config(String::new()).exit_code(),
            CliError::Data(String::new()).exit_code(),
            CliError::Numeric(String::new()).exit_code(),
            CliError::Io(std::io::Error::other("x")).exit_code(),
        ];
        let mut sorted = codes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
        assert!(codes.iter().all(|&c| c != 0));
    }
}
