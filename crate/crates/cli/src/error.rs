use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] sc_harmon_core::Error),
    #[error(transparent)]
    Deep(#[from] sc_harmon_deep::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        use sc_harmon_autodiff::Error as A;
        use sc_harmon_core::Error as C;
        use sc_harmon_deep::Error as D;
        match self {
            CliError::Core(C::Io { .. })
            | CliError::Deep(D::Core(C::Io { .. }))
            | CliError::Deep(D::Autodiff(A::Io { .. })) => 2,
            _ => 1,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
