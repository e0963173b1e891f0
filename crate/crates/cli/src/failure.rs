use std::fmt;

/// Exit status contract: 0 success, 1 runtime failure, 2 usage or config error.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

/// Library errors met while running a command. Config errors still mean
/// the request itself was wrong.
impl From<wavenet::Error> for Failure {
    fn from(e: wavenet::Error) -> Self {
        match e {
            wavenet::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

pub trait Context<T> {
    /// Any error becomes a usage failure, prefixed with `what`.
    fn usage(self, what: impl fmt::Display) -> Result<T, Failure>;
    fn runtime(self, what: impl fmt::Display) -> Result<T, Failure>;
}

impl<T, E: fmt::Display> Context<T> for Result<T, E> {
    fn usage(self, what: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(format!("{what}: {e}")))
    }

    fn runtime(self, what: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(format!("{what}: {e}")))
    }
}
