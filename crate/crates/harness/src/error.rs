use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] dispersal_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("check failed: {0}")]
    Check(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 2 for bad input, 3 for solver and I/O failures, 4 for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Solver(dispersal_core::Error::InvalidInput(_)) => 2,
            HarnessError::Solver(_) | HarnessError::Io { .. } => 3,
            HarnessError::Check(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "invalid-config",
            HarnessError::Solver(e) => e.kind(),
            HarnessError::Io { .. } => "io",
            HarnessError::Check(_) => "check-failed",
        }
    }

    /// Machine-readable diagnostic.
    pub fn diagnostic(&self) -> Value {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let HarnessError::Solver(e) = self {
            let detail = match e {
                dispersal_core::Error::ThetaDiverged {
                    iterations,
                    residuals,
                    ..
                } => {
                    json!({ "iterations": iterations, "residuals": residuals })
                }
                dispersal_core::Error::EigenDiverged {
                    iterations,
                    increment,
                    residual,
                } => {
                    json!({ "iterations": iterations, "increment": increment, "residual": residual })
                }
                dispersal_core::Error::TrajectoryHitBoundary { t, index } => {
                    json!({ "t": t, "index": index })
                }
                dispersal_core::Error::BoundaryMinimizer { index, len } => {
                    json!({ "index": index, "len": len })
                }
                dispersal_core::Error::CflViolation { t, dt } => json!({ "t": t, "dt": dt }),
                dispersal_core::Error::CurvatureCollapsed { t, sigma } => {
                    json!({ "t": t, "sigma": sigma })
                }
                dispersal_core::Error::AprioriViolated {
                    t,
                    rho_min,
                    rho_max,
                    env_min,
                    env_max,
                } => {
                    json!({ "t": t, "rho_min": rho_min, "rho_max": rho_max, "envelope": [env_min, env_max] })
                }
                dispersal_core::Error::NonFinite { t, index, .. } => {
                    json!({ "t": t, "index": index })
                }
                dispersal_core::Error::PopulationExtinct { t } => json!({ "t": t }),
                dispersal_core::Error::BundleNotConverged { deviation } => {
                    json!({ "deviation": deviation })
                }
                _ => Value::Null,
            };
            if !detail.is_null() {
                v["detail"] = detail;
            }
        }
        v
    }
}
