use std::path::{Path, PathBuf};

use openpc_core::block::BlockPolicy;
use openpc_core::cluster::ClusterConfig;
use openpc_core::fabric::FabricConfig;
use openpc_core::qmgr::CpuTime;
use serde::Deserialize;

pub const ENV_CONFIG: &str = "OPENPC_CONFIG";
pub const ENV_DATA_DIR: &str = "OPENPC_DATA_DIR";
pub const ENV_LISTEN_ADDR: &str = "OPENPC_LISTEN_ADDR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdminAccount {
    pub username: String,
    pub password: String,
    pub display_name: String,
}

impl Default for AdminAccount {
    fn default() -> Self {
        AdminAccount {
            username: "admin".into(),
            password: "admin".into(),
            display_name: "Administrator".into(),
        }
    }
}

/// Service settings, read from a TOML file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub listen_addr: String,
    pub pool_size: u32,
    pub boot_delay: u64,
    pub heartbeat_interval: u64,
    /// `HH:MM:SS`, or empty for uncapped queues.
    pub default_cput: String,
    pub boot_timeout: u64,
    pub environment_profiles: Vec<String>,
    pub allow_multiple_blocks: bool,
    pub master_secret: String,
    pub session_ttl: u64,
    /// Write a snapshot after this many events; 0 disables snapshots.
    pub snapshot_every: u64,
    pub admin: AdminAccount,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let cluster = ClusterConfig::default();
        ServiceConfig {
            data_dir: PathBuf::from("openpc-data"),
            listen_addr: "127.0.0.1:8080".into(),
            pool_size: cluster.pool_size,
            boot_delay: cluster.fabric.boot_delay,
            heartbeat_interval: cluster.fabric.heartbeat_interval,
            default_cput: "24:00:00".into(),
            boot_timeout: cluster.boot_timeout,
            environment_profiles: cluster.policy.environment_profiles,
            allow_multiple_blocks: cluster.policy.allow_multiple_blocks,
            master_secret: "openpc-master".into(),
            session_ttl: 8 * 3600,
            snapshot_every: 100,
            admin: AdminAccount::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<ServiceConfig, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.cluster()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ServiceConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ServiceConfig::from_toml(&text)
    }

    /// Loads the file named by `OPENPC_CONFIG` (defaults otherwise), then
    /// applies the data-dir and listen-address overrides.
    pub fn from_env() -> Result<ServiceConfig, ConfigError> {
        let mut cfg = match std::env::var_os(ENV_CONFIG) {
            Some(path) => ServiceConfig::from_file(Path::new(&path))?,
            None => ServiceConfig::default(),
        };
        if let Some(dir) = std::env::var_os(ENV_DATA_DIR) {
            cfg.data_dir = PathBuf::from(dir);
        }
        if let Ok(addr) = std::env::var(ENV_LISTEN_ADDR) {
            cfg.listen_addr = addr;
        }
        Ok(cfg)
    }

    pub fn cluster(&self) -> Result<ClusterConfig, ConfigError> {
        let default_cput = if self.default_cput.trim().is_empty() {
            None
        } else {
            Some(CpuTime::parse(&self.default_cput).ok_or_else(|| {
                ConfigError::Invalid(format!("default_cput `{}` is not HH:MM:SS", self.default_cput))
            })?)
        };
        if self.pool_size == 0 || self.pool_size > 99 {
            return Err(ConfigError::Invalid("pool_size must be within 1..=99".into()));
        }
        if self.environment_profiles.is_empty() {
            return Err(ConfigError::Invalid("at least one environment profile is required".into()));
        }
        if self.admin.username.is_empty() || !openpc_core::ids::is_identifier(&self.admin.username) {
            return Err(ConfigError::Invalid("admin username must be an identifier".into()));
        }
        Ok(ClusterConfig {
            pool_size: self.pool_size,
            fabric: FabricConfig {
                boot_delay: self.boot_delay,
                heartbeat_interval: self.heartbeat_interval,
            },
            default_cput,
            boot_timeout: self.boot_timeout,
            policy: BlockPolicy {
                environment_profiles: self.environment_profiles.clone(),
                allow_multiple_blocks: self.allow_multiple_blocks,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ServiceConfig::from_toml("").unwrap();
        assert_eq!(cfg, ServiceConfig::default());
        assert_eq!(cfg.cluster().unwrap(), ClusterConfig::default());
    }

    #[test]
    fn partial_file_overrides() {
        let cfg = ServiceConfig::from_toml(
            "pool_size = 8\ndefault_cput = \"00:00:10\"\n[admin]\nusername = \"root\"\npassword = \"pw\"\n",
        )
        .unwrap();
        let cluster = cfg.cluster().unwrap();
        assert_eq!(cluster.pool_size, 8);
        assert_eq!(cluster.default_cput, Some(CpuTime(10)));
        assert_eq!(cfg.admin.username, "root");
        assert_eq!(cfg.admin.display_name, "Administrator");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ServiceConfig::from_toml("default_cput = \"soon\"").is_err());
        assert!(ServiceConfig::from_toml("pool_size = 0").is_err());
        assert!(ServiceConfig::from_toml("colour = 3").is_err());
    }

    #[test]
    fn empty_cput_means_uncapped() {
        let cfg = ServiceConfig::from_toml("default_cput = \"\"").unwrap();
        assert_eq!(cfg.cluster().unwrap().default_cput, None);
    }
}
