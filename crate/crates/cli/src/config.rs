//! Runtime configuration: optional TOML file, overridden by flags.
//! Credentials only ever come from the environment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use dba_core::agent::PromptTemplates;
use dba_core::http::{RetryPolicy, Secret};
use dba_core::maps::{DEFAULT_MAPS_BASE_URL, MAPS_API_KEY_ENV, MAPS_BASE_URL_ENV};
use dba_core::PriceTable;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetryFile {
    max_attempts: Option<u32>,
    base_delay_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    cache_dir: Option<PathBuf>,
    asset_dir: Option<PathBuf>,
    price_table: Option<PathBuf>,
    prompt_dir: Option<PathBuf>,
    parallelism: Option<usize>,
    #[serde(default)]
    retry: RetryFile,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub asset_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
}

pub struct CliConfig {
    pub cache_dir: PathBuf,
    pub asset_dir: PathBuf,
    pub prices: Arc<PriceTable>,
    pub templates: Arc<PromptTemplates>,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub maps_base_url: String,
    pub maps_key: Option<Secret>,
}

impl std::fmt::Debug for CliConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CliConfig")
            .field("cache_dir", &self.cache_dir)
            .field("asset_dir", &self.asset_dir)
            .field("parallelism", &self.parallelism)
            .field("retry", &self.retry)
            .field("maps_base_url", &self.maps_base_url)
            .field("maps_key", &self.maps_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

const DEFAULT_CACHE_DIR: &str = ".dba/cache";
const DEFAULT_ASSET_DIR: &str = ".dba/assets";
const DEFAULT_PARALLELISM: usize = 8;

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl CliConfig {
    pub fn load(o: Overrides) -> Result<Self, CliError> {
        let (file, base) = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                let file: FileConfig = toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, base)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };

        let prices = match file.price_table {
            Some(p) => {
                let p = resolve(&base, p);
                PriceTable::load(&p).map_err(|e| CliError::Usage(format!("price table {}: {e}", p.display())))?
            }
            None => PriceTable::builtin(),
        };
        let templates = match file.prompt_dir {
            Some(p) => PromptTemplates::load_dir(&resolve(&base, p)).map_err(|e| CliError::Usage(e.to_string()))?,
            None => PromptTemplates::default(),
        };
        let parallelism = o.parallelism.or(file.parallelism).unwrap_or(DEFAULT_PARALLELISM);
        if parallelism == 0 {
            return Err(CliError::Usage("parallelism must be at least 1".into()));
        }
        let defaults = RetryPolicy::default();
        let retry = RetryPolicy {
            max_attempts: file.retry.max_attempts.unwrap_or(defaults.max_attempts),
            base_delay_ms: file.retry.base_delay_ms.unwrap_or(defaults.base_delay_ms),
            ..defaults
        };
        if retry.max_attempts == 0 {
            return Err(CliError::Usage("retry.max_attempts must be at least 1".into()));
        }

        Ok(CliConfig {
            cache_dir: o
                .cache_dir
                .unwrap_or_else(|| file.cache_dir.map(|p| resolve(&base, p)).unwrap_or(DEFAULT_CACHE_DIR.into())),
            asset_dir: o
                .asset_dir
                .unwrap_or_else(|| file.asset_dir.map(|p| resolve(&base, p)).unwrap_or(DEFAULT_ASSET_DIR.into())),
            prices: Arc::new(prices),
            templates: Arc::new(templates),
            parallelism,
            retry,
            maps_base_url: std::env::var(MAPS_BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_MAPS_BASE_URL.to_string()),
            maps_key: Secret::from_env(MAPS_API_KEY_ENV),
        })
    }

    pub fn ensure_dirs(&self) -> anyhow::Result<()> {
        for dir in [&self.cache_dir, &self.asset_dir] {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        Ok(())
    }
}
