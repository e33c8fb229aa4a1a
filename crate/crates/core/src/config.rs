//! Engine configuration: a flat TOML key/value file whose relative paths
//! resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::policies::{PolicyKind, DEFAULT_PER_CAPITA_SUFFIX, DEFAULT_PREFILTER_K, US_POPULATION};
use crate::{Error, Result};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_BODY_BYTES: usize = 64 * 1024;

/// Where embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSetting {
    Builtin,
    Remote(String),
}

impl ProviderSetting {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("builtin") {
            Ok(ProviderSetting::Builtin)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(ProviderSetting::Remote(s.to_string()))
        } else {
            Err(Error::Config(format!("embedding_provider must be `builtin` or an http(s) URL, got `{s}`")))
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PrefilterRaw {
    Count(usize),
    Word(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    corpus: Option<PathBuf>,
    crowd_corpus: Option<PathBuf>,
    model: Option<PathBuf>,
    familiarity_model: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    embedding_provider: Option<String>,
    embedding_dims: Option<usize>,
    population: Option<u64>,
    prefilter_k: Option<PrefilterRaw>,
    policies: Option<String>,
    listen: Option<String>,
    selection_log: Option<PathBuf>,
    max_body_bytes: Option<usize>,
    per_capita_suffix: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub corpus: Option<PathBuf>,
    pub crowd_corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub familiarity_model: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub embedding_provider: ProviderSetting,
    pub embedding_dims: usize,
    pub population: u64,
    /// `None` means score the whole corpus.
    pub prefilter_k: Option<usize>,
    pub policies: Vec<PolicyKind>,
    pub listen: String,
    pub selection_log: PathBuf,
    pub max_body_bytes: usize,
    pub per_capita_suffix: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            corpus: None,
            crowd_corpus: None,
            model: None,
            familiarity_model: None,
            embeddings: None,
            embedding_provider: ProviderSetting::Builtin,
            embedding_dims: crate::embed::DEFAULT_DIMS,
            population: US_POPULATION,
            prefilter_k: Some(DEFAULT_PREFILTER_K),
            policies: PolicyKind::ALL.to_vec(),
            listen: DEFAULT_LISTEN.into(),
            selection_log: PathBuf::from("selections.tsv"),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            per_capita_suffix: DEFAULT_PER_CAPITA_SUFFIX.into(),
        }
    }
}

pub fn parse_policies(s: &str) -> Result<Vec<PolicyKind>> {
    let mut out = Vec::new();
    for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let p: PolicyKind = name.parse().map_err(|_| Error::Config(format!("unknown policy `{name}`")))?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn parse_prefilter(s: &str) -> Result<Option<usize>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    match s.trim().parse::<usize>() {
        Ok(k) if k > 0 => Ok(Some(k)),
        _ => Err(Error::Config(format!("prefilter_k must be a positive integer or `all`, got `{s}`"))),
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { base.join(p) } else { p });
        let mut cfg = EngineConfig {
            corpus: resolve(raw.corpus),
            crowd_corpus: resolve(raw.crowd_corpus),
            model: resolve(raw.model),
            familiarity_model: resolve(raw.familiarity_model),
            embeddings: resolve(raw.embeddings),
            ..EngineConfig::default()
        };
        if let Some(p) = raw.embedding_provider {
            cfg.embedding_provider = ProviderSetting::parse(&p)?;
        }
        if let Some(d) = raw.embedding_dims {
            cfg.embedding_dims = d;
        }
        if let Some(p) = raw.population {
            cfg.population = p;
        }
        match raw.prefilter_k {
            Some(PrefilterRaw::Count(k)) => cfg.prefilter_k = parse_prefilter(&k.to_string())?,
            Some(PrefilterRaw::Word(w)) => cfg.prefilter_k = parse_prefilter(&w)?,
            None => {}
        }
        if let Some(p) = raw.policies {
            cfg.policies = parse_policies(&p)?;
        }
        if let Some(l) = raw.listen {
            cfg.listen = l;
        }
        if let Some(p) = resolve(raw.selection_log) {
            cfg.selection_log = p;
        }
        if let Some(m) = raw.max_body_bytes {
            cfg.max_body_bytes = m;
        }
        if let Some(s) = raw.per_capita_suffix {
            cfg.per_capita_suffix = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy must be enabled".into()));
        }
        if self.population == 0 {
            return Err(Error::Config("population must be positive".into()));
        }
        if self.embedding_dims == 0 {
            return Err(Error::Config("embedding_dims must be positive".into()));
        }
        if self.max_body_bytes == 0 {
            return Err(Error::Config("max_body_bytes must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let cfg = EngineConfig::from_toml(
            r#"
corpus = "corpus.jsonl"
model = "/abs/model.json"
population = 330000000
prefilter_k = "all"
policies = "contextual, rule_based"
"#,
            Path::new("/etc/persp"),
        )
        .unwrap();
        assert_eq!(cfg.corpus, Some(PathBuf::from("/etc/persp/corpus.jsonl")));
        assert_eq!(cfg.model, Some(PathBuf::from("/abs/model.json")));
        assert_eq!(cfg.population, 330_000_000);
        assert_eq!(cfg.prefilter_k, None);
        assert_eq!(cfg.policies, vec![PolicyKind::RuleBased, PolicyKind::Contextual]);
    }

    #[test]
    fn rejects_invalid() {
        let base = Path::new(".");
        assert!(EngineConfig::from_toml("policies = \"\"", base).is_err());
        assert!(EngineConfig::from_toml("population = 0", base).is_err());
        assert!(EngineConfig::from_toml("prefilter_k = 0", base).is_err());
        assert!(EngineConfig::from_toml("embedding_provider = \"ftp://x\"", base).is_err());
        assert!(EngineConfig::from_toml("unknown_key = 1", base).is_err());
    }
}
