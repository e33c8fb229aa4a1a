//! Builds the configured policies from files on disk and runs them over
//! free text.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, ProviderSetting};
use crate::embed::{EmbeddingIndex, EmbeddingProvider, HashedFeatureEmbedder, RemoteEmbedder};
use crate::familiarity::{predict_familiarity, FamiliarityModel};
use crate::measure::{extract_measurements, TextSpan};
use crate::policies::{suggest_all, ContextualPolicy, Engines, PolicyKind, SuggestionBundle};
use crate::rank::HelpfulnessModel;
use crate::refstore::{load_corpus, ReferenceCorpus};
use crate::{Error, Result};

/// Why a policy produced no option for a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningCode {
    ProviderUnavailable,
    ProviderMalformed,
    PolicyError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub policy: PolicyKind,
    pub span: TextSpan,
    pub code: WarningCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectivesResponse {
    pub measurements: Vec<SuggestionBundle>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

impl PerspectivesResponse {
    pub fn provider_unavailable(&self) -> bool {
        self.warnings.iter().any(|w| w.code == WarningCode::ProviderUnavailable)
    }
}

/// A ready-to-query set of policies plus the reference corpus they draw on.
#[derive(Debug, Clone)]
pub struct Engine {
    pub engines: Engines,
    pub references: Option<Arc<ReferenceCorpus>>,
    pub max_text_bytes: usize,
}

pub fn make_provider(setting: &ProviderSetting, dims: usize) -> Arc<dyn EmbeddingProvider> {
    match setting {
        ProviderSetting::Builtin => Arc::new(HashedFeatureEmbedder::new(dims)),
        ProviderSetting::Remote(url) => Arc::new(RemoteEmbedder::new(url.clone(), dims)),
    }
}

fn required<'a>(path: &'a Option<std::path::PathBuf>, key: &str, policy: PolicyKind) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("policy {policy} is enabled but `{key}` is not set")))
}

/// Fills in missing familiarity values from `model`.
fn fill_familiarity(corpus: &ReferenceCorpus, index: &EmbeddingIndex, model: &FamiliarityModel) -> Result<ReferenceCorpus> {
    if model.provider != index.provider() {
        return Err(Error::ProviderMismatch {
            expected: model.provider.clone(),
            found: index.provider().to_string(),
        });
    }
    let mut i = 0;
    let mut failure = None;
    let filled = corpus.map_objects(|obj| {
        if obj.familiarity.is_none() {
            match predict_familiarity(model, index.vector_at(i)) {
                Ok(f) => obj.familiarity = Some(f),
                Err(e) => failure = Some(e),
            }
        }
        i += 1;
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(filled),
    }
}

impl Engine {
    pub fn from_config(cfg: &EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let mut engines = Engines {
            population: cfg.population,
            per_capita_suffix: cfg.per_capita_suffix.clone(),
            crowd: None,
            contextual: None,
            enabled: cfg.policies.clone(),
        };
        if cfg.policies.contains(&PolicyKind::Crowdsourced) {
            let path = required(&cfg.crowd_corpus, "crowd_corpus", PolicyKind::Crowdsourced)?;
            engines.crowd = Some(Arc::new(load_corpus(path)?));
        }
        let mut references = None;
        if cfg.policies.contains(&PolicyKind::Contextual) {
            let corpus_path = required(&cfg.corpus, "corpus", PolicyKind::Contextual)?;
            let model_path = required(&cfg.model, "model", PolicyKind::Contextual)?;
            let model = HelpfulnessModel::load(model_path)?;
            let corpus = load_corpus(corpus_path)?;
            if corpus.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            let provider = make_provider(&cfg.embedding_provider, cfg.embedding_dims);
            let index = match &cfg.embeddings {
                Some(cache) => {
                    let index = EmbeddingIndex::load_or_build(cache, provider.as_ref(), &corpus)?;
                    if !cache.exists() {
                        index.save(cache)?;
                    }
                    index
                }
                None => EmbeddingIndex::build(provider.as_ref(), &corpus)?,
            };
            let corpus = match &cfg.familiarity_model {
                Some(path) => fill_familiarity(&corpus, &index, &FamiliarityModel::load(path)?)?,
                None => corpus,
            };
            if let Some(obj) = corpus.objects().iter().find(|o| o.familiarity.is_none()) {
                return Err(Error::Missing {
                    what: "familiarity",
                    id: obj.id.clone(),
                });
            }
            let corpus = Arc::new(corpus);
            references = Some(corpus.clone());
            engines.contextual = Some(ContextualPolicy {
                provider,
                corpus,
                index: Arc::new(index),
                model: Arc::new(model),
                prefilter_k: cfg.prefilter_k,
            });
        } else if let Some(path) = &cfg.corpus {
            references = Some(Arc::new(load_corpus(path)?));
        }
        Ok(Engine {
            engines,
            references,
            max_text_bytes: cfg.max_body_bytes,
        })
    }

    pub fn open(config_path: &Path) -> Result<Self> {
        Self::from_config(&EngineConfig::load(config_path)?)
    }

    /// Finds every dollar amount in `text` and suggests perspectives for it,
    /// using the surrounding sentence as context.
    pub fn perspectives(&self, text: &str) -> Result<PerspectivesResponse> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        if text.len() > self.max_text_bytes {
            return Err(Error::InvalidArgument(format!(
                "text is {} bytes; the limit is {}",
                text.len(),
                self.max_text_bytes
            )));
        }
        let mut measurements = Vec::new();
        let mut warnings = Vec::new();
        for m in extract_measurements(text) {
            if m.value <= crate::Decimal::ZERO {
                continue;
            }
            let sentence = sentence_around(text, m.span);
            let (bundle, failures) = suggest_all(sentence, &m, &self.engines)?;
            for f in failures {
                let code = match f.error {
                    Error::ProviderUnavailable(_) => WarningCode::ProviderUnavailable,
                    Error::ProviderMalformed(_) => WarningCode::ProviderMalformed,
                    _ => WarningCode::PolicyError,
                };
                warnings.push(Warning {
                    policy: f.policy,
                    span: m.span,
                    code,
                    message: f.error.to_string(),
                });
            }
            measurements.push(bundle);
        }
        Ok(PerspectivesResponse { measurements, warnings })
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\n')
}

/// The sentence of `text` containing `span`, trimmed. Sentences end at
/// `.`, `!` or `?` followed by whitespace, or at a newline.
pub fn sentence_around(text: &str, span: TextSpan) -> &str {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let boundary_after = |i: usize| {
        let c = chars[i].1;
        c == '\n' || (is_terminal(c) && chars.get(i + 1).is_none_or(|(_, n)| n.is_whitespace()))
    };
    let start_char = span.start.min(chars.len());
    let end_char = span.end.min(chars.len());
    let mut start = 0;
    for i in (0..start_char).rev() {
        if boundary_after(i) {
            start = i + 1;
            break;
        }
    }
    let mut end = chars.len();
    for (i, _) in chars.iter().enumerate().skip(end_char) {
        if boundary_after(i) {
            end = i + 1;
            break;
        }
    }
    let byte = |c: usize| chars.get(c).map_or(text.len(), |(b, _)| *b);
    text[byte(start)..byte(end)].trim()
}
