//! Helpfulness model: a linear score over similarity, familiarity, property
//! category and multiplier terms, clipped to [1, 3] and trained with SGD.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, embed_text, EmbeddingIndex, EmbeddingProvider, EmbeddingVector};
use crate::refstore::{Category, ReferenceCorpus, ReferenceObject};
use crate::{Error, Result};

pub const CLIP_LO: f64 = 1.0;
pub const CLIP_HI: f64 = 3.0;
pub const DEFAULT_PASSES: usize = 50;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const MIN_COMPARE_EXAMPLES: usize = 25;

/// Which feature groups a model scores with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// similarity
    V1,
    /// similarity, familiarity, category
    V2,
    /// V2 plus log multiplier
    V3,
    /// V3 plus squared log multiplier
    V4,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::V1, Variant::V2, Variant::V3, Variant::V4];

    /// Active feature names, in design-vector order.
    pub fn feature_names(self) -> Vec<String> {
        let mut names = vec!["similarity".to_string()];
        if self >= Variant::V2 {
            names.push("familiarity".into());
            names.extend(Category::ALL.iter().map(|c| format!("category:{}", c.name())));
        }
        if self >= Variant::V3 {
            names.push("log_multiplier".into());
        }
        if self >= Variant::V4 {
            names.push("log_multiplier_sq".into());
        }
        names
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "V1" | "1" => Ok(Variant::V1),
            "V2" | "2" => Ok(Variant::V2),
            "V3" | "3" => Ok(Variant::V3),
            "V4" | "4" => Ok(Variant::V4),
            other => Err(Error::InvalidArgument(format!("unknown model variant `{other}`"))),
        }
    }
}

/// Features for one (quote, reference) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub similarity: f64,
    pub familiarity: f64,
    pub category: Category,
    pub log_multiplier: f64,
    pub log_multiplier_sq: f64,
    pub variant: Variant,
}

impl FeatureVector {
    pub fn category_onehot(&self) -> [f64; 12] {
        let mut v = [0.0; 12];
        v[self.category.index()] = 1.0;
        v
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        FeatureVector {
            variant,
            ..self.clone()
        }
    }
}

/// Builds the feature vector for a quote embedding against a reference.
pub fn featurize(
    quote: &EmbeddingVector,
    reference: &ReferenceObject,
    reference_embedding: Option<&EmbeddingVector>,
    focal: Decimal,
    variant: Variant,
) -> Result<FeatureVector> {
    if focal <= Decimal::ZERO {
        return Err(Error::NonPositive(focal.to_string()));
    }
    if reference.value <= Decimal::ZERO {
        return Err(Error::NonPositive(reference.value.to_string()));
    }
    let emb = reference_embedding.ok_or_else(|| Error::Missing {
        what: "embedding",
        id: reference.id.clone(),
    })?;
    let familiarity = reference.familiarity.ok_or_else(|| Error::Missing {
        what: "familiarity",
        id: reference.id.clone(),
    })?;
    let log_multiplier = log_ratio(focal, reference.value);
    Ok(FeatureVector {
        similarity: cosine_similarity(quote, emb)?,
        familiarity,
        category: reference.category,
        log_multiplier,
        log_multiplier_sq: log_multiplier * log_multiplier,
        variant,
    })
}

/// `ln(a / b)` computed as a difference of logs so extreme ratios stay finite.
pub fn log_ratio(a: Decimal, b: Decimal) -> f64 {
    let a = a.to_f64().unwrap_or(f64::NAN);
    let b = b.to_f64().unwrap_or(f64::NAN);
    a.ln() - b.ln()
}

/// Mean and standard deviation used to z-score a continuous feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: 0.0, std: 1.0 };

    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Standardizer {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub similarity: Standardizer,
    pub familiarity: Standardizer,
    pub log_multiplier: Standardizer,
    pub log_multiplier_sq: Standardizer,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization {
        similarity: Standardizer::IDENTITY,
        familiarity: Standardizer::IDENTITY,
        log_multiplier: Standardizer::IDENTITY,
        log_multiplier_sq: Standardizer::IDENTITY,
    };

    fn fit(features: &[&FeatureVector]) -> Self {
        let it = || features.iter();
        Standardization {
            similarity: Standardizer::fit(it().map(|f| f.similarity)),
            familiarity: Standardizer::fit(it().map(|f| f.familiarity)),
            log_multiplier: Standardizer::fit(it().map(|f| f.log_multiplier)),
            log_multiplier_sq: Standardizer::fit(it().map(|f| f.log_multiplier_sq)),
        }
    }
}

/// Design vector for `variant` after standardization.
pub fn design(features: &FeatureVector, variant: Variant, stats: &Standardization) -> Vec<f64> {
    let mut x = vec![stats.similarity.apply(features.similarity)];
    if variant >= Variant::V2 {
        x.push(stats.familiarity.apply(features.familiarity));
        x.extend(features.category_onehot());
    }
    if variant >= Variant::V3 {
        x.push(stats.log_multiplier.apply(features.log_multiplier));
    }
    if variant >= Variant::V4 {
        x.push(stats.log_multiplier_sq.apply(features.log_multiplier_sq));
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub passes: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            passes: DEFAULT_PASSES,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelpfulnessModel {
    pub variant: Variant,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub clip: (f64, f64),
    pub standardization: Standardization,
    pub train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    variant: Variant,
    passes: usize,
    learning_rate: f64,
    seed: u64,
    clip_lo: f64,
    clip_hi: f64,
    standardization: Standardization,
    #[serde(with = "crate::floatstr")]
    bias: f64,
    #[serde(with = "crate::floatstr::map")]
    weights: BTreeMap<String, f64>,
}

impl HelpfulnessModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn weight(&self, name: &str) -> Option<f64> {
        self.variant
            .feature_names()
            .iter()
            .position(|n| n == name)
            .map(|i| self.weights[i])
    }

    pub fn to_json(&self) -> Result<String> {
        let names = self.variant.feature_names();
        let file = ModelFile {
            variant: self.variant,
            passes: self.train.passes,
            learning_rate: self.train.learning_rate,
            seed: self.train.seed,
            clip_lo: self.clip.0,
            clip_hi: self.clip.1,
            standardization: self.standardization,
            bias: self.bias,
            weights: names.into_iter().zip(self.weights.iter().copied()).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let names = file.variant.feature_names();
        let mut weights = Vec::with_capacity(names.len());
        for name in &names {
            // Categories absent from the file carry no weight.
            match file.weights.get(name) {
                Some(w) => weights.push(*w),
                None if name.starts_with("category:") => weights.push(0.0),
                None => {
                    return Err(Error::Missing {
                        what: "model weight",
                        id: name.clone(),
                    })
                }
            }
        }
        if let Some(extra) = file.weights.keys().find(|k| !names.contains(k)) {
            return Err(Error::InvalidArgument(format!(
                "weight `{extra}` is not a {} feature",
                file.variant
            )));
        }
        if file.clip_lo.is_nan() || file.clip_hi.is_nan() || file.clip_lo >= file.clip_hi {
            return Err(Error::InvalidArgument("clip range is empty".into()));
        }
        Ok(HelpfulnessModel {
            variant: file.variant,
            weights,
            bias: file.bias,
            clip: (file.clip_lo, file.clip_hi),
            standardization: file.standardization,
            train: TrainConfig {
                passes: file.passes,
                learning_rate: file.learning_rate,
                seed: file.seed,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Clipped prediction for a feature vector of the model's variant.
pub fn predict(model: &HelpfulnessModel, features: &FeatureVector) -> Result<f64> {
    if features.variant != model.variant {
        return Err(Error::VariantMismatch {
            model: model.variant.to_string(),
            features: features.variant.to_string(),
        });
    }
    let x = design(features, model.variant, &model.standardization);
    Ok(model.raw_score(&x).clamp(model.clip.0, model.clip.1))
}

/// Gradient of `(clip(raw) − y)²` with respect to the raw score: zero outside
/// the clip range, where the loss is flat.
pub fn clipped_loss_grad(raw: f64, label: f64, clip: (f64, f64)) -> f64 {
    if raw < clip.0 || raw > clip.1 {
        0.0
    } else {
        2.0 * (raw - label)
    }
}

pub fn clipped_loss(raw: f64, label: f64, clip: (f64, f64)) -> f64 {
    (raw.clamp(clip.0, clip.1) - label).powi(2)
}

/// SGD step direction on the raw score. Inside the clip range it is the loss
/// gradient. Outside it uses the clipped residual when that pulls the score
/// back toward the range and is zero when it would push further out.
pub fn sgd_direction(raw: f64, label: f64, clip: (f64, f64)) -> f64 {
    if raw < clip.0 {
        (2.0 * (clip.0 - label)).min(0.0)
    } else if raw > clip.1 {
        (2.0 * (clip.1 - label)).max(0.0)
    } else {
        2.0 * (raw - label)
    }
}

/// Gradient of the clipped squared loss of one example with respect to
/// `(weights..., bias)`.
pub fn example_gradient(weights: &[f64], bias: f64, x: &[f64], label: f64, clip: (f64, f64)) -> Vec<f64> {
    let raw = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    let g = clipped_loss_grad(raw, label, clip);
    x.iter().map(|v| g * v).chain(std::iter::once(g)).collect()
}

/// A labelled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: FeatureVector,
    pub label: f64,
}

fn check_labels(examples: &[LabeledFeatures]) -> Result<()> {
    match examples
        .iter()
        .find(|e| !(CLIP_LO..=CLIP_HI).contains(&e.label))
    {
        Some(bad) => Err(Error::InvalidLabel(bad.label)),
        None => Ok(()),
    }
}

/// Trains a clipped linear model. Weights start at zero and the bias at the
/// mean label; the step size is `learning_rate / sqrt(t)` with `t` counting
/// updates; example order is reshuffled each pass from `config.seed`.
pub fn train(
    examples: &[LabeledFeatures],
    variant: Variant,
    config: TrainConfig,
) -> Result<HelpfulnessModel> {
    if examples.is_empty() {
        return Err(Error::InsufficientData("no training examples".into()));
    }
    if config.passes == 0 {
        return Err(Error::InvalidArgument("passes must be positive".into()));
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    check_labels(examples)?;

    let refs: Vec<&FeatureVector> = examples.iter().map(|e| &e.features).collect();
    let stats = Standardization::fit(&refs);
    let rows: Vec<Vec<f64>> = refs.iter().map(|f| design(f, variant, &stats)).collect();
    let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();

    let dims = variant.feature_names().len();
    let mut weights = vec![0.0; dims];
    let mut bias = labels.iter().sum::<f64>() / labels.len() as f64;
    let clip = (CLIP_LO, CLIP_HI);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut t = 0u64;
    for _ in 0..config.passes {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let x = &rows[i];
            let raw = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let g = sgd_direction(raw, labels[i], clip);
            if g == 0.0 {
                continue;
            }
            let step = config.learning_rate / (t as f64).sqrt();
            for (w, v) in weights.iter_mut().zip(x) {
                *w -= step * g * v;
            }
            bias -= step * g;
        }
    }

    Ok(HelpfulnessModel {
        variant,
        weights,
        bias,
        clip,
        standardization: stats,
        train: config,
    })
}

/// `1 − SS_res / SS_tot` over clipped predictions.
pub fn evaluate_r2(model: &HelpfulnessModel, test: &[LabeledFeatures]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let mean = test.iter().map(|e| e.label).sum::<f64>() / test.len() as f64;
    let ss_tot: f64 = test.iter().map(|e| (e.label - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Degenerate("test labels have zero variance".into()));
    }
    let mut ss_res = 0.0;
    for e in test {
        let p = predict(model, &e.features.with_variant(model.variant))?;
        ss_res += (e.label - p).powi(2);
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantScore {
    pub variant: Variant,
    pub holdout_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub split_seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub rows: Vec<VariantScore>,
}

impl fmt::Display for VariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "variant\tholdout_r2\t(train={}, test={}, split_seed={})",
            self.train_size, self.test_size, self.split_seed
        )?;
        for row in &self.rows {
            writeln!(f, "{}\t{:.4}", row.variant, row.holdout_r2)?;
        }
        Ok(())
    }
}

/// Trains all four variants on the same seeded 80/20 split and reports
/// held-out R² for each.
pub fn compare_variants(
    examples: &[LabeledFeatures],
    split_seed: u64,
    config: TrainConfig,
) -> Result<VariantReport> {
    if examples.len() < MIN_COMPARE_EXAMPLES {
        return Err(Error::InsufficientData(format!(
            "variant comparison needs at least {MIN_COMPARE_EXAMPLES} examples, got {}",
            examples.len()
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_train = examples.len() * 4 / 5;
    let train_set: Vec<LabeledFeatures> = order[..n_train].iter().map(|&i| examples[i].clone()).collect();
    let test_set: Vec<LabeledFeatures> = order[n_train..].iter().map(|&i| examples[i].clone()).collect();

    let mut rows = Vec::with_capacity(4);
    for variant in Variant::ALL {
        let model = train(&train_set, variant, config)?;
        rows.push(VariantScore {
            variant,
            holdout_r2: evaluate_r2(&model, &test_set)?,
        });
    }
    Ok(VariantReport {
        split_seed,
        train_size: train_set.len(),
        test_size: test_set.len(),
        rows,
    })
}

/// One row of a training-data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub quote_id: String,
    pub quote_text: String,
    #[serde(with = "rust_decimal::serde::str")]
    pub focal_value: Decimal,
    pub reference_id: String,
    pub label: f64,
}

pub fn read_training_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    let rows: Vec<TrainingExample> = crate::tsv::read(path)?;
    for (i, row) in rows.iter().enumerate() {
        if !(CLIP_LO..=CLIP_HI).contains(&row.label) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: Error::InvalidLabel(row.label).to_string(),
            });
        }
    }
    Ok(rows)
}

/// Featurizes training rows against `corpus`, embedding each distinct quote
/// once.
pub fn labeled_examples(
    rows: &[TrainingExample],
    corpus: &ReferenceCorpus,
    index: &EmbeddingIndex,
    provider: &dyn EmbeddingProvider,
    variant: Variant,
) -> Result<Vec<LabeledFeatures>> {
    if provider.name() != index.provider() {
        return Err(Error::ProviderMismatch {
            expected: index.provider().to_string(),
            found: provider.name().to_string(),
        });
    }
    let mut quotes: BTreeMap<&str, EmbeddingVector> = BTreeMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let reference = corpus.get(&row.reference_id).ok_or_else(|| Error::Missing {
            what: "reference object",
            id: row.reference_id.clone(),
        })?;
        if !quotes.contains_key(row.quote_text.as_str()) {
            quotes.insert(&row.quote_text, embed_text(provider, &row.quote_text)?);
        }
        let quote = &quotes[row.quote_text.as_str()];
        let features = featurize(quote, reference, index.vector(&reference.id), row.focal_value, variant)?;
        out.push(LabeledFeatures {
            features,
            label: row.label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fv(similarity: f64, familiarity: f64, category: Category, lm: f64, variant: Variant) -> FeatureVector {
        FeatureVector {
            similarity,
            familiarity,
            category,
            log_multiplier: lm,
            log_multiplier_sq: lm * lm,
            variant,
        }
    }

    fn model(variant: Variant, bias: f64, weights: Vec<f64>) -> HelpfulnessModel {
        HelpfulnessModel {
            variant,
            weights,
            bias,
            clip: (CLIP_LO, CLIP_HI),
            standardization: Standardization::IDENTITY,
            train: TrainConfig::default(),
        }
    }

    #[test]
    fn feature_counts() {
        assert_eq!(Variant::V1.feature_names().len(), 1);
        assert_eq!(Variant::V2.feature_names().len(), 14);
        assert_eq!(Variant::V3.feature_names().len(), 15);
        assert_eq!(Variant::V4.feature_names().len(), 16);
    }

    #[test]
    fn featurize_multiplier_terms() {
        let quote = EmbeddingVector::new(vec![1.0, 0.0]).normalize().unwrap();
        let emb = EmbeddingVector::new(vec![1.0, 1.0]).normalize().unwrap();
        let mut r = ReferenceObject::new(
            crate::refstore::Source::Dictionary,
            "x",
            Category::Cost,
            Decimal::from(700_000_000_000u64),
        );
        r.familiarity = Some(2.0);
        let same = featurize(&quote, &r, Some(&emb), r.value, Variant::V4).unwrap();
        assert_eq!(same.log_multiplier, 0.0);
        assert_eq!(same.log_multiplier_sq, 0.0);
        let f = featurize(&quote, &r, Some(&emb), Decimal::from(100_000_000u64), Variant::V4).unwrap();
        assert!((f.log_multiplier - (1e8f64 / 7e11).ln()).abs() < 1e-12);
        assert!((f.log_multiplier + 8.854).abs() < 1e-3);
        assert_eq!(f.category_onehot().iter().sum::<f64>(), 1.0);

        assert!(matches!(
            featurize(&quote, &r, None, Decimal::ONE, Variant::V2),
            Err(Error::Missing { what: "embedding", .. })
        ));
        r.familiarity = None;
        assert!(matches!(
            featurize(&quote, &r, Some(&emb), Decimal::ONE, Variant::V2),
            Err(Error::Missing { what: "familiarity", .. })
        ));
    }

    #[test]
    fn predict_clips_and_checks_variant() {
        let m = model(Variant::V1, 2.0, vec![0.0]);
        assert_eq!(predict(&m, &fv(0.5, 0.0, Category::Cost, 0.0, Variant::V1)).unwrap(), 2.0);
        let hot = model(Variant::V1, 2.0, vec![5.4]);
        assert_eq!(predict(&hot, &fv(0.5, 0.0, Category::Cost, 0.0, Variant::V1)).unwrap(), 3.0);
        assert!(matches!(
            predict(&m, &fv(0.5, 0.0, Category::Cost, 0.0, Variant::V2)),
            Err(Error::VariantMismatch { .. })
        ));
    }

    #[test]
    fn raw_score_matches_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let weights: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = model(Variant::V4, 0.3, weights.clone());
        for _ in 0..20 {
            let cat = Category::ALL[rng.gen_range(0..12)];
            let f = fv(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..10.0), cat, rng.gen_range(-5.0..5.0), Variant::V4);
            let mut oracle = 0.3 + weights[0] * f.similarity + weights[1] * f.familiarity;
            oracle += weights[2 + cat.index()];
            oracle += weights[14] * f.log_multiplier + weights[15] * f.log_multiplier_sq;
            let x = design(&f, Variant::V4, &Standardization::IDENTITY);
            assert!((m.raw_score(&x) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn r2_extremes() {
        let m = model(Variant::V1, 0.0, vec![1.0]);
        let perfect: Vec<_> = [1.5, 2.0, 2.5]
            .iter()
            .map(|&v| LabeledFeatures {
                features: fv(v, 0.0, Category::Cost, 0.0, Variant::V1),
                label: v,
            })
            .collect();
        assert_eq!(evaluate_r2(&m, &perfect).unwrap(), 1.0);
        let mean_model = model(Variant::V1, 2.0, vec![0.0]);
        assert!(evaluate_r2(&mean_model, &perfect).unwrap().abs() < 1e-12);

        let flat: Vec<_> = perfect
            .iter()
            .map(|e| LabeledFeatures { label: 2.0, ..e.clone() })
            .collect();
        assert!(matches!(evaluate_r2(&m, &flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn training_rejects_bad_input() {
        let e = LabeledFeatures {
            features: fv(0.1, 0.0, Category::Cost, 0.0, Variant::V1),
            label: 3.5,
        };
        assert!(matches!(train(std::slice::from_ref(&e), Variant::V1, TrainConfig::default()), Err(Error::InvalidLabel(_))));
        let ok = LabeledFeatures { label: 2.0, ..e };
        let zero = TrainConfig {
            passes: 0,
            ..TrainConfig::default()
        };
        assert!(train(&[ok], Variant::V1, zero).is_err());
        assert!(train(&[], Variant::V1, TrainConfig::default()).is_err());
    }

    #[test]
    fn positive_similarity_signal_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let examples: Vec<_> = (0..400)
            .map(|_| {
                let s: f64 = rng.gen_range(0.0..1.0);
                let label = (1.0 + 0.8 * s * 2.0 + rng.gen_range(-0.1..0.1)).clamp(1.0, 3.0);
                LabeledFeatures {
                    features: fv(s, 0.0, Category::Cost, 0.0, Variant::V1),
                    label,
                }
            })
            .collect();
        let (train_set, test_set) = examples.split_at(320);
        let m = train(train_set, Variant::V1, TrainConfig::default()).unwrap();
        assert!(m.weights[0] > 0.0);
        assert!(evaluate_r2(&m, test_set).unwrap() > 0.5);

        // Closed-form least squares on interior points agrees on the slope.
        let (sx, sy): (Vec<f64>, Vec<f64>) = train_set
            .iter()
            .filter(|e| e.label > 1.0 && e.label < 3.0)
            .map(|e| (e.features.similarity, e.label))
            .unzip();
        let mx = sx.iter().sum::<f64>() / sx.len() as f64;
        let my = sy.iter().sum::<f64>() / sy.len() as f64;
        let slope = sx.iter().zip(&sy).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / sx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        let learned = m.weights[0] / m.standardization.similarity.std;
        assert!((learned - slope).abs() / slope < 0.1, "{learned} vs {slope}");
    }

    #[test]
    fn model_file_round_trip() {
        let m = model(Variant::V3, 1.7, (0..15).map(|i| i as f64 * 0.1).collect());
        let back = HelpfulnessModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn direction_rules() {
        let clip = (1.0, 3.0);
        assert_eq!(sgd_direction(0.5, 2.0, clip), -2.0);
        assert_eq!(sgd_direction(3.5, 2.0, clip), 2.0);
        assert_eq!(sgd_direction(0.5, 1.0, clip), 0.0);
        assert_eq!(sgd_direction(2.5, 2.0, clip), 1.0);
        assert_eq!(clipped_loss_grad(0.5, 2.0, clip), 0.0);
    }
}
