//! Familiarity proxy: ridge regression from reference embeddings to
//! log(1 + monthly pageviews), applied to every object in the corpus.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::embed::{EmbeddingIndex, EmbeddingVector};
use crate::refstore::ReferenceCorpus;
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const MIN_MATCHED_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageviewRecord {
    pub wiki_title: String,
    pub month: String,
    pub monthly_views: u64,
}

/// Fitted ridge coefficients with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub train_r2: f64,
    pub holdout_r2: Option<f64>,
}

impl RidgeFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamiliarityModel {
    pub provider: String,
    pub dims: usize,
    pub lambda: f64,
    #[serde(with = "crate::floatstr")]
    pub bias: f64,
    #[serde(with = "crate::floatstr::vec")]
    pub weights: Vec<f64>,
    pub train_r2: f64,
    pub holdout_r2: Option<f64>,
    pub training_rows: usize,
}

impl FamiliarityModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: FamiliarityModel = serde_json::from_slice(&std::fs::read(path)?)?;
        if model.weights.len() != model.dims {
            return Err(Error::DimensionMismatch {
                expected: model.dims,
                found: model.weights.len(),
            });
        }
        Ok(model)
    }
}

fn r_squared(y: &[f64], pred: impl Iterator<Item = f64>) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(pred).map(|(v, p)| (v - p).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Solves the centered ridge system `(XcᵀXc + λI) w = Xcᵀ(y − ȳ)` and sets
/// `bias = ȳ − x̄ᵀw`.
pub fn solve_ridge(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    if rows.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            found: y.len(),
        });
    }
    if rows.len() < 2 {
        return Err(Error::InsufficientData("ridge needs at least two rows".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge penalty must be positive, got {lambda}")));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let n = rows.len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let x_mean = x.row_mean();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut xc = x;
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let mut gram = xc.tr_mul(&xc);
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("ridge system is not positive definite".into()))?;
    let w = chol.solve(&rhs);
    let bias = y_mean - x_mean.iter().zip(w.iter()).map(|(m, w)| m * w).sum::<f64>();
    Ok((w.iter().copied().collect(), bias))
}

/// Fits ridge on all rows and reports train R²; a seeded 80/20 split refit
/// supplies the held-out R² when there are at least five rows.
pub fn fit_ridge(rows: &[Vec<f64>], y: &[f64], lambda: f64, seed: u64) -> Result<RidgeFit> {
    let (weights, bias) = solve_ridge(rows, y, lambda)?;
    let mut fit = RidgeFit {
        weights,
        bias,
        train_r2: 0.0,
        holdout_r2: None,
    };
    fit.train_r2 = r_squared(y, rows.iter().map(|r| fit.predict(r)));

    if rows.len() >= 5 {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (rows.len() * 4 / 5).max(2);
        let (train, test) = order.split_at(n_train);
        let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let (w, b) = solve_ridge(&train_rows, &train_y, lambda)?;
        let split = RidgeFit {
            weights: w,
            bias: b,
            train_r2: 0.0,
            holdout_r2: None,
        };
        let test_y: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        fit.holdout_r2 = Some(r_squared(&test_y, test.iter().map(|&i| split.predict(&rows[i]))));
    }
    Ok(fit)
}

/// Ridge fit over embedding vectors.
pub fn fit_familiarity(
    provider: &str,
    x: &[EmbeddingVector],
    y: &[f64],
    lambda: f64,
    seed: u64,
) -> Result<FamiliarityModel> {
    let rows: Vec<Vec<f64>> = x.iter().map(|v| v.values.clone()).collect();
    let fit = fit_ridge(&rows, y, lambda, seed)?;
    Ok(FamiliarityModel {
        provider: provider.to_string(),
        dims: fit.weights.len(),
        lambda,
        bias: fit.bias,
        weights: fit.weights,
        train_r2: fit.train_r2,
        holdout_r2: fit.holdout_r2,
        training_rows: rows.len(),
    })
}

pub fn predict_familiarity(model: &FamiliarityModel, e: &EmbeddingVector) -> Result<f64> {
    if e.dims() != model.dims {
        return Err(Error::DimensionMismatch {
            expected: model.dims,
            found: e.dims(),
        });
    }
    Ok(model.bias + model.weights.iter().zip(&e.values).map(|(w, x)| w * x).sum::<f64>())
}

fn title_key(title: &str) -> String {
    title.trim().nfc().collect()
}

/// Mean monthly views per title, keyed by NFC-normalized title.
pub fn mean_views(pageviews: &[PageviewRecord]) -> HashMap<String, f64> {
    let mut acc: HashMap<String, (u64, u64)> = HashMap::new();
    for rec in pageviews {
        let e = acc.entry(title_key(&rec.wiki_title)).or_default();
        e.0 += rec.monthly_views;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, sum as f64 / n as f64))
        .collect()
}

/// Fits the familiarity model on objects with matching pageviews, then sets
/// every object's familiarity to the model prediction.
pub fn attach_familiarity(
    corpus: &ReferenceCorpus,
    index: &EmbeddingIndex,
    pageviews: &[PageviewRecord],
    lambda: f64,
    seed: u64,
) -> Result<(ReferenceCorpus, FamiliarityModel)> {
    if index.len() != corpus.len() {
        return Err(Error::InvalidArgument("embedding index does not match corpus".into()));
    }
    let views = mean_views(pageviews);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, obj) in corpus.objects().iter().enumerate() {
        let Some(title) = obj.wiki_title.as_deref() else { continue };
        if let Some(v) = views.get(&title_key(title)) {
            x.push(index.vector_at(i).clone());
            y.push(v.ln_1p());
        }
    }
    if x.len() < MIN_MATCHED_ROWS {
        return Err(Error::InsufficientData(format!(
            "{} objects matched pageview titles; at least {MIN_MATCHED_ROWS} are needed",
            x.len()
        )));
    }
    let model = fit_familiarity(index.provider(), &x, &y, lambda, seed)?;
    let mut i = 0;
    let mut failure = None;
    let updated = corpus.map_objects(|obj| {
        match predict_familiarity(&model, index.vector_at(i)) {
            Ok(f) => obj.familiarity = Some(f),
            Err(e) => failure = Some(e),
        }
        i += 1;
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((updated, model))
}

pub fn read_pageviews(path: &Path) -> Result<Vec<PageviewRecord>> {
    let records: Vec<PageviewRecord> = crate::tsv::read(path)?;
    for (i, rec) in records.iter().enumerate() {
        let ok = rec.month.len() == 7
            && rec.month.as_bytes()[4] == b'-'
            && rec.month[..4].parse::<u32>().is_ok()
            && rec.month[5..].parse::<u32>().is_ok_and(|m| (1..=12).contains(&m));
        if !ok {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("month `{}` is not YYYY-MM", rec.month),
            });
        }
    }
    Ok(records)
}
