#![allow(dead_code)]

use std::path::PathBuf;

use perspectives::rank::{FeatureVector, LabeledFeatures, Variant};
use perspectives::refstore::Category;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CBO_QUOTE: &str = "The Congressional Budget Office said in August that if the cost-sharing subsidies were cut off, premiums would shoot up 20 percent next year, and federal budget deficits would increase by $194 billion in the coming decade.";

pub const CBO_OPTIONS: [&str; 3] = [
    "about $600 per person in the US",
    "about 2 times the value of the net worth of Bill Gates",
    "about 4% of the United States Federal budget in 2020",
];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Ridge with an unpenalized intercept, solved from the uncentered augmented
/// normal equations
///
/// ```text
/// [XᵀX + λI  Xᵀ1] [w]   [Xᵀy]
/// [1ᵀX       n  ] [b] = [1ᵀy]
/// ```
///
/// by Gaussian elimination with partial pivoting.
pub fn ridge_oracle(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = rows.len();
    let d = rows[0].len();
    let m = d + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for (row, &yi) in rows.iter().zip(y) {
        let aug: Vec<f64> = row.iter().copied().chain(std::iter::once(1.0)).collect();
        for i in 0..m {
            for j in 0..m {
                a[i][j] += aug[i] * aug[j];
            }
            a[i][m] += aug[i] * yi;
        }
    }
    for (i, r) in a.iter_mut().enumerate().take(d) {
        r[i] += lambda;
    }
    debug_assert_eq!(a[d][d], n as f64);
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                let pivot_row = a[col].clone();
                for (cell, p) in a[r].iter_mut().zip(&pivot_row).skip(col) {
                    *cell -= f * p;
                }
            }
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][m] - s) / a[i][i];
    }
    let b = x.pop().unwrap();
    (x, b)
}

/// A random ridge problem with `n` rows and `d` columns.
pub fn ridge_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let truth: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0) + 0.3).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| 1.5 + r.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(-0.5..0.5))
        .collect();
    (rows, y)
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn category_effect(c: Category) -> f64 {
    [0.35, -0.25, -0.3, 0.3, 0.1, 0.2, -0.1, -0.2, 0.05, -0.15, 0.25, -0.05][c.index()]
}

/// Synthetic helpfulness data: familiarity and category carry signal,
/// similarity a little, the multiplier none.
pub fn synthetic_rank_examples(n: usize, seed: u64) -> Vec<LabeledFeatures> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let similarity: f64 = rng.gen_range(0.0..1.0);
            let familiarity: f64 = rng.gen_range(4.0..12.0);
            let category = Category::ALL[rng.gen_range(0..12)];
            let log_multiplier: f64 = rng.gen_range(-9.0..9.0);
            let noise: f64 = rng.gen_range(-0.3..0.3);
            let label = (1.6 + 0.2 * similarity + 0.12 * (familiarity - 8.0) + category_effect(category) + noise)
                .clamp(1.0, 3.0);
            LabeledFeatures {
                features: FeatureVector {
                    similarity,
                    familiarity,
                    category,
                    log_multiplier,
                    log_multiplier_sq: log_multiplier * log_multiplier,
                    variant: Variant::V4,
                },
                label,
            }
        })
        .collect()
}
