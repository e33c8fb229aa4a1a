//! Perspective generation under the three policies: per-capita rescaling,
//! nearest crowd-verified anchor, and context-ranked reference comparison.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

use crate::embed::{embed_text, top_k_similar, EmbeddingIndex, EmbeddingProvider};
use crate::measure::{magnitude_of, Measurement};
use crate::rank::{featurize, log_ratio, predict, HelpfulnessModel};
use crate::refstore::{ReferenceCorpus, ReferenceObject};
use crate::{Error, Result};

pub const US_POPULATION: u64 = 325_000_000;
pub const DEFAULT_PER_CAPITA_SUFFIX: &str = "per person in the US";
pub const DEFAULT_PREFILTER_K: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    RuleBased,
    Crowdsourced,
    Contextual,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::RuleBased, PolicyKind::Crowdsourced, PolicyKind::Contextual];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::RuleBased => "rule_based",
            PolicyKind::Crowdsourced => "crowdsourced",
            PolicyKind::Contextual => "contextual",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perspective {
    pub policy: PolicyKind,
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_capita_amount: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionBundle {
    #[serde(flatten)]
    pub measurement: Measurement,
    pub options: Vec<Perspective>,
}

/// Rounds `x` to `k` significant digits, half away from zero, in exact
/// decimal arithmetic.
pub fn round_sig(x: Decimal, k: u32) -> Result<Decimal> {
    if k == 0 {
        return Err(Error::InvalidArgument("significant digits must be at least 1".into()));
    }
    let magnitude = magnitude_of(x)?;
    let places = k as i64 - 1 - magnitude as i64;
    let rounded = if places >= 0 {
        x.round_dp_with_strategy(places.min(28) as u32, RoundingStrategy::MidpointAwayFromZero)
    } else {
        let factor = 10i128
            .checked_pow((-places) as u32)
            .and_then(|f| Decimal::try_from_i128_with_scale(f, 0).ok())
            .ok_or_else(|| Error::InvalidArgument(format!("{x} is too large to round")))?;
        let q = (x / factor).round_dp_with_strategy(0, RoundingStrategy::MidpointAwayFromZero);
        q.checked_mul(factor)
            .ok_or_else(|| Error::InvalidArgument(format!("{x} is too large to round")))?
    };
    Ok(rounded.normalize())
}

fn group_thousands(digits: &str) -> String {
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Plain decimal with comma grouping in the integer part.
pub fn format_grouped(x: Decimal) -> String {
    let s = x.normalize().to_string();
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s.as_str(), None),
    };
    let (sign, int) = int.strip_prefix('-').map_or(("", int), |rest| ("-", rest));
    match frac {
        Some(f) => format!("{sign}{}.{f}", group_thousands(int)),
        None => format!("{sign}{}", group_thousands(int)),
    }
}

/// Dollar display for per-capita amounts: whole dollars (grouped) from $10 up,
/// otherwise at least two decimals ("$1.00", "$0.92", "$0.0031").
pub fn format_dollars(amount: Decimal) -> String {
    let amount = amount.normalize();
    if amount >= Decimal::TEN {
        return format!("${}", format_grouped(amount.round_dp_with_strategy(0, RoundingStrategy::MidpointAwayFromZero)));
    }
    let places = amount.scale().max(2);
    let mut padded = amount;
    padded.rescale(places);
    format!("${}", format_grouped_keep_scale(padded))
}

fn format_grouped_keep_scale(x: Decimal) -> String {
    let s = x.to_string();
    match s.split_once('.') {
        Some((i, f)) => format!("{}.{f}", group_thousands(i)),
        None => group_thousands(&s),
    }
}

/// Per-capita perspective: `value / population` rounded to two significant
/// digits.
pub fn per_capita(value: Decimal, population: u64, suffix: &str) -> Result<Perspective> {
    if value <= Decimal::ZERO {
        return Err(Error::NonPositive(value.to_string()));
    }
    if population == 0 {
        return Err(Error::InvalidArgument("population must be positive".into()));
    }
    let share = value
        .checked_div(Decimal::from(population))
        .ok_or_else(|| Error::InvalidArgument(format!("cannot divide {value} by {population}")))?;
    let amount = round_sig(share, 2)?;
    Ok(Perspective {
        policy: PolicyKind::RuleBased,
        phrase: format!("about {} {suffix}", format_dollars(amount)),
        reference: None,
        multiplier: None,
        per_capita_amount: Some(amount),
        score: None,
    })
}

/// Which phrase template a multiplier selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierForm {
    SameSize,
    Times,
    Percent,
}

/// Rounded multiplier and phrase for expressing `focal` against a reference.
pub fn format_multiplier(focal: Decimal, reference_value: Decimal, reference_phrase: &str) -> Result<(Decimal, String, MultiplierForm)> {
    if reference_value <= Decimal::ZERO {
        return Err(Error::NonPositive(reference_value.to_string()));
    }
    if focal <= Decimal::ZERO {
        return Err(Error::NonPositive(focal.to_string()));
    }
    let ratio = focal
        .checked_div(reference_value)
        .ok_or_else(|| Error::InvalidArgument(format!("cannot divide {focal} by {reference_value}")))?;
    if ratio.is_zero() {
        return Err(Error::InvalidArgument(format!("{focal} is negligible against {reference_value}")));
    }
    let m = round_sig(ratio, 1)?;
    let out = if m == Decimal::ONE {
        (m, format!("about the same size as {reference_phrase}"), MultiplierForm::SameSize)
    } else if m > Decimal::ONE {
        (m, format!("about {} times {reference_phrase}", format_grouped(m)), MultiplierForm::Times)
    } else {
        let pct = round_sig(ratio * Decimal::ONE_HUNDRED, 1)?;
        (m, format!("about {}% of {reference_phrase}", format_grouped(pct)), MultiplierForm::Percent)
    };
    Ok(out)
}

fn reference_perspective(policy: PolicyKind, focal: Decimal, obj: &ReferenceObject, score: Option<f64>) -> Result<Perspective> {
    let (m, phrase, _) = format_multiplier(focal, obj.value, &obj.phrase)?;
    Ok(Perspective {
        policy,
        phrase,
        reference: Some(obj.id.clone()),
        multiplier: Some(m),
        per_capita_amount: None,
        score,
    })
}

/// Relative tolerance when comparing log distances for ties.
const LOG_TIE_EPS: f64 = 1e-9;

/// Crowd object nearest to `value` in log space; ties go to the higher total
/// rating, then the smaller id.
pub fn crowdsourced_lookup(value: Decimal, crowd: &ReferenceCorpus) -> Result<Option<Perspective>> {
    if value <= Decimal::ZERO {
        return Err(Error::NonPositive(value.to_string()));
    }
    let mut best: Option<(&ReferenceObject, f64)> = None;
    for obj in crowd.objects() {
        let d = log_ratio(value, obj.value).abs();
        let better = match best {
            None => true,
            Some((b, bd)) => {
                if (d - bd).abs() <= LOG_TIE_EPS * (1.0 + bd) {
                    let (r, br) = (obj.total_rating.unwrap_or(0.0), b.total_rating.unwrap_or(0.0));
                    r > br || (r == br && obj.id < b.id)
                } else {
                    d < bd
                }
            }
        };
        if better {
            best = Some((obj, d));
        }
    }
    best.map(|(obj, _)| reference_perspective(PolicyKind::Crowdsourced, value, obj, None))
        .transpose()
}

/// Everything the contextual policy needs: a provider, a corpus with
/// familiarity attached, its embeddings and a trained model.
#[derive(Clone)]
pub struct ContextualPolicy {
    pub provider: Arc<dyn EmbeddingProvider>,
    pub corpus: Arc<ReferenceCorpus>,
    pub index: Arc<EmbeddingIndex>,
    pub model: Arc<HelpfulnessModel>,
    /// `None` scores the whole corpus.
    pub prefilter_k: Option<usize>,
}

impl fmt::Debug for ContextualPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContextualPolicy")
            .field("provider", &self.provider.name())
            .field("corpus", &self.corpus.len())
            .field("variant", &self.model.variant)
            .field("prefilter_k", &self.prefilter_k)
            .finish()
    }
}

/// Scores candidate references for `sentence` and returns the `top_n` best,
/// by score, then similarity, then id.
pub fn contextual_rank(sentence: &str, focal: Decimal, ctx: &ContextualPolicy, top_n: usize) -> Result<Vec<Perspective>> {
    if ctx.corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if focal <= Decimal::ZERO {
        return Err(Error::NonPositive(focal.to_string()));
    }
    let query = embed_text(ctx.provider.as_ref(), sentence)?;
    let k = ctx.prefilter_k.unwrap_or(ctx.corpus.len());
    let candidates = top_k_similar(&query, ctx.provider.name(), &ctx.corpus, &ctx.index, k)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for (obj, sim) in candidates {
        let emb = ctx.index.vector(&obj.id);
        let features = featurize(&query, obj, emb, focal, ctx.model.variant)?;
        scored.push((obj, sim, predict(&ctx.model, &features)?));
    }
    scored.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| b.1.total_cmp(&a.1))
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    scored
        .into_iter()
        .take(top_n)
        .map(|(obj, _, score)| reference_perspective(PolicyKind::Contextual, focal, obj, Some(score)))
        .collect()
}

/// Configured policies, shared immutably across requests.
#[derive(Debug, Clone)]
pub struct Engines {
    pub population: u64,
    pub per_capita_suffix: String,
    pub crowd: Option<Arc<ReferenceCorpus>>,
    pub contextual: Option<ContextualPolicy>,
    pub enabled: Vec<PolicyKind>,
}

impl Default for Engines {
    fn default() -> Self {
        Engines {
            population: US_POPULATION,
            per_capita_suffix: DEFAULT_PER_CAPITA_SUFFIX.into(),
            crowd: None,
            contextual: None,
            enabled: PolicyKind::ALL.to_vec(),
        }
    }
}

/// A policy that could not produce an option for a measurement.
#[derive(Debug)]
pub struct PolicyFailure {
    pub policy: PolicyKind,
    pub error: Error,
}

impl fmt::Display for PolicyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.policy, self.error)
    }
}

/// Builds one option per available policy, in fixed policy order. A failing
/// policy is reported back and does not affect the others.
pub fn suggest_all(sentence: &str, measurement: &Measurement, engines: &Engines) -> Result<(SuggestionBundle, Vec<PolicyFailure>)> {
    let value = measurement.value;
    if value <= Decimal::ZERO {
        return Err(Error::NonPositive(value.to_string()));
    }
    let mut options = Vec::with_capacity(3);
    let mut failures = Vec::new();
    for policy in PolicyKind::ALL {
        if !engines.enabled.contains(&policy) {
            continue;
        }
        let outcome = match policy {
            PolicyKind::RuleBased => per_capita(value, engines.population, &engines.per_capita_suffix).map(Some),
            PolicyKind::Crowdsourced => match &engines.crowd {
                Some(crowd) => crowdsourced_lookup(value, crowd),
                None => Ok(None),
            },
            PolicyKind::Contextual => match &engines.contextual {
                Some(ctx) => contextual_rank(sentence, value, ctx, 1).map(|mut v| v.pop()),
                None => Ok(None),
            },
        };
        match outcome {
            Ok(Some(p)) => options.push(p),
            Ok(None) => {}
            Err(error) => failures.push(PolicyFailure { policy, error }),
        }
    }
    Ok((
        SuggestionBundle {
            measurement: measurement.clone(),
            options,
        },
        failures,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refstore::{Category, Source};

    fn d(s: &str) -> Decimal {
        Decimal::from_str(s).or_else(|_| Decimal::from_scientific(s)).unwrap()
    }

    #[test]
    fn round_sig_examples() {
        assert_eq!(round_sig(d("1015.38"), 2).unwrap(), d("1000"));
        assert_eq!(round_sig(d("0.9231"), 2).unwrap(), d("0.92"));
        assert_eq!(round_sig(d("596.9"), 2).unwrap(), d("600"));
        assert_eq!(round_sig(d("7"), 1).unwrap(), d("7"));
        assert_eq!(round_sig(d("0.25"), 1).unwrap(), d("0.3"));
        assert_eq!(round_sig(d("9.96"), 2).unwrap(), d("10"));
        assert!(round_sig(Decimal::ZERO, 2).is_err());
        assert!(round_sig(d("-1"), 2).is_err());
        assert!(round_sig(d("5"), 0).is_err());
    }

    #[test]
    fn per_capita_phrases() {
        let phrase = |v: &str| per_capita(d(v), US_POPULATION, DEFAULT_PER_CAPITA_SUFFIX).unwrap().phrase;
        assert_eq!(phrase("330e9"), "about $1,000 per person in the US");
        assert_eq!(phrase("300e6"), "about $0.92 per person in the US");
        assert_eq!(phrase("194e9"), "about $600 per person in the US");
        assert_eq!(phrase("325e6"), "about $1.00 per person in the US");
        assert_eq!(phrase("1e8"), "about $0.31 per person in the US");
        assert_eq!(phrase("1e6"), "about $0.0031 per person in the US");
        assert_eq!(phrase("5e12"), "about $15,000 per person in the US");
        assert!(per_capita(Decimal::ZERO, US_POPULATION, "").is_err());
    }

    #[test]
    fn dollar_formatting() {
        assert_eq!(format_dollars(d("4.5")), "$4.50");
        assert_eq!(format_dollars(d("12")), "$12");
        assert_eq!(format_dollars(d("1500000")), "$1,500,000");
    }

    #[test]
    fn multiplier_phrases() {
        let (_, p, form) = format_multiplier(d("7e11"), d("7e11"), "the United States military budget").unwrap();
        assert_eq!(p, "about the same size as the United States military budget");
        assert_eq!(form, MultiplierForm::SameSize);

        let (m, p, _) = format_multiplier(d("1e8"), d("7e11"), "the United States military budget").unwrap();
        assert_eq!(p, "about 0.01% of the United States military budget");
        assert_eq!(m, d("0.0001"));

        let (_, p, _) = format_multiplier(d("194e9"), d("4.79e12"), "the United States Federal budget in 2020").unwrap();
        assert_eq!(p, "about 4% of the United States Federal budget in 2020");

        let (m, p, form) = format_multiplier(d("194e9"), d("9.7e10"), "the value of the net worth of Bill Gates").unwrap();
        assert_eq!(p, "about 2 times the value of the net worth of Bill Gates");
        assert_eq!(m, d("2"));
        assert_eq!(form, MultiplierForm::Times);

        let (_, p, _) = format_multiplier(d("5e9"), d("1e3"), "a laptop").unwrap();
        assert_eq!(p, "about 5,000,000 times a laptop");

        assert!(format_multiplier(d("1"), Decimal::ZERO, "x").is_err());
    }

    fn crowd_obj(phrase: &str, value: &str, rating: f64) -> ReferenceObject {
        let mut o = ReferenceObject::new(Source::Crowd, phrase, Category::Dictionary, d(value));
        o.total_rating = Some(rating);
        o
    }

    #[test]
    fn crowd_lookup_nearest_anchor() {
        let crowd = ReferenceCorpus::new(vec![
            crowd_obj("the cost of a private high-end jet", "1e8", 3.8),
            crowd_obj("the cost of a house", "3e5", 4.0),
            crowd_obj("the budget of a blockbuster movie", "3e8", 3.5),
        ])
        .unwrap();
        let p = crowdsourced_lookup(d("1e8"), &crowd).unwrap().unwrap();
        assert_eq!(p.phrase, "about the same size as the cost of a private high-end jet");
        assert_eq!(p.policy, PolicyKind::Crowdsourced);
        assert!(p.reference.is_some() && p.multiplier.is_some());
    }

    #[test]
    fn crowd_lookup_tie_goes_to_rating() {
        let crowd = ReferenceCorpus::new(vec![
            crowd_obj("a modest apartment", "1e6", 3.2),
            crowd_obj("a mansion", "3e6", 4.1),
        ])
        .unwrap();
        // sqrt(3) * 1e6 sits exactly between the anchors in log space.
        let mid = d("1732050.8075688772935274463");
        let p = crowdsourced_lookup(mid, &crowd).unwrap().unwrap();
        assert!(p.phrase.ends_with("a mansion"), "{}", p.phrase);

        let swapped = ReferenceCorpus::new(vec![
            crowd_obj("a modest apartment", "1e6", 4.5),
            crowd_obj("a mansion", "3e6", 4.1),
        ])
        .unwrap();
        let p = crowdsourced_lookup(mid, &swapped).unwrap().unwrap();
        assert!(p.phrase.ends_with("a modest apartment"), "{}", p.phrase);
    }

    #[test]
    fn crowd_lookup_empty() {
        let crowd = ReferenceCorpus::new(vec![]).unwrap();
        assert!(crowdsourced_lookup(d("1e8"), &crowd).unwrap().is_none());
    }

    #[test]
    fn bundle_without_crowd_has_two_options_or_fewer() {
        let m = crate::measure::extract_measurements("It cost $5 million.").remove(0);
        let engines = Engines::default();
        let (bundle, failures) = suggest_all("It cost $5 million.", &m, &engines).unwrap();
        assert_eq!(bundle.options.len(), 1);
        assert!(failures.is_empty());
        assert_eq!(bundle.options[0].policy, PolicyKind::RuleBased);
    }

    #[test]
    fn zero_measurement_rejected() {
        let m = crate::measure::extract_measurements("It cost $0.").remove(0);
        assert!(suggest_all("It cost $0.", &m, &Engines::default()).is_err());
    }
}
