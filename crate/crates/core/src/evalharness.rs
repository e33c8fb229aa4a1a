//! Offline analysis of selection logs: per-policy keep rates, counterfactual
//! policy combinations, magnitude curves, stimulus selection and a one-variable
//! OLS of helpfulness on similarity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::measure::magnitude_of;
use crate::policies::PolicyKind;
use crate::{Error, Result};

pub const MIN_DECADE: i32 = 6;
pub const MAX_DECADE: i32 = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Arts,
    Business,
    Health,
    Science,
    Sports,
    Technology,
    Us,
    World,
}

impl Section {
    pub const ALL: [Section; 8] = [
        Section::Arts,
        Section::Business,
        Section::Health,
        Section::Science,
        Section::Sports,
        Section::Technology,
        Section::Us,
        Section::World,
    ];
}

/// What a participant picked: one of the shown policies or nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Choice {
    Policy(PolicyKind),
    None,
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Policy(p) => f.write_str(p.as_str()),
            Choice::None => f.write_str("none"),
        }
    }
}

impl FromStr for Choice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Choice::None),
            other => other.parse().map(Choice::Policy),
        }
    }
}

impl Serialize for Choice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Choice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Policies shown in a trial; serialized as a comma-joined list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Shown(pub BTreeSet<PolicyKind>);

impl Shown {
    pub fn all() -> Self {
        Shown(PolicyKind::ALL.into_iter().collect())
    }

    pub fn contains(&self, p: PolicyKind) -> bool {
        self.0.contains(&p)
    }
}

impl fmt::Display for Shown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|p| p.as_str()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for Shown {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(PolicyKind::from_str)
            .collect::<Result<BTreeSet<_>>>()
            .map(Shown)
    }
}

impl Serialize for Shown {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Shown {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Joined(String),
            List(Vec<PolicyKind>),
        }
        match Repr::deserialize(d)? {
            Repr::Joined(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::List(v) => Ok(Shown(v.into_iter().collect())),
        }
    }
}

/// One participant × quote selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub participant_id: String,
    pub quote_id: String,
    pub section: Section,
    #[serde(with = "rust_decimal::serde::str")]
    pub focal_value: Decimal,
    pub shown: Shown,
    pub choice: Choice,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<()> {
        if self.focal_value <= Decimal::ZERO {
            return Err(Error::NonPositive(self.focal_value.to_string()));
        }
        if let Choice::Policy(p) = self.choice {
            if !self.shown.contains(p) {
                return Err(Error::InvalidArgument(format!(
                    "choice `{p}` was not among the shown policies ({})",
                    self.shown
                )));
            }
        }
        Ok(())
    }
}

pub fn read_trial_log(path: &Path) -> Result<Vec<TrialRecord>> {
    let records: Vec<TrialRecord> = crate::tsv::read(path)?;
    for (i, rec) in records.iter().enumerate() {
        rec.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
    }
    Ok(records)
}

pub fn write_trial_log(path: &Path, records: &[TrialRecord]) -> Result<()> {
    crate::tsv::write(path, records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRate {
    pub policy: PolicyKind,
    pub chosen: usize,
    pub shown: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeepRateReport {
    pub trials: usize,
    pub policies: Vec<PolicyRate>,
    pub none_count: usize,
    pub none_rate: f64,
    pub per_participant: BTreeMap<String, BTreeMap<String, f64>>,
}

impl KeepRateReport {
    pub fn rate(&self, policy: PolicyKind) -> Option<f64> {
        self.policies.iter().find(|r| r.policy == policy).map(|r| r.rate)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn non_empty(log: &[TrialRecord]) -> Result<()> {
    if log.is_empty() {
        Err(Error::InsufficientData("trial log is empty".into()))
    } else {
        Ok(())
    }
}

fn tally(log: &[&TrialRecord]) -> (Vec<PolicyRate>, usize) {
    let policies = PolicyKind::ALL
        .into_iter()
        .map(|p| {
            let shown = log.iter().filter(|t| t.shown.contains(p)).count();
            let chosen = log.iter().filter(|t| t.choice == Choice::Policy(p)).count();
            PolicyRate {
                policy: p,
                chosen,
                shown,
                rate: ratio(chosen, shown),
            }
        })
        .collect();
    let none = log.iter().filter(|t| t.choice == Choice::None).count();
    (policies, none)
}

/// For each policy, times chosen over times shown; plus the rate of choosing
/// nothing, overall and per participant.
pub fn keep_rates(log: &[TrialRecord]) -> Result<KeepRateReport> {
    non_empty(log)?;
    let all: Vec<&TrialRecord> = log.iter().collect();
    let (policies, none_count) = tally(&all);

    let mut groups: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for t in log {
        groups.entry(&t.participant_id).or_default().push(t);
    }
    let per_participant = groups
        .into_iter()
        .map(|(pid, trials)| {
            let (rates, none) = tally(&trials);
            let mut m: BTreeMap<String, f64> = rates
                .into_iter()
                .filter(|r| r.shown > 0)
                .map(|r| (r.policy.as_str().to_string(), r.rate))
                .collect();
            m.insert("none".into(), ratio(none, trials.len()));
            (pid.to_string(), m)
        })
        .collect();

    Ok(KeepRateReport {
        trials: log.len(),
        policies,
        none_count,
        none_rate: ratio(none_count, log.len()),
        per_participant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinationReport {
    pub subset: Vec<PolicyKind>,
    pub rate: f64,
    pub per_participant: BTreeMap<String, f64>,
}

impl CombinationReport {
    /// Participant means in ascending order.
    pub fn sorted_participant_rates(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.per_participant.values().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Fraction of participants whose mean keep rate is at least `threshold`.
    pub fn fraction_at_or_above(&self, threshold: f64) -> f64 {
        let n = self.per_participant.len();
        ratio(self.per_participant.values().filter(|r| **r >= threshold).count(), n)
    }

    /// Points `(rate, fraction of participants at or above rate)` at each
    /// distinct participant rate.
    pub fn survival_curve(&self) -> Vec<(f64, f64)> {
        let mut rates = self.sorted_participant_rates();
        rates.dedup();
        rates.into_iter().map(|r| (r, self.fraction_at_or_above(r))).collect()
    }
}

/// Keep rate if only `subset` were offered, assuming a participant who chose
/// policy p would still choose it with fewer options shown.
pub fn combination_keep_rate(log: &[TrialRecord], subset: &[PolicyKind]) -> Result<CombinationReport> {
    non_empty(log)?;
    let set: BTreeSet<PolicyKind> = subset.iter().copied().collect();
    let kept = |t: &TrialRecord| matches!(t.choice, Choice::Policy(p) if set.contains(&p));

    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for t in log {
        let e = groups.entry(&t.participant_id).or_default();
        e.0 += usize::from(kept(t));
        e.1 += 1;
    }
    Ok(CombinationReport {
        subset: set.iter().copied().collect(),
        rate: ratio(log.iter().filter(|t| kept(t)).count(), log.len()),
        per_participant: groups
            .into_iter()
            .map(|(pid, (k, n))| (pid.to_string(), ratio(k, n)))
            .collect(),
    })
}

/// All subsets of the three policies, smallest first.
pub fn policy_subsets() -> Vec<Vec<PolicyKind>> {
    let mut subsets: Vec<Vec<PolicyKind>> = (0u8..8)
        .map(|mask| {
            PolicyKind::ALL
                .into_iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, p)| p)
                .collect()
        })
        .collect();
    subsets.sort_by_key(|s| s.len());
    subsets
}

/// Keep rate of `policy` per decade of the focal value, decades 6 to 13.
/// Decades with no trials showing the policy are absent.
pub fn keep_rate_by_magnitude(log: &[TrialRecord], policy: PolicyKind) -> Result<BTreeMap<i32, f64>> {
    non_empty(log)?;
    let mut bins: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for t in log {
        let Ok(decade) = magnitude_of(t.focal_value) else { continue };
        if !(MIN_DECADE..=MAX_DECADE).contains(&decade) || !t.shown.contains(policy) {
            continue;
        }
        let e = bins.entry(decade).or_default();
        e.0 += usize::from(t.choice == Choice::Policy(policy));
        e.1 += 1;
    }
    Ok(bins.into_iter().map(|(d, (k, n))| (d, ratio(k, n))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteCandidate {
    pub quote_id: String,
    pub quote: String,
    pub section: Section,
    #[serde(with = "rust_decimal::serde::str")]
    pub focal_value: Decimal,
    /// Similarity of the quote to its top-ranked reference object.
    pub top_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stimulus {
    pub section: Section,
    pub decade: i32,
    pub rank: usize,
    pub quote_id: String,
    pub top_similarity: f64,
}

/// Bins quotes by (section, decade 6..=13) and keeps up to `per_bin` quotes
/// with the highest top-1 similarity in each bin. Ties go to the smaller
/// quote id. Bins may come up short or empty.
pub fn select_stimuli(quotes: &[QuoteCandidate], per_bin: usize) -> Vec<Stimulus> {
    let mut bins: BTreeMap<(Section, i32), Vec<&QuoteCandidate>> = BTreeMap::new();
    for q in quotes {
        let Ok(decade) = magnitude_of(q.focal_value) else { continue };
        if (MIN_DECADE..=MAX_DECADE).contains(&decade) {
            bins.entry((q.section, decade)).or_default().push(q);
        }
    }
    let mut out = Vec::new();
    for ((section, decade), mut members) in bins {
        members.sort_by(|a, b| {
            b.top_similarity
                .total_cmp(&a.top_similarity)
                .then_with(|| a.quote_id.cmp(&b.quote_id))
        });
        for (rank, q) in members.into_iter().take(per_bin).enumerate() {
            out.push(Stimulus {
                section,
                decade,
                rank,
                quote_id: q.quote_id.clone(),
                top_similarity: q.top_similarity,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
    pub slope_se: f64,
    pub n: usize,
}

/// Ordinary least squares of `y` on a single regressor `x`.
pub fn similarity_helpfulness_ols(pairs: &[(f64, f64)]) -> Result<OlsFit> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData("OLS needs at least three pairs".into()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= f64::EPSILON * n * (1.0 + mx * mx) {
        return Err(Error::Degenerate("similarity has zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pairs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    let slope_se = (ss_res / (n - 2.0) / sxx).sqrt();
    Ok(OlsFit {
        intercept,
        slope,
        r2,
        slope_se,
        n: pairs.len(),
    })
}

fn subset_label(subset: &[PolicyKind]) -> String {
    if subset.is_empty() {
        "(none)".into()
    } else {
        subset.iter().map(|p| p.as_str()).collect::<Vec<_>>().join("+")
    }
}

/// Human-readable keep-rate and combination report.
pub fn render_text(report: &KeepRateReport, combos: &[CombinationReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "trials: {}", report.trials);
    let _ = writeln!(s, "keep rates (chosen / shown):");
    for r in &report.policies {
        let _ = writeln!(s, "  {:<13} {:.4}  ({}/{})", r.policy.as_str(), r.rate, r.chosen, r.shown);
    }
    let _ = writeln!(s, "  {:<13} {:.4}  ({}/{})", "none", report.none_rate, report.none_count, report.trials);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "policy combinations (counterfactual: a participant who chose policy p would still choose p when fewer options are shown):"
    );
    for c in combos {
        let _ = writeln!(
            s,
            "  {:<40} {:.4}  participants>=50%: {:.4}",
            subset_label(&c.subset),
            c.rate,
            c.fraction_at_or_above(0.5)
        );
    }
    s
}

/// Machine-readable `key=value` lines for the same reports.
pub fn render_kv(report: &KeepRateReport, combos: &[CombinationReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "trials={}", report.trials);
    for r in &report.policies {
        let _ = writeln!(s, "keep_rate.{}={}", r.policy.as_str(), r.rate);
        let _ = writeln!(s, "shown.{}={}", r.policy.as_str(), r.shown);
    }
    let _ = writeln!(s, "keep_rate.none={}", report.none_rate);
    for c in combos {
        let _ = writeln!(s, "combination.{}={}", subset_label(&c.subset), c.rate);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(pid: &str, qid: &str, focal: u64, choice: Choice) -> TrialRecord {
        TrialRecord {
            participant_id: pid.into(),
            quote_id: qid.into(),
            section: Section::Business,
            focal_value: Decimal::from(focal),
            shown: Shown::all(),
            choice,
        }
    }

    #[test]
    fn all_none() {
        let log: Vec<_> = (0..5).map(|i| trial("a", &i.to_string(), 1_000_000, Choice::None)).collect();
        let r = keep_rates(&log).unwrap();
        assert_eq!(r.none_rate, 1.0);
        assert!(r.policies.iter().all(|p| p.rate == 0.0));
    }

    #[test]
    fn single_rule_based() {
        let r = keep_rates(&[trial("a", "q", 5_000_000, Choice::Policy(PolicyKind::RuleBased))]).unwrap();
        assert_eq!(r.rate(PolicyKind::RuleBased), Some(1.0));
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(keep_rates(&[]).is_err());
        assert!(combination_keep_rate(&[], &[PolicyKind::RuleBased]).is_err());
        assert!(keep_rate_by_magnitude(&[], PolicyKind::RuleBased).is_err());
    }

    #[test]
    fn empty_subset_rate_zero() {
        let log = vec![trial("a", "q", 5_000_000, Choice::Policy(PolicyKind::RuleBased))];
        assert_eq!(combination_keep_rate(&log, &[]).unwrap().rate, 0.0);
    }

    #[test]
    fn single_magnitude_one_bin() {
        let log: Vec<_> = (0..4)
            .map(|i| trial("a", &i.to_string(), 3_000_000, if i % 2 == 0 { Choice::None } else { Choice::Policy(PolicyKind::RuleBased) }))
            .collect();
        let bins = keep_rate_by_magnitude(&log, PolicyKind::RuleBased).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[&6], 0.5);
    }

    #[test]
    fn shown_encoding() {
        let s: Shown = "rule_based,contextual".parse().unwrap();
        assert_eq!(s.to_string(), "rule_based,contextual");
        assert!("rule_based,bogus".parse::<Shown>().is_err());
    }

    #[test]
    fn choice_must_be_shown() {
        let mut t = trial("a", "q", 5_000_000, Choice::Policy(PolicyKind::Crowdsourced));
        t.shown = "rule_based".parse().unwrap();
        assert!(t.validate().is_err());
        t.choice = Choice::None;
        assert!(t.validate().is_ok());
    }

    #[test]
    fn survival_curve_shape() {
        let log = vec![
            trial("a", "1", 5_000_000, Choice::Policy(PolicyKind::RuleBased)),
            trial("a", "2", 5_000_000, Choice::None),
            trial("b", "1", 5_000_000, Choice::Policy(PolicyKind::RuleBased)),
            trial("b", "2", 5_000_000, Choice::Policy(PolicyKind::RuleBased)),
        ];
        let c = combination_keep_rate(&log, &[PolicyKind::RuleBased]).unwrap();
        assert_eq!(c.sorted_participant_rates(), vec![0.5, 1.0]);
        assert_eq!(c.survival_curve(), vec![(0.5, 1.0), (1.0, 0.5)]);
    }

    #[test]
    fn ols_exact_line() {
        let pairs: Vec<_> = (0..10).map(|i| (i as f64 * 0.1, 0.5 + 2.0 * i as f64 * 0.1)).collect();
        let fit = similarity_helpfulness_ols(&pairs).unwrap();
        assert!((fit.intercept - 0.5).abs() < 1e-12);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_degenerate() {
        assert!(similarity_helpfulness_ols(&[(0.3, 1.0), (0.3, 2.0), (0.3, 3.0)]).is_err());
        assert!(similarity_helpfulness_ols(&[(0.1, 1.0), (0.3, 2.0)]).is_err());
    }

    #[test]
    fn subsets_enumerated() {
        let s = policy_subsets();
        assert_eq!(s.len(), 8);
        assert!(s[0].is_empty());
        assert_eq!(s[7].len(), 3);
    }
}
