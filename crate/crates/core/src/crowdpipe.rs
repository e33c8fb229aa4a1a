//! Aggregates crowd proposals, ratings and verifications into a corpus of
//! verified reference objects.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::refstore::{Category, ReferenceObject, Source};
use crate::{Error, Result};

pub const MIN_RATINGS: usize = 5;
pub const MIN_TOTAL_RATING: f64 = 3.0;
pub const MIN_VERIFICATIONS: usize = 3;
pub const MAX_RELATIVE_DEVIATION: f64 = 0.20;

/// The 25 anchor amounts proposals are collected for: 1·10^k and 3·10^k from
/// $1 to $1 trillion.
pub fn measurement_ladder() -> Vec<Decimal> {
    (0..=12u32)
        .flat_map(|k| {
            let base = Decimal::from(10u64.pow(k));
            [base, base * Decimal::from(3)]
        })
        .take(25)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub proposal_id: String,
    #[serde(with = "rust_decimal::serde::str")]
    pub anchor_value: Decimal,
    pub phrase: String,
    pub worker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_entity_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub proposal_id: String,
    pub helpfulness: u8,
    pub familiarity: u8,
    pub worker_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub proposal_id: String,
    #[serde(with = "rust_decimal::serde::str")]
    pub verified_value: Decimal,
    pub worker_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Proposed,
    Acceptable,
    Verified,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdObject {
    #[serde(flatten)]
    pub proposal: Proposal,
    pub total_rating: f64,
    pub rating_count: usize,
    pub verification_count: usize,
    pub median_verified: Option<Decimal>,
    pub status: Status,
}

/// How helpfulness and familiarity means combine into the total rating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingRule {
    /// Weight on mean helpfulness; familiarity gets `1 - weight`.
    pub helpfulness_weight: f64,
}

impl Default for RatingRule {
    fn default() -> Self {
        RatingRule {
            helpfulness_weight: 0.5,
        }
    }
}

/// Total rating and whether the proposal is acceptable (at least five ratings
/// and a total of at least 3).
pub fn aggregate_ratings(ratings: &[&RatingRecord], rule: RatingRule) -> (f64, bool) {
    if ratings.is_empty() {
        return (0.0, false);
    }
    let n = ratings.len() as f64;
    let help = ratings.iter().map(|r| f64::from(r.helpfulness)).sum::<f64>() / n;
    let fam = ratings.iter().map(|r| f64::from(r.familiarity)).sum::<f64>() / n;
    let total = rule.helpfulness_weight * help + (1.0 - rule.helpfulness_weight) * fam;
    (total, ratings.len() >= MIN_RATINGS && total >= MIN_TOTAL_RATING)
}

fn median(values: &mut [Decimal]) -> Option<Decimal> {
    if values.is_empty() {
        return None;
    }
    values.sort();
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / Decimal::TWO
    })
}

/// Median verified value and whether it lies within 20% of the anchor with
/// at least three verifications.
pub fn verify(anchor: Decimal, verifications: &[Decimal]) -> (Option<Decimal>, bool) {
    let mut values = verifications.to_vec();
    let med = median(&mut values);
    let accurate = match med {
        Some(m) if verifications.len() >= MIN_VERIFICATIONS && anchor > Decimal::ZERO => {
            let deviation = ((m - anchor).abs() / anchor).to_f64().unwrap_or(f64::INFINITY);
            deviation <= MAX_RELATIVE_DEVIATION
        }
        _ => false,
    };
    (med, accurate)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FunnelReport {
    pub proposed: usize,
    pub acceptable: usize,
    pub verified: usize,
    pub invalid_proposals: usize,
    pub unknown_proposal_refs: usize,
    pub invalid_ratings: usize,
    pub invalid_verifications: usize,
    pub self_ratings: usize,
    pub duplicate_ratings: usize,
}

impl fmt::Display for FunnelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "proposed: {}", self.proposed)?;
        writeln!(f, "acceptable: {}", self.acceptable)?;
        writeln!(f, "verified: {}", self.verified)?;
        writeln!(f, "skipped.invalid_proposals: {}", self.invalid_proposals)?;
        writeln!(f, "skipped.unknown_proposal_refs: {}", self.unknown_proposal_refs)?;
        writeln!(f, "skipped.invalid_ratings: {}", self.invalid_ratings)?;
        writeln!(f, "skipped.invalid_verifications: {}", self.invalid_verifications)?;
        writeln!(f, "skipped.self_ratings: {}", self.self_ratings)?;
        write!(f, "skipped.duplicate_ratings: {}", self.duplicate_ratings)
    }
}

/// Classifies every proposal. Ratings from the proposer are ignored, as are
/// repeat ratings by the same worker after their first.
pub fn build_crowd_corpus(
    proposals: &[Proposal],
    ratings: &[RatingRecord],
    verifications: &[VerificationRecord],
    rule: RatingRule,
) -> (Vec<CrowdObject>, FunnelReport) {
    let ladder: HashSet<Decimal> = measurement_ladder().into_iter().map(|d| d.normalize()).collect();
    let mut report = FunnelReport::default();

    let mut by_id: BTreeMap<&str, &Proposal> = BTreeMap::new();
    for p in proposals {
        if !ladder.contains(&p.anchor_value.normalize()) || p.phrase.trim().is_empty() || by_id.contains_key(p.proposal_id.as_str()) {
            report.invalid_proposals += 1;
            continue;
        }
        by_id.insert(&p.proposal_id, p);
    }

    let mut rated: HashMap<&str, Vec<&RatingRecord>> = HashMap::new();
    let mut seen_raters: HashSet<(&str, &str)> = HashSet::new();
    for r in ratings {
        let Some(p) = by_id.get(r.proposal_id.as_str()) else {
            report.unknown_proposal_refs += 1;
            continue;
        };
        if !(1..=5).contains(&r.helpfulness) || !(1..=5).contains(&r.familiarity) {
            report.invalid_ratings += 1;
            continue;
        }
        if r.worker_id == p.worker_id {
            report.self_ratings += 1;
            continue;
        }
        if !seen_raters.insert((&r.proposal_id, &r.worker_id)) {
            report.duplicate_ratings += 1;
            continue;
        }
        rated.entry(&r.proposal_id).or_default().push(r);
    }

    let mut checked: HashMap<&str, Vec<Decimal>> = HashMap::new();
    for v in verifications {
        if !by_id.contains_key(v.proposal_id.as_str()) {
            report.unknown_proposal_refs += 1;
            continue;
        }
        if v.verified_value <= Decimal::ZERO {
            report.invalid_verifications += 1;
            continue;
        }
        checked.entry(&v.proposal_id).or_default().push(v.verified_value);
    }

    let mut out = Vec::with_capacity(by_id.len());
    for (id, p) in by_id {
        let rs = rated.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let vs = checked.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let (total, acceptable) = aggregate_ratings(rs, rule);
        let (median_verified, accurate) = verify(p.anchor_value, vs);
        let status = if acceptable && accurate {
            Status::Verified
        } else if acceptable && vs.len() >= MIN_VERIFICATIONS {
            Status::Rejected
        } else if acceptable {
            Status::Acceptable
        } else if rs.len() >= MIN_RATINGS {
            Status::Rejected
        } else {
            Status::Proposed
        };
        report.proposed += 1;
        report.acceptable += usize::from(acceptable);
        report.verified += usize::from(status == Status::Verified);
        out.push(CrowdObject {
            proposal: p.clone(),
            total_rating: total,
            rating_count: rs.len(),
            verification_count: vs.len(),
            median_verified,
            status,
        });
    }
    (out, report)
}

/// Verified objects as reference objects valued at their anchor.
pub fn export_verified(objects: &[CrowdObject]) -> Vec<ReferenceObject> {
    objects
        .iter()
        .filter(|o| o.status == Status::Verified)
        .map(|o| {
            let mut r = ReferenceObject::new(Source::Crowd, o.proposal.phrase.trim(), Category::Dictionary, o.proposal.anchor_value);
            r.kb_entity_id = o.proposal.kb_entity_id.clone();
            r.total_rating = Some(o.total_rating);
            r
        })
        .collect()
}

pub fn read_proposals(path: &Path) -> Result<Vec<Proposal>> {
    crate::tsv::read(path)
}

pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    crate::tsv::read(path)
}

pub fn read_verifications(path: &Path) -> Result<Vec<VerificationRecord>> {
    crate::tsv::read(path)
}

impl std::str::FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown status `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    fn rating(id: &str, h: u8, f: u8, w: &str) -> RatingRecord {
        RatingRecord {
            proposal_id: id.into(),
            helpfulness: h,
            familiarity: f,
            worker_id: w.into(),
        }
    }

    #[test]
    fn ladder_shape() {
        let l = measurement_ladder();
        assert_eq!(l.len(), 25);
        assert_eq!(l[0], Decimal::ONE);
        assert_eq!(l[24], Decimal::from(1_000_000_000_000u64));
        assert_eq!(&l[..4], &[1, 3, 10, 30].map(Decimal::from));
        assert!(l.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ratings_thresholds() {
        let five: Vec<_> = [(4, 3), (4, 3), (4, 3), (4, 4), (4, 3)]
            .iter()
            .enumerate()
            .map(|(i, (h, f))| rating("p", *h, *f, &format!("w{i}")))
            .collect();
        let refs: Vec<_> = five.iter().collect();
        let (total, ok) = aggregate_ratings(&refs, RatingRule::default());
        assert!((total - 3.6).abs() < 1e-12);
        assert!(ok);

        let four: Vec<_> = refs[..4].iter().map(|_| rating("p", 5, 5, "w")).collect();
        assert!(!aggregate_ratings(&four.iter().collect::<Vec<_>>(), RatingRule::default()).1);

        let boundary: Vec<_> = (0..5).map(|i| rating("p", 3, 3, &format!("w{i}"))).collect();
        let (total, ok) = aggregate_ratings(&boundary.iter().collect::<Vec<_>>(), RatingRule::default());
        assert_eq!(total, 3.0);
        assert!(ok);

        assert_eq!(aggregate_ratings(&[], RatingRule::default()), (0.0, false));
    }

    #[test]
    fn verification_thresholds() {
        let d = |v: u64| Decimal::from(v);
        let (m, ok) = verify(d(30_000), &[d(28_000), d(29_500), d(31_000)]);
        assert_eq!(m, Some(d(29_500)));
        assert!(ok);
        let (m, ok) = verify(d(30_000), &[d(10_000), d(50_000), d(90_000)]);
        assert_eq!(m, Some(d(50_000)));
        assert!(!ok);
        assert!(!verify(d(30_000), &[d(30_000), d(30_000)]).1);
        // Exactly 20% off is still accurate.
        assert!(verify(d(100), &[d(120), d(120), d(120)]).1);
        assert!(!verify(d(100), &[d(121), d(121), d(121)]).1);
        // Even count: mean of the middle two.
        assert_eq!(verify(d(100), &[d(90), d(100), d(110), d(130)]).0, Some(d(105)));
    }

    #[test]
    fn self_ratings_excluded() {
        let proposals = vec![Proposal {
            proposal_id: "p1".into(),
            anchor_value: Decimal::from(100),
            phrase: "a nice dinner".into(),
            worker_id: "author".into(),
            kb_entity_id: None,
        }];
        let mut ratings: Vec<_> = (0..4).map(|i| rating("p1", 4, 4, &format!("w{i}"))).collect();
        ratings.push(rating("p1", 5, 5, "author"));
        ratings.push(rating("p1", 1, 1, "w0"));
        let (objs, report) = build_crowd_corpus(&proposals, &ratings, &[], RatingRule::default());
        assert_eq!(objs[0].rating_count, 4);
        assert_eq!(objs[0].status, Status::Proposed);
        assert_eq!(report.self_ratings, 1);
        assert_eq!(report.duplicate_ratings, 1);
    }

    #[test]
    fn empty_inputs() {
        let (objs, report) = build_crowd_corpus(&[], &[], &[], RatingRule::default());
        assert!(objs.is_empty());
        assert_eq!(report, FunnelReport::default());
    }

    #[test]
    fn unknown_references_counted() {
        let (_, report) = build_crowd_corpus(
            &[],
            &[rating("ghost", 3, 3, "w")],
            &[VerificationRecord {
                proposal_id: "ghost".into(),
                verified_value: Decimal::ONE,
                worker_id: "w".into(),
            }],
            RatingRule::default(),
        );
        assert_eq!(report.unknown_proposal_refs, 2);
    }

    #[test]
    fn status_parse() {
        assert_eq!(Status::from_str("verified").unwrap(), Status::Verified);
        assert!(Status::from_str("bogus").is_err());
    }
}
