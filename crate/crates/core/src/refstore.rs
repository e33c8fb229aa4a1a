//! Reference-object corpus: ingestion from a currency-valued knowledge-base
//! dump and a dictionary of amounts, filtering, persistence and lookup.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Property categories a reference object can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Dictionary,
    #[serde(rename = "Nominal GDP")]
    NominalGdp,
    #[serde(rename = "Nominal GDP per capita")]
    NominalGdpPerCapita,
    #[serde(rename = "Annual budget")]
    AnnualBudget,
    Cost,
    Endowment,
    #[serde(rename = "Market capitalization")]
    MarketCapitalization,
    #[serde(rename = "Net profit")]
    NetProfit,
    Price,
    #[serde(rename = "Total assets")]
    TotalAssets,
    #[serde(rename = "Annual revenue")]
    AnnualRevenue,
    #[serde(rename = "Total equity")]
    TotalEquity,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::Dictionary,
        Category::NominalGdp,
        Category::NominalGdpPerCapita,
        Category::AnnualBudget,
        Category::Cost,
        Category::Endowment,
        Category::MarketCapitalization,
        Category::NetProfit,
        Category::Price,
        Category::TotalAssets,
        Category::AnnualRevenue,
        Category::TotalEquity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Dictionary => "Dictionary",
            Category::NominalGdp => "Nominal GDP",
            Category::NominalGdpPerCapita => "Nominal GDP per capita",
            Category::AnnualBudget => "Annual budget",
            Category::Cost => "Cost",
            Category::Endowment => "Endowment",
            Category::MarketCapitalization => "Market capitalization",
            Category::NetProfit => "Net profit",
            Category::Price => "Price",
            Category::TotalAssets => "Total assets",
            Category::AnnualRevenue => "Annual revenue",
            Category::TotalEquity => "Total equity",
        }
    }

    /// Position in [`Category::ALL`]; used for one-hot encoding.
    pub fn index(self) -> usize {
        Category::ALL.iter().position(|c| *c == self).expect("ALL is exhaustive")
    }

    /// Case-insensitive lookup by property name.
    pub fn from_property(property: &str) -> Option<Category> {
        let wanted = property.trim();
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(wanted))
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Dictionary,
    KnowledgeBase,
    Crowd,
}

impl Source {
    fn tag(self) -> &'static str {
        match self {
            Source::Dictionary => "dictionary",
            Source::KnowledgeBase => "knowledge-base",
            Source::Crowd => "crowd",
        }
    }
}

/// A named entity with a known USD value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceObject {
    pub id: String,
    pub phrase: String,
    pub category: Category,
    pub value: Decimal,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_entity_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wiki_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of: Option<String>,
    /// Predicted log pageviews, attached by the familiarity step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub familiarity: Option<f64>,
    /// Combined crowd rating; present for crowd-sourced objects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_rating: Option<f64>,
}

impl ReferenceObject {
    pub fn new(source: Source, phrase: impl Into<String>, category: Category, value: Decimal) -> Self {
        let phrase = phrase.into();
        let value = value.normalize();
        ReferenceObject {
            id: content_id(source, &phrase, value),
            phrase,
            category,
            value,
            source,
            kb_entity_id: None,
            wiki_title: None,
            as_of: None,
            familiarity: None,
            total_rating: None,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.value <= Decimal::ZERO {
            return Err(format!("value must be positive, got {}", self.value));
        }
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.phrase.trim().is_empty() {
            return Err("empty phrase".into());
        }
        if let Some(date) = &self.as_of {
            if parse_date(date).is_none() {
                return Err(format!("as_of `{date}` is not an ISO-8601 date"));
            }
        }
        if self.familiarity.is_some_and(|f| !f.is_finite()) {
            return Err("familiarity is not finite".into());
        }
        Ok(())
    }
}

/// Stable id derived from (source, phrase, value).
pub fn content_id(source: Source, phrase: &str, value: Decimal) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source.tag().as_bytes());
    hasher.update([0]);
    hasher.update(phrase.as_bytes());
    hasher.update([0]);
    hasher.update(value.normalize().to_string().as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

/// Immutable set of reference objects with lookup indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceCorpus {
    objects: Vec<ReferenceObject>,
    by_id: HashMap<String, usize>,
    by_category: BTreeMap<Category, Vec<usize>>,
}

impl ReferenceCorpus {
    /// Builds a corpus, ordering objects by id. Duplicate ids are an error.
    pub fn new(mut objects: Vec<ReferenceObject>) -> Result<Self> {
        objects.sort_by(|a, b| a.id.cmp(&b.id));
        let mut by_id = HashMap::with_capacity(objects.len());
        let mut by_category: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
        for (i, obj) in objects.iter().enumerate() {
            if by_id.insert(obj.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(obj.id.clone()));
            }
            by_category.entry(obj.category).or_default().push(i);
        }
        Ok(ReferenceCorpus {
            objects,
            by_id,
            by_category,
        })
    }

    pub fn objects(&self) -> &[ReferenceObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ReferenceObject> {
        self.by_id.get(id).map(|&i| &self.objects[i])
    }

    pub fn in_category(&self, category: Category) -> impl Iterator<Item = &ReferenceObject> {
        self.by_category
            .get(&category)
            .into_iter()
            .flatten()
            .map(move |&i| &self.objects[i])
    }

    pub fn into_objects(self) -> Vec<ReferenceObject> {
        self.objects
    }

    /// Returns a copy with `f` applied to each object. Ids must be preserved.
    pub fn map_objects(&self, mut f: impl FnMut(&mut ReferenceObject)) -> Result<Self> {
        let mut objects = self.objects.clone();
        objects.iter_mut().for_each(&mut f);
        ReferenceCorpus::new(objects)
    }
}

/// Writes one JSON object per line, ordered by id.
pub fn save_corpus(corpus: &ReferenceCorpus, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_corpus(corpus, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_corpus<W: Write>(corpus: &ReferenceCorpus, out: &mut W) -> Result<()> {
    for obj in corpus.objects() {
        serde_json::to_writer(&mut *out, obj)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<ReferenceCorpus> {
    let file = std::fs::File::open(path)?;
    read_corpus(BufReader::new(file), path)
}

pub fn read_corpus<R: BufRead>(input: R, path: &Path) -> Result<ReferenceCorpus> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut objects = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: ReferenceObject =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        obj.validate().map_err(|m| parse_err(line_no, m))?;
        if !seen.insert(obj.id.clone()) {
            return Err(parse_err(line_no, format!("duplicate id `{}`", obj.id)));
        }
        objects.push(obj);
    }
    ReferenceCorpus::new(objects)
}

/// One currency-valued property of a knowledge-base entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawKbRecord {
    pub entity: String,
    pub property: String,
    pub currency: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wiki_title: Option<String>,
}

/// Knowledge-base filtering rules.
#[derive(Debug, Clone)]
pub struct KbFilter {
    pub currency: String,
    pub excluded_properties: Vec<String>,
}

impl Default for KbFilter {
    fn default() -> Self {
        KbFilter {
            currency: "USD".into(),
            excluded_properties: vec!["GDP (PPP)".into(), "total liabilities".into()],
        }
    }
}

impl KbFilter {
    fn excludes(&self, property: &str) -> bool {
        self.excluded_properties
            .iter()
            .any(|p| p.trim().eq_ignore_ascii_case(property.trim()))
    }
}

/// Counts of what ingestion kept and dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestionReport {
    pub input: usize,
    pub malformed: usize,
    pub non_usd: usize,
    pub non_positive: usize,
    pub superseded: usize,
    pub excluded_property: usize,
    pub unknown_category: usize,
    pub duplicates: usize,
    pub kept: usize,
}

impl fmt::Display for IngestionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "input={} malformed={} non_usd={} non_positive={} superseded={} excluded_property={} unknown_category={} duplicates={} kept={}",
            self.input,
            self.malformed,
            self.non_usd,
            self.non_positive,
            self.superseded,
            self.excluded_property,
            self.unknown_category,
            self.duplicates,
            self.kept
        )
    }
}

/// Sortable timestamp key: (year, month, day, remainder). Missing parts sort first.
type Stamp = (i64, u32, u32, String);

fn parse_stamp(raw: &str) -> Option<Stamp> {
    let s = raw.trim().trim_start_matches('+');
    let (date, rest) = match s.find('T') {
        Some(i) => (&s[..i], &s[i + 1..]),
        None => (s, ""),
    };
    let mut parts = date.split('-');
    let year: i64 = parts.next()?.parse().ok()?;
    let month: u32 = parts.next().map(str::parse).transpose().ok()?.unwrap_or(0);
    let day: u32 = parts.next().map(str::parse).transpose().ok()?.unwrap_or(0);
    if parts.next().is_some() || month > 12 || day > 31 {
        return None;
    }
    Some((year, month, day, rest.to_string()))
}

fn parse_date(raw: &str) -> Option<(i64, u32, u32)> {
    let (y, m, d, rest) = parse_stamp(raw)?;
    let shape_ok = raw.len() == 10 && rest.is_empty() && m >= 1 && d >= 1;
    shape_ok.then_some((y, m, d))
}

fn stamp_to_date((y, m, d, _): &Stamp) -> Option<String> {
    (*m >= 1 && *d >= 1).then(|| format!("{y:04}-{m:02}-{d:02}"))
}

/// Applies the four filters in order and returns the surviving records.
///
/// 1. drop records whose currency is not the target currency;
/// 2. drop non-positive values;
/// 3. keep only the latest-timestamped record per (entity, property);
/// 4. drop excluded properties.
pub fn filter_knowledge_base(
    records: &[RawKbRecord],
    filter: &KbFilter,
) -> (Vec<RawKbRecord>, IngestionReport) {
    let mut report = IngestionReport {
        input: records.len(),
        ..Default::default()
    };
    let mut latest: BTreeMap<(String, String), (Option<Stamp>, Decimal, &RawKbRecord)> = BTreeMap::new();

    for rec in records {
        let value = Decimal::from_str(rec.value.trim())
            .or_else(|_| Decimal::from_scientific(rec.value.trim()));
        let stamp = rec.timestamp.as_deref().map(parse_stamp);
        let (Ok(value), false) = (value, matches!(stamp, Some(None))) else {
            report.malformed += 1;
            continue;
        };
        if rec.entity.trim().is_empty() || rec.property.trim().is_empty() {
            report.malformed += 1;
            continue;
        }
        if !rec.currency.trim().eq_ignore_ascii_case(&filter.currency) {
            report.non_usd += 1;
            continue;
        }
        if value <= Decimal::ZERO {
            report.non_positive += 1;
            continue;
        }
        let stamp = stamp.flatten();
        let key = (rec.entity.trim().to_string(), rec.property.trim().to_lowercase());
        match latest.get(&key) {
            // Ties on timestamp go to the larger value so the outcome never
            // depends on input order.
            Some((s, v, _)) if (s, v) >= (&stamp, &value) => report.superseded += 1,
            Some(_) => {
                report.superseded += 1;
                latest.insert(key, (stamp, value, rec));
            }
            None => {
                latest.insert(key, (stamp, value, rec));
            }
        }
    }

    let mut kept = Vec::new();
    for (_, (_, _, rec)) in latest {
        if filter.excludes(&rec.property) {
            report.excluded_property += 1;
            continue;
        }
        kept.push(rec.clone());
    }
    report.kept = kept.len();
    (kept, report)
}

/// Lowercases a property label word by word, leaving acronyms ("GDP") intact.
fn property_phrase(property: &str) -> String {
    property
        .split_whitespace()
        .map(|w| {
            let letters: Vec<char> = w.chars().filter(|c| c.is_alphabetic()).collect();
            if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
                w.to_string()
            } else {
                w.to_lowercase()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Filters raw knowledge-base records and maps survivors to reference objects
/// phrased as "the <property> of <entity>".
pub fn ingest_knowledge_base(
    records: &[RawKbRecord],
    filter: &KbFilter,
) -> (Vec<ReferenceObject>, IngestionReport) {
    let (kept, mut report) = filter_knowledge_base(records, filter);
    let mut out = Vec::with_capacity(kept.len());
    let mut ids = HashSet::new();
    for rec in kept {
        let Some(category) = Category::from_property(&rec.property) else {
            report.unknown_category += 1;
            continue;
        };
        let value = Decimal::from_str(rec.value.trim())
            .or_else(|_| Decimal::from_scientific(rec.value.trim()))
            .expect("validated by filter");
        let phrase = format!("the {} of {}", property_phrase(&rec.property), rec.entity.trim());
        let mut obj = ReferenceObject::new(Source::KnowledgeBase, phrase, category, value);
        obj.kb_entity_id = rec.entity_id.clone();
        obj.wiki_title = rec.wiki_title.clone();
        obj.as_of = rec
            .timestamp
            .as_deref()
            .and_then(parse_stamp)
            .and_then(|s| stamp_to_date(&s));
        if !ids.insert(obj.id.clone()) {
            report.duplicates += 1;
            continue;
        }
        out.push(obj);
    }
    report.kept = out.len();
    (out, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryRecord {
    pub phrase: String,
    #[serde(with = "rust_decimal::serde::str")]
    pub value: Decimal,
}

/// Maps dictionary amounts to reference objects in the `Dictionary` category.
pub fn ingest_dictionary(records: &[DictionaryRecord]) -> Result<Vec<ReferenceObject>> {
    let mut out = Vec::with_capacity(records.len());
    let mut ids = HashSet::new();
    for rec in records {
        if rec.value <= Decimal::ZERO {
            return Err(Error::NonPositive(format!("{} ({})", rec.value, rec.phrase)));
        }
        let obj = ReferenceObject::new(Source::Dictionary, rec.phrase.trim(), Category::Dictionary, rec.value);
        if ids.insert(obj.id.clone()) {
            out.push(obj);
        }
    }
    Ok(out)
}

/// Reads raw knowledge-base records, one JSON object per line. Malformed lines
/// are skipped and counted.
pub fn read_kb_records(path: &Path) -> Result<(Vec<RawKbRecord>, usize)> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    let mut malformed = 0;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawKbRecord>(&line) {
            Ok(rec) => records.push(rec),
            Err(_) => malformed += 1,
        }
    }
    Ok((records, malformed))
}

/// Reads a tab-delimited dictionary file with columns `phrase` and `value`.
pub fn read_dictionary(path: &Path) -> Result<Vec<DictionaryRecord>> {
    crate::tsv::read(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(entity: &str, property: &str, currency: &str, value: &str, ts: Option<&str>) -> RawKbRecord {
        RawKbRecord {
            entity: entity.into(),
            property: property.into(),
            currency: currency.into(),
            value: value.into(),
            timestamp: ts.map(Into::into),
            entity_id: None,
            wiki_title: None,
        }
    }

    #[test]
    fn euro_record_dropped() {
        let (out, report) = ingest_knowledge_base(
            &[rec("France", "nominal GDP", "EUR", "2.5e12", None)],
            &KbFilter::default(),
        );
        assert!(out.is_empty());
        assert_eq!(report.non_usd, 1);
    }

    #[test]
    fn latest_value_retained() {
        let (out, _) = ingest_knowledge_base(
            &[
                rec("United States", "nominal GDP", "USD", "20500000000000", Some("2018-01-01")),
                rec("United States", "nominal GDP", "USD", "20940000000000", Some("2020-01-01")),
            ],
            &KbFilter::default(),
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value, Decimal::from(20_940_000_000_000u64));
        assert_eq!(out[0].phrase, "the nominal GDP of United States");
        assert_eq!(out[0].as_of.as_deref(), Some("2020-01-01"));
        assert_eq!(out[0].category, Category::NominalGdp);
    }

    #[test]
    fn negative_value_dropped() {
        let (out, report) =
            ingest_knowledge_base(&[rec("X", "net profit", "USD", "-3e6", None)], &KbFilter::default());
        assert!(out.is_empty());
        assert_eq!(report.non_positive, 1);
    }

    #[test]
    fn excluded_property_dropped() {
        let (out, report) = ingest_knowledge_base(
            &[rec("Acme", "total liabilities", "USD", "5e9", None)],
            &KbFilter::default(),
        );
        assert!(out.is_empty());
        assert_eq!(report.excluded_property, 1);
    }

    #[test]
    fn wikidata_style_timestamps() {
        let (out, _) = ingest_knowledge_base(
            &[
                rec("Apple Inc.", "net profit", "USD", "57411000000", Some("+2020-09-26T00:00:00Z")),
                rec("Apple Inc.", "Net profit", "USD", "55256000000", Some("+2019-09-28T00:00:00Z")),
            ],
            &KbFilter::default(),
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].phrase, "the net profit of Apple Inc.");
        assert_eq!(out[0].as_of.as_deref(), Some("2020-09-26"));
    }

    #[test]
    fn malformed_counted() {
        let (out, report) = ingest_knowledge_base(
            &[rec("A", "cost", "USD", "n/a", None), rec("B", "cost", "USD", "5", Some("yesterday"))],
            &KbFilter::default(),
        );
        assert!(out.is_empty());
        assert_eq!(report.malformed, 2);
    }

    #[test]
    fn property_phrases_keep_acronyms() {
        assert_eq!(property_phrase("Nominal GDP per capita"), "nominal GDP per capita");
        assert_eq!(property_phrase("Annual Revenue"), "annual revenue");
    }

    #[test]
    fn dictionary_ingestion() {
        let out = ingest_dictionary(&[DictionaryRecord {
            phrase: "the cost of average used car".into(),
            value: Decimal::from(20000),
        }])
        .unwrap();
        assert_eq!(out[0].category, Category::Dictionary);
        assert_eq!(out[0].source, Source::Dictionary);
        assert!(ingest_dictionary(&[]).unwrap().is_empty());
        assert!(ingest_dictionary(&[DictionaryRecord {
            phrase: "nothing".into(),
            value: Decimal::ZERO
        }])
        .is_err());
    }

    #[test]
    fn dictionary_ids_distinct() {
        let records: Vec<_> = ["the typical CEO pay", "the cost of average used car", "a cup of coffee"]
            .iter()
            .zip([15_000_000u64, 20_000, 3])
            .map(|(p, v)| DictionaryRecord {
                phrase: p.to_string(),
                value: Decimal::from(v),
            })
            .collect();
        let out = ingest_dictionary(&records).unwrap();
        let ids: HashSet<_> = out.iter().map(|o| o.id.clone()).collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = ReferenceObject::new(Source::Dictionary, "x", Category::Dictionary, Decimal::ONE);
        assert!(matches!(
            ReferenceCorpus::new(vec![a.clone(), a]),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn category_index_lookup() {
        let a = ReferenceObject::new(Source::Dictionary, "x", Category::Dictionary, Decimal::ONE);
        let b = ReferenceObject::new(Source::KnowledgeBase, "y", Category::Cost, Decimal::TEN);
        let corpus = ReferenceCorpus::new(vec![a, b.clone()]).unwrap();
        let costs: Vec<_> = corpus.in_category(Category::Cost).collect();
        assert_eq!(costs, vec![&b]);
        assert_eq!(corpus.get(&b.id), Some(&b));
    }

    #[test]
    fn category_serde_names() {
        for c in Category::ALL {
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(s, format!("\"{}\"", c.name()));
            assert_eq!(Category::from_property(c.name()), Some(c));
        }
    }
}
