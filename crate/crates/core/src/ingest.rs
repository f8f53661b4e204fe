//! Loading fact-checking datasets from local files, corpus statistics and
//! seeded train/dev/test splits.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::extract::{extract_entities, extract_numbers, EntityTagger, ExtractError};
use crate::model::{normalize_label, FactCheckArticle, Provenance, VeracityLabel};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: String, column: String },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("statistics need at least one article")]
    NoArticles,
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    BadRatios((f64, f64, f64)),
    #[error(transparent)]
    Extraction(#[from] ExtractError),
}

/// Which source column feeds which article field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldMap {
    /// Row identifier column. Without one, ids are `<dataset>:<line>`.
    pub id: Option<String>,
    pub claim: String,
    pub evidence: String,
    pub explanation: Option<String>,
    pub label: String,
    /// Used when the label column is absent from the file.
    pub default_label: Option<VeracityLabel>,
    /// Dataset name recorded in each article's provenance.
    pub dataset: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            id: Some("claim_id".into()),
            claim: "claim".into(),
            evidence: "main_text".into(),
            explanation: Some("explanation".into()),
            label: "label".into(),
            default_label: None,
            dataset: "pubhealth".into(),
        }
    }
}

/// A source row that could not become an article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line (TSV: record line of the row start).
    pub line: u64,
    pub id: Option<String>,
    pub reason: String,
}

/// Articles and rejects from one file; every data row lands in exactly one.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub articles: Vec<FactCheckArticle>,
    pub rejects: Vec<RejectedRow>,
}

impl LoadReport {
    pub fn rows(&self) -> usize {
        self.articles.len() + self.rejects.len()
    }

    /// Writes the rejects as JSON lines.
    pub fn write_rejects<W: io::Write>(&self, mut sink: W) -> io::Result<()> {
        for r in &self.rejects {
            serde_json::to_writer(&mut sink, r)?;
            sink.write_all(b"\n")?;
        }
        sink.flush()
    }
}

fn open(path: &Path) -> Result<fs::File, IngestError> {
    fs::File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

/// Fails unless every mapped column is present. The label column may be
/// absent when a default label is configured.
fn check_columns(path: &Path, has: &dyn Fn(&str) -> bool, map: &FieldMap, need_evidence: bool) -> Result<(), IngestError> {
    let mut required = vec![&map.claim];
    if need_evidence {
        required.push(&map.evidence);
    }
    if map.default_label.is_none() {
        required.push(&map.label);
    }
    required.extend(map.id.iter().chain(map.explanation.iter()));
    match required.into_iter().find(|c| !has(c)) {
        Some(column) => Err(IngestError::MissingColumn { path: path.display().to_string(), column: column.clone() }),
        None => Ok(()),
    }
}

/// Builds one article from a row, looking fields up by column name.
fn build_article(
    map: &FieldMap,
    line: u64,
    get: &dyn Fn(&str) -> Option<String>,
    shared_evidence: Option<&str>,
) -> Result<FactCheckArticle, RejectedRow> {
    let original_id = map.id.as_deref().and_then(get).map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
    let reject = |reason: String| RejectedRow { line, id: original_id.clone(), reason };
    let label = match (get(&map.label), map.default_label) {
        (Some(raw), _) => normalize_label(&raw),
        (None, Some(default)) => default,
        (None, None) => return Err(reject(format!("missing {:?} field", map.label))),
    };
    let claim = get(&map.claim).unwrap_or_default();
    let evidence = match shared_evidence {
        Some(text) => text.to_string(),
        None => get(&map.evidence).unwrap_or_default(),
    };
    let explanation = map.explanation.as_deref().and_then(get);
    let id = match &original_id {
        Some(id) => format!("{}:{id}", map.dataset),
        None => format!("{}:{line}", map.dataset),
    };
    let source = Provenance {
        dataset: map.dataset.clone(),
        original_id: original_id.clone().unwrap_or_else(|| line.to_string()),
    };
    FactCheckArticle::new(id, claim, evidence, explanation, label, source).map_err(|e| reject(e.to_string()))
}

fn read_tsv(path: &Path, map: &FieldMap, shared_evidence: Option<&str>) -> Result<LoadReport, IngestError> {
    let mut reader = csv::ReaderBuilder::new().delimiter(b'\t').flexible(true).from_reader(open(path)?);
    let header: HashMap<String, usize> = reader
        .byte_headers()
        .map_err(|e| IngestError::Schema { path: path.display().to_string(), message: format!("unreadable header: {e}") })?
        .iter()
        .enumerate()
        .map(|(i, h)| (String::from_utf8_lossy(h).trim().to_string(), i))
        .collect();
    check_columns(path, &|c| header.contains_key(c), map, shared_evidence.is_none())?;
    let mut report = LoadReport::default();
    let mut record = csv::ByteRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => {
                return Err(IngestError::Io { path: path.display().to_string(), source: io::Error::other(e.to_string()) });
            }
            Err(e) => {
                report.rejects.push(RejectedRow { line, id: None, reason: e.to_string() });
                continue;
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        let fields = match record.iter().map(std::str::from_utf8).collect::<Result<Vec<&str>, _>>() {
            Ok(f) => f,
            Err(e) => {
                report.rejects.push(RejectedRow { line, id: None, reason: format!("invalid UTF-8: {e}") });
                continue;
            }
        };
        let get = |name: &str| header.get(name).and_then(|&c| fields.get(c)).map(|s| s.to_string());
        match build_article(map, line, &get, shared_evidence) {
            Ok(a) => report.articles.push(a),
            Err(r) => report.rejects.push(r),
        }
    }
    Ok(report)
}

/// Loads a tab-separated file with a header row.
pub fn load_tsv(path: &Path, map: &FieldMap) -> Result<LoadReport, IngestError> {
    read_tsv(path, map, None)
}

/// JSON-lines claims. Keys are checked per row rather than up front, and a
/// row missing a mapped key other than the label is rejected.
fn read_jsonl_claims(path: &Path, map: &FieldMap, evidence: &str) -> Result<LoadReport, IngestError> {
    let mut report = LoadReport::default();
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let row = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(row)) => row,
            Ok(_) => {
                report.rejects.push(RejectedRow { line: line_no, id: None, reason: "not a JSON object".into() });
                continue;
            }
            Err(e) => {
                report.rejects.push(RejectedRow { line: line_no, id: None, reason: e.to_string() });
                continue;
            }
        };
        if let Err(e) = check_columns(path, &|c| row.contains_key(c), map, false) {
            report.rejects.push(RejectedRow { line: line_no, id: None, reason: e.to_string() });
            continue;
        }
        let get = |name: &str| match row.get(name)? {
            Value::String(s) => Some(s.clone()),
            Value::Null => None,
            other => Some(other.to_string()),
        };
        match build_article(map, line_no, &get, Some(evidence)) {
            Ok(a) => report.articles.push(a),
            Err(r) => report.rejects.push(r),
        }
    }
    Ok(report)
}

/// Pairs every claim with one shared evidence document. Claims come from a
/// TSV file or, when the path ends in `.jsonl`, from JSON lines.
pub fn load_shared_evidence(
    claims_path: &Path,
    evidence_path: &Path,
    map: &FieldMap,
) -> Result<LoadReport, IngestError> {
    let mut evidence = String::new();
    open(evidence_path)?
        .read_to_string(&mut evidence)
        .map_err(|source| IngestError::Io { path: evidence_path.display().to_string(), source })?;
    let evidence = evidence.trim();
    if evidence.is_empty() {
        return Err(IngestError::Schema {
            path: evidence_path.display().to_string(),
            message: "evidence document is empty".into(),
        });
    }
    if claims_path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl_claims(claims_path, map, evidence)
    } else {
        read_tsv(claims_path, map, Some(evidence))
    }
}

/// Keeps articles whose label is in `keep`.
pub fn filter_labels(articles: Vec<FactCheckArticle>, keep: &[VeracityLabel]) -> Vec<FactCheckArticle> {
    articles.into_iter().filter(|a| keep.contains(&a.label())).collect()
}

/// Whitespace-delimited token count.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SectionStats {
    pub avg_tokens: f64,
    pub avg_numbers: f64,
    pub avg_entities: f64,
    pub n_articles: usize,
}

/// Per-section averages over a set of articles. Explanation averages cover
/// only the articles that have one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub claim: SectionStats,
    pub evidence: SectionStats,
    pub explanation: SectionStats,
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tokens: usize,
    numbers: usize,
    entities: usize,
}

fn count(text: &str, tagger: Option<&dyn EntityTagger>) -> Result<Counts, ExtractError> {
    Ok(Counts {
        tokens: token_count(text),
        numbers: extract_numbers(text).len(),
        entities: extract_entities(text, tagger)?.len(),
    })
}

fn section(counts: impl Iterator<Item = Counts>) -> SectionStats {
    let (mut n, mut sum) = (0usize, Counts::default());
    for c in counts {
        n += 1;
        sum.tokens += c.tokens;
        sum.numbers += c.numbers;
        sum.entities += c.entities;
    }
    if n == 0 {
        return SectionStats::default();
    }
    let d = n as f64;
    SectionStats {
        avg_tokens: sum.tokens as f64 / d,
        avg_numbers: sum.numbers as f64 / d,
        avg_entities: sum.entities as f64 / d,
        n_articles: n,
    }
}

/// Average token, number and entity counts per section.
pub fn dataset_stats(
    articles: &[FactCheckArticle],
    tagger: Option<&dyn EntityTagger>,
) -> Result<DatasetStats, IngestError> {
    if articles.is_empty() {
        return Err(IngestError::NoArticles);
    }
    type Row = (Counts, Counts, Option<Counts>);
    let rows: Vec<Row> = articles
        .par_iter()
        .map(|a| -> Result<Row, ExtractError> {
            let explanation = a.explanation().map(|e| count(e, tagger)).transpose()?;
            Ok((count(a.claim(), tagger)?, count(a.evidence(), tagger)?, explanation))
        })
        .collect::<Result<_, _>>()?;
    Ok(DatasetStats {
        claim: section(rows.iter().map(|r| r.0)),
        evidence: section(rows.iter().map(|r| r.1)),
        explanation: section(rows.iter().filter_map(|r| r.2)),
    })
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<FactCheckArticle>,
    pub dev: Vec<FactCheckArticle>,
    pub test: Vec<FactCheckArticle>,
}

/// Partition sizes for `n` items: dev and test get their rounded share,
/// train gets the rest.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize), IngestError> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(IngestError::BadRatios(ratios));
    }
    let dev = ((n as f64 * b).round() as usize).min(n);
    let test = ((n as f64 * c).round() as usize).min(n - dev);
    Ok((n - dev - test, dev, test))
}

/// Shuffles with a seeded ChaCha generator and cuts into train/dev/test.
pub fn split(
    articles: &[FactCheckArticle],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Split, IngestError> {
    let (train, dev, _) = split_sizes(articles.len(), ratios)?;
    let mut order: Vec<usize> = (0..articles.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| articles[i].clone()).collect();
    Ok(Split {
        train: pick(&order[..train]),
        dev: pick(&order[train..train + dev]),
        test: pick(&order[train + dev..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const HEADER: &str = "claim_id\tclaim\tmain_text\texplanation\tlabel\n";

    #[test]
    fn loads_and_filters_labels() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}1\tA claim.\tSome evidence.\tWhy.\tfalse\n2\tB claim.\tMore evidence.\tWhy.\ttrue\n3\tC claim.\tEvidence.\tWhy.\t Mixture \n"
        );
        let report = load_tsv(&write(&dir, "p.tsv", &body), &FieldMap::default()).unwrap();
        assert_eq!(report.articles.len(), 3);
        let kept = filter_labels(report.articles, &VeracityLabel::DATAGEN);
        assert_eq!(kept.iter().map(|a| a.id()).collect::<Vec<_>>(), vec!["pubhealth:1", "pubhealth:3"]);
    }

    #[test]
    fn empty_claim_is_rejected_not_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}1\t \tevidence\twhy\tfalse\n2\tclaim\tevidence\twhy\tfalse\n");
        let report = load_tsv(&write(&dir, "p.tsv", &body), &FieldMap::default()).unwrap();
        assert_eq!(report.articles.len(), 1);
        assert_eq!(report.rejects.len(), 1);
        assert_eq!(report.rejects[0].line, 2);
        assert_eq!(report.rejects[0].id.as_deref(), Some("1"));
        assert_eq!(report.rows(), 2);
        let mut buf = Vec::new();
        report.write_rejects(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(r#"{"line":2,"id":"1","reason":"#));
    }

    #[test]
    fn missing_label_column_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.tsv", "claim_id\tclaim\tmain_text\texplanation\n1\tc\te\tx\n");
        let err = load_tsv(&p, &FieldMap::default()).unwrap_err();
        assert!(matches!(&err, IngestError::MissingColumn { column, .. } if column == "label"));
    }

    #[test]
    fn quoted_fields_may_contain_tabs() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}1\t\"tab\there\"\t\"said \"\"no\"\"\"\twhy\tfalse\n");
        let report = load_tsv(&write(&dir, "p.tsv", &body), &FieldMap::default()).unwrap();
        assert_eq!(report.articles[0].claim(), "tab\there");
        assert_eq!(report.articles[0].evidence(), "said \"no\"");
    }

    #[test]
    fn shared_evidence_tsv_and_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let ev = write(&dir, "ev.txt", "\nVaccines were tested on 43,000 people.\n");
        let map = FieldMap { id: None, explanation: None, default_label: Some(VeracityLabel::False), dataset: "covid".into(), ..FieldMap::default() };
        let claims: String = (1..=5).map(|i| format!("claim number {i}\n")).collect();
        let report = load_shared_evidence(&write(&dir, "c.tsv", &format!("claim\n{claims}")), &ev, &map).unwrap();
        assert_eq!(report.articles.len(), 5);
        assert!(report.articles.iter().all(|a| a.evidence() == "Vaccines were tested on 43,000 people."));
        assert_eq!(report.articles[0].id(), "covid:2");

        let jsonl = "{\"claim\": \"one\"}\n{\"claim\": \"two\", \"label\": \"TRUE\"}\nnot json\n";
        let report = load_shared_evidence(&write(&dir, "c.jsonl", jsonl), &ev, &map).unwrap();
        assert_eq!(report.articles.len(), 2);
        assert_eq!(report.articles[1].label(), VeracityLabel::True);
        assert_eq!(report.rejects.len(), 1);

        let none = load_shared_evidence(&write(&dir, "none.tsv", "claim\n"), &ev, &map).unwrap();
        assert!(none.articles.is_empty());

        let blank = write(&dir, "blank.txt", " \n\t\n");
        assert!(matches!(load_shared_evidence(&write(&dir, "c2.tsv", "claim\nx\n"), &blank, &map), Err(IngestError::Schema { .. })));
    }

    fn article(claim: &str, evidence: &str, explanation: &str) -> FactCheckArticle {
        FactCheckArticle::new("x", claim, evidence, Some(explanation.into()), VeracityLabel::False, Provenance::default()).unwrap()
    }

    #[test]
    fn hand_counted_stats() {
        // 10 tokens, numbers 122,000 and 30, entity London
        let text = "About 122,000 people in London slept outside for 30 nights.";
        let a = article(text, text, text);
        let s = dataset_stats(std::slice::from_ref(&a), None).unwrap();
        for sec in [s.claim, s.evidence, s.explanation] {
            assert_eq!((sec.avg_tokens, sec.avg_numbers, sec.avg_entities, sec.n_articles), (10.0, 2.0, 1.0, 1));
        }
        let twice = dataset_stats(&[a.clone(), a], None).unwrap();
        assert_eq!(twice.claim.avg_tokens, s.claim.avg_tokens);
        assert_eq!(twice.claim.n_articles, 2);
        assert!(matches!(dataset_stats(&[], None), Err(IngestError::NoArticles)));
    }

    #[test]
    fn split_sizes_follow_rounding() {
        assert_eq!(split_sizes(10, (0.8, 0.1, 0.1)).unwrap(), (8, 1, 1));
        assert_eq!(split_sizes(9, (0.8, 0.1, 0.1)).unwrap(), (7, 1, 1));
        assert_eq!(split_sizes(0, (0.8, 0.1, 0.1)).unwrap(), (0, 0, 0));
        assert_eq!(split_sizes(1, (0.0, 0.5, 0.5)).unwrap(), (0, 1, 0));
        assert!(split_sizes(10, (0.8, 0.1, 0.2)).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let articles: Vec<_> = (0..10)
            .map(|i| FactCheckArticle::new(format!("{i}"), "c", "e", None, VeracityLabel::False, Provenance::default()).unwrap())
            .collect();
        let ids = |s: &Split| [&s.train, &s.dev, &s.test].map(|p| p.iter().map(|a| a.id().to_string()).collect::<Vec<_>>());
        let a = split(&articles, (0.8, 0.1, 0.1), 42).unwrap();
        let b = split(&articles, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!(ids(&a), ids(&b));
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (8, 1, 1));
        let mut all: Vec<String> = ids(&a).concat();
        all.sort_by_key(|s| s.parse::<u32>().unwrap());
        assert_eq!(all, (0..10).map(|i| i.to_string()).collect::<Vec<_>>());
    }
}
