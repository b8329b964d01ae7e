//! QA corpora: ingestion, hashing, seeded splitting and sampling.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::util::{nfc, round_half_up, seeded_rng, sha256_hex};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON at byte {offset}: {message}")]
    Json {
        path: String,
        offset: usize,
        message: String,
    },
    #[error("{path}: corpus is empty")]
    Empty { path: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid record {id:?}: {message}")]
    Invalid { id: String, message: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("{0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Squad,
    Osbio,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub source: Source,
}

impl QAPair {
    fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: &str| CorpusError::Invalid {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.question.trim().is_empty() {
            return Err(invalid("question is empty"));
        }
        if self.answers.is_empty() {
            return Err(invalid("no answers"));
        }
        if self.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(invalid("empty answer"));
        }
        Ok(())
    }

    /// First gold answer; corpora guarantee at least one.
    pub fn primary_answer(&self) -> &str {
        &self.answers[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pairs: Vec<QAPair>,
    provenance: Provenance,
}

/// A corpus plus ingestion diagnostics.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    /// SQuAD v2 unanswerable questions that were dropped.
    pub skipped: usize,
    pub warnings: Vec<String>,
}

/// Canonical JSONL serialization; the content hash is taken over these bytes.
fn serialize_pairs(pairs: &[QAPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pairs serialize"));
        out.push('\n');
    }
    out
}

impl Corpus {
    /// Validates every pair and checks id uniqueness.
    pub fn new(pairs: Vec<QAPair>, path: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for p in &pairs {
            p.validate()?;
            if !seen.insert(p.id.as_str()) {
                return Err(CorpusError::DuplicateId(p.id.clone()));
            }
        }
        let content_hash = sha256_hex(serialize_pairs(&pairs));
        Ok(Corpus {
            pairs,
            provenance: Provenance {
                path: path.into(),
                content_hash,
            },
        })
    }

    pub fn pairs(&self) -> &[QAPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn content_hash(&self) -> &str {
        &self.provenance.content_hash
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.id.as_str())
    }

    /// Write the corpus as generic QA JSONL (readable by [`ingest_jsonl`]).
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, serialize_pairs(&self.pairs)).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    fn derive(&self, pairs: Vec<QAPair>) -> Corpus {
        let content_hash = sha256_hex(serialize_pairs(&pairs));
        Corpus {
            pairs,
            provenance: Provenance {
                path: self.provenance.path.clone(),
                content_hash,
            },
        }
    }

    fn select(&self, keep: &[bool], want: bool) -> Corpus {
        self.derive(
            self.pairs
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k == want)
                .map(|(p, _)| p.clone())
                .collect(),
        )
    }
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    line_start + column.saturating_sub(1)
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: Option<String>,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
}

/// Load a SQuAD v1.1 / v2.0 file. Unanswerable v2 questions are skipped and
/// counted; all distinct gold answer texts are kept.
pub fn ingest_squad(path: &Path) -> Result<Ingested, CorpusError> {
    let text = read_file(path)?;
    let file: SquadFile = serde_json::from_str(&text).map_err(|e| CorpusError::Json {
        path: path.display().to_string(),
        offset: byte_offset(&text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if file.data.is_empty() {
        return Err(CorpusError::Empty {
            path: path.display().to_string(),
        });
    }
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for article in file.data {
        let title = article.title.map(|t| nfc(&t));
        for para in article.paragraphs {
            let context = nfc(&para.context);
            for qa in para.qas {
                if qa.is_impossible || qa.answers.is_empty() {
                    skipped += 1;
                    continue;
                }
                let mut answers: Vec<String> = Vec::new();
                for a in qa.answers {
                    let a = nfc(&a.text);
                    if !answers.contains(&a) {
                        answers.push(a);
                    }
                }
                pairs.push(QAPair {
                    id: qa.id,
                    question: nfc(&qa.question),
                    answers,
                    real_context: Some(context.clone()),
                    title: title.clone(),
                    source: Source::Squad,
                });
            }
        }
    }
    let corpus = Corpus::new(pairs, path)?;
    Ok(Ingested {
        corpus,
        skipped,
        warnings: Vec::new(),
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct JsonlRecord {
    #[serde(default)]
    id: Option<String>,
    question: Option<String>,
    #[serde(default)]
    answer: Option<OneOrMany>,
    #[serde(default)]
    answers: Option<OneOrMany>,
    #[serde(default)]
    context: Option<String>,
    #[serde(default)]
    real_context: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    source: Option<Source>,
}

/// Load generic QA JSONL. Recognized fields: `id`, `question`,
/// `answer` or `answers`, `context` (alias `real_context`), `title`, `source`.
/// Records without an id get `<file-stem>:<line>`.
pub fn ingest_jsonl(path: &Path) -> Result<Ingested, CorpusError> {
    let text = read_file(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::Line {
            line: line_no,
            message,
        };
        let rec: JsonlRecord =
            serde_json::from_str(line).map_err(|e| bad(format!("unparsable record: {e}")))?;
        let question = rec
            .question
            .ok_or_else(|| bad("missing field question".into()))?;
        let answers = match rec.answers.or(rec.answer) {
            Some(OneOrMany::One(a)) => vec![a],
            Some(OneOrMany::Many(v)) => v,
            None => return Err(bad("missing field answer".into())),
        };
        let mut dedup: Vec<String> = Vec::new();
        for a in answers {
            let a = nfc(&a);
            if !dedup.contains(&a) {
                dedup.push(a);
            }
        }
        let pair = QAPair {
            id: rec.id.unwrap_or_else(|| format!("{stem}:{line_no}")),
            question: nfc(&question),
            answers: dedup,
            real_context: rec.context.or(rec.real_context).map(|c| nfc(&c)),
            title: rec.title.map(|t| nfc(&t)),
            source: rec.source.unwrap_or(Source::Generic),
        };
        pair.validate().map_err(|e| bad(e.to_string()))?;
        pairs.push(pair);
    }
    let mut warnings = Vec::new();
    if pairs.is_empty() {
        let w = format!("{}: no records", path.display());
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(Ingested {
        corpus: Corpus::new(pairs, path)?,
        skipped: 0,
        warnings,
    })
}

/// Seeded train/test partition with `|test| = round(test_fraction · n)`.
/// Both halves keep the input order.
pub fn split(
    corpus: &Corpus,
    test_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::Argument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if corpus.is_empty() {
        return Err(CorpusError::Argument("cannot split an empty corpus".into()));
    }
    let n = corpus.len();
    let k = round_half_up(test_fraction, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed, "split"));
    let mut is_test = vec![false; n];
    for &i in &order[..k] {
        is_test[i] = true;
    }
    Ok((
        corpus.select(&is_test, false),
        corpus.select(&is_test, true),
    ))
}

/// Uniform sample of `n` pairs without replacement, in original order.
pub fn sample_subset(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if n == 0 {
        return Err(CorpusError::Argument("sample size must be positive".into()));
    }
    if n > corpus.len() {
        return Err(CorpusError::Argument(format!(
            "sample size {n} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.partial_shuffle(&mut seeded_rng(seed, "sample"), n);
    let mut keep = vec![false; corpus.len()];
    for &i in &order[..n] {
        keep[i] = true;
    }
    Ok(corpus.select(&keep, true))
}

/// Count of pairs per source; handy for ingestion summaries.
pub fn source_counts(corpus: &Corpus) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for p in corpus.pairs() {
        *out.entry(format!("{:?}", p.source).to_lowercase())
            .or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn generic(n: usize) -> Corpus {
        let pairs = (0..n)
            .map(|i| QAPair {
                id: format!("q{i}"),
                question: format!("question {i}?"),
                answers: vec![format!("answer {i}")],
                real_context: None,
                title: None,
                source: Source::Generic,
            })
            .collect();
        Corpus::new(pairs, "mem").unwrap()
    }

    #[test]
    fn squad_two_questions_share_context() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.json",
            r#"{"version":"1.1","data":[{"title":"T","paragraphs":[{"context":"C text.","qas":[
                {"id":"a","question":"Q1?","answers":[{"text":"C","answer_start":0},{"text":"C","answer_start":0},{"text":"text","answer_start":2}]},
                {"id":"b","question":"Q2?","answers":[{"text":"text","answer_start":2}]}]}]}]}"#,
        );
        let got = ingest_squad(&p).unwrap();
        let pairs = got.corpus.pairs();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].answers, ["C", "text"]);
        assert_eq!(pairs[0].real_context, pairs[1].real_context);
        assert_eq!(pairs[1].title.as_deref(), Some("T"));
        assert_eq!(got.skipped, 0);
    }

    #[test]
    fn squad_v2_skips_impossible() {
        let dir = tempfile::tempdir().unwrap();
        let qas: Vec<String> = (0..5)
            .map(|i| {
                if i < 3 {
                    format!(r#"{{"id":"x{i}","question":"q{i}?","answers":[{{"text":"a","answer_start":0}}],"is_impossible":false}}"#)
                } else {
                    format!(r#"{{"id":"x{i}","question":"q{i}?","answers":[],"plausible_answers":[{{"text":"a"}}],"is_impossible":true}}"#)
                }
            })
            .collect();
        let body = format!(
            r#"{{"version":"v2.0","data":[{{"title":"X","paragraphs":[{{"context":"a b","qas":[{}]}}]}}]}}"#,
            qas.join(",")
        );
        let got = ingest_squad(&write(dir.path(), "v2.json", &body)).unwrap();
        assert_eq!(got.corpus.len(), 3);
        assert_eq!(got.skipped, 2);
    }

    #[test]
    fn squad_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest_squad(&write(
            dir.path(),
            "bad.json",
            "{\"data\": [\n  {\"title\": }]}",
        ))
        .unwrap_err();
        match err {
            CorpusError::Json { offset, .. } => assert_eq!(offset, 23),
            e => panic!("{e}"),
        }
        let err = ingest_squad(&write(dir.path(), "empty.json", r#"{"data": []}"#)).unwrap_err();
        assert!(matches!(err, CorpusError::Empty { .. }));
    }

    #[test]
    fn jsonl_records_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "bio.jsonl",
            "{\"question\":\"Meiosis usually produces ____ daughter cells.\",\"answer\":\"four haploid\"}\n\n{\"id\":\"z\",\"question\":\"Q\",\"answers\":[\"a\",\"b\"],\"context\":\"ctx\",\"title\":\"t\"}\n",
        );
        let got = ingest_jsonl(&p).unwrap();
        let pairs = got.corpus.pairs();
        assert_eq!(pairs[0].id, "bio:1");
        assert_eq!(pairs[0].answers, ["four haploid"]);
        assert_eq!(pairs[1].id, "z");
        assert_eq!(pairs[1].real_context.as_deref(), Some("ctx"));

        let lines: String = (1..=6)
            .map(|i| format!("{{\"question\":\"q{i}\",\"answer\":\"a\"}}\n"))
            .collect();
        let p = write(
            dir.path(),
            "miss.jsonl",
            &format!("{lines}{{\"question\":\"q7\"}}\n"),
        );
        assert_eq!(
            ingest_jsonl(&p).unwrap_err().to_string(),
            "line 7: missing field answer"
        );

        let p = write(
            dir.path(),
            "garbage.jsonl",
            "{\"question\":\"q\",\"answer\":\"a\"}\nnot json\n",
        );
        assert!(matches!(
            ingest_jsonl(&p).unwrap_err(),
            CorpusError::Line { line: 2, .. }
        ));

        let p = write(
            dir.path(),
            "blank.jsonl",
            "{\"question\":\"  \",\"answer\":\"a\"}\n",
        );
        assert!(matches!(
            ingest_jsonl(&p).unwrap_err(),
            CorpusError::Line { line: 1, .. }
        ));

        let p = write(dir.path(), "dup.jsonl", "{\"id\":\"a\",\"question\":\"q\",\"answer\":\"a\"}\n{\"id\":\"a\",\"question\":\"q\",\"answer\":\"a\"}\n");
        assert!(matches!(
            ingest_jsonl(&p).unwrap_err(),
            CorpusError::DuplicateId(_)
        ));
    }

    #[test]
    fn empty_jsonl_warns() {
        let dir = tempfile::tempdir().unwrap();
        let got = ingest_jsonl(&write(dir.path(), "e.jsonl", "")).unwrap();
        assert!(got.corpus.is_empty());
        assert_eq!(got.warnings.len(), 1);
    }

    #[test]
    fn nfc_at_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "n.jsonl",
            "{\"question\":\"Cafe\u{301}?\",\"answer\":\"e\u{301}\"}\n",
        );
        let got = ingest_jsonl(&p).unwrap();
        assert_eq!(got.corpus.pairs()[0].question, "Caf\u{e9}?");
    }

    #[test]
    fn reingest_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let src = write(
            dir.path(),
            "s.json",
            r#"{"data":[{"title":"Solar_energy","paragraphs":[{"context":"Solar power is the conversion of sunlight.","qas":[{"id":"s1","question":"What?","answers":[{"text":"photoelectric effect"},{"text":"the photoelectric effect"}]}]}]}]}"#,
        );
        let first = ingest_squad(&src).unwrap().corpus;
        let out = dir.path().join("c.jsonl");
        first.write_jsonl(&out).unwrap();
        let second = ingest_jsonl(&out).unwrap().corpus;
        assert_eq!(first.pairs(), second.pairs());
        assert_eq!(first.content_hash(), second.content_hash());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = generic(10);
        let (train, test) = split(&c, 0.1, 7).unwrap();
        assert_eq!((train.len(), test.len()), (9, 1));
        let (train2, test2) = split(&c, 0.1, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        assert!(split(&c, 0.0, 1).is_err());
        assert!(split(&c, 1.0, 1).is_err());
    }

    #[test]
    fn split_seeds_differ_and_partition() {
        let c = generic(100);
        let (tr1, te1) = split(&c, 0.5, 1).unwrap();
        let (_, te2) = split(&c, 0.5, 2).unwrap();
        assert_eq!(te1.len(), 50);
        assert_eq!(te2.len(), 50);
        let ids1: HashSet<_> = te1.ids().collect();
        let ids2: HashSet<_> = te2.ids().collect();
        assert_ne!(ids1, ids2);
        let train: HashSet<_> = tr1.ids().collect();
        assert!(train.is_disjoint(&ids1));
        assert_eq!(train.len() + ids1.len(), 100);
    }

    #[test]
    fn sample_subset_contract() {
        let c = generic(50);
        let all = sample_subset(&c, 50, 3).unwrap();
        assert_eq!(all.pairs(), c.pairs());
        let s = sample_subset(&c, 5, 11).unwrap();
        let universe: Vec<&str> = c.ids().collect();
        for id in s.ids() {
            assert!(universe.contains(&id));
        }
        let positions: Vec<usize> = s
            .ids()
            .map(|id| universe.iter().position(|u| *u == id).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, sample_subset(&c, 5, 11).unwrap());
        let err = sample_subset(&c, 51, 1).unwrap_err().to_string();
        assert!(err.contains("51") && err.contains("50"));
    }

    #[test]
    fn sample_thousand_from_squad_sized_corpus() {
        let c = generic(87_599);
        let s = sample_subset(&c, 1000, 0).unwrap();
        let ids: HashSet<_> = s.ids().collect();
        assert_eq!(ids.len(), 1000);
    }
}
