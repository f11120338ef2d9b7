//! Multilingual multiple-choice QA ingestion, splits, and alignment.
//!
//! All sources normalize into one canonical JSONL shape
//! (`{id, question, choices: [...], answer, subject?}`); adapters cover the
//! public M-MMLU, M-Hellaswag, and Belebele layouts. Splits shuffle item ids
//! (not row order) with a seeded PRNG so parallel translations of the same
//! questions land in the same partition for every language.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::langspace::LanguageCode;
use crate::rng::SplitMix64;

pub const VALIDATION_TARGET: usize = 200;
pub const TEST_TARGET: usize = 800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    MMmlu,
    MHellaswag,
    Belebele,
    Custom,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::MMmlu => "m_mmlu",
            DatasetKind::MHellaswag => "m_hellaswag",
            DatasetKind::Belebele => "belebele",
            DatasetKind::Custom => "custom",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "m_mmlu" | "mmlu" => Ok(DatasetKind::MMmlu),
            "m_hellaswag" | "hellaswag" => Ok(DatasetKind::MHellaswag),
            "belebele" => Ok(DatasetKind::Belebele),
            "custom" => Ok(DatasetKind::Custom),
            other => Err(CorpusError::UnknownDataset(other.to_string())),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// On-disk layout of an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Mmlu,
    Hellaswag,
    Belebele,
    Canonical,
}

impl FromStr for SourceFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mmlu" => Ok(SourceFormat::Mmlu),
            "hellaswag" => Ok(SourceFormat::Hellaswag),
            "belebele" => Ok(SourceFormat::Belebele),
            "canonical" => Ok(SourceFormat::Canonical),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: char,
    pub text: String,
}

/// One multiple-choice question in one language. `item_id` is shared across
/// translations of the same underlying question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub item_id: String,
    pub dataset: DatasetKind,
    pub language: LanguageCode,
    pub question: String,
    pub choices: Vec<Choice>,
    pub gold: char,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_tag: Option<String>,
}

impl QAItem {
    pub fn labels(&self) -> Vec<char> {
        self.choices.iter().map(|c| c.label).collect()
    }

    /// Choice block for prompt construction: one `L: text` line per choice.
    pub fn choices_block(&self) -> String {
        self.choices
            .iter()
            .map(|c| format!("{}: {}", c.label, c.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn validate(&self, row: usize) -> Result<(), CorpusError> {
        if self.choices.len() < 2 || self.choices.len() > 5 {
            return Err(CorpusError::Parse {
                row,
                message: format!("{} choices (expected 2-5)", self.choices.len()),
            });
        }
        for (i, choice) in self.choices.iter().enumerate() {
            let expected = (b'A' + i as u8) as char;
            if choice.label != expected {
                return Err(CorpusError::Parse {
                    row,
                    message: format!("label {:?} at position {i} (expected {expected:?})", choice.label),
                });
            }
        }
        if !self.labels().contains(&self.gold) {
            return Err(CorpusError::MissingGold { row });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: gold answer not among the choices")]
    MissingGold { row: usize },
    #[error("duplicate item_id {id}")]
    DuplicateItemId { id: String },
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("unknown source format {0}")]
    UnknownFormat(String),
    #[error("empty item list")]
    Empty,
    #[error("items span multiple languages")]
    MixedLanguages,
    #[error("alignment requires at least two languages")]
    NotEnoughLanguages,
}

/// Loads and validates one (dataset, language) JSONL file.
pub fn load_dataset(
    path: &Path,
    format: SourceFormat,
    dataset: DatasetKind,
    language: LanguageCode,
) -> Result<Vec<QAItem>, CorpusError> {
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_jsonl(&content, format, dataset, language)
}

/// Parses JSONL content in any supported layout into validated items.
pub fn parse_jsonl(
    content: &str,
    format: SourceFormat,
    dataset: DatasetKind,
    language: LanguageCode,
) -> Result<Vec<QAItem>, CorpusError> {
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in content.lines().enumerate() {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse_row(line, row, format, dataset, language)?;
        item.validate(row)?;
        if !seen.insert(item.item_id.clone()) {
            return Err(CorpusError::DuplicateItemId { id: item.item_id });
        }
        items.push(item);
    }
    Ok(items)
}

fn parse_err(row: usize, e: impl fmt::Display) -> CorpusError {
    CorpusError::Parse {
        row,
        message: e.to_string(),
    }
}

fn parse_row(
    line: &str,
    row: usize,
    format: SourceFormat,
    dataset: DatasetKind,
    language: LanguageCode,
) -> Result<QAItem, CorpusError> {
    match format {
        SourceFormat::Canonical => {
            #[derive(Deserialize)]
            struct Row {
                id: String,
                question: String,
                choices: Vec<String>,
                answer: String,
                #[serde(default)]
                subject: Option<String>,
            }
            let r: Row = serde_json::from_str(line).map_err(|e| parse_err(row, e))?;
            let gold = single_letter(&r.answer).ok_or(CorpusError::MissingGold { row })?;
            Ok(QAItem {
                item_id: r.id,
                dataset,
                language,
                question: r.question,
                choices: label_choices(r.choices),
                gold,
                domain_tag: r.subject,
            })
        }
        SourceFormat::Mmlu => {
            #[derive(Deserialize)]
            struct Row {
                id: String,
                question: String,
                option_a: String,
                option_b: String,
                #[serde(default)]
                option_c: Option<String>,
                #[serde(default)]
                option_d: Option<String>,
                #[serde(default)]
                option_e: Option<String>,
                answer: String,
                #[serde(default)]
                subject: Option<String>,
            }
            let r: Row = serde_json::from_str(line).map_err(|e| parse_err(row, e))?;
            let mut texts = vec![r.option_a, r.option_b];
            texts.extend([r.option_c, r.option_d, r.option_e].into_iter().flatten());
            let gold = single_letter(&r.answer).ok_or(CorpusError::MissingGold { row })?;
            Ok(QAItem {
                item_id: r.id,
                dataset,
                language,
                question: r.question,
                choices: label_choices(texts),
                gold,
                domain_tag: r.subject,
            })
        }
        SourceFormat::Hellaswag => {
            #[derive(Deserialize)]
            struct Row {
                ind: serde_json::Value,
                ctx: String,
                endings: Vec<String>,
                label: usize,
                #[serde(default)]
                activity_label: Option<String>,
            }
            let r: Row = serde_json::from_str(line).map_err(|e| parse_err(row, e))?;
            if r.label >= r.endings.len() {
                return Err(CorpusError::MissingGold { row });
            }
            let gold = (b'A' + r.label as u8) as char;
            Ok(QAItem {
                item_id: json_id(&r.ind),
                dataset,
                language,
                question: r.ctx,
                choices: label_choices(r.endings),
                gold,
                domain_tag: r.activity_label,
            })
        }
        SourceFormat::Belebele => {
            #[derive(Deserialize)]
            struct Row {
                question_number: serde_json::Value,
                flores_passage: String,
                question: String,
                mc_answer1: String,
                mc_answer2: String,
                mc_answer3: String,
                mc_answer4: String,
                correct_answer_num: serde_json::Value,
            }
            let r: Row = serde_json::from_str(line).map_err(|e| parse_err(row, e))?;
            let num: usize = json_id(&r.correct_answer_num)
                .parse()
                .map_err(|e| parse_err(row, e))?;
            if !(1..=4).contains(&num) {
                return Err(CorpusError::MissingGold { row });
            }
            let gold = (b'A' + (num - 1) as u8) as char;
            Ok(QAItem {
                item_id: json_id(&r.question_number),
                dataset,
                language,
                question: format!("{}\n{}", r.flores_passage, r.question),
                choices: label_choices(vec![r.mc_answer1, r.mc_answer2, r.mc_answer3, r.mc_answer4]),
                gold,
                domain_tag: None,
            })
        }
    }
}

fn label_choices(texts: Vec<String>) -> Vec<Choice> {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| Choice {
            label: (b'A' + i as u8) as char,
            text,
        })
        .collect()
}

fn single_letter(s: &str) -> Option<char> {
    let t = s.trim();
    if t.len() == 1 {
        let c = t.chars().next().unwrap();
        if c.is_ascii_uppercase() {
            return Some(c);
        }
    }
    None
}

fn json_id(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Shortfall marker: the source had fewer items than the 200/800 target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitShortfall {
    pub available: usize,
}

/// Validation/test partition of one (dataset, language) item set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub dataset: DatasetKind,
    pub language: LanguageCode,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<SplitShortfall>,
}

/// Deterministic 200/800 split; sources with fewer than 1000 items fall back
/// to a 1:4 proportional cut. Ids are sorted before shuffling so row order
/// never matters, and the shuffle depends only on the seed, keeping parallel
/// languages aligned.
pub fn make_split(items: &[QAItem], seed: u64) -> Result<Split, CorpusError> {
    if items.is_empty() {
        return Err(CorpusError::Empty);
    }
    let language = items[0].language;
    if items.iter().any(|i| i.language != language) {
        return Err(CorpusError::MixedLanguages);
    }
    let mut ids: Vec<String> = items.iter().map(|i| i.item_id.clone()).collect();
    ids.sort_unstable();
    SplitMix64::new(seed).shuffle(&mut ids);

    let n = ids.len();
    let val_len = VALIDATION_TARGET.min(n / 5);
    let test_len = TEST_TARGET.min(n - val_len);
    let shortfall = if val_len < VALIDATION_TARGET || test_len < TEST_TARGET {
        Some(SplitShortfall { available: n })
    } else {
        None
    };
    let test = ids[val_len..val_len + test_len].to_vec();
    let validation = {
        ids.truncate(val_len);
        ids
    };
    Ok(Split {
        dataset: items[0].dataset,
        language,
        validation,
        test,
        seed,
        shortfall,
    })
}

/// Sorted intersection of test ids across all given splits. An empty
/// intersection is a valid (warning-worthy) result, not an error.
pub fn align_parallel(splits: &[&Split]) -> Result<Vec<String>, CorpusError> {
    if splits.len() < 2 {
        return Err(CorpusError::NotEnoughLanguages);
    }
    let mut common: BTreeSet<&String> = splits[0].test.iter().collect();
    for split in &splits[1..] {
        let ids: BTreeSet<&String> = split.test.iter().collect();
        common = common.intersection(&ids).copied().collect();
    }
    Ok(common.into_iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang(s: &str) -> LanguageCode {
        s.parse().unwrap()
    }

    fn item(id: &str, language: &str) -> QAItem {
        QAItem {
            item_id: id.to_string(),
            dataset: DatasetKind::Custom,
            language: lang(language),
            question: format!("q{id}"),
            choices: label_choices(vec!["w".into(), "x".into(), "y".into(), "z".into()]),
            gold: 'A',
            domain_tag: None,
        }
    }

    #[test]
    fn canonical_row_round_trips() {
        let line = r#"{"id":"q1","question":"2+2?","choices":["3","4","5","6"],"answer":"B","subject":"math"}"#;
        let items = parse_jsonl(line, SourceFormat::Canonical, DatasetKind::Custom, lang("en")).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].gold, 'B');
        assert_eq!(items[0].labels(), vec!['A', 'B', 'C', 'D']);
        assert_eq!(items[0].domain_tag.as_deref(), Some("math"));

        let json = serde_json::to_string(&items[0]).unwrap();
        let back: QAItem = serde_json::from_str(&json).unwrap();
        assert_eq!(back, items[0]);
    }

    #[test]
    fn gold_outside_choices_is_missing_gold() {
        let line = r#"{"id":"q1","question":"?","choices":["a","b","c","d"],"answer":"E"}"#;
        let err = parse_jsonl(line, SourceFormat::Canonical, DatasetKind::Custom, lang("en")).unwrap_err();
        assert!(matches!(err, CorpusError::MissingGold { row: 1 }));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let lines = r#"{"id":"q1","question":"?","choices":["a","b"],"answer":"A"}
{"id":"q1","question":"??","choices":["a","b"],"answer":"B"}"#;
        let err = parse_jsonl(lines, SourceFormat::Canonical, DatasetKind::Custom, lang("en")).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateItemId { .. }));
    }

    #[test]
    fn malformed_row_is_indexed() {
        let lines = "{\"id\":\"q1\",\"question\":\"?\",\"choices\":[\"a\",\"b\"],\"answer\":\"A\"}\nnot json";
        let err = parse_jsonl(lines, SourceFormat::Canonical, DatasetKind::Custom, lang("en")).unwrap_err();
        match err {
            CorpusError::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mmlu_adapter() {
        let line = r#"{"id":"astro/1","question":"?","option_a":"a","option_b":"b","option_c":"c","option_d":"d","answer":"C","subject":"astronomy"}"#;
        let items = parse_jsonl(line, SourceFormat::Mmlu, DatasetKind::MMmlu, lang("fr")).unwrap();
        assert_eq!(items[0].gold, 'C');
        assert_eq!(items[0].choices.len(), 4);
        assert_eq!(items[0].domain_tag.as_deref(), Some("astronomy"));
    }

    #[test]
    fn hellaswag_adapter_maps_label_to_letter() {
        let line = r#"{"ind":24,"ctx":"A man sits","endings":["e0","e1","e2","e3"],"label":2,"activity_label":"Sitting"}"#;
        let items = parse_jsonl(line, SourceFormat::Hellaswag, DatasetKind::MHellaswag, lang("ta")).unwrap();
        assert_eq!(items[0].item_id, "24");
        assert_eq!(items[0].gold, 'C');
    }

    #[test]
    fn belebele_adapter_prepends_passage() {
        let line = r#"{"question_number":7,"flores_passage":"Passage.","question":"Q?","mc_answer1":"1","mc_answer2":"2","mc_answer3":"3","mc_answer4":"4","correct_answer_num":"3"}"#;
        let items = parse_jsonl(line, SourceFormat::Belebele, DatasetKind::Belebele, lang("bn")).unwrap();
        assert_eq!(items[0].gold, 'C');
        assert!(items[0].question.starts_with("Passage."));
    }

    #[test]
    fn split_exact_sizes() {
        let items: Vec<QAItem> = (0..1000).map(|i| item(&format!("i{i:04}"), "en")).collect();
        let split = make_split(&items, 7).unwrap();
        assert_eq!(split.validation.len(), 200);
        assert_eq!(split.test.len(), 800);
        assert!(split.shortfall.is_none());
        let val: BTreeSet<_> = split.validation.iter().collect();
        let test: BTreeSet<_> = split.test.iter().collect();
        assert!(val.is_disjoint(&test));
    }

    #[test]
    fn split_proportional_fallback() {
        let items: Vec<QAItem> = (0..500).map(|i| item(&format!("i{i:04}"), "en")).collect();
        let split = make_split(&items, 7).unwrap();
        assert_eq!(split.validation.len(), 100);
        assert_eq!(split.test.len(), 400);
        assert_eq!(split.shortfall, Some(SplitShortfall { available: 500 }));
    }

    #[test]
    fn split_is_deterministic_and_alignment_stable() {
        let en: Vec<QAItem> = (0..300).map(|i| item(&format!("i{i:03}"), "en")).collect();
        // same ids, reversed row order, different language
        let ta: Vec<QAItem> = (0..300).rev().map(|i| item(&format!("i{i:03}"), "ta")).collect();

        let s1 = make_split(&en, 11).unwrap();
        let s2 = make_split(&en, 11).unwrap();
        assert_eq!(s1, s2);

        let s3 = make_split(&ta, 11).unwrap();
        assert_eq!(s1.validation, s3.validation);
        assert_eq!(s1.test, s3.test);

        let other_seed = make_split(&en, 12).unwrap();
        assert_ne!(s1.validation, other_seed.validation);
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        fn arb_item() -> impl Strategy<Value = QAItem> {
            (
                "[a-z0-9]{1,10}",
                ".{0,80}",
                proptest::collection::vec(".{0,40}", 2..=5),
                any::<usize>(),
                proptest::option::of("[a-z ]{1,16}"),
            )
                .prop_map(|(id, question, texts, gold_pick, domain_tag)| {
                    let gold = (b'A' + (gold_pick % texts.len()) as u8) as char;
                    QAItem {
                        item_id: id,
                        dataset: DatasetKind::Custom,
                        language: "fr".parse().unwrap(),
                        question,
                        choices: label_choices(texts),
                        gold,
                        domain_tag,
                    }
                })
        }

        proptest! {
            #[test]
            fn serialized_item_lists_round_trip(items in proptest::collection::vec(arb_item(), 0..20)) {
                let json = serde_json::to_string(&items).unwrap();
                let back: Vec<QAItem> = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(back, items);
            }
        }
    }

    #[test]
    fn align_intersects_test_ids() {
        let mk = |ids: &[&str], language: &str| Split {
            dataset: DatasetKind::Custom,
            language: lang(language),
            validation: vec![],
            test: ids.iter().map(|s| s.to_string()).collect(),
            seed: 0,
            shortfall: None,
        };
        let a = mk(&["1", "2", "3"], "en");
        let b = mk(&["2", "3", "4"], "ta");
        let c = mk(&["3", "2", "9"], "bn");
        assert_eq!(align_parallel(&[&a, &b, &c]).unwrap(), vec!["2", "3"]);

        let d = mk(&["7"], "fr");
        assert!(align_parallel(&[&a, &d]).unwrap().is_empty());
        assert!(matches!(align_parallel(&[&a]), Err(CorpusError::NotEnoughLanguages)));
    }
}
