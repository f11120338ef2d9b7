//! Judge-based feedback analysis: pairwise quality comparisons and
//! feedback-role classification, with order-bias accounting.
//!
//! Feedback is translated to English by the judge model first, removing the
//! language confound. Pairwise comparisons run in both orders; only
//! order-consistent judgments enter win rates, and the disagreement rate is
//! always reported.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backend::{Backend, GenerationRequest, RequestKind};
use crate::corpus::QAItem;
use crate::langspace::LanguageCode;
use crate::metrics::abstain_accuracy;
use crate::strategies::{render, AbstainRecord, PromptSet};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityKind {
    #[default]
    Relevance,
    Informativeness,
}

impl FromStr for QualityKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relevance" => Ok(QualityKind::Relevance),
            "informativeness" | "informative" => Ok(QualityKind::Informativeness),
            other => Err(HarnessError::Config(format!("unknown quality kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackRole {
    Similar,
    Complementary,
    Conflicting,
    Unrelated,
}

impl fmt::Display for FeedbackRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackRole::Similar => "similar",
            FeedbackRole::Complementary => "complementary",
            FeedbackRole::Conflicting => "conflicting",
            FeedbackRole::Unrelated => "unrelated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResult {
    pub item_id: String,
    pub outcome: JudgeOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum JudgeOutcome {
    Comparison {
        kind: QualityKind,
        /// Absent when the two orderings disagreed.
        winner: Option<Winner>,
        disagreement: bool,
    },
    Role { role: FeedbackRole },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QualitySummary {
    pub left: String,
    pub right: String,
    pub kind: QualityKind,
    pub left_wins: usize,
    pub right_wins: usize,
    pub disagreements: usize,
    pub unparseable: usize,
    pub judged: usize,
}

impl QualitySummary {
    /// Win rate over order-consistent judgments only.
    pub fn left_win_rate(&self) -> Option<f64> {
        let consistent = self.left_wins + self.right_wins;
        (consistent > 0).then(|| self.left_wins as f64 / consistent as f64)
    }

    pub fn disagreement_rate(&self) -> Option<f64> {
        (self.judged > 0).then(|| self.disagreements as f64 / self.judged as f64)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RoleSummary {
    pub strategy: String,
    pub counts: BTreeMap<FeedbackRole, usize>,
    /// Abstain accuracy of the records falling in each role bucket.
    pub a_acc_by_role: BTreeMap<FeedbackRole, f64>,
    pub unparseable: usize,
    pub judged: usize,
}

fn translate_to_english(
    text: &str,
    judge: &dyn Backend,
    prompts: &PromptSet,
) -> Result<String, HarnessError> {
    let prompt = render(&prompts.translate, &[("language", "English"), ("text", text)]);
    let mut req = GenerationRequest::new(prompt, RequestKind::Translation);
    req.hints.language = "en".parse().ok();
    judge
        .generate(&req)
        .map(|resp| resp.text)
        .map_err(|e| HarnessError::Backend(e.to_string()))
}

fn parse_pair_winner(text: &str) -> Option<Winner> {
    for token in text.split(|c: char| !c.is_alphanumeric()) {
        match token {
            "1" => return Some(Winner::Left),
            "2" => return Some(Winner::Right),
            t if t.eq_ignore_ascii_case("first") => return Some(Winner::Left),
            t if t.eq_ignore_ascii_case("second") => return Some(Winner::Right),
            _ => {}
        }
    }
    None
}

fn parse_role(text: &str) -> Option<FeedbackRole> {
    for token in text.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        let lower = token.to_ascii_lowercase();
        match lower.as_str() {
            "a" | "similar" => return Some(FeedbackRole::Similar),
            "b" | "complementary" => return Some(FeedbackRole::Complementary),
            "c" | "conflicting" => return Some(FeedbackRole::Conflicting),
            "d" | "unrelated" => return Some(FeedbackRole::Unrelated),
            _ => {}
        }
    }
    None
}

fn ask(judge: &dyn Backend, prompt: String) -> Result<String, HarnessError> {
    judge
        .generate(&GenerationRequest::new(prompt, RequestKind::Judge))
        .map(|resp| resp.text)
        .map_err(|e| HarnessError::Backend(e.to_string()))
}

/// Compares two feedback texts for one question, evaluating both orderings.
/// `Err` marks an unparseable judgment (counted and excluded by callers).
pub fn judge_pair(
    item: &QAItem,
    answer: char,
    left: &str,
    right: &str,
    kind: QualityKind,
    judge: &dyn Backend,
    prompts: &PromptSet,
) -> Result<JudgeResult, HarnessError> {
    let left_en = translate_to_english(left, judge, prompts)?;
    let right_en = translate_to_english(right, judge, prompts)?;
    let template = match kind {
        QualityKind::Relevance => &prompts.judge_relevance,
        QualityKind::Informativeness => &prompts.judge_informative,
    };
    let question = format!("{}\n{}", item.question, item.choices_block());
    let answer = answer.to_string();
    let base: [(&str, &str); 2] = [("question", question.as_str()), ("answer", answer.as_str())];

    let forward = {
        let mut vars = base.to_vec();
        vars.push(("feedback_1", left_en.as_str()));
        vars.push(("feedback_2", right_en.as_str()));
        parse_pair_winner(&ask(judge, render(template, &vars))?)
    };
    let backward = {
        let mut vars = base.to_vec();
        vars.push(("feedback_1", right_en.as_str()));
        vars.push(("feedback_2", left_en.as_str()));
        parse_pair_winner(&ask(judge, render(template, &vars))?).map(|w| match w {
            Winner::Left => Winner::Right,
            Winner::Right => Winner::Left,
        })
    };

    let outcome = match (forward, backward) {
        (Some(a), Some(b)) if a == b => JudgeOutcome::Comparison {
            kind,
            winner: Some(a),
            disagreement: false,
        },
        (Some(_), Some(_)) => JudgeOutcome::Comparison {
            kind,
            winner: None,
            disagreement: true,
        },
        _ => {
            return Err(HarnessError::UnparseableJudgment(item.item_id.clone()));
        }
    };
    Ok(JudgeResult {
        item_id: item.item_id.clone(),
        outcome,
    })
}

/// Classifies the relationship among a record's (first three) feedback texts.
pub fn judge_role(
    item: &QAItem,
    record: &AbstainRecord,
    judge: &dyn Backend,
    prompts: &PromptSet,
) -> Result<JudgeResult, HarnessError> {
    let bundle = record
        .feedback
        .as_ref()
        .filter(|b| b.len() >= 3)
        .ok_or_else(|| {
            HarnessError::Config(format!("item {} has no 3-feedback bundle", item.item_id))
        })?;
    let mut translated = Vec::with_capacity(3);
    for entry in bundle.feedback.iter().take(3) {
        translated.push(translate_to_english(&entry.text, judge, prompts)?);
    }
    let question = format!("{}\n{}", item.question, item.choices_block());
    let answer = record.proposed_answer.to_string();
    let prompt = render(
        &prompts.judge_role,
        &[
            ("question", question.as_str()),
            ("answer", answer.as_str()),
            ("feedback_1", translated[0].as_str()),
            ("feedback_2", translated[1].as_str()),
            ("feedback_3", translated[2].as_str()),
        ],
    );
    match parse_role(&ask(judge, prompt)?) {
        Some(role) => Ok(JudgeResult {
            item_id: item.item_id.clone(),
            outcome: JudgeOutcome::Role { role },
        }),
        None => Err(HarnessError::UnparseableJudgment(item.item_id.clone())),
    }
}

/// Pairwise quality evaluation between two strategies over shared items.
pub fn quality_summary(
    items: &BTreeMap<(LanguageCode, String), QAItem>,
    left_records: &[AbstainRecord],
    right_records: &[AbstainRecord],
    kind: QualityKind,
    judge: &dyn Backend,
    prompts: &PromptSet,
) -> QualitySummary {
    let left_name = left_records
        .first()
        .map(|r| r.strategy.clone())
        .unwrap_or_default();
    let right_name = right_records
        .first()
        .map(|r| r.strategy.clone())
        .unwrap_or_default();
    let right_by_id: BTreeMap<&str, &AbstainRecord> = right_records
        .iter()
        .map(|r| (r.item_id.as_str(), r))
        .collect();

    let mut summary = QualitySummary {
        left: left_name,
        right: right_name,
        kind,
        ..Default::default()
    };
    for left in left_records {
        let Some(right) = right_by_id.get(left.item_id.as_str()) else {
            continue;
        };
        let Some(item) = items.get(&(left.language, left.item_id.clone())) else {
            continue;
        };
        // compare position-wise first feedback of each bundle
        let (Some(lf), Some(rf)) = (
            left.feedback.as_ref().and_then(|b| b.feedback.first()),
            right.feedback.as_ref().and_then(|b| b.feedback.first()),
        ) else {
            continue;
        };
        summary.judged += 1;
        match judge_pair(item, left.proposed_answer, &lf.text, &rf.text, kind, judge, prompts) {
            Ok(JudgeResult {
                outcome: JudgeOutcome::Comparison { winner, disagreement, .. },
                ..
            }) => match (winner, disagreement) {
                (Some(Winner::Left), _) => summary.left_wins += 1,
                (Some(Winner::Right), _) => summary.right_wins += 1,
                (None, true) => summary.disagreements += 1,
                (None, false) => summary.unparseable += 1,
            },
            Ok(_) => summary.unparseable += 1,
            Err(HarnessError::UnparseableJudgment(_)) => summary.unparseable += 1,
            Err(_) => summary.unparseable += 1,
        }
    }
    summary
}

/// Role distribution for one strategy's bundles, with per-role A-Acc.
pub fn role_summary(
    items: &BTreeMap<(LanguageCode, String), QAItem>,
    records: &[AbstainRecord],
    judge: &dyn Backend,
    prompts: &PromptSet,
) -> RoleSummary {
    let mut summary = RoleSummary {
        strategy: records.first().map(|r| r.strategy.clone()).unwrap_or_default(),
        ..Default::default()
    };
    let mut by_role: BTreeMap<FeedbackRole, Vec<AbstainRecord>> = BTreeMap::new();
    for record in records {
        let Some(item) = items.get(&(record.language, record.item_id.clone())) else {
            continue;
        };
        if record.feedback.as_ref().is_none_or(|b| b.len() < 3) {
            continue;
        }
        summary.judged += 1;
        match judge_role(item, record, judge, prompts) {
            Ok(JudgeResult {
                outcome: JudgeOutcome::Role { role },
                ..
            }) => {
                *summary.counts.entry(role).or_insert(0) += 1;
                by_role.entry(role).or_default().push(record.clone());
            }
            _ => summary.unparseable += 1,
        }
    }
    for (role, role_records) in by_role {
        if let Ok(acc) = abstain_accuracy(&role_records) {
            summary.a_acc_by_role.insert(role, acc);
        }
    }
    summary
}
