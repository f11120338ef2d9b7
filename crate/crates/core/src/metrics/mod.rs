//! Aggregate metrics over abstain records.
//!
//! Positive class is "should abstain" (the proposed answer is wrong):
//! TP = wrong & abstained, TN = correct & answered, FP = correct & abstained,
//! FN = wrong & answered. Aggregation is pure and deterministic: callers
//! hand in records sorted by item id and results are bit-stable.

mod equity;
mod overlap;

pub use equity::{gini, utility, UtilityReport};
pub use overlap::{domain_breakdown, overlap_analysis, DomainGap, OverlapReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::langspace::LanguageCode;
use crate::strategies::AbstainRecord;

pub const ECE_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    EmptyRecords,
    #[error("all records abstained; reliable accuracy is undefined")]
    AllAbstained,
    #[error("{0} records lack abstain probabilities")]
    MissingProbabilities(usize),
    #[error("missing speaker count for {0}")]
    MissingSpeakerCount(LanguageCode),
    #[error("all utilities are zero")]
    AllZeroUtilities,
    #[error("negative utility {0}")]
    NegativeUtility(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Wrong answer, abstained.
    pub tp: usize,
    /// Correct answer, answered.
    pub tn: usize,
    /// Correct answer, abstained.
    pub fp: usize,
    /// Wrong answer, answered.
    pub r#fn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.r#fn
    }
}

pub fn confusion(records: &[AbstainRecord]) -> ConfusionCounts {
    let mut counts = ConfusionCounts::default();
    for record in records {
        match (record.answer_correct, record.abstain) {
            (false, true) => counts.tp += 1,
            (true, false) => counts.tn += 1,
            (true, true) => counts.fp += 1,
            (false, false) => counts.r#fn += 1,
        }
    }
    counts
}

/// A-Acc = (TP + TN) / N.
pub fn abstain_accuracy(records: &[AbstainRecord]) -> Result<f64, MetricsError> {
    let counts = confusion(records);
    let total = counts.total();
    if total == 0 {
        return Err(MetricsError::EmptyRecords);
    }
    Ok((counts.tp + counts.tn) as f64 / total as f64)
}

/// R-Acc = TN / (TN + FN): accuracy over answered items only.
pub fn reliable_accuracy(records: &[AbstainRecord]) -> Result<f64, MetricsError> {
    let counts = confusion(records);
    if counts.total() == 0 {
        return Err(MetricsError::EmptyRecords);
    }
    let answered = counts.tn + counts.r#fn;
    if answered == 0 {
        return Err(MetricsError::AllAbstained);
    }
    Ok(counts.tn as f64 / answered as f64)
}

/// ER = mean of +1 (answered correctly), -1 (answered wrongly), 0 (abstained)
/// = (TN - FN) / N.
pub fn effective_reliability(records: &[AbstainRecord]) -> Result<f64, MetricsError> {
    let counts = confusion(records);
    let total = counts.total();
    if total == 0 {
        return Err(MetricsError::EmptyRecords);
    }
    Ok((counts.tn as f64 - counts.r#fn as f64) / total as f64)
}

/// Expected calibration error of the probabilistic abstain decision, over
/// 10 equal-width bins of the "answer is correct" confidence
/// (1 - abstain-token mass).
pub fn abstain_ece(records: &[AbstainRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let missing = records.iter().filter(|r| r.abstain_prob.is_none()).count();
    if missing > 0 {
        return Err(MetricsError::MissingProbabilities(missing));
    }
    let mut bin_count = [0usize; ECE_BINS];
    let mut bin_conf = [0.0f64; ECE_BINS];
    let mut bin_correct = [0usize; ECE_BINS];
    for record in records {
        let confidence = 1.0 - record.abstain_prob.expect("checked above");
        let bin = ((confidence * ECE_BINS as f64) as usize).min(ECE_BINS - 1);
        bin_count[bin] += 1;
        bin_conf[bin] += confidence;
        bin_correct[bin] += record.answer_correct as usize;
    }
    let total = records.len() as f64;
    let mut ece = 0.0;
    for bin in 0..ECE_BINS {
        if bin_count[bin] == 0 {
            continue;
        }
        let weight = bin_count[bin] as f64 / total;
        let avg_conf = bin_conf[bin] / bin_count[bin] as f64;
        let accuracy = bin_correct[bin] as f64 / bin_count[bin] as f64;
        ece += weight * (accuracy - avg_conf).abs();
    }
    Ok(ece)
}

/// One (strategy, model, dataset, language) evaluation cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub strategy: String,
    pub model: String,
    pub dataset: String,
    pub language: LanguageCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cell: Cell,
    pub a_acc: f64,
    /// Absent (with `all_abstained` set) when no item was answered.
    pub r_acc: Option<f64>,
    pub er: f64,
    /// Absent when records carry no verdict-token probabilities.
    pub abstain_ece: Option<f64>,
    pub confusion: ConfusionCounts,
    pub fp_rate: f64,
    pub fn_rate: f64,
    /// Items excluded for unparseable proposed answers.
    pub unparseable_count: usize,
    /// Verdicts that defaulted to abstain because they parsed to neither
    /// True nor False.
    pub verdict_defaulted: usize,
    pub all_abstained: bool,
    pub record_count: usize,
}

impl MetricsReport {
    pub fn from_records(
        cell: Cell,
        records: &[AbstainRecord],
        unparseable_count: usize,
        verdict_defaulted: usize,
    ) -> Result<Self, MetricsError> {
        let counts = confusion(records);
        let total = counts.total();
        if total == 0 {
            return Err(MetricsError::EmptyRecords);
        }
        let r_acc = match reliable_accuracy(records) {
            Ok(v) => Some(v),
            Err(MetricsError::AllAbstained) => None,
            Err(e) => return Err(e),
        };
        let abstain_ece = match abstain_ece(records) {
            Ok(v) => Some(v),
            Err(MetricsError::MissingProbabilities(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            cell,
            a_acc: abstain_accuracy(records)?,
            all_abstained: r_acc.is_none(),
            r_acc,
            er: effective_reliability(records)?,
            abstain_ece,
            confusion: counts,
            fp_rate: counts.fp as f64 / total as f64,
            fn_rate: counts.r#fn as f64 / total as f64,
            unparseable_count,
            verdict_defaulted,
            record_count: total,
        })
    }
}

#[cfg(test)]
pub(crate) fn synth_record(id: usize, correct: bool, abstain: bool, prob: Option<f64>) -> AbstainRecord {
    AbstainRecord {
        item_id: format!("i{id:05}"),
        language: "en".parse().unwrap(),
        strategy: "test".to_string(),
        proposed_answer: 'A',
        answer_correct: correct,
        abstain,
        abstain_prob: prob,
        raw_verdict: "test".to_string(),
        feedback: None,
        domain_tag: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn records_from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Vec<AbstainRecord> {
        let mut records = Vec::new();
        let mut id = 0;
        for _ in 0..tp {
            records.push(synth_record(id, false, true, None));
            id += 1;
        }
        for _ in 0..tn {
            records.push(synth_record(id, true, false, None));
            id += 1;
        }
        for _ in 0..fp {
            records.push(synth_record(id, true, true, None));
            id += 1;
        }
        for _ in 0..fn_ {
            records.push(synth_record(id, false, false, None));
            id += 1;
        }
        records
    }

    #[test]
    fn abstain_accuracy_direct_formula() {
        let records = records_from_counts(3, 5, 1, 1);
        assert!((abstain_accuracy(&records).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_decisions_score_one() {
        let records = records_from_counts(4, 6, 0, 0);
        assert_eq!(abstain_accuracy(&records).unwrap(), 1.0);
    }

    #[test]
    fn reliable_accuracy_examples() {
        let records = records_from_counts(0, 3, 0, 1);
        assert!((reliable_accuracy(&records).unwrap() - 0.75).abs() < 1e-12);

        let all_answered_correct = records_from_counts(0, 5, 0, 0);
        assert_eq!(reliable_accuracy(&all_answered_correct).unwrap(), 1.0);

        let all_abstained = records_from_counts(2, 0, 3, 0);
        assert_eq!(reliable_accuracy(&all_abstained), Err(MetricsError::AllAbstained));
    }

    #[test]
    fn effective_reliability_examples() {
        let all_abstained = records_from_counts(2, 0, 3, 0);
        assert_eq!(effective_reliability(&all_abstained).unwrap(), 0.0);

        // 2 correct answered, 1 wrong answered, 1 abstained
        let mixed = records_from_counts(1, 2, 0, 1);
        assert!((effective_reliability(&mixed).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_records_error() {
        assert_eq!(abstain_accuracy(&[]), Err(MetricsError::EmptyRecords));
        assert_eq!(effective_reliability(&[]), Err(MetricsError::EmptyRecords));
        assert_eq!(abstain_ece(&[]), Err(MetricsError::EmptyRecords));
    }

    #[test]
    fn ece_perfect_and_inverted() {
        let perfect: Vec<_> = (0..50)
            .map(|i| synth_record(i, true, false, Some(0.0)))
            .collect();
        assert!(abstain_ece(&perfect).unwrap().abs() < 1e-12);

        let inverted: Vec<_> = (0..50)
            .map(|i| synth_record(i, false, false, Some(0.0)))
            .collect();
        assert!((abstain_ece(&inverted).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ece_requires_probabilities() {
        let mut records: Vec<_> = (0..5).map(|i| synth_record(i, true, false, Some(0.2))).collect();
        records.push(synth_record(9, true, false, None));
        assert_eq!(abstain_ece(&records), Err(MetricsError::MissingProbabilities(1)));
    }

    #[test]
    fn report_flags_and_rates() {
        let records = records_from_counts(3, 0, 2, 0);
        let cell = Cell {
            strategy: "s".into(),
            model: "m".into(),
            dataset: "d".into(),
            language: "en".parse().unwrap(),
        };
        let report = MetricsReport::from_records(cell, &records, 2, 1).unwrap();
        assert!(report.all_abstained);
        assert_eq!(report.r_acc, None);
        assert_eq!(report.unparseable_count, 2);
        assert_eq!(report.verdict_defaulted, 1);
        assert!((report.fp_rate - 0.4).abs() < 1e-12);
        assert_eq!(report.fn_rate, 0.0);
    }

    proptest! {
        #[test]
        fn a_acc_complement_identity(flags in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let records: Vec<_> = flags
                .iter()
                .enumerate()
                .map(|(i, (correct, abstain))| synth_record(i, *correct, *abstain, None))
                .collect();
            let counts = confusion(&records);
            let n = counts.total() as f64;
            let a_acc = abstain_accuracy(&records).unwrap();
            let complement = 1.0 - (counts.fp + counts.r#fn) as f64 / n;
            prop_assert!((a_acc - complement).abs() < 1e-15);

            let er = effective_reliability(&records).unwrap();
            let decomposed = (counts.tn as f64 - counts.r#fn as f64) / n;
            prop_assert!((er - decomposed).abs() < 1e-15);
        }
    }
}
