//! Cross-language abstain overlap and per-domain breakdowns.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{abstain_accuracy, ConfusionCounts};
use crate::langspace::{LanguageCode, LanguageSpace, Tier};
use crate::strategies::AbstainRecord;

/// Venn decomposition of abstain decisions across exactly three languages
/// over a parallel item universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub languages: [LanguageCode; 3],
    pub total_items: usize,
    /// Items abstained only in languages[i].
    pub only: [usize; 3],
    /// Pairwise-only regions: [ab, ac, bc].
    pub pair: [usize; 3],
    pub all_three: usize,
    pub none: usize,
    /// Fraction of items abstained in >= 2 languages among items abstained
    /// in >= 1. Absent when nothing was abstained anywhere.
    pub two_plus_overlap: Option<f64>,
    /// Same numerator over all items.
    pub two_plus_over_all: f64,
    /// Fraction of items abstained in zero or all three languages.
    pub consensus: f64,
}

/// Tabulates the 7 Venn regions of three abstain sets over aligned ids.
/// Ids outside the universe are ignored.
pub fn overlap_analysis(
    universe: &[String],
    decisions: &[(LanguageCode, BTreeSet<String>); 3],
) -> OverlapReport {
    let mut only = [0usize; 3];
    let mut pair = [0usize; 3];
    let mut all_three = 0usize;
    let mut none = 0usize;
    for id in universe {
        let a = decisions[0].1.contains(id);
        let b = decisions[1].1.contains(id);
        let c = decisions[2].1.contains(id);
        match (a, b, c) {
            (true, false, false) => only[0] += 1,
            (false, true, false) => only[1] += 1,
            (false, false, true) => only[2] += 1,
            (true, true, false) => pair[0] += 1,
            (true, false, true) => pair[1] += 1,
            (false, true, true) => pair[2] += 1,
            (true, true, true) => all_three += 1,
            (false, false, false) => none += 1,
        }
    }
    let total = universe.len();
    let two_plus = pair.iter().sum::<usize>() + all_three;
    let any = total - none;
    OverlapReport {
        languages: [decisions[0].0, decisions[1].0, decisions[2].0],
        total_items: total,
        only,
        pair,
        all_three,
        none,
        two_plus_overlap: (any > 0).then(|| two_plus as f64 / any as f64),
        two_plus_over_all: if total > 0 { two_plus as f64 / total as f64 } else { 0.0 },
        consensus: if total > 0 {
            (none + all_three) as f64 / total as f64
        } else {
            0.0
        },
    }
}

/// Per-domain gap between high- and low-resource abstain accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainGap {
    pub tag: String,
    pub avg_high: Option<f64>,
    pub avg_low: Option<f64>,
    /// avg_high - avg_low where both tiers are present.
    pub gap: Option<f64>,
    pub confusion: ConfusionCounts,
}

/// Groups records by domain tag (missing tags under "untagged"), computes
/// per-tier A-Acc averages (mean of per-language accuracies), and sorts by
/// descending gap.
pub fn domain_breakdown(records: &[AbstainRecord], space: &LanguageSpace) -> Vec<DomainGap> {
    let mut by_tag: BTreeMap<&str, BTreeMap<LanguageCode, Vec<&AbstainRecord>>> = BTreeMap::new();
    for record in records {
        let tag = record.domain_tag.as_deref().unwrap_or("untagged");
        by_tag
            .entry(tag)
            .or_default()
            .entry(record.language)
            .or_default()
            .push(record);
    }

    let mut out = Vec::new();
    for (tag, by_lang) in by_tag {
        let mut tier_accs: BTreeMap<Tier, Vec<f64>> = BTreeMap::new();
        let mut counts = ConfusionCounts::default();
        for (language, recs) in &by_lang {
            let owned: Vec<AbstainRecord> = recs.iter().map(|r| (*r).clone()).collect();
            let acc = match abstain_accuracy(&owned) {
                Ok(a) => a,
                Err(_) => continue,
            };
            let c = super::confusion(&owned);
            counts.tp += c.tp;
            counts.tn += c.tn;
            counts.fp += c.fp;
            counts.r#fn += c.r#fn;
            if let Ok(profile) = space.profile(*language) {
                tier_accs.entry(profile.resource_tier).or_default().push(acc);
            }
        }
        let mean = |tier: Tier| -> Option<f64> {
            tier_accs
                .get(&tier)
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        let avg_high = mean(Tier::High);
        let avg_low = mean(Tier::Low);
        let gap = match (avg_high, avg_low) {
            (Some(h), Some(l)) => Some(h - l),
            _ => None,
        };
        out.push(DomainGap {
            tag: tag.to_string(),
            avg_high,
            avg_low,
            gap,
            confusion: counts,
        });
    }
    out.sort_by(|a, b| match (a.gap, b.gap) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.tag.cmp(&b.tag)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.tag.cmp(&b.tag),
    });
    out
}
