//! Utility and equity over per-language performance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::langspace::{LanguageCode, LanguageSpace, Tier};

/// Weighted utility M_tau: weights d_l^tau over normalized speaker shares
/// d_l = n_l / sum(n), themselves normalized to sum to 1. tau = 0 treats
/// languages as equals (plain mean); tau = 1 weights by speaker share.
pub fn utility(
    utilities: &BTreeMap<LanguageCode, f64>,
    tau: f64,
    speakers: &BTreeMap<LanguageCode, u64>,
) -> Result<f64, MetricsError> {
    if utilities.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    if tau == 0.0 {
        return Ok(utilities.values().sum::<f64>() / utilities.len() as f64);
    }
    let mut shares = BTreeMap::new();
    let mut total_speakers = 0.0;
    for code in utilities.keys() {
        let n = *speakers
            .get(code)
            .ok_or(MetricsError::MissingSpeakerCount(*code))? as f64;
        shares.insert(*code, n);
        total_speakers += n;
    }
    let mut weight_sum = 0.0;
    let mut acc = 0.0;
    for (code, value) in utilities {
        let share = shares[code] / total_speakers;
        let weight = share.powf(tau);
        weight_sum += weight;
        acc += weight * value;
    }
    Ok(acc / weight_sum)
}

/// Gini coefficient over utilities sorted in non-decreasing order:
/// G = (1/n) * (n + 1 - 2 * sum((n + 1 - i) * u_i) / sum(u_i)).
pub fn gini(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    if let Some(&bad) = values.iter().find(|v| **v < 0.0) {
        return Err(MetricsError::NegativeUtility(bad));
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Err(MetricsError::AllZeroUtilities);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(idx, u)| (n + 1.0 - (idx + 1) as f64) * u)
        .sum();
    Ok((n + 1.0 - 2.0 * weighted / total) / n)
}

/// Per-language utilities with both weighted means, the Gini coefficient,
/// and resource-tier averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub per_language: BTreeMap<LanguageCode, f64>,
    pub m0: f64,
    pub m1: f64,
    pub gini: f64,
    pub avg_high: Option<f64>,
    pub avg_mid: Option<f64>,
    pub avg_low: Option<f64>,
}

impl UtilityReport {
    pub fn build(
        per_language: BTreeMap<LanguageCode, f64>,
        space: &LanguageSpace,
    ) -> Result<Self, MetricsError> {
        let speakers: BTreeMap<LanguageCode, u64> = space
            .profiles()
            .map(|p| (p.code, p.speaker_count))
            .collect();
        let m0 = utility(&per_language, 0.0, &speakers)?;
        let m1 = utility(&per_language, 1.0, &speakers)?;
        let values: Vec<f64> = per_language.values().copied().collect();
        let gini = gini(&values)?;

        let tier_avg = |tier: Tier| -> Option<f64> {
            let tier_values: Vec<f64> = per_language
                .iter()
                .filter_map(|(code, value)| {
                    let profile = space.profile(*code).ok()?;
                    (profile.resource_tier == tier).then_some(*value)
                })
                .collect();
            (!tier_values.is_empty())
                .then(|| tier_values.iter().sum::<f64>() / tier_values.len() as f64)
        };
        let avg_high = tier_avg(Tier::High);
        let avg_mid = tier_avg(Tier::Mid);
        let avg_low = tier_avg(Tier::Low);
        Ok(Self {
            per_language,
            m0,
            m1,
            gini,
            avg_high,
            avg_mid,
            avg_low,
        })
    }
}
