//! Threshold tuning and temperature scaling on validation scores.

use serde::{Deserialize, Serialize};

/// An abstention threshold selected on a validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub strategy: String,
    pub threshold: f64,
    pub tuned_on: String,
    /// All validation scores were identical; the choice is arbitrary.
    #[serde(default)]
    pub degenerate: bool,
}

/// Abstain-accuracy of "abstain iff score < theta" on (score, correct) pairs.
pub fn threshold_a_acc(scored: &[(f64, bool)], theta: f64) -> f64 {
    if scored.is_empty() {
        return 0.0;
    }
    let good = scored
        .iter()
        .filter(|(score, correct)| (*score < theta) == !correct)
        .count();
    good as f64 / scored.len() as f64
}

/// Picks the theta maximizing validation abstain-accuracy over a grid of the
/// unique scores, their midpoints, and a sentinel just above the maximum
/// (so "always abstain" is reachable). Ties resolve toward the smaller theta.
pub fn tune_threshold(strategy: &str, tuned_on: &str, scored: &[(f64, bool)]) -> Option<ThresholdConfig> {
    if scored.is_empty() {
        return None;
    }
    let mut unique: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();

    let degenerate = unique.len() == 1;
    let mut grid = Vec::with_capacity(unique.len() * 2 + 1);
    for window in unique.windows(2) {
        grid.push((window[0] + window[1]) / 2.0);
    }
    grid.extend(unique.iter().copied());
    grid.push(unique.last().unwrap() + 1e-9);
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for &theta in &grid {
        let acc = threshold_a_acc(scored, theta);
        if acc > best.0 + 1e-15 {
            best = (acc, theta);
        }
    }
    Some(ThresholdConfig {
        strategy: strategy.to_string(),
        threshold: best.1,
        tuned_on: tuned_on.to_string(),
        degenerate,
    })
}

/// Fits a temperature-scaling scalar by gradient descent on the negative
/// log-likelihood of the gold label. `samples` pairs each probability vector
/// with the gold index.
pub fn fit_temperature(samples: &[(Vec<f64>, usize)]) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let logits: Vec<(Vec<f64>, usize)> = samples
        .iter()
        .map(|(probs, gold)| {
            let z: Vec<f64> = probs.iter().map(|p| p.max(1e-12).ln()).collect();
            (z, *gold)
        })
        .collect();

    let mut temp: f64 = 1.0;
    let lr = 0.05;
    for _ in 0..500 {
        let mut grad = 0.0;
        for (z, gold) in &logits {
            let scaled: Vec<f64> = z.iter().map(|v| v / temp).collect();
            let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let expectation: f64 = z
                .iter()
                .zip(&exps)
                .map(|(zi, e)| zi * e / total)
                .sum();
            // d(-ln q_gold)/dT = (z_gold - E_q[z]) / T^2
            grad += (z[*gold] - expectation) / (temp * temp);
        }
        grad /= logits.len() as f64;
        temp = (temp - lr * grad).clamp(0.01, 100.0);
    }
    temp
}

/// Applies a fitted temperature to a probability vector.
pub fn apply_temperature(probs: &[f64], temp: f64) -> Vec<f64> {
    let scaled: Vec<f64> = probs.iter().map(|p| p.max(1e-12).ln() / temp).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_grid_optimum_on_two_point_fixture() {
        // correct item scores 0.9, wrong item scores 0.1; any theta in
        // (0.1, 0.9] is optimal and the midpoint 0.5 is the smallest
        // grid candidate achieving it
        let scored = vec![(0.9, true), (0.1, false)];
        let config = tune_threshold("probs", "val", &scored).unwrap();
        assert_eq!(config.threshold, 0.5);
        assert_eq!(threshold_a_acc(&scored, config.threshold), 1.0);
        assert!(!config.degenerate);
    }

    #[test]
    fn all_correct_never_abstains() {
        let scored = vec![(0.2, true), (0.7, true), (0.9, true)];
        let config = tune_threshold("probs", "val", &scored).unwrap();
        assert_eq!(config.threshold, 0.2, "theta = min score");
        assert_eq!(threshold_a_acc(&scored, config.threshold), 1.0);
    }

    #[test]
    fn all_wrong_always_abstains() {
        let scored = vec![(0.2, false), (0.7, false), (0.9, false)];
        let config = tune_threshold("probs", "val", &scored).unwrap();
        assert!(config.threshold > 0.9, "theta above max score");
        assert_eq!(threshold_a_acc(&scored, config.threshold), 1.0);
    }

    #[test]
    fn degenerate_scores_flagged() {
        let scored = vec![(0.5, true), (0.5, false), (0.5, true)];
        let config = tune_threshold("probs", "val", &scored).unwrap();
        assert!(config.degenerate);
        // majority correct: never abstaining wins, theta = the value
        assert_eq!(config.threshold, 0.5);
    }

    #[test]
    fn increasing_theta_never_decreases_abstentions() {
        let scored: Vec<(f64, bool)> = (0..50)
            .map(|i| ((i as f64) / 50.0, i % 3 == 0))
            .collect();
        let count_at = |theta: f64| scored.iter().filter(|(s, _)| *s < theta).count();
        let mut prev = 0;
        for step in 0..=60 {
            let now = count_at(step as f64 / 50.0);
            assert!(now >= prev);
            prev = now;
        }
    }

    #[test]
    fn temperature_fit_sharpens_underconfident_scores() {
        // gold always argmax but probabilities squashed toward uniform:
        // optimal T < 1 sharpens them
        let samples: Vec<(Vec<f64>, usize)> = (0..40)
            .map(|_| (vec![0.4, 0.2, 0.2, 0.2], 0))
            .collect();
        let temp = fit_temperature(&samples);
        assert!(temp < 1.0, "fitted T = {temp}");
        let scaled = apply_temperature(&[0.4, 0.2, 0.2, 0.2], temp);
        assert!(scaled[0] > 0.4);
        assert!((scaled.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn temperature_fit_softens_overconfident_scores() {
        // gold is never the argmax: NLL improves by flattening (T > 1)
        let samples: Vec<(Vec<f64>, usize)> = (0..40)
            .map(|_| (vec![0.9, 0.05, 0.03, 0.02], 1))
            .collect();
        let temp = fit_temperature(&samples);
        assert!(temp > 1.0, "fitted T = {temp}");
    }
}
