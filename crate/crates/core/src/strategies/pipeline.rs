//! Per-item execution of every strategy.
#![allow(clippy::result_large_err)] // Err is the per-item Outcome, not an error type
//!
//! Items run independently (parallel under the `parallel` feature) and are
//! processed in item-id order, so record emission is deterministic. Failures
//! never abort a cell: each one becomes an [`ItemFailure`].

use std::collections::BTreeMap;

use crate::backend::{GenerationRequest, GenerationResponse, RequestHints, RequestKind};
use crate::corpus::QAItem;
use crate::langspace::{LanguageCode, RelatednessMode, SelectedLanguage};
use crate::par;
use crate::rng::{derive_seed, SplitMix64};

use super::extract;
use super::prompts::{render, render_with_feedback};
use super::threshold::{apply_temperature, fit_temperature, tune_threshold, ThresholdConfig};
use super::{
    AbstainRecord, FeedbackBundle, FeedbackEntry, FeedbackLanguageMode, ItemFailure, Strategy,
    StrategyContext, StrategyError, StrategyRunOutput, StrategySpec, FEEDBACK_TEMPERATURE,
};

struct Proposal {
    label: char,
    correct: bool,
}

struct Verdict {
    abstain: bool,
    abstain_prob: Option<f64>,
    raw: String,
    unparseable: bool,
}

enum Outcome {
    Scored {
        record: AbstainRecord,
        verdict_unparseable: bool,
    },
    Failed(ItemFailure),
}

fn failure(item: &QAItem, stage: &str, reason: impl ToString) -> Outcome {
    Outcome::Failed(ItemFailure {
        item_id: item.item_id.clone(),
        stage: stage.to_string(),
        reason: reason.to_string(),
    })
}

/// MCQA question text as the downstream prompts see it: stem plus the
/// lettered options, matching how the source datasets inline choices.
fn question_block(item: &QAItem) -> String {
    format!("{}\n{}", item.question, item.choices_block())
}

fn answer_hints(item: &QAItem) -> RequestHints {
    RequestHints {
        language: Some(item.language),
        gold_label: Some(item.gold),
        labels: item.labels(),
        answer_correct: None,
    }
}

fn decision_hints(item: &QAItem, correct: bool, language: Option<LanguageCode>) -> RequestHints {
    RequestHints {
        language: language.or(Some(item.language)),
        gold_label: None,
        labels: vec![],
        answer_correct: Some(correct),
    }
}

fn argmax_label(scores: &BTreeMap<String, f64>, labels: &[char]) -> Option<char> {
    let mut best: Option<(char, f64)> = None;
    for (token, lp) in scores {
        let t = token.trim();
        if t.len() != 1 {
            continue;
        }
        let c = t.chars().next().unwrap().to_ascii_uppercase();
        if labels.contains(&c) && best.is_none_or(|(_, b)| *lp > b) {
            best = Some((c, *lp));
        }
    }
    best.map(|(c, _)| c)
}

fn extract_label(resp: &GenerationResponse, labels: &[char]) -> Option<char> {
    extract::extract_answer(&resp.text, labels)
        .or_else(|| resp.per_choice_logprobs.as_ref().and_then(|m| argmax_label(m, labels)))
}

/// Step 1: greedy proposed answer.
fn propose(item: &QAItem, ctx: &StrategyContext<'_>) -> Result<Proposal, Outcome> {
    let prompt = render(
        &ctx.prompts.answer,
        &[("question", item.question.as_str()), ("choices", &item.choices_block())],
    );
    let req = GenerationRequest::new(prompt, RequestKind::Answer)
        .with_logprobs()
        .with_hints(answer_hints(item));
    let resp = ctx
        .answerer
        .generate(&req)
        .map_err(|e| failure(item, "answer", e))?;
    match extract_label(&resp, &item.labels()) {
        Some(label) => Ok(Proposal {
            label,
            correct: label == item.gold,
        }),
        None => Err(failure(
            item,
            "answer",
            format!("unparseable answer: {:?}", head(&resp.text)),
        )),
    }
}

fn head(text: &str) -> String {
    text.chars().take(60).collect()
}

fn verdict_from_response(resp: &GenerationResponse) -> Verdict {
    let parsed = extract::parse_verdict(&resp.text);
    // "False" means the answer is judged wrong, so abstain; unparseable
    // verdicts default to abstaining and are counted.
    let abstain = !parsed.unwrap_or(false);
    let abstain_prob = resp.per_choice_logprobs.as_ref().and_then(|tokens| {
        let mut p_true: f64 = 0.0;
        let mut p_false: f64 = 0.0;
        let mut saw = false;
        for (token, lp) in tokens {
            let t = token.trim();
            if t.eq_ignore_ascii_case("true") {
                p_true = p_true.max(lp.exp());
                saw = true;
            } else if t.eq_ignore_ascii_case("false") {
                p_false = p_false.max(lp.exp());
                saw = true;
            }
        }
        (saw && p_true + p_false > 0.0).then(|| p_false / (p_true + p_false))
    });
    Verdict {
        abstain,
        abstain_prob,
        raw: resp.text.clone(),
        unparseable: parsed.is_none(),
    }
}

fn build_record(
    item: &QAItem,
    strategy_id: &str,
    proposal: &Proposal,
    verdict: Verdict,
    feedback: Option<FeedbackBundle>,
) -> Outcome {
    Outcome::Scored {
        record: AbstainRecord {
            item_id: item.item_id.clone(),
            language: item.language,
            strategy: strategy_id.to_string(),
            proposed_answer: proposal.label,
            answer_correct: proposal.correct,
            abstain: verdict.abstain,
            abstain_prob: verdict.abstain_prob,
            raw_verdict: verdict.raw,
            feedback,
            domain_tag: item.domain_tag.clone(),
        },
        verdict_unparseable: verdict.unparseable,
    }
}

// ---------------------------------------------------------------------------
// feedback strategies
// ---------------------------------------------------------------------------

fn native_selected(item: &QAItem, ctx: &StrategyContext<'_>) -> Result<SelectedLanguage, String> {
    ctx.space
        .profile(item.language)
        .map(|p| SelectedLanguage::resolved(p.display_name.clone(), item.language))
        .map_err(|e| e.to_string())
}

fn feedback_languages(
    mode: FeedbackLanguageMode,
    item: &QAItem,
    spec: &StrategySpec,
    ctx: &StrategyContext<'_>,
) -> Result<Vec<SelectedLanguage>, String> {
    match mode {
        FeedbackLanguageMode::MonoNative => {
            let native = native_selected(item, ctx)?;
            Ok(vec![native; spec.k])
        }
        FeedbackLanguageMode::MonoEnglish => {
            let english = SelectedLanguage {
                name: "English".to_string(),
                code: "en".parse().ok(),
            };
            Ok(vec![english; spec.k])
        }
        FeedbackLanguageMode::MultiRandom => {
            let mut pool: Vec<LanguageCode> =
                ctx.space.codes().filter(|c| *c != item.language).collect();
            if pool.len() < spec.k {
                return Err(format!("pool of {} languages < k = {}", pool.len(), spec.k));
            }
            let mut rng = SplitMix64::new(derive_seed(
                ctx.seed,
                &["multi_random", &item.item_id, item.language.as_str()],
            ));
            rng.shuffle(&mut pool);
            pool.truncate(spec.k);
            pool.into_iter()
                .map(|code| {
                    ctx.space
                        .profile(code)
                        .map(|p| SelectedLanguage::resolved(p.display_name.clone(), code))
                        .map_err(|e| e.to_string())
                })
                .collect()
        }
        FeedbackLanguageMode::MultiRelated(mode) => ctx
            .space
            .select_feedback_languages(item.language, mode, spec.k)
            .map_err(|e| e.to_string()),
        FeedbackLanguageMode::LangVar => ctx
            .space
            .select_feedback_languages(item.language, RelatednessMode::Default, spec.k)
            .map_err(|e| e.to_string()),
    }
}

/// Step 2: one feedback sample per language at temperature 0.7.
fn generate_feedback(
    item: &QAItem,
    proposal: &Proposal,
    languages: &[SelectedLanguage],
    ctx: &StrategyContext<'_>,
) -> Result<FeedbackBundle, Outcome> {
    let question = question_block(item);
    let answer = proposal.label.to_string();
    let mut feedback = Vec::with_capacity(languages.len());
    for (position, lang) in languages.iter().enumerate() {
        let prompt = render(
            &ctx.prompts.feedback,
            &[
                ("question", question.as_str()),
                ("answer", answer.as_str()),
                ("language", lang.name.as_str()),
            ],
        );
        let req = GenerationRequest::new(prompt, RequestKind::Feedback)
            .with_temperature(FEEDBACK_TEMPERATURE, position as u32)
            .with_hints(decision_hints(item, proposal.correct, lang.code));
        let resp = ctx
            .feedback
            .generate(&req)
            .map_err(|e| failure(item, "feedback", e))?;
        feedback.push(FeedbackEntry {
            language_name: lang.name.clone(),
            language: lang.code,
            text: resp.text,
        });
    }
    Ok(FeedbackBundle {
        item_id: item.item_id.clone(),
        feedback,
    })
}

/// `lang var.` ablation: one native feedback, translated into each related
/// language, so content is constant while language varies.
fn lang_var_bundle(
    item: &QAItem,
    proposal: &Proposal,
    languages: &[SelectedLanguage],
    ctx: &StrategyContext<'_>,
) -> Result<FeedbackBundle, Outcome> {
    let native = native_selected(item, ctx).map_err(|e| failure(item, "feedback", e))?;
    let base = generate_feedback(item, proposal, &[native], ctx)?;
    let base_text = &base.feedback[0].text;

    let mut feedback = Vec::with_capacity(languages.len());
    for lang in languages {
        let prompt = render(
            &ctx.prompts.translate,
            &[("language", lang.name.as_str()), ("text", base_text.as_str())],
        );
        let req = GenerationRequest::new(prompt, RequestKind::Translation)
            .with_hints(decision_hints(item, proposal.correct, lang.code));
        let resp = ctx
            .feedback
            .generate(&req)
            .map_err(|e| failure(item, "translate", e))?;
        feedback.push(FeedbackEntry {
            language_name: lang.name.clone(),
            language: lang.code,
            text: resp.text,
        });
    }
    Ok(FeedbackBundle {
        item_id: item.item_id.clone(),
        feedback,
    })
}

/// Step 3: the abstain decision from the feedback bundle.
fn decide_with_feedback(
    item: &QAItem,
    proposal: &Proposal,
    bundle: &FeedbackBundle,
    ctx: &StrategyContext<'_>,
) -> Result<Verdict, Outcome> {
    let question = question_block(item);
    let answer = proposal.label.to_string();
    let prompt = render_with_feedback(
        &ctx.prompts.verdict,
        &[("question", question.as_str()), ("answer", answer.as_str())],
        &bundle.texts(),
    );
    let req = GenerationRequest::new(prompt, RequestKind::Verdict)
        .with_logprobs()
        .with_hints(decision_hints(item, proposal.correct, None));
    let resp = ctx
        .answerer
        .generate(&req)
        .map_err(|e| failure(item, "verdict", e))?;
    Ok(verdict_from_response(&resp))
}

fn feedback_outcome(
    mode: FeedbackLanguageMode,
    spec: &StrategySpec,
    item: &QAItem,
    ctx: &StrategyContext<'_>,
) -> Outcome {
    let proposal = match propose(item, ctx) {
        Ok(p) => p,
        Err(out) => return out,
    };
    let languages = match feedback_languages(mode, item, spec, ctx) {
        Ok(l) => l,
        Err(reason) => return failure(item, "select_languages", reason),
    };
    let bundle = match mode {
        FeedbackLanguageMode::LangVar => lang_var_bundle(item, &proposal, &languages, ctx),
        _ => generate_feedback(item, &proposal, &languages, ctx),
    };
    let bundle = match bundle {
        Ok(b) => b,
        Err(out) => return out,
    };
    match decide_with_feedback(item, &proposal, &bundle, ctx) {
        Ok(verdict) => build_record(item, &spec.id(), &proposal, verdict, Some(bundle)),
        Err(out) => out,
    }
}

// ---------------------------------------------------------------------------
// prompting baselines
// ---------------------------------------------------------------------------

fn reflect_outcome(spec: &StrategySpec, item: &QAItem, ctx: &StrategyContext<'_>) -> Outcome {
    let proposal = match propose(item, ctx) {
        Ok(p) => p,
        Err(out) => return out,
    };
    let prompt = render(
        &ctx.prompts.reflect,
        &[
            ("question", question_block(item).as_str()),
            ("answer", proposal.label.to_string().as_str()),
        ],
    );
    let req = GenerationRequest::new(prompt, RequestKind::Verdict)
        .with_logprobs()
        .with_hints(decision_hints(item, proposal.correct, None));
    match ctx.answerer.generate(&req) {
        Ok(resp) => {
            let verdict = verdict_from_response(&resp);
            build_record(item, &spec.id(), &proposal, verdict, None)
        }
        Err(e) => failure(item, "verdict", e),
    }
}

fn moreinfo_outcome(spec: &StrategySpec, item: &QAItem, ctx: &StrategyContext<'_>) -> Outcome {
    let proposal = match propose(item, ctx) {
        Ok(p) => p,
        Err(out) => return out,
    };
    let prompt = render(
        &ctx.prompts.moreinfo,
        &[
            ("question", question_block(item).as_str()),
            ("answer", proposal.label.to_string().as_str()),
        ],
    );
    let req = GenerationRequest::new(prompt, RequestKind::MoreInfo)
        .with_hints(decision_hints(item, proposal.correct, None));
    match ctx.answerer.generate(&req) {
        Ok(resp) => {
            let parsed = extract::parse_yes_no(&resp.text);
            let verdict = Verdict {
                // needing more information implies abstaining
                abstain: parsed.unwrap_or(true),
                abstain_prob: None,
                raw: resp.text,
                unparseable: parsed.is_none(),
            };
            build_record(item, &spec.id(), &proposal, verdict, None)
        }
        Err(e) => failure(item, "moreinfo", e),
    }
}

fn backtranslation_outcome(spec: &StrategySpec, item: &QAItem, ctx: &StrategyContext<'_>) -> Outcome {
    let proposal = match propose(item, ctx) {
        Ok(p) => p,
        Err(out) => return out,
    };
    let english: Option<LanguageCode> = "en".parse().ok();

    // one decision per item id, shared across languages; the lock is held
    // through the computation so every language sees the same value
    let mut shared = ctx.shared_decisions.lock().expect("decision map poisoned");
    if let Some(&abstain) = shared.get(&item.item_id) {
        let verdict = Verdict {
            abstain,
            abstain_prob: None,
            raw: format!("decision={abstain} (shared)"),
            unparseable: false,
        };
        return build_record(item, &spec.id(), &proposal, verdict, None);
    }

    let translate_prompt = render(
        &ctx.prompts.translate,
        &[("language", "English"), ("text", question_block(item).as_str())],
    );
    let translate_req = GenerationRequest::new(translate_prompt, RequestKind::Translation)
        .with_hints(decision_hints(item, proposal.correct, english));
    let translated = match ctx.answerer.generate(&translate_req) {
        Ok(resp) => resp.text,
        Err(e) => return failure(item, "translate", e),
    };

    let verdict_prompt = render(
        &ctx.prompts.reflect,
        &[
            ("question", translated.as_str()),
            ("answer", proposal.label.to_string().as_str()),
        ],
    );
    let verdict_req = GenerationRequest::new(verdict_prompt, RequestKind::Verdict)
        .with_logprobs()
        .with_hints(decision_hints(item, proposal.correct, english));
    match ctx.answerer.generate(&verdict_req) {
        Ok(resp) => {
            let verdict = verdict_from_response(&resp);
            shared.insert(item.item_id.clone(), verdict.abstain);
            build_record(item, &spec.id(), &proposal, verdict, None)
        }
        Err(e) => failure(item, "verdict", e),
    }
}

fn conflict_outcome(spec: &StrategySpec, item: &QAItem, ctx: &StrategyContext<'_>) -> Outcome {
    let proposal = match propose(item, ctx) {
        Ok(p) => p,
        Err(out) => return out,
    };
    let prompt = render(
        &ctx.prompts.answer,
        &[("question", item.question.as_str()), ("choices", &item.choices_block())],
    );
    // a second opinion: a distinct model when configured, otherwise a
    // sampled chain from the same model
    let has_second_model = ctx.feedback.model_id() != ctx.answerer.model_id();
    let second_backend = if has_second_model { ctx.feedback } else { ctx.answerer };
    let mut req = GenerationRequest::new(prompt, RequestKind::Answer)
        .with_logprobs()
        .with_hints(answer_hints(item));
    if !has_second_model {
        req = req.with_temperature(FEEDBACK_TEMPERATURE, 1);
    }
    match second_backend.generate(&req) {
        Ok(resp) => match extract_label(&resp, &item.labels()) {
            Some(second) => {
                let verdict = Verdict {
                    abstain: second != proposal.label,
                    abstain_prob: None,
                    raw: format!("second={second}"),
                    unparseable: false,
                };
                build_record(item, &spec.id(), &proposal, verdict, None)
            }
            None => {
                let verdict = Verdict {
                    abstain: true,
                    abstain_prob: None,
                    raw: format!("second unparseable: {:?}", head(&resp.text)),
                    unparseable: true,
                };
                build_record(item, &spec.id(), &proposal, verdict, None)
            }
        },
        Err(e) => failure(item, "second_answer", e),
    }
}

// ---------------------------------------------------------------------------
// threshold strategies
// ---------------------------------------------------------------------------

struct Scored {
    proposal: Proposal,
    score: f64,
    detail: String,
    unparseable: bool,
}

fn score_item(
    strategy: Strategy,
    spec: &StrategySpec,
    item: &QAItem,
    ctx: &StrategyContext<'_>,
    temperature_scale: Option<f64>,
) -> Result<Scored, Outcome> {
    let proposal = propose(item, ctx)?;
    let labels = item.labels();
    match strategy {
        Strategy::Probs | Strategy::Temp => {
            let prompt = render(
                &ctx.prompts.answer,
                &[("question", item.question.as_str()), ("choices", &item.choices_block())],
            );
            let scores = ctx
                .answerer
                .score_choices(&prompt, &labels, &answer_hints(item))
                .map_err(|e| failure(item, "score", e))?;
            let ordered: Vec<f64> = labels.iter().map(|l| scores.get(l).copied().unwrap_or(0.0)).collect();
            let final_probs = match temperature_scale {
                Some(temp) => apply_temperature(&ordered, temp),
                None => ordered,
            };
            let score = final_probs.iter().cloned().fold(0.0, f64::max);
            Ok(Scored {
                proposal,
                score,
                detail: format!("max_prob={score:.4}"),
                unparseable: false,
            })
        }
        Strategy::AskCalibration => {
            let prompt = render(
                &ctx.prompts.ask_calibration,
                &[
                    ("question", item.question.as_str()),
                    ("choices", item.choices_block().as_str()),
                    ("answer", proposal.label.to_string().as_str()),
                ],
            );
            let req = GenerationRequest::new(prompt, RequestKind::Confidence)
                .with_hints(decision_hints(item, proposal.correct, None));
            let resp = ctx
                .answerer
                .generate(&req)
                .map_err(|e| failure(item, "confidence", e))?;
            match extract::parse_confidence(&resp.text) {
                Some(value) => Ok(Scored {
                    proposal,
                    score: value,
                    detail: format!("verbalized={value:.4}"),
                    unparseable: false,
                }),
                None => Ok(Scored {
                    proposal,
                    score: 0.0,
                    detail: format!("unparseable confidence: {:?}", head(&resp.text)),
                    unparseable: true,
                }),
            }
        }
        Strategy::ScThreshold => {
            let m = spec.samples.max(1);
            let prompt = render(
                &ctx.prompts.answer,
                &[("question", item.question.as_str()), ("choices", &item.choices_block())],
            );
            let mut counts: BTreeMap<char, usize> = BTreeMap::new();
            for sample in 0..m {
                let req = GenerationRequest::new(prompt.clone(), RequestKind::Answer)
                    .with_logprobs()
                    .with_temperature(FEEDBACK_TEMPERATURE, sample as u32)
                    .with_hints(answer_hints(item));
                let resp = ctx
                    .answerer
                    .generate(&req)
                    .map_err(|e| failure(item, "sample", e))?;
                if let Some(label) = extract_label(&resp, &labels) {
                    *counts.entry(label).or_insert(0) += 1;
                }
            }
            let (modal, modal_count) = counts
                .iter()
                .max_by_key(|(label, count)| (**count, std::cmp::Reverse(**label)))
                .map(|(l, c)| (*l, *c))
                .unwrap_or(('?', 0));
            let score = modal_count as f64 / m as f64;
            Ok(Scored {
                proposal,
                score,
                detail: format!("modal={modal} freq={score:.2}"),
                unparseable: modal_count == 0,
            })
        }
        _ => unreachable!("score_item called for a non-threshold strategy"),
    }
}

fn run_threshold(
    strategy: Strategy,
    spec: &StrategySpec,
    validation: &[&QAItem],
    test: &[&QAItem],
    ctx: &StrategyContext<'_>,
) -> Result<StrategyRunOutput, StrategyError> {
    // token-probability strategies are unavailable on backends without
    // logprob access; detect this up front so the cell fails cleanly
    if matches!(strategy, Strategy::Probs | Strategy::Temp) {
        let probe = test.first().or(validation.first());
        if let Some(item) = probe {
            let prompt = render(
                &ctx.prompts.answer,
                &[("question", item.question.as_str()), ("choices", &item.choices_block())],
            );
            if let Err(e @ crate::backend::BackendError::Unsupported(_)) =
                ctx.answerer.score_choices(&prompt, &item.labels(), &answer_hints(item))
            {
                return Err(StrategyError::Unsupported(e.to_string()));
            }
        }
    }

    let temperature_scale = if matches!(strategy, Strategy::Temp) {
        if validation.is_empty() {
            return Err(StrategyError::EmptyValidation);
        }
        let calibration: Vec<(Vec<f64>, usize)> = par::map(validation, |item| {
            let prompt = render(
                &ctx.prompts.answer,
                &[("question", item.question.as_str()), ("choices", &item.choices_block())],
            );
            let labels = item.labels();
            let scores = ctx.answerer.score_choices(&prompt, &labels, &answer_hints(item)).ok()?;
            let probs: Vec<f64> = labels.iter().map(|l| scores.get(l).copied().unwrap_or(0.0)).collect();
            let gold_idx = labels.iter().position(|l| *l == item.gold)?;
            Some((probs, gold_idx))
        })
        .into_iter()
        .flatten()
        .collect();
        if calibration.is_empty() {
            return Err(StrategyError::Unsupported(
                "no validation item produced choice probabilities".into(),
            ));
        }
        Some(fit_temperature(&calibration))
    } else {
        None
    };

    let threshold = match spec.threshold {
        Some(value) => ThresholdConfig {
            strategy: spec.id(),
            threshold: value,
            tuned_on: "preset".to_string(),
            degenerate: false,
        },
        None => {
            if validation.is_empty() {
                return Err(StrategyError::EmptyValidation);
            }
            let scored: Vec<(f64, bool)> = par::map(validation, |item| {
                score_item(strategy, spec, item, ctx, temperature_scale)
                    .ok()
                    .map(|s| (s.score, s.proposal.correct))
            })
            .into_iter()
            .flatten()
            .collect();
            if scored.is_empty() {
                return Err(StrategyError::Unsupported(
                    "no validation item produced a tuning score".into(),
                ));
            }
            tune_threshold(&spec.id(), &ctx.split_label, &scored).expect("non-empty scores")
        }
    };

    let theta = threshold.threshold;
    let outcomes = par::map(test, |item| {
        match score_item(strategy, spec, item, ctx, temperature_scale) {
            Ok(scored) => {
                let verdict = Verdict {
                    abstain: scored.score < theta,
                    abstain_prob: None,
                    raw: format!("{} theta={theta:.4}", scored.detail),
                    unparseable: scored.unparseable,
                };
                build_record(item, &spec.id(), &scored.proposal, verdict, None)
            }
            Err(out) => out,
        }
    });
    Ok(assemble(spec, outcomes, Some(threshold)))
}

// ---------------------------------------------------------------------------
// public step-by-step surface
// ---------------------------------------------------------------------------

fn unwrap_failure(outcome: Outcome) -> ItemFailure {
    match outcome {
        Outcome::Failed(failure) => failure,
        Outcome::Scored { record, .. } => ItemFailure {
            item_id: record.item_id,
            stage: "internal".into(),
            reason: "unexpected scored outcome".into(),
        },
    }
}

/// Step 1 as a standalone call: greedy proposal plus the per-choice
/// probabilities when the backend exposes them.
pub fn propose_answer(
    item: &QAItem,
    ctx: &StrategyContext<'_>,
) -> Result<(char, Option<BTreeMap<String, f64>>), ItemFailure> {
    let prompt = render(
        &ctx.prompts.answer,
        &[("question", item.question.as_str()), ("choices", &item.choices_block())],
    );
    let req = GenerationRequest::new(prompt, RequestKind::Answer)
        .with_logprobs()
        .with_hints(answer_hints(item));
    let resp = ctx
        .answerer
        .generate(&req)
        .map_err(|e| unwrap_failure(failure(item, "answer", e)))?;
    match extract_label(&resp, &item.labels()) {
        Some(label) => Ok((label, resp.per_choice_logprobs)),
        None => Err(ItemFailure {
            item_id: item.item_id.clone(),
            stage: "answer".into(),
            reason: format!("unparseable answer: {:?}", head(&resp.text)),
        }),
    }
}

/// Step 2 as a standalone call: one feedback per language.
pub fn generate_feedback_bundle(
    item: &QAItem,
    answer: char,
    languages: &[SelectedLanguage],
    ctx: &StrategyContext<'_>,
) -> Result<FeedbackBundle, ItemFailure> {
    let proposal = Proposal {
        label: answer,
        correct: answer == item.gold,
    };
    generate_feedback(item, &proposal, languages, ctx).map_err(unwrap_failure)
}

/// Step 3 as a standalone call: the abstain decision for a bundle.
pub fn decide_abstain_with_feedback(
    item: &QAItem,
    answer: char,
    bundle: &FeedbackBundle,
    strategy_id: &str,
    ctx: &StrategyContext<'_>,
) -> Result<AbstainRecord, ItemFailure> {
    let proposal = Proposal {
        label: answer,
        correct: answer == item.gold,
    };
    let verdict = decide_with_feedback(item, &proposal, bundle, ctx).map_err(unwrap_failure)?;
    match build_record(item, strategy_id, &proposal, verdict, Some(bundle.clone())) {
        Outcome::Scored { record, .. } => Ok(record),
        Outcome::Failed(failure) => Err(failure),
    }
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

fn assemble(spec: &StrategySpec, outcomes: Vec<Outcome>, threshold: Option<ThresholdConfig>) -> StrategyRunOutput {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut verdict_unparseable = 0usize;
    for outcome in outcomes {
        match outcome {
            Outcome::Scored {
                record,
                verdict_unparseable: unparseable,
            } => {
                if unparseable {
                    verdict_unparseable += 1;
                }
                records.push(record);
            }
            Outcome::Failed(fail) => failures.push(fail),
        }
    }
    StrategyRunOutput {
        strategy: spec.id(),
        records,
        failures,
        verdict_unparseable,
        threshold,
    }
}

pub(super) fn execute(
    strategy: Strategy,
    spec: &StrategySpec,
    validation: &[QAItem],
    test: &[QAItem],
    ctx: &StrategyContext<'_>,
) -> Result<StrategyRunOutput, StrategyError> {
    let mut test_items: Vec<&QAItem> = test.iter().collect();
    test_items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let mut validation_items: Vec<&QAItem> = validation.iter().collect();
    validation_items.sort_by(|a, b| a.item_id.cmp(&b.item_id));

    match strategy {
        Strategy::Feedback(mode) => {
            let outcomes = par::map(&test_items, |item| feedback_outcome(mode, spec, item, ctx));
            Ok(assemble(spec, outcomes, None))
        }
        Strategy::Reflect => {
            let outcomes = par::map(&test_items, |item| reflect_outcome(spec, item, ctx));
            Ok(assemble(spec, outcomes, None))
        }
        Strategy::MoreInfo => {
            let outcomes = par::map(&test_items, |item| moreinfo_outcome(spec, item, ctx));
            Ok(assemble(spec, outcomes, None))
        }
        Strategy::Backtranslation => {
            // shared-decision map writes make this pipeline order-sensitive,
            // so items run sequentially for determinism
            let outcomes = test_items
                .iter()
                .map(|item| backtranslation_outcome(spec, item, ctx))
                .collect();
            Ok(assemble(spec, outcomes, None))
        }
        Strategy::Conflict => {
            let outcomes = par::map(&test_items, |item| conflict_outcome(spec, item, ctx));
            Ok(assemble(spec, outcomes, None))
        }
        Strategy::Probs | Strategy::Temp | Strategy::AskCalibration | Strategy::ScThreshold => {
            run_threshold(strategy, spec, &validation_items, &test_items, ctx)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    use crate::backend::{Backend, ScriptRule, ScriptedBackend};
    use crate::corpus::{Choice, DatasetKind, QAItem};
    use crate::langspace::LanguageSpace;
    use crate::strategies::prompts::PromptSet;

    fn item(id: &str, language: &str, gold: char) -> QAItem {
        QAItem {
            item_id: id.to_string(),
            dataset: DatasetKind::Custom,
            language: language.parse().unwrap(),
            question: format!("question {id}"),
            choices: ('A'..='D')
                .map(|label| Choice {
                    label,
                    text: format!("choice {label}"),
                })
                .collect(),
            gold,
            domain_tag: None,
        }
    }

    struct Fixture {
        space: LanguageSpace,
        prompts: PromptSet,
        shared: Mutex<std::collections::BTreeMap<String, bool>>,
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                space: LanguageSpace::bundled().unwrap(),
                prompts: PromptSet::bundled(),
                shared: Mutex::new(Default::default()),
            }
        }

        fn ctx<'a>(&'a self, answerer: &'a dyn Backend, feedback: &'a dyn Backend) -> StrategyContext<'a> {
            StrategyContext {
                space: &self.space,
                prompts: &self.prompts,
                answerer,
                feedback,
                seed: 7,
                split_label: "val".to_string(),
                shared_decisions: &self.shared,
            }
        }
    }

    fn feedback_backend(verdict: &str) -> ScriptedBackend {
        ScriptedBackend::new(
            "scripted",
            vec![
                ScriptRule::text("Please review the proposed answer", "looks plausible"),
                ScriptRule::text("Based on the feedback", verdict),
                ScriptRule::text("Answer with the letter", "Answer: B"),
            ],
            None,
        )
    }

    #[test]
    fn mono_native_bundle_languages_match_question_language() {
        let fixture = Fixture::new();
        let backend = feedback_backend("False");
        let ctx = fixture.ctx(&backend, &backend);
        let items = vec![item("q1", "ta", 'B')];
        let out = run_strategy_helper("mono_native", &items, &ctx);
        assert_eq!(out.records.len(), 1);
        let bundle = out.records[0].feedback.as_ref().unwrap();
        assert_eq!(bundle.len(), 3);
        assert!(bundle.feedback.iter().all(|f| f.language_name == "Tamil"));
        assert!(out.records[0].abstain, "verdict False means abstain");
        assert!(out.records[0].answer_correct);
    }

    #[test]
    fn mono_english_bundle_is_english() {
        let fixture = Fixture::new();
        let backend = feedback_backend("True");
        let ctx = fixture.ctx(&backend, &backend);
        let items = vec![item("q1", "ta", 'B')];
        let out = run_strategy_helper("mono_english", &items, &ctx);
        let bundle = out.records[0].feedback.as_ref().unwrap();
        assert!(bundle.feedback.iter().all(|f| f.language_name == "English"));
        assert!(!out.records[0].abstain, "verdict True means answer");
    }

    #[test]
    fn multi_related_uses_published_mapping() {
        let fixture = Fixture::new();
        let backend = feedback_backend("True");
        let ctx = fixture.ctx(&backend, &backend);
        let items = vec![item("q1", "ta", 'B')];
        let out = run_strategy_helper("multi_related", &items, &ctx);
        let names: Vec<_> = out.records[0]
            .feedback
            .as_ref()
            .unwrap()
            .feedback
            .iter()
            .map(|f| f.language_name.clone())
            .collect();
        assert_eq!(names, ["Malayalam", "Marathi", "Kannada"]);
    }

    #[test]
    fn multi_random_is_deterministic_and_excludes_native() {
        let fixture = Fixture::new();
        let backend = feedback_backend("True");
        let ctx = fixture.ctx(&backend, &backend);
        let items = vec![item("q1", "ta", 'B'), item("q2", "ta", 'B')];
        let first = run_strategy_helper("multi_random", &items, &ctx);
        let second = run_strategy_helper("multi_random", &items, &ctx);
        for (a, b) in first.records.iter().zip(&second.records) {
            assert_eq!(a.feedback, b.feedback, "same seed, same draw");
            assert!(a
                .feedback
                .as_ref()
                .unwrap()
                .feedback
                .iter()
                .all(|f| f.language_name != "Tamil"));
        }
    }

    #[test]
    fn unparseable_verdict_defaults_to_abstain_and_counts() {
        let fixture = Fixture::new();
        let backend = feedback_backend("maybe?");
        let ctx = fixture.ctx(&backend, &backend);
        let items = vec![item("q1", "fr", 'B')];
        let out = run_strategy_helper("mono_native", &items, &ctx);
        assert!(out.records[0].abstain);
        assert_eq!(out.verdict_unparseable, 1);
    }

    #[test]
    fn unparseable_answer_is_recorded_not_dropped() {
        let fixture = Fixture::new();
        let backend = ScriptedBackend::new(
            "scripted",
            vec![ScriptRule::text("Answer with the letter", "I do not know")],
            None,
        );
        let ctx = fixture.ctx(&backend, &backend);
        let items = vec![item("q1", "fr", 'B')];
        let out = run_strategy_helper("reflect", &items, &ctx);
        assert!(out.records.is_empty());
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].stage, "answer");
    }

    #[test]
    fn sc_threshold_identical_samples_answer() {
        let fixture = Fixture::new();
        let backend = feedback_backend("True");
        let ctx = fixture.ctx(&backend, &backend);
        let items = vec![item("q1", "fr", 'B')];
        let mut spec = StrategySpec::named("sc_threshold");
        spec.threshold = Some(0.6);
        let out = super::super::run_strategy(&spec, &[], &items, &ctx).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(!out.records[0].abstain, "frequency 1.0 >= 0.6");
    }

    #[test]
    fn conflict_between_two_models() {
        let fixture = Fixture::new();
        let answerer = ScriptedBackend::new(
            "model-a",
            vec![ScriptRule::text("Answer with the letter", "Answer: B")],
            None,
        );
        let other = ScriptedBackend::new(
            "model-b",
            vec![ScriptRule::text("Answer with the letter", "Answer: C")],
            None,
        );
        let ctx = fixture.ctx(&answerer, &other);
        let items = vec![item("q1", "fr", 'B')];
        let out = run_strategy_helper("conflict", &items, &ctx);
        assert!(out.records[0].abstain, "answers disagree");
    }

    #[test]
    fn backtranslation_shares_decisions_across_languages() {
        let fixture = Fixture::new();
        let backend = ScriptedBackend::new(
            "scripted",
            vec![
                ScriptRule::text("Translate the following", "english version"),
                ScriptRule::text("Is the proposed answer True or False?", "False"),
                ScriptRule::text("Answer with the letter", "Answer: B"),
            ],
            None,
        );
        let ctx = fixture.ctx(&backend, &backend);
        let fr = vec![item("q1", "fr", 'B')];
        let ta = vec![item("q1", "ta", 'B')];
        let first = run_strategy_helper("backtranslation", &fr, &ctx);
        let second = run_strategy_helper("backtranslation", &ta, &ctx);
        assert_eq!(first.records[0].abstain, second.records[0].abstain);
        assert!(second.records[0].raw_verdict.contains("shared"));
    }

    #[test]
    fn probs_tunes_threshold_to_separate_scores() {
        let fixture = Fixture::new();
        // validation: q1 answered correctly with confident scores, q2
        // answered wrong with low scores; test mirrors it
        let rules = vec![
            ScriptRule::text("question q1", "Answer: B").with_scores([('A', 0.02), ('B', 0.9), ('C', 0.04), ('D', 0.04)].into()),
            ScriptRule::text("question q2", "Answer: C").with_scores([('A', 0.3), ('B', 0.25), ('C', 0.3), ('D', 0.15)].into()),
            ScriptRule::text("question q3", "Answer: B").with_scores([('A', 0.02), ('B', 0.88), ('C', 0.05), ('D', 0.05)].into()),
            ScriptRule::text("question q4", "Answer: D").with_scores([('A', 0.28), ('B', 0.22), ('C', 0.2), ('D', 0.3)].into()),
        ];
        let backend = ScriptedBackend::new("scripted", rules, None);
        let ctx = fixture.ctx(&backend, &backend);
        let validation = vec![item("q1", "fr", 'B'), item("q2", "fr", 'B')];
        let test = vec![item("q3", "fr", 'B'), item("q4", "fr", 'B')];
        let spec = StrategySpec::named("probs");
        let out = super::super::run_strategy(&spec, &validation, &test, &ctx).unwrap();
        let threshold = out.threshold.as_ref().unwrap();
        assert!(threshold.threshold > 0.3 && threshold.threshold <= 0.9);
        // q3 confident + correct -> answered; q4 diffuse + wrong -> abstain
        assert!(!out.records[0].abstain);
        assert!(out.records[1].abstain);
    }

    fn run_strategy_helper(name: &str, items: &[QAItem], ctx: &StrategyContext<'_>) -> StrategyRunOutput {
        super::super::run_strategy(&StrategySpec::named(name), &[], items, ctx).unwrap()
    }

    #[test]
    fn step_functions_compose_into_a_record() {
        let fixture = Fixture::new();
        let backend = feedback_backend("False");
        let ctx = fixture.ctx(&backend, &backend);
        let q = item("q1", "ta", 'B');

        let (label, _scores) = propose_answer(&q, &ctx).unwrap();
        assert_eq!(label, 'B');

        let languages = fixture
            .space
            .select_feedback_languages(q.language, RelatednessMode::Default, 3)
            .unwrap();
        let bundle = generate_feedback_bundle(&q, label, &languages, &ctx).unwrap();
        assert_eq!(bundle.len(), 3);

        let record = decide_abstain_with_feedback(&q, label, &bundle, "multi_related", &ctx).unwrap();
        assert!(record.abstain, "False verdict abstains");
        assert!(record.answer_correct);
        assert_eq!(record.raw_verdict, "False");
    }
}
