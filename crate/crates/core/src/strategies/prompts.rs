//! Prompt templates.
//!
//! One text file per pipeline step under `prompts/`, compiled in as
//! defaults and overridable from a directory. Placeholders: `{question}`,
//! `{answer}`, `{language}`, `{choices}`, `{text}`, and `{feedback_i}` /
//! `{feedback_1}`.. for feedback slots. A template line containing
//! `{feedback_i}` expands once per feedback item with `{i}` as the
//! 1-based position.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
#[error("prompt template error: {0}")]
pub struct PromptError(String);

#[derive(Debug, Clone)]
pub struct PromptSet {
    pub answer: String,
    pub feedback: String,
    pub verdict: String,
    pub reflect: String,
    pub moreinfo: String,
    pub ask_calibration: String,
    pub translate: String,
    pub judge_relevance: String,
    pub judge_informative: String,
    pub judge_role: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            answer: include_str!("../../data/prompts/answer.txt").to_string(),
            feedback: include_str!("../../data/prompts/feedback.txt").to_string(),
            verdict: include_str!("../../data/prompts/verdict.txt").to_string(),
            reflect: include_str!("../../data/prompts/reflect.txt").to_string(),
            moreinfo: include_str!("../../data/prompts/moreinfo.txt").to_string(),
            ask_calibration: include_str!("../../data/prompts/ask_calibration.txt").to_string(),
            translate: include_str!("../../data/prompts/translate.txt").to_string(),
            judge_relevance: include_str!("../../data/prompts/judge_relevance.txt").to_string(),
            judge_informative: include_str!("../../data/prompts/judge_informative.txt").to_string(),
            judge_role: include_str!("../../data/prompts/judge_role.txt").to_string(),
        }
    }
}

impl PromptSet {
    pub fn bundled() -> Self {
        Self::default()
    }

    /// Loads templates from a directory; files that are absent keep their
    /// bundled defaults.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        let slots: [(&str, &mut String); 10] = [
            ("answer.txt", &mut set.answer),
            ("feedback.txt", &mut set.feedback),
            ("verdict.txt", &mut set.verdict),
            ("reflect.txt", &mut set.reflect),
            ("moreinfo.txt", &mut set.moreinfo),
            ("ask_calibration.txt", &mut set.ask_calibration),
            ("translate.txt", &mut set.translate),
            ("judge_relevance.txt", &mut set.judge_relevance),
            ("judge_informative.txt", &mut set.judge_informative),
            ("judge_role.txt", &mut set.judge_role),
        ];
        for (file, slot) in slots {
            let path = dir.join(file);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError(format!("read {}: {e}", path.display())))?;
            }
        }
        Ok(set)
    }
}

/// Substitutes `{key}` placeholders.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out.trim_end().to_string()
}

/// Renders a template with a repeated feedback block: every line containing
/// `{feedback_i}` is emitted once per feedback entry.
pub fn render_with_feedback(template: &str, vars: &[(&str, &str)], feedback: &[String]) -> String {
    let mut lines = Vec::new();
    for line in template.lines() {
        if line.contains("{feedback_i}") {
            for (idx, text) in feedback.iter().enumerate() {
                let expanded = line
                    .replace("{feedback_i}", text)
                    .replace("{i}", &(idx + 1).to_string());
                lines.push(expanded);
            }
        } else {
            lines.push(line.to_string());
        }
    }
    render(&lines.join("\n"), vars)
}
