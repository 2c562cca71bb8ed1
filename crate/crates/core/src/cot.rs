//! Prompt templates, reasoning-chain assembly and decision parsing.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DecisionValue, SurveyRecord, SurveySchema};
use crate::memory::MemoryEntry;
use crate::perception::PerceptionResult;

pub const NONE_AVAILABLE: &str = "None available";
/// Characters at the end of a response searched for the YES/NO marker.
pub const DECISION_TAIL_CHARS: usize = 200;
pub const CLARIFY_INSTRUCTION: &str =
    "Answer only YES or NO: did the resident evacuate during the wildfire?";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CotError {
    #[error("template has no `=== {0} ===` section")]
    MissingSection(&'static str),
    #[error("template front-matter is malformed: {0}")]
    BadFrontMatter(String),
    #[error("unknown placeholder `{{{0}}}`")]
    UnknownPlaceholder(String),
    #[error("no value for placeholder `{{{0}}}`")]
    MissingPlaceholderValue(String),
    #[error("response has no unambiguous YES/NO conclusion")]
    AmbiguousDecision,
    #[error("empty response")]
    EmptyResponse,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap())
}

/// A system/user prompt pair with `{Name}` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub template_id: String,
    pub placeholders: Vec<String>,
    pub system_text: String,
    pub user_text: String,
}

impl Template {
    /// Parses the on-disk format: `---` front-matter with `template_id` and
    /// `placeholders`, then `=== system ===` and `=== user ===` sections.
    pub fn parse(src: &str) -> Result<Self, CotError> {
        let rest = src
            .strip_prefix("---\n")
            .ok_or_else(|| CotError::BadFrontMatter("missing opening ---".into()))?;
        let (front, body) = rest
            .split_once("\n---\n")
            .ok_or_else(|| CotError::BadFrontMatter("missing closing ---".into()))?;
        let mut template_id = None;
        let mut placeholders = None;
        for line in front.lines() {
            let Some((k, v)) = line.split_once(':') else {
                return Err(CotError::BadFrontMatter(line.to_string()));
            };
            match k.trim() {
                "template_id" => template_id = Some(v.trim().to_string()),
                "placeholders" => {
                    placeholders = Some(
                        v.split(',')
                            .map(|p| p.trim().to_string())
                            .filter(|p| !p.is_empty())
                            .collect::<Vec<_>>(),
                    )
                }
                other => return Err(CotError::BadFrontMatter(format!("unknown key `{other}`"))),
            }
        }
        let template_id =
            template_id.ok_or_else(|| CotError::BadFrontMatter("no template_id".into()))?;
        let placeholders = placeholders.unwrap_or_default();

        let body = body
            .strip_prefix("=== system ===\n")
            .ok_or(CotError::MissingSection("system"))?;
        let (system, user) = body
            .split_once("\n=== user ===\n")
            .ok_or(CotError::MissingSection("user"))?;
        let t = Template {
            template_id,
            placeholders,
            system_text: system.to_string(),
            user_text: user.strip_suffix('\n').unwrap_or(user).to_string(),
        };
        t.check_placeholders()?;
        Ok(t)
    }

    fn check_placeholders(&self) -> Result<(), CotError> {
        let declared: BTreeSet<&str> = self.placeholders.iter().map(String::as_str).collect();
        for text in [&self.system_text, &self.user_text] {
            for cap in placeholder_re().captures_iter(text) {
                if !declared.contains(&cap[1]) {
                    return Err(CotError::UnknownPlaceholder(cap[1].to_string()));
                }
            }
        }
        Ok(())
    }

    /// Single-pass substitution; substituted values are never re-scanned.
    pub fn render_text(text: &str, values: &BTreeMap<&str, String>) -> Result<String, CotError> {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for cap in placeholder_re().captures_iter(text) {
            let m = cap.get(0).unwrap();
            let v = values
                .get(&cap[1])
                .ok_or_else(|| CotError::MissingPlaceholderValue(cap[1].to_string()))?;
            out.push_str(&text[last..m.start()]);
            out.push_str(v);
            last = m.end();
        }
        out.push_str(&text[last..]);
        Ok(out)
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<(String, String), CotError> {
        self.check_placeholders()?;
        Ok((
            Self::render_text(&self.system_text, values)?,
            Self::render_text(&self.user_text, values)?,
        ))
    }
}

/// The bundled templates.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub threat: Template,
    pub risk: Template,
    pub decision: Template,
    pub reflexion: Template,
    pub direct: Template,
    pub direct_memory: Template,
}

impl TemplateSet {
    pub fn builtin() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| {
            let p = |s: &str| Template::parse(s).expect("bundled template parses");
            TemplateSet {
                threat: p(include_str!("../templates/threat_assessment.txt")),
                risk: p(include_str!("../templates/risk_perception.txt")),
                decision: p(include_str!("../templates/decision.txt")),
                reflexion: p(include_str!("../templates/reflexion.txt")),
                direct: p(include_str!("../templates/direct.txt")),
                direct_memory: p(include_str!("../templates/direct_memory.txt")),
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotComponents {
    pub risk_summary: String,
    pub examples_block: String,
    pub extras_block: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotInstance {
    pub record_id: String,
    pub template_id: String,
    pub rendered_system: String,
    pub rendered_user: String,
    pub components: CotComponents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub value: DecisionValue,
    pub rationale_text: String,
}

/// `question: answer` pairs for the given variables, `; `-separated.
pub fn render_survey(record: &SurveyRecord, schema: &SurveySchema, variables: &[String]) -> String {
    let parts: Vec<String> = variables
        .iter()
        .filter_map(|name| schema.variable(name))
        .map(|spec| {
            let answer = record.answer(&spec.name).unwrap_or("(no answer)");
            format!("{}: {}", spec.prompt_label(), answer)
        })
        .collect();
    if parts.is_empty() {
        NONE_AVAILABLE.to_string()
    } else {
        parts.join("; ")
    }
}

pub fn risk_summary(risk: &PerceptionResult) -> String {
    format!("{} (score: {}/5)", risk.text, risk.calibrated_score)
}

pub fn render_extras(extras: &[String]) -> String {
    let items: Vec<&str> = extras
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        NONE_AVAILABLE.to_string()
    } else {
        items.join("; ")
    }
}

pub fn render_examples(examples: &[MemoryEntry]) -> String {
    if examples.is_empty() {
        return NONE_AVAILABLE.to_string();
    }
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut s = format!(
                "Example {}:\nContext: {}\nRationale: {}\nCorrect decision: the resident {}.",
                i + 1,
                e.context_text,
                e.rationale_text,
                e.correct_decision.label_word()
            );
            if !e.reflection_text.is_empty() {
                s.push_str("\nReflection: ");
                s.push_str(&e.reflection_text);
            }
            s
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders the decision template around a precomputed risk summary.
pub fn assemble_with_summary(
    template: &Template,
    record_id: &str,
    risk_summary: String,
    extras: &[String],
    examples: &[MemoryEntry],
) -> Result<CotInstance, CotError> {
    let components = CotComponents {
        risk_summary,
        examples_block: render_examples(examples),
        extras_block: render_extras(extras),
    };
    let values = BTreeMap::from([
        ("Risk", components.risk_summary.clone()),
        ("Examples", components.examples_block.clone()),
        ("Extras", components.extras_block.clone()),
    ]);
    let (rendered_system, rendered_user) = template.render(&values)?;
    Ok(CotInstance {
        record_id: record_id.to_string(),
        template_id: template.template_id.clone(),
        rendered_system,
        rendered_user,
        components,
    })
}

pub fn assemble_cot(
    template: &Template,
    record_id: &str,
    risk: &PerceptionResult,
    extras: &[String],
    examples: &[MemoryEntry],
) -> Result<CotInstance, CotError> {
    assemble_with_summary(template, record_id, risk_summary(risk), extras, examples)
}

impl CotInstance {
    /// Re-renders from the stored components.
    pub fn rerender(&self, template: &Template) -> Result<(String, String), CotError> {
        template.render(&BTreeMap::from([
            ("Risk", self.components.risk_summary.clone()),
            ("Examples", self.components.examples_block.clone()),
            ("Extras", self.components.extras_block.clone()),
        ]))
    }
}

fn marker_re(word: &str, case_insensitive: bool) -> Regex {
    let flag = if case_insensitive { "(?i)" } else { "" };
    Regex::new(&format!(r"{flag}\b{word}\b")).unwrap()
}

/// Reads the YES/NO conclusion from the last [`DECISION_TAIL_CHARS`] characters.
/// When both words occur, an answer written in capitals alone wins.
pub fn parse_decision(response: &str) -> Result<Decision, CotError> {
    if response.trim().is_empty() {
        return Err(CotError::EmptyResponse);
    }
    static RES: OnceLock<[Regex; 4]> = OnceLock::new();
    let [yes_i, no_i, yes_u, no_u] = RES.get_or_init(|| {
        [
            marker_re("yes", true),
            marker_re("no", true),
            marker_re("YES", false),
            marker_re("NO", false),
        ]
    });
    let n_chars = response.chars().count();
    let tail: String = response
        .chars()
        .skip(n_chars.saturating_sub(DECISION_TAIL_CHARS))
        .collect();
    let pick = |yes: bool, no: bool| match (yes, no) {
        (true, false) => Some(DecisionValue::Evacuate),
        (false, true) => Some(DecisionValue::Stay),
        _ => None,
    };
    let (y, n) = (yes_i.is_match(&tail), no_i.is_match(&tail));
    let value = match pick(y, n) {
        Some(v) => Some(v),
        None if y && n => pick(yes_u.is_match(&tail), no_u.is_match(&tail)),
        None => None,
    }
    .ok_or(CotError::AmbiguousDecision)?;
    Ok(Decision {
        value,
        rationale_text: response.to_string(),
    })
}

/// Follow-up prompt sent once when a response has no usable conclusion.
pub fn clarification_prompt(original_user: &str, response: &str) -> String {
    format!("{original_user}\n\nYour previous answer:\n{response}\n\n{CLARIFY_INSTRUCTION}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_parse() {
        let t = TemplateSet::builtin();
        assert_eq!(t.decision.placeholders, vec!["Examples", "Risk", "Extras"]);
        assert_eq!(t.reflexion.placeholders, vec!["label", "Label"]);
        assert!(t.threat.system_text == "You are an expert at rational reasoning.");
        assert!(t
            .decision
            .user_text
            .ends_with("External information: {Extras}"));
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let src = "---\ntemplate_id: x\nplaceholders: Risk\n---\n=== system ===\ns\n=== user ===\n{Risk} {Foo}\n";
        assert_eq!(
            Template::parse(src),
            Err(CotError::UnknownPlaceholder("Foo".into()))
        );
    }

    #[test]
    fn missing_value_rejected() {
        let t = &TemplateSet::builtin().decision;
        let values = BTreeMap::from([("Risk", "r".to_string())]);
        assert!(matches!(
            t.render(&values),
            Err(CotError::MissingPlaceholderValue(_))
        ));
    }

    #[test]
    fn values_are_not_rescanned() {
        let out =
            Template::render_text("a {X} b", &BTreeMap::from([("X", "{Y}".to_string())])).unwrap();
        assert_eq!(out, "a {Y} b");
    }

    #[test]
    fn decision_markers() {
        assert_eq!(
            parse_decision("...Conclusion: YES - evacuated.")
                .unwrap()
                .value,
            DecisionValue::Evacuate
        );
        assert_eq!(
            parse_decision("Conclusion: NO - this resident did not evacuate during the wildfire.")
                .unwrap()
                .value,
            DecisionValue::Stay
        );
        assert_eq!(
            parse_decision("maybe yes, maybe no"),
            Err(CotError::AmbiguousDecision)
        );
        assert_eq!(
            parse_decision("I cannot tell."),
            Err(CotError::AmbiguousDecision)
        );
        assert_eq!(parse_decision(""), Err(CotError::EmptyResponse));
        // capitals break a mixed-case tie
        assert_eq!(
            parse_decision("There was no official order. Final answer: YES")
                .unwrap()
                .value,
            DecisionValue::Evacuate
        );
        // markers outside the tail window are ignored
        let long = format!("NO{} YES", " filler".repeat(60));
        assert_eq!(
            parse_decision(&long).unwrap().value,
            DecisionValue::Evacuate
        );
    }

    #[test]
    fn rationale_is_full_response() {
        let r = "Step 1... Step 2... YES";
        assert_eq!(parse_decision(r).unwrap().rationale_text, r);
    }
}
