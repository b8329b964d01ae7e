//! Context-generation and question-generation prompts.
//!
//! Templates use `{name}` placeholders. Substitution is a single left-to-right
//! pass: substituted values are never rescanned, so user text containing
//! braces comes through literally.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::QAPair;
use crate::metrics::normalized_contains;
use crate::synthesis::Triplet;
use crate::util::sha256_hex;

/// Zero-shot context instruction.
pub const CONTEXT_ZERO_SHOT: &str = "Your job is to write a {style} paragraph that significantly expands the given question {q_i} and answer {a_i}.";

/// Topic-guided few-shot context instruction used with titled exemplars.
pub const CONTEXT_FEW_SHOT_TOPIC: &str = "Your job is to write a {style} on a specific topic. Your written paragraph should contains the answer to a question that asks about certain information related to the topic. The user will first provide the topic, question, and answer and some example paragraphs.";

/// Question-generation input; also the fine-tuning input serialization.
pub const QUESTION_FROM_CONTEXT: &str =
    "Based on the context {c} and answer {a}, generate a {style} question";

/// Biology-textbook question prompt for prompting-based generation.
pub const QUESTION_BIOLOGY: &str = "Based on the context below, generate an introductory college level biology question with {a} as the answer.\ncontext: {c}";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("few-shot prompting needs at least one exemplar")]
    NoExemplars,
    #[error("template placeholder {{{0}}} has no value")]
    UnresolvedPlaceholder(String),
    #[error("exemplar {index}: context does not contain the answer {answer:?}")]
    ExemplarMissingAnswer { index: usize, answer: String },
    #[error("unknown style preset {0:?}")]
    UnknownPreset(String),
    #[error("preset file {path}: {message}")]
    PresetFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub messages: Vec<Message>,
    pub resolved_placeholders: BTreeMap<String, String>,
}

impl Prompt {
    /// Human-readable rendering used for golden fixtures and provenance hashes.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (i, m) in self.messages.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{}]\n{}\n", m.role.as_str(), m.content));
        }
        out
    }

    pub fn snapshot_hash(&self) -> String {
        sha256_hex(self.snapshot())
    }

    /// All message contents joined with blank lines.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

/// How instruction and payload are laid out as chat messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageLayout {
    /// Instruction as a system message, payload as a user message.
    #[default]
    SystemThenUser,
    /// Everything in one user message, for completion-style endpoints.
    SingleUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    SquadWiki,
    OsbioScience,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    pub context_zero_shot: String,
    /// Instruction for few-shot context generation; the zero-shot
    /// instruction is reused when absent.
    #[serde(default)]
    pub context_few_shot: Option<String>,
    pub question_prompt: String,
    pub training_input: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            context_zero_shot: CONTEXT_ZERO_SHOT.into(),
            context_few_shot: None,
            question_prompt: QUESTION_FROM_CONTEXT.into(),
            training_input: QUESTION_FROM_CONTEXT.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylePreset {
    pub name: PresetName,
    pub context_style_text: String,
    pub question_style_text: String,
    #[serde(default)]
    pub templates: Templates,
    #[serde(default)]
    pub layout: MessageLayout,
}

impl StylePreset {
    /// Wikipedia-style contexts and questions (SQuAD).
    pub fn squad_wiki() -> Self {
        StylePreset {
            name: PresetName::SquadWiki,
            context_style_text: "wikipedia-style paragraph".into(),
            question_style_text: "wikipedia-style".into(),
            templates: Templates {
                context_few_shot: Some(CONTEXT_FEW_SHOT_TOPIC.into()),
                ..Templates::default()
            },
            layout: MessageLayout::default(),
        }
    }

    /// Introductory biology textbook style (OpenStax Biology review questions).
    pub fn osbio_science() -> Self {
        StylePreset {
            name: PresetName::OsbioScience,
            context_style_text: "an introductory college level scientific paragraph about biology"
                .into(),
            question_style_text: "introductory college level biology".into(),
            templates: Templates {
                question_prompt: QUESTION_BIOLOGY.into(),
                ..Templates::default()
            },
            layout: MessageLayout::default(),
        }
    }

    pub fn builtin(name: &str) -> Result<Self, PromptError> {
        match name {
            "squad_wiki" | "squad" => Ok(Self::squad_wiki()),
            "osbio_science" | "osbio" => Ok(Self::osbio_science()),
            other => Err(PromptError::UnknownPreset(other.to_string())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self.name {
            PresetName::SquadWiki => "squad_wiki",
            PresetName::OsbioScience => "osbio_science",
            PresetName::Custom => "custom",
        }
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("preset serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    #[serde(default)]
    pub title: Option<String>,
    pub context: String,
    pub question: String,
    pub answer: String,
}

impl Exemplar {
    /// The few-shot example shipped for SQuAD-style generation.
    pub fn solar_energy() -> Self {
        Exemplar {
            title: Some("Solar_energy".into()),
            context: "Solar power is the conversion of sunlight into electricity, either directly using photovoltaics (PV), or indirectly using concentrated solar power (CSP). CSP systems use lenses or mirrors and tracking systems to focus a large area of sunlight into a small beam. PV converts light into electric current using the photoelectric effect.".into(),
            question: "What method does the photovoltaics system use to turn light into electricity?".into(),
            answer: "photoelectric effect".into(),
        }
    }

    fn block(&self) -> String {
        let mut s = String::new();
        if let Some(t) = &self.title {
            s.push_str(&format!("title: {t}\n"));
        }
        s.push_str(&format!(
            "context: {}\nquestion: {}\nanswer: {}",
            self.context, self.question, self.answer
        ));
        s
    }
}

/// Reject exemplars whose context does not contain their answer.
pub fn validate_exemplars(exemplars: &[Exemplar]) -> Result<(), PromptError> {
    for (index, e) in exemplars.iter().enumerate() {
        if !normalized_contains(&e.context, &e.answer) {
            return Err(PromptError::ExemplarMissingAnswer {
                index,
                answer: e.answer.clone(),
            });
        }
    }
    Ok(())
}

/// Preset file layout (TOML):
///
/// ```toml
/// name = "custom"
/// context_style_text = "..."
/// question_style_text = "..."
/// layout = "single_user"          # optional
/// [templates]                     # optional, all four keys required if present
/// [[exemplars]]                   # optional
/// title = "..."
/// context = "..."
/// question = "..."
/// answer = "..."
/// ```
#[derive(Debug, Deserialize)]
struct PresetFile {
    #[serde(flatten)]
    preset: StylePreset,
    #[serde(default)]
    exemplars: Vec<Exemplar>,
}

pub fn load_preset_file(path: &Path) -> Result<(StylePreset, Vec<Exemplar>), PromptError> {
    let err = |message: String| PromptError::PresetFile {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let file: PresetFile = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
    validate_exemplars(&file.exemplars)?;
    Ok((file.preset, file.exemplars))
}

/// Substitute `{name}` placeholders from `values` in a single pass.
pub fn render_template(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            let name = &after[..name_len];
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::UnresolvedPlaceholder(name.to_string()))?;
            out.push_str(value);
            rest = &after[name_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn non_empty(text: &str, what: &'static str) -> Result<(), PromptError> {
    if text.trim().is_empty() {
        Err(PromptError::Empty(what))
    } else {
        Ok(())
    }
}

fn assemble(layout: MessageLayout, instruction: String, payload: String) -> Vec<Message> {
    match layout {
        MessageLayout::SystemThenUser => vec![
            Message {
                role: Role::System,
                content: instruction,
            },
            Message {
                role: Role::User,
                content: payload,
            },
        ],
        MessageLayout::SingleUser => vec![Message {
            role: Role::User,
            content: format!("{instruction}\n\n{payload}"),
        }],
    }
}

/// Prompt asking an LLM to write a background context for `pair`.
pub fn build_context_prompt(
    pair: &QAPair,
    style: &StylePreset,
    exemplars: &[Exemplar],
    mode: PromptMode,
) -> Result<Prompt, PromptError> {
    non_empty(&pair.question, "question")?;
    let answer = pair.answers.first().map(String::as_str).unwrap_or("");
    non_empty(answer, "answer")?;
    if mode == PromptMode::FewShot && exemplars.is_empty() {
        return Err(PromptError::NoExemplars);
    }

    let values = [
        ("style", style.context_style_text.as_str()),
        ("q_i", pair.question.as_str()),
        ("a_i", answer),
    ];
    let template = match mode {
        PromptMode::ZeroShot => &style.templates.context_zero_shot,
        PromptMode::FewShot => style
            .templates
            .context_few_shot
            .as_ref()
            .unwrap_or(&style.templates.context_zero_shot),
    };
    let instruction = render_template(template, &values)?;

    let mut target = String::new();
    if mode == PromptMode::FewShot {
        if let Some(t) = &pair.title {
            target.push_str(&format!("title: {t}\n"));
        }
    }
    target.push_str(&format!("question: {}\nanswer: {}", pair.question, answer));

    let payload = match mode {
        PromptMode::ZeroShot => target,
        PromptMode::FewShot => {
            let mut blocks: Vec<String> = exemplars.iter().map(Exemplar::block).collect();
            blocks.push(format!("{target}\ncontext:"));
            blocks.join("\n\n")
        }
    };

    Ok(Prompt {
        messages: assemble(style.layout, instruction, payload),
        resolved_placeholders: values
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    })
}

/// Prompt asking an LLM to write a question for `answer` given `context`.
pub fn build_question_prompt(
    context: &str,
    answer: &str,
    style: &StylePreset,
) -> Result<Prompt, PromptError> {
    non_empty(context, "context")?;
    non_empty(answer, "answer")?;
    let values = [
        ("c", context),
        ("a", answer),
        ("style", style.question_style_text.as_str()),
    ];
    let text = render_template(&style.templates.question_prompt, &values)?;
    Ok(Prompt {
        messages: vec![Message {
            role: Role::User,
            content: text,
        }],
        resolved_placeholders: values
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    })
}

/// `(input_text, target_text)` for one fine-tuning record.
pub fn render_training_input(
    triplet: &Triplet,
    style: &StylePreset,
) -> Result<(String, String), PromptError> {
    non_empty(&triplet.context, "context")?;
    non_empty(&triplet.answer, "answer")?;
    non_empty(&triplet.question, "question")?;
    let input = render_template(
        &style.templates.training_input,
        &[
            ("c", triplet.context.as_str()),
            ("a", triplet.answer.as_str()),
            ("style", style.question_style_text.as_str()),
        ],
    )?;
    Ok((input, triplet.question.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;
    use crate::synthesis::ContextKind;

    fn pair(q: &str, a: &str) -> QAPair {
        QAPair {
            id: "p1".into(),
            question: q.into(),
            answers: vec![a.into()],
            real_context: None,
            title: None,
            source: Source::Generic,
        }
    }

    fn triplet(q: &str, c: &str, a: &str) -> Triplet {
        Triplet {
            pair_id: "t".into(),
            question: q.into(),
            answer: a.into(),
            context: c.into(),
            context_kind: ContextKind::Real,
            gen_meta: None,
        }
    }

    const PLACEHOLDERS: [&str; 4] = ["{style}", "{q_i}", "{a_i}", "{a}"];

    #[test]
    fn zero_shot_biology() {
        let p = build_context_prompt(
            &pair("Q?", "A"),
            &StylePreset::osbio_science(),
            &[],
            PromptMode::ZeroShot,
        )
        .unwrap();
        let text = p.text();
        assert!(text.contains("an introductory college level scientific paragraph about biology"));
        assert!(text.contains("Q?"));
        assert!(text.contains("A"));
        assert_eq!(p.messages[0].role, Role::System);
        assert_eq!(p.resolved_placeholders["q_i"], "Q?");
        for ph in PLACEHOLDERS {
            assert!(!text.contains(ph));
        }
    }

    #[test]
    fn few_shot_places_exemplar_before_target() {
        let mut target = pair("Who designed the first steam engine?", "Thomas Newcomen");
        target.title = Some("Steam_engine".into());
        let p = build_context_prompt(
            &target,
            &StylePreset::squad_wiki(),
            &[Exemplar::solar_energy()],
            PromptMode::FewShot,
        )
        .unwrap();
        assert!(p.messages[0]
            .content
            .starts_with("Your job is to write a wikipedia-style paragraph on a specific topic."));
        let user = &p.messages[1].content;
        assert_eq!(user.matches("title: Solar_energy").count(), 1);
        let exemplar_end = user.find("answer: photoelectric effect").unwrap();
        let target_pos = user.find("Who designed the first steam engine?").unwrap();
        assert!(exemplar_end < target_pos);
        assert!(user.rfind("photoelectric effect").unwrap() < target_pos);
        assert!(user.ends_with("context:"));
    }

    #[test]
    fn exemplar_order_is_preserved() {
        let a = Exemplar {
            title: None,
            context: "alpha beta".into(),
            question: "qa".into(),
            answer: "alpha".into(),
        };
        let b = Exemplar {
            title: None,
            context: "gamma delta".into(),
            question: "qb".into(),
            answer: "delta".into(),
        };
        let p = build_context_prompt(
            &pair("Q", "A"),
            &StylePreset::osbio_science(),
            &[b.clone(), a.clone()],
            PromptMode::FewShot,
        )
        .unwrap();
        let u = &p.messages[1].content;
        assert!(u.find("gamma delta").unwrap() < u.find("alpha beta").unwrap());
    }

    #[test]
    fn braces_in_answer_are_literal() {
        let p = build_context_prompt(
            &pair("What set?", "{x, {a_i}}"),
            &StylePreset::squad_wiki(),
            &[],
            PromptMode::ZeroShot,
        )
        .unwrap();
        let text = p.text();
        assert!(text.contains("{x, {a_i}}"));
        assert_eq!(text.matches('{').count(), 2 * 2);
    }

    #[test]
    fn argument_errors() {
        let s = StylePreset::squad_wiki();
        assert_eq!(
            build_context_prompt(&pair(" ", "A"), &s, &[], PromptMode::ZeroShot),
            Err(PromptError::Empty("question"))
        );
        assert_eq!(
            build_context_prompt(&pair("Q", ""), &s, &[], PromptMode::ZeroShot),
            Err(PromptError::Empty("answer"))
        );
        assert_eq!(
            build_context_prompt(&pair("Q", "A"), &s, &[], PromptMode::FewShot),
            Err(PromptError::NoExemplars)
        );
        assert_eq!(
            build_question_prompt("", "A", &s),
            Err(PromptError::Empty("context"))
        );
    }

    #[test]
    fn question_prompts() {
        let p = build_question_prompt("CTX", "ANS", &StylePreset::squad_wiki()).unwrap();
        assert_eq!(p.messages.len(), 1);
        let t = &p.messages[0].content;
        assert!(t.contains("Based on the context") && t.contains("CTX") && t.contains("ANS"));
        assert_eq!(
            p,
            build_question_prompt("CTX", "ANS", &StylePreset::squad_wiki()).unwrap()
        );

        let bio = build_question_prompt("CTX", "ANS", &StylePreset::osbio_science()).unwrap();
        assert!(bio.messages[0]
            .content
            .contains("introductory college level biology question"));
    }

    #[test]
    fn training_input() {
        let (input, target) =
            render_training_input(&triplet("Why X?", "C.", "A"), &StylePreset::squad_wiki())
                .unwrap();
        assert_eq!(target, "Why X?");
        assert!(input.contains("wikipedia-style"));
        assert_eq!(
            input,
            "Based on the context C. and answer A, generate a wikipedia-style question"
        );
    }

    #[test]
    fn training_inputs_differ_only_in_answer_span() {
        let s = StylePreset::squad_wiki();
        let (x, _) = render_training_input(&triplet("Q", "Some context.", "first"), &s).unwrap();
        let (y, _) =
            render_training_input(&triplet("Q", "Some context.", "second one"), &s).unwrap();
        // Oracle: strip the common prefix and suffix; what remains must be the answers.
        let prefix = x.bytes().zip(y.bytes()).take_while(|(a, b)| a == b).count();
        let suffix = x
            .bytes()
            .rev()
            .zip(y.bytes().rev())
            .take_while(|(a, b)| a == b)
            .count();
        assert_eq!(&x[prefix..x.len() - suffix], "first");
        assert_eq!(&y[prefix..y.len() - suffix], "second one");
    }

    #[test]
    fn template_rendering() {
        assert_eq!(
            render_template("{a}-{b}", &[("a", "{b}"), ("b", "2")]).unwrap(),
            "{b}-2"
        );
        assert_eq!(
            render_template("json {\"k\": 1} {", &[]).unwrap(),
            "json {\"k\": 1} {"
        );
        assert_eq!(
            render_template("{nope}", &[]),
            Err(PromptError::UnresolvedPlaceholder("nope".into()))
        );
    }

    #[test]
    fn single_user_layout() {
        let mut s = StylePreset::squad_wiki();
        s.layout = MessageLayout::SingleUser;
        let p = build_context_prompt(&pair("Q?", "A"), &s, &[], PromptMode::ZeroShot).unwrap();
        assert_eq!(p.messages.len(), 1);
        assert_eq!(p.messages[0].role, Role::User);
    }

    #[test]
    fn exemplar_validation() {
        validate_exemplars(&[Exemplar::solar_energy()]).unwrap();
        let bad = Exemplar {
            title: None,
            context: "nothing here".into(),
            question: "q".into(),
            answer: "four haploid".into(),
        };
        assert!(matches!(
            validate_exemplars(&[bad]),
            Err(PromptError::ExemplarMissingAnswer { index: 0, .. })
        ));
    }

    #[test]
    fn preset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        std::fs::write(
            &path,
            r#"
name = "custom"
context_style_text = "news-style paragraph"
question_style_text = "news-style"
layout = "single_user"

[[exemplars]]
context = "The river flooded in April."
question = "When did the river flood?"
answer = "April"
"#,
        )
        .unwrap();
        let (preset, ex) = load_preset_file(&path).unwrap();
        assert_eq!(preset.name, PresetName::Custom);
        assert_eq!(preset.templates, Templates::default());
        assert_eq!(preset.layout, MessageLayout::SingleUser);
        assert_eq!(ex.len(), 1);
    }
}
