//! Prompt templates with `{{name}}` placeholders.

use std::sync::OnceLock;

use regex::{Captures, Regex};

pub const INPUT_SECTION: &str = include_str!("../../assets/prompts/input.md");
pub const REASONING_CHAIN_SECTION: &str = include_str!("../../assets/prompts/reasoning_chain.md");
pub const SPECIFICATION_INSTRUCTIONS: &str =
    include_str!("../../assets/prompts/specification_instructions.md");
pub const SPACE_INSTRUCTIONS: &str = include_str!("../../assets/prompts/space_instructions.md");
pub const TASK_GENERATION_INSTRUCTIONS: &str =
    include_str!("../../assets/prompts/task_generation.md");

pub const SHORTSMAKER_SPECIFICATION_EXAMPLE: &str =
    include_str!("../../assets/prompts/examples/shortsmaker_specification.json");
pub const SHORTSMAKER_SPACE_EXAMPLE: &str =
    include_str!("../../assets/prompts/examples/shortsmaker_space.json");
pub const FREE_FORM_SPACE_EXAMPLE: &str =
    include_str!("../../assets/prompts/examples/free_form_space.json");

/// The three sections of an analysis prompt. The input and reasoning-chain
/// sections are shared by the specification and space templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub input_section: &'static str,
    pub reasoning_chain_section: &'static str,
    pub instruction_section: &'static str,
}

pub const SPECIFICATION_TEMPLATE: PromptTemplate = PromptTemplate {
    input_section: INPUT_SECTION,
    reasoning_chain_section: REASONING_CHAIN_SECTION,
    instruction_section: SPECIFICATION_INSTRUCTIONS,
};

pub const SPACE_TEMPLATE: PromptTemplate = PromptTemplate {
    input_section: INPUT_SECTION,
    reasoning_chain_section: REASONING_CHAIN_SECTION,
    instruction_section: SPACE_INSTRUCTIONS,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unresolved prompt placeholder `{{{{{0}}}}}`")]
pub struct UnresolvedPlaceholder(pub String);

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-z_]+)\}\}").expect("valid placeholder regex"))
}

/// Substitutes every placeholder in one pass; substituted text is never
/// rescanned, so source code containing braces is safe.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, UnresolvedPlaceholder> {
    let mut missing = None;
    let out = placeholder().replace_all(template, |c: &Captures| {
        let name = &c[1];
        match vars.iter().find(|(k, _)| *k == name) {
            Some((_, v)) => v.to_string(),
            None => {
                missing.get_or_insert_with(|| name.to_string());
                String::new()
            }
        }
    });
    match missing {
        Some(name) => Err(UnresolvedPlaceholder(name)),
        None => Ok(out.into_owned()),
    }
}
