//! Actor stage: render the dataset-constrained prompt and turn the backend's
//! reply into a [`GeneratedScript`].

use crate::backends::{default_params, Backend, BackendError, BackendRequest, SamplingParams, Stage};
use crate::dataset::DatasetRef;
use crate::interpreter::ClueSet;
use crate::query::UserQuery;
use crate::script::{first_code_block, GeneratedScript};
use crate::template::render;

pub const ACTOR_TEMPLATE: &str = include_str!("../assets/actor_prompt.txt");
pub const OUTPUT_CONTRACT: &str = include_str!("../assets/output_contract.txt");

/// Sentence every actor and critic prompt carries word for word.
pub const CONTAINMENT_CLAUSE: &str = "Using only the data provided in the dataset described below";

#[derive(Debug, thiserror::Error)]
pub enum ActorError {
    #[error("backend response contains no fenced code block")]
    NoCodeBlock,
    #[error("backend returned an empty script")]
    EmptyScript,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Tables with their columns and kinds, one column per line.
pub fn schema_block(dataset: &DatasetRef) -> String {
    let qualified = dataset.qualified_columns();
    let mut names = qualified.into_iter();
    let mut out = String::new();
    for table in &dataset.schema {
        out.push_str(&format!("- table {} ({} rows)\n", table.table, table.row_count));
        for _ in &table.columns {
            let (name, kind) = names.next().expect("one qualified name per column");
            out.push_str(&format!("    - {name}: {kind}\n"));
        }
    }
    out
}

fn structured_section(clues: &ClueSet) -> String {
    let structured = clues.structured();
    if structured.is_empty() {
        return String::new();
    }
    let mut out = String::from("Structured clues (label: relevance probability):\n");
    for (label, p) in structured {
        out.push_str(&format!("- {label}: {p:.3}\n"));
    }
    out.push('\n');
    out
}

fn creative_section(clues: &ClueSet) -> String {
    let creative = clues.creative();
    if creative.is_empty() {
        return String::new();
    }
    let mut out = String::from("Creative clues:\n");
    for label in creative {
        out.push_str(&format!("- {label}\n"));
    }
    out.push('\n');
    out
}

pub fn assemble_actor_prompt(query: &UserQuery, dataset: &DatasetRef, clues: &ClueSet) -> String {
    render(
        ACTOR_TEMPLATE,
        &[
            ("query_id", &query.id),
            ("query", &query.text),
            ("dataset_ref", &dataset.url_or_path),
            ("schema_block", &schema_block(dataset)),
            ("structured_clues", &structured_section(clues)),
            ("creative_clues", &creative_section(clues)),
            ("output_contract", OUTPUT_CONTRACT),
        ],
    )
}

/// Parses an actor reply: the first fenced block is the script.
pub fn parse_actor_response(response: &str) -> Result<GeneratedScript, ActorError> {
    let source = first_code_block(response).ok_or(ActorError::NoCodeBlock)?;
    if source.trim().is_empty() {
        return Err(ActorError::EmptyScript);
    }
    Ok(GeneratedScript::from_actor(source))
}

pub async fn generate_script(
    prompt: &str,
    backend: &dyn Backend,
    params: Option<SamplingParams>,
) -> Result<GeneratedScript, ActorError> {
    let request =
        BackendRequest::new(Stage::Actor, prompt).with_params(params.unwrap_or_else(|| default_params(Stage::Actor)));
    let response = backend.complete(&request).await?;
    parse_actor_response(&response)
}
