//! Guideline + patient context → validated plan, through a chat-completion
//! backend and a validation-driven refinement loop.

mod backend;
mod prompt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::case::PatientContext;
use crate::plan::{check_document, AliasTable, Plan, StructureCatalog, ValidationReport, Violation, ViolationCode};

pub use backend::{
    completion_from_response, BackendError, Message, PlannerBackend, RemoteBackend, RemoteConfig, Role,
    ScriptedBackend,
};
pub use prompt::{build_system_prompt, build_user_message, format_refinement_message};

pub const DEFAULT_MAX_REFINE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineDoc {
    pub id: String,
    pub body: String,
}

impl GuidelineDoc {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Result<Self, PlanningError> {
        let doc = GuidelineDoc {
            id: id.into(),
            body: body.into(),
        };
        if doc.body.trim().is_empty() {
            return Err(PlanningError::InvalidInput(format!("guideline `{}` has an empty body", doc.id)));
        }
        Ok(doc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningResult {
    pub plan: Plan,
    /// Backend calls used, at least 1.
    pub attempts: usize,
    pub transcript: Vec<Message>,
    /// One report per attempt; the last is empty.
    pub reports: Vec<ValidationReport>,
}

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("invalid planning input: {0}")]
    InvalidInput(String),
    #[error("backend failed on attempt {attempt}: {source}")]
    Backend {
        attempt: usize,
        #[source]
        source: BackendError,
        transcript: Vec<Message>,
    },
    #[error("no valid plan after {attempts} attempt(s); last report:\n{report}")]
    Exhausted {
        attempts: usize,
        report: ValidationReport,
        transcript: Vec<Message>,
        reports: Vec<ValidationReport>,
    },
}

impl PlanningError {
    pub fn transcript(&self) -> &[Message] {
        match self {
            PlanningError::InvalidInput(_) => &[],
            PlanningError::Backend { transcript, .. } | PlanningError::Exhausted { transcript, .. } => transcript,
        }
    }
}

fn is_plan_like(v: &Value) -> bool {
    v.as_object().is_some_and(|o| o.contains_key("calls"))
}

/// Bodies of the fenced code blocks of `text`, in order.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        // skip the info string (e.g. `json`) up to the end of the line
        let Some(nl) = after.find('\n') else { break };
        let body = &after[nl + 1..];
        let Some(end) = body.find("```") else { break };
        blocks.push(&body[..end]);
        rest = &body[end + 3..];
    }
    blocks
}

/// The first plan document in a completion: the whole text if it is one,
/// otherwise the first fenced block whose JSON object has a `calls` field.
pub fn extract_plan_document(completion: &str) -> Option<&str> {
    let whole = completion.trim();
    if serde_json::from_str::<Value>(whole).is_ok_and(|v| is_plan_like(&v)) {
        return Some(whole);
    }
    fenced_blocks(completion)
        .into_iter()
        .find(|b| serde_json::from_str::<Value>(b).is_ok_and(|v| is_plan_like(&v)))
}

/// Extract, parse and validate the plan in a completion.
pub fn check_completion(
    completion: &str,
    catalog: &StructureCatalog,
    initial_rois: &[String],
) -> (Option<Plan>, ValidationReport) {
    match extract_plan_document(completion) {
        Some(doc) => check_document(doc, catalog, initial_rois),
        None => {
            // Surface the JSON error of the most likely candidate, if any.
            let candidate = fenced_blocks(completion).first().copied().unwrap_or(completion);
            let detail = match serde_json::from_str::<Value>(candidate) {
                Err(e) => format!("no plan document found; JSON error: {e}"),
                Ok(_) => "no plan document found; expected a JSON object with a `calls` array".to_string(),
            };
            let report = ValidationReport {
                violations: vec![Violation {
                    code: ViolationCode::Schema,
                    call_id: None,
                    message: detail,
                }],
            };
            (None, report)
        }
    }
}

/// Run the planning loop: prompt, validate the completion, feed violations
/// back, and stop at the first valid plan or after `max_refine` backend calls.
pub fn generate_plan(
    backend: &dyn PlannerBackend,
    guideline: &GuidelineDoc,
    context: &PatientContext,
    catalog: &StructureCatalog,
    aliases: &AliasTable,
    max_refine: usize,
) -> Result<PlanningResult, PlanningError> {
    if max_refine == 0 {
        return Err(PlanningError::InvalidInput("max_refine must be at least 1".into()));
    }
    if catalog.is_empty() {
        return Err(PlanningError::InvalidInput("structure catalog is empty".into()));
    }
    context.check().map_err(PlanningError::InvalidInput)?;

    let mut transcript = vec![
        Message::system(build_system_prompt(catalog, aliases, &context.initial_rois)),
        Message::user(build_user_message(guideline, context)),
    ];
    let mut reports = Vec::new();

    for attempt in 1..=max_refine {
        let completion = match backend.complete(&transcript) {
            Ok(c) => c,
            Err(source) => {
                return Err(PlanningError::Backend {
                    attempt,
                    source,
                    transcript,
                })
            }
        };
        transcript.push(Message::assistant(completion.as_str()));
        let (plan, report) = check_completion(&completion, catalog, &context.initial_rois);
        let valid = report.is_valid();
        reports.push(report);
        if valid {
            return Ok(PlanningResult {
                plan: plan.expect("valid report implies a parsed plan"),
                attempts: attempt,
                transcript,
                reports,
            });
        }
        if attempt < max_refine {
            let feedback = format_refinement_message(reports.last().expect("just pushed"))?;
            transcript.push(Message::user(feedback));
        }
    }
    Err(PlanningError::Exhausted {
        attempts: max_refine,
        report: reports.last().cloned().unwrap_or_default(),
        transcript,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = include_str!("../../tests/fixtures/esophagus/reference_plan.json");

    #[test]
    fn extracts_raw_and_fenced_documents() {
        assert_eq!(extract_plan_document(REFERENCE), Some(REFERENCE.trim()));
        let chatty = format!("Sure!\n```\n{{\"a\": 1}}\n```\nand\n```json\n{REFERENCE}```\nbye");
        assert_eq!(extract_plan_document(&chatty).map(str::trim), Some(REFERENCE.trim()));
        assert_eq!(extract_plan_document("no plan here"), None);
    }

    #[test]
    fn missing_document_is_schema_violation() {
        let catalog = StructureCatalog::new(["Heart"]).unwrap();
        let (plan, report) = check_completion("```json\n{oops\n```", &catalog, &["GTV".into()]);
        assert!(plan.is_none());
        assert_eq!(report.codes(), vec![ViolationCode::Schema]);
        assert!(report.violations[0].message.contains("JSON error"));
    }

    #[test]
    fn empty_guideline_rejected() {
        assert!(GuidelineDoc::new("g", "  \n").is_err());
    }
}
