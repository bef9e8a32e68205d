use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{parse_plan, CallArgs, IssueKind, Plan, StructureCatalog, Tool, PLAN_FORMAT_VERSION};

pub const MAX_ROI_NAME_LEN: usize = 64;

/// Closed set of validation violation codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCode {
    #[serde(rename = "E_SCHEMA")]
    Schema,
    #[serde(rename = "E_UNKNOWN_TOOL")]
    UnknownTool,
    #[serde(rename = "E_UNDEF_ROI")]
    UndefRoi,
    #[serde(rename = "E_DUP_OUTPUT")]
    DupOutput,
    #[serde(rename = "E_NEG_MARGIN")]
    NegMargin,
    #[serde(rename = "E_UNKNOWN_STRUCTURE")]
    UnknownStructure,
    #[serde(rename = "E_EMPTY_PLAN")]
    EmptyPlan,
    #[serde(rename = "E_BAD_NAME")]
    BadName,
}

impl ViolationCode {
    pub const ALL: [ViolationCode; 8] = [
        ViolationCode::Schema,
        ViolationCode::UnknownTool,
        ViolationCode::UndefRoi,
        ViolationCode::DupOutput,
        ViolationCode::NegMargin,
        ViolationCode::UnknownStructure,
        ViolationCode::EmptyPlan,
        ViolationCode::BadName,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::Schema => "E_SCHEMA",
            ViolationCode::UnknownTool => "E_UNKNOWN_TOOL",
            ViolationCode::UndefRoi => "E_UNDEF_ROI",
            ViolationCode::DupOutput => "E_DUP_OUTPUT",
            ViolationCode::NegMargin => "E_NEG_MARGIN",
            ViolationCode::UnknownStructure => "E_UNKNOWN_STRUCTURE",
            ViolationCode::EmptyPlan => "E_EMPTY_PLAN",
            ViolationCode::BadName => "E_BAD_NAME",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub call_id: Option<u32>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.call_id {
            Some(id) => write!(f, "{} (call {}): {}", self.code, id, self.message),
            None => write!(f, "{} (plan): {}", self.code, self.message),
        }
    }
}

/// Every violation found in a plan; empty means valid.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }

    fn push(&mut self, code: ViolationCode, call_id: Option<u32>, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            call_id,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("plan is valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Letters, digits and underscore; 1 to 64 characters.
pub fn is_valid_roi_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= MAX_ROI_NAME_LEN
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Check a parsed plan by simulating its dataflow.
///
/// `initial_rois` are bound before the first call. All violations are
/// collected; nothing stops at the first problem.
pub fn validate_plan(plan: &Plan, catalog: &StructureCatalog, initial_rois: &[String]) -> ValidationReport {
    use ViolationCode as C;
    let mut report = ValidationReport::default();

    if plan.version != PLAN_FORMAT_VERSION {
        report.push(
            C::Schema,
            None,
            format!("unsupported plan version `{}`, expected `{PLAN_FORMAT_VERSION}`", plan.version),
        );
    }
    if plan.calls.is_empty() {
        report.push(C::EmptyPlan, None, "plan contains no tool calls");
        return report;
    }

    let mut defined: BTreeSet<&str> = initial_rois.iter().map(String::as_str).collect();
    let mut last_id: Option<u32> = None;

    for call in &plan.calls {
        let id = Some(call.id);
        if let Some(prev) = last_id {
            if call.id <= prev {
                report.push(C::Schema, id, format!("call id {} does not follow {prev}", call.id));
            }
        }
        last_id = Some(last_id.map_or(call.id, |p| p.max(call.id)));

        match &call.args {
            CallArgs::Segment { structures } => {
                if structures.is_empty() {
                    report.push(C::Schema, id, "segment needs at least one structure");
                }
                for s in structures {
                    if !catalog.contains(s) {
                        report.push(
                            C::UnknownStructure,
                            id,
                            format!("structure `{s}` is not in the segmentation catalog"),
                        );
                    }
                }
                if structures.len() != call.outputs.len() {
                    report.push(C::Schema, id, "segment must declare one output per structure");
                }
            }
            CallArgs::Dilate { margin, .. } => {
                let names = ["x_neg", "x_pos", "y_neg", "y_pos", "z_neg", "z_pos"];
                for (name, value) in names.iter().zip(margin.components()) {
                    if !(value.is_finite() && value >= 0.0) {
                        report.push(C::NegMargin, id, format!("margin {name} = {value} mm must be >= 0"));
                    }
                }
            }
            CallArgs::Union { inputs } if inputs.is_empty() => {
                report.push(C::Schema, id, "union needs at least one input");
            }
            CallArgs::Subtract { subtract, .. } if subtract.is_empty() => {
                report.push(C::Schema, id, "subtract needs at least one subtrahend");
            }
            CallArgs::Intersect { inputs } if inputs.len() != 2 => {
                report.push(C::Schema, id, "intersect takes exactly two inputs");
            }
            _ => {}
        }
        if call.tool() != Tool::Segment && call.outputs.len() != 1 {
            report.push(C::Schema, id, format!("{} binds exactly one output", call.tool()));
        }

        for input in call.args.roi_inputs() {
            if !is_valid_roi_name(input) {
                report.push(C::BadName, id, format!("input `{input}` is not a valid ROI name"));
            } else if !defined.contains(input) {
                report.push(C::UndefRoi, id, format!("ROI `{input}` is used before it is defined"));
            }
        }

        for output in &call.outputs {
            if !is_valid_roi_name(output) {
                report.push(
                    C::BadName,
                    id,
                    format!("output `{output}` must be 1-64 letters, digits or underscores"),
                );
            } else if !defined.insert(output.as_str()) {
                report.push(C::DupOutput, id, format!("output `{output}` is already defined"));
            }
        }
    }
    report
}

/// Parse and validate a plan document in one step.
///
/// Shape problems become `E_SCHEMA` / `E_UNKNOWN_TOOL` violations, so the
/// result is always a report and, when parsing succeeded, the plan.
pub fn check_document(
    text: &str,
    catalog: &StructureCatalog,
    initial_rois: &[String],
) -> (Option<Plan>, ValidationReport) {
    match parse_plan(text) {
        Ok(plan) => {
            let report = validate_plan(&plan, catalog, initial_rois);
            (Some(plan), report)
        }
        Err(err) => {
            let violations = err
                .issues
                .into_iter()
                .map(|issue| Violation {
                    code: match issue.kind {
                        IssueKind::Schema => ViolationCode::Schema,
                        IssueKind::UnknownTool => ViolationCode::UnknownTool,
                    },
                    call_id: issue.call_id,
                    message: format!("{}: {}", issue.path, issue.message),
                })
                .collect();
            (None, ValidationReport { violations })
        }
    }
}
