//! The tool-call plan language.
//!
//! A plan is a JSON document holding an ordered list of calls to five
//! tools (`segment`, `dilate`, `union`, `subtract`, `intersect`). Calls
//! communicate through named ROIs: each call reads ROIs defined by the
//! initial environment or by earlier calls and binds its own outputs.

mod canonical;
mod catalog;
mod validate;

use std::fmt;

use serde_json::{json, Map, Value};

use crate::volume::MarginSpec;

pub use canonical::{canonical_keys, canonicalize_call, CanonicalError};
pub use catalog::{
    resolve_aliases, resolve_margin_range, AliasTable, CatalogError, MarginRangeSpec, ResolvedMargin,
    StructureCatalog,
};
pub use validate::{check_document, is_valid_roi_name, validate_plan, ValidationReport, Violation, ViolationCode};

pub const PLAN_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tool {
    Segment,
    Dilate,
    Union,
    Subtract,
    Intersect,
}

impl Tool {
    pub const ALL: [Tool; 5] = [Tool::Segment, Tool::Dilate, Tool::Union, Tool::Subtract, Tool::Intersect];

    pub fn as_str(self) -> &'static str {
        match self {
            Tool::Segment => "segment",
            Tool::Dilate => "dilate",
            Tool::Union => "union",
            Tool::Subtract => "subtract",
            Tool::Intersect => "intersect",
        }
    }

    pub fn from_name(name: &str) -> Option<Tool> {
        Tool::ALL.into_iter().find(|t| t.as_str() == name)
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tool-specific arguments.
#[derive(Debug, Clone, PartialEq)]
pub enum CallArgs {
    /// `{"structures": [...]}`; one output per structure, in order.
    Segment { structures: Vec<String> },
    /// `{"input": roi, "margin": {x_neg, ..., z_pos}}`
    Dilate { input: String, margin: MarginSpec },
    /// `{"inputs": [roi, ...]}`
    Union { inputs: Vec<String> },
    /// `{"input": roi, "subtract": [roi, ...]}`
    Subtract { input: String, subtract: Vec<String> },
    /// `{"inputs": [roi, roi]}`
    Intersect { inputs: Vec<String> },
}

impl CallArgs {
    pub fn tool(&self) -> Tool {
        match self {
            CallArgs::Segment { .. } => Tool::Segment,
            CallArgs::Dilate { .. } => Tool::Dilate,
            CallArgs::Union { .. } => Tool::Union,
            CallArgs::Subtract { .. } => Tool::Subtract,
            CallArgs::Intersect { .. } => Tool::Intersect,
        }
    }

    /// ROI names this call reads.
    pub fn roi_inputs(&self) -> Vec<&str> {
        match self {
            CallArgs::Segment { .. } => Vec::new(),
            CallArgs::Dilate { input, .. } => vec![input.as_str()],
            CallArgs::Union { inputs } | CallArgs::Intersect { inputs } => inputs.iter().map(String::as_str).collect(),
            CallArgs::Subtract { input, subtract } => std::iter::once(input.as_str())
                .chain(subtract.iter().map(String::as_str))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub id: u32,
    pub args: CallArgs,
    /// Bound ROI names. Exactly one, except for `segment`, which binds one per structure.
    pub outputs: Vec<String>,
}

impl ToolCall {
    pub fn tool(&self) -> Tool {
        self.args.tool()
    }

    /// One-line human-readable rendering: tool, inputs, margins, outputs.
    pub fn summary(&self) -> String {
        let outs = self.outputs.join(", ");
        match &self.args {
            CallArgs::Segment { structures } => format!("#{} segment [{}] -> [{}]", self.id, structures.join(", "), outs),
            CallArgs::Dilate { input, margin } => {
                let c = margin.components();
                format!(
                    "#{} dilate {} by x-{} x+{} y-{} y+{} z-{} z+{} mm -> {}",
                    self.id, input, c[0], c[1], c[2], c[3], c[4], c[5], outs
                )
            }
            CallArgs::Union { inputs } => format!("#{} union [{}] -> {}", self.id, inputs.join(", "), outs),
            CallArgs::Subtract { input, subtract } => {
                format!("#{} subtract {} minus [{}] -> {}", self.id, input, subtract.join(", "), outs)
            }
            CallArgs::Intersect { inputs } => format!("#{} intersect [{}] -> {}", self.id, inputs.join(", "), outs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub version: String,
    pub guideline_id: String,
    pub patient_id: String,
    pub calls: Vec<ToolCall>,
}

impl Plan {
    pub fn new(guideline_id: impl Into<String>, patient_id: impl Into<String>, calls: Vec<ToolCall>) -> Self {
        Plan {
            version: PLAN_FORMAT_VERSION.to_string(),
            guideline_id: guideline_id.into(),
            patient_id: patient_id.into(),
            calls,
        }
    }

    /// Outputs that no later call reads, in plan order.
    pub fn terminal_outputs(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (idx, call) in self.calls.iter().enumerate() {
            for name in &call.outputs {
                let consumed = self.calls[idx + 1..]
                    .iter()
                    .any(|later| later.args.roi_inputs().contains(&name.as_str()));
                if !consumed {
                    out.push(name.clone());
                }
            }
        }
        out
    }

    pub fn to_value(&self) -> Value {
        let calls: Vec<Value> = self.calls.iter().map(call_to_value).collect();
        json!({
            "version": self.version,
            "guideline_id": self.guideline_id,
            "patient_id": self.patient_id,
            "calls": calls,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("plan values serialize");
        s.push('\n');
        s
    }
}

fn margin_to_value(m: &MarginSpec) -> Value {
    json!({
        "x_neg": m.x_neg, "x_pos": m.x_pos,
        "y_neg": m.y_neg, "y_pos": m.y_pos,
        "z_neg": m.z_neg, "z_pos": m.z_pos,
    })
}

fn call_to_value(call: &ToolCall) -> Value {
    let args = match &call.args {
        CallArgs::Segment { structures } => json!({ "structures": structures }),
        CallArgs::Dilate { input, margin } => json!({ "input": input, "margin": margin_to_value(margin) }),
        CallArgs::Union { inputs } | CallArgs::Intersect { inputs } => json!({ "inputs": inputs }),
        CallArgs::Subtract { input, subtract } => json!({ "input": input, "subtract": subtract }),
    };
    let output = match call.tool() {
        Tool::Segment => json!(call.outputs),
        _ => json!(call.outputs.first().cloned().unwrap_or_default()),
    };
    json!({ "id": call.id, "tool": call.tool().as_str(), "args": args, "output": output })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    Schema,
    UnknownTool,
}

/// One shape problem found while parsing, located by a JSON path.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseIssue {
    pub kind: IssueKind,
    pub path: String,
    pub call_index: Option<usize>,
    pub call_id: Option<u32>,
    pub message: String,
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid plan document: {}", issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct PlanParseError {
    pub issues: Vec<ParseIssue>,
}

/// Parse a plan document, reporting every shape problem found.
///
/// Only structure is checked here; dataflow, names and catalogs are the
/// validator's job.
pub fn parse_plan(text: &str) -> Result<Plan, PlanParseError> {
    let value: Value = serde_json::from_str(text).map_err(|e| PlanParseError {
        issues: vec![ParseIssue {
            kind: IssueKind::Schema,
            path: "$".into(),
            call_index: None,
            call_id: None,
            message: format!("not valid JSON: {e}"),
        }],
    })?;
    plan_from_value(&value)
}

pub fn plan_from_value(value: &Value) -> Result<Plan, PlanParseError> {
    let mut p = Parser { issues: Vec::new() };
    let plan = p.plan(value);
    match plan {
        Some(plan) if p.issues.is_empty() => Ok(plan),
        _ => Err(PlanParseError { issues: p.issues }),
    }
}

struct Parser {
    issues: Vec<ParseIssue>,
}

struct Loc {
    path: String,
    call_index: Option<usize>,
    call_id: Option<u32>,
}

impl Loc {
    fn child(&self, key: &str) -> Self {
        Loc {
            path: format!("{}.{}", self.path, key),
            call_index: self.call_index,
            call_id: self.call_id,
        }
    }

    fn index(&self, i: usize) -> Self {
        Loc {
            path: format!("{}[{}]", self.path, i),
            call_index: self.call_index,
            call_id: self.call_id,
        }
    }
}

impl Parser {
    fn push(&mut self, loc: &Loc, kind: IssueKind, message: impl Into<String>) {
        self.issues.push(ParseIssue {
            kind,
            path: loc.path.clone(),
            call_index: loc.call_index,
            call_id: loc.call_id,
            message: message.into(),
        });
    }

    fn object<'v>(&mut self, v: &'v Value, loc: &Loc, allowed: &[&str]) -> Option<&'v Map<String, Value>> {
        let Some(obj) = v.as_object() else {
            self.push(loc, IssueKind::Schema, "expected an object");
            return None;
        };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.push(&loc.child(key), IssueKind::Schema, format!("unexpected field `{key}`"));
            }
        }
        Some(obj)
    }

    fn field<'v>(&mut self, obj: &'v Map<String, Value>, key: &str, loc: &Loc) -> Option<&'v Value> {
        let v = obj.get(key);
        if v.is_none() {
            self.push(loc, IssueKind::Schema, format!("missing required field `{key}`"));
        }
        v
    }

    fn string(&mut self, v: &Value, loc: &Loc) -> Option<String> {
        match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.push(loc, IssueKind::Schema, "expected a string");
                None
            }
        }
    }

    fn string_list(&mut self, v: &Value, loc: &Loc) -> Option<Vec<String>> {
        let Some(arr) = v.as_array() else {
            self.push(loc, IssueKind::Schema, "expected an array of strings");
            return None;
        };
        let mut out = Vec::with_capacity(arr.len());
        let mut ok = true;
        for (i, item) in arr.iter().enumerate() {
            match self.string(item, &loc.index(i)) {
                Some(s) => out.push(s),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn number(&mut self, v: &Value, loc: &Loc) -> Option<f64> {
        match v.as_f64() {
            Some(x) => Some(x),
            None => {
                self.push(loc, IssueKind::Schema, "expected a number (mm)");
                None
            }
        }
    }

    fn plan(&mut self, v: &Value) -> Option<Plan> {
        let root = Loc {
            path: "$".into(),
            call_index: None,
            call_id: None,
        };
        let obj = self.object(v, &root, &["version", "guideline_id", "patient_id", "calls"])?;
        let version = self.field(obj, "version", &root).and_then(|v| self.string(v, &root.child("version")));
        let guideline_id = self
            .field(obj, "guideline_id", &root)
            .and_then(|v| self.string(v, &root.child("guideline_id")));
        let patient_id = self
            .field(obj, "patient_id", &root)
            .and_then(|v| self.string(v, &root.child("patient_id")));
        let calls_loc = root.child("calls");
        let calls = self.field(obj, "calls", &root).and_then(|v| match v.as_array() {
            Some(arr) => {
                let parsed: Vec<Option<ToolCall>> =
                    arr.iter().enumerate().map(|(i, c)| self.call(c, i, &calls_loc)).collect();
                parsed.into_iter().collect::<Option<Vec<_>>>()
            }
            None => {
                self.push(&calls_loc, IssueKind::Schema, "expected an array of calls");
                None
            }
        });
        Some(Plan {
            version: version?,
            guideline_id: guideline_id?,
            patient_id: patient_id?,
            calls: calls?,
        })
    }

    fn call(&mut self, v: &Value, index: usize, calls_loc: &Loc) -> Option<ToolCall> {
        let mut loc = calls_loc.index(index);
        loc.call_index = Some(index);
        let obj = self.object(v, &loc, &["id", "tool", "args", "output"])?;

        let id = self.field(obj, "id", &loc).and_then(|v| match v.as_u64() {
            Some(n) if n >= 1 && n <= u64::from(u32::MAX) => Some(n as u32),
            _ => {
                self.push(&loc.child("id"), IssueKind::Schema, "expected a positive integer id");
                None
            }
        });
        loc.call_id = id;

        let tool = self.field(obj, "tool", &loc).and_then(|v| {
            let name = self.string(v, &loc.child("tool"))?;
            let tool = Tool::from_name(&name);
            if tool.is_none() {
                self.push(
                    &loc.child("tool"),
                    IssueKind::UnknownTool,
                    format!(
                        "unknown tool `{name}` in call {index}; expected one of segment, dilate, union, subtract, intersect"
                    ),
                );
            }
            tool
        });

        let args_loc = loc.child("args");
        let args = match (tool, self.field(obj, "args", &loc)) {
            (Some(tool), Some(a)) => self.args(tool, a, &args_loc),
            _ => None,
        };

        let out_loc = loc.child("output");
        let outputs = self.field(obj, "output", &loc).and_then(|v| match (v, tool) {
            (Value::String(s), _) => Some(vec![s.clone()]),
            (Value::Array(_), Some(Tool::Segment) | None) => self.string_list(v, &out_loc),
            (Value::Array(_), Some(_)) => {
                self.push(&out_loc, IssueKind::Schema, "only segment may declare several outputs");
                None
            }
            _ => {
                self.push(&out_loc, IssueKind::Schema, "expected a ROI name or an array of ROI names");
                None
            }
        });

        let (args, outputs) = (args?, outputs?);
        if let CallArgs::Segment { structures } = &args {
            if structures.len() != outputs.len() {
                self.push(
                    &out_loc,
                    IssueKind::Schema,
                    format!(
                        "segment declares {} structures but {} outputs",
                        structures.len(),
                        outputs.len()
                    ),
                );
                return None;
            }
        }
        Some(ToolCall { id: id?, args, outputs })
    }

    fn non_empty(&mut self, list: Option<Vec<String>>, loc: &Loc, min: usize, max: Option<usize>) -> Option<Vec<String>> {
        let list = list?;
        let ok = list.len() >= min && max.is_none_or(|m| list.len() <= m);
        if !ok {
            let what = match max {
                Some(m) if m == min => format!("exactly {min}"),
                _ => format!("at least {min}"),
            };
            self.push(loc, IssueKind::Schema, format!("expected {what} entries, got {}", list.len()));
            return None;
        }
        Some(list)
    }

    fn args(&mut self, tool: Tool, v: &Value, loc: &Loc) -> Option<CallArgs> {
        match tool {
            Tool::Segment => {
                let obj = self.object(v, loc, &["structures"])?;
                let l = loc.child("structures");
                let list = self.field(obj, "structures", loc).and_then(|s| self.string_list(s, &l));
                let structures = self.non_empty(list, &l, 1, None)?;
                Some(CallArgs::Segment { structures })
            }
            Tool::Dilate => {
                let obj = self.object(v, loc, &["input", "margin"])?;
                let input = self.field(obj, "input", loc).and_then(|s| self.string(s, &loc.child("input")));
                let margin = self.field(obj, "margin", loc).and_then(|m| self.margin(m, &loc.child("margin")));
                Some(CallArgs::Dilate {
                    input: input?,
                    margin: margin?,
                })
            }
            Tool::Union => {
                let obj = self.object(v, loc, &["inputs"])?;
                let l = loc.child("inputs");
                let list = self.field(obj, "inputs", loc).and_then(|s| self.string_list(s, &l));
                let inputs = self.non_empty(list, &l, 1, None)?;
                Some(CallArgs::Union { inputs })
            }
            Tool::Subtract => {
                let obj = self.object(v, loc, &["input", "subtract"])?;
                let input = self.field(obj, "input", loc).and_then(|s| self.string(s, &loc.child("input")));
                let l = loc.child("subtract");
                let list = self.field(obj, "subtract", loc).and_then(|s| self.string_list(s, &l));
                let subtract = self.non_empty(list, &l, 1, None);
                Some(CallArgs::Subtract {
                    input: input?,
                    subtract: subtract?,
                })
            }
            Tool::Intersect => {
                let obj = self.object(v, loc, &["inputs"])?;
                let l = loc.child("inputs");
                let list = self.field(obj, "inputs", loc).and_then(|s| self.string_list(s, &l));
                let inputs = self.non_empty(list, &l, 2, Some(2))?;
                Some(CallArgs::Intersect { inputs })
            }
        }
    }

    fn margin(&mut self, v: &Value, loc: &Loc) -> Option<MarginSpec> {
        const KEYS: [&str; 6] = ["x_neg", "x_pos", "y_neg", "y_pos", "z_neg", "z_pos"];
        let obj = self.object(v, loc, &KEYS)?;
        let mut c = [0.0; 6];
        let mut ok = true;
        for (slot, key) in c.iter_mut().zip(KEYS) {
            match self.field(obj, key, loc).and_then(|x| self.number(x, &loc.child(key))) {
                Some(x) => *slot = x,
                None => ok = false,
            }
        }
        ok.then_some(MarginSpec {
            x_neg: c[0],
            x_pos: c[1],
            y_neg: c[2],
            y_pos: c[3],
            z_neg: c[4],
            z_pos: c[5],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = include_str!("../../tests/fixtures/esophagus/reference_plan.json");

    #[test]
    fn parses_reference_fixture() {
        let plan = parse_plan(REFERENCE).unwrap();
        assert_eq!(plan.calls.len(), 6);
        assert_eq!(plan.version, "1");
        assert_eq!(plan.calls[0].tool(), Tool::Segment);
        assert_eq!(plan.calls[5].outputs, vec!["PTV".to_string()]);
        assert_eq!(plan.terminal_outputs(), vec!["PTV".to_string()]);
    }

    #[test]
    fn empty_calls_parse() {
        let plan = parse_plan(r#"{"version":"1","guideline_id":"g","patient_id":"p","calls":[]}"#).unwrap();
        assert!(plan.calls.is_empty());
    }

    #[test]
    fn unknown_tool_names_call_index() {
        let doc = r#"{"version":"1","guideline_id":"g","patient_id":"p","calls":[
            {"id":1,"tool":"segment","args":{"structures":["Heart"]},"output":"Heart"},
            {"id":2,"tool":"dilatee","args":{"input":"GTV"},"output":"X"}]}"#;
        let err = parse_plan(doc).unwrap_err();
        assert_eq!(err.issues.len(), 1);
        let issue = &err.issues[0];
        assert_eq!(issue.kind, IssueKind::UnknownTool);
        assert_eq!(issue.call_index, Some(1));
        assert_eq!(issue.path, "$.calls[1].tool");
        assert!(issue.message.contains("call 1"));
    }

    #[test]
    fn missing_fields_are_all_reported_with_paths() {
        let doc = r#"{"version":"1","patient_id":"p","calls":[
            {"id":1,"tool":"dilate","args":{"input":"GTV","margin":{"x_neg":1}},"output":"X"},
            {"id":0,"tool":"union","args":{"inputs":[]},"output":"Y"}]}"#;
        let err = parse_plan(doc).unwrap_err();
        let paths: Vec<_> = err.issues.iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"$"), "{paths:?}");
        assert!(paths.contains(&"$.calls[0].args.margin"));
        assert!(paths.contains(&"$.calls[1].id"));
        assert!(paths.contains(&"$.calls[1].args.inputs"));
        assert!(err.issues.iter().all(|i| i.kind == IssueKind::Schema));
    }

    #[test]
    fn segment_output_arity() {
        let doc = r#"{"version":"1","guideline_id":"g","patient_id":"p","calls":[
            {"id":1,"tool":"segment","args":{"structures":["Lung_L","Lung_R"]},"output":"Lungs"}]}"#;
        assert!(parse_plan(doc).is_err());
        let doc = r#"{"version":"1","guideline_id":"g","patient_id":"p","calls":[
            {"id":1,"tool":"union","args":{"inputs":["A"]},"output":["B","C"]}]}"#;
        assert!(parse_plan(doc).is_err());
    }

    #[test]
    fn negative_margins_parse_for_the_validator() {
        let doc = r#"{"version":"1","guideline_id":"g","patient_id":"p","calls":[
            {"id":1,"tool":"dilate","args":{"input":"GTV","margin":{"x_neg":-1,"x_pos":0,"y_neg":0,"y_pos":0,"z_neg":0,"z_pos":0}},"output":"X"}]}"#;
        let plan = parse_plan(doc).unwrap();
        assert!(matches!(plan.calls[0].args, CallArgs::Dilate { margin, .. } if margin.x_neg == -1.0));
    }

    #[test]
    fn serialize_round_trip_on_fixture() {
        let plan = parse_plan(REFERENCE).unwrap();
        let again = parse_plan(&plan.to_json_pretty()).unwrap();
        assert_eq!(plan, again);
    }
}
