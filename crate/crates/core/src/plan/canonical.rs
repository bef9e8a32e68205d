//! Rename-invariant call identities for plan-level comparison.
//!
//! Each ROI reference is replaced by `INPUT:<name>` when it is an initial
//! ROI, by `segment(<structure>)` when a segment call produced it, and
//! otherwise by the canonical key of the producing call. Unordered argument
//! lists are sorted and margins are rounded to 0.1 mm.

use std::collections::HashMap;

use thiserror::Error;

use super::{CallArgs, Plan, ToolCall};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanonicalError {
    #[error("call {call_id}: ROI `{roi}` has no producer")]
    UndefinedRoi { call_id: u32, roi: String },
    #[error("call {0} is not part of the plan")]
    UnknownCall(u32),
}

fn margin_key(c: [f64; 6]) -> String {
    c.iter()
        .map(|v| format!("{:.1}", (v * 10.0).round() / 10.0 + 0.0))
        .collect::<Vec<_>>()
        .join(",")
}

struct Keyer<'a> {
    initial: &'a [String],
    roi_keys: HashMap<&'a str, String>,
}

impl<'a> Keyer<'a> {
    fn reference(&self, call_id: u32, roi: &str) -> Result<String, CanonicalError> {
        if let Some(k) = self.roi_keys.get(roi) {
            return Ok(k.clone());
        }
        if self.initial.iter().any(|r| r == roi) {
            return Ok(format!("INPUT:{roi}"));
        }
        Err(CanonicalError::UndefinedRoi {
            call_id,
            roi: roi.to_string(),
        })
    }

    fn sorted_refs(&self, call_id: u32, rois: &[String]) -> Result<String, CanonicalError> {
        let mut keys = rois
            .iter()
            .map(|r| self.reference(call_id, r))
            .collect::<Result<Vec<_>, _>>()?;
        keys.sort();
        Ok(keys.join(","))
    }

    fn call_key(&self, call: &ToolCall) -> Result<String, CanonicalError> {
        let id = call.id;
        Ok(match &call.args {
            CallArgs::Segment { structures } => {
                let mut s = structures.clone();
                s.sort();
                format!("segment({})", s.join(","))
            }
            CallArgs::Dilate { input, margin } => {
                format!("dilate({};{})", self.reference(id, input)?, margin_key(margin.components()))
            }
            CallArgs::Union { inputs } => format!("union({})", self.sorted_refs(id, inputs)?),
            CallArgs::Subtract { input, subtract } => {
                format!("subtract({};{})", self.reference(id, input)?, self.sorted_refs(id, subtract)?)
            }
            CallArgs::Intersect { inputs } => format!("intersect({})", self.sorted_refs(id, inputs)?),
        })
    }

    fn bind(&mut self, call: &'a ToolCall, key: &str) {
        match &call.args {
            CallArgs::Segment { structures } => {
                for (out, s) in call.outputs.iter().zip(structures) {
                    self.roi_keys.insert(out, format!("segment({s})"));
                }
            }
            _ => {
                for out in &call.outputs {
                    self.roi_keys.insert(out, key.to_string());
                }
            }
        }
    }
}

/// Canonical key of every call, in plan order.
pub fn canonical_keys(plan: &Plan, initial_rois: &[String]) -> Result<Vec<String>, CanonicalError> {
    let mut keyer = Keyer {
        initial: initial_rois,
        roi_keys: HashMap::new(),
    };
    let mut keys = Vec::with_capacity(plan.calls.len());
    for call in &plan.calls {
        let key = keyer.call_key(call)?;
        keyer.bind(call, &key);
        keys.push(key);
    }
    Ok(keys)
}

/// Canonical key of one call of `plan`, identified by its id.
pub fn canonicalize_call(call: &ToolCall, plan: &Plan, initial_rois: &[String]) -> Result<String, CanonicalError> {
    let pos = plan
        .calls
        .iter()
        .position(|c| c.id == call.id)
        .ok_or(CanonicalError::UnknownCall(call.id))?;
    let prefix = Plan {
        calls: plan.calls[..=pos].to_vec(),
        ..plan.clone()
    };
    Ok(canonical_keys(&prefix, initial_rois)?.pop().expect("prefix is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_plan;
    use crate::volume::MarginSpec;

    fn gtv() -> Vec<String> {
        vec!["GTV".into()]
    }

    fn dilate(id: u32, input: &str, mm: f64, out: &str) -> ToolCall {
        ToolCall {
            id,
            args: CallArgs::Dilate {
                input: input.into(),
                margin: MarginSpec::uniform(mm),
            },
            outputs: vec![out.into()],
        }
    }

    fn seg(id: u32, s: &str) -> ToolCall {
        ToolCall {
            id,
            args: CallArgs::Segment {
                structures: vec![s.into()],
            },
            outputs: vec![s.into()],
        }
    }

    #[test]
    fn renaming_intermediates_keeps_keys() {
        let a = Plan::new("g", "p", vec![dilate(1, "GTV", 5.0, "X"), dilate(2, "X", 3.0, "Z")]);
        let b = Plan::new("g", "p", vec![dilate(1, "GTV", 5.0, "Y"), dilate(2, "Y", 3.0, "W")]);
        assert_eq!(canonical_keys(&a, &gtv()).unwrap(), canonical_keys(&b, &gtv()).unwrap());
        assert_eq!(
            canonicalize_call(&a.calls[0], &a, &gtv()).unwrap(),
            "dilate(INPUT:GTV;5.0,5.0,5.0,5.0,5.0,5.0)"
        );
    }

    #[test]
    fn union_argument_order_is_irrelevant() {
        let union = |inputs: [&str; 2]| ToolCall {
            id: 3,
            args: CallArgs::Union {
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
            },
            outputs: vec!["U".into()],
        };
        let a = Plan::new("g", "p", vec![seg(1, "A"), seg(2, "B"), union(["A", "B"])]);
        let b = Plan::new("g", "p", vec![seg(1, "A"), seg(2, "B"), union(["B", "A"])]);
        assert_eq!(
            canonicalize_call(&a.calls[2], &a, &gtv()).unwrap(),
            canonicalize_call(&b.calls[2], &b, &gtv()).unwrap()
        );
    }

    #[test]
    fn margins_are_part_of_the_key() {
        let a = Plan::new("g", "p", vec![dilate(1, "GTV", 5.0, "X")]);
        let b = Plan::new("g", "p", vec![dilate(1, "GTV", 6.0, "X")]);
        let c = Plan::new("g", "p", vec![dilate(1, "GTV", 5.04, "X")]);
        let ka = canonical_keys(&a, &gtv()).unwrap();
        assert_ne!(ka, canonical_keys(&b, &gtv()).unwrap());
        assert_eq!(ka, canonical_keys(&c, &gtv()).unwrap());
    }

    #[test]
    fn undefined_reference_errors() {
        let a = Plan::new("g", "p", vec![dilate(7, "CTV", 5.0, "X")]);
        assert_eq!(
            canonical_keys(&a, &gtv()),
            Err(CanonicalError::UndefinedRoi {
                call_id: 7,
                roi: "CTV".into()
            })
        );
    }

    #[test]
    fn reference_plan_keys_are_nested() {
        let plan = parse_plan(include_str!("../../tests/fixtures/esophagus/reference_plan.json")).unwrap();
        let keys = canonical_keys(&plan, &gtv()).unwrap();
        assert_eq!(keys.len(), 6);
        assert!(keys[4].starts_with("subtract(dilate(INPUT:GTV;"));
        assert!(keys[4].contains("union(segment(Heart),segment(Lung_L),segment(Lung_R),segment(VB_whole))"));
    }
}
