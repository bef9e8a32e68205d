use std::fmt::Write;

use crate::case::PatientContext;
use crate::plan::{AliasTable, StructureCatalog, ValidationReport};

use super::GuidelineDoc;

/// System prompt: role and target-volume templates, guideline
/// parameterization (catalog, aliases, range policy), call sequencing and
/// the plan document format. Pure function of its inputs.
pub fn build_system_prompt(catalog: &StructureCatalog, aliases: &AliasTable, initial_rois: &[String]) -> String {
    let mut p = String::new();

    p.push_str("## Role\n");
    p.push_str(
        "You are a radiation oncology planning agent. You read a clinical target-volume guideline \
         and translate it into an ordered list of tool calls that builds the target volumes for one patient.\n\
         Every plan must implement these templates:\n\
         \x20 CTV = (GTV ⊕ m_ctv) \\ OARs\n\
         \x20 PTV = CTV ⊕ m_ptv\n\
         ⊕ is dilation by a direction-specific margin vector in mm and \\ removes the organs at risk.\n\
         Margin directions (LPS patient frame): x_neg = right, x_pos = left, y_neg = anterior, \
         y_pos = posterior, z_neg = inferior, z_pos = superior.\n\n",
    );

    p.push_str("## Guideline parameterization\n");
    p.push_str("Segmentable structures (use these exact names):\n");
    for name in catalog.names() {
        let _ = writeln!(p, "- {name}");
    }
    p.push_str("Structure aliases (guideline term -> structures):\n");
    if aliases.is_empty() {
        p.push_str("- none\n");
    } else {
        for (term, targets) in aliases.iter() {
            let _ = writeln!(p, "- {term} -> {}", targets.join(", "));
        }
    }
    p.push_str(
        "When a guideline term maps to several structures, segment every component and union them.\n\
         When the guideline gives a margin as a range, resolve it from the patient context: use the \
         physician preference recorded for that margin (kept inside the range) or, when none is \
         recorded, the midpoint of the range.\n\n",
    );

    p.push_str("## Tool-call sequencing\n");
    let _ = writeln!(
        p,
        "1. ROIs available before the first call: {}. Only the structures listed above can be segmented.",
        if initial_rois.is_empty() {
            "none".to_string()
        } else {
            initial_rois.join(", ")
        }
    );
    p.push_str(
        "2. segment: delineate every organ at risk the guideline excludes.\n\
         3. union: merge the organs at risk into one exclusion mask.\n\
         4. dilate: expand the GTV by m_ctv into the CTV base.\n\
         5. subtract: remove the exclusion mask from the CTV base, giving CTV.\n\
         6. dilate: expand the CTV by m_ptv, giving PTV.\n\
         7. The plan is checked against the schema below; if violations are reported, send back the \
         complete corrected plan.\n\
         Name the final targets CTV and PTV. Every output name must be new, 1-64 characters of \
         letters, digits or underscore, and each call may only read ROIs defined before it.\n\n",
    );

    p.push_str("## Tools\n");
    p.push_str(
        "- segment   args {\"structures\": [name, ...]}                 output: [roi, ...] (one per structure)\n\
         - dilate    args {\"input\": roi, \"margin\": MARGIN}            output: roi\n\
         - union     args {\"inputs\": [roi, ...]}                       output: roi\n\
         - subtract  args {\"input\": roi, \"subtract\": [roi, ...]}       output: roi\n\
         - intersect args {\"inputs\": [roi, roi]}                       output: roi\n\
         MARGIN = {\"x_neg\": mm, \"x_pos\": mm, \"y_neg\": mm, \"y_pos\": mm, \"z_neg\": mm, \"z_pos\": mm}, all >= 0.\n\n",
    );

    p.push_str("## Plan document format\n");
    p.push_str(
        "Reply with exactly one JSON document, optionally inside a ```json fenced block:\n\
         {\"version\": \"1\", \"guideline_id\": string, \"patient_id\": string,\n\
         \x20\"calls\": [{\"id\": int, \"tool\": string, \"args\": object, \"output\": string or array}, ...]}\n\
         Call ids are positive and strictly increasing.\n",
    );
    p
}

/// First user turn: the guideline text followed by a labeled patient-context block.
pub fn build_user_message(guideline: &GuidelineDoc, context: &PatientContext) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "Guideline `{}`:\n", guideline.id);
    m.push_str(guideline.body.trim_end());
    m.push_str("\n\nPatient context:\n");
    let _ = writeln!(m, "patient_id: {}", context.patient_id);
    if let Some(site) = &context.tumor_site {
        let _ = writeln!(m, "tumor_site: {site}");
    }
    if let Some(dose) = &context.dose_level {
        let _ = writeln!(m, "dose_level: {dose}");
    }
    if context.preferences.is_empty() {
        m.push_str("preferences: none\n");
    } else {
        m.push_str("preferences:\n");
        for (role, mm) in &context.preferences {
            let _ = writeln!(m, "  {role}: {mm} mm");
        }
    }
    let _ = writeln!(m, "initial_rois: {}", context.initial_rois.join(", "));
    let _ = writeln!(m, "\nUse guideline_id \"{}\" and patient_id \"{}\" in the plan.", guideline.id, context.patient_id);
    m
}

/// Feedback turn listing every violation of `report`.
pub fn format_refinement_message(report: &ValidationReport) -> Result<String, super::PlanningError> {
    if report.is_empty() {
        return Err(super::PlanningError::InvalidInput(
            "refinement requested for a plan without violations".into(),
        ));
    }
    let mut m = format!("The plan failed validation with {} violation(s):\n", report.len());
    for (i, v) in report.violations.iter().enumerate() {
        let at = v.call_id.map_or_else(|| "plan".to_string(), |id| format!("call {id}"));
        let _ = writeln!(m, "{}. {} ({at}): {}", i + 1, v.code, v.message);
    }
    m.push_str("Fix every violation and reply with the complete corrected plan document.\n");
    Ok(m)
}
