mod common;

use std::collections::BTreeMap;

use common::*;
use delineate_core::engine::{execute_plan, ExecutionError};
use delineate_core::plan::{
    canonical_keys, check_document, parse_plan, validate_plan, CallArgs, Plan, ToolCall, ViolationCode,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[test]
fn valid_plans_never_hit_dataflow_errors() {
    let (env, provider) = stub_world();
    let catalog = catalog4();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut valid, mut invalid) = (0, 0);
    let mut seen_codes = BTreeMap::new();
    while valid < 1000 {
        let plan = random_plan(&mut rng, 0.04);
        let report = validate_plan(&plan, &catalog, &gtv_only());
        if !report.is_valid() {
            invalid += 1;
            for c in report.codes() {
                *seen_codes.entry(c).or_insert(0) += 1;
            }
            continue;
        }
        valid += 1;
        match execute_plan(&plan, env.clone(), &provider, None) {
            Ok((out, trace)) => {
                assert_eq!(trace.calls.len(), plan.calls.len());
                for call in &plan.calls {
                    for o in &call.outputs {
                        assert!(out.contains(o));
                    }
                }
            }
            Err(e @ ExecutionError::Dataflow { .. }) => panic!("dataflow error on valid plan {plan:?}: {e}"),
            Err(e) => panic!("unexpected execution error {e}"),
        }
        // serialization round trip on the same population
        assert_eq!(parse_plan(&plan.to_json_pretty()).unwrap(), plan);
    }
    assert!(invalid > 100, "fuzzer should also produce invalid plans");
    for c in [
        ViolationCode::UndefRoi,
        ViolationCode::DupOutput,
        ViolationCode::NegMargin,
        ViolationCode::UnknownStructure,
        ViolationCode::BadName,
    ] {
        assert!(seen_codes.contains_key(&c), "fuzzer never produced {c}");
    }
}

#[test]
fn every_violation_code_is_reachable() {
    let catalog = catalog();
    for (code, doc) in seeded_faults() {
        let (_, report) = check_document(&doc.to_string(), &catalog, &gtv_only());
        assert!(report.codes().contains(&code), "{code}: got {report}");
    }
    let (plan, report) = check_document(&reference_value().to_string(), &catalog, &gtv_only());
    assert!(report.is_valid(), "{report}");
    assert_eq!(plan.unwrap(), reference_plan());
}

#[test]
fn multiple_faults_are_all_reported() {
    let mut v = reference_value();
    v["calls"][5]["args"]["margin"]["z_pos"] = json!(-2.0);
    v["calls"][1]["args"]["structures"][0] = json!("Liver");
    v["calls"][4]["output"] = json!("CTV base");
    let (_, report) = check_document(&v.to_string(), &catalog(), &gtv_only());
    let codes = report.codes();
    for c in [ViolationCode::NegMargin, ViolationCode::UnknownStructure, ViolationCode::BadName] {
        assert!(codes.contains(&c), "{report}");
    }
}

#[test]
fn fixture_round_trips() {
    let plan = reference_plan();
    let again = parse_plan(&plan.to_json_pretty()).unwrap();
    assert_eq!(again, plan);
    assert_eq!(again.to_json_pretty(), plan.to_json_pretty());
}

fn rename_bijectively(plan: &Plan, rng: &mut ChaCha8Rng) -> Plan {
    let mut names: Vec<String> = plan.calls.iter().flat_map(|c| c.outputs.clone()).collect();
    names.sort();
    names.dedup();
    let mut targets: Vec<String> = (0..names.len()).map(|i| format!("N{i}")).collect();
    targets.shuffle(rng);
    let map: BTreeMap<String, String> = names.into_iter().zip(targets).collect();
    let r = |n: &String| map.get(n).cloned().unwrap_or_else(|| n.clone());
    let rs = |v: &Vec<String>| v.iter().map(r).collect::<Vec<_>>();
    let calls = plan
        .calls
        .iter()
        .map(|c| ToolCall {
            id: c.id,
            outputs: rs(&c.outputs),
            args: match &c.args {
                CallArgs::Segment { structures } => CallArgs::Segment {
                    structures: structures.clone(),
                },
                CallArgs::Dilate { input, margin } => CallArgs::Dilate {
                    input: r(input),
                    margin: margin.clone(),
                },
                CallArgs::Union { inputs } => CallArgs::Union { inputs: rs(inputs) },
                CallArgs::Subtract { input, subtract } => CallArgs::Subtract {
                    input: r(input),
                    subtract: rs(subtract),
                },
                CallArgs::Intersect { inputs } => CallArgs::Intersect { inputs: rs(inputs) },
            },
        })
        .collect();
    Plan { calls, ..plan.clone() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn canonical_keys_ignore_renaming(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = random_plan(&mut rng, 0.0);
        prop_assert!(validate_plan(&plan, &catalog4(), &gtv_only()).is_valid());
        let renamed = rename_bijectively(&plan, &mut rng);
        prop_assert!(validate_plan(&renamed, &catalog4(), &gtv_only()).is_valid());
        let mut a = canonical_keys(&plan, &gtv_only()).unwrap();
        let mut b = canonical_keys(&renamed, &gtv_only()).unwrap();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn execution_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = random_plan(&mut rng, 0.0);
        let (env, provider) = stub_world();
        let (a, ta) = execute_plan(&plan, env.clone(), &provider, None).unwrap();
        let (b, tb) = execute_plan(&plan, env, &provider, None).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ta.without_timings(), tb.without_timings());
    }
}
