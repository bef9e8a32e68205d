#![allow(dead_code)]

use std::path::PathBuf;

use delineate_core::engine::{ProviderError, RoiEnvironment, SegmentationProvider};
use delineate_core::phantom::PhantomMasks;
use delineate_core::plan::{parse_plan, AliasTable, CallArgs, Plan, StructureCatalog, ToolCall, ViolationCode};
use delineate_core::volume::{BinaryMask, Grid, MarginSpec, MarginVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn esophagus(file: &str) -> PathBuf {
    fixture_dir().join("esophagus").join(file)
}

pub fn read(path: &PathBuf) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn reference_plan() -> Plan {
    parse_plan(&read(&esophagus("reference_plan.json"))).unwrap()
}

pub fn catalog() -> StructureCatalog {
    StructureCatalog::from_json(&read(&esophagus("catalog.json"))).unwrap()
}

pub fn aliases() -> AliasTable {
    AliasTable::from_json(&read(&esophagus("aliases.json")), &catalog()).unwrap()
}

pub fn gtv_only() -> Vec<String> {
    vec!["GTV".to_string()]
}

/// Serves phantom OARs from memory.
pub struct MemoryProvider {
    pub grid: Grid,
    pub masks: Vec<(String, BinaryMask)>,
}

impl MemoryProvider {
    pub fn from_phantom(m: &PhantomMasks) -> Self {
        MemoryProvider {
            grid: *m.gtv.grid(),
            masks: m.oars.clone(),
        }
    }
}

impl SegmentationProvider for MemoryProvider {
    fn case_grid(&self) -> Grid {
        self.grid
    }

    fn catalog(&self) -> StructureCatalog {
        StructureCatalog::new(self.masks.iter().map(|(n, _)| n.clone())).unwrap()
    }

    fn segment(&self, structure: &str) -> Result<BinaryMask, ProviderError> {
        self.masks
            .iter()
            .find(|(n, _)| n == structure)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| ProviderError::Unsupported(structure.to_string()))
    }
}

pub fn gtv_env(gtv: &BinaryMask) -> RoiEnvironment {
    let mut env = RoiEnvironment::new(*gtv.grid());
    env.bind("GTV", gtv.clone()).unwrap();
    env
}

/// Random grid with up to `max_dim` voxels per axis and mixed spacing.
pub fn grid_strategy(max_dim: usize) -> impl Strategy<Value = Grid> {
    (
        prop::array::uniform3(1..=max_dim),
        prop::array::uniform3(prop::sample::select(vec![0.5, 1.0, 1.5, 2.0, 3.0])),
    )
        .prop_map(|(dims, spacing)| Grid::new(dims, spacing, [0.0; 3]).unwrap())
}

/// Random mask on `grid` with foreground density `p`.
pub fn mask_on(grid: Grid, p: f64) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(prop::bool::weighted(p), grid.len())
        .prop_map(move |bits| BinaryMask::from_fn(grid, |q| bits[grid.linear_index(q)]))
}

pub fn mask_strategy(max_dim: usize) -> impl Strategy<Value = BinaryMask> {
    (grid_strategy(max_dim), 0.05f64..0.6).prop_flat_map(|(g, p)| mask_on(g, p))
}

pub fn mask_pair(max_dim: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (grid_strategy(max_dim), 0.05f64..0.6, 0.05f64..0.6).prop_flat_map(|(g, p, q)| (mask_on(g, p), mask_on(g, q)))
}

pub fn mask_triple(max_dim: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask, BinaryMask)> {
    (grid_strategy(max_dim), 0.05f64..0.5).prop_flat_map(|(g, p)| (mask_on(g, p), mask_on(g, p), mask_on(g, p)))
}

/// Gather formulation: p is in the dilation iff some displacement d with
/// p - d in the mask satisfies the octant-ellipsoid inequality.
pub fn oracle_dilate(mask: &BinaryMask, m: &MarginVector) -> BinaryMask {
    let g = *mask.grid();
    let s = g.spacing();
    let c = m.components();
    let box_lo: Vec<i64> = (0..3).map(|a| -((c[2 * a] / s[a]).ceil() as i64)).collect();
    let box_hi: Vec<i64> = (0..3).map(|a| (c[2 * a + 1] / s[a]).ceil() as i64).collect();
    let admitted = |d: [i64; 3]| {
        let mut acc = 0.0;
        for a in 0..3 {
            if d[a] == 0 {
                continue;
            }
            let side = if d[a] > 0 { c[2 * a + 1] } else { c[2 * a] };
            if side == 0.0 {
                return false;
            }
            let r = d[a] as f64 * s[a] / side;
            acc += r * r;
        }
        acc <= 1.0
    };
    BinaryMask::from_fn(g, |p| {
        for dz in box_lo[2]..=box_hi[2] {
            for dy in box_lo[1]..=box_hi[1] {
                for dx in box_lo[0]..=box_hi[0] {
                    let d = [dx, dy, dz];
                    let q = [p[0] as i64 - dx, p[1] as i64 - dy, p[2] as i64 - dz];
                    if mask.get_signed(q) && admitted(d) {
                        return true;
                    }
                }
            }
        }
        false
    })
}

pub fn margin_component() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 0.0f64..5.0, prop::sample::select(vec![0.5, 1.0, 1.5, 2.0, 3.0, 5.0])]
}

pub fn margin_strategy() -> impl Strategy<Value = MarginVector> {
    prop::array::uniform6(margin_component())
        .prop_map(|c| MarginVector::new(c[0], c[1], c[2], c[3], c[4], c[5]).unwrap())
}

/// Foreground voxels with a 6-neighbour that is background or off-grid.
pub fn oracle_surface(m: &BinaryMask) -> Vec<[f64; 3]> {
    let g = m.grid();
    let s = g.spacing();
    m.voxels()
        .filter(|p| {
            let p = p.map(|c| c as i64);
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
                .iter()
                .any(|d: &[i64; 3]| !m.get_signed([p[0] + d[0], p[1] + d[1], p[2] + d[2]]))
        })
        .map(|p| [p[0] as f64 * s[0], p[1] as f64 * s[1], p[2] as f64 * s[2]])
        .collect()
}

pub fn directed(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

pub fn oracle_msd(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (sa, sb) = (oracle_surface(a), oracle_surface(b));
    0.5 * (directed(&sa, &sb) + directed(&sb, &sa))
}

pub const STRUCTURES: [&str; 4] = ["Heart", "Lung_L", "Lung_R", "VB_whole"];

/// Random plan over `STRUCTURES` and `GTV`. Each decision goes wrong with
/// probability `fault`.
pub fn random_plan(rng: &mut ChaCha8Rng, fault: f64) -> Plan {
    let mut defined = vec!["GTV".to_string()];
    let mut calls = Vec::new();
    let mut id = 0u32;
    let n = rng.gen_range(1..=8);
    for _ in 0..n {
        id += rng.gen_range(1..=3);
        let pick = |rng: &mut ChaCha8Rng, defined: &[String]| -> String {
            if rng.gen_bool(fault) {
                "Ghost".to_string()
            } else {
                defined.choose(rng).unwrap().clone()
            }
        };
        let fresh = |rng: &mut ChaCha8Rng, defined: &[String], tag: String| -> String {
            if rng.gen_bool(fault) {
                defined.choose(rng).unwrap().clone()
            } else if rng.gen_bool(fault) {
                format!("bad-{tag}")
            } else {
                tag
            }
        };
        let margin = |rng: &mut ChaCha8Rng| {
            let mut c = [0.0; 6];
            for v in &mut c {
                *v = *[0.0, 1.5, 2.5, 5.0].choose(rng).unwrap();
            }
            if rng.gen_bool(fault) {
                c[rng.gen_range(0..6)] = -1.0;
            }
            MarginSpec {
                x_neg: c[0],
                x_pos: c[1],
                y_neg: c[2],
                y_pos: c[3],
                z_neg: c[4],
                z_pos: c[5],
            }
        };
        let (args, outputs) = match rng.gen_range(0..5) {
            0 => {
                let k = rng.gen_range(1..=3);
                let mut s: Vec<String> = STRUCTURES.choose_multiple(rng, k).map(|s| s.to_string()).collect();
                if rng.gen_bool(fault) {
                    s[0] = "Liver".into();
                }
                let outs = (0..s.len()).map(|i| fresh(rng, &defined, format!("S{id}_{i}"))).collect();
                (CallArgs::Segment { structures: s }, outs)
            }
            1 => (
                CallArgs::Dilate {
                    input: pick(rng, &defined),
                    margin: margin(rng),
                },
                vec![fresh(rng, &defined, format!("D{id}"))],
            ),
            2 => {
                let k = rng.gen_range(1..=3);
                let inputs = (0..k).map(|_| pick(rng, &defined)).collect();
                (CallArgs::Union { inputs }, vec![fresh(rng, &defined, format!("U{id}"))])
            }
            3 => {
                let k = rng.gen_range(1..=2);
                (
                    CallArgs::Subtract {
                        input: pick(rng, &defined),
                        subtract: (0..k).map(|_| pick(rng, &defined)).collect(),
                    },
                    vec![fresh(rng, &defined, format!("X{id}"))],
                )
            }
            _ => (
                CallArgs::Intersect {
                    inputs: vec![pick(rng, &defined), pick(rng, &defined)],
                },
                vec![fresh(rng, &defined, format!("I{id}"))],
            ),
        };
        defined.extend(outputs.iter().cloned());
        calls.push(ToolCall { id, args, outputs });
    }
    Plan::new("fuzz", "p", calls)
}

pub fn stub_world() -> (RoiEnvironment, MemoryProvider) {
    let grid = Grid::new([12, 10, 8], [1.0, 1.5, 2.0], [0.0; 3]).unwrap();
    let ball = |c: [f64; 3], r: f64| {
        BinaryMask::from_fn(grid, |p| {
            let x = grid.voxel_center(p);
            (0..3).map(|a| (x[a] - c[a]).powi(2)).sum::<f64>() <= r * r
        })
    };
    let masks = STRUCTURES
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), ball([2.0 + 2.5 * i as f64, 6.0, 7.0], 3.0)))
        .collect();
    let mut env = RoiEnvironment::new(grid);
    env.bind("GTV", ball([6.0, 7.0, 8.0], 2.5)).unwrap();
    (env, MemoryProvider { grid, masks })
}

pub fn catalog4() -> StructureCatalog {
    StructureCatalog::new(STRUCTURES).unwrap()
}

pub fn reference_value() -> Value {
    serde_json::from_str(&read(&esophagus("reference_plan.json"))).unwrap()
}

/// Reference plan document with one seeded fault per violation code.
pub fn seeded_faults() -> Vec<(ViolationCode, Value)> {
    let base = reference_value();
    let with = |f: &dyn Fn(&mut Value)| {
        let mut v = base.clone();
        f(&mut v);
        v
    };
    vec![
        (ViolationCode::Schema, with(&|v| v["calls"][3]["args"]["margin"] = json!("wide"))),
        (ViolationCode::UnknownTool, with(&|v| v["calls"][2]["tool"] = json!("erode"))),
        (ViolationCode::UndefRoi, with(&|v| v["calls"][5]["args"]["input"] = json!("CTV_final"))),
        (ViolationCode::DupOutput, with(&|v| v["calls"][5]["output"] = json!("CTV"))),
        (ViolationCode::NegMargin, with(&|v| v["calls"][5]["args"]["margin"]["z_pos"] = json!(-2.0))),
        (ViolationCode::UnknownStructure, with(&|v| v["calls"][1]["args"]["structures"][0] = json!("Liver"))),
        (ViolationCode::EmptyPlan, with(&|v| v["calls"] = json!([]))),
        (ViolationCode::BadName, with(&|v| v["calls"][5]["output"] = json!("PTV 5mm"))),
    ]
}

