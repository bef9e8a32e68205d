mod common;

use std::collections::BTreeMap;
use std::fs;

use common::*;
use delineate_core::engine::{execute_plan, FileProvider, RoiEnvironment, SegmentationProvider};
use delineate_core::geometry;
use delineate_core::metrics::dsc;
use delineate_core::phantom::{generate_phantom, oracle_targets, write_ground_truth, PhantomError, PhantomSpec};
use delineate_core::volume::BinaryMask;

fn targets_for(seed: u64, post: bool) -> (BinaryMask, BinaryMask, BinaryMask, BinaryMask, PhantomSpec) {
    let spec = PhantomSpec::default_esophageal(seed);
    let masks = spec.build().unwrap();
    let (m_ctv, m_ptv) = spec.margins().unwrap();
    let oars: Vec<&BinaryMask> = masks.oars.iter().map(|(_, m)| m).collect();
    let (ctv, ptv) = oracle_targets(&masks.gtv, &oars, &m_ctv, &m_ptv).unwrap();
    let provider = MemoryProvider::from_phantom(&masks);
    let targets = ["CTV".to_string(), "PTV".to_string()];
    let post_targets: &[String] = if post { &targets } else { &[] };
    let (env, _) = execute_plan(&reference_plan(), gtv_env(&masks.gtv), &provider, Some(post_targets)).unwrap();
    (env.get("CTV").unwrap().clone(), env.get("PTV").unwrap().clone(), ctv, ptv, spec)
}

#[test]
fn engine_matches_oracle_bit_exactly_before_postprocessing() {
    for seed in 0..4 {
        let (ctv, ptv, octv, optv, _) = targets_for(seed, false);
        assert_eq!(ctv, octv, "CTV seed {seed}");
        assert_eq!(ptv, optv, "PTV seed {seed}");
        assert!(ctv.voxel_count() > 0);
    }
}

#[test]
fn postprocessing_keeps_dsc_high() {
    for seed in [0, 5] {
        let (ctv, ptv, octv, optv, _) = targets_for(seed, true);
        assert!(dsc(&ctv, &octv).unwrap() >= 0.99, "seed {seed}");
        assert!(dsc(&ptv, &optv).unwrap() >= 0.99, "seed {seed}");
    }
}

#[test]
fn oracle_ctv_never_touches_oars() {
    for seed in 0..6 {
        let spec = PhantomSpec::default_esophageal(seed);
        let masks = spec.build().unwrap();
        let (m_ctv, m_ptv) = spec.margins().unwrap();
        let oars: Vec<&BinaryMask> = masks.oars.iter().map(|(_, m)| m).collect();
        let (ctv, _) = oracle_targets(&masks.gtv, &oars, &m_ctv, &m_ptv).unwrap();
        for o in &oars {
            assert!(geometry::intersect(&ctv, o).unwrap().is_empty());
        }
        // the halo really is trimmed: the raw dilation does reach OARs
        let raw = geometry::dilate(&masks.gtv, &m_ctv);
        assert!(raw.voxel_count() > ctv.voxel_count());
    }
}

#[test]
fn default_phantom_matches_golden_counts() {
    let spec = PhantomSpec::default_esophageal(0);
    let masks = spec.build().unwrap();
    let (_, _, ctv, ptv, _) = targets_for(0, false);
    let mut counts = BTreeMap::new();
    counts.insert("GTV".to_string(), masks.gtv.voxel_count());
    for (n, m) in &masks.oars {
        counts.insert(n.clone(), m.voxel_count());
    }
    counts.insert("CTV".to_string(), ctv.voxel_count());
    counts.insert("PTV".to_string(), ptv.voxel_count());
    let path = fixture_dir().join("phantom_default_counts.json");
    if std::env::var_os("DELINEATE_BLESS").is_some() {
        fs::write(&path, serde_json::to_string_pretty(&counts).unwrap() + "\n").unwrap();
    }
    let golden: BTreeMap<String, usize> = serde_json::from_str(&read(&path)).unwrap();
    assert_eq!(counts, golden);
}

#[test]
fn generated_case_round_trips_through_files() {
    let spec = PhantomSpec::default_esophageal(3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest = generate_phantom(&spec, a.path()).unwrap();
    generate_phantom(&spec, b.path()).unwrap();

    let mut names: Vec<String> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["GTV.nrrd", "Heart.nrrd", "Lung_L.nrrd", "Lung_R.nrrd", "VB_whole.nrrd", "case.json"]
    );
    for n in &names {
        assert_eq!(fs::read(a.path().join(n)).unwrap(), fs::read(b.path().join(n)).unwrap(), "{n}");
    }

    let provider = FileProvider::open(a.path()).unwrap();
    assert_eq!(provider.catalog(), catalog_without_cord());
    let (loaded, env) = RoiEnvironment::load_case(a.path()).unwrap();
    assert_eq!(loaded, manifest);
    let (out, _) = execute_plan(&reference_plan(), env, &provider, Some(&[])).unwrap();

    let (gt_ctv, gt_ptv) = write_ground_truth(&spec, a.path()).unwrap();
    assert_eq!(out.get("CTV").unwrap(), &gt_ctv);
    assert_eq!(out.get("PTV").unwrap(), &gt_ptv);
    // ground-truth files do not leak into the segmentation catalog
    assert_eq!(provider.catalog(), catalog_without_cord());
}

fn catalog_without_cord() -> delineate_core::plan::StructureCatalog {
    delineate_core::plan::StructureCatalog::new(["Heart", "Lung_L", "Lung_R", "VB_whole"]).unwrap()
}

#[test]
fn invalid_spec_writes_nothing() {
    let mut spec = PhantomSpec::default_esophageal(0);
    spec.gtv.center = [72.0, 52.0, 96.0];
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("case");
    assert!(matches!(generate_phantom(&spec, &out), Err(PhantomError::Overlap(_))));
    assert!(!out.exists());
}
