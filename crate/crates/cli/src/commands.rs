use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use delineate_core::case::{CaseManifest, GTV};
use delineate_core::engine::{execute_plan, FileProvider, RoiEnvironment, SegmentationProvider};
use delineate_core::metrics::{evaluate_target, tool_call_f1};
use delineate_core::nrrd;
use delineate_core::phantom::{generate_phantom, write_ground_truth, PhantomSpec};
use delineate_core::plan::{check_document, parse_plan, AliasTable, Plan, StructureCatalog, ValidationReport};
use delineate_core::planner::{generate_plan, GuidelineDoc, PlannerBackend, PlanningError, RemoteBackend, ScriptedBackend};
use delineate_core::report::{summarize, write_csv, CaseReport};
use sha2::{Digest, Sha256};

use crate::config::{ApproveMode, BackendKind, RunConfig};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Other = 1,
    Config = 3,
    Planning = 4,
    Validation = 5,
    Execution = 6,
    Evaluation = 7,
    Approval = 8,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { exit: Exit::Other, error }
    }
}

pub trait OrExit<T> {
    fn or_exit(self, exit: Exit) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, exit: Exit) -> Result<T, Failure> {
        self.map_err(|e| Failure { exit, error: e.into() })
    }
}

fn fail<T>(exit: Exit, error: anyhow::Error) -> Result<T, Failure> {
    Err(Failure { exit, error })
}

pub type CmdResult<T = ()> = Result<T, Failure>;

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn approval_path(plan: &Path) -> PathBuf {
    let mut s = plan.as_os_str().to_owned();
    s.push(".approved");
    PathBuf::from(s)
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn print_report(report: &ValidationReport) {
    eprintln!("{report}");
}

fn load_catalog(cfg: &RunConfig, provider: &FileProvider) -> CmdResult<StructureCatalog> {
    match &cfg.catalog {
        Some(p) => StructureCatalog::from_json(&read_text(p).or_exit(Exit::Config)?)
            .with_context(|| format!("catalog {}", p.display()))
            .or_exit(Exit::Config),
        None => Ok(provider.catalog()),
    }
}

fn open_case(cfg: &RunConfig) -> CmdResult<(CaseManifest, RoiEnvironment, FileProvider)> {
    let dir = cfg.require("case directory", &cfg.case).or_exit(Exit::Config)?;
    let (manifest, env) = RoiEnvironment::load_case(dir)
        .with_context(|| format!("loading case {}", dir.display()))
        .or_exit(Exit::Config)?;
    let provider = FileProvider::open(dir).or_exit(Exit::Config)?;
    Ok((manifest, env, provider))
}

fn backend(cfg: &RunConfig) -> CmdResult<Box<dyn PlannerBackend>> {
    match cfg.backend {
        BackendKind::Scripted => {
            let dir = cfg.require("scripted completions directory", &cfg.scripted_dir).or_exit(Exit::Config)?;
            Ok(Box::new(ScriptedBackend::from_dir(dir).or_exit(Exit::Config)?))
        }
        BackendKind::Remote => {
            let remote = cfg
                .remote
                .clone()
                .ok_or_else(|| anyhow!("remote backend selected but the config has no [remote] table"))
                .or_exit(Exit::Config)?;
            Ok(Box::new(RemoteBackend::new(remote).or_exit(Exit::Config)?))
        }
    }
}

fn confirm(prompt: &str) -> anyhow::Result<bool> {
    eprint!("{prompt} [y/N]: ");
    io::stderr().flush()?;
    let mut line = String::new();
    io::stdin().lock().read_line(&mut line)?;
    Ok(matches!(line.trim().to_ascii_lowercase().as_str(), "y" | "yes"))
}

pub fn plan(cfg: &RunConfig) -> CmdResult<Plan> {
    let (manifest, _, provider) = open_case(cfg)?;
    let catalog = load_catalog(cfg, &provider)?;
    let aliases = match &cfg.aliases {
        Some(p) => AliasTable::from_json(&read_text(p).or_exit(Exit::Config)?, &catalog)
            .with_context(|| format!("alias table {}", p.display()))
            .or_exit(Exit::Config)?,
        None => AliasTable::default(),
    };
    let guideline_path = cfg.require("guideline", &cfg.guideline).or_exit(Exit::Config)?;
    let id = cfg.guideline_id.clone().unwrap_or_else(|| {
        guideline_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "guideline".into())
    });
    let guideline = GuidelineDoc::new(id, read_text(guideline_path).or_exit(Exit::Config)?).or_exit(Exit::Config)?;
    let backend = backend(cfg)?;

    let transcript_path = cfg.out.join("transcript.json");
    let result = generate_plan(backend.as_ref(), &guideline, &manifest.context, &catalog, &aliases, cfg.max_refine);
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            if !e.transcript().is_empty() {
                let json = serde_json::to_string_pretty(e.transcript()).context("serializing transcript")?;
                write_file(&transcript_path, json + "\n")?;
            }
            if let PlanningError::Exhausted { report, .. } = &e {
                print_report(report);
            }
            let exit = match e {
                PlanningError::InvalidInput(_) => Exit::Config,
                _ => Exit::Planning,
            };
            return fail(exit, e.into());
        }
    };

    let plan_path = cfg.plan_path();
    let body = result.plan.to_json_pretty();
    write_file(&plan_path, &body)?;
    let json = serde_json::to_string_pretty(&result.transcript).context("serializing transcript")?;
    write_file(&transcript_path, json + "\n")?;

    println!(
        "plan `{}` for {} ({} call(s), {} attempt(s))",
        result.plan.guideline_id,
        result.plan.patient_id,
        result.plan.calls.len(),
        result.attempts
    );
    for call in &result.plan.calls {
        println!("  {}", call.summary());
    }
    println!("wrote {}", plan_path.display());

    let sidecar = approval_path(&plan_path);
    let _ = fs::remove_file(&sidecar);
    let approved = match cfg.approve {
        ApproveMode::Auto => true,
        ApproveMode::Interactive => confirm("approve this plan?")?,
    };
    if !approved {
        return fail(Exit::Approval, anyhow!("plan rejected; {} not written", sidecar.display()));
    }
    write_file(&sidecar, digest(body.as_bytes()) + "\n")?;
    Ok(result.plan)
}

fn check_approval(plan_path: &Path, body: &str) -> CmdResult {
    let sidecar = approval_path(plan_path);
    let stored = fs::read_to_string(&sidecar)
        .map_err(|_| anyhow!("plan {} has not been approved (no {})", plan_path.display(), sidecar.display()))
        .or_exit(Exit::Approval)?;
    if stored.trim() != digest(body.as_bytes()) {
        return fail(
            Exit::Approval,
            anyhow!("plan {} changed after approval", plan_path.display()),
        );
    }
    Ok(())
}

pub fn execute(cfg: &RunConfig) -> CmdResult {
    let (manifest, env, provider) = open_case(cfg)?;
    let plan_path = cfg.plan_path();
    let body = read_text(&plan_path).or_exit(Exit::Config)?;
    let (plan, report) = check_document(&body, &provider.catalog(), &manifest.context.initial_rois);
    let plan = match plan {
        Some(p) if report.is_valid() => p,
        _ => {
            print_report(&report);
            return fail(
                Exit::Validation,
                anyhow!("plan {} failed validation with {} violation(s)", plan_path.display(), report.len()),
            );
        }
    };
    if cfg.approve == ApproveMode::Interactive {
        check_approval(&plan_path, &body)?;
    }

    let post: &[String] = if cfg.postprocess { &cfg.targets } else { &[] };
    let (out, trace) = execute_plan(&plan, env, &provider, Some(post)).or_exit(Exit::Execution)?;
    for t in &cfg.targets {
        let mask = out
            .get(t)
            .ok_or_else(|| anyhow!("plan does not produce target `{t}`"))
            .or_exit(Exit::Execution)?;
        let path = cfg.out.join(format!("{t}.nrrd"));
        write_file(&path, nrrd::encode(mask))?;
        println!("{t}: {} voxels, {:.1} ml -> {}", mask.voxel_count(), mask.physical_volume_mm3() / 1000.0, path.display());
    }
    for w in trace.warnings() {
        eprintln!("warning: {w}");
    }
    let json = serde_json::to_string_pretty(&trace).context("serializing trace")?;
    write_file(&cfg.out.join("trace.json"), json + "\n")?;
    Ok(())
}

fn gt_file(dir: &Path, target: &str) -> PathBuf {
    let gt = dir.join(format!("{target}_gt.nrrd"));
    if gt.exists() {
        gt
    } else {
        dir.join(format!("{target}.nrrd"))
    }
}

fn evaluate_case(cfg: &RunConfig, case_id: &str, pred: &Path, gt: &Path, reference: Option<&Plan>) -> CaseReport {
    let initial = CaseManifest::load(gt)
        .map(|m| m.context.initial_rois)
        .unwrap_or_else(|_| vec![GTV.to_string()]);
    let run = || -> anyhow::Result<CaseReport> {
        let mut targets = Vec::new();
        for t in &cfg.targets {
            let p = nrrd::read_mask(&pred.join(format!("{t}.nrrd")))?;
            let g = nrrd::read_mask(&gt_file(gt, t))?;
            targets.push(evaluate_target(t, &p, &g)?);
        }
        let f1 = match reference {
            Some(reference) => {
                let generated = parse_plan(&read_text(&pred.join("plan.json"))?)?;
                Some(tool_call_f1(&generated, reference, &initial)?)
            }
            None => None,
        };
        Ok(CaseReport::ok(case_id, targets, f1))
    };
    run().unwrap_or_else(|e| CaseReport::failed(case_id, format!("{e:#}")))
}

/// Evaluate one case, or every subdirectory of `pred` against the
/// same-named subdirectory of `gt`.
pub fn eval(cfg: &RunConfig, pred: Option<&Path>, gt: Option<&Path>) -> CmdResult {
    let pred = pred.unwrap_or(&cfg.out);
    let gt = match gt {
        Some(g) => g,
        None => cfg.require("ground-truth directory (--gt or --case)", &cfg.case).or_exit(Exit::Config)?,
    };
    let reference = match &cfg.reference_plan {
        Some(p) => Some(parse_plan(&read_text(p).or_exit(Exit::Config)?).or_exit(Exit::Config)?),
        None => None,
    };
    let case_id = |dir: &Path| {
        CaseManifest::load(dir).map(|m| m.case_id).unwrap_or_else(|_| {
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "case".into())
        })
    };

    let single = cfg.targets.iter().any(|t| pred.join(format!("{t}.nrrd")).exists());
    let reports: Vec<CaseReport> = if single {
        vec![evaluate_case(cfg, &case_id(gt), pred, gt, reference.as_ref())]
    } else {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(pred)
            .with_context(|| format!("reading {}", pred.display()))
            .or_exit(Exit::Evaluation)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        if subdirs.is_empty() {
            return fail(Exit::Evaluation, anyhow!("no predictions found in {}", pred.display()));
        }
        subdirs
            .iter()
            .map(|d| {
                let g = gt.join(d.file_name().expect("read_dir entries have names"));
                evaluate_case(cfg, &case_id(&g), d, &g, reference.as_ref())
            })
            .collect()
    };

    let mut csv = Vec::new();
    write_csv(&reports, &mut csv).context("writing CSV")?;
    write_file(&cfg.out.join("report.csv"), &csv)?;
    let summary = summarize(&reports);
    let json = serde_json::to_string_pretty(&summary).context("serializing summary")?;
    write_file(&cfg.out.join("summary.json"), json + "\n")?;
    print!("{}", String::from_utf8_lossy(&csv));

    if !summary.errors.is_empty() {
        for e in &summary.errors {
            eprintln!("{}: {}", e.case_id, e.error);
        }
        return fail(
            Exit::Evaluation,
            anyhow!("{} of {} case(s) could not be evaluated", summary.errors.len(), summary.cases),
        );
    }
    Ok(())
}

pub fn phantom(cfg: &RunConfig, seed: u64, spec_path: Option<&Path>, with_gt: bool) -> CmdResult {
    let spec = match spec_path {
        Some(p) => serde_json::from_str::<PhantomSpec>(&read_text(p).or_exit(Exit::Config)?)
            .with_context(|| format!("phantom spec {}", p.display()))
            .or_exit(Exit::Config)?,
        None => PhantomSpec::default_esophageal(seed),
    };
    let manifest = generate_phantom(&spec, &cfg.out).or_exit(Exit::Config)?;
    if with_gt {
        write_ground_truth(&spec, &cfg.out).or_exit(Exit::Other)?;
    }
    println!("case {} -> {}", manifest.case_id, cfg.out.display());
    for (roi, n) in &manifest.voxel_counts {
        println!("  {roi}: {n} voxels");
    }
    Ok(())
}

pub fn pipeline(cfg: &RunConfig, gt: Option<&Path>) -> CmdResult {
    plan(cfg)?;
    execute(cfg)?;
    let mut eval_cfg = cfg.clone();
    if eval_cfg.reference_plan.is_none() {
        eprintln!("note: no reference plan given; tool_call_f1 left empty");
    }
    eval_cfg.plan = None;
    eval(&eval_cfg, Some(&cfg.out), gt)
}
