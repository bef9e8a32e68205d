//! Run configuration: an optional TOML file overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use delineate_core::planner::{RemoteConfig, DEFAULT_MAX_REFINE};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ApproveMode {
    Auto,
    Interactive,
}

/// Contents of the TOML file. Relative paths are relative to the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    case: Option<PathBuf>,
    guideline: Option<PathBuf>,
    guideline_id: Option<String>,
    catalog: Option<PathBuf>,
    aliases: Option<PathBuf>,
    reference_plan: Option<PathBuf>,
    plan: Option<PathBuf>,
    out: Option<PathBuf>,
    max_refine: Option<usize>,
    postprocess: Option<bool>,
    approve: Option<ApproveMode>,
    targets: Option<Vec<String>>,
    backend: Option<BackendKind>,
    scripted_dir: Option<PathBuf>,
    remote: Option<RemoteConfig>,
}

/// Flag values; `None` means "not given on the command line".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub case: Option<PathBuf>,
    pub guideline: Option<PathBuf>,
    pub guideline_id: Option<String>,
    pub catalog: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub reference_plan: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub max_refine: Option<usize>,
    pub no_postprocess: bool,
    pub approve: Option<ApproveMode>,
    pub backend: Option<BackendKind>,
    pub scripted_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case: Option<PathBuf>,
    pub guideline: Option<PathBuf>,
    pub guideline_id: Option<String>,
    pub catalog: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub reference_plan: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub out: PathBuf,
    pub max_refine: usize,
    pub postprocess: bool,
    pub approve: ApproveMode,
    pub targets: Vec<String>,
    pub backend: BackendKind,
    pub scripted_dir: Option<PathBuf>,
    pub remote: Option<RemoteConfig>,
}

fn anchor(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_relative() { base.join(p) } else { p })
}

fn must_exist(what: &str, p: &Option<PathBuf>) -> Result<()> {
    match p {
        Some(p) if !p.exists() => bail!("{what} `{}` does not exist", p.display()),
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn load(flags: &Overrides) -> Result<Self> {
        let (file, base) = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let file: FileConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                (file, path.parent().unwrap_or(Path::new(".")).to_path_buf())
            }
            None => (FileConfig::default(), PathBuf::from(".")),
        };
        let pick = |flag: &Option<PathBuf>, from_file: Option<PathBuf>| flag.clone().or(anchor(&base, from_file));
        let cfg = RunConfig {
            case: pick(&flags.case, file.case),
            guideline: pick(&flags.guideline, file.guideline),
            guideline_id: flags.guideline_id.clone().or(file.guideline_id),
            catalog: pick(&flags.catalog, file.catalog),
            aliases: pick(&flags.aliases, file.aliases),
            reference_plan: pick(&flags.reference_plan, file.reference_plan),
            plan: pick(&flags.plan, file.plan),
            out: pick(&flags.out, file.out).unwrap_or_else(|| PathBuf::from("out")),
            max_refine: flags.max_refine.or(file.max_refine).unwrap_or(DEFAULT_MAX_REFINE),
            postprocess: !flags.no_postprocess && file.postprocess.unwrap_or(true),
            approve: flags.approve.or(file.approve).unwrap_or(ApproveMode::Auto),
            targets: file.targets.unwrap_or_else(|| vec!["CTV".into(), "PTV".into()]),
            backend: flags.backend.or(file.backend).unwrap_or(BackendKind::Scripted),
            scripted_dir: pick(&flags.scripted_dir, file.scripted_dir),
            remote: file.remote,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.max_refine == 0 {
            bail!("max_refine must be at least 1");
        }
        if self.targets.is_empty() {
            bail!("targets must name at least one ROI");
        }
        must_exist("case directory", &self.case)?;
        must_exist("guideline", &self.guideline)?;
        must_exist("catalog", &self.catalog)?;
        must_exist("alias table", &self.aliases)?;
        must_exist("reference plan", &self.reference_plan)?;
        must_exist("scripted completions directory", &self.scripted_dir)?;
        Ok(())
    }

    pub fn require<'a>(&self, what: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        p.as_deref()
            .with_context(|| format!("no {what} given (use the flag or set it in the config file)"))
    }

    /// Plan file: explicit, else `<out>/plan.json`.
    pub fn plan_path(&self) -> PathBuf {
        self.plan.clone().unwrap_or_else(|| self.out.join("plan.json"))
    }
}
