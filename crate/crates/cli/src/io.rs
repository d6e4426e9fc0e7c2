//! Workdir artifacts: atomic writers with a config header, and the readers
//! that later stages use.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use perk_core::calibrate::{FitStatus, PlattParams, Scope};
use perk_core::dataset::{load_interactions_in, SplitDataset, Universe, UserId};
use perk_core::scorer::{import_scores, ScoreTable};
use perk_core::utility::Measure;
use serde_json::Value;

pub const MAPPING: &str = "mapping.json";
pub const TRAIN: &str = "train.tsv";
pub const VAL: &str = "val.tsv";
pub const TEST: &str = "test.tsv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.json";
pub const SCORES: &str = "scores.tsv";
pub const CALIBRATION: &str = "calibration.tsv";
pub const ECE_USER: &str = "ece_user.json";
pub const ECE_GLOBAL: &str = "ece_global.json";
pub const TOPK: &str = "topk.tsv";
pub const RECOMMEND_ERRORS: &str = "recommend_errors.tsv";
pub const REPORT: &str = "report.json";
pub const EVAL_USERS: &str = "eval_users.tsv";
pub const ALLOCATIONS: &str = "allocations.tsv";
pub const ALLOCATION_SUMMARY: &str = "allocation_summary.json";

/// Label of the global row in the calibration file; it is always the first
/// data row, so a user with the same name cannot be confused with it.
pub const GLOBAL_ROW: &str = "GLOBAL";

pub fn recommendations_file(measure: Measure) -> String {
    format!("recommendations_{measure}.tsv")
}

pub fn curves_file(measure: Measure) -> String {
    format!("curves_{measure}.tsv")
}

/// Writes `path` via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let tmp = builder
        .tempfile_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Tab-separated file whose first line echoes the config and whose second
/// names the columns.
pub fn write_tsv(
    path: &Path,
    echo: &Value,
    columns: &str,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "# config: {echo}")?;
        writeln!(w, "# {columns}")?;
        body(w)
    })
}

/// Pretty JSON object with the config echo under `"config"`.
pub fn write_json(path: &Path, echo: &Value, mut value: Value) -> anyhow::Result<()> {
    if let Some(obj) = value.as_object_mut() {
        obj.insert("config".into(), echo.clone());
    }
    let text = serde_json::to_string_pretty(&value)?;
    write_atomic(path, |w| writeln!(w, "{text}"))
}

pub fn require(path: PathBuf, stage: &str) -> anyhow::Result<PathBuf> {
    if !path.exists() {
        bail!("missing {}; run `perk {stage}` first", path.display());
    }
    Ok(path)
}

pub fn read_split(workdir: &Path) -> anyhow::Result<SplitDataset> {
    let mapping = require(workdir.join(MAPPING), "prepare")?;
    let text = fs::read_to_string(&mapping).with_context(|| format!("reading {}", mapping.display()))?;
    let (universe, seed) = Universe::from_mapping_json(&text)?;
    let universe = Arc::new(universe);
    let load = |name: &str| -> anyhow::Result<_> { Ok(load_interactions_in(require(workdir.join(name), "prepare")?, &universe)?) };
    Ok(SplitDataset {
        train: load(TRAIN)?,
        val: load(VAL)?,
        test: load(TEST)?,
        seed,
    })
}

pub fn read_scores(workdir: &Path, universe: &Universe) -> anyhow::Result<ScoreTable> {
    Ok(import_scores(require(workdir.join(SCORES), "train")?, universe)?)
}

/// Returns the global map and one map per user, in user order.
pub fn read_calibration(workdir: &Path, universe: &Universe) -> anyhow::Result<(PlattParams<f64>, Vec<PlattParams<f64>>)> {
    let path = require(workdir.join(CALIBRATION), "calibrate")?;
    let text = fs::read_to_string(&path)?;
    let mut global = None;
    let mut users: Vec<Option<PlattParams<f64>>> = vec![None; universe.num_users()];
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || anyhow!("{}:{}: malformed calibration row", path.display(), idx + 1);
        let [name, a, b, status] = line.split('\t').collect::<Vec<_>>()[..] else {
            return Err(bad());
        };
        let a: f64 = a.parse().map_err(|_| bad())?;
        let b: f64 = b.parse().map_err(|_| bad())?;
        let status = FitStatus::parse(status).ok_or_else(bad)?;
        if global.is_none() {
            if name != GLOBAL_ROW {
                bail!("{}: first row must be the global map", path.display());
            }
            global = Some(PlattParams::new(a, b, Scope::Global, status));
            continue;
        }
        let u = universe
            .user_id(name)
            .ok_or_else(|| anyhow!("{}:{}: unknown user {name:?}", path.display(), idx + 1))?;
        users[u as usize] = Some(PlattParams::new(a, b, Scope::User(u), status));
    }
    let global = global.ok_or_else(|| anyhow!("{}: no global map", path.display()))?;
    let users = users
        .into_iter()
        .enumerate()
        .map(|(u, p)| p.ok_or_else(|| anyhow!("{}: no map for user {}", path.display(), universe.user_name(u as UserId))))
        .collect::<anyhow::Result<_>>()?;
    Ok((global, users))
}

/// User name to curve values at k = 1, 2, ....
pub type CurvesByUser = BTreeMap<String, Vec<f64>>;

/// Curve dump of one domain, with the users in file order.
pub fn read_curves(path: &Path, measure: Measure) -> anyhow::Result<(Vec<String>, CurvesByUser)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut order = Vec::new();
    let mut curves = CurvesByUser::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || anyhow!("{}:{}: malformed curve row", path.display(), idx + 1);
        let [user, m, k, value] = line.split('\t').collect::<Vec<_>>()[..] else {
            return Err(bad());
        };
        if m.parse::<Measure>().map_err(|_| bad())? != measure {
            continue;
        }
        let k: usize = k.parse().map_err(|_| bad())?;
        let value: f64 = value.parse().map_err(|_| bad())?;
        let curve = curves.entry(user.to_owned()).or_insert_with(|| {
            order.push(user.to_owned());
            Vec::new()
        });
        if k != curve.len() + 1 {
            bail!("{}:{}: sizes of user {user:?} are not consecutive from 1", path.display(), idx + 1);
        }
        curve.push(value);
    }
    Ok((order, curves))
}
