//! `perk`: personalized-size top-k recommendation from the command line.
//!
//! Stages share a workdir: `prepare` → `train` → `calibrate` → `recommend` →
//! `evaluate`, and `allocate` across several domain workdirs.

mod config;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use perk_core::calibrate::{self, PlattParams};
use perk_core::dataset::{self, candidate_items, SplitDataset, UserId};
use perk_core::multidomain::allocate;
use perk_core::scorer::{self, rank_all, ScoreTable};
use perk_core::select::{expected_curves, recommend_from_curve, PersonalizedRec};
use perk_core::synth;
use perk_core::utility::{Measure, Mode, UtilityCurve};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{CalibrationScope, RunConfig};

/// Exit status when some users failed but the stage wrote its outputs.
const PARTIAL_FAILURE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "perk", version, about = "Personalized-size top-k recommendation")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Worker threads for per-user stages (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated measures: ndcg, pdcg, f1, tp.
    #[arg(long, global = true, value_delimiter = ',')]
    measure: Option<Vec<Measure>>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Largest list size.
    #[arg(long = "K", global = true)]
    max_size: Option<usize>,
    /// Truncation of the relevant-count distribution.
    #[arg(long = "M", global = true)]
    bound_m: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load interactions, apply the k-core filter and split per user.
    Prepare {
        /// Interaction log; overrides `data` in the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train BPR matrix factorization, or import external scores.
    Train,
    /// Fit per-user and global calibration maps and report held-out ECE.
    Calibrate,
    /// Emit each user's personalized-size list for every measure.
    Recommend,
    /// Compare the method against the baselines on test labels.
    Evaluate,
    /// Split a per-user slot budget across domain workdirs.
    Allocate {
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Write a seeded synthetic interaction log.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 30)]
        min_per_user: usize,
        #[arg(long, default_value_t = 80)]
        max_per_user: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(PARTIAL_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns `Ok(false)` on partial failure.
fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workdir {
        cfg.workdir = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.measure {
        cfg.measures = m;
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(k) = cli.max_size {
        cfg.max_size = k;
    }
    if let Some(m) = cli.bound_m {
        cfg.bound_m = m;
    }
    match &cli.command {
        Command::Prepare { data: Some(d) } => cfg.data = Some(d.clone()),
        Command::Allocate { budget: Some(b) } => cfg.allocate.budget = *b,
        _ => {}
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Prepare { .. } => cmd_prepare(&cfg).map(|()| true),
        Command::Train => cmd_train(&cfg).map(|()| true),
        Command::Calibrate => cmd_calibrate(&cfg).map(|()| true),
        Command::Recommend => cmd_recommend(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Allocate { .. } => cmd_allocate(&cfg),
        Command::Generate {
            out,
            users,
            items,
            min_per_user,
            max_per_user,
        } => {
            let set = synth::latent_interactions(users, items, min_per_user, max_per_user, cfg.seed);
            io::write_atomic(&out, |w| set.write_tsv(w))?;
            log::info!("wrote {} interactions to {}", set.len(), out.display());
            Ok(true)
        }
    }
}

fn cmd_prepare(cfg: &RunConfig) -> anyhow::Result<()> {
    let Some(data) = &cfg.data else {
        bail!("no interaction data given (`data` in the config or --data)");
    };
    let raw = dataset::load_interactions(data)?;
    let filtered = dataset::kcore_filter(&raw, cfg.kcore);
    log::info!(
        "{} users, {} items, {} interactions; {}-core keeps {} users, {} items, {} interactions",
        raw.num_users(),
        raw.num_items(),
        raw.len(),
        cfg.kcore,
        filtered.num_users(),
        filtered.num_items(),
        filtered.len()
    );
    if filtered.is_empty() {
        bail!("no interactions survive the {}-core filter", cfg.kcore);
    }
    let split = dataset::split(&filtered, cfg.split, cfg.seed)?;
    let dir = &cfg.workdir;
    let echo = cfg.echo();
    let mut mapping: serde_json::Value = serde_json::from_str(&split.universe().to_mapping_json(split.seed))?;
    if let Some(obj) = mapping.as_object_mut() {
        obj.insert("config".into(), echo.clone());
    }
    io::write_atomic(&dir.join(io::MAPPING), |w| writeln!(w, "{mapping:#}"))?;
    for (name, part) in [(io::TRAIN, &split.train), (io::VAL, &split.val), (io::TEST, &split.test)] {
        io::write_tsv(&dir.join(name), &echo, "user\titem", |w| part.write_tsv(w))?;
    }
    log::info!(
        "split into {} train, {} validation, {} test interactions",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = &cfg.workdir;
    let split = io::read_split(dir)?;
    let universe = split.universe().clone();
    let echo = cfg.echo();
    let table = if let Some(path) = &cfg.scorer.import {
        log::info!("importing scores from {}", path.display());
        scorer::import_scores(path, &universe)?
    } else {
        let bpr = cfg.bpr();
        log::info!("training BPR: dim {}, {} epochs", bpr.dim, bpr.epochs);
        let (model, losses) = scorer::train_bpr(&split.train, &bpr)?;
        if let Some(last) = losses.last() {
            log::info!("final epoch loss {last:.6}");
        }
        io::write_atomic(&dir.join(io::CHECKPOINT), |w| model.write_checkpoint(w))?;
        io::write_json(&dir.join(io::TRAIN_LOG), &echo, json!({ "epoch_losses": losses }))?;
        ScoreTable::from_model(&model, &split)?
    };
    io::write_tsv(&dir.join(io::SCORES), &echo, "user\titem\tscore", |w| table.write_tsv(&universe, w))?;
    Ok(())
}

fn cmd_calibrate(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = &cfg.workdir;
    let split = io::read_split(dir)?;
    let universe = split.universe().clone();
    let scores = io::read_scores(dir, &universe)?;
    let subsample = cfg.calibration.subsample_negatives.map(|n| (n, cfg.seed));
    let fitted = calibrate::fit_split(&split, &scores, &cfg.fit(), subsample)?;
    let echo = cfg.echo();
    io::write_tsv(&dir.join(io::CALIBRATION), &echo, "user\ta\tb\tfit_status", |w| {
        let g = &fitted.global;
        writeln!(w, "{}\t{:?}\t{:?}\t{}", io::GLOBAL_ROW, g.a, g.b, g.status.as_str())?;
        for (u, p) in fitted.users.iter().enumerate() {
            writeln!(w, "{}\t{:?}\t{:?}\t{}", universe.user_name(u as UserId), p.a, p.b, p.status.as_str())?;
        }
        Ok(())
    })?;
    let mut counts = std::collections::BTreeMap::new();
    for p in &fitted.users {
        *counts.entry(p.status.as_str()).or_insert(0usize) += 1;
    }
    log::info!("fit status counts: {counts:?}");
    let bins = cfg.calibration.ece_bins;
    let user = calibrate::held_out_ece(&split, &scores, |u| fitted.users[u as usize], bins)?;
    let global = calibrate::held_out_ece(&split, &scores, |_| fitted.global, bins)?;
    log::info!(
        "held-out ECE: user-wise {:.6} (mean per user {:.6}), global {:.6} (mean per user {:.6})",
        user.pooled.ece,
        user.mean_user,
        global.pooled.ece,
        global.mean_user
    );
    for (name, report) in [(io::ECE_USER, &user), (io::ECE_GLOBAL, &global)] {
        let mut value = serde_json::to_value(&report.pooled)?;
        value["mean_user_ece"] = json!(report.mean_user);
        value["users"] = json!(report.users);
        io::write_json(&dir.join(name), &echo, value)?;
    }
    Ok(())
}

/// Split, scores and the calibration maps selected by the config.
struct Inputs {
    split: SplitDataset,
    scores: ScoreTable,
    params: Vec<PlattParams<f64>>,
}

fn load_inputs(cfg: &RunConfig) -> anyhow::Result<Inputs> {
    let dir = &cfg.workdir;
    let split = io::read_split(dir)?;
    let scores = io::read_scores(dir, split.universe())?;
    let (global, users) = io::read_calibration(dir, split.universe())?;
    let params = match cfg.calibration.scope {
        CalibrationScope::User => users,
        CalibrationScope::Global => vec![global; split.num_users()],
    };
    Ok(Inputs { split, scores, params })
}

struct UserRecs {
    top: Vec<u32>,
    curves: Vec<UtilityCurve<f64>>,
    recs: Vec<PersonalizedRec>,
}

fn recommend_user(user: UserId, inputs: &Inputs, cfg: &RunConfig) -> perk_core::Result<UserRecs> {
    let candidates = candidate_items(user, &inputs.split, cfg.exclude_val)?;
    if candidates.is_degenerate() {
        return Err(perk_core::Error::DegenerateUser(user.to_string()));
    }
    let ranked = rank_all(&inputs.scores, &candidates)?;
    let curves = expected_curves(&ranked, &inputs.params[user as usize], &cfg.measures, &cfg.select_options())?;
    let recs = curves.iter().map(|c| recommend_from_curve(&ranked, c)).collect();
    Ok(UserRecs {
        top: ranked.prefix(cfg.max_size).items,
        curves,
        recs,
    })
}

fn cmd_recommend(cfg: &RunConfig) -> anyhow::Result<bool> {
    let inputs = load_inputs(cfg)?;
    let universe = inputs.split.universe().clone();
    let results: Vec<perk_core::Result<UserRecs>> = (0..inputs.split.num_users() as UserId)
        .into_par_iter()
        .map(|u| recommend_user(u, &inputs, cfg))
        .collect();
    let dir = &cfg.workdir;
    let echo = cfg.echo();
    let user_name = |u: usize| universe.user_name(u as UserId).to_owned();
    let item_list = |items: &[u32]| items.iter().map(|&i| universe.item_name(i)).collect::<Vec<_>>().join(",");
    let ok = || results.iter().enumerate().filter_map(|(u, r)| r.as_ref().ok().map(|r| (u, r)));
    for (mi, &measure) in cfg.measures.iter().enumerate() {
        io::write_tsv(
            &dir.join(io::recommendations_file(measure)),
            &echo,
            "user\tk\texpected\titems",
            |w| {
                for (u, r) in ok() {
                    let rec = &r.recs[mi];
                    writeln!(w, "{}\t{}\t{:?}\t{}", user_name(u), rec.k, rec.expected_value, item_list(&rec.items))?;
                }
                Ok(())
            },
        )?;
        io::write_tsv(&dir.join(io::curves_file(measure)), &echo, "user\tmeasure\tk\tvalue", |w| {
            for (u, r) in ok() {
                for (k, v) in r.curves[mi].values.iter().enumerate() {
                    writeln!(w, "{}\t{measure}\t{}\t{v:?}", user_name(u), k + 1)?;
                }
            }
            Ok(())
        })?;
    }
    io::write_tsv(&dir.join(io::TOPK), &echo, "user\titems", |w| {
        for (u, r) in ok() {
            writeln!(w, "{}\t{}", user_name(u), item_list(&r.top))?;
        }
        Ok(())
    })?;
    let mut failed = 0;
    io::write_tsv(&dir.join(io::RECOMMEND_ERRORS), &echo, "user\terror", |w| {
        for (u, r) in results.iter().enumerate() {
            if let Err(e) = r {
                failed += 1;
                writeln!(w, "{}\t{e}", user_name(u))?;
            }
        }
        Ok(())
    })?;
    log::info!("recommended for {} users, {failed} failed", results.len() - failed);
    if failed > 0 {
        log::warn!("{failed} users failed; see {}", dir.join(io::RECOMMEND_ERRORS).display());
    }
    Ok(failed == 0)
}

fn cmd_evaluate(cfg: &RunConfig) -> anyhow::Result<bool> {
    let inputs = load_inputs(cfg)?;
    let universe = inputs.split.universe().clone();
    let eval = cfg.eval();
    let (report, users) = perk_core::select::evaluate(&inputs.split, &inputs.scores, &inputs.params, &eval)?;
    let dir = &cfg.workdir;
    let echo = cfg.echo();
    io::write_tsv(&dir.join(io::EVAL_USERS), &echo, "user\tmethod\tmeasure\tk\trealized", |w| {
        for e in &users {
            let name = universe.user_name(e.user);
            for o in &e.outcomes {
                writeln!(w, "{name}\t{}\t{}\t{}\t{:?}", o.method, o.measure, o.k, o.realized)?;
            }
        }
        Ok(())
    })?;
    let skipped: Vec<_> = report
        .skipped
        .iter()
        .map(|s| json!({ "user": universe.user_name(s.user), "reason": s.reason }))
        .collect();
    io::write_json(
        &dir.join(io::REPORT),
        &echo,
        json!({ "users": report.users, "skipped": skipped, "rows": report.rows }),
    )?;
    for row in &report.rows {
        log::info!("{:>8} {:>5} {:.6}", row.method, row.measure, row.mean);
    }
    if !report.skipped.is_empty() {
        log::warn!("{} users could not be evaluated", report.skipped.len());
    }
    Ok(report.skipped.is_empty())
}

fn domain_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_allocate(cfg: &RunConfig) -> anyhow::Result<bool> {
    let alloc = &cfg.allocate;
    if alloc.domains.is_empty() {
        bail!("allocate.domains lists no domain workdirs");
    }
    let names: Vec<String> = if alloc.names.is_empty() {
        alloc.domains.iter().map(|d| domain_name(d)).collect()
    } else {
        alloc.names.clone()
    };
    let mut dumps = Vec::with_capacity(alloc.domains.len());
    for d in &alloc.domains {
        let path = io::require(d.join(io::curves_file(alloc.measure)), "recommend")?;
        dumps.push(io::read_curves(&path, alloc.measure)?);
    }
    let (order, _) = &dumps[0];
    let users: Vec<&String> = order.iter().filter(|u| dumps.iter().all(|(_, c)| c.contains_key(*u))).collect();
    if users.len() < order.len() {
        log::warn!("{} users are missing from some domain and are skipped", order.len() - users.len());
    }
    let results: Vec<(String, perk_core::Result<perk_core::Allocation>)> = users
        .par_iter()
        .map(|&user| {
            let curves: Vec<Vec<f64>> = dumps.iter().map(|(_, c)| c[user].clone()).collect();
            let k = curves.iter().map(Vec::len).min().unwrap_or(0).min(cfg.max_size);
            (user.clone(), allocate(&curves, alloc.budget, k, alloc.allow_zero))
        })
        .collect();
    let echo = cfg.echo();
    let dir = &cfg.workdir;
    let mut total = 0.0;
    let mut failures = Vec::new();
    io::write_tsv(&dir.join(io::ALLOCATIONS), &echo, "user\tdomain\tk", |w| {
        for (user, r) in &results {
            match r {
                Ok(a) => {
                    total += a.objective;
                    for (name, k) in names.iter().zip(&a.sizes) {
                        writeln!(w, "{user}\t{name}\t{k}")?;
                    }
                }
                Err(e) => failures.push(json!({ "user": user, "reason": e.to_string() })),
            }
        }
        Ok(())
    })?;
    let allocated = results.len() - failures.len();
    io::write_json(
        &dir.join(io::ALLOCATION_SUMMARY),
        &echo,
        json!({
            "domains": names,
            "measure": alloc.measure,
            "budget": alloc.budget,
            "users": allocated,
            "total_objective": total,
            "mean_objective": if allocated == 0 { 0.0 } else { total / allocated as f64 },
            "failed": failures,
        }),
    )?;
    log::info!("allocated {allocated} users, total objective {total:.6}");
    Ok(failures.is_empty())
}
