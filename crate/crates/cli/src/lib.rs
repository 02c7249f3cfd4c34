//! Subcommands of the `warpadam` binary.
//!
//! Every command resolves its settings from defaults, `--config`, `--set`,
//! `--seed` and `WARP_SEED`, writes its outputs under `--out`, and leaves a
//! `manifest.txt` there that repeats the run when passed back to `--config`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use warpadam::bench::{
    compare_optimizers, comparison_csv, curve_csv, fmt_f64, initial_params, model_for, run_sequential_tasks, stream,
    ComparisonBlock, RunOutcome, HOLDOUT_STREAM, META_STREAM,
};
use warpadam::checks::{run_checks, CheckOptions};
use warpadam::config::{parse_kv, ConfigLayers, Settings};
use warpadam::nn::EpisodeTask;
use warpadam::optim::OptimizerKind;
use warpadam::tasks::{import_image_classes, save_table};
use warpadam::tensor::Primitive;
use warpadam::warp::{mean_adapted_loss, meta_train, save_warps, MetaRecord, MetaState};
use warpadam::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "warpadam", version, about = "Meta-learned gradient warping for Adam")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn warp matrices on the training alphabets of the first task source.
    MetaTrain(CommonArgs),
    /// Benchmark every configured optimizer on every task source.
    Compare(CommonArgs),
    /// Train with the configured optimizer on the first task source.
    Run(CommonArgs),
    /// Finite-difference and determinism self-checks.
    Check {
        #[command(flatten)]
        config: ConfigArgs,
        /// Deliberately break one backward rule, to see the checks fail.
        #[arg(long, hide = true, value_name = "PRIMITIVE")]
        corrupt_rule: Option<String>,
    },
    /// Convert a directory tree of PGM images into a class table.
    Import {
        #[command(flatten)]
        common: CommonArgs,
        /// Root with one directory per alphabet, one subdirectory per class.
        #[arg(long)]
        root: Option<PathBuf>,
        /// Images are resampled to side × side.
        #[arg(long)]
        side: Option<usize>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// key=value settings file; a manifest from an earlier run works too.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed; outranks every other seed source.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Numeric(_)) => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

fn settings(args: &ConfigArgs, extra: Vec<(String, String)>) -> Result<Settings> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_kv(&text, path)?
        }
        None => Vec::new(),
    };
    let mut overrides = Vec::new();
    for s in &args.set {
        let Some((k, v)) = s.split_once('=') else {
            return Err(Error::Config(format!("--set {s:?}: expected KEY=VALUE")).into());
        };
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    overrides.extend(extra);
    let layers = ConfigLayers {
        file,
        overrides,
        seed_flag: args.seed,
        env_seed: std::env::var("WARP_SEED").ok(),
    };
    Ok(Settings::resolve(layers)?)
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::MetaTrain(c) => meta_train_cmd(&c),
        Command::Compare(c) => compare_cmd(&c),
        Command::Run(c) => run_cmd(&c),
        Command::Check { config, corrupt_rule } => check_cmd(&config, corrupt_rule.as_deref()),
        Command::Import { common, root, side } => import_cmd(&common, root, side),
    }
}

fn meta_curve_csv(curve: &[MetaRecord]) -> String {
    let mut out = String::from("outer_step,query_loss,tod_penalty\n");
    for r in curve {
        let _ = writeln!(out, "{},{},{}", r.outer_step, fmt_f64(r.query_loss), fmt_f64(r.tod_penalty));
    }
    out
}

fn meta_train_cmd(args: &CommonArgs) -> Result<i32> {
    let s = settings(&args.config, Vec::new())?;
    let cfg = s.run_config(OptimizerKind::WarpAdam)?;
    let outer_steps = s.meta_outer_steps()?;
    let eval_tasks = s.meta_eval_tasks()?;
    let sources = s.load_sources()?;
    let data = &sources[0];
    out_dir(&args.out)?;

    let model = model_for(&cfg, data)?;
    let w0 = initial_params(&cfg, &model);
    let init = MetaState::identity(&cfg.form, &model.param_shapes());
    let identity = init.warps.clone();
    let mut rng = stream(cfg.seed, META_STREAM);
    let outcome = meta_train(
        &model,
        &w0,
        &data.table,
        &data.split.train,
        cfg.episode,
        init,
        &cfg.meta,
        outer_steps,
        &mut rng,
    )?;

    // Judge the result on episodes from alphabets meta-training never saw.
    let e = cfg.episode;
    let mut rng = stream(cfg.seed, HOLDOUT_STREAM);
    let episodes = (0..eval_tasks)
        .map(|_| data.table.sample_episode(&data.split.eval, e.n_way, e.k_shot, e.query_per_class, &mut rng))
        .collect::<warpadam::Result<Vec<_>>>()?;
    let tasks = episodes
        .iter()
        .map(|ep| EpisodeTask::new(&model, ep))
        .collect::<warpadam::Result<Vec<_>>>()?;
    let base = mean_adapted_loss(&tasks, &w0, &identity, &cfg.meta)?;
    let learned = mean_adapted_loss(&tasks, &w0, &outcome.state.warps, &cfg.meta)?;

    save_warps(&outcome.state.warps, &args.out.join("warps.bin"))?;
    write(&args.out.join("meta_curve.csv"), &meta_curve_csv(&outcome.curve))?;
    let summary = format!(
        "source,eval_tasks,identity_query_loss,learned_query_loss\n{},{},{},{}\n",
        data.name,
        eval_tasks,
        fmt_f64(base),
        fmt_f64(learned)
    );
    write(&args.out.join("meta_summary.csv"), &summary)?;
    write(&args.out.join("manifest.txt"), &s.manifest("meta-train", &[]))?;
    println!(
        "meta-train on {}: held-out query loss {:.6} with identity, {:.6} learned ({} episodes)",
        data.name, base, learned, eval_tasks
    );
    Ok(EXIT_OK)
}

fn report_divergence(label: &str, outcome: &RunOutcome) -> bool {
    match &outcome.divergence {
        Some(d) => {
            eprintln!("{label} diverged at task {} step {}: {}", d.task_index, d.step, d.reason);
            true
        }
        None => false,
    }
}

fn run_cmd(args: &CommonArgs) -> Result<i32> {
    let s = settings(&args.config, Vec::new())?;
    let kind = s.optimizer()?;
    let cfg = s.run_config(kind)?;
    let sources = s.load_sources()?;
    let data = &sources[0];
    out_dir(&args.out)?;
    let outcome = run_sequential_tasks(&cfg, data)?;
    write(&args.out.join("curve.csv"), &curve_csv(&outcome.records))?;
    if let Some(warps) = &outcome.warps {
        save_warps(warps, &args.out.join("warps.bin"))?;
    }
    write(&args.out.join("manifest.txt"), &s.manifest("run", &[]))?;
    if report_divergence(kind.label(), &outcome) {
        return Ok(EXIT_DIVERGED);
    }
    if let Some(last) = outcome.records.last() {
        println!(
            "{} on {}: final val_loss {:.6} val_acc {:.4} ({} ms)",
            kind.label(),
            data.name,
            last.val_loss,
            last.val_acc,
            outcome.wall_ms
        );
    }
    Ok(EXIT_OK)
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn compare_cmd(args: &CommonArgs) -> Result<i32> {
    let s = settings(&args.config, Vec::new())?;
    let optimizers = s.optimizers()?;
    if optimizers.len() < 2 {
        return Err(Error::Config(format!(
            "compare needs at least two optimizers, got {}",
            optimizers.len()
        ))
        .into());
    }
    let fraction = s.fraction()?;
    let configs = optimizers
        .iter()
        .map(|(label, kind)| Ok((label.clone(), s.run_config(*kind)?)))
        .collect::<Result<Vec<_>>>()?;
    let sources = s.load_sources()?;
    let curves = args.out.join("curves");
    out_dir(&curves)?;

    let mut blocks = Vec::new();
    for data in &sources {
        let results = compare_optimizers(&configs, data, fraction)?;
        let mut rows = Vec::new();
        for (row, outcome) in results {
            report_divergence(&format!("{} on {}", row.algorithm, data.name), &outcome);
            let name = format!("{}_{}.csv", file_stem(&data.name), file_stem(&row.algorithm));
            write(&curves.join(name), &curve_csv(&outcome.records))?;
            rows.push(row);
        }
        blocks.push(ComparisonBlock {
            source: data.name.clone(),
            rows,
        });
    }
    let table = comparison_csv(&blocks);
    write(&args.out.join("comparison.csv"), &table)?;
    write(&args.out.join("manifest.txt"), &s.manifest("compare", &[]))?;
    print!("{table}");
    Ok(EXIT_OK)
}

fn check_cmd(args: &ConfigArgs, corrupt: Option<&str>) -> Result<i32> {
    let s = settings(args, Vec::new())?;
    let fault = match corrupt {
        Some(name) => Some(
            Primitive::from_name(name)
                .ok_or_else(|| Error::Config(format!("unknown primitive {name:?}")))?,
        ),
        None => None,
    };
    let opts = CheckOptions {
        seed: s.seed,
        fault,
        ..CheckOptions::default()
    };
    let results = run_checks(&opts)?;
    for r in &results {
        println!(
            "{} {} trials={} max_rel_err={:.3e} tol={:.0e}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.trials,
            r.max_rel_err,
            r.tolerance
        );
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        return Ok(EXIT_OK);
    }
    let worst = failed
        .iter()
        .max_by(|a, b| (a.max_rel_err / a.tolerance).total_cmp(&(b.max_rel_err / b.tolerance)))
        .unwrap();
    println!(
        "{} of {} checks failed; worst {} at {:.3e} (tol {:.0e})",
        failed.len(),
        results.len(),
        worst.name,
        worst.max_rel_err,
        worst.tolerance
    );
    Ok(EXIT_CHECK_FAILED)
}

fn import_cmd(args: &CommonArgs, root: Option<PathBuf>, side: Option<usize>) -> Result<i32> {
    let mut extra = Vec::new();
    if let Some(root) = root {
        let root = root.to_str().context("import root must be valid UTF-8")?.to_string();
        extra.push(("import.root".to_string(), root));
    }
    if let Some(side) = side {
        extra.push(("import.side".to_string(), side.to_string()));
    }
    let s = settings(&args.config, extra)?;
    let (root, side) = s.import_args()?;
    let table = import_image_classes(&root, side)?;
    out_dir(&args.out)?;
    save_table(&table, &args.out.join("table.ctbl"))?;
    write(&args.out.join("manifest.txt"), &s.manifest("import", &[]))?;
    let classes: usize = table.alphabets.iter().map(|a| a.classes.len()).sum();
    println!(
        "imported {} alphabets, {} classes, input dim {}",
        table.alphabets.len(),
        classes,
        table.input_dim
    );
    Ok(EXIT_OK)
}

/// Runs the CLI on `argv` and returns the exit code; clap's own help and
/// version output exit 0, other argument errors exit 2.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
