//! The four subcommands. Each one loads and checks all of its inputs before
//! touching the filesystem.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use nbe_core::data::split_semi_supervised;
use nbe_core::evaluator::{embed_rows, evaluate, evaluate_raw, multi_split_protocol, ProtocolConfig};
use nbe_core::trainer::LOG_HEADER;
use nbe_core::{Checkpoint, Dataset, Error, KnnConfig, SemiSupSplit, Trainer};

use crate::config::RunConfig;
use crate::dump::{format_rows, parse_rows, tags};
use crate::error::{CliError, CliResult};
use crate::plot::render_svg;
use crate::rundir::{self, RunLock, CHECKPOINT, MANIFEST, SPLIT, TRAINLOG};

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    /// Config file; defaults to the run directory's manifest when resuming.
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub run_dir: PathBuf,
    pub resume: bool,
    /// Stop once this many epochs are complete, leaving a resumable
    /// checkpoint behind.
    pub stop_after_epoch: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub run_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub overrides: Vec<String>,
    /// Repeat split → train → evaluate this many times with derived seeds
    /// and report mean ± std instead of evaluating the checkpoint.
    pub repeats: Option<usize>,
    /// Also report kNN error on raw input features.
    pub raw_baseline: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EmbedArgs {
    pub run_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct PlotArgs {
    pub dump: PathBuf,
    pub out: PathBuf,
    pub include_test: bool,
}

/// Configuration, dataset and split of an existing run directory.
struct LoadedRun {
    cfg: RunConfig,
    ds: Dataset,
    split: SemiSupSplit,
}

fn load_run(run_dir: &Path, overrides: &[String]) -> CliResult<LoadedRun> {
    let manifest = run_dir.join(MANIFEST);
    if !manifest.is_file() {
        return Err(CliError::usage(format!("{} has no {MANIFEST}; is it a run directory?", run_dir.display())));
    }
    let cfg = RunConfig::load(&manifest, overrides)?;
    let (ds, _) = cfg.load_dataset()?;
    rundir::check_fingerprint(&cfg, &rundir::fingerprint(&ds))?;
    let split = SemiSupSplit::from_manifest(&rundir::read(&run_dir.join(SPLIT))?)?;
    split.validate(&ds).map_err(|e| CliError::usage(e.to_string()))?;
    Ok(LoadedRun { cfg, ds, split })
}

fn load_checkpoint(run_dir: &Path, explicit: Option<&Path>, ds: &Dataset) -> CliResult<Checkpoint> {
    let path = explicit.map_or_else(|| run_dir.join(CHECKPOINT), Path::to_path_buf);
    let ck = Checkpoint::decode(&rundir::read(&path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if ck.net.input_dim() != ds.dim() {
        return Err(CliError::usage(format!(
            "checkpoint expects {} input features, the dataset has {}",
            ck.net.input_dim(),
            ds.dim()
        )));
    }
    Ok(ck)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let config_path = match (&args.config, args.resume) {
        (Some(p), _) => p.clone(),
        (None, true) => args.run_dir.join(MANIFEST),
        (None, false) => return Err(CliError::usage("train needs --config (or --resume with an existing run)")),
    };
    let cfg = RunConfig::load(&config_path, &args.overrides)?;
    let (ds, test) = cfg.load_dataset()?;
    let sha = rundir::fingerprint(&ds);
    rundir::check_fingerprint(&cfg, &sha)?;
    let train_cfg = cfg.train_config(ds.dim());
    let ckpt_path = args.run_dir.join(CHECKPOINT);

    let split;
    let checkpoint;
    if args.resume {
        split = SemiSupSplit::from_manifest(&rundir::read(&args.run_dir.join(SPLIT))?)?;
        checkpoint = Some(load_checkpoint(&args.run_dir, None, &ds)?);
    } else {
        if ckpt_path.exists() {
            return Err(CliError::usage(format!(
                "{} already holds a run; pass --resume or choose a new directory",
                args.run_dir.display()
            )));
        }
        split = split_semi_supervised(&ds, cfg.labeled_per_class, &test, cfg.split_seed)
            .map_err(|e| CliError::usage(e.to_string()))?;
        checkpoint = None;
    }
    let mut trainer = match checkpoint {
        Some(ck) => Trainer::resume(ck, &ds, &split, train_cfg),
        None => Trainer::new(&ds, &split, train_cfg),
    }
    .map_err(|e| match e {
        Error::Argument(m) | Error::Consistency(m) | Error::Spec(m) => CliError::Usage(m),
        other => other.into(),
    })?;

    fs::create_dir_all(&args.run_dir).map_err(|e| CliError::io(&args.run_dir, e))?;
    let _lock = RunLock::acquire(&args.run_dir)?;
    let log_path = args.run_dir.join(TRAINLOG);
    if !args.resume {
        rundir::write(&args.run_dir.join(MANIFEST), &rundir::manifest_text(&cfg, &sha))?;
        rundir::write(&args.run_dir.join(SPLIT), &split.to_manifest())?;
        rundir::write(&log_path, &format!("{LOG_HEADER}\n"))?;
    }
    log::info!(
        "training {} iterations per epoch from iteration {} (dataset {sha})",
        trainer.iterations_per_epoch(),
        trainer.iteration()
    );

    let limit = args.stop_after_epoch.unwrap_or(cfg.epochs);
    let outcome = trainer.run_until(limit, &mut |ck| ck.save(&ckpt_path));
    // Whatever happened, persist the last good state and the log so far.
    trainer.checkpoint().save(&ckpt_path)?;
    let mut log_file = OpenOptions::new().append(true).open(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    for r in &trainer.log().records {
        writeln!(log_file, "{}", r.to_line()).map_err(|e| CliError::io(&log_path, e))?;
    }
    outcome?;

    let last = trainer.log().records.last();
    writeln!(
        out,
        "epoch {}/{}  iteration {}  loss {}",
        trainer.epoch(),
        cfg.epochs,
        trainer.iteration(),
        last.map_or("n/a".into(), |r| format!("{:.6}", r.loss_total))
    )
    .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let run = load_run(&args.run_dir, &args.overrides)?;
    let _lock = RunLock::acquire(&args.run_dir)?;
    let knn: &KnnConfig = &run.cfg.knn;
    let stdout = |e| CliError::io(Path::new("<stdout>"), e);
    match args.repeats {
        Some(n) => {
            let (_, test) = run.cfg.load_dataset()?;
            let protocol = ProtocolConfig {
                labeled_per_class: run.cfg.labeled_per_class,
                test,
                train: run.cfg.train_config(run.ds.dim()),
                knn: knn.clone(),
                master_seed: run.cfg.split_seed,
            };
            let report = multi_split_protocol(&run.ds, &protocol, n)?;
            write!(out, "{}", report.summary.to_table()).map_err(stdout)?;
        }
        None => {
            let ck = load_checkpoint(&args.run_dir, args.checkpoint.as_deref(), &run.ds)?;
            let report = evaluate(&ck.net, &run.ds, &run.split, knn)?;
            write!(out, "{}", report.to_table()).map_err(stdout)?;
        }
    }
    if args.raw_baseline {
        let raw = evaluate_raw(&run.ds, &run.split, knn)?;
        writeln!(out, "raw input baseline").map_err(stdout)?;
        write!(out, "{}", raw.to_table()).map_err(stdout)?;
    }
    Ok(())
}

fn check_writable_target(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        return Err(CliError::usage(format!("{} is a directory", path.display())));
    }
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::usage(format!("cannot write {}: {} does not exist", path.display(), parent.display())));
    }
    Ok(())
}

fn write_output(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_embed(args: &EmbedArgs) -> CliResult<()> {
    check_writable_target(&args.out)?;
    let run = load_run(&args.run_dir, &[])?;
    let _lock = RunLock::acquire(&args.run_dir)?;
    let ck = load_checkpoint(&args.run_dir, args.checkpoint.as_deref(), &run.ds)?;
    let tags = tags(&run.ds, &run.split)?;
    let all: Vec<usize> = (0..run.ds.len()).collect();
    let emb = embed_rows(&ck.net, &run.ds, &all)?;
    write_output(&args.out, &format_rows(&run.ds, &tags, &emb))
}

pub fn cmd_plot(args: &PlotArgs) -> CliResult<()> {
    check_writable_target(&args.out)?;
    let rows = parse_rows(&rundir::read(&args.dump)?)?;
    let svg = render_svg(&rows, args.include_test)?;
    write_output(&args.out, &svg)
}
