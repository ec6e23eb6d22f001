use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use osattr::container::write_atomic;
use osattr::experiment::runner::AuditedSplit;
use osattr::experiment::{
    class_count_sweep, few_shot_sweep, layer_sweep, perturbation_eval, render_report, run_experiment, write_sweep,
    ExperimentConfig, FeatureProvider, FileProvider, Method, ReportFormat, RunRecord, SweepTable, TrainedModel, CLEAN,
};
use osattr::feature_store::write_feature_set;
use osattr::rejection::Strategy;
use osattr::{Error, Result};

#[derive(Parser)]
#[command(name = "osattr", version, about = "Open-set origin attribution on image embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Added to every split seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// lp, nn or nn+.
    #[arg(long)]
    method: Option<Method>,
    /// Rejection score, e.g. msp, energy, gen+residual.
    #[arg(long)]
    score: Option<Strategy>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train/val/test partitions of every split.
    Split(Common),
    /// Fit models per split and save them.
    Train(Common),
    /// Run the full protocol and write the record and reports.
    Eval(Common),
    /// One run per layer in sweep.layers.
    SweepLayers(Common),
    /// One run per training size in sweep.samples_per_class.
    FewShot(Common),
    /// One run per known-generator count in sweep.known_class_counts.
    ClassCount(Common),
    /// Clean-trained and immunized runs per tag in sweep.perturbations.
    PerturbEval(Common),
    /// Render a saved record.
    Report {
        #[arg(long)]
        record: PathBuf,
        /// csv, json or markdown.
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(m) = c.method {
        cfg.method = m;
        // a method switch without --score falls back to that method's default
        if c.score.is_none() {
            cfg.strategy = None;
        }
    }
    if let Some(s) = c.score {
        cfg.strategy = Some(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn provider(cfg: &ExperimentConfig) -> FileProvider {
    FileProvider {
        files: cfg.feature_files.clone(),
    }
}

fn split_dir(cfg: &ExperimentConfig, id: &str) -> Result<PathBuf> {
    let dir = cfg.output_dir.join(id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn cmd_split(cfg: &ExperimentConfig) -> Result<()> {
    let data = provider(cfg).dataset(cfg.layer, CLEAN)?;
    for (i, spec) in cfg.resolved_splits().iter().enumerate() {
        let id = ExperimentConfig::split_id(spec, i);
        let mut spec = spec.clone();
        spec.seed = cfg.split_seed(&spec);
        let p = data.partition(&spec)?;
        let dir = split_dir(cfg, &id)?;
        for (name, set) in [
            ("train", &p.train),
            ("val", &p.val),
            ("test_seen", &p.test_seen),
            ("test_unseen", &p.test_unseen),
        ] {
            write_feature_set(set, &dir.join(format!("{name}.featset")))?;
        }
        let rows = serde_json::to_vec_pretty(&p.rows).map_err(|e| Error::Metadata(e.to_string()))?;
        write_atomic(&dir.join("rows.json"), &rows)?;
        println!(
            "{id}: train {} val {} test_seen {} test_unseen {}",
            p.train.count(),
            p.val.count(),
            p.test_seen.count(),
            p.test_unseen.count()
        );
    }
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let data = provider(cfg).dataset(cfg.layer, CLEAN)?;
    for (i, spec) in cfg.resolved_splits().iter().enumerate() {
        let id = ExperimentConfig::split_id(spec, i);
        let mut spec = spec.clone();
        spec.seed = cfg.split_seed(&spec);
        let p = data.partition(&spec)?;
        let (model, lambda) = TrainedModel::fit(cfg, &AuditedSplit::new(&id, &p))?;
        let dir = split_dir(cfg, &id)?;
        match &model {
            TrainedModel::Probe { probe, stats } => {
                probe.save(&dir.join("probe.bin"))?;
                if let Some(s) = stats {
                    s.save(&dir.join("idstats.bin"))?;
                }
            }
            TrainedModel::Knn { head, .. } => {
                write_feature_set(&p.train, &dir.join("index.featset"))?;
                if let Some(h) = head {
                    h.save(&dir.join("projection.bin"))?;
                }
            }
        }
        match lambda {
            Some(l) => println!("{id}: trained {} (lambda {l})", cfg.method),
            None => println!("{id}: trained {}", cfg.method),
        }
    }
    Ok(())
}

fn finish_record(record: &RunRecord) -> Result<bool> {
    match &record.report {
        Some(r) => println!(
            "accuracy {:.4}  auroc {}  oscr {}",
            r.accuracy,
            r.auroc.map_or("n/a".into(), |v| format!("{v:.4}")),
            r.oscr.map_or("n/a".into(), |v| format!("{v:.4}"))
        ),
        None => println!("no split succeeded"),
    }
    for f in &record.failures {
        error!("{} failed at {}: {}", f.split, f.stage, f.message);
    }
    Ok(record.complete)
}

fn finish_sweep(cfg: &ExperimentConfig, table: &SweepTable, stem: &str) -> Result<bool> {
    write_sweep(table, &cfg.output_dir, stem)?;
    for row in &table.rows {
        if let Some(e) = &row.error {
            error!("{} {}: {e}", table.kind.column(), row.value);
        }
    }
    println!("wrote {}", cfg.output_dir.join(format!("{stem}.csv")).display());
    Ok(table.is_complete())
}

fn cmd_report(record: &Path, format: ReportFormat, out: Option<&Path>) -> Result<()> {
    let text = render_report(&RunRecord::load(record)?, format)?;
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Report { record, format, out } => {
            cmd_report(record, *format, out.as_deref())?;
            Ok(true)
        }
        Command::Split(c) => cmd_split(&load_config(c)?).map(|_| true),
        Command::Train(c) => cmd_train(&load_config(c)?).map(|_| true),
        Command::Eval(c) => finish_record(&run_experiment(&load_config(c)?)?),
        Command::SweepLayers(c) => {
            let cfg = load_config(c)?;
            finish_sweep(&cfg, &layer_sweep(&cfg, &provider(&cfg))?, "layers")
        }
        Command::FewShot(c) => {
            let cfg = load_config(c)?;
            finish_sweep(&cfg, &few_shot_sweep(&cfg, &provider(&cfg))?, "few_shot")
        }
        Command::ClassCount(c) => {
            let cfg = load_config(c)?;
            finish_sweep(&cfg, &class_count_sweep(&cfg, &provider(&cfg))?, "class_count")
        }
        Command::PerturbEval(c) => {
            let cfg = load_config(c)?;
            finish_sweep(&cfg, &perturbation_eval(&cfg, &provider(&cfg))?, "perturbations")
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: run incomplete, see failures above");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
