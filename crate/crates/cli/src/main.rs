//! `freqrec` command line: dataset preparation, training, evaluation,
//! band-energy spectra, the theory verification battery, and ablations.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use freqrec_core::dataio::{
    kcore_filter, load_interactions, read_feature_matrix, write_feature_matrix, FeatureMatrix,
    InteractionTable, Modality, SplitDataset,
};
use freqrec_core::eval::{cold_subset, evaluate, EvalMode};
use freqrec_core::spectral::band_energy;
use freqrec_core::synth::{generate, SynthConfig};
use freqrec_core::theory::{report_csv, run_battery};
use freqrec_core::trainer::{
    load_checkpoint, log_csv, save_checkpoint, AblationVariant, TrainConfig, Trainer,
};
use freqrec_core::{Error, Result};

#[derive(Parser)]
#[command(name = "freqrec", version, about = "Frequency-aware multimodal recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset directory from raw interactions or a synthetic world.
    Prepare(PrepareArgs),
    /// Train a model and write a checkpoint plus a training log.
    Train(TrainArgs),
    /// Rank-and-score a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Per-band, per-modality mean energies over cold and warm items.
    Spectrum(SpectrumArgs),
    /// Run the numerical verification battery and write its report.
    Theory(TheoryArgs),
    /// Train and evaluate a standard ablation variant.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Generate a synthetic dataset instead of reading interactions.
    #[arg(long, conflicts_with = "interactions")]
    synthetic: bool,
    /// Tab-separated `user<TAB>item` interaction file.
    #[arg(long)]
    interactions: Option<PathBuf>,
    /// Visual feature matrix (rows must match the final item order).
    #[arg(long, requires = "interactions")]
    visual: Option<PathBuf>,
    /// Textual feature matrix (rows must match the final item order).
    #[arg(long, requires = "interactions")]
    textual: Option<PathBuf>,
    /// Iterative k-core filtering threshold (0 disables).
    #[arg(long, default_value_t = 0)]
    kcore: usize,
    /// Train/validation/test ratios.
    #[arg(long, default_value_t = 0.7)]
    train_ratio: f64,
    #[arg(long, default_value_t = 0.15)]
    val_ratio: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Synthetic universe size.
    #[arg(long, default_value_t = 300)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    items: usize,
    /// Feature width used for synthetic or placeholder features.
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `prepare`.
    #[arg(long)]
    data: PathBuf,
    /// Flat `key = value` training configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the checkpoint, config echo, and training log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training output directory holding `checkpoint/` and `config.txt`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Restrict to cold users (at most 5 total interactions).
    #[arg(long)]
    cold: bool,
    /// Also write the CSV report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Report path; defaults to `theory_report.csv` in the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// One of: full, rp_af, wo_af, wo_ib, wo_cl, wo_mm.
    #[arg(long)]
    variant: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, not usage errors
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let run = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Theory(a) => theory(a),
        Command::Ablate(a) => ablate(a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_dataset(
    dir: &Path,
    table: &InteractionTable,
    split: &SplitDataset,
    visual: &FeatureMatrix,
    textual: &FeatureMatrix,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write(&dir.join("users.txt"), &(table.user_ids.join("\n") + "\n"))?;
    write(&dir.join("items.txt"), &(table.item_ids.join("\n") + "\n"))?;
    let dump = |pairs: &[(usize, usize)]| {
        let mut out = String::new();
        for &(u, i) in pairs {
            out.push_str(&format!("{}\t{}\n", table.user_ids[u], table.item_ids[i]));
        }
        out
    };
    write(&dir.join("train.tsv"), &dump(&split.train))?;
    write(&dir.join("val.tsv"), &dump(&split.val))?;
    write(&dir.join("test.tsv"), &dump(&split.test))?;
    write_feature_matrix(visual, dir.join("visual.fitm"))?;
    write_feature_matrix(textual, dir.join("textual.fitm"))?;
    Ok(())
}

struct Dataset {
    split: SplitDataset,
    visual: FeatureMatrix,
    textual: FeatureMatrix,
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let read_ids = |name: &str| -> Result<Vec<String>> {
        let path = dir.join(name);
        let text =
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(text.lines().map(str::to_string).collect())
    };
    let users = read_ids("users.txt")?;
    let items = read_ids("items.txt")?;
    let user_index: std::collections::HashMap<&str, usize> = users
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let item_index: std::collections::HashMap<&str, usize> = items
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let read_pairs = |name: &str| -> Result<Vec<(usize, usize)>> {
        let path = dir.join(name);
        let text =
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg,
            };
            let (u, i) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `user<TAB>item`".to_string()))?;
            let u = *user_index
                .get(u.trim())
                .ok_or_else(|| parse_err(format!("unknown user `{u}`")))?;
            let i = *item_index
                .get(i.trim())
                .ok_or_else(|| parse_err(format!("unknown item `{i}`")))?;
            out.push((u, i));
        }
        Ok(out)
    };
    let split = SplitDataset::from_pair_lists(
        users.len(),
        items.len(),
        read_pairs("train.tsv")?,
        read_pairs("val.tsv")?,
        read_pairs("test.tsv")?,
    );
    let mut visual = read_feature_matrix(dir.join("visual.fitm"))?;
    visual.modality = Modality::Visual;
    let mut textual = read_feature_matrix(dir.join("textual.fitm"))?;
    textual.modality = Modality::Textual;
    Ok(Dataset {
        split,
        visual,
        textual,
    })
}

fn prepare(args: PrepareArgs) -> Result<()> {
    if args.train_ratio <= 0.0 || args.val_ratio < 0.0 || args.train_ratio + args.val_ratio >= 1.0
    {
        return Err(Error::InvalidArgument(
            "ratios must satisfy 0 < train, 0 <= val, train + val < 1".into(),
        ));
    }
    let test_ratio = 1.0 - args.train_ratio - args.val_ratio;
    let (table, visual, textual) = if args.synthetic {
        let data = generate(&SynthConfig {
            n_users: args.users,
            n_items: args.items,
            dim: args.feature_dim,
            seed: args.seed,
            ..SynthConfig::default()
        })?;
        (data.interactions, data.visual, data.textual)
    } else {
        let path = args.interactions.ok_or_else(|| {
            Error::InvalidArgument("pass either --synthetic or --interactions".into())
        })?;
        let mut table = load_interactions(&path)?;
        if args.kcore > 0 {
            table = kcore_filter(&table, args.kcore)?;
        }
        let features = |path: &Option<PathBuf>, modality: Modality| -> Result<FeatureMatrix> {
            match path {
                Some(p) => {
                    let mut m = read_feature_matrix(p)?;
                    if m.rows != table.n_items() {
                        return Err(Error::shape(
                            "prepare",
                            format!(
                                "{} has {} rows but the dataset has {} items",
                                p.display(),
                                m.rows,
                                table.n_items()
                            ),
                        ));
                    }
                    m.modality = modality;
                    Ok(m)
                }
                None => FeatureMatrix::new(
                    table.n_items(),
                    args.feature_dim,
                    vec![0.0; table.n_items() * args.feature_dim],
                    modality,
                ),
            }
        };
        let visual = features(&args.visual, Modality::Visual)?;
        let textual = features(&args.textual, Modality::Textual)?;
        (table, visual, textual)
    };
    let split = freqrec_core::dataio::split_dataset(
        &table,
        (args.train_ratio, args.val_ratio, test_ratio),
        args.seed,
    )?;
    write_dataset(&args.out, &table, &split, &visual, &textual)?;
    println!(
        "prepared {} users, {} items, {} interactions ({} train / {} val / {} test)",
        table.n_users(),
        table.n_items(),
        table.pairs.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            TrainConfig::from_text(&text)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn train_into(cfg: TrainConfig, data: &Path, out: &Path) -> Result<()> {
    let dataset = load_dataset(data)?;
    let mut trainer = Trainer::new(cfg, dataset.split, &dataset.visual, &dataset.textual)?;
    let outcome = trainer.train()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    write(&out.join("config.txt"), &trainer.cfg.to_text())?;
    write(&out.join("train_log.csv"), &log_csv(&outcome.log))?;
    save_checkpoint(&trainer.state, out.join("checkpoint"))?;
    println!(
        "trained {} epochs; best validation recall@20 = {:.6} at epoch {}",
        outcome.log.len(),
        outcome.best_val_recall20,
        outcome.best_epoch
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    train_into(load_config(&args.config)?, &args.data, &args.out)
}

/// Rebuild a trainer around a stored checkpoint and refresh its bases.
fn restore(data: &Path, run_dir: &Path) -> Result<Trainer> {
    let dataset = load_dataset(data)?;
    let cfg_path = run_dir.join("config.txt");
    let text =
        fs::read_to_string(&cfg_path).map_err(|e| Error::io(cfg_path.display().to_string(), e))?;
    let cfg = TrainConfig::from_text(&text)?;
    let mut trainer = Trainer::new(cfg, dataset.split, &dataset.visual, &dataset.textual)?;
    let loaded = load_checkpoint(run_dir.join("checkpoint"))?;
    if loaded.names != trainer.state.names {
        return Err(Error::Format(
            "checkpoint parameters do not match this configuration".to_string(),
        ));
    }
    let frozen = trainer.state.frozen.clone();
    trainer.state = loaded;
    trainer.state.frozen = frozen;
    trainer.refresh_bases()?;
    Ok(trainer)
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let trainer = restore(&args.data, &args.checkpoint)?;
    let fused = trainer.fused_matrix()?;
    let (subset, tag): (Option<HashSet<usize>>, &str) = if args.cold {
        (Some(cold_subset(&trainer.split)), "cold")
    } else {
        (None, "all")
    };
    let report = evaluate(&fused, &trainer.split, subset.as_ref(), tag, EvalMode::Test)?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(out) = args.out {
        write(&out, &csv)?;
    }
    Ok(())
}

fn spectrum(args: SpectrumArgs) -> Result<()> {
    let trainer = restore(&args.data, &args.checkpoint)?;
    let stack = trainer.band_stack()?;
    let u0 = trainer.split.n_users;
    let mut cold_rows = Vec::new();
    let mut warm_rows = Vec::new();
    for i in 0..trainer.split.n_items {
        if trainer.split.item_interaction_count(i) <= 5 {
            cold_rows.push(u0 + i);
        } else {
            warm_rows.push(u0 + i);
        }
    }
    let mut csv = String::from("band,modality,subset,mean_energy\n");
    for (subset, rows) in [("cold", &cold_rows), ("warm", &warm_rows)] {
        if rows.is_empty() {
            continue;
        }
        let table = band_energy(&stack, rows)?;
        for (band, energies) in table.iter().enumerate() {
            for (m, energy) in energies.iter().enumerate() {
                csv.push_str(&format!(
                    "{band},{},{subset},{energy:.12}\n",
                    stack.modalities[m].name()
                ));
            }
        }
    }
    print!("{csv}");
    if let Some(out) = args.out {
        write(&out, &csv)?;
    }
    Ok(())
}

fn theory(args: TheoryArgs) -> Result<()> {
    let rows = run_battery(args.seed)?;
    let csv = report_csv(&rows);
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from("theory_report.csv"));
    write(&out, &csv)?;
    print!("{csv}");
    let failing = rows.iter().filter(|r| !r.pass).count();
    println!("# {} checks, {} failing", rows.len(), failing);
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let variant = AblationVariant::parse(&args.variant)?;
    let mut cfg = load_config(&args.config)?;
    variant.apply(&mut cfg);
    train_into(cfg, &args.data, &args.out)?;
    let trainer = restore(&args.data, &args.out)?;
    let fused = trainer.fused_matrix()?;
    let report = evaluate(&fused, &trainer.split, None, variant.name(), EvalMode::Test)?;
    let csv = report.to_csv();
    print!("{csv}");
    write(&args.out.join("metrics.csv"), &csv)?;
    Ok(())
}
