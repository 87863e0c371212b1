use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use risk_surface::baselines::{ComparisonRow, ModelKind};
use risk_surface::dataset::{self, ContractRecord, SyntheticConfig};
use risk_surface::pipeline::{self, PipelineArtifact, RunConfig};
use risk_surface::render::{self, Marker};
use risk_surface::{tsne, Error, Result};

/// Claim-risk surfaces over a t-SNE map of an insurance portfolio.
#[derive(Debug, Parser)]
#[command(name = "risksurf", version)]
struct Cli {
    /// Master seed; overrides the seed in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// JSON config: a synthetic config for `synth`, a run config otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic portfolio with planted risk clusters.
    Synth {
        /// Number of contracts; overrides the config.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit the full pipeline and write the model artifact.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        perplexity: Option<f64>,
        /// Only embed the training set once per listed perplexity and plot it.
        #[arg(long, value_delimiter = ',')]
        perplexity_sweep: Option<Vec<f64>>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Score contracts against a trained surface.
    Score {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score labelled contracts and report Pearson, AUC, groups and curves.
    Evaluate {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also report the premium-based insurer risk side by side.
        #[arg(long)]
        insurer: bool,
        /// Risk-group boundaries, e.g. 0.3,0.5.
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<f64>>,
    },
    /// Baseline models in the 2D map and in the 14D feature space.
    Compare {
        #[arg(long)]
        artifact: PathBuf,
        /// The full portfolio the artifact was trained on.
        #[arg(long)]
        data: PathBuf,
        /// Model kinds: linear,logistic,mlp,forest,boost,tree.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<ModelKind>>,
    },
    /// Export surfaces and scatters, optionally marking contracts.
    Plot {
        #[arg(long)]
        artifact: PathBuf,
        /// Contracts that --mark ids refer to (default: the training rows).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        mark: Vec<usize>,
    },
}

fn read_records(path: &Path) -> Result<Vec<ContractRecord>> {
    dataset::parse_contracts(&fs::read_to_string(path)?)
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn synth(cli: &Cli, n: Option<usize>) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => serde_json::from_str::<SyntheticConfig>(&fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("synthetic config: {e}")))?,
        None => SyntheticConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = n {
        cfg.n_contracts = n;
    }
    let records = dataset::generate_synthetic(&cfg)?;
    write(&cli.out, "portfolio.csv", dataset::write_contracts(&records, false))?;
    let mut sidecar = String::from("row,cluster\n");
    for (i, r) in records.iter().enumerate() {
        sidecar.push_str(&format!("{i},{}\n", r.cluster.unwrap_or_default()));
    }
    write(&cli.out, "portfolio_clusters.csv", sidecar)?;
    let claims = records.iter().filter(|r| r.claim).count();
    println!(
        "contracts: {}\nclaim ratio: {:.2}%",
        records.len(),
        100.0 * claims as f64 / records.len() as f64
    );
    Ok(())
}

fn train(cli: &Cli, data: &Path, perplexity: Option<f64>, sweep: Option<&[f64]>, fraction: Option<f64>) -> Result<()> {
    let mut cfg = run_config(cli)?;
    if let Some(p) = perplexity {
        cfg.tsne.perplexity = p;
    }
    if let Some(f) = fraction {
        cfg.train_fraction = f;
    }
    let records = read_records(data)?;
    if let Some(values) = sweep {
        return perplexity_sweep(cli, &records, &cfg, values);
    }
    let out = pipeline::train(&records, &cfg)?;
    out.artifact.save(&cli.out.join("artifact.json"))?;
    write(&cli.out, "train.csv", dataset::write_contracts(&out.train_records, false))?;
    write(&cli.out, "test.csv", dataset::write_contracts(&out.test_records, false))?;
    write(&cli.out, "embedding.csv", pipeline::embedding_csv(&out.artifact.embedding))?;
    write(&cli.out, "kl_trace.csv", pipeline::kl_trace_csv(&out.kl_history))?;
    println!(
        "trained on {} contracts ({} held out); final KL {:.4}",
        out.train_records.len(),
        out.test_records.len(),
        out.kl_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn perplexity_sweep(cli: &Cli, records: &[ContractRecord], cfg: &RunConfig, values: &[f64]) -> Result<()> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let split = dataset::split(records.len(), cfg.train_fraction, cfg.seed)?;
    let train = pipeline::select(records, &split.train_indices);
    let raw = dataset::encode_features(&train);
    let all: Vec<usize> = (0..raw.rows()).collect();
    let x = dataset::fit_normalizer(&raw, &all)?.apply(&raw)?;
    let claims = dataset::claims(&train);
    for &p in values {
        let tcfg = tsne::TsneConfig {
            perplexity: p,
            ..cfg.tsne.clone()
        };
        let emb = tsne::run_tsne(&x, &tcfg).map_err(|e| e.in_stage(&format!("tsne (perplexity {p})")))?;
        let title = format!("t-SNE embedding, perplexity {p}");
        write(
            &cli.out,
            &format!("sweep_perplexity_{p}.svg"),
            render::scatter_svg(&emb.y, Some(&claims), &title, &[]),
        )?;
        write(&cli.out, &format!("sweep_perplexity_{p}.csv"), pipeline::embedding_csv(&emb.y))?;
    }
    println!("perplexity sweep: {} embeddings", values.len());
    Ok(())
}

fn score(cli: &Cli, artifact: &Path, data: &Path) -> Result<()> {
    let artifact = PipelineArtifact::load(artifact)?;
    let records = read_records(data)?;
    let batch = artifact.score(&records)?;
    write(&cli.out, "scores.csv", pipeline::scores_csv(&batch))?;
    println!(
        "retained: {}\nout of surface: {}",
        batch.retained.len(),
        batch.n_out_of_surface()
    );
    Ok(())
}

fn evaluate(cli: &Cli, artifact_path: &Path, data: &Path, insurer: bool, groups: Option<&[f64]>) -> Result<()> {
    let artifact = PipelineArtifact::load(artifact_path)?;
    let records = read_records(data)?;
    let boundaries = groups.map_or_else(|| artifact.config.group_boundaries.clone(), <[f64]>::to_vec);
    let (report, batch) = pipeline::evaluate(&artifact, &records, &boundaries, insurer)?;
    write(&cli.out, "report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    write(&cli.out, "report.txt", report.to_text())?;
    write(&cli.out, "thresholds.csv", report.threshold_curve.to_csv())?;
    write(&cli.out, "scores.csv", pipeline::scores_csv(&batch))?;
    if let Some(ins) = &report.insurer {
        write(&cli.out, "insurer_thresholds.csv", ins.threshold_curve.to_csv())?;
        match &artifact.insurer {
            Some(s) => {
                write(&cli.out, "insurer_surface.pgm", render::surface_pgm(&s.surface))?;
                write(
                    &cli.out,
                    "insurer_surface.svg",
                    render::surface_svg(&s.surface, "Insurer risk surface", &[]),
                )?;
            }
            None => log::warn!("artifact carries no insurer surface; trained without premiums"),
        }
    }
    print!("{}", report.to_text());
    Ok(())
}

fn table_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("model,space,auc,hyperparameters\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.model, r.space, r.auc, r.hyperparameters));
    }
    out
}

fn compare(cli: &Cli, artifact: &Path, data: &Path, models: Option<&[ModelKind]>) -> Result<()> {
    let artifact = PipelineArtifact::load(artifact)?;
    let records = read_records(data)?;
    let mut grid = match &cli.config {
        Some(_) => run_config(cli)?.grid,
        None => artifact.config.grid.clone(),
    };
    if let Some(s) = cli.seed {
        grid.seed = s;
    }
    let kinds = models.map_or_else(|| artifact.config.models.clone(), <[ModelKind]>::to_vec);
    let tables = pipeline::compare(&artifact, &records, &kinds, &grid)?;
    write(&cli.out, "comparison_2d.csv", table_csv(&tables.embedding_2d))?;
    write(&cli.out, "comparison_14d.csv", table_csv(&tables.features_14d))?;
    write(&cli.out, "comparison.txt", tables.to_text())?;
    print!("{}", tables.to_text());
    Ok(())
}

fn plot(cli: &Cli, artifact: &Path, data: Option<&Path>, mark: &[usize]) -> Result<()> {
    let artifact = PipelineArtifact::load(artifact)?;
    let markers = if mark.is_empty() {
        Vec::new()
    } else {
        let coords = match data {
            Some(p) => {
                let records = read_records(p)?;
                let x = artifact.normalizer.apply(&dataset::encode_features(&records))?;
                artifact.nn_tsne.forward(&x)?
            }
            None => artifact.embedding.clone(),
        };
        let unknown: Vec<String> = mark
            .iter()
            .filter(|&&i| i >= coords.rows())
            .map(ToString::to_string)
            .collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidInput(format!(
                "unknown contract id(s): {} ({} contracts available)",
                unknown.join(", "),
                coords.rows()
            )));
        }
        mark.iter()
            .map(|&i| Marker {
                label: i.to_string(),
                x: coords.get(i, 0),
                y: coords.get(i, 1),
            })
            .collect()
    };
    write(&cli.out, "surface.pgm", render::surface_pgm(&artifact.surface))?;
    write(
        &cli.out,
        "surface.svg",
        render::surface_svg(&artifact.surface, "Risk surface", &markers),
    )?;
    write(
        &cli.out,
        "embedding.svg",
        render::scatter_svg(&artifact.embedding, Some(&artifact.train_claims), "Training embedding", &markers),
    )?;
    if let Some(ins) = &artifact.insurer {
        write(&cli.out, "insurer_surface.pgm", render::surface_pgm(&ins.surface))?;
        write(
            &cli.out,
            "insurer_surface.svg",
            render::surface_svg(&ins.surface, "Insurer risk surface", &markers),
        )?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Synth { n } => synth(cli, *n),
        Command::Train {
            data,
            perplexity,
            perplexity_sweep,
            train_fraction,
        } => train(cli, data, *perplexity, perplexity_sweep.as_deref(), *train_fraction),
        Command::Score { artifact, data } => score(cli, artifact, data),
        Command::Evaluate {
            artifact,
            data,
            insurer,
            groups,
        } => evaluate(cli, artifact, data, *insurer, groups.as_deref()),
        Command::Compare { artifact, data, models } => compare(cli, artifact, data, models.as_deref()),
        Command::Plot { artifact, data, mark } => plot(cli, artifact, data.as_deref(), mark),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
