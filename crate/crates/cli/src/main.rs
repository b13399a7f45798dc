//! `facegate` command-line tool.

mod audit;
mod config;
mod data;
mod error;
mod evaluate;
mod extract;
mod kappa;
mod model;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use facegate::audit::render::Table;
use facegate::evaluation::synthetic::generate_synthetic_dataset;
use facegate::features::FeatureMask;
use facegate::providers::{load_face_sidecar, load_manifest, load_manipulation_regions};
use facegate_annotate::{Corpus, ServiceConfig};
use serde::Serialize;

use crate::config::{require, write_stamp, FileConfig, Flags, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Parser, Serialize)]
#[command(name = "facegate", version, about = "Bystander classification and face-privacy auditing")]
struct Cli {
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML file whose values override command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
enum Command {
    /// Write a seeded synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        images: usize,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train a classifier and save it as `model.fgmm`.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every face in a features file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Ground truth; adds `metrics.json`.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Cohen's, Scott's and Fleiss' agreement over an `item,rater,category` CSV.
    Kappa {
        #[arg(long)]
        ratings: PathBuf,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Audit(AuditCommand),
    #[command(subcommand)]
    Annotate(AnnotateCommand),
}

#[derive(Subcommand, Serialize)]
enum FeaturesCommand {
    /// Handcrafted features for every face in the sidecars.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required = true)]
        faces: Vec<PathBuf>,
        /// Also write seeded stub embeddings.
        #[arg(long)]
        stub_embeddings: bool,
        /// Drop detector faces below this confidence.
        #[arg(long)]
        detector_threshold: Option<f64>,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Serialize)]
struct DataArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// FF, FM or FF+FM.
    #[arg(long)]
    mask: Option<FeatureMask>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Subcommand, Serialize)]
enum EvaluateCommand {
    /// Validation and test metrics of one 80-10-10 split.
    Holdout {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-fold and pooled metrics of k-fold cross-validation.
    Kfold {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated metrics grouped by subjects per image.
    Stratify {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
    /// Test metrics for FF, FM and FF+FM on one shared split.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Serialize)]
enum AuditCommand {
    /// Run the privacy audit and write its tables.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required = true)]
        faces: Vec<PathBuf>,
        #[arg(long)]
        regions: Option<PathBuf>,
        /// Raw annotation journal, resolved by majority.
        #[arg(long, conflicts_with = "consensus")]
        journal: Option<PathBuf>,
        /// Consensus export of the annotation service.
        #[arg(long)]
        consensus: Option<PathBuf>,
        #[arg(long)]
        annotators: Option<usize>,
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        labels: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        match_threshold: Option<f64>,
        /// Apply Yates' correction to 2x2 tests.
        #[arg(long)]
        yates: bool,
        #[serde(skip)]
        #[arg(long)]
        out: PathBuf,
    },
    /// Check and re-render a saved `report.json`.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[serde(skip)]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Serialize)]
enum AnnotateCommand {
    /// Serve the annotation API until interrupted.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required = true)]
        faces: Vec<PathBuf>,
        #[arg(long)]
        regions: PathBuf,
        /// Journal directory; defaults to FACEGATE_ANNOT_DATA.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to FACEGATE_ANNOT_PORT.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long)]
        annotators: Option<usize>,
    },
}

fn flags(cli: &Cli) -> Flags {
    let mut f = Flags { seed: cli.seed, jobs: cli.jobs, ..Default::default() };
    let train = match &cli.command {
        Command::Train { train, .. } => Some(train),
        Command::Evaluate(
            EvaluateCommand::Holdout { train, .. }
            | EvaluateCommand::Kfold { train, .. }
            | EvaluateCommand::Stratify { train, .. }
            | EvaluateCommand::Ablate { train, .. },
        ) => Some(train),
        _ => None,
    };
    if let Some(t) = train {
        f.mask = t.mask;
        f.epochs = t.epochs;
        f.learning_rate = t.learning_rate;
        f.batch_size = t.batch_size;
        f.dropout_rate = t.dropout;
    }
    match &cli.command {
        Command::Features(FeaturesCommand::Extract { detector_threshold, .. }) => {
            f.detector_threshold = *detector_threshold;
        }
        Command::Audit(AuditCommand::Run { annotators, match_threshold, .. }) => {
            f.annotators = *annotators;
            f.match_threshold = *match_threshold;
        }
        Command::Annotate(AnnotateCommand::Serve { annotators, .. }) => f.annotators = *annotators,
        _ => {}
    }
    f
}

fn data_inputs(d: &DataArgs) -> Vec<&PathBuf> {
    let mut v = vec![&d.features, &d.labels];
    v.extend(&d.embeddings);
    v
}

/// Every input file named on the command line.
fn inputs(cmd: &Command) -> Vec<&PathBuf> {
    let mut v: Vec<&PathBuf> = Vec::new();
    match cmd {
        Command::Synth { .. } => {}
        Command::Features(FeaturesCommand::Extract { manifest, faces, .. }) => {
            v.push(manifest);
            v.extend(faces);
        }
        Command::Train { data: d, .. } => v.extend(data_inputs(d)),
        Command::Predict { model, features, embeddings, labels, .. } => {
            v.extend([model, features]);
            v.extend(embeddings);
            v.extend(labels);
        }
        Command::Evaluate(e) => match e {
            EvaluateCommand::Holdout { data: d, .. }
            | EvaluateCommand::Kfold { data: d, .. }
            | EvaluateCommand::Stratify { data: d, .. }
            | EvaluateCommand::Ablate { data: d, .. } => v.extend(data_inputs(d)),
        },
        Command::Kappa { ratings, .. } => v.push(ratings),
        Command::Audit(AuditCommand::Run {
            manifest,
            faces,
            regions,
            journal,
            consensus,
            labels,
            predictions,
            embeddings,
            profiles,
            ..
        }) => {
            v.push(manifest);
            v.extend(faces);
            for p in [regions, journal, consensus, labels, predictions, embeddings, profiles] {
                v.extend(p);
            }
        }
        Command::Audit(AuditCommand::Report { report, .. }) => v.push(report),
        Command::Annotate(AnnotateCommand::Serve { manifest, faces, regions, .. }) => {
            v.extend([manifest, regions]);
            v.extend(faces);
        }
    }
    v
}

fn show(out: &Path, tables: &[Table]) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    for t in tables {
        std::fs::write(out.join(format!("{}.csv", t.name)), t.to_csv())?;
        print!("{}", t.to_text());
    }
    Ok(())
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("output serializes"));
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth { .. } => "synth",
        Command::Features(_) => "features extract",
        Command::Train { .. } => "train",
        Command::Predict { .. } => "predict",
        Command::Evaluate(EvaluateCommand::Holdout { .. }) => "evaluate holdout",
        Command::Evaluate(EvaluateCommand::Kfold { .. }) => "evaluate kfold",
        Command::Evaluate(EvaluateCommand::Stratify { .. }) => "evaluate stratify",
        Command::Evaluate(EvaluateCommand::Ablate { .. }) => "evaluate ablate",
        Command::Kappa { .. } => "kappa",
        Command::Audit(AuditCommand::Run { .. }) => "audit run",
        Command::Audit(AuditCommand::Report { .. }) => "audit report",
        Command::Annotate(_) => "annotate serve",
    }
}

fn execute(cli: &Cli, config: &RunConfig) -> CliResult<()> {
    let name = command_name(&cli.command);
    let stamp = |dir: &Path| write_stamp(dir, name, &cli.command, config);
    match &cli.command {
        Command::Synth { images, out } => {
            if *images == 0 {
                return Err(CliError::Config("--images must be at least 1".into()));
            }
            let corpus = generate_synthetic_dataset(config.seed, *images);
            corpus.write(out)?;
            let faces = corpus.faces()?;
            let bystanders = faces.iter().filter(|f| f.label == facegate::classifier::Label::Bystander).count();
            print_json(&serde_json::json!({
                "images": images,
                "faces": faces.len(),
                "bystanders": bystanders,
                "size_margin": corpus.size_margin()?,
            }));
            stamp(out)
        }
        Command::Features(FeaturesCommand::Extract { manifest, faces, stub_embeddings, out, .. }) => {
            let summary = extract::run(manifest, faces, *stub_embeddings, out, config)?;
            print_json(&summary);
            stamp(out)
        }
        Command::Train { data, out, .. } => {
            let summary = model::run_train(&data.features, &data.labels, data.embeddings.as_deref(), out, config)?;
            println!(
                "trained {} on {} faces; final loss {:.6}",
                summary.mask,
                summary.examples,
                summary.loss_history.last().copied().unwrap_or(f64::NAN)
            );
            stamp(out)
        }
        Command::Predict { model, features, embeddings, labels, out } => {
            let summary = model::run_predict(model, features, embeddings.as_deref(), labels.as_deref(), out)?;
            print_json(&summary);
            stamp(out)
        }
        Command::Evaluate(e) => {
            let (data, out) = match e {
                EvaluateCommand::Holdout { data, out, .. }
                | EvaluateCommand::Kfold { data, out, .. }
                | EvaluateCommand::Stratify { data, out, .. }
                | EvaluateCommand::Ablate { data, out, .. } => (data, out),
            };
            let masks: &[FeatureMask] =
                if matches!(e, EvaluateCommand::Ablate { .. }) { &FeatureMask::ALL } else { &[config.mask] };
            let dataset = evaluate::Dataset::load(&data.features, &data.labels, data.embeddings.as_deref(), masks)?;
            std::fs::create_dir_all(out)?;
            match e {
                EvaluateCommand::Stratify { k, .. } => {
                    let report = evaluate::stratify(&dataset, config.mask, *k, config)?;
                    let json = serde_json::to_string_pretty(&report).expect("report serializes");
                    std::fs::write(out.join("stratified.json"), json + "\n")?;
                    show(out, &[evaluate::stratified_table(&report)])?;
                    if !report.excluded.is_empty() {
                        println!("{} images without a subject left out", report.excluded.len());
                    }
                }
                _ => {
                    let rows = match e {
                        EvaluateCommand::Holdout { .. } => evaluate::holdout(&dataset, config.mask, config)?,
                        EvaluateCommand::Kfold { k, .. } => evaluate::kfold(&dataset, config.mask, *k, config)?,
                        _ => evaluate::ablate(&dataset, config)?,
                    };
                    evaluate::write_metrics(out, &rows)?;
                    show(out, &[evaluate::metrics_table(&rows)])?;
                }
            }
            stamp(out)
        }
        Command::Kappa { ratings, out } => {
            let report = kappa::run(ratings)?;
            std::fs::create_dir_all(out)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            std::fs::write(out.join("kappa.json"), json + "\n")?;
            show(out, &[kappa::table(&report)])?;
            stamp(out)
        }
        Command::Audit(AuditCommand::Run {
            manifest,
            faces,
            regions,
            journal,
            consensus,
            labels,
            predictions,
            embeddings,
            profiles,
            yates,
            out,
            ..
        }) => {
            let args = audit::RunArgs {
                manifest,
                faces,
                regions: regions.as_deref(),
                journal: journal.as_deref(),
                consensus: consensus.as_deref(),
                labels: labels.as_deref(),
                predictions: predictions.as_deref(),
                embeddings: embeddings.as_deref(),
                profiles: profiles.as_deref(),
                yates: *yates,
            };
            let report = audit::run(&args, out, config)?;
            print!("{}", facegate::audit::render::summary_text(&report));
            stamp(out)
        }
        Command::Audit(AuditCommand::Report { report, out }) => {
            print!("{}", audit::report(report, out.as_deref())?);
            match out {
                Some(dir) => stamp(dir),
                None => Ok(()),
            }
        }
        Command::Annotate(AnnotateCommand::Serve { manifest, faces, regions, data, port, host, .. }) => {
            let mut service = ServiceConfig::default().with_env().map_err(CliError::Config)?;
            service.bind.set_ip(*host);
            if let Some(p) = port {
                service.bind.set_port(*p);
            }
            if let Some(d) = data {
                service.data_dir = d.clone();
            }
            service.annotators = config.annotators;
            let manifest = load_manifest(manifest)?;
            let mut sidecars = Vec::new();
            for p in faces {
                sidecars.extend(load_face_sidecar(p, &manifest)?);
            }
            let regions = load_manipulation_regions(regions, &manifest)?;
            let corpus = Corpus { manifest, regions, faces: sidecars };
            let started = facegate_annotate::open(&service, corpus)?;
            eprintln!(
                "replayed {} journal entries{}",
                started.replayed,
                if started.truncated_tail { "; dropped a torn final line" } else { "" }
            );
            for s in &started.skipped {
                eprintln!("skipped journal entry: {s}");
            }
            stamp(&service.data_dir)?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(facegate_annotate::serve(&service, started.state))?;
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let file = cli.config.as_deref().map(FileConfig::load).transpose()?;
    let config = RunConfig::resolve(&flags(cli), file)?;
    require(inputs(&cli.command))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    pool.install(|| execute(cli, &config))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", CliError::Config(e.to_string().trim_end().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
