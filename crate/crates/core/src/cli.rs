//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::autodiff::Tape;
use crate::config::Config;
use crate::encoder::project;
use crate::error::{Error, Result};
use crate::io::checkpoint::{load_checkpoint, save_checkpoint};
use crate::io::manifest::Dataset;
use crate::io::node_table::{format_node_table, read_node_table, write_node_table};
use crate::io::synth::{generate_synthetic, write_synthetic, SynthConfig};
use crate::io::{pairs::parse_pairs, write_file};
use crate::metrics::{evaluate, MetricReport, DEFAULT_THRESHOLD};
use crate::tensor::Tensor;
use crate::training::{
    crossval, featurize_all, fit, predict, represent_proteins, train_node_embeddings, EpochRecord,
    PairSample, TrainedModel,
};

pub const MODEL_FILE: &str = "model.ckpt";
pub const NODE_TABLE_FILE: &str = "node_embeddings.tsv";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const CROSSVAL_FILE: &str = "crossval.tsv";

#[derive(Debug, Parser)]
#[command(
    name = "scmppi",
    version,
    about = "Protein-protein interaction prediction"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Pairs to score instead of the manifest's pair list.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-protein feature statistics.
    Featurize(DataArgs),
    /// Graph embeddings of the manifest's edge list as TSV.
    Node2vec(DataArgs),
    /// Train on the full dataset; writes a model directory.
    Train(DataArgs),
    /// K-fold cross-validation; writes a metric TSV.
    Crossval(DataArgs),
    /// Score pairs with a trained model and report metrics.
    Evaluate(ModelArgs),
    /// Score pairs with a trained model.
    Predict(ModelArgs),
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Per-protein projection vectors as TSV.
    ExportProjections(ModelArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    pub communities: usize,
    #[arg(long, default_value_t = 50)]
    pub proteins_per_community: usize,
    #[arg(long, default_value_t = 400)]
    pub num_pairs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    /// Residue embedding width declared in the manifest.
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::default().filter_or("SCMPPI_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_dataset(args: &DataArgs, config: &mut Config) -> Result<Dataset> {
    let data = Dataset::load(&args.manifest, config)?;
    data.apply_to(config);
    config.validate()?;
    Ok(data)
}

/// Writes to the `--out` file, or to stdout when none was given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Input("this command needs --out <directory>".into()))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Featurize(args) => {
            let data = load_dataset(args, &mut config)?;
            emit(out, &featurize_report(&data, &config)?)
        }
        Command::Node2vec(args) => {
            let data = load_dataset(args, &mut config)?;
            let table = train_node_embeddings(&data.graph, &config, config.seed)?;
            emit(out, &format_node_table(&table))
        }
        Command::Train(args) => {
            let dir = out_dir(&cli)?;
            let data = load_dataset(args, &mut config)?;
            let (outcome, table) = fit(
                &data.pairs,
                &data.sequences,
                &data.graph,
                &data.embeddings,
                &config,
            )?;
            save_checkpoint(&dir.join(MODEL_FILE), &outcome.model)?;
            write_node_table(&dir.join(NODE_TABLE_FILE), &table)?;
            let mut log = format!("{}\n", EpochRecord::HEADER);
            for r in &outcome.log {
                log.push_str(&r.to_tsv());
                log.push('\n');
            }
            write_file(&dir.join(TRAIN_LOG_FILE), log.as_bytes())?;
            info!(
                "best epoch {} with validation MCC {:.4}",
                outcome.model.best_epoch, outcome.model.best_val_mcc
            );
            Ok(())
        }
        Command::Crossval(args) => {
            let data = load_dataset(args, &mut config)?;
            let report = crossval(
                &data.pairs,
                &data.sequences,
                &data.graph,
                &data.embeddings,
                &config,
            )?;
            let tsv = report.to_tsv();
            match out {
                Some(dir) => write_file(&dir.join(CROSSVAL_FILE), tsv.as_bytes()),
                None => emit(None, &tsv),
            }
        }
        Command::Evaluate(args) => {
            let (pairs, scores) = score_pairs(args, &config)?;
            let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
            let report = evaluate(&scores, &labels)?;
            emit(out, &metric_tsv(&report))
        }
        Command::Predict(args) => {
            let (pairs, scores) = score_pairs(args, &config)?;
            let mut text = String::from("id_a\tid_b\tlabel\tscore\tprediction\n");
            for (p, s) in pairs.iter().zip(&scores) {
                writeln!(
                    text,
                    "{}\t{}\t{}\t{s:.6}\t{}",
                    p.id_a,
                    p.id_b,
                    p.label,
                    u8::from(*s >= DEFAULT_THRESHOLD)
                )
                .unwrap();
            }
            emit(out, &text)
        }
        Command::ExportProjections(args) => {
            let (model, table, data) = load_model(args, &config)?;
            let features =
                featurize_all(&data.sequences, &data.embeddings, model.config.encoder.k)?;
            let ids: Vec<&str> = data.sequences.keys().map(String::as_str).collect();
            let reps = represent_proteins(&model.params, &model.config, &ids, &features, &table)?;
            let mut text = String::new();
            for (id, f) in &reps {
                let mut tape = Tape::<f32>::new();
                let x = tape.constant(Tensor::vector(f.clone()));
                let z = project(&mut tape, &model.params, x)?;
                text.push_str(id);
                for v in tape.value(z).data() {
                    write!(text, "\t{v}").unwrap();
                }
                text.push('\n');
            }
            emit(out, &text)
        }
        Command::Synth(args) => {
            let dir = out_dir(&cli)?;
            let cfg = SynthConfig {
                communities: args.communities,
                proteins_per_community: args.proteins_per_community,
                num_pairs: args.num_pairs,
                signal: args.signal,
                d: args.d,
                k: args.k,
                ..SynthConfig::default()
            };
            let data = generate_synthetic(&cfg, config.seed)?;
            let manifest = write_synthetic(dir, &cfg, &data)?;
            info!("wrote {}", manifest.display());
            Ok(())
        }
    }
}

fn load_model(
    args: &ModelArgs,
    config: &Config,
) -> Result<(TrainedModel, crate::skipgram::NodeEmbeddingTable, Dataset)> {
    let model = load_checkpoint(&args.model.join(MODEL_FILE))?;
    let table = read_node_table(
        &args.model.join(NODE_TABLE_FILE),
        model.config.encoder.graph_dim,
    )?;
    let mut data_config = config.clone();
    data_config.sanitize = model.config.sanitize;
    data_config.embedder_seed = model.config.embedder_seed;
    let data = Dataset::load(&args.data.manifest, &data_config)?;
    if data.k != model.config.encoder.k || data.d != model.config.encoder.embed_dim {
        return Err(Error::Data(format!(
            "dataset declares k = {}, d = {} but the model was trained with k = {}, d = {}",
            data.k, data.d, model.config.encoder.k, model.config.encoder.embed_dim
        )));
    }
    Ok((model, table, data))
}

fn score_pairs(args: &ModelArgs, config: &Config) -> Result<(Vec<PairSample>, Vec<f64>)> {
    let (model, table, data) = load_model(args, config)?;
    let pairs = match &args.pairs {
        Some(p) => parse_pairs(p)?,
        None => data.pairs.clone(),
    };
    let features = featurize_all(&data.sequences, &data.embeddings, model.config.encoder.k)?;
    let scores = predict(&model, &pairs, &features, &table)?;
    Ok((pairs, scores))
}

pub fn metric_tsv(report: &MetricReport) -> String {
    let mut text = MetricReport::COLUMNS.join("\t");
    text.push('\n');
    let vals: Vec<String> = report.values().iter().map(|v| format!("{v:.6}")).collect();
    text.push_str(&vals.join("\t"));
    text.push('\n');
    text
}

fn featurize_report(data: &Dataset, config: &Config) -> Result<String> {
    let features = featurize_all(&data.sequences, &data.embeddings, config.encoder.k)?;
    let mut text = String::from("id\tlength\tcksaap_nonzero\tcksaap_l2\tdpc_nonzero");
    for &c in crate::features::ALPHABET {
        write!(text, "\taac_{}", c as char).unwrap();
    }
    text.push('\n');
    for (id, seq) in &data.sequences {
        let b = features.get(id).expect("featurized every sequence");
        let nz = b.cksaap.data().iter().filter(|&&x| x != 0.0).count();
        let l2 = b
            .cksaap
            .data()
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt();
        let dpc_nz = b.dpc.iter().filter(|&&x| x != 0.0).count();
        write!(text, "{id}\t{}\t{nz}\t{l2:.6}\t{dpc_nz}", seq.len()).unwrap();
        for a in &b.aac {
            write!(text, "\t{a:.6}").unwrap();
        }
        text.push('\n');
    }
    Ok(text)
}
