//! Subcommand definitions and their implementations.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crs_core::augment::{run_pipeline, AugmentConfig, FixtureStore, HttpChatProvider, RecordingProvider, RewriteProvider};
use crs_core::corpus::{
    build_test_samples, build_training_samples, generate_synthetic, load_dialogue_file, split_train_test,
    write_dialogue_file, Speaker, SyntheticSpec, Utterance, TEST_FILE, TRAIN_FILE,
};
use crs_core::eval::{dump_embeddings, evaluate, sweep, SweepParam, SweepSetup, DEFAULT_KS};
use crs_core::model::{DialogueEncoder, HashedNgramEncoder, HttpEmbeddingEncoder};
use crs_core::trainer::{load_checkpoint, save_checkpoint, train, Checkpoint, Providers, Stage1Mode};
use crs_core::{EntityId, Kg};
use serde::{Deserialize, Serialize};

use crate::config::load_config;
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "crs", version, about = "Knowledge-graph conversational recommender", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Recall@k of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train and evaluate over a grid of one hyperparameter.
    Sweep(SweepArgs),
    /// Print augmented versions of a dialogue file.
    Augment(AugmentArgs),
    /// Write post-RGCN entity embeddings as CSV.
    DumpEmbeddings(DumpArgs),
    /// Serve recommendations over HTTP.
    Serve(ServeArgs),
    /// Top-k items for one dialogue.
    Recommend(RecommendArgs),
    /// Write a synthetic graph and dialogue corpus.
    GenerateSynthetic(SyntheticArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderKind {
    /// Offline hashed character n-grams.
    Hashed,
    /// HTTP embedding endpoint from CRS_EMBED_* variables.
    Http,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory with train.jsonl and test.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory with entities.tsv and triples.tsv.
    #[arg(long)]
    pub kg: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat TOML with model and training keys.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = EncoderKind::Hashed)]
    pub encoder: EncoderKind,
    /// Recorded stage-1 completions.
    #[arg(long, default_value = "fixtures")]
    pub fixtures: PathBuf,
    /// Per-epoch loss reports as JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    pub k: Vec<usize>,
    /// Metrics CSV; defaults to `<ckpt>.eval.csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// alpha, substitution_rate or augmentation_rate.
    #[arg(long)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    pub k: Vec<usize>,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = EncoderKind::Hashed)]
    pub encoder: EncoderKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage1Flag {
    /// Live chat endpoint, recording completions.
    On,
    Off,
    /// Recorded completions only.
    Fixtures,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Dialogue records, one JSON object per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Stage1Flag::Off)]
    pub stage1: Stage1Flag,
    #[arg(long, default_value = "fixtures")]
    pub fixtures: PathBuf,
    /// Graph used to resolve entity annotations; without it they are dropped.
    #[arg(long)]
    pub kg: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub kg: PathBuf,
    /// Overrides CRS_BIND (default 127.0.0.1:8080).
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub kg: PathBuf,
    /// JSON object with an `utterances` list of {speaker, text}.
    #[arg(long)]
    pub dialogue: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Allow items already mentioned in the dialogue.
    #[arg(long)]
    pub keep_mentioned: bool,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    /// Receives kg/ and data/ subdirectories.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    #[arg(long, default_value_t = 20)]
    pub entities_per_cluster: usize,
    #[arg(long, default_value_t = 4)]
    pub items_per_cluster: usize,
    #[arg(long, default_value_t = 400)]
    pub dialogues: usize,
    #[arg(long, default_value_t = 6)]
    pub utterances: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Augment(a) => run_augment(a),
        Command::DumpEmbeddings(a) => run_dump(a),
        Command::Serve(a) => run_serve(a),
        Command::Recommend(a) => run_recommend(a),
        Command::GenerateSynthetic(a) => run_synthetic(a),
    }
}

fn load_kg(dir: &Path) -> Result<Kg> {
    Kg::load_dir(dir).with_context(|| format!("loading graph from {}", dir.display()))
}

fn load_split(data: &Path, file: &str, kg: &Kg) -> Result<Vec<crs_core::corpus::Dialogue>> {
    let path = data.join(file);
    Ok(load_dialogue_file(&path, kg).with_context(|| format!("loading {}", path.display()))?.dialogues)
}

fn make_encoder(kind: EncoderKind, dim: usize) -> Result<Box<dyn DialogueEncoder>> {
    Ok(match kind {
        EncoderKind::Hashed => Box::new(HashedNgramEncoder::new(dim)?),
        EncoderKind::Http => Box::new(HttpEmbeddingEncoder::from_env(dim)?),
    })
}

/// Rebuilds the encoder a checkpoint was trained with.
fn checkpoint_encoder(cp: &Checkpoint) -> Result<Box<dyn DialogueEncoder>> {
    let kind = if cp.encoder_id.starts_with("hashed-ngram") { EncoderKind::Hashed } else { EncoderKind::Http };
    let encoder = make_encoder(kind, cp.model_config.d_llm)?;
    if encoder.provider_id() != cp.encoder_id {
        log::warn!("checkpoint was trained with {}, using {}", cp.encoder_id, encoder.provider_id());
    }
    Ok(encoder)
}

fn rewrite_provider(mode: Stage1Mode, fixtures: &Path) -> Result<Option<Box<dyn RewriteProvider>>> {
    Ok(match mode {
        Stage1Mode::Off => None,
        Stage1Mode::Fixtures => Some(Box::new(FixtureStore::open(fixtures))),
        Stage1Mode::Live => {
            Some(Box::new(RecordingProvider::new(HttpChatProvider::from_env()?, FixtureStore::open(fixtures))))
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run_train(a: TrainArgs) -> Result<()> {
    let (model_config, config) = load_config(&a.config)?;
    let kg = load_kg(&a.data.kg)?;
    let samples = build_training_samples(&load_split(&a.data.data, TRAIN_FILE, &kg)?);
    let encoder = make_encoder(a.encoder, model_config.d_llm)?;
    let rewrite = rewrite_provider(config.stage1, &a.fixtures)?;
    let providers = Providers { encoder: encoder.as_ref(), rewrite: rewrite.as_deref() };
    log::info!("training on {} samples, {} entities", samples.len(), kg.num_entities());
    let out = train(&samples, &kg, &model_config, &config, providers)?;
    println!("epoch\ttotal\trec_loss\tentity_loss\tstage1_failures");
    for r in &out.history {
        println!("{}\t{:.6}\t{:.6}\t{:.6}\t{}", r.epoch, r.total, r.rec_loss, r.entity_loss, r.stage1_failures);
    }
    save_checkpoint(&out.checkpoint, &a.out)?;
    if let Some(path) = &a.history {
        serde_json::to_writer_pretty(create(path)?, &out.history)?;
    }
    println!("checkpoint {} ({})", a.out.display(), out.checkpoint.digest()?);
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let cp = load_checkpoint(&a.ckpt)?;
    let kg = load_kg(&a.data.kg)?;
    let test = build_test_samples(&load_split(&a.data.data, TEST_FILE, &kg)?, &kg);
    let encoder = checkpoint_encoder(&cp)?;
    let report = evaluate(&cp, &test, &kg, encoder.as_ref(), &a.k)?;
    print!("{}", report.to_table());
    let path = a.report.unwrap_or_else(|| {
        let mut p = a.ckpt.clone().into_os_string();
        p.push(".eval.csv");
        PathBuf::from(p)
    });
    report.write_csv(create(&path)?)?;
    println!("metrics written to {}", path.display());
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let (model_config, config) = load_config(&a.config)?;
    let kg = load_kg(&a.data.kg)?;
    let train_samples = build_training_samples(&load_split(&a.data.data, TRAIN_FILE, &kg)?);
    let test_samples = build_test_samples(&load_split(&a.data.data, TEST_FILE, &kg)?, &kg);
    let encoder = make_encoder(a.encoder, model_config.d_llm)?;
    let setup = SweepSetup {
        kg: &kg,
        model_config,
        base: &config,
        train_samples: &train_samples,
        test_samples: &test_samples,
        providers: Providers { encoder: encoder.as_ref(), rewrite: None },
        ks: &a.k,
        runs_per_point: a.runs,
    };
    let result = sweep(a.param, &a.grid, &setup)?;
    print!("{}", result.to_table());
    result.write_csv(create(&a.out)?)?;
    println!("results written to {}", a.out.display());
    if let Some(p) = result.points.iter().find(|p| p.error.is_some()) {
        bail!("sweep point {} failed: {}", p.value, p.error.as_deref().unwrap_or_default());
    }
    Ok(())
}

#[derive(Serialize)]
struct AugmentRecord<'a> {
    dialogue_id: &'a str,
    stage1: crs_core::augment::Stage1Choice,
    stage2: crs_core::augment::Stage2Choice,
    stage1_failed: bool,
    text: String,
}

fn run_augment(a: AugmentArgs) -> Result<()> {
    use rand::SeedableRng;

    let config = AugmentConfig { rate: a.rate, stage1_enabled: a.stage1 != Stage1Flag::Off, seed: a.seed };
    config.validate()?;
    let kg = match &a.kg {
        Some(dir) => load_kg(dir)?,
        None => Kg::from_parts(Vec::new(), Vec::new(), Vec::new())?,
    };
    let dialogues = load_dialogue_file(&a.input, &kg)?.dialogues;
    let mode = match a.stage1 {
        Stage1Flag::On => Stage1Mode::Live,
        Stage1Flag::Off => Stage1Mode::Off,
        Stage1Flag::Fixtures => Stage1Mode::Fixtures,
    };
    let provider = rewrite_provider(mode, &a.fixtures)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for d in &dialogues {
        let aug = run_pipeline(&d.utterances, &config, provider.as_deref(), &mut rng);
        let record = AugmentRecord {
            dialogue_id: &d.id,
            stage1: aug.stage1_choice,
            stage2: aug.stage2_choice,
            stage1_failed: aug.stage1_failed,
            text: aug.serialize(),
        };
        serde_json::to_writer(&mut out, &record)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn run_dump(a: DumpArgs) -> Result<()> {
    let cp = load_checkpoint(&a.ckpt)?;
    let kg = load_kg(&a.kg)?;
    let n = dump_embeddings(&cp, &kg, &a.out)?;
    println!("{n} embeddings written to {}", a.out.display());
    Ok(())
}

fn idle_timeout() -> Result<Duration> {
    match std::env::var(service::ENV_SESSION_IDLE_SECS) {
        Ok(v) => Ok(Duration::from_secs(
            v.parse().with_context(|| format!("{} = {v:?} is not a whole number", service::ENV_SESSION_IDLE_SECS))?,
        )),
        Err(_) => Ok(service::DEFAULT_IDLE),
    }
}

fn run_serve(a: ServeArgs) -> Result<()> {
    let cp = load_checkpoint(&a.ckpt)?;
    let kg = load_kg(&a.kg)?;
    let model = cp.inference_model(&kg)?;
    let encoder: Arc<dyn DialogueEncoder> = Arc::from(checkpoint_encoder(&cp)?);
    let bind = a.bind.or_else(|| std::env::var(service::ENV_BIND).ok()).unwrap_or_else(|| service::DEFAULT_BIND.into());
    let cors = std::env::var(service::ENV_CORS_ORIGIN).ok();
    let state = Arc::new(AppState::new(model, kg, encoder, cp.digest()?, idle_timeout()?));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(state, &bind, cors.as_deref()))
}

#[derive(Debug, Deserialize)]
struct DialogueInput {
    utterances: Vec<UtteranceInput>,
}

#[derive(Debug, Deserialize)]
struct UtteranceInput {
    speaker: Speaker,
    text: String,
    /// Entity URIs; merged with the linker's matches.
    #[serde(default)]
    entities: Vec<String>,
}

fn run_recommend(a: RecommendArgs) -> Result<()> {
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    let cp = load_checkpoint(&a.ckpt)?;
    let kg = load_kg(&a.kg)?;
    let text = std::fs::read_to_string(&a.dialogue).with_context(|| format!("reading {}", a.dialogue.display()))?;
    let input: DialogueInput =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.dialogue.display()))?;
    let linker = kg.linker();
    let mut utterances = Vec::with_capacity(input.utterances.len());
    let mut mentioned: Vec<EntityId> = Vec::new();
    for (i, u) in input.utterances.into_iter().enumerate() {
        let mut ids: Vec<EntityId> = u.entities.iter().filter_map(|uri| kg.id_of(uri)).collect();
        ids.extend(linker.link_utterance(&u.text, i).into_iter().map(|m| m.entity_id));
        for &e in &ids {
            if !mentioned.contains(&e) {
                mentioned.push(e);
            }
        }
        utterances.push(Utterance { speaker: u.speaker, text: u.text, entities: ids });
    }
    if utterances.is_empty() {
        bail!("{} has no utterances", a.dialogue.display());
    }
    let model = cp.inference_model(&kg)?;
    let encoder = checkpoint_encoder(&cp)?;
    let dialogue = encoder.encode(&crs_core::corpus::serialize_utterances(&utterances))?.to_array::<f64>();
    let exclusions: HashSet<EntityId> = if a.keep_mentioned {
        HashSet::new()
    } else {
        mentioned.iter().copied().filter(|&e| kg.is_item(e)).collect()
    };
    let list = model.recommend(&kg, dialogue.view(), &mentioned, a.k, &exclusions)?;
    let mut out = std::io::stdout().lock();
    for (rank, r) in list.items.iter().enumerate() {
        let name = kg.entity(r.item_id).map(|e| e.name.as_str()).unwrap_or_default();
        writeln!(out, "{}\t{}\t{:.6}", rank + 1, name, r.score)?;
    }
    Ok(())
}

fn run_synthetic(a: SyntheticArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_clusters: a.clusters,
        entities_per_cluster: a.entities_per_cluster,
        items_per_cluster: a.items_per_cluster,
        dialogues: a.dialogues,
        utterances_per_dialogue: a.utterances,
        seed: a.seed,
    };
    let data = generate_synthetic(&spec)?;
    let (kg_dir, data_dir) = (a.out.join("kg"), a.out.join("data"));
    std::fs::create_dir_all(&kg_dir)?;
    std::fs::create_dir_all(&data_dir)?;
    data.kg.write_dir(&kg_dir)?;
    let (train_d, test_d) = split_train_test(&data.dialogues, a.test_fraction, a.seed);
    write_dialogue_file(data_dir.join(TRAIN_FILE), &train_d, &data.kg)?;
    write_dialogue_file(data_dir.join(TEST_FILE), &test_d, &data.kg)?;
    println!(
        "{} entities ({} items), {} triples; {} train and {} test dialogues under {}",
        data.kg.num_entities(),
        data.kg.num_items(),
        data.kg.triples().len(),
        train_d.len(),
        test_d.len(),
        a.out.display()
    );
    Ok(())
}
