//! `prose-forge` subcommands. Every subcommand reads an optional `--config`
//! file of `key = value` lines; flags override file values.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use prose_forge_core::corpus::{self, Vocabulary};
use prose_forge_core::decode::{self, AttentionRecord};
use prose_forge_core::embeddings::{self, EmbeddingMatrix, LexiconGraph};
use prose_forge_core::evaluation::{self, LikertSummary};
use prose_forge_core::pipeline::{self, PoemModel, Translator};
use prose_forge_core::poemgen::{self, Baseline, DiscriminatorConfig, ExtractorSet, PoemExample, PoemPolicy, PoemTrainingConfig, PolicyConfig};
use prose_forge_core::seq2seq::{AttentionVariant, Seq2SeqModel};
use prose_forge_core::training::{self, EpochRecord, Selection, TrainObserver, TrainingConfig, TrainingData};

use crate::checkpoint::{self, PoemCheckpoint};
use crate::config::Settings;
use crate::formats::{self, MetricsLog};

/// Environment variable naming the default checkpoint directory.
pub const CACHE_ENV: &str = "PROSE_FORGE_CACHE";
const DEFAULT_CACHE_DIR: &str = "prose-forge-cache";

#[derive(Parser, Debug)]
#[command(name = "prose-forge", version, about = "Paintings to poems to Shakespearean prose", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a modern-to-Shakespearean translator on a corpus directory.
    TrainTransfer(Flags),
    /// Train the poem generator on a blank-line separated poem file.
    TrainPoem(Flags),
    /// Retrofit word vectors to a Shakespearean/modern lexicon.
    Retrofit(Flags),
    /// Translate a file of sentences, one per line.
    Translate(Flags),
    /// Generate a poem for an image.
    Poem(Flags),
    /// Generate a poem for an image and translate it line by line.
    Prose(Flags),
    /// Score hypotheses against references with sentence-averaged BLEU.
    Evaluate(Flags),
    /// Bin sentence BLEU by source length.
    BleuByLength(Flags),
    /// Summarize Likert ratings or per-painting averages.
    Likert(Flags),
}

#[derive(Args, Debug, Clone, Default)]
struct Flags {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Style-transfer checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Poem generator checkpoint.
    #[arg(long = "poem-model")]
    poem_model: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["global", "bahdanau"])]
    attention: Option<String>,
    /// Use the pointer (copy) decoder.
    #[arg(long)]
    pointer: bool,
    #[arg(long = "bin-width")]
    bin_width: Option<usize>,
    #[arg(long = "max-len")]
    max_len: Option<usize>,
    /// Reference translations, one per line.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Lexicon of `shakespearean<TAB>modern` pairs.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

impl Flags {
    fn settings(&self) -> anyhow::Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let paths = [
            ("input", &self.input),
            ("output", &self.output),
            ("model", &self.model),
            ("poem_model", &self.poem_model),
            ("reference", &self.reference),
            ("lexicon", &self.lexicon),
        ];
        for (key, value) in paths {
            if let Some(p) = value {
                s.set(key, p.to_string_lossy());
            }
        }
        if let Some(v) = self.seed {
            s.set("seed", v.to_string());
        }
        if let Some(v) = &self.attention {
            s.set("attention", v.as_str());
        }
        if self.pointer {
            s.set("pointer", "true");
        }
        if let Some(v) = self.bin_width {
            s.set("bin_width", v.to_string());
        }
        if let Some(v) = self.max_len {
            s.set("max_len", v.to_string());
        }
        for (k, v) in s.iter() {
            info!("setting {k} = {v}");
        }
        Ok(s)
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 1 on failure, 2 on a usage error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::TrainTransfer(f) => train_transfer(&f.settings()?),
        Command::TrainPoem(f) => train_poem(&f.settings()?),
        Command::Retrofit(f) => retrofit(&f.settings()?),
        Command::Translate(f) => translate(&f.settings()?),
        Command::Poem(f) => poem(&f.settings()?),
        Command::Prose(f) => prose(&f.settings()?),
        Command::Evaluate(f) => evaluate(&f.settings()?),
        Command::BleuByLength(f) => bleu_by_length(&f.settings()?),
        Command::Likert(f) => likert(&f.settings()?),
    }
}

/// `$PROSE_FORGE_CACHE`, else `./prose-forge-cache`.
pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV).map_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR), PathBuf::from)
}

fn model_path(s: &Settings, key: &str, file: &str) -> PathBuf {
    s.path(key).unwrap_or_else(|| cache_dir().join(file))
}

fn required(s: &Settings, key: &str) -> anyhow::Result<PathBuf> {
    s.path(key).ok_or_else(|| anyhow!("missing --{} (or `{key}` in the config file)", key.replace('_', "-")))
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn training_config(s: &Settings) -> anyhow::Result<TrainingConfig> {
    let pointer = s.get_or("pointer", false)?;
    let base = if pointer {
        TrainingConfig::pointer_default()
    } else {
        TrainingConfig::default()
    };
    let attention = match s.raw("attention") {
        Some(a) => AttentionVariant::parse(a)?,
        None => base.attention,
    };
    let selection = match s.raw("selection") {
        Some(v) => Selection::parse(v)?,
        None => base.selection,
    };
    let config = TrainingConfig {
        learning_rate: s.get_or("learning_rate", base.learning_rate)?,
        epochs: s.get_or("epochs", base.epochs)?,
        batch_size: s.get_or("batch_size", base.batch_size)?,
        hidden_size: s.get_or("hidden_size", base.hidden_size)?,
        embedding_dim: s.get_or("embedding_dim", base.embedding_dim)?,
        adam: training::AdamConfig {
            beta1: s.get_or("adam_beta1", base.adam.beta1)?,
            beta2: s.get_or("adam_beta2", base.adam.beta2)?,
            epsilon: s.get_or("adam_epsilon", base.adam.epsilon)?,
        },
        seed: s.get_or("seed", base.seed)?,
        max_sentence_length: s.get_or("max_sentence_length", base.max_sentence_length)?,
        clip_norm: s.get_or("clip_norm", base.clip_norm)?,
        attention,
        pointer,
        selection,
        max_decode_len: s.get_or("max_len", base.max_decode_len)?,
    };
    config.validate()?;
    Ok(config)
}

struct Progress {
    log: MetricsLog,
    start: Instant,
    error: Option<formats::FormatError>,
}

impl TrainObserver for Progress {
    fn epoch_finished(&mut self, r: &EpochRecord) {
        let elapsed = self.start.elapsed().as_secs_f64();
        info!(
            "epoch {} train_loss {:.4} val_loss {} val_bleu {} clipped {} ({elapsed:.1}s)",
            r.epoch,
            r.train_loss,
            r.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            r.val_bleu.map_or("-".into(), |v| format!("{v:.2}")),
            r.clipped_steps
        );
        if self.error.is_none() {
            self.error = self.log.record(r, elapsed).err();
        }
    }

    fn gradient_clipped(&mut self, epoch: usize, norm: f64) {
        log::debug!("epoch {epoch}: gradient norm {norm:.3} clipped");
    }
}

fn initial_embeddings(s: &Settings, vocab: &Vocabulary, config: &TrainingConfig) -> anyhow::Result<EmbeddingMatrix> {
    let emb = match s.path("vectors") {
        Some(path) => {
            let (_, entries) = formats::read_word_vectors(&path)?;
            EmbeddingMatrix::from_pretrained(vocab, config.embedding_dim, entries, config.seed)
                .with_context(|| format!("loading {}", path.display()))?
        }
        None => EmbeddingMatrix::random(vocab, config.embedding_dim, config.seed),
    };
    let Some(lexicon_path) = s.path("lexicon") else {
        return Ok(emb);
    };
    let lexicon = formats::read_lexicon(&lexicon_path)?;
    let alpha = s.get_or("retrofit_alpha", embeddings::DEFAULT_ALPHA)?;
    let beta = s.get_or("retrofit_beta", embeddings::DEFAULT_BETA)?;
    let iters = s.get_or("retrofit_iterations", embeddings::DEFAULT_ITERS)?;
    info!("retrofitting embeddings to {} lexicon pairs", lexicon.len());
    Ok(embeddings::retrofit(&emb, vocab, &lexicon, alpha, beta, iters)?)
}

fn train_transfer(s: &Settings) -> anyhow::Result<()> {
    let dir = required(s, "input")?;
    let config = training_config(s)?;
    info!("training config {config:?}");
    let corpus = formats::load_corpus_dir(&dir)?;
    let (train, val, test) = corpus.sizes();
    info!("corpus {}: {train} train, {val} validation, {test} test pairs", dir.display());
    let vocab = Vocabulary::build(
        &corpus.train,
        s.get_or("min_count", corpus::DEFAULT_MIN_COUNT)?,
        s.get_or("max_vocab", corpus::DEFAULT_MAX_SIZE)?,
    )?;
    info!("vocabulary of {} tokens", vocab.len());
    let emb = initial_embeddings(s, &vocab, &config)?;
    let model = Seq2SeqModel::new(config.model_config(vocab.len()), &emb)?;
    let data = TrainingData::from_corpus(&corpus, &vocab, config.max_sentence_length);
    if data.dropped > 0 {
        warn!("dropped {} training pairs longer than {} tokens", data.dropped, config.max_sentence_length);
    }
    let output = model_path(s, "output", "transfer.ckpt");
    ensure_parent(&output)?;
    let metrics = s.path("metrics").unwrap_or_else(|| with_suffix(&output, ".metrics.tsv"));
    let mut progress = Progress {
        log: MetricsLog::create(&metrics)?,
        start: Instant::now(),
        error: None,
    };
    let outcome = training::train(model, &data, &corpus, &vocab, &config, &mut progress)?;
    if let Some(e) = progress.error {
        return Err(e.into());
    }
    checkpoint::save_transfer(&output, &outcome.best, &vocab, Some(&config))?;
    info!("saved epoch {} model to {}", outcome.best_epoch, output.display());
    Ok(())
}

fn baseline(s: &Settings) -> anyhow::Result<Baseline> {
    Ok(match s.raw("baseline").unwrap_or("batch_mean") {
        "batch_mean" => Baseline::BatchMean,
        "leave_one_out" => Baseline::LeaveOneOut,
        other => match other.strip_prefix("fixed:") {
            Some(v) => Baseline::Fixed(v.parse().map_err(|_| anyhow!("bad baseline `{other}`"))?),
            None => bail!("unknown baseline `{other}` (batch_mean, leave_one_out or fixed:<value>)"),
        },
    })
}

fn train_poem(s: &Settings) -> anyhow::Result<()> {
    let input = required(s, "input")?;
    let poems = formats::read_poems(&input)?;
    if poems.is_empty() {
        bail!("{} holds no poems", input.display());
    }
    let vocab = poemgen::poem_vocabulary(&poems, s.get_or("min_count", 1)?, s.get_or("max_vocab", 5000)?)?;
    let role_dim = s.get_or("role_dim", 8)?;
    let extractor_seed = s.get_or("extractor_seed", 0)?;
    let extractors = ExtractorSet::toy(role_dim, extractor_seed);
    let defaults = PolicyConfig::new(vocab.len(), 3 * role_dim);
    let policy_config = PolicyConfig {
        clue_dim: s.get_or("clue_dim", defaults.clue_dim)?,
        embedding_dim: s.get_or("embedding_dim", defaults.embedding_dim)?,
        hidden_size: s.get_or("hidden_size", defaults.hidden_size)?,
        max_len: s.get_or("max_len", 40)?,
        seed: s.get_or("seed", defaults.seed)?,
        ..defaults
    };
    let train_defaults = PoemTrainingConfig::default();
    let train_config = PoemTrainingConfig {
        mle_epochs: s.get_or("mle_epochs", train_defaults.mle_epochs)?,
        adversarial_rounds: s.get_or("adversarial_rounds", train_defaults.adversarial_rounds)?,
        samples_per_painting: s.get_or("samples_per_painting", train_defaults.samples_per_painting)?,
        learning_rate: s.get_or("learning_rate", train_defaults.learning_rate)?,
        lambda: s.get_or("lambda", train_defaults.lambda)?,
        baseline: baseline(s)?,
        discriminator: DiscriminatorConfig {
            epochs: s.get_or("discriminator_epochs", train_defaults.discriminator.epochs)?,
            learning_rate: s.get_or("discriminator_learning_rate", train_defaults.discriminator.learning_rate)?,
        },
        seed: s.get_or("seed", train_defaults.seed)?,
    };
    info!("policy config {policy_config:?}");
    info!("poem training config {train_config:?}");
    let mut policy = PoemPolicy::new(policy_config)?;
    let images: Option<Vec<PathBuf>> = s.path("images").map(|d| formats::list_files(&d)).transpose()?;
    if let Some(images) = &images {
        if images.len() != poems.len() {
            bail!("{} images for {} poems", images.len(), poems.len());
        }
    }
    let mut examples = Vec::with_capacity(poems.len());
    for (i, lines) in poems.iter().enumerate() {
        let bytes = match &images {
            Some(images) => formats::read_bytes(&images[i])?,
            None => lines.join("\n").into_bytes(),
        };
        examples.push(PoemExample {
            features: poemgen::extract_features(&bytes, &extractors, &policy)?,
            poem: poemgen::encode_poem(lines, &vocab),
        });
    }
    let report = poemgen::train_poem_policy(&mut policy, &examples, &train_config)?;
    if let Some(ll) = report.mle_log_likelihood.last() {
        info!("gold poem log-likelihood after warm-up {ll:.4}");
    }
    for r in &report.rounds {
        info!(
            "round {} reward {:.4} relevance {:.4} poeticness {:.4}",
            r.round, r.mean_reward, r.mean_relevance, r.mean_poeticness
        );
    }
    let output = model_path(s, "output", "poem.ckpt");
    ensure_parent(&output)?;
    checkpoint::save_poem(
        &output,
        &PoemCheckpoint {
            policy,
            vocab,
            role_dim,
            extractor_seed,
        },
    )?;
    info!("saved poem model to {}", output.display());
    Ok(())
}

fn retrofit(s: &Settings) -> anyhow::Result<()> {
    let input = required(s, "input")?;
    let lexicon_path = required(s, "lexicon")?;
    let output = required(s, "output")?;
    let alpha = s.get_or("alpha", embeddings::DEFAULT_ALPHA)?;
    let beta = s.get_or("beta", embeddings::DEFAULT_BETA)?;
    let iters = s.get_or("iterations", embeddings::DEFAULT_ITERS)?;
    info!("retrofit alpha {alpha} beta {beta} iterations {iters}");
    let (dim, entries) = formats::read_word_vectors(&input)?;
    let mut vocab = Vocabulary::reserved_only();
    for (token, _) in &entries {
        vocab.push(token);
    }
    let emb = EmbeddingMatrix::from_pretrained(&vocab, dim, entries, s.get_or("seed", 0)?)?;
    let lexicon = formats::read_lexicon(&lexicon_path)?;
    let graph = LexiconGraph::new(&vocab, &lexicon);
    let before = embeddings::retrofit_objective(emb.matrix(), emb.matrix(), &graph, alpha, beta);
    let fitted = embeddings::retrofit(&emb, &vocab, &lexicon, alpha, beta, iters)?;
    let after = embeddings::retrofit_objective(emb.matrix(), fitted.matrix(), &graph, alpha, beta);
    info!("objective {before:.6} -> {after:.6} over {} lexicon edges", graph.edges().count());
    formats::write_word_vectors(&output, &vocab, fitted.matrix())?;
    Ok(())
}

fn translate_lines(model: &Seq2SeqModel, vocab: &Vocabulary, lines: &[String], max_len: usize) -> anyhow::Result<(Vec<String>, Vec<AttentionRecord>)> {
    let mut out = Vec::with_capacity(lines.len());
    let mut attention = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let tokens = corpus::tokenize(line);
        if tokens.is_empty() {
            out.push(String::new());
            attention.push(AttentionRecord::default());
            continue;
        }
        let t = decode::translate_tokens(model, vocab, &tokens, max_len).with_context(|| format!("line {}", i + 1))?;
        out.push(t.text());
        attention.push(t.attention);
    }
    Ok((out, attention))
}

fn translate(s: &Settings) -> anyhow::Result<()> {
    let input = required(s, "input")?;
    let output = required(s, "output")?;
    let max_len = s.get_or("max_len", decode::DEFAULT_MAX_LEN)?;
    let ckpt = checkpoint::load_transfer(&model_path(s, "model", "transfer.ckpt"))?;
    let lines = formats::read_lines(&input)?;
    let (out, attention) = translate_lines(&ckpt.model, &ckpt.vocab, &lines, max_len)?;
    formats::write_lines(&output, &out)?;
    if let Some(sidecar) = s.path("attention_output") {
        formats::write_attention(&sidecar, &attention)?;
    }
    info!("translated {} lines into {}", out.len(), output.display());
    Ok(())
}

fn load_poem_model(s: &Settings) -> anyhow::Result<(PoemCheckpoint, ExtractorSet)> {
    let ckpt = checkpoint::load_poem(&model_path(s, "poem_model", "poem.ckpt"))?;
    let extractors = ExtractorSet::toy(ckpt.role_dim, ckpt.extractor_seed);
    Ok((ckpt, extractors))
}

fn emit(s: &Settings, text: &str) -> anyhow::Result<()> {
    match s.path("output") {
        Some(path) => {
            std::fs::write(&path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
        }
        None => writeln!(std::io::stdout(), "{text}")?,
    }
    Ok(())
}

fn poem(s: &Settings) -> anyhow::Result<()> {
    let image = formats::read_bytes(&required(s, "input")?)?;
    let seed = s.get_or("seed", 0)?;
    let (ckpt, extractors) = load_poem_model(s)?;
    let source = PoemModel {
        extractors: &extractors,
        policy: &ckpt.policy,
        vocab: &ckpt.vocab,
    };
    let lines = pipeline::PoemSource::compose(&source, &image, seed)?;
    emit(s, &lines.join("\n"))
}

fn prose(s: &Settings) -> anyhow::Result<()> {
    let input = required(s, "input")?;
    let image = formats::read_bytes(&input)?;
    let seed = s.get_or("seed", 0)?;
    let max_len = s.get_or("max_len", decode::DEFAULT_MAX_LEN)?;
    let (poem_ckpt, extractors) = load_poem_model(s)?;
    let transfer = checkpoint::load_transfer(&model_path(s, "model", "transfer.ckpt"))?;
    let source = PoemModel {
        extractors: &extractors,
        policy: &poem_ckpt.policy,
        vocab: &poem_ckpt.vocab,
    };
    let translator = Translator {
        model: &transfer.model,
        vocab: &transfer.vocab,
        max_len,
    };
    let painting_id = input.file_stem().map_or_else(|| "painting".into(), |n| n.to_string_lossy().into_owned());
    let result = pipeline::paint_to_prose(&painting_id, &image, &source, &translator, seed).map_err(|e| {
        anyhow!(
            "{e} (poem lines so far: {}, translated: {})",
            e.poem_lines.len(),
            e.translations.len()
        )
    })?;
    let record = s
        .path("record")
        .or_else(|| s.path("output").map(|p| with_suffix(&p, ".record")));
    if let Some(record) = record {
        formats::write_prose_record(&record, &result)?;
    }
    emit(s, &result.prose)
}

fn token_lines(path: &Path) -> anyhow::Result<Vec<Vec<String>>> {
    Ok(formats::read_lines(path)?.iter().map(|l| corpus::tokenize(l)).collect())
}

/// Hypotheses from `--input`, translated first when `--model` is given.
fn hypotheses(s: &Settings) -> anyhow::Result<(Vec<Vec<String>>, Vec<Vec<String>>)> {
    let input = required(s, "input")?;
    let sources = token_lines(&input)?;
    let hyps = match s.path("model") {
        Some(model) => {
            let ckpt = checkpoint::load_transfer(&model)?;
            let lines = formats::read_lines(&input)?;
            let max_len = s.get_or("max_len", decode::DEFAULT_MAX_LEN)?;
            let (out, _) = translate_lines(&ckpt.model, &ckpt.vocab, &lines, max_len)?;
            out.iter().map(|l| corpus::tokenize(l)).collect()
        }
        None => sources.clone(),
    };
    Ok((sources, hyps))
}

fn scored_pairs(s: &Settings) -> anyhow::Result<(Vec<Vec<String>>, Vec<(Vec<String>, Vec<String>)>)> {
    let (sources, hyps) = hypotheses(s)?;
    let refs = token_lines(&required(s, "reference")?)?;
    if refs.len() != hyps.len() {
        bail!("{} hypotheses for {} references", hyps.len(), refs.len());
    }
    Ok((sources, hyps.into_iter().zip(refs).collect()))
}

fn evaluate(s: &Settings) -> anyhow::Result<()> {
    let (_, pairs) = scored_pairs(s)?;
    let report = evaluation::corpus_report(&pairs)?;
    println!("sentences {}", pairs.len());
    println!("average_target_bleu {:.2}", report.average_target_bleu);
    println!("corpus_bleu {:.2}", report.corpus_bleu);
    if let Some(path) = s.path("output") {
        formats::write_sentence_scores(&path, &report.sentence_scores)?;
    }
    Ok(())
}

fn bleu_by_length(s: &Settings) -> anyhow::Result<()> {
    if s.raw("model").is_none() {
        warn!("no --model given; scoring --input lines directly as hypotheses");
    }
    let (sources, pairs) = scored_pairs(s)?;
    let report = evaluation::corpus_report(&pairs)?;
    let results: Vec<(usize, f64)> = sources.iter().map(Vec::len).zip(report.sentence_scores.iter().copied()).collect();
    let binned = evaluation::bleu_by_length(&results, s.get_or("bin_width", evaluation::DEFAULT_BIN_WIDTH)?)?;
    for b in &binned.bins {
        println!("{}-{}\t{}\t{:.2}", b.low, b.high, b.count, b.mean_bleu);
    }
    let mids: Vec<f64> = binned.bins.iter().map(|b| b.midpoint()).collect();
    let means: Vec<f64> = binned.bins.iter().map(|b| b.mean_bleu).collect();
    match evaluation::spearman(&mids, &means) {
        Some(rho) => println!("spearman {rho:.4}"),
        None => println!("spearman undefined"),
    }
    if let Some(path) = s.path("output") {
        formats::write_bleu_by_length(&path, &binned)?;
    }
    Ok(())
}

fn likert(s: &Settings) -> anyhow::Result<()> {
    let input = required(s, "input")?;
    let header = formats::csv_header(&input)?;
    let summary: LikertSummary = if header == formats::AVERAGES_HEADER {
        evaluation::summarize_averages(&formats::read_averages(&input)?)?
    } else {
        evaluation::likert_summary(&formats::read_likert(&input)?)?
    };
    let (c, cr, st) = summary.rounded();
    println!("records {}", summary.count);
    println!("content {c:.1}\ncreativity {cr:.1}\nstyle {st:.1}");
    if let Some(path) = s.path("output") {
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["dimension", "mean", "reported"])?;
        for (name, full, shown) in [
            ("content", summary.content, c),
            ("creativity", summary.creativity, cr),
            ("style", summary.style, st),
        ] {
            w.write_record([name.to_string(), full.to_string(), format!("{shown:.1}")])?;
        }
        w.flush()?;
    }
    Ok(())
}
