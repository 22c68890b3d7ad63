//! Single-file model archives.
//!
//! Layout, all header lines UTF-8 and newline-terminated:
//!
//! ```text
//! prose-forge-checkpoint 1
//! kind <transfer|poem>
//! meta <key> <value>            (any number, value runs to end of line)
//! vocab <n>
//! <n token lines, line index = id>
//! tensor <name> <rows> <cols>   (one per parameter, in payload order)
//! payload
//! <rows*cols little-endian f64 per tensor, concatenated>
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use prose_forge_core::corpus::Vocabulary;
use prose_forge_core::poemgen::{PoemPolicy, PolicyConfig, PolicyParams};
use prose_forge_core::seq2seq::{AttentionVariant, ModelConfig, Params, Seq2SeqModel};
use prose_forge_core::tensor::Tensor;
use prose_forge_core::training::TrainingConfig;

use crate::formats::io_err;

const MAGIC: &str = "prose-forge-checkpoint 1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Format(#[from] crate::formats::FormatError),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind { expected: String, found: String },
    #[error(transparent)]
    Core(#[from] prose_forge_core::Error),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

/// Raw archive contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub vocab: Vec<String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "kind {}", self.kind)?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {v}")?;
        }
        writeln!(w, "vocab {}", self.vocab.len())?;
        for t in &self.vocab {
            writeln!(w, "{t}")?;
        }
        for (name, t) in &self.tensors {
            writeln!(w, "tensor {name} {} {}", t.rows(), t.cols())?;
        }
        writeln!(w, "payload")?;
        for (_, t) in &self.tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |r: &mut R| -> Result<String> {
            line.clear();
            let n = r.read_line(&mut line).map_err(|e| malformed(e.to_string()))?;
            if n == 0 {
                return Err(malformed("unexpected end of header"));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut r)? != MAGIC {
            return Err(malformed("missing prose-forge-checkpoint header"));
        }
        let kind = next_line(&mut r)?
            .strip_prefix("kind ")
            .ok_or_else(|| malformed("missing kind line"))?
            .to_string();
        let mut meta = BTreeMap::new();
        let vocab_len = loop {
            let l = next_line(&mut r)?;
            if let Some(rest) = l.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            } else if let Some(n) = l.strip_prefix("vocab ") {
                break n.parse::<usize>().map_err(|_| malformed("bad vocab count"))?;
            } else {
                return Err(malformed(format!("unexpected header line `{l}`")));
            }
        };
        let vocab = (0..vocab_len).map(|_| next_line(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut shapes = Vec::new();
        loop {
            let l = next_line(&mut r)?;
            if l == "payload" {
                break;
            }
            let fields: Vec<&str> = l.split(' ').collect();
            match fields.as_slice() {
                ["tensor", name, rows, cols] => {
                    let rows = rows.parse::<usize>().map_err(|_| malformed(format!("bad rows for {name}")))?;
                    let cols = cols.parse::<usize>().map_err(|_| malformed(format!("bad cols for {name}")))?;
                    shapes.push((name.to_string(), rows, cols));
                }
                _ => return Err(malformed(format!("unexpected manifest line `{l}`"))),
            }
        }
        let mut tensors = Vec::with_capacity(shapes.len());
        let mut buf = [0u8; 8];
        for (name, rows, cols) in shapes {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)
                    .map_err(|_| malformed(format!("payload truncated in {name}")))?;
                data.push(f64::from_le_bytes(buf));
            }
            let t = Tensor::from_vec(rows, cols, data).ok_or_else(|| malformed("tensor size"))?;
            tensors.push((name, t));
        }
        if r.read(&mut buf).map_err(|e| malformed(e.to_string()))? != 0 {
            return Err(malformed("trailing bytes after payload"));
        }
        Ok(Archive {
            kind,
            meta,
            vocab,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        self.write_to(BufWriter::new(file)).map_err(io_err(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        Self::read_from(BufReader::new(file))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(CheckpointError::Kind {
                expected: kind.into(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| malformed(format!("missing metadata `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| malformed(format!("bad value for metadata `{key}`")))
    }

    fn check_manifest(&self, manifest: &[(&'static str, usize, usize)]) -> Result<Vec<Tensor>> {
        if manifest.len() != self.tensors.len() {
            return Err(malformed(format!(
                "expected {} tensors, found {}",
                manifest.len(),
                self.tensors.len()
            )));
        }
        for ((name, rows, cols), (found, t)) in manifest.iter().zip(&self.tensors) {
            if name != found || t.shape() != (*rows, *cols) {
                return Err(malformed(format!(
                    "expected {name} {rows}x{cols}, found {found} {}x{}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        Ok(self.tensors.iter().map(|(_, t)| t.clone()).collect())
    }
}

/// A style-transfer model with its vocabulary.
#[derive(Clone, Debug)]
pub struct TransferCheckpoint {
    pub model: Seq2SeqModel,
    pub vocab: Vocabulary,
    /// `train.*` metadata entries, kept for reference.
    pub training: BTreeMap<String, String>,
}

fn training_meta(config: &TrainingConfig) -> BTreeMap<String, String> {
    [
        ("learning_rate", config.learning_rate.to_string()),
        ("epochs", config.epochs.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("seed", config.seed.to_string()),
        ("max_sentence_length", config.max_sentence_length.to_string()),
        ("clip_norm", config.clip_norm.to_string()),
        ("adam_beta1", config.adam.beta1.to_string()),
        ("adam_beta2", config.adam.beta2.to_string()),
        ("adam_epsilon", config.adam.epsilon.to_string()),
        ("selection", config.selection.as_str().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("train.{k}"), v))
    .collect()
}

pub fn transfer_archive(model: &Seq2SeqModel, vocab: &Vocabulary, training: Option<&TrainingConfig>) -> Archive {
    let c = model.config();
    let mut meta = training.map(training_meta).unwrap_or_default();
    meta.insert("attention".into(), c.attention.as_str().into());
    meta.insert("hidden_size".into(), c.hidden_size.to_string());
    meta.insert("embedding_dim".into(), c.embedding_dim.to_string());
    meta.insert("vocab_size".into(), c.vocab_size.to_string());
    meta.insert("vocab_hash".into(), format!("{:016x}", vocab.fingerprint()));
    meta.insert("pointer".into(), c.pointer.to_string());
    meta.insert("seed".into(), c.seed.to_string());
    Archive {
        kind: "transfer".into(),
        meta,
        vocab: vocab.tokens().to_vec(),
        tensors: model
            .params()
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect(),
    }
}

pub fn save_transfer(path: &Path, model: &Seq2SeqModel, vocab: &Vocabulary, training: Option<&TrainingConfig>) -> Result<()> {
    transfer_archive(model, vocab, training).save(path)
}

pub fn transfer_from_archive(archive: &Archive) -> Result<TransferCheckpoint> {
    archive.expect_kind("transfer")?;
    let vocab = Vocabulary::from_tokens(archive.vocab.clone())?;
    if format!("{:016x}", vocab.fingerprint()) != archive.get("vocab_hash")? {
        return Err(malformed("vocabulary does not match its recorded hash"));
    }
    let config = ModelConfig {
        vocab_size: archive.parse("vocab_size")?,
        embedding_dim: archive.parse("embedding_dim")?,
        hidden_size: archive.parse("hidden_size")?,
        attention: AttentionVariant::parse(archive.get("attention")?)?,
        pointer: archive.parse("pointer")?,
        seed: archive.parse("seed")?,
    };
    if config.vocab_size != vocab.len() {
        return Err(malformed("vocab_size disagrees with the vocabulary section"));
    }
    let tensors = archive.check_manifest(&config.manifest())?;
    let model = Seq2SeqModel::from_params(config.clone(), Params::from_tensors(&config, tensors)?)?;
    let training = archive
        .meta
        .iter()
        .filter(|(k, _)| k.starts_with("train."))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(TransferCheckpoint { model, vocab, training })
}

pub fn load_transfer(path: &Path) -> Result<TransferCheckpoint> {
    transfer_from_archive(&Archive::load(path)?)
}

/// A poem policy with its vocabulary and toy extractor settings.
#[derive(Clone, Debug)]
pub struct PoemCheckpoint {
    pub policy: PoemPolicy,
    pub vocab: Vocabulary,
    /// Dimension of each toy extractor.
    pub role_dim: usize,
    pub extractor_seed: u64,
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn poem_archive(checkpoint: &PoemCheckpoint) -> Archive {
    let c = checkpoint.policy.config();
    let meta: BTreeMap<String, String> = [
        ("vocab_size", c.vocab_size.to_string()),
        ("vocab_hash", format!("{:016x}", checkpoint.vocab.fingerprint())),
        ("feature_dim", c.feature_dim.to_string()),
        ("clue_dim", c.clue_dim.to_string()),
        ("embedding_dim", c.embedding_dim.to_string()),
        ("hidden_size", c.hidden_size.to_string()),
        ("max_len", c.max_len.to_string()),
        ("eos", c.eos.map_or_else(|| "none".into(), |e| e.to_string())),
        ("banned", join_ids(&c.banned)),
        ("init_bound", c.init_bound.to_string()),
        ("seed", c.seed.to_string()),
        ("role_dim", checkpoint.role_dim.to_string()),
        ("extractor_seed", checkpoint.extractor_seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let names = c.manifest();
    Archive {
        kind: "poem".into(),
        meta,
        vocab: checkpoint.vocab.tokens().to_vec(),
        tensors: names
            .iter()
            .zip(checkpoint.policy.params().tensors())
            .map(|((n, _, _), t)| (n.to_string(), t.clone()))
            .collect(),
    }
}

pub fn save_poem(path: &Path, checkpoint: &PoemCheckpoint) -> Result<()> {
    poem_archive(checkpoint).save(path)
}

pub fn poem_from_archive(archive: &Archive) -> Result<PoemCheckpoint> {
    archive.expect_kind("poem")?;
    let vocab = Vocabulary::from_tokens(archive.vocab.clone())?;
    if format!("{:016x}", vocab.fingerprint()) != archive.get("vocab_hash")? {
        return Err(malformed("vocabulary does not match its recorded hash"));
    }
    let banned = archive.get("banned")?;
    let banned = if banned.is_empty() {
        Vec::new()
    } else {
        banned
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| malformed("bad banned list")))
            .collect::<Result<_>>()?
    };
    let eos = match archive.get("eos")? {
        "none" => None,
        s => Some(s.parse().map_err(|_| malformed("bad eos"))?),
    };
    let config = PolicyConfig {
        vocab_size: archive.parse("vocab_size")?,
        feature_dim: archive.parse("feature_dim")?,
        clue_dim: archive.parse("clue_dim")?,
        embedding_dim: archive.parse("embedding_dim")?,
        hidden_size: archive.parse("hidden_size")?,
        max_len: archive.parse("max_len")?,
        eos,
        banned,
        init_bound: archive.parse("init_bound")?,
        seed: archive.parse("seed")?,
    };
    if config.vocab_size != vocab.len() {
        return Err(malformed("vocab_size disagrees with the vocabulary section"));
    }
    let tensors = archive.check_manifest(&config.manifest())?;
    let params = PolicyParams::from_tensors(&config, tensors)?;
    Ok(PoemCheckpoint {
        policy: PoemPolicy::from_params(config, params)?,
        vocab,
        role_dim: archive.parse("role_dim")?,
        extractor_seed: archive.parse("extractor_seed")?,
    })
}

pub fn load_poem(path: &Path) -> Result<PoemCheckpoint> {
    poem_from_archive(&Archive::load(path)?)
}
