//! Plain-text and CSV formats read and written by the command line.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use prose_forge_core::corpus::{self, Lexicon, ParallelCorpus, SentencePair, Vocabulary};
use prose_forge_core::decode::AttentionRecord;
use prose_forge_core::evaluation::{LengthBinnedReport, LikertRecord, PaintingAverages};
use prose_forge_core::pipeline::ProseResult;
use prose_forge_core::tensor::Tensor;
use prose_forge_core::training::EpochRecord;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Core {
        path: PathBuf,
        source: prose_forge_core::Error,
    },
}

pub type Result<T> = std::result::Result<T, FormatError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn core_err(path: &Path) -> impl FnOnce(prose_forge_core::Error) -> FormatError + '_ {
    move |source| FormatError::Core {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Lines of a UTF-8 file without their terminators.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(io_err(path))
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for line in lines {
        writeln!(w, "{}", line.as_ref()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Aligned source and target files, one sentence per line.
pub fn load_parallel(source: &Path, target: &Path) -> Result<Vec<SentencePair>> {
    let src = read_lines(source)?;
    let tgt = read_lines(target)?;
    corpus::align_lines(&src, &tgt).map_err(core_err(source))
}

const SPLITS: [(&str, &[&str]); 3] = [("train", &["train"]), ("val", &["valid", "dev"]), ("test", &["test"])];

fn split_files(dir: &Path, names: &[&str]) -> Option<(PathBuf, PathBuf)> {
    for name in names {
        for suffix in ["", ".nltktok"] {
            let modern = dir.join(format!("{name}.modern{suffix}"));
            let original = dir.join(format!("{name}.original{suffix}"));
            if modern.is_file() && original.is_file() {
                return Some((modern, original));
            }
        }
    }
    None
}

/// Loads `{train,valid,test}.modern` / `.original` (or `.nltktok` variants)
/// with modern English as the source side. A missing train split is an error;
/// missing validation or test splits are empty.
pub fn load_corpus_dir(dir: &Path) -> Result<ParallelCorpus> {
    let mut splits: [Vec<SentencePair>; 3] = Default::default();
    for (slot, (label, names)) in splits.iter_mut().zip(SPLITS) {
        match split_files(dir, names) {
            Some((modern, original)) => *slot = load_parallel(&modern, &original)?,
            None if label == "train" => {
                return Err(parse_err(dir, 0, "no train.modern/train.original pair found"));
            }
            None => {}
        }
    }
    let [train, val, test] = splits;
    Ok(ParallelCorpus::new(train, val, test))
}

/// `shakespearean TAB modern` per line; blank lines are skipped.
pub fn read_lexicon(path: &Path) -> Result<Lexicon> {
    let mut pairs = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, i + 1, "expected `shakespearean<TAB>modern`"))?;
        pairs.push((a.to_string(), b.to_string()));
    }
    Ok(Lexicon::new(pairs))
}

/// One token per line; the line number is the id.
pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_lines(path, vocab.tokens())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::from_tokens(read_lines(path)?).map_err(core_err(path))
}

/// Word vectors: `token v1 v2 ...` per line. A leading `count dim` header
/// line is skipped. Returns the dimension and the entries in file order.
pub fn read_word_vectors(path: &Path) -> Result<(usize, Vec<(String, Vec<f64>)>)> {
    let mut entries = Vec::new();
    let mut dim = None;
    for (i, line) in read_lines(path)?.iter().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
            continue;
        }
        let vector = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(path, i + 1, format!("bad value for `{token}`: {e}")))?;
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("`{token}` has {} values, expected {d}", vector.len()),
                ))
            }
            _ => {}
        }
        entries.push((token.to_string(), vector));
    }
    Ok((dim.unwrap_or(0), entries))
}

/// Writes one row per vocabulary entry, reserved tokens excluded.
pub fn write_word_vectors(path: &Path, vocab: &Vocabulary, matrix: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for (id, token) in vocab.tokens().iter().enumerate().skip(corpus::RESERVED.len()) {
        write!(w, "{token}").map_err(io_err(path))?;
        for v in matrix.row(id) {
            write!(w, " {v}").map_err(io_err(path))?;
        }
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Poems separated by blank lines, one poem line per text line.
pub fn read_poems(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut poems = Vec::new();
    let mut current = Vec::new();
    for line in read_lines(path)? {
        if line.trim().is_empty() {
            if !current.is_empty() {
                poems.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.trim().to_string());
        }
    }
    if !current.is_empty() {
        poems.push(current);
    }
    Ok(poems)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| FormatError::Csv {
            path: path.to_path_buf(),
            source,
        })
}

fn check_header(path: &Path, reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|source| FormatError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(parse_err(path, 1, format!("expected header `{}`", expected.join(","))));
    }
    Ok(())
}

pub const LIKERT_HEADER: [&str; 5] = ["painting_id", "rater_id", "content", "creativity", "style"];
pub const AVERAGES_HEADER: [&str; 4] = ["painting_id", "content", "creativity", "style"];
pub const BLEU_BY_LENGTH_HEADER: [&str; 4] = ["bin_low", "bin_high", "count", "mean_bleu"];

/// Header line of a CSV file, used to tell raw ratings from averages.
pub fn csv_header(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|source| FormatError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(header.iter().map(str::to_string).collect())
}

/// Raw ratings; any score outside 1..=5 rejects the file.
pub fn read_likert(path: &Path) -> Result<Vec<LikertRecord>> {
    let mut reader = csv_reader(path)?;
    check_header(path, &mut reader, &LIKERT_HEADER)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|source| FormatError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let score = |k: usize| -> Result<u8> {
            row[k]
                .parse::<u8>()
                .map_err(|_| parse_err(path, line, format!("{} `{}` is not an integer score", LIKERT_HEADER[k], &row[k])))
        };
        let record = LikertRecord::new(&row[0], &row[1], score(2)?, score(3)?, score(4)?)
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_averages(path: &Path) -> Result<Vec<PaintingAverages>> {
    let mut reader = csv_reader(path)?;
    check_header(path, &mut reader, &AVERAGES_HEADER)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|source| FormatError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let value = |k: usize| -> Result<f64> {
            row[k]
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("{} `{}` is not a number", AVERAGES_HEADER[k], &row[k])))
        };
        out.push(PaintingAverages {
            painting_id: row[0].to_string(),
            content: value(1)?,
            creativity: value(2)?,
            style: value(3)?,
        });
    }
    Ok(out)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|source| FormatError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let wrap = |source| FormatError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_bleu_by_length(path: &Path, report: &LengthBinnedReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .bins
        .iter()
        .map(|b| vec![b.low.to_string(), b.high.to_string(), b.count.to_string(), b.mean_bleu.to_string()])
        .collect();
    write_csv_rows(path, &BLEU_BY_LENGTH_HEADER, &rows)
}

/// Per-sentence scores: `index,bleu`.
pub fn write_sentence_scores(path: &Path, scores: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| vec![(i + 1).to_string(), s.to_string()])
        .collect();
    write_csv_rows(path, &["sentence", "bleu"], &rows)
}

/// One block per sentence: a `# sentence N rows R cols C` line, then one
/// line of space-separated weights per decoder step, then a blank line.
pub fn write_attention(path: &Path, records: &[AttentionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for (i, record) in records.iter().enumerate() {
        writeln!(w, "# sentence {} rows {} cols {}", i + 1, record.len(), record.source_len()).map_err(io_err(path))?;
        for row in record.rows() {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io_err(path))?;
        }
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_attention(path: &Path) -> Result<Vec<AttentionRecord>> {
    let mut records = Vec::new();
    let mut rows: Option<Vec<Vec<f64>>> = None;
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.starts_with("# sentence") {
            if let Some(r) = rows.take() {
                records.push(AttentionRecord::new(r));
            }
            rows = Some(Vec::new());
        } else if !line.trim().is_empty() {
            let row = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| parse_err(path, i + 1, e.to_string()))?;
            rows.as_mut()
                .ok_or_else(|| parse_err(path, i + 1, "weights before a sentence header"))?
                .push(row);
        }
    }
    records.extend(rows.map(AttentionRecord::new));
    Ok(records)
}

/// Tab-separated per-epoch metrics, flushed after every record.
pub struct MetricsLog {
    path: PathBuf,
    writer: BufWriter<File>,
}

pub const METRICS_HEADER: &str = "epoch\ttrain_loss\tval_loss\twall_seconds";

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = BufWriter::new(File::create(path).map_err(io_err(path))?);
        writeln!(writer, "{METRICS_HEADER}").map_err(io_err(path))?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn record(&mut self, record: &EpochRecord, wall_seconds: f64) -> Result<()> {
        let val = record.val_loss.map_or_else(|| "nan".to_string(), |v| v.to_string());
        writeln!(
            self.writer,
            "{}\t{}\t{}\t{:.3}",
            record.epoch, record.train_loss, val, wall_seconds
        )
        .and_then(|_| self.writer.flush())
        .map_err(io_err(&self.path))
    }
}

/// Structured record of a pipeline run. Field order: `painting_id`,
/// `lines`, then per poem line `poem`, `prose` and `unk` (space-separated
/// `output:source` index pairs), and a closing `end`.
pub fn write_prose_record(path: &Path, result: &ProseResult) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut out = format!("painting_id\t{}\nlines\t{}\n", result.painting_id, result.poem_lines.len());
    for (line, t) in result.poem_lines.iter().zip(&result.translations) {
        let unk: Vec<String> = t.unk_positions_replaced.iter().map(|(o, s)| format!("{o}:{s}")).collect();
        out.push_str(&format!("poem\t{line}\nprose\t{}\nunk\t{}\n", t.text(), unk.join(" ")));
    }
    out.push_str("end\n");
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Sorted regular files in `dir`.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}
