use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;

use huffmax::bench::{run_decode_bench, run_scaling_bench, BenchConfig};
use huffmax::corpus::{load_counts, merge_and_normalize};
use huffmax::decoder::beam_decode_batch;
use huffmax::hsoftmax::{load_model, save_model, FloatWidth, TrainConfig};
use huffmax::huffman::{assign_codes, deserialize_tree, expected_code_length, serialize_tree};
use huffmax::{HSoftmaxModel, HuffmanTree};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "huffmax", version, about = "Huffman-coded hierarchical softmax tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a Huffman tree from a token<TAB>count[<TAB>language] file.
    BuildTree {
        #[arg(long)]
        freq: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the code of every token in a tree file.
    Codes {
        #[arg(long)]
        tree: PathBuf,
    },
    /// Print the log-probability of every token for each hidden vector.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Beam-search the top-k tokens for each hidden vector.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        beam: usize,
        #[arg(long)]
        topk: usize,
        #[arg(long)]
        json: bool,
    },
    /// Train node vectors on synthetic clustered data.
    TrainDemo(TrainArgs),
    /// Time beam decoding against full softmax scoring.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    hidden: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    epochs: usize,
    #[arg(long)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    /// Write the trained model here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    vocab: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    beam: usize,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Fit log-log slopes of time against vocabulary size.
    #[arg(long)]
    scaling: bool,
    /// Also time the multi-threaded batch paths.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildTree { freq, out } => build_tree(&freq, &out),
        Command::Codes { tree } => codes(&tree),
        Command::Score { model, input, json } => score(&model, &input, json),
        Command::Decode {
            model,
            input,
            beam,
            topk,
            json,
        } => decode(&model, &input, beam, topk, json),
        Command::TrainDemo(args) => train_demo(args),
        Command::Bench(args) => bench(args),
    }
}

/// Write `bytes` next to `path` and rename into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot write {}", path.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn read_tree(path: &Path) -> Result<HuffmanTree> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    deserialize_tree(&bytes).with_context(|| format!("invalid tree file {}", path.display()))
}

fn read_model(path: &Path) -> Result<HSoftmaxModel> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    load_model(BufReader::new(file)).with_context(|| format!("invalid model file {}", path.display()))
}

/// One vector per line, whitespace-separated decimals. Blank lines are skipped.
fn read_hidden(path: &Path, width: usize) -> Result<Array2<f64>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), i + 1))?;
        if row.len() != width {
            bail!(
                "{}:{}: expected {width} values, found {}",
                path.display(),
                i + 1,
                row.len()
            );
        }
        values.extend(row);
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, width), values)?)
}

fn build_tree(freq: &Path, out: &Path) -> Result<()> {
    let file = File::open(freq).with_context(|| format!("cannot read {}", freq.display()))?;
    let counts = load_counts(BufReader::new(file))
        .with_context(|| format!("cannot parse {}", freq.display()))?;
    let table = merge_and_normalize(&counts)?;
    let tree = HuffmanTree::build(&table)?;
    write_atomic(out, &serialize_tree(&tree))?;
    println!("vocab_size\t{}", tree.vocab_size());
    println!("depth\t{}", tree.depth());
    println!(
        "expected_code_length\t{}",
        expected_code_length(&tree, &table)?
    );
    Ok(())
}

fn codes(path: &Path) -> Result<()> {
    let tree = read_tree(path)?;
    let book = assign_codes(&tree);
    let mut out = BufWriter::new(std::io::stdout().lock());
    for (token, code) in book.iter() {
        writeln!(out, "{token}\t{code}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    tokens: &'a [String],
    log_probs: Vec<f64>,
}

fn score(model_path: &Path, input: &Path, json: bool) -> Result<()> {
    let model = read_model(model_path)?;
    let hs = read_hidden(input, model.hidden_size())?;
    let scores = model.leaf_log_probs_batch(hs.view())?;
    let tokens = model.tree().tokens();
    let mut out = BufWriter::new(std::io::stdout().lock());
    for row in scores.rows() {
        if json {
            let line = ScoreLine {
                tokens,
                log_probs: row.to_vec(),
            };
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        } else {
            let fields: Vec<String> = tokens
                .iter()
                .zip(row)
                .map(|(t, lp)| format!("{t}\t{lp}"))
                .collect();
            writeln!(out, "{}", fields.join("\t"))?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Ranked<'a> {
    token: &'a str,
    log_prob: f64,
}

fn decode(model_path: &Path, input: &Path, beam: usize, topk: usize, json: bool) -> Result<()> {
    if topk == 0 || beam < topk {
        bail!("usage: --beam must be >= --topk >= 1 (got beam {beam}, topk {topk})");
    }
    let model = read_model(model_path)?;
    let hs = read_hidden(input, model.hidden_size())?;
    let results = beam_decode_batch(&model, hs.view(), beam, topk)?;
    let tokens = model.tree().tokens();
    let mut out = BufWriter::new(std::io::stdout().lock());
    for ranked in results {
        if json {
            let line: Vec<Ranked> = ranked
                .iter()
                .map(|&(i, log_prob)| Ranked {
                    token: &tokens[i],
                    log_prob,
                })
                .collect();
            writeln!(out, "{}", serde_json::to_string(&line)?)?;
        } else {
            let fields: Vec<String> = ranked
                .iter()
                .map(|&(i, lp)| format!("{}\t{lp}", tokens[i]))
                .collect();
            writeln!(out, "{}", fields.join("\t"))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn train_demo(args: TrainArgs) -> Result<()> {
    let tree = read_tree(&args.tree)?;
    let config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: args.seed,
    };
    let (model, report) = config.demo(tree, args.hidden, args.classes, args.samples)?;
    if let Some(out) = &args.out {
        let mut bytes = Vec::new();
        save_model(&model, &mut bytes, FloatWidth::F64)?;
        write_atomic(out, &bytes)?;
    }
    if args.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        for (epoch, loss) in report.loss_curve.iter().enumerate() {
            println!("epoch\t{epoch}\tloss\t{loss}");
        }
        println!("accuracy\t{}", report.final_accuracy);
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut sizes = args.vocab.clone();
    sizes.sort_unstable();
    sizes.dedup();
    if args.scaling && sizes.len() < 3 {
        bail!("usage: --scaling needs at least three distinct --vocab sizes");
    }
    let config = BenchConfig {
        vocab_sizes: args.vocab,
        hidden_size: args.hidden,
        batch: args.batch,
        trials: args.trials,
        warmup: args.warmup,
        beam_width: args.beam,
        seed: args.seed,
        parallel: args.parallel,
    };
    let report = if args.scaling {
        run_scaling_bench(&config)?
    } else {
        run_decode_bench(&config)?
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.render_table());
    }
    Ok(())
}
