use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chatir_core::bundle::{self, create_dir, report_path, BootstrapConfig, SyntheticData};
use chatir_core::corpus::{read_jsonl, read_pairs, write_jsonl};
use chatir_core::dialogue::{Conversation, Engine};
use chatir_core::emotion::{train_emotion, EmotionConfig, EmotionExample, EmotionModel, Lexicons};
use chatir_core::eval::{evaluate_emotion_set, evaluate_retrieval, evaluate_safety, DEFAULT_DISTRACTORS};
use chatir_core::index::{build_index, InvertedIndex};
use chatir_core::ranker::{train_ranker, RankerConfig, RankerModel};
use chatir_core::safety::{builtin_offensive_terms, train_safety, DodgePolicy, OffensiveClassifier, SafetyConfig, SafetyExample, SafetyGate, DEFAULT_THRESHOLD};
use chatir_core::semantic::{train_semantic, CdssmEncoder, SemanticConfig};
use chatir_core::{Error, Result};
use chatir_service::ServiceConfig;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "chatir", version, about = "Retrieval chatbot: index, train, evaluate, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inverted index over a pair corpus.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Train one model; writes a checkpoint and `<model>_report.jsonl`.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Evaluate on held-out data; prints JSON metrics.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Talk to the engine on the terminal.
    Chat {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate synthetic corpora without training.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Generate data, train every model, evaluate, and write a service config.
    Bootstrap {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum IndexCmd {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Model directory to write into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum TrainCmd {
    Semantic(TrainArgs),
    /// Needs the index and encoder in `--models` (default: `--out`).
    Ranker {
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Needs the encoder in `--models` (default: `--out`).
    Emotion {
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Scored after every epoch; the training set when absent.
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long)]
        lexicons: Option<PathBuf>,
    },
    Safety(TrainArgs),
}

#[derive(Subcommand)]
enum EvalCmd {
    Retrieval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DISTRACTORS)]
        distractors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Emotion {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        lexicons: Option<PathBuf>,
    },
    Safety {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn lexicons(dir: Option<&Path>) -> Result<Lexicons> {
    dir.map_or_else(|| Ok(Lexicons::builtin()), Lexicons::load_dir)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Index(IndexCmd::Build { corpus, out }) => {
            let index = build_index(read_pairs(&corpus)?)?;
            create_dir(&out)?;
            let path = out.join(bundle::INDEX_FILE);
            index.save(&path)?;
            print_json(&serde_json::json!({
                "index": path,
                "pairs": index.doc_count(),
                "vocabulary": index.vocabulary().len(),
            }))
        }
        Command::Train(cmd) => train(cmd),
        Command::Eval(cmd) => eval(cmd),
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(&config)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(&config, e))?;
            rt.block_on(chatir_service::serve(cfg))
        }
        Command::Chat { config } => chat(&ServiceConfig::load(&config)?.load_engine()?),
        Command::Synth { out, seed } => {
            let cfg = BootstrapConfig {
                seed,
                ..BootstrapConfig::default()
            };
            SyntheticData::generate(&cfg, &Lexicons::builtin(), &builtin_offensive_terms()).write(&out)?;
            print_json(&serde_json::json!({ "data": out.join("data") }))
        }
        Command::Bootstrap { out, seed } => {
            let cfg = BootstrapConfig {
                seed,
                ..BootstrapConfig::default()
            };
            let (_, summary) = bundle::bootstrap(&out, &cfg, &Lexicons::builtin(), &DodgePolicy::builtin(), &builtin_offensive_terms())?;
            let service = ServiceConfig {
                models_dir: ".".into(),
                ..ServiceConfig::default()
            };
            let path = out.join("service.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&service)?).map_err(|e| Error::io(&path, e))?;
            print_json(&summary)
        }
    }
}

fn train(cmd: TrainCmd) -> Result<()> {
    match cmd {
        TrainCmd::Semantic(a) => {
            let d = SemanticConfig::default();
            let cfg = SemanticConfig {
                epochs: a.epochs.unwrap_or(d.epochs),
                lr: a.lr.map_or(d.lr, |v| v as f32),
                seed: a.seed.unwrap_or(d.seed),
                ..d
            };
            let (encoder, report) = train_semantic(&read_pairs(&a.corpus)?, &cfg)?;
            create_dir(&a.out)?;
            encoder.save(a.out.join(bundle::SEMANTIC_FILE))?;
            write_jsonl(report_path(&a.out, "semantic"), &report.epochs)?;
            print_json(&report.epochs.last())
        }
        TrainCmd::Ranker { args: a, models } => {
            let models = models.unwrap_or_else(|| a.out.clone());
            let d = RankerConfig::default();
            let cfg = RankerConfig {
                epochs: a.epochs.unwrap_or(d.epochs),
                lr: a.lr.unwrap_or(d.lr),
                seed: a.seed.unwrap_or(d.seed),
                ..d
            };
            let index = InvertedIndex::load(models.join(bundle::INDEX_FILE))?;
            let encoder = CdssmEncoder::load(models.join(bundle::SEMANTIC_FILE))?;
            let (ranker, report) = train_ranker(&read_pairs(&a.corpus)?, &encoder, &index, &cfg)?;
            create_dir(&a.out)?;
            ranker.save(a.out.join(bundle::RANKER_FILE))?;
            write_jsonl(report_path(&a.out, "ranker"), &report.epochs)?;
            print_json(&serde_json::json!({
                "weights": ranker.weights,
                "train_pairwise_accuracy": report.train_pairwise_accuracy,
            }))
        }
        TrainCmd::Emotion {
            args: a,
            models,
            heldout,
            lexicons: lex_dir,
        } => {
            let models = models.unwrap_or_else(|| a.out.clone());
            let d = EmotionConfig::default();
            let cfg = EmotionConfig {
                epochs: a.epochs.unwrap_or(d.epochs),
                lr: a.lr.map_or(d.lr, |v| v as f32),
                seed: a.seed.unwrap_or(d.seed),
                ..d
            };
            let encoder = CdssmEncoder::load(models.join(bundle::SEMANTIC_FILE))?;
            let train_set: Vec<EmotionExample> = read_jsonl(&a.corpus)?;
            let heldout_set: Vec<EmotionExample> = match &heldout {
                Some(p) => read_jsonl(p)?,
                None => train_set.clone(),
            };
            let lex = lexicons(lex_dir.as_deref())?;
            let (model, report) = train_emotion(&train_set, &heldout_set, &encoder, &lex, &cfg)?;
            create_dir(&a.out)?;
            model.save(a.out.join(bundle::EMOTION_FILE))?;
            write_jsonl(report_path(&a.out, "emotion"), &report.epochs)?;
            print_json(&report.epochs.last())
        }
        TrainCmd::Safety(a) => {
            let d = SafetyConfig::default();
            let cfg = SafetyConfig {
                epochs: a.epochs.unwrap_or(d.epochs),
                lr: a.lr.map_or(d.lr, |v| v as f32),
                seed: a.seed.unwrap_or(d.seed),
                ..d
            };
            let examples: Vec<SafetyExample> = read_jsonl(&a.corpus)?;
            let (model, report) = train_safety(&examples, &cfg)?;
            create_dir(&a.out)?;
            model.save(a.out.join(bundle::SAFETY_FILE))?;
            write_jsonl(report_path(&a.out, "safety"), &report.epochs)?;
            print_json(&report.epochs.last())
        }
    }
}

fn eval(cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Retrieval {
            corpus,
            models,
            distractors,
            seed,
        } => {
            let index = InvertedIndex::load(models.join(bundle::INDEX_FILE))?;
            let encoder = CdssmEncoder::load(models.join(bundle::SEMANTIC_FILE))?;
            let ranker = RankerModel::load(models.join(bundle::RANKER_FILE))?;
            let heldout = read_pairs(&corpus)?;
            print_json(&evaluate_retrieval(&index, &encoder, &ranker, &heldout, distractors, seed))
        }
        EvalCmd::Emotion {
            corpus,
            models,
            lexicons: lex_dir,
        } => {
            let encoder = CdssmEncoder::load(models.join(bundle::SEMANTIC_FILE))?;
            let model = EmotionModel::load(models.join(bundle::EMOTION_FILE))?;
            let examples: Vec<EmotionExample> = read_jsonl(&corpus)?;
            print_json(&evaluate_emotion_set(&model, &encoder, &lexicons(lex_dir.as_deref())?, &examples)?)
        }
        EvalCmd::Safety {
            corpus,
            models,
            threshold,
        } => {
            let classifier = OffensiveClassifier::load(models.join(bundle::SAFETY_FILE))?;
            let gate = SafetyGate::new(classifier, DodgePolicy::builtin(), threshold)?;
            let examples: Vec<SafetyExample> = read_jsonl(&corpus)?;
            print_json(&evaluate_safety(&gate, &examples))
        }
    }
}

/// Line-by-line conversation; `/attach` sends an attachment, `/quit` ends.
fn chat(engine: &Engine) -> Result<()> {
    let mut conv = Conversation::new("terminal");
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    let prompt = |out: &mut std::io::Stdout| {
        let _ = write!(out, "> ");
        let _ = out.flush();
    };
    prompt(&mut out);
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        let text = line.trim();
        if text == "/quit" {
            break;
        }
        let (text, attachment) = match text.strip_prefix("/attach") {
            Some(rest) => (rest.trim(), true),
            None => (text, false),
        };
        if text.is_empty() && !attachment {
            prompt(&mut out);
            continue;
        }
        let d = engine.respond(&mut conv, text, attachment, 0)?;
        let emotion = d.emotion.map_or("-", |e| e.label.as_str());
        let _ = writeln!(out, "{}  [{} | {}]", d.response, d.source.as_str(), emotion);
        prompt(&mut out);
    }
    Ok(())
}
