//! Command-line front end: type-profile mining, training, evaluation,
//! prediction and gradient checking.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or I/O error.

mod config;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use relmatch_core::data::{self, load_dataset, DatasetFile, Split};
use relmatch_core::embed::{load_pretrained, tokenize_relation, CharVocab, Embedder};
use relmatch_core::gradcheck::{numeric_grad, rel_err, DEFAULT_STEP};
use relmatch_core::graph::Graph;
use relmatch_core::model::{Hyper, Model, RelationCandidate, ViewConfig};
use relmatch_core::typeminer::{self, TypeProfile};
use relmatch_core::{checkpoint, Error, Result};

#[derive(Parser)]
#[command(
    name = "relmatch",
    version,
    about = "Score and rank KB relation candidates for natural-language questions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine tail-entity-type profiles from KB triple and type dumps.
    ExtractTypes {
        /// TSV: subject TAB relation TAB object
        #[arg(long)]
        triples: PathBuf,
        /// TSV: entity TAB type
        #[arg(long)]
        types: PathBuf,
        /// Output TSV: relation TAB type1|type2|...
        #[arg(long)]
        out: PathBuf,
        /// Retain types carried by at least this fraction of sampled tails.
        #[arg(long, default_value_t = typeminer::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Sample at most this many distinct tail entities per relation.
        #[arg(long, default_value_t = typeminer::DEFAULT_SAMPLE_CAP)]
        cap: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a model and write the best-dev checkpoint plus metrics.
    Train {
        /// Flat key=value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a configuration key (repeatable), e.g. --set epochs=5.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint: prints top-1 accuracy.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Checkpoint path (overrides the config's `checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset TSV to score.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Rank candidates for every instance of a dataset.
    Predict {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Output TSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic gradients on a built-in
    /// tiny configuration; exits 0 iff every parameter passes.
    Gradcheck {
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Deliberately corrupt one analytic gradient (self-test hook).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => 1,
        _ => 2,
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::ExtractTypes {
            triples,
            types,
            out,
            threshold,
            cap,
            seed,
        } => cmd_extract_types(&triples, &types, &out, threshold, cap, seed),
        Command::Train { config, sets } => {
            let cfg = build_config(config.as_deref(), &sets)?;
            cmd_train(&cfg)
        }
        Command::Eval {
            config,
            sets,
            checkpoint,
            dataset,
        } => {
            let mut cfg = build_config(config.as_deref(), &sets)?;
            if let Some(c) = checkpoint {
                cfg.checkpoint = Some(c);
            }
            cmd_eval(&cfg, &dataset)
        }
        Command::Predict {
            config,
            sets,
            checkpoint,
            dataset,
            out,
        } => {
            let mut cfg = build_config(config.as_deref(), &sets)?;
            if let Some(c) = checkpoint {
                cfg.checkpoint = Some(c);
            }
            cmd_predict(&cfg, &dataset, out.as_deref())
        }
        Command::Gradcheck {
            sets,
            tolerance,
            corrupt,
        } => cmd_gradcheck(&sets, tolerance, corrupt),
    }
}

fn build_config(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        cfg.apply_file(path)?;
    }
    cfg.apply_sets(sets)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_extract_types(
    triples: &Path,
    types: &Path,
    out: &Path,
    threshold: f64,
    cap: usize,
    seed: u64,
) -> Result<ExitCode> {
    let store = typeminer::TripleStore::load(triples, types)?;
    let profiles = typeminer::extract_all(&store, threshold, cap, seed)?;
    typeminer::save_profiles(out, &profiles)?;
    eprintln!(
        "mined {} profiles from {} triples -> {}",
        profiles.len(),
        store.triple_count,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Everything the model needs besides its parameters.
struct Resources {
    table: relmatch_core::embed::EmbeddingTable,
    vocab: relmatch_core::embed::Vocabulary,
    chars: Option<CharVocab>,
    profiles: HashMap<String, TypeProfile>,
}

impl Resources {
    fn embedder(&self) -> Embedder<'_> {
        Embedder {
            table: &self.table,
            vocab: &self.vocab,
            chars: self.chars.as_ref(),
        }
    }
}

fn load_resources(cfg: &RunConfig) -> Result<Resources> {
    let emb_path = cfg.require("embeddings", &cfg.embeddings)?;
    let (table, vocab) = load_pretrained(&emb_path, cfg.word_dim, cfg.strict_embeddings)?;
    if table.stats.skipped > 0 {
        eprintln!(
            "warning: skipped {} malformed embedding line(s)",
            table.stats.skipped
        );
    }
    let profiles = match &cfg.profiles {
        Some(p) => typeminer::load_profiles(p)?,
        None => {
            if cfg.views.use_type_view || cfg.views.concat_relation_and_type {
                eprintln!("warning: no `profiles` path; all candidates get the default type");
            }
            HashMap::new()
        }
    };
    // The character vocabulary is derived deterministically from the train
    // split (plus profile tokens), so evaluation can rebuild the exact ids
    // the checkpoint was trained with.
    let chars = if cfg.views.use_char {
        let train_path = cfg.require("train", &cfg.train)?;
        let ds = load_dataset(&train_path, Split::Train)?;
        Some(char_vocab_for(&ds, &profiles))
    } else {
        None
    };
    Ok(Resources {
        table,
        vocab,
        chars,
        profiles,
    })
}

fn char_vocab_for(ds: &DatasetFile, profiles: &HashMap<String, TypeProfile>) -> CharVocab {
    let mut tokens: Vec<String> = Vec::new();
    for inst in &ds.instances {
        tokens.extend(inst.tokens.iter().cloned());
        tokens.extend(inst.alias_tokens.iter().cloned());
        for cand in &inst.candidates {
            tokens.extend(tokenize_relation(cand));
        }
    }
    for p in profiles.values() {
        tokens.extend(p.tokens());
    }
    CharVocab::build(tokens.iter().map(|s| s.as_str()))
}

fn init_model(cfg: &RunConfig, res: &Resources) -> Result<Model> {
    Model::init(
        cfg.hyper.clone(),
        cfg.views,
        &res.table,
        res.chars.as_ref().map(|c| c.len()),
    )
}

fn cmd_train(cfg: &RunConfig) -> Result<ExitCode> {
    let res = load_resources(cfg)?;
    let train_path = cfg.require("train", &cfg.train)?;
    let ckpt_path = cfg.require("checkpoint", &cfg.checkpoint)?;
    let train_ds = load_dataset(&train_path, Split::Train)?;
    for w in &train_ds.stats.warnings {
        eprintln!("warning: {w}");
    }
    let dev_ds = match &cfg.dev {
        Some(p) => Some(load_dataset(p, Split::Dev)?),
        None => None,
    };

    let mut model = init_model(cfg, &res)?;
    let emb = res.embedder();
    let report = model.train(&emb, &res.profiles, &train_ds, dev_ds.as_ref())?;

    let mut pairs: Vec<(String, f64)> = Vec::new();
    for (i, (loss, acc)) in report
        .epoch_loss
        .iter()
        .zip(&report.dev_accuracy)
        .enumerate()
    {
        pairs.push((format!("epoch{}.train_loss", i + 1), *loss));
        pairs.push((format!("epoch{}.dev_accuracy", i + 1), *acc));
    }
    if let Some(best) = report.best_epoch {
        pairs.push(("best_epoch".to_string(), (best + 1) as f64));
        pairs.push(("best_dev_accuracy".to_string(), report.best_dev_accuracy));
    }
    print!("{}", data::metrics_to_tsv(&pairs));
    if let Some(path) = &cfg.metrics {
        data::write_atomic(path, data::metrics_to_tsv(&pairs).as_bytes())?;
    }
    if let Some(path) = &cfg.metrics_json {
        data::write_atomic(path, data::metrics_to_json(&pairs).as_bytes())?;
    }
    checkpoint::save(&ckpt_path, &model.store)?;
    eprintln!("checkpoint written to {}", ckpt_path.display());
    Ok(ExitCode::SUCCESS)
}

fn load_model(cfg: &RunConfig, res: &Resources) -> Result<Model> {
    let ckpt_path = cfg.require("checkpoint", &cfg.checkpoint)?;
    let mut model = init_model(cfg, res)?;
    checkpoint::load(&ckpt_path, &mut model.store)?;
    Ok(model)
}

fn cmd_eval(cfg: &RunConfig, dataset: &Path) -> Result<ExitCode> {
    let res = load_resources(cfg)?;
    let model = load_model(cfg, &res)?;
    let ds = load_dataset(dataset, Split::Test)?;
    let emb = res.embedder();
    let accuracy = data::evaluate(&model, &emb, &res.profiles, &ds)?;
    println!("accuracy\t{accuracy}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(cfg: &RunConfig, dataset: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let res = load_resources(cfg)?;
    let model = load_model(cfg, &res)?;
    let ds = load_dataset(dataset, Split::Test)?;
    if ds.instances.is_empty() {
        return Err(Error::Empty {
            what: "prediction dataset",
        });
    }
    let emb = res.embedder();
    let mut lines = String::new();
    for (i, inst) in ds.instances.iter().enumerate() {
        let ranked = model.rank_candidates(&emb, &res.profiles, inst)?;
        let top = &ranked[0].0;
        let correct = if *top == inst.gold { 1 } else { 0 };
        let listing: Vec<String> = ranked
            .iter()
            .map(|(rel, score)| format!("{rel}:{score:.6}"))
            .collect();
        lines.push_str(&format!(
            "{i}\t{}\t{top}\t{correct}\t{}\n",
            inst.gold,
            listing.join("|")
        ));
    }
    match out {
        Some(path) => data::write_atomic(path, lines.as_bytes())?,
        None => print!("{lines}"),
    }
    Ok(ExitCode::SUCCESS)
}

/// Pretrained rows for the built-in gradcheck fixture.
const GRADCHECK_EMBEDDINGS: &str = "\
what 0.21 -0.39 0.05 0.44 -0.12 0.30
city -0.08 0.27 -0.45 0.11 0.36 -0.22
is 0.14 0.02 0.31 -0.28 -0.07 0.19
the -0.33 0.18 0.09 0.25 -0.41 0.06
place 0.29 -0.15 0.38 -0.04 0.22 -0.35
river 0.01 0.43 -0.19 0.33 0.08 -0.26
near -0.24 0.12 0.40 -0.37 0.15 0.03
town 0.37 -0.29 0.16 0.07 -0.18 0.42
";

fn cmd_gradcheck(sets: &[String], tolerance: f64, corrupt: bool) -> Result<ExitCode> {
    let mut hyper = Hyper {
        d: 8,
        l: 2,
        d_agg: 4,
        h_mlp: 8,
        d_char: 3,
        d_charh: 3,
        seed: 62,
        ..Default::default()
    };
    let mut views = ViewConfig::default();
    {
        // Route --set through the shared key parser, then pick up the
        // hyper/view fields it touched.
        let mut probe = RunConfig {
            hyper: hyper.clone(),
            views,
            ..RunConfig::default()
        };
        probe.apply_sets(sets)?;
        probe.validate()?;
        hyper = probe.hyper;
        views = probe.views;
    }

    let (table, vocab) =
        relmatch_core::embed::parse_pretrained(GRADCHECK_EMBEDDINGS, "builtin", 6, true)?;
    let chars = CharVocab::build(
        GRADCHECK_EMBEDDINGS
            .lines()
            .filter_map(|l| l.split_whitespace().next()),
    );
    let model = Model::init(hyper, views, &table, Some(chars.len()))?;
    let emb = Embedder {
        table: &table,
        vocab: &vocab,
        chars: Some(&chars),
    };
    let inst = relmatch_core::data::QuestionInstance {
        tokens: ["what", "city", "is", "the", "place"]
            .map(String::from)
            .to_vec(),
        mention: (4, 5),
        alias_tokens: vec!["place".to_string()],
        gold: "area.city".to_string(),
        candidates: vec!["area.city".to_string(), "area.river".to_string()],
    };
    let profiles = HashMap::new();
    let cands: Vec<RelationCandidate> = inst
        .candidates
        .iter()
        .map(|r| RelationCandidate::build(r, &profiles))
        .collect();

    let mut g = Graph::new();
    let scores = model.build_score_graph(&mut g, &emb, &inst, &cands)?;
    let loss = Model::ranking_loss(&mut g, scores[0], &scores[1..], model.hyper.margin)?;
    g.backward(loss)?;

    let bindings: Vec<_> = g.bound_params().to_vec();
    let mut max_err: f64 = 0.0;
    let mut worst = String::new();
    for (i, (pid, node)) in bindings.iter().enumerate() {
        let mut analytic = g.grad(*node).data().to_vec();
        if corrupt && i == 0 {
            analytic[0] += 1e-2;
        }
        let numeric = numeric_grad(&mut g, *node, loss, DEFAULT_STEP)?;
        let mut param_max: f64 = 0.0;
        for (&a, &n) in analytic.iter().zip(numeric.data()) {
            param_max = param_max.max(rel_err(a, n));
        }
        println!("{}\t{param_max:.3e}", model.store.name(*pid));
        if param_max > max_err {
            max_err = param_max;
            worst = model.store.name(*pid).to_string();
        }
    }
    println!("max_rel_err\t{max_err:.3e}");
    if max_err < tolerance {
        println!("gradcheck\tpass");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck\tfail\t{worst}");
        Ok(ExitCode::from(1))
    }
}
