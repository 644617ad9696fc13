use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use sha2::{Digest, Sha256};

use search2vec::coldstart::{
    build_content_vectors, build_query_documents, query_texts, read_catalog, resolve_tail,
    write_provenance, InvertedIndex, DEFAULT_ELASTIC_K, DEFAULT_TAU_C,
};
use search2vec::eval::{
    evaluate, export_grade_score_distribution, read_judgments, score_dataset,
    write_grade_distribution, write_ndcg_curve, ScoreMode, ScoredPair, ScoringModel,
};
use search2vec::ps::{run_distributed, ClientSchedule, PsConfig, TransportKind};
use search2vec::retrieval::{ExactIndex, LshIndex, MatchResult, DEFAULT_K, DEFAULT_TAU};
use search2vec::session::{ingest, query_key, read_sessions, write_sessions, ActionKind};
use search2vec::sgns::{
    objective_value, train_hogwild, NegativeDistribution, ReferenceTrainer, UpdateSchedule,
};
use search2vec::vocab::DEFAULT_MIN_COUNT;
use search2vec::{EmbeddingTableF32, TrainingConfig, VectorSetF32, Vocabulary};

use crate::config::FileConfig;
use crate::{
    Cli, ColdstartArgs, Command, ElasticBuildArgs, ElasticCommand, ElasticMatchArgs, EvalArgs,
    ExportPlotArgs, IngestArgs, MatchArgs, ScoringArgs, TrainArgs, VocabArgs, DEFAULT_SEED,
};

pub fn run(cli: &Cli, file: &FileConfig) -> Result<()> {
    let seed = file.resolve(cli.seed, "seed", DEFAULT_SEED)?;
    let threads = file.resolve(cli.threads, "threads", 1usize)?.max(1);
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &file.scoped("ingest")),
        Command::Vocab(a) => cmd_vocab(a, &file.scoped("vocab")),
        Command::Train(a) => cmd_train(a, &file.scoped("train"), seed, threads),
        Command::ColdstartAds(a) => cmd_coldstart_ads(a, &file.scoped("coldstart-ads")),
        Command::Elastic { command } => match command {
            ElasticCommand::Build(a) => cmd_elastic_build(a, &file.scoped("elastic")),
            ElasticCommand::Match(a) => cmd_elastic_match(a, &file.scoped("elastic")),
        },
        Command::Match(a) => cmd_match(a, &file.scoped("match"), seed),
        Command::Eval(a) => cmd_eval(a, &file.scoped("eval")),
        Command::ExportPlot(a) => cmd_export_plot(a, &file.scoped("export-plot")),
    }
}

fn required(cfg: &FileConfig, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    match flag {
        Some(p) => Ok(p.clone()),
        None => cfg
            .get::<PathBuf>(key)?
            .ok_or_else(|| anyhow!("--{} is required", key)),
    }
}

fn optional(cfg: &FileConfig, flag: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
    match flag {
        Some(p) => Ok(Some(p.clone())),
        None => cfg.get::<PathBuf>(key),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes to `path`, or stdout when absent.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_vectors(path: &Path) -> Result<VectorSetF32> {
    VectorSetF32::read_from(open(path)?).with_context(|| format!("reading vectors {}", path.display()))
}

fn load_index(path: &Path) -> Result<InvertedIndex> {
    InvertedIndex::read_from(open(path)?).with_context(|| format!("reading index {}", path.display()))
}

fn load_sessions(path: &Path) -> Result<Vec<search2vec::Session>> {
    read_sessions(open(path)?).with_context(|| format!("reading sessions {}", path.display()))
}

fn cmd_ingest(a: &IngestArgs, cfg: &FileConfig) -> Result<()> {
    let events = required(cfg, &a.events, "events")?;
    let out = required(cfg, &a.out, "out")?;
    let (sessions, report) = ingest(open(&events)?)?;
    for (line, msg) in &report.malformed {
        warn!("{}:{}: {}", events.display(), line, msg);
    }
    write_sessions(create(&out)?, &sessions)?;
    if let Some(path) = optional(cfg, &a.report, "report")? {
        writeln!(create(&path)?, "{}", report)?;
    }
    println!("{}", report);
    Ok(())
}

fn cmd_vocab(a: &VocabArgs, cfg: &FileConfig) -> Result<()> {
    let sessions = load_sessions(&required(cfg, &a.sessions, "sessions")?)?;
    let out = required(cfg, &a.out, "out")?;
    let min_count = cfg.resolve(a.min_count, "min-count", DEFAULT_MIN_COUNT)?;
    let vocab = Vocabulary::build(&sessions, min_count);
    vocab.write_to(create(&out)?)?;
    println!("tokens\t{}", vocab.len());
    for kind in [ActionKind::Query, ActionKind::Ad, ActionKind::Link] {
        let n = vocab.entries().iter().filter(|e| e.kind == kind).count();
        println!("{}\t{}", kind.name(), n);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrainMode {
    Reference,
    Hogwild,
    Ps,
}

fn training_config(a: &TrainArgs, cfg: &FileConfig, seed: u64) -> Result<TrainingConfig> {
    let d = TrainingConfig::default();
    let subsample = match cfg.resolve(a.subsample.clone(), "subsample", String::new())?.as_str() {
        "" => d.subsample,
        "none" | "off" => None,
        v => Some(v.parse::<f64>().map_err(|e| anyhow!("--subsample '{}': {}", v, e))?),
    };
    let schedule = match cfg.resolve(a.schedule.clone(), "schedule", String::new())?.as_str() {
        "" => d.schedule,
        "sequential" => UpdateSchedule::Sequential,
        "synchronous" => UpdateSchedule::Synchronous,
        v => bail!("--schedule must be sequential or synchronous, got '{}'", v),
    };
    let negative_distribution = match cfg
        .resolve(a.negative_distribution.clone(), "negative-distribution", String::new())?
        .as_str()
    {
        "" => d.negative_distribution,
        "unigram" => NegativeDistribution::Unigram,
        "uniform" => NegativeDistribution::Uniform,
        v => bail!("--negative-distribution must be unigram or uniform, got '{}'", v),
    };
    let config = TrainingConfig {
        dim: cfg.resolve(a.dim, "dim", d.dim)?,
        window: cfg.resolve(a.window, "window", d.window)?,
        negatives: cfg.resolve(a.negatives, "negatives", d.negatives)?,
        epochs: cfg.resolve(a.epochs, "epochs", d.epochs)?,
        initial_lr: cfg.resolve(a.lr, "lr", d.initial_lr)?,
        min_lr: cfg.resolve(a.min_lr, "min-lr", d.min_lr)?,
        subsample,
        seed,
        minibatch_sessions: cfg.resolve(a.minibatch, "minibatch", d.minibatch_sessions)?,
        schedule,
        negative_distribution,
        implicit_negatives: !cfg.resolve_flag(a.no_implicit_negatives, "no-implicit-negatives")?,
        dwell_weighting: !cfg.resolve_flag(a.no_dwell_weighting, "no-dwell-weighting")?,
        objective_sample_pairs: d.objective_sample_pairs,
    };
    config.validate()?;
    Ok(config)
}

/// Canonical `key <TAB> value` lines of a training run's settings.
fn config_lines(config: &TrainingConfig, mode: TrainMode, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(s, "{}\t{}", k, v);
    };
    line("mode", format!("{:?}", mode).to_lowercase());
    line("dim", config.dim.to_string());
    line("window", config.window.to_string());
    line("negatives", config.negatives.to_string());
    line("epochs", config.epochs.to_string());
    line("lr", format!("{:?}", config.initial_lr));
    line("min_lr", format!("{:?}", config.min_lr));
    line(
        "subsample",
        config.subsample.map_or("none".into(), |t| format!("{:?}", t)),
    );
    line("seed", config.seed.to_string());
    line("minibatch", config.minibatch_sessions.to_string());
    line("schedule", format!("{:?}", config.schedule).to_lowercase());
    line(
        "negative_distribution",
        format!("{:?}", config.negative_distribution).to_lowercase(),
    );
    line("implicit_negatives", config.implicit_negatives.to_string());
    line("dwell_weighting", config.dwell_weighting.to_string());
    for (k, v) in extra {
        line(k, v.clone());
    }
    s
}

fn cmd_train(a: &TrainArgs, cfg: &FileConfig, seed: u64, threads: usize) -> Result<()> {
    let sessions = load_sessions(&required(cfg, &a.sessions, "sessions")?)?;
    let vocab = match optional(cfg, &a.vocab, "vocab")? {
        Some(p) => Vocabulary::read_from(open(&p)?).with_context(|| format!("reading vocabulary {}", p.display()))?,
        None => Vocabulary::build(&sessions, cfg.resolve(a.min_count, "min-count", DEFAULT_MIN_COUNT)?),
    };
    let out_dir = required(cfg, &a.out_dir, "out-dir")?;
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mode = match cfg.resolve(a.mode.clone(), "mode", "reference".to_string())?.as_str() {
        "reference" => TrainMode::Reference,
        "hogwild" => TrainMode::Hogwild,
        "ps" => TrainMode::Ps,
        m => bail!("--mode must be reference, hogwild or ps, got '{}'", m),
    };
    let config = training_config(a, cfg, seed)?;

    let mut extra = Vec::new();
    let ps = if mode == TrainMode::Ps {
        let transport = match cfg.resolve(a.transport.clone(), "transport", "inproc".to_string())?.as_str() {
            "inproc" => TransportKind::InProcess,
            "tcp" => TransportKind::Tcp,
            t => bail!("--transport must be inproc or tcp, got '{}'", t),
        };
        let ps = PsConfig {
            shards: cfg.resolve(a.shards, "shards", 1)?,
            clients: cfg.resolve(a.clients, "clients", 1)?,
            transport,
            schedule: if cfg.resolve_flag(a.serialized, "serialized")? {
                ClientSchedule::Serialized
            } else {
                ClientSchedule::Concurrent
            },
            timeout: Duration::from_secs(60),
            checkpoint_dir: optional(cfg, &a.checkpoint_dir, "checkpoint-dir")?,
            fail_shard: None,
        };
        extra.push(("shards", ps.shards.to_string()));
        extra.push(("clients", ps.clients.to_string()));
        extra.push(("serialized", (ps.schedule == ClientSchedule::Serialized).to_string()));
        Some(ps)
    } else {
        None
    };
    if mode == TrainMode::Hogwild {
        extra.push(("threads", threads.to_string()));
    }
    extra.push(("vocabulary", vocab.len().to_string()));
    let settings = config_lines(&config, mode, &extra);
    let hash = Sha256::digest(settings.as_bytes());
    let hash: String = hash.iter().map(|b| format!("{:02x}", b)).collect();

    let trainer = ReferenceTrainer::new(&sessions, &vocab, config.clone())?;
    let sample = trainer.objective_sample();
    let mut report = String::new();
    let table: EmbeddingTableF32 = match mode {
        TrainMode::Reference => {
            let outcome = trainer.train::<f32>()?;
            let _ = writeln!(report, "objective_initial\t{:.6}", outcome.initial_objective);
            for e in &outcome.epochs {
                let _ = writeln!(
                    report,
                    "objective_epoch_{}\t{:.6}\npairs_epoch_{}\t{}",
                    e.epoch, e.objective_sample, e.epoch, e.pairs
                );
            }
            outcome.table
        }
        TrainMode::Hogwild => {
            let initial = objective_value(&trainer.init_table::<f32>()?, &sample);
            let _ = writeln!(report, "objective_initial\t{:.6}", initial);
            let table = train_hogwild::<f32>(&trainer, threads)?;
            let _ = writeln!(report, "objective_final\t{:.6}", objective_value(&table, &sample));
            table
        }
        TrainMode::Ps => {
            let ps = ps.expect("ps settings");
            let initial = objective_value(&trainer.init_table::<f32>()?, &sample);
            let _ = writeln!(report, "objective_initial\t{:.6}", initial);
            let outcome = run_distributed::<f32>(&sessions, &vocab, &config, &ps)?;
            for e in &outcome.epochs {
                let _ = writeln!(report, "pairs_epoch_{}\t{}", e.epoch, e.pairs);
            }
            let _ = writeln!(
                report,
                "objective_final\t{:.6}",
                objective_value(&outcome.table, &sample)
            );
            let t = outcome.traffic;
            let batches = outcome.batches().max(1) as u64;
            for (name, tt) in [
                ("request", t.request),
                ("partial", t.partial),
                ("coefficients", t.coefficients),
                ("control", t.control),
            ] {
                let _ = writeln!(report, "wire_{}_messages\t{}", name, tt.messages);
                let _ = writeln!(report, "wire_{}_bytes\t{}", name, tt.bytes);
            }
            let _ = writeln!(report, "wire_bytes_per_batch\t{}", t.total_bytes() / batches);
            outcome.table
        }
    };

    table
        .input_vectors(&vocab)
        .write_to(create(&out_dir.join("input.vec"))?)?;
    table
        .output_vectors(&vocab)
        .write_to(create(&out_dir.join("output.vec"))?)?;
    let mut m = create(&out_dir.join("manifest.txt"))?;
    write!(m, "config_hash\t{}\n{}{}", hash, settings, report)?;
    m.flush()?;
    info!("wrote vectors for {} tokens to {}", vocab.len(), out_dir.display());
    print!("config_hash\t{}\n{}", hash, report);
    Ok(())
}

fn cmd_coldstart_ads(a: &ColdstartArgs, cfg: &FileConfig) -> Result<()> {
    let vectors = load_vectors(&required(cfg, &a.vectors, "vectors")?)?;
    let catalog_path = required(cfg, &a.catalog, "catalog")?;
    let catalog = read_catalog(open(&catalog_path)?)
        .with_context(|| format!("reading catalog {}", catalog_path.display()))?;
    let index = optional(cfg, &a.index, "index")?
        .map(|p| load_index(&p))
        .transpose()?;
    let tau_c = cfg.resolve(a.tau_c, "tau-c", DEFAULT_TAU_C)?;
    let out = required(cfg, &a.out, "out")?;
    let queries = vectors.filter(|t| t.starts_with(ActionKind::Query.prefix()));

    let report = build_content_vectors(&catalog, &queries, index.as_ref(), tau_c)?;
    for (ad, reason) in &report.failures {
        warn!("ad {}: {}", ad, reason);
    }
    search2vec::coldstart::content_vector_set(&report.vectors, vectors.dim())?.write_to(create(&out)?)?;
    if let Some(p) = optional(cfg, &a.provenance, "provenance")? {
        write_provenance(&report.vectors, create(&p)?)?;
    }
    println!("ads\t{}", catalog.len());
    println!("vectors\t{}", report.vectors.len());
    println!("failures\t{}", report.failures.len());
    Ok(())
}

fn cmd_elastic_build(a: &ElasticBuildArgs, cfg: &FileConfig) -> Result<()> {
    let vectors = load_vectors(&required(cfg, &a.vectors, "vectors")?)?;
    let k = cfg.resolve(a.k, "k", DEFAULT_ELASTIC_K)?;
    let out = required(cfg, &a.out, "out")?;
    let heads = query_texts(&vectors);
    let docs = build_query_documents(&heads, &vectors, k);
    let index = InvertedIndex::build(&docs);
    index.write_to(create(&out)?)?;
    if let Some(p) = optional(cfg, &a.dump, "dump")? {
        index.write_debug(create(&p)?)?;
    }
    println!("documents\t{}", index.len());
    Ok(())
}

fn cmd_elastic_match(a: &ElasticMatchArgs, cfg: &FileConfig) -> Result<()> {
    let index = load_index(&required(cfg, &a.index, "index")?)?;
    let top = cfg.resolve(a.top, "top", 10usize)?;
    let matches = index.match_tail(&a.query, a.exclude.as_deref())?;
    let mut w = output(None)?;
    for (head, score) in matches.iter().take(top) {
        writeln!(w, "{}\t{:.6}", head, score)?;
    }
    w.flush()?;
    Ok(())
}

fn read_query_list(a: &MatchArgs, cfg: &FileConfig) -> Result<Vec<String>> {
    let mut queries = Vec::new();
    if let Some(q) = &a.query {
        queries.push(q.clone());
    }
    if let Some(p) = optional(cfg, &a.queries, "queries")? {
        for line in open(&p)?.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                queries.push(line);
            }
        }
    }
    if queries.is_empty() {
        bail!("give --query or --queries");
    }
    Ok(queries)
}

fn cmd_match(a: &MatchArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    let vectors = load_vectors(&required(cfg, &a.vectors, "vectors")?)?;
    let queries = read_query_list(a, cfg)?;
    let k = cfg.resolve(a.k, "k", DEFAULT_K)?;
    let tau = cfg.resolve(a.tau, "tau", DEFAULT_TAU)?;
    let lsh = cfg.resolve_flag(a.lsh, "lsh")?;
    let index = optional(cfg, &a.index, "index")?
        .map(|p| load_index(&p))
        .transpose()?;

    let mut ads = vectors.filter(|t| t.starts_with(ActionKind::Ad.prefix()));
    if let Some(p) = optional(cfg, &a.ads, "ads")? {
        for (t, v) in load_vectors(&p)?.iter() {
            if ads.position(t).is_none() {
                ads.push(t.to_string(), v)?;
            }
        }
    }
    if ads.is_empty() {
        bail!("no ad vectors to match against");
    }
    let exact = ExactIndex::new(&ads);
    let lsh_index = if lsh {
        Some(LshIndex::with_defaults(&ads, seed)?)
    } else {
        None
    };

    let mut w = output(optional(cfg, &a.out, "out")?.as_deref())?;
    for q in &queries {
        let v = match vectors.get(&query_key(q)) {
            Some(v) => v.to_vec(),
            None => match &index {
                Some(idx) => match resolve_tail(q, idx, &vectors, None) {
                    Ok(found) => found.vector,
                    Err(e) => {
                        warn!("query '{}': {}", q, e);
                        continue;
                    }
                },
                None => {
                    warn!("query '{}' has no vector", q);
                    continue;
                }
            },
        };
        let hits = match &lsh_index {
            Some(l) => l.search(&v, k, tau),
            None => exact.search(&v, k, tau),
        };
        let hits = match hits {
            Ok(h) => h,
            Err(e) => {
                warn!("query '{}': {}", q, e);
                continue;
            }
        };
        let result = MatchResult {
            query: search2vec::session::normalize_query(q),
            k,
            tau,
            ads: hits
                .into_iter()
                .map(|(t, s)| {
                    let id = ActionKind::split_key(&t).map_or(t.clone(), |(_, id)| id.to_string());
                    (id, s)
                })
                .collect(),
        };
        result.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn scored_pairs(a: &ScoringArgs, cfg: &FileConfig) -> Result<Vec<ScoredPair>> {
    let vectors = load_vectors(&required(cfg, &a.vectors, "vectors")?)?;
    let judgments_path = required(cfg, &a.judgments, "judgments")?;
    let judgments = read_judgments(open(&judgments_path)?)
        .with_context(|| format!("reading judgments {}", judgments_path.display()))?;
    let mode: ScoreMode = cfg.resolve(a.mode.clone(), "mode", "context".to_string())?.parse()?;
    let queries = vectors.filter(|t| t.starts_with(ActionKind::Query.prefix()));
    let context_ads = vectors.filter(|t| t.starts_with(ActionKind::Ad.prefix()));
    let content_ads = match (mode, optional(cfg, &a.ads, "ads")?) {
        (ScoreMode::Content, Some(p)) => Some(load_vectors(&p)?),
        (ScoreMode::Content, None) => bail!("content mode needs --ads"),
        _ => None,
    };
    let index = match (mode, optional(cfg, &a.index, "index")?) {
        (ScoreMode::Elastic, Some(p)) => Some(load_index(&p)?),
        (ScoreMode::Elastic, None) => bail!("elastic mode needs --index"),
        _ => None,
    };
    let model = ScoringModel {
        queries: &queries,
        ads: content_ads.as_ref().unwrap_or(&context_ads),
        index: index.as_ref(),
    };
    let (scored, coverage) = score_dataset(&judgments, mode, &model)?;
    eprint!("{}", coverage);
    Ok(scored)
}

fn cmd_eval(a: &EvalArgs, cfg: &FileConfig) -> Result<()> {
    let scored = scored_pairs(&a.scoring, cfg)?;
    let report = evaluate(&scored)?;
    let mut w = output(optional(cfg, &a.out, "out")?.as_deref())?;
    write!(w, "{}", report)?;
    for (k, v) in &report.ndcg_at {
        writeln!(w, "ndcg@{}\t{:.6}", k, v)?;
    }
    w.flush()?;
    if let Some(p) = optional(cfg, &a.curve, "curve")? {
        write_ndcg_curve(&report.ndcg_at, create(&p)?)?;
    }
    if let Some(p) = optional(cfg, &a.scores, "scores")? {
        let mut w = create(&p)?;
        for s in &scored {
            writeln!(w, "{}\t{}\t{}\t{:.6}", s.query, s.ad, s.grade, s.score)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_export_plot(a: &ExportPlotArgs, cfg: &FileConfig) -> Result<()> {
    let scored = scored_pairs(&a.scoring, cfg)?;
    let rows = export_grade_score_distribution(&scored);
    write_grade_distribution(&rows, output(optional(cfg, &a.out, "out")?.as_deref())?)?;
    Ok(())
}
