//! Subcommand implementations for the binary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use kgselect::chat::{format_path, ChatEngine, ChatError};
use kgselect::config::AppConfig;
use kgselect::eval::harness::{
    evaluate_selector, run_ablation, run_data_reduction, train_and_evaluate, write_ablation_report, write_jsonl,
    SelectorSetup,
};
use kgselect::eval::planted::{make_planted_task, make_reader_task, random_policy_floor, SyntheticTask};
use kgselect::generator::{corpus_vocab, GenExample, Generator};
use kgselect::graph::{build_graph, load_graph, save_graph, AugmentedGraph, Document, Triple, VertexId, VertexKind};
use kgselect::policy::Policy;
use kgselect::reader::{LexicalReader, SpanReader};
use kgselect::text::normalize;
use kgselect::trainer::TrainExample;
use kgselect::vocab::Vocab;

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).with_context(|| format!("{}:{}: bad record", path.display(), i + 1))?;
        out.push(item);
    }
    Ok(out)
}

fn reports_file(cfg: &AppConfig, name: &str) -> Result<BufWriter<File>> {
    let dir = cfg.required("paths.reports")?;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn create(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

pub fn build_graph_cmd(cfg: &AppConfig) -> Result<()> {
    let triples_path = cfg.existing("paths.triples")?;
    let docs_path = cfg.existing("paths.documents")?;
    let out = cfg.required("paths.graph")?;
    let triples: Vec<Triple> = read_jsonl(triples_path)?;
    let docs: Vec<Document> = read_jsonl(docs_path)?;
    let graph = build_graph(&triples, &docs, &cfg.graph.alignment_label)?;
    create(out)?;
    save_graph(&graph, out)?;
    let sentences = graph.vertices().iter().filter(|v| v.kind == VertexKind::Sentence).count();
    println!(
        "vertices {} (entities {}, sentences {}), edges {}, labels {}",
        graph.num_vertices(),
        graph.num_vertices() - sentences,
        sentences,
        graph.num_edges(),
        graph.num_labels()
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionRecord {
    message: String,
    /// Surface text of the target vertex.
    target: String,
    /// Surface text of the start vertex; retrieval picks one when absent.
    #[serde(default)]
    start: Option<String>,
}

fn find_vertex(graph: &AugmentedGraph, surface: &str) -> Option<VertexId> {
    let tokens = normalize(surface);
    graph.entity(surface).or_else(|| {
        graph
            .vertices()
            .iter()
            .find(|v| v.surface == surface || (!tokens.is_empty() && v.tokens == tokens))
            .map(|v| v.id)
    })
}

fn load_file_task(cfg: &AppConfig) -> Result<SyntheticTask> {
    let graph = load_graph(cfg.existing("paths.graph")?)?;
    let data_path = cfg.existing("paths.selection_data")?;
    let records: Vec<SelectionRecord> = read_jsonl(data_path)?;
    let mut examples = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let where_ = || format!("{}: record {}", data_path.display(), i + 1);
        let target = find_vertex(&graph, &r.target).with_context(|| format!("{}: no vertex {:?}", where_(), r.target))?;
        let message = normalize(&r.message);
        if message.is_empty() {
            bail!("{}: message has no tokens", where_());
        }
        let ex = match r.start {
            Some(s) => TrainExample {
                start: find_vertex(&graph, &s).with_context(|| format!("{}: no vertex {s:?}", where_()))?,
                message,
                target,
            },
            None => TrainExample::from_message(&graph, message, target).with_context(where_)?,
        };
        examples.push(ex);
    }
    if examples.len() < 2 {
        bail!("{} needs at least two examples", data_path.display());
    }
    // The last `holdout_fraction` of the file is held out.
    let test_len = ((examples.len() as f64 * cfg.eval.holdout_fraction).round() as usize).clamp(1, examples.len() - 1);
    let test = examples.split_off(examples.len() - test_len);
    Ok(SyntheticTask {
        graph,
        train: examples,
        test,
        horizon: cfg.env.horizon,
        max_fanout: cfg.env.max_fanout,
        rule: format!("examples from {}", data_path.display()),
    })
}

/// Reader task, planted task or data files, in that order of precedence.
pub fn load_task(cfg: &AppConfig) -> Result<SyntheticTask> {
    let task = if let Some(spec) = cfg.reader_task {
        make_reader_task(spec)?
    } else if let Some(pl) = cfg.planted {
        let mut t = make_planted_task(pl.spec(cfg.env.horizon))?;
        t.max_fanout = cfg.env.max_fanout;
        t
    } else {
        load_file_task(cfg)?
    };
    log::info!(
        "task: {} train / {} test, horizon {}, {} vertices",
        task.train.len(),
        task.test.len(),
        task.horizon,
        task.graph.num_vertices()
    );
    Ok(task)
}

fn setup(cfg: &AppConfig) -> SelectorSetup {
    SelectorSetup {
        policy: cfg.policy.clone(),
        trainer: cfg.trainer.clone(),
        reader_window: cfg.eval.reader_window,
    }
}

pub fn train_select(cfg: &AppConfig) -> Result<()> {
    let ckpt = cfg.required("paths.policy_checkpoint")?.to_path_buf();
    let task = load_task(cfg)?;
    let mut log = reports_file(cfg, "train_select.jsonl")?;
    let (policy, run) = train_and_evaluate(&task, &task.train, &setup(cfg), cfg.trainer.seed, Some(&mut log))?;
    log.flush()?;
    create(&ckpt)?;
    policy.save(&ckpt)?;
    if let Some(last) = run.train.epochs.last() {
        println!("final mean reward {:.4}", last.mean_reward);
    }
    println!("holdout hit@1 {:.4} on {} examples", run.report.hit1, task.test.len());
    println!("wrote {}", ckpt.display());
    Ok(())
}

pub fn eval(cfg: &AppConfig) -> Result<()> {
    let task = load_task(cfg)?;
    let policy = Policy::load(cfg.existing("paths.policy_checkpoint")?)?;
    let reader = match policy.config().heads.reader {
        true => Some(LexicalReader::from_graph(&task.graph, cfg.eval.reader_window)?),
        false => None,
    };
    let reader_ref = reader.as_ref().map(|r| r as &dyn SpanReader);
    let (report, _) = evaluate_selector(&policy, &task.graph, task.episode_config(), reader_ref, &task.test)?;
    let mut out = reports_file(cfg, "eval.jsonl")?;
    serde_json::to_writer(&mut out, &report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    println!(
        "hit@1 {:.4}  bleu4 {:.4}  rouge2 {:.4}  rougeL {:.4}  ({} examples)",
        report.hit1, report.bleu4, report.rouge2, report.rouge_l, report.selections
    );
    Ok(())
}

pub fn ablate(cfg: &AppConfig) -> Result<()> {
    let task = load_task(cfg)?;
    let rows = run_ablation(&task, &setup(cfg), &cfg.eval.seeds)?;
    let mut out = reports_file(cfg, "ablation.jsonl")?;
    write_ablation_report(&rows, &mut out)?;
    out.flush()?;
    for r in &rows {
        println!("{:<22} seed {:<3} hit@1 {:.4}  bleu4 {:.4}", r.variant.name(), r.seed, r.report.hit1, r.report.bleu4);
    }
    Ok(())
}

pub fn reduce(cfg: &AppConfig) -> Result<()> {
    let task = load_task(cfg)?;
    let floor = random_policy_floor(&task, &task.test, 200, cfg.eval.seeds[0]);
    let points = run_data_reduction(&task, &cfg.eval.fractions, &setup(cfg), &cfg.eval.seeds)?;
    let mut out = reports_file(cfg, "reduction.jsonl")?;
    write_jsonl(&points, &mut out)?;
    out.flush()?;
    println!("random-policy floor {floor:.4}");
    for p in &points {
        println!("fraction {:<5} seed {:<3} n {:<5} hit@1 {:.4}", p.fraction, p.seed, p.num_train, p.hit1);
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerationRecord {
    message: String,
    knowledge: String,
    response: String,
}

fn load_generation(path: &Path) -> Result<Vec<GenExample>> {
    let records: Vec<GenerationRecord> = read_jsonl(path)?;
    Ok(records
        .into_iter()
        .map(|r| GenExample {
            message: normalize(&r.message),
            knowledge: normalize(&r.knowledge),
            response: normalize(&r.response),
        })
        .collect())
}

pub fn train_gen(cfg: &AppConfig) -> Result<()> {
    let data = cfg.existing("paths.generation_data")?;
    let ckpt = cfg.required("paths.generator_checkpoint")?.to_path_buf();
    let mut examples = load_generation(data)?;
    if examples.len() < 2 {
        bail!("{} needs at least two examples", data.display());
    }
    let test_len = ((examples.len() as f64 * cfg.eval.holdout_fraction).round() as usize).clamp(1, examples.len() - 1);
    let test = examples.split_off(examples.len() - test_len);
    // Shares the policy's vocabulary when a policy checkpoint exists.
    let mut tokens: Vec<String> = corpus_vocab(&examples).tokens().to_vec();
    if let Some(p) = cfg.paths.policy_checkpoint.as_deref().filter(|p| p.exists()) {
        tokens.extend(Policy::load(p)?.vocab().tokens().iter().cloned());
    }
    let vocab = Vocab::from_tokens(tokens);
    let mut generator = Generator::new(vocab, cfg.generator.clone(), cfg.generator.seed)?;
    let report = kgselect::generator::train_generator(&mut generator, &examples)?;
    let mut log = reports_file(cfg, "train_gen.jsonl")?;
    for (epoch, nll) in report.epoch_nll.iter().enumerate() {
        serde_json::to_writer(&mut log, &serde_json::json!({ "epoch": epoch, "nll": nll }))?;
        log.write_all(b"\n")?;
    }
    let mut exact = 0;
    for ex in &test {
        exact += usize::from(generator.generate(&ex.message, &ex.knowledge, cfg.generator.max_len)? == ex.response);
    }
    serde_json::to_writer(&mut log, &serde_json::json!({ "holdout_exact": exact, "holdout": test.len() }))?;
    log.write_all(b"\n")?;
    log.flush()?;
    create(&ckpt)?;
    generator.save(&ckpt)?;
    if let Some(nll) = report.epoch_nll.last() {
        println!("final nll {nll:.4}");
    }
    println!("holdout exact match {exact}/{}", test.len());
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn engine(cfg: &AppConfig) -> Result<ChatEngine> {
    Ok(ChatEngine::from_config(cfg)?)
}

pub fn chat(cfg: &AppConfig) -> Result<()> {
    let engine = engine(cfg)?;
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    let mut stdout = std::io::stdout().lock();
    let mut line = String::new();
    loop {
        if interactive {
            write!(stdout, "> ")?;
            stdout.flush()?;
        }
        line.clear();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let text = line.trim();
        if text == "/quit" {
            break;
        }
        if text.is_empty() {
            continue;
        }
        match engine.respond(text) {
            Ok(turn) => {
                writeln!(stdout, "{}", turn.response_text())?;
                writeln!(stdout, "path: {}", format_path(engine.graph(), turn.retrieval.vertex, &turn.path))?;
            }
            Err(e @ (ChatError::EmptyMessage | ChatError::TooLong { .. })) => eprintln!("error: {e}"),
            Err(e) => return Err(e.into()),
        }
        stdout.flush()?;
    }
    Ok(())
}

pub fn serve(cfg: &AppConfig) -> Result<()> {
    let engine = Arc::new(engine(cfg)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(kgselect::service::serve(engine, &cfg.service.host, cfg.service.port))
        .with_context(|| format!("cannot serve on {}:{}", cfg.service.host, cfg.service.port))
}

/// Config file if given, otherwise defaults.
pub fn load_config(path: Option<PathBuf>) -> Result<AppConfig> {

    Ok(match path {
        Some(p) => AppConfig::load(&p)?,
        None => AppConfig::default(),
    })
}
