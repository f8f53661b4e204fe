use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use rebut_core::bench::{measure_throughput, CritiqueSubject, IdleSubject, LatencyModel, Mode, SelfFeedbackSubject, ThroughputResult};
use rebut_core::critics::{CriticPanel, CriticService, CritiqueRequest, HttpCriticService};
use rebut_core::datagen::{emit_jsonl, generate_batch};
use rebut_core::eval::{score_batch, summarize, JudgeTemplates, ScoringItem, ScoringOptions};
use rebut_core::extract::{EntityTagger, HttpTagger};
use rebut_core::ingest::{dataset_stats, filter_labels, load_shared_evidence, load_tsv, split, LoadReport, RejectedRow};
use rebut_core::llm::{ChatClient, ChatSettings, HttpChatClient};
use rebut_core::model::{ElementKind, FactCheckArticle, Provenance, VeracityLabel};
use rebut_core::orchestrator::{build_panel, Generator, PromptTemplates};
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, RunConfig, API_KEY_VAR};
use crate::{BenchMode, Cli, Command, CriticArgs, InputArgs};

const SERVICE_TIMEOUT: Duration = Duration::from_secs(60);

/// Collects what every subcommand records about its run.
struct RunRecord {
    command: &'static str,
    out_dir: PathBuf,
    started: chrono::DateTime<Utc>,
    counts: serde_json::Map<String, serde_json::Value>,
}

impl RunRecord {
    fn start(command: &'static str, out_dir: &Path, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        fs::write(out_dir.join("resolved-config.toml"), config.to_toml()).context("writing resolved config")?;
        Ok(Self { command, out_dir: out_dir.to_path_buf(), started: Utc::now(), counts: Default::default() })
    }

    fn count(&mut self, name: &str, value: impl Serialize) {
        self.counts.insert(name.to_string(), json!(value));
    }

    fn finish(self, status: &str) -> Result<()> {
        let meta = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_at": self.started.to_rfc3339(),
            "finished_at": Utc::now().to_rfc3339(),
            "status": status,
            "counts": self.counts,
        });
        fs::write(self.out_dir.join("run-metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")
            .context("writing run metadata")
    }
}

fn config_err(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

fn api_key() -> Option<String> {
    std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty())
}

fn chat_client(settings: ChatSettings) -> Result<HttpChatClient> {
    HttpChatClient::new(settings, api_key()).context("creating chat client")
}

fn tagger(config: &RunConfig) -> Result<Option<Arc<dyn EntityTagger>>> {
    match &config.tagger_endpoint {
        Some(url) => Ok(Some(Arc::new(HttpTagger::new(url, SERVICE_TIMEOUT).context("creating tagger client")?))),
        None => Ok(None),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<usize> {
    let mut out = create(path)?;
    let mut n = 0;
    for row in rows {
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(rows)
}

fn load_articles_jsonl(path: &Path) -> Result<LoadReport> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut report = LoadReport::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<FactCheckArticle>(&line) {
            Ok(a) => report.articles.push(a),
            Err(e) => report.rejects.push(RejectedRow { line: i as u64 + 1, id: None, reason: e.to_string() }),
        }
    }
    Ok(report)
}

/// Loads articles per the input flags and config, applies the label filter
/// and writes any rejects into `out_dir`.
fn load_input(input: &InputArgs, config: &RunConfig, out_dir: &Path) -> Result<(Vec<FactCheckArticle>, usize)> {
    let fields = &config.data.fields;
    let evidence = input.evidence_file.as_ref().or(config.data.evidence_file.as_ref());
    let is_jsonl = input.input.extension().is_some_and(|e| e == "jsonl");
    let report = match (evidence, is_jsonl) {
        (Some(ev), _) => load_shared_evidence(&input.input, ev, fields)?,
        (None, true) => load_articles_jsonl(&input.input)?,
        (None, false) => load_tsv(&input.input, fields)?,
    };
    if !report.rejects.is_empty() {
        log::warn!("{} row(s) rejected; see rejects.jsonl", report.rejects.len());
        report.write_rejects(create(&out_dir.join("rejects.jsonl"))?)?;
    }
    let rejected = report.rejects.len();
    let labels = input.labels.clone().unwrap_or_else(|| config.data.labels.clone());
    let articles = if labels.is_empty() { report.articles } else { filter_labels(report.articles, &labels) };
    Ok((articles, rejected))
}

fn apply_critic_args(config: &mut RunConfig, args: &CriticArgs) {
    let g = &mut config.generation;
    if let Some(kinds) = &args.no_critics {
        g.enabled_critics.retain(|k| !kinds.contains(k));
    }
    if let Some(mode) = args.critic_mode {
        g.critic_mode = mode.into();
    }
    if let Some(url) = &args.critic_endpoint {
        g.critic_endpoint = Some(url.clone());
    }
    if let Some(t) = args.topic_threshold {
        g.topic_threshold = t;
    }
}

fn panel(config: &RunConfig) -> Result<CriticPanel> {
    let service: Option<Arc<dyn CriticService>> = match &config.generation.critic_endpoint {
        Some(url) => Some(Arc::new(HttpCriticService::new(url, SERVICE_TIMEOUT)?)),
        None => None,
    };
    Ok(build_panel(&config.generation, service, tagger(config)?)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(p) = cli.parallelism {
        config.parallelism = p;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(t) = cli.tagger_endpoint {
        config.tagger_endpoint = Some(t);
    }
    match cli.command {
        Command::Ingest(args) => {
            if let Some(s) = &args.split {
                let [a, b, c] = s[..] else {
                    return Err(config_err(format!("--split takes three ratios, got {}", s.len())));
                };
                config.data.split = [a, b, c];
            }
            config.validate()?;
            ingest(&config, &args.input, &args.out)
        }
        Command::Datagen(args) => {
            let d = &mut config.datagen;
            d.number_cap = args.number_cap.unwrap_or(d.number_cap);
            d.entity_cap = args.entity_cap.unwrap_or(d.entity_cap);
            d.offtopic_count = args.offtopic_count.unwrap_or(d.offtopic_count);
            if args.offtopic_endpoint.is_some() || args.offtopic_model.is_some() {
                let llm = d.offtopic_llm.get_or_insert_with(ChatSettings::default);
                llm.endpoint = args.offtopic_endpoint.unwrap_or(llm.endpoint.clone());
                llm.model = args.offtopic_model.unwrap_or(llm.model.clone());
            }
            config.validate()?;
            datagen(&config, &args.input, &args.out)
        }
        Command::Respond(args) => {
            apply_critic_args(&mut config, &args.critics);
            let g = &mut config.generation;
            g.endpoint = args.endpoint.unwrap_or(g.endpoint.clone());
            g.model_name = args.model.unwrap_or(g.model_name.clone());
            g.temperature = args.temperature.unwrap_or(g.temperature);
            g.max_rounds = args.max_rounds.unwrap_or(g.max_rounds);
            g.verify |= args.verify;
            g.parallelism = config.parallelism;
            config.validate()?;
            respond(&config, &args.input, &args.out)
        }
        Command::Critique(args) => {
            apply_critic_args(&mut config, &args.critics);
            config.validate()?;
            critique(&config, &args.input, &args.out)
        }
        Command::Eval(args) => {
            let e = &mut config.eval;
            if args.judge_endpoint.is_some() || args.judge_model.is_some() {
                let judge = e.judge.get_or_insert_with(ChatSettings::default);
                judge.endpoint = args.judge_endpoint.unwrap_or(judge.endpoint.clone());
                judge.model = args.judge_model.unwrap_or(judge.model.clone());
            }
            e.gamma = args.gamma.unwrap_or(e.gamma);
            if e.judge.is_none() {
                return Err(config_err("eval needs a judge: pass --judge-endpoint or set [eval.judge]"));
            }
            if !(e.gamma > 0.0) {
                return Err(config_err("eval.gamma must be positive"));
            }
            config.validate()?;
            eval(&config, &args.input, &args.out)
        }
        Command::Bench(args) => {
            apply_critic_args(&mut config, &args.critics);
            let b = &mut config.bench;
            b.items = args.items.unwrap_or(b.items);
            if args.baseline_endpoint.is_some() || args.baseline_model.is_some() {
                let llm = b.baseline_llm.get_or_insert_with(ChatSettings::default);
                llm.endpoint = args.baseline_endpoint.unwrap_or(llm.endpoint.clone());
                llm.model = args.baseline_model.unwrap_or(llm.model.clone());
            }
            config.validate()?;
            bench(&config, args.input.as_deref(), args.evidence_file.as_deref(), args.mode, &args.out)
        }
    }
}

fn ingest(config: &RunConfig, input: &InputArgs, out: &Path) -> Result<()> {
    let mut record = RunRecord::start("ingest", out, config)?;
    let (articles, rejected) = load_input(input, config, out)?;
    record.count("rejected", rejected);
    record.count("articles", articles.len());
    if articles.is_empty() {
        bail!("no articles left after loading and filtering {}", input.input.display());
    }
    let stats = dataset_stats(&articles, tagger(config)?.as_deref())?;
    write_json(&out.join("stats.json"), &stats)?;
    let [a, b, c] = config.data.split;
    let parts = split(&articles, (a, b, c), config.seed)?;
    for (name, part) in [("train", &parts.train), ("dev", &parts.dev), ("test", &parts.test)] {
        let n = write_jsonl(&out.join(format!("{name}.jsonl")), part.iter())?;
        record.count(name, n);
    }
    log::info!("{} articles: {} train, {} dev, {} test", articles.len(), parts.train.len(), parts.dev.len(), parts.test.len());
    record.finish("ok")
}

fn datagen(config: &RunConfig, input: &InputArgs, out: &Path) -> Result<()> {
    let out_dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut record = RunRecord::start("datagen", &out_dir, config)?;
    let (articles, rejected) = load_input(input, config, &out_dir)?;
    record.count("rejected", rejected);
    let llm = match &config.datagen.offtopic_llm {
        Some(s) => Some(chat_client(s.clone())?),
        None => {
            log::info!("no off-topic endpoint configured; skipping topic instances");
            None
        }
    };
    let tagger = tagger(config)?;
    let results = generate_batch(
        &articles,
        &config.datagen.options(),
        tagger.as_deref(),
        llm.as_ref().map(|c| c as &dyn ChatClient),
        config.parallelism,
    );
    let mut instances = Vec::new();
    let mut failures = Vec::new();
    for (article, result) in articles.iter().zip(results) {
        match result {
            Ok(r) => {
                for w in &r.warnings {
                    log::warn!("{w}");
                }
                instances.extend(r.instances);
            }
            Err(e) => failures.push(json!({ "id": article.id(), "error": e.to_string() })),
        }
    }
    let written = emit_jsonl(&instances, &mut create(out)?)?;
    record.count("articles", articles.len());
    record.count("instances", written);
    record.count("failed_articles", failures.len());
    if !failures.is_empty() {
        write_jsonl(&out_dir.join("datagen-failures.jsonl"), &failures)?;
        record.finish("partial")?;
        bail!("{} of {} articles failed; see datagen-failures.jsonl", failures.len(), articles.len());
    }
    log::info!("wrote {written} instances to {}", out.display());
    record.finish("ok")
}

fn respond(config: &RunConfig, input: &InputArgs, out: &Path) -> Result<()> {
    let mut record = RunRecord::start("respond", out, config)?;
    let (articles, rejected) = load_input(input, config, out)?;
    record.count("rejected", rejected);
    let templates = match &config.prompts_dir {
        Some(dir) => PromptTemplates::load_dir(dir).map_err(|e| config_err(e.to_string()))?,
        None => PromptTemplates::default(),
    };
    let prompts = config.generation.prompt_builder(templates);
    let llm = chat_client(config.generation.chat_settings())?;
    let panel = panel(config)?;
    let generator = Generator {
        prompts: &prompts,
        llm: &llm,
        critics: &panel,
        max_rounds: config.generation.max_rounds,
        verify: config.generation.verify,
    };
    let results = generator.generate_batch(&articles, config.parallelism);
    let (mut traces, mut responses, mut failures) = (Vec::new(), Vec::new(), Vec::new());
    for (article, result) in articles.iter().zip(results) {
        match result {
            Ok(trace) => {
                if let Some(r) = trace.response() {
                    responses.push(ScoringItem {
                        id: article.id().to_string(),
                        claim: article.claim().to_string(),
                        evidence: article.evidence().to_string(),
                        response: r.text.clone(),
                    });
                }
                traces.push(trace);
            }
            Err(f) => failures.push(json!({ "id": article.id(), "error": f.error.to_string(), "trace": f.trace })),
        }
    }
    record.count("articles", articles.len());
    record.count("generated", write_jsonl(&out.join("traces.jsonl"), &traces)?);
    write_jsonl(&out.join("responses.jsonl"), &responses)?;
    record.count("llm_calls", traces.iter().map(|t| t.llm_calls).sum::<usize>());
    record.count("refined", traces.iter().filter(|t| t.rounds > 0).count());
    record.count("failed", failures.len());
    if !failures.is_empty() {
        write_jsonl(&out.join("failures.jsonl"), &failures)?;
        record.finish("partial")?;
        bail!("{} of {} articles failed; see failures.jsonl", failures.len(), articles.len());
    }
    record.finish("ok")
}

fn critique(config: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let mut record = RunRecord::start("critique", out, config)?;
    let items: Vec<ScoringItem> = read_jsonl(input)?;
    let panel = panel(config)?;
    let mut rows = Vec::with_capacity(items.len());
    let mut negative = 0;
    for item in &items {
        let agg = panel.run(&item.claim, &item.evidence, &item.response).with_context(|| format!("critiquing {}", item.id))?;
        negative += usize::from(!agg.all_positive);
        rows.push(json!({ "id": item.id, "critique": agg }));
    }
    record.count("responses", write_jsonl(&out.join("critiques.jsonl"), &rows)?);
    record.count("negative", negative);
    record.finish("ok")
}

fn eval(config: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let mut record = RunRecord::start("eval", out, config)?;
    let items: Vec<ScoringItem> = read_jsonl(input)?;
    let templates = match &config.eval.templates_dir {
        Some(dir) => JudgeTemplates::load_dir(dir).map_err(|e| config_err(e.to_string()))?,
        None => JudgeTemplates::default(),
    };
    let judge = chat_client(config.eval.judge.clone().expect("checked before"))?;
    let options = ScoringOptions { gamma: config.eval.gamma, retries: config.eval.retries };
    let tagger = tagger(config)?;
    let results = score_batch(&judge, &templates, &items, &options, tagger.as_deref(), config.parallelism);
    let (mut reports, mut unscored) = (Vec::new(), Vec::new());
    for (item, result) in items.iter().zip(results) {
        match result {
            Ok(r) => reports.push(r),
            Err(e) => unscored.push(json!({ "id": item.id, "error": e.to_string() })),
        }
    }
    write_jsonl(&out.join("metrics.jsonl"), &reports)?;
    let summary = summarize(&reports, unscored.len());
    write_json(&out.join("summary.json"), &summary)?;
    if !unscored.is_empty() {
        write_jsonl(&out.join("unscored.jsonl"), &unscored)?;
    }
    record.count("scored", reports.len());
    record.count("unscored", unscored.len());
    record.finish("ok")
}

fn example_workload() -> Vec<FactCheckArticle> {
    let article = FactCheckArticle::new(
        "example",
        "122,000 people sleeping rough.",
        "Official figures show that 122,494 people were experiencing homelessness, only 7,636 of those people were sleeping rough.",
        Some("only 7,636 people were sleeping rough.".into()),
        VeracityLabel::False,
        Provenance::default(),
    );
    vec![article.expect("built-in example is valid")]
}

fn bench(config: &RunConfig, input: Option<&Path>, evidence: Option<&Path>, mode: BenchMode, out: &Path) -> Result<()> {
    let mut record = RunRecord::start("bench", out, config)?;
    let articles = match input {
        Some(path) => {
            let args = InputArgs { input: path.to_path_buf(), evidence_file: evidence.map(Path::to_path_buf), labels: None };
            load_input(&args, config, out)?.0
        }
        None => example_workload(),
    };
    if articles.is_empty() {
        bail!("benchmark workload is empty");
    }
    let workload: Vec<CritiqueRequest> = articles
        .iter()
        .cycle()
        .take(config.bench.items)
        .map(|a| CritiqueRequest {
            element_kind: ElementKind::Number,
            claim: a.claim().to_string(),
            evidence: a.evidence().to_string(),
            response: a.explanation().unwrap_or(a.claim()).to_string(),
        })
        .collect();
    let critic_sim = Mode::Simulated { latency: LatencyModel::Fixed { ms: config.bench.critic_latency_ms } };
    let baseline_sim = Mode::Simulated { latency: LatencyModel::Fixed { ms: config.bench.baseline_latency_ms } };
    let mut results: Vec<ThroughputResult> = Vec::new();
    match mode {
        BenchMode::Simulated => {
            results.push(measure_throughput(&mut IdleSubject("critique-model".into()), &workload, &critic_sim)?);
            results.push(measure_throughput(&mut IdleSubject("self-feedback".into()), &workload, &baseline_sim)?);
        }
        BenchMode::Measured => {
            let panel = panel(config)?;
            let name = format!("{:?}-critics", config.generation.critic_mode).to_lowercase();
            results.push(measure_throughput(&mut CritiqueSubject { name, panel: &panel }, &workload, &Mode::Measured)?);
            match &config.bench.baseline_llm {
                Some(settings) => {
                    let llm = chat_client(settings.clone())?;
                    results.push(measure_throughput(&mut SelfFeedbackSubject::new(&llm), &workload, &Mode::Measured)?);
                }
                None => {
                    results.push(measure_throughput(&mut IdleSubject("self-feedback".into()), &workload, &baseline_sim)?)
                }
            }
        }
    }
    for r in &results {
        log::info!("{r}");
    }
    let ratio = results[0].rate / results[1].rate;
    write_json(&out.join("throughput.json"), &json!({ "results": results, "rate_ratio": ratio }))?;
    record.count("items", workload.len());
    record.count("rate_ratio", ratio);
    record.finish("ok")
}
