use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use perspectives::config::{parse_policies, parse_prefilter, EngineConfig, ProviderSetting};
use perspectives::crowdpipe::{build_crowd_corpus, export_verified, read_proposals, read_ratings, read_verifications, RatingRule};
use perspectives::embed::{EmbeddingIndex, EmbeddingProvider};
use perspectives::engine::{make_provider, Engine};
use perspectives::evalharness::{
    combination_keep_rate, keep_rate_by_magnitude, keep_rates, policy_subsets, read_trial_log, render_kv, render_text,
};
use perspectives::familiarity::{attach_familiarity, read_pageviews, DEFAULT_LAMBDA};
use perspectives::policies::PolicyKind;
use perspectives::rank::{
    compare_variants, labeled_examples, read_training_examples, train, TrainConfig, Variant, DEFAULT_LEARNING_RATE,
    DEFAULT_PASSES,
};
use perspectives::refstore::{
    ingest_dictionary, ingest_knowledge_base, load_corpus, read_dictionary, read_kb_records, save_corpus, KbFilter,
    ReferenceCorpus,
};
use perspectives::serve::{serve, AppState, SelectionLog};

#[derive(Parser)]
#[command(name = "perspectives", version, about = "Numerical perspectives for dollar amounts in text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a reference corpus from knowledge-base dumps and dictionaries.
    Ingest(IngestArgs),
    /// Fit the familiarity model and attach familiarity to a corpus.
    TrainFamiliarity(TrainFamiliarityArgs),
    /// Train the helpfulness model, or compare feature variants.
    TrainRank(TrainRankArgs),
    /// Suggest perspectives for the dollar amounts in a text.
    Suggest(SuggestArgs),
    /// Run crowd proposals, ratings and verifications through the funnel.
    CrowdBuild(CrowdBuildArgs),
    /// Compute keep rates from a trial log.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct EmbeddingArgs {
    /// `builtin` or the URL of an embedding service.
    #[arg(long, default_value = "builtin")]
    provider: String,
    #[arg(long, default_value_t = perspectives::embed::DEFAULT_DIMS)]
    dims: usize,
    /// Embedding cache file; created when missing.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl EmbeddingArgs {
    fn provider(&self) -> anyhow::Result<Arc<dyn EmbeddingProvider>> {
        Ok(make_provider(&ProviderSetting::parse(&self.provider)?, self.dims))
    }

    fn index(&self, provider: &dyn EmbeddingProvider, corpus: &ReferenceCorpus) -> anyhow::Result<EmbeddingIndex> {
        Ok(match &self.embeddings {
            Some(path) => {
                let index = EmbeddingIndex::load_or_build(path, provider, corpus)?;
                index.save(path).with_context(|| format!("writing {}", path.display()))?;
                index
            }
            None => EmbeddingIndex::build(provider, corpus)?,
        })
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Knowledge-base records, one JSON object per line.
    #[arg(long)]
    kb: Vec<PathBuf>,
    /// Tab-separated dictionary with `phrase` and `value` columns.
    #[arg(long)]
    dictionary: Vec<PathBuf>,
    /// Extra knowledge-base property to exclude.
    #[arg(long)]
    exclude: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainFamiliarityArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Tab-separated `wiki_title`, `month`, `monthly_views`.
    #[arg(long)]
    pageviews: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    /// Corpus with familiarity attached.
    #[arg(long)]
    out_corpus: PathBuf,
    #[arg(long)]
    out_model: Option<PathBuf>,
}

#[derive(Args)]
struct TrainRankArgs {
    /// Corpus with familiarity attached.
    #[arg(long)]
    corpus: PathBuf,
    /// Tab-separated training rows.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "v2")]
    variant: Variant,
    #[arg(long, default_value_t = DEFAULT_PASSES)]
    passes: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train all variants on a seeded split and print held-out R².
    #[arg(long)]
    compare: bool,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    #[arg(long, required_unless_present = "compare")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuggestArgs {
    /// Text to annotate; read from stdin when absent.
    #[arg(long)]
    text: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    crowd_corpus: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    familiarity_model: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    population: Option<u64>,
    /// Positive integer or `all`.
    #[arg(long)]
    prefilter_k: Option<String>,
    /// Comma-separated policy names.
    #[arg(long)]
    policies: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CrowdBuildArgs {
    #[arg(long)]
    proposals: PathBuf,
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    verifications: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    helpfulness_weight: f64,
    /// Corpus of verified objects.
    #[arg(long)]
    out: PathBuf,
    /// Every proposal with its status, one JSON object per line.
    #[arg(long)]
    objects: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalFormat {
    Text,
    Kv,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: EvalFormat,
    /// Also print keep rate by order of magnitude.
    #[arg(long)]
    by_magnitude: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    selection_log: Option<PathBuf>,
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::TrainFamiliarity(a) => train_familiarity(a),
        Command::TrainRank(a) => train_rank(a),
        Command::Suggest(a) => suggest(a),
        Command::CrowdBuild(a) => crowd_build(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => run_server(a),
    }
}

fn load(path: &Path) -> anyhow::Result<ReferenceCorpus> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let mut filter = KbFilter::default();
    filter.excluded_properties.extend(a.exclude);
    let mut objects = Vec::new();
    for path in &a.kb {
        let (records, malformed) = read_kb_records(path).with_context(|| format!("reading {}", path.display()))?;
        let (objs, mut report) = ingest_knowledge_base(&records, &filter);
        report.input += malformed;
        report.malformed += malformed;
        eprintln!("{}:\n{report}", path.display());
        objects.extend(objs);
    }
    for path in &a.dictionary {
        let records = read_dictionary(path).with_context(|| format!("reading {}", path.display()))?;
        let objs = ingest_dictionary(&records)?;
        eprintln!("{}: {} dictionary objects", path.display(), objs.len());
        objects.extend(objs);
    }
    objects.sort_by(|a, b| a.id.cmp(&b.id));
    let before = objects.len();
    objects.dedup_by(|a, b| a.id == b.id);
    if objects.len() < before {
        eprintln!("dropped {} duplicate objects", before - objects.len());
    }
    let corpus = ReferenceCorpus::new(objects)?;
    save_corpus(&corpus, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} objects written to {}", corpus.len(), a.out.display());
    Ok(())
}

fn train_familiarity(a: TrainFamiliarityArgs) -> anyhow::Result<()> {
    let corpus = load(&a.corpus)?;
    let pageviews = read_pageviews(&a.pageviews).with_context(|| format!("reading {}", a.pageviews.display()))?;
    let provider = a.embedding.provider()?;
    let index = a.embedding.index(provider.as_ref(), &corpus)?;
    let (updated, model) = attach_familiarity(&corpus, &index, &pageviews, a.lambda, a.seed)?;
    save_corpus(&updated, &a.out_corpus)?;
    if let Some(path) = &a.out_model {
        model.save(path)?;
    }
    println!("training_rows={}", model.training_rows);
    println!("train_r2={:.4}", model.train_r2);
    match model.holdout_r2 {
        Some(r2) => println!("holdout_r2={r2:.4}"),
        None => println!("holdout_r2=n/a"),
    }
    Ok(())
}

fn train_rank(a: TrainRankArgs) -> anyhow::Result<()> {
    let corpus = load(&a.corpus)?;
    let rows = read_training_examples(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let provider = a.embedding.provider()?;
    let index = a.embedding.index(provider.as_ref(), &corpus)?;
    let examples = labeled_examples(&rows, &corpus, &index, provider.as_ref(), a.variant)?;
    let config = TrainConfig {
        passes: a.passes,
        learning_rate: a.learning_rate,
        seed: a.seed,
    };
    if a.compare {
        print!("{}", compare_variants(&examples, a.split_seed, config)?);
    }
    if let Some(out) = &a.out {
        let model = train(&examples, a.variant, config)?;
        model.save(out).with_context(|| format!("writing {}", out.display()))?;
        println!("{} model trained on {} examples, written to {}", a.variant, examples.len(), out.display());
    }
    Ok(())
}

fn suggest_config(a: &SuggestArgs) -> anyhow::Result<EngineConfig> {
    let mut cfg = match &a.config {
        Some(path) => EngineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let mut policies = vec![PolicyKind::RuleBased];
            if a.crowd_corpus.is_some() {
                policies.push(PolicyKind::Crowdsourced);
            }
            if a.corpus.is_some() && a.model.is_some() {
                policies.push(PolicyKind::Contextual);
            }
            EngineConfig {
                policies,
                ..EngineConfig::default()
            }
        }
    };
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            *slot = v.clone();
        }
    };
    set(&mut cfg.corpus, &a.corpus);
    set(&mut cfg.crowd_corpus, &a.crowd_corpus);
    set(&mut cfg.model, &a.model);
    set(&mut cfg.familiarity_model, &a.familiarity_model);
    set(&mut cfg.embeddings, &a.embeddings);
    if let Some(p) = &a.provider {
        cfg.embedding_provider = ProviderSetting::parse(p)?;
    }
    if let Some(p) = a.population {
        cfg.population = p;
    }
    if let Some(k) = &a.prefilter_k {
        cfg.prefilter_k = parse_prefilter(k)?;
    }
    if let Some(p) = &a.policies {
        cfg.policies = parse_policies(p)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn suggest(a: SuggestArgs) -> anyhow::Result<()> {
    let cfg = suggest_config(&a)?;
    let text = match &a.text {
        Some(t) => t.clone(),
        None => std::io::read_to_string(std::io::stdin()).context("reading stdin")?,
    };
    let engine = Engine::from_config(&cfg)?;
    let resp = engine.perspectives(&text)?;
    let mut out = std::io::stdout().lock();
    if a.json {
        serde_json::to_writer_pretty(&mut out, &resp)?;
        writeln!(out)?;
    } else {
        for bundle in &resp.measurements {
            let m = &bundle.measurement;
            writeln!(out, "{} [{}..{}]", m.raw, m.span.start, m.span.end)?;
            for option in &bundle.options {
                writeln!(out, "  {:<13} {}", option.policy.as_str(), option.phrase)?;
            }
        }
    }
    for w in &resp.warnings {
        eprintln!("warning: {} at [{}..{}]: {}", w.policy, w.span.start, w.span.end, w.message);
    }
    Ok(())
}

fn crowd_build(a: CrowdBuildArgs) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&a.helpfulness_weight) {
        bail!("--helpfulness-weight must be between 0 and 1");
    }
    let proposals = read_proposals(&a.proposals).with_context(|| format!("reading {}", a.proposals.display()))?;
    let ratings = read_ratings(&a.ratings).with_context(|| format!("reading {}", a.ratings.display()))?;
    let verifications =
        read_verifications(&a.verifications).with_context(|| format!("reading {}", a.verifications.display()))?;
    let rule = RatingRule {
        helpfulness_weight: a.helpfulness_weight,
    };
    let (objects, report) = build_crowd_corpus(&proposals, &ratings, &verifications, rule);
    let corpus = ReferenceCorpus::new(export_verified(&objects))?;
    save_corpus(&corpus, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.objects {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for o in &objects {
            serde_json::to_writer(&mut file, o)?;
            writeln!(file)?;
        }
        file.flush()?;
    }
    println!("{report}");
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let log = read_trial_log(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let report = keep_rates(&log)?;
    let combos = policy_subsets()
        .iter()
        .map(|s| combination_keep_rate(&log, s))
        .collect::<Result<Vec<_>, _>>()?;
    match a.format {
        EvalFormat::Text => print!("{}", render_text(&report, &combos)),
        EvalFormat::Kv => print!("{}", render_kv(&report, &combos)),
    }
    if a.by_magnitude {
        for policy in PolicyKind::ALL {
            for (decade, rate) in keep_rate_by_magnitude(&log, policy)? {
                println!("by_magnitude.{}.1e{decade}={rate:.4}", policy.as_str());
            }
        }
    }
    Ok(())
}

fn run_server(a: ServeArgs) -> anyhow::Result<()> {
    let mut cfg = EngineConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    if let Some(p) = a.selection_log {
        cfg.selection_log = p;
    }
    let engine = Engine::from_config(&cfg)?;
    let log = SelectionLog::open(&cfg.selection_log)
        .with_context(|| format!("opening selection log {}", cfg.selection_log.display()))?;
    let state = AppState {
        engine: Arc::new(engine),
        log: Arc::new(log),
        max_body_bytes: cfg.max_body_bytes,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.listen)
            .await
            .with_context(|| format!("binding {}", cfg.listen))?;
        eprintln!("listening on {}", listener.local_addr()?);
        serve(listener, state).await?;
        anyhow::Ok(())
    })
}
