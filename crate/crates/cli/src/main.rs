use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use stallkit::config::{parse_kv, StrategyConfig};
use stallkit::corpusgen::{self, load_tasks, save_tasks, training_texts, CompletionTask, GenConfig};
use stallkit::evalkit::bench::{deterministic_json, latency_table, metrics_table, run_bench, to_json, BenchRun};
use stallkit::lm::ngram::{DEFAULT_ALPHA, DEFAULT_ORDER};
use stallkit::lm::{serve, train_ngram, LanguageModel, LmError, NGramModel, RemoteModel};
use stallkit::pipeline::{complete, Perturbation, RepoContext};
use stallkit::repo_index::{build_index, IndexError, RepoSnapshot, SymbolIndex};

const BACKEND_ENV: &str = "STALLKIT_BACKEND_URL";
const INDEX_FILE: &str = "index.json";
const MODEL_FILE: &str = "model.json";

#[derive(Parser)]
#[command(name = "stallkit", version, about = "Repository-level code completion with static analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the symbol index of a repository.
    Index {
        repo: PathBuf,
        /// Output file [default: <repo>/index.json].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the n-gram backend on a repository.
    Train {
        repo: PathBuf,
        /// Tasks whose unseen ground-truth lines are held out.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Output file [default: <repo>/model.json].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Complete one task and print the predicted line.
    Complete {
        /// Repository directory holding index.json and model.json.
        #[arg(long)]
        repo: PathBuf,
        /// JSONL task file.
        #[arg(long)]
        task: PathBuf,
        /// Task to run [default: the first in the file].
        #[arg(long)]
        task_id: Option<String>,
        /// Print the prompt segments before the prediction.
        #[arg(long)]
        dump_prompt: bool,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Run strategy combinations over a task file and report metrics.
    Bench {
        /// JSONL task file.
        #[arg(long)]
        tasks: PathBuf,
        /// Directory with one subdirectory per repository.
        #[arg(long)]
        repos: PathBuf,
        /// Combination such as `prompt-f,decode`; repeatable.
        #[arg(long)]
        combo: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Only tasks whose ground truth is held out of training.
        #[arg(long)]
        unseen_only: bool,
        #[arg(long)]
        drop_rate: Option<f64>,
        #[arg(long)]
        noise_rate: Option<f64>,
        #[arg(long, default_value_t = 0)]
        perturb_seed: u64,
        /// Write the full JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write the report with timing fields zeroed here.
        #[arg(long)]
        deterministic_json: Option<PathBuf>,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Generate a synthetic corpus of repositories and tasks.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        repos: usize,
        #[arg(long, default_value_t = 8)]
        tasks_per_repo: usize,
        #[arg(long, default_value_t = 2)]
        distractors: usize,
        #[arg(long, default_value_t = 0.5)]
        unique_fraction: f64,
        #[arg(long, default_value_t = 0.8)]
        unseen_fraction: f64,
    },
    /// Serve a trained model over HTTP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8731")]
        addr: String,
    },
}

#[derive(Args, Clone)]
struct StrategyArgs {
    #[arg(long)]
    prompt_f: bool,
    #[arg(long)]
    prompt_t: bool,
    #[arg(long)]
    decode: bool,
    #[arg(long)]
    post: bool,
    #[arg(long)]
    rag: bool,
    #[arg(long)]
    allow_slow: bool,
    /// key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    in_file_tokens: Option<usize>,
    #[arg(long)]
    per_crossfile_tokens: Option<usize>,
    #[arg(long)]
    retrieved_k: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
}

enum CliError {
    Input(String),
    Missing(String),
    Backend(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Backend(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Missing(m) | CliError::Backend(m) => m,
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::BackendUnavailable(_) => CliError::Backend(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))
}

impl StrategyArgs {
    /// Defaults, then the config file, then flags.
    fn base(&self) -> Result<StrategyConfig> {
        let mut c = StrategyConfig::default();
        if let Some(path) = &self.config {
            for (k, v) in parse_kv(&read_file(path)?).map_err(input)? {
                c.set(&k, &v).map_err(input)?;
            }
        }
        let budgets = [
            ("in_file_tokens", self.in_file_tokens),
            ("per_crossfile_tokens", self.per_crossfile_tokens),
            ("retrieved_k", self.retrieved_k),
            ("max_new_tokens", self.max_new_tokens),
            ("beam_width", self.beam_width),
        ];
        for (k, v) in budgets {
            if let Some(v) = v {
                c.set(k, &v.to_string()).map_err(input)?;
            }
        }
        c.allow_slow |= self.allow_slow;
        Ok(c)
    }

    fn flags(&self) -> [bool; 5] {
        [self.prompt_f, self.prompt_t, self.decode, self.post, self.rag]
    }

    fn resolve(&self) -> Result<StrategyConfig> {
        let mut c = self.base()?;
        let [pf, pt, decode, post, rag] = self.flags();
        c.prompt_f |= pf;
        c.prompt_t |= pt;
        c.decode |= decode;
        c.post |= post;
        c.rag |= rag;
        c.validate().map_err(input)?;
        Ok(c)
    }
}

fn remote_backend() -> Result<Option<Arc<dyn LanguageModel>>> {
    match std::env::var(BACKEND_ENV) {
        Ok(url) if !url.is_empty() => Ok(Some(Arc::new(RemoteModel::connect(&url)?))),
        _ => Ok(None),
    }
}

fn load_model(path: &Path) -> Result<NGramModel> {
    NGramModel::from_json(&read_file(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load_index(path: &Path) -> Result<SymbolIndex> {
    SymbolIndex::from_json(&read_file(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load_repo(dir: &Path) -> Result<RepoSnapshot> {
    if !dir.is_dir() {
        return Err(CliError::Missing(format!("repository directory {} not found", dir.display())));
    }
    Ok(RepoSnapshot::load(dir)?)
}

fn read_tasks(path: &Path) -> Result<Vec<CompletionTask>> {
    if !path.is_file() {
        return Err(CliError::Missing(format!("task file {} not found", path.display())));
    }
    load_tasks(path).map_err(input)
}

fn cmd_index(repo: &Path, out: Option<PathBuf>) -> Result<()> {
    let snapshot = load_repo(repo)?;
    let index = build_index(&snapshot)?;
    let out = out.unwrap_or_else(|| repo.join(INDEX_FILE));
    write_file(&out, &index.to_json())?;
    let skipped = index.skipped().count();
    println!(
        "indexed {} classes from {} files ({} skipped) in {:.6}s -> {}",
        index.len(),
        snapshot.files().len(),
        skipped,
        index.build_time_s,
        out.display()
    );
    Ok(())
}

fn cmd_train(repo: &Path, tasks: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let snapshot = load_repo(repo)?;
    let tasks = match tasks {
        Some(p) => read_tasks(&p)?,
        None => Vec::new(),
    };
    let texts = training_texts(&snapshot, &tasks);
    let model = train_ngram(&texts, DEFAULT_ORDER, DEFAULT_ALPHA)?;
    let out = out.unwrap_or_else(|| repo.join(MODEL_FILE));
    write_file(&out, &model.to_json())?;
    println!("trained order-{} model, vocabulary {} -> {}", model.order(), model.vocab().len(), out.display());
    Ok(())
}

fn cmd_complete(repo_dir: &Path, task_file: &Path, task_id: Option<String>, dump: bool, strategy: &StrategyArgs) -> Result<()> {
    let config = strategy.resolve()?;
    let tasks = read_tasks(task_file)?;
    let task = match &task_id {
        Some(id) => tasks.iter().find(|t| &t.task_id == id),
        None => tasks.first(),
    }
    .ok_or_else(|| input(format!("no task {} in {}", task_id.as_deref().unwrap_or(""), task_file.display())))?;
    let snapshot = load_repo(repo_dir)?;
    let index = load_index(&repo_dir.join(INDEX_FILE))?;
    let model: Arc<dyn LanguageModel> = match remote_backend()? {
        Some(m) => m,
        None => Arc::new(load_model(&repo_dir.join(MODEL_FILE))?),
    };
    let ctx = RepoContext::new(snapshot, index, model);
    let out = complete(task, &ctx, &config, None).map_err(|e| match e {
        stallkit::pipeline::PipelineError::Lm(e) => CliError::from(e),
        stallkit::pipeline::PipelineError::Decode(stallkit::decoder::DecodeError::Lm(e)) => CliError::from(e),
        e => input(e),
    })?;
    if dump {
        for seg in &out.bundle.segments {
            println!("=== {:?} ({} tokens)", seg.kind, seg.token_count);
            println!("{}", seg.text);
        }
        println!("=== prediction");
    }
    println!("{}", out.prediction);
    Ok(())
}

fn bench_configs(combos: &[String], strategy: &StrategyArgs) -> Result<Vec<StrategyConfig>> {
    let base = strategy.base()?;
    let with_budgets = |c: StrategyConfig| StrategyConfig {
        prompt_f: c.prompt_f,
        prompt_t: c.prompt_t,
        decode: c.decode,
        post: c.post,
        rag: c.rag,
        ..base
    };
    let mut out = Vec::new();
    for combo in combos {
        out.push(with_budgets(StrategyConfig::parse_combo(combo).map_err(input)?));
    }
    let enabled = strategy.flags();
    if enabled.iter().any(|&b| b) {
        // Every matrix combination that uses only the enabled strategies.
        for c in StrategyConfig::matrix() {
            let used = [c.prompt_f, c.prompt_t, c.decode, c.post, c.rag];
            if used.iter().zip(enabled).all(|(&u, e)| !u || e) {
                out.push(with_budgets(c));
            }
        }
    } else if combos.is_empty() {
        out.extend(StrategyConfig::matrix().into_iter().map(with_budgets));
    }
    let mut seen = Vec::new();
    out.retain(|c| {
        let fresh = !seen.contains(&c.label());
        seen.push(c.label());
        fresh
    });
    for c in &out {
        c.validate().map_err(input)?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    task_file: &Path,
    repos_dir: &Path,
    combos: &[String],
    jobs: usize,
    unseen_only: bool,
    perturb: Option<Perturbation>,
    json: Option<PathBuf>,
    det_json: Option<PathBuf>,
    strategy: &StrategyArgs,
) -> Result<()> {
    let configs = bench_configs(combos, strategy)?;
    let mut tasks = read_tasks(task_file)?;
    if unseen_only {
        tasks.retain(|t| t.meta.unseen);
    }
    if tasks.is_empty() {
        return Err(input("no tasks to run"));
    }
    let remote = remote_backend()?;
    let names: Vec<String> = tasks
        .iter()
        .map(|t| t.repo.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut contexts = Vec::new();
    for name in &names {
        let dir = repos_dir.join(name);
        let snapshot = load_repo(&dir)?;
        let index = match dir.join(INDEX_FILE) {
            p if p.is_file() => load_index(&p)?,
            _ => build_index(&snapshot)?,
        };
        let model: Arc<dyn LanguageModel> = match (&remote, dir.join(MODEL_FILE)) {
            (Some(m), _) => m.clone(),
            (None, p) if p.is_file() => Arc::new(load_model(&p)?),
            (None, _) => Arc::new(train_ngram(&training_texts(&snapshot, &tasks), DEFAULT_ORDER, DEFAULT_ALPHA)?),
        };
        contexts.push(RepoContext::new(snapshot, index, model));
    }
    let mut runs: Vec<BenchRun> = Vec::new();
    for config in &configs {
        let run = run_bench(&tasks, &contexts, config, perturb.as_ref(), jobs);
        for item in run.items.iter().filter(|i| i.error.is_some()) {
            eprintln!("{} [{}]: {}", item.task_id, run.report.label, item.error.as_deref().unwrap_or_default());
        }
        runs.push(run);
    }
    let reports: Vec<_> = runs.iter().map(|r| r.report.clone()).collect();
    print!("{}", metrics_table(&reports));
    println!();
    print!("{}", latency_table(&reports));
    if let Some(path) = json {
        write_file(&path, &to_json(&runs))?;
    }
    if let Some(path) = det_json {
        write_file(&path, &deterministic_json(&runs))?;
    }
    Ok(())
}

fn cmd_gen(out: &Path, cfg: &GenConfig) -> Result<()> {
    if cfg.n_repos == 0 {
        return Err(input("--repos must be at least 1"));
    }
    for f in [cfg.unique_fraction, cfg.unseen_fraction] {
        if !(0.0..=1.0).contains(&f) {
            return Err(input("fractions must lie in [0, 1]"));
        }
    }
    let corpus = corpusgen::generate(cfg);
    for repo in &corpus.repos {
        repo.write_to(&out.join("repos").join(&repo.name))
            .map_err(|e| input(format!("{}: {e}", out.display())))?;
    }
    save_tasks(&corpus.tasks, &out.join("tasks.jsonl")).map_err(input)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &corpus.tasks {
        *counts.entry("tasks").or_default() += 1;
        *counts.entry("unique_valid").or_default() += usize::from(t.meta.unique_valid);
        *counts.entry("unseen").or_default() += usize::from(t.meta.unseen);
    }
    println!("{} repos, {:?} -> {}", corpus.repos.len(), counts, out.display());
    Ok(())
}

fn cmd_serve(model: &Path, addr: &str) -> Result<()> {
    let model = load_model(model)?;
    let handle = serve(Arc::new(model), addr).map_err(|e| CliError::Backend(format!("{addr}: {e}")))?;
    println!("serving on {}", handle.url());
    handle.wait();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index { repo, out } => cmd_index(&repo, out),
        Command::Train { repo, tasks, out } => cmd_train(&repo, tasks, out),
        Command::Complete {
            repo,
            task,
            task_id,
            dump_prompt,
            strategy,
        } => cmd_complete(&repo, &task, task_id, dump_prompt, &strategy),
        Command::Bench {
            tasks,
            repos,
            combo,
            jobs,
            unseen_only,
            drop_rate,
            noise_rate,
            perturb_seed,
            json,
            deterministic_json,
            strategy,
        } => {
            let perturb = match (drop_rate, noise_rate) {
                (None, None) => None,
                (d, n) => {
                    let p = Perturbation {
                        drop_rate: d.unwrap_or(0.0),
                        noise_rate: n.unwrap_or(0.0),
                        seed: perturb_seed,
                    };
                    if !(0.0..=1.0).contains(&p.drop_rate) || !(0.0..=1.0).contains(&p.noise_rate) {
                        return Err(input("perturbation rates must lie in [0, 1]"));
                    }
                    Some(p)
                }
            };
            cmd_bench(&tasks, &repos, &combo, jobs, unseen_only, perturb, json, deterministic_json, &strategy)
        }
        Command::Gen {
            out,
            seed,
            repos,
            tasks_per_repo,
            distractors,
            unique_fraction,
            unseen_fraction,
        } => cmd_gen(
            &out,
            &GenConfig {
                seed,
                n_repos: repos,
                tasks_per_repo,
                distractors,
                unique_fraction,
                unseen_fraction,
            },
        ),
        Command::Serve { model, addr } => cmd_serve(&model, &addr),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
