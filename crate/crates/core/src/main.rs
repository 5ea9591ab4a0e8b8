use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use factorlogic::agent::{
    AgentConfig, AgentError, Agents, CompletionBackend, HttpBackend, HttpConfig, ScriptedBackend,
};
use factorlogic::backtest::{render_table, BacktestEngine, Split, StrategyConfig};
use factorlogic::config::{BackendKind, RunConfig};
use factorlogic::dsl::{evaluate, parse};
use factorlogic::logic::{canonicalize_fields, compile, write_library, CanonicalRecord, LibraryEntry, MarketLogicStruct};
use factorlogic::loops::{final_evaluation, outer_loop, write_json, PanelEvaluator, RunDir};
use factorlogic::panel::{filter_universe, ingest_csv, ColumnSchema, DateInterval, Panel, PanelError, SplitSpec};
use factorlogic::synthetic::{default_splits, seed_library, synthetic_fixtures, synthetic_panel, SyntheticConfig};

/// Exit 2: the input could not be understood.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    Usage(e.to_string()).into()
}

#[derive(Parser)]
#[command(name = "factorlogic", version, about = "Logic-guided alpha factor search")]
struct Cli {
    /// Log filter, e.g. `info` or `factorlogic=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load an OHLCV CSV, drop short-lived instruments, write the aligned panel.
    Ingest {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_days: usize,
    },
    /// Print one date's cross-section of a factor expression.
    Eval {
        expression: String,
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long)]
        json: bool,
    },
    /// Single-factor backtest on one split.
    Backtest(BacktestArgs),
    /// Canonicalize a logic record and print its constraint set.
    Compile {
        record: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
    /// Turn factor formulas into market logics.
    Mine {
        /// One formula per line, optionally `id<TAB>formula`.
        formulas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Full optimization from a TOML run config.
    Run {
        config: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Also evaluate the best factor on the test split.
        #[arg(long = "final")]
        final_run: bool,
    },
    /// Write a synthetic panel, seed library, fixtures and run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        dates: usize,
        #[arg(long, default_value_t = 60)]
        instruments: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct BacktestArgs {
    expression: String,
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    train: DateInterval,
    #[arg(long)]
    validation: DateInterval,
    #[arg(long)]
    test: DateInterval,
    #[arg(long, value_enum, default_value_t = SplitArg::Validation)]
    split: SplitArg,
    #[arg(long = "final")]
    final_run: bool,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    #[arg(long, default_value_t = 5)]
    n_drop: usize,
    #[arg(long, default_value_t = 0.0005)]
    buy_cost: f64,
    #[arg(long, default_value_t = 0.0015)]
    sell_cost: f64,
    #[arg(long, default_value_t = 252)]
    annualization: u32,
    #[arg(long)]
    liquidate_at_end: bool,
    /// Emit the canonical report record instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Args)]
struct BackendArgs {
    /// Scripted fixture file; without it the HTTP backend is used.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable that holds the API credential.
    #[arg(long)]
    credential_env: Option<String>,
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.6}"))
}

fn panel_error(e: PanelError) -> anyhow::Error {
    match e {
        PanelError::Io(_) => e.into(),
        _ => usage(e),
    }
}

fn load_panel(path: &Path) -> anyhow::Result<Panel> {
    ingest_csv(path, &ColumnSchema::default()).map_err(panel_error)
}

fn cmd_ingest(csv: &Path, out: &Path, min_days: usize) -> anyhow::Result<()> {
    let panel = load_panel(csv)?;
    let before = panel.n_instruments();
    let panel = filter_universe(&panel, min_days)?;
    panel.export_csv(out)?;
    println!(
        "{} dates x {} instruments ({} dropped) -> {}",
        panel.n_dates(),
        panel.n_instruments(),
        before - panel.n_instruments(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(expression: &str, panel: &Path, date: NaiveDate, as_json: bool) -> anyhow::Result<()> {
    let expr = parse(expression).map_err(usage)?;
    let panel = load_panel(panel)?;
    let t = panel.date_index(date).ok_or_else(|| usage(format!("date {date} is not in the panel")))?;
    let values = evaluate(&expr, &panel);
    if as_json {
        let row: Vec<_> = panel
            .instruments()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                json!({"symbol": s, "value": values.get(t, i)})
            })
            .collect();
        println!("{}", json!({"expression": expr.to_string(), "date": date, "values": row}));
    } else {
        for (i, s) in panel.instruments().iter().enumerate() {
            println!("{s}\t{}", fmt_value(values.get(t, i)));
        }
    }
    Ok(())
}

fn cmd_backtest(a: &BacktestArgs) -> anyhow::Result<()> {
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
        SplitArg::Test => Split::Test,
    };
    if split == Split::Test && !a.final_run {
        return Err(usage("the test split needs --final"));
    }
    let expr = parse(&a.expression).map_err(usage)?;
    let spec = SplitSpec { train: a.train, validation: a.validation, test: a.test };
    let panel = load_panel(&a.panel)?;
    let splits = spec.resolve(&panel).map_err(usage)?;
    let strategy = StrategyConfig {
        top_k: a.top_k,
        n_drop: a.n_drop,
        buy_cost: a.buy_cost,
        sell_cost: a.sell_cost,
        annualization: a.annualization,
        liquidate_at_end: a.liquidate_at_end,
    };
    let engine = BacktestEngine::new(panel, splits, strategy).map_err(usage)?;
    let visible = engine.visible_panel(split, a.final_run)?;
    let scores = evaluate(&expr, &visible);
    let report = engine.report(split, &scores, a.final_run)?;
    if a.json {
        println!("{}", report.to_record());
    } else {
        print!("{}", render_table(&[(&expr.to_string(), &report)]));
    }
    Ok(())
}

fn read_struct(path: &Path) -> anyhow::Result<MarketLogicStruct> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let parsed = if value.get("schema_version").is_some() {
        MarketLogicStruct::from_record(text.trim())
    } else {
        canonicalize_fields(&value)
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_compile(record: &Path, pretty: bool) -> anyhow::Result<()> {
    let h = read_struct(record)?;
    let gamma = compile(&h).map_err(usage)?;
    if pretty {
        println!("{}", serde_json::to_string_pretty(&gamma.to_agent_json())?);
    } else {
        println!("{}", gamma.to_record());
    }
    Ok(())
}

fn http_backend(http: HttpConfig) -> anyhow::Result<Box<dyn CompletionBackend>> {
    Ok(Box::new(HttpBackend::from_env(http)?))
}

fn backend_from_args(a: &BackendArgs) -> anyhow::Result<Box<dyn CompletionBackend>> {
    if let Some(f) = &a.fixtures {
        return Ok(Box::new(ScriptedBackend::from_file(f).map_err(usage)?));
    }
    let mut http = HttpConfig::default();
    if let Some(e) = &a.endpoint {
        http.endpoint = e.clone();
    }
    if let Some(m) = &a.model {
        http.model = m.clone();
    }
    if let Some(c) = &a.credential_env {
        http.credential_env = c.clone();
    }
    http_backend(http)
}

fn cmd_mine(formulas: &Path, out: &Path, backend: &BackendArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(formulas).with_context(|| format!("reading {}", formulas.display()))?;
    let backend = backend_from_args(backend)?;
    let agents = Agents::new(backend.as_ref(), AgentConfig::default());
    let mut entries = Vec::new();
    let lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    for (k, line) in lines.enumerate() {
        let (id, formula) = match line.split_once('\t') {
            Some((id, f)) => (id.trim().to_string(), f.trim()),
            None => (format!("mined-{:03}", k + 1), line),
        };
        match agents.mine_logic(&id, formula) {
            Ok(logic) => entries.push(LibraryEntry::bare(logic)),
            Err(AgentError::Precondition(msg)) => tracing::warn!(%id, %msg, "formula skipped"),
            Err(e) => return Err(e.into()),
        }
    }
    write_library(out, &entries).with_context(|| format!("writing {}", out.display()))?;
    println!("{} logics -> {}", entries.len(), out.display());
    Ok(())
}

fn cmd_run(path: &Path, resume: bool, seed: Option<u64>, final_run: bool) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(path).map_err(usage)?;
    let raw_text = fs::read_to_string(path)?;
    let mut snapshot = RunConfig::from_toml(&raw_text, &path.display().to_string()).map_err(usage)?;
    if let Some(s) = seed {
        cfg.seed = s;
        snapshot.seed = s;
    }
    cfg.backend.http.seed = Some(cfg.seed);

    let run = RunDir::create(&cfg.output_dir)?;
    if run.state_path().exists() && !resume {
        bail!("{} already holds a run; pass --resume to continue it", run.root().display());
    }
    if !resume {
        run.save_config(&snapshot)?;
    }

    let panel = filter_universe(&ingest_csv(&cfg.data.panel, &cfg.data.columns).map_err(panel_error)?, cfg.data.min_days)?;
    let splits = cfg.splits.spec().map_err(usage)?.resolve(&panel).map_err(usage)?;
    let library = factorlogic::logic::read_library(&cfg.data.library).map_err(usage)?;
    let evaluator = PanelEvaluator::new(panel, splits, cfg.strategy.clone(), cfg.loops.mode, cfg.loops.ridge_lambda)?;
    let backend: Box<dyn CompletionBackend> = match cfg.backend.kind {
        BackendKind::Scripted => {
            let f = cfg.backend.fixtures.as_ref().ok_or_else(|| anyhow!("scripted backend needs fixtures"))?;
            Box::new(ScriptedBackend::from_file(f).map_err(usage)?)
        }
        BackendKind::Http => http_backend(cfg.backend.http.clone())?,
    };
    let agents = Agents::new(backend.as_ref(), cfg.agent);

    let state = outer_loop(library, &agents, &evaluator, &cfg.loops, Some(&run))?;
    let best = state.best_evidence().and_then(|e| Some((e, e.best_candidate()?)));
    match best {
        Some((ev, c)) => {
            println!("rounds: {}  best logic: {}  best factor: {}", state.t, ev.logic_id, c.expression);
            if let Some(v) = &c.val {
                print!("{}", render_table(&[("validation", v)]));
            }
        }
        None => println!("rounds: {}  no factor was scored", state.t),
    }
    if final_run {
        let report = final_evaluation(&state, &evaluator, Some(&run), true)?;
        print!("{}", report.table());
    }
    println!("run directory: {}", run.root().display());
    Ok(())
}

fn cmd_synth(out: &Path, dates: usize, instruments: usize, seed: u64) -> anyhow::Result<()> {
    if dates < 20 || instruments < 10 {
        return Err(usage("synth needs at least 20 dates and 10 instruments"));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let panel = synthetic_panel(&SyntheticConfig { dates, instruments, seed, ..SyntheticConfig::default() });
    panel.export_csv(out.join("panel.csv"))?;
    write_library(out.join("library.jsonl"), &seed_library())?;
    write_json(&out.join("fixtures.json"), &synthetic_fixtures())?;

    let s = default_splits(&panel);
    let mut cfg: RunConfig = RunConfig::from_toml(&synth_config_toml(&s), "synth").map_err(usage)?;
    cfg.seed = seed;
    cfg.strategy.top_k = (instruments / 6).max(2);
    cfg.strategy.n_drop = (cfg.strategy.top_k / 5).max(1);
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    println!("synthetic data and run config -> {}", out.display());
    Ok(())
}

fn synth_config_toml(s: &SplitSpec) -> String {
    format!(
        "schema_version = 1\noutput_dir = \"run\"\n\
         [data]\npanel = \"panel.csv\"\nlibrary = \"library.jsonl\"\n\
         [splits]\ntrain = \"{}\"\nvalidation = \"{}\"\ntest = \"{}\"\n\
         [loop]\nt_outer = 3\ncandidates_per_round = 5\n\
         [backend]\nkind = \"scripted\"\nfixtures = \"fixtures.json\"\n",
        s.train, s.validation, s.test
    )
}

fn dispatch(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Ingest { csv, out, min_days } => cmd_ingest(&csv, &out, min_days),
        Cmd::Eval { expression, panel, date, json } => cmd_eval(&expression, &panel, date, json),
        Cmd::Backtest(a) => cmd_backtest(&a),
        Cmd::Compile { record, pretty } => cmd_compile(&record, pretty),
        Cmd::Mine { formulas, out, backend } => cmd_mine(&formulas, &out, &backend),
        Cmd::Run { config, resume, seed, final_run } => cmd_run(&config, resume, seed, final_run),
        Cmd::Synth { out, dates, instruments, seed } => cmd_synth(&out, dates, instruments, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
