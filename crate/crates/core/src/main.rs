use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use spamshield::corpus::{load_labels, load_messages, CorpusSpec, Workspace};
use spamshield::experiment::{run_experiment, Experiment};
use spamshield::pipeline::{Pipeline, PipelineConfig};
use spamshield::report::filter_corpus;
use spamshield::sim::{run, Scenario};
use spamshield::source::FixtureProvider;

/// Layered spam filtering and worm outbreak simulation.
#[derive(Debug, Parser)]
#[command(name = "spamshield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a directory of `*.msg` files through a pipeline config.
    Filter {
        /// Directory of message files, processed in file name order.
        corpus: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// DNS lookup fixture; without one every lookup comes back empty.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// `<filename> <spam|ham>` per line.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an outbreak scenario and write the per-minute timeline.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Extra lookup records merged into the scenario's own.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Compare paired filter configurations over a generated corpus.
    Experiment {
        /// dnsbl-ablation, surbl-sessions or defense-on-off.
        name: Experiment,
        /// Directory written by `gen-corpus`.
        workspace: PathBuf,
        /// Output directory; defaults to the workspace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labeled corpus with its lookup fixture.
    GenCorpus {
        /// Corpus description file, or a preset name (dnsbl, mixed).
        spec: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn filter(corpus: &Path, config: &Path, fixture: Option<&Path>, labels: Option<&Path>, out: &Path) -> Result<()> {
    require(config, "config")?;
    require(corpus, "corpus directory")?;
    let cfg = PipelineConfig::load(config).with_context(|| format!("invalid config {}", config.display()))?;
    let mut pipeline = Pipeline::load(cfg).with_context(|| format!("loading config {}", config.display()))?;
    let provider = match fixture {
        Some(p) => {
            require(p, "fixture")?;
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            FixtureProvider::parse(&text).with_context(|| format!("invalid fixture {}", p.display()))?
        }
        None => FixtureProvider::new(),
    };
    let labels = match labels {
        Some(p) => {
            require(p, "labels file")?;
            load_labels(p)?
        }
        None => Default::default(),
    };
    let messages = load_messages(corpus)?;
    let (report, logs) = filter_corpus(&messages, &labels, &mut pipeline, &provider);

    create_dir(out)?;
    write(out, "report.csv", &report.messages_csv())?;
    write(out, "sessions.csv", &report.sessions_csv())?;
    write(out, "fn_by_user.csv", &report.fn_by_user_csv())?;
    write(out, "summary.txt", &report.summary_text())?;
    write(out, "decisions.log", &logs.iter().map(|l| l.export()).collect::<String>())?;
    print!("{}", report.summary_text());
    Ok(())
}

fn simulate(path: &Path, out: &Path, seed: Option<u64>, fixture: Option<&Path>) -> Result<()> {
    require(path, "scenario")?;
    let mut scenario = Scenario::load(path).with_context(|| format!("invalid scenario {}", path.display()))?;
    if let Some(s) = seed {
        scenario.run.seed = s;
    }
    if let Some(p) = fixture {
        require(p, "fixture")?;
        let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
        let extra = FixtureProvider::parse(&text).with_context(|| format!("invalid fixture {}", p.display()))?;
        scenario.fixture.merge(&extra);
    }
    let timeline = run(scenario)?;
    create_dir(out)?;
    write(out, "timeline.csv", &timeline.to_csv())?;
    write(out, "summary.txt", &timeline.summary_text())?;
    print!("{}", timeline.summary.to_text());
    Ok(())
}

fn experiment(name: Experiment, workspace: &Path, out: Option<&Path>) -> Result<()> {
    require(workspace, "workspace")?;
    let ws = Workspace::load(workspace).with_context(|| format!("invalid workspace {}", workspace.display()))?;
    let cmp = run_experiment(name, &ws);
    let out = out.unwrap_or(workspace);
    create_dir(out)?;
    write(out, &format!("{name}.csv"), &cmp.to_csv())?;
    write(out, &format!("{name}.txt"), &cmp.summary_text())?;
    print!("{}", cmp.summary_text());
    Ok(())
}

fn gen_corpus(spec: &str, out: &Path, seed: Option<u64>) -> Result<()> {
    let path = Path::new(spec);
    let mut spec = match CorpusSpec::preset(spec) {
        Some(p) if !path.exists() => p,
        _ => {
            require(path, "corpus spec")?;
            CorpusSpec::load(path).with_context(|| format!("invalid corpus spec {}", path.display()))?
        }
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let corpus = spec.generate();
    corpus.write_to(out)?;
    println!(
        "wrote {} messages ({} spam, {} ham) to {}",
        corpus.messages.len(),
        spec.spam_total(),
        spec.ham,
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Filter {
            corpus,
            config,
            fixture,
            labels,
            out,
        } => filter(&corpus, &config, fixture.as_deref(), labels.as_deref(), &out),
        Command::Simulate {
            scenario,
            out,
            seed,
            fixture,
        } => simulate(&scenario, &out, seed, fixture.as_deref()),
        Command::Experiment { name, workspace, out } => experiment(name, &workspace, out.as_deref()),
        Command::GenCorpus { spec, out, seed } => gen_corpus(&spec, &out, seed),
    }
}
