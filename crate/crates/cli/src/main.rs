//! `kgdrive`: ingest, maintain, train, decide and run experiment suites.
//! Every command writes its outputs plus `manifest.json` under `--out-dir`.

mod error;
mod records;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use kgdrive_core::config::RunConfig;
use kgdrive_core::engine::EngineCheckpoint;
use kgdrive_core::fusion::{EmbeddingProvider, FusionDims, FusionEmbedder, FusionParams, HttpProvider, StubProvider};
use kgdrive_core::graph::{GraphDims, KnowledgeGraph};
use kgdrive_core::sim::{
    ablation_suite, build_engine, decide, derive_seed, scenario_suite, sensitivity_grid, BuildOptions, Engine,
    ExperimentTable, HarnessError, ScenarioKind, Variant,
};

use error::{exit, CliError};

const PROVIDER_URL_ENV: &str = "KGDRIVE_PROVIDER_URL";

#[derive(Parser)]
#[command(name = "kgdrive", version, about = "Knowledge-graph driven operational decisions")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build a graph snapshot from triples and entity metadata.
    Ingest {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Run one maintenance cycle on a snapshot, optionally adding entities.
    Cycle {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        triples: Option<PathBuf>,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Train fusion, encoder and SAC policy on the simulated enterprise.
    Train {
        /// Snapshot to record in the manifest.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Decide one incident with a trained checkpoint.
    Decide {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario kind, e.g. `equipment-failure`.
        #[arg(long)]
        scenario: String,
    },
    /// Run an experiment suite.
    Experiment {
        #[arg(long, value_enum)]
        suite: Suite,
    },
}

#[derive(Args)]
struct EmbedArgs {
    /// `stub` or `http:<url>`.
    #[arg(long, default_value = "stub")]
    provider: String,
    /// Fusion parameters come from this checkpoint instead of a seeded init.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Ablate,
    Sweep,
    Scenarios,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::VALIDATION } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Run {
    command: &'static str,
    cfg: RunConfig,
    out_dir: PathBuf,
    manifest: Manifest,
}

#[derive(Serialize, Default)]
struct Manifest {
    command: String,
    seed: u64,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    snapshot_hash: Option<String>,
    /// sha256 of every input file.
    inputs: BTreeMap<String, String>,
    /// sha256 of every file written next to the manifest.
    outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Run {
    fn new(command: &'static str, common: &Common) -> Result<Self, CliError> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        let mut manifest = Manifest {
            command: command.to_owned(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            ..Manifest::default()
        };
        if let Some(p) = &common.config {
            manifest.inputs.insert(p.display().to_string(), file_hash(p)?);
        }
        fs::create_dir_all(&common.out_dir).map_err(|e| CliError::io(&common.out_dir, e))?;
        Ok(Run {
            command,
            cfg,
            out_dir: common.out_dir.clone(),
            manifest,
        })
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.inputs.insert(path.display().to_string(), file_hash(path)?);
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.manifest.outputs.insert(name.to_owned(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Invalid(format!("{name}: {e}")))?;
        self.write(name, &(text + "\n"))
    }

    fn write_graph(&mut self, graph: &KnowledgeGraph) -> Result<(), CliError> {
        self.write("graph.json", &graph.to_snapshot_string()?)?;
        self.manifest.snapshot_hash = Some(graph.snapshot_hash()?);
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        let path = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        println!("{}: outputs in {}", self.command, self.out_dir.display());
        Ok(())
    }
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| CliError::io(path, e))
}

fn provider(spec: &str, cfg: &RunConfig) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    if spec == "stub" {
        return Ok(Box::new(StubProvider::new(cfg.seed, cfg.dims.d_g)));
    }
    let Some(url) = spec.strip_prefix("http:") else {
        return Err(CliError::Invalid(format!("--provider must be `stub` or `http:<url>`, got `{spec}`")));
    };
    let url = std::env::var(PROVIDER_URL_ENV).unwrap_or_else(|_| url.to_owned());
    Ok(Box::new(HttpProvider::new(url, cfg.dims.d_g)))
}

fn fusion_params(run: &mut Run, checkpoint: Option<&Path>) -> Result<FusionParams, CliError> {
    if let Some(p) = checkpoint {
        run.input(p)?;
        return Ok(EngineCheckpoint::load(p)?.fusion);
    }
    let d = &run.cfg.dims;
    let dims = FusionDims {
        d_g: d.d_g,
        d_m: d.d_m,
        d_s: d.d_s,
        d_a: d.d_a,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run.cfg.seed, 5, 0));
    Ok(FusionParams::init(dims, &mut rng))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest {
            triples,
            metadata,
            embed,
        } => cmd_ingest(Run::new("ingest", &cli.common)?, &triples, metadata.as_deref(), &embed),
        Command::Cycle {
            graph,
            triples,
            metadata,
            embed,
        } => cmd_cycle(Run::new("cycle", &cli.common)?, &graph, triples.as_deref(), metadata.as_deref(), &embed),
        Command::Train { graph } => cmd_train(Run::new("train", &cli.common)?, graph.as_deref()),
        Command::Decide { checkpoint, scenario } => cmd_decide(Run::new("decide", &cli.common)?, &checkpoint, &scenario),
        Command::Experiment { suite } => cmd_experiment(Run::new("experiment", &cli.common)?, suite),
    }
}

fn cmd_ingest(mut run: Run, triples: &Path, metadata: Option<&Path>, embed: &EmbedArgs) -> Result<(), CliError> {
    let records = records::read_triples(triples)?;
    run.input(triples)?;
    let meta = match metadata {
        Some(p) => {
            let m = records::read_metadata(p, run.cfg.dims.d_m)?;
            run.input(p)?;
            m
        }
        None => Vec::new(),
    };
    let params = fusion_params(&mut run, embed.checkpoint.as_deref())?;
    let mut provider = provider(&embed.provider, &run.cfg)?;
    let mut embedder = FusionEmbedder {
        provider: provider.as_mut(),
        params: &params,
    };
    let mut graph = KnowledgeGraph::new(GraphDims {
        d_m: run.cfg.dims.d_m,
        d_s: run.cfg.dims.d_s,
    });
    let summary = records::build_graph(&mut graph, &records, &meta, &mut embedder)?;
    println!(
        "ingest: {} triples, {} entities, {} rule edges, {} literal objects, {} unused metadata entries",
        summary.triples, summary.entities, summary.rule_edges, summary.literal_objects, summary.unused_metadata
    );
    run.write_graph(&graph)?;
    run.write_json("ingest_report.json", &summary)?;
    run.finish()
}

fn cmd_cycle(
    mut run: Run,
    graph_path: &Path,
    triples: Option<&Path>,
    metadata: Option<&Path>,
    embed: &EmbedArgs,
) -> Result<(), CliError> {
    let mut graph = KnowledgeGraph::load(graph_path)?;
    run.input(graph_path)?;
    let triples = match triples {
        Some(p) => {
            let t = records::read_triples(p)?;
            run.input(p)?;
            t
        }
        None => Vec::new(),
    };
    let meta = match metadata {
        Some(p) => {
            let m = records::read_metadata(p, run.cfg.dims.d_m)?;
            run.input(p)?;
            m
        }
        None => Vec::new(),
    };
    let (new_nodes, _) = records::candidate_entities(&triples, &meta, Some(&graph))?;
    let params = fusion_params(&mut run, embed.checkpoint.as_deref())?;
    let mut provider = provider(&embed.provider, &run.cfg)?;
    let mut embedder = FusionEmbedder {
        provider: provider.as_mut(),
        params: &params,
    };
    let thresholds = run.cfg.thresholds.cycle();
    let report = graph.run_update_cycle_with(new_nodes, &mut embedder, thresholds)?;
    records::link_triples(&mut graph, &triples)?;
    println!(
        "cycle: epoch {}, {} added, {} dynamic edges created, {} evicted, {} merged",
        report.epoch, report.added, report.dynamic_created, report.evicted, report.merged
    );
    run.write_graph(&graph)?;
    run.write_json("cycle_report.json", &report)?;
    run.finish()
}

/// One row per SAC episode. The loss cell is blank for episodes that ran
/// before the replay buffer allowed a critic update.
fn trace_csv(returns: &[f64], losses: &[f64]) -> String {
    let mut out = String::from("episode,return,critic_loss\n");
    for (i, r) in returns.iter().enumerate() {
        let loss = losses
            .get(i)
            .filter(|l| l.is_finite())
            .map(|l| format!("{l:?}"))
            .unwrap_or_default();
        out.push_str(&format!("{},{r:?},{loss}\n", i + 1));
    }
    out
}

fn cmd_train(mut run: Run, graph: Option<&Path>) -> Result<(), CliError> {
    if let Some(p) = graph {
        run.input(p)?;
    }
    let opts = BuildOptions { sac: true, dqn: false };
    let engine = match build_engine(&run.cfg, Variant::Full, run.cfg.seed, opts) {
        Ok(e) => e,
        Err(err) => {
            if let HarnessError::Sac(kgdrive_core::engine::SacError::Divergence { trace, .. }) = &err {
                run.write("trace.csv", &trace_csv(&trace.returns, &trace.critic_losses))?;
                run.finish()?;
            }
            return Err(err.into());
        }
    };
    let t = &engine.traces;
    run.write("trace.csv", &trace_csv(&t.sac_returns, &t.critic_losses))?;
    run.write("checkpoint.json", &engine.checkpoint.to_json())?;
    run.manifest.checkpoint_hash = Some(engine.checkpoint.hash());
    run.write_graph(&engine.graph)?;
    println!(
        "train: {} SAC episodes, checkpoint {}",
        t.sac_returns.len(),
        engine.checkpoint.hash()
    );
    run.finish()
}

fn cmd_decide(mut run: Run, checkpoint: &Path, scenario: &str) -> Result<(), CliError> {
    let kind: ScenarioKind = scenario.parse().map_err(CliError::Invalid)?;
    let ckpt = EngineCheckpoint::load(checkpoint)?;
    run.input(checkpoint)?;
    run.manifest.checkpoint_hash = Some(ckpt.hash());
    let engine = Engine::restore(&run.cfg, ckpt)?;
    let (report, graph) = decide(&engine, kind, run.cfg.seed)?;
    let o = &report.objectives;
    println!("decide: {kind} path {}", report.record.path.join(" -> "));
    println!(
        "  reward {:.4} = time {:.4} + cost {:.4} + overflow {:.4}  (alpha {:.3}, beta {:.3})",
        report.record.metrics.episode_return, o.time_term, o.cost_term, o.overflow_term, o.alpha, o.beta
    );
    for s in &report.explanation.chain {
        match &s.best_alternative {
            Some(alt) => println!("  step {}: {} (q-gap {:.4} over {alt})", s.step + 1, s.chosen, s.q_gap),
            None => println!("  step {}: {}", s.step + 1, s.chosen),
        }
    }
    run.write_json("decision.json", &report)?;
    run.write_graph(&graph)?;
    run.finish()
}

fn cmd_experiment(mut run: Run, suite: Suite) -> Result<(), CliError> {
    let table: ExperimentTable = match suite {
        Suite::Ablate => ablation_suite(&run.cfg),
        Suite::Sweep => sensitivity_grid(&run.cfg),
        Suite::Scenarios => scenario_suite(&run.cfg),
    };
    let name = table.suite.clone();
    run.write(&format!("{name}.csv"), &table.to_csv())?;
    run.write_json(&format!("{name}.json"), &table)?;
    for m in table.metrics.clone() {
        let series = table.series(&m).expect("metric of this table");
        run.write_json(&format!("plot_{m}.json"), &series)?;
    }
    let failed = table.seed_rows.iter().filter(|r| r.error.is_some()).count();
    for r in table.seed_rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("cell {} seed {} failed: {}", r.label, r.seed, r.error.as_deref().unwrap_or(""));
    }
    println!("experiment {name}: {} configurations, {} cells", table.rows.len(), table.seed_rows.len());
    run.finish()?;
    if failed > 0 {
        return Err(CliError::CellsFailed(failed));
    }
    Ok(())
}
