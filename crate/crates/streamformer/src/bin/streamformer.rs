//! Command-line front end. Each subcommand is a thin wrapper over the
//! library; a JSON config file seeds the run configuration and individual
//! flags override it.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use streamformer::config::{default_hop_lookahead, Task};
use streamformer::harness::{
    eval_objective_manifest, intent_eval, run_offline, run_stream, RunConfig, WallClock,
};
use streamformer::latency::{endpoint_clamped, latency_report, read_emission_log};
use streamformer::params::ModelParams;
use streamformer::vocab::Vocabulary;

#[derive(Parser)]
#[command(
    name = "streamformer",
    version,
    about = "Blockwise streaming transduction engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonOpts {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    chunk_ms: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// simulated (deterministic) or real (measures compute time).
    #[arg(long)]
    wall_clock: Option<String>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    ctc_weight: Option<f64>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    look_ahead: Option<usize>,
    #[arg(long)]
    max_len_ratio: Option<f64>,
    #[arg(long)]
    max_len_margin: Option<usize>,
    #[arg(long)]
    candidate_pool: Option<usize>,
    #[arg(long)]
    repeat_window: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Args, Default)]
struct ModelOpts {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    enc_layers: Option<usize>,
    #[arg(long)]
    dec_layers: Option<usize>,
    #[arg(long)]
    intermediate_layer: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    subsample_factor: Option<usize>,
    #[arg(long)]
    frame_ms: Option<u32>,
}

impl CommonOpts {
    fn build(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = &self.$field { $target = v.clone().into(); })*
            };
        }
        set! {
            features => config.features,
            manifest => config.manifest,
            vocab => config.vocab,
            weights => config.weights,
            output_dir => config.output_dir,
        }
        if let Some(v) = self.chunk_ms {
            config.chunk_ms = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = &self.wall_clock {
            config.wall_clock = match v.as_str() {
                "simulated" => WallClock::Simulated,
                "real" => WallClock::Real,
                other => anyhow::bail!("--wall-clock must be simulated|real, got '{other}'"),
            };
        }
        if let Some(task) = self.task {
            config.decode.task = task;
            config.decode.ctc_weight = task.default_ctc_weight();
        }
        if let Some(v) = self.beam_size {
            config.decode.beam_size = v;
        }
        if let Some(v) = self.ctc_weight {
            config.decode.ctc_weight = v;
        }
        if let Some(v) = self.block_size {
            config.decode.block_size = v;
            let (hop, look) = default_hop_lookahead(v);
            config.decode.hop = hop;
            config.decode.look_ahead = look;
        }
        if let Some(v) = self.hop {
            config.decode.hop = v;
        }
        if let Some(v) = self.look_ahead {
            config.decode.look_ahead = v;
        }
        if let Some(v) = self.max_len_ratio {
            config.decode.max_len_ratio = v;
        }
        if let Some(v) = self.max_len_margin {
            config.decode.max_len_margin = v;
        }
        if let Some(v) = self.candidate_pool {
            config.decode.candidate_pool = Some(v);
        }
        if let Some(v) = self.repeat_window {
            config.decode.repeat_window = v;
        }
        if let Some(v) = self.lambda {
            config.objective.lambda = v;
        }
        if let Some(v) = self.beta {
            config.objective.beta = v;
        }
        if let Some(v) = self.gamma {
            config.objective.gamma = v;
        }
        if let Some(v) = self.smoothing {
            config.objective.smoothing = v;
        }
        let m = &self.model;
        if let Some(v) = m.d_model {
            config.model.d_model = v;
        }
        if let Some(v) = m.n_heads {
            config.model.n_heads = v;
        }
        if let Some(v) = m.ff_dim {
            config.model.ff_dim = v;
        }
        if let Some(v) = m.enc_layers {
            config.model.enc_layers = v;
        }
        if let Some(v) = m.dec_layers {
            config.model.dec_layers = v;
        }
        if let Some(v) = m.intermediate_layer {
            config.model.intermediate_layer = v;
        }
        if let Some(v) = m.feature_dim {
            config.model.feature_dim = v;
        }
        if let Some(v) = m.subsample_factor {
            config.model.subsample_factor = v;
        }
        if let Some(v) = m.frame_ms {
            config.model.frame_ms = v;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Stream a feature file through the blockwise decoder in simulated
    /// chunks; writes hypothesis, emission log and latency report.
    RunStream(CommonOpts),
    /// Decode a feature file with the full-context offline decoder.
    RunOffline(CommonOpts),
    /// Evaluate the multi-task objective over a supervision manifest.
    EvalObjective(CommonOpts),
    /// Recompute the latency report from an existing emission log.
    EvalLatency {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Intent accuracy: fraction of lines whose first token matches.
    IntentEval {
        #[arg(long)]
        hypotheses: PathBuf,
        #[arg(long)]
        references: PathBuf,
    },
    /// Initialize parameters from a seed and write them as a weight file.
    ExportWeights {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        output: PathBuf,
    },
    /// Validate a weight file and print its configuration.
    ImportWeights {
        #[arg(long)]
        weights: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::RunStream(opts) => {
            let config = opts.build()?;
            let run = run_stream(&config)?;
            if endpoint_clamped(&run.log) {
                eprintln!(
                    "warning: decode completed before the last chunk arrived; EP clamped to 0"
                );
            }
            println!("utt\t{}", run.utt_id);
            println!("hyp\t{}", run.text);
            let al = run
                .report
                .al_ms
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "nan".into());
            println!("al_ms\t{al}");
            println!("ep_ms\t{:.3}", run.report.ep_ms);
            println!("wait_events\t{}", run.report.wait_events);
            println!("tokens\t{}", run.report.tokens);
        }
        Command::RunOffline(opts) => {
            let config = opts.build()?;
            let run = run_offline(&config)?;
            println!("utt\t{}", run.utt_id);
            println!("hyp\t{}", run.text);
            println!("score\t{:.6}", run.best.score);
        }
        Command::EvalObjective(opts) => {
            let config = opts.build()?;
            print!("{}", eval_objective_manifest(&config)?);
        }
        Command::EvalLatency { log, vocab } => {
            let vocab = vocab.map(Vocabulary::load).transpose()?;
            let log = read_emission_log(&log, vocab.as_ref())?;
            if endpoint_clamped(&log) {
                eprintln!("warning: completion precedes the last chunk arrival; EP clamped to 0");
            }
            let report = latency_report(&log)?;
            let al = report
                .al_ms
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "nan".into());
            println!("al_ms\t{al}");
            println!("ep_ms\t{:.3}", report.ep_ms);
            println!("wait_events\t{}", report.wait_events);
            println!("early_tokens\t{}", report.early_tokens);
            println!("tokens\t{}", report.tokens);
        }
        Command::IntentEval {
            hypotheses,
            references,
        } => {
            let accuracy = intent_eval(&hypotheses, &references)?;
            println!("intent_accuracy\t{accuracy:.1}");
        }
        Command::ExportWeights { common, output } => {
            let config = common.build()?;
            let (vocab, params) = config.load_model()?;
            params.save(&output)?;
            println!(
                "wrote {} ({} vocab entries, seed {})",
                output.display(),
                vocab.len(),
                config.seed
            );
        }
        Command::ImportWeights { weights } => {
            let params = ModelParams::load(&weights)
                .with_context(|| format!("importing {}", weights.display()))?;
            params.audit_shapes()?;
            let c = &params.config;
            println!("magic\tBSTW1");
            println!("d_model\t{}", c.d_model);
            println!("n_heads\t{}", c.n_heads);
            println!("ff_dim\t{}", c.ff_dim);
            println!("enc_layers\t{}", c.enc_layers);
            println!("dec_layers\t{}", c.dec_layers);
            println!("intermediate_layer\t{}", c.intermediate_layer);
            println!("feature_dim\t{}", c.feature_dim);
            println!("subsample_factor\t{}", c.subsample_factor);
            println!("vocab_size\t{}", c.vocab_size);
            println!("frame_ms\t{}", c.frame_ms);
        }
    }
    Ok(())
}
