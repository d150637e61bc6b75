//! Run drivers behind the CLI: feature file I/O, chunk simulation,
//! streaming/offline decoding runs, objective evaluation over manifests
//! and intent accuracy scoring. Every output is deterministic for a fixed
//! (seed, config, input) triple under the simulated clock.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::beam::{decode_blockwise, decode_offline, ClockMode, FinishedHypothesis};
use crate::config::{DecodeConfig, ModelConfig, ObjectiveConfig};
use crate::error::{Error, Result};
use crate::latency::{latency_report, EmissionLog, LatencyReport};
use crate::objectives::{evaluate_objective, read_manifest, supervision_from_entry};
use crate::params::ModelParams;
use crate::vocab::Vocabulary;

/// Reads a feature file: first line "T D", then T rows of D decimal floats.
pub fn read_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Format {
        line: 1,
        msg: format!("{} is empty", path.display()),
    })?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format {
            line: 1,
            msg: format!("header must be 'T D', found '{header}'"),
        })?;
    if dims.len() != 2 {
        return Err(Error::Format {
            line: 1,
            msg: format!("header must be 'T D', found '{header}'"),
        });
    }
    let (t, d) = (dims[0], dims[1]);
    if t == 0 || d == 0 {
        return Err(Error::Format {
            line: 1,
            msg: format!("feature matrix must be non-empty, header says {t}×{d}"),
        });
    }
    let mut out = Array2::zeros((t, d));
    let mut filled = 0;
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if filled >= t {
            return Err(Error::Format {
                line: n + 1,
                msg: format!("more than the declared {t} feature rows"),
            });
        }
        let mut row = out.row_mut(filled);
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Format {
                line: n + 1,
                msg: format!("'{tok}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    line: n + 1,
                    msg: format!("non-finite feature value '{tok}'"),
                });
            }
            if count >= d {
                return Err(Error::Format {
                    line: n + 1,
                    msg: format!("row has more than {d} values"),
                });
            }
            row[count] = v;
            count += 1;
        }
        if count != d {
            return Err(Error::Format {
                line: n + 1,
                msg: format!("row has {count} values, expected {d}"),
            });
        }
        filled += 1;
    }
    if filled != t {
        return Err(Error::Format {
            line: t + 1,
            msg: format!("found {filled} feature rows, header declared {t}"),
        });
    }
    Ok(out)
}

/// Writes a feature matrix in the format [`read_features`] consumes.
/// Values use the shortest round-tripping decimal form.
pub fn write_features(path: impl AsRef<Path>, features: &ArrayView2<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("{} {}\n", features.nrows(), features.ncols());
    for row in features.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Splits features into consecutive chunks of chunk_ms/frame_ms rows; the
/// final chunk may be short. Concatenating the chunks reproduces the input.
pub fn chunk_stream(
    features: &ArrayView2<f64>,
    chunk_ms: u64,
    frame_ms: u32,
) -> Result<Vec<Array2<f64>>> {
    if frame_ms == 0 || chunk_ms == 0 || !chunk_ms.is_multiple_of(frame_ms as u64) {
        return Err(Error::Config(format!(
            "chunk_ms ({chunk_ms}) must be a positive multiple of frame_ms ({frame_ms})"
        )));
    }
    let rows = (chunk_ms / frame_ms as u64) as usize;
    Ok(features
        .axis_chunks_iter(ndarray::Axis(0), rows)
        .map(|c| c.to_owned())
        .collect())
}

/// Everything a run needs: input paths, chunking, model geometry, decoding
/// and objective settings. A JSON file fills the struct; CLI flags then
/// override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub features: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub chunk_ms: u64,
    pub seed: u64,
    pub wall_clock: WallClock,
    pub model: ModelConfig,
    pub decode: DecodeConfig,
    pub objective: ObjectiveConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WallClock {
    /// Deterministic clock following the source arrival schedule.
    Simulated,
    /// Actual elapsed time; endpoint latency measures real compute.
    Real,
}

impl From<WallClock> for ClockMode {
    fn from(w: WallClock) -> ClockMode {
        match w {
            WallClock::Simulated => ClockMode::Simulated,
            WallClock::Real => ClockMode::Real,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            features: None,
            manifest: None,
            vocab: None,
            weights: None,
            output_dir: None,
            chunk_ms: 640,
            seed: 0,
            wall_clock: WallClock::Simulated,
            model: ModelConfig::default(),
            decode: DecodeConfig::default(),
            objective: ObjectiveConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn vocab_path(&self) -> Result<&Path> {
        self.vocab
            .as_deref()
            .ok_or_else(|| Error::Config("a vocabulary file is required (--vocab)".into()))
    }

    fn features_path(&self) -> Result<&Path> {
        self.features
            .as_deref()
            .ok_or_else(|| Error::Config("a feature file is required (--features)".into()))
    }

    /// Loads the vocabulary and resolves model parameters: from the weight
    /// file when given, otherwise seeded initialization.
    pub fn load_model(&self) -> Result<(Vocabulary, ModelParams)> {
        let vocab = Vocabulary::load(self.vocab_path()?)?;
        let params = match &self.weights {
            Some(path) => {
                let params = ModelParams::load(path)?;
                if params.config.vocab_size != vocab.len() {
                    return Err(Error::Config(format!(
                        "weight file was built for a vocabulary of {}, file has {}",
                        params.config.vocab_size,
                        vocab.len()
                    )));
                }
                params
            }
            None => {
                let mut model = self.model.clone();
                model.vocab_size = vocab.len();
                ModelParams::init(&model, self.seed)?
            }
        };
        params.audit_shapes()?;
        Ok((vocab, params))
    }
}

/// Outputs of one streaming run.
#[derive(Debug, Clone)]
pub struct StreamRun {
    pub utt_id: String,
    pub text: String,
    pub best: FinishedHypothesis,
    pub log: EmissionLog,
    pub report: LatencyReport,
}

fn utt_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "utt".into())
}

fn render_report(report: &LatencyReport, best: &FinishedHypothesis) -> String {
    let al = report
        .al_ms
        .map(|v| format!("{v:.3}"))
        .unwrap_or_else(|| "nan".into());
    format!(
        "al_ms\t{al}\nep_ms\t{:.3}\nwait_events\t{}\nearly_tokens\t{}\ntokens\t{}\nscore_att\t{:.6}\nscore_ctc\t{:.6}\nscore\t{:.6}\n",
        report.ep_ms,
        report.wait_events,
        report.early_tokens,
        report.tokens,
        best.score_att,
        best.score_ctc,
        best.score
    )
}

/// Streams the feature file through the blockwise decoder in simulated
/// chunk_ms chunks, writing the hypothesis, the emission log and the
/// latency report into the output directory when one is configured.
pub fn run_stream(config: &RunConfig) -> Result<StreamRun> {
    let (vocab, params) = config.load_model()?;
    let features_path = config.features_path()?;
    let features = read_features(features_path)?;
    let chunks = chunk_stream(&features.view(), config.chunk_ms, params.config.frame_ms)?;
    let (best, log) = decode_blockwise(
        &params,
        chunks,
        &config.decode,
        config.chunk_ms,
        config.wall_clock.into(),
    )?;
    let report = latency_report(&log)?;
    let run = StreamRun {
        utt_id: utt_id_of(features_path),
        text: vocab.decode(&best.tokens),
        best,
        log,
        report,
    };
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hyp = dir.join(format!("{}.hyp.txt", run.utt_id));
        crate::fsio::write_atomic(&hyp, format!("{}\n", run.text).as_bytes())?;
        crate::latency::write_emission_log(
            dir.join(format!("{}.emission.tsv", run.utt_id)),
            &run.log,
            &vocab,
        )?;
        let report_path = dir.join(format!("{}.report.tsv", run.utt_id));
        crate::fsio::write_atomic(
            &report_path,
            render_report(&run.report, &run.best).as_bytes(),
        )?;
    }
    Ok(run)
}

/// Outputs of one offline run.
#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub utt_id: String,
    pub text: String,
    pub best: FinishedHypothesis,
}

/// Full-context joint decoding of the feature file.
pub fn run_offline(config: &RunConfig) -> Result<OfflineRun> {
    let (vocab, params) = config.load_model()?;
    let features_path = config.features_path()?;
    let features = read_features(features_path)?;
    let best = decode_offline(&params, &features.view(), &config.decode)?;
    let run = OfflineRun {
        utt_id: utt_id_of(features_path),
        text: vocab.decode(&best.tokens),
        best,
    };
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hyp = dir.join(format!("{}.offline.hyp.txt", run.utt_id));
        crate::fsio::write_atomic(&hyp, format!("{}\n", run.text).as_bytes())?;
    }
    Ok(run)
}

/// Per-utterance objective rows plus the mean row, as a TSV string.
pub fn eval_objective_manifest(config: &RunConfig) -> Result<String> {
    let (vocab, params) = config.load_model()?;
    let manifest_path = config
        .manifest
        .as_deref()
        .ok_or_else(|| Error::Config("a manifest file is required (--manifest)".into()))?;
    let entries = read_manifest(manifest_path)?;
    if entries.is_empty() {
        return Err(Error::EmptyInput(format!(
            "manifest {} holds no utterances",
            manifest_path.display()
        )));
    }
    let task = config.decode.task;
    let mut out = String::from("utt_id\tl_ce\tl_ctc\tl_ctc_aux\ttotal\tstatus\n");
    let mut sums = [0.0f64; 4];
    for entry in &entries {
        let features = read_features(&entry.feature_path)?;
        let pair = supervision_from_entry(&vocab, entry, task)?;
        let loss = evaluate_objective(&params, &features.view(), &pair, &config.objective, task)?;
        let status = if loss.infeasible { "infeasible" } else { "ok" };
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{status}",
            entry.utt_id, loss.ce, loss.ctc_main, loss.ctc_aux, loss.total
        );
        for (s, v) in sums
            .iter_mut()
            .zip([loss.ce, loss.ctc_main, loss.ctc_aux, loss.total])
        {
            *s += v;
        }
    }
    let n = entries.len() as f64;
    let _ = writeln!(
        out,
        "mean\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t-",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n
    );
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("objective.tsv");
        crate::fsio::write_atomic(&path, out.as_bytes())?;
    }
    Ok(out)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// Intent accuracy: percentage of hypothesis lines whose first token
/// matches the reference line's first token.
pub fn intent_eval(hypotheses: impl AsRef<Path>, references: impl AsRef<Path>) -> Result<f64> {
    let hyp = read_lines(hypotheses.as_ref())?;
    let refs = read_lines(references.as_ref())?;
    if hyp.len() != refs.len() {
        return Err(Error::Decode(format!(
            "hypothesis file has {} lines, reference file {}",
            hyp.len(),
            refs.len()
        )));
    }
    if hyp.is_empty() {
        return Err(Error::EmptyInput(
            "intent evaluation over zero lines".into(),
        ));
    }
    let matches = hyp
        .iter()
        .zip(&refs)
        .filter(|(h, r)| {
            let h0 = h.split_whitespace().next();
            let r0 = r.split_whitespace().next();
            h0.is_some() && h0 == r0
        })
        .count();
    Ok(100.0 * matches as f64 / hyp.len() as f64)
}
