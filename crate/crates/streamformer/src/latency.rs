//! Streaming latency metrics: average lagging over simulated source time
//! and endpoint latency over wall-clock time, both computed from emission
//! logs.

use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary, UNK};

/// One committed output token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmissionEvent {
    /// Output position, contiguous from 1.
    pub position: usize,
    pub token_id: TokenId,
    /// Block index (0-based) whose expansion round committed the token.
    pub block: usize,
    /// Simulated source milliseconds consumed when the token committed.
    pub source_ms: u64,
    /// Wall clock at commit.
    pub wall_ms: u64,
}

/// Commit history of one decode run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmissionLog {
    pub events: Vec<EmissionEvent>,
    pub source_total_ms: u64,
    pub last_arrival_wall_ms: u64,
    pub completion_wall_ms: u64,
    pub wait_events: u32,
}

impl EmissionLog {
    pub fn validate(&self) -> Result<()> {
        let mut last_source = 0;
        for (i, e) in self.events.iter().enumerate() {
            if e.position != i + 1 {
                return Err(Error::Decode(format!(
                    "emission positions must be contiguous from 1; event {i} has position {}",
                    e.position
                )));
            }
            if e.source_ms < last_source {
                return Err(Error::Decode("source_ms decreased between commits".into()));
            }
            if e.source_ms > self.source_total_ms {
                return Err(Error::Decode(format!(
                    "commit consumed {} ms of a {} ms source",
                    e.source_ms, self.source_total_ms
                )));
            }
            last_source = e.source_ms;
        }
        Ok(())
    }
}

/// Average lagging in milliseconds: with d_i the source consumed at the
/// commit of token i, |X| the source duration and |Y| the output length,
/// AL = (1/τ) Σ_{i≤τ} (d_i − (i−1)·|X|/|Y|) where τ is the first i with
/// d_i ≥ |X| (falling back to |Y| if none reaches it).
pub fn average_lagging(log: &EmissionLog) -> Result<f64> {
    if log.events.is_empty() {
        return Err(Error::EmptyInput(
            "average lagging of an empty emission log".into(),
        ));
    }
    log.validate()?;
    let x = log.source_total_ms as f64;
    let y = log.events.len() as f64;
    let tau = log
        .events
        .iter()
        .position(|e| e.source_ms as f64 >= x)
        .map(|i| i + 1)
        .unwrap_or(log.events.len());
    let rate = x / y;
    let sum: f64 = log.events[..tau]
        .iter()
        .enumerate()
        .map(|(i, e)| e.source_ms as f64 - i as f64 * rate)
        .sum();
    Ok(sum / tau as f64)
}

/// Endpoint latency in milliseconds: wall clock at decode completion minus
/// wall clock at the last source chunk arrival, clamped at zero.
pub fn endpoint_latency(log: &EmissionLog) -> f64 {
    log.completion_wall_ms
        .saturating_sub(log.last_arrival_wall_ms) as f64
}

/// True when the completion timestamp precedes the last arrival, i.e. the
/// clamp in [`endpoint_latency`] fired.
pub fn endpoint_clamped(log: &EmissionLog) -> bool {
    log.completion_wall_ms < log.last_arrival_wall_ms
}

/// Summary statistics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    /// Average lagging; absent when nothing was emitted.
    pub al_ms: Option<f64>,
    pub ep_ms: f64,
    pub wait_events: u32,
    /// Tokens committed strictly before the source ended.
    pub early_tokens: usize,
    pub tokens: usize,
}

pub fn latency_report(log: &EmissionLog) -> Result<LatencyReport> {
    log.validate()?;
    let al_ms = if log.events.is_empty() {
        None
    } else {
        Some(average_lagging(log)?)
    };
    Ok(LatencyReport {
        al_ms,
        ep_ms: endpoint_latency(log),
        wait_events: log.wait_events,
        early_tokens: log
            .events
            .iter()
            .filter(|e| e.source_ms < log.source_total_ms)
            .count(),
        tokens: log.events.len(),
    })
}

/// Writes the log as TSV: a header line carrying the run totals, then one
/// event per line (position, token string, block, source_ms, wall_ms).
pub fn write_emission_log(
    path: impl AsRef<Path>,
    log: &EmissionLog,
    vocab: &Vocabulary,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&format!(
        "#source_total_ms\t{}\tlast_arrival_wall_ms\t{}\tcompletion_wall_ms\t{}\twait_events\t{}\n",
        log.source_total_ms, log.last_arrival_wall_ms, log.completion_wall_ms, log.wait_events
    ));
    for e in &log.events {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.position,
            vocab.token(e.token_id).unwrap_or("<unk>"),
            e.block,
            e.source_ms,
            e.wall_ms
        ));
    }
    crate::fsio::write_atomic(path, out.as_bytes())
}

/// Reads a log written by [`write_emission_log`]. Token ids are recovered
/// through `vocab` when given; unknown strings map to the unk token.
pub fn read_emission_log(
    path: impl AsRef<Path>,
    vocab: Option<&Vocabulary>,
) -> Result<EmissionLog> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Format {
        line: 1,
        msg: format!("{} is empty", path.display()),
    })?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let header_val = |key: &str| -> Result<u64> {
        cols.iter()
            .position(|c| *c == key)
            .and_then(|i| cols.get(i + 1))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format {
                line: 1,
                msg: format!("header lacks {key}"),
            })
    };
    let mut log = EmissionLog {
        events: Vec::new(),
        source_total_ms: header_val("#source_total_ms")?,
        last_arrival_wall_ms: header_val("last_arrival_wall_ms")?,
        completion_wall_ms: header_val("completion_wall_ms")?,
        wait_events: header_val("wait_events")? as u32,
    };
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::Format {
                line: n + 1,
                msg: format!("expected 5 columns, found {}", cols.len()),
            });
        }
        let parse = |i: usize| -> Result<u64> {
            cols[i].parse().map_err(|_| Error::Format {
                line: n + 1,
                msg: format!("column {} is not an integer: '{}'", i + 1, cols[i]),
            })
        };
        log.events.push(EmissionEvent {
            position: parse(0)? as usize,
            token_id: vocab.and_then(|v| v.id(cols[1])).unwrap_or(UNK),
            block: parse(2)? as usize,
            source_ms: parse(3)?,
            wall_ms: parse(4)?,
        });
    }
    log.validate()?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn log_from(d: &[u64], source_total_ms: u64) -> EmissionLog {
        EmissionLog {
            events: d
                .iter()
                .enumerate()
                .map(|(i, &source_ms)| EmissionEvent {
                    position: i + 1,
                    token_id: 3,
                    block: i,
                    source_ms,
                    wall_ms: source_ms,
                })
                .collect(),
            source_total_ms,
            last_arrival_wall_ms: source_total_ms,
            completion_wall_ms: source_total_ms,
            wait_events: 0,
        }
    }

    #[test]
    fn al_fully_offline() {
        let log = log_from(&[1000; 5], 1000);
        assert_eq!(average_lagging(&log).unwrap(), 1000.0);
    }

    #[test]
    fn al_uniform_commits() {
        let log = log_from(&[250, 500, 750, 1000], 1000);
        assert_eq!(average_lagging(&log).unwrap(), 250.0);
    }

    #[test]
    fn al_two_token_case() {
        let log = log_from(&[400, 800], 800);
        assert_eq!(average_lagging(&log).unwrap(), 400.0);
    }

    #[test]
    fn al_empty_is_error() {
        let log = log_from(&[], 1000);
        assert!(average_lagging(&log).is_err());
    }

    #[test]
    fn al_ignores_wall_clock() {
        let mut a = log_from(&[250, 500, 750, 1000], 1000);
        let mut b = a.clone();
        for e in b.events.iter_mut() {
            e.wall_ms += 12345;
        }
        b.completion_wall_ms += 999;
        a.wait_events = 3;
        assert_eq!(average_lagging(&a).unwrap(), average_lagging(&b).unwrap());
    }

    #[test]
    fn ep_subtraction_and_clamp() {
        let mut log = log_from(&[1000], 1000);
        log.last_arrival_wall_ms = 1000;
        log.completion_wall_ms = 1350;
        assert_eq!(endpoint_latency(&log), 350.0);
        assert!(!endpoint_clamped(&log));

        log.completion_wall_ms = 1000;
        assert_eq!(endpoint_latency(&log), 0.0);

        log.completion_wall_ms = 900;
        assert_eq!(endpoint_latency(&log), 0.0);
        assert!(endpoint_clamped(&log));
    }

    #[test]
    fn ep_ignores_source_ms() {
        let mut a = log_from(&[100, 400], 1000);
        a.last_arrival_wall_ms = 2000;
        a.completion_wall_ms = 2500;
        let mut b = a.clone();
        for e in b.events.iter_mut() {
            e.source_ms = 1000;
        }
        assert_eq!(endpoint_latency(&a), endpoint_latency(&b));
    }

    #[test]
    fn offline_policy_al_equals_duration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let total = 100 + (rng.next_u64() % 5000);
            let tokens = 1 + (rng.next_u64() % 12) as usize;
            let log = log_from(&vec![total; tokens], total);
            assert_eq!(average_lagging(&log).unwrap(), total as f64);
        }
    }

    #[test]
    fn al_never_rises_when_a_commit_gets_earlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let total = 400 + (rng.next_u64() % 2000);
            let n = 2 + (rng.next_u64() % 8) as usize;
            let mut d: Vec<u64> = (0..n - 1).map(|_| rng.next_u64() % (total + 1)).collect();
            d.sort_unstable();
            d.push(total);
            let log = log_from(&d, total);
            let base = average_lagging(&log).unwrap();

            let i = (rng.next_u64() as usize) % n;
            let lower_bound = if i == 0 { 0 } else { d[i - 1] };
            if d[i] == lower_bound {
                continue;
            }
            let mut d2 = d.clone();
            d2[i] = lower_bound + (rng.next_u64() % (d[i] - lower_bound));
            if i == n - 1 {
                // Keep the final commit at the source end.
                continue;
            }
            let log2 = log_from(&d2, total);
            let after = average_lagging(&log2).unwrap();
            assert!(
                after <= base + 1e-9,
                "AL rose from {base} to {after} for {d:?} -> {d2:?}"
            );
        }
    }

    #[test]
    fn report_counts_early_tokens() {
        let log = log_from(&[250, 500, 1000, 1000], 1000);
        let report = latency_report(&log).unwrap();
        assert_eq!(report.early_tokens, 2);
        assert_eq!(report.tokens, 4);
        assert_eq!(report.al_ms, Some(average_lagging(&log).unwrap()));
    }

    #[test]
    fn log_file_round_trip() {
        let vocab = Vocabulary::with_tokens(["a", "b"]).unwrap();
        let mut log = log_from(&[320, 640, 1000], 1000);
        log.events[0].token_id = 3;
        log.events[1].token_id = 4;
        log.events[2].token_id = 3;
        log.wait_events = 2;
        log.completion_wall_ms = 1010;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.emission.tsv");
        write_emission_log(&path, &log, &vocab).unwrap();
        let back = read_emission_log(&path, Some(&vocab)).unwrap();
        assert_eq!(log, back);
    }

    #[test]
    fn malformed_log_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(
            &path,
            "#source_total_ms\t100\tlast_arrival_wall_ms\t100\tcompletion_wall_ms\t100\twait_events\t0\n1\ta\tnope\n",
        )
        .unwrap();
        match read_emission_log(&path, None) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_regressions() {
        let mut log = log_from(&[500, 400], 1000);
        assert!(log.validate().is_err());
        log = log_from(&[500, 1200], 1000);
        assert!(log.validate().is_err());
        log = log_from(&[500, 600], 1000);
        log.events[1].position = 3;
        assert!(log.validate().is_err());
    }
}
