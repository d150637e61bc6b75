//! Average lagging and endpoint latency on hand-built emission logs,
//! including the fully-offline policy whose AL equals the source length.
//!
//!     cargo run --example latency_metrics

use streamformer::latency::{average_lagging, endpoint_latency, EmissionEvent, EmissionLog};

fn log_with(d: &[u64], source_total_ms: u64, completion_wall_ms: u64) -> EmissionLog {
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
        completion_wall_ms,
        wait_events: 0,
    }
}

fn main() -> streamformer::Result<()> {
    println!(
        "{:<42} {:>10}",
        "policy (commit times in source ms)", "AL (ms)"
    );
    let cases: [(&str, Vec<u64>, u64); 3] = [
        ("offline: 5 tokens all at 1000/1000", vec![1000; 5], 1000),
        (
            "uniform: [250, 500, 750, 1000] / 1000",
            vec![250, 500, 750, 1000],
            1000,
        ),
        ("two tokens: [400, 800] / 800", vec![400, 800], 800),
    ];
    for (name, d, total) in cases {
        let log = log_with(&d, total, total);
        println!("{:<42} {:>10.1}", name, average_lagging(&log)?);
    }

    // Endpoint latency lives on the wall clock alone.
    let log = log_with(&[500, 1000], 1000, 1350);
    println!(
        "\nEP: decode completed 350 ms after the last chunk -> {} ms",
        endpoint_latency(&log)
    );
    let log = log_with(&[500, 1000], 1000, 1000);
    println!("EP: completion at arrival -> {} ms", endpoint_latency(&log));

    // Earlier commits can only lower AL.
    let base = log_with(&[250, 500, 750, 1000], 1000, 1000);
    let eager = log_with(&[100, 500, 750, 1000], 1000, 1000);
    println!(
        "\nAL drops when a commit moves earlier: {:.1} -> {:.1}",
        average_lagging(&base)?,
        average_lagging(&eager)?
    );
    Ok(())
}
