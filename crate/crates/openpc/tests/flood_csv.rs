mod common;

use std::collections::BTreeMap;

use common::Harness;
use openpc::config::ServiceConfig;
use openpc_core::flood::{self, FloodConfig, FloodResult, FloodRow};
use serde::Deserialize;
use serde_json::json;

#[derive(Debug, Deserialize, PartialEq)]
struct CsvRow {
    blocks: u32,
    size_bytes: u64,
    mean_elapsed_s: f64,
    stddev_s: f64,
    n: u32,
}

fn parse_csv(text: &str) -> Vec<CsvRow> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(headers, ["blocks", "size_bytes", "mean_elapsed_s", "stddev_s", "n"]);
    rdr.deserialize().map(|r| r.unwrap()).collect()
}

fn jittery() -> serde_json::Value {
    json!({
        "blocks": "1,3",
        "nodes_per_block": 2,
        "size_start": "1KB",
        "size_stop": "12KB",
        "size_step": "1KB",
        "repetitions": 5,
        "jitter": 0.25,
        "seed": 7,
    })
}

#[test]
fn csv_route_matches_the_stored_result() {
    let mut h = Harness::new(ServiceConfig::default());
    let rec = h.ok_post("admin", "/bench/flood", jittery());
    let id = rec["id"].as_u64().unwrap();
    let csv = h.get_as("admin", &format!("/bench/flood/{}/csv", id));
    let rows = parse_csv(csv.text_body().unwrap());
    let stored: FloodResult = serde_json::from_value(rec["result"].clone()).unwrap();
    assert_eq!(rows.len(), 2 * 12);
    for (c, s) in rows.iter().zip(&stored.rows) {
        assert_eq!((c.blocks, c.size_bytes, c.n), (s.blocks, s.size_bytes, s.n));
        assert_eq!(c.mean_elapsed_s, s.mean_elapsed_s);
        assert_eq!(c.stddev_s, s.stddev_s);
        assert_eq!(c.n, 5);
    }
    let keys: Vec<(u32, u64)> = rows.iter().map(|r| (r.blocks, r.size_bytes)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(h.get_as("admin", "/bench/flood/99/csv").status, 404);
}

#[test]
fn means_match_an_independent_recomputation() {
    let mut h = Harness::new(ServiceConfig::default());
    let rec = h.ok_post("admin", "/bench/flood", jittery());
    let text = h.get_as("admin", &format!("/bench/flood/{}/csv", rec["id"])).text_body().unwrap().to_string();
    let rows = parse_csv(&text);

    // Same config, run locally for the raw samples.
    let mut cfg = FloodConfig::default();
    for (k, v) in jittery().as_object().unwrap() {
        let v = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
        cfg.set(k, &v).unwrap();
    }
    let run = flood::run(&cfg, 16).unwrap();
    let mut cells: BTreeMap<(u32, u64), Vec<f64>> = BTreeMap::new();
    for s in &run.samples {
        cells.entry((s.block_count, s.size)).or_default().push(s.elapsed);
    }
    assert_eq!(cells.len(), rows.len());
    for r in &rows {
        let xs = &cells[&(r.blocks, r.size_bytes)];
        // Summed in reverse, with the variance from the raw second moment.
        let n = xs.len() as f64;
        let mean = xs.iter().rev().fold(0.0, |a, x| a + x) / n;
        let second = xs.iter().rev().map(|x| x * x).fold(0.0, |a, x| a + x) / n;
        let sd = (second - mean * mean).max(0.0).sqrt();
        assert!(((r.mean_elapsed_s - mean) / mean).abs() < 1e-12, "{:?} vs {}", r, mean);
        assert!((r.stddev_s - sd).abs() < 1e-9 * mean, "{:?} vs {}", r, sd);
        assert!(r.stddev_s > 0.0, "jitter produced no spread at {:?}", r);
    }
}

#[test]
fn emit_then_parse_round_trips() {
    let result = FloodResult {
        rows: vec![
            FloodRow { blocks: 1, size_bytes: 1024, mean_elapsed_s: 0.1 + 0.2, stddev_s: 1e-17, n: 6 },
            FloodRow { blocks: 2, size_bytes: 2048, mean_elapsed_s: 1.0 / 3.0, stddev_s: 0.0, n: 6 },
        ],
    };
    let rows = parse_csv(&flood::emit(&result, flood::OutputFormat::Csv));
    let back: Vec<FloodRow> = rows
        .into_iter()
        .map(|r| FloodRow {
            blocks: r.blocks,
            size_bytes: r.size_bytes,
            mean_elapsed_s: r.mean_elapsed_s,
            stddev_s: r.stddev_s,
            n: r.n,
        })
        .collect();
    assert_eq!(back, result.rows);
}

#[test]
fn kv_file_and_api_body_configure_the_same_run() {
    let text = "# desk run\nblocks=1,3\nnodes_per_block=2\nsize_start=1KB\nsize_stop=12KB\nsize_step=1KB\nrepetitions=5\njitter=0.25\nseed=7\n";
    let from_file = FloodConfig::from_kv(text).unwrap();
    let mut h = Harness::new(ServiceConfig::default());
    let rec = h.ok_post("admin", "/bench/flood", jittery());
    let from_api: FloodConfig = serde_json::from_value(rec["config"].clone()).unwrap();
    assert_eq!(from_file, from_api);
}

#[test]
fn too_few_nodes_is_a_conflict() {
    let mut h = Harness::new(ServiceConfig {
        pool_size: 6,
        ..ServiceConfig::default()
    });
    let r = h.post_as("admin", "/bench/flood", json!({ "blocks": "2", "nodes_per_block": 4 }));
    assert_eq!(r.status, 409);
    let r = h.post_as("admin", "/bench/flood", json!({ "blocks": "5" }));
    assert_eq!(r.status, 422);
}
