//! Flood benchmark for the single-master multi-block topology.
//!
//! Every node of `b` blocks receives `size` bytes at once. A fixed fraction
//! of each stream transits the master, whose link is one FIFO shared by all
//! streams; the rest goes over the node's own direct link once its master
//! share has arrived. Time is simulated, so results are deterministic for a
//! given seed.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::fabric::{NodeFabric, NodeState};

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FloodError {
    #[error("need {needed} nodes up, {available} available")]
    InsufficientNodes { needed: u64, available: u64 },
    #[error("invalid flood configuration: {0}")]
    InvalidConfig(String),
    #[error("samples are ragged: {0}")]
    RaggedSamples(String),
}

fn invalid(msg: impl Into<String>) -> FloodError {
    FloodError::InvalidConfig(msg.into())
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// An exact ratio `num/den` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Fraction {
    num: u64,
    den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Fraction, FloodError> {
        if den == 0 {
            return Err(invalid("fraction denominator is zero"));
        }
        let g = gcd(num as u128, den as u128) as u64;
        Ok(Fraction { num: num / g, den: den / g })
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl FromStr for Fraction {
    type Err = FloodError;

    /// Accepts `a/b` or a decimal such as `0.30`.
    fn from_str(s: &str) -> Result<Fraction, FloodError> {
        let s = s.trim();
        let bad = || invalid(format!("bad fraction {:?}", s));
        if let Some((a, b)) = s.split_once('/') {
            return Fraction::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        let digits = |t: &str| t.bytes().all(|b| b.is_ascii_digit());
        if (int.is_empty() && frac.is_empty()) || !digits(int) || !digits(frac) || frac.len() > 18 {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
        Fraction::new(num, den)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl TryFrom<String> for Fraction {
    type Error = FloodError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Fraction> for String {
    fn from(f: Fraction) -> String {
        f.to_string()
    }
}

/// A byte count that may be fractional, kept exact as `units/den`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExactBytes {
    pub units: u128,
    pub den: u64,
}

impl ExactBytes {
    pub fn whole(bytes: u64) -> ExactBytes {
        ExactBytes { units: bytes as u128, den: 1 }
    }

    pub fn as_f64(self) -> f64 {
        self.units as f64 / self.den as f64
    }

    /// `Some` when the count is an integral number of bytes.
    pub fn as_whole(self) -> Option<u128> {
        (self.units % self.den as u128 == 0).then(|| self.units / self.den as u128)
    }

    pub fn checked_add(self, other: ExactBytes) -> Option<ExactBytes> {
        let den = (self.den as u128).checked_mul(other.den as u128)?;
        let units = self
            .units
            .checked_mul(other.den as u128)?
            .checked_add(other.units.checked_mul(self.den as u128)?)?;
        let g = gcd(units, den);
        Some(ExactBytes {
            units: units / g,
            den: u64::try_from(den / g).ok()?,
        })
    }
}

impl PartialEq for ExactBytes {
    fn eq(&self, other: &Self) -> bool {
        self.units * other.den as u128 == other.units * self.den as u128
    }
}

impl Eq for ExactBytes {}

impl fmt::Display for ExactBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_whole() {
            Some(b) => write!(f, "{}", b),
            None => write!(f, "{}/{}", self.units, self.den),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeSweep {
    pub start: u64,
    pub stop: u64,
    pub step: u64,
}

impl SizeSweep {
    pub fn sizes(&self) -> impl Iterator<Item = u64> {
        let SizeSweep { start, stop, step } = *self;
        let n = if step == 0 || start > stop { 0 } else { (stop - start) / step + 1 };
        (0..n).map(move |i| start + i * step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// Bytes per second through the master.
    pub master_bandwidth: f64,
    /// Bytes per second on each node's own link.
    pub direct_bandwidth: f64,
    /// Seconds added once per stream.
    pub latency: f64,
    /// Each transfer takes `(1 + jitter * u)` times its nominal duration,
    /// `u` uniform in [0, 1).
    pub jitter: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            master_bandwidth: (10 * MIB) as f64,
            direct_bandwidth: (10 * MIB) as f64,
            latency: 0.001,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodConfig {
    pub block_counts: Vec<u32>,
    pub nodes_per_block: u32,
    pub sizes: SizeSweep,
    pub repetitions: u32,
    pub master_fraction: Fraction,
    pub link: LinkModel,
    pub seed: u64,
}

impl Default for FloodConfig {
    fn default() -> Self {
        FloodConfig {
            block_counts: alloc::vec![1, 2, 3, 4],
            nodes_per_block: 4,
            sizes: SizeSweep {
                start: KIB,
                stop: 100 * KIB,
                step: KIB,
            },
            repetitions: 6,
            master_fraction: Fraction { num: 3, den: 10 },
            link: LinkModel::default(),
            seed: 0,
        }
    }
}

fn parse_size(v: &str) -> Option<u64> {
    let v = v.trim();
    let upper = v.to_ascii_uppercase();
    let (digits, mult) = if let Some(d) = upper.strip_suffix("MB") {
        (d, MIB)
    } else if let Some(d) = upper.strip_suffix("KB") {
        (d, KIB)
    } else if let Some(d) = upper.strip_suffix('B') {
        (d, 1)
    } else {
        (upper.as_str(), 1)
    };
    digits.trim().parse::<u64>().ok()?.checked_mul(mult)
}

impl FloodConfig {
    pub fn validate(&self) -> Result<(), FloodError> {
        if self.block_counts.is_empty() {
            return Err(invalid("no block counts"));
        }
        if let Some(b) = self.block_counts.iter().find(|b| !(1..=4).contains(*b)) {
            return Err(invalid(format!("block count {} outside 1..=4", b)));
        }
        if self.nodes_per_block == 0 {
            return Err(invalid("nodes_per_block must be positive"));
        }
        if self.sizes.step == 0 {
            return Err(invalid("size step must be positive"));
        }
        if self.sizes.start > self.sizes.stop {
            return Err(invalid("size start exceeds stop"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be at least 1"));
        }
        if self.master_fraction.num > self.master_fraction.den {
            return Err(invalid("master fraction exceeds 1"));
        }
        let l = &self.link;
        if !(l.master_bandwidth.is_finite() && l.master_bandwidth > 0.0)
            || !(l.direct_bandwidth.is_finite() && l.direct_bandwidth > 0.0)
        {
            return Err(invalid("bandwidths must be positive"));
        }
        if !(l.latency.is_finite() && l.latency >= 0.0) || !(l.jitter.is_finite() && l.jitter >= 0.0) {
            return Err(invalid("latency and jitter must be non-negative"));
        }
        Ok(())
    }

    pub fn nodes_needed(&self) -> u64 {
        self.block_counts.iter().copied().max().unwrap_or(0) as u64 * self.nodes_per_block as u64
    }

    /// Applies one `key=value` setting. Sizes accept `B`, `KB` and `MB`
    /// suffixes (binary multiples).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), FloodError> {
        let bad = || invalid(format!("bad value for {}: {:?}", key, value));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        match key.trim() {
            "blocks" | "block_counts" => {
                self.block_counts = value
                    .split(',')
                    .map(|b| b.trim().parse().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?
            }
            "nodes_per_block" => self.nodes_per_block = value.trim().parse().map_err(|_| bad())?,
            "size_start" => self.sizes.start = parse_size(value).ok_or_else(bad)?,
            "size_stop" => self.sizes.stop = parse_size(value).ok_or_else(bad)?,
            "size_step" => self.sizes.step = parse_size(value).ok_or_else(bad)?,
            "repetitions" => self.repetitions = value.trim().parse().map_err(|_| bad())?,
            "master_fraction" => self.master_fraction = value.parse()?,
            "master_bandwidth" => self.link.master_bandwidth = num(value)?,
            "direct_bandwidth" => self.link.direct_bandwidth = num(value)?,
            "latency" => self.link.latency = num(value)?,
            "jitter" => self.link.jitter = num(value)?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad())?,
            other => return Err(invalid(format!("unknown key {:?}", other))),
        }
        Ok(())
    }

    /// Reads a flat `key=value` file over the defaults. Blank lines and `#`
    /// comments are skipped.
    pub fn from_kv(text: &str) -> Result<FloodConfig, FloodError> {
        let mut cfg = FloodConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodSample {
    pub block_count: u32,
    pub size: u64,
    pub repetition: u32,
    pub elapsed: f64,
    pub master_bytes: ExactBytes,
    pub direct_bytes: ExactBytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodRow {
    pub blocks: u32,
    pub size_bytes: u64,
    pub mean_elapsed_s: f64,
    pub stddev_s: f64,
    pub n: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FloodResult {
    pub rows: Vec<FloodRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodRun {
    pub samples: Vec<FloodSample>,
    pub result: FloodResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// Master share has been requested.
    Queue,
    /// Master share delivered.
    MasterDone,
    /// Direct share delivered.
    DirectDone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    node: u64,
    phase: Phase,
}

impl Eq for Event {}

impl Ord for Event {
    // min-heap on (time, node id)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn run_seed(seed: u64, blocks: u32, size: u64, rep: u32) -> u64 {
    // splitmix-style mixing so neighbouring cells get unrelated streams
    let mut z = seed ^ ((blocks as u64) << 56) ^ size.rotate_left(17) ^ ((rep as u64) << 40);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One flood of `size` bytes to `streams` nodes. Returns the elapsed time.
fn simulate(streams: u64, size: u64, fraction: Fraction, link: &LinkModel, rng: &mut ChaCha8Rng) -> f64 {
    let master_share = size as f64 * fraction.as_f64();
    let direct_share = size as f64 - master_share;
    let mut jittered = |d: f64| {
        if link.jitter > 0.0 {
            d * (1.0 + link.jitter * unit(rng))
        } else {
            d
        }
    };
    let mut heap: BinaryHeap<Event> = (0..streams)
        .map(|node| Event { time: 0.0, node, phase: Phase::Queue })
        .collect();
    let mut master_free_at = 0.0f64;
    let mut elapsed = 0.0f64;
    while let Some(ev) = heap.pop() {
        match ev.phase {
            Phase::Queue => {
                let start = master_free_at.max(ev.time);
                master_free_at = start + jittered(master_share / link.master_bandwidth);
                heap.push(Event {
                    time: master_free_at,
                    node: ev.node,
                    phase: Phase::MasterDone,
                });
            }
            Phase::MasterDone => heap.push(Event {
                time: ev.time + jittered(direct_share / link.direct_bandwidth),
                node: ev.node,
                phase: Phase::DirectDone,
            }),
            Phase::DirectDone => elapsed = elapsed.max(ev.time + link.latency),
        }
    }
    elapsed
}

/// Counts the nodes the fabric can bring up for a benchmark: everything not
/// faulted, judged on a scratch copy with idle nodes powered on.
pub fn available_nodes(fabric: &NodeFabric) -> u64 {
    let mut scratch = fabric.clone();
    let ids: Vec<_> = scratch.node_ids().cloned().collect();
    for id in &ids {
        if scratch.state(id) == Ok(NodeState::Off) {
            scratch.power_exec(&format!("PWR ON {}", id.protocol_number()));
        }
    }
    while let Some(t) = scratch.next_event_time() {
        if ids
            .iter()
            .all(|id| scratch.state(id) != Ok(NodeState::Booting))
        {
            break;
        }
        scratch.advance_to(t);
    }
    ids.iter()
        .filter(|id| matches!(scratch.state(id), Ok(NodeState::Up | NodeState::Busy)))
        .count() as u64
}

/// Runs the full sweep. `available` is the number of nodes that can take
/// part.
pub fn run(config: &FloodConfig, available: u64) -> Result<FloodRun, FloodError> {
    config.validate()?;
    let needed = config.nodes_needed();
    if available < needed {
        return Err(FloodError::InsufficientNodes { needed, available });
    }
    let f = config.master_fraction;
    let mut samples = Vec::new();
    for &blocks in &config.block_counts {
        let streams = blocks as u64 * config.nodes_per_block as u64;
        for size in config.sizes.sizes() {
            let total = size as u128 * streams as u128;
            let master = ExactBytes {
                units: total * f.num as u128,
                den: f.den,
            };
            let direct = ExactBytes {
                units: total * (f.den - f.num) as u128,
                den: f.den,
            };
            for rep in 0..config.repetitions {
                let mut rng = ChaCha8Rng::seed_from_u64(run_seed(config.seed, blocks, size, rep));
                samples.push(FloodSample {
                    block_count: blocks,
                    size,
                    repetition: rep,
                    elapsed: simulate(streams, size, f, &config.link, &mut rng),
                    master_bytes: master,
                    direct_bytes: direct,
                });
            }
        }
    }
    let result = aggregate(&samples)?;
    Ok(FloodRun { samples, result })
}

/// Mean and population standard deviation per (block count, size).
pub fn aggregate(samples: &[FloodSample]) -> Result<FloodResult, FloodError> {
    let mut cells: BTreeMap<(u32, u64), Vec<f64>> = BTreeMap::new();
    for s in samples {
        cells.entry((s.block_count, s.size)).or_default().push(s.elapsed);
    }
    let mut expected = None;
    let mut rows = Vec::with_capacity(cells.len());
    for ((blocks, size), xs) in cells {
        match expected {
            None => expected = Some(xs.len()),
            Some(n) if n != xs.len() => {
                return Err(FloodError::RaggedSamples(format!(
                    "{} blocks, {} bytes has {} samples, expected {}",
                    blocks,
                    size,
                    xs.len(),
                    n
                )))
            }
            _ => {}
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        rows.push(FloodRow {
            blocks,
            size_bytes: size,
            mean_elapsed_s: mean,
            stddev_s: libm::sqrt(var),
            n: xs.len() as u32,
        });
    }
    Ok(FloodResult { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Table,
}

pub const CSV_HEADER: &str = "blocks,size_bytes,mean_elapsed_s,stddev_s,n";

/// Renders rows sorted by (blocks, size).
pub fn emit(result: &FloodResult, format: OutputFormat) -> String {
    let mut rows: Vec<&FloodRow> = result.rows.iter().collect();
    rows.sort_by_key(|r| (r.blocks, r.size_bytes));
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.blocks, r.size_bytes, r.mean_elapsed_s, r.stddev_s, r.n
                ));
            }
        }
        OutputFormat::Table => {
            out.push_str(&format!(
                "{:>6} {:>12} {:>16} {:>14} {:>4}\n",
                "blocks", "size_bytes", "mean_elapsed_s", "stddev_s", "n"
            ));
            for r in rows {
                out.push_str(&format!(
                    "{:>6} {:>12} {:>16.9} {:>14.9} {:>4}\n",
                    r.blocks, r.size_bytes, r.mean_elapsed_s, r.stddev_s, r.n
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single(size: u64) -> FloodConfig {
        FloodConfig {
            block_counts: vec![1],
            nodes_per_block: 1,
            sizes: SizeSweep { start: size, stop: size, step: 1 },
            repetitions: 1,
            ..FloodConfig::default()
        }
    }

    #[test]
    fn fraction_parsing() {
        assert_eq!("0.30".parse::<Fraction>().unwrap(), Fraction::new(3, 10).unwrap());
        assert_eq!("3/10".parse::<Fraction>().unwrap(), Fraction::new(30, 100).unwrap());
        assert_eq!("1".parse::<Fraction>().unwrap(), Fraction::new(1, 1).unwrap());
        assert_eq!(".5".parse::<Fraction>().unwrap(), Fraction::new(1, 2).unwrap());
        assert!("0.3.1".parse::<Fraction>().is_err());
        assert!("1/0".parse::<Fraction>().is_err());
        assert!("-0.3".parse::<Fraction>().is_err());
        assert!(".".parse::<Fraction>().is_err());
    }

    #[test]
    fn master_byte_accounting() {
        let cfg = FloodConfig {
            block_counts: vec![4],
            sizes: SizeSweep { start: 10 * KIB, stop: 10 * KIB, step: KIB },
            repetitions: 2,
            ..FloodConfig::default()
        };
        let run = run(&cfg, 16).unwrap();
        assert_eq!(run.samples.len(), 2);
        for s in &run.samples {
            assert_eq!(s.master_bytes.as_whole(), Some(48 * 1024));
            assert_eq!(s.direct_bytes.as_whole(), Some(112 * 1024));
        }
    }

    #[test]
    fn fractional_bytes_stay_exact() {
        let cfg = FloodConfig {
            block_counts: vec![1],
            nodes_per_block: 1,
            sizes: SizeSweep { start: 7, stop: 7, step: 1 },
            repetitions: 1,
            ..FloodConfig::default()
        };
        let s = &run(&cfg, 1).unwrap().samples[0];
        assert_eq!(s.master_bytes, ExactBytes { units: 21, den: 10 });
        assert_eq!(s.master_bytes.as_whole(), None);
        assert_eq!(s.master_bytes.checked_add(s.direct_bytes), Some(ExactBytes::whole(7)));
        assert_eq!(s.master_bytes.to_string(), "21/10");
    }

    #[test]
    fn empty_payload_costs_latency() {
        let run = run(&single(0), 1).unwrap();
        let s = &run.samples[0];
        assert_eq!(s.elapsed, 0.001);
        assert_eq!(s.master_bytes.as_whole(), Some(0));
    }

    #[test]
    fn single_stream_closed_form() {
        let size = 37 * KIB;
        let s = &run(&single(size), 1).unwrap().samples[0];
        let bw = (10 * 1024 * 1024) as f64;
        let expected = 0.001 + 0.3 * size as f64 / bw + 0.7 * size as f64 / bw;
        assert!((s.elapsed - expected).abs() < 1e-9, "{} vs {}", s.elapsed, expected);
    }

    #[test]
    fn shared_master_link_serializes() {
        // 8 streams: the last master share finishes after 8 chunks
        let cfg = FloodConfig {
            block_counts: vec![2],
            nodes_per_block: 4,
            sizes: SizeSweep { start: 1000, stop: 1000, step: 1 },
            repetitions: 1,
            master_fraction: Fraction::new(1, 2).unwrap(),
            link: LinkModel {
                master_bandwidth: 1000.0,
                direct_bandwidth: 500.0,
                latency: 0.5,
                jitter: 0.0,
            },
            seed: 1,
        };
        let s = &run(&cfg, 8).unwrap().samples[0];
        assert!((s.elapsed - (0.5 + 8.0 * 0.5 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn jitter_is_seeded() {
        let mut cfg = FloodConfig {
            block_counts: vec![2],
            sizes: SizeSweep { start: KIB, stop: 4 * KIB, step: KIB },
            repetitions: 3,
            ..FloodConfig::default()
        };
        cfg.link.jitter = 0.2;
        let a = run(&cfg, 8).unwrap();
        let b = run(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.result.rows.iter().any(|r| r.stddev_s > 0.0));
        cfg.seed = 9;
        assert_ne!(run(&cfg, 8).unwrap().samples, a.samples);
    }

    #[test]
    fn config_errors() {
        let mut cfg = FloodConfig::default();
        assert_eq!(
            run(&cfg, 15),
            Err(FloodError::InsufficientNodes { needed: 16, available: 15 })
        );
        cfg.sizes.step = 0;
        assert!(matches!(run(&cfg, 16), Err(FloodError::InvalidConfig(_))));
        let mut cfg = FloodConfig::default();
        cfg.block_counts = vec![5];
        assert!(cfg.validate().is_err());
        let mut cfg = FloodConfig::default();
        cfg.repetitions = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = FloodConfig::default();
        cfg.master_fraction = Fraction::new(11, 10).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn aggregate_statistics() {
        let sample = |size, rep, elapsed| FloodSample {
            block_count: 1,
            size,
            repetition: rep,
            elapsed,
            master_bytes: ExactBytes::whole(0),
            direct_bytes: ExactBytes::whole(0),
        };
        let six: Vec<_> = (0..6).map(|r| sample(1, r, 2.0)).collect();
        let r = aggregate(&six).unwrap();
        assert_eq!(r.rows[0].mean_elapsed_s, 2.0);
        assert_eq!(r.rows[0].stddev_s, 0.0);
        assert_eq!(r.rows[0].n, 6);

        let three = [sample(1, 0, 1.0), sample(1, 1, 2.0), sample(1, 2, 3.0)];
        let r = aggregate(&three).unwrap();
        assert_eq!(r.rows[0].mean_elapsed_s, 2.0);
        assert!((r.rows[0].stddev_s - libm::sqrt(2.0 / 3.0)).abs() < 1e-15);

        let ragged = [sample(1, 0, 1.0), sample(1, 1, 1.0), sample(2, 0, 1.0)];
        assert!(matches!(aggregate(&ragged), Err(FloodError::RaggedSamples(_))));
        assert_eq!(aggregate(&[]).unwrap(), FloodResult::default());
    }

    #[test]
    fn csv_output() {
        assert_eq!(emit(&FloodResult::default(), OutputFormat::Csv), "blocks,size_bytes,mean_elapsed_s,stddev_s,n\n");
        let r = FloodResult {
            rows: vec![
                FloodRow { blocks: 2, size_bytes: 1024, mean_elapsed_s: 0.5, stddev_s: 0.0, n: 6 },
                FloodRow { blocks: 1, size_bytes: 2048, mean_elapsed_s: 0.25, stddev_s: 0.125, n: 6 },
            ],
        };
        assert_eq!(
            emit(&r, OutputFormat::Csv),
            "blocks,size_bytes,mean_elapsed_s,stddev_s,n\n1,2048,0.25,0.125,6\n2,1024,0.5,0,6\n"
        );
        let table = emit(&r, OutputFormat::Table);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().trim_start().starts_with("1 "));
    }

    #[test]
    fn key_value_config() {
        let cfg = FloodConfig::from_kv(
            "# desk run\nblocks = 1,2\nnodes_per_block=2\nsize_start=1KB\nsize_stop=1MB\nsize_step=512KB\nmaster_fraction=0.25\njitter=0.1\nseed=42\n",
        )
        .unwrap();
        assert_eq!(cfg.block_counts, vec![1, 2]);
        assert_eq!(cfg.sizes, SizeSweep { start: 1024, stop: MIB, step: 512 * KIB });
        assert_eq!(cfg.sizes.sizes().collect::<Vec<_>>(), vec![1024, 1024 + 512 * 1024]);
        assert_eq!(cfg.master_fraction, Fraction::new(1, 4).unwrap());
        assert_eq!(cfg.seed, 42);
        assert!(FloodConfig::from_kv("colour=blue").is_err());
        assert!(FloodConfig::from_kv("repetitions").is_err());
        assert!(FloodConfig::from_kv("repetitions=0").is_err());
    }

    #[test]
    fn available_nodes_skips_faults() {
        let mut f = NodeFabric::with_pool(4, crate::fabric::FabricConfig::default());
        f.inject_fault(&crate::ids::NodeId::numbered(2)).unwrap();
        assert_eq!(available_nodes(&f), 3);
        assert_eq!(f.state(&crate::ids::NodeId::numbered(1)), Ok(NodeState::Off));
    }
}
