//! Report building and measurement for the `ttss-bench` command line tool.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};
use ttss_core::pipesim::{run_sim, SimConfig, SimReport};
use ttss_core::traffic::{read_trace, TraceRecord};
use ttss_core::ttss::probe_stats;
use ttss_core::{parse_ruleset, Algorithm, Classifier, FlowId, MatchResult, PacketHeader, RuleSet};

pub const SCHEMA: u32 = 1;
pub const MIN_REPETITIONS: usize = 3;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or argument values.
    Usage(String),
    /// Unreadable or malformed input, or unwritable output.
    Io(anyhow::Error),
    /// Two classifiers disagreed on a decision.
    Mismatch(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Mismatch(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Io(e) => write!(f, "{e:#}"),
            Failure::Mismatch(m) => write!(f, "decision mismatch: {m}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file's parsed contents together with its path and digest.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub path: String,
    pub sha256: String,
}

pub fn load_rules(path: &Path) -> Outcome<Loaded<RuleSet>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8(bytes.clone())
        .with_context(|| format!("{} is not UTF-8", path.display()))?;
    let parsed = parse_ruleset(&text).with_context(|| format!("parsing {}", path.display()))?;
    for w in &parsed.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(Loaded {
        value: parsed.ruleset,
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn load_trace(path: &Path) -> Outcome<Loaded<Vec<TraceRecord>>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let value =
        read_trace(bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Loaded {
        value,
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn load_sim_config(path: &Path) -> Outcome<Loaded<SimConfig>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8(bytes.clone())
        .with_context(|| format!("{} is not UTF-8", path.display()))?;
    let value =
        SimConfig::parse_kv(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Loaded {
        value,
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn write_file(path: &Path, contents: &[u8]) -> Outcome<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Classifies `hdrs` split into `workers` contiguous shards. The output is in
/// trace order whatever the worker count.
pub fn classify_sharded(
    c: &dyn Classifier,
    hdrs: &[PacketHeader],
    workers: usize,
) -> Vec<MatchResult> {
    let workers = workers.max(1);
    if workers == 1 || hdrs.len() < 2 {
        return hdrs.iter().map(|h| c.classify(h)).collect();
    }
    let chunk = hdrs.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = hdrs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|h| c.classify(h)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("classifier worker panicked"))
            .collect()
    })
}

/// Median packets per second over `reps` (at least three) timed passes.
pub fn measure_throughput(
    c: &dyn Classifier,
    hdrs: &[PacketHeader],
    workers: usize,
    reps: usize,
) -> f64 {
    let mut samples: Vec<f64> = (0..reps.max(MIN_REPETITIONS))
        .map(|_| {
            let t = Instant::now();
            let out = classify_sharded(c, hdrs, workers);
            std::hint::black_box(&out);
            hdrs.len() as f64 / t.elapsed().as_secs_f64().max(1e-9)
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

pub fn flow_label(flow: Option<FlowId>) -> String {
    flow.map_or_else(|| "unmatched".to_string(), |f| f.get().to_string())
}

/// First packet index where `got` and `want` pick a different rule or flow.
pub fn first_divergence(want: &[MatchResult], got: &[MatchResult]) -> Option<usize> {
    want.iter()
        .zip(got)
        .position(|(a, b)| a.decision() != b.decision())
        .or_else(|| (want.len() != got.len()).then(|| want.len().min(got.len())))
}

#[derive(Debug, Clone, Serialize)]
pub struct InputInfo {
    pub rules_path: String,
    pub rules_sha256: String,
    pub rule_count: usize,
    pub ttl_threshold: u8,
    pub trace_path: String,
    pub trace_sha256: String,
    pub packet_count: usize,
}

impl InputInfo {
    pub fn new(rules: &Loaded<RuleSet>, trace: &Loaded<Vec<TraceRecord>>) -> Self {
        InputInfo {
            rules_path: rules.path.clone(),
            rules_sha256: rules.sha256.clone(),
            rule_count: rules.value.len(),
            ttl_threshold: rules.value.ttl_threshold(),
            trace_path: trace.path.clone(),
            trace_sha256: trace.sha256.clone(),
            packet_count: trace.value.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSettings {
    pub proto_partition: bool,
    pub workers: usize,
    pub repetitions: usize,
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub mean: f64,
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifierReport {
    pub algorithm: String,
    pub build_ns: Option<u64>,
    pub classify_throughput_pps: Option<f64>,
    pub tables: usize,
    pub entries: usize,
    pub probes: ProbeReport,
    pub flow_counts: BTreeMap<String, u64>,
    pub tuple_hits: BTreeMap<String, u64>,
}

/// A built classifier together with how long building took.
pub struct Built {
    pub algorithm: Algorithm,
    pub classifier: Box<dyn Classifier>,
    pub build_ns: u64,
}

pub fn build_timed(algorithm: Algorithm, rules: &RuleSet, proto_partition: bool) -> Built {
    let t = Instant::now();
    let classifier = algorithm.build(rules, proto_partition);
    Built {
        algorithm,
        classifier,
        build_ns: t.elapsed().as_nanos() as u64,
    }
}

pub fn classifier_report(
    built: &Built,
    hdrs: &[PacketHeader],
    results: &[MatchResult],
    settings: &RunSettings,
) -> ClassifierReport {
    let c = &*built.classifier;
    let stats = probe_stats(c, hdrs);
    let mut flow_counts = BTreeMap::new();
    for r in results {
        *flow_counts.entry(flow_label(r.flow())).or_default() += 1;
    }
    ClassifierReport {
        algorithm: built.algorithm.to_string(),
        build_ns: settings.timing.then_some(built.build_ns),
        classify_throughput_pps: settings
            .timing
            .then(|| measure_throughput(c, hdrs, settings.workers, settings.repetitions)),
        tables: c.table_count(),
        entries: c.entry_count(),
        probes: ProbeReport {
            mean: stats.mean,
            min: stats.min,
            max: stats.max,
        },
        flow_counts,
        tuple_hits: stats
            .tuple_hits
            .iter()
            .map(|(t, n)| (t.to_string(), *n))
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyReport {
    pub schema: u32,
    pub inputs: InputInfo,
    pub settings: RunSettings,
    pub oracle_checked: bool,
    pub result: ClassifierReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSection {
    pub config: SimConfig,
    pub config_sha256: Option<String>,
    pub runs: Vec<SimReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub schema: u32,
    pub inputs: InputInfo,
    pub settings: RunSettings,
    pub decisions_identical: bool,
    pub classifiers: Vec<ClassifierReport>,
    pub simulation: Option<SimSection>,
}

/// Options shared by `classify` and `compare`.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub settings: RunSettings,
    /// Test hook: build one classifier from a ruleset whose rule for the first
    /// packet has a different flow, so the equivalence check must trip.
    pub inject_fault: bool,
}

/// Rules with the first packet's winning rule sent to another flow.
pub fn corrupted(rules: &RuleSet, hdrs: &[PacketHeader]) -> RuleSet {
    let target = hdrs
        .first()
        .and_then(|h| ttss_core::classify_linear(rules, h).rule_id())
        .unwrap_or(0);
    let mut list = rules.rules().to_vec();
    let r = list
        .iter_mut()
        .find(|r| r.id == target)
        .expect("target rule exists");
    r.flow = FlowId::new(r.flow.get() % u32::MAX + 1).expect("positive");
    RuleSet::new(list, rules.ttl_threshold()).expect("same shape as a valid ruleset")
}

pub fn run_classify(
    rules: &Loaded<RuleSet>,
    trace: &Loaded<Vec<TraceRecord>>,
    algorithm: Algorithm,
    check_oracle: bool,
    opts: &RunOptions,
) -> Outcome<ClassifyReport> {
    let hdrs: Vec<PacketHeader> = trace.value.iter().map(|r| r.hdr).collect();
    let effective = if opts.inject_fault {
        corrupted(&rules.value, &hdrs)
    } else {
        rules.value.clone()
    };
    let built = build_timed(algorithm, &effective, opts.settings.proto_partition);
    let results = classify_sharded(&*built.classifier, &hdrs, opts.settings.workers);
    if check_oracle {
        let want: Vec<_> = hdrs
            .iter()
            .map(|h| ttss_core::classify_linear(&rules.value, h))
            .collect();
        if let Some(i) = first_divergence(&want, &results) {
            return Err(Failure::Mismatch(format!(
                "{algorithm} differs from linear search at packet {i}: {:?} vs {:?}",
                results[i].decision(),
                want[i].decision()
            )));
        }
    }
    Ok(ClassifyReport {
        schema: SCHEMA,
        inputs: InputInfo::new(rules, trace),
        settings: opts.settings.clone(),
        oracle_checked: check_oracle,
        result: classifier_report(&built, &hdrs, &results, &opts.settings),
    })
}

pub fn run_compare(
    rules: &Loaded<RuleSet>,
    trace: &Loaded<Vec<TraceRecord>>,
    sim: Option<(SimConfig, Option<String>)>,
    opts: &RunOptions,
) -> Outcome<CompareReport> {
    let hdrs: Vec<PacketHeader> = trace.value.iter().map(|r| r.hdr).collect();
    let part = opts.settings.proto_partition;
    let built: Vec<Built> = Algorithm::ALL
        .into_iter()
        .map(|a| {
            if opts.inject_fault && a == Algorithm::Tss {
                build_timed(a, &corrupted(&rules.value, &hdrs), part)
            } else {
                build_timed(a, &rules.value, part)
            }
        })
        .collect();
    let results: Vec<Vec<MatchResult>> = built
        .iter()
        .map(|b| classify_sharded(&*b.classifier, &hdrs, opts.settings.workers))
        .collect();
    for (b, r) in built.iter().zip(&results).skip(1) {
        if let Some(i) = first_divergence(&results[0], r) {
            return Err(Failure::Mismatch(format!(
                "{} differs from linear search at packet {i}: {:?} vs {:?}",
                b.algorithm,
                r[i].decision(),
                results[0][i].decision()
            )));
        }
    }
    let classifiers = built
        .iter()
        .zip(&results)
        .map(|(b, r)| classifier_report(b, &hdrs, r, &opts.settings))
        .collect();
    let simulation = match sim {
        None => None,
        Some((config, config_sha256)) => {
            let runs = built
                .iter()
                .map(|b| run_sim(&trace.value, &*b.classifier, &config))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            Some(SimSection {
                config,
                config_sha256,
                runs,
            })
        }
    };
    Ok(CompareReport {
        schema: SCHEMA,
        inputs: InputInfo::new(rules, trace),
        settings: opts.settings.clone(),
        decisions_identical: true,
        classifiers,
        simulation,
    })
}

/// Writes one CSV per figure-like series into `dir`.
pub fn write_compare_csv(report: &CompareReport, dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let io = |e: csv::Error| Failure::Io(e.into());

    let path = dir.join("classifiers.csv");
    let mut w = csv::Writer::from_path(&path).map_err(io)?;
    w.write_record([
        "algorithm",
        "throughput_pps",
        "build_ns",
        "mean_probes",
        "max_probes",
        "tables",
        "entries",
    ])
    .map_err(io)?;
    for c in &report.classifiers {
        w.write_record([
            c.algorithm.clone(),
            c.classify_throughput_pps
                .map_or_else(String::new, |v| format!("{v:.0}")),
            c.build_ns.map_or_else(String::new, |v| v.to_string()),
            format!("{:.6}", c.probes.mean),
            c.probes.max.to_string(),
            c.tables.to_string(),
            c.entries.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;

    if let Some(sim) = &report.simulation {
        let path = dir.join("simulation.csv");
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record([
            "algorithm",
            "classify_busy_ns",
            "classify_idle_ns",
            "classify_blocked_ns",
            "receive_blocked_ns",
            "transmit_rate_mbps",
            "sent_over_received",
        ])
        .map_err(io)?;
        for r in &sim.runs {
            w.write_record([
                r.classifier.clone(),
                r.classify.busy_ns.to_string(),
                r.classify.idle_ns.to_string(),
                r.classify.blocked_ns.to_string(),
                r.receive.blocked_ns.to_string(),
                format!("{:.3}", r.transmit_rate_mbps),
                format!("{:.6}", r.sent_over_received),
            ])
            .map_err(io)?;
        }
        w.flush()
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Pipeline settings for the skewed scenario. Two classify threads make the
/// classify stage the bottleneck at the scenario's four-port input rate, and
/// 10 Gb/s egress keeps the dominant flow's output port from masking it.
pub fn skewed_sim_config() -> SimConfig {
    SimConfig {
        classify_workers: 2,
        port_rate_mbps: 10_000,
        ..SimConfig::default()
    }
}

pub fn to_json<T: Serialize>(v: &T) -> Outcome<String> {
    let mut s = serde_json::to_string_pretty(v).context("serializing report")?;
    s.push('\n');
    Ok(s)
}
