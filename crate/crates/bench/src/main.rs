use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ttss_bench::*;
use ttss_core::pipesim::{run_sim, SimConfig};
use ttss_core::traffic::{
    demo_policy_ruleset, generate_ruleset, generate_trace, parse_weights, skewed_scenario,
    write_trace, LengthDistribution, SkewedConfig, TrafficConfig,
};
use ttss_core::Algorithm;

/// Packet classification benchmark: TSS, TTSS (V1/V2) and linear search.
///
/// Exit codes: 0 ok, 1 file error, 2 usage error, 3 classifier mismatch.
/// `TTSS_SEED` overrides the default seed of every generator.
#[derive(Parser)]
#[command(name = "ttss-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random ruleset (or the demo policy) ending in a catch-all.
    GenRules(GenRules),
    /// Write a constant-rate synthetic trace as CSV.
    GenTrace(GenTrace),
    /// Write the skewed long-prefix scenario: rules, trace and sim config.
    GenSkewed(GenSkewed),
    /// Classify a trace with one algorithm and report.
    Classify(ClassifyCmd),
    /// Run all four classifiers on the same inputs and report.
    Compare(CompareCmd),
    /// Run the pipeline simulation for one classifier.
    Simulate(SimulateCmd),
}

#[derive(Args)]
struct GenRules {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Weights over destination/source prefix lengths 0,8,16,24,32.
    #[arg(long, default_value = "1,2,4,4,1")]
    dist: String,
    /// Write the five-rule multimedia demo policy instead.
    #[arg(long, conflicts_with_all = ["n", "dist"])]
    demo: bool,
    #[arg(long, default_value_t = 64)]
    ttl_threshold: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenTrace {
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Weights for RTP, UDP low TTL, UDP high TTL, TCP.
    #[arg(long, default_value = "1,1,1,1")]
    mix: String,
    #[arg(long, default_value_t = 64)]
    size: u32,
    #[arg(long, default_value_t = 1000)]
    rate: u32,
    #[arg(long, default_value_t = 96)]
    gap: u32,
    /// Line-rate input ports multiplexed into the trace.
    #[arg(long, default_value_t = 1)]
    ports: u32,
    #[arg(long, default_value_t = 64)]
    ttl_threshold: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSkewed {
    #[arg(long, default_value_t = 20_000)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.92)]
    hit_fraction: f64,
    #[arg(long, default_value_t = 4)]
    ports: u32,
    #[arg(long)]
    rules_out: PathBuf,
    #[arg(long)]
    trace_out: PathBuf,
    #[arg(long)]
    sim_config_out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Threads used to classify trace shards.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Timed passes; the median is reported (minimum 3).
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Probe every protocol's tables for every packet.
    #[arg(long)]
    no_partition: bool,
    /// Leave wall-clock measurements out so reports are reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

impl RunArgs {
    fn options(&self) -> Outcome<RunOptions> {
        if self.workers == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        Ok(RunOptions {
            settings: RunSettings {
                proto_partition: !self.no_partition,
                workers: self.workers,
                repetitions: self.repetitions.max(MIN_REPETITIONS),
                timing: !self.no_timing,
            },
            inject_fault: self.inject_fault,
        })
    }
}

#[derive(Args)]
struct ClassifyCmd {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "ttss-v1")]
    algo: Algorithm,
    /// Re-run linear search and fail on any differing decision.
    #[arg(long)]
    check_oracle: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CompareCmd {
    #[command(flatten)]
    run: RunArgs,
    /// Also run the pipeline simulation per classifier.
    #[arg(long)]
    simulate: bool,
    /// key = value pipeline settings; defaults apply otherwise.
    #[arg(long, requires = "simulate")]
    sim_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-series CSV files.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateCmd {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value = "ttss-v1")]
    algo: Algorithm,
    #[arg(long)]
    sim_config: Option<PathBuf>,
    #[arg(long)]
    no_partition: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn seed(arg: Option<u64>, default: u64) -> Outcome<u64> {
    if let Some(s) = arg {
        return Ok(s);
    }
    match std::env::var("TTSS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("TTSS_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(default),
    }
}

fn gen_rules(a: GenRules) -> Outcome<()> {
    let rules = if a.demo {
        demo_policy_ruleset(a.ttl_threshold).map_err(|e| Failure::Usage(e.to_string()))?
    } else {
        if a.n == 0 {
            return Err(Failure::Usage("--n must be at least 1".into()));
        }
        let dist: LengthDistribution = a.dist.parse().map_err(Failure::Usage)?;
        generate_ruleset(seed(a.seed, 1)?, a.n, &dist).map_err(|e| Failure::Usage(e.to_string()))?
    };
    write_file(&a.out, rules.to_text().as_bytes())?;
    eprintln!("wrote {} rules to {}", rules.len(), a.out.display());
    Ok(())
}

fn gen_trace(a: GenTrace) -> Outcome<()> {
    let cfg = TrafficConfig {
        seed: seed(a.seed, 1)?,
        packet_count: a.count,
        size_bytes: a.size,
        rate_mbps: a.rate,
        gap_ns: a.gap,
        mix: parse_weights::<4>(&a.mix).map_err(Failure::Usage)?,
        input_ports: a.ports,
        ttl_threshold: a.ttl_threshold,
        ..TrafficConfig::default()
    };
    let trace = generate_trace(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    write_trace(&mut buf, &trace).map_err(|e| Failure::Io(e.into()))?;
    write_file(&a.out, &buf)?;
    eprintln!("wrote {} packets to {}", trace.len(), a.out.display());
    Ok(())
}

fn gen_skewed(a: GenSkewed) -> Outcome<()> {
    let cfg = SkewedConfig {
        seed: seed(a.seed, SkewedConfig::default().seed)?,
        packet_count: a.count,
        hit_fraction: a.hit_fraction,
        input_ports: a.ports,
    };
    let sc = skewed_scenario(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    write_file(&a.rules_out, sc.rules.to_text().as_bytes())?;
    let mut buf = Vec::new();
    write_trace(&mut buf, &sc.trace).map_err(|e| Failure::Io(e.into()))?;
    write_file(&a.trace_out, &buf)?;
    if let Some(p) = &a.sim_config_out {
        write_file(p, skewed_sim_config().to_kv().as_bytes())?;
    }
    eprintln!(
        "wrote {} rules and {} packets",
        sc.rules.len(),
        sc.trace.len()
    );
    Ok(())
}

fn classify(a: ClassifyCmd) -> Outcome<()> {
    let opts = a.run.options()?;
    let rules = load_rules(&a.run.rules)?;
    let trace = load_trace(&a.run.trace)?;
    let rep = run_classify(&rules, &trace, a.algo, a.check_oracle, &opts)?;
    let r = &rep.result;
    println!(
        "{}: {} packets, mean probes {:.3} (max {}), {} tables, {} entries{}",
        r.algorithm,
        rep.inputs.packet_count,
        r.probes.mean,
        r.probes.max,
        r.tables,
        r.entries,
        r.classify_throughput_pps
            .map_or_else(String::new, |p| format!(", {p:.0} pkt/s"))
    );
    for (flow, n) in &r.flow_counts {
        println!("  flow {flow}: {n}");
    }
    if let Some(p) = &a.report {
        write_file(p, to_json(&rep)?.as_bytes())?;
    }
    Ok(())
}

fn load_sim(path: Option<&PathBuf>) -> Outcome<(SimConfig, Option<String>)> {
    match path {
        Some(p) => {
            let l = load_sim_config(p)?;
            Ok((l.value, Some(l.sha256)))
        }
        None => Ok((SimConfig::default(), None)),
    }
}

fn compare(a: CompareCmd) -> Outcome<()> {
    let opts = a.run.options()?;
    let rules = load_rules(&a.run.rules)?;
    let trace = load_trace(&a.run.trace)?;
    let sim = if a.simulate {
        Some(load_sim(a.sim_config.as_ref())?)
    } else {
        None
    };
    let rep = run_compare(&rules, &trace, sim, &opts)?;
    for c in &rep.classifiers {
        println!(
            "{:<8} mean probes {:>7.3}  max {:>3}  tables {:>5}  entries {:>6}{}",
            c.algorithm,
            c.probes.mean,
            c.probes.max,
            c.tables,
            c.entries,
            c.classify_throughput_pps
                .map_or_else(String::new, |p| format!("  {p:>12.0} pkt/s"))
        );
    }
    if let Some(sim) = &rep.simulation {
        for r in &sim.runs {
            print!("{r}");
        }
    }
    write_file(&a.out, to_json(&rep)?.as_bytes())?;
    if let Some(dir) = &a.csv {
        write_compare_csv(&rep, dir)?;
    }
    Ok(())
}

fn simulate(a: SimulateCmd) -> Outcome<()> {
    let rules = load_rules(&a.rules)?;
    let trace = load_trace(&a.trace)?;
    let (cfg, _) = load_sim(a.sim_config.as_ref())?;
    let c = a.algo.build(&rules.value, !a.no_partition);
    let rep = run_sim(&trace.value, &*c, &cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    print!("{rep}");
    if let Some(p) = &a.out {
        write_file(p, to_json(&rep)?.as_bytes())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenRules(a) => gen_rules(a),
        Command::GenTrace(a) => gen_trace(a),
        Command::GenSkewed(a) => gen_skewed(a),
        Command::Classify(a) => classify(a),
        Command::Compare(a) => compare(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ttss-bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
