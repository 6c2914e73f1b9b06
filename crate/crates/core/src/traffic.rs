//! Synthetic traffic: the four-class multimedia mix, the demo flow policy,
//! random rulesets for scaling runs, and the trace CSV format.
//!
//! Every generator is a pure function of its arguments; randomness comes from
//! a ChaCha8 stream seeded with the caller's seed.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rulemodel::{
    prefix_mask, ExactOrAny, FlowId, IpPrefix, PacketHeader, Rule, RuleSet, TtlBand,
    DEFAULT_TTL_THRESHOLD, PROTO_TCP, PROTO_UDP,
};

/// DSCP EF, used to mark RTP.
pub const TOS_RTP: u8 = 46;
/// DSCP AF41, used for delay-sensitive low-TTL UDP.
pub const TOS_UDP_LOW: u8 = 34;
/// Flow of the trailing catch-all rule in generated rulesets.
pub const CATCH_ALL_FLOW: u32 = 5;

pub const TRACE_HEADER: [&str; 7] = ["arrival_ns", "src", "dst", "proto", "ttl", "tos", "size"];

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("invalid traffic config: {0}")]
    Config(String),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub hdr: PacketHeader,
    pub arrival_ns: u64,
    pub size_bytes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrafficClass {
    Rtp,
    UdpLowTtl,
    UdpHighTtl,
    Tcp,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 4] = [
        TrafficClass::Rtp,
        TrafficClass::UdpLowTtl,
        TrafficClass::UdpHighTtl,
        TrafficClass::Tcp,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    pub seed: u64,
    pub packet_count: usize,
    pub size_bytes: u32,
    pub rate_mbps: u32,
    pub gap_ns: u32,
    /// Weights for RTP, UDP-low-TTL, UDP-high-TTL, TCP.
    pub mix: [f64; 4],
    /// Number of line-rate input ports multiplexed into the trace. Arrivals
    /// are spaced by one port's packet period divided by this count.
    pub input_ports: u32,
    pub ttl_threshold: u8,
    pub src_pool: Vec<IpPrefix>,
    pub dst_pool: Vec<IpPrefix>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            seed: 1,
            packet_count: 1000,
            size_bytes: 64,
            rate_mbps: 1000,
            gap_ns: 96,
            mix: [1.0; 4],
            input_ports: 1,
            ttl_threshold: DEFAULT_TTL_THRESHOLD,
            src_pool: vec![IpPrefix::new(0xc0a8_0000, 16).unwrap()],
            dst_pool: vec![IpPrefix::new(0x0a00_0000, 8).unwrap()],
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: &str| Err(TrafficError::Config(m.to_string()));
        if self.size_bytes == 0 {
            return bad("size_bytes must be positive");
        }
        if self.rate_mbps == 0 {
            return bad("rate_mbps must be positive");
        }
        if self.input_ports == 0 {
            return bad("input_ports must be positive");
        }
        if self.mix.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("mix weights must be finite and non-negative");
        }
        if self.mix.iter().all(|w| *w == 0.0) {
            return bad("mix weights must not all be zero");
        }
        if !(1..=254).contains(&self.ttl_threshold) {
            return bad("ttl_threshold must be in 1..=254");
        }
        if self.src_pool.is_empty() || self.dst_pool.is_empty() {
            return bad("address pools must not be empty");
        }
        Ok(())
    }

    /// Arrival time of packet `i`.
    pub fn arrival_ns(&self, i: u64) -> u64 {
        // Exact rational arithmetic in picoseconds: per-port period is
        // size*8 bits at rate_mbps plus the inter-packet gap.
        let rate = self.rate_mbps as u128;
        let period_num =
            self.size_bytes as u128 * 8 * 1_000_000 + self.gap_ns as u128 * 1000 * rate;
        let denom = rate * 1000 * self.input_ports as u128;
        (i as u128 * period_num / denom) as u64
    }
}

/// Serialization time of `size_bytes` at `rate_mbps`, in nanoseconds (rounded up).
pub fn wire_time_ns(size_bytes: u32, rate_mbps: u32) -> u64 {
    (size_bytes as u64 * 8 * 1000).div_ceil(rate_mbps as u64)
}

fn random_in(rng: &mut impl Rng, pool: &[IpPrefix]) -> u32 {
    let p = pool[rng.gen_range(0..pool.len())];
    p.value() | (rng.gen::<u32>() & !prefix_mask(p.len()))
}

pub fn generate_trace(cfg: &TrafficConfig) -> Result<Vec<TraceRecord>, TrafficError> {
    Ok(generate_labeled_trace(cfg)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

/// Like [`generate_trace`], also returning the class each packet was drawn from.
pub fn generate_labeled_trace(
    cfg: &TrafficConfig,
) -> Result<Vec<(TrafficClass, TraceRecord)>, TrafficError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = WeightedIndex::new(cfg.mix).map_err(|e| TrafficError::Config(e.to_string()))?;
    let thr = cfg.ttl_threshold;
    let mut out = Vec::with_capacity(cfg.packet_count);
    for i in 0..cfg.packet_count {
        let class = TrafficClass::ALL[classes.sample(&mut rng)];
        let src = random_in(&mut rng, &cfg.src_pool);
        let dst = random_in(&mut rng, &cfg.dst_pool);
        let (proto, ttl, tos) = match class {
            TrafficClass::Rtp => (PROTO_UDP, rng.gen_range(1..=255), TOS_RTP),
            TrafficClass::UdpLowTtl => (PROTO_UDP, rng.gen_range(1..=thr), TOS_UDP_LOW),
            TrafficClass::UdpHighTtl => (PROTO_UDP, rng.gen_range(thr + 1..=255), 0),
            TrafficClass::Tcp => (PROTO_TCP, rng.gen_range(1..=255), 0),
        };
        out.push((
            class,
            TraceRecord {
                hdr: PacketHeader {
                    src,
                    dst,
                    proto,
                    ttl,
                    tos,
                },
                arrival_ns: cfg.arrival_ns(i as u64),
                size_bytes: cfg.size_bytes,
            },
        ));
    }
    Ok(out)
}

fn flow(n: u32) -> FlowId {
    FlowId::new(n).expect("flow ids here are positive")
}

/// Four-flow multimedia policy plus a catch-all:
///
/// | prio | match                      | flow |
/// |------|----------------------------|------|
/// | 1    | udp, tos 46                | 1    |
/// | 2    | udp, ttl low, tos 34       | 2    |
/// | 3    | udp, ttl high              | 3    |
/// | 4    | tcp                        | 4    |
/// | 5    | anything                   | 5    |
pub fn demo_policy_ruleset(ttl_threshold: u8) -> Result<RuleSet, crate::RuleError> {
    let base = |id: u32| Rule::catch_all(id, id + 1, flow(id + 1));
    let udp = ExactOrAny::Exact(PROTO_UDP);
    let rules = vec![
        Rule {
            proto: udp,
            tos: ExactOrAny::Exact(TOS_RTP),
            ..base(0)
        },
        Rule {
            proto: udp,
            ttl: TtlBand::Low,
            tos: ExactOrAny::Exact(TOS_UDP_LOW),
            ..base(1)
        },
        Rule {
            proto: udp,
            ttl: TtlBand::High,
            ..base(2)
        },
        Rule {
            proto: ExactOrAny::Exact(PROTO_TCP),
            ..base(3)
        },
        base(4),
    ];
    RuleSet::new(rules, ttl_threshold)
}

/// Weights over prefix lengths 0, 8, 16, 24, 32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution(pub [f64; 5]);

impl LengthDistribution {
    pub const LENGTHS: [u8; 5] = [0, 8, 16, 24, 32];
}

impl Default for LengthDistribution {
    fn default() -> Self {
        LengthDistribution([1.0, 2.0, 4.0, 4.0, 1.0])
    }
}

impl std::str::FromStr for LengthDistribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let w = parse_weights::<5>(s)?;
        Ok(LengthDistribution(w))
    }
}

/// Parses `N` comma-separated non-negative weights, not all zero.
pub fn parse_weights<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!(
            "expected {N} comma-separated weights, got {}",
            parts.len()
        ));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        let v: f64 = p.parse().map_err(|_| format!("invalid weight `{p}`"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(format!("weight `{p}` must be finite and non-negative"));
        }
        *o = v;
    }
    if out.iter().all(|w| *w == 0.0) {
        return Err("weights must not all be zero".into());
    }
    Ok(out)
}

/// Random ruleset with `n_rules` rules; priorities `1..=n`, the last rule a
/// catch-all to flow [`CATCH_ALL_FLOW`].
pub fn generate_ruleset(
    seed: u64,
    n_rules: usize,
    lengths: &LengthDistribution,
) -> Result<RuleSet, TrafficError> {
    if n_rules == 0 {
        return Err(TrafficError::Config("n_rules must be at least 1".into()));
    }
    let len_dist =
        WeightedIndex::new(lengths.0).map_err(|e| TrafficError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rules = Vec::with_capacity(n_rules);
    for i in 0..n_rules as u32 - 1 {
        let dst_len = LengthDistribution::LENGTHS[len_dist.sample(&mut rng)];
        let src_len = LengthDistribution::LENGTHS[len_dist.sample(&mut rng)];
        let dst = IpPrefix::new(rng.gen(), dst_len).unwrap();
        let src = IpPrefix::new(rng.gen(), src_len).unwrap();
        let proto = match rng.gen_range(0..10) {
            0..=2 => ExactOrAny::Any,
            3..=6 => ExactOrAny::Exact(PROTO_UDP),
            _ => ExactOrAny::Exact(PROTO_TCP),
        };
        let ttl = match rng.gen_range(0..4) {
            0 | 1 => TtlBand::Any,
            2 => TtlBand::Low,
            _ => TtlBand::High,
        };
        let tos = match rng.gen_range(0..10) {
            0..=5 => ExactOrAny::Any,
            6 => ExactOrAny::Exact(TOS_RTP),
            7 => ExactOrAny::Exact(TOS_UDP_LOW),
            8 => ExactOrAny::Exact(0),
            _ => ExactOrAny::Exact(rng.gen()),
        };
        rules.push(Rule {
            id: i,
            priority: i + 1,
            src,
            dst,
            proto,
            ttl,
            tos,
            flow: flow(rng.gen_range(1..=4)),
        });
    }
    let last = n_rules as u32 - 1;
    rules.push(Rule::catch_all(last, last + 1, flow(CATCH_ALL_FLOW)));
    RuleSet::new(rules, DEFAULT_TTL_THRESHOLD).map_err(|e| TrafficError::Config(e.to_string()))
}

/// Headers biased toward the given rules: most are built to match a randomly
/// chosen rule (then sometimes perturbed), the rest are uniform noise.
pub fn random_headers(rules: &RuleSet, count: usize, seed: u64) -> Vec<PacketHeader> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thr = rules.ttl_threshold();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut hdr = PacketHeader {
            src: rng.gen(),
            dst: rng.gen(),
            proto: [PROTO_TCP, PROTO_UDP, 1][rng.gen_range(0..3)],
            ttl: rng.gen(),
            tos: [0, TOS_RTP, TOS_UDP_LOW, rng.gen()][rng.gen_range(0..4)],
        };
        if rng.gen_bool(0.8) {
            let r = &rules.rules()[rng.gen_range(0..rules.len())];
            hdr.src = r.src.value() | (hdr.src & !prefix_mask(r.src.len()));
            hdr.dst = r.dst.value() | (hdr.dst & !prefix_mask(r.dst.len()));
            if let Some(p) = r.proto.exact() {
                hdr.proto = p;
            }
            if let Some(t) = r.tos.exact() {
                hdr.tos = t;
            }
            hdr.ttl = match r.ttl {
                TtlBand::Any => hdr.ttl,
                TtlBand::Low => rng.gen_range(0..=thr),
                TtlBand::High => rng.gen_range(thr + 1..=255),
            };
            if rng.gen_bool(0.3) {
                match rng.gen_range(0..5) {
                    0 => hdr.src ^= 1 << rng.gen_range(0..32),
                    1 => hdr.dst ^= 1 << rng.gen_range(0..32),
                    2 => hdr.proto = rng.gen(),
                    3 => hdr.ttl = rng.gen(),
                    _ => hdr.tos = rng.gen(),
                }
            }
        }
        out.push(hdr);
    }
    out
}

/// A ruleset and trace in which most packets hit the single most specific
/// tuple. Used to show the effect of longest-first traversal.
#[derive(Debug, Clone)]
pub struct SkewedScenario {
    pub rules: RuleSet,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewedConfig {
    pub seed: u64,
    pub packet_count: usize,
    /// Fraction of packets aimed at the most specific rule.
    pub hit_fraction: f64,
    pub input_ports: u32,
}

impl Default for SkewedConfig {
    fn default() -> Self {
        SkewedConfig {
            seed: 7,
            packet_count: 20_000,
            hit_fraction: 0.92,
            input_ports: 4,
        }
    }
}

/// Rules (threshold 64, five distinct tuples):
///
/// ```text
/// 1 * 10.1.1.0/24 udp any  46 1
/// 2 * 10.1.0.0/16 udp low  34 2
/// 3 * 10.0.0.0/8  udp high *  3
/// 4 * *           tcp any  *  4
/// 5 * *           *   any  *  5
/// ```
///
/// `hit_fraction` of the packets are RTP to 10.1.1.0/24; the rest are spread
/// evenly over traffic that lands on rules 2, 3, 4 and 5.
pub fn skewed_scenario(cfg: &SkewedConfig) -> Result<SkewedScenario, TrafficError> {
    if !(0.0..=1.0).contains(&cfg.hit_fraction) {
        return Err(TrafficError::Config(
            "hit_fraction must be in [0, 1]".into(),
        ));
    }
    let text = "!ttl_threshold 64\n\
                1 * 10.1.1.0/24 udp any 46 1\n\
                2 * 10.1.0.0/16 udp low 34 2\n\
                3 * 10.0.0.0/8 udp high * 3\n\
                4 * * tcp any * 4\n\
                5 * * * any * 5\n";
    let rules = crate::parse_ruleset(text)
        .expect("built-in scenario ruleset parses")
        .ruleset;
    let timing = TrafficConfig {
        input_ports: cfg.input_ports,
        ..TrafficConfig::default()
    };
    timing.validate()?;
    let thr = rules.ttl_threshold();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = |a: [u8; 4]| u32::from(Ipv4Addr::from(a));
    let mut trace = Vec::with_capacity(cfg.packet_count);
    for i in 0..cfg.packet_count {
        let src = net([192, 168, 0, 0]) | (rng.gen::<u32>() & 0xffff);
        let hdr = if rng.gen_bool(cfg.hit_fraction) {
            PacketHeader {
                src,
                dst: net([10, 1, 1, 0]) | rng.gen_range(0..=255),
                proto: PROTO_UDP,
                ttl: rng.gen_range(1..=255),
                tos: TOS_RTP,
            }
        } else {
            match rng.gen_range(0..4) {
                0 => PacketHeader {
                    src,
                    dst: net([10, 1, rng.gen_range(2..=255), rng.gen()]),
                    proto: PROTO_UDP,
                    ttl: rng.gen_range(1..=thr),
                    tos: TOS_UDP_LOW,
                },
                1 => PacketHeader {
                    src,
                    dst: net([10, rng.gen_range(2..=255), rng.gen(), rng.gen()]),
                    proto: PROTO_UDP,
                    ttl: rng.gen_range(thr + 1..=255),
                    tos: 0,
                },
                2 => PacketHeader {
                    src,
                    dst: rng.gen(),
                    proto: PROTO_TCP,
                    ttl: rng.gen_range(1..=255),
                    tos: 0,
                },
                _ => PacketHeader {
                    src,
                    dst: rng.gen(),
                    proto: 1,
                    ttl: rng.gen_range(1..=255),
                    tos: 0,
                },
            }
        };
        trace.push(TraceRecord {
            hdr,
            arrival_ns: timing.arrival_ns(i as u64),
            size_bytes: timing.size_bytes,
        });
    }
    Ok(SkewedScenario { rules, trace })
}

pub fn write_trace<W: Write>(w: W, trace: &[TraceRecord]) -> Result<(), TrafficError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for r in trace {
        out.write_record([
            r.arrival_ns.to_string(),
            Ipv4Addr::from(r.hdr.src).to_string(),
            Ipv4Addr::from(r.hdr.dst).to_string(),
            r.hdr.proto.to_string(),
            r.hdr.ttl.to_string(),
            r.hdr.tos.to_string(),
            r.size_bytes.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_file(path: impl AsRef<Path>, trace: &[TraceRecord]) -> Result<(), TrafficError> {
    write_trace(BufWriter::new(File::create(path)?), trace)
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRecord>, TrafficError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(TrafficError::Malformed {
            line: 1,
            reason: format!("expected header `{}`", TRACE_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    let mut last = 0u64;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, .. } => TrafficError::Malformed {
                line: pos.as_ref().map_or(0, |p| p.line()),
                reason: "wrong number of fields".into(),
            },
            _ => TrafficError::Csv(e),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| TrafficError::Malformed { line, reason };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize, max: u64| -> Result<u64, TrafficError> {
            let v: u64 = field(i).parse().map_err(|_| {
                bad(format!(
                    "{} `{}` is not an integer",
                    TRACE_HEADER[i],
                    field(i)
                ))
            })?;
            if v > max {
                return Err(bad(format!(
                    "{} {} out of range 0..={}",
                    TRACE_HEADER[i], v, max
                )));
            }
            Ok(v)
        };
        let addr = |i: usize| -> Result<u32, TrafficError> {
            field(i).parse::<Ipv4Addr>().map(u32::from).map_err(|_| {
                bad(format!(
                    "{} `{}` is not an IPv4 address",
                    TRACE_HEADER[i],
                    field(i)
                ))
            })
        };
        let arrival_ns = int(0, u64::MAX)?;
        if arrival_ns < last {
            return Err(bad(format!(
                "arrival_ns {arrival_ns} precedes previous {last}"
            )));
        }
        last = arrival_ns;
        let size = int(6, u32::MAX as u64)? as u32;
        if size == 0 {
            return Err(bad("size must be positive".into()));
        }
        out.push(TraceRecord {
            hdr: PacketHeader {
                src: addr(1)?,
                dst: addr(2)?,
                proto: int(3, 255)? as u8,
                ttl: int(4, 255)? as u8,
                tos: int(5, 255)? as u8,
            },
            arrival_ns,
            size_bytes: size,
        });
    }
    Ok(out)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, TrafficError> {
    read_trace(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::classify_linear;
    use crate::tss::build_tss;
    use crate::Classifier;

    #[test]
    fn default_timing() {
        assert_eq!(wire_time_ns(64, 1000), 512);
        let cfg = TrafficConfig::default();
        assert_eq!(cfg.arrival_ns(1) - cfg.arrival_ns(0), 608);
        assert_eq!(cfg.arrival_ns(10), 6080);
        let four = TrafficConfig {
            input_ports: 4,
            ..cfg
        };
        assert_eq!(four.arrival_ns(1), 152);
    }

    #[test]
    fn trace_is_deterministic() {
        let cfg = TrafficConfig {
            packet_count: 4,
            seed: 99,
            ..Default::default()
        };
        assert_eq!(generate_trace(&cfg).unwrap(), generate_trace(&cfg).unwrap());
        let other = TrafficConfig {
            seed: 100,
            ..cfg.clone()
        };
        assert_ne!(
            generate_trace(&cfg).unwrap(),
            generate_trace(&other).unwrap()
        );
    }

    #[test]
    fn degenerate_mix() {
        let cfg = TrafficConfig {
            packet_count: 200,
            mix: [1.0, 0.0, 0.0, 0.0],
            ..Default::default()
        };
        for r in generate_trace(&cfg).unwrap() {
            assert_eq!((r.hdr.proto, r.hdr.tos), (17, 46));
        }
    }

    #[test]
    fn class_fields() {
        let cfg = TrafficConfig {
            packet_count: 2000,
            ..Default::default()
        };
        for (class, r) in generate_labeled_trace(&cfg).unwrap() {
            let h = r.hdr;
            assert_eq!(h.src >> 16, 0xc0a8);
            assert_eq!(h.dst >> 24, 10);
            match class {
                TrafficClass::Rtp => assert_eq!((h.proto, h.tos), (17, 46)),
                TrafficClass::UdpLowTtl => {
                    assert_eq!((h.proto, h.tos), (17, 34));
                    assert!((1..=64).contains(&h.ttl));
                }
                TrafficClass::UdpHighTtl => {
                    assert_eq!(h.proto, 17);
                    assert!(h.ttl > 64);
                }
                TrafficClass::Tcp => assert_eq!(h.proto, 6),
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            TrafficConfig {
                mix: [0.0; 4],
                ..Default::default()
            },
            TrafficConfig {
                mix: [1.0, -1.0, 0.0, 0.0],
                ..Default::default()
            },
            TrafficConfig {
                size_bytes: 0,
                ..Default::default()
            },
            TrafficConfig {
                rate_mbps: 0,
                ..Default::default()
            },
            TrafficConfig {
                input_ports: 0,
                ..Default::default()
            },
            TrafficConfig {
                src_pool: vec![],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(generate_trace(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn demo_policy_decisions() {
        let rs = demo_policy_ruleset(64).unwrap();
        let f = |h: PacketHeader| classify_linear(&rs, &h).flow().unwrap().get();
        let rtp = PacketHeader {
            proto: 17,
            tos: 46,
            ttl: 200,
            ..Default::default()
        };
        assert_eq!(f(rtp), 1);
        let tcp = PacketHeader {
            proto: 6,
            tos: 46,
            ttl: 3,
            ..Default::default()
        };
        assert_eq!(f(tcp), 4);
        let udp_high = PacketHeader {
            proto: 17,
            tos: 0,
            ttl: 200,
            ..Default::default()
        };
        assert_eq!(f(udp_high), 3);
        let udp_low = PacketHeader {
            proto: 17,
            tos: 34,
            ttl: 20,
            ..Default::default()
        };
        assert_eq!(f(udp_low), 2);
        let icmp = PacketHeader {
            proto: 1,
            ..Default::default()
        };
        assert_eq!(f(icmp), 5);
    }

    #[test]
    fn generated_traffic_lands_on_its_flow() {
        let rs = demo_policy_ruleset(64).unwrap();
        let cfg = TrafficConfig {
            packet_count: 4000,
            ..Default::default()
        };
        for (class, r) in generate_labeled_trace(&cfg).unwrap() {
            let flow = classify_linear(&rs, &r.hdr).flow().unwrap().get();
            let want = match class {
                TrafficClass::Rtp => 1,
                TrafficClass::UdpLowTtl => 2,
                TrafficClass::UdpHighTtl => 3,
                TrafficClass::Tcp => 4,
            };
            assert_eq!(flow, want);
        }
    }

    #[test]
    fn ruleset_generation() {
        let d = LengthDistribution::default();
        let one = generate_ruleset(3, 1, &d).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.rules()[0].tuple().specificity(), (0, 0, 0));
        assert_eq!(
            generate_ruleset(5, 100, &d).unwrap(),
            generate_ruleset(5, 100, &d).unwrap()
        );
        let big = generate_ruleset(5, 1000, &d).unwrap();
        assert_eq!(build_tss(&big, true).entry_count(), 1000);
        assert!(generate_ruleset(5, 0, &d).is_err());
        let prios: Vec<u32> = big.rules().iter().map(|r| r.priority).collect();
        assert_eq!(prios, (1..=1000).collect::<Vec<_>>());
    }

    #[test]
    fn weights_parse() {
        assert_eq!(parse_weights::<4>("0,0,0,1").unwrap(), [0.0, 0.0, 0.0, 1.0]);
        assert!(parse_weights::<4>("1,2,3").is_err());
        assert!(parse_weights::<4>("a,b,c,d").is_err());
        assert!(parse_weights::<4>("0,0,0,0").is_err());
        assert!(parse_weights::<4>("1,-1,0,0").is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let trace = generate_trace(&TrafficConfig {
            packet_count: 50,
            ..Default::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), trace);

        let empty = "arrival_ns,src,dst,proto,ttl,tos,size\n";
        assert!(read_trace(empty.as_bytes()).unwrap().is_empty());

        let bad_ttl =
            format!("{empty}0,1.2.3.4,5.6.7.8,17,64,0,64\n608,1.2.3.4,5.6.7.8,17,300,0,64\n");
        match read_trace(bad_ttl.as_bytes()).unwrap_err() {
            TrafficError::Malformed { line, reason } => {
                assert_eq!(line, 3);
                assert!(reason.contains("ttl 300"), "{reason}");
            }
            e => panic!("unexpected {e:?}"),
        }
        let short = format!("{empty}0,1.2.3.4,5.6.7.8,17\n");
        assert!(matches!(
            read_trace(short.as_bytes()).unwrap_err(),
            TrafficError::Malformed { line: 2, .. }
        ));
        assert!(read_trace("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn skewed_scenario_shape() {
        let s = skewed_scenario(&SkewedConfig {
            packet_count: 5000,
            ..Default::default()
        })
        .unwrap();
        let hits = s
            .trace
            .iter()
            .filter(|r| classify_linear(&s.rules, &r.hdr).rule_id() == Some(0))
            .count();
        assert!(hits as f64 / 5000.0 >= 0.9, "{hits}");
        let tuples: std::collections::BTreeSet<_> =
            s.rules.rules().iter().map(|r| r.tuple()).collect();
        assert_eq!(tuples.len(), 5);
        assert_eq!(s.trace[1].arrival_ns, 152);
    }
}
