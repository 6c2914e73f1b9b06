//! Rules, packet headers, tuples and the ruleset text format.
//!
//! Every classifier in this crate shares the definitions here. In particular
//! [`MatchRank`] is the single definition of "best match": among all rules
//! that match a header, the winner is the one with the greatest rank.
//!
//! # Ruleset format
//!
//! ```text
//! # comment
//! !ttl_threshold 64
//! <priority> <src-prefix|*> <dst-prefix|*> <proto|*> <low|high|any> <tos|*> <flow-id>
//! 10 192.168.1.0/24 10.0.0.0/8 udp low 46 1
//! 5 * * tcp any * 4
//! ```
//!
//! Protocols may be given as `tcp` (6), `udp` (17) or a decimal number. A
//! bare address without `/len` is a /32.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TTL_THRESHOLD: u8 = 64;

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: duplicate priority {priority} (first used on line {first_line})")]
    DuplicatePriority {
        line: usize,
        priority: u32,
        first_line: usize,
    },
    #[error("duplicate priority {0}")]
    PriorityNotUnique(u32),
    #[error("duplicate rule id {0}")]
    IdNotUnique(u32),
    #[error("ttl threshold {0} out of range 1..=254")]
    InvalidThreshold(u32),
    #[error("ruleset contains no rules")]
    Empty,
    #[error("prefix length {0} exceeds 32")]
    PrefixLength(u8),
}

/// Network mask with the top `len` bits set.
#[inline]
pub fn prefix_mask(len: u8) -> u32 {
    match len {
        0 => 0,
        l if l >= 32 => u32::MAX,
        l => u32::MAX << (32 - l),
    }
}

/// IPv4 prefix kept in canonical form (host bits zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IpPrefix {
    value: u32,
    len: u8,
}

impl IpPrefix {
    pub const ANY: IpPrefix = IpPrefix { value: 0, len: 0 };

    /// Builds a prefix, clearing any host bits below `len`.
    pub fn new(value: u32, len: u8) -> Result<Self, RuleError> {
        if len > 32 {
            return Err(RuleError::PrefixLength(len));
        }
        Ok(IpPrefix {
            value: value & prefix_mask(len),
            len,
        })
    }

    pub fn from_addr(addr: Ipv4Addr, len: u8) -> Result<Self, RuleError> {
        Self::new(u32::from(addr), len)
    }

    pub fn value(&self) -> u32 {
        self.value
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_wildcard(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr & prefix_mask(self.len) == self.value
    }

    /// Re-applies the mask. Identity on any value produced by [`IpPrefix::new`].
    pub fn canonical(self) -> Self {
        IpPrefix {
            value: self.value & prefix_mask(self.len),
            len: self.len,
        }
    }
}

impl fmt::Display for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len == 0 {
            f.write_str("*")
        } else {
            write!(f, "{}/{}", Ipv4Addr::from(self.value), self.len)
        }
    }
}

/// Result of parsing a prefix token; `canonicalized` is set when host bits
/// had to be cleared.
struct ParsedPrefix {
    prefix: IpPrefix,
    canonicalized: bool,
}

fn parse_prefix(tok: &str) -> Result<ParsedPrefix, String> {
    if tok == "*" {
        return Ok(ParsedPrefix {
            prefix: IpPrefix::ANY,
            canonicalized: false,
        });
    }
    let (addr, len) = match tok.split_once('/') {
        Some((a, l)) => {
            let len: u8 = l
                .parse()
                .map_err(|_| format!("invalid prefix length `{l}`"))?;
            (a, len)
        }
        None => (tok, 32),
    };
    if len > 32 {
        return Err(format!("prefix length {len} exceeds 32"));
    }
    let addr: Ipv4Addr = addr
        .parse()
        .map_err(|_| format!("invalid IPv4 address `{addr}`"))?;
    let raw = u32::from(addr);
    let prefix = IpPrefix::new(raw, len).map_err(|e| e.to_string())?;
    Ok(ParsedPrefix {
        canonicalized: prefix.value != raw,
        prefix,
    })
}

/// Coarse TTL classification: at or below the threshold is `Low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TtlBand {
    Any,
    Low,
    High,
}

impl TtlBand {
    pub fn of(ttl: u8, threshold: u8) -> TtlBand {
        if ttl <= threshold {
            TtlBand::Low
        } else {
            TtlBand::High
        }
    }

    pub fn matches(self, ttl: u8, threshold: u8) -> bool {
        match self {
            TtlBand::Any => true,
            band => band == TtlBand::of(ttl, threshold),
        }
    }

    /// Byte used in hash keys: 0 Any, 1 Low, 2 High.
    pub fn code(self) -> u8 {
        match self {
            TtlBand::Any => 0,
            TtlBand::Low => 1,
            TtlBand::High => 2,
        }
    }
}

impl fmt::Display for TtlBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TtlBand::Any => "any",
            TtlBand::Low => "low",
            TtlBand::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExactOrAny {
    Any,
    Exact(u8),
}

impl ExactOrAny {
    pub fn matches(self, v: u8) -> bool {
        match self {
            ExactOrAny::Any => true,
            ExactOrAny::Exact(e) => e == v,
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, ExactOrAny::Exact(_))
    }

    pub fn exact(self) -> Option<u8> {
        match self {
            ExactOrAny::Exact(v) => Some(v),
            ExactOrAny::Any => None,
        }
    }
}

/// Flow (action) tag attached to a rule. Always positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(u32);

impl FlowId {
    pub fn new(v: u32) -> Option<FlowId> {
        (v > 0).then_some(FlowId(v))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PacketHeader {
    pub src: u32,
    pub dst: u32,
    pub proto: u8,
    pub ttl: u8,
    pub tos: u8,
}

/// Specificity signature of a rule. Rules with equal tuples share a hash table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tuple {
    pub dst_len: u8,
    pub src_len: u8,
    pub proto_spec: bool,
    pub ttl_spec: bool,
    pub tos_spec: bool,
}

impl Tuple {
    pub fn spec_count(&self) -> u8 {
        self.proto_spec as u8 + self.ttl_spec as u8 + self.tos_spec as u8
    }

    /// The part of the tuple that [`MatchRank`] compares.
    pub fn specificity(&self) -> (u8, u8, u8) {
        (self.dst_len, self.src_len, self.spec_count())
    }
}

impl fmt::Display for Tuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flag = |b: bool| if b { 'x' } else { '*' };
        write!(
            f,
            "d{}/s{}/{}{}{}",
            self.dst_len,
            self.src_len,
            flag(self.proto_spec),
            flag(self.ttl_spec),
            flag(self.tos_spec)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub id: u32,
    pub priority: u32,
    pub src: IpPrefix,
    pub dst: IpPrefix,
    pub proto: ExactOrAny,
    pub ttl: TtlBand,
    pub tos: ExactOrAny,
    pub flow: FlowId,
}

impl Rule {
    /// Wildcard on every field.
    pub fn catch_all(id: u32, priority: u32, flow: FlowId) -> Rule {
        Rule {
            id,
            priority,
            src: IpPrefix::ANY,
            dst: IpPrefix::ANY,
            proto: ExactOrAny::Any,
            ttl: TtlBand::Any,
            tos: ExactOrAny::Any,
            flow,
        }
    }

    pub fn tuple(&self) -> Tuple {
        tuple_of_rule(self)
    }

    pub fn rank(&self) -> MatchRank {
        MatchRank::new(self.tuple(), self.priority)
    }

    pub fn matches(&self, hdr: &PacketHeader, ttl_threshold: u8) -> bool {
        rule_matches(self, hdr, ttl_threshold)
    }
}

pub fn rule_matches(rule: &Rule, hdr: &PacketHeader, ttl_threshold: u8) -> bool {
    rule.src.contains(hdr.src)
        && rule.dst.contains(hdr.dst)
        && rule.proto.matches(hdr.proto)
        && rule.tos.matches(hdr.tos)
        && rule.ttl.matches(hdr.ttl, ttl_threshold)
}

pub fn tuple_of_rule(rule: &Rule) -> Tuple {
    Tuple {
        dst_len: rule.dst.len(),
        src_len: rule.src.len(),
        proto_spec: rule.proto.is_exact(),
        ttl_spec: rule.ttl != TtlBand::Any,
        tos_spec: rule.tos.is_exact(),
    }
}

/// Position of a (tuple, priority) pair in the match order. Greater is better:
/// `(dst_len, src_len, spec_count)` compared lexicographically, then the lower
/// priority number wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchRank {
    pub specificity: (u8, u8, u8),
    pub priority: u32,
}

impl MatchRank {
    pub fn new(tuple: Tuple, priority: u32) -> Self {
        MatchRank {
            specificity: tuple.specificity(),
            priority,
        }
    }
}

impl Ord for MatchRank {
    fn cmp(&self, other: &Self) -> Ordering {
        self.specificity
            .cmp(&other.specificity)
            .then_with(|| other.priority.cmp(&self.priority))
    }
}

impl PartialOrd for MatchRank {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Compares two candidates; `Greater` means `a` is the better match.
pub fn match_order(a: (Tuple, u32), b: (Tuple, u32)) -> Ordering {
    MatchRank::new(a.0, a.1).cmp(&MatchRank::new(b.0, b.1))
}

/// Validated, immutable rule list. Ids and priorities are unique and the list
/// is never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<Rule>,
    ttl_threshold: u8,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>, ttl_threshold: u8) -> Result<Self, RuleError> {
        if !(1..=254).contains(&ttl_threshold) {
            return Err(RuleError::InvalidThreshold(ttl_threshold as u32));
        }
        if rules.is_empty() {
            return Err(RuleError::Empty);
        }
        let mut ids = HashMap::with_capacity(rules.len());
        let mut prios = HashMap::with_capacity(rules.len());
        for r in &rules {
            if ids.insert(r.id, ()).is_some() {
                return Err(RuleError::IdNotUnique(r.id));
            }
            if prios.insert(r.priority, ()).is_some() {
                return Err(RuleError::PriorityNotUnique(r.priority));
            }
        }
        let rules = rules
            .into_iter()
            .map(|mut r| {
                r.src = r.src.canonical();
                r.dst = r.dst.canonical();
                r
            })
            .collect();
        Ok(RuleSet {
            rules,
            ttl_threshold,
        })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn ttl_threshold(&self) -> u8 {
        self.ttl_threshold
    }

    pub fn get(&self, id: u32) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Renders the ruleset in the text format accepted by [`parse_ruleset`].
    pub fn to_text(&self) -> String {
        let mut out = format!("!ttl_threshold {}\n", self.ttl_threshold);
        for r in &self.rules {
            out.push_str(&format_rule(r));
            out.push('\n');
        }
        out
    }
}

fn format_proto(p: ExactOrAny) -> String {
    match p {
        ExactOrAny::Any => "*".into(),
        ExactOrAny::Exact(PROTO_TCP) => "tcp".into(),
        ExactOrAny::Exact(PROTO_UDP) => "udp".into(),
        ExactOrAny::Exact(n) => n.to_string(),
    }
}

pub fn format_rule(r: &Rule) -> String {
    let tos = match r.tos {
        ExactOrAny::Any => "*".to_string(),
        ExactOrAny::Exact(v) => v.to_string(),
    };
    format!(
        "{} {} {} {} {} {} {}",
        r.priority,
        r.src,
        r.dst,
        format_proto(r.proto),
        r.ttl,
        tos,
        r.flow
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    /// Host bits below the prefix length were cleared.
    NonCanonicalPrefix {
        line: usize,
        given: String,
        canonical: IpPrefix,
    },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::NonCanonicalPrefix {
                line,
                given,
                canonical,
            } => write!(
                f,
                "line {line}: prefix {given} has host bits set, using {canonical}"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsedRuleSet {
    pub ruleset: RuleSet,
    pub warnings: Vec<ParseWarning>,
}

impl FromStr for RuleSet {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_ruleset(s).map(|p| p.ruleset)
    }
}

/// Parses the ruleset text format. Rule ids are assigned in file order
/// starting from 0.
pub fn parse_ruleset(text: &str) -> Result<ParsedRuleSet, RuleError> {
    let mut rules = Vec::new();
    let mut warnings = Vec::new();
    let mut threshold: Option<u8> = None;
    let mut seen_prio: HashMap<u32, usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let syntax = |reason: String| RuleError::Syntax { line, reason };

        if let Some(directive) = content.strip_prefix('!') {
            let mut parts = directive.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some("ttl_threshold"), Some(v), None) => {
                    if threshold.is_some() {
                        return Err(syntax("ttl_threshold given more than once".into()));
                    }
                    let v: u32 = v
                        .parse()
                        .map_err(|_| syntax(format!("invalid ttl_threshold `{v}`")))?;
                    if !(1..=254).contains(&v) {
                        return Err(syntax(format!("ttl_threshold {v} out of range 1..=254")));
                    }
                    threshold = Some(v as u8);
                }
                _ => return Err(syntax(format!("unknown directive `{content}`"))),
            }
            continue;
        }

        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(syntax(format!("expected 7 fields, found {}", fields.len())));
        }
        let priority: u32 = fields[0]
            .parse()
            .map_err(|_| syntax(format!("invalid priority `{}`", fields[0])))?;
        let src = parse_prefix(fields[1]).map_err(&syntax)?;
        let dst = parse_prefix(fields[2]).map_err(&syntax)?;
        for (tok, p) in [(fields[1], &src), (fields[2], &dst)] {
            if p.canonicalized {
                warnings.push(ParseWarning::NonCanonicalPrefix {
                    line,
                    given: tok.to_string(),
                    canonical: p.prefix,
                });
            }
        }
        let proto = match fields[3] {
            "*" => ExactOrAny::Any,
            "tcp" => ExactOrAny::Exact(PROTO_TCP),
            "udp" => ExactOrAny::Exact(PROTO_UDP),
            n => ExactOrAny::Exact(
                n.parse()
                    .map_err(|_| syntax(format!("invalid protocol `{n}`")))?,
            ),
        };
        let ttl = match fields[4] {
            "any" | "*" => TtlBand::Any,
            "low" => TtlBand::Low,
            "high" => TtlBand::High,
            t if t.contains('-') => {
                return Err(syntax(format!(
                    "ttl ranges are not supported (`{t}`); use low, high or any"
                )))
            }
            t => return Err(syntax(format!("invalid ttl band `{t}`"))),
        };
        let tos = match fields[5] {
            "*" => ExactOrAny::Any,
            n => ExactOrAny::Exact(
                n.parse()
                    .map_err(|_| syntax(format!("invalid tos `{n}`")))?,
            ),
        };
        let flow = fields[6]
            .parse::<u32>()
            .ok()
            .and_then(FlowId::new)
            .ok_or_else(|| syntax(format!("invalid flow id `{}`", fields[6])))?;

        if let Some(&first_line) = seen_prio.get(&priority) {
            return Err(RuleError::DuplicatePriority {
                line,
                priority,
                first_line,
            });
        }
        seen_prio.insert(priority, line);

        rules.push(Rule {
            id: rules.len() as u32,
            priority,
            src: src.prefix,
            dst: dst.prefix,
            proto,
            ttl,
            tos,
            flow,
        });
    }

    let ruleset = RuleSet::new(rules, threshold.unwrap_or(DEFAULT_TTL_THRESHOLD))?;
    Ok(ParsedRuleSet { ruleset, warnings })
}
