//! Trie-based Tuple Space Search.
//!
//! Tuple tables hang off a two-level node structure. The root node has one
//! element per destination prefix length present in the ruleset; each of
//! those points at a node with one element per source prefix length; each of
//! those holds the tuple tables for that `(dst_len, src_len)` pair, ordered by
//! how many of protocol/TTL/ToS they specify.
//!
//! [`Version::V1`] puts the longest lengths leftmost and stops as soon as a
//! specificity group produced a hit: under [`MatchRank`] nothing later in the
//! traversal can outrank it. [`Version::V2`] stores the mirror image
//! (shortest leftmost) and has to probe everything, keeping the best.
//!
//! [`MatchRank`]: crate::rulemodel::MatchRank

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::oracle::{MatchResult, RuleMatch};
use crate::rulemodel::{PacketHeader, RuleSet, Tuple};
use crate::tss::{group_rules, KeyHasher, PartitionedTable, TupleTable};
use crate::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Version {
    /// Longest prefix leftmost, exit on first hit.
    V1,
    /// Shortest prefix leftmost, full scan.
    V2,
}

#[derive(Debug, Clone)]
pub struct TtssElement<C> {
    pub length: u8,
    pub child: C,
}

#[derive(Debug, Clone)]
pub struct TtssNode<C> {
    pub elements: Vec<TtssElement<C>>,
}

impl<C> TtssNode<C> {
    pub fn lengths(&self) -> Vec<u8> {
        self.elements.iter().map(|e| e.length).collect()
    }
}

/// Tables of one `(dst_len, src_len)` pair in traversal order.
pub type Leaf = Vec<PartitionedTable>;
pub type SrcNode = TtssNode<Leaf>;
pub type DstNode = TtssNode<SrcNode>;

#[derive(Debug, Clone)]
pub struct TtssClassifier {
    version: Version,
    root: DstNode,
    proto_partition: bool,
    ttl_threshold: u8,
    tuple_count: usize,
}

pub fn build_ttss(rules: &RuleSet, version: Version, proto_partition: bool) -> TtssClassifier {
    TtssClassifier::build(rules, version, proto_partition, KeyHasher::default())
}

pub fn classify_ttss(c: &TtssClassifier, hdr: &PacketHeader) -> MatchResult {
    c.classify(hdr)
}

/// Within-leaf ordering key; V2 sorts ascending, V1 is the exact mirror.
fn leaf_key(t: &PartitionedTable) -> (u8, bool, bool, bool, Option<u8>) {
    let tu = t.table.tuple();
    (
        tu.spec_count(),
        tu.proto_spec,
        tu.ttl_spec,
        tu.tos_spec,
        t.proto,
    )
}

impl TtssClassifier {
    pub fn build(
        rules: &RuleSet,
        version: Version,
        proto_partition: bool,
        hasher: KeyHasher,
    ) -> Self {
        // dst_len -> src_len -> tables; BTreeMaps give ascending order.
        let mut shape: BTreeMap<u8, BTreeMap<u8, Leaf>> = BTreeMap::new();
        let mut tuples = BTreeSet::new();
        for ((tuple, proto), members) in group_rules(rules, proto_partition) {
            tuples.insert(tuple);
            shape
                .entry(tuple.dst_len)
                .or_default()
                .entry(tuple.src_len)
                .or_default()
                .push(PartitionedTable {
                    proto,
                    table: TupleTable::build(tuple, &members, hasher),
                });
        }

        let mut root: Vec<TtssElement<SrcNode>> = shape
            .into_iter()
            .map(|(dst_len, by_src)| {
                let mut elements: Vec<TtssElement<Leaf>> = by_src
                    .into_iter()
                    .map(|(src_len, mut tables)| {
                        tables.sort_by_key(leaf_key);
                        if version == Version::V1 {
                            tables.reverse();
                        }
                        TtssElement {
                            length: src_len,
                            child: tables,
                        }
                    })
                    .collect();
                if version == Version::V1 {
                    elements.reverse();
                }
                TtssElement {
                    length: dst_len,
                    child: TtssNode { elements },
                }
            })
            .collect();
        if version == Version::V1 {
            root.reverse();
        }

        TtssClassifier {
            version,
            root: TtssNode { elements: root },
            proto_partition,
            ttl_threshold: rules.ttl_threshold(),
            tuple_count: tuples.len(),
        }
    }

    pub fn version(&self) -> Version {
        self.version
    }

    pub fn root(&self) -> &DstNode {
        &self.root
    }

    pub fn proto_partition(&self) -> bool {
        self.proto_partition
    }

    /// Number of distinct tuples, independent of protocol partitioning.
    pub fn tuple_count(&self) -> usize {
        self.tuple_count
    }

    /// All leaf tables in traversal order.
    pub fn tables(&self) -> impl Iterator<Item = &PartitionedTable> {
        self.root
            .elements
            .iter()
            .flat_map(|d| d.child.elements.iter())
            .flat_map(|s| s.child.iter())
    }
}

impl Classifier for TtssClassifier {
    fn name(&self) -> &'static str {
        match self.version {
            Version::V1 => "ttss-v1",
            Version::V2 => "ttss-v2",
        }
    }

    fn classify(&self, hdr: &PacketHeader) -> MatchResult {
        let mut res = MatchResult::default();
        'walk: for d in &self.root.elements {
            for s in &d.child.elements {
                for t in &s.child {
                    if !t.applies_to(hdr.proto) {
                        continue;
                    }
                    if self.version == Version::V1 {
                        let spec = (d.length, s.length, t.table.tuple().spec_count());
                        if matches!(res.matched, Some(b) if b.tuple.specificity() != spec) {
                            break 'walk;
                        }
                    }
                    res.probes += 1;
                    if let Some(hit) = t.table.probe_header(hdr, self.ttl_threshold) {
                        res.matched = RuleMatch::better(res.matched, hit);
                    }
                }
            }
        }
        res
    }

    fn entry_count(&self) -> usize {
        self.tables().map(|t| t.table.len()).sum()
    }

    fn table_count(&self) -> usize {
        self.tables().count()
    }
}

/// Probe-count distribution and per-tuple hit histogram over a trace.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeSummary {
    pub packets: u64,
    pub min: u32,
    pub mean: f64,
    pub max: u32,
    pub tuple_hits: BTreeMap<Tuple, u64>,
    pub misses: u64,
}

pub fn probe_stats<C: Classifier + ?Sized>(c: &C, trace: &[PacketHeader]) -> ProbeSummary {
    if trace.is_empty() {
        return ProbeSummary::default();
    }
    let mut s = ProbeSummary {
        min: u32::MAX,
        ..Default::default()
    };
    let mut total: u64 = 0;
    for hdr in trace {
        let r = c.classify(hdr);
        s.packets += 1;
        total += r.probes as u64;
        s.min = s.min.min(r.probes);
        s.max = s.max.max(r.probes);
        match r.matched {
            Some(m) => *s.tuple_hits.entry(m.tuple).or_default() += 1,
            None => s.misses += 1,
        }
    }
    s.mean = total as f64 / s.packets as f64;
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::classify_linear;
    use crate::rulemodel::{FlowId, IpPrefix, Rule};
    use std::net::Ipv4Addr;

    fn ip(s: &str) -> u32 {
        u32::from(s.parse::<Ipv4Addr>().unwrap())
    }

    fn flow(n: u32) -> FlowId {
        FlowId::new(n).unwrap()
    }

    fn three_rules() -> RuleSet {
        let mut r1 = Rule::catch_all(1, 1, flow(1));
        r1.dst = IpPrefix::new(ip("10.0.0.0"), 8).unwrap();
        let mut r2 = Rule::catch_all(2, 2, flow(2));
        r2.dst = IpPrefix::new(ip("10.1.0.0"), 16).unwrap();
        let r3 = Rule::catch_all(3, 3, flow(3));
        RuleSet::new(vec![r1, r2, r3], 64).unwrap()
    }

    fn shaped_rules() -> RuleSet {
        let mk = |id: u32, dst: u8, src: u8| {
            let mut r = Rule::catch_all(id, id + 1, flow(1));
            r.dst = IpPrefix::new(ip("10.20.30.40"), dst).unwrap();
            r.src = IpPrefix::new(ip("1.2.3.4"), src).unwrap();
            r
        };
        RuleSet::new(vec![mk(0, 16, 24), mk(1, 16, 8), mk(2, 8, 0)], 64).unwrap()
    }

    fn child_lengths(c: &TtssClassifier, dst: u8) -> Vec<u8> {
        c.root()
            .elements
            .iter()
            .find(|e| e.length == dst)
            .unwrap()
            .child
            .lengths()
    }

    #[test]
    fn v1_orders_longest_first() {
        let c = build_ttss(&shaped_rules(), Version::V1, true);
        assert_eq!(c.root().lengths(), vec![16, 8]);
        assert_eq!(child_lengths(&c, 16), vec![24, 8]);
    }

    #[test]
    fn v2_orders_shortest_first() {
        let c = build_ttss(&shaped_rules(), Version::V2, true);
        assert_eq!(c.root().lengths(), vec![8, 16]);
        assert_eq!(child_lengths(&c, 16), vec![8, 24]);
    }

    #[test]
    fn single_rule_shape() {
        let rs = RuleSet::new(vec![Rule::catch_all(0, 1, flow(1))], 64).unwrap();
        let c = build_ttss(&rs, Version::V1, true);
        assert_eq!(c.root().elements.len(), 1);
        assert_eq!(c.root().elements[0].child.elements.len(), 1);
        assert_eq!(c.table_count(), 1);
        assert_eq!(c.entry_count(), 1);
    }

    #[test]
    fn hand_traces_on_three_rules() {
        let rs = three_rules();
        let hit16 = PacketHeader {
            dst: ip("10.1.2.3"),
            ..Default::default()
        };
        let v1 = build_ttss(&rs, Version::V1, true);
        let v2 = build_ttss(&rs, Version::V2, true);

        let r = v1.classify(&hit16);
        assert_eq!((r.flow(), r.probes), (Some(flow(2)), 1));
        let r = v2.classify(&hit16);
        assert_eq!((r.flow(), r.probes), (Some(flow(2)), 3));
        assert_eq!(r.decision(), classify_linear(&rs, &hit16).decision());

        let only_wild = PacketHeader {
            dst: ip("192.0.2.9"),
            ..Default::default()
        };
        let r = v1.classify(&only_wild);
        assert_eq!((r.flow(), r.probes), (Some(flow(3)), 3));
        let r = v2.classify(&only_wild);
        assert_eq!((r.flow(), r.probes), (Some(flow(3)), 3));
    }

    #[test]
    fn v1_probes_whole_tie_group() {
        use crate::rulemodel::{ExactOrAny, TtlBand};
        // Two tuples with the same (dst, src, spec_count); the table visited
        // first holds the worse priority.
        let mut a = Rule::catch_all(0, 9, flow(1));
        a.proto = ExactOrAny::Exact(17);
        a.ttl = TtlBand::High;
        let mut b = Rule::catch_all(1, 3, flow(2));
        b.proto = ExactOrAny::Exact(17);
        b.tos = ExactOrAny::Exact(46);
        let rs = RuleSet::new(vec![a, b, Rule::catch_all(2, 10, flow(5))], 64).unwrap();
        let hdr = PacketHeader {
            proto: 17,
            ttl: 200,
            tos: 46,
            ..Default::default()
        };
        let v1 = build_ttss(&rs, Version::V1, true);
        let r = v1.classify(&hdr);
        assert_eq!(r.rule_id(), Some(1));
        assert_eq!(r.probes, 2);
    }

    #[test]
    fn probe_stats_edges() {
        let rs = RuleSet::new(vec![Rule::catch_all(0, 1, flow(1))], 64).unwrap();
        let c = build_ttss(&rs, Version::V1, true);
        assert_eq!(probe_stats(&c, &[]), ProbeSummary::default());
        let s = probe_stats(&c, &[PacketHeader::default()]);
        assert_eq!(s.mean, 1.0);
        assert_eq!((s.min, s.max, s.packets), (1, 1, 1));
    }
}
