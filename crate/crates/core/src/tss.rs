//! Tuple Space Search.
//!
//! Rules are grouped by [`Tuple`]; each group lives in one [`TupleTable`]
//! probed with the header masked down to that tuple. A lookup probes every
//! table and keeps the best match. With protocol partitioning enabled, tables
//! of protocol-exact tuples are additionally split per protocol value and a
//! header only visits its own protocol's tables plus the protocol-wildcard
//! ones.

use std::collections::{BTreeMap, HashMap};

use crate::oracle::{MatchResult, RuleMatch};
use crate::rulemodel::{prefix_mask, PacketHeader, Rule, RuleSet, TtlBand, Tuple};
use crate::Classifier;

pub const KEY_WIDTH: usize = 11;

/// Header (or rule) projected onto a tuple:
/// `dst[4] src[4] proto ttl-band tos`, unspecified fields zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MaskedKey(pub [u8; KEY_WIDTH]);

impl MaskedKey {
    fn assemble(dst: u32, src: u32, proto: u8, ttl: u8, tos: u8) -> Self {
        let mut k = [0u8; KEY_WIDTH];
        k[0..4].copy_from_slice(&dst.to_be_bytes());
        k[4..8].copy_from_slice(&src.to_be_bytes());
        k[8] = proto;
        k[9] = ttl;
        k[10] = tos;
        MaskedKey(k)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

pub fn key_of(hdr: &PacketHeader, tuple: &Tuple, ttl_threshold: u8) -> MaskedKey {
    MaskedKey::assemble(
        hdr.dst & prefix_mask(tuple.dst_len),
        hdr.src & prefix_mask(tuple.src_len),
        if tuple.proto_spec { hdr.proto } else { 0 },
        if tuple.ttl_spec {
            TtlBand::of(hdr.ttl, ttl_threshold).code()
        } else {
            0
        },
        if tuple.tos_spec { hdr.tos } else { 0 },
    )
}

/// The key a rule is stored under; equals `key_of(hdr, ..)` for every header
/// the rule matches.
pub fn key_of_rule(rule: &Rule) -> MaskedKey {
    MaskedKey::assemble(
        rule.dst.value(),
        rule.src.value(),
        rule.proto.exact().unwrap_or(0),
        rule.ttl.code(),
        rule.tos.exact().unwrap_or(0),
    )
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Hash applied to masked keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyHasher {
    /// FNV-1a 64 with `seed` XORed into the offset basis.
    Fnv1a { seed: u64 },
    /// Every key hashes to the same value. Only useful for collision tests.
    Constant(u64),
}

impl Default for KeyHasher {
    fn default() -> Self {
        KeyHasher::Fnv1a { seed: 0 }
    }
}

impl KeyHasher {
    pub fn hash(&self, key: &MaskedKey) -> u64 {
        match *self {
            KeyHasher::Fnv1a { seed } => fnv1a(seed, key.as_bytes()),
            KeyHasher::Constant(h) => h,
        }
    }
}

pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET ^ seed, |h, &b| {
        (h ^ b as u64).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone)]
struct Entry {
    key: MaskedKey,
    hit: RuleMatch,
}

/// Chained hash table holding the rules of one tuple.
#[derive(Debug, Clone)]
pub struct TupleTable {
    tuple: Tuple,
    hasher: KeyHasher,
    buckets: Vec<Vec<Entry>>,
    len: usize,
}

impl TupleTable {
    /// All `rules` must share `tuple`.
    pub fn build(tuple: Tuple, rules: &[&Rule], hasher: KeyHasher) -> Self {
        let nbuckets = (rules.len() * 2).next_power_of_two().max(1);
        let mut buckets: Vec<Vec<Entry>> = vec![Vec::new(); nbuckets];
        for rule in rules {
            assert_eq!(
                rule.tuple(),
                tuple,
                "rule {} stored under wrong tuple",
                rule.id
            );
            let key = key_of_rule(rule);
            let slot = (hasher.hash(&key) as usize) & (nbuckets - 1);
            buckets[slot].push(Entry {
                key,
                hit: RuleMatch::of(rule),
            });
        }
        TupleTable {
            tuple,
            hasher,
            buckets,
            len: rules.len(),
        }
    }

    pub fn tuple(&self) -> Tuple {
        self.tuple
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Best-priority rule stored under exactly `key`.
    pub fn probe(&self, key: &MaskedKey) -> Option<RuleMatch> {
        let slot = (self.hasher.hash(key) as usize) & (self.buckets.len() - 1);
        self.buckets[slot]
            .iter()
            .filter(|e| e.key == *key)
            .map(|e| e.hit)
            .min_by_key(|h| h.priority)
    }

    pub fn probe_header(&self, hdr: &PacketHeader, ttl_threshold: u8) -> Option<RuleMatch> {
        self.probe(&key_of(hdr, &self.tuple, ttl_threshold))
    }

    pub fn rule_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.buckets.iter().flatten().map(|e| e.hit.rule_id)
    }
}

/// A tuple table together with the protocol value it is restricted to, if
/// protocol partitioning put it in a per-protocol group.
#[derive(Debug, Clone)]
pub struct PartitionedTable {
    pub proto: Option<u8>,
    pub table: TupleTable,
}

impl PartitionedTable {
    pub fn applies_to(&self, proto: u8) -> bool {
        self.proto.is_none_or(|p| p == proto)
    }
}

/// Rules sharing a tuple and, when partitioning, a protocol.
pub(crate) type RuleGroup<'a> = ((Tuple, Option<u8>), Vec<&'a Rule>);

/// Groups rules by `(tuple, protocol partition)` in first-seen order.
pub(crate) fn group_rules(rules: &RuleSet, proto_partition: bool) -> Vec<RuleGroup<'_>> {
    let mut index: HashMap<(Tuple, Option<u8>), usize> = HashMap::new();
    let mut groups: Vec<RuleGroup> = Vec::new();
    for rule in rules.rules() {
        let part = if proto_partition {
            rule.proto.exact()
        } else {
            None
        };
        let k = (rule.tuple(), part);
        let i = *index.entry(k).or_insert_with(|| {
            groups.push((k, Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(rule);
    }
    groups
}

#[derive(Debug, Clone)]
pub struct TssClassifier {
    tables: Vec<PartitionedTable>,
    by_proto: BTreeMap<u8, Vec<usize>>,
    proto_wild: Vec<usize>,
    proto_partition: bool,
    ttl_threshold: u8,
}

pub fn build_tss(rules: &RuleSet, proto_partition: bool) -> TssClassifier {
    TssClassifier::build(rules, proto_partition, KeyHasher::default())
}

pub fn classify_tss(c: &TssClassifier, hdr: &PacketHeader) -> MatchResult {
    c.classify(hdr)
}

impl TssClassifier {
    pub fn build(rules: &RuleSet, proto_partition: bool, hasher: KeyHasher) -> Self {
        let mut tables = Vec::new();
        let mut by_proto: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        let mut proto_wild = Vec::new();
        for ((tuple, proto), members) in group_rules(rules, proto_partition) {
            let idx = tables.len();
            match proto {
                Some(p) => by_proto.entry(p).or_default().push(idx),
                None => proto_wild.push(idx),
            }
            tables.push(PartitionedTable {
                proto,
                table: TupleTable::build(tuple, &members, hasher),
            });
        }
        TssClassifier {
            tables,
            by_proto,
            proto_wild,
            proto_partition,
            ttl_threshold: rules.ttl_threshold(),
        }
    }

    pub fn tables(&self) -> &[PartitionedTable] {
        &self.tables
    }

    pub fn proto_partition(&self) -> bool {
        self.proto_partition
    }

    pub fn ttl_threshold(&self) -> u8 {
        self.ttl_threshold
    }

    fn probe_all<'a>(
        &self,
        indices: impl Iterator<Item = &'a usize>,
        hdr: &PacketHeader,
        out: &mut MatchResult,
    ) {
        for &i in indices {
            out.probes += 1;
            if let Some(hit) = self.tables[i].table.probe_header(hdr, self.ttl_threshold) {
                out.matched = RuleMatch::better(out.matched, hit);
            }
        }
    }
}

impl Classifier for TssClassifier {
    fn name(&self) -> &'static str {
        "tss"
    }

    fn classify(&self, hdr: &PacketHeader) -> MatchResult {
        let mut res = MatchResult::default();
        if self.proto_partition {
            if let Some(group) = self.by_proto.get(&hdr.proto) {
                self.probe_all(group.iter(), hdr, &mut res);
            }
            self.probe_all(self.proto_wild.iter(), hdr, &mut res);
        } else {
            for t in &self.tables {
                res.probes += 1;
                if let Some(hit) = t.table.probe_header(hdr, self.ttl_threshold) {
                    res.matched = RuleMatch::better(res.matched, hit);
                }
            }
        }
        res
    }

    fn entry_count(&self) -> usize {
        self.tables.iter().map(|t| t.table.len()).sum()
    }

    fn table_count(&self) -> usize {
        self.tables.len()
    }
}
