//! Linear-search reference classifier.
//!
//! Scans every rule and keeps the best under [`MatchRank`]. Deliberately
//! naive: it is the ground truth the hashed classifiers are checked against.

use serde::{Deserialize, Serialize};

use crate::rulemodel::{FlowId, MatchRank, PacketHeader, Rule, RuleSet, Tuple};
use crate::Classifier;

/// The rule selected for a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleMatch {
    pub rule_id: u32,
    pub flow: FlowId,
    pub priority: u32,
    pub tuple: Tuple,
}

impl RuleMatch {
    pub fn of(rule: &Rule) -> Self {
        RuleMatch {
            rule_id: rule.id,
            flow: rule.flow,
            priority: rule.priority,
            tuple: rule.tuple(),
        }
    }

    pub fn rank(&self) -> MatchRank {
        MatchRank::new(self.tuple, self.priority)
    }

    /// Keeps whichever of `current` and `candidate` ranks higher.
    pub fn better(current: Option<RuleMatch>, candidate: RuleMatch) -> Option<RuleMatch> {
        match current {
            Some(c) if c.rank() >= candidate.rank() => Some(c),
            _ => Some(candidate),
        }
    }
}

/// Outcome of classifying one header. `probes` counts rules (linear) or hash
/// tables (tuple classifiers) examined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched: Option<RuleMatch>,
    pub probes: u32,
}

impl MatchResult {
    pub fn rule_id(&self) -> Option<u32> {
        self.matched.map(|m| m.rule_id)
    }

    pub fn flow(&self) -> Option<FlowId> {
        self.matched.map(|m| m.flow)
    }

    /// The decision without the cost, for cross-classifier comparison.
    pub fn decision(&self) -> Option<(u32, FlowId)> {
        self.matched.map(|m| (m.rule_id, m.flow))
    }
}

pub fn classify_linear(rules: &RuleSet, hdr: &PacketHeader) -> MatchResult {
    let thr = rules.ttl_threshold();
    let mut best = None;
    for rule in rules.rules() {
        if rule.matches(hdr, thr) {
            best = RuleMatch::better(best, RuleMatch::of(rule));
        }
    }
    MatchResult {
        matched: best,
        probes: rules.len() as u32,
    }
}

/// Every rule matching `hdr`, in ruleset order.
pub fn all_matches<'a>(rules: &'a RuleSet, hdr: &PacketHeader) -> Vec<&'a Rule> {
    let thr = rules.ttl_threshold();
    rules
        .rules()
        .iter()
        .filter(|r| r.matches(hdr, thr))
        .collect()
}

#[derive(Debug, Clone)]
pub struct LinearClassifier {
    rules: RuleSet,
}

impl LinearClassifier {
    pub fn new(rules: RuleSet) -> Self {
        LinearClassifier { rules }
    }

    pub fn ruleset(&self) -> &RuleSet {
        &self.rules
    }
}

impl Classifier for LinearClassifier {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn classify(&self, hdr: &PacketHeader) -> MatchResult {
        classify_linear(&self.rules, hdr)
    }

    fn entry_count(&self) -> usize {
        self.rules.len()
    }

    fn table_count(&self) -> usize {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulemodel::{IpPrefix, TtlBand};
    use std::net::Ipv4Addr;

    fn ip(s: &str) -> u32 {
        u32::from(s.parse::<Ipv4Addr>().unwrap())
    }

    /// R1: dst 10/8 -> 1, R2: dst 10.1/16 -> 2, R3: wildcard -> 3.
    pub(crate) fn three_rules() -> RuleSet {
        let f = |n| FlowId::new(n).unwrap();
        let mut r1 = Rule::catch_all(1, 1, f(1));
        r1.dst = IpPrefix::new(ip("10.0.0.0"), 8).unwrap();
        let mut r2 = Rule::catch_all(2, 2, f(2));
        r2.dst = IpPrefix::new(ip("10.1.0.0"), 16).unwrap();
        let r3 = Rule::catch_all(3, 3, f(3));
        RuleSet::new(vec![r1, r2, r3], 64).unwrap()
    }

    #[test]
    fn longer_dst_wins() {
        // Hand enumeration: R1 matches (dst 10/8), R2 matches (dst 10.1/16),
        // R3 matches. Ranks: R2 (16,0,0) > R1 (8,0,0) > R3 (0,0,0).
        let rs = three_rules();
        let hdr = PacketHeader {
            dst: ip("10.1.2.3"),
            ..Default::default()
        };
        let res = classify_linear(&rs, &hdr);
        assert_eq!(res.flow(), FlowId::new(2));
        assert_eq!(res.rule_id(), Some(2));
        assert_eq!(res.probes, 3);
    }

    #[test]
    fn falls_back_to_wildcard() {
        let rs = three_rules();
        let hdr = PacketHeader {
            dst: ip("192.0.2.1"),
            ..Default::default()
        };
        let res = classify_linear(&rs, &hdr);
        assert_eq!(res.flow(), FlowId::new(3));
        assert_eq!(all_matches(&rs, &hdr).len(), 1);
    }

    #[test]
    fn single_rule() {
        let rs = RuleSet::new(vec![Rule::catch_all(7, 1, FlowId::new(9).unwrap())], 64).unwrap();
        let res = classify_linear(
            &rs,
            &PacketHeader {
                src: 1,
                dst: 2,
                proto: 3,
                ttl: 4,
                tos: 5,
            },
        );
        assert_eq!(res.rule_id(), Some(7));
        assert_eq!(res.probes, 1);
    }

    #[test]
    fn no_match_is_empty() {
        let mut r = Rule::catch_all(0, 1, FlowId::new(1).unwrap());
        r.ttl = TtlBand::High;
        let rs = RuleSet::new(vec![r], 64).unwrap();
        let res = classify_linear(
            &rs,
            &PacketHeader {
                ttl: 10,
                ..Default::default()
            },
        );
        assert_eq!(res.matched, None);
        assert_eq!(res.flow(), None);
        assert_eq!(res.probes, 1);
    }
}
