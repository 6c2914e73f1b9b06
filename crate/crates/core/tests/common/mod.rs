#![allow(dead_code)]

use proptest::prelude::*;
use ttss_core::{ExactOrAny, FlowId, IpPrefix, Rule, RuleSet, TtlBand};

/// Prefix lengths that occur in practice, plus occasional odd ones.
pub fn arb_len() -> impl Strategy<Value = u8> {
    prop_oneof![
        4 => prop::sample::select(vec![0u8, 8, 16, 24, 32]),
        1 => 0u8..=32,
    ]
}

/// Addresses from a small neighbourhood so rules overlap often.
pub fn arb_addr() -> impl Strategy<Value = u32> {
    prop_oneof![
        3 => (0u32..4, 0u32..4, 0u32..4).prop_map(|(a, b, c)| 0x0a00_0000 | a << 16 | b << 8 | c),
        1 => any::<u32>(),
    ]
}

pub fn arb_prefix() -> impl Strategy<Value = IpPrefix> {
    (arb_addr(), arb_len()).prop_map(|(v, l)| IpPrefix::new(v, l).unwrap())
}

pub fn arb_exact_or_any(values: Vec<u8>) -> impl Strategy<Value = ExactOrAny> {
    prop_oneof![
        Just(ExactOrAny::Any),
        prop::sample::select(values).prop_map(ExactOrAny::Exact),
    ]
}

pub fn arb_band() -> impl Strategy<Value = TtlBand> {
    prop::sample::select(vec![TtlBand::Any, TtlBand::Low, TtlBand::High])
}

/// Rule body without id or priority.
pub fn arb_rule_body() -> impl Strategy<Value = Rule> {
    (
        arb_prefix(),
        arb_prefix(),
        arb_exact_or_any(vec![1, 6, 17]),
        arb_band(),
        arb_exact_or_any(vec![0, 34, 46]),
        1u32..=8,
    )
        .prop_map(|(src, dst, proto, ttl, tos, flow)| Rule {
            id: 0,
            priority: 0,
            src,
            dst,
            proto,
            ttl,
            tos,
            flow: FlowId::new(flow).unwrap(),
        })
}

/// Rulesets of `1..=max` rules with ids in order and a random priority permutation.
pub fn arb_ruleset(max: usize) -> impl Strategy<Value = RuleSet> {
    (
        prop::collection::vec(arb_rule_body(), 1..=max),
        prop::sample::select(vec![32u8, 64, 128]),
    )
        .prop_flat_map(|(bodies, thr)| {
            let n = bodies.len();
            let prios: Vec<u32> = (1..=n as u32).collect();
            (Just(bodies), Just(prios).prop_shuffle(), Just(thr))
        })
        .prop_map(|(bodies, prios, thr)| {
            let rules = bodies
                .into_iter()
                .zip(prios)
                .enumerate()
                .map(|(i, (r, p))| Rule {
                    id: i as u32,
                    priority: p,
                    ..r
                })
                .collect();
            RuleSet::new(rules, thr).unwrap()
        })
}
