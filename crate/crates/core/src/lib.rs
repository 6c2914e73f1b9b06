//! Multi-field packet classification with Tuple Space Search (TSS) and
//! Trie-based Tuple Space Search (TTSS), plus the traffic generator and
//! receive/classify/transmit pipeline simulator used to compare them.
//!
//! All classifiers return the same decision for every header: the best
//! matching rule under [`rulemodel::MatchRank`]. They differ only in how
//! many hash tables (`probes`) they examine to find it.

pub mod oracle;
pub mod pipesim;
pub mod rulemodel;
pub mod traffic;
pub mod tss;
pub mod ttss;

pub use oracle::{classify_linear, LinearClassifier, MatchResult, RuleMatch};
pub use rulemodel::{
    parse_ruleset, ExactOrAny, FlowId, IpPrefix, MatchRank, PacketHeader, Rule, RuleError, RuleSet,
    TtlBand, Tuple,
};
pub use tss::{build_tss, TssClassifier};
pub use ttss::{build_ttss, TtssClassifier, Version};

/// A built, immutable packet classifier.
pub trait Classifier: Send + Sync {
    fn name(&self) -> &'static str;

    fn classify(&self, hdr: &PacketHeader) -> MatchResult;

    /// Rules stored across all tables (or in the list, for linear search).
    fn entry_count(&self) -> usize;

    /// Hash tables held; zero for linear search.
    fn table_count(&self) -> usize;
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn name(&self) -> &'static str {
        (**self).name()
    }

    fn classify(&self, hdr: &PacketHeader) -> MatchResult {
        (**self).classify(hdr)
    }

    fn entry_count(&self) -> usize {
        (**self).entry_count()
    }

    fn table_count(&self) -> usize {
        (**self).table_count()
    }
}

/// The four classifiers compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Linear,
    Tss,
    TtssV1,
    TtssV2,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Linear,
        Algorithm::Tss,
        Algorithm::TtssV1,
        Algorithm::TtssV2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Linear => "linear",
            Algorithm::Tss => "tss",
            Algorithm::TtssV1 => "ttss-v1",
            Algorithm::TtssV2 => "ttss-v2",
        }
    }

    pub fn build(self, rules: &RuleSet, proto_partition: bool) -> Box<dyn Classifier> {
        match self {
            Algorithm::Linear => Box::new(LinearClassifier::new(rules.clone())),
            Algorithm::Tss => Box::new(build_tss(rules, proto_partition)),
            Algorithm::TtssV1 => Box::new(build_ttss(rules, Version::V1, proto_partition)),
            Algorithm::TtssV2 => Box::new(build_ttss(rules, Version::V2, proto_partition)),
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (linear, tss, ttss-v1, ttss-v2)"))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
