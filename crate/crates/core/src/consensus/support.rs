use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::claims::{normalize_statement, Claim};
use super::ConsensusError;

/// Decides whether two claims state the same fact.
pub trait ClaimMatcher: Send + Sync {
    fn equivalent(&self, a: &Claim, b: &Claim) -> Result<bool, ConsensusError>;
}

/// Reference matcher: normalized exact text match, plus an optional table of
/// statement pairs declared equivalent.
#[derive(Debug, Clone, Default)]
pub struct NormalizedMatcher {
    equivalences: BTreeSet<(String, String)>,
}

impl NormalizedMatcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_equivalence(mut self, a: &str, b: &str) -> Self {
        let (a, b) = (normalize_statement(a), normalize_statement(b));
        self.equivalences.insert((a.clone(), b.clone()));
        self.equivalences.insert((b, a));
        self
    }
}

impl ClaimMatcher for NormalizedMatcher {
    fn equivalent(&self, a: &Claim, b: &Claim) -> Result<bool, ConsensusError> {
        let (na, nb) = (a.normalized(), b.normalized());
        Ok(na == nb || self.equivalences.contains(&(na, nb)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSupport {
    /// First-seen variant among the merged claims.
    pub canonical_claim: Claim,
    pub supporters: BTreeSet<String>,
    pub support_count: usize,
    /// Ids of every raw claim merged into this entry.
    pub member_ids: Vec<String>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Merges equivalent claims across experts.
///
/// Equivalence is closed transitively, so if `a ~ b` and `b ~ c` all three
/// merge. Each expert counts once per merged claim. Output order follows the
/// first appearance of each merged group.
pub fn build_support_map(claim_sets: &[(String, Vec<Claim>)], matcher: &dyn ClaimMatcher) -> Result<Vec<ClaimSupport>, ConsensusError> {
    let mut ids = BTreeSet::new();
    for (expert, _) in claim_sets {
        if !ids.insert(expert.as_str()) {
            return Err(ConsensusError::InvalidInput(format!("duplicate expert {expert} in claim sets")));
        }
    }
    let all: Vec<(&str, &Claim)> = claim_sets
        .iter()
        .flat_map(|(expert, claims)| claims.iter().map(move |c| (expert.as_str(), c)))
        .collect();

    let mut parent: Vec<usize> = (0..all.len()).collect();
    for i in 0..all.len() {
        for j in (i + 1)..all.len() {
            if find(&mut parent, i) == find(&mut parent, j) {
                continue;
            }
            if matcher.equivalent(all[i].1, all[j].1)? {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                // Keep the earliest index as root so the canonical claim is first-seen.
                let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                parent[hi] = lo;
            }
        }
    }

    let mut groups: BTreeMap<usize, ClaimSupport> = BTreeMap::new();
    for (idx, (expert, claim)) in all.iter().enumerate() {
        let root = find(&mut parent, idx);
        let entry = groups.entry(root).or_insert_with(|| ClaimSupport {
            canonical_claim: all[root].1.clone(),
            supporters: BTreeSet::new(),
            support_count: 0,
            member_ids: Vec::new(),
        });
        entry.supporters.insert(expert.to_string());
        entry.member_ids.push(claim.claim_id.clone());
    }
    Ok(groups
        .into_values()
        .map(|mut s| {
            s.support_count = s.supporters.len();
            s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn claim(expert: &str, i: usize, text: &str) -> Claim {
        Claim::new(format!("{expert}#{i}"), text, expert)
    }

    fn sets(spec: &[(&str, &[&str])]) -> Vec<(String, Vec<Claim>)> {
        spec.iter()
            .map(|(e, texts)| (e.to_string(), texts.iter().enumerate().map(|(i, t)| claim(e, i + 1, t)).collect()))
            .collect()
    }

    #[test]
    fn identical_claims_merge() {
        let s = sets(&[("A", &["X is true."]), ("B", &["x is TRUE"]), ("C", &["X is true"])]);
        let map = build_support_map(&s, &NormalizedMatcher::new()).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map[0].support_count, 3);
        assert_eq!(map[0].supporters, BTreeSet::from(["A".into(), "B".into(), "C".into()]));
        assert_eq!(map[0].canonical_claim.statement, "X is true.");
    }

    #[test]
    fn two_and_one() {
        let s = sets(&[("A", &["X"]), ("B", &["X"]), ("C", &["Y"])]);
        let map = build_support_map(&s, &NormalizedMatcher::new()).unwrap();
        let counts: Vec<usize> = map.iter().map(|m| m.support_count).collect();
        assert_eq!(counts, [2, 1]);
    }

    #[test]
    fn expert_counted_once() {
        let s = sets(&[("A", &["X", "x."]), ("B", &["Y"])]);
        let map = build_support_map(&s, &NormalizedMatcher::new()).unwrap();
        assert_eq!(map[0].support_count, 1);
        assert_eq!(map[0].member_ids, ["A#1", "A#2"]);
    }

    #[test]
    fn duplicate_experts_rejected() {
        let s = sets(&[("A", &["X"]), ("A", &["Y"])]);
        assert!(build_support_map(&s, &NormalizedMatcher::new()).is_err());
    }

    /// Brute-force oracle: repeatedly merge any two groups containing an
    /// equivalent pair until nothing changes.
    fn oracle(claims: &[(String, Claim)], eq: &dyn Fn(&Claim, &Claim) -> bool) -> Vec<(BTreeSet<String>, BTreeSet<String>)> {
        let mut groups: Vec<Vec<usize>> = (0..claims.len()).map(|i| vec![i]).collect();
        loop {
            let mut merged = false;
            'outer: for g in 0..groups.len() {
                for h in (g + 1)..groups.len() {
                    let linked = groups[g].iter().any(|&i| groups[h].iter().any(|&j| eq(&claims[i].1, &claims[j].1)));
                    if linked {
                        let moved = groups.remove(h);
                        groups[g].extend(moved);
                        merged = true;
                        break 'outer;
                    }
                }
            }
            if !merged {
                break;
            }
        }
        let mut out: Vec<_> = groups
            .into_iter()
            .map(|g| {
                let experts: BTreeSet<String> = g.iter().map(|&i| claims[i].0.clone()).collect();
                let ids: BTreeSet<String> = g.iter().map(|&i| claims[i].1.claim_id.clone()).collect();
                (experts, ids)
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn scripted_equivalence_table_matches_bruteforce() {
        let s = sets(&[
            ("A", &["Alpha holds", "Beta holds", "Gamma holds", "Delta holds", "Epsilon holds"]),
            ("B", &["alpha holds.", "B is the case", "Gamma is true", "Zeta holds", "Eta holds"]),
            ("C", &["Alpha is so", "beta holds", "gamma holds!", "Theta holds", "Iota holds"]),
        ]);
        let matcher = NormalizedMatcher::new()
            .with_equivalence("Alpha holds", "Alpha is so")
            .with_equivalence("B is the case", "Beta holds")
            .with_equivalence("Gamma is true", "gamma holds")
            .with_equivalence("Zeta holds", "Theta holds");
        let flat: Vec<(String, Claim)> = s.iter().flat_map(|(e, cs)| cs.iter().map(move |c| (e.clone(), c.clone()))).collect();
        let eq = |a: &Claim, b: &Claim| matcher.equivalent(a, b).unwrap();
        let expected = oracle(&flat, &eq);

        let map = build_support_map(&s, &matcher).unwrap();
        let mut got: Vec<_> = map
            .iter()
            .map(|m| (m.supporters.clone(), m.member_ids.iter().cloned().collect::<BTreeSet<_>>()))
            .collect();
        got.sort();
        assert_eq!(got, expected);
        let counts: Vec<usize> = map.iter().map(|m| m.support_count).collect();
        assert_eq!(counts, [3, 3, 3, 1, 1, 2, 1, 1]);
    }

    proptest! {
        #[test]
        fn union_find_equals_bruteforce(texts in proptest::collection::vec(proptest::collection::vec(0u8..6, 0..5), 2..5)) {
            let s: Vec<(String, Vec<Claim>)> = texts
                .iter()
                .enumerate()
                .map(|(e, ts)| {
                    let expert = format!("E{e}");
                    let claims = ts.iter().enumerate().map(|(i, t)| claim(&expert, i + 1, &format!("fact {t}"))).collect();
                    (expert, claims)
                })
                .collect();
            // "fact 0" ~ "fact 1" ~ "fact 2" chain exercises transitivity.
            let matcher = NormalizedMatcher::new().with_equivalence("fact 0", "fact 1").with_equivalence("fact 1", "fact 2");
            let flat: Vec<(String, Claim)> = s.iter().flat_map(|(e, cs)| cs.iter().map(move |c| (e.clone(), c.clone()))).collect();
            let eq = |a: &Claim, b: &Claim| matcher.equivalent(a, b).unwrap();
            let expected = oracle(&flat, &eq);
            let map = build_support_map(&s, &matcher).unwrap();
            let mut got: Vec<_> = map.iter().map(|m| (m.supporters.clone(), m.member_ids.iter().cloned().collect::<BTreeSet<_>>())).collect();
            got.sort();
            prop_assert_eq!(got, expected);
            for m in &map {
                prop_assert_eq!(m.support_count, m.supporters.len());
            }
        }
    }
}
