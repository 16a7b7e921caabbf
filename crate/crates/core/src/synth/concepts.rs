//! Concept sets for TCAV on the AF-proxy task.

use super::dataset::make_af_record;
use crate::config::derive_seed;
use crate::error::Result;
use crate::record::EcgRecord;
use crate::tcav::ConceptSet;

/// Records of the given class (alternating classes when `label` is `None`).
pub fn af_records(label: Option<usize>, n: usize, seed: u64) -> Result<Vec<EcgRecord>> {
    (0..n)
        .map(|i| {
            let l = label.unwrap_or(i % 2);
            make_af_record(l, derive_seed(seed, "concept-record", i as u64)).map(|(r, _)| r)
        })
        .collect()
}

/// `af` (class 1), `sinus` (class 0) and `null` concept sets plus a random
/// pool of `pool_size` records.
///
/// `null` is drawn from the same class mixture as the random pool, so no
/// direction separates it from random sets beyond sampling noise.
pub fn make_concept_sets(n_per_concept: usize, pool_size: usize, seed: u64) -> Result<(Vec<ConceptSet>, Vec<EcgRecord>)> {
    let concepts = vec![
        ConceptSet::new("af", af_records(Some(1), n_per_concept, derive_seed(seed, "af", 0))?)?,
        ConceptSet::new("sinus", af_records(Some(0), n_per_concept, derive_seed(seed, "sinus", 0))?)?,
        ConceptSet::new("null", af_records(None, n_per_concept, derive_seed(seed, "null", 0))?)?,
    ];
    Ok((concepts, af_records(None, pool_size, derive_seed(seed, "random-pool", 0))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sets_are_deterministic_and_distinct() {
        let (a, pool) = make_concept_sets(10, 12, 4).unwrap();
        let (b, _) = make_concept_sets(10, 12, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(pool.len(), 12);
        assert_ne!(a[0].examples[0], a[2].examples[1]);
        assert_ne!(a[2].examples[0], pool[0]);
    }
}
