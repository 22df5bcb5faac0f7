//! Filtered ranking evaluation: MRR and Hits@{1, 3, 10}.
//!
//! For each held-out (entity, type) tuple the entity's scores are ranked
//! over all types after removing its other known types (train ∪ valid ∪
//! test) from contention. Ties count against the target, so reported ranks
//! are pessimistic and deterministic.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::encoder::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::graph::{Dataset, Split};
use crate::model::{compute_alignments, forward_unified, prepare, score_batch_values, Prepared};

/// Aggregated ranking metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub mrr: f64,
    pub hits_at: BTreeMap<usize, f64>,
    pub tuple_count: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Metrics {
        let n = ranks.len();
        let mut hits_at = BTreeMap::new();
        if n == 0 {
            for k in [1, 3, 10] {
                hits_at.insert(k, 0.0);
            }
            return Metrics {
                mrr: 0.0,
                hits_at,
                tuple_count: 0,
            };
        }
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n as f64;
        for k in [1, 3, 10] {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            hits_at.insert(k, hits as f64 / n as f64);
        }
        Metrics {
            mrr,
            hits_at,
            tuple_count: n,
        }
    }

    pub fn hits(&self, k: usize) -> f64 {
        self.hits_at.get(&k).copied().unwrap_or(0.0)
    }

    /// The fixed-order human-readable table.
    pub fn table(&self) -> String {
        format!(
            "MRR     {:.4}\nHits@1  {:.4}\nHits@3  {:.4}\nHits@10 {:.4}\ntuples  {}",
            self.mrr,
            self.hits(1),
            self.hits(3),
            self.hits(10),
            self.tuple_count
        )
    }

    /// One-line machine-readable form.
    pub fn machine_line(&self) -> String {
        format!(
            "mrr={:.6} h1={:.6} h3={:.6} h10={:.6}",
            self.mrr,
            self.hits(1),
            self.hits(3),
            self.hits(10)
        )
    }
}

/// Filtered pessimistic rank of `target` within `scores`.
///
/// Candidates are all type ids not in `known` (the target itself always
/// competes). The rank is one plus the number of candidates scoring
/// strictly higher plus the number of non-target candidates tying.
pub fn filtered_rank(scores: &[f64], target: usize, known: &[usize]) -> Result<usize> {
    if target >= scores.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} scores",
            scores.len()
        )));
    }
    let mut filtered = vec![false; scores.len()];
    for &k in known {
        if k < scores.len() && k != target {
            filtered[k] = true;
        }
    }
    let t = scores[target];
    let mut rank = 1;
    for (p, &s) in scores.iter().enumerate() {
        if p == target || filtered[p] {
            continue;
        }
        if s >= t {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Ranks every tuple of `split` under the given parameters.
pub fn evaluate_space(
    space: &EmbeddingSpace,
    dataset: &Dataset,
    prepared: &Prepared,
    cfg: &TrainConfig,
    split: Split,
) -> Result<Metrics> {
    let tuples = dataset.tuples(split);
    if tuples.is_empty() {
        return Ok(Metrics::from_ranks(&[]));
    }

    let alignments = compute_alignments(space, prepared, cfg)?;
    let fwd = forward_unified(space, prepared, cfg, &alignments)?;
    let (ze, zt, zc) = fwd.z_values();
    drop(fwd);

    let known = dataset.known_types_per_entity();

    // score each distinct entity once
    let mut entities: Vec<usize> = tuples.iter().map(|&(e, _)| e).collect();
    entities.sort_unstable();
    entities.dedup();

    let relations = space.get("relation");
    let w = space.get("pred_w");
    let b = space.get("pred_b");
    let index = &prepared.index;
    let temps = &cfg.temperatures;

    let chunk = 256usize;
    let scored: Vec<(usize, Vec<f64>)> = entities
        .par_chunks(chunk)
        .flat_map(|batch| {
            let probs = score_batch_values(
                &ze,
                &zt,
                &zc,
                relations,
                w,
                b,
                temps,
                index,
                batch,
            );
            batch
                .iter()
                .enumerate()
                .map(|(i, &e)| (e, probs.row(i).to_vec()))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut scores_of = vec![None; dataset.num_entities()];
    for (e, s) in scored {
        scores_of[e] = Some(s);
    }

    let mut ranks = Vec::with_capacity(tuples.len());
    for &(e, t) in tuples {
        let scores = scores_of[e]
            .as_ref()
            .ok_or_else(|| Error::Lookup(format!("entity {e} was not scored")))?;
        ranks.push(filtered_rank(scores, t, &known[e])?);
    }
    Ok(Metrics::from_ranks(&ranks))
}

/// Loads parameters from a checkpoint, rebuilds the graph-side artifacts,
/// and evaluates one split. The dataset must match the checkpoint's
/// vocabularies exactly.
pub fn evaluate(ckpt: &Checkpoint, dataset: &mut Dataset, split: Split) -> Result<Metrics> {
    let cfg = ckpt.train_config()?;
    let prepared = prepare(dataset, &cfg)?;
    ckpt.check_vocab_hashes(dataset)?;
    let space = ckpt.space();
    evaluate_space(&space, dataset, &prepared, &cfg, split)
}

/// Total scalar parameter count of a checkpoint.
pub fn count_parameters(ckpt: &Checkpoint) -> usize {
    ckpt.tables().iter().map(|t| t.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn highest_score_ranks_first() {
        let scores = [0.9, 0.5, 0.2];
        assert_eq!(filtered_rank(&scores, 0, &[]).unwrap(), 1);
    }

    #[test]
    fn filtering_removes_a_better_scored_known_type() {
        // target 0.5 is beaten by a (0.9), but a is known → rank 1
        let scores = [0.5, 0.9, 0.2];
        assert_eq!(filtered_rank(&scores, 0, &[]).unwrap(), 2);
        assert_eq!(filtered_rank(&scores, 0, &[1]).unwrap(), 1);
    }

    #[test]
    fn ties_count_against_the_target() {
        let scores = [0.4, 0.4, 0.4, 0.4];
        assert_eq!(filtered_rank(&scores, 2, &[]).unwrap(), 4);
    }

    #[test]
    fn target_out_of_range_is_an_error() {
        assert!(filtered_rank(&[0.1], 3, &[]).is_err());
    }

    #[test]
    fn metrics_hand_case() {
        let m = Metrics::from_ranks(&[1, 2, 4]);
        assert!((m.mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        assert!((m.hits(1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.hits(3) - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.hits(10) - 1.0).abs() < 1e-12);
        assert_eq!(m.tuple_count, 3);
    }

    #[test]
    fn all_rank_one_gives_perfect_metrics() {
        let m = Metrics::from_ranks(&[1, 1, 1]);
        assert_eq!(m.mrr, 1.0);
        assert_eq!(m.hits(1), 1.0);
        assert_eq!(m.hits(10), 1.0);
    }

    proptest! {
        /// Filtering can only improve (lower) a rank.
        #[test]
        fn filtering_never_hurts(
            scores in proptest::collection::vec(0.0f64..1.0, 2..30),
            target in 0usize..30,
            known in proptest::collection::vec(0usize..30, 0..10),
        ) {
            let target = target % scores.len();
            let known: Vec<usize> = known.into_iter().map(|k| k % scores.len()).collect();
            let unfiltered = filtered_rank(&scores, target, &[]).unwrap();
            let filtered = filtered_rank(&scores, target, &known).unwrap();
            prop_assert!(filtered <= unfiltered);
            prop_assert!(filtered >= 1);
        }

        /// Ranks are invariant under strictly monotone score transforms.
        #[test]
        fn monotone_transform_invariance(
            scores in proptest::collection::vec(0.01f64..0.99, 2..20),
            target in 0usize..20,
            known in proptest::collection::vec(0usize..20, 0..5),
        ) {
            let target = target % scores.len();
            let known: Vec<usize> = known.into_iter().map(|k| k % scores.len()).collect();
            let base = filtered_rank(&scores, target, &known).unwrap();
            let exp: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp()).collect();
            let affine: Vec<f64> = scores.iter().map(|&s| 7.0 * s - 2.0).collect();
            prop_assert_eq!(base, filtered_rank(&exp, target, &known).unwrap());
            prop_assert_eq!(base, filtered_rank(&affine, target, &known).unwrap());
        }

        /// Hits@K is monotone nondecreasing in K and exact as a count.
        #[test]
        fn hits_monotonicity(ranks in proptest::collection::vec(1usize..40, 1..50)) {
            let m = Metrics::from_ranks(&ranks);
            prop_assert!(m.hits(1) <= m.hits(3) + 1e-12);
            prop_assert!(m.hits(3) <= m.hits(10) + 1e-12);
            let exact1 = ranks.iter().filter(|&&r| r <= 1).count() as f64 / ranks.len() as f64;
            prop_assert!((m.hits(1) - exact1).abs() < 1e-12);
            prop_assert!(m.mrr >= 0.0 && m.mrr <= 1.0);
        }
    }
}
