//! Robustness dataset generators: frequency splits and sparse-neighbor
//! versions.
//!
//! All transformations are per-entity and seed-deterministic; the type graph
//! is never modified by the dropping generators.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Tuple};
use crate::seeds::sub_rng;

/// Which variant to generate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Easy,
    Hard,
    DropNeighbors,
    DropRelationTypes,
}

impl std::str::FromStr for VariantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(VariantKind::Easy),
            "hard" => Ok(VariantKind::Hard),
            "drop_neighbors" => Ok(VariantKind::DropNeighbors),
            "drop_relation_types" => Ok(VariantKind::DropRelationTypes),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant kind '{other}'"
            ))),
        }
    }
}

/// A fully specified variant request.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    /// Frequency threshold for easy/hard splits.
    pub threshold: Option<usize>,
    /// Removal rate for the dropping variants.
    pub rate: Option<f64>,
    pub seed: u64,
}

impl VariantSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            VariantKind::Easy | VariantKind::Hard => {
                let k = self
                    .threshold
                    .ok_or_else(|| Error::InvalidArgument("threshold required".into()))?;
                if k < 1 {
                    return Err(Error::InvalidArgument("threshold must be >= 1".into()));
                }
            }
            VariantKind::DropNeighbors | VariantKind::DropRelationTypes => {
                let r = self
                    .rate
                    .ok_or_else(|| Error::InvalidArgument("rate required".into()))?;
                if !(r > 0.0 && r < 1.0) {
                    return Err(Error::InvalidArgument(
                        "rate must lie strictly between 0 and 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        self.validate()?;
        Ok(match self.kind {
            VariantKind::Easy => split_easy_hard(dataset, self.threshold.unwrap()).0,
            VariantKind::Hard => split_easy_hard(dataset, self.threshold.unwrap()).1,
            VariantKind::DropNeighbors => {
                drop_relational_neighbors(dataset, self.rate.unwrap(), self.seed)
            }
            VariantKind::DropRelationTypes => {
                drop_relation_types(dataset, self.rate.unwrap(), self.seed)
            }
        })
    }
}

/// Train-split frequency of every type.
pub fn type_train_frequency(dataset: &Dataset) -> Vec<usize> {
    let mut freq = vec![0usize; dataset.num_types()];
    for &(_, t) in &dataset.train_tuples {
        freq[t] += 1;
    }
    freq
}

/// Partitions all tuple splits by type frequency: a type occurring at most
/// `k` times in train is hard, otherwise easy. The relational graph and all
/// vocabularies are shared unchanged by both outputs.
pub fn split_easy_hard(dataset: &Dataset, k: usize) -> (Dataset, Dataset) {
    assert!(k >= 1, "threshold must be at least 1");
    let freq = type_train_frequency(dataset);
    let is_hard = |t: usize| freq[t] <= k;

    let part = |tuples: &[Tuple], hard: bool| -> Vec<Tuple> {
        tuples
            .iter()
            .copied()
            .filter(|&(_, t)| is_hard(t) == hard)
            .collect()
    };

    let make = |hard: bool| Dataset {
        vocabs: dataset.vocabs.clone(),
        relational_edges: dataset.relational_edges.clone(),
        train_tuples: part(&dataset.train_tuples, hard),
        valid_tuples: part(&dataset.valid_tuples, hard),
        test_tuples: part(&dataset.test_tuples, hard),
    };

    (make(false), make(true))
}

/// Number of distinct types appearing in any split of a dataset.
pub fn distinct_type_count(dataset: &Dataset) -> usize {
    let mut seen = HashSet::new();
    for tuples in [
        &dataset.train_tuples,
        &dataset.valid_tuples,
        &dataset.test_tuples,
    ] {
        for &(_, t) in tuples.iter() {
            seen.insert(t);
        }
    }
    seen.len()
}

/// Removes `⌈rate · out_degree⌉` uniformly chosen outgoing edges of every
/// entity. Out-degree is counted over the stored (head-owned) triples;
/// inverse edges are regenerated downstream from the survivors. The type
/// graph is untouched.
pub fn drop_relational_neighbors(dataset: &Dataset, rate: f64, seed: u64) -> Dataset {
    assert!(rate > 0.0 && rate < 1.0);
    let mut by_head: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_entities()];
    for (i, &(h, _, _)) in dataset.relational_edges.iter().enumerate() {
        by_head[h].push(i);
    }

    let mut removed = vec![false; dataset.relational_edges.len()];
    for (e, edge_ids) in by_head.iter().enumerate() {
        if edge_ids.is_empty() {
            continue;
        }
        let remove = ceil_count(rate, edge_ids.len());
        let mut rng = sub_rng(seed, &format!("drop-neighbors/{e}"));
        let mut ids = edge_ids.clone();
        ids.shuffle(&mut rng);
        for &id in ids.iter().take(remove) {
            removed[id] = true;
        }
    }

    with_edges(
        dataset,
        dataset
            .relational_edges
            .iter()
            .enumerate()
            .filter(|&(i, _)| !removed[i])
            .map(|(_, &e)| e)
            .collect(),
    )
}

/// Removes all edges of `⌈rate · #distinct relation types⌉` uniformly chosen
/// relation types per entity (over its outgoing triples). The type graph is
/// untouched.
pub fn drop_relation_types(dataset: &Dataset, rate: f64, seed: u64) -> Dataset {
    assert!(rate > 0.0 && rate < 1.0);
    let ne = dataset.num_entities();
    let mut rels_of: Vec<Vec<usize>> = vec![Vec::new(); ne];
    for &(h, r, _) in &dataset.relational_edges {
        if !rels_of[h].contains(&r) {
            rels_of[h].push(r);
        }
    }

    let mut dropped: Vec<HashSet<usize>> = vec![HashSet::new(); ne];
    for (e, rels) in rels_of.iter().enumerate() {
        if rels.is_empty() {
            continue;
        }
        let remove = ceil_count(rate, rels.len());
        let mut rng = sub_rng(seed, &format!("drop-relation-types/{e}"));
        let mut ids = rels.clone();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        dropped[e] = ids.into_iter().take(remove).collect();
    }

    with_edges(
        dataset,
        dataset
            .relational_edges
            .iter()
            .copied()
            .filter(|&(h, r, _)| !dropped[h].contains(&r))
            .collect(),
    )
}

fn with_edges(dataset: &Dataset, edges: Vec<(usize, usize, usize)>) -> Dataset {
    Dataset {
        vocabs: dataset.vocabs.clone(),
        relational_edges: edges,
        train_tuples: dataset.train_tuples.clone(),
        valid_tuples: dataset.valid_tuples.clone(),
        test_tuples: dataset.test_tuples.clone(),
    }
}

/// `⌈rate·n⌉`, so any positive rate removes at least one item from a
/// nonempty set.
pub fn ceil_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64).ceil() as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::load_from_strs;

    fn toy() -> Dataset {
        // type A ×3, type B ×10 over train tuples
        let mut train = String::new();
        for i in 0..3 {
            train.push_str(&format!("ea{i}\tA\n"));
        }
        for i in 0..10 {
            train.push_str(&format!("eb{i}\tB\n"));
        }
        load_from_strs("ea0\tr\teb0\n", &train, "ea1\tB\n", "eb1\tA\n").unwrap()
    }

    #[test]
    fn frequency_threshold_partitions_types() {
        let ds = toy();
        let (easy, hard) = split_easy_hard(&ds, 5);
        // A (3 ≤ 5) is hard, B (10 > 5) easy
        let a = ds.vocabs.types.get("A").unwrap();
        let b = ds.vocabs.types.get("B").unwrap();
        assert!(easy.train_tuples.iter().all(|&(_, t)| t == b));
        assert!(hard.train_tuples.iter().all(|&(_, t)| t == a));
        assert_eq!(distinct_type_count(&easy), 1);
        assert_eq!(distinct_type_count(&hard), 1);
        // relational graph unchanged on both sides
        assert_eq!(easy.relational_edges, ds.relational_edges);
        assert_eq!(hard.relational_edges, ds.relational_edges);
    }

    #[test]
    fn split_is_a_partition_of_every_split() {
        let ds = toy();
        let (easy, hard) = split_easy_hard(&ds, 5);
        for (all, e, h) in [
            (&ds.train_tuples, &easy.train_tuples, &hard.train_tuples),
            (&ds.valid_tuples, &easy.valid_tuples, &hard.valid_tuples),
            (&ds.test_tuples, &easy.test_tuples, &hard.test_tuples),
        ] {
            let mut union: Vec<_> = e.iter().chain(h.iter()).copied().collect();
            union.sort_unstable();
            let mut orig = all.clone();
            orig.sort_unstable();
            assert_eq!(union, orig);
            let set_e: HashSet<_> = e.iter().collect();
            assert!(h.iter().all(|t| !set_e.contains(t)));
        }
    }

    fn star_dataset(edges_per_entity: usize, entities: usize) -> Dataset {
        let mut triples = String::new();
        for e in 0..entities {
            for j in 0..edges_per_entity {
                triples.push_str(&format!("hub{e}\tr{j}\tspoke{e}_{j}\n"));
            }
        }
        load_from_strs(&triples, "hub0\tT\n", "", "").unwrap()
    }

    #[test]
    fn neighbor_dropping_removes_exact_ceiling_counts() {
        let ds = star_dataset(4, 6);
        for rate in [0.25, 0.5, 0.75, 0.9] {
            let out = drop_relational_neighbors(&ds, rate, 7);
            out.validate().unwrap();
            let expect_removed = ceil_count(rate, 4);
            for e in 0..6 {
                let hub = ds.vocabs.entities.get(&format!("hub{e}")).unwrap();
                let remaining = out
                    .relational_edges
                    .iter()
                    .filter(|&&(h, _, _)| h == hub)
                    .count();
                assert_eq!(remaining, 4 - expect_removed, "rate {rate} entity {e}");
            }
            // type graph untouched
            assert_eq!(out.train_tuples, ds.train_tuples);
            assert_eq!(out.valid_tuples, ds.valid_tuples);
            assert_eq!(out.test_tuples, ds.test_tuples);
        }
    }

    #[test]
    fn degree_one_entity_loses_its_edge() {
        let ds = load_from_strs("solo\tr\tother\n", "", "", "").unwrap();
        let out = drop_relational_neighbors(&ds, 0.1, 3);
        assert!(out.relational_edges.is_empty());
    }

    #[test]
    fn dropping_is_seed_deterministic() {
        let ds = star_dataset(5, 8);
        let a = drop_relational_neighbors(&ds, 0.5, 11);
        let b = drop_relational_neighbors(&ds, 0.5, 11);
        let c = drop_relational_neighbors(&ds, 0.5, 12);
        assert_eq!(a.relational_edges, b.relational_edges);
        assert_ne!(a.relational_edges, c.relational_edges);
    }

    #[test]
    fn relation_type_dropping_removes_whole_relations() {
        // one entity with two relation types of two edges each
        let ds = load_from_strs(
            "m\tteam\tbarca\nm\tteam\tpsg\nm\tmate\tney\nm\tmate\tkyl\n",
            "",
            "",
            "",
        )
        .unwrap();
        let out = drop_relation_types(&ds, 0.5, 5);
        out.validate().unwrap();
        // exactly one relation type survives, with both of its edges
        assert_eq!(out.relational_edges.len(), 2);
        let rels: HashSet<usize> = out.relational_edges.iter().map(|&(_, r, _)| r).collect();
        assert_eq!(rels.len(), 1);
    }

    #[test]
    fn single_relation_type_entity_becomes_isolated() {
        let ds = load_from_strs("a\tonly\tb\na\tonly\tc\n", "", "", "").unwrap();
        let out = drop_relation_types(&ds, 0.01, 9);
        let a = ds.vocabs.entities.get("a").unwrap();
        assert!(out.relational_edges.iter().all(|&(h, _, _)| h != a));
    }

    #[test]
    fn expected_removed_fraction_tracks_the_rate() {
        // per entity: 4 relation types with 1/2/3/6 edges (12 total);
        // rate 0.25 removes 1 type, expected removed edges = 3 → fraction 0.25
        let mut triples = String::new();
        for e in 0..20 {
            let mut spoke = 0;
            for (r, count) in [(0, 1), (1, 2), (2, 3), (3, 6)] {
                for _ in 0..count {
                    triples.push_str(&format!("e{e}\trel{r}\ts{e}_{spoke}\n"));
                    spoke += 1;
                }
            }
        }
        let ds = load_from_strs(&triples, "", "", "").unwrap();
        let total = ds.relational_edges.len() as f64;
        let mut fractions = Vec::new();
        for seed in 0..200u64 {
            let out = drop_relation_types(&ds, 0.25, seed);
            fractions.push((total - out.relational_edges.len() as f64) / total);
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        assert!(
            (mean - 0.25).abs() < 0.05,
            "mean removed fraction {mean} should approximate the rate"
        );
    }

    #[test]
    fn dropping_never_adds_edges() {
        let ds = star_dataset(3, 4);
        let before: HashSet<_> = ds.relational_edges.iter().copied().collect();
        for seed in 0..5 {
            let out = drop_relational_neighbors(&ds, 0.5, seed);
            assert!(out.relational_edges.iter().all(|e| before.contains(e)));
            let out2 = drop_relation_types(&ds, 0.5, seed);
            assert!(out2.relational_edges.iter().all(|e| before.contains(e)));
        }
    }

    #[test]
    fn spec_validation_bounds() {
        let bad_rate = VariantSpec {
            kind: VariantKind::DropNeighbors,
            threshold: None,
            rate: Some(1.0),
            seed: 0,
        };
        assert!(bad_rate.validate().is_err());
        let bad_k = VariantSpec {
            kind: VariantKind::Easy,
            threshold: Some(0),
            rate: None,
            seed: 0,
        };
        assert!(bad_k.validate().is_err());
    }
}
