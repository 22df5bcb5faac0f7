//! Cluster derivation and the three derived graph views.
//!
//! Types carry coarse category tokens in their names ("Argentinian_footballers"
//! names both a nationality and a profession). Tokenizing type names yields a
//! cluster vocabulary, from which three views are built over the train split:
//!
//! - `e2t`: the train (entity, type) tuples themselves,
//! - `e2c`: entity → cluster edges expanded through each type's clusters,
//! - `tct`: type → type edges labelled by the shared cluster, symmetric.

use std::collections::{HashMap, HashSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::seeds::sub_rng;

/// Cap on cluster size for complete pairing; larger clusters are sampled.
pub const TCT_COMPLETE_PAIR_CAP: usize = 50;

/// Configurable type-name tokenizer producing cluster names.
///
/// Names are split on `/`, `_`, `.` and lower-to-upper camel-case boundaries;
/// tokens are lowercased, purely numeric tokens and stoplisted tokens are
/// dropped, and duplicates are removed preserving first-appearance order.
#[derive(Clone, Debug)]
pub struct ClusterTokenizer {
    stoplist: HashSet<String>,
}

impl Default for ClusterTokenizer {
    fn default() -> Self {
        ClusterTokenizer {
            stoplist: ["wordnet", "wikicat", "base", "freebase"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl ClusterTokenizer {
    pub fn with_stoplist(words: impl IntoIterator<Item = String>) -> Self {
        ClusterTokenizer {
            stoplist: words.into_iter().map(|w| w.to_lowercase()).collect(),
        }
    }

    /// Ordered set of cluster names for one type name. May be empty when the
    /// name reduces to nothing (all tokens numeric or stoplisted).
    pub fn extract_clusters(&self, type_name: &str) -> Vec<String> {
        let mut tokens: Vec<String> = Vec::new();
        let mut current = String::new();
        let mut prev_lower = false;
        for ch in type_name.chars() {
            if ch == '/' || ch == '_' || ch == '.' {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                prev_lower = false;
                continue;
            }
            if ch.is_uppercase() && prev_lower && !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            prev_lower = ch.is_lowercase();
            current.push(ch);
        }
        if !current.is_empty() {
            tokens.push(current);
        }

        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for tok in tokens {
            let lower = tok.to_lowercase();
            if lower.chars().all(|c| c.is_ascii_digit()) {
                continue;
            }
            if self.stoplist.contains(&lower) {
                continue;
            }
            if seen.insert(lower.clone()) {
                out.push(lower);
            }
        }
        out
    }
}

/// The three derived views plus cluster membership, built from train tuples.
#[derive(Clone, Debug)]
pub struct ViewSet {
    /// Train (entity, type) tuples, verbatim.
    pub e2t: Vec<(usize, usize)>,
    /// (entity, cluster) edges from cluster expansion.
    pub e2c: Vec<(usize, usize)>,
    /// (type, cluster-as-relation, type) edges; symmetric.
    pub tct: Vec<(usize, usize, usize)>,
    /// cluster id → sorted member type ids.
    pub cluster_members: Vec<Vec<usize>>,
    num_entities: usize,
    num_types: usize,
}

impl ViewSet {
    pub fn num_clusters(&self) -> usize {
        self.cluster_members.len()
    }

    /// Guards against indexes built from a different dataset.
    pub fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        if self.num_entities != dataset.num_entities()
            || self.num_types != dataset.num_types()
            || self.cluster_members.len() != dataset.vocabs.clusters.len()
        {
            return Err(Error::Consistency(
                "viewset was built from a different dataset".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the three views from the train split, interning cluster names into
/// the dataset's cluster vocabulary. `tct_seed` fixes the pair sampling for
/// oversized clusters.
pub fn build_views(
    dataset: &mut Dataset,
    tokenizer: &ClusterTokenizer,
    tct_seed: u64,
) -> Result<ViewSet> {
    // clusters per type, interned in type-id order for reproducibility
    let num_types = dataset.num_types();
    let mut clusters_of_type: Vec<Vec<usize>> = Vec::with_capacity(num_types);
    for tid in 0..num_types {
        let name = dataset.vocabs.types.name(tid).to_string();
        let mut ids = Vec::new();
        for cname in tokenizer.extract_clusters(&name) {
            ids.push(dataset.vocabs.clusters.intern(&cname));
        }
        clusters_of_type.push(ids);
    }

    let e2t: Vec<(usize, usize)> = dataset.train_tuples.clone();

    let mut e2c = Vec::new();
    let mut seen_e2c = HashSet::new();
    for &(e, t) in &e2t {
        for &c in &clusters_of_type[t] {
            if seen_e2c.insert((e, c)) {
                e2c.push((e, c));
            }
        }
    }

    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for (t, cs) in clusters_of_type.iter().enumerate() {
        for &c in cs {
            members.entry(c).or_default().push(t);
        }
    }
    let num_clusters = dataset.vocabs.clusters.len();
    let mut cluster_members: Vec<Vec<usize>> = vec![Vec::new(); num_clusters];
    for (c, mut ts) in members {
        ts.sort_unstable();
        ts.dedup();
        cluster_members[c] = ts;
    }

    let mut tct = Vec::new();
    for (c, ts) in cluster_members.iter().enumerate() {
        let k = ts.len();
        if k < 2 {
            continue;
        }
        if k <= TCT_COMPLETE_PAIR_CAP {
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        tct.push((ts[i], c, ts[j]));
                    }
                }
            }
        } else {
            // sample 25k unordered pairs (50k ordered once mirrored)
            let target = (25 * k).min(k * (k - 1) / 2);
            let mut rng = sub_rng(tct_seed, &format!("tct-pairs/{c}"));
            for (i, j) in sample_unordered_pairs(&mut rng, k, target) {
                tct.push((ts[i], c, ts[j]));
                tct.push((ts[j], c, ts[i]));
            }
        }
    }

    Ok(ViewSet {
        e2t,
        e2c,
        tct,
        cluster_members,
        num_entities: dataset.num_entities(),
        num_types: dataset.num_types(),
    })
}

/// `count` distinct unordered index pairs from `0..k`, deterministic in `rng`.
fn sample_unordered_pairs(rng: &mut ChaCha8Rng, k: usize, count: usize) -> Vec<(usize, usize)> {
    let total = k * (k - 1) / 2;
    if count * 2 >= total {
        // dense request: enumerate and partially shuffle
        let mut all: Vec<(usize, usize)> = Vec::with_capacity(total);
        for i in 0..k {
            for j in (i + 1)..k {
                all.push((i, j));
            }
        }
        for idx in 0..count.min(total) {
            let swap = rng.gen_range(idx..total);
            all.swap(idx, swap);
        }
        all.truncate(count.min(total));
        all
    } else {
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let mut i = rng.gen_range(0..k);
            let mut j = rng.gen_range(0..k);
            if i == j {
                continue;
            }
            if i > j {
                std::mem::swap(&mut i, &mut j);
            }
            if seen.insert((i, j)) {
                out.push((i, j));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::load_from_strs;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_splits_compound_type_names() {
        let tok = ClusterTokenizer::default();
        assert_eq!(
            tok.extract_clusters("Argentinian_footballers"),
            vec!["argentinian", "footballers"]
        );
        assert_eq!(tok.extract_clusters("/music/artist"), vec!["music", "artist"]);
        assert_eq!(
            tok.extract_clusters("wordnet_footballer_110043643"),
            vec!["footballer"]
        );
    }

    #[test]
    fn tokenizer_handles_camel_case_and_empty_results() {
        let tok = ClusterTokenizer::default();
        assert_eq!(
            tok.extract_clusters("BasketballPlayer"),
            vec!["basketball", "player"]
        );
        assert_eq!(tok.extract_clusters("wordnet_123"), Vec::<String>::new());
        assert_eq!(
            tok.extract_clusters("player_player"),
            vec!["player"]
        );
    }

    #[test]
    fn messi_types_expand_to_cluster_edges() {
        let mut ds = load_from_strs(
            "Lionel_Messi\tplays_for\tFC_Barcelona\n",
            "Lionel_Messi\tArgentinian_footballers\n",
            "",
            "",
        )
        .unwrap();
        let views = build_views(&mut ds, &ClusterTokenizer::default(), 0).unwrap();
        let messi = ds.vocabs.entities.get("Lionel_Messi").unwrap();
        let c_arg = ds.vocabs.clusters.get("argentinian").unwrap();
        let c_foot = ds.vocabs.clusters.get("footballers").unwrap();
        assert!(views.e2c.contains(&(messi, c_arg)));
        assert!(views.e2c.contains(&(messi, c_foot)));
    }

    #[test]
    fn shared_cluster_connects_types_in_tct() {
        let mut ds = load_from_strs(
            "",
            "e1\tfootball_player\ne2\tbasketball_player\ne3\tAmerican_player\ne4\tArgentinian_player\n",
            "",
            "",
        )
        .unwrap();
        let views = build_views(&mut ds, &ClusterTokenizer::default(), 0).unwrap();
        let t_f = ds.vocabs.types.get("football_player").unwrap();
        let t_b = ds.vocabs.types.get("basketball_player").unwrap();
        let c_p = ds.vocabs.clusters.get("player").unwrap();
        assert!(views.tct.contains(&(t_f, c_p, t_b)));
        // symmetric
        for &(t1, c, t2) in &views.tct {
            assert!(views.tct.contains(&(t2, c, t1)));
            assert_ne!(t1, t2);
            assert!(views.cluster_members[c].contains(&t1));
            assert!(views.cluster_members[c].contains(&t2));
        }
    }

    #[test]
    fn entity_without_train_types_gets_no_view_edges() {
        let mut ds = load_from_strs("x\tr\ty\n", "x\tT_a\n", "y\tT_b\n", "").unwrap();
        let views = build_views(&mut ds, &ClusterTokenizer::default(), 0).unwrap();
        let y = ds.vocabs.entities.get("y").unwrap();
        assert!(!views.e2t.iter().any(|&(e, _)| e == y));
        assert!(!views.e2c.iter().any(|&(e, _)| e == y));
    }

    #[test]
    fn e2t_equals_train_tuples_exactly() {
        let mut ds = load_from_strs("", "a\tT_x\nb\tT_y\na\tT_y\n", "", "").unwrap();
        let views = build_views(&mut ds, &ClusterTokenizer::default(), 0).unwrap();
        assert_eq!(views.e2t, ds.train_tuples);
    }

    #[test]
    fn oversized_cluster_samples_symmetric_pairs() {
        // 60 types sharing one cluster token
        let mut train = String::new();
        for i in 0..60 {
            train.push_str(&format!("e{i}\tshared_kind{i}\n"));
        }
        let mut ds = load_from_strs("", &train, "", "").unwrap();
        let views = build_views(&mut ds, &ClusterTokenizer::default(), 42).unwrap();
        let c = ds.vocabs.clusters.get("shared").unwrap();
        let edges: Vec<_> = views.tct.iter().filter(|&&(_, cc, _)| cc == c).collect();
        assert_eq!(edges.len(), 2 * 25 * 60); // 50·k ordered pairs
        let set: HashSet<_> = edges.iter().map(|&&(a, _, b)| (a, b)).collect();
        assert_eq!(set.len(), edges.len(), "sampled pairs must be distinct");
        for &&(a, cc, b) in &edges {
            assert!(views.tct.contains(&(b, cc, a)));
        }

        // determinism
        let mut ds2 = load_from_strs("", &train, "", "").unwrap();
        let views2 = build_views(&mut ds2, &ClusterTokenizer::default(), 42).unwrap();
        assert_eq!(views.tct, views2.tct);
    }

    proptest! {
        /// |e2c| is bounded by the total cluster expansion of train tuples,
        /// and removing a tuple never adds view edges.
        #[test]
        fn e2c_bound_and_monotonicity(tuples in proptest::collection::vec((0usize..6, 0usize..5), 1..20)) {
            let type_names = ["alpha_one", "beta_one", "alpha_two", "gamma_three", "delta_four"];
            let mut train = String::new();
            for &(e, t) in &tuples {
                train.push_str(&format!("e{e}\t{}\n", type_names[t]));
            }
            let mut ds = load_from_strs("", &train, "", "").unwrap();
            let tok = ClusterTokenizer::default();
            let views = build_views(&mut ds, &tok, 0).unwrap();

            let expansion: usize = views
                .e2t
                .iter()
                .map(|&(_, t)| tok.extract_clusters(ds.vocabs.types.name(t)).len())
                .sum();
            prop_assert!(views.e2c.len() <= expansion);

            // drop the last tuple: views must not grow
            if views.e2t.len() > 1 {
                let mut shorter = String::new();
                let mut seen = HashSet::new();
                let deduped: Vec<_> = tuples
                    .iter()
                    .filter(|t| seen.insert(**t))
                    .collect();
                for &&(e, t) in deduped.iter().take(deduped.len() - 1) {
                    shorter.push_str(&format!("e{e}\t{}\n", type_names[t]));
                }
                let mut ds2 = load_from_strs("", &shorter, "", "").unwrap();
                let views2 = build_views(&mut ds2, &tok, 0).unwrap();
                prop_assert!(views2.e2t.len() <= views.e2t.len());
                prop_assert!(views2.e2c.len() <= views.e2c.len());
                prop_assert!(views2.tct.len() <= views.tct.len());
            }
        }
    }
}
