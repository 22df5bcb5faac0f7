//! Per-neighbor type scoring and mixture pooling.
//!
//! Every neighbor `(r, f)` of an entity votes over all `N` types through a
//! translation head: `𝒩 = W·relu(f − r) + b`. Votes are combined by max
//! pooling, mean pooling, and multi-head temperature-softmax pooling, summed
//! and squashed: `S_e = σ(S^w + S^m + S^a)`.
//!
//! A type neighbor's own logit is masked out so an observed type cannot
//! predict itself. Entities with no neighbors (and columns where every
//! entry is masked) are scored through a bias-only pseudo-neighbor, which
//! keeps every entity rankable.

use std::ops::Range;
use std::rc::Rc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::{NeighborIndex, NeighborKind};
use crate::tape::{pool_column, stable_sigmoid, Tape, Var};

/// Row layout of the fused embedding table: entity rows, then type rows,
/// then cluster rows.
#[derive(Clone, Copy, Debug)]
pub struct UnifiedLayout {
    pub num_entities: usize,
    pub num_types: usize,
    pub num_clusters: usize,
}

impl UnifiedLayout {
    pub fn row_of(&self, kind: NeighborKind, id: usize) -> usize {
        match kind {
            NeighborKind::Entity => id,
            NeighborKind::Type => self.num_entities + id,
            NeighborKind::Cluster => self.num_entities + self.num_types + id,
        }
    }

    pub fn total_rows(&self) -> usize {
        self.num_entities + self.num_types + self.num_clusters
    }
}

/// Fused embedding table on the tape plus its row layout.
pub struct UnifiedTable {
    pub z: Var,
    pub layout: UnifiedLayout,
}

impl UnifiedTable {
    /// Stacks the per-kind fused tables into one gatherable block.
    pub fn build(tape: &mut Tape, z_entity: Var, z_type: Var, z_cluster: Var) -> Self {
        let layout = UnifiedLayout {
            num_entities: tape.value(z_entity).nrows(),
            num_types: tape.value(z_type).nrows(),
            num_clusters: tape.value(z_cluster).nrows(),
        };
        let z = tape.concat_rows(vec![z_entity, z_type, z_cluster]);
        UnifiedTable { z, layout }
    }
}

/// Scores over all types for one entity: the per-neighbor logits, the three
/// pooled vectors, and the final probabilities.
#[derive(Clone, Debug)]
pub struct TypingScores {
    pub neighbor_logits: Vec<Array1<f64>>,
    pub s_weighted: Array1<f64>,
    pub s_max: Array1<f64>,
    pub s_avg: Array1<f64>,
    pub s_e: Array1<f64>,
}

/// Translation logits of one neighbor: `W·relu(f − r) + b`.
pub fn neighbor_logits(
    neighbor_row: &ArrayView1<f64>,
    relation_row: &ArrayView1<f64>,
    w: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
) -> Array1<f64> {
    assert_eq!(neighbor_row.len(), relation_row.len());
    assert_eq!(w.ncols(), neighbor_row.len());
    assert_eq!(w.nrows(), b.len());
    let hidden = (neighbor_row - relation_row).mapv(|x| x.max(0.0));
    w.dot(&hidden) + b
}

/// Pools a list of per-neighbor logit vectors (masked entries are `-inf`).
///
/// `fallback` supplies the pseudo-neighbor value for columns where every
/// entry is masked; passing `None` uses zero. An empty list is a contract
/// violation: neighborless entities are scored upstream through the
/// bias-only pseudo-neighbor.
pub fn mixture_pool(
    logits: &[Array1<f64>],
    temps: &[f64],
    fallback: Option<&ArrayView1<f64>>,
) -> Result<TypingScores> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument(
            "mixture_pool needs at least one neighbor".into(),
        ));
    }
    if temps.is_empty() {
        return Err(Error::InvalidArgument("at least one head required".into()));
    }
    let n = logits[0].len();
    if logits.iter().any(|l| l.len() != n) {
        return Err(Error::InvalidArgument("ragged logit vectors".into()));
    }

    let mut stacked = Array2::<f64>::zeros((logits.len(), n));
    for (i, l) in logits.iter().enumerate() {
        stacked.row_mut(i).assign(l);
    }

    let mut s_weighted = Array1::<f64>::zeros(n);
    let mut s_max = Array1::<f64>::zeros(n);
    let mut s_avg = Array1::<f64>::zeros(n);
    let mut s_e = Array1::<f64>::zeros(n);
    for p in 0..n {
        let fb = fallback.map(|f| f[p]).unwrap_or(0.0);
        let pooled = pool_column(&stacked.view(), 0..logits.len(), p, temps, fb);
        s_weighted[p] = pooled.s_weighted;
        s_max[p] = pooled.s_max;
        s_avg[p] = pooled.s_avg;
        s_e[p] = stable_sigmoid(pooled.pre_sigmoid);
    }

    Ok(TypingScores {
        neighbor_logits: logits.to_vec(),
        s_weighted,
        s_max,
        s_avg,
        s_e,
    })
}

/// Value-level prediction for one entity from fused tables.
///
/// Gathers each neighbor's fused row, computes its translation logits with
/// the self-type mask, and pools. Neighborless entities score as
/// `σ((H + 2)·b)`.
pub fn predict_entity(
    entity: usize,
    index: &NeighborIndex,
    unified: &ArrayView2<f64>,
    layout: &UnifiedLayout,
    relations: &ArrayView2<f64>,
    w: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
    temps: &[f64],
) -> Result<TypingScores> {
    if entity >= index.num_entities() {
        return Err(Error::Lookup(format!("unknown entity id {entity}")));
    }
    let neighbors = index.neighbors(entity);
    if neighbors.is_empty() {
        let heads = temps.len() as f64;
        let pre = b.mapv(|v| (heads + 2.0) * v);
        let s_e = pre.mapv(stable_sigmoid);
        return Ok(TypingScores {
            neighbor_logits: vec![b.to_owned()],
            s_weighted: b.mapv(|v| heads * v),
            s_max: b.to_owned(),
            s_avg: b.to_owned(),
            s_e,
        });
    }

    let mut logits = Vec::with_capacity(neighbors.len());
    for nb in neighbors {
        let row = unified.row(layout.row_of(nb.kind, nb.neighbor));
        let rel = relations.row(nb.relation);
        let mut l = neighbor_logits(&row, &rel, w, b);
        if nb.kind == NeighborKind::Type {
            l[nb.neighbor] = f64::NEG_INFINITY;
        }
        logits.push(l);
    }
    mixture_pool(&logits, temps, Some(b))
}

/// Batch scorer on the tape: probabilities for a list of entities, one row
/// per entity. Shares the pooling kernel with the value-level path.
pub fn score_entities(
    tape: &mut Tape,
    entities: &[usize],
    index: &NeighborIndex,
    unified: &UnifiedTable,
    relation_table: Var,
    w: Var,
    b: Var,
    temps: &Rc<Vec<f64>>,
) -> Var {
    let mut unified_rows = Vec::new();
    let mut relation_rows = Vec::new();
    let mut groups: Vec<Range<usize>> = Vec::with_capacity(entities.len());
    let mut mask_positions: Vec<(usize, usize)> = Vec::new();

    for &e in entities {
        let start = unified_rows.len();
        for nb in index.neighbors(e) {
            if nb.kind == NeighborKind::Type {
                mask_positions.push((unified_rows.len(), nb.neighbor));
            }
            unified_rows.push(unified.layout.row_of(nb.kind, nb.neighbor));
            relation_rows.push(nb.relation);
        }
        groups.push(start..unified_rows.len());
    }

    let f_rows = tape.gather(unified.z, Rc::new(unified_rows));
    let r_rows = tape.gather(relation_table, Rc::new(relation_rows));
    let diff = tape.sub(f_rows, r_rows);
    let hidden = tape.relu(diff);
    let raw = tape.matmul_t(hidden, w);
    let logits = tape.add_row(raw, b);
    let masked = if mask_positions.is_empty() {
        logits
    } else {
        tape.mask_neg_inf(logits, Rc::new(mask_positions))
    };
    let pooled = tape.mixture_pool(masked, Rc::new(groups), b, Rc::clone(temps));
    tape.sigmoid(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn zero_head_gives_zero_logits_and_translation_identity() {
        let f = array![1.0, 2.0];
        let r = array![0.5, 0.5];
        let w0 = Array2::<f64>::zeros((3, 2));
        let b0 = Array1::<f64>::zeros(3);
        let l = neighbor_logits(&f.view(), &r.view(), &w0.view(), &b0.view());
        assert!(l.iter().all(|&x| x == 0.0));

        // f = r collapses to the bias
        let b = array![0.4, -0.2, 1.0];
        let w = array![[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]];
        let l2 = neighbor_logits(&f.view(), &f.view(), &w.view(), &b.view());
        for (a, e) in l2.iter().zip(b.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_relu_translation() {
        // D = 2, N = 2, f − r = (1, −1), W = I, b = 0 → relu (1, 0) → (1, 0)
        let f = array![2.0, 0.0];
        let r = array![1.0, 1.0];
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![0.0, 0.0];
        let l = neighbor_logits(&f.view(), &r.view(), &w.view(), &b.view());
        assert_eq!(l, array![1.0, 0.0]);
    }

    #[test]
    fn single_neighbor_pool_is_scaled_sigmoid() {
        let logit = array![0.3, -1.2, 2.0];
        for heads in [1usize, 3, 5] {
            let temps: Vec<f64> = (0..heads).map(|i| 0.5 + i as f64 * 0.5).collect();
            let scores = mixture_pool(&[logit.clone()], &temps, None).unwrap();
            let h = heads as f64;
            for (i, &x) in logit.iter().enumerate() {
                let expect = stable_sigmoid((h + 2.0) * x);
                assert!((scores.s_e[i] - expect).abs() < 1e-12);
                assert!((scores.s_weighted[i] - h * x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_neighbors_pool_like_one() {
        let logit = array![0.7, -0.4];
        let temps = vec![0.5, 1.0, 1.5];
        let scores =
            mixture_pool(&[logit.clone(), logit.clone(), logit.clone()], &temps, None).unwrap();
        for (i, &x) in logit.iter().enumerate() {
            assert!((scores.s_max[i] - x).abs() < 1e-12);
            assert!((scores.s_avg[i] - x).abs() < 1e-12);
            assert!((scores.s_weighted[i] - 3.0 * x).abs() < 1e-12);
            assert!((scores.s_e[i] - stable_sigmoid(5.0 * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_neighbor_softmax_hand_calculation() {
        // N = 1, L = 2, H = 1, h = 1, logits {0, ln 3}
        let l1 = array![0.0];
        let l2 = array![3.0_f64.ln()];
        let scores = mixture_pool(&[l1, l2], &[1.0], None).unwrap();
        let ln3 = 3.0_f64.ln();
        assert!((scores.s_weighted[0] - 0.75 * ln3).abs() < 1e-12);
        assert!((scores.s_max[0] - ln3).abs() < 1e-12);
        assert!((scores.s_avg[0] - 0.5 * ln3).abs() < 1e-12);
        let pre = 0.75 * ln3 + ln3 + 0.5 * ln3;
        assert!((pre - 2.4719).abs() < 1e-4);
        assert!((scores.s_e[0] - 0.9222).abs() < 1e-4);
    }

    #[test]
    fn empty_logit_list_is_rejected() {
        assert!(mixture_pool(&[], &[1.0], None).is_err());
    }

    #[test]
    fn sharp_temperatures_approach_scaled_max() {
        let logits = vec![array![0.2, 1.4], array![0.9, 0.1], array![-0.5, 0.6]];
        let temps = vec![50.0; 5];
        let scores = mixture_pool(&logits, &temps, None).unwrap();
        for p in 0..2 {
            let diff = (scores.s_weighted[p] - 5.0 * scores.s_max[p]).abs();
            assert!(diff < 1e-3, "column {p}: {diff}");
        }
    }

    fn messi_setup() -> (
        crate::graph::Dataset,
        crate::views::ViewSet,
        crate::graph::NeighborIndex,
    ) {
        let mut ds = crate::testutil::load_from_strs(
            "Lionel_Messi\tmember_of_sports_team\tFC_Barcelona\n\
             Lionel_Messi\tteammate\tNeymar\n\
             Neymar\tmember_of_sports_team\tFC_Barcelona\n",
            "Lionel_Messi\tArgentinian_footballers\nNeymar\tBrazilian_footballers\n",
            "",
            "",
        )
        .unwrap();
        let vs =
            crate::views::build_views(&mut ds, &crate::views::ClusterTokenizer::default(), 0)
                .unwrap();
        let idx = crate::graph::build_neighbor_index(&ds, &vs, true).unwrap();
        (ds, vs, idx)
    }

    #[test]
    fn masked_self_type_never_wins_the_max() {
        let (ds, vs, idx) = messi_setup();
        let layout = UnifiedLayout {
            num_entities: ds.num_entities(),
            num_types: ds.num_types(),
            num_clusters: vs.num_clusters(),
        };
        let d = 4;
        let mut rng_val = 0.13;
        let mut next = || {
            rng_val = (rng_val * 37.7 + 0.19) % 1.0;
            rng_val - 0.5
        };
        let unified = Array2::from_shape_fn((layout.total_rows(), d), |_| next());
        let relations = Array2::from_shape_fn((idx.scheme.total(), d), |_| next());
        // bias strongly favors the self type: masking must still exclude it
        let w = Array2::from_shape_fn((ds.num_types(), d), |_| next());
        let mut b = Array1::<f64>::zeros(ds.num_types());
        let messi = ds.vocabs.entities.get("Lionel_Messi").unwrap();
        let t_arg = ds.vocabs.types.get("Argentinian_footballers").unwrap();
        b[t_arg] = 100.0;

        let scores = predict_entity(
            messi,
            &idx,
            &unified.view(),
            &layout,
            &relations.view(),
            &w.view(),
            &b.view(),
            &[0.5, 1.0],
        )
        .unwrap();

        // the type-neighbor logit at its own index is -inf
        let has_masked = scores
            .neighbor_logits
            .iter()
            .any(|l| l[t_arg] == f64::NEG_INFINITY);
        assert!(has_masked);
        // other neighbors still score t_arg (through b), so s_e is finite
        assert!(scores.s_e.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn neighborless_entity_scores_by_bias_pseudo_neighbor() {
        let mut ds = crate::testutil::load_from_strs(
            "a\tr\tb\n",
            "a\tT_x\n",
            "loner\tT_y\n",
            "",
        )
        .unwrap();
        let vs =
            crate::views::build_views(&mut ds, &crate::views::ClusterTokenizer::default(), 0)
                .unwrap();
        let idx = crate::graph::build_neighbor_index(&ds, &vs, true).unwrap();
        let layout = UnifiedLayout {
            num_entities: ds.num_entities(),
            num_types: ds.num_types(),
            num_clusters: vs.num_clusters(),
        };
        let unified = Array2::<f64>::ones((layout.total_rows(), 3));
        let relations = Array2::<f64>::ones((idx.scheme.total(), 3));
        let w = Array2::<f64>::ones((2, 3));
        let b = array![0.3, -0.7];
        let loner = ds.vocabs.entities.get("loner").unwrap();
        let temps = [0.5, 1.0, 1.5, 2.0, 2.5];

        let scores = predict_entity(
            loner,
            &idx,
            &unified.view(),
            &layout,
            &relations.view(),
            &w.view(),
            &b.view(),
            &temps,
        )
        .unwrap();
        for (i, &bi) in b.iter().enumerate() {
            let expect = stable_sigmoid(7.0 * bi); // (H + 2)·b with H = 5
            assert!((scores.s_e[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_entity_is_a_lookup_error() {
        let (ds, vs, idx) = messi_setup();
        let layout = UnifiedLayout {
            num_entities: ds.num_entities(),
            num_types: ds.num_types(),
            num_clusters: vs.num_clusters(),
        };
        let unified = Array2::<f64>::zeros((layout.total_rows(), 2));
        let relations = Array2::<f64>::zeros((idx.scheme.total(), 2));
        let w = Array2::<f64>::zeros((ds.num_types(), 2));
        let b = Array1::<f64>::zeros(ds.num_types());
        let err = predict_entity(
            999,
            &idx,
            &unified.view(),
            &layout,
            &relations.view(),
            &w.view(),
            &b.view(),
            &[1.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Lookup(_)));
    }

    #[test]
    fn tape_batch_scorer_matches_value_level_prediction() {
        let (ds, vs, idx) = messi_setup();
        let layout = UnifiedLayout {
            num_entities: ds.num_entities(),
            num_types: ds.num_types(),
            num_clusters: vs.num_clusters(),
        };
        let mut seed = 0.31;
        let mut next = || {
            seed = (seed * 53.1 + 0.07) % 1.0;
            seed - 0.5
        };
        let unified = Array2::from_shape_fn((layout.total_rows(), 3), |_| next());
        let relations = Array2::from_shape_fn((idx.scheme.total(), 3), |_| next());
        let w = Array2::from_shape_fn((ds.num_types(), 3), |_| next());
        let b_arr = Array2::from_shape_fn((1, ds.num_types()), |_| next());
        let temps = Rc::new(vec![0.5, 1.0, 1.5]);

        let mut tape = Tape::new();
        let rows = layout.total_rows();
        let ze = tape.leaf(unified.slice(ndarray::s![0..layout.num_entities, ..]).to_owned());
        let zt = tape.leaf(
            unified
                .slice(ndarray::s![
                    layout.num_entities..layout.num_entities + layout.num_types,
                    ..
                ])
                .to_owned(),
        );
        let zc = tape.leaf(
            unified
                .slice(ndarray::s![layout.num_entities + layout.num_types..rows, ..])
                .to_owned(),
        );
        let table = UnifiedTable::build(&mut tape, ze, zt, zc);
        let rel_v = tape.leaf(relations.clone());
        let w_v = tape.leaf(w.clone());
        let b_v = tape.leaf(b_arr.clone());
        let entities: Vec<usize> = (0..ds.num_entities()).collect();
        let scores_var = score_entities(
            &mut tape,
            &entities,
            &idx,
            &table,
            rel_v,
            w_v,
            b_v,
            &temps,
        );
        let batch = tape.value(scores_var).clone();

        for &e in &entities {
            let single = predict_entity(
                e,
                &idx,
                &unified.view(),
                &layout,
                &relations.view(),
                &w.view(),
                &b_arr.row(0),
                &temps,
            )
            .unwrap();
            for p in 0..ds.num_types() {
                assert!(
                    (batch[[e, p]] - single.s_e[p]).abs() < 1e-12,
                    "entity {e} type {p}"
                );
            }
        }
    }

    proptest! {
        /// Pooling ignores the order of the neighbor list.
        #[test]
        fn pooling_is_permutation_invariant(
            raw in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 4), 1..6),
            swap_a in 0usize..6,
            swap_b in 0usize..6,
        ) {
            let logits: Vec<Array1<f64>> = raw.iter().map(|v| Array1::from_vec(v.clone())).collect();
            let temps = [0.5, 1.0, 2.0];
            let base = mixture_pool(&logits, &temps, None).unwrap();
            let mut shuffled = logits.clone();
            let (a, b) = (swap_a % raw.len(), swap_b % raw.len());
            shuffled.swap(a, b);
            let perm = mixture_pool(&shuffled, &temps, None).unwrap();
            for p in 0..4 {
                prop_assert!((base.s_e[p] - perm.s_e[p]).abs() < 1e-12);
            }
        }

        /// max ≥ mean everywhere; weighted pooling stays within H·[min, max].
        #[test]
        fn pooling_bounds_hold(
            raw in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..6),
        ) {
            let logits: Vec<Array1<f64>> = raw.iter().map(|v| Array1::from_vec(v.clone())).collect();
            let temps = [0.5, 1.0, 1.5, 2.0];
            let h = temps.len() as f64;
            let scores = mixture_pool(&logits, &temps, None).unwrap();
            for p in 0..3 {
                prop_assert!(scores.s_max[p] >= scores.s_avg[p] - 1e-12);
                let lo = raw.iter().map(|v| v[p]).fold(f64::INFINITY, f64::min);
                let hi = raw.iter().map(|v| v[p]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(scores.s_weighted[p] >= h * lo - 1e-9);
                prop_assert!(scores.s_weighted[p] <= h * hi + 1e-9);
                prop_assert!(scores.s_e[p] > 0.0 && scores.s_e[p] < 1.0);
            }
        }
    }
}
