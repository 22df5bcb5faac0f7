//! End-to-end model assembly: views → encoders → alignment → fused tables
//! → batch scoring.
//!
//! Transport plans are solved from current parameter values and then held
//! constant while gradients flow, so one epoch is: solve alignments, run the
//! differentiable forward with those alignments frozen, backpropagate.

use std::rc::Rc;

use ndarray::Array2;

use crate::config::TrainConfig;
use crate::encoder::{encode_all, EmbeddingSpace, SpaceDims, ViewGraphs};
use crate::error::Result;
use crate::graph::{build_neighbor_index, Dataset, NeighborIndex};
use crate::ot::{ota_apply, ota_plan, Alignment};
use crate::tape::{Tape, Var};
use crate::typing::{UnifiedLayout, UnifiedTable};
use crate::views::{build_views, ViewSet};

/// Graph-side artifacts of a run, built once per dataset + config.
pub struct Prepared {
    pub viewset: ViewSet,
    pub index: NeighborIndex,
    pub graphs: ViewGraphs,
    pub dims: SpaceDims,
}

/// Builds views, the neighbor index, and propagation structures. Interns the
/// cluster vocabulary into `dataset`.
pub fn prepare(dataset: &mut Dataset, cfg: &TrainConfig) -> Result<Prepared> {
    let flags = cfg.view_flags()?;
    let mut viewset = build_views(dataset, &cfg.tokenizer(), cfg.seed)?;
    if !flags.e2c {
        // removing the entity-cluster view removes cluster neighbors too
        viewset.e2c.clear();
    }
    let index = build_neighbor_index(dataset, &viewset, cfg.include_inverse_edges)?;
    let dims = SpaceDims::of(dataset, &viewset);
    let graphs = ViewGraphs::build(&viewset, &dims, flags);
    Ok(Prepared {
        viewset,
        index,
        graphs,
        dims,
    })
}

/// Solved alignments per object kind; `None` where only one view feeds the
/// kind (nothing to align).
pub struct KindAlignments {
    pub entities: Option<Alignment>,
    pub types: Option<Alignment>,
    pub clusters: Option<Alignment>,
}

/// Solves the transport alignments from the current parameter values.
pub fn compute_alignments(
    space: &EmbeddingSpace,
    prepared: &Prepared,
    cfg: &TrainConfig,
) -> Result<KindAlignments> {
    let mut tape = Tape::new();
    let params = space.register(&mut tape);
    let enc = encode_all(&mut tape, &params, &prepared.graphs, &space_encoder(space, cfg)?);
    let ota = cfg.ota_config();

    let solve = |pair: (Option<Var>, Option<Var>)| -> Result<Option<Alignment>> {
        let (src, dst) = oriented(pair, cfg.swap_roles);
        match (src, dst) {
            (Some(s), Some(d)) => Ok(Some(ota_plan(
                &tape.value(s).view(),
                &tape.value(d).view(),
                &ota,
            )?)),
            _ => Ok(None),
        }
    };

    Ok(KindAlignments {
        entities: solve(enc.entity_pair())?,
        types: solve(enc.type_pair())?,
        clusters: solve(enc.cluster_pair())?,
    })
}

fn space_encoder(space: &EmbeddingSpace, cfg: &TrainConfig) -> Result<crate::encoder::EncoderConfig> {
    let mut enc = cfg.encoder_config()?;
    // a checkpoint may carry different layer counts than the live defaults
    enc.dim = space.dim;
    enc.compgcn_layers = space.compgcn_layers.max(1);
    enc.views = space.views;
    Ok(enc)
}

fn oriented(pair: (Option<Var>, Option<Var>), swap: bool) -> (Option<Var>, Option<Var>) {
    if swap {
        (pair.1, pair.0)
    } else {
        pair
    }
}

/// One differentiable forward pass up to the fused tables.
pub struct UnifiedForward {
    pub tape: Tape,
    pub params: crate::encoder::ParamVars,
    pub z_entity: Var,
    pub z_type: Var,
    pub z_cluster: Var,
    pub layout: UnifiedLayout,
}

impl UnifiedForward {
    pub fn z_values(&self) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        (
            self.tape.value(self.z_entity).clone(),
            self.tape.value(self.z_type).clone(),
            self.tape.value(self.z_cluster).clone(),
        )
    }
}

/// Runs the encoders and applies the given frozen alignments, producing the
/// fused per-kind tables on one tape.
pub fn forward_unified(
    space: &EmbeddingSpace,
    prepared: &Prepared,
    cfg: &TrainConfig,
    alignments: &KindAlignments,
) -> Result<UnifiedForward> {
    let mut tape = Tape::new();
    let params = space.register(&mut tape);
    let enc = encode_all(&mut tape, &params, &prepared.graphs, &space_encoder(space, cfg)?);

    let fuse = |tape: &mut Tape,
                    pair: (Option<Var>, Option<Var>),
                    alignment: &Option<Alignment>|
     -> Var {
        let (src, dst) = oriented(pair, cfg.swap_roles);
        match (src, dst, alignment) {
            (Some(s), Some(d), Some(a)) => ota_apply(tape, a, s, d),
            (Some(s), Some(d), None) => tape.add(s, d),
            (Some(s), None, _) => s,
            (None, Some(d), _) => d,
            (None, None, _) => unreachable!("view flags guarantee one table per kind"),
        }
    };

    let z_entity = fuse(&mut tape, enc.entity_pair(), &alignments.entities);
    let z_type = fuse(&mut tape, enc.type_pair(), &alignments.types);
    let z_cluster = fuse(&mut tape, enc.cluster_pair(), &alignments.clusters);

    let layout = UnifiedLayout {
        num_entities: tape.value(z_entity).nrows(),
        num_types: tape.value(z_type).nrows(),
        num_clusters: tape.value(z_cluster).nrows(),
    };

    Ok(UnifiedForward {
        tape,
        params,
        z_entity,
        z_type,
        z_cluster,
        layout,
    })
}

/// Scores one batch of entities from fixed fused-table values (no gradient):
/// builds a throwaway tape over leaves and returns the probability rows.
#[allow(clippy::too_many_arguments)]
pub fn score_batch_values(
    z_entity: &Array2<f64>,
    z_type: &Array2<f64>,
    z_cluster: &Array2<f64>,
    relations: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array2<f64>,
    temps: &[f64],
    index: &NeighborIndex,
    batch: &[usize],
) -> Array2<f64> {
    let mut tape = Tape::new();
    let ze = tape.leaf(z_entity.clone());
    let zt = tape.leaf(z_type.clone());
    let zc = tape.leaf(z_cluster.clone());
    let unified = UnifiedTable::build(&mut tape, ze, zt, zc);
    let rel = tape.leaf(relations.clone());
    let w = tape.leaf(w.clone());
    let b = tape.leaf(b.clone());
    let probs = crate::typing::score_entities(
        &mut tape,
        batch,
        index,
        &unified,
        rel,
        w,
        b,
        &Rc::new(temps.to_vec()),
    );
    tape.value(probs).clone()
}
