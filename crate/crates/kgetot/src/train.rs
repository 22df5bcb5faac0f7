//! Training loop with per-epoch plan refresh and two-phase backpropagation.
//!
//! Each epoch: solve the transport alignments from current parameters, run
//! the encoder forward once, score every training entity in batches against
//! the full type vocabulary (no negative sampling), accumulate the weighted
//! cross-entropy and its gradients, and take one optimizer step. Batch
//! gradients are reduced in batch order, so results are identical whether
//! batches run sequentially or in parallel.
//!
//! The best parameters by validation MRR are kept; an epoch count of zero
//! returns the initialization untouched.

use ndarray::{array, Array2};
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::encoder::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::eval::evaluate_space;
use crate::graph::{Dataset, NeighborIndex, Split};
use crate::loss::{negative_weights, LossConfig};
use crate::model::{compute_alignments, forward_unified, KindAlignments, Prepared};
use crate::optim::{adam_step, AdamState};
use crate::tape::Tape;
use crate::typing::{score_entities, UnifiedTable};

/// Runtime knobs that do not affect the learned model.
#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    /// Worker parallelism bound; `1` forces fully sequential execution.
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { threads: 1 }
    }
}

/// One epoch's summary.
#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

/// Final state of a training run.
pub struct TrainOutcome {
    /// Best parameters by validation MRR (final parameters if the valid
    /// split is empty or never evaluated).
    pub space: EmbeddingSpace,
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Distinct entities carrying at least one train tuple, with their positive
/// type sets.
pub fn training_entities(dataset: &Dataset) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut positives: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_entities()];
    for &(e, t) in &dataset.train_tuples {
        positives[e].push(t);
    }
    let mut entities: Vec<usize> = (0..dataset.num_entities())
        .filter(|&e| !positives[e].is_empty())
        .collect();
    entities.sort_unstable();
    for p in positives.iter_mut() {
        p.sort_unstable();
    }
    (entities, positives)
}

/// Loss (and optionally gradients) of one full pass over the batches under
/// fixed alignments.
pub struct EpochOutput {
    pub loss: f64,
    /// Aligned with `space.tables()`.
    pub grads: Option<Vec<Array2<f64>>>,
    /// Negative weights actually used, one matrix per batch.
    pub neg_weights: Vec<Array2<f64>>,
}

struct BatchGrads {
    ze: Array2<f64>,
    zt: Array2<f64>,
    zc: Array2<f64>,
    rel: Array2<f64>,
    w: Array2<f64>,
    b: Array2<f64>,
}

struct BatchOut {
    loss: f64,
    weights: Array2<f64>,
    grads: Option<BatchGrads>,
}

/// Runs the scoring/loss pass for every batch and, when requested, the full
/// two-phase backward: batch tapes produce gradients with respect to the
/// fused tables and the head parameters; the encoder tape is then replayed
/// once, seeded with the accumulated fused-table gradients.
///
/// `frozen_weights` replays previously captured negative weights instead of
/// evaluating the density at the current scores; the finite-difference
/// harness uses this to probe the same surrogate objective the analytic
/// gradient differentiates.
#[allow(clippy::too_many_arguments)]
pub fn epoch_forward_backward(
    space: &EmbeddingSpace,
    prepared: &Prepared,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    alignments: &KindAlignments,
    batches: &[&[usize]],
    positives_of: &[Vec<usize>],
    frozen_weights: Option<&[Array2<f64>]>,
    want_grads: bool,
    opts: &TrainOptions,
) -> Result<EpochOutput> {
    let fwd = forward_unified(space, prepared, cfg, alignments)?;
    let (ze, zt, zc) = fwd.z_values();
    let rel = space.get("relation");
    let w = space.get("pred_w");
    let b = space.get("pred_b");
    let n_types = space.num_types;
    let index: &NeighborIndex = &prepared.index;
    let temps = &cfg.temperatures;
    let theta = loss_cfg.theta;
    let weight_fn = loss_cfg.weight_fn;

    let run_batch = |(bi, batch): (usize, &&[usize])| -> Result<BatchOut> {
        let mut tape = Tape::new();
        let ze_v = tape.leaf(ze.clone());
        let zt_v = tape.leaf(zt.clone());
        let zc_v = tape.leaf(zc.clone());
        let unified = UnifiedTable::build(&mut tape, ze_v, zt_v, zc_v);
        let rel_v = tape.leaf(rel.clone());
        let w_v = tape.leaf(w.clone());
        let b_v = tape.leaf(b.clone());
        let probs = score_entities(
            &mut tape,
            batch,
            index,
            &unified,
            rel_v,
            w_v,
            b_v,
            &std::rc::Rc::new(temps.clone()),
        );
        let positives: Vec<Vec<bool>> = batch
            .iter()
            .map(|&e| {
                let mut row = vec![false; n_types];
                for &t in &positives_of[e] {
                    row[t] = true;
                }
                row
            })
            .collect();
        let weights = match frozen_weights {
            Some(fw) => fw[bi].clone(),
            None => negative_weights(&tape.value(probs).view(), &positives, &weight_fn)?,
        };
        let loss_var = tape.bdce_loss(
            probs,
            std::rc::Rc::new(positives),
            std::rc::Rc::new(weights.clone()),
            theta,
        );
        let loss = tape.value(loss_var)[[0, 0]];
        let grads = if want_grads {
            let mut g = tape.backward(vec![(loss_var, array![[1.0]])]);
            let take = |g: &mut crate::tape::Gradients, v, shape: (usize, usize)| {
                g.take(v).unwrap_or_else(|| Array2::zeros(shape))
            };
            Some(BatchGrads {
                ze: take(&mut g, ze_v, ze.dim()),
                zt: take(&mut g, zt_v, zt.dim()),
                zc: take(&mut g, zc_v, zc.dim()),
                rel: take(&mut g, rel_v, rel.dim()),
                w: take(&mut g, w_v, w.dim()),
                b: take(&mut g, b_v, b.dim()),
            })
        } else {
            None
        };
        Ok(BatchOut {
            loss,
            weights,
            grads,
        })
    };

    let outs: Vec<Result<BatchOut>> = if opts.threads > 1 {
        batches.par_iter().enumerate().map(run_batch).collect()
    } else {
        batches.iter().enumerate().map(run_batch).collect()
    };

    // reduce in batch order
    let mut total_loss = 0.0;
    let mut neg_weights = Vec::with_capacity(outs.len());
    let mut seed_ze = Array2::<f64>::zeros(ze.dim());
    let mut seed_zt = Array2::<f64>::zeros(zt.dim());
    let mut seed_zc = Array2::<f64>::zeros(zc.dim());
    let mut d_rel = Array2::<f64>::zeros(rel.dim());
    let mut d_w = Array2::<f64>::zeros(w.dim());
    let mut d_b = Array2::<f64>::zeros(b.dim());
    for out in outs {
        let out = out?;
        total_loss += out.loss;
        neg_weights.push(out.weights);
        if let Some(g) = out.grads {
            seed_ze += &g.ze;
            seed_zt += &g.zt;
            seed_zc += &g.zc;
            d_rel += &g.rel;
            d_w += &g.w;
            d_b += &g.b;
        }
    }

    let grads = if want_grads {
        let enc_grads = fwd.tape.backward(vec![
            (fwd.z_entity, seed_ze),
            (fwd.z_type, seed_zt),
            (fwd.z_cluster, seed_zc),
        ]);
        let mut all: Vec<Array2<f64>> = space
            .names()
            .iter()
            .enumerate()
            .map(|(i, name)| {
                enc_grads
                    .get(fwd.params.var(name))
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(space.tables()[i].dim()))
            })
            .collect();
        let add_to = |all: &mut Vec<Array2<f64>>, name: &str, delta: &Array2<f64>| {
            let pos = space.position(name).expect("head table exists");
            all[pos] += delta;
        };
        add_to(&mut all, "relation", &d_rel);
        add_to(&mut all, "pred_w", &d_w);
        add_to(&mut all, "pred_b", &d_b);
        Some(all)
    } else {
        None
    };

    Ok(EpochOutput {
        loss: total_loss,
        grads,
        neg_weights,
    })
}

/// Trains on the given dataset and returns the best checkpointable state.
pub fn train(
    dataset: &Dataset,
    prepared: &Prepared,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let enc_cfg = cfg.encoder_config()?;
    let loss_cfg = cfg.loss_config()?;
    let mut space = EmbeddingSpace::init(&prepared.dims, &enc_cfg, cfg.seed)?;
    let shapes: Vec<(usize, usize)> = space.tables().iter().map(|t| t.dim()).collect();
    let mut adam = AdamState::new(&shapes);
    let adam_cfg = cfg.adam_config();

    let (train_entities, positives_of) = training_entities(dataset);
    let batches: Vec<&[usize]> = train_entities.chunks(cfg.batch_size).collect();
    log::info!(
        "training on {} entities in {} batches ({} parameters)",
        train_entities.len(),
        batches.len(),
        space.num_parameters()
    );

    let mut best: Option<(usize, f64, EmbeddingSpace)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let alignments = compute_alignments(&space, prepared, cfg)?;
        let out = epoch_forward_backward(
            &space,
            prepared,
            cfg,
            &loss_cfg,
            &alignments,
            &batches,
            &positives_of,
            None,
            true,
            opts,
        )?;
        if !out.loss.is_finite() {
            return Err(non_finite_diagnostics(epoch, &space, &out));
        }
        let grads = out.grads.expect("gradients requested");
        adam_step(space.tables_mut(), &grads, &mut adam, &adam_cfg);

        let mut valid_mrr = None;
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let metrics = evaluate_space(&space, dataset, prepared, cfg, Split::Valid)?;
            if metrics.tuple_count > 0 {
                valid_mrr = Some(metrics.mrr);
                let improved = best.as_ref().map(|b| metrics.mrr > b.1).unwrap_or(true);
                if improved {
                    best = Some((epoch, metrics.mrr, space.clone()));
                }
            }
        }
        if let Some(mrr) = valid_mrr {
            log::info!("epoch {epoch}: loss {:.4}, valid mrr {:.4}", out.loss, mrr);
        } else {
            log::debug!("epoch {epoch}: loss {:.4}", out.loss);
        }
        history.push(EpochRecord {
            epoch,
            loss: out.loss,
            valid_mrr,
        });
    }

    let (best_epoch, best_valid_mrr, space) = match best {
        Some((e, m, s)) => (e, Some(m), s),
        None => (cfg.epochs, None, space),
    };
    Ok(TrainOutcome {
        space,
        best_epoch,
        best_valid_mrr,
        history,
    })
}

fn non_finite_diagnostics(epoch: usize, space: &EmbeddingSpace, out: &EpochOutput) -> Error {
    let norms: Vec<String> = space
        .names()
        .iter()
        .zip(space.tables())
        .map(|(n, t)| {
            let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            format!("{n}={norm:.3e}")
        })
        .collect();
    Error::Numerical(format!(
        "non-finite loss {} at epoch {epoch}; parameter norms: {}",
        out.loss,
        norms.join(", ")
    ))
}
