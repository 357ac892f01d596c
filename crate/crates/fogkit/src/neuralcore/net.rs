//! Forward and backward passes over the encoder + heads.
//!
//! Batches are `B x T' x C` arrays; internally each sample is transposed to
//! a channel-major `[C][T']` buffer. Batch work is data-parallel over fixed
//! 8-sample chunks with an ordered reduction, so results do not depend on
//! the thread schedule.

use ndarray::{Array2, ArrayView2, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FogError, Result};
use crate::ingest::Label;
use crate::seeds;

use super::arch::{ArchSpec, LayerDims};
use super::kernels::{
    conv_backward, conv_forward, dense_backward, dense_forward, gap_backward, gap_forward,
    maxpool_backward, maxpool_forward, relu_backward_inplace, relu_inplace,
};
use super::params::{ParamArrays, ParamSet, TrainScope};

/// Chunk size for deterministic batch parallelism.
const CHUNK: usize = 8;

/// Transpose a `[T'][C]` frame view into a channel-major flat buffer.
pub fn frame_to_ct(frame: ArrayView2<f64>) -> Vec<f64> {
    let (t_len, ch) = (frame.nrows(), frame.ncols());
    let mut out = vec![0.0; ch * t_len];
    for t in 0..t_len {
        for c in 0..ch {
            out[c * t_len + t] = frame[[t, c]];
        }
    }
    out
}

/// Flatten a `[T'][C]` frame in time-major order (the pretext target
/// layout: index `t * C + c`).
pub fn frame_to_flat(frame: ArrayView2<f64>) -> Vec<f64> {
    frame.iter().copied().collect()
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    cols: Vec<Vec<f64>>,
    /// Post-ReLU, pre-pool activation per conv layer.
    acts: Vec<Vec<f64>>,
    pool_arg: Option<Vec<u8>>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    /// Input actually fed to each dense layer; `fed[0]` is the embedding,
    /// the final entry feeds the output unit.
    fed: Vec<Vec<f64>>,
    /// Post-ReLU (pre-dropout) activation per dense layer.
    acts: Vec<Vec<f64>>,
    /// Per-unit multiplier applied after the first dense layer (0 or
    /// 1/keep); `None` outside train mode.
    dropout_scale: Option<Vec<f64>>,
    pub logit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classify,
    Pretext,
}

#[derive(Debug, Clone)]
pub struct SampleCache {
    pub enc: EncoderCache,
    head: Option<HeadCache>,
    recon: Option<Vec<f64>>,
}

/// Activation cache for a whole batch, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub samples: Vec<SampleCache>,
    pub kind: HeadKind,
    pub train_mode: bool,
}

/// Upstream loss gradients for [`backward`].
pub enum LossGrad {
    /// dL/d logit per sample.
    Logits(Vec<f64>),
    /// dL/d reconstruction, `B x (T'*C)`.
    Recon(Array2<f64>),
}

pub fn encoder_forward(
    arrays: &ParamArrays,
    arch: &ArchSpec,
    dims: &LayerDims,
    input_ct: &[f64],
) -> EncoderCache {
    let n_conv = dims.conv.len();
    let mut cache = EncoderCache {
        cols: Vec::with_capacity(n_conv),
        acts: Vec::with_capacity(n_conv),
        pool_arg: None,
        embedding: Vec::new(),
    };
    let mut pooled_act: Option<Vec<f64>> = None;

    for (l, cd) in dims.conv.iter().enumerate() {
        let (cols, mut z) = {
            let feed: &[f64] = if l == 0 {
                input_ct
            } else if dims.conv[l - 1].pooled_len.is_some() {
                pooled_act.as_ref().expect("pooled activation cached")
            } else {
                &cache.acts[l - 1]
            };
            let mut cols = Vec::new();
            let mut z = Vec::new();
            conv_forward(
                &arrays.conv[l].w,
                &arrays.conv[l].b,
                cd.out_ch,
                cd.in_ch,
                arch.kernel,
                feed,
                cd.in_len,
                &mut cols,
                &mut z,
            );
            (cols, z)
        };
        relu_inplace(&mut z);
        if cd.pooled_len.is_some() {
            let mut pout = Vec::new();
            let mut arg = Vec::new();
            maxpool_forward(&z, cd.out_ch, cd.out_len, arch.pool, &mut pout, &mut arg);
            cache.pool_arg = Some(arg);
            pooled_act = Some(pout);
        }
        cache.cols.push(cols);
        cache.acts.push(z);
    }

    let last = &dims.conv[n_conv - 1];
    let gap_src: &[f64] = if last.pooled_len.is_some() {
        pooled_act.as_ref().expect("pooled activation cached")
    } else {
        &cache.acts[n_conv - 1]
    };
    gap_forward(gap_src, last.out_ch, last.final_len(), &mut cache.embedding);
    cache
}

/// Backward through GAP and the conv stack, accumulating into `grads`.
pub fn encoder_backward(
    arrays: &ParamArrays,
    arch: &ArchSpec,
    dims: &LayerDims,
    cache: &EncoderCache,
    demb: &[f64],
    grads: &mut ParamArrays,
) {
    let n_conv = dims.conv.len();
    let last = &dims.conv[n_conv - 1];

    let mut dsrc = vec![0.0; last.out_ch * last.final_len()];
    gap_backward(demb, last.out_ch, last.final_len(), &mut dsrc);

    // Gradient w.r.t. the last layer's post-ReLU activation.
    let mut dact = if last.pooled_len.is_some() {
        let mut d = vec![0.0; last.out_ch * last.out_len];
        maxpool_backward(
            &dsrc,
            cache.pool_arg.as_ref().expect("pool arg cached"),
            last.out_ch,
            last.out_len,
            arch.pool,
            &mut d,
        );
        d
    } else {
        dsrc
    };

    let mut dcols_buf = Vec::new();
    for l in (0..n_conv).rev() {
        let cd = &dims.conv[l];
        relu_backward_inplace(&mut dact, &cache.acts[l]);
        let mut dx = if l > 0 { vec![0.0; cd.in_ch * cd.in_len] } else { Vec::new() };
        let layer_grads = &mut grads.conv[l];
        conv_backward(
            &arrays.conv[l].w,
            cd.out_ch,
            cd.in_ch,
            arch.kernel,
            cd.in_len,
            &cache.cols[l],
            &dact,
            &mut layer_grads.w,
            &mut layer_grads.b,
            (l > 0).then_some(&mut dx[..]),
            &mut dcols_buf,
        );
        if l > 0 {
            let prev = &dims.conv[l - 1];
            dact = if prev.pooled_len.is_some() {
                let mut d = vec![0.0; prev.out_ch * prev.out_len];
                maxpool_backward(
                    &dx,
                    cache.pool_arg.as_ref().expect("pool arg cached"),
                    prev.out_ch,
                    prev.out_len,
                    arch.pool,
                    &mut d,
                );
                d
            } else {
                dx
            };
        }
    }
}

/// Dense head forward from an embedding. In train mode `dropout_seed`
/// drives the (inverted-scaling) dropout mask after the first dense layer.
pub fn head_forward(
    arrays: &ParamArrays,
    arch: &ArchSpec,
    embedding: &[f64],
    train_mode: bool,
    dropout_seed: u64,
) -> HeadCache {
    let n_dense = arrays.dense.len();
    let mut fed: Vec<Vec<f64>> = Vec::with_capacity(n_dense + 1);
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_dense);
    let mut dropout_scale = None;
    fed.push(embedding.to_vec());

    for (i, layer) in arrays.dense.iter().enumerate() {
        let in_dim = fed[i].len();
        let out_dim = layer.b.len();
        let mut act = Vec::new();
        dense_forward(&layer.w, &layer.b, out_dim, in_dim, &fed[i], &mut act);
        relu_inplace(&mut act);
        let mut next = act.clone();
        if i == 0 && train_mode && arch.dropout > 0.0 {
            let keep = 1.0 - arch.dropout;
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let scale: Vec<f64> = (0..out_dim)
                .map(|_| if rng.gen_bool(arch.dropout) { 0.0 } else { 1.0 / keep })
                .collect();
            for (n, s) in next.iter_mut().zip(&scale) {
                *n *= s;
            }
            dropout_scale = Some(scale);
        }
        acts.push(act);
        fed.push(next);
    }

    let out_in = fed.last().expect("fed has the embedding at least");
    let logit = arrays.out.b[0]
        + arrays
            .out
            .w
            .iter()
            .zip(out_in)
            .map(|(w, x)| w * x)
            .sum::<f64>();
    HeadCache {
        fed,
        acts,
        dropout_scale,
        logit,
    }
}

/// Backward through the classifier head; returns dL/d embedding.
pub fn head_backward(
    arrays: &ParamArrays,
    cache: &HeadCache,
    dlogit: f64,
    grads: &mut ParamArrays,
) -> Vec<f64> {
    let n_dense = arrays.dense.len();
    let out_in = cache.fed.last().expect("cached");
    let mut dfed = vec![0.0; out_in.len()];
    dense_backward(
        &arrays.out.w,
        1,
        out_in.len(),
        out_in,
        &[dlogit],
        &mut grads.out.w,
        &mut grads.out.b,
        Some(&mut dfed),
    );

    for i in (0..n_dense).rev() {
        let layer = &arrays.dense[i];
        let out_dim = layer.b.len();
        let in_dim = cache.fed[i].len();
        let mut dact = dfed;
        if i == 0 {
            if let Some(scale) = &cache.dropout_scale {
                for (d, s) in dact.iter_mut().zip(scale) {
                    *d *= s;
                }
            }
        }
        relu_backward_inplace(&mut dact, &cache.acts[i]);
        let mut dprev = vec![0.0; in_dim];
        let layer_grads = &mut grads.dense[i];
        dense_backward(
            &layer.w,
            out_dim,
            in_dim,
            &cache.fed[i],
            &dact,
            &mut layer_grads.w,
            &mut layer_grads.b,
            Some(&mut dprev),
        );
        dfed = dprev;
    }
    dfed
}

/// Pretext head: one linear layer from the embedding back to the flattened
/// window.
pub fn pretext_forward(arrays: &ParamArrays, dims: &LayerDims, embedding: &[f64]) -> Vec<f64> {
    let mut recon = Vec::new();
    dense_forward(
        &arrays.pretext.w,
        &arrays.pretext.b,
        dims.flat_len,
        dims.embed_dim,
        embedding,
        &mut recon,
    );
    recon
}

fn pretext_backward(
    arrays: &ParamArrays,
    dims: &LayerDims,
    embedding: &[f64],
    drecon: &[f64],
    grads: &mut ParamArrays,
) -> Vec<f64> {
    let mut demb = vec![0.0; dims.embed_dim];
    dense_backward(
        &arrays.pretext.w,
        dims.flat_len,
        dims.embed_dim,
        embedding,
        drecon,
        &mut grads.pretext.w,
        &mut grads.pretext.b,
        Some(&mut demb),
    );
    demb
}

fn check_batch_shape(arch: &ArchSpec, batch: &ArrayView3<f64>) -> Result<()> {
    let shape = batch.shape();
    if shape[1] != arch.input_len || shape[2] != arch.channels {
        return Err(FogError::Structural(format!(
            "batch of {}x{} windows does not match architecture input {}x{}",
            shape[1], shape[2], arch.input_len, arch.channels
        )));
    }
    Ok(())
}

/// Classifier forward over a batch: returns `B x 1` logits and the
/// activation cache. In train mode, dropout masks derive from one draw of
/// `rng`, independently per sample.
pub fn forward<R: Rng>(
    params: &ParamSet,
    arch: &ArchSpec,
    batch: ArrayView3<f64>,
    train_mode: bool,
    rng: &mut R,
) -> Result<(Array2<f64>, ForwardCache)> {
    let dims = arch.dims()?;
    check_batch_shape(arch, &batch)?;
    let b = batch.shape()[0];
    let dropout_base: u64 = rng.gen();

    let samples: Vec<SampleCache> = (0..b)
        .into_par_iter()
        .map(|i| {
            let ct = frame_to_ct(batch.index_axis(ndarray::Axis(0), i));
            let enc = encoder_forward(&params.arrays, arch, &dims, &ct);
            let head = head_forward(
                &params.arrays,
                arch,
                &enc.embedding,
                train_mode,
                seeds::mix(dropout_base, i as u64),
            );
            SampleCache {
                enc,
                head: Some(head),
                recon: None,
            }
        })
        .collect();

    let logits = Array2::from_shape_fn((b, 1), |(i, _)| {
        samples[i].head.as_ref().expect("classify head").logit
    });
    for v in logits.iter() {
        if !v.is_finite() {
            return Err(FogError::Numeric("non-finite logit in forward pass".into()));
        }
    }
    Ok((
        logits,
        ForwardCache {
            samples,
            kind: HeadKind::Classify,
            train_mode,
        },
    ))
}

/// Embeddings only (`B x D`), evaluation mode.
pub fn encode(params: &ParamSet, arch: &ArchSpec, batch: ArrayView3<f64>) -> Result<Array2<f64>> {
    let dims = arch.dims()?;
    check_batch_shape(arch, &batch)?;
    let b = batch.shape()[0];
    let embs: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let ct = frame_to_ct(batch.index_axis(ndarray::Axis(0), i));
            encoder_forward(&params.arrays, arch, &dims, &ct).embedding
        })
        .collect();
    let mut out = Array2::zeros((b, dims.embed_dim));
    for (i, e) in embs.iter().enumerate() {
        for (d, &v) in e.iter().enumerate() {
            out[[i, d]] = v;
        }
    }
    Ok(out)
}

/// Pretext forward over a (masked) batch: `B x (T'*C)` reconstructions.
pub fn forward_pretext(
    params: &ParamSet,
    arch: &ArchSpec,
    masked: ArrayView3<f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    let dims = arch.dims()?;
    check_batch_shape(arch, &masked)?;
    let b = masked.shape()[0];
    let samples: Vec<SampleCache> = (0..b)
        .into_par_iter()
        .map(|i| {
            let ct = frame_to_ct(masked.index_axis(ndarray::Axis(0), i));
            let enc = encoder_forward(&params.arrays, arch, &dims, &ct);
            let recon = pretext_forward(&params.arrays, &dims, &enc.embedding);
            SampleCache {
                enc,
                head: None,
                recon: Some(recon),
            }
        })
        .collect();
    let mut out = Array2::zeros((b, dims.flat_len));
    for (i, s) in samples.iter().enumerate() {
        for (j, &v) in s.recon.as_ref().expect("pretext recon").iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok((
        out,
        ForwardCache {
            samples,
            kind: HeadKind::Pretext,
            train_mode: true,
        },
    ))
}

/// Reverse-mode pass over a cached batch. Arrays outside `scope` keep zero
/// gradients (frozen). Chunked parallel with an ordered reduction.
pub fn backward(
    params: &ParamSet,
    arch: &ArchSpec,
    cache: &ForwardCache,
    loss_grad: &LossGrad,
    scope: TrainScope,
) -> Result<ParamArrays> {
    let dims = arch.dims()?;
    let b = cache.samples.len();
    match (cache.kind, loss_grad) {
        (HeadKind::Classify, LossGrad::Logits(g)) if g.len() == b => {}
        (HeadKind::Pretext, LossGrad::Recon(g)) if g.shape() == [b, dims.flat_len] => {}
        _ => {
            return Err(FogError::Structural(
                "loss gradient does not match the forward cache (stale cache?)".into(),
            ))
        }
    }

    let chunks: Vec<(usize, usize)> = chunk_ranges(b);
    let partials: Vec<ParamArrays> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut grads = ParamArrays::zeros_from_dims(arch, &dims);
            for i in lo..hi {
                let sample = &cache.samples[i];
                match loss_grad {
                    LossGrad::Logits(g) => {
                        let head = sample.head.as_ref().expect("classify cache");
                        let demb = head_backward(&params.arrays, head, g[i], &mut grads);
                        if scope != TrainScope::Head {
                            encoder_backward(&params.arrays, arch, &dims, &sample.enc, &demb, &mut grads);
                        }
                    }
                    LossGrad::Recon(g) => {
                        let drecon: Vec<f64> = g.row(i).to_vec();
                        let demb = pretext_backward(
                            &params.arrays,
                            &dims,
                            &sample.enc.embedding,
                            &drecon,
                            &mut grads,
                        );
                        encoder_backward(&params.arrays, arch, &dims, &sample.enc, &demb, &mut grads);
                    }
                }
            }
            grads
        })
        .collect();

    let mut total = ParamArrays::zeros_from_dims(arch, &dims);
    for p in &partials {
        total.add_assign(p);
    }
    // Zero anything outside the training scope so frozen arrays cannot
    // receive updates even if a caller feeds these grads straight to Adam.
    for id in total.ids() {
        if !scope.trains(id) {
            total.get_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(total)
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n)))
        .collect()
}

/// One sample of a pretext batch, prepared by the caller.
pub struct PretextSample {
    /// Channel-major masked input.
    pub ct_masked: Vec<f64>,
    /// Time-major flattened original window.
    pub target_flat: Vec<f64>,
    /// Masked scalar positions into `target_flat`.
    pub positions: Vec<usize>,
}

/// Fused forward + backward + loss for one pretext batch.
/// Loss is mean squared error over all masked scalars in the batch.
pub fn train_batch_pretext(
    params: &ParamSet,
    arch: &ArchSpec,
    dims: &LayerDims,
    samples: &[PretextSample],
) -> Result<(f64, ParamArrays)> {
    let n_m: usize = samples.iter().map(|s| s.positions.len()).sum();
    if n_m == 0 {
        return Err(FogError::EmptyInput("pretext batch has no masked positions".into()));
    }
    let inv = 1.0 / n_m as f64;

    let chunks = chunk_ranges(samples.len());
    let partials: Vec<(f64, ParamArrays)> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut grads = ParamArrays::zeros_from_dims(arch, &dims.clone());
            let mut loss = 0.0;
            for sample in &samples[lo..hi] {
                let enc = encoder_forward(&params.arrays, arch, dims, &sample.ct_masked);
                let recon = pretext_forward(&params.arrays, dims, &enc.embedding);
                let mut drecon = vec![0.0; dims.flat_len];
                for &j in &sample.positions {
                    let err = recon[j] - sample.target_flat[j];
                    loss += err * err;
                    drecon[j] = 2.0 * err * inv;
                }
                let demb = pretext_backward(&params.arrays, dims, &enc.embedding, &drecon, &mut grads);
                encoder_backward(&params.arrays, arch, dims, &enc, &demb, &mut grads);
            }
            (loss, grads)
        })
        .collect();

    let mut total = ParamArrays::zeros_from_dims(arch, dims);
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add_assign(g);
    }
    if !loss.is_finite() {
        return Err(FogError::Numeric("non-finite pretext loss".into()));
    }
    Ok((loss * inv, total))
}

/// Fused forward + backward + loss for one supervised batch (binary
/// cross-entropy from logits). Set `scope = Head` for frozen-encoder work
/// (encoder backward is skipped entirely).
pub fn train_batch_classify(
    params: &ParamSet,
    arch: &ArchSpec,
    dims: &LayerDims,
    frames: &ndarray::Array3<f64>,
    indices: &[usize],
    labels: &[Label],
    dropout_base: u64,
    scope: TrainScope,
) -> Result<(f64, ParamArrays)> {
    let b = indices.len();
    if b == 0 {
        return Err(FogError::EmptyInput("empty classification batch".into()));
    }
    let inv = 1.0 / b as f64;

    let chunks = chunk_ranges(b);
    let partials: Vec<(f64, ParamArrays)> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut grads = ParamArrays::zeros_from_dims(arch, &dims.clone());
            let mut loss = 0.0;
            for &idx in &indices[lo..hi] {
                let ct = frame_to_ct(frames.index_axis(ndarray::Axis(0), idx));
                let enc = encoder_forward(&params.arrays, arch, dims, &ct);
                let head = head_forward(
                    &params.arrays,
                    arch,
                    &enc.embedding,
                    true,
                    seeds::mix(dropout_base, idx as u64),
                );
                let y = labels[idx].as_bit() as f64;
                loss += super::loss::bce_single(head.logit, y);
                let dlogit = (super::loss::sigmoid(head.logit) - y) * inv;
                let demb = head_backward(&params.arrays, &head, dlogit, &mut grads);
                if scope != TrainScope::Head {
                    encoder_backward(&params.arrays, arch, dims, &enc, &demb, &mut grads);
                }
            }
            (loss, grads)
        })
        .collect();

    let mut total = ParamArrays::zeros_from_dims(arch, dims);
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add_assign(g);
    }
    if !loss.is_finite() {
        return Err(FogError::Numeric("non-finite classification loss".into()));
    }
    Ok((loss * inv, total))
}

/// Head-only training batch over precomputed embeddings (the frozen-encoder
/// fast path: the encoder never runs).
pub fn train_batch_head(
    params: &ParamSet,
    arch: &ArchSpec,
    embeddings: &Array2<f64>,
    indices: &[usize],
    labels: &[Label],
    dropout_base: u64,
) -> Result<(f64, ParamArrays)> {
    let b = indices.len();
    if b == 0 {
        return Err(FogError::EmptyInput("empty head batch".into()));
    }
    let dims = arch.dims()?;
    let inv = 1.0 / b as f64;
    let mut grads = ParamArrays::zeros_from_dims(arch, &dims);
    let mut loss = 0.0;
    for &idx in indices {
        let emb = embeddings.row(idx).to_vec();
        let head = head_forward(&params.arrays, arch, &emb, true, seeds::mix(dropout_base, idx as u64));
        let y = labels[idx].as_bit() as f64;
        loss += super::loss::bce_single(head.logit, y);
        let dlogit = (super::loss::sigmoid(head.logit) - y) * inv;
        head_backward(&params.arrays, &head, dlogit, &mut grads);
    }
    if !loss.is_finite() {
        return Err(FogError::Numeric("non-finite head loss".into()));
    }
    Ok((loss * inv, grads))
}

/// Evaluation-mode logits for a window set (dropout disabled).
pub fn logits_eval(params: &ParamSet, arch: &ArchSpec, frames: &ndarray::Array3<f64>) -> Result<Vec<f64>> {
    let dims = arch.dims()?;
    check_batch_shape(arch, &frames.view())?;
    Ok((0..frames.shape()[0])
        .into_par_iter()
        .map(|i| {
            let ct = frame_to_ct(frames.index_axis(ndarray::Axis(0), i));
            let enc = encoder_forward(&params.arrays, arch, &dims, &ct);
            head_forward(&params.arrays, arch, &enc.embedding, false, 0).logit
        })
        .collect())
}

/// Evaluation-mode logit for a single embedding.
pub fn logit_from_embedding(params: &ParamSet, arch: &ArchSpec, embedding: &[f64]) -> f64 {
    head_forward(&params.arrays, arch, embedding, false, 0).logit
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;

    fn random_batch(arch: &ArchSpec, b: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((b, arch.input_len, arch.channels), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_params_give_logit_zero() {
        let arch = ArchSpec::tiny();
        let params = ParamSet {
            arrays: ParamArrays::zeros(&arch).unwrap(),
            adam: ParamSet::init(&arch, 0).unwrap().adam,
        };
        let batch = random_batch(&arch, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (logits, _) = forward(&params, &arch, batch.view(), false, &mut rng).unwrap();
        for &l in logits.iter() {
            assert_eq!(l, 0.0); // sigmoid(0) = 0.5
        }
    }

    #[test]
    fn embedding_dimension_is_last_filter_count() {
        let arch = ArchSpec::tiny();
        let params = ParamSet::init(&arch, 7).unwrap();
        let batch = random_batch(&arch, 2, 2);
        let emb = encode(&params, &arch, batch.view()).unwrap();
        assert_eq!(emb.shape(), &[2, 8]);
    }

    #[test]
    fn constant_input_zero_convs_final_bias_replicates() {
        // Zero conv weights with bias b on the final conv layer: every GAP
        // input is ReLU(b), so the embedding is ReLU(b) replicated.
        let arch = ArchSpec::tiny();
        let mut arrays = ParamArrays::zeros(&arch).unwrap();
        let bias = 0.37;
        for v in arrays.conv.last_mut().unwrap().b.iter_mut() {
            *v = bias;
        }
        let params = ParamSet {
            arrays,
            adam: ParamSet::init(&arch, 0).unwrap().adam,
        };
        let batch = Array3::from_elem((1, arch.input_len, arch.channels), 0.25);
        let emb = encode(&params, &arch, batch.view()).unwrap();
        for &v in emb.iter() {
            assert!((v - bias).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_forward_is_deterministic_and_dropout_free() {
        let arch = ArchSpec::tiny();
        let params = ParamSet::init(&arch, 3).unwrap();
        let batch = random_batch(&arch, 4, 9);
        let mut rng1 = ChaCha8Rng::seed_from_u64(1);
        let mut rng2 = ChaCha8Rng::seed_from_u64(999);
        let (a, _) = forward(&params, &arch, batch.view(), false, &mut rng1).unwrap();
        let (b, _) = forward(&params, &arch, batch.view(), false, &mut rng2).unwrap();
        assert_eq!(a, b); // rng must not matter outside train mode
    }

    #[test]
    fn train_dropout_zeroes_about_the_configured_fraction() {
        let arch = ArchSpec {
            dense_units: vec![512],
            ..ArchSpec::tiny()
        };
        let params = ParamSet::init(&arch, 5).unwrap();
        let emb = vec![1.0; 8];
        let head = head_forward(&params.arrays, &arch, &emb, true, 1234);
        let scale = head.dropout_scale.as_ref().unwrap();
        let zeros = scale.iter().filter(|&&s| s == 0.0).count();
        let frac = zeros as f64 / scale.len() as f64;
        assert!((frac - arch.dropout).abs() < 0.08, "dropout fraction {frac}");
        for &s in scale {
            assert!(s == 0.0 || (s - 1.0 / 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_shape_mismatch_is_structural() {
        let arch = ArchSpec::tiny();
        let params = ParamSet::init(&arch, 3).unwrap();
        let batch = Array3::zeros((2, arch.input_len + 1, arch.channels));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            forward(&params, &arch, batch.view(), false, &mut rng),
            Err(FogError::Structural(_))
        ));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let arch = ArchSpec::tiny();
        let params = ParamSet::init(&arch, 3).unwrap();
        let batch = random_batch(&arch, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = forward(&params, &arch, batch.view(), true, &mut rng).unwrap();
        let bad = LossGrad::Logits(vec![0.0; 3]); // wrong batch size
        assert!(matches!(
            backward(&params, &arch, &cache, &bad, TrainScope::Full),
            Err(FogError::Structural(_))
        ));
    }
}

#[cfg(test)]
mod gradcheck {
    use super::*;
    use crate::neuralcore::loss;
    use ndarray::Array3;
    use rand::SeedableRng;

    /// Central finite difference d(loss)/d(param) for one array element.
    fn fd_grad(
        params: &ParamSet,
        id: crate::neuralcore::params::ArrayId,
        elem: usize,
        h: f64,
        loss_fn: &dyn Fn(&ParamSet) -> f64,
    ) -> f64 {
        let mut p = params.clone();
        p.arrays.get_mut(id)[elem] += h;
        let up = loss_fn(&p);
        p.arrays.get_mut(id)[elem] -= 2.0 * h;
        let down = loss_fn(&p);
        (up - down) / (2.0 * h)
    }

    fn assert_close(analytic: f64, fd: f64, what: &str) {
        let abs = (analytic - fd).abs();
        let rel = abs / analytic.abs().max(fd.abs()).max(1e-12);
        assert!(
            abs < 1e-8 || rel < 1e-4,
            "{what}: analytic {analytic} vs fd {fd} (rel {rel})"
        );
    }

    #[test]
    fn bce_gradients_match_finite_differences() {
        let arch = ArchSpec::tiny();
        let params = ParamSet::init(&arch, 17).unwrap();
        let b = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = Array3::from_shape_fn((b, arch.input_len, arch.channels), |_| {
            rng.gen_range(-1.0..1.0)
        });
        let labels = [Label::Fog, Label::NonFog, Label::Fog];

        let loss_fn = |p: &ParamSet| -> f64 {
            let mut r = ChaCha8Rng::seed_from_u64(99); // fixed dropout masks
            let (logits, _) = forward(p, &arch, batch.view(), true, &mut r).unwrap();
            loss::bce(logits.as_slice().unwrap(), &labels).unwrap()
        };

        let mut r = ChaCha8Rng::seed_from_u64(99);
        let (logits, cache) = forward(&params, &arch, batch.view(), true, &mut r).unwrap();
        let dlogits: Vec<f64> = logits
            .iter()
            .zip(&labels)
            .map(|(&z, &y)| (loss::sigmoid(z) - y.as_bit() as f64) / b as f64)
            .collect();
        let grads = backward(&params, &arch, &cache, &LossGrad::Logits(dlogits), TrainScope::Full)
            .unwrap();

        for id in params.arrays.ids() {
            let n = params.arrays.get(id).len();
            // Check every element on small arrays, a stride on larger ones.
            let stride = (n / 25).max(1);
            for e in (0..n).step_by(stride) {
                let fd = fd_grad(&params, id, e, 1e-5, &loss_fn);
                let analytic = grads.get(id)[e];
                assert_close(analytic, fd, &format!("{}[{e}]", id.name()));
            }
        }
    }

    #[test]
    fn masked_mse_gradients_match_finite_differences() {
        let arch = ArchSpec::tiny();
        let params = ParamSet::init(&arch, 2654435762).unwrap();
        let b = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let orig = Array3::from_shape_fn((b, arch.input_len, arch.channels), |_| {
            rng.gen_range(-1.0..1.0)
        });
        // Loss positions on time steps 2..6 (all channels), flat t*C+c layout.
        // The network input stays fully random: zero-filled spans would make
        // conv outputs constant and tie the max-pool, which is exactly where
        // the loss stops being differentiable and FD checks break down.
        let positions: Vec<Vec<usize>> = (0..b)
            .map(|_| (2..6).flat_map(|t| (0..3).map(move |c| t * 3 + c)).collect())
            .collect();
        let mut masked = orig.clone();
        for i in 0..b {
            for t in 2..6 {
                for c in 0..3 {
                    masked[[i, t, c]] = 0.01 * rng.gen_range(-1.0..1.0);
                }
            }
        }
        let targets = Array2::from_shape_fn((b, arch.input_len * arch.channels), |(i, j)| {
            orig[[i, j / 3, j % 3]]
        });

        let loss_fn = |p: &ParamSet| -> f64 {
            let (recon, _) = forward_pretext(p, &arch, masked.view()).unwrap();
            loss::masked_mse(&recon.view(), &targets.view(), &positions).unwrap()
        };

        let (recon, cache) = forward_pretext(&params, &arch, masked.view()).unwrap();
        let n_m: usize = positions.iter().map(|p| p.len()).sum();
        let mut drecon = Array2::zeros((b, arch.input_len * arch.channels));
        for (i, pos) in positions.iter().enumerate() {
            for &j in pos {
                drecon[[i, j]] = 2.0 * (recon[[i, j]] - targets[[i, j]]) / n_m as f64;
            }
        }
        let grads = backward(&params, &arch, &cache, &LossGrad::Recon(drecon), TrainScope::Pretext)
            .unwrap();

        for id in params.arrays.ids() {
            let n = params.arrays.get(id).len();
            let stride = (n / 25).max(1);
            for e in (0..n).step_by(stride) {
                let fd = fd_grad(&params, id, e, 1e-5, &loss_fn);
                let analytic = grads.get(id)[e];
                assert_close(analytic, fd, &format!("{}[{e}]", id.name()));
            }
        }
    }

    #[test]
    fn dead_relu_units_get_zero_gradients() {
        // Force the first conv filter dead (large negative bias): its
        // incoming weights must receive exactly zero gradient.
        let arch = ArchSpec::tiny();
        let mut params = ParamSet::init(&arch, 31).unwrap();
        params.arrays.conv[0].b[0] = -100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = Array3::from_shape_fn((2, arch.input_len, arch.channels), |_| {
            rng.gen_range(-1.0..1.0)
        });
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let (_, cache) = forward(&params, &arch, batch.view(), false, &mut r).unwrap();
        let grads = backward(
            &params,
            &arch,
            &cache,
            &LossGrad::Logits(vec![1.0, -1.0]),
            TrainScope::Full,
        )
        .unwrap();
        let kernel = arch.kernel;
        let in_ch = arch.channels;
        for e in 0..in_ch * kernel {
            assert_eq!(grads.conv[0].w[e], 0.0, "dead filter weight {e}");
        }
        assert_eq!(grads.conv[0].b[0], 0.0);
    }

    #[test]
    fn perfect_pretext_fit_has_zero_gradient() {
        // If reconstruction equals the target at every masked point, the
        // loss gradient is exactly zero everywhere.
        let arch = ArchSpec::tiny();
        let params = ParamSet::init(&arch, 11).unwrap();
        let masked = Array3::zeros((2, arch.input_len, arch.channels));
        let (recon, cache) = forward_pretext(&params, &arch, masked.view()).unwrap();
        let positions: Vec<Vec<usize>> = vec![vec![0, 5, 7], vec![3, 4]];
        // Set targets equal to the reconstruction.
        let mut drecon = Array2::zeros((2, arch.input_len * arch.channels));
        for (i, pos) in positions.iter().enumerate() {
            for &j in pos {
                drecon[[i, j]] = 2.0 * (recon[[i, j]] - recon[[i, j]]);
            }
        }
        let grads = backward(&params, &arch, &cache, &LossGrad::Recon(drecon), TrainScope::Pretext)
            .unwrap();
        for id in grads.ids() {
            for &g in grads.get(id) {
                assert!(g.abs() < 1e-12);
            }
        }
    }
}
