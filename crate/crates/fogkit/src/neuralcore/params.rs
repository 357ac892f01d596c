//! Parameter storage: named weight arrays plus Adam state.
//!
//! Training runs in f64; the on-disk format stores f32 (see `io`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::arch::{ArchSpec, LayerDims};

/// `w` laid out `[out_ch][in_ch][kernel]`, `b` one per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// `w` laid out `[out][in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// All trainable arrays of the model: encoder convs, classifier MLP
/// (`dense` + `out`), and the pretext reconstruction head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArrays {
    pub conv: Vec<ConvLayer>,
    pub dense: Vec<DenseLayer>,
    pub out: DenseLayer,
    pub pretext: DenseLayer,
}

/// Identifies one named array; iteration order is the canonical
/// serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayId {
    ConvW(usize),
    ConvB(usize),
    DenseW(usize),
    DenseB(usize),
    OutW,
    OutB,
    PretextW,
    PretextB,
}

impl ArrayId {
    pub fn name(self) -> String {
        match self {
            ArrayId::ConvW(i) => format!("conv{i}.w"),
            ArrayId::ConvB(i) => format!("conv{i}.b"),
            ArrayId::DenseW(i) => format!("dense{i}.w"),
            ArrayId::DenseB(i) => format!("dense{i}.b"),
            ArrayId::OutW => "out.w".into(),
            ArrayId::OutB => "out.b".into(),
            ArrayId::PretextW => "pretext.w".into(),
            ArrayId::PretextB => "pretext.b".into(),
        }
    }

    /// True for encoder arrays (the θ that freezing protects).
    pub fn is_encoder(self) -> bool {
        matches!(self, ArrayId::ConvW(_) | ArrayId::ConvB(_))
    }
}

/// Which arrays a training phase updates. Arrays outside the scope get no
/// gradient and no optimizer update, so they stay bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    /// Masked-reconstruction pretraining: encoder + pretext head.
    Pretext,
    /// Frozen-encoder fine-tuning: classifier MLP + output only.
    Head,
    /// End-to-end supervised training: encoder + classifier (pretext idle).
    Full,
}

impl TrainScope {
    pub fn trains(self, id: ArrayId) -> bool {
        match self {
            TrainScope::Pretext => matches!(
                id,
                ArrayId::ConvW(_) | ArrayId::ConvB(_) | ArrayId::PretextW | ArrayId::PretextB
            ),
            TrainScope::Head => matches!(
                id,
                ArrayId::DenseW(_) | ArrayId::DenseB(_) | ArrayId::OutW | ArrayId::OutB
            ),
            TrainScope::Full => !matches!(id, ArrayId::PretextW | ArrayId::PretextB),
        }
    }
}

impl ParamArrays {
    /// Zero-filled arrays shaped for `arch`.
    pub fn zeros(arch: &ArchSpec) -> Result<ParamArrays> {
        let dims = arch.dims()?;
        Ok(Self::zeros_from_dims(arch, &dims))
    }

    pub fn zeros_from_dims(arch: &ArchSpec, dims: &LayerDims) -> ParamArrays {
        let conv = dims
            .conv
            .iter()
            .map(|c| ConvLayer {
                w: vec![0.0; c.out_ch * c.in_ch * arch.kernel],
                b: vec![0.0; c.out_ch],
            })
            .collect();
        let mut dense = Vec::new();
        let mut fan_in = dims.embed_dim;
        for &units in &arch.dense_units {
            dense.push(DenseLayer {
                w: vec![0.0; units * fan_in],
                b: vec![0.0; units],
            });
            fan_in = units;
        }
        ParamArrays {
            conv,
            dense,
            out: DenseLayer {
                w: vec![0.0; fan_in],
                b: vec![0.0; 1],
            },
            pretext: DenseLayer {
                w: vec![0.0; dims.flat_len * dims.embed_dim],
                b: vec![0.0; dims.flat_len],
            },
        }
    }

    /// Seeded initialization: He-uniform for the ReLU conv/dense layers,
    /// Glorot-uniform for the sigmoid output and the linear pretext head;
    /// zero biases.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<ParamArrays> {
        let dims = arch.dims()?;
        let mut arrays = Self::zeros_from_dims(arch, &dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill = |w: &mut [f64], limit: f64, rng: &mut ChaCha8Rng| {
            for v in w.iter_mut() {
                *v = rng.gen_range(-limit..limit);
            }
        };
        for (layer, c) in arrays.conv.iter_mut().zip(&dims.conv) {
            let fan_in = (c.in_ch * arch.kernel) as f64;
            fill(&mut layer.w, (6.0 / fan_in).sqrt(), &mut rng);
        }
        let mut fan_in = dims.embed_dim;
        for (layer, &units) in arrays.dense.iter_mut().zip(&arch.dense_units) {
            fill(&mut layer.w, (6.0 / fan_in as f64).sqrt(), &mut rng);
            fan_in = units;
        }
        fill(
            &mut arrays.out.w,
            (6.0 / (fan_in as f64 + 1.0)).sqrt(),
            &mut rng,
        );
        fill(
            &mut arrays.pretext.w,
            (6.0 / (dims.embed_dim + dims.flat_len) as f64).sqrt(),
            &mut rng,
        );
        Ok(arrays)
    }

    /// Canonical array order.
    pub fn ids(&self) -> Vec<ArrayId> {
        let mut ids = Vec::new();
        for i in 0..self.conv.len() {
            ids.push(ArrayId::ConvW(i));
            ids.push(ArrayId::ConvB(i));
        }
        for i in 0..self.dense.len() {
            ids.push(ArrayId::DenseW(i));
            ids.push(ArrayId::DenseB(i));
        }
        ids.extend([ArrayId::OutW, ArrayId::OutB, ArrayId::PretextW, ArrayId::PretextB]);
        ids
    }

    pub fn get(&self, id: ArrayId) -> &Vec<f64> {
        match id {
            ArrayId::ConvW(i) => &self.conv[i].w,
            ArrayId::ConvB(i) => &self.conv[i].b,
            ArrayId::DenseW(i) => &self.dense[i].w,
            ArrayId::DenseB(i) => &self.dense[i].b,
            ArrayId::OutW => &self.out.w,
            ArrayId::OutB => &self.out.b,
            ArrayId::PretextW => &self.pretext.w,
            ArrayId::PretextB => &self.pretext.b,
        }
    }

    pub fn get_mut(&mut self, id: ArrayId) -> &mut Vec<f64> {
        match id {
            ArrayId::ConvW(i) => &mut self.conv[i].w,
            ArrayId::ConvB(i) => &mut self.conv[i].b,
            ArrayId::DenseW(i) => &mut self.dense[i].w,
            ArrayId::DenseB(i) => &mut self.dense[i].b,
            ArrayId::OutW => &mut self.out.w,
            ArrayId::OutB => &mut self.out.b,
            ArrayId::PretextW => &mut self.pretext.w,
            ArrayId::PretextB => &mut self.pretext.b,
        }
    }

    /// Element-wise accumulate (used to reduce per-chunk gradients in a
    /// fixed order).
    pub fn add_assign(&mut self, other: &ParamArrays) {
        for id in self.ids() {
            let dst = self.get_mut(id);
            // ids() borrows immutably only for the list; re-fetch per array.
            let src = other.get(id);
            debug_assert_eq!(dst.len(), src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn total_len(&self) -> usize {
        self.ids().iter().map(|&id| self.get(id).len()).sum()
    }

    /// FNV-1a over the canonical byte serialization; used for the
    /// frozen-encoder identity checks and manifests.
    pub fn checksum(&self, filter: impl Fn(ArrayId) -> bool) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for id in self.ids() {
            if !filter(id) {
                continue;
            }
            for v in self.get(id) {
                for byte in v.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// First/second Adam moments plus the global step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamArrays,
    pub v: ParamArrays,
}

/// Trainable arrays plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub arrays: ParamArrays,
    pub adam: AdamState,
}

impl ParamSet {
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<ParamSet> {
        let arrays = ParamArrays::init(arch, seed)?;
        let dims = arch.dims()?;
        Ok(ParamSet {
            adam: AdamState {
                step: 0,
                m: ParamArrays::zeros_from_dims(arch, &dims),
                v: ParamArrays::zeros_from_dims(arch, &dims),
            },
            arrays,
        })
    }

    /// Checksum of the encoder arrays only (θ).
    pub fn encoder_checksum(&self) -> u64 {
        self.arrays.checksum(|id| id.is_encoder())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    MaskedMse,
    Bce,
}
