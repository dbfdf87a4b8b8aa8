//! The desk-scale CRUSE-style architecture: four causal strided conv encoders,
//! a GRU bottleneck and four transposed-conv decoders with additive skips.
//!
//! The whole family is described by a channel vector `[c1, c2, c3, c4]` plus
//! the number of frequency bins `F` of the input frame.

mod coupling;
mod io;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use coupling::{coupling_groups, CouplingEntry, CouplingGroup};
pub use io::{load_model, save_model, Manifest, TensorRecord, FORMAT_VERSION, MANIFEST_FILE, WEIGHTS_FILE};

/// Kernel extent along time (current frame plus one frame of history).
pub const KERNEL_T: usize = 2;
/// Kernel extent along frequency.
pub const KERNEL_F: usize = 3;
/// Frequency stride of every encoder (and upsampling factor of every decoder).
pub const STRIDE_F: usize = 2;
pub const NUM_LAYERS: usize = 4;
/// Number of stacked GRU gates (reset, update, candidate).
pub const GRU_GATES: usize = 3;

/// Channel vector `[c1, c2, c3, c4]`. Always monotone non-decreasing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 4]", into = "[usize; 4]")]
pub struct NetworkParam([usize; 4]);

impl NetworkParam {
    pub fn new(channels: [usize; 4]) -> Result<Self> {
        if channels.contains(&0) {
            return Err(Error::arg(format!(
                "channel counts must be positive, got {channels:?}"
            )));
        }
        if channels.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::arg(format!(
                "channel counts must satisfy c1 <= c2 <= c3 <= c4, got {channels:?}"
            )));
        }
        Ok(Self(channels))
    }

    pub fn channels(&self) -> [usize; 4] {
        self.0
    }

    /// `c_i` for 1-based `i`; `c(0)` is the single input/output channel.
    pub fn c(&self, i: usize) -> usize {
        match i {
            0 => 1,
            1..=4 => self.0[i - 1],
            _ => panic!("channel index {i} out of range"),
        }
    }

    /// True if every channel count is at most the corresponding one in `other`.
    pub fn fits_within(&self, other: &NetworkParam) -> bool {
        self.0.iter().zip(other.0).all(|(a, b)| *a <= b)
    }
}

impl TryFrom<[usize; 4]> for NetworkParam {
    type Error = Error;

    fn try_from(c: [usize; 4]) -> Result<Self> {
        Self::new(c)
    }
}

impl From<NetworkParam> for [usize; 4] {
    fn from(p: NetworkParam) -> Self {
        p.0
    }
}

impl fmt::Display for NetworkParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a},{b},{c},{d}")
    }
}

impl FromStr for NetworkParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::arg(format!("bad channel vector {s:?}: {e}")))?;
        let arr: [usize; 4] = parts
            .try_into()
            .map_err(|_| Error::arg(format!("channel vector {s:?} must have 4 entries")))?;
        Self::new(arr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub params: NetworkParam,
    pub freq_bins: usize,
}

impl ModelSpec {
    pub const DEFAULT_FREQ_BINS: usize = 16;

    pub fn new(params: NetworkParam, freq_bins: usize) -> Result<Self> {
        let down = STRIDE_F.pow(NUM_LAYERS as u32);
        if freq_bins == 0 || !freq_bins.is_multiple_of(down) {
            return Err(Error::arg(format!(
                "freq_bins must be a positive multiple of {down}, got {freq_bins}"
            )));
        }
        Ok(Self { params, freq_bins })
    }

    pub fn with_default_bins(params: NetworkParam) -> Self {
        Self {
            params,
            freq_bins: Self::DEFAULT_FREQ_BINS,
        }
    }

    /// Frequency bins left after the fourth encoder, `F / 16`.
    pub fn bins_after_encoder(&self) -> usize {
        self.freq_bins / STRIDE_F.pow(NUM_LAYERS as u32)
    }

    /// GRU input and hidden width, `c4 * B`.
    pub fn gru_size(&self) -> usize {
        self.params.c(4) * self.bins_after_encoder()
    }

    /// Frequency bins entering encoder `layer` (0-based).
    pub fn enc_in_bins(&self, layer: usize) -> usize {
        self.freq_bins / STRIDE_F.pow(layer as u32)
    }

    /// Frequency bins entering decoder `layer` (0-based); mirrors the encoders.
    pub fn dec_in_bins(&self, layer: usize) -> usize {
        self.enc_in_bins(NUM_LAYERS - layer)
    }

    /// (in, out) channels of encoder `layer`.
    pub fn enc_channels(&self, layer: usize) -> (usize, usize) {
        (self.params.c(layer), self.params.c(layer + 1))
    }

    /// (in, out) channels of decoder `layer`.
    pub fn dec_channels(&self, layer: usize) -> (usize, usize) {
        (self.params.c(NUM_LAYERS - layer), self.params.c(NUM_LAYERS - layer - 1))
    }

    pub fn shape_of(&self, param: Param) -> Vec<usize> {
        let h = self.gru_size();
        match param {
            Param::EncWeight(l) => {
                let (ci, co) = self.enc_channels(l);
                vec![co, ci, KERNEL_T, KERNEL_F]
            }
            Param::EncBias(l) => vec![self.enc_channels(l).1],
            Param::GruWeightIh | Param::GruWeightHh => vec![GRU_GATES * h, h],
            Param::GruBiasIh | Param::GruBiasHh => vec![GRU_GATES * h],
            Param::DecWeight(l) => {
                let (ci, co) = self.dec_channels(l);
                vec![co, ci, KERNEL_T, KERNEL_F]
            }
            Param::DecBias(l) => vec![self.dec_channels(l).1],
        }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let k = KERNEL_T * KERNEL_F;
        let h = self.gru_size();
        let conv: usize = (0..NUM_LAYERS)
            .map(|l| {
                let (ei, eo) = self.enc_channels(l);
                let (di, d_o) = self.dec_channels(l);
                ei * eo * k + eo + di * d_o * k + d_o
            })
            .sum();
        conv + 2 * GRU_GATES * h * h + 2 * GRU_GATES * h
    }
}

/// Identifies one weight tensor. Layer indices are 0-based; names are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    /// Encoder kernel, shape `(c_out, c_in, KERNEL_T, KERNEL_F)`.
    EncWeight(usize),
    EncBias(usize),
    /// Stacked input weights, shape `(3h, h)`, gate order reset/update/candidate.
    GruWeightIh,
    /// Stacked recurrent weights, shape `(3h, h)`.
    GruWeightHh,
    GruBiasIh,
    GruBiasHh,
    /// Transposed-conv kernel, shape `(c_out, c_in, KERNEL_T, KERNEL_F)`.
    DecWeight(usize),
    DecBias(usize),
}

impl Param {
    pub const COUNT: usize = 4 * NUM_LAYERS + 4;

    /// Every parameter in storage (and file) order.
    pub fn all() -> [Param; Self::COUNT] {
        use Param::*;
        [
            EncWeight(0),
            EncBias(0),
            EncWeight(1),
            EncBias(1),
            EncWeight(2),
            EncBias(2),
            EncWeight(3),
            EncBias(3),
            GruWeightIh,
            GruWeightHh,
            GruBiasIh,
            GruBiasHh,
            DecWeight(0),
            DecBias(0),
            DecWeight(1),
            DecBias(1),
            DecWeight(2),
            DecBias(2),
            DecWeight(3),
            DecBias(3),
        ]
    }

    pub fn index(self) -> usize {
        match self {
            Param::EncWeight(l) => 2 * l,
            Param::EncBias(l) => 2 * l + 1,
            Param::GruWeightIh => 8,
            Param::GruWeightHh => 9,
            Param::GruBiasIh => 10,
            Param::GruBiasHh => 11,
            Param::DecWeight(l) => 12 + 2 * l,
            Param::DecBias(l) => 13 + 2 * l,
        }
    }

    pub fn name(self) -> String {
        match self {
            Param::EncWeight(l) => format!("enc{}.weight", l + 1),
            Param::EncBias(l) => format!("enc{}.bias", l + 1),
            Param::GruWeightIh => "gru.weight_ih".into(),
            Param::GruWeightHh => "gru.weight_hh".into(),
            Param::GruBiasIh => "gru.bias_ih".into(),
            Param::GruBiasHh => "gru.bias_hh".into(),
            Param::DecWeight(l) => format!("dec{}.weight", l + 1),
            Param::DecBias(l) => format!("dec{}.bias", l + 1),
        }
    }

    pub fn is_gru(self) -> bool {
        matches!(
            self,
            Param::GruWeightIh | Param::GruWeightHh | Param::GruBiasIh | Param::GruBiasHh
        )
    }

    /// Fan-in used for the uniform initialization bound.
    fn fan_in(self, spec: &ModelSpec) -> usize {
        let k = KERNEL_T * KERNEL_F;
        match self {
            Param::EncWeight(l) | Param::EncBias(l) => spec.enc_channels(l).0 * k,
            Param::DecWeight(l) | Param::DecBias(l) => spec.dec_channels(l).0 * k,
            _ => spec.gru_size(),
        }
    }
}

/// A full set of weights for one [`ModelSpec`], stored in [`Param::all`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T = f32> {
    spec: ModelSpec,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    /// Assembles weights, checking every tensor against the spec's shapes.
    pub fn new(spec: ModelSpec, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != Param::COUNT {
            return Err(Error::arg(format!(
                "expected {} tensors, got {}",
                Param::COUNT,
                tensors.len()
            )));
        }
        for (p, t) in Param::all().into_iter().zip(&tensors) {
            let want = spec.shape_of(p);
            if t.shape() != want.as_slice() {
                return Err(Error::arg(format!(
                    "{} has shape {:?}, expected {:?} for params [{}] F={}",
                    p.name(),
                    t.shape(),
                    want,
                    spec.params,
                    spec.freq_bins
                )));
            }
        }
        Ok(Self { spec, tensors })
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        let tensors = Param::all()
            .into_iter()
            .map(|p| Tensor::zeros(spec.shape_of(p)).expect("spec shapes are valid"))
            .collect();
        Self { spec, tensors }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn get(&self, p: Param) -> &Tensor<T> {
        &self.tensors[p.index()]
    }

    /// Mutable access to a tensor's values; shapes stay fixed.
    pub fn data_mut(&mut self, p: Param) -> &mut [T] {
        self.tensors[p.index()].data_mut()
    }

    pub fn tensors(&self) -> impl Iterator<Item = (Param, &Tensor<T>)> {
        Param::all().into_iter().zip(&self.tensors)
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            spec: self.spec,
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn map_tensors(&self, mut f: impl FnMut(Param, &Tensor<T>) -> Tensor<T>) -> Result<Self> {
        let tensors = self.tensors().map(|(p, t)| f(p, t)).collect();
        Self::new(self.spec, tensors)
    }
}

/// Reproducible initialization: every tensor uniform in `±sqrt(1 / fan_in)`.
pub fn build_model(spec: ModelSpec, seed: u64) -> ModelWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = Param::all()
        .into_iter()
        .map(|p| {
            let bound = (1.0 / p.fan_in(&spec) as f64).sqrt() as f32;
            Tensor::from_fn(spec.shape_of(p), |_| rng.gen_range(-bound..=bound))
                .expect("spec shapes are valid")
        })
        .collect();
    ModelWeights { spec, tensors }
}

/// Size of the serialized weight payload in MiB.
pub fn model_memory_mb<T: Scalar>(w: &ModelWeights<T>) -> f64 {
    payload_mb(w.param_count())
}

/// MiB taken by `params` little-endian `f32` values.
pub fn payload_mb(params: usize) -> f64 {
    (params * std::mem::size_of::<f32>()) as f64 / (1u64 << 20) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cruse32() -> NetworkParam {
        NetworkParam::new([32, 64, 128, 256]).unwrap()
    }

    #[test]
    fn network_param_validation() {
        assert!(NetworkParam::new([1, 1, 1, 1]).is_ok());
        assert!(NetworkParam::new([0, 1, 1, 1]).is_err());
        assert!(NetworkParam::new([2, 1, 1, 1]).is_err());
        assert_eq!("32, 64,128,256".parse::<NetworkParam>().unwrap(), cruse32());
        assert!("32,64,128".parse::<NetworkParam>().is_err());
        assert!("a,b,c,d".parse::<NetworkParam>().is_err());
        assert_eq!(cruse32().to_string(), "32,64,128,256");
    }

    #[test]
    fn spec_requires_multiple_of_sixteen() {
        assert!(ModelSpec::new(cruse32(), 16).is_ok());
        assert!(ModelSpec::new(cruse32(), 64).is_ok());
        assert!(ModelSpec::new(cruse32(), 24).is_err());
        assert!(ModelSpec::new(cruse32(), 0).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let spec = ModelSpec::with_default_bins(NetworkParam::new([2, 3, 4, 5]).unwrap());
        assert_eq!(build_model(spec, 9), build_model(spec, 9));
        assert_ne!(build_model(spec, 9), build_model(spec, 10));
    }

    #[test]
    fn cruse32_gru_shape() {
        let w = build_model(ModelSpec::with_default_bins(cruse32()), 0);
        assert_eq!(w.get(Param::GruWeightIh).shape(), &[768, 256]);
        assert_eq!(w.get(Param::GruWeightHh).shape(), &[768, 256]);
        assert_eq!(w.get(Param::DecWeight(3)).shape(), &[1, 32, 2, 3]);
        assert_eq!(w.get(Param::EncWeight(0)).shape(), &[32, 1, 2, 3]);
    }

    #[test]
    fn init_respects_bounds() {
        let spec = ModelSpec::with_default_bins(NetworkParam::new([4, 4, 8, 8]).unwrap());
        let w = build_model(spec, 3);
        for (p, t) in w.tensors() {
            let bound = (1.0 / p.fan_in(&spec) as f64).sqrt() as f32;
            assert!(t.data().iter().all(|x| x.abs() <= bound), "{}", p.name());
        }
    }

    #[test]
    fn param_count_tiny_hand_count() {
        // [2,2,2,2], F=16: B=1, h=2.
        // enc: (1*2*6+2) + 3*(2*2*6+2) = 14 + 78 = 92
        // gru: 2*(6*2) + 2*6 = 36
        // dec: 3*(2*2*6+2) + (2*1*6+1) = 78 + 13 = 91
        let spec = ModelSpec::with_default_bins(NetworkParam::new([2, 2, 2, 2]).unwrap());
        assert_eq!(spec.param_count(), 92 + 36 + 91);
        assert_eq!(build_model(spec, 0).param_count(), spec.param_count());
    }

    #[test]
    fn memory_ratio_cruse32_vs_p875() {
        let big = build_model(ModelSpec::with_default_bins(cruse32()), 0);
        let small = build_model(
            ModelSpec::with_default_bins(NetworkParam::new([32, 32, 32, 32]).unwrap()),
            0,
        );
        assert!(model_memory_mb(&big) / model_memory_mb(&small) > 10.0);
    }

    #[test]
    fn memory_mb_is_four_bytes_per_param() {
        assert_eq!(payload_mb(1_048_576), 4.0);
        let w = build_model(ModelSpec::with_default_bins(cruse32()), 0);
        let mb = model_memory_mb(&w);
        assert_eq!(mb * (1u64 << 20) as f64, 4.0 * w.param_count() as f64);
    }

    #[test]
    fn new_rejects_wrong_shapes() {
        let spec = ModelSpec::with_default_bins(NetworkParam::new([2, 2, 2, 2]).unwrap());
        let other = ModelSpec::with_default_bins(NetworkParam::new([2, 2, 2, 3]).unwrap());
        let tensors = build_model(other, 0).into_tensors();
        let err = ModelWeights::new(spec, tensors).unwrap_err();
        assert!(err.to_string().contains("enc4.weight"), "{err}");
    }
}
