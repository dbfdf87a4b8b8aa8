//! Deterministic, single-threaded streaming inference.
//!
//! Each frame flows through four causal strided convolutions, the GRU, and
//! four transposed convolutions whose inputs add the mirrored encoder output.
//! The last decoder produces mask logits; the output is `sigmoid(logits) ⊙ x`.

pub(crate) mod kernels;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ModelWeights, Param, NUM_LAYERS};
use crate::tensor::{sigmoid, Scalar};
use kernels::{gru_step, leaky_relu, ConvGeom, GruScratch, GruWeights};

/// Carried state between frames: the GRU hidden vector plus one frame of
/// input history for every (de)convolution.
#[derive(Clone)]
pub struct StreamState<T = f32> {
    spec: ModelSpec,
    hidden: Vec<T>,
    enc_prev: Vec<Vec<T>>,
    dec_prev: Vec<Vec<T>>,
    pub(crate) scratch: Scratch<T>,
}

/// Intermediate activations of the most recent frame.
#[derive(Clone)]
pub(crate) struct Scratch<T> {
    pub enc_patches: Vec<Vec<T>>,
    pub enc_out: Vec<Vec<T>>,
    pub gru: GruScratch<T>,
    pub dec_in: Vec<Vec<T>>,
    pub dec_patches: Vec<Vec<T>>,
    pub dec_out: Vec<Vec<T>>,
    pub mask: Vec<T>,
}

impl<T: Scalar> StreamState<T> {
    pub fn new(spec: &ModelSpec) -> Self {
        let zeros = |n: usize| vec![T::zero(); n];
        let enc: Vec<ConvGeom> = (0..NUM_LAYERS).map(|l| ConvGeom::encoder(spec, l)).collect();
        let dec: Vec<ConvGeom> = (0..NUM_LAYERS).map(|l| ConvGeom::decoder(spec, l)).collect();
        Self {
            spec: *spec,
            hidden: zeros(spec.gru_size()),
            enc_prev: enc.iter().map(|g| zeros(g.in_len())).collect(),
            dec_prev: dec.iter().map(|g| zeros(g.in_len())).collect(),
            scratch: Scratch {
                enc_patches: enc.iter().map(|g| zeros(g.patches_len())).collect(),
                enc_out: enc.iter().map(|g| zeros(g.out_len())).collect(),
                gru: GruScratch::new(spec.gru_size()),
                dec_in: dec.iter().map(|g| zeros(g.in_len())).collect(),
                dec_patches: dec.iter().map(|g| zeros(g.patches_len())).collect(),
                dec_out: dec.iter().map(|g| zeros(g.out_len())).collect(),
                mask: zeros(spec.freq_bins),
            },
        }
    }

    pub fn reset(&mut self) {
        let zero = |v: &mut Vec<T>| v.iter_mut().for_each(|x| *x = T::zero());
        zero(&mut self.hidden);
        self.enc_prev.iter_mut().for_each(zero);
        self.dec_prev.iter_mut().for_each(zero);
    }

    pub fn hidden(&self) -> &[T] {
        &self.hidden
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check(&self, w: &ModelWeights<T>, frame_len: usize) -> Result<()> {
        if &self.spec != w.spec() {
            return Err(Error::arg(format!(
                "stream state built for [{}] F={}, model is [{}] F={}",
                self.spec.params,
                self.spec.freq_bins,
                w.spec().params,
                w.spec().freq_bins
            )));
        }
        if frame_len != self.spec.freq_bins {
            return Err(Error::arg(format!(
                "frame has {frame_len} bins, model expects {}",
                self.spec.freq_bins
            )));
        }
        Ok(())
    }
}

/// Where profiled time is attributed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpCategory {
    Recurrent,
    ConvDeconv,
    Other,
}

pub(crate) trait Probe {
    fn run<R>(&mut self, cat: OpCategory, f: impl FnOnce() -> R) -> R;
}

pub(crate) struct Unprobed;

impl Probe for Unprobed {
    #[inline(always)]
    fn run<R>(&mut self, _: OpCategory, f: impl FnOnce() -> R) -> R {
        f()
    }
}

/// Seconds spent per operator category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OpProfile {
    pub recurrent: f64,
    pub conv_deconv: f64,
    pub other: f64,
}

impl OpProfile {
    pub fn total(&self) -> f64 {
        self.recurrent + self.conv_deconv + self.other
    }

    /// Category shares of the instrumented time, in the same field order.
    pub fn fractions(&self) -> OpProfile {
        let t = self.total();
        if t <= 0.0 {
            return OpProfile::default();
        }
        OpProfile {
            recurrent: self.recurrent / t,
            conv_deconv: self.conv_deconv / t,
            other: self.other / t,
        }
    }
}

impl Probe for OpProfile {
    fn run<R>(&mut self, cat: OpCategory, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let r = f();
        let dt = start.elapsed().as_secs_f64();
        match cat {
            OpCategory::Recurrent => self.recurrent += dt,
            OpCategory::ConvDeconv => self.conv_deconv += dt,
            OpCategory::Other => self.other += dt,
        }
        r
    }
}

pub(crate) fn step<T: Scalar, P: Probe>(
    w: &ModelWeights<T>,
    st: &mut StreamState<T>,
    x: &[T],
    y: &mut [T],
    probe: &mut P,
) {
    let spec = st.spec;
    let StreamState {
        hidden,
        enc_prev,
        dec_prev,
        scratch: s,
        ..
    } = st;

    for l in 0..NUM_LAYERS {
        let g = ConvGeom::encoder(&spec, l);
        let (done, rest) = s.enc_out.split_at_mut(l);
        let input: &[T] = if l == 0 { x } else { &done[l - 1] };
        let out = &mut rest[0];
        let patches = &mut s.enc_patches[l];
        let prev = &mut enc_prev[l];
        probe.run(OpCategory::ConvDeconv, || {
            g.im2col(input, prev, patches);
            g.forward(
                w.get(Param::EncWeight(l)).data(),
                w.get(Param::EncBias(l)).data(),
                patches,
                out,
            );
        });
        probe.run(OpCategory::Other, || {
            leaky_relu(out);
            prev.copy_from_slice(input);
        });
    }

    let gw = GruWeights {
        w_ih: w.get(Param::GruWeightIh).data(),
        w_hh: w.get(Param::GruWeightHh).data(),
        b_ih: w.get(Param::GruBiasIh).data(),
        b_hh: w.get(Param::GruBiasHh).data(),
    };
    {
        let gs = &mut s.gru;
        let x_gru = &s.enc_out[NUM_LAYERS - 1];
        probe.run(OpCategory::Recurrent, || gru_step(&gw, x_gru, hidden, gs));
    }

    for l in 0..NUM_LAYERS {
        let g = ConvGeom::decoder(&spec, l);
        let skip = &s.enc_out[NUM_LAYERS - 1 - l];
        let (done, rest) = s.dec_out.split_at_mut(l);
        let below: &[T] = if l == 0 { hidden } else { &done[l - 1] };
        let input = &mut s.dec_in[l];
        let out = &mut rest[0];
        let patches = &mut s.dec_patches[l];
        let prev = &mut dec_prev[l];
        probe.run(OpCategory::Other, || {
            for ((d, &a), &b) in input.iter_mut().zip(below).zip(skip) {
                *d = a + b;
            }
        });
        probe.run(OpCategory::ConvDeconv, || {
            g.im2col(input, prev, patches);
            g.forward(
                w.get(Param::DecWeight(l)).data(),
                w.get(Param::DecBias(l)).data(),
                patches,
                out,
            );
        });
        probe.run(OpCategory::Other, || {
            if l + 1 < NUM_LAYERS {
                leaky_relu(out);
            }
            prev.copy_from_slice(input);
        });
    }

    let logits = &s.dec_out[NUM_LAYERS - 1];
    let mask = &mut s.mask;
    probe.run(OpCategory::Other, || {
        for f in 0..x.len() {
            let m = sigmoid(logits[f]);
            mask[f] = m;
            y[f] = m * x[f];
        }
    });
}

/// Runs one frame and advances `state`.
pub fn forward_frame<T: Scalar>(
    w: &ModelWeights<T>,
    state: &mut StreamState<T>,
    x: &[T],
) -> Result<Vec<T>> {
    state.check(w, x.len())?;
    let mut y = vec![T::zero(); x.len()];
    step(w, state, x, &mut y, &mut Unprobed);
    Ok(y)
}

/// Runs consecutive frames through `state`, which carries over between calls.
pub fn forward_chunk<T: Scalar, F: AsRef<[T]>>(
    w: &ModelWeights<T>,
    state: &mut StreamState<T>,
    frames: &[F],
) -> Result<Vec<Vec<T>>> {
    for f in frames {
        state.check(w, f.as_ref().len())?;
    }
    Ok(frames
        .iter()
        .map(|f| {
            let x = f.as_ref();
            let mut y = vec![T::zero(); x.len()];
            step(w, state, x, &mut y, &mut Unprobed);
            y
        })
        .collect())
}

/// Processes a whole sequence from a freshly reset state.
pub fn forward_sequence<T: Scalar, F: AsRef<[T]>>(
    w: &ModelWeights<T>,
    frames: &[F],
) -> Result<Vec<Vec<T>>> {
    forward_chunk(w, &mut StreamState::new(w.spec()), frames)
}

/// Like [`forward_sequence`], timing every primitive and attributing it to
/// an [`OpCategory`].
pub fn forward_profiled<T: Scalar, F: AsRef<[T]>>(
    w: &ModelWeights<T>,
    frames: &[F],
) -> Result<(Vec<Vec<T>>, OpProfile)> {
    let mut state = StreamState::new(w.spec());
    for f in frames {
        state.check(w, f.as_ref().len())?;
    }
    let mut profile = OpProfile::default();
    let outputs = frames
        .iter()
        .map(|f| {
            let x = f.as_ref();
            let mut y = vec![T::zero(); x.len()];
            step(w, &mut state, x, &mut y, &mut profile);
            y
        })
        .collect();
    Ok((outputs, profile))
}
