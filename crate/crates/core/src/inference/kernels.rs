//! Frame-level kernels shared by the forward pass and backpropagation.

use crate::model::{ModelSpec, KERNEL_F, KERNEL_T, STRIDE_F};
use crate::tensor::{sigmoid, Scalar};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;
const TAPS: usize = KERNEL_T * KERNEL_F;

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

pub(crate) fn leaky_relu<T: Scalar>(xs: &mut [T]) {
    let slope = T::from(LEAKY_SLOPE).unwrap();
    for x in xs {
        if *x < T::zero() {
            *x = *x * slope;
        }
    }
}

/// Derivative of the leaky ReLU, read off its output (the slope is positive,
/// so output and pre-activation share a sign).
#[inline]
pub(crate) fn leaky_relu_grad<T: Scalar>(out: T) -> T {
    if out > T::zero() {
        T::one()
    } else {
        T::from(LEAKY_SLOPE).unwrap()
    }
}

/// Geometry of one causal (de)convolution over a single frame.
///
/// Kernels are `(c_out, c_in, KERNEL_T, KERNEL_F)`; time tap 0 reads the
/// previous frame, tap 1 the current one. Encoders halve the frequency axis
/// with one bin of zero padding on each side; decoders are the transposed
/// operation and double it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub fin: usize,
    pub fout: usize,
    pub transposed: bool,
}

impl ConvGeom {
    pub fn encoder(spec: &ModelSpec, layer: usize) -> Self {
        let (cin, cout) = spec.enc_channels(layer);
        let fin = spec.enc_in_bins(layer);
        Self {
            cin,
            cout,
            fin,
            fout: fin / STRIDE_F,
            transposed: false,
        }
    }

    pub fn decoder(spec: &ModelSpec, layer: usize) -> Self {
        let (cin, cout) = spec.dec_channels(layer);
        let fin = spec.dec_in_bins(layer);
        Self {
            cin,
            cout,
            fin,
            fout: fin * STRIDE_F,
            transposed: true,
        }
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.fin
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.fout
    }

    pub fn patch_len(&self) -> usize {
        self.cin * TAPS
    }

    pub fn patches_len(&self) -> usize {
        self.fout * self.patch_len()
    }

    /// Input bin read by output bin `o` through frequency tap `kf`, if any.
    /// Both directions share the relation `o_enc * 2 + kf - 1 = i_dec`.
    #[inline]
    pub fn source(&self, o: usize, kf: usize) -> Option<usize> {
        if self.transposed {
            let num = (o + 1).checked_sub(kf)?;
            (num % STRIDE_F == 0 && num / STRIDE_F < self.fin).then_some(num / STRIDE_F)
        } else {
            let i = (STRIDE_F * o + kf).checked_sub(1)?;
            (i < self.fin).then_some(i)
        }
    }

    /// Gathers each output bin's receptive field into a row of `patches`,
    /// laid out like a kernel row: `ci * TAPS + kt * KERNEL_F + kf`.
    pub fn im2col<T: Scalar>(&self, cur: &[T], prev: &[T], patches: &mut [T]) {
        let k = self.patch_len();
        for (o, patch) in patches.chunks_exact_mut(k).enumerate() {
            for kf in 0..KERNEL_F {
                match self.source(o, kf) {
                    Some(i) => {
                        for ci in 0..self.cin {
                            patch[ci * TAPS + kf] = prev[ci * self.fin + i];
                            patch[ci * TAPS + KERNEL_F + kf] = cur[ci * self.fin + i];
                        }
                    }
                    None => {
                        for ci in 0..self.cin {
                            patch[ci * TAPS + kf] = T::zero();
                            patch[ci * TAPS + KERNEL_F + kf] = T::zero();
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, weight: &[T], bias: &[T], patches: &[T], out: &mut [T]) {
        let k = self.patch_len();
        for (co, (row, out)) in weight
            .chunks_exact(k)
            .zip(out.chunks_exact_mut(self.fout))
            .enumerate()
        {
            for (o, y) in out.iter_mut().enumerate() {
                *y = bias[co] + dot(row, &patches[o * k..(o + 1) * k]);
            }
        }
    }

    /// Accumulates weight/bias gradients and writes the patch gradients.
    pub fn backward<T: Scalar>(
        &self,
        weight: &[T],
        patches: &[T],
        dout: &[T],
        dweight: &mut [T],
        dbias: &mut [T],
        dpatches: &mut [T],
    ) {
        let k = self.patch_len();
        dpatches.iter_mut().for_each(|x| *x = T::zero());
        for co in 0..self.cout {
            let row = &weight[co * k..(co + 1) * k];
            let drow = &mut dweight[co * k..(co + 1) * k];
            for o in 0..self.fout {
                let g = dout[co * self.fout + o];
                if g == T::zero() {
                    continue;
                }
                dbias[co] += g;
                axpy(drow, g, &patches[o * k..(o + 1) * k]);
                axpy(&mut dpatches[o * k..(o + 1) * k], g, row);
            }
        }
    }

    /// Scatters patch gradients back onto the current and previous inputs (accumulating).
    pub fn col2im<T: Scalar>(&self, dpatches: &[T], dcur: &mut [T], dprev: &mut [T]) {
        let k = self.patch_len();
        for (o, dp) in dpatches.chunks_exact(k).enumerate() {
            for kf in 0..KERNEL_F {
                if let Some(i) = self.source(o, kf) {
                    for ci in 0..self.cin {
                        dprev[ci * self.fin + i] += dp[ci * TAPS + kf];
                        dcur[ci * self.fin + i] += dp[ci * TAPS + KERNEL_F + kf];
                    }
                }
            }
        }
    }
}

/// Buffers written by one GRU step. `gates` holds reset, update and candidate
/// activations; `gh` the recurrent pre-activations (needed for the candidate).
#[derive(Clone)]
pub(crate) struct GruScratch<T> {
    pub gi: Vec<T>,
    pub gh: Vec<T>,
    pub gates: Vec<T>,
    pub h_prev: Vec<T>,
}

impl<T: Scalar> GruScratch<T> {
    pub fn new(h: usize) -> Self {
        Self {
            gi: vec![T::zero(); 3 * h],
            gh: vec![T::zero(); 3 * h],
            gates: vec![T::zero(); 3 * h],
            h_prev: vec![T::zero(); h],
        }
    }
}

pub(crate) struct GruWeights<'a, T> {
    pub w_ih: &'a [T],
    pub w_hh: &'a [T],
    pub b_ih: &'a [T],
    pub b_hh: &'a [T],
}

/// One GRU step, updating `h` in place.
///
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
pub(crate) fn gru_step<T: Scalar>(w: &GruWeights<T>, x: &[T], h: &mut [T], s: &mut GruScratch<T>) {
    let n = h.len();
    let nin = x.len();
    s.h_prev.copy_from_slice(h);
    for r in 0..3 * n {
        s.gi[r] = w.b_ih[r] + dot(&w.w_ih[r * nin..(r + 1) * nin], x);
        s.gh[r] = w.b_hh[r] + dot(&w.w_hh[r * n..(r + 1) * n], &s.h_prev);
    }
    for j in 0..n {
        let r = sigmoid(s.gi[j] + s.gh[j]);
        let z = sigmoid(s.gi[n + j] + s.gh[n + j]);
        let c = (s.gi[2 * n + j] + r * s.gh[2 * n + j]).tanh();
        s.gates[j] = r;
        s.gates[n + j] = z;
        s.gates[2 * n + j] = c;
        h[j] = (T::one() - z) * c + z * s.h_prev[j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkParam;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..37).map(|i| i as f32 * 0.25 - 3.0).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
        assert!((dot(&a, &b) as f64 - naive).abs() < 1e-4);
    }

    #[test]
    fn encoder_sources_pad_left() {
        let spec = ModelSpec::with_default_bins(NetworkParam::new([1, 1, 1, 1]).unwrap());
        let g = ConvGeom::encoder(&spec, 0);
        assert_eq!((g.fin, g.fout), (16, 8));
        assert_eq!(g.source(0, 0), None);
        assert_eq!(g.source(0, 1), Some(0));
        assert_eq!(g.source(7, 2), Some(15));
    }

    #[test]
    fn decoder_is_encoder_transpose() {
        let spec = ModelSpec::with_default_bins(NetworkParam::new([1, 1, 1, 1]).unwrap());
        for l in 0..4 {
            let enc = ConvGeom::encoder(&spec, 3 - l);
            let dec = ConvGeom::decoder(&spec, l);
            assert_eq!((enc.fin, enc.fout), (dec.fout, dec.fin));
            for o in 0..enc.fout {
                for kf in 0..3 {
                    if let Some(i) = enc.source(o, kf) {
                        assert_eq!(dec.source(i, kf), Some(o));
                    }
                }
            }
            for i in 0..dec.fout {
                for kf in 0..3 {
                    if let Some(o) = dec.source(i, kf) {
                        assert_eq!(enc.source(o, kf), Some(i));
                    }
                }
            }
        }
    }
}
