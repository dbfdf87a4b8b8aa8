//! Backpropagation through time, Adam, a synthetic spectral denoising task,
//! and the fine-tuning experiments built on them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::kernels::{axpy, leaky_relu_grad, ConvGeom};
use crate::inference::{forward_sequence, step, StreamState, Unprobed};
use crate::model::{build_model, ModelSpec, ModelWeights, NetworkParam, Param, NUM_LAYERS};
use crate::pruning::prune_structured;
use crate::tensor::{Scalar, Tensor};

/// A noisy input sequence and its clean target, frame by frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair<T = f32> {
    pub noisy: Vec<Vec<T>>,
    pub clean: Vec<Vec<T>>,
}

impl<T: Scalar> Pair<T> {
    pub fn new(noisy: Vec<Vec<T>>, clean: Vec<Vec<T>>) -> Result<Self> {
        if noisy.len() != clean.len() {
            return Err(Error::arg(format!(
                "noisy has {} frames, clean has {}",
                noisy.len(),
                clean.len()
            )));
        }
        Ok(Self { noisy, clean })
    }

    pub fn frames(&self) -> usize {
        self.noisy.len()
    }

    pub fn cast<U: Scalar>(&self) -> Pair<U> {
        let c = |v: &Vec<Vec<T>>| {
            v.iter()
                .map(|f| f.iter().map(|&x| U::from(x).unwrap()).collect())
                .collect()
        };
        Pair {
            noisy: c(&self.noisy),
            clean: c(&self.clean),
        }
    }
}

/// Validates a batch against `spec` and returns its element count.
fn check_batch<T>(spec: &ModelSpec, pairs: &[Pair<T>]) -> Result<usize> {
    if pairs.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let f = spec.freq_bins;
    let mut n = 0;
    for (i, p) in pairs.iter().enumerate() {
        if p.noisy.len() != p.clean.len() || p.noisy.is_empty() {
            return Err(Error::arg(format!(
                "pair {i}: {} noisy vs {} clean frames",
                p.noisy.len(),
                p.clean.len()
            )));
        }
        if let Some(bad) = p.noisy.iter().chain(&p.clean).find(|fr| fr.len() != f) {
            return Err(Error::arg(format!(
                "pair {i}: frame has {} bins, model expects {f}",
                bad.len()
            )));
        }
        n += p.noisy.len() * f;
    }
    Ok(n)
}

/// Mean squared error between the model output and the clean frames, over
/// every element of every pair.
pub fn loss<T: Scalar>(w: &ModelWeights<T>, pairs: &[Pair<T>]) -> Result<f64> {
    let n = check_batch(w.spec(), pairs)?;
    let mut sse = 0.0;
    for p in pairs {
        let ys = forward_sequence(w, &p.noisy)?;
        for (y, c) in ys.iter().flatten().zip(p.clean.iter().flatten()) {
            let d = (*y - *c).to_f64().unwrap();
            sse += d * d;
        }
    }
    Ok(sse / n as f64)
}

/// Loss and its exact gradient with respect to every tensor, by full
/// backpropagation through time.
pub fn gradients<T: Scalar>(
    w: &ModelWeights<T>,
    pairs: &[Pair<T>],
) -> Result<(f64, ModelWeights<T>)> {
    let spec = *w.spec();
    let n = check_batch(&spec, pairs)?;
    let mut grads: Vec<Vec<T>> = Param::all()
        .iter()
        .map(|&p| vec![T::zero(); spec.shape_of(p).iter().product()])
        .collect();
    let scale = T::from(2.0 / n as f64).unwrap();
    let mut sse = 0.0;
    for p in pairs {
        sse += backprop_pair(w, p, scale, &mut grads);
    }
    let tensors = Param::all()
        .iter()
        .zip(grads)
        .map(|(&p, g)| Tensor::new(spec.shape_of(p), g))
        .collect::<Result<Vec<_>>>()?;
    Ok((sse / n as f64, ModelWeights::new(spec, tensors)?))
}

fn grads_mut<T, const N: usize>(g: &mut [Vec<T>], ps: [Param; N]) -> [&mut Vec<T>; N] {
    g.get_disjoint_mut(ps.map(Param::index))
        .expect("distinct parameters")
}

/// Runs one sequence forward, keeping every frame's activations, then walks
/// back in time. Gradients with respect to a frame's (de)conv inputs that
/// arrive through the next frame's time tap, and the hidden state's, are
/// carried backwards. Returns the sequence's squared error.
fn backprop_pair<T: Scalar>(
    w: &ModelWeights<T>,
    pair: &Pair<T>,
    scale: T,
    grads: &mut [Vec<T>],
) -> f64 {
    let spec = *w.spec();
    let h = spec.gru_size();
    let enc: Vec<ConvGeom> = (0..NUM_LAYERS).map(|l| ConvGeom::encoder(&spec, l)).collect();
    let dec: Vec<ConvGeom> = (0..NUM_LAYERS).map(|l| ConvGeom::decoder(&spec, l)).collect();

    let mut st = StreamState::<T>::new(&spec);
    let mut tape = Vec::with_capacity(pair.frames());
    let mut ys = Vec::with_capacity(pair.frames());
    for x in &pair.noisy {
        let mut y = vec![T::zero(); x.len()];
        step(w, &mut st, x, &mut y, &mut Unprobed);
        tape.push(st.scratch.clone());
        ys.push(y);
    }

    let zeros = |n: usize| vec![T::zero(); n];
    let mut enc_carry: Vec<Vec<T>> = enc.iter().map(|g| zeros(g.in_len())).collect();
    let mut dec_carry: Vec<Vec<T>> = dec.iter().map(|g| zeros(g.in_len())).collect();
    let mut h_carry = zeros(h);
    let mut d_enc: Vec<Vec<T>> = enc.iter().map(|g| zeros(g.out_len())).collect();
    let mut d_dec: Vec<Vec<T>> = dec.iter().map(|g| zeros(g.out_len())).collect();
    let mut d_enc_in: Vec<Vec<T>> = enc.iter().map(|g| zeros(g.in_len())).collect();
    let mut d_dec_in: Vec<Vec<T>> = dec.iter().map(|g| zeros(g.in_len())).collect();
    let mut enc_dp: Vec<Vec<T>> = enc.iter().map(|g| zeros(g.patches_len())).collect();
    let mut dec_dp: Vec<Vec<T>> = dec.iter().map(|g| zeros(g.patches_len())).collect();
    let mut dh = zeros(h);
    let mut dgi = zeros(3 * h);
    let mut dgh = zeros(3 * h);

    let mut sse = 0.0;
    for t in (0..pair.frames()).rev() {
        let s = &tape[t];
        let (x, y, c) = (&pair.noisy[t], &ys[t], &pair.clean[t]);

        // y = sigmoid(logit) * x
        for f in 0..x.len() {
            let d = y[f] - c[f];
            sse += d.to_f64().unwrap().powi(2);
            let m = s.mask[f];
            d_dec[NUM_LAYERS - 1][f] = scale * d * x[f] * m * (T::one() - m);
        }
        d_enc.iter_mut().for_each(|v| v.fill(T::zero()));

        for l in (0..NUM_LAYERS).rev() {
            let g = &dec[l];
            if l + 1 < NUM_LAYERS {
                for (d, &o) in d_dec[l].iter_mut().zip(&s.dec_out[l]) {
                    *d = *d * leaky_relu_grad(o);
                }
            }
            let [dw, db] = grads_mut(grads, [Param::DecWeight(l), Param::DecBias(l)]);
            g.backward(
                w.get(Param::DecWeight(l)).data(),
                &s.dec_patches[l],
                &d_dec[l],
                dw,
                db,
                &mut dec_dp[l],
            );
            let din = &mut d_dec_in[l];
            din.copy_from_slice(&dec_carry[l]);
            dec_carry[l].fill(T::zero());
            g.col2im(&dec_dp[l], din, &mut dec_carry[l]);
            for (a, &b) in d_enc[NUM_LAYERS - 1 - l].iter_mut().zip(din.iter()) {
                *a += b;
            }
            if l == 0 {
                dh.copy_from_slice(din);
            } else {
                d_dec[l - 1].copy_from_slice(din);
            }
        }

        // GRU: h = (1 - z) n + z h_prev, n = tanh(gi_n + r gh_n)
        let gs = &s.gru;
        let x_gru = &s.enc_out[NUM_LAYERS - 1];
        for j in 0..h {
            let d = dh[j] + h_carry[j];
            let (r, z, cand) = (gs.gates[j], gs.gates[h + j], gs.gates[2 * h + j]);
            let dz = d * (gs.h_prev[j] - cand);
            let dn = d * (T::one() - z) * (T::one() - cand * cand);
            let dr = dn * gs.gh[2 * h + j] * r * (T::one() - r);
            let dz = dz * z * (T::one() - z);
            dgi[j] = dr;
            dgi[h + j] = dz;
            dgi[2 * h + j] = dn;
            dgh[j] = dr;
            dgh[h + j] = dz;
            dgh[2 * h + j] = dn * r;
            h_carry[j] = d * z;
        }
        let [dw_ih, dw_hh, db_ih, db_hh] = grads_mut(
            grads,
            [
                Param::GruWeightIh,
                Param::GruWeightHh,
                Param::GruBiasIh,
                Param::GruBiasHh,
            ],
        );
        let w_ih = w.get(Param::GruWeightIh).data();
        let w_hh = w.get(Param::GruWeightHh).data();
        let nin = x_gru.len();
        for row in 0..3 * h {
            let (gi, gh) = (dgi[row], dgh[row]);
            db_ih[row] += gi;
            db_hh[row] += gh;
            axpy(&mut dw_ih[row * nin..(row + 1) * nin], gi, x_gru);
            axpy(&mut d_enc[NUM_LAYERS - 1], gi, &w_ih[row * nin..(row + 1) * nin]);
            axpy(&mut dw_hh[row * h..(row + 1) * h], gh, &gs.h_prev);
            axpy(&mut h_carry, gh, &w_hh[row * h..(row + 1) * h]);
        }

        for l in (0..NUM_LAYERS).rev() {
            let g = &enc[l];
            for (d, &o) in d_enc[l].iter_mut().zip(&s.enc_out[l]) {
                *d = *d * leaky_relu_grad(o);
            }
            let [dw, db] = grads_mut(grads, [Param::EncWeight(l), Param::EncBias(l)]);
            g.backward(
                w.get(Param::EncWeight(l)).data(),
                &s.enc_patches[l],
                &d_enc[l],
                dw,
                db,
                &mut enc_dp[l],
            );
            if l == 0 {
                break;
            }
            let din = &mut d_enc_in[l];
            din.copy_from_slice(&enc_carry[l]);
            enc_carry[l].fill(T::zero());
            g.col2im(&enc_dp[l], din, &mut enc_carry[l]);
            let (lower, _) = d_enc.split_at_mut(l);
            for (a, &b) in lower[l - 1].iter_mut().zip(din.iter()) {
                *a += b;
            }
        }
    }
    sse
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg("epochs and batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0
        {
            return Err(Error::arg("Adam betas must lie in [0, 1) and eps be positive"));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(spec: &ModelSpec, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f32>> = Param::all()
            .iter()
            .map(|&p| vec![0.0; spec.shape_of(p).iter().product()])
            .collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, w: &mut ModelWeights, g: &ModelWeights) -> Result<()> {
        if w.spec() != g.spec() || self.m[0].len() != w.get(Param::EncWeight(0)).len() {
            return Err(Error::arg("gradient, weights and optimizer state disagree on shapes"));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = (1.0 - self.beta1.powi(self.t)) as f32;
        let c2 = (1.0 - self.beta2.powi(self.t)) as f32;
        let (lr, eps) = (self.lr as f32, self.eps as f32);
        for p in Param::all() {
            let i = p.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in w.data_mut(p).iter_mut().zip(g.get(p).data()).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub weights: ModelWeights,
    /// Mean training loss of each epoch, measured before each batch's update.
    pub history: Vec<f64>,
}

/// Trains with Adam on shuffled mini-batches. Deterministic given the inputs.
pub fn train(w: &ModelWeights, data: &SynthDataset, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let pairs = data.pairs();
    check_batch(w.spec(), pairs)?;
    let mut weights = w.clone();
    let mut opt = Adam::new(w.spec(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i].clone()));
            let (l, g) = gradients(&weights, &batch)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss: l });
            }
            total += l * chunk.len() as f64;
            opt.step(&mut weights, &g)?;
        }
        history.push(total / pairs.len() as f64);
    }
    Ok(TrainResult { weights, history })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_sequences: usize,
    pub frames_per_sequence: usize,
    pub freq_bins: usize,
    /// Clean-to-noise power ratio of every sequence, in dB.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_sequences: 256,
            frames_per_sequence: 16,
            freq_bins: ModelSpec::DEFAULT_FREQ_BINS,
            snr_db: 0.0,
            seed: 42,
        }
    }
}

/// Magnitude-spectrogram denoising pairs. Clean frames are the sum of three
/// Gaussian ridges whose centres drift and which fade in and out over time;
/// noisy frames add a stationary coloured noise floor scaled to the target
/// SNR, so the pauses reveal the floor to a model with memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    config: SynthConfig,
    pairs: Vec<Pair>,
}

const RIDGES: usize = 3;
const NOISE_SPREAD: f64 = 0.1;

impl SynthDataset {
    pub fn generate(config: SynthConfig) -> Result<Self> {
        let SynthConfig {
            num_sequences,
            frames_per_sequence: frames,
            freq_bins: f,
            snr_db,
            seed,
        } = config;
        if num_sequences == 0 || frames == 0 || f == 0 {
            return Err(Error::arg("dataset sizes must be positive"));
        }
        if !snr_db.is_finite() {
            return Err(Error::arg("SNR must be finite"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs = f as f64;
        let unit = fs / 16.0;
        let mut pairs = Vec::with_capacity(num_sequences);
        for _ in 0..num_sequences {
            let ridges: Vec<[f64; 6]> = (0..RIDGES)
                .map(|_| {
                    [
                        rng.gen_range(0.15..0.85) * fs,
                        rng.gen_range(-0.25..0.25) * unit,
                        rng.gen_range(0.6..1.6) * unit,
                        rng.gen_range(0.4..1.0),
                        rng.gen_range(0.2..0.6),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    ]
                })
                .collect();
            let clean: Vec<Vec<f64>> = (0..frames)
                .map(|t| {
                    let t = t as f64;
                    (0..f)
                        .map(|k| {
                            ridges
                                .iter()
                                .map(|&[c0, v, sigma, amp, omega, phase]| {
                                    let c = reflect(c0 + v * t, fs - 1.0);
                                    let a = amp * (omega * t + phase).sin().max(0.0);
                                    a * (-0.5 * ((k as f64 - c) / sigma).powi(2)).exp()
                                })
                                .sum()
                        })
                        .collect()
                })
                .collect();
            // stationary coloured floor: a smooth per-sequence tilt and ripple,
            // fluctuating frame to frame around it
            let tilt: f64 = rng.gen_range(-1.5..1.5);
            let ripple: f64 = rng.gen_range(0.0..0.5);
            let cycles: f64 = rng.gen_range(0.5..2.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let profile: Vec<f64> = (0..f)
                .map(|k| {
                    let u = k as f64 / fs;
                    (tilt * (u - 0.5)).exp() * (1.0 + ripple * (std::f64::consts::TAU * cycles * u + phase).sin())
                })
                .collect();
            let noise: Vec<Vec<f64>> = (0..frames)
                .map(|_| {
                    profile
                        .iter()
                        .map(|p| p * rng.gen_range(1.0 - NOISE_SPREAD..1.0 + NOISE_SPREAD))
                        .collect()
                })
                .collect();
            let power = |v: &[Vec<f64>]| v.iter().flatten().map(|x| x * x).sum::<f64>();
            let s = (power(&clean) / (power(&noise).max(f64::MIN_POSITIVE) * 10f64.powf(snr_db / 10.0)))
                .sqrt();
            let noisy = clean
                .iter()
                .zip(&noise)
                .map(|(c, n)| c.iter().zip(n).map(|(c, n)| (c + s * n) as f32).collect())
                .collect();
            let clean = clean
                .iter()
                .map(|c| c.iter().map(|&x| x as f32).collect())
                .collect();
            pairs.push(Pair { noisy, clean });
        }
        Ok(Self { config, pairs })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }
}

/// Folds `x` back into `[0, hi]` as if bouncing off both ends.
fn reflect(x: f64, hi: f64) -> f64 {
    let period = 2.0 * hi;
    let m = x.rem_euclid(period);
    if m > hi {
        period - m
    } else {
        m
    }
}

#[derive(Clone, Debug)]
pub struct PruneVsDirect {
    pub target: NetworkParam,
    /// Held-out loss of the pruned model before any fine-tuning.
    pub pruned_eval_loss: f64,
    pub finetune_history: Vec<f64>,
    pub direct_history: Vec<f64>,
    pub finetuned_eval_loss: f64,
    pub direct_eval_loss: f64,
    pub finetuned: ModelWeights,
    pub direct: ModelWeights,
}

/// Arm A prunes `base` to `target` and fine-tunes for `cfg.epochs`; arm B
/// trains a fresh `target` model for `base_epochs + cfg.epochs`, the same
/// total budget the pruned model has seen.
pub fn experiment_prune_vs_direct(
    base: &ModelWeights,
    base_epochs: usize,
    target: NetworkParam,
    train_set: &SynthDataset,
    eval_set: &SynthDataset,
    cfg: &TrainConfig,
) -> Result<PruneVsDirect> {
    cfg.validate()?;
    let pruned = prune_structured(base, target)?;
    let pruned_eval_loss = loss(&pruned, eval_set.pairs())?;
    let a = train(&pruned, train_set, cfg)?;

    let spec = ModelSpec::new(target, base.spec().freq_bins)?;
    let fresh = build_model(spec, cfg.seed.wrapping_add(1));
    let direct_cfg = TrainConfig {
        epochs: base_epochs + cfg.epochs,
        ..*cfg
    };
    let b = train(&fresh, train_set, &direct_cfg)?;

    Ok(PruneVsDirect {
        target,
        pruned_eval_loss,
        finetuned_eval_loss: loss(&a.weights, eval_set.pairs())?,
        direct_eval_loss: loss(&b.weights, eval_set.pairs())?,
        finetune_history: a.history,
        direct_history: b.history,
        finetuned: a.weights,
        direct: b.weights,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrResult {
    pub learning_rate: f64,
    pub history: Vec<f64>,
    pub eval_loss: f64,
}

/// Prunes `base` to `target` once, then fine-tunes a copy per learning rate
/// with otherwise identical settings.
pub fn experiment_lr_sweep(
    base: &ModelWeights,
    target: NetworkParam,
    train_set: &SynthDataset,
    eval_set: &SynthDataset,
    cfg: &TrainConfig,
    lrs: &[f64],
) -> Result<Vec<LrResult>> {
    if lrs.is_empty() {
        return Err(Error::arg("learning-rate list is empty"));
    }
    let pruned = prune_structured(base, target)?;
    lrs.iter()
        .map(|&lr| {
            let run = train(
                &pruned,
                train_set,
                &TrainConfig {
                    learning_rate: lr,
                    ..*cfg
                },
            )?;
            Ok(LrResult {
                learning_rate: lr,
                eval_loss: loss(&run.weights, eval_set.pairs())?,
                history: run.history,
            })
        })
        .collect()
}

pub const HISTORY_CSV_HEADER: &str = "epoch,arm,loss";

/// Loss histories as `epoch,arm,loss` rows, epochs counted from 1.
pub fn history_csv(arms: &[(&str, &[f64])]) -> String {
    let mut out = String::from(HISTORY_CSV_HEADER);
    out.push('\n');
    for (arm, hist) in arms {
        for (e, l) in hist.iter().enumerate() {
            out.push_str(&format!("{},{arm},{l:.9e}\n", e + 1));
        }
    }
    out
}
