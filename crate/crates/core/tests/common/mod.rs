#![allow(dead_code)]

use prunebench::model::coupling_groups;
use prunebench::{build_model, ModelSpec, ModelWeights, NetworkParam, Param};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Multiplies every entry at `coord` along `axis` by `factor`.
pub fn scale_slice(w: &mut ModelWeights, p: Param, axis: usize, coord: usize, factor: f32) {
    let shape = w.get(p).shape().to_vec();
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let data = w.data_mut(p);
    for o in 0..outer {
        let start = (o * shape[axis] + coord) * inner;
        data[start..start + inner].iter_mut().for_each(|x| *x *= factor);
    }
}

/// A random model in which every channel outside a random kept set, sized
/// to `target`, has its consumer slices zeroed and its producer slices
/// shrunk, so that it cannot influence the output and scores lowest.
pub fn dead_channel_model(spec: ModelSpec, target: NetworkParam, seed: u64) -> ModelWeights {
    let mut w = build_model(spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    for g in coupling_groups(&spec) {
        let n = g.channels(&spec);
        let keep = sample(&mut rng, n, target.c(g.target)).into_vec();
        for j in (0..n).filter(|j| !keep.contains(j)) {
            for e in &g.entries {
                let factor = if e.axis == 1 { 0.0 } else { 0.01 };
                for coord in e.coords(j, n) {
                    scale_slice(&mut w, e.param, e.axis, coord, factor);
                }
            }
        }
    }
    w
}

/// A random monotone vector with every entry at most `big`'s.
pub fn random_target(big: NetworkParam, rng: &mut impl Rng) -> NetworkParam {
    let b = big.channels();
    let mut c = [0; 4];
    let mut lo = 1;
    for i in 0..4 {
        c[i] = rng.gen_range(lo..=b[i]);
        lo = c[i];
    }
    NetworkParam::new(c).unwrap()
}

pub fn random_frames(frames: usize, f: usize, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    (0..frames)
        .map(|_| (0..f).map(|_| rng.gen_range(0.0..2.0)).collect())
        .collect()
}

pub fn max_abs_diff(a: &[Vec<f32>], b: &[Vec<f32>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}

/// Builds one construction for trial `i` and returns the output gap
/// between the full and the pruned model.
pub fn pruned_forward_gap(i: u64) -> f64 {
    use prunebench::inference::forward_sequence;
    use prunebench::pruning::prune_structured;

    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
    let f = [16, 32][rng.gen_range(0..2)];
    let mut c = [0; 4];
    let mut lo = 1;
    for ci in c.iter_mut() {
        *ci = rng.gen_range(lo..lo + 6);
        lo = *ci;
    }
    let big = NetworkParam::new(c).unwrap();
    let spec = ModelSpec::new(big, f).unwrap();
    let target = random_target(big, &mut rng);
    let w = dead_channel_model(spec, target, i);
    let pruned = prune_structured(&w, target).unwrap();
    assert_eq!(pruned.spec().params, target);
    let xs = random_frames(6, f, &mut rng);
    max_abs_diff(
        &forward_sequence(&w, &xs).unwrap(),
        &forward_sequence(&pruned, &xs).unwrap(),
    )
}

/// Central differences of the loss on a float64 model.
pub fn finite_difference_gradient(
    w: &ModelWeights<f64>,
    pairs: &[prunebench::training::Pair<f64>],
    h: f64,
) -> ModelWeights<f64> {
    use prunebench::training::loss;
    let mut out = ModelWeights::<f64>::zeros(*w.spec());
    let mut probe = w.clone();
    for p in Param::all() {
        for i in 0..w.get(p).len() {
            let orig = w.get(p).data()[i];
            probe.data_mut(p)[i] = orig + h;
            let up = loss(&probe, pairs).unwrap();
            probe.data_mut(p)[i] = orig - h;
            let down = loss(&probe, pairs).unwrap();
            probe.data_mut(p)[i] = orig;
            out.data_mut(p)[i] = (up - down) / (2.0 * h);
        }
    }
    out
}
