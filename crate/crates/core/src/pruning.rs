//! Magnitude pruning.
//!
//! Structured pruning keeps, for each shrinking `c_i`, the channels with the
//! largest summed slice norms over the whole coupling group and slices every
//! coupled axis with that one index set. Picking `k` coordinates that
//! maximise a sum of non-negative scores is exactly top-`k` selection.
//!
//! Unstructured pruning zeroes the smallest-magnitude GRU weights in place.

use crate::error::{Error, Result};
use crate::model::{coupling_groups, CouplingGroup, ModelSpec, ModelWeights, NetworkParam, Param};
use crate::tensor::Tensor;

/// Strictly ascending list of kept coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>, bound: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg(format!("indices {indices:?} are not strictly ascending")));
        }
        if indices.last().is_some_and(|&i| i >= bound) {
            return Err(Error::arg(format!("indices {indices:?} exceed dimension {bound}")));
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The `k` highest-scoring coordinates, ties going to the lower index.
pub fn select_top_coordinates(scores: &[f64], k: usize) -> Result<IndexSet> {
    if k == 0 || k > scores.len() {
        return Err(Error::arg(format!(
            "k = {k} must be between 1 and {}",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    IndexSet::new(order, scores.len())
}

fn group_scores<'a>(
    get: impl Fn(Param) -> &'a Tensor,
    group: &CouplingGroup,
    channels: usize,
) -> Result<Vec<f64>> {
    let mut scores = vec![0.0; channels];
    for e in &group.entries {
        let t = get(e.param);
        let len = t.shape().get(e.axis).copied().unwrap_or(0);
        if len != e.axis_len(channels) {
            return Err(Error::Internal(format!(
                "{} axis {} has length {len}, expected {} for {channels} channels",
                e.param.name(),
                e.axis,
                e.axis_len(channels)
            )));
        }
        for (j, s) in scores.iter_mut().enumerate() {
            for coord in e.coords(j, channels) {
                *s += t.slice_norm(e.axis, coord)?;
            }
        }
    }
    Ok(scores)
}

/// Per-channel score: the sum of L2 slice norms of every coordinate the
/// channel owns across the group's tensors.
pub fn channel_scores(w: &ModelWeights, group: &CouplingGroup) -> Result<Vec<f64>> {
    group_scores(|p| w.get(p), group, group.channels(w.spec()))
}

/// Shrinks `w` to `target`, processing `c4`, `c3`, `c2`, `c1` in turn and
/// rescoring after each step.
pub fn prune_structured(w: &ModelWeights, target: NetworkParam) -> Result<ModelWeights> {
    let current = w.spec().params;
    if !target.fits_within(&current) {
        return Err(Error::arg(format!(
            "target [{target}] exceeds current channels [{current}]"
        )));
    }
    let groups = coupling_groups(w.spec());
    let mut tensors: Vec<Tensor> = w.tensors().map(|(_, t)| t.clone()).collect();
    let mut channels = current.channels();

    for group in groups.iter().rev() {
        let idx = group.target - 1;
        let keep = target.channels()[idx];
        if keep == channels[idx] {
            continue;
        }
        let scores = group_scores(|p| &tensors[p.index()], group, channels[idx])?;
        let kept = select_top_coordinates(&scores, keep)?;
        for e in &group.entries {
            let coords = e.expand(kept.as_slice(), channels[idx]);
            let slot = &mut tensors[e.param.index()];
            *slot = slot.take_along_axis(e.axis, &coords)?;
        }
        channels[idx] = keep;
    }

    let spec = ModelSpec::new(target, w.spec().freq_bins)?;
    ModelWeights::new(spec, tensors)
        .map_err(|e| Error::Internal(format!("pruned weights do not match target: {e}")))
}

/// The GRU weight matrices touched by unstructured pruning. Biases are left alone.
pub const SPARSE_TARGETS: [Param; 2] = [Param::GruWeightIh, Param::GruWeightHh];

/// Zeroes the `floor(frac * len)` smallest-magnitude entries of each GRU
/// weight matrix independently. Convolutions and biases are untouched.
pub fn prune_unstructured(w: &ModelWeights, frac_gru: f64) -> Result<ModelWeights> {
    if !(0.0..=1.0).contains(&frac_gru) {
        return Err(Error::arg(format!(
            "GRU sparsity fraction must lie in [0, 1], got {frac_gru}"
        )));
    }
    let mut out = w.clone();
    for p in SPARSE_TARGETS {
        zero_smallest(out.data_mut(p), frac_gru);
    }
    Ok(out)
}

fn zero_smallest(data: &mut [f32], frac: f64) {
    let n = (frac * data.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[a].abs().total_cmp(&data[b].abs()).then(a.cmp(&b)));
    for &i in &order[..n.min(data.len())] {
        data[i] = 0.0;
    }
}

/// Fraction of exactly-zero entries across the GRU weight matrices.
pub fn gru_sparsity(w: &ModelWeights) -> f64 {
    let (zeros, total) = SPARSE_TARGETS.iter().fold((0usize, 0usize), |(z, n), &p| {
        let d = w.get(p).data();
        (z + d.iter().filter(|x| **x == 0.0).count(), n + d.len())
    });
    zeros as f64 / total as f64
}
