//! Tensor axes that have to shrink together when one `c_i` is pruned.

use super::{ModelSpec, Param, GRU_GATES, NUM_LAYERS};

/// One coupled axis. Channel `j` of the group owns coordinates
/// `gate * count * group + j * group + b` for `b < group` and, if
/// `gate_stacked`, every `gate < 3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CouplingEntry {
    pub param: Param,
    pub axis: usize,
    pub group: usize,
    pub gate_stacked: bool,
}

impl CouplingEntry {
    fn plain(param: Param, axis: usize) -> Self {
        Self {
            param,
            axis,
            group: 1,
            gate_stacked: false,
        }
    }

    pub fn gates(&self) -> usize {
        if self.gate_stacked {
            GRU_GATES
        } else {
            1
        }
    }

    /// Axis length implied by `channels` channels.
    pub fn axis_len(&self, channels: usize) -> usize {
        self.gates() * channels * self.group
    }

    /// Coordinates along the axis owned by `channel` when the group has
    /// `channels` channels in total.
    pub fn coords(&self, channel: usize, channels: usize) -> impl Iterator<Item = usize> + '_ {
        let block = channels * self.group;
        let start = channel * self.group;
        (0..self.gates()).flat_map(move |g| (0..self.group).map(move |b| g * block + start + b))
    }

    /// Expands a set of kept channels into the ascending coordinate list along the axis.
    pub fn expand(&self, kept: &[usize], channels: usize) -> Vec<usize> {
        let block = channels * self.group;
        let mut out = Vec::with_capacity(self.gates() * kept.len() * self.group);
        for g in 0..self.gates() {
            for &j in kept {
                out.extend((0..self.group).map(|b| g * block + j * self.group + b));
            }
        }
        out
    }
}

/// The axes resized by one entry of the channel vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CouplingGroup {
    /// 1-based index `i` of the `c_i` this group resizes.
    pub target: usize,
    pub entries: Vec<CouplingEntry>,
}

impl CouplingGroup {
    pub fn channels(&self, spec: &ModelSpec) -> usize {
        spec.params.c(self.target)
    }
}

/// Returns the four coupling groups, ordered `c1..c4`.
///
/// For `c_i` with `i < 4` the group ties encoder `i` outputs, encoder `i+1`
/// inputs, and the decoder pair joined to encoder `i` by the skip
/// connection. The `c4` group also holds every GRU axis: hidden unit `k`
/// belongs to channel `k / B` because the GRU sees the flattened `(c4, B)`
/// bottleneck.
pub fn coupling_groups(spec: &ModelSpec) -> Vec<CouplingGroup> {
    let mut groups = Vec::with_capacity(NUM_LAYERS);
    for i in 1..NUM_LAYERS {
        let enc = i - 1;
        let dec_out = NUM_LAYERS - 1 - i;
        let dec_in = NUM_LAYERS - i;
        groups.push(CouplingGroup {
            target: i,
            entries: vec![
                CouplingEntry::plain(Param::EncWeight(enc), 0),
                CouplingEntry::plain(Param::EncBias(enc), 0),
                CouplingEntry::plain(Param::EncWeight(enc + 1), 1),
                CouplingEntry::plain(Param::DecWeight(dec_out), 0),
                CouplingEntry::plain(Param::DecBias(dec_out), 0),
                CouplingEntry::plain(Param::DecWeight(dec_in), 1),
            ],
        });
    }

    let b = spec.bins_after_encoder();
    let gru = |param, axis, gate_stacked| CouplingEntry {
        param,
        axis,
        group: b,
        gate_stacked,
    };
    groups.push(CouplingGroup {
        target: NUM_LAYERS,
        entries: vec![
            CouplingEntry::plain(Param::EncWeight(NUM_LAYERS - 1), 0),
            CouplingEntry::plain(Param::EncBias(NUM_LAYERS - 1), 0),
            gru(Param::GruWeightIh, 0, true),
            gru(Param::GruWeightIh, 1, false),
            gru(Param::GruWeightHh, 0, true),
            gru(Param::GruWeightHh, 1, false),
            gru(Param::GruBiasIh, 0, true),
            gru(Param::GruBiasHh, 0, true),
            CouplingEntry::plain(Param::DecWeight(0), 1),
        ],
    });
    groups
}
