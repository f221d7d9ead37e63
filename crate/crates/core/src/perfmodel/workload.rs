use crate::archspace::{DenseShape, DiscreteArch, SearchSpaceSpec, BYTES_PER_VALUE};
use crate::Result;

/// Per-sample cost of one network layer, the output of network analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerWorkload {
    pub label: String,
    pub macs: u64,
    pub weight_bytes: u64,
    pub in_bytes: u64,
    pub out_bytes: u64,
    pub out_features: u64,
    pub in_features: u64,
    /// Dense products making up the layer, in execution order. Empty for
    /// parameter-free layers.
    pub sub_ops: Vec<DenseShape>,
}

impl LayerWorkload {
    /// A single dense `in -> out` layer.
    pub fn dense(label: impl Into<String>, in_features: u64, out_features: u64) -> Self {
        let shape = DenseShape {
            out_features,
            in_features,
        };
        Self {
            label: label.into(),
            macs: shape.macs(),
            weight_bytes: shape.macs() * BYTES_PER_VALUE,
            in_bytes: in_features * BYTES_PER_VALUE,
            out_bytes: out_features * BYTES_PER_VALUE,
            out_features,
            in_features,
            sub_ops: vec![shape],
        }
    }

    /// A layer that does no work and moves no data.
    pub fn empty(label: impl Into<String>, features: u64) -> Self {
        Self {
            label: label.into(),
            macs: 0,
            weight_bytes: 0,
            in_bytes: 0,
            out_bytes: 0,
            out_features: features,
            in_features: features,
            sub_ops: Vec::new(),
        }
    }

    /// Streamed bytes when weights must come from DRAM.
    pub(crate) fn streamed_bytes(&self, weights_resident: bool) -> u64 {
        let weights = if weights_resident { 0 } else { self.weight_bytes };
        weights + self.in_bytes + self.out_bytes
    }
}

/// Stem, one workload per mixed layer, and head.
pub fn workload_of(arch: &DiscreteArch, space: &SearchSpaceSpec) -> Result<Vec<LayerWorkload>> {
    arch.check_for(space)?;
    let h = space.hidden_width() as u64;
    let mut out = Vec::with_capacity(arch.len() + 2);
    out.push(LayerWorkload::dense("stem", space.input_dim() as u64, h));
    for (l, &op) in arch.ops().iter().enumerate() {
        let block = space.block(op);
        let label = format!("layer{l}:{}", block.name());
        if block.is_parameter_free() {
            out.push(LayerWorkload::empty(label, h));
        } else {
            out.push(LayerWorkload {
                label,
                macs: block.macs_per_sample,
                weight_bytes: block.weight_bytes,
                in_bytes: h * BYTES_PER_VALUE,
                out_bytes: block.activation_bytes,
                out_features: h,
                in_features: h,
                sub_ops: block.sub_ops(space.hidden_width()),
            });
        }
    }
    out.push(LayerWorkload::dense("head", h, space.num_classes() as u64));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_dense_layers_cost_h_squared() {
        let space = SearchSpaceSpec::desk_default();
        let w = workload_of(&DiscreteArch::uniform(0, 6), &space).unwrap();
        assert_eq!(w.len(), 8);
        for layer in &w[1..7] {
            assert_eq!(layer.macs, 32 * 32);
            assert_eq!(layer.weight_bytes, 2 * 32 * 32);
        }
    }

    #[test]
    fn identity_layers_are_free() {
        let space = SearchSpaceSpec::desk_default();
        let w = workload_of(&DiscreteArch::uniform(3, 6), &space).unwrap();
        for layer in &w[1..7] {
            assert_eq!((layer.macs, layer.weight_bytes), (0, 0));
        }
    }

    #[test]
    fn stem_and_head() {
        let space = SearchSpaceSpec::desk_default();
        let w = workload_of(&DiscreteArch::uniform(1, 6), &space).unwrap();
        assert_eq!((w[0].macs, w[0].weight_bytes), (16 * 32, 16 * 32 * 2));
        assert_eq!((w[7].macs, w[7].in_features, w[7].out_features), (32 * 4, 32, 4));
        assert_eq!(w[1].sub_ops.len(), 2);
    }

    #[test]
    fn rejects_invalid_arch() {
        let space = SearchSpaceSpec::desk_default();
        assert!(workload_of(&DiscreteArch::new(vec![0; 5]), &space).is_err());
        assert!(workload_of(&DiscreteArch::new(vec![7; 6]), &space).is_err());
    }
}
