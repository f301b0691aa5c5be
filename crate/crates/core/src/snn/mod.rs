//! PLIF spiking layers, building blocks, multi-scale fusion and network
//! assembly.

pub mod blocks;
pub mod checkpoint;
pub mod fusion;
pub mod network;
pub mod plif;

pub use blocks::{
    solve_upsample, ConvBnPlif, DeconvBlock, DenseBlock, ExtraBlock, SewResBlock, SpikingDenseEnh, Transition,
    UpsampleAxis,
};
pub use fusion::{Enhancement, FusionSpec, PyramidBlock, Spes, SpesVariant, SpikingFusion};
pub use network::{
    build_classifier, build_detector_backbone, Backbone, BackboneConfig, Classifier, ClassifierConfig,
    ClassifierOutput, DetectorBackbone, DetectorConfig, ExtraConfig, FusionMode, StageConfig,
};
pub use plif::{Neurons, PlifNeuron, SpikeCounter};

#[cfg(test)]
mod tests;
