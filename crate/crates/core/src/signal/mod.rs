//! Synthetic IQ frames: modulation, channel impairments and dataset files.

mod channel;
mod dataset;
mod modulate;
mod rng;
mod scheme;

pub use channel::{apply_channel, distort, ChannelSpec, Multipath};
pub use dataset::{
    frames_to_tensor, snr_range, synth_dataset, synth_frame, Dataset, DatasetMeta, IQFrame,
    ImpairmentProfile, ImpairmentRanges, MultipathRange, SynthConfig, DATASET_VERSION, DATA_FILE,
    META_FILE,
};
pub use modulate::{
    map_bits, modulate, pulse_shape, rrc_taps, DEFAULT_SAMPLES_PER_SYMBOL, RRC_ROLLOFF, RRC_SPAN,
};
pub use rng::stream_rng;
pub use scheme::{ModulationScheme, SchemeKind};
