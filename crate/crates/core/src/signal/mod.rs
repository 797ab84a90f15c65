//! Waveform and multichannel containers plus the level, mixing, segmentation
//! and resampling operations shared by the rest of the crate.

mod buffer;
pub mod matrix;
mod resample;
pub mod wav;

pub use buffer::{
    mix_at_snr, normalize_rms, rms, segment, MultiChannelSeries, SampleBuffer, SegmentationSpec,
    TimeSeries, MIX_TARGET_RMS,
};
pub use resample::{resample, resample_slice, Resample, Resampler};
pub(crate) use buffer::scale_pair;
