//! Sensor ingestion, windowing, normalisation, subject-level splits and a
//! synthetic activity generator.

mod recording;
mod split;
mod synth;
mod window;

pub use recording::{downsample, load_csv, write_csv, Recording, RATIO_TOLERANCE};
pub use split::{make_folds, pretrain_split, sample_limited_labels, subsample_fraction, Fold, FoldPlan};
pub use synth::{class_amplitude, class_frequency, synth_generate, NOISE_STD, SEGMENT_SECONDS, SUBJECT_GAIN};
pub use window::{
    make_windows, window_all, window_label, window_samples, zscore_apply, zscore_fit, WindowedDataset, ZScore, CHANNELS,
    STD_FLOOR,
};
