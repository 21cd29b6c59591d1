use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::Signal;
use crate::error::{Error, Result};
use crate::plant::{ingest_measured_pair, Plant};

pub const DEFAULT_SEGMENT_LEN: usize = 65536;

/// Segmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub segment_length: usize,
    /// Fraction of segments used for training; the tail is validation.
    pub train_fraction: f64,
    /// Round both signals to 32-bit floats so in-memory datasets match
    /// their float WAV files exactly.
    pub quantize_f32: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            segment_length: DEFAULT_SEGMENT_LEN,
            train_fraction: 0.9,
            quantize_f32: true,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_length < 2 {
            return Err(Error::Config("segment length must be at least 2".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Aligned input/output recordings cut into equal segments. The first
/// `n_train` segments train, the rest validate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input: Signal,
    output: Signal,
    segment_len: usize,
    n_train: usize,
    n_val: usize,
    pub provenance: String,
}

impl Dataset {
    /// Cuts an aligned pair into segments; any tail shorter than a segment
    /// is dropped.
    pub fn from_pair(u: Signal, y: Signal, cfg: &SegmentationConfig, provenance: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        if u.len() != y.len() {
            return Err(Error::Signal(format!(
                "input has {} samples, output {}",
                u.len(),
                y.len()
            )));
        }
        if u.sample_rate() != y.sample_rate() {
            return Err(Error::Signal("input and output sample rates differ".into()));
        }
        let seg = cfg.segment_length;
        let count = u.len() / seg;
        if count < 2 {
            return Err(Error::Signal(format!(
                "{} samples give {count} segment(s) of {seg}; need at least 2",
                u.len()
            )));
        }
        let n_train = ((count as f64 * cfg.train_fraction).round() as usize).clamp(1, count - 1);
        let (u, y) = (u.truncated(count * seg), y.truncated(count * seg));
        let (u, y) = if cfg.quantize_f32 {
            (u.quantized_f32(), y.quantized_f32())
        } else {
            (u, y)
        };
        Ok(Dataset {
            input: u,
            output: y,
            segment_len: seg,
            n_train,
            n_val: count - n_train,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.n_train + self.n_val
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_validation(&self) -> usize {
        self.n_val
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.input.sample_rate()
    }

    pub fn input(&self) -> &Signal {
        &self.input
    }

    pub fn output(&self) -> &Signal {
        &self.output
    }

    pub fn split(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else {
            Split::Validation
        }
    }

    /// Input and output samples of segment `index`.
    pub fn segment(&self, index: usize) -> (&[f64], &[f64]) {
        let r = index * self.segment_len..(index + 1) * self.segment_len;
        (&self.input.samples()[r.clone()], &self.output.samples()[r])
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.n_train
    }

    pub fn validation_indices(&self) -> std::ops::Range<usize> {
        self.n_train..self.len()
    }

    /// Segment index file: one `index,start,length,split` row per segment.
    pub fn index_csv(&self) -> String {
        let mut s = String::from("index,start,length,split\n");
        for i in 0..self.len() {
            let tag = match self.split(i) {
                Split::Train => "train",
                Split::Validation => "validation",
            };
            let _ = writeln!(s, "{i},{},{},{tag}", i * self.segment_len, self.segment_len);
        }
        s
    }

    /// Reads a dataset back from its input/output WAV pair.
    pub fn from_wav_pair(
        input_path: impl AsRef<Path>,
        output_path: impl AsRef<Path>,
        cfg: &SegmentationConfig,
    ) -> Result<Self> {
        let (ip, op) = (input_path.as_ref(), output_path.as_ref());
        let (u, y) = ingest_measured_pair(ip, op)?;
        Dataset::from_pair(u, y, cfg, format!("files:{},{}", ip.display(), op.display()))
    }
}

/// Drives `plant` with `u` and segments the pair.
pub fn build_dataset(
    u: &Signal,
    plant: &Plant,
    seed: u64,
    cfg: &SegmentationConfig,
    provenance: impl Into<String>,
) -> Result<Dataset> {
    if u.len() < 2 * cfg.segment_length {
        return Err(Error::Signal(format!(
            "{} samples is below two segments of {}",
            u.len(),
            cfg.segment_length
        )));
    }
    let y = plant.simulate(u, seed);
    Dataset::from_pair(u.clone(), y, cfg, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantSpec;

    fn ramp(len: usize) -> Signal {
        Signal::from_fn(len, 44100, |t| ((t % 1000) as f64 / 1000.0) - 0.5).unwrap()
    }

    #[test]
    fn two_segments_split_in_half() {
        let cfg = SegmentationConfig {
            train_fraction: 0.5,
            ..SegmentationConfig::default()
        };
        let ds = build_dataset(&ramp(131072), &Plant::Identity, 0, &cfg, "t").unwrap();
        assert_eq!((ds.n_train(), ds.n_validation()), (1, 1));
        assert_eq!(ds.split(1), Split::Validation);
    }

    #[test]
    fn below_two_segments_is_an_error() {
        let cfg = SegmentationConfig::default();
        assert!(build_dataset(&ramp(65535), &Plant::Identity, 0, &cfg, "t").is_err());
        assert!(build_dataset(&ramp(131071), &Plant::Identity, 0, &cfg, "t").is_err());
    }

    #[test]
    fn tail_is_dropped_and_split_rounds() {
        let cfg = SegmentationConfig {
            segment_length: 100,
            ..SegmentationConfig::default()
        };
        let ds = build_dataset(&ramp(1055), &Plant::Identity, 0, &cfg, "t").unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.n_train(), 9);
        assert_eq!(ds.input().len(), 1000);
        let (u, y) = ds.segment(3);
        assert_eq!(u.len(), 100);
        assert_eq!(u, y);
        assert_eq!(u[0], ds.input().samples()[300]);
    }

    #[test]
    fn outputs_come_from_the_plant() {
        let cfg = SegmentationConfig {
            segment_length: 64,
            quantize_f32: false,
            ..SegmentationConfig::default()
        };
        let plant = PlantSpec::pure_delay(5).build(44100).unwrap();
        let ds = build_dataset(&ramp(640), &plant, 0, &cfg, "t").unwrap();
        let (u, y) = (ds.input().samples(), ds.output().samples());
        assert_eq!(&y[5..], &u[..635]);
    }

    #[test]
    fn index_csv_lists_every_segment() {
        let cfg = SegmentationConfig {
            segment_length: 100,
            ..SegmentationConfig::default()
        };
        let ds = build_dataset(&ramp(1000), &Plant::Identity, 0, &cfg, "t").unwrap();
        let csv = ds.index_csv();
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.ends_with("9,900,100,validation\n"));
    }
}
