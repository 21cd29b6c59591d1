//! Run configuration: one TOML document with a section per stage. Every
//! field has a default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricSettings;
use crate::nn::{Emphasis, TrainSchedule, WaveNetConfig};
use crate::pipeline::{ClassWeights, CorpusConfig, SegmentationConfig, TrainOptions};
use crate::plant::PlantSpec;
use crate::volterra::{NlmsConfig, VolterraSizes};

/// The emphasis filter has unit gain here.
pub const EMPHASIS_REFERENCE_HZ: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub peak: f64,
    pub clip_secs: f64,
    pub level_range_db: f64,
    pub corpus_seed: u64,
    /// Seeds the plant noise.
    pub plant_seed: u64,
    pub segment_length: usize,
    pub train_fraction: f64,
    pub quantize_f32: bool,
    pub weights: ClassWeights,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let c = CorpusConfig::default();
        let s = SegmentationConfig::default();
        DatasetSection {
            duration_secs: c.duration_secs,
            sample_rate: c.sample_rate,
            peak: c.peak,
            clip_secs: c.clip_secs,
            level_range_db: c.level_range_db,
            corpus_seed: c.seed,
            plant_seed: 7,
            segment_length: s.segment_length,
            train_fraction: s.train_fraction,
            quantize_f32: s.quantize_f32,
            weights: c.weights,
        }
    }
}

impl DatasetSection {
    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig {
            duration_secs: self.duration_secs,
            sample_rate: self.sample_rate,
            peak: self.peak,
            clip_secs: self.clip_secs,
            level_range_db: self.level_range_db,
            weights: self.weights.clone(),
            seed: self.corpus_seed,
        }
    }

    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig {
            segment_length: self.segment_length,
            train_fraction: self.train_fraction,
            quantize_f32: self.quantize_f32,
        }
    }
}

/// Volterra baseline, linear reference and the white-noise probe used to
/// identify both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolterraSection {
    pub n1: usize,
    pub n2: usize,
    pub step_mu: f64,
    pub regularization: f64,
    pub passes: usize,
    pub probe_secs: f64,
    pub probe_rms: f64,
    pub probe_seed: u64,
    pub linref_taps: usize,
    /// Delay `D` of the linear reference and of the linear inverse.
    pub target_delay: usize,
    pub inverse_length: usize,
    /// Samples of the response kept ahead of the linear-reference peak when
    /// aligning the Volterra kernels.
    pub alignment_margin: usize,
}

impl Default for VolterraSection {
    fn default() -> Self {
        let n = NlmsConfig::default();
        let s = VolterraSizes::default();
        VolterraSection {
            n1: s.n1,
            n2: s.n2,
            step_mu: n.step_mu,
            regularization: n.regularization,
            passes: n.passes,
            probe_secs: 45.0,
            probe_rms: 0.15,
            probe_seed: 3,
            linref_taps: 512,
            target_delay: 100,
            inverse_length: 4 * s.n1,
            alignment_margin: 40,
        }
    }
}

impl VolterraSection {
    pub fn nlms(&self) -> NlmsConfig {
        NlmsConfig {
            step_mu: self.step_mu,
            regularization: self.regularization,
            passes: self.passes,
        }
    }

    pub fn sizes(&self) -> VolterraSizes {
        VolterraSizes {
            n1: self.n1,
            n2: self.n2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    /// Samples kept ahead of the estimated plant latency when choosing the
    /// identified model's bulk delay.
    pub bulk_delay_margin: usize,
    pub max_bulk_lag: usize,
    pub stft: StftConfig,
    /// Corner of the emphasis filter applied to both signals before the
    /// loss; 0 disables it.
    pub loss_emphasis_hz: f64,
    /// Number of emphasis sections; each adds 6 dB per octave of tilt.
    pub loss_emphasis_order: usize,
    pub identification: TrainSchedule,
    pub inverse: TrainSchedule,
}

impl TrainSection {
    pub fn emphasis(&self, sample_rate: u32) -> Result<Option<Emphasis>> {
        if self.loss_emphasis_hz == 0.0 {
            return Ok(None);
        }
        Emphasis::new(
            self.loss_emphasis_hz,
            self.loss_emphasis_order,
            EMPHASIS_REFERENCE_HZ,
            sample_rate,
        ).map(Some)
    }

    fn options(&self, schedule: &TrainSchedule, seed: u64, sample_rate: u32) -> Result<TrainOptions> {
        Ok(TrainOptions {
            schedule: schedule.clone(),
            stft: self.stft.clone(),
            emphasis: self.emphasis(sample_rate)?,
            seed,
        })
    }

    pub fn identification_options(&self, sample_rate: u32) -> Result<TrainOptions> {
        self.options(&self.identification, self.seed, sample_rate)
    }

    pub fn inverse_options(&self, sample_rate: u32) -> Result<TrainOptions> {
        self.options(&self.inverse, self.seed.wrapping_add(1), sample_rate)
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            seed: 0,
            bulk_delay_margin: 64,
            max_bulk_lag: 4096,
            stft: StftConfig::default(),
            loss_emphasis_hz: 0.0,
            loss_emphasis_order: 2,
            identification: TrainSchedule::identification(),
            inverse: TrainSchedule::inverse(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Run directory; relative paths resolve against the working directory.
    pub run_dir: PathBuf,
    /// Measured input WAV; with `output_wav` it replaces the synthetic corpus.
    pub input_wav: String,
    pub output_wav: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            run_dir: PathBuf::from("run"),
            input_wav: String::new(),
            output_wav: String::new(),
        }
    }
}

impl PathsSection {
    pub fn measured_pair(&self) -> Option<(PathBuf, PathBuf)> {
        if self.input_wav.is_empty() && self.output_wav.is_empty() {
            None
        } else {
            Some((PathBuf::from(&self.input_wav), PathBuf::from(&self.output_wav)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSpec,
    pub dataset: DatasetSection,
    pub wavenet_id: WaveNetConfig,
    pub wavenet_inv: WaveNetConfig,
    pub volterra: VolterraSection,
    pub train: TrainSection,
    pub metrics: MetricSettings,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            plant: PlantSpec::paper_like(),
            dataset: DatasetSection::default(),
            wavenet_id: WaveNetConfig::identification_preset(),
            wavenet_inv: WaveNetConfig::compensation_preset(),
            volterra: VolterraSection::default(),
            train: TrainSection::default(),
            metrics: MetricSettings::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale run: toy networks, 4096-sample segments, normalized
    /// spectrogram loss, first-order loss emphasis and a faster learning
    /// rate schedule.
    pub fn desk() -> Self {
        let mut cfg = RunConfig {
            wavenet_id: WaveNetConfig::toy_identification(),
            wavenet_inv: WaveNetConfig::toy_inverse(),
            ..RunConfig::default()
        };
        cfg.dataset.segment_length = 4096;
        cfg.train.stft.normalized = true;
        cfg.train.loss_emphasis_hz = 100.0;
        cfg.train.loss_emphasis_order = 1;
        for s in [&mut cfg.train.identification, &mut cfg.train.inverse] {
            s.lr0 = 3e-3;
            s.plateau_factor = 0.5;
            s.plateau_patience = 2;
        }
        cfg.train.identification.time_budget_secs = 27.0 * 60.0;
        cfg.train.inverse.time_budget_secs = 45.0 * 60.0;
        cfg
    }

    /// Reseeds every random stream from one number; seed 0 gives the
    /// default seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.dataset.corpus_seed = seed.wrapping_add(1);
        self.volterra.probe_seed = seed.wrapping_add(3);
        self.dataset.plant_seed = seed.wrapping_add(7);
        self
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(RunConfig::default()),
            "desk" => Ok(RunConfig::desk()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected paper or desk)"
            ))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as toml")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.corpus().validate()?;
        self.dataset.segmentation().validate()?;
        self.wavenet_id.validate()?;
        self.wavenet_inv.validate()?;
        if !self.wavenet_inv.output_tanh {
            return Err(Error::Config("wavenet_inv.output_tanh must be true".into()));
        }
        self.volterra.nlms().validate()?;
        let v = &self.volterra;
        if v.n1 == 0 || v.n2 == 0 || v.linref_taps == 0 || v.inverse_length == 0 {
            return Err(Error::Config("volterra sizes must be positive".into()));
        }
        if !(v.probe_secs > 0.0 && v.probe_rms > 0.0) {
            return Err(Error::Config("volterra probe must have positive length and level".into()));
        }
        self.train.stft.validate()?;
        self.train.emphasis(self.dataset.sample_rate)?;
        self.train.identification.validate()?;
        self.train.inverse.validate()?;
        self.metrics.validate()?;
        if self.metrics.sample_rate != self.dataset.sample_rate {
            return Err(Error::Config(format!(
                "metrics sample rate {} differs from dataset sample rate {}",
                self.metrics.sample_rate, self.dataset.sample_rate
            )));
        }
        if self.plant.oversample != 1 && self.plant.oversample != 2 {
            return Err(Error::Config("plant.oversample must be 1 or 2".into()));
        }
        let seg = self.dataset.segment_length;
        for (name, net) in [("wavenet_id", &self.wavenet_id), ("wavenet_inv", &self.wavenet_inv)] {
            if net.receptive_field() >= seg {
                return Err(Error::Config(format!(
                    "{name} receptive field {} is not below the segment length {seg}",
                    net.receptive_field()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::DEFAULT_SEGMENT_LEN;

    #[test]
    fn defaults_round_trip() {
        for cfg in [RunConfig::default(), RunConfig::desk()] {
            let text = cfg.to_toml();
            let back = RunConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml(), text);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::default().dataset.segment_length, DEFAULT_SEGMENT_LEN);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[plant]\nmodulaton_index = 0.5\n").is_err());
        assert!(RunConfig::from_toml_str("[nonsense]\n").is_err());
        assert!(RunConfig::from_toml_str("[train.identification]\nlr = 0.1\n").is_err());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::from_toml_str("[plant]\nmodulation_index = 0.5\n[train]\nseed = 9\n").unwrap();
        assert_eq!(cfg.plant.modulation_index, 0.5);
        assert_eq!(cfg.plant.delay, PlantSpec::paper_like().delay);
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn seed_zero_is_the_default() {
        assert_eq!(RunConfig::default().with_seed(0), RunConfig::default());
        let a = RunConfig::default().with_seed(5);
        assert_eq!((a.train.seed, a.dataset.corpus_seed, a.dataset.plant_seed), (5, 6, 12));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.wavenet_inv.output_tanh = false;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk();
        cfg.dataset.segment_length = 256;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.metrics.sample_rate = 48000;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::preset("desk").is_ok());
        assert!(RunConfig::preset("huge").is_err());
    }
}
