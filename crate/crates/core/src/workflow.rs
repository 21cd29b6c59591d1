//! Pipeline stages driven by a [`RunConfig`], and the systems compared in
//! an evaluation sweep.

use std::fmt::Write as _;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::RunConfig;
use crate::dsp::Signal;
use crate::error::{Error, Result};
use crate::metrics::{nmse, DistortionReport, SystemUnderTest};
use crate::nn::WaveNetModel;
use crate::pipeline::{
    build_dataset, estimate_bulk_delay, synthesize_corpus, train_identification, train_inverse, Dataset,
    IdentifiedModel, TrainOutcome,
};
use crate::plant::Plant;
use crate::volterra::{lms_fir_identify, nlms_identify, LinearReferenceModel, VolterraCompensator, VolterraModel};

pub fn build_plant(cfg: &RunConfig) -> Result<Plant> {
    cfg.plant.build(cfg.dataset.sample_rate)
}

/// Dataset from the measured pair named in `[paths]`, or from the synthetic
/// corpus driven through the configured plant.
pub fn make_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let seg = cfg.dataset.segmentation();
    if let Some((i, o)) = cfg.paths.measured_pair() {
        return Dataset::from_wav_pair(i, o, &seg);
    }
    let corpus = synthesize_corpus(&cfg.dataset.corpus())?;
    let plant = build_plant(cfg)?;
    build_dataset(&corpus, &plant, cfg.dataset.plant_seed, &seg, format!("synthetic:{}", cfg.hash()))
}

/// Gaussian white noise used to identify the linear reference and the
/// Volterra baseline.
pub fn white_probe(cfg: &RunConfig) -> Result<Signal> {
    let v = &cfg.volterra;
    let fs = cfg.dataset.sample_rate;
    let n = (v.probe_secs * fs as f64).round() as usize;
    let dist = Normal::new(0.0, v.probe_rms).map_err(|e| Error::Config(format!("probe: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(v.probe_seed);
    Signal::new((0..n).map(|_| dist.sample(&mut rng)).collect(), fs)
}

/// White-noise probe and the plant's response to it.
pub fn probe_pair(cfg: &RunConfig, plant: &Plant) -> Result<(Signal, Signal)> {
    let u = white_probe(cfg)?;
    let y = plant.simulate(&u, cfg.dataset.plant_seed.wrapping_add(1));
    Ok((u, y))
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub model: LinearReferenceModel,
    pub nmse_db: f64,
    pub pass_error_energy: Vec<f64>,
}

pub fn identify_linear(u: &Signal, y: &Signal, cfg: &RunConfig) -> Result<LinearFit> {
    let v = &cfg.volterra;
    let r = lms_fir_identify(u, y, v.linref_taps, &v.nlms(), v.target_delay)?;
    info!("linear reference: nmse {:.2} dB, peak lag {}", r.nmse_db, r.model.peak_lag());
    Ok(LinearFit {
        model: r.model,
        nmse_db: r.nmse_db,
        pass_error_energy: r.pass_error_energy,
    })
}

#[derive(Debug, Clone)]
pub struct VolterraFit {
    pub model: VolterraModel,
    pub nmse_db: f64,
    /// Samples removed from the front of the output before adaptation.
    pub alignment: usize,
    pub pass_error_energy: Vec<f64>,
}

/// Second-order Volterra identification. The output is advanced by the
/// linear-reference peak lag minus the configured margin so the kernels
/// cover the dispersive part of the response.
pub fn identify_volterra(u: &Signal, y: &Signal, linref: &LinearReferenceModel, cfg: &RunConfig) -> Result<VolterraFit> {
    let v = &cfg.volterra;
    let alignment = linref.peak_lag().saturating_sub(v.alignment_margin);
    if alignment >= u.len() {
        return Err(Error::Signal(format!(
            "alignment of {alignment} samples exceeds the {}-sample probe",
            u.len()
        )));
    }
    let n = u.len() - alignment;
    let ya = Signal::new(y.samples()[alignment..alignment + n].to_vec(), y.sample_rate())?;
    let r = nlms_identify(&u.truncated(n), &ya, &v.nlms(), v.sizes())?;
    info!("volterra: nmse {:.2} dB, alignment {alignment}", r.nmse_db);
    Ok(VolterraFit {
        model: r.model,
        nmse_db: r.nmse_db,
        alignment,
        pass_error_energy: r.pass_error_energy,
    })
}

pub fn volterra_compensator(model: VolterraModel, cfg: &RunConfig) -> Result<VolterraCompensator> {
    VolterraCompensator::new(model, cfg.volterra.target_delay, cfg.volterra.inverse_length)
}

/// Trains the identified network with a bulk delay estimated from the
/// first training segment.
pub fn identify_wavenet(ds: &Dataset, cfg: &RunConfig) -> Result<TrainOutcome<IdentifiedModel>> {
    let (u, y) = ds.segment(0);
    let t = &cfg.train;
    let bulk = estimate_bulk_delay(u, y, t.max_bulk_lag.min(u.len() - 1), t.bulk_delay_margin);
    info!("identification: bulk delay {bulk}");
    train_identification(ds, &cfg.wavenet_id, bulk, &t.identification_options(ds.sample_rate())?)
}

pub fn train_compensator(
    ds: &Dataset,
    id: &IdentifiedModel,
    linref: &LinearReferenceModel,
    cfg: &RunConfig,
) -> Result<TrainOutcome<WaveNetModel>> {
    train_inverse(ds, id, linref, &cfg.wavenet_inv, &cfg.train.inverse_options(ds.sample_rate())?)
}

/// Waveform NMSE of the identified model over the validation segments,
/// each run from rest with its warm-up excluded.
pub fn validation_nmse(ds: &Dataset, model: &IdentifiedModel) -> Result<f64> {
    let skip = model.warmup();
    let (mut num, mut den) = (0.0, 0.0);
    for i in ds.validation_indices() {
        let (u, y) = ds.segment(i);
        if skip >= u.len() {
            return Err(Error::Shape(format!("warm-up {skip} covers a whole segment")));
        }
        let est = model.forward(&Signal::new(u.to_vec(), ds.sample_rate())?)?;
        for (a, b) in y[skip..].iter().zip(&est.samples()[skip..]) {
            num += (b - a) * (b - a);
            den += a * a;
        }
    }
    if den <= 0.0 {
        return Err(Error::Measurement("validation output has zero energy".into()));
    }
    Ok(10.0 * (num / den).log10())
}

/// Waveform NMSE of `sut` against `reference` on one signal.
pub fn signal_nmse(sut: &dyn SystemUnderTest, u: &Signal, reference: &Signal, skip: usize) -> Result<f64> {
    nmse(reference, &sut.process(u)?, skip)
}

/// What runs in front of the plant.
#[derive(Debug, Clone)]
pub enum Preprocessor {
    None,
    WaveNet(WaveNetModel),
    Volterra { comp: VolterraCompensator, order: usize },
}

impl Preprocessor {
    /// Report name, in the column names of the comparison table.
    pub fn name(&self) -> String {
        match self {
            Preprocessor::None => "before".into(),
            Preprocessor::WaveNet(_) => "wavenet".into(),
            Preprocessor::Volterra { order, .. } => format!("vf{order}"),
        }
    }

    pub fn latency(&self) -> usize {
        match self {
            Preprocessor::None => 0,
            Preprocessor::WaveNet(net) => net.receptive_field() - 1,
            Preprocessor::Volterra { comp, order } => comp.latency(*order),
        }
    }

    pub fn apply(&self, u: &Signal) -> Result<Signal> {
        match self {
            Preprocessor::None => Ok(u.clone()),
            Preprocessor::WaveNet(net) => net.forward(u),
            Preprocessor::Volterra { comp, order } => comp.preprocess(u, *order),
        }
    }
}

/// Preprocessor followed by the plant. Plant noise uses a fixed seed so
/// repeated measurements agree bit for bit.
pub struct CompensatedPlant<'a> {
    name: String,
    pub pre: &'a Preprocessor,
    pub plant: &'a Plant,
    pub seed: u64,
}

impl<'a> CompensatedPlant<'a> {
    pub fn new(pre: &'a Preprocessor, plant: &'a Plant, seed: u64) -> Self {
        CompensatedPlant {
            name: pre.name(),
            pre,
            plant,
            seed,
        }
    }
}

impl SystemUnderTest for CompensatedPlant<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn latency(&self) -> usize {
        self.pre.latency() + self.plant.latency()
    }

    fn process(&self, u: &Signal) -> Result<Signal> {
        Ok(self.plant.simulate(&self.pre.apply(u)?, self.seed))
    }
}

/// The identified network measured in place of the plant.
pub struct ModelSystem<'a> {
    pub model: &'a IdentifiedModel,
}

impl SystemUnderTest for ModelSystem<'_> {
    fn name(&self) -> &str {
        "model"
    }

    fn latency(&self) -> usize {
        self.model.warmup()
    }

    fn process(&self, u: &Signal) -> Result<Signal> {
        self.model.forward(u)
    }
}

/// One row per frequency, one fundamental-level column per report.
pub fn linear_response_csv(reports: &[&DistortionReport]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Err(Error::Config("no reports".into()));
    };
    for r in reports {
        let same = r.rows.len() == first.rows.len()
            && r.rows.iter().zip(&first.rows).all(|(a, b)| a.freq_hz == b.freq_hz);
        if !same {
            return Err(Error::Shape(format!(
                "{} and {} use different frequencies",
                r.system, first.system
            )));
        }
    }
    let mut out = String::from("freq_hz");
    for r in reports {
        let _ = write!(out, ",{}_db", r.system);
    }
    out.push('\n');
    for (i, row) in first.rows.iter().enumerate() {
        let _ = write!(out, "{}", row.freq_hz);
        for r in reports {
            match r.rows[i].fund_db {
                Some(v) => {
                    let _ = write!(out, ",{v:.6}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Largest absolute fundamental-level difference between two reports, and
/// the frequency where it occurs. Rows missing in either report are errors.
pub fn max_response_deviation(a: &DistortionReport, b: &DistortionReport) -> Result<(f64, f64)> {
    let mut worst = (0.0, f64::NAN);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        match (x.fund_db, y.fund_db) {
            (Some(p), Some(q)) => {
                let d = (p - q).abs();
                if !(d <= worst.0) {
                    worst = (d, x.freq_hz);
                }
            }
            _ => {
                return Err(Error::Measurement(format!(
                    "no fundamental level at {} Hz",
                    x.freq_hz
                )))
            }
        }
    }
    Ok(worst)
}

/// Mean absolute THD difference in percentage points over rows at or
/// below `max_hz`.
pub fn mean_thd_difference(a: &DistortionReport, b: &DistortionReport, max_hz: f64) -> Result<f64> {
    let mut diffs = Vec::new();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        if x.freq_hz > max_hz {
            continue;
        }
        match (x.thd_pct, y.thd_pct) {
            (Some(p), Some(q)) => diffs.push((p - q).abs()),
            _ => return Err(Error::Measurement(format!("no THD at {} Hz", x.freq_hz))),
        }
    }
    if diffs.is_empty() {
        return Err(Error::Measurement(format!("no rows at or below {max_hz} Hz")));
    }
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{thd_imd_sweep, MetricSettings, ReportRow};
    use crate::plant::PlantSpec;

    fn report(name: &str, rows: &[(f64, f64, f64)]) -> DistortionReport {
        DistortionReport {
            system: name.into(),
            config_hash: String::new(),
            rows: rows
                .iter()
                .map(|&(f, thd, fund)| ReportRow {
                    freq_hz: f,
                    thd_pct: Some(thd),
                    imd_pct: Some(0.0),
                    fund_db: Some(fund),
                    flags: Vec::new(),
                })
                .collect(),
            low_band_max_hz: 4000.0,
        }
    }

    #[test]
    fn thd_difference_and_response_deviation() {
        let a = report("a", &[(250.0, 10.0, -3.0), (1000.0, 20.0, 0.0), (8000.0, 5.0, 1.0)]);
        let b = report("b", &[(250.0, 12.0, -1.0), (1000.0, 19.0, 0.5), (8000.0, 50.0, 5.0)]);
        assert!((mean_thd_difference(&a, &b, 4000.0).unwrap() - 1.5).abs() < 1e-12);
        let (d, f) = max_response_deviation(&a, &b).unwrap();
        assert_eq!((d, f), (4.0, 8000.0));
        let csv = linear_response_csv(&[&a, &b]).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "freq_hz,a_db,b_db");
        assert_eq!(csv.lines().nth(2).unwrap(), "1000,0.000000,0.500000");
    }

    #[test]
    fn identity_plant_without_preprocessor_is_distortion_free() {
        let plant = PlantSpec::identity().build(44100).unwrap();
        let pre = Preprocessor::None;
        let sut = CompensatedPlant::new(&pre, &plant, 0);
        let s = MetricSettings::default();
        let r = thd_imd_sweep(&sut, &[500.0, 2000.0], &s, "h").unwrap();
        assert_eq!(r.system, "before");
        for row in &r.rows {
            assert!(row.thd_pct.unwrap() < 1e-6);
            assert!(row.fund_db.unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn probe_is_seeded() {
        let mut cfg = RunConfig::default();
        cfg.volterra.probe_secs = 0.1;
        let a = white_probe(&cfg).unwrap();
        assert_eq!(a, white_probe(&cfg).unwrap());
        let rms = (a.samples().iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - cfg.volterra.probe_rms).abs() < 0.01);
        cfg.volterra.probe_seed += 1;
        assert_ne!(a, white_probe(&cfg).unwrap());
    }
}
