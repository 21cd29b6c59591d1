//! Coherent THD/IMD measurement, linear response and waveform NMSE.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{third_octave_centers, tone_power, Signal};
use crate::error::{Error, Result};

/// Anything that maps an input signal to an output signal.
pub trait SystemUnderTest: Sync {
    fn name(&self) -> &str;

    /// Samples before the output reflects the input; analysis skips at least this much.
    fn latency(&self) -> usize {
        0
    }

    fn process(&self, u: &Signal) -> Result<Signal>;
}

/// Closure-backed system.
pub struct FnSystem<F> {
    name: String,
    latency: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(&Signal) -> Result<Signal> + Sync,
{
    pub fn new(name: impl Into<String>, latency: usize, f: F) -> Self {
        FnSystem {
            name: name.into(),
            latency,
            f,
        }
    }
}

impl<F> SystemUnderTest for FnSystem<F>
where
    F: Fn(&Signal) -> Result<Signal> + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn latency(&self) -> usize {
        self.latency
    }

    fn process(&self, u: &Signal) -> Result<Signal> {
        (self.f)(u)
    }
}

/// Probe levels and analysis window shared by every measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub sample_rate: u32,
    pub thd_amplitude: f64,
    pub imd_amplitude: f64,
    pub imd_fixed_hz: f64,
    pub imd_ratio: f64,
    pub max_order: usize,
    pub span_secs: f64,
    pub skip_secs: f64,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Upper edge of the second averaging band.
    pub low_band_max_hz: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            sample_rate: 44100,
            thd_amplitude: 0.3,
            imd_amplitude: 0.1,
            imd_fixed_hz: 1700.0,
            imd_ratio: 4.0,
            max_order: 4,
            span_secs: 1.0,
            skip_secs: 0.6,
            fmin_hz: 250.0,
            fmax_hz: 8000.0,
            low_band_max_hz: 4000.0,
        }
    }
}

impl MetricSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("metrics: {m}")));
        if self.sample_rate == 0 {
            return bad("sample rate must be positive");
        }
        if !(self.thd_amplitude > 0.0 && self.imd_amplitude > 0.0 && self.imd_ratio > 0.0) {
            return bad("probe amplitudes must be positive");
        }
        if self.max_order < 2 {
            return bad("max order must be at least 2");
        }
        if !(self.span_secs > 0.0 && self.skip_secs >= 0.0) {
            return bad("span must be positive and skip non-negative");
        }
        if !(self.fmin_hz > 0.0 && self.fmin_hz <= self.fmax_hz) {
            return bad("frequency range is empty");
        }
        Ok(())
    }

    pub fn span_samples(&self) -> usize {
        (self.span_secs * self.sample_rate as f64).round() as usize
    }

    fn skip_for(&self, sut: &dyn SystemUnderTest) -> usize {
        ((self.skip_secs * self.sample_rate as f64).round() as usize).max(sut.latency())
    }

    fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    /// Sweep frequencies: nominal third-octave centers in range.
    pub fn sweep_frequencies(&self) -> Vec<f64> {
        third_octave_centers(self.fmin_hz, self.fmax_hz)
    }
}

fn snap(f: f64) -> f64 {
    f.round()
}

fn drive(
    sut: &dyn SystemUnderTest,
    s: &MetricSettings,
    tones: &[(f64, f64)],
) -> Result<(Signal, usize, usize)> {
    let skip = s.skip_for(sut);
    let span = s.span_samples();
    let fs = s.sample_rate;
    let mut u = Signal::zeros(skip + span, fs);
    for &(f, a) in tones {
        let t = Signal::sine(skip + span, fs, f, a, 0.0);
        u.samples_mut()
            .iter_mut()
            .zip(t.samples())
            .for_each(|(x, y)| *x += y);
    }
    let y = sut.process(&u)?;
    if y.len() < skip + span {
        return Err(Error::Measurement(format!(
            "{} returned {} samples for a {} sample probe",
            sut.name(),
            y.len(),
            skip + span
        )));
    }
    if y.samples().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} output", sut.name())));
    }
    Ok((y, skip, span))
}

const FLOOR: f64 = 1e-12;

/// Harmonic distortion of a single tone as a percentage of the root power
/// of harmonics `2..=max_order` over harmonics `1..=max_order`. Harmonics
/// at or above Nyquist are left out of both sums.
pub fn thd(sut: &dyn SystemUnderTest, f0: f64, amplitude: f64, s: &MetricSettings) -> Result<f64> {
    let f0 = snap(f0);
    if !(f0 > 0.0 && f0 < s.nyquist()) {
        return Err(Error::Measurement(format!("{f0} Hz is outside (0, Nyquist)")));
    }
    let (y, skip, span) = drive(sut, s, &[(f0, amplitude)])?;
    let mut powers = Vec::with_capacity(s.max_order);
    for k in 1..=s.max_order {
        let f = k as f64 * f0;
        if f >= s.nyquist() {
            break;
        }
        powers.push(tone_power(&y, f, skip, span)?);
    }
    let p1 = powers[0];
    if p1 < FLOOR {
        return Err(Error::Measurement(format!(
            "fundamental at {f0} Hz below the measurement floor"
        )));
    }
    let total: f64 = powers.iter().sum();
    let harm: f64 = powers[1..].iter().sum();
    Ok(100.0 * (harm / total).sqrt())
}

/// Intermodulation component set for tones `f0` and `f2`, or a collision
/// message when the measurement would be ambiguous.
pub fn imd_components(f0: f64, f2: f64, max_order: usize, nyquist: f64) -> std::result::Result<Vec<f64>, String> {
    let (f0, f2) = (snap(f0), snap(f2));
    if f0 == f2 {
        return Err(format!("probe tone coincides with the fixed tone at {f0} Hz"));
    }
    let harmonic = |f: f64, base: f64| {
        let k = f / base;
        (k - k.round()).abs() < 1e-9 && k.round() >= 1.0
    };
    for k in 2..=max_order {
        let kf = k as f64;
        if kf * f0 == f2 || kf * f2 == f0 {
            return Err(format!("harmonic overlap between {f0} Hz and {f2} Hz"));
        }
    }
    let mut out: Vec<f64> = Vec::new();
    let order = max_order as i64;
    for m in -order..=order {
        for n in -order..=order {
            if m == 0 || n == 0 || m.abs() + n.abs() > order {
                continue;
            }
            let f = (m as f64 * f0 + n as f64 * f2).abs();
            if f == 0.0 || f >= nyquist {
                continue;
            }
            if f == f0 || f == f2 {
                return Err(format!("product {m}·f0{n:+}·f2 lands on a probe tone at {f} Hz"));
            }
            if harmonic(f, f0) || harmonic(f, f2) {
                continue;
            }
            if !out.contains(&f) {
                out.push(f);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Two-tone intermodulation distortion in percent. The fixed tone runs at
/// `imd_ratio` times the probe amplitude.
pub fn imd(sut: &dyn SystemUnderTest, f0: f64, amplitude: f64, s: &MetricSettings) -> Result<f64> {
    let (f0, f2) = (snap(f0), snap(s.imd_fixed_hz));
    if !(f0 > 0.0 && f0 < s.nyquist() && f2 < s.nyquist()) {
        return Err(Error::Measurement(format!("{f0} Hz is outside (0, Nyquist)")));
    }
    let set = imd_components(f0, f2, s.max_order, s.nyquist())
        .map_err(|m| Error::Measurement(format!("component collision: {m}")))?;
    let (y, skip, span) = drive(sut, s, &[(f0, amplitude), (f2, s.imd_ratio * amplitude)])?;
    let p0 = tone_power(&y, f0, skip, span)?;
    let p2 = tone_power(&y, f2, skip, span)?;
    if p0 < FLOOR {
        return Err(Error::Measurement(format!(
            "fundamental at {f0} Hz below the measurement floor"
        )));
    }
    let mut pim = 0.0;
    for f in set {
        pim += tone_power(&y, f, skip, span)?;
    }
    Ok(100.0 * (pim / (p0 + p2 + pim)).sqrt())
}

/// Fundamental gain in dB at each frequency.
pub fn linear_response(
    sut: &dyn SystemUnderTest,
    freqs: &[f64],
    amplitude: f64,
    s: &MetricSettings,
) -> Result<Vec<f64>> {
    freqs
        .par_iter()
        .map(|&f| {
            let f = snap(f);
            let (y, skip, span) = drive(sut, s, &[(f, amplitude)])?;
            let p = tone_power(&y, f, skip, span)?;
            if p < FLOOR {
                return Err(Error::Measurement(format!("no output at {f} Hz")));
            }
            Ok(10.0 * (p / (amplitude * amplitude / 2.0)).log10())
        })
        .collect()
}

/// Normalized mean-squared error in dB over `reference[skip..]`, floored at -200 dB.
pub fn nmse(reference: &Signal, estimate: &Signal, skip: usize) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.len() <= skip {
        return Err(Error::Shape(format!(
            "{} samples leave nothing after skipping {skip}",
            reference.len()
        )));
    }
    let (r, e) = (&reference.samples()[skip..], &estimate.samples()[skip..]);
    let den: f64 = r.iter().map(|v| v * v).sum();
    if den <= 0.0 {
        return Err(Error::Measurement("reference has zero energy".into()));
    }
    let num: f64 = r.iter().zip(e).map(|(a, b)| (b - a).powi(2)).sum();
    Ok((10.0 * (num / den).log10()).max(-200.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub freq_hz: f64,
    pub thd_pct: Option<f64>,
    pub imd_pct: Option<f64>,
    pub fund_db: Option<f64>,
    pub flags: Vec<String>,
}

/// Band means of one report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandAverages {
    pub thd_full: f64,
    pub imd_full: f64,
    pub thd_low: f64,
    pub imd_low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub system: String,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
    pub low_band_max_hz: f64,
}

pub const CSV_HEADER: &str = "freq_hz,thd_pct,imd_pct,fund_db,flags";

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl DistortionReport {
    fn band(&self, hi: f64, pick: impl Fn(&ReportRow) -> Option<f64>) -> f64 {
        mean(self.rows.iter().filter(|r| r.freq_hz <= hi).filter_map(pick))
    }

    pub fn averages(&self) -> BandAverages {
        BandAverages {
            thd_full: self.band(f64::INFINITY, |r| r.thd_pct),
            imd_full: self.band(f64::INFINITY, |r| r.imd_pct),
            thd_low: self.band(self.low_band_max_hz, |r| r.thd_pct),
            imd_low: self.band(self.low_band_max_hz, |r| r.imd_pct),
        }
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.freq_hz,
                cell(r.thd_pct),
                cell(r.imd_pct),
                cell(r.fund_db),
                r.flags.join(";").replace(',', " ")
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        comparison_table(&[self])
    }
}

/// Four-row band-average table with one column per report.
pub fn comparison_table(reports: &[&DistortionReport]) -> String {
    let lo = reports.first().map(|r| r.low_band_max_hz).unwrap_or(4000.0);
    let fmt_band = |hz: f64| {
        if hz >= 1000.0 {
            format!("{}k", hz / 1000.0)
        } else {
            format!("{hz}")
        }
    };
    let (fmin, fmax) = reports
        .iter()
        .flat_map(|r| r.rows.iter().map(|x| x.freq_hz))
        .fold((f64::INFINITY, 0.0f64), |(a, b), f| (a.min(f), b.max(f)));
    let (fmin, fmax) = if fmin.is_finite() { (fmin, fmax) } else { (0.0, 0.0) };
    let labels = [
        format!("THD ({}-{} Hz)", fmt_band(fmin), fmt_band(fmax)),
        format!("IMD ({}-{} Hz)", fmt_band(fmin), fmt_band(fmax)),
        format!("THD ({}-{} Hz)", fmt_band(fmin), fmt_band(lo)),
        format!("IMD ({}-{} Hz)", fmt_band(fmin), fmt_band(lo)),
    ];
    let width = labels.iter().map(|l| l.len()).max().unwrap_or(0);
    let mut out = format!("{:width$}", "");
    for r in reports {
        let _ = write!(out, "  {:>10}", r.system);
    }
    out.push('\n');
    let avgs: Vec<BandAverages> = reports.iter().map(|r| r.averages()).collect();
    for (i, label) in labels.iter().enumerate() {
        let _ = write!(out, "{label:width$}");
        for a in &avgs {
            let v = [a.thd_full, a.imd_full, a.thd_low, a.imd_low][i];
            let _ = write!(out, "  {v:>10.2}");
        }
        out.push('\n');
    }
    out
}

/// THD, IMD and fundamental level at every frequency. Rows whose IMD
/// components collide are flagged and left empty.
pub fn thd_imd_sweep(
    sut: &dyn SystemUnderTest,
    freqs: &[f64],
    s: &MetricSettings,
    config_hash: &str,
) -> Result<DistortionReport> {
    s.validate()?;
    let rows = freqs
        .par_iter()
        .map(|&f| -> Result<ReportRow> {
            let f = snap(f);
            let mut flags = Vec::new();
            let mut keep = |r: Result<f64>, what: &str| match r {
                Ok(v) => Ok(Some(v)),
                Err(Error::Measurement(m)) => {
                    flags.push(format!("{what}: {m}"));
                    Ok(None)
                }
                Err(e) => Err(e),
            };
            let thd_pct = keep(thd(sut, f, s.thd_amplitude, s), "thd")?;
            let imd_pct = keep(imd(sut, f, s.imd_amplitude, s), "imd")?;
            let fund_db = keep(
                linear_response(sut, &[f], s.thd_amplitude, s).map(|v| v[0]),
                "fund",
            )?;
            Ok(ReportRow {
                freq_hz: f,
                thd_pct,
                imd_pct,
                fund_db,
                flags,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistortionReport {
        system: sut.name().to_string(),
        config_hash: config_hash.to_string(),
        rows,
        low_band_max_hz: s.low_band_max_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{fft_forward, FirFilter};
    use crate::plant::PlantSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const FS: u32 = 44100;

    fn poly(name: &str, c2: f64, c3: f64) -> impl SystemUnderTest + '_ {
        FnSystem::new(name, 0, move |u: &Signal| {
            Signal::new(
                u.samples().iter().map(|x| x + c2 * x * x + c3 * x * x * x).collect(),
                u.sample_rate(),
            )
        })
    }

    fn fast() -> MetricSettings {
        MetricSettings {
            skip_secs: 0.01,
            ..MetricSettings::default()
        }
    }

    #[test]
    fn identity_has_no_distortion() {
        let s = fast();
        let id = poly("id", 0.0, 0.0);
        assert!(thd(&id, 1000.0, 0.5, &s).unwrap() < 1e-9);
        assert!(imd(&id, 1000.0, 0.1, &s).unwrap() < 1e-9);
        let r = thd_imd_sweep(&id, &s.sweep_frequencies(), &s, "h").unwrap();
        let a = r.averages();
        assert!(a.thd_full < 1e-9 && a.imd_full < 1e-9 && a.thd_low < 1e-9 && a.imd_low < 1e-9);
        assert!(r.rows.iter().all(|x| x.fund_db.unwrap().abs() < 1e-9));
    }

    #[test]
    fn quadratic_thd_oracle() {
        let v = thd(&poly("q", 0.1, 0.0), 1000.0, 1.0, &fast()).unwrap();
        let expect = 100.0 * (0.00125f64 / 0.50125).sqrt();
        assert!((v - expect).abs() < 1e-9);
        assert!((v - 4.99).abs() < 0.05);
    }

    #[test]
    fn flat_berktay_thd_oracle() {
        let plant = PlantSpec::flat(0.9).build(FS).unwrap();
        let sut = FnSystem::new("pal", plant.latency(), |u: &Signal| Ok(plant.simulate(u, 0)));
        let expect = 100.0 * 0.9 / (1.0f64 + 0.81).sqrt();
        for f in [500.0, 1000.0, 2000.0] {
            let v = thd(&sut, f, 1.0, &fast()).unwrap();
            assert!((v - expect).abs() < 0.5, "{f}: {v}");
        }
    }

    #[test]
    fn quadratic_imd_oracle() {
        let v = imd(&poly("q", 0.1, 0.0), 1000.0, 0.1, &fast()).unwrap();
        let pim = 2.0 * 0.004f64.powi(2) / 2.0;
        let expect = 100.0 * (pim / (0.005 + 0.08 + pim)).sqrt();
        assert!((v - expect).abs() < 1e-6, "{v} vs {expect}");
        assert!((v - 1.37).abs() < 0.05);
    }

    #[test]
    fn cubic_imd_is_linear_in_epsilon() {
        let s = fast();
        let a = imd(&poly("c", 0.0, 1e-3), 1000.0, 0.1, &s).unwrap();
        let b = imd(&poly("c", 0.0, 2e-3), 1000.0, 0.1, &s).unwrap();
        assert!(a > 0.0);
        assert!((b / a - 2.0).abs() < 1e-3, "{}", b / a);
    }

    #[test]
    fn linear_system_has_zero_imd() {
        let h = FirFilter::new(vec![0.3, -0.2, 0.5, 0.1], 0).unwrap();
        let sut = FnSystem::new("fir", 0, |u: &Signal| Ok(crate::dsp::fir_apply(u, &h)));
        for f in [250.0, 1000.0, 5000.0] {
            assert!(imd(&sut, f, 0.1, &fast()).unwrap() < 1e-9);
        }
    }

    #[test]
    fn delay_changes_nothing() {
        let s = MetricSettings {
            skip_secs: 0.01,
            ..MetricSettings::default()
        };
        let q = poly("q", 0.1, 0.02);
        let d = FnSystem::new("qd", 300, |u: &Signal| q.process(u).map(|y| y.delayed(300)));
        for f in [315.0, 2500.0] {
            assert!((thd(&q, f, 0.3, &s).unwrap() - thd(&d, f, 0.3, &s).unwrap()).abs() < 1e-9);
            assert!((imd(&q, f, 0.1, &s).unwrap() - imd(&d, f, 0.1, &s).unwrap()).abs() < 1e-9);
            let a = linear_response(&q, &[f], 0.3, &s).unwrap()[0];
            let b = linear_response(&d, &[f], 0.3, &s).unwrap()[0];
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn thd_grows_with_quadratic_coefficient() {
        let s = fast();
        let mut last = -1.0;
        for i in 0..=6 {
            let c = 0.05 * i as f64;
            let v = thd(&poly("q", c, 0.0), 1000.0, 0.5, &s).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn harmonics_past_nyquist_are_dropped() {
        let s = fast();
        let q = poly("q", 0.1, 0.0);
        let v = thd(&q, 8000.0, 1.0, &s).unwrap();
        // brute-force power spectrum over the one second span
        let u = Signal::sine(FS as usize, FS, 8000.0, 1.0, 0.0);
        let y = q.process(&u).unwrap();
        let spec = fft_forward(y.samples(), 65536).unwrap();
        let bin = |f: f64| (f * 65536.0 / FS as f64).round() as usize;
        let near = |f: f64| -> f64 { (bin(f) - 3..=bin(f) + 3).map(|k| spec[k].norm_sqr()).sum() };
        let brute = 100.0 * (near(16000.0) / (near(8000.0) + near(16000.0))).sqrt();
        assert!((v - brute).abs() < 0.05, "{v} vs {brute}");
        assert!((v - 4.99).abs() < 0.05);
    }

    #[test]
    fn fundamental_level() {
        let s = fast();
        let sut = FnSystem::new("g", 100, |u: &Signal| Ok(u.scaled(0.5).delayed(100)));
        for v in linear_response(&sut, &[250.0, 1000.0, 8000.0], 0.1, &s).unwrap() {
            assert!((v + 6.0206).abs() < 1e-3);
        }
        let h = FirFilter::new(vec![0.5, 0.5], 0).unwrap();
        let lp = FnSystem::new("lp", 1, |u: &Signal| Ok(crate::dsp::fir_apply(u, &h)));
        for f in [500.0, 4000.0, 12500.0] {
            let w = 2.0 * std::f64::consts::PI * f / FS as f64;
            let analytic = 20.0 * (w / 2.0).cos().log10();
            let v = linear_response(&lp, &[f], 0.1, &s).unwrap()[0];
            assert!((v - analytic).abs() < 0.1);
        }
    }

    #[test]
    fn silent_system_is_a_measurement_error() {
        let mute = FnSystem::new("mute", 0, |u: &Signal| Ok(u.scaled(0.0)));
        assert!(matches!(thd(&mute, 1000.0, 0.1, &fast()), Err(Error::Measurement(_))));
    }

    #[test]
    fn collisions_are_flagged() {
        assert!(imd_components(850.0, 1700.0, 4, 22050.0).is_err());
        assert!(imd_components(1700.0, 1700.0, 4, 22050.0).is_err());
        let set = imd_components(1000.0, 1700.0, 4, 22050.0).unwrap();
        assert!(set.contains(&700.0) && set.contains(&2700.0));
        assert!(!set.contains(&2000.0) && !set.contains(&3400.0));
        let s = fast();
        let r = thd_imd_sweep(&poly("q", 0.1, 0.0), &[850.0, 1000.0], &s, "").unwrap();
        assert!(r.rows[0].imd_pct.is_none() && !r.rows[0].flags.is_empty());
        assert!(r.rows[1].imd_pct.is_some());
    }

    #[test]
    fn nmse_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Normal::new(0.0, 1.0).unwrap();
        let r = Signal::new((0..100_000).map(|_| d.sample(&mut rng)).collect(), FS).unwrap();
        assert_eq!(nmse(&r, &r, 0).unwrap(), -200.0);
        assert!(nmse(&r, &r.scaled(0.0), 0).unwrap().abs() < 1e-12);
        let noisy = Signal::new(
            r.samples().iter().map(|v| v + 0.01 * d.sample(&mut rng)).collect(),
            FS,
        )
        .unwrap();
        assert!((nmse(&r, &noisy, 0).unwrap() + 40.0).abs() < 0.5);
        assert!(nmse(&Signal::zeros(10, FS), &Signal::zeros(10, FS), 0).is_err());
        assert!(nmse(&r, &r.truncated(10), 0).is_err());
    }

    #[test]
    fn averages_are_row_means() {
        let s = fast();
        let r = thd_imd_sweep(&poly("q", 0.1, 0.05), &s.sweep_frequencies(), &s, "").unwrap();
        let rows: Vec<_> = r.rows.iter().filter(|x| x.freq_hz <= 4000.0).collect();
        let m = rows.iter().map(|x| x.thd_pct.unwrap()).sum::<f64>() / rows.len() as f64;
        assert!((r.averages().thd_low - m).abs() < 1e-12);
        let csv = r.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + r.rows.len());
        assert!(r.summary().contains("THD (250-8k Hz)"));
    }
}
