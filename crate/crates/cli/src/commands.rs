use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use paldc_core::dsp::{wav_read, wav_write, BitDepth};
use paldc_core::metrics::{comparison_table, thd_imd_sweep, DistortionReport, SystemUnderTest};
use paldc_core::pipeline::{Dataset, IdentifiedModel, Metadata};
use paldc_core::volterra::{LinearReferenceModel, VolterraModel};
use paldc_core::workflow::{self, CompensatedPlant, ModelSystem, Preprocessor};
use paldc_core::{Error, RunConfig, Signal, WaveNetModel};

use crate::svg;
use crate::{Method, SystemKind};

pub const EXIT_NUMERICAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE },
            message: e.to_string(),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub force: bool,
}

impl Context {
    pub fn new(
        config: Option<&Path>,
        preset: &str,
        seed: Option<u64>,
        out: Option<PathBuf>,
        force: bool,
    ) -> Result<Self, CliError> {
        let mut cfg = match config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::preset(preset)?,
        };
        if let Some(s) = seed {
            cfg = cfg.with_seed(s);
        }
        cfg.validate()?;
        let out = out.unwrap_or_else(|| cfg.paths.run_dir.clone());
        let hash = cfg.hash();
        Ok(Context { cfg, hash, out, force })
    }

    fn sample_rate(&self) -> u32 {
        self.cfg.dataset.sample_rate
    }

    fn metadata(&self, kind: &str) -> Metadata {
        let mut m = Metadata::new();
        m.insert("config_hash".into(), self.hash.clone());
        m.insert("kind".into(), kind.into());
        m.insert("sample_rate".into(), self.sample_rate().to_string());
        m
    }

    /// Refuses artifacts written under another configuration unless forced.
    fn check_hash(&self, what: &Path, meta: &Metadata) -> Result<(), CliError> {
        let theirs = meta.get("config_hash").map(String::as_str).unwrap_or("none");
        if theirs != self.hash && !self.force {
            return Err(CliError::usage(format!(
                "{} was written with config {theirs}, current config is {}; rerun with --force to mix them",
                what.display(),
                self.hash
            )));
        }
        Ok(())
    }

    fn check_rate(&self, what: &Path, meta: &Metadata) -> Result<(), CliError> {
        if let Some(r) = meta.get("sample_rate") {
            if r != &self.sample_rate().to_string() {
                return Err(CliError::usage(format!(
                    "{} was made at {r} Hz, configuration is at {} Hz",
                    what.display(),
                    self.sample_rate()
                )));
            }
        }
        Ok(())
    }

    fn dir(&self, name: &str) -> Result<PathBuf, CliError> {
        let d = self.out.join(name);
        fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
        Ok(d)
    }

    fn guard(&self, path: &Path) -> Result<(), CliError> {
        if path.exists() && !self.force {
            return Err(CliError::usage(format!(
                "{} exists; rerun with --force to overwrite",
                path.display()
            )));
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

const DATASET_FILES: [&str; 2] = ["input.wav", "output.wav"];
const PROBE_FILES: [&str; 2] = ["probe_input.wav", "probe_output.wav"];

/// Writes into a sibling scratch directory and renames it into place, so a
/// failure leaves no partial dataset behind.
pub fn dataset(ctx: &Context) -> Result<(), CliError> {
    let target = ctx.out.join("dataset");
    ctx.guard(&target)?;
    fs::create_dir_all(&ctx.out).map_err(|e| io_err(&ctx.out, e))?;
    let scratch = ctx.out.join(".dataset.partial");
    if scratch.exists() {
        fs::remove_dir_all(&scratch).map_err(|e| io_err(&scratch, e))?;
    }
    fs::create_dir(&scratch).map_err(|e| io_err(&scratch, e))?;
    let result = write_dataset(ctx, &scratch);
    if result.is_err() {
        let _ = fs::remove_dir_all(&scratch);
        return result;
    }
    if target.exists() {
        fs::remove_dir_all(&target).map_err(|e| io_err(&target, e))?;
    }
    fs::rename(&scratch, &target).map_err(|e| io_err(&target, e))?;
    println!("dataset written to {}", target.display());
    Ok(())
}

fn write_dataset(ctx: &Context, dir: &Path) -> Result<(), CliError> {
    let ds = workflow::make_dataset(&ctx.cfg)?;
    wav_write(dir.join(DATASET_FILES[0]), ds.input(), BitDepth::Float32)?;
    wav_write(dir.join(DATASET_FILES[1]), ds.output(), BitDepth::Float32)?;
    if ctx.cfg.paths.measured_pair().is_none() {
        let plant = workflow::build_plant(&ctx.cfg)?;
        let (u, y) = workflow::probe_pair(&ctx.cfg, &plant)?;
        wav_write(dir.join(PROBE_FILES[0]), &u.quantized_f32(), BitDepth::Float32)?;
        wav_write(dir.join(PROBE_FILES[1]), &y.quantized_f32(), BitDepth::Float32)?;
    }
    write_text(&dir.join("segments.csv"), &ds.index_csv())?;
    write_text(&dir.join("config.toml"), &ctx.cfg.to_toml())?;
    println!(
        "{} segments of {} samples ({} train, {} validation)",
        ds.len(),
        ds.segment_len(),
        ds.n_train(),
        ds.n_validation()
    );
    Ok(())
}

fn dataset_dir(ctx: &Context, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| ctx.out.join("dataset"))
}

fn load_dataset(ctx: &Context, dir: &Path) -> Result<Dataset, CliError> {
    let snap = dir.join("config.toml");
    let theirs = RunConfig::load(&snap)?;
    let mut meta = Metadata::new();
    meta.insert("config_hash".into(), theirs.hash());
    ctx.check_hash(dir, &meta)?;
    Ok(Dataset::from_wav_pair(
        dir.join(DATASET_FILES[0]),
        dir.join(DATASET_FILES[1]),
        &ctx.cfg.dataset.segmentation(),
    )?)
}

/// The white-noise probe pair when the dataset has one, else the main pair.
fn load_probe(dir: &Path) -> Result<(Signal, Signal), CliError> {
    let (pi, po) = (dir.join(PROBE_FILES[0]), dir.join(PROBE_FILES[1]));
    let (u, y) = if pi.exists() && po.exists() {
        (wav_read(&pi)?, wav_read(&po)?)
    } else {
        (wav_read(dir.join(DATASET_FILES[0]))?, wav_read(dir.join(DATASET_FILES[1]))?)
    };
    if u.sample_rate() != y.sample_rate() {
        return Err(CliError::usage("probe pair sample rates differ"));
    }
    let n = u.len().min(y.len());
    Ok((u.truncated(n), y.truncated(n)))
}

fn passes_csv(energies: &[f64]) -> String {
    let mut s = String::from("pass,error_energy\n");
    for (i, e) in energies.iter().enumerate() {
        s.push_str(&format!("{},{e:e}\n", i + 1));
    }
    s
}

pub fn identify(ctx: &Context, method: Method, dataset: Option<PathBuf>) -> Result<(), CliError> {
    let dsdir = dataset_dir(ctx, dataset);
    let dir = ctx.dir("identify")?;
    match method {
        Method::Wavenet => {
            let ckpt = dir.join("wavenet.ckpt");
            ctx.guard(&ckpt)?;
            let ds = load_dataset(ctx, &dsdir)?;
            let out = workflow::identify_wavenet(&ds, &ctx.cfg)?;
            let nmse = workflow::validation_nmse(&ds, &out.model)?;
            let mut meta = ctx.metadata("identified-wavenet");
            meta.insert("validation_nmse_db".into(), format!("{nmse:.4}"));
            out.model.save(&ckpt, &meta, Some(&out.adam))?;
            write_text(&dir.join("wavenet_history.csv"), &out.history.to_csv())?;
            write_text(
                &dir.join("wavenet.txt"),
                &format!("{}\n{}validation nmse: {nmse:.2} dB\n", out.model.net.summary(), out.history.summary()),
            )?;
            println!("validation NMSE: {nmse:.2} dB");
        }
        Method::Fir => {
            let ckpt = dir.join("linref.ckpt");
            ctx.guard(&ckpt)?;
            let (u, y) = load_probe(&dsdir)?;
            let fit = workflow::identify_linear(&u, &y, &ctx.cfg)?;
            let mut meta = ctx.metadata("linear-reference");
            meta.insert("nmse_db".into(), format!("{:.4}", fit.nmse_db));
            fit.model.save(&ckpt, &meta)?;
            write_text(&dir.join("linref_history.csv"), &passes_csv(&fit.pass_error_energy))?;
            write_text(&dir.join("linref.txt"), &fit.model.summary())?;
            println!("linear reference NMSE: {:.2} dB", fit.nmse_db);
        }
        Method::Volterra => {
            let ckpt = dir.join("volterra.ckpt");
            ctx.guard(&ckpt)?;
            let (u, y) = load_probe(&dsdir)?;
            let lin = workflow::identify_linear(&u, &y, &ctx.cfg)?;
            let fit = workflow::identify_volterra(&u, &y, &lin.model, &ctx.cfg)?;
            let mut meta = ctx.metadata("volterra");
            meta.insert("nmse_db".into(), format!("{:.4}", fit.nmse_db));
            meta.insert("alignment".into(), fit.alignment.to_string());
            fit.model.save(&ckpt, &meta)?;
            write_text(&dir.join("volterra_history.csv"), &passes_csv(&fit.pass_error_energy))?;
            write_text(&dir.join("volterra.txt"), &fit.model.summary())?;
            println!("volterra NMSE: {:.2} dB (alignment {})", fit.nmse_db, fit.alignment);
        }
    }
    Ok(())
}

fn load_identified(ctx: &Context, path: &Path) -> Result<IdentifiedModel, CliError> {
    let (m, meta) = IdentifiedModel::load(path)?;
    ctx.check_hash(path, &meta)?;
    ctx.check_rate(path, &meta)?;
    Ok(m)
}

fn load_linref(ctx: &Context, path: &Path) -> Result<LinearReferenceModel, CliError> {
    let (m, meta) = LinearReferenceModel::load(path)?;
    ctx.check_hash(path, &meta)?;
    ctx.check_rate(path, &meta)?;
    if m.delay != ctx.cfg.volterra.target_delay {
        return Err(CliError::usage(format!(
            "{} has delay {}, configuration expects {}",
            path.display(),
            m.delay,
            ctx.cfg.volterra.target_delay
        )));
    }
    Ok(m)
}

pub fn train_inverse(
    ctx: &Context,
    id: Option<PathBuf>,
    linref: Option<PathBuf>,
    dataset: Option<PathBuf>,
) -> Result<(), CliError> {
    let id_path = id.unwrap_or_else(|| ctx.out.join("identify").join("wavenet.ckpt"));
    let lr_path = linref.unwrap_or_else(|| ctx.out.join("identify").join("linref.ckpt"));
    let idm = load_identified(ctx, &id_path)?;
    let lr = load_linref(ctx, &lr_path)?;
    let dir = ctx.dir("inverse")?;
    let ckpt = dir.join("inverse.ckpt");
    ctx.guard(&ckpt)?;
    let ds = load_dataset(ctx, &dataset_dir(ctx, dataset))?;
    let frozen = idm.net.params().hash();
    let out = workflow::train_compensator(&ds, &idm, &lr, &ctx.cfg)?;
    let mut meta = ctx.metadata("inverse-wavenet");
    meta.insert("frozen_model_hash".into(), frozen.clone());
    out.model.save(&ckpt, &meta, Some(&out.adam))?;
    write_text(&dir.join("inverse_history.csv"), &out.history.to_csv())?;
    write_text(
        &dir.join("inverse.txt"),
        &format!("{}\n{}frozen model hash: {frozen}\n", out.model.summary(), out.history.summary()),
    )?;
    println!("best validation loss {:e} at epoch {}", out.history.best_val, out.history.best_epoch);
    Ok(())
}

pub fn evaluate(
    ctx: &Context,
    systems: &[SystemKind],
    want_svg: bool,
    inverse: Option<PathBuf>,
    volterra: Option<PathBuf>,
    model: Option<PathBuf>,
) -> Result<(), CliError> {
    if systems.is_empty() {
        return Err(CliError::usage("no systems to evaluate"));
    }
    let plant = workflow::build_plant(&ctx.cfg)?;
    let seed = ctx.cfg.dataset.plant_seed.wrapping_add(2);

    let mut pres: Vec<Preprocessor> = Vec::new();
    let mut identified = None;
    for &k in systems {
        match k {
            SystemKind::Before => pres.push(Preprocessor::None),
            SystemKind::Wavenet => {
                let p = inverse.clone().unwrap_or_else(|| ctx.out.join("inverse").join("inverse.ckpt"));
                let (net, _, meta) = WaveNetModel::load(&p)?;
                ctx.check_hash(&p, &meta)?;
                ctx.check_rate(&p, &meta)?;
                pres.push(Preprocessor::WaveNet(net));
            }
            SystemKind::Vf2 | SystemKind::Vf3 => {
                let p = volterra.clone().unwrap_or_else(|| ctx.out.join("identify").join("volterra.ckpt"));
                let (vm, meta): (VolterraModel, Metadata) = VolterraModel::load(&p)?;
                ctx.check_hash(&p, &meta)?;
                ctx.check_rate(&p, &meta)?;
                let order = if k == SystemKind::Vf2 { 2 } else { 3 };
                pres.push(Preprocessor::Volterra {
                    comp: workflow::volterra_compensator(vm, &ctx.cfg)?,
                    order,
                });
            }
            SystemKind::Model => {
                let p = model.clone().unwrap_or_else(|| ctx.out.join("identify").join("wavenet.ckpt"));
                identified = Some(load_identified(ctx, &p)?);
            }
        }
    }

    let s = &ctx.cfg.metrics;
    let freqs = s.sweep_frequencies();
    let mut reports: Vec<DistortionReport> = Vec::new();
    let mut pre_iter = pres.iter();
    for &k in systems {
        let report = if k == SystemKind::Model {
            let m = identified.as_ref().expect("loaded above");
            thd_imd_sweep(&ModelSystem { model: m }, &freqs, s, &ctx.hash)?
        } else {
            let pre = pre_iter.next().expect("one preprocessor per plant system");
            let sut = CompensatedPlant::new(pre, &plant, seed);
            info!("evaluating {}", sut.name());
            thd_imd_sweep(&sut, &freqs, s, &ctx.hash)?
        };
        reports.push(report);
    }

    let dir = ctx.dir("evaluate")?;
    for r in &reports {
        write_text(&dir.join(format!("{}.csv", r.system)), &r.to_csv())?;
    }
    let refs: Vec<&DistortionReport> = reports.iter().collect();
    write_text(&dir.join("linear_response.csv"), &workflow::linear_response_csv(&refs)?)?;
    let table = comparison_table(&refs);
    if reports.len() > 1 {
        write_text(&dir.join("comparison.txt"), &table)?;
    }
    if want_svg {
        for (name, title, pick) in [
            ("thd", "THD (%)", 0usize),
            ("imd", "IMD (%)", 1),
            ("response", "Fundamental level (dB)", 2),
        ] {
            let series: Vec<svg::Series> = reports
                .iter()
                .map(|r| svg::Series {
                    name: r.system.clone(),
                    points: r
                        .rows
                        .iter()
                        .map(|row| (row.freq_hz, [row.thd_pct, row.imd_pct, row.fund_db][pick]))
                        .collect(),
                })
                .collect();
            write_text(&dir.join(format!("{name}.svg")), &svg::line_chart(title, &series))?;
        }
    }
    print!("{table}");
    Ok(())
}

pub fn compensate(inverse: &Path, input: &Path, output: &Path) -> Result<(), CliError> {
    let (net, _, meta) = WaveNetModel::load(inverse)?;
    let u = wav_read(input)?;
    if let Some(r) = meta.get("sample_rate") {
        if r != &u.sample_rate().to_string() {
            return Err(CliError::usage(format!(
                "{} is at {} Hz, the inverse was trained at {r} Hz",
                input.display(),
                u.sample_rate()
            )));
        }
    }
    let z = net.forward(&u)?;
    let clipped: Vec<f64> = z.samples().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    wav_write(output, &Signal::new(clipped, z.sample_rate())?, BitDepth::Float32)?;
    println!("wrote {} samples to {}", z.len(), output.display());
    Ok(())
}
