//! Identification and inverse-filter training loops.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::Metadata;
use super::dataset::Dataset;
use crate::dsp::{convolve_causal, Signal, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, clip_grad_norm, AdamState, ForwardCache, Gradients, PlateauEvent, PlateauScheduler,
    Emphasis, SpectralLoss, TrainSchedule, WaveNetConfig, WaveNetModel,
};
use crate::volterra::LinearReferenceModel;

/// Worker-thread cap read by [`thread_pool`].
pub const THREADS_ENV: &str = "PALDC_THREADS";

/// Rayon pool honoring `PALDC_THREADS` (unset or 0: one per core).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Identified network preceded by a pure delay, so the network only has to
/// cover the dispersive part of the plant response.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedModel {
    pub net: WaveNetModel,
    pub bulk_delay: usize,
}

impl IdentifiedModel {
    pub fn forward(&self, u: &Signal) -> Result<Signal> {
        Ok(self.net.forward(u)?.delayed(self.bulk_delay))
    }

    /// Samples before the output depends on a full input history.
    pub fn warmup(&self) -> usize {
        self.bulk_delay + self.net.receptive_field() - 1
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &Metadata, adam: Option<&AdamState>) -> Result<()> {
        let mut meta = meta.clone();
        meta.insert("bulk_delay".into(), self.bulk_delay.to_string());
        self.net.save(path, &meta, adam)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Metadata)> {
        let (net, _, meta) = WaveNetModel::load(path)?;
        let bulk_delay = match meta.get("bulk_delay") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad bulk_delay {v:?}")))?,
            None => 0,
        };
        Ok((IdentifiedModel { net, bulk_delay }, meta))
    }
}

/// Plant latency estimate: lag of the largest cross-correlation magnitude
/// between `u` and `y` within `0..max_lag`, minus `margin`.
pub fn estimate_bulk_delay(u: &[f64], y: &[f64], max_lag: usize, margin: usize) -> usize {
    let n = u.len().min(y.len());
    let mut best = (0usize, 0.0f64);
    for lag in 0..max_lag.min(n) {
        let r: f64 = u[..n - lag].iter().zip(&y[lag..n]).map(|(a, b)| a * b).sum();
        if r.abs() > best.1 {
            best = (lag, r.abs());
        }
    }
    best.0.saturating_sub(margin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TimeBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Learning-rate reductions and the stop reason, one line each.
    pub events: Vec<String>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stop: StopReason,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,lr";

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{HISTORY_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", e.epoch, e.train_loss, e.val_loss, e.lr);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "epochs run: {}\nbest epoch: {}\nbest validation loss: {:e}\nstop: {:?}\n",
            self.epochs.len(),
            self.best_epoch,
            self.best_val,
            self.stop
        );
        for e in &self.events {
            let _ = writeln!(s, "event: {e}");
        }
        s
    }
}

/// Settings shared by both training procedures.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub schedule: TrainSchedule,
    pub stft: StftConfig,
    /// Tilt applied to target and estimate before the loss.
    pub emphasis: Option<Emphasis>,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

#[derive(Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub adam: AdamState,
    pub history: TrainHistory,
}

#[derive(Default)]
struct Workspace {
    fwd: ForwardCache,
    grads: Gradients,
    fwd2: ForwardCache,
    grads2: Gradients,
    est: Vec<f64>,
    dy: Vec<f64>,
}

struct SegmentResult {
    loss: f64,
    grads: Vec<f64>,
}

/// `out[n] = x[n − d]`, zero before `d`.
fn delay_into(x: &[f64], d: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(x.len(), 0.0);
    if d < x.len() {
        out[d..].copy_from_slice(&x[..x.len() - d]);
    }
}

/// Adjoint of [`delay_into`]: `out[n] = g[n + d]`.
fn advance_into(g: &[f64], d: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(g.len(), 0.0);
    if d < g.len() {
        let n = g.len() - d;
        out[..n].copy_from_slice(&g[d..]);
    }
}

struct Pool(Mutex<Vec<Workspace>>);

impl Pool {
    fn with<T>(&self, f: impl FnOnce(&mut Workspace) -> T) -> T {
        let mut ws = self.0.lock().unwrap().pop().unwrap_or_default();
        let out = f(&mut ws);
        self.0.lock().unwrap().push(ws);
        out
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Shared epoch loop. `segment` evaluates one segment's loss and, when asked,
/// its parameter gradient.
fn fit<F>(
    mut model: WaveNetModel,
    train: &[usize],
    val: &[usize],
    opts: &TrainOptions,
    label: &str,
    segment: F,
) -> Result<TrainOutcome<WaveNetModel>>
where
    F: Fn(&WaveNetModel, usize, &mut Workspace, bool) -> Result<SegmentResult> + Sync,
{
    let sched = &opts.schedule;
    sched.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs train and validation segments".into()));
    }
    let pool = thread_pool()?;
    let workspaces = Pool(Mutex::new(Vec::new()));
    let n_params = model.param_count();
    let mut adam = AdamState::new(n_params);
    let mut plateau = PlateauScheduler::new(sched);
    let mut best_params = model.params().values().to_vec();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        events: Vec::new(),
        best_epoch: 0,
        best_val: f64::INFINITY,
        stop: StopReason::MaxEpochs,
    };
    let start = Instant::now();

    let run = |model: &WaveNetModel, ids: &[usize], grads: bool| -> Result<Vec<SegmentResult>> {
        pool.install(|| {
            ids.par_iter()
                .map(|&i| workspaces.with(|ws| segment(model, i, ws, grads)))
                .collect()
        })
    };

    for epoch in 1..=sched.max_epochs {
        let lr = plateau.lr();
        let mut order = train.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(opts.seed, epoch)));
        let mut train_sum = 0.0;
        for (b, batch) in order.chunks(sched.batch).enumerate() {
            let results = run(&model, batch, true)?;
            let mut grads = vec![0.0; n_params];
            for (r, &idx) in results.iter().zip(batch) {
                if !r.loss.is_finite() || r.grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "{label}: epoch {epoch}, batch {b}, segment {idx}: loss {}, lr {lr:e}, parameter hash {}",
                        r.loss,
                        model.params().hash()
                    )));
                }
                train_sum += r.loss;
                grads.iter_mut().zip(&r.grads).for_each(|(a, g)| *a += g);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            clip_grad_norm(&mut grads, sched.clip_norm);
            adam_step(model.params_mut().values_mut(), &grads, &mut adam, lr)?;
        }
        let val_loss = run(&model, val, false)?.iter().map(|r| r.loss).sum::<f64>() / val.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("{label}: validation loss at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss: train_sum / train.len() as f64,
            val_loss,
            lr,
        };
        info!(
            "{label} epoch {epoch}: train {:.4e} val {:.4e} lr {:.1e} ({:.0} s)",
            record.train_loss,
            record.val_loss,
            lr,
            start.elapsed().as_secs_f64()
        );
        history.epochs.push(record);
        match plateau.observe(val_loss) {
            PlateauEvent::Improved => {
                best_params.copy_from_slice(model.params().values());
                history.best_epoch = epoch;
                history.best_val = val_loss;
            }
            PlateauEvent::Waiting => {}
            PlateauEvent::Reduced { from, to } => {
                history.events.push(format!("epoch {epoch}: lr {from:e} -> {to:e}"));
            }
            PlateauEvent::Stop => {
                history.stop = StopReason::EarlyStop;
                history.events.push(format!("epoch {epoch}: early stop"));
                break;
            }
        }
        if sched.time_budget_secs > 0.0 && start.elapsed().as_secs_f64() >= sched.time_budget_secs {
            history.stop = StopReason::TimeBudget;
            history.events.push(format!("epoch {epoch}: time budget reached"));
            break;
        }
    }
    model.params_mut().values_mut().copy_from_slice(&best_params);
    Ok(TrainOutcome {
        model,
        adam,
        history,
    })
}

/// Network 1: fits `delay_bulk(net(u))` to the recorded output with the
/// waveform-plus-spectrogram loss.
pub fn train_identification(
    ds: &Dataset,
    netcfg: &WaveNetConfig,
    bulk_delay: usize,
    opts: &TrainOptions,
) -> Result<TrainOutcome<IdentifiedModel>> {
    netcfg.validate()?;
    let model = WaveNetModel::new(netcfg.clone())?;
    let skip = bulk_delay + model.receptive_field() - 1;
    check_skip(skip, ds.segment_len(), opts)?;
    let loss = SpectralLoss::new(&opts.stft)?.with_emphasis(opts.emphasis);
    let train: Vec<usize> = ds.train_indices().collect();
    let val: Vec<usize> = ds.validation_indices().collect();
    let out = fit(model, &train, &val, opts, "identification", |m, i, ws, want| {
        let (u, y) = ds.segment(i);
        m.forward_train_into(u, &mut ws.fwd);
        delay_into(ws.fwd.output(), bulk_delay, &mut ws.est);
        let lv = loss.evaluate(y, &ws.est, skip)?;
        if !want {
            return Ok(SegmentResult {
                loss: lv.total,
                grads: Vec::new(),
            });
        }
        advance_into(&lv.grad, bulk_delay, &mut ws.dy);
        m.backward_into(&ws.fwd, &ws.dy, true, &mut ws.grads)?;
        Ok(SegmentResult {
            loss: lv.total,
            grads: ws.grads.params.clone(),
        })
    })?;
    Ok(TrainOutcome {
        model: IdentifiedModel {
            net: out.model,
            bulk_delay,
        },
        adam: out.adam,
        history: out.history,
    })
}

fn check_skip(skip: usize, seg: usize, opts: &TrainOptions) -> Result<()> {
    if skip + opts.stft.window_length > seg {
        return Err(Error::Config(format!(
            "warm-up of {skip} samples leaves less than one stft window in a {seg}-sample segment"
        )));
    }
    Ok(())
}

/// Warm-up excluded from the inverse-training loss.
pub fn inverse_skip(inv: &WaveNetConfig, id: &IdentifiedModel, linref: &LinearReferenceModel) -> usize {
    let chain = inv.receptive_field() - 1 + id.warmup();
    chain.max(linref.h_lin.len() + linref.delay)
}

/// Network 2: trains `inv` so that `id(inv(u))` matches the delayed linear
/// reference. `id` is only read; its parameter hash is checked afterwards.
pub fn train_inverse(
    ds: &Dataset,
    id: &IdentifiedModel,
    linref: &LinearReferenceModel,
    netcfg: &WaveNetConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome<WaveNetModel>> {
    netcfg.validate()?;
    if !netcfg.output_tanh {
        return Err(Error::Config("the inverse network needs output_tanh".into()));
    }
    let frozen_hash = id.net.params().hash();
    let model = WaveNetModel::new(netcfg.clone())?;
    let skip = inverse_skip(netcfg, id, linref);
    check_skip(skip, ds.segment_len(), opts)?;
    let loss = SpectralLoss::new(&opts.stft)?.with_emphasis(opts.emphasis);
    let train: Vec<usize> = ds.train_indices().collect();
    let val: Vec<usize> = ds.validation_indices().collect();
    let bulk = id.bulk_delay;
    let out = fit(model, &train, &val, opts, "inverse", |m, i, ws, want| {
        let (u, _) = ds.segment(i);
        let mut target = convolve_causal(u, linref.h_lin.taps());
        let d = linref.delay.min(target.len());
        target.rotate_right(d);
        target[..d].iter_mut().for_each(|v| *v = 0.0);

        m.forward_train_into(u, &mut ws.fwd);
        id.net.forward_train_into(ws.fwd.output(), &mut ws.fwd2);
        delay_into(ws.fwd2.output(), bulk, &mut ws.est);
        let lv = loss.evaluate(&target, &ws.est, skip)?;
        if !want {
            return Ok(SegmentResult {
                loss: lv.total,
                grads: Vec::new(),
            });
        }
        advance_into(&lv.grad, bulk, &mut ws.dy);
        id.net.backward_into(&ws.fwd2, &ws.dy, false, &mut ws.grads2)?;
        m.backward_into(&ws.fwd, &ws.grads2.input, true, &mut ws.grads)?;
        Ok(SegmentResult {
            loss: lv.total,
            grads: ws.grads.params.clone(),
        })
    })?;
    let after = id.net.params().hash();
    if after != frozen_hash {
        return Err(Error::FrozenModified(format!("{frozen_hash} became {after}")));
    }
    Ok(out)
}
