//! Adam, global-norm clipping and the plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::checkpoint::{CheckpointReader, CheckpointWriter};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub(crate) fn write(&self, w: &mut CheckpointWriter) {
        w.put_u64(self.step);
        w.put_f64s(&self.m);
        w.put_f64s(&self.v);
    }

    pub(crate) fn read(r: &mut CheckpointReader) -> Result<Self> {
        let step = r.u64()?;
        let m = r.f64s()?;
        let v = r.f64s()?;
        if m.len() != v.len() {
            return Err(Error::Checkpoint("adam moment sizes differ".into()));
        }
        Ok(AdamState { m, v, step })
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Rescales `grads` to global L2 norm `max_norm` when larger; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub lr0: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub clip_norm: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Plateau reductions without any improvement before training stops.
    pub early_stop_patience: usize,
    /// Wall-clock budget in seconds; 0 disables it.
    pub time_budget_secs: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule::identification()
    }
}

impl TrainSchedule {
    /// lr 0.001, ×0.1 after 10 flat epochs.
    pub fn identification() -> Self {
        TrainSchedule {
            lr0: 1e-3,
            plateau_factor: 0.1,
            plateau_patience: 10,
            clip_norm: 5.0,
            batch: 8,
            max_epochs: 100,
            early_stop_patience: 3,
            time_budget_secs: 0.0,
        }
    }

    /// lr 0.001, ×0.2 after 5 flat epochs.
    pub fn inverse() -> Self {
        TrainSchedule {
            plateau_factor: 0.2,
            plateau_patience: 5,
            ..TrainSchedule::identification()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("schedule: {m}")));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        if self.plateau_patience == 0 || self.batch == 0 || self.max_epochs == 0 {
            return bad("patience, batch and max_epochs must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if !(self.time_budget_secs >= 0.0) {
            return bad("time budget must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlateauEvent {
    Improved,
    Waiting,
    Reduced { from: f64, to: f64 },
    Stop,
}

/// Reduce-on-plateau learning rate with a bounded number of fruitless reductions.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    early_stop: usize,
    best: f64,
    bad_epochs: usize,
    fruitless_reductions: usize,
}

impl PlateauScheduler {
    pub fn new(s: &TrainSchedule) -> Self {
        PlateauScheduler {
            lr: s.lr0,
            factor: s.plateau_factor,
            patience: s.plateau_patience,
            early_stop: s.early_stop_patience,
            best: f64::INFINITY,
            bad_epochs: 0,
            fruitless_reductions: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch's validation loss.
    pub fn observe(&mut self, val_loss: f64) -> PlateauEvent {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
            self.fruitless_reductions = 0;
            return PlateauEvent::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return PlateauEvent::Waiting;
        }
        self.bad_epochs = 0;
        self.fruitless_reductions += 1;
        if self.early_stop > 0 && self.fruitless_reductions >= self.early_stop {
            return PlateauEvent::Stop;
        }
        let from = self.lr;
        self.lr *= self.factor;
        PlateauEvent::Reduced { from, to: self.lr }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.5, -1.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 1e-3).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.3, -2.0, 1e-3], &mut s, 0.01).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
        assert!((p[2] + 0.01).abs() < 1e-7);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut p = vec![10.0];
        let mut s = AdamState::new(1);
        let mut last = 10.0f64;
        for _ in 0..100 {
            let g = [p[0]];
            adam_step(&mut p, &g, &mut s, 0.1).unwrap();
            assert!(p[0].abs() < last);
            last = p[0].abs();
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![0.0; 2];
        assert!(adam_step(&mut p, &[0.0], &mut AdamState::new(2), 0.1).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 0.0];
        assert_eq!(clip_grad_norm(&mut g, 5.0), 3.0);
        assert_eq!(g, vec![3.0, 0.0]);
        let mut g = vec![6.0, 8.0];
        assert_eq!(clip_grad_norm(&mut g, 5.0), 10.0);
        assert!((g.iter().map(|v| v * v).sum::<f64>().sqrt() - 5.0).abs() < 1e-12);
        assert_eq!(g, vec![3.0, 4.0]);
        let mut z = vec![0.0; 4];
        assert_eq!(clip_grad_norm(&mut z, 5.0), 0.0);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plateau_schedule() {
        let s = TrainSchedule {
            plateau_patience: 2,
            plateau_factor: 0.5,
            early_stop_patience: 2,
            ..TrainSchedule::identification()
        };
        let mut p = PlateauScheduler::new(&s);
        assert_eq!(p.observe(1.0), PlateauEvent::Improved);
        assert_eq!(p.observe(1.0), PlateauEvent::Waiting);
        assert_eq!(p.observe(2.0), PlateauEvent::Reduced { from: 1e-3, to: 5e-4 });
        assert_eq!(p.observe(0.5), PlateauEvent::Improved);
        assert_eq!(p.observe(0.6), PlateauEvent::Waiting);
        assert!(matches!(p.observe(0.6), PlateauEvent::Reduced { .. }));
        assert_eq!(p.observe(0.6), PlateauEvent::Waiting);
        assert_eq!(p.observe(0.6), PlateauEvent::Stop);
        assert_eq!(p.lr(), 2.5e-4);
    }

    #[test]
    fn schedule_presets() {
        let a = TrainSchedule::identification();
        assert_eq!((a.lr0, a.plateau_factor, a.plateau_patience, a.clip_norm, a.batch), (1e-3, 0.1, 10, 5.0, 8));
        let b = TrainSchedule::inverse();
        assert_eq!((b.plateau_factor, b.plateau_patience), (0.2, 5));
        assert!(TrainSchedule { plateau_factor: 1.0, ..a }.validate().is_err());
    }
}
