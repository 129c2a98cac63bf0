//! Linear flow-matching paths, the MSE + cosine velocity loss, and an Euler
//! sampler with per-group freezing.

use std::ops::Range;

use crate::error::{Error, Result};

/// Cosine-term weight used for training.
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Norms below this make the cosine term undefined.
pub const NORM_FLOOR: f64 = 1e-12;

/// Endpoints of a conditional path and a time on it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBatch {
    x0: Vec<f64>,
    x1: Vec<f64>,
    t: f64,
}

impl FlowBatch {
    pub fn new(x0: Vec<f64>, x1: Vec<f64>, t: f64) -> Result<Self> {
        if x0.len() != x1.len() {
            return Err(Error::ShapeMismatch(format!("x0 has {} entries, x1 has {}", x0.len(), x1.len())));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
        }
        Ok(FlowBatch { x0, x1, t })
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }
}

/// `x_t = (1 − t)·x0 + t·x1`.
pub fn interpolate(batch: &FlowBatch) -> Vec<f64> {
    let t = batch.t;
    batch
        .x0
        .iter()
        .zip(&batch.x1)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect()
}

/// `u = x1 − x0`, constant along the path.
pub fn target_velocity(batch: &FlowBatch) -> Vec<f64> {
    batch.x0.iter().zip(&batch.x1).map(|(a, b)| b - a).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub mse: f64,
    pub cosine_term: f64,
    pub lambda: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_prediction(prediction: &[f64], batch: &FlowBatch) -> Result<()> {
    if prediction.len() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} entries, batch has {}",
            prediction.len(),
            batch.len()
        )));
    }
    Ok(())
}

/// `‖v − u‖² + λ(1 − cos(v, u))`, with the squared error summed over
/// components. A zero-norm `v` or `u` gets the cosine penalty `λ`.
pub fn loss(prediction: &[f64], batch: &FlowBatch, lambda: f64) -> Result<LossReport> {
    check_prediction(prediction, batch)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} must be non-negative")));
    }
    let u = target_velocity(batch);
    let mse: f64 = prediction.iter().zip(&u).map(|(p, q)| (p - q) * (p - q)).sum();
    let (pn, un) = (dot(prediction, prediction).sqrt(), dot(&u, &u).sqrt());
    let cosine_term = if pn < NORM_FLOOR || un < NORM_FLOOR {
        lambda
    } else {
        let cos = (dot(prediction, &u) / (pn * un)).clamp(-1.0, 1.0);
        lambda * (1.0 - cos)
    };
    Ok(LossReport {
        total: mse + cosine_term,
        mse,
        cosine_term,
        lambda,
    })
}

/// Analytic gradient of [`loss`] with respect to the prediction.
pub fn loss_gradient(prediction: &[f64], batch: &FlowBatch, lambda: f64) -> Result<Vec<f64>> {
    check_prediction(prediction, batch)?;
    let u = target_velocity(batch);
    let (pn, un) = (dot(prediction, prediction).sqrt(), dot(&u, &u).sqrt());
    if pn < NORM_FLOOR || un < NORM_FLOOR {
        return Err(Error::DegenerateDirection);
    }
    let pu = dot(prediction, &u);
    // d/dp cos(p, u) = u/(‖p‖‖u‖) − (pᵀu) p/(‖p‖³‖u‖)
    let scale = lambda / pn;
    let along = pu / (pn * pn * un);
    Ok(prediction
        .iter()
        .zip(&u)
        .map(|(p, q)| 2.0 * (p - q) - scale * (q / un - along * p))
        .collect())
}

/// Which token groups are held at their initial (data) values while sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    pub frozen: Vec<bool>,
}

impl FreezeMask {
    pub fn new(frozen: Vec<bool>) -> Self {
        FreezeMask { frozen }
    }

    pub fn none(groups: usize) -> Self {
        FreezeMask {
            frozen: vec![false; groups],
        }
    }
}

fn check_spans(len: usize, spans: &[Range<usize>]) -> Result<()> {
    let mut next = 0;
    for span in spans {
        if span.start != next || span.end < span.start {
            return Err(Error::ShapeMismatch(format!("group spans do not partition 0..{len}")));
        }
        next = span.end;
    }
    if next != len {
        return Err(Error::ShapeMismatch(format!("group spans cover 0..{next}, state has {len} entries")));
    }
    Ok(())
}

/// Integrates `dx/dt = velocity(x, t)` from 0 to 1 with `steps` uniform
/// Euler steps. Entries of frozen groups are restored to their initial
/// values after every step. `velocity` is called once per step, in order.
pub fn euler_sample<F>(
    x_init: &[f64],
    mut velocity: F,
    steps: usize,
    mask: &FreezeMask,
    group_spans: &[Range<usize>],
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if mask.frozen.len() != group_spans.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} mask entries for {} groups",
            mask.frozen.len(),
            group_spans.len()
        )));
    }
    check_spans(x_init.len(), group_spans)?;

    let frozen: Vec<Range<usize>> = group_spans
        .iter()
        .zip(&mask.frozen)
        .filter(|(_, &f)| f)
        .map(|(s, _)| s.clone())
        .collect();
    let h = 1.0 / steps as f64;
    let mut x = x_init.to_vec();
    for k in 0..steps {
        let t = k as f64 * h;
        let v = velocity(&x, t);
        if v.len() != x.len() {
            return Err(Error::ShapeMismatch(format!(
                "velocity returned {} entries for a state of {}",
                v.len(),
                x.len()
            )));
        }
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += h * vi;
        }
        for span in &frozen {
            x[span.clone()].copy_from_slice(&x_init[span.clone()]);
        }
    }
    Ok(x)
}

/// Latent length of a clip compressed 4× in time: `(frames − 1)/4 + 1`.
pub fn latent_length(frame_count: usize) -> Result<usize> {
    if frame_count == 0 || (frame_count - 1) % 4 != 0 {
        return Err(Error::InvalidFrameCount(frame_count));
    }
    Ok((frame_count - 1) / 4 + 1)
}
