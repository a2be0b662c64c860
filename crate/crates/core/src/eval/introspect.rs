use alloc::vec::Vec;

use crate::nn::{feedback_compose, FeedbackNet};
use crate::sim::{Episode, Hopper, SimError, StepEvents, TerrainConfig};
use crate::{idx, Action, Gain, State};

/// Network outputs along a noise-free rollout of a feedback net.
#[derive(Clone, Debug, PartialEq)]
pub struct IntrospectionStep {
    pub t: usize,
    pub time: f64,
    pub x: State,
    pub k: Action,
    pub gain: Gain,
    pub x_hat: State,
    pub u: Action,
    /// Events of the step that starts here.
    pub events: StepEvents,
}

impl IntrospectionStep {
    /// Hip-torque gain on the hip angle.
    pub fn hip_gain(&self) -> f64 {
        self.gain[(0, idx::PHI_H)]
    }

    /// Knee-torque gain on the knee angle.
    pub fn knee_gain(&self) -> f64 {
        self.gain[(1, idx::PHI_K)]
    }
}

/// The floor drops by one leg length at 0.3 s.
pub fn fig6_terrain(hopper: &Hopper) -> TerrainConfig {
    TerrainConfig::with_drop(hopper.params.leg_length(), 0.3)
}

/// Rolls out `net` and records its heads at every visited state; stops on a
/// fall or collision like an ordinary rollout.
pub fn introspect(
    hopper: &Hopper,
    net: &FeedbackNet,
    start: &State,
    terrain: &TerrainConfig,
    steps: usize,
) -> Result<Vec<IntrospectionStep>, SimError> {
    let mut ep = Episode::new(hopper, start, terrain)?;
    let mut trace = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = ep.observe();
        let (k, gain, x_hat) = net.heads(&x);
        let u = hopper.clamp_action(&feedback_compose(&k, &gain, &x_hat, &x));
        let time = ep.state.time;
        let events = ep.step(&u)?;
        trace.push(IntrospectionStep { t, time, x, k, gain, x_hat, u, events });
        if events.collision || ep.hip_height() < hopper.fall_height {
            break;
        }
    }
    Ok(trace)
}

/// Returned by [`flight_gain_ratio`] as `(NaN, NaN)` when no impact occurs.
pub const FIRST_IMPACT_NOT_FOUND: (f64, f64) = (f64::NAN, f64::NAN);

/// `|gain|` at the first state after touchdown over the mean `|gain|` of
/// airborne states, for the hip and knee diagonal terms.
pub fn flight_gain_ratio(trace: &[IntrospectionStep]) -> (f64, f64) {
    let Some(i) = trace.iter().position(|s| s.events.impact).map(|i| i + 1).filter(|&i| i < trace.len()) else {
        return FIRST_IMPACT_NOT_FOUND;
    };
    let flight: Vec<&IntrospectionStep> = trace.iter().filter(|s| s.x[idx::CONTACT] < 0.5).collect();
    if flight.is_empty() {
        return FIRST_IMPACT_NOT_FOUND;
    }
    let n = flight.len() as f64;
    let hip = flight.iter().map(|s| s.hip_gain().abs()).sum::<f64>() / n;
    let knee = flight.iter().map(|s| s.knee_gain().abs()).sum::<f64>() / n;
    (trace[i].hip_gain().abs() / hip, trace[i].knee_gain().abs() / knee)
}

/// Lag in `-max_lag..=max_lag` maximizing the mean-removed cross-correlation
/// `sum_t d[t] a[t + lag]`, normalized by the overlap. A positive lag means
/// `desired` leads `actual`.
pub fn lead_lag(desired: &[f64], actual: &[f64], max_lag: usize) -> isize {
    let n = desired.len().min(actual.len());
    if n == 0 {
        return 0;
    }
    let md = desired[..n].iter().sum::<f64>() / n as f64;
    let ma = actual[..n].iter().sum::<f64>() / n as f64;
    let max_lag = max_lag.min(n - 1) as isize;
    let mut best = (f64::NEG_INFINITY, 0isize);
    for lag in -max_lag..=max_lag {
        let mut acc = 0.0;
        let mut count = 0;
        for t in 0..n as isize {
            let s = t + lag;
            if s < 0 || s >= n as isize {
                continue;
            }
            acc += (desired[t as usize] - md) * (actual[s as usize] - ma);
            count += 1;
        }
        let c = acc / count as f64;
        if c > best.0 {
            best = (c, lag);
        }
    }
    best.1
}
