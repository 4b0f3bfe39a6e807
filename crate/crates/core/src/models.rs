//! Benchmark systems: the forced logistic equation and the damped, forced
//! harmonic oscillator, together with their ground-truth parameter signals.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::OdeModel;

/// A ground-truth time-varying parameter signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThetaTruth {
    /// `mean + amplitude * cos(frequency * t)`
    Sinusoid {
        mean: f64,
        amplitude: f64,
        frequency: f64,
    },
    /// `mean + amplitude * s(t / time_scale)` with `s` a unit square wave of
    /// period 2π that starts at +1.
    MultiStep {
        mean: f64,
        amplitude: f64,
        time_scale: f64,
    },
    /// `before` on `[0, at)`, `after` from `at` onwards.
    SingleStep { before: f64, after: f64, at: f64 },
    Linear { slope: f64, intercept: f64 },
    Constant { value: f64 },
    /// `amplitude * exp(-rate * t) + offset`
    ExpDecay {
        amplitude: f64,
        rate: f64,
        offset: f64,
    },
    /// `mean + amplitude * cos(frequency * t)`, used for spring stiffness.
    CosStiffness {
        mean: f64,
        amplitude: f64,
        frequency: f64,
    },
}

/// Unit square wave with period 2π: +1 on `[0, π)`, -1 on `[π, 2π)`.
pub fn square_wave(tau: f64) -> f64 {
    if tau.rem_euclid(2.0 * PI) < PI {
        1.0
    } else {
        -1.0
    }
}

impl ThetaTruth {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ThetaTruth::Sinusoid {
                mean,
                amplitude,
                frequency,
            }
            | ThetaTruth::CosStiffness {
                mean,
                amplitude,
                frequency,
            } => mean + amplitude * (frequency * t).cos(),
            ThetaTruth::MultiStep {
                mean,
                amplitude,
                time_scale,
            } => mean + amplitude * square_wave(t / time_scale),
            ThetaTruth::SingleStep { before, after, at } => {
                if t < at {
                    before
                } else {
                    after
                }
            }
            ThetaTruth::Linear { slope, intercept } => slope * t + intercept,
            ThetaTruth::Constant { value } => value,
            ThetaTruth::ExpDecay {
                amplitude,
                rate,
                offset,
            } => amplitude * (-rate * t).exp() + offset,
        }
    }

    pub fn logistic_sinusoid() -> Self {
        ThetaTruth::Sinusoid {
            mean: 20.0,
            amplitude: 10.0,
            frequency: 0.2,
        }
    }

    pub fn logistic_multi_step() -> Self {
        ThetaTruth::MultiStep {
            mean: 20.0,
            amplitude: 10.0,
            time_scale: 10.0,
        }
    }

    pub fn logistic_single_step() -> Self {
        ThetaTruth::SingleStep {
            before: 10.0,
            after: 80.0,
            at: 50.0,
        }
    }

    pub fn logistic_linear() -> Self {
        ThetaTruth::Linear {
            slope: 0.5,
            intercept: 10.0,
        }
    }

    pub fn oscillator_forcing() -> Self {
        ThetaTruth::ExpDecay {
            amplitude: 5.0,
            rate: 0.2,
            offset: 5.0,
        }
    }

    pub fn oscillator_stiffness() -> Self {
        ThetaTruth::CosStiffness {
            mean: 1.0,
            amplitude: 1.0,
            frequency: 0.5,
        }
    }
}

/// `dx/dt = a x - b x^2 + theta`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticModel {
    pub growth: f64,
    pub crowding: f64,
}

impl Default for LogisticModel {
    fn default() -> Self {
        LogisticModel {
            growth: 0.01,
            crowding: 0.001,
        }
    }
}

impl OdeModel for LogisticModel {
    fn dim_state(&self) -> usize {
        1
    }

    fn dim_param(&self) -> usize {
        1
    }

    fn rhs(&self, _t: f64, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let x = x[0];
        DVector::from_element(1, self.growth * x - self.crowding * x * x + theta[0])
    }

    fn jacobian(&self, _t: f64, x: &DVector<f64>, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(
            1,
            1,
            self.growth - 2.0 * self.crowding * x[0],
        ))
    }
}

/// Where a time-varying oscillator coefficient comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    /// Read from this entry of the parameter vector.
    Estimated(usize),
    /// Known signal evaluated at the current time.
    Bound(ThetaTruth),
}

impl Slot {
    fn value(&self, t: f64, theta: &DVector<f64>) -> f64 {
        match self {
            Slot::Estimated(i) => theta[*i],
            Slot::Bound(truth) => truth.eval(t),
        }
    }
}

/// `p' = v`, `m v' = -k(t) p - b v + q(t)` with state `[p, v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorModel {
    pub damping: f64,
    pub mass: f64,
    pub stiffness: Slot,
    pub forcing: Slot,
}

impl OscillatorModel {
    fn n_estimated(&self) -> usize {
        [&self.stiffness, &self.forcing]
            .iter()
            .filter(|s| matches!(s, Slot::Estimated(_)))
            .count()
    }
}

impl OdeModel for OscillatorModel {
    fn dim_state(&self) -> usize {
        2
    }

    fn dim_param(&self) -> usize {
        self.n_estimated()
    }

    fn rhs(&self, t: f64, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let (p, v) = (x[0], x[1]);
        let k = self.stiffness.value(t, theta);
        let q = self.forcing.value(t, theta);
        DVector::from_vec(vec![v, (-k * p - self.damping * v + q) / self.mass])
    }

    fn jacobian(&self, t: f64, _x: &DVector<f64>, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let k = self.stiffness.value(t, theta);
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 1.0, -k / self.mass, -self.damping / self.mass],
        ))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model id `{0}` (known: {known})", known = MODEL_IDS.join(", "))]
    UnknownModel(String),
}

/// Identifiers accepted by [`benchmark`].
pub const MODEL_IDS: &[&str] = &[
    "logistic/sinusoid",
    "logistic/multi-step",
    "logistic/single-step",
    "logistic/linear",
    "oscillator/q",
    "oscillator/k-const",
    "oscillator/k-cos",
    "oscillator/k-and-q",
];

/// A benchmark system with its estimated slots and their true signals.
#[derive(Clone)]
pub struct BenchmarkModel {
    pub id: String,
    pub ode: Arc<dyn OdeModel>,
    pub constants: BTreeMap<String, f64>,
    /// Names of the estimated parameter slots, in parameter-vector order.
    pub theta_roles: Vec<String>,
    /// One truth per estimated slot.
    pub truth: Vec<ThetaTruth>,
    pub initial_state: DVector<f64>,
}

impl std::fmt::Debug for BenchmarkModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BenchmarkModel")
            .field("id", &self.id)
            .field("constants", &self.constants)
            .field("theta_roles", &self.theta_roles)
            .field("truth", &self.truth)
            .field("initial_state", &self.initial_state)
            .finish()
    }
}

impl BenchmarkModel {
    pub fn dim_state(&self) -> usize {
        self.ode.dim_state()
    }

    pub fn dim_param(&self) -> usize {
        self.ode.dim_param()
    }

    pub fn theta_at(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.truth.len(), self.truth.iter().map(|tr| tr.eval(t)))
    }
}

/// Forced logistic equation with the given forcing truth.
pub fn logistic_model(id: &str, truth: ThetaTruth) -> BenchmarkModel {
    let ode = LogisticModel::default();
    BenchmarkModel {
        id: id.to_string(),
        constants: BTreeMap::from([
            ("a".to_string(), ode.growth),
            ("b".to_string(), ode.crowding),
        ]),
        ode: Arc::new(ode),
        theta_roles: vec!["theta".to_string()],
        truth: vec![truth],
        initial_state: DVector::from_element(1, 10.0),
    }
}

/// Forced oscillator estimating the listed coefficients.
///
/// `stiffness` is the true k(t); q(t) is always the decaying forcing.
pub fn oscillator_model(
    id: &str,
    stiffness: ThetaTruth,
    estimate_k: bool,
    estimate_q: bool,
) -> BenchmarkModel {
    let forcing = ThetaTruth::oscillator_forcing();
    let mut roles = Vec::new();
    let mut truth = Vec::new();
    let mut slot = |name: &str, tr: ThetaTruth, estimate: bool| {
        if estimate {
            roles.push(name.to_string());
            truth.push(tr);
            Slot::Estimated(truth.len() - 1)
        } else {
            Slot::Bound(tr)
        }
    };
    let k_slot = slot("k", stiffness, estimate_k);
    let q_slot = slot("q", forcing, estimate_q);
    let ode = OscillatorModel {
        damping: 5.0,
        mass: 1.0,
        stiffness: k_slot,
        forcing: q_slot,
    };
    BenchmarkModel {
        id: id.to_string(),
        constants: BTreeMap::from([
            ("b".to_string(), ode.damping),
            ("m".to_string(), ode.mass),
        ]),
        ode: Arc::new(ode),
        theta_roles: roles,
        truth,
        initial_state: DVector::from_vec(vec![0.0, 1.0]),
    }
}

/// Look up a benchmark by identifier, e.g. `"logistic/sinusoid"`.
pub fn benchmark(id: &str) -> Result<BenchmarkModel, ModelError> {
    let model = match id {
        "logistic/sinusoid" => logistic_model(id, ThetaTruth::logistic_sinusoid()),
        "logistic/multi-step" => logistic_model(id, ThetaTruth::logistic_multi_step()),
        "logistic/single-step" => logistic_model(id, ThetaTruth::logistic_single_step()),
        "logistic/linear" => logistic_model(id, ThetaTruth::logistic_linear()),
        "oscillator/q" => oscillator_model(id, ThetaTruth::Constant { value: 2.0 }, false, true),
        "oscillator/k-const" => {
            oscillator_model(id, ThetaTruth::Constant { value: 2.0 }, true, false)
        }
        "oscillator/k-cos" => oscillator_model(id, ThetaTruth::oscillator_stiffness(), true, false),
        "oscillator/k-and-q" => {
            oscillator_model(id, ThetaTruth::oscillator_stiffness(), true, true)
        }
        _ => return Err(ModelError::UnknownModel(id.to_string())),
    };
    Ok(model)
}
