//! Closed-form linear-interpolant flows over isotropic Gaussian mixtures.
//!
//! With `x_t = (1 - t) x0 + t eps`, a prior component `N(mu, s^2 I)` has the
//! marginal `N((1 - t) mu, ((1 - t)^2 s^2 + t^2) I)` at time `t`. Conditioning
//! on `x_t` is then plain Gaussian algebra, which gives exact expressions for
//!
//! * the velocity `u_t(x) = E[eps - x0 | x_t = x]`,
//! * the score `grad log p_t(x)`, both directly and from the velocity via
//!   `score = -((1 - t) u + x) / t`,
//! * the lookahead `x - t u`, which equals `E[x0 | x_t = x]` exactly.
//!
//! Sampling runs backwards in time with `dt < 0`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::budget::BudgetLedger;
use crate::error::{Error, Result};
use crate::rng;

/// Lower clamp on marginal variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Below this time the velocity form of the score is refused.
pub const SCORE_TIME_FLOOR: f64 = 1e-6;

const WEIGHT_TOL: f64 = 1e-12;
const TIME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub scale: f64,
}

/// An isotropic Gaussian mixture prior pushed through the linear interpolant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlowSpecDoc", into = "FlowSpecDoc")]
pub struct FlowSpec {
    dim: usize,
    components: Vec<Component>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComponentDoc {
    weight: f64,
    mean: Vec<f64>,
    scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FlowSpecDoc {
    dim: usize,
    components: Vec<ComponentDoc>,
}

impl TryFrom<FlowSpecDoc> for FlowSpec {
    type Error = Error;

    fn try_from(doc: FlowSpecDoc) -> Result<Self> {
        let components = doc
            .components
            .into_iter()
            .map(|c| Component {
                weight: c.weight,
                mean: DVector::from_vec(c.mean),
                scale: c.scale,
            })
            .collect();
        FlowSpec::new(doc.dim, components)
    }
}

impl From<FlowSpec> for FlowSpecDoc {
    fn from(spec: FlowSpec) -> Self {
        FlowSpecDoc {
            dim: spec.dim,
            components: spec
                .components
                .into_iter()
                .map(|c| ComponentDoc {
                    weight: c.weight,
                    mean: c.mean.as_slice().to_vec(),
                    scale: c.scale,
                })
                .collect(),
        }
    }
}

/// One component of the time-`t` marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub variance: f64,
}

impl FlowSpec {
    pub fn new(dim: usize, components: Vec<Component>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpec("dim must be positive".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidSpec("at least one component required".into()));
        }
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::InvalidSpec(format!(
                    "component {i} mean has dim {}, expected {dim}",
                    c.mean.len()
                )));
            }
            if !(c.scale > 0.0 && c.scale.is_finite()) {
                return Err(Error::InvalidSpec(format!("component {i} scale must be positive")));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidSpec(format!("component {i} weight must be nonnegative")));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec(format!("component {i} mean is not finite")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidSpec(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, components })
    }

    /// Single isotropic Gaussian `N(mean, scale^2 I)`.
    pub fn gaussian(mean: DVector<f64>, scale: f64) -> Result<Self> {
        let dim = mean.len();
        Self::new(
            dim,
            vec![Component {
                weight: 1.0,
                mean,
                scale,
            }],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Mean of the data distribution (t = 0).
    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    /// Per-coordinate variance of the data distribution, averaged over coordinates.
    pub fn mean_coordinate_variance(&self) -> f64 {
        let m = self.mean();
        let mut acc = 0.0;
        for c in &self.components {
            let d = &c.mean - &m;
            acc += c.weight * (c.scale * c.scale + d.norm_squared() / self.dim as f64);
        }
        acc
    }

    pub fn marginal_params(&self, t: f64) -> Result<Vec<MarginalComponent>> {
        check_time(t)?;
        let a = 1.0 - t;
        Ok(self
            .components
            .iter()
            .map(|c| MarginalComponent {
                weight: c.weight,
                mean: &c.mean * a,
                variance: marginal_variance(c.scale, t),
            })
            .collect())
    }

    /// Log-density of the time-`t` marginal at `x`.
    pub fn log_density(&self, x: &DVector<f64>, t: f64) -> Result<f64> {
        self.check_dim(x)?;
        check_time(t)?;
        let terms = self.log_terms(x, t);
        Ok(log_sum_exp(terms.iter().map(|p| p.log_joint)))
    }

    pub fn velocity(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        check_time(t)?;
        Ok(self.velocity_unchecked(x, t))
    }

    /// Direct mixture score, valid on all of `[0, 1]`.
    pub fn score(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        check_time(t)?;
        Ok(self.score_unchecked(x, t))
    }

    /// Score recovered from the velocity field.
    pub fn score_via_velocity(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        check_time(t)?;
        if t < SCORE_TIME_FLOOR {
            return Err(Error::ScoreNearZero {
                t,
                floor: SCORE_TIME_FLOOR,
            });
        }
        let u = self.velocity_unchecked(x, t);
        Ok(-(u * (1.0 - t) + x) / t)
    }

    /// `E[x0 | x_t = x]` by direct conditioning.
    pub fn posterior_mean(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        check_time(t)?;
        let a = 1.0 - t;
        let mut out = DVector::zeros(self.dim);
        for (c, p) in self.components.iter().zip(self.posterior_terms(x, t)) {
            let gain = a * c.scale * c.scale / p.variance;
            out += (&c.mean + &p.residual * gain) * p.resp;
        }
        Ok(out)
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn log_terms(&self, x: &DVector<f64>, t: f64) -> Vec<Term> {
        let a = 1.0 - t;
        let d = self.dim as f64;
        self.components
            .iter()
            .map(|c| {
                let variance = marginal_variance(c.scale, t);
                let residual = x - &c.mean * a;
                let log_joint = c.weight.ln()
                    - 0.5 * d * (2.0 * std::f64::consts::PI * variance).ln()
                    - 0.5 * residual.norm_squared() / variance;
                Term {
                    log_joint,
                    residual,
                    variance,
                    resp: 0.0,
                }
            })
            .collect()
    }

    fn posterior_terms(&self, x: &DVector<f64>, t: f64) -> Vec<Term> {
        let mut terms = self.log_terms(x, t);
        if terms.len() == 1 {
            terms[0].resp = 1.0;
            return terms;
        }
        let lse = log_sum_exp(terms.iter().map(|p| p.log_joint));
        for p in &mut terms {
            p.resp = (p.log_joint - lse).exp();
        }
        terms
    }

    pub(crate) fn velocity_unchecked(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let a = 1.0 - t;
        let mut out = DVector::zeros(self.dim);
        for (c, p) in self.components.iter().zip(self.posterior_terms(x, t)) {
            // E[eps | x, c] - E[x0 | x, c]
            let coef = (t - a * c.scale * c.scale) / p.variance;
            out += (&p.residual * coef - &c.mean) * p.resp;
        }
        out
    }

    pub(crate) fn score_unchecked(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for p in self.posterior_terms(x, t) {
            out -= &p.residual * (p.resp / p.variance);
        }
        out
    }
}

struct Term {
    log_joint: f64,
    residual: DVector<f64>,
    variance: f64,
    resp: f64,
}

fn marginal_variance(scale: f64, t: f64) -> f64 {
    let a = 1.0 - t;
    (a * a * scale * scale + t * t).max(VARIANCE_FLOOR)
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + it.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(())
}

/// A point on a sampling trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub value: DVector<f64>,
    pub time: f64,
    /// RNG lineage; children extend their parent's path.
    pub seed_path: Vec<u64>,
    /// Candidate id this state was derived from, if any.
    pub parent: Option<u64>,
}

impl LatentState {
    pub fn new(value: DVector<f64>, time: f64, seed_path: Vec<u64>) -> Result<Self> {
        check_time(time)?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("latent value is not finite".into()));
        }
        Ok(Self {
            value,
            time,
            seed_path,
            parent: None,
        })
    }

    /// Standard normal draw at `t = 1` from the stream `[seed, INIT_NOISE, draw]`.
    pub fn initial_noise(dim: usize, seed: u64, draw: u64) -> Self {
        let path = vec![seed, rng::stream::INIT_NOISE, draw];
        let mut r = rng::stream_rng(&path);
        let value = DVector::from_fn(dim, |_, _| r.sample::<f64, _>(StandardNormal));
        Self {
            value,
            time: 1.0,
            seed_path: path,
            parent: None,
        }
    }
}

/// Strictly decreasing grid of times from 1 to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StepSchedule {
    times: Vec<f64>,
}

impl TryFrom<Vec<f64>> for StepSchedule {
    type Error = Error;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        StepSchedule::from_times(times)
    }
}

impl From<StepSchedule> for Vec<f64> {
    fn from(s: StepSchedule) -> Self {
        s.times
    }
}

impl StepSchedule {
    /// `steps` equal steps, `times[i] = 1 - i / steps`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("step count must be positive".into()));
        }
        let n = steps as f64;
        let times = (0..=steps).map(|i| 1.0 - i as f64 / n).collect::<Vec<_>>();
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidConfig("schedule needs at least two times".into()));
        }
        if times[0] != 1.0 || *times.last().unwrap() != 0.0 {
            return Err(Error::InvalidConfig("schedule must start at 1.0 and end at 0.0".into()));
        }
        if times.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidConfig("schedule must be strictly decreasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Index of the grid time equal to `t` (within 1e-12).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= TIME_TOL)
    }

    /// Index of the grid time nearest to `t`; ties go to the earlier index.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() - 1e-12 {
                best = i;
            }
        }
        best
    }
}

/// Diffusion coefficient schedule for stochastic steps and perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSchedule {
    Constant(f64),
    /// Linear in time from `start` at `t = 1` to `end` at `t = 0`, and
    /// linear over search rounds from `start` (first) to `end` (last).
    Linear { start: f64, end: f64 },
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        SigmaSchedule::Constant(0.0)
    }
}

impl SigmaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SigmaSchedule::Constant(s) => s >= 0.0 && s.is_finite(),
            SigmaSchedule::Linear { start, end } => {
                start >= 0.0 && end >= 0.0 && start.is_finite() && end.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("sigma must be finite and nonnegative".into()))
        }
    }

    pub fn at_time(&self, t: f64) -> f64 {
        match *self {
            SigmaSchedule::Constant(s) => s,
            SigmaSchedule::Linear { start, end } => end + (start - end) * t,
        }
    }

    /// Value for round `k` (0-based) of `rounds`.
    pub fn at_round(&self, k: usize, rounds: usize) -> f64 {
        match *self {
            SigmaSchedule::Constant(s) => s,
            SigmaSchedule::Linear { start, end } => {
                if rounds <= 1 {
                    start
                } else {
                    start + (end - start) * k as f64 / (rounds - 1) as f64
                }
            }
        }
    }
}

fn next_time(x: &LatentState, dt: f64) -> Result<f64> {
    if !(dt < 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("reverse step needs dt < 0, got {dt}")));
    }
    let t = x.time + dt;
    if t < -TIME_TOL {
        return Err(Error::StepPastZero { time: x.time, dt });
    }
    Ok(t.max(0.0))
}

/// One explicit Euler step `x + u(x, t) dt`; charges one velocity evaluation.
pub fn ode_step(
    x: &LatentState,
    spec: &FlowSpec,
    dt: f64,
    ledger: &mut BudgetLedger,
) -> Result<LatentState> {
    spec.check_dim(&x.value)?;
    let t = next_time(x, dt)?;
    let u = spec.velocity(&x.value, x.time)?;
    ledger.charge_velocity(1);
    Ok(LatentState {
        value: &x.value + u * dt,
        time: t,
        seed_path: x.seed_path.clone(),
        parent: x.parent,
    })
}

/// One Euler-Maruyama step of the marginal-preserving reverse SDE
/// `dx = (u - sigma^2 / 2 * score) dt + sigma dw` with `dt < 0`.
///
/// Charges one velocity and one score evaluation. `sigma = 0` reproduces
/// [`ode_step`] bit for bit and draws nothing from `rng`.
pub fn sde_step<R: Rng + ?Sized>(
    x: &LatentState,
    spec: &FlowSpec,
    dt: f64,
    sigma: f64,
    rng: &mut R,
    ledger: &mut BudgetLedger,
) -> Result<LatentState> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma must be nonnegative, got {sigma}")));
    }
    spec.check_dim(&x.value)?;
    let t = next_time(x, dt)?;
    let u = spec.velocity(&x.value, x.time)?;
    ledger.charge_velocity(1);
    ledger.charge_score(1);
    if sigma == 0.0 {
        return Ok(LatentState {
            value: &x.value + u * dt,
            time: t,
            seed_path: x.seed_path.clone(),
            parent: x.parent,
        });
    }
    let score = spec.score(&x.value, x.time)?;
    let drift = u - score * (0.5 * sigma * sigma);
    let amp = sigma * (-dt).sqrt();
    let noise = DVector::from_fn(x.value.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(LatentState {
        value: &x.value + drift * dt + noise * amp,
        time: t,
        seed_path: x.seed_path.clone(),
        parent: x.parent,
    })
}

/// One-Euler extrapolation to `t = 0`: `x - t u(x, t)`.
///
/// Costs one velocity evaluation unless `t = 0`, where it is the identity.
pub fn lookahead(
    x: &LatentState,
    spec: &FlowSpec,
    ledger: &mut BudgetLedger,
) -> Result<DVector<f64>> {
    spec.check_dim(&x.value)?;
    check_time(x.time)?;
    if x.time == 0.0 {
        return Ok(x.value.clone());
    }
    let u = spec.velocity(&x.value, x.time)?;
    ledger.charge_velocity(1);
    Ok(&x.value - u * x.time)
}

/// Euler ODE solve along `schedule` from grid index `from` to `to`.
///
/// Times are snapped to the grid after each step.
pub fn solve_ode(
    x: &LatentState,
    spec: &FlowSpec,
    schedule: &StepSchedule,
    from: usize,
    to: usize,
    ledger: &mut BudgetLedger,
) -> Result<LatentState> {
    check_segment(x, schedule, from, to)?;
    let times = schedule.times();
    let mut state = x.clone();
    for i in from..to {
        state = ode_step(&state, spec, times[i + 1] - times[i], ledger)?;
        state.time = times[i + 1];
    }
    Ok(state)
}

/// Euler-Maruyama solve along `schedule` with `sigma_t` from `sigma`.
pub fn solve_sde<R: Rng + ?Sized>(
    x: &LatentState,
    spec: &FlowSpec,
    schedule: &StepSchedule,
    from: usize,
    to: usize,
    sigma: &SigmaSchedule,
    rng: &mut R,
    ledger: &mut BudgetLedger,
) -> Result<LatentState> {
    check_segment(x, schedule, from, to)?;
    let times = schedule.times();
    let mut state = x.clone();
    for i in from..to {
        let s = sigma.at_time(times[i]);
        state = sde_step(&state, spec, times[i + 1] - times[i], s, rng, ledger)?;
        state.time = times[i + 1];
    }
    Ok(state)
}

fn check_segment(x: &LatentState, schedule: &StepSchedule, from: usize, to: usize) -> Result<()> {
    if to > schedule.steps() {
        return Err(Error::StepPastZero {
            time: x.time,
            dt: -(to as f64),
        });
    }
    if from > to {
        return Err(Error::InvalidConfig(format!("segment {from}..{to} runs forward in time")));
    }
    if (schedule.times()[from] - x.time).abs() > TIME_TOL {
        return Err(Error::InvalidConfig(format!(
            "state at t={} does not sit on grid index {from}",
            x.time
        )));
    }
    Ok(())
}

/// Full ODE solve from `[seed, INIT_NOISE, draw]` noise to `t = 0`.
pub fn sample_ode(
    spec: &FlowSpec,
    schedule: &StepSchedule,
    seed: u64,
    draw: u64,
    ledger: &mut BudgetLedger,
) -> Result<LatentState> {
    let z = LatentState::initial_noise(spec.dim(), seed, draw);
    solve_ode(&z, spec, schedule, 0, schedule.steps(), ledger)
}

/// Full SDE solve; Brownian increments come from `[seed, SDE, draw]`.
pub fn sample_sde(
    spec: &FlowSpec,
    schedule: &StepSchedule,
    sigma: &SigmaSchedule,
    seed: u64,
    draw: u64,
    ledger: &mut BudgetLedger,
) -> Result<LatentState> {
    let z = LatentState::initial_noise(spec.dim(), seed, draw);
    let mut r = rng::stream_rng(&[seed, rng::stream::SDE, draw]);
    solve_sde(&z, spec, schedule, 0, schedule.steps(), sigma, &mut r, ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn symmetric_pair() -> FlowSpec {
        FlowSpec::new(
            1,
            vec![
                Component {
                    weight: 0.5,
                    mean: v(&[1.0]),
                    scale: 0.5,
                },
                Component {
                    weight: 0.5,
                    mean: v(&[-1.0]),
                    scale: 0.5,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn marginal_endpoints() {
        let spec = FlowSpec::gaussian(v(&[0.0]), 1.0).unwrap();
        for t in [0.0, 1.0] {
            let m = spec.marginal_params(t).unwrap();
            assert_eq!(m[0].mean[0], 0.0);
            assert_abs_diff_eq!(m[0].variance, 1.0, epsilon = 1e-15);
        }
        let spec = FlowSpec::gaussian(v(&[2.0]), 0.5).unwrap();
        let m = spec.marginal_params(0.5).unwrap();
        assert_abs_diff_eq!(m[0].mean[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[0].variance, 0.3125, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(FlowSpec::gaussian(v(&[0.0]), 0.0).is_err());
        let bad = FlowSpec::new(
            1,
            vec![Component {
                weight: 0.9,
                mean: v(&[0.0]),
                scale: 1.0,
            }],
        );
        assert!(matches!(bad, Err(Error::InvalidSpec(_))));
        let spec = FlowSpec::gaussian(v(&[0.0, 0.0]), 1.0).unwrap();
        assert!(matches!(
            spec.velocity(&v(&[1.0]), 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(spec.velocity(&v(&[1.0, 0.0]), 1.5), Err(Error::TimeOutOfRange(_))));
    }

    #[test]
    fn velocity_trivial_cases() {
        let spec = FlowSpec::gaussian(v(&[0.0]), 1.0).unwrap();
        assert_abs_diff_eq!(spec.velocity(&v(&[0.7]), 0.5).unwrap()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.velocity(&v(&[2.0]), 1.0).unwrap()[0], 2.0, epsilon = 1e-15);
        let pair = symmetric_pair();
        for t in [0.0, 0.3, 0.8, 1.0] {
            assert_abs_diff_eq!(pair.velocity(&v(&[0.0]), t).unwrap()[0], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn score_velocity_relation_refuses_t_zero() {
        let spec = FlowSpec::gaussian(v(&[0.0]), 1.0).unwrap();
        assert!(matches!(
            spec.score_via_velocity(&v(&[1.0]), 0.0),
            Err(Error::ScoreNearZero { .. })
        ));
        assert!(spec.score(&v(&[1.0]), 0.0).is_ok());
        assert_abs_diff_eq!(spec.score(&v(&[1.0]), 0.5).unwrap()[0], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn score_vanishes_at_single_component_mode() {
        let spec = FlowSpec::gaussian(v(&[1.0, -2.0, 0.5]), 0.3).unwrap();
        for t in [0.0, 0.2, 0.9] {
            let m = &spec.marginal_params(t).unwrap()[0].mean;
            assert!(spec.score(m, t).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn euler_step_arithmetic() {
        // u(x, 1) = x for the standard normal prior at pure noise, so x=2 gives u=2.
        let spec = FlowSpec::gaussian(v(&[0.0]), 1.0).unwrap();
        let x = LatentState::new(v(&[2.0]), 1.0, vec![]).unwrap();
        let mut ledger = BudgetLedger::new();
        let y = ode_step(&x, &spec, -0.1, &mut ledger).unwrap();
        assert_abs_diff_eq!(y.value[0], 1.8, epsilon = 1e-15);
        assert_abs_diff_eq!(y.time, 0.9, epsilon = 1e-15);
        assert_eq!(ledger.total_velocity(), 1);
    }

    #[test]
    fn zero_field_leaves_state() {
        let pair = symmetric_pair();
        let x = LatentState::new(v(&[0.0]), 0.6, vec![]).unwrap();
        let mut ledger = BudgetLedger::new();
        let y = ode_step(&x, &pair, -0.2, &mut ledger).unwrap();
        assert_eq!(y.value[0], 0.0);
    }

    #[test]
    fn steps_past_zero_rejected() {
        let spec = FlowSpec::gaussian(v(&[0.0]), 1.0).unwrap();
        let x = LatentState::new(v(&[0.1]), 0.05, vec![]).unwrap();
        let mut ledger = BudgetLedger::new();
        assert!(matches!(
            ode_step(&x, &spec, -0.1, &mut ledger),
            Err(Error::StepPastZero { .. })
        ));
        let mut r = rng::stream_rng(&[1]);
        assert!(matches!(
            sde_step(&x, &spec, -0.1, 0.3, &mut r, &mut ledger),
            Err(Error::StepPastZero { .. })
        ));
        assert_eq!(ledger.total_velocity(), 0);
    }

    #[test]
    fn sde_with_zero_sigma_is_ode() {
        let spec = FlowSpec::gaussian(v(&[3.0, -1.0]), 0.5).unwrap();
        let sched = StepSchedule::uniform(20).unwrap();
        let mut l1 = BudgetLedger::new();
        let mut l2 = BudgetLedger::new();
        let a = sample_ode(&spec, &sched, 9, 0, &mut l1).unwrap();
        let b = sample_sde(&spec, &sched, &SigmaSchedule::Constant(0.0), 9, 0, &mut l2).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(l1.total_velocity(), l2.total_velocity());
        assert_eq!(l2.total_score(), 20);
    }

    #[test]
    fn lookahead_at_zero_is_free_identity() {
        let spec = FlowSpec::gaussian(v(&[0.0]), 1.0).unwrap();
        let x = LatentState::new(v(&[0.4]), 0.0, vec![]).unwrap();
        let mut ledger = BudgetLedger::new();
        assert_eq!(lookahead(&x, &spec, &mut ledger).unwrap()[0], 0.4);
        assert_eq!(ledger.total_velocity(), 0);

        let x = LatentState::new(v(&[2.0]), 1.0, vec![]).unwrap();
        assert_abs_diff_eq!(lookahead(&x, &spec, &mut ledger).unwrap()[0], 0.0, epsilon = 1e-15);
        assert_eq!(ledger.total_velocity(), 1);
    }

    #[test]
    fn schedules() {
        let s = StepSchedule::uniform(4).unwrap();
        assert_eq!(s.times(), &[1.0, 0.75, 0.5, 0.25, 0.0]);
        assert_eq!(s.index_of(0.5), Some(2));
        assert_eq!(s.nearest_index(0.6), 2);
        assert!(StepSchedule::from_times(vec![1.0, 0.5, 0.5, 0.0]).is_err());
        assert!(StepSchedule::from_times(vec![0.9, 0.0]).is_err());
        assert!(StepSchedule::uniform(0).is_err());
        let parsed: StepSchedule = serde_json::from_str("[1.0, 0.4, 0.0]").unwrap();
        assert_eq!(parsed.steps(), 2);
    }

    #[test]
    fn sigma_schedules() {
        let lin = SigmaSchedule::Linear { start: 1.0, end: 0.2 };
        assert_abs_diff_eq!(lin.at_time(1.0), 1.0);
        assert_abs_diff_eq!(lin.at_time(0.0), 0.2);
        assert_abs_diff_eq!(lin.at_round(0, 3), 1.0);
        assert_abs_diff_eq!(lin.at_round(2, 3), 0.2);
        assert!(SigmaSchedule::Constant(-1.0).validate().is_err());
    }

    #[test]
    fn flow_spec_json_roundtrip() {
        let spec = symmetric_pair();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"components\""));
        let back: FlowSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"dim":1,"components":[{"weight":0.5,"mean":[0.0],"scale":1.0}]}"#;
        assert!(serde_json::from_str::<FlowSpec>(bad).is_err());
    }
}
