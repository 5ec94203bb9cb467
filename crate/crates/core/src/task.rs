//! Toy restoration problems with exact Bayesian posteriors.
//!
//! A signal `x` is drawn from an isotropic Gaussian-mixture prior, degraded by
//! a linear operator plus Gaussian noise, `y = A x + s xi`, and the posterior
//! `p(x | y)` is computed by conjugate updates per component. The posterior
//! is kept twice: exactly (full covariances, used by the likelihood verifier)
//! and projected to isotropic scales so that it is again a [`FlowSpec`] the
//! samplers can run on.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Component, FlowSpec};
use crate::rng;

/// Linear degradation `y = A x + noise_std * xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DegradationDoc", into = "DegradationDoc")]
pub struct DegradationOp {
    matrix: DMatrix<f64>,
    noise_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DegradationDoc {
    rows: Vec<Vec<f64>>,
    noise_std: f64,
}

impl TryFrom<DegradationDoc> for DegradationOp {
    type Error = Error;

    fn try_from(doc: DegradationDoc) -> Result<Self> {
        let cols = doc.rows.first().map_or(0, Vec::len);
        if doc.rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig("ragged degradation matrix".into()));
        }
        let flat: Vec<f64> = doc.rows.iter().flatten().copied().collect();
        DegradationOp::new(DMatrix::from_row_slice(doc.rows.len(), cols, &flat), doc.noise_std)
    }
}

impl From<DegradationOp> for DegradationDoc {
    fn from(op: DegradationOp) -> Self {
        DegradationDoc {
            rows: op
                .matrix
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            noise_std: op.noise_std,
        }
    }
}

impl DegradationOp {
    pub fn new(matrix: DMatrix<f64>, noise_std: f64) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::InvalidConfig("degradation matrix is empty".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("degradation matrix has non-finite entries".into()));
        }
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_std must be positive, got {noise_std}"
            )));
        }
        Ok(Self { matrix, noise_std })
    }

    /// 3-tap `[1/4, 1/2, 1/4]` blur followed by keeping every `factor`-th
    /// sample. Taps falling outside the signal are clamped to the border.
    pub fn blur_downsample(dim: usize, factor: usize, noise_std: f64) -> Result<Self> {
        if factor == 0 || dim == 0 {
            return Err(Error::InvalidConfig("dim and factor must be positive".into()));
        }
        let rows = dim.div_ceil(factor);
        let mut m = DMatrix::zeros(rows, dim);
        for r in 0..rows {
            let c = (r * factor) as isize;
            for (off, w) in [(-1isize, 0.25), (0, 0.5), (1, 0.25)] {
                let j = (c + off).clamp(0, dim as isize - 1) as usize;
                m[(r, j)] += w;
            }
        }
        Self::new(m, noise_std)
    }

    pub fn identity(dim: usize, noise_std: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim), noise_std)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(&self.matrix * x)
    }
}

/// Draws an observation `A truth + noise_std * xi`.
pub fn degrade<R: Rng + ?Sized>(
    truth: &DVector<f64>,
    op: &DegradationOp,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let clean = op.apply(truth)?;
    let noise = DVector::from_fn(clean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(clean + noise * op.noise_std)
}

/// One Gaussian component of the exact posterior.
#[derive(Debug, Clone)]
pub struct ExactComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl ExactComponent {
    fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone())
            .ok_or_else(|| Error::SingularUpdate("posterior covariance not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            weight,
            mean,
            covariance: sym,
            chol,
            log_det,
        })
    }

    fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mean;
        let z = self.chol.l().solve_lower_triangular(&r).expect("triangular solve");
        let d = x.len() as f64;
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det + z.norm_squared())
    }
}

/// Exact (anisotropic) Gaussian-mixture posterior.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    dim: usize,
    components: Vec<ExactComponent>,
}

impl ExactPosterior {
    pub fn components(&self) -> &[ExactComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let logs: Vec<f64> = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight.ln() + c.log_pdf(x))
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
    }

    /// Isotropic projection: each covariance replaced by `trace / d * I`.
    pub fn isotropic(&self) -> Result<FlowSpec> {
        let d = self.dim as f64;
        let comps = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: c.mean.clone(),
                scale: (c.covariance.trace() / d).sqrt(),
            })
            .collect();
        FlowSpec::new(self.dim, comps)
    }
}

/// Conjugate update of `prior` given `observation` under `op`.
pub fn exact_posterior(
    prior: &FlowSpec,
    op: &DegradationOp,
    observation: &DVector<f64>,
) -> Result<ExactPosterior> {
    let d = prior.dim();
    if op.input_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: op.input_dim(),
        });
    }
    if observation.len() != op.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.output_dim(),
            found: observation.len(),
        });
    }
    let a = op.matrix();
    let m = op.output_dim();
    let noise_var = op.noise_std() * op.noise_std();
    let aat = a * a.transpose();

    let mut log_weights = Vec::with_capacity(prior.components().len());
    let mut parts = Vec::with_capacity(prior.components().len());
    for c in prior.components() {
        let s2 = c.scale * c.scale;
        // Innovation covariance S = s2 A A^T + noise_var I.
        let innov = &aat * s2 + DMatrix::identity(m, m) * noise_var;
        let chol = Cholesky::new(innov)
            .ok_or_else(|| Error::SingularUpdate("innovation covariance is singular".into()))?;
        let resid = observation - a * &c.mean;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::SingularUpdate("innovation covariance is singular".into()));
        }
        let sol = chol.solve(&resid);
        let log_lik = -0.5
            * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + resid.dot(&sol));
        log_weights.push(if c.weight > 0.0 {
            c.weight.ln() + log_lik
        } else {
            f64::NEG_INFINITY
        });
        let mean = &c.mean + a.transpose() * sol * s2;
        // Sigma = s2 I - s2^2 A^T S^-1 A
        let gain = chol.solve(a);
        let cov = DMatrix::identity(d, d) * s2 - a.transpose() * gain * (s2 * s2);
        parts.push((mean, cov));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    let components = parts
        .into_iter()
        .zip(unnorm)
        .map(|((mean, cov), w)| ExactComponent::new(w / total, mean, cov))
        .collect::<Result<Vec<_>>>()?;
    renormalize(components, d)
}

fn renormalize(mut components: Vec<ExactComponent>, dim: usize) -> Result<ExactPosterior> {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= total;
    }
    // Push the rounding residue into the heaviest component so the weights
    // pass the FlowSpec sum check.
    let resid = 1.0 - components.iter().map(|c| c.weight).sum::<f64>();
    if let Some(c) = components
        .iter_mut()
        .max_by(|a, b| a.weight.total_cmp(&b.weight))
    {
        c.weight += resid;
    }
    Ok(ExactPosterior { dim, components })
}

/// Isotropic-projected posterior flow given `observation`.
pub fn posterior_flow(
    prior: &FlowSpec,
    op: &DegradationOp,
    observation: &DVector<f64>,
) -> Result<FlowSpec> {
    exact_posterior(prior, op, observation)?.isotropic()
}

/// Parameters of a generated suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub dim: usize,
    pub downsample: usize,
    pub noise_std: f64,
    /// Number of prior mixture components.
    pub components: usize,
    /// Isotropic std of each prior component.
    pub prior_scale: f64,
    /// Amplitude of the smooth component means.
    pub mean_amplitude: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            downsample: 2,
            noise_std: 0.1,
            components: 3,
            prior_scale: 0.5,
            mean_amplitude: 1.0,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.downsample == 0 || self.components == 0 {
            return Err(Error::InvalidConfig("dim, downsample and components must be positive".into()));
        }
        if !(self.prior_scale > 0.0) || !(self.noise_std > 0.0) {
            return Err(Error::InvalidConfig("prior_scale and noise_std must be positive".into()));
        }
        Ok(())
    }

    /// Prior with smooth random component means, drawn from `[seed, PRIOR]`.
    pub fn prior(&self, seed: u64) -> Result<FlowSpec> {
        self.validate()?;
        let mut r = rng::stream_rng(&[seed, rng::stream::PRIOR]);
        let w = 1.0 / self.components as f64;
        let comps = (0..self.components)
            .map(|_| {
                let freq: f64 = r.random_range(0.5..2.0);
                let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
                let offset: f64 = r.random_range(-0.5..0.5);
                let amp = self.mean_amplitude;
                let n = self.dim as f64;
                let mean = DVector::from_fn(self.dim, |i, _| {
                    offset + amp * (std::f64::consts::TAU * freq * i as f64 / n + phase).sin()
                });
                Component {
                    weight: w,
                    mean,
                    scale: self.prior_scale,
                }
            })
            .collect::<Vec<_>>();
        let mut comps = comps;
        let resid = 1.0 - comps.iter().map(|c| c.weight).sum::<f64>();
        comps[0].weight += resid;
        FlowSpec::new(self.dim, comps)
    }

    pub fn operator(&self) -> Result<DegradationOp> {
        DegradationOp::blur_downsample(self.dim, self.downsample, self.noise_std)
    }
}

/// A hidden truth, its degraded observation and the posterior given it.
#[derive(Debug, Clone)]
pub struct RestorationInstance {
    pub id: u64,
    pub truth: DVector<f64>,
    pub observation: DVector<f64>,
    pub op: DegradationOp,
    /// Isotropic posterior flow: the generative model search navigates.
    pub posterior: FlowSpec,
    /// Exact posterior, for the likelihood verifier.
    pub exact: ExactPosterior,
}

impl RestorationInstance {
    pub fn new(
        id: u64,
        truth: DVector<f64>,
        observation: DVector<f64>,
        prior: &FlowSpec,
        op: DegradationOp,
    ) -> Result<Self> {
        let exact = exact_posterior(prior, &op, &observation)?;
        let posterior = exact.isotropic()?;
        Ok(Self {
            id,
            truth,
            observation,
            op,
            posterior,
            exact,
        })
    }

    /// Draws a truth from `prior` and degrades it, all from `rng`.
    pub fn sample<R: Rng + ?Sized>(
        id: u64,
        prior: &FlowSpec,
        op: &DegradationOp,
        rng: &mut R,
    ) -> Result<Self> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let comps = prior.components();
        let mut chosen = &comps[comps.len() - 1];
        for c in comps {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let noise = DVector::from_fn(prior.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let truth = &chosen.mean + noise * chosen.scale;
        let observation = degrade(&truth, op, rng)?;
        Self::new(id, truth, observation, prior, op.clone())
    }
}

/// A deterministic collection of restoration instances sharing one prior and operator.
#[derive(Debug, Clone)]
pub struct Suite {
    pub seed: u64,
    pub config: SuiteConfig,
    pub prior: FlowSpec,
    pub op: DegradationOp,
    pub instances: Vec<RestorationInstance>,
}

/// Builds `count` instances; instance `i` draws from `[seed, SUITE, i]` only.
pub fn make_suite(seed: u64, count: usize, config: &SuiteConfig) -> Result<Suite> {
    if count == 0 {
        return Err(Error::InvalidConfig("suite count must be at least 1".into()));
    }
    let prior = config.prior(seed)?;
    let op = config.operator()?;
    let instances = (0..count as u64)
        .map(|i| {
            let mut r = rng::stream_rng(&[seed, rng::stream::SUITE, i]);
            RestorationInstance::sample(i, &prior, &op, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Suite {
        seed,
        config: config.clone(),
        prior,
        op,
        instances,
    })
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    id: u64,
    truth: Vec<f64>,
    observation: Vec<f64>,
    posterior: FlowSpec,
}

#[derive(Serialize, Deserialize)]
struct SuiteDoc {
    seed: u64,
    config: SuiteConfig,
    prior: FlowSpec,
    op: DegradationOp,
    instances: Vec<InstanceDoc>,
}

impl Suite {
    pub fn to_json(&self) -> Result<String> {
        let doc = SuiteDoc {
            seed: self.seed,
            config: self.config.clone(),
            prior: self.prior.clone(),
            op: self.op.clone(),
            instances: self
                .instances
                .iter()
                .map(|i| InstanceDoc {
                    id: i.id,
                    truth: i.truth.as_slice().to_vec(),
                    observation: i.observation.as_slice().to_vec(),
                    posterior: i.posterior.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses a suite; posteriors are recomputed from prior, operator and observation.
    pub fn from_json(s: &str) -> Result<Self> {
        let doc: SuiteDoc = serde_json::from_str(s)?;
        let instances = doc
            .instances
            .into_iter()
            .map(|i| {
                let inst = RestorationInstance::new(
                    i.id,
                    DVector::from_vec(i.truth),
                    DVector::from_vec(i.observation),
                    &doc.prior,
                    doc.op.clone(),
                )?;
                if inst.posterior.dim() != i.posterior.dim() {
                    return Err(Error::InvalidConfig(format!(
                        "instance {} posterior dim disagrees with prior",
                        i.id
                    )));
                }
                Ok(inst)
            })
            .collect::<Result<Vec<_>>>()?;
        if instances.is_empty() {
            return Err(Error::InvalidConfig("suite has no instances".into()));
        }
        Ok(Suite {
            seed: doc.seed,
            config: doc.config,
            prior: doc.prior,
            op: doc.op,
            instances,
        })
    }

    /// CSV with one row per instance: `instance, truth_0.., obs_0..`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let d = self.prior.dim();
        let m = self.op.output_dim();
        let mut header = vec!["instance".to_string()];
        header.extend((0..d).map(|i| format!("truth_{i}")));
        header.extend((0..m).map(|i| format!("obs_{i}")));
        w.write_record(&header)?;
        for inst in &self.instances {
            let mut row = vec![inst.id.to_string()];
            row.extend(inst.truth.iter().map(|v| v.to_string()));
            row.extend(inst.observation.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn degrade_tiny_noise() {
        let op = DegradationOp::identity(2, 1e-12).unwrap();
        let mut r = rng::stream_rng(&[1]);
        let y = degrade(&v(&[1.0, 2.0]), &op, &mut r).unwrap();
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y[1], 2.0, epsilon = 1e-9);

        let avg = DegradationOp::new(DMatrix::from_row_slice(1, 2, &[0.5, 0.5]), 1e-12).unwrap();
        let y = degrade(&v(&[2.0, 4.0]), &avg, &mut r).unwrap();
        assert_abs_diff_eq!(y[0], 3.0, epsilon = 1e-9);
    }

    #[test]
    fn degrade_dimension_mismatch() {
        let op = DegradationOp::identity(3, 0.1).unwrap();
        let mut r = rng::stream_rng(&[1]);
        assert!(matches!(
            degrade(&v(&[1.0]), &op, &mut r),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn operator_validation() {
        assert!(DegradationOp::identity(2, 0.0).is_err());
        assert!(DegradationOp::identity(2, -1.0).is_err());
        let op = DegradationOp::blur_downsample(16, 2, 0.1).unwrap();
        assert_eq!(op.output_dim(), 8);
        for r in op.matrix().row_iter() {
            assert_abs_diff_eq!(r.sum(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn scalar_conjugate_update() {
        let prior = FlowSpec::gaussian(v(&[0.0]), 1.0).unwrap();
        let op = DegradationOp::identity(1, 1.0).unwrap();
        let post = posterior_flow(&prior, &op, &v(&[2.0])).unwrap();
        let c = &post.components()[0];
        assert_abs_diff_eq!(c.mean[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.scale * c.scale, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn uninformative_observation_keeps_prior() {
        let prior = FlowSpec::new(
            2,
            vec![
                Component { weight: 0.3, mean: v(&[1.0, 0.0]), scale: 0.5 },
                Component { weight: 0.7, mean: v(&[-1.0, 0.5]), scale: 0.8 },
            ],
        )
        .unwrap();
        let op = DegradationOp::identity(2, 1e4).unwrap();
        let post = posterior_flow(&prior, &op, &v(&[0.3, -0.2])).unwrap();
        assert!((post.components()[0].weight - 0.3).abs() < 1e-3);
        assert!((post.components()[1].weight - 0.7).abs() < 1e-3);
    }

    #[test]
    fn observation_picks_component() {
        let prior = FlowSpec::new(
            1,
            vec![
                Component { weight: 0.5, mean: v(&[3.0]), scale: 0.5 },
                Component { weight: 0.5, mean: v(&[-3.0]), scale: 0.5 },
            ],
        )
        .unwrap();
        let op = DegradationOp::identity(1, 0.5).unwrap();
        let post = posterior_flow(&prior, &op, &v(&[2.8])).unwrap();
        // Direct Bayes rule: w+ / w- = N(2.8; 3, 0.5) / N(2.8; -3, 0.5), equal variances.
        let s = 0.5;
        let lr = (-(2.8f64 - 3.0).powi(2) / (2.0 * s) + (2.8f64 + 3.0).powi(2) / (2.0 * s)).exp();
        assert_abs_diff_eq!(post.components()[0].weight, lr / (1.0 + lr), epsilon = 1e-12);
        assert!(post.components()[0].weight > 0.99);
    }

    #[test]
    fn singular_innovation_rejected() {
        // Duplicate rows and an underflowing noise variance make S singular.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let op = DegradationOp::new(a, 1e-200).unwrap();
        let prior = FlowSpec::gaussian(v(&[0.0, 0.0]), 1.0).unwrap();
        assert!(matches!(
            posterior_flow(&prior, &op, &v(&[0.1, 0.1])),
            Err(Error::SingularUpdate(_))
        ));
    }

    #[test]
    fn suites_are_deterministic() {
        let cfg = SuiteConfig::default();
        let a = make_suite(5, 3, &cfg).unwrap();
        let b = make_suite(5, 3, &cfg).unwrap();
        for (x, y) in a.instances.iter().zip(&b.instances) {
            assert_eq!(x.truth, y.truth);
            assert_eq!(x.observation, y.observation);
            assert_eq!(x.posterior, y.posterior);
        }
        assert!(matches!(make_suite(5, 0, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn suite_json_roundtrip() {
        let suite = make_suite(11, 2, &SuiteConfig::default()).unwrap();
        let json = suite.to_json().unwrap();
        let back = Suite::from_json(&json).unwrap();
        assert_eq!(back.instances.len(), 2);
        for (x, y) in suite.instances.iter().zip(&back.instances) {
            assert_eq!(x.truth, y.truth);
            assert_eq!(x.posterior, y.posterior);
        }
        let csv = suite.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("instance,truth_0"));
    }
}
