//! Gaussian mixture components: the per-cluster likelihood, the priors on
//! cluster means and structured covariances, and the Metropolis kernels for
//! covariances and the concentration parameter.
//!
//! Features are `(x, y, ld)`: two pixel coordinates and the natural log of
//! the diameter. Cluster covariances share one spatial variance between both
//! coordinates, keep the coordinates uncorrelated with each other, and
//! correlate each coordinate with `ld` through a single covariance term:
//!
//! ```text
//! [ var_x  0      cov_xd ]
//! [ 0      var_x  cov_xd ]
//! [ cov_xd cov_xd var_d  ]
//! ```

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::partition::{
    AllocationTrace, Concentration, FamilyVector, Partition, Permutation, SeatingWorkspace,
};

pub type Feature = Vector3<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One observed object: its family and feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub family: usize,
    /// Horizontal coordinate, px.
    pub x: f64,
    /// Vertical coordinate, px.
    pub y: f64,
    /// Natural log of the diameter.
    pub ld: f64,
}

impl Annotation {
    pub fn features(&self) -> Feature {
        Feature::new(self.x, self.y, self.ld)
    }

    pub fn diameter(&self) -> f64 {
        self.ld.exp()
    }
}

/// Structured covariance of one cluster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterCovariance {
    /// Variance of each spatial coordinate (px²).
    pub var_x: f64,
    /// Variance of log-diameter.
    pub var_d: f64,
    /// Covariance of each coordinate with log-diameter.
    pub cov_xd: f64,
}

impl ClusterCovariance {
    pub fn from_lambda(var_x: f64, var_d: f64, lambda: f64) -> Self {
        Self {
            var_x,
            var_d,
            cov_xd: lambda * (var_x * var_d / 2.0).sqrt(),
        }
    }

    /// Covariance as a fraction of its largest admissible magnitude.
    pub fn lambda(&self) -> f64 {
        self.cov_xd / (self.var_x * self.var_d / 2.0).sqrt()
    }

    pub fn is_valid(&self) -> bool {
        self.var_x > 0.0
            && self.var_d > 0.0
            && self.cov_xd.is_finite()
            && self.var_x.is_finite()
            && self.var_d.is_finite()
            && self.lambda().abs() <= 1.0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let (vx, vd, c) = (self.var_x, self.var_d, self.cov_xd);
        Matrix3::new(vx, 0.0, c, 0.0, vx, c, c, c, vd)
    }

    /// `var_x · (var_x · var_d − 2 cov_xd²)`.
    pub fn determinant(&self) -> f64 {
        self.var_x * (self.var_x * self.var_d - 2.0 * self.cov_xd * self.cov_xd)
    }
}

/// Mean and covariance of one cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterParams {
    pub mu: Feature,
    pub cov: ClusterCovariance,
}

/// A Gaussian with its precision and normalizing constant precomputed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianKernel {
    mean: Feature,
    precision: Matrix3<f64>,
    log_norm: f64,
}

impl GaussianKernel {
    pub fn new(params: &ClusterParams) -> Result<Self> {
        if !params.cov.is_valid() || params.cov.lambda().abs() >= 1.0 {
            return Err(Error::SingularCovariance);
        }
        Self::from_moments(params.mu, params.cov.matrix())
    }

    pub fn from_moments(mean: Feature, cov: Matrix3<f64>) -> Result<Self> {
        let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
        let l = chol.l();
        let log_det_half: f64 = (0..3).map(|i| l[(i, i)].ln()).sum();
        if !log_det_half.is_finite() {
            return Err(Error::SingularCovariance);
        }
        Ok(Self {
            mean,
            precision: chol.inverse(),
            log_norm: -1.5 * LN_2PI - log_det_half,
        })
    }

    pub fn logpdf(&self, y: &Feature) -> f64 {
        let d = y - self.mean;
        self.log_norm - 0.5 * d.dot(&(self.precision * d))
    }
}

/// Log-density of a 3-dimensional Gaussian. Errors when the covariance is
/// not positive definite.
pub fn mvn_logpdf(y: &Feature, params: &ClusterParams) -> Result<f64> {
    Ok(GaussianKernel::new(params)?.logpdf(y))
}

/// Fixed constants of the mixture model and its samplers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// Power-law coefficient of the spatial variance prior mean.
    pub kappa_x: f64,
    /// Power-law coefficient of the log-diameter variance prior mean.
    pub kappa_d: f64,
    pub eta_x: f64,
    pub eta_d: f64,
    /// Prior precisions of the two variances.
    pub tau_x: f64,
    pub tau_d: f64,
    /// Beta shapes of the scaled covariance ratio.
    pub a_lambda: f64,
    pub b_lambda: f64,
    /// Prior mean of cluster means.
    pub mu0: [f64; 3],
    /// Diagonal of the prior covariance of cluster means.
    pub sigma0: [f64; 3],
    /// Gamma shape and rate of the concentration prior.
    pub a_alpha: f64,
    pub b_alpha: f64,
    /// Precision of the lognormal concentration proposal.
    pub tau_alpha: f64,
    /// Proposal variances for `(var_x, var_d, cov_xd)`.
    pub proposal_var: [f64; 3],
    /// Neighborhood radius in px; `inf` disables the restriction.
    pub rho: f64,
    /// Lower bound applied to the log-diameter conditioning the covariance
    /// prior (ln 18 for crater data).
    pub min_log_diameter: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::full_image()
    }
}

impl Hyperparams {
    /// Values for a full-image crater catalogue.
    pub fn full_image() -> Self {
        Self {
            kappa_x: 0.08,
            kappa_d: 0.124,
            eta_x: 4.5,
            eta_d: -0.8,
            tau_x: 1.0,
            tau_d: 100.0,
            a_lambda: 100.0,
            b_lambda: 100.0,
            mu0: [2068.2, -1105.5, 3.8],
            sigma0: [920.0 * 920.0, 600.0 * 600.0, 0.65 * 0.65],
            a_alpha: 3.0,
            b_alpha: 0.04,
            tau_alpha: 100.0,
            proposal_var: [3000.0, 0.9, 0.2],
            rho: 75.0,
            min_log_diameter: 18f64.ln(),
        }
    }

    /// Values for a small subimage.
    pub fn reduced() -> Self {
        Self {
            mu0: [2050.0, -150.0, 3.2],
            sigma0: [200.0 * 200.0, 110.0 * 110.0, 0.5 * 0.5],
            a_alpha: 1.0,
            b_alpha: 0.01,
            ..Self::full_image()
        }
    }

    /// Values for the synthetic datasets of the simulation study.
    pub fn simulation() -> Self {
        Self {
            mu0: [350.0, 250.0, 3.9],
            sigma0: [300.0 * 300.0, 225.0 * 225.0, 0.45 * 0.45],
            ..Self::reduced()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa_x", self.kappa_x),
            ("kappa_d", self.kappa_d),
            ("tau_x", self.tau_x),
            ("tau_d", self.tau_d),
            ("a_lambda", self.a_lambda),
            ("b_lambda", self.b_lambda),
            ("sigma0[0]", self.sigma0[0]),
            ("sigma0[1]", self.sigma0[1]),
            ("sigma0[2]", self.sigma0[2]),
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("tau_alpha", self.tau_alpha),
            ("proposal_var[0]", self.proposal_var[0]),
            ("proposal_var[1]", self.proposal_var[1]),
            ("proposal_var[2]", self.proposal_var[2]),
            ("min_log_diameter", self.min_log_diameter),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(
                    name,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        for (name, v) in [("eta_x", self.eta_x), ("eta_d", self.eta_d)] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if self.mu0.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("mu0", "must be finite"));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::param(
                "rho",
                format!("must be non-negative or inf, got {}", self.rho),
            ));
        }
        Ok(())
    }

    /// Log-diameter used to condition the covariance prior of a cluster
    /// whose mean log-diameter is `mean_ld`.
    pub fn conditioning_log_diameter(&self, mean_ld: f64) -> f64 {
        mean_ld.max(self.min_log_diameter)
    }

    fn sigma0_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.sigma0))
    }

    /// Gamma shape of the spatial variance prior; the rate is `tau_x`.
    pub fn var_x_shape(&self, ld: f64) -> f64 {
        self.tau_x * self.kappa_x * ld.powf(self.eta_x)
    }

    /// Gamma shape of the log-diameter variance prior; the rate is `tau_d`.
    pub fn var_d_shape(&self, ld: f64) -> f64 {
        self.tau_d * self.kappa_d * ld.powf(self.eta_d)
    }
}

fn gamma_ln_pdf(v: f64, shape: f64, rate: f64) -> f64 {
    if v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * v.ln() - rate * v
}

/// Prior log-density of a cluster covariance given the cluster's
/// log-diameter: Gamma priors on both variances (mean `κ·ld^η`, rate `τ`)
/// and a Beta prior on `(λ + 1) / 2`, carried to `cov_xd` through the
/// Jacobian of `cov_xd = λ·√(var_x·var_d/2)`.
pub fn covariance_prior_logpdf(cov: &ClusterCovariance, ld: f64, h: &Hyperparams) -> Result<f64> {
    if !(ld > 0.0) {
        return Err(Error::param("ld", format!("must be positive, got {ld}")));
    }
    if !(cov.var_x > 0.0 && cov.var_d > 0.0) || !cov.cov_xd.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let scale = (cov.var_x * cov.var_d / 2.0).sqrt();
    let lambda = cov.cov_xd / scale;
    if lambda.abs() >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let u = (lambda + 1.0) / 2.0;
    let beta = (h.a_lambda - 1.0) * u.ln() + (h.b_lambda - 1.0) * (1.0 - u).ln()
        - ln_beta(h.a_lambda, h.b_lambda);
    Ok(gamma_ln_pdf(cov.var_x, h.var_x_shape(ld), h.tau_x)
        + gamma_ln_pdf(cov.var_d, h.var_d_shape(ld), h.tau_d)
        + beta
        - std::f64::consts::LN_2
        - scale.ln())
}

/// Draws a covariance from its prior at log-diameter `ld`.
pub fn sample_covariance_prior<R: Rng + ?Sized>(
    ld: f64,
    h: &Hyperparams,
    rng: &mut R,
) -> ClusterCovariance {
    let var_x = Gamma::new(h.var_x_shape(ld), 1.0 / h.tau_x)
        .expect("validated hyperparameters")
        .sample(rng);
    let var_d = Gamma::new(h.var_d_shape(ld), 1.0 / h.tau_d)
        .expect("validated hyperparameters")
        .sample(rng);
    let u: f64 = Beta::new(h.a_lambda, h.b_lambda)
        .expect("validated hyperparameters")
        .sample(rng);
    ClusterCovariance::from_lambda(var_x, var_d, 2.0 * u - 1.0)
}

fn sample_gaussian<R: Rng + ?Sized>(
    mean: &Feature,
    cov: &Matrix3<f64>,
    rng: &mut R,
) -> Result<Feature> {
    let l = cov.cholesky().ok_or(Error::SingularCovariance)?.unpack();
    let z = Feature::from_fn(|_, _| rng.sample(StandardNormal));
    Ok(mean + l * z)
}

/// Draws a cluster mean from its prior.
pub fn sample_mu_prior<R: Rng + ?Sized>(h: &Hyperparams, rng: &mut R) -> Feature {
    let z = Feature::from_fn(|_, _| rng.sample(StandardNormal));
    Feature::from_fn(|i, _| h.mu0[i] + h.sigma0[i].sqrt() * z[i])
}

/// Draws fresh cluster parameters from the priors: a mean, then a
/// covariance conditioned on that mean's log-diameter.
pub fn sample_cluster_prior<R: Rng + ?Sized>(h: &Hyperparams, rng: &mut R) -> ClusterParams {
    let mu = sample_mu_prior(h, rng);
    let cov = sample_covariance_prior(h.conditioning_log_diameter(mu[2]), h, rng);
    ClusterParams { mu, cov }
}

/// Conditional posterior moments of a cluster mean given its members and
/// covariance.
pub fn mu_posterior_moments(
    cluster_data: &[Feature],
    cov: &ClusterCovariance,
    h: &Hyperparams,
) -> Result<(Feature, Matrix3<f64>)> {
    let prior_prec = Matrix3::from_diagonal(&Vector3::from_fn(|i, _| 1.0 / h.sigma0[i]));
    let prior_term = prior_prec * Vector3::from(h.mu0);
    if cluster_data.is_empty() {
        return Ok((Vector3::from(h.mu0), h.sigma0_matrix()));
    }
    let n = cluster_data.len() as f64;
    let like_prec = cov
        .matrix()
        .cholesky()
        .ok_or(Error::SingularCovariance)?
        .inverse();
    let mean: Feature = cluster_data.iter().sum::<Feature>() / n;
    let post_cov = (prior_prec + like_prec * n)
        .cholesky()
        .ok_or(Error::SingularCovariance)?
        .inverse();
    let post_mean = post_cov * (prior_term + like_prec * mean * n);
    Ok((post_mean, post_cov))
}

/// Draws a cluster mean from its conjugate conditional posterior.
pub fn sample_mu_posterior<R: Rng + ?Sized>(
    cluster_data: &[Feature],
    cov: &ClusterCovariance,
    h: &Hyperparams,
    rng: &mut R,
) -> Result<Feature> {
    let (mean, post_cov) = mu_posterior_moments(cluster_data, cov, h)?;
    sample_gaussian(&mean, &post_cov, rng)
}

/// Unnormalized log-target of the covariance kernel.
pub fn covariance_log_target(
    cluster_data: &[Feature],
    cov: &ClusterCovariance,
    mu: &Feature,
    ld: f64,
    h: &Hyperparams,
) -> Result<f64> {
    let prior = covariance_prior_logpdf(cov, ld, h)?;
    if prior == f64::NEG_INFINITY {
        return Ok(prior);
    }
    let kernel = match GaussianKernel::new(&ClusterParams { mu: *mu, cov: *cov }) {
        Ok(k) => k,
        Err(_) => return Ok(f64::NEG_INFINITY),
    };
    Ok(prior + cluster_data.iter().map(|y| kernel.logpdf(y)).sum::<f64>())
}

/// One random-walk Metropolis step on `(var_x, var_d, cov_xd)` with
/// independent Gaussian increments of variances `h.proposal_var`.
/// Proposals outside the admissible region are rejected.
pub fn metropolis_covariance_step<R: Rng + ?Sized>(
    cluster_data: &[Feature],
    current: &ClusterCovariance,
    mu: &Feature,
    ld: f64,
    h: &Hyperparams,
    rng: &mut R,
) -> Result<ClusterCovariance> {
    let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let proposal = ClusterCovariance {
        var_x: current.var_x + h.proposal_var[0].sqrt() * z[0],
        var_d: current.var_d + h.proposal_var[1].sqrt() * z[1],
        cov_xd: current.cov_xd + h.proposal_var[2].sqrt() * z[2],
    };
    let proposed = covariance_log_target(cluster_data, &proposal, mu, ld, h)?;
    if proposed == f64::NEG_INFINITY {
        return Ok(*current);
    }
    let here = covariance_log_target(cluster_data, current, mu, ld, h)?;
    let u: f64 = rng.random();
    Ok(if u.ln() < proposed - here {
        proposal
    } else {
        *current
    })
}

/// Location parameter of the lognormal proposal so that its mean equals
/// the current value.
fn lognormal_location(current: f64, tau: f64) -> f64 {
    current.ln() - 0.5 / tau
}

/// Draws a concentration proposal from a lognormal with mean `current` and
/// log-scale standard deviation `tau^{-1/2}`.
pub fn propose_alpha<R: Rng + ?Sized>(current: f64, tau: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (lognormal_location(current, tau) + z / tau.sqrt()).exp()
}

/// `ln q(proposed | current)` for the concentration proposal.
pub fn alpha_proposal_logpdf(proposed: f64, current: f64, tau: f64) -> f64 {
    let sd = 1.0 / tau.sqrt();
    let d = proposed.ln() - lognormal_location(current, tau);
    -proposed.ln() - sd.ln() - 0.5 * LN_2PI - d * d / (2.0 * sd * sd)
}

/// Gamma(shape, rate) prior log-density of the concentration, up to a
/// constant.
pub fn alpha_prior_logpdf(alpha: f64, h: &Hyperparams) -> f64 {
    (h.a_alpha - 1.0) * alpha.ln() - h.b_alpha * alpha
}

/// One Metropolis-Hastings update of the concentration given a recorded
/// allocation trace of the current partition and order.
pub fn alpha_mh_step<R: Rng + ?Sized>(
    trace: &AllocationTrace,
    current: Concentration,
    h: &Hyperparams,
    rng: &mut R,
) -> Concentration {
    let a = current.value();
    let proposed = propose_alpha(a, h.tau_alpha, rng);
    let log_r = trace.log_prob(proposed)
        + alpha_prior_logpdf(proposed, h)
        + alpha_proposal_logpdf(a, proposed, h.tau_alpha)
        - trace.log_prob(a)
        - alpha_prior_logpdf(a, h)
        - alpha_proposal_logpdf(proposed, a, h.tau_alpha);
    let u: f64 = rng.random();
    match Concentration::new(proposed) {
        Ok(next) if u.ln() < log_r => next,
        _ => current,
    }
}

/// One Metropolis-Hastings update of the concentration targeting
/// `p(c | α, x, σ) p(α)`.
pub fn sample_alpha_mh<R: Rng + ?Sized>(
    c: &Partition,
    x: &FamilyVector,
    sigma: &Permutation,
    current: Concentration,
    h: &Hyperparams,
    rng: &mut R,
) -> Result<Concentration> {
    if c.len() != x.len() || c.len() != sigma.len() {
        return Err(Error::LengthMismatch {
            what: "partition inputs",
            expected: c.len(),
            found: x.len().min(sigma.len()),
        });
    }
    let trace = SeatingWorkspace::new()
        .trace(c.labels(), x.as_slice(), sigma.order())
        .ok_or_else(|| {
            Error::InvalidPartition("partition violates the family constraint".into())
        })?;
    Ok(alpha_mh_step(&trace, current, h, rng))
}
