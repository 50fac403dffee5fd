//! Calculators for the cost bounds on cheap spoofing algorithms, plus a
//! Monte Carlo check of the tail inequality they rest on.
//!
//! If the honest cost `C` of producing a proof has mean `E` and variance
//! `Var`, Chebyshev gives `P(C <= cE) <= Var / ((1 - c)^2 E^2)`. An
//! algorithm that is `c`-cheap therefore has to land in a low-probability
//! region of honest proofs, and finding one by sampling honest runs needs
//! many attempts.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of [`stability_zeta`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityBound {
    pub zeta: f64,
    /// `sqrt(3 varF)`
    pub a: f64,
    /// `zeta >= 1` or infinite: the bound says nothing.
    pub vacuous: bool,
}

/// `zeta = varP / (E (1 - c) + a)^2` with `a = sqrt(3 varF)`.
pub fn stability_zeta(var_p: f64, e: f64, c: f64, var_f: f64) -> Result<StabilityBound> {
    check_c(c)?;
    if !(e > 0.0) {
        return Err(Error::Domain(format!(
            "mean cost must be positive, got {e}"
        )));
    }
    if !(var_p >= 0.0 && var_f >= 0.0) {
        return Err(Error::Domain("variances must be nonnegative".into()));
    }
    let a = (3.0 * var_f).sqrt();
    let denom = e * (1.0 - c) + a;
    let zeta = if var_p == 0.0 {
        0.0
    } else {
        var_p / (denom * denom)
    };
    Ok(StabilityBound {
        zeta,
        a,
        vacuous: !(zeta < 1.0),
    })
}

/// Result of [`query_lower_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryBound {
    /// At least `n` honest samples are needed to see a `c`-cheap one with
    /// probability 2/3.
    Finite { n: f64, p: f64 },
    /// `P = 0`: no honest run is ever `c`-cheap.
    Unbounded,
    /// `P >= 1`: Chebyshev gives no information.
    Vacuous { p: f64 },
}

impl QueryBound {
    pub fn p(&self) -> f64 {
        match *self {
            QueryBound::Finite { p, .. } | QueryBound::Vacuous { p } => p,
            QueryBound::Unbounded => 0.0,
        }
    }

    /// The query count, infinite when unbounded and zero when vacuous.
    pub fn n(&self) -> f64 {
        match *self {
            QueryBound::Finite { n, .. } => n,
            QueryBound::Unbounded => f64::INFINITY,
            QueryBound::Vacuous { .. } => 0.0,
        }
    }
}

/// `P = var / ((1 - c)^2 E^2)`, `N = ln(1/3) / ln(1 - P)`.
pub fn query_lower_bound(var: f64, e: f64, c: f64) -> Result<QueryBound> {
    check_c(c)?;
    if !(e > 0.0) {
        return Err(Error::Domain(format!(
            "mean cost must be positive, got {e}"
        )));
    }
    if !(var >= 0.0) {
        return Err(Error::Domain("variance must be nonnegative".into()));
    }
    let p = var / ((1.0 - c) * (1.0 - c) * e * e);
    Ok(if p == 0.0 {
        QueryBound::Unbounded
    } else if p >= 1.0 {
        QueryBound::Vacuous { p }
    } else {
        QueryBound::Finite {
            n: (1.0f64 / 3.0).ln() / (-p).ln_1p(),
            p,
        }
    })
}

fn check_c(c: f64) -> Result<()> {
    if (0.0..1.0).contains(&c) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "cheapness factor c must lie in [0, 1), got {c}"
        )))
    }
}

/// `alpha = sin(theta)`: any pair with `||g - g'|| < alpha min(||g||, ||g'||)`
/// is then at most `theta` apart in angle.
pub fn alpha_for_angle(theta: f64) -> Result<f64> {
    if theta > 0.0 && theta < FRAC_PI_2 {
        Ok(theta.sin())
    } else {
        Err(Error::Domain(format!(
            "theta = {theta} is outside (0, pi/2); supply alpha directly"
        )))
    }
}

/// Angle between two vectors in radians; zero vectors are at angle 0.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0).acos()
}

/// A distribution over honest proof costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CostDistributionSpec {
    /// `exp(N(mu, sigma^2))`
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    PointMass {
        value: f64,
    },
    /// Resamples the given costs uniformly.
    Empirical {
        samples: Vec<f64>,
    },
}

impl CostDistributionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            CostDistributionSpec::Lognormal { sigma, mu } => *sigma >= 0.0 && mu.is_finite(),
            CostDistributionSpec::Gamma { shape, scale } => *shape > 0.0 && *scale > 0.0,
            CostDistributionSpec::PointMass { value } => *value > 0.0,
            CostDistributionSpec::Empirical { samples } => {
                samples.len() >= 2
                    && samples.iter().all(|x| x.is_finite())
                    && samples.iter().sum::<f64>() > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid cost distribution {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            CostDistributionSpec::Lognormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
            CostDistributionSpec::Gamma { shape, scale } => shape * scale,
            CostDistributionSpec::PointMass { value } => *value,
            CostDistributionSpec::Empirical { samples } => {
                samples.iter().sum::<f64>() / samples.len() as f64
            }
        }
    }

    /// Variance of the distribution (for empirical samples, of the
    /// resampling distribution, i.e. with divisor `n`).
    pub fn variance(&self) -> f64 {
        match self {
            CostDistributionSpec::Lognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                s2.exp_m1() * (2.0 * mu + s2).exp()
            }
            CostDistributionSpec::Gamma { shape, scale } => shape * scale * scale,
            CostDistributionSpec::PointMass { .. } => 0.0,
            CostDistributionSpec::Empirical { samples } => {
                let m = self.mean();
                samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / samples.len() as f64
            }
        }
    }

    fn sampler(&self) -> Result<Sampler<'_>> {
        self.validate()?;
        Ok(match self {
            CostDistributionSpec::Lognormal { mu, sigma } => {
                let d = LogNormal::new(*mu, *sigma).map_err(|e| Error::Domain(e.to_string()))?;
                Box::new(move |r| d.sample(r))
            }
            CostDistributionSpec::Gamma { shape, scale } => {
                let d = Gamma::new(*shape, *scale).map_err(|e| Error::Domain(e.to_string()))?;
                Box::new(move |r| d.sample(r))
            }
            CostDistributionSpec::PointMass { value } => {
                let v = *value;
                Box::new(move |_| v)
            }
            CostDistributionSpec::Empirical { samples } => {
                Box::new(move |r| samples[r.random_range(0..samples.len())])
            }
        })
    }
}

type Sampler<'a> = Box<dyn FnMut(&mut dyn rand::RngCore) -> f64 + 'a>;

/// Distribution families available through [`CostDistributionSpec::with_moments`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    Lognormal,
    Gamma,
    PointMass,
    Empirical,
}

impl CostKind {
    pub const ALL: [CostKind; 4] = [
        CostKind::Lognormal,
        CostKind::Gamma,
        CostKind::PointMass,
        CostKind::Empirical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostKind::Lognormal => "lognormal",
            CostKind::Gamma => "gamma",
            CostKind::PointMass => "point-mass",
            CostKind::Empirical => "empirical",
        }
    }
}

impl CostDistributionSpec {
    /// A member of `kind` with the given mean and variance. A point mass
    /// ignores `var`; the empirical kind is the two points `mean +- sqrt(var)`.
    pub fn with_moments(kind: CostKind, mean: f64, var: f64) -> Result<Self> {
        if !(mean > 0.0 && var >= 0.0) {
            return Err(Error::Domain(format!(
                "need mean > 0 and var >= 0, got {mean} and {var}"
            )));
        }
        let d = match kind {
            CostKind::Lognormal => {
                let s2 = (var / (mean * mean)).ln_1p();
                CostDistributionSpec::Lognormal {
                    mu: mean.ln() - s2 / 2.0,
                    sigma: s2.sqrt(),
                }
            }
            CostKind::Gamma => CostDistributionSpec::Gamma {
                shape: mean * mean / var,
                scale: var / mean,
            },
            CostKind::PointMass => CostDistributionSpec::PointMass { value: mean },
            CostKind::Empirical => CostDistributionSpec::Empirical {
                samples: vec![mean - var.sqrt(), mean + var.sqrt()],
            },
        };
        d.validate()?;
        Ok(d)
    }
}

/// Cheapness factors of the built-in tail grid.
pub const TAIL_GRID_C: [f64; 3] = [0.25, 0.5, 0.75];
/// Cost variances of the built-in tail grid, all at mean [`TAIL_GRID_MEAN`].
pub const TAIL_GRID_VAR: [f64; 3] = [1.0, 4.0, 16.0];
pub const TAIL_GRID_MEAN: f64 = 10.0;

/// `(kind, c, variance, distribution)` for every kind over the 3x3 grid.
pub fn tail_grid() -> Result<Vec<(CostKind, f64, f64, CostDistributionSpec)>> {
    let mut out = Vec::new();
    for kind in CostKind::ALL {
        for c in TAIL_GRID_C {
            for var in TAIL_GRID_VAR {
                out.push((
                    kind,
                    c,
                    var,
                    CostDistributionSpec::with_moments(kind, TAIL_GRID_MEAN, var)?,
                ));
            }
        }
    }
    Ok(out)
}

/// One Monte Carlo check of `P(C <= cE) <= Var / ((1 - c)^2 E^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub empirical_p: f64,
    pub bound_p: f64,
    pub std_error: f64,
    /// `empirical_p <= bound_p + 3 std_error`
    pub holds: bool,
}

/// Minimum number of Monte Carlo draws per check.
pub const MIN_TAIL_TRIALS: usize = 10_000;

pub fn mc_validate_tail<R: Rng>(
    dist: &CostDistributionSpec,
    c: f64,
    trials: usize,
    rng: &mut R,
) -> Result<TailCheck> {
    check_c(c)?;
    if trials < MIN_TAIL_TRIALS {
        return Err(Error::Config(format!(
            "need at least {MIN_TAIL_TRIALS} trials, got {trials}"
        )));
    }
    let e = dist.mean();
    if !(e > 0.0) {
        return Err(Error::Domain(format!(
            "mean cost must be positive, got {e}"
        )));
    }
    let mut draw = dist.sampler()?;
    let cut = c * e;
    let hits = (0..trials).filter(|_| draw(rng) <= cut).count();
    let p = hits as f64 / trials as f64;
    let std_error = (p * (1.0 - p) / trials as f64).sqrt();
    let bound_p = dist.variance() / ((1.0 - c) * (1.0 - c) * e * e);
    Ok(TailCheck {
        empirical_p: p,
        bound_p,
        std_error,
        holds: p <= bound_p + 3.0 * std_error,
    })
}

/// Repeated checks; row `i` of the output is block `i`.
pub fn mc_validate_tail_blocks<R: Rng>(
    dist: &CostDistributionSpec,
    c: f64,
    blocks: usize,
    trials_per_block: usize,
    rng: &mut R,
) -> Result<Vec<TailCheck>> {
    (0..blocks)
        .map(|_| mc_validate_tail(dist, c, trials_per_block, rng))
        .collect()
}

/// `trial_block,empirical_P,bound_P`
pub fn tail_blocks_csv(blocks: &[TailCheck]) -> String {
    let mut s = String::from("trial_block,empirical_P,bound_P\n");
    for (i, b) in blocks.iter().enumerate() {
        s.push_str(&format!("{i},{:e},{:e}\n", b.empirical_p, b.bound_p));
    }
    s
}
