//! The f-divergence generator catalog, plus divergence and total-variation
//! evaluation between discrete distributions.
//!
//! Every weight map is derived uniformly from the generator's inverse
//! gradient, so KL weights are `exp(z - 1)` and the soft-chi-squared
//! quadratic branch is scaled by one half to keep its derivative continuous
//! and consistent with the inverse gradient `y + 1`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default cap on importance weights; emulates the tau -> 0 saturation while
/// keeping every quantity finite.
pub const DEFAULT_SATURATION_WEIGHT: f64 = 1e3;

/// Margin pulled in from the SoftTV inverse-derivative domain boundary
/// `|y| < 1/2` before evaluating artanh.
const SOFT_TV_DOMAIN_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    SoftTv,
    Tv,
    Kl,
    Chi2,
    SoftChi2,
}

impl GeneratorKind {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::SoftTv => "soft_tv",
            GeneratorKind::Tv => "tv",
            GeneratorKind::Kl => "kl",
            GeneratorKind::Chi2 => "chi2",
            GeneratorKind::SoftChi2 => "soft_chi2",
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft_tv" => Ok(GeneratorKind::SoftTv),
            "tv" => Ok(GeneratorKind::Tv),
            "kl" => Ok(GeneratorKind::Kl),
            "chi2" => Ok(GeneratorKind::Chi2),
            "soft_chi2" => Ok(GeneratorKind::SoftChi2),
            other => Err(Error::UnknownGenerator(other.into())),
        }
    }
}

/// A divergence generator: convex `f` with `f(1) = 0`, its derivative, the
/// inverse derivative where one exists, and a saturation cap for the weight
/// map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FGenerator {
    pub kind: GeneratorKind,
    pub saturation_weight: f64,
}

pub fn make_generator(name: &str) -> Result<FGenerator> {
    Ok(FGenerator::new(name.parse()?))
}

impl FGenerator {
    pub fn new(kind: GeneratorKind) -> Self {
        Self {
            kind,
            saturation_weight: DEFAULT_SATURATION_WEIGHT,
        }
    }

    pub fn with_saturation_weight(kind: GeneratorKind, saturation_weight: f64) -> Self {
        Self {
            kind,
            saturation_weight,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Evaluates `f(x)` for `x >= 0` (SoftTV and chi-squared extend to all
    /// reals, which the projection oracles rely on).
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            GeneratorKind::SoftTv => 0.5 * ln_cosh(x - 1.0),
            GeneratorKind::Tv => 0.5 * (x - 1.0).abs(),
            GeneratorKind::Kl => {
                if x == 0.0 {
                    0.0
                } else {
                    x * x.ln()
                }
            }
            GeneratorKind::Chi2 => 0.5 * (x - 1.0) * (x - 1.0),
            GeneratorKind::SoftChi2 => {
                if x < 1.0 {
                    if x <= 0.0 {
                        // Continuous extension: lim_{x->0+} x ln x - x + 1 = 1,
                        // then linear with slope f'(0+) = -inf replaced by a
                        // steep finite barrier so projections stay bounded.
                        1.0 - x * 50.0
                    } else {
                        x * x.ln() - x + 1.0
                    }
                } else {
                    0.5 * (x - 1.0) * (x - 1.0)
                }
            }
        }
    }

    /// `f'(x)`; errors for the non-differentiable TV generator.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        match self.kind {
            GeneratorKind::SoftTv => Ok(0.5 * (x - 1.0).tanh()),
            GeneratorKind::Tv => Err(Error::NonDifferentiableGenerator("tv".into())),
            GeneratorKind::Kl => Ok(x.ln() + 1.0),
            GeneratorKind::Chi2 => Ok(x - 1.0),
            GeneratorKind::SoftChi2 => Ok(if x < 1.0 { x.ln() } else { x - 1.0 }),
        }
    }

    /// `(f')^{-1}(y)`. SoftTV inputs are clamped into the open interval
    /// `|y| < 1/2` before artanh; the result is additionally capped at
    /// `saturation_weight`.
    pub fn inverse_derivative(&self, y: f64) -> Result<f64> {
        let raw = match self.kind {
            GeneratorKind::SoftTv => {
                let bound = 0.5 - SOFT_TV_DOMAIN_MARGIN;
                let y = y.clamp(-bound, bound);
                artanh(2.0 * y) + 1.0
            }
            GeneratorKind::Tv => return Err(Error::NonDifferentiableGenerator("tv".into())),
            GeneratorKind::Kl => (y - 1.0).exp(),
            GeneratorKind::Chi2 => y + 1.0,
            GeneratorKind::SoftChi2 => {
                if y < 0.0 {
                    y.exp()
                } else {
                    y + 1.0
                }
            }
        };
        Ok(raw.min(self.saturation_weight))
    }

    /// Whether an inverse derivative is available.
    pub fn is_differentiable(&self) -> bool {
        self.kind != GeneratorKind::Tv
    }

    /// `lim_{t -> inf} f(t) / t` where finite: the mass cost of support the
    /// reference distribution does not cover.
    pub fn asymptotic_slope(&self) -> Option<f64> {
        match self.kind {
            GeneratorKind::Tv | GeneratorKind::SoftTv => Some(0.5),
            GeneratorKind::Kl | GeneratorKind::Chi2 | GeneratorKind::SoftChi2 => None,
        }
    }
}

fn ln_cosh(t: f64) -> f64 {
    // cosh overflows for |t| > ~710; use log(cosh t) = |t| + log((1+e^{-2|t|})/2).
    let a = t.abs();
    a + (0.5 * (1.0 + (-2.0 * a).exp())).ln()
}

fn artanh(x: f64) -> f64 {
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}

/// `sum_x q(x) f(p(x)/q(x))` with the conventions: `q = 0, p = 0` contributes
/// nothing; `q = 0, p > 0` contributes `p * lim f(t)/t` where that limit is
/// finite and errors otherwise.
pub fn f_divergence(gen: &FGenerator, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "p has {} entries, q has {}",
            p.len(),
            q.len()
        )));
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if qi == 0.0 {
            if pi > 0.0 {
                match gen.asymptotic_slope() {
                    Some(slope) => acc += pi * slope,
                    None => {
                        return Err(Error::SupportViolation {
                            index: i,
                            p: pi,
                            gen: gen.name().into(),
                        })
                    }
                }
            }
        } else {
            acc += qi * gen.eval(pi / qi);
        }
    }
    Ok(acc)
}

/// Total variation distance `0.5 * sum |p - q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
