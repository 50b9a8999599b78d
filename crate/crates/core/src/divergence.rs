//! Exact divergences and the pi-weighted adversarial value on finite supports.
//!
//! Everything here works on [`DiscreteDistribution`]s, where every expectation is
//! a finite sum. That makes the relationship between the adversarial value at
//! the optimal discriminator and `JS_pi` checkable to ~1e-10 instead of being a
//! statement about neural estimates.
//!
//! Conventions: `0 * log 0 = 0`, and `KL[p || q] = +inf` whenever some `p_i > 0`
//! has `q_i = 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass tolerance for normalization checks.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Clamp margin applied to optimal discriminator values before logarithms.
pub const PROFILE_EPSILON: f64 = 1e-12;

/// Maximum tolerated disagreement between the two routes to `C(G)`.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

/// Normalized probability mass vector over `0..support_size()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteDistribution {
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    /// Validates non-negativity, finiteness and `sum == 1` within [`MASS_TOLERANCE`].
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::Domain("distribution needs at least one state".into()));
        }
        if let Some((i, m)) = masses.iter().enumerate().find(|(_, m)| !m.is_finite() || **m < 0.0) {
            return Err(Error::Domain(format!("mass {m} at state {i} is not a finite non-negative number")));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Domain(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { masses })
    }

    /// Normalizes non-negative weights with a positive total.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(support_size: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; support_size])
    }

    /// Masses drawn from `(0, 1]` and normalized; every state has positive mass.
    pub fn random_positive<R: Rng + ?Sized>(support_size: usize, rng: &mut R) -> Result<Self> {
        let weights: Vec<f64> = (0..support_size).map(|_| 1.0 - rng.random::<f64>()).collect();
        Self::from_weights(&weights)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn support_size(&self) -> usize {
        self.masses.len()
    }

    /// Same support and every mass within `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.masses.len() == other.masses.len()
            && self.masses.iter().zip(&other.masses).all(|(a, b)| (a - b).abs() <= tol)
    }

    /// `pi * self + (1 - pi) * other`.
    pub fn mixture(&self, other: &Self, w: PiWeight) -> Result<Self> {
        check_sizes(self, other)?;
        let pi = w.value();
        let masses = self.masses.iter().zip(&other.masses).map(|(p, q)| pi * p + (1.0 - pi) * q).collect();
        Ok(Self { masses })
    }
}

impl TryFrom<Vec<f64>> for DiscreteDistribution {
    type Error = Error;

    fn try_from(masses: Vec<f64>) -> Result<Self> {
        Self::new(masses)
    }
}

impl From<DiscreteDistribution> for Vec<f64> {
    fn from(d: DiscreteDistribution) -> Self {
        d.masses
    }
}

/// The weight `pi` in the open interval `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PiWeight(f64);

impl PiWeight {
    pub fn new(pi: f64) -> Result<Self> {
        if pi.is_finite() && pi > 0.0 && pi < 1.0 {
            Ok(Self(pi))
        } else {
            Err(Error::Domain(format!("pi must lie in the open interval (0, 1), got {pi}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PiWeight {
    type Error = Error;

    fn try_from(pi: f64) -> Result<Self> {
        Self::new(pi)
    }
}

impl From<PiWeight> for f64 {
    fn from(w: PiWeight) -> f64 {
        w.0
    }
}

/// Per-state discriminator output `D(x)`.
///
/// Construction accepts the closed interval `[0, 1]`; [`adversarial_value`]
/// rejects boundary values that carry positive mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorProfile {
    values: Vec<f64>,
}

impl DiscriminatorProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("empty discriminator profile".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("discriminator value {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_sizes(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<()> {
    if p.support_size() != q.support_size() {
        return Err(Error::Dimension(format!(
            "support sizes differ: {} vs {}",
            p.support_size(),
            q.support_size()
        )));
    }
    Ok(())
}

/// `KL[p || q]`; `f64::INFINITY` when `p` is not absolutely continuous w.r.t. `q`.
pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    check_sizes(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.masses.iter().zip(&q.masses) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total.max(0.0))
}

/// `JS_pi[p || q] = pi KL[p || m] + (1 - pi) KL[q || m]` with `m = pi p + (1 - pi) q`.
///
/// Always finite: the mixture dominates both arguments.
pub fn js_pi_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution, w: PiWeight) -> Result<f64> {
    let m = p.mixture(q, w)?;
    let pi = w.value();
    let value = pi * kl_divergence(p, &m)? + (1.0 - pi) * kl_divergence(q, &m)?;
    Ok(value.max(0.0))
}

/// `pi log pi + (1 - pi) log(1 - pi)`, the additive constant in `C(G)`.
pub fn pi_entropy_constant(w: PiWeight) -> f64 {
    let pi = w.value();
    pi * pi.ln() + (1.0 - pi) * (1.0 - pi).ln()
}

/// `D*(x) = pi P(x) / (pi P(x) + (1 - pi) Q(x))`, clamped into `(eps, 1 - eps)`.
///
/// Every state must lie in `supp(P) ∪ supp(Q)`; restrict first with
/// [`restrict_to_union`] when that is not guaranteed.
pub fn optimal_discriminator(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    w: PiWeight,
) -> Result<DiscriminatorProfile> {
    check_sizes(p, q)?;
    let pi = w.value();
    let mut values = Vec::with_capacity(p.support_size());
    for (i, (&pm, &qm)) in p.masses.iter().zip(&q.masses).enumerate() {
        if pm == 0.0 && qm == 0.0 {
            return Err(Error::Domain(format!("state {i} has zero mass under both distributions")));
        }
        let d = pi * pm / (pi * pm + (1.0 - pi) * qm);
        values.push(d.clamp(PROFILE_EPSILON, 1.0 - PROFILE_EPSILON));
    }
    DiscriminatorProfile::new(values)
}

/// Drops states with zero mass under both distributions.
pub fn restrict_to_union(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
) -> Result<(DiscreteDistribution, DiscreteDistribution)> {
    check_sizes(p, q)?;
    let (pm, qm): (Vec<f64>, Vec<f64>) = p
        .masses
        .iter()
        .zip(&q.masses)
        .filter(|(a, b)| **a > 0.0 || **b > 0.0)
        .map(|(a, b)| (*a, *b))
        .unzip();
    Ok((DiscreteDistribution { masses: pm }, DiscreteDistribution { masses: qm }))
}

/// `pi Σ p_i log d_i + (1 - pi) Σ q_i log(1 - d_i)`.
pub fn adversarial_value(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    d: &DiscriminatorProfile,
    w: PiWeight,
) -> Result<f64> {
    check_sizes(p, q)?;
    if d.values.len() != p.support_size() {
        return Err(Error::Dimension(format!(
            "profile has {} states, distributions have {}",
            d.values.len(),
            p.support_size()
        )));
    }
    let pi = w.value();
    let mut real = 0.0;
    let mut fake = 0.0;
    for (i, ((&pm, &qm), &di)) in p.masses.iter().zip(&q.masses).zip(&d.values).enumerate() {
        if pm > 0.0 {
            if di <= 0.0 {
                return Err(Error::Domain(format!("D = 0 at state {i} where P has mass {pm}")));
            }
            real += pm * di.ln();
        }
        if qm > 0.0 {
            if di >= 1.0 {
                return Err(Error::Domain(format!("D = 1 at state {i} where Q has mass {qm}")));
            }
            fake += qm * (1.0 - di).ln();
        }
    }
    Ok(pi * real + (1.0 - pi) * fake)
}

/// `C(G) = V(G, D*)`.
///
/// Evaluated both as the adversarial value at `D*` and as
/// `pi_entropy_constant + JS_pi`; the two must agree within
/// [`IDENTITY_TOLERANCE`] or a consistency error is returned.
pub fn generator_cost(p: &DiscreteDistribution, q: &DiscreteDistribution, w: PiWeight) -> Result<f64> {
    let (cost, residual) = generator_cost_with_residual(p, q, w)?;
    if !(residual < IDENTITY_TOLERANCE) {
        return Err(Error::Consistency(format!(
            "V(G, D*) and constant + JS_pi disagree by {residual:e}"
        )));
    }
    Ok(cost)
}

/// `(V(G, D*), |V(G, D*) - constant - JS_pi|)` without enforcing the tolerance.
pub fn generator_cost_with_residual(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    w: PiWeight,
) -> Result<(f64, f64)> {
    let (p, q) = restrict_to_union(p, q)?;
    let d_star = optimal_discriminator(&p, &q, w)?;
    let via_value = adversarial_value(&p, &q, &d_star, w)?;
    let via_divergence = pi_entropy_constant(w) + js_pi_divergence(&p, &q, w)?;
    Ok((via_value, (via_value - via_divergence).abs()))
}

/// Grid step used to cross-check [`scalar_log_maximizer`].
pub const MAXIMIZER_GRID_STEP: f64 = 1e-4;

fn log_objective(a: f64, b: f64, y: f64) -> f64 {
    let term = |c: f64, v: f64| if c == 0.0 { 0.0 } else { c * v.ln() };
    term(a, y) + term(b, 1.0 - y)
}

/// Maximizer of `f(y) = a log y + b log(1 - y)` on `[0, 1]`, which is `a / (a + b)`.
///
/// The closed form is cross-checked against a scan of `f` on a grid of step
/// [`MAXIMIZER_GRID_STEP`].
pub fn scalar_log_maximizer(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
        return Err(Error::Domain(format!("coefficients must be finite and non-negative, got ({a}, {b})")));
    }
    if a == 0.0 && b == 0.0 {
        return Err(Error::Domain("f(y) is constant for a = b = 0".into()));
    }
    let closed = a / (a + b);

    let steps = (1.0 / MAXIMIZER_GRID_STEP).round() as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=steps {
        let y = i as f64 * MAXIMIZER_GRID_STEP;
        let f = log_objective(a, b, y);
        if f > best.0 {
            best = (f, y);
        }
    }
    if (best.1 - closed).abs() > MAXIMIZER_GRID_STEP * (1.0 + 1e-9) {
        return Err(Error::Consistency(format!(
            "grid maximum at {} but closed form gives {closed}",
            best.1
        )));
    }
    Ok(closed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitDirection {
    /// `JS_pi / pi -> KL[P || Q]` as `pi -> 0`.
    TowardZero,
    /// `JS_pi / (1 - pi) -> KL[Q || P]` as `pi -> 1`.
    TowardOne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitPoint {
    pub pi: f64,
    pub ratio: f64,
    pub target: f64,
    pub gap: f64,
}

/// Normalized `JS_pi` ratios along a sequence of weights approaching a limit.
pub fn limit_ratio_profile(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    pis: &[PiWeight],
    direction: LimitDirection,
) -> Result<Vec<LimitPoint>> {
    check_sizes(p, q)?;
    let target = match direction {
        LimitDirection::TowardZero => kl_divergence(p, q)?,
        LimitDirection::TowardOne => kl_divergence(q, p)?,
    };
    if !target.is_finite() {
        return Err(Error::UnsupportedLimit(format!("{direction:?} target KL is infinite")));
    }
    let ordered = pis.windows(2).all(|w| match direction {
        LimitDirection::TowardZero => w[1].value() < w[0].value(),
        LimitDirection::TowardOne => w[1].value() > w[0].value(),
    });
    if !ordered {
        return Err(Error::Argument(format!("weights must move monotonically {direction:?}")));
    }
    pis.iter()
        .map(|&w| {
            let js = js_pi_divergence(p, q, w)?;
            let scale = match direction {
                LimitDirection::TowardZero => w.value(),
                LimitDirection::TowardOne => 1.0 - w.value(),
            };
            let ratio = js / scale;
            Ok(LimitPoint { pi: w.value(), ratio, target, gap: (ratio - target).abs() })
        })
        .collect()
}
