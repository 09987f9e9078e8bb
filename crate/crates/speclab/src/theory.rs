//! Expected accepted length and the acceptance-ordering theorem.
//!
//! A speculative-decoding round drafts `D` tokens; position `i` is accepted
//! with probability `p_i`, and acceptance stops at the first rejection. The
//! expected number of accepted tokens is therefore
//!
//! ```text
//! E[L] = Σ_{k=1}^{D} Π_{i=1}^{k} p_i
//! ```
//!
//! The ordering theorem states that moving acceptance probability from later
//! positions to earlier ones — any balanced redistribution `ζ` that adds
//! mass at positions `≤ d` and removes the same total mass at positions
//! `> d` — never decreases `E[L]`. This module provides the closed form,
//! two independent reference oracles (outcome enumeration and Monte-Carlo
//! simulation), the improved/concentrated profile constructors with their
//! full constraint systems, a feasible-redistribution sampler, and a
//! numerical checker that verifies the inequality chain
//! `E_improved ≥ E_concentrated ≥ E_original` on concrete instances.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Absolute tolerance for all theorem checks: every quantity here is a
/// sum/product of at most ~20 doubles in `[0, 1]`.
pub const TOLERANCE: f64 = 1e-12;

/// Per-position acceptance probabilities `(p_1 … p_D)`, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceProfile {
    p: Vec<f64>,
}

impl AcceptanceProfile {
    /// Validate and wrap a probability vector. Every entry must be finite
    /// and within `[0, 1]`; the vector may be empty.
    pub fn new(p: Vec<f64>) -> Result<AcceptanceProfile> {
        for (i, &v) in p.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::BadParameter {
                    name: "acceptance_profile",
                    detail: format!("p[{i}] = {v} is outside [0, 1]"),
                });
            }
        }
        Ok(AcceptanceProfile { p })
    }

    /// Number of draft positions `D`.
    pub fn len(&self) -> usize {
        self.p.len()
    }

    /// True when the profile has no positions.
    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// The raw probability vector.
    pub fn rates(&self) -> &[f64] {
        &self.p
    }

    /// True when `p_1 ≥ p_2 ≥ … ≥ p_D` (the theorem's hypothesis).
    pub fn is_monotone(&self) -> bool {
        self.p.windows(2).all(|w| w[0] >= w[1])
    }
}

/// A balanced probability redistribution around a split index.
///
/// `d` is the 1-based split position with `1 < d < D`; `zeta[i]` (0-based
/// storage) is added to `p_{i+1}` when `i + 1 ≤ d` and subtracted when
/// `i + 1 > d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Redistribution {
    /// 1-based split index, `1 < d < D`.
    pub d: usize,
    /// Non-negative per-position magnitudes, same length as the profile.
    pub zeta: Vec<f64>,
}

impl Redistribution {
    /// Check every constraint of the redistribution against a profile.
    ///
    /// Violations are reported as [`Error::ConstraintViolation`] with the
    /// clause name: `split-index`, `zeta-shape`, `zeta-nonnegative`,
    /// `budget` (left and right sums must match within `1e-12`),
    /// `left-range` (`p_i + ζ_i ≤ 1` for `i ≤ d`), `right-range`
    /// (`p_i − ζ_i ≥ 0` for `i > d`), or `zeta-below-p` (`ζ_i < p_i`
    /// whenever `ζ_i > 0`; `ζ_i = 0` is always admissible).
    pub fn validate(&self, profile: &AcceptanceProfile) -> Result<()> {
        let p = profile.rates();
        let cap_d = p.len();
        if !(self.d > 1 && self.d < cap_d) {
            return Err(Error::ConstraintViolation {
                clause: "split-index",
                detail: format!("d = {} must satisfy 1 < d < D = {cap_d}", self.d),
            });
        }
        if self.zeta.len() != cap_d {
            return Err(Error::ConstraintViolation {
                clause: "zeta-shape",
                detail: format!("zeta has length {}, profile has {cap_d}", self.zeta.len()),
            });
        }
        for (i, &z) in self.zeta.iter().enumerate() {
            if !z.is_finite() || z < 0.0 {
                return Err(Error::ConstraintViolation {
                    clause: "zeta-nonnegative",
                    detail: format!("zeta[{}] = {z}", i + 1),
                });
            }
        }
        let left: f64 = self.zeta[..self.d].iter().sum();
        let right: f64 = self.zeta[self.d..].iter().sum();
        if (left - right).abs() > TOLERANCE {
            return Err(Error::ConstraintViolation {
                clause: "budget",
                detail: format!("left sum {left} != right sum {right}"),
            });
        }
        for (i, (&z, &pi)) in self.zeta.iter().zip(p).enumerate() {
            let pos = i + 1;
            if pos <= self.d {
                let v = pi + z;
                if v > 1.0 + TOLERANCE {
                    return Err(Error::ConstraintViolation {
                        clause: "left-range",
                        detail: format!("p[{pos}] + zeta[{pos}] = {v} > 1"),
                    });
                }
            } else {
                let v = pi - z;
                if v < -TOLERANCE {
                    return Err(Error::ConstraintViolation {
                        clause: "right-range",
                        detail: format!("p[{pos}] - zeta[{pos}] = {v} < 0"),
                    });
                }
            }
            if z > 0.0 && z >= pi {
                return Err(Error::ConstraintViolation {
                    clause: "zeta-below-p",
                    detail: format!("zeta[{pos}] = {z} >= p[{pos}] = {pi}"),
                });
            }
        }
        Ok(())
    }
}

/// Expected accepted length `Σ_k Π_{i≤k} p_i`, accumulated left to right.
pub fn expected_length(profile: &AcceptanceProfile) -> f64 {
    let mut total = 0.0;
    let mut prod = 1.0;
    for &p in profile.rates() {
        prod *= p;
        total += prod;
    }
    total
}

/// Reference oracle: expected length by full outcome enumeration,
/// `Σ_l l · P(L = l)` with `P(L = l) = (Π_{i≤l} p_i)(1 − p_{l+1})` and
/// `p_{D+1} := 0`. Mathematically identical to [`expected_length`]; kept as
/// an independently coded cross-check.
pub fn expected_length_enumeration(profile: &AcceptanceProfile) -> f64 {
    let p = profile.rates();
    let n = p.len();
    let mut total = 0.0;
    for l in 0..=n {
        let mut prob = 1.0;
        for &pi in &p[..l] {
            prob *= pi;
        }
        let next = if l < n { p[l] } else { 0.0 };
        total += l as f64 * prob * (1.0 - next);
    }
    total
}

/// Reference oracle: simulate one acceptance round as a Bernoulli chain and
/// return the accepted length (number of successes before the first
/// failure, capped at `D`).
pub fn simulate_accepted_length(profile: &AcceptanceProfile, rng: &mut Rng) -> usize {
    let mut l = 0;
    for &p in profile.rates() {
        if rng.bernoulli(p) {
            l += 1;
        } else {
            break;
        }
    }
    l
}

/// Apply a validated redistribution: `p̃_i = p_i + ζ_i` for `i ≤ d` and
/// `p_i − ζ_i` for `i > d`. The total probability mass is preserved.
pub fn make_improved(
    profile: &AcceptanceProfile,
    redistribution: &Redistribution,
) -> Result<AcceptanceProfile> {
    redistribution.validate(profile)?;
    let p = profile.rates();
    let mut out = Vec::with_capacity(p.len());
    for (i, &pi) in p.iter().enumerate() {
        let z = redistribution.zeta[i];
        let v = if i < redistribution.d { pi + z } else { pi - z };
        // Validation bounds v to [-TOLERANCE, 1 + TOLERANCE]; clamp the
        // rounding slack so the result is a legal profile.
        out.push(v.clamp(0.0, 1.0));
    }
    AcceptanceProfile::new(out)
}

/// Concentrate a total redistribution budget at the split position.
///
/// When `p_d + ζ ≤ 1` this sets `p'_d = p_d + ζ` and
/// `p'_{d+1} = p_{d+1} − ζ`, leaving other positions unchanged. When the
/// budget overflows position `d`, the overflow spills upward: positions
/// `d, d−1, …` are filled to exactly 1 until the residual fits at the last
/// touched position; the full `ζ` is still subtracted at `d + 1`.
///
/// Errors with [`Error::Infeasible`] when the combined headroom of
/// positions `≤ d` cannot absorb `ζ`, or when `p_{d+1} − ζ < 0`.
pub fn make_concentrated(
    profile: &AcceptanceProfile,
    d: usize,
    zeta_total: f64,
) -> Result<AcceptanceProfile> {
    let p = profile.rates();
    let cap_d = p.len();
    if !(d > 1 && d < cap_d) {
        return Err(Error::BadParameter {
            name: "d",
            detail: format!("d = {d} must satisfy 1 < d < D = {cap_d}"),
        });
    }
    if !zeta_total.is_finite() || zeta_total < 0.0 {
        return Err(Error::BadParameter {
            name: "zeta_total",
            detail: format!("must be finite and >= 0, got {zeta_total}"),
        });
    }
    let mut out = p.to_vec();
    let donor = p[d] - zeta_total; // 0-based index d is 1-based position d+1
    if donor < -TOLERANCE {
        return Err(Error::Infeasible(format!(
            "p[{}] - zeta = {donor} < 0: the donor position cannot supply the budget",
            d + 1
        )));
    }
    out[d] = donor.max(0.0);

    // Fill positions d, d-1, ..., 1 (1-based) with the budget.
    let mut remaining = zeta_total;
    let mut pos = d; // 1-based receiving position; 0-based index pos - 1
    while remaining > 0.0 {
        if pos == 0 {
            return Err(Error::Infeasible(format!(
                "insufficient headroom above position {d}: {remaining} left over"
            )));
        }
        let idx = pos - 1;
        let room = 1.0 - out[idx];
        if remaining >= room {
            out[idx] = 1.0;
            remaining -= room;
        } else {
            out[idx] += remaining;
            remaining = 0.0;
        }
        pos -= 1;
    }
    AcceptanceProfile::new(out)
}

/// Draw a random feasible [`Redistribution`] for a monotone profile.
///
/// The budget is drawn uniformly up to `magnitude` (clamped to `[0, 1]`)
/// times the smaller of the two sides' headroom, spread across positions
/// proportionally to random weights under the per-position caps, then
/// validated; infeasible draws are rejected and resampled, failing with
/// [`Error::Infeasible`] after 10⁴ attempts. A profile with no usable
/// headroom (for example all `p_i = 1` on the left) yields the all-zero
/// redistribution, which is always admissible.
pub fn sample_redistribution(
    profile: &AcceptanceProfile,
    d: usize,
    rng: &mut Rng,
    magnitude: f64,
) -> Result<Redistribution> {
    let p = profile.rates();
    let cap_d = p.len();
    if !profile.is_monotone() {
        return Err(Error::ConstraintViolation {
            clause: "monotone",
            detail: "sample_redistribution requires a monotone profile".into(),
        });
    }
    if !(d > 1 && d < cap_d) {
        return Err(Error::BadParameter {
            name: "d",
            detail: format!("d = {d} must satisfy 1 < d < D = {cap_d}"),
        });
    }
    let magnitude = magnitude.clamp(0.0, 1.0);

    // Per-position caps. Left: zeta_i <= 1 - p_i and zeta_i < p_i.
    // Right: zeta_i < p_i. The strict inequality is kept with a safety
    // factor; zeta_i = 0 is always admissible.
    const STRICT: f64 = 0.999;
    let left_cap: Vec<f64> = (0..d)
        .map(|i| (1.0 - p[i]).min(STRICT * p[i]).max(0.0))
        .collect();
    let right_cap: Vec<f64> = (d..cap_d).map(|i| (STRICT * p[i]).max(0.0)).collect();
    let left_total: f64 = left_cap.iter().sum();
    let right_total: f64 = right_cap.iter().sum();
    let zero = || Redistribution {
        d,
        zeta: vec![0.0; cap_d],
    };
    if left_total <= 0.0 || right_total <= 0.0 {
        // Degenerate: no transferable mass; the all-zero redistribution is
        // the only feasible one.
        return Ok(zero());
    }

    for _ in 0..10_000 {
        let budget = rng.next_f64() * magnitude * left_total.min(right_total);
        let mut zeta = vec![0.0; cap_d];
        // Spread the budget proportionally to randomly weighted caps. A
        // skewed weight draw can push one share past its cap; the final
        // validation gate rejects such draws and the loop resamples.
        let spread = |caps: &[f64], budget: f64, rng: &mut Rng| -> Vec<f64> {
            let weights: Vec<f64> = caps.iter().map(|&c| c * rng.next_f64()).collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                return vec![0.0; caps.len()];
            }
            weights.iter().map(|&w| budget * w / total).collect()
        };
        let left = spread(&left_cap, budget, rng);
        let right = spread(&right_cap, budget, rng);
        let left_sum: f64 = left.iter().sum();
        let right_sum: f64 = right.iter().sum();
        if left_sum <= 0.0 || right_sum <= 0.0 {
            if budget == 0.0 {
                return Ok(zero());
            }
            continue;
        }
        // Rescale the right side so the sums match exactly in floating
        // point, then copy in.
        let scale = left_sum / right_sum;
        zeta[..d].copy_from_slice(&left);
        for (i, &r) in right.iter().enumerate() {
            zeta[d + i] = r * scale;
        }
        let candidate = Redistribution { d, zeta };
        if candidate.validate(profile).is_ok() {
            return Ok(candidate);
        }
    }
    Err(Error::Infeasible(format!(
        "no feasible redistribution found for d = {d} after 10000 attempts"
    )))
}

/// Result of an ordering-theorem check on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    /// Expected accepted length of the original profile.
    pub e_original: f64,
    /// Expected accepted length of the concentrated profile, when the
    /// concentrate construction is feasible for this instance.
    pub e_concentrated: Option<f64>,
    /// Expected accepted length of the improved (redistributed) profile.
    pub e_improved: f64,
    /// `E_improved ≥ E_original − 1e-12`.
    pub improved_ge_original: bool,
    /// When the concentrated profile exists:
    /// `E_improved ≥ E_concentrated − 1e-12` and
    /// `E_concentrated ≥ E_original − 1e-12`.
    pub chain_ok: Option<bool>,
    /// Overall verdict: the improved inequality holds and, when present,
    /// the full chain holds.
    pub ok: bool,
}

/// Verify the ordering theorem on one `(profile, redistribution)` instance.
///
/// The profile must be monotone (the theorem's hypothesis); the
/// redistribution must satisfy the full constraint system. Returns the
/// three expectations and the inequality flags; never hides a violation.
pub fn check_ordering(
    profile: &AcceptanceProfile,
    redistribution: &Redistribution,
) -> Result<OrderingReport> {
    if !profile.is_monotone() {
        return Err(Error::ConstraintViolation {
            clause: "monotone",
            detail: "check_ordering requires p1 >= p2 >= ... >= pD".into(),
        });
    }
    let improved = make_improved(profile, redistribution)?;
    let e_original = expected_length(profile);
    let e_improved = expected_length(&improved);
    let zeta_total: f64 = redistribution.zeta[..redistribution.d].iter().sum();
    let e_concentrated = make_concentrated(profile, redistribution.d, zeta_total)
        .ok()
        .map(|c| expected_length(&c));
    let improved_ge_original = e_improved >= e_original - TOLERANCE;
    let chain_ok = e_concentrated
        .map(|e_con| e_improved >= e_con - TOLERANCE && e_con >= e_original - TOLERANCE);
    let ok = improved_ge_original && chain_ok.unwrap_or(true);
    Ok(OrderingReport {
        e_original,
        e_concentrated,
        e_improved,
        improved_ge_original,
        chain_ok,
        ok,
    })
}

/// One row of a random ordering-theorem sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Number of draft positions in the sampled profile.
    pub draft_len: usize,
    /// Split index used.
    pub d: usize,
    /// Expected length of the original profile.
    pub e_original: f64,
    /// Expected length of the concentrated profile, when feasible.
    pub e_concentrated: Option<f64>,
    /// Expected length of the improved profile.
    pub e_improved: f64,
    /// Whether every checked inequality held.
    pub ok: bool,
}

/// Run `count` random ordering-theorem instances with draft lengths drawn
/// from `[d_min, d_max]` and report one row per instance.
///
/// A split index requires `1 < d < D`, so draft lengths below 3 admit no
/// instance and are redrawn from `[3, d_max]`.
pub fn sweep_ordering(
    count: usize,
    d_min: usize,
    d_max: usize,
    rng: &mut Rng,
) -> Result<Vec<SweepRow>> {
    if d_min < 2 || d_max < d_min {
        return Err(Error::BadParameter {
            name: "d_range",
            detail: format!("need 2 <= d_min <= d_max, got [{d_min}, {d_max}]"),
        });
    }
    let lo = d_min.max(3);
    if d_max < lo {
        return Err(Error::BadParameter {
            name: "d_range",
            detail: format!("no draft length in [{d_min}, {d_max}] admits a split index 1 < d < D"),
        });
    }
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        // Draw D from [d_min, d_max]; lengths < 3 admit no split index, so
        // redraw them from [lo, d_max].
        let mut big_d = d_min + rng.below((d_max - d_min + 1) as u64) as usize;
        if big_d < lo {
            big_d = lo + rng.below((d_max - lo + 1) as u64) as usize;
        }
        // Random monotone profile: uniform draws sorted descending, with an
        // occasional saturated head to exercise the degenerate p = 1 cases.
        let mut p: Vec<f64> = (0..big_d).map(|_| rng.next_f64()).collect();
        p.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if rng.bernoulli(0.1) {
            p[0] = 1.0;
        }
        let profile = AcceptanceProfile::new(p)?;
        let d = 2 + rng.below((big_d - 2) as u64) as usize; // uniform in [2, D-1]
        let magnitude = rng.next_f64();
        let redistribution = sample_redistribution(&profile, d, rng, magnitude)?;
        let report = check_ordering(&profile, &redistribution)?;
        rows.push(SweepRow {
            draft_len: big_d,
            d,
            e_original: report.e_original,
            e_concentrated: report.e_concentrated,
            e_improved: report.e_improved,
            ok: report.ok,
        });
    }
    Ok(rows)
}
