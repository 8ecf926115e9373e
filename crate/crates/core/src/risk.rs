// Copyright 2026 The stv-audit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Audit statistics: exact binomial bounds, negative audits, measured risk
//! of fixed-size samples, and a Kaplan-Markov comparison audit against the
//! last-round alternative.
//!
//! # Kaplan-Markov formula
//!
//! With last-round difference `M` over `N` ballots, `mu = M / N`. After
//! inspecting `n` ballots with per-ballot overstatements `e_i` (in votes,
//! between 0 and 2),
//!
//! ```text
//! p = min(1, (1 - mu)^n / prod_i (1 - e_i / 2))
//! ```
//!
//! and `p = 1` once any `e_i` reaches 2. The error-free sample size for risk
//! limit `alpha` is therefore `ceil(ln alpha / ln(1 - mu))`.

use crate::ballot::{Ballot, CandidateId};
use crate::error::{Error, Result};
use crate::num::Weight;
use crate::stv::{CountResult, Status};
use num_traits::Float;
use serde::{Deserialize, Serialize};

fn cast<F: Float>(x: f64) -> F {
    F::from(x).expect("representable")
}

/// Log of each binomial probability mass `P(X = j)`, `j = 0..=n`.
fn log_pmf<F: Float>(n: u64, p: F) -> Vec<F> {
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = cast::<F>(n as f64) * lq;
    out.push(acc);
    for j in 1..=n {
        acc = acc + cast::<F>((n - j + 1) as f64).ln() - cast::<F>(j as f64).ln() + lp - lq;
        out.push(acc);
    }
    out
}

fn log_sum_exp<F: Float>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).fold(F::zero(), |a, b| a + b).ln()
}

/// `P(X <= k)` for `X ~ Binomial(n, p)`.
pub fn binom_cdf<F: Float>(k: u64, n: u64, p: F) -> F {
    if k >= n || p <= F::zero() {
        return F::one();
    }
    if p >= F::one() {
        return F::zero();
    }
    let l = log_pmf(n, p);
    log_sum_exp(&l[..=k as usize]).exp().min(F::one())
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`.
pub fn binom_sf<F: Float>(k: u64, n: u64, p: F) -> F {
    if k == 0 || p >= F::one() {
        return F::one();
    }
    if k > n || p <= F::zero() {
        return F::zero();
    }
    let l = log_pmf(n, p);
    log_sum_exp(&l[k as usize..]).exp().min(F::one())
}

/// Bisection for the boundary of a monotone predicate on `[0, 1]`:
/// `pred(lo)` is false, `pred(hi)` true.
fn bisect<F: Float>(pred: impl Fn(F) -> bool) -> F {
    let (mut lo, mut hi) = (F::zero(), F::one());
    let tol = F::epsilon() * cast(4.0);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = (lo + hi) / cast(2.0);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn check_args<F: Float>(k: u64, n: u64, confidence: F) -> Result<()> {
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    if !(confidence > F::zero() && confidence < F::one()) {
        return Err(Error::InvalidArgument("confidence must lie in (0, 1)".into()));
    }
    Ok(())
}

/// One-sided exact (Clopper-Pearson) upper bound: the smallest `p` with
/// `P(X <= k | n, p) <= 1 - confidence`.
pub fn binom_upper_bound<F: Float>(k: u64, n: u64, confidence: F) -> Result<F> {
    check_args(k, n, confidence)?;
    if k == n {
        return Ok(F::one());
    }
    let alpha = F::one() - confidence;
    Ok(bisect(|p| binom_cdf(k, n, p) <= alpha))
}

/// One-sided exact lower bound: the largest `p` with
/// `P(X >= k | n, p) <= 1 - confidence`.
pub fn binom_lower_bound<F: Float>(k: u64, n: u64, confidence: F) -> Result<F> {
    check_args(k, n, confidence)?;
    if k == 0 {
        return Ok(F::zero());
    }
    let alpha = F::one() - confidence;
    let above = bisect(|p| binom_sf(k, n, p) > alpha);
    // `above` is the first p past the boundary; step back inside it.
    let (mut lo, mut hi) = (F::zero(), above);
    for _ in 0..200 {
        if hi - lo <= F::epsilon() * cast(4.0) {
            break;
        }
        let mid = (lo + hi) / cast(2.0);
        if binom_sf(k, n, mid) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Sample-based bounds on the ballot error rate.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct ErrorRateEstimate {
    /// Ballots found with at least one error.
    pub k: u64,
    pub n: u64,
    pub population: u64,
    pub p_lower: f64,
    pub p_upper: f64,
    pub confidence: f64,
}

impl ErrorRateEstimate {
    pub fn new(k: u64, n: u64, population: u64, confidence: f64) -> Result<Self> {
        if n > population {
            return Err(Error::InvalidArgument(format!(
                "sample of {n} exceeds population {population}"
            )));
        }
        let (p_lower, p_upper) = if n == 0 {
            check_args(k, n, confidence)?;
            (0.0, 1.0)
        } else {
            (
                binom_lower_bound(k, n, confidence)?,
                binom_upper_bound(k, n, confidence)?,
            )
        };
        Ok(ErrorRateEstimate {
            k,
            n,
            population,
            p_lower,
            p_upper,
            confidence,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeDecision {
    ErrorRateExceedsMarginBound,
    Inconclusive,
}

/// Concludes that errors outnumber `bound_x` when the lower bound on the
/// number of erroneous ballots, `p_lower * N`, exceeds it.
pub fn negative_audit_decision(estimate: &ErrorRateEstimate, bound_x: u64) -> NegativeDecision {
    if estimate.p_lower * estimate.population as f64 > bound_x as f64 {
        NegativeDecision::ErrorRateExceedsMarginBound
    } else {
        NegativeDecision::Inconclusive
    }
}

/// Chance of seeing no errors in `n` ballots when the true rate is `p0`.
pub fn measured_risk_zero_errors<F: Float>(n: u64, p0: F) -> Result<F> {
    if !(p0 > F::zero() && p0 < F::one()) {
        return Err(Error::InvalidArgument("p0 must lie in (0, 1)".into()));
    }
    Ok((cast::<F>(n as f64) * (-p0).ln_1p()).exp())
}

/// Error-free sample size reaching `risk_limit` at diluted margin
/// `margin_fraction`.
pub fn km_initial_sample(margin_fraction: f64, risk_limit: f64) -> Result<u64> {
    if !(margin_fraction > 0.0 && margin_fraction < 1.0) {
        return Err(Error::InvalidArgument("margin fraction must lie in (0, 1)".into()));
    }
    if !(risk_limit > 0.0 && risk_limit <= 1.0) {
        return Err(Error::InvalidArgument("risk limit must lie in (0, 1]".into()));
    }
    if risk_limit == 1.0 {
        return Ok(0);
    }
    Ok((risk_limit.ln() / (-margin_fraction).ln_1p()).ceil() as u64)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    NoDiscrepancy,
    /// The ballots differ without moving the last-round gap.
    NoEffect,
    /// `l` gains with no seated candidate ranked above it.
    LoserAppears,
    LoserAppearsBelowSeated,
    /// `w` loses with no seated candidate ranked above it.
    WinnerDisappears,
    WinnerDisappearsBelowSeated,
    /// Only the piles of quota-seated candidates differ.
    SeatedPileChanged,
}

/// A sampled ballot whose paper reading may differ from the record.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub ballot_index: u64,
    pub reported: Ballot,
    /// `None` when the paper is informal.
    pub actual: Option<Ballot>,
    pub classification: Classification,
    /// Largest single effect, in `[0, 1]`.
    pub effect_weight: f64,
    /// Votes the discrepancy takes off the last-round gap, at most 2.
    pub overstatement: f64,
}

impl DiscrepancyRecord {
    pub fn new<W: Weight>(
        ballot_index: u64,
        reported: Ballot,
        actual: Option<Ballot>,
        count: &CountResult<W>,
    ) -> Result<Self> {
        let mut rec = DiscrepancyRecord {
            ballot_index,
            reported,
            actual,
            classification: Classification::NoDiscrepancy,
            effect_weight: 0.0,
            overstatement: 0.0,
        };
        let (class, weight, over) = classify_discrepancy(&rec, count)?;
        rec.classification = class;
        rec.effect_weight = weight;
        rec.overstatement = over;
        Ok(rec)
    }
}

/// Share of a paper's value reaching `target` at the last-round pair's
/// round, and the quota-seated candidates it passes on the way.
fn reach<W: Weight>(
    ballot: &[CandidateId],
    target: CandidateId,
    other: CandidateId,
    pair_round: usize,
    count: &CountResult<W>,
) -> (f64, Vec<CandidateId>) {
    let mut acc = 1.0;
    let mut seated = Vec::new();
    for &c in ballot {
        if c == target {
            return (acc, seated);
        }
        if c == other {
            return (0.0, seated);
        }
        match count.status[c.index()] {
            Status::Eliminated { round } if round < pair_round => {}
            Status::Elected {
                round,
                by_quota: true,
            } if round < pair_round => {
                let s = count.seat_transfer_value(c).map_or(0.0, |t| t.to_f64());
                acc = s / (1.0 + s);
                seated.push(c);
            }
            _ => return (0.0, seated),
        }
    }
    (0.0, seated)
}

/// Effect of a paper/record difference on the final-seat contest between
/// `w` and `l`: `(classification, effect_weight, overstatement)`.
///
/// Differences that help the reported outcome count as zero.
pub fn classify_discrepancy<W: Weight>(
    rec: &DiscrepancyRecord,
    count: &CountResult<W>,
) -> Result<(Classification, f64, f64)> {
    let pair = count
        .last_round_pair
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("count has no last-round pair".into()))?;
    let reported = rec.reported.prefs();
    let actual = rec.actual.as_ref().map_or(&[][..], |b| b.prefs());
    if rec.actual.as_ref() == Some(&rec.reported) {
        return Ok((Classification::NoDiscrepancy, 0.0, 0.0));
    }
    let n = count.status.len();
    if reported.iter().chain(actual).any(|c| c.index() >= n) {
        return Err(Error::InvalidBallot("unknown candidate in discrepancy".into()));
    }
    let (w, l, r) = (pair.winner, pair.loser, pair.round);
    let (l_rep, seated_rep) = reach(reported, l, w, r, count);
    let (l_act, seated_act) = reach(actual, l, w, r, count);
    let (w_rep, _) = reach(reported, w, l, r, count);
    let (w_act, _) = reach(actual, w, l, r, count);
    let l_effect = (l_act - l_rep).max(0.0);
    let w_effect = (w_rep - w_act).max(0.0);
    let mut sorted_rep = seated_rep;
    let mut sorted_act = seated_act;
    sorted_rep.sort();
    sorted_act.sort();
    let pile_effect = if sorted_rep != sorted_act {
        1.0 / count.quota as f64
    } else {
        0.0
    };
    let class = if l_effect > 0.0 {
        if l_act == 1.0 {
            Classification::LoserAppears
        } else {
            Classification::LoserAppearsBelowSeated
        }
    } else if w_effect > 0.0 {
        if w_rep == 1.0 {
            Classification::WinnerDisappears
        } else {
            Classification::WinnerDisappearsBelowSeated
        }
    } else if pile_effect > 0.0 {
        Classification::SeatedPileChanged
    } else {
        Classification::NoEffect
    };
    let weight = l_effect.max(w_effect).max(pile_effect);
    let over = (l_effect + w_effect + pile_effect).min(2.0);
    Ok((class, weight, over))
}

/// Running state of a Kaplan-Markov comparison audit.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct KmAuditState {
    pub margin_m: u64,
    pub total_ballots: u64,
    pub risk_limit: f64,
    /// Inspected ballots that differ from the record.
    pub discrepancies: Vec<DiscrepancyRecord>,
    pub n_inspected: u64,
    pub p_value: f64,
}

impl KmAuditState {
    pub fn new(margin_m: u64, total_ballots: u64, risk_limit: f64) -> Result<Self> {
        let mut s = KmAuditState {
            margin_m,
            total_ballots,
            risk_limit,
            discrepancies: Vec::new(),
            n_inspected: 0,
            p_value: 1.0,
        };
        s.p_value = km_pvalue(&s)?;
        Ok(s)
    }

    /// Records one inspected ballot, with its discrepancy if it had one.
    pub fn inspect(&mut self, discrepancy: Option<DiscrepancyRecord>) -> Result<f64> {
        self.n_inspected += 1;
        self.discrepancies.extend(discrepancy);
        self.p_value = km_pvalue(self)?;
        Ok(self.p_value)
    }

    pub fn attained(&self) -> bool {
        self.p_value <= self.risk_limit
    }
}

pub fn km_pvalue(state: &KmAuditState) -> Result<f64> {
    if state.total_ballots == 0 || state.margin_m > state.total_ballots {
        return Err(Error::InvalidArgument(format!(
            "margin {} over {} ballots",
            state.margin_m, state.total_ballots
        )));
    }
    if state.discrepancies.len() as u64 > state.n_inspected {
        return Err(Error::InvalidArgument(
            "more discrepancies than inspected ballots".into(),
        ));
    }
    if !(state.risk_limit > 0.0 && state.risk_limit <= 1.0) {
        return Err(Error::InvalidArgument("risk limit must lie in (0, 1]".into()));
    }
    let mu = state.margin_m as f64 / state.total_ballots as f64;
    if mu == 0.0 {
        return Ok(1.0);
    }
    let mut log_p = state.n_inspected as f64 * (-mu).ln_1p();
    for d in &state.discrepancies {
        if !(0.0..=2.0).contains(&d.overstatement) || !(0.0..=1.0).contains(&d.effect_weight) {
            return Err(Error::InvalidArgument("discrepancy effect out of range".into()));
        }
        if d.overstatement >= 2.0 {
            return Ok(1.0);
        }
        log_p -= (-d.overstatement / 2.0).ln_1p();
    }
    Ok(log_p.exp().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballot::{lettered_candidates, ElectionRecord, Profile};
    use crate::stv::{count_with, CountRules};
    use num_rational::Ratio;
    use proptest::prelude::*;

    type Q = Ratio<i128>;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cdf_edges() {
        assert_eq!(binom_cdf(3, 3, 0.4), 1.0);
        assert_eq!(binom_cdf(0, 5, 0.0), 1.0);
        assert_eq!(binom_cdf(0, 5, 1.0), 0.0);
        assert!(close(binom_cdf(0, 5, 0.5), 1.0 / 32.0, 1e-15));
        assert!(close(binom_cdf(2, 4, 0.5), 11.0 / 16.0, 1e-15));
        assert!(close(binom_sf(2, 4, 0.5), 11.0 / 16.0, 1e-15));
    }

    #[test]
    fn zero_error_upper_bound_closed_form() {
        for &(n, c) in &[(1000u64, 0.99f64), (500, 0.99), (20, 0.9)] {
            let b = binom_upper_bound(0, n, c).unwrap();
            assert!(close(b, 1.0 - (1.0 - c).powf(1.0 / n as f64), 1e-12));
        }
    }

    #[test]
    fn all_errors_lower_bound_closed_form() {
        // P(X >= n) = p^n, so the bound solves p^n = 1 - c.
        let b = binom_lower_bound(10, 10, 0.95).unwrap();
        assert!(close(b, 0.05f64.powf(0.1), 1e-10));
    }

    #[test]
    fn trivial_bounds() {
        assert_eq!(binom_lower_bound(0, 40, 0.95).unwrap(), 0.0);
        assert_eq!(binom_upper_bound(40, 40, 0.95).unwrap(), 1.0);
        assert!(binom_upper_bound(5, 4, 0.95).is_err());
        assert!(binom_upper_bound(1, 4, 1.0).is_err());
    }

    #[test]
    fn f32_bounds_track_f64() {
        let a = binom_upper_bound(1, 200, 0.95f32).unwrap() as f64;
        let b = binom_upper_bound(1, 200, 0.95f64).unwrap();
        assert!(close(a, b, 1e-5));
    }

    #[test]
    fn estimate_brackets_point_estimate() {
        let e = ErrorRateEstimate::new(3, 2500, 339_159, 0.95).unwrap();
        assert!(e.p_lower <= 3.0 / 2500.0 && 3.0 / 2500.0 <= e.p_upper);
        let empty = ErrorRateEstimate::new(0, 0, 10, 0.95).unwrap();
        assert_eq!((empty.p_lower, empty.p_upper), (0.0, 1.0));
        assert!(ErrorRateEstimate::new(0, 11, 10, 0.95).is_err());
    }

    #[test]
    fn negative_audit_trivial_cases() {
        let none = ErrorRateEstimate::new(0, 2500, 339_159, 0.95).unwrap();
        assert_eq!(negative_audit_decision(&none, 71), NegativeDecision::Inconclusive);
        let some = ErrorRateEstimate::new(30, 100, 1000, 0.95).unwrap();
        assert_eq!(negative_audit_decision(&some, 1000), NegativeDecision::Inconclusive);
        assert_eq!(
            negative_audit_decision(&some, 10),
            NegativeDecision::ErrorRateExceedsMarginBound
        );
    }

    #[test]
    fn measured_risk() {
        assert_eq!(measured_risk_zero_errors(0, 0.3).unwrap(), 1.0);
        assert!(close(measured_risk_zero_errors(3, 0.5).unwrap(), 0.125, 1e-15));
        assert!(measured_risk_zero_errors(3, 0.0).is_err());
    }

    #[test]
    fn km_sample_is_smallest_attaining() {
        for &(m, a) in &[(0.0004, 0.05), (0.0002, 0.05), (0.0002, 0.01), (0.01, 0.1)] {
            let n = km_initial_sample(m, a).unwrap();
            let p = |n: u64| (n as f64 * (-m as f64).ln_1p()).exp();
            assert!(p(n) <= a && p(n - 1) > a);
        }
        assert_eq!(km_initial_sample(0.01, 1.0).unwrap(), 0);
        assert!(km_initial_sample(0.0, 0.05).is_err());
    }

    fn state(m: u64, n: u64, inspected: u64, overs: &[f64]) -> KmAuditState {
        let mut s = KmAuditState::new(m, n, 0.05).unwrap();
        s.n_inspected = inspected;
        s.discrepancies = overs
            .iter()
            .enumerate()
            .map(|(i, &o)| DiscrepancyRecord {
                ballot_index: i as u64,
                reported: Ballot::from_indices(&[0]),
                actual: Some(Ballot::from_indices(&[1])),
                classification: Classification::LoserAppears,
                effect_weight: o.min(1.0),
                overstatement: o,
            })
            .collect();
        s.p_value = km_pvalue(&s).unwrap();
        s
    }

    #[test]
    fn km_error_free_planning_attains() {
        let n = km_initial_sample(0.0004, 0.05).unwrap();
        assert!(state(4, 10_000, n, &[]).attained());
        assert!(!state(4, 10_000, n - 1, &[]).attained());
    }

    #[test]
    fn km_discrepancy_raises_p() {
        let clean = state(40, 100_000, 5000, &[]).p_value;
        let one = state(40, 100_000, 5000, &[1.0]).p_value;
        assert!(one > clean);
        assert!(close(one, clean * 2.0, 1e-12));
        assert_eq!(state(40, 100_000, 5000, &[2.0]).p_value, 1.0);
    }

    #[test]
    fn km_rejects_inconsistent_state() {
        let mut s = state(4, 100, 1, &[]);
        s.n_inspected = 0;
        s.discrepancies = state(4, 100, 1, &[1.0]).discrepancies;
        assert!(km_pvalue(&s).is_err());
        s.discrepancies.clear();
        s.margin_m = 101;
        assert!(km_pvalue(&s).is_err());
    }

    #[test]
    fn inspect_updates_p() {
        let mut s = KmAuditState::new(10, 1000, 0.05).unwrap();
        let p1 = s.inspect(None).unwrap();
        let p2 = s.inspect(None).unwrap();
        assert!(p2 < p1 && p1 < 1.0);
    }

    /// A>C 12, B 7, C 1, D 1: A seated on quota 8 with transfer value 1/3,
    /// D then C excluded, B seated; B and C are the last pair.
    fn golden() -> CountResult<Q> {
        let p = Profile::from_counts(
            lettered_candidates(4),
            &[(&[0, 2], 12), (&[1], 7), (&[2], 1), (&[3], 1)],
        )
        .unwrap();
        let r = ElectionRecord::new(p, 2, None).unwrap();
        count_with::<Q>(&r, &CountRules::default()).unwrap()
    }

    fn classify(reported: &[usize], actual: Option<&[usize]>, c: &CountResult<Q>) -> (Classification, f64, f64) {
        let rec = DiscrepancyRecord::new(0, Ballot::from_indices(reported), actual.map(Ballot::from_indices), c).unwrap();
        (rec.classification, rec.effect_weight, rec.overstatement)
    }

    #[test]
    fn golden_pair() {
        let c = golden();
        let pair = c.last_round_pair.as_ref().unwrap();
        assert_eq!((pair.winner, pair.loser), (CandidateId(1), CandidateId(2)));
    }

    #[test]
    fn classification_table() {
        let c = golden();
        let (a, b, cc, d) = (0usize, 1usize, 2usize, 3usize);
        assert_eq!(classify(&[d], Some(&[d]), &c), (Classification::NoDiscrepancy, 0.0, 0.0));
        // l appears first where the record never mentions it.
        assert_eq!(classify(&[d], Some(&[cc]), &c), (Classification::LoserAppears, 1.0, 1.0));
        // w disappears from the top.
        assert_eq!(classify(&[b], Some(&[d]), &c), (Classification::WinnerDisappears, 1.0, 1.0));
        // Both at once: a two-vote overstatement.
        assert_eq!(classify(&[b], Some(&[cc]), &c).2, 2.0);
        // Helping the reported outcome counts for nothing.
        assert_eq!(classify(&[cc], Some(&[b]), &c), (Classification::NoEffect, 0.0, 0.0));
        // Below A, whose transfer value is 1/3: weight (1/3)/(4/3) = 1/4.
        let (class, w, _) = classify(&[a], Some(&[a, cc]), &c);
        assert_eq!(class, Classification::LoserAppearsBelowSeated);
        assert!(close(w, 0.25, 1e-15));
        // Moving a paper onto A's pile only.
        let (class, w, _) = classify(&[d], Some(&[a, d]), &c);
        assert_eq!(class, Classification::SeatedPileChanged);
        assert!(close(w, 1.0 / 8.0, 1e-15));
        // Informal paper that the record had for w.
        assert_eq!(classify(&[b], None, &c).0, Classification::WinnerDisappears);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn bounds_bracket_and_order(n in 1u64..300, kf in 0.0f64..1.0, c in 0.5f64..0.999) {
            let k = ((n as f64) * kf) as u64;
            let lo = binom_lower_bound(k, n, c).unwrap();
            let hi = binom_upper_bound(k, n, c).unwrap();
            let phat = k as f64 / n as f64;
            prop_assert!(lo <= phat + 1e-12 && phat <= hi + 1e-12);
            prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }

        #[test]
        fn km_monotone(extra in 0u64..1000, o in 0.0f64..1.9, bump in 0.0f64..0.09) {
            let base = state(20, 100_000, 1000, &[o]);
            let more = state(20, 100_000, 1000 + extra, &[o]);
            prop_assert!(more.p_value <= base.p_value);
            let worse = state(20, 100_000, 1000, &[o + bump]);
            prop_assert!(worse.p_value >= base.p_value);
        }
    }
}
