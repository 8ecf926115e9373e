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

//! Upper bounds on the number of altered ballots needed to change an STV
//! outcome.
//!
//! For every winner `w` who was seated without a quota and every exclusion
//! round `i`, papers are taken off `w`'s pile (and, when that is not enough,
//! off the piles of candidates polling above `w`) and redirected to the
//! lowest-polling continuing candidates until `w` trails everyone by at
//! least one vote. The altered profile is always re-counted; only plans that
//! really change the winner set are reported. The number of papers is found
//! by binary search against that re-count.

use crate::ballot::{Ballot, BallotLine, CandidateId, ElectionRecord, Profile};
use crate::error::{Error, Result};
use crate::num::Weight;
use crate::stv::{count_with, CountRules, RoundEvent, Tabulation};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Any preference may change, including first preferences.
    #[default]
    AnyChange,
    /// First preferences are fixed; only later preferences move.
    FixedFirstPrefs,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct SearchOptions {
    pub variant: Variant,
    /// Never alter lines expanded from group (above-the-line) votes.
    pub atl_immutable: bool,
}

/// Smallest `m` such that taking `m` votes from `w` and handing at most `m`
/// to the others leaves every other continuing candidate at least one vote
/// above `w`, with tallies rounded up. Returns `m` and the additions per
/// candidate.
///
/// `m` is zero when `w` would already be excluded at this round, i.e. it has
/// the lowest tally and the tie-break falls on it.
pub fn min_shift_at_round<W: Weight>(
    tallies: &BTreeMap<CandidateId, W>,
    w: CandidateId,
) -> Result<(u64, BTreeMap<CandidateId, u64>)> {
    let tw = tallies
        .get(&w)
        .ok_or_else(|| Error::InvalidArgument(format!("candidate {w} is not continuing")))?;
    if tallies.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two continuing candidates".into(),
        ));
    }
    let lowest = tallies
        .iter()
        .reduce(|a, b| if b.1 < a.1 { b } else { a })
        .map(|(c, _)| *c);
    if lowest == Some(w) {
        return Ok((0, BTreeMap::new()));
    }
    let deltas = |m: u64| -> BTreeMap<CandidateId, u64> {
        tallies
            .iter()
            .filter(|(c, _)| **c != w)
            .filter_map(|(c, tc)| {
                let d = (tw.ceil_count() + 1).saturating_sub(m + tc.ceil_count());
                (d > 0).then_some((*c, d))
            })
            .collect()
    };
    let feasible = |m: u64| deltas(m).values().sum::<u64>() <= m;
    let (mut lo, mut hi) = (1u64, tw.ceil_count() + 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok((lo, deltas(lo)))
}

/// A block of identical papers redirected from `owner` to `recipient`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Shift {
    /// Index of the ballot line in the reported profile.
    pub line: usize,
    pub owner: CandidateId,
    pub recipient: CandidateId,
    pub count: u64,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ShiftPlan {
    pub target_winner: CandidateId,
    /// Exclusion round the plan aims at.
    pub round: usize,
    /// Papers taken, in donor order.
    pub shifts: Vec<Shift>,
    /// Papers added per recipient.
    pub additions: BTreeMap<CandidateId, u64>,
    /// Paper ballots altered.
    pub m: u64,
    /// Closed-form count from the round's tallies alone, for comparison.
    pub closed_form_m: u64,
}

impl ShiftPlan {
    fn new(
        target_winner: CandidateId,
        round: usize,
        shifts: Vec<Shift>,
        closed_form_m: u64,
    ) -> Self {
        let mut additions = BTreeMap::new();
        for s in &shifts {
            *additions.entry(s.recipient).or_insert(0) += s.count;
        }
        let m = shifts.iter().map(|s| s.count).sum();
        ShiftPlan {
            target_winner,
            round,
            shifts,
            additions,
            m,
            closed_form_m,
        }
    }

    /// Papers removed per owner.
    pub fn removals(&self) -> BTreeMap<CandidateId, u64> {
        let mut out = BTreeMap::new();
        for s in &self.shifts {
            *out.entry(s.owner).or_insert(0) += s.count;
        }
        out
    }
}

/// One kind of ballot alteration: `count` papers reading `before` now read `after`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BallotChange {
    pub before: Ballot,
    #[serde(default)]
    pub before_atl: bool,
    pub after: Ballot,
    pub count: u64,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MarginBound {
    pub plan: ShiftPlan,
    pub alternate_outcome: Vec<CandidateId>,
    pub verified: bool,
    pub bound_x: u64,
    pub diff: Vec<BallotChange>,
    /// Set by [`refine_low_tally`]: whether a third refinement pass would
    /// have lowered the bound further.
    #[serde(default)]
    pub third_pass_would_improve: Option<bool>,
}

/// Serialized form of a bound.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MarginBoundJson {
    pub target_winner: CandidateId,
    pub round: usize,
    pub m: u64,
    pub alternate_winners: Vec<CandidateId>,
    pub verified: bool,
    pub diff: Vec<BallotChange>,
}

impl From<&MarginBound> for MarginBoundJson {
    fn from(b: &MarginBound) -> Self {
        MarginBoundJson {
            target_winner: b.plan.target_winner,
            round: b.plan.round,
            m: b.bound_x,
            alternate_winners: b.alternate_outcome.clone(),
            verified: b.verified,
            diff: b.diff.clone(),
        }
    }
}

/// Applies ballot changes to a profile. Fails if a change takes more papers
/// than the profile holds.
pub fn apply_diff(profile: &Profile, diff: &[BallotChange]) -> Result<Profile> {
    let mut counts: HashMap<(Ballot, bool), u64> = profile
        .lines()
        .iter()
        .map(|l| ((l.ballot.clone(), l.atl), l.multiplicity))
        .collect();
    let mut added = Vec::new();
    for change in diff {
        let have = counts
            .get_mut(&(change.before.clone(), change.before_atl))
            .filter(|c| **c >= change.count)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "diff removes {} papers of {} which the profile does not hold",
                    change.count, change.before
                ))
            })?;
        *have -= change.count;
        added.push(BallotLine::new(change.after.clone(), change.count));
    }
    let lines = counts
        .into_iter()
        .filter(|(_, m)| *m > 0)
        .map(|((ballot, atl), multiplicity)| BallotLine {
            ballot,
            multiplicity,
            atl,
        })
        .chain(added.into_iter().filter(|l| l.multiplicity > 0))
        .collect();
    Profile::new(profile.candidates().to_vec(), lines)
}

fn diff_of(profile: &Profile, shifts: &[Shift]) -> Vec<BallotChange> {
    let mut merged: BTreeMap<(Ballot, bool, Ballot), u64> = BTreeMap::new();
    for s in shifts {
        let line = &profile.lines()[s.line];
        let after = line.ballot.substitute(s.owner, s.recipient);
        *merged
            .entry((line.ballot.clone(), line.atl, after))
            .or_insert(0) += s.count;
    }
    merged
        .into_iter()
        .map(|((before, before_atl, after), count)| BallotChange {
            before,
            before_atl,
            after,
            count,
        })
        .collect()
}

#[derive(Clone, Debug)]
struct Donor<W> {
    line: usize,
    owner: CandidateId,
    weight: W,
    count: u64,
}

/// Everything needed to build plans for one `(w, round)` pair.
struct RoundContext<W> {
    w: CandidateId,
    round: usize,
    tallies: BTreeMap<CandidateId, W>,
    donors: Vec<Donor<W>>,
    closed_form_m: u64,
}

impl<W: Weight> RoundContext<W> {
    fn donor_papers(&self) -> u64 {
        self.donors.iter().map(|d| d.count).sum()
    }

    /// Redirects exactly `m` papers (or all donors, if fewer), recipients
    /// chosen lowest tally first among those still not one vote clear of `w`.
    fn plan(&self, m: u64) -> Vec<Shift> {
        let mut t = self.tallies.clone();
        let mut left = m;
        let mut shifts: Vec<Shift> = Vec::new();
        'donors: for d in &self.donors {
            for _ in 0..d.count {
                if left == 0 {
                    break 'donors;
                }
                let Some(r) = self.pick_recipient(&t, d.owner) else {
                    continue 'donors;
                };
                let owner_t = t.get_mut(&d.owner).expect("owner continuing");
                *owner_t = owner_t.clone() - d.weight.clone();
                let rt = t.get_mut(&r).expect("recipient continuing");
                *rt = rt.clone() + d.weight.clone();
                match shifts.last_mut() {
                    Some(s) if s.line == d.line && s.recipient == r => s.count += 1,
                    _ => shifts.push(Shift {
                        line: d.line,
                        owner: d.owner,
                        recipient: r,
                        count: 1,
                    }),
                }
                left -= 1;
            }
        }
        shifts
    }

    fn pick_recipient(&self, t: &BTreeMap<CandidateId, W>, owner: CandidateId) -> Option<CandidateId> {
        let tw = t[&self.w].clone();
        let eligible = || t.iter().filter(|(c, _)| **c != self.w && **c != owner);
        let lowest = |it: &mut dyn Iterator<Item = (&CandidateId, &W)>| {
            it.reduce(|a, b| if b.1 < a.1 { b } else { a }).map(|(c, _)| *c)
        };
        let mut needy = eligible().filter(|(_, tc)| **tc < tw.clone() + W::one());
        lowest(&mut needy).or_else(|| lowest(&mut eligible()))
    }
}

fn reported_set<W: Weight>(record: &ElectionRecord) -> Result<Vec<CandidateId>> {
    let mut r = crate::bayes::reported_winners::<W>(record)?;
    r.sort();
    Ok(r)
}

/// Recounts a candidate plan; `Some(winners)` when the outcome changes.
fn verify<W: Weight>(
    record: &ElectionRecord,
    reported: &[CandidateId],
    shifts: &[Shift],
) -> Option<(Vec<CandidateId>, Vec<BallotChange>)> {
    if shifts.is_empty() {
        return None;
    }
    let diff = diff_of(&record.profile, shifts);
    let altered = apply_diff(&record.profile, &diff).ok()?;
    let winners = crate::stv::winner_set::<W>(&altered, record.seats).ok()?;
    (winners != reported).then_some((winners, diff))
}

fn contexts<W: Weight>(
    record: &ElectionRecord,
    options: &SearchOptions,
) -> Result<Vec<RoundContext<W>>> {
    let result = count_with::<W>(record, &CountRules::default())?;
    let mut out = Vec::new();
    for &w in &result.uneliminated_winners {
        let mut tab = Tabulation::<W>::new(record, &CountRules::default())?;
        for round in &result.rounds {
            if round.event == RoundEvent::Eliminate && round.tallies.contains_key(&w) {
                while tab.next_round() < round.round {
                    tab.step();
                }
                let closed_form_m = min_shift_at_round(&round.tallies, w)?.0;
                out.push(RoundContext {
                    w,
                    round: round.round,
                    tallies: round.tallies.clone(),
                    donors: donors(&tab, w, options),
                    closed_form_m,
                });
            }
        }
    }
    Ok(out)
}

fn donors<W: Weight>(tab: &Tabulation<'_, W>, w: CandidateId, options: &SearchOptions) -> Vec<Donor<W>> {
    let lines = tab.profile().lines();
    let eligible = |owner: CandidateId, line: usize| {
        let l = &lines[line];
        if options.atl_immutable && l.atl {
            return false;
        }
        match options.variant {
            Variant::AnyChange => true,
            Variant::FixedFirstPrefs => l.ballot.first() != Some(owner),
        }
    };
    let pile_donors = |owner: CandidateId| -> Vec<Donor<W>> {
        let mut ds: Vec<Donor<W>> = tab
            .pile(owner)
            .iter()
            .filter(|p| eligible(owner, p.line))
            .map(|p| Donor {
                line: p.line,
                owner,
                weight: p.weight.clone(),
                count: lines[p.line].multiplicity,
            })
            .collect();
        // First preferences (weight one) lead, then heavier papers.
        ds.sort_by(|a, b| {
            let first = |d: &Donor<W>| lines[d.line].ballot.first() == Some(d.owner);
            first(b)
                .cmp(&first(a))
                .then(b.weight.partial_cmp(&a.weight).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.line.cmp(&b.line))
        });
        ds
    };
    let mut out = pile_donors(w);
    let tw = tab.tally(w).clone();
    let mut higher: Vec<CandidateId> = tab
        .continuing()
        .into_iter()
        .filter(|&c| c != w && *tab.tally(c) > tw)
        .collect();
    higher.sort_by(|a, b| {
        tab.tally(*b)
            .partial_cmp(tab.tally(*a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    for h in higher {
        out.extend(pile_donors(h));
    }
    out
}

/// Smallest verified plan size for one context, if any.
fn search_context<W: Weight>(
    record: &ElectionRecord,
    reported: &[CandidateId],
    ctx: &RoundContext<W>,
) -> Option<MarginBound> {
    let total = ctx.donor_papers();
    if total == 0 {
        return None;
    }
    let ok = |m: u64| verify::<W>(record, reported, &ctx.plan(m));
    // Gallop upward from the closed-form estimate to a verified size...
    let mut hi = ctx.closed_form_m.clamp(1, total);
    let mut step = 1;
    while ok(hi).is_none() {
        if hi == total {
            return None;
        }
        hi = (hi + step).min(total);
        step *= 2;
    }
    // ...then binary search below it, keeping the smallest size that verifies.
    let (mut lo, mut best) = (1u64, hi);
    let mut top = hi - 1;
    while lo <= top {
        let mid = lo + (top - lo) / 2;
        if ok(mid).is_some() {
            best = mid;
            if mid == 0 {
                break;
            }
            top = mid - 1;
        } else {
            lo = mid + 1;
        }
    }
    let shifts = ctx.plan(best);
    let (winners, diff) = verify::<W>(record, reported, &shifts)?;
    let plan = ShiftPlan::new(ctx.w, ctx.round, shifts, ctx.closed_form_m);
    Some(MarginBound {
        bound_x: plan.m,
        plan,
        alternate_outcome: winners,
        verified: true,
        diff,
        third_pass_would_improve: None,
    })
}

/// The plan of exactly the closed-form size for `w` at exclusion round
/// `round`, without searching for a smaller one. `None` when it does not
/// change the outcome.
pub fn closed_form_bound<W: Weight>(
    record: &ElectionRecord,
    w: CandidateId,
    round: usize,
    options: &SearchOptions,
) -> Result<Option<MarginBound>> {
    let reported = reported_set::<W>(record)?;
    let ctx = contexts::<W>(record, options)?
        .into_iter()
        .find(|c| c.w == w && c.round == round)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("{w} is not an uneliminated winner continuing at exclusion round {round}"))
        })?;
    let shifts = ctx.plan(ctx.closed_form_m);
    Ok(verify::<W>(record, &reported, &shifts).map(|(winners, diff)| {
        let plan = ShiftPlan::new(ctx.w, ctx.round, shifts, ctx.closed_form_m);
        MarginBound {
            bound_x: plan.m,
            plan,
            alternate_outcome: winners,
            verified: true,
            diff,
            third_pass_would_improve: None,
        }
    }))
}

/// All verified bounds, sorted by size, then target winner, then round.
pub fn find_bounds<W: Weight>(
    record: &ElectionRecord,
    options: &SearchOptions,
) -> Result<Vec<MarginBound>> {
    let reported = reported_set::<W>(record)?;
    let ctxs = contexts::<W>(record, options)?;
    let mut bounds: Vec<MarginBound> = ctxs
        .par_iter()
        .filter_map(|ctx| search_context::<W>(record, &reported, ctx))
        .collect();
    bounds.sort_by_key(|b| (b.bound_x, b.plan.target_winner, b.plan.round));
    Ok(bounds)
}

/// Lowers a verified bound by trimming what each recipient receives, two
/// passes over all recipients, keeping only trims that still change the
/// outcome.
pub fn refine_low_tally<W: Weight>(bound: &MarginBound, record: &ElectionRecord) -> Result<MarginBound> {
    if !bound.verified {
        return Err(Error::InvalidArgument("only verified bounds can be refined".into()));
    }
    let reported = reported_set::<W>(record)?;
    let mut shifts = bound.plan.shifts.clone();
    for _ in 0..2 {
        refine_pass::<W>(record, &reported, &mut shifts);
    }
    let mut probe = shifts.clone();
    let third = refine_pass::<W>(record, &reported, &mut probe);
    let (winners, diff) = verify::<W>(record, &reported, &shifts).ok_or_else(|| {
        Error::InvalidArgument("bound does not verify against this record".into())
    })?;
    let plan = ShiftPlan::new(
        bound.plan.target_winner,
        bound.plan.round,
        shifts,
        bound.plan.closed_form_m,
    );
    Ok(MarginBound {
        bound_x: plan.m,
        plan,
        alternate_outcome: winners,
        verified: true,
        diff,
        third_pass_would_improve: Some(third),
    })
}

/// One pass over recipients; returns whether anything was trimmed.
fn refine_pass<W: Weight>(
    record: &ElectionRecord,
    reported: &[CandidateId],
    shifts: &mut Vec<Shift>,
) -> bool {
    let mut recipients: Vec<CandidateId> = Vec::new();
    for s in shifts.iter() {
        if !recipients.contains(&s.recipient) {
            recipients.push(s.recipient);
        }
    }
    let mut improved = false;
    for l in recipients {
        let received: u64 = shifts.iter().filter(|s| s.recipient == l).map(|s| s.count).sum();
        let keep = |r: u64| truncate_recipient(shifts, l, r);
        let (mut lo, mut hi) = (0u64, received);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if verify::<W>(record, reported, &keep(mid)).is_some() {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if lo < received && verify::<W>(record, reported, &keep(lo)).is_some() {
            *shifts = keep(lo);
            improved = true;
        }
    }
    improved
}

/// Keeps only the first `r` papers sent to `l`.
fn truncate_recipient(shifts: &[Shift], l: CandidateId, r: u64) -> Vec<Shift> {
    let mut left = r;
    shifts
        .iter()
        .filter_map(|s| {
            if s.recipient != l {
                return Some(s.clone());
            }
            let take = s.count.min(left);
            left -= take;
            (take > 0).then(|| Shift {
                count: take,
                ..s.clone()
            })
        })
        .collect()
}

/// Result of the exhaustive search.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BruteForceMargin {
    /// Fewest altered ballots that change the winner set.
    Exact(u64),
    GreaterThanCap(u64),
    /// The evaluation budget ran out; no alteration of fewer than
    /// `checked_below` ballots changes the outcome.
    Incomplete { checked_below: u64 },
}

pub const BRUTE_FORCE_MAX_CANDIDATES: usize = 6;
pub const BRUTE_FORCE_MAX_BALLOTS: u64 = 40;
pub const BRUTE_FORCE_MAX_CAP: u64 = 6;

/// Exact minimum number of altered ballots, by exhaustive search over every
/// way of rewriting up to `cap` papers as any formal ballot.
pub fn brute_force_margin<W: Weight>(record: &ElectionRecord, cap: u64) -> Result<BruteForceMargin> {
    brute_force_margin_with_budget::<W>(record, cap, u64::MAX)
}

/// As [`brute_force_margin`], giving up after `budget` recounts.
pub fn brute_force_margin_with_budget<W: Weight>(
    record: &ElectionRecord,
    cap: u64,
    budget: u64,
) -> Result<BruteForceMargin> {
    let profile = &record.profile;
    let n = profile.num_candidates();
    if n > BRUTE_FORCE_MAX_CANDIDATES || profile.total() > BRUTE_FORCE_MAX_BALLOTS || cap > BRUTE_FORCE_MAX_CAP {
        return Err(Error::TooLarge(format!(
            "{n} candidates, {} ballots, cap {cap}",
            profile.total()
        )));
    }
    let reported = reported_set::<W>(record)?;
    if crate::stv::winner_set::<W>(profile, record.seats)? != reported {
        return Ok(BruteForceMargin::Exact(0));
    }
    let all_types = all_ballots(n);
    let type_index: HashMap<&Ballot, usize> =
        all_types.iter().enumerate().map(|(i, b)| (b, i)).collect();
    let mut base = vec![0u64; all_types.len()];
    for line in profile.lines() {
        base[type_index[&line.ballot]] += line.multiplicity;
    }
    let present: Vec<usize> = (0..base.len()).filter(|&i| base[i] > 0).collect();
    let mut search = Exhaustive::<W> {
        types: &all_types,
        candidates: profile.candidates(),
        seats: record.seats,
        reported: &reported,
        budget,
        spent: 0,
        _w: std::marker::PhantomData,
    };
    for m in 1..=cap {
        match search.level(&base, &present, m) {
            Some(true) => return Ok(BruteForceMargin::Exact(m)),
            Some(false) => {}
            None => return Ok(BruteForceMargin::Incomplete { checked_below: m }),
        }
    }
    Ok(BruteForceMargin::GreaterThanCap(cap))
}

/// Every formal ballot over `n` candidates.
fn all_ballots(n: usize) -> Vec<Ballot> {
    fn extend(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Ballot>) {
        for c in 0..n {
            if !prefix.contains(&c) {
                prefix.push(c);
                out.push(Ballot::from_indices(prefix));
                extend(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), n, &mut out);
    out
}

struct Exhaustive<'a, W> {
    types: &'a [Ballot],
    candidates: &'a [crate::ballot::Candidate],
    seats: usize,
    reported: &'a [CandidateId],
    budget: u64,
    spent: u64,
    _w: std::marker::PhantomData<W>,
}

impl<W: Weight> Exhaustive<'_, W> {
    /// `Some(true)` if some alteration of exactly `m` papers changes the
    /// outcome, `None` if the budget ran out.
    fn level(&mut self, base: &[u64], present: &[usize], m: u64) -> Option<bool> {
        let mut removals = Vec::new();
        let mut counts = base.to_vec();
        self.removals(&mut counts, present, 0, m, &mut removals)
    }

    fn removals(
        &mut self,
        counts: &mut Vec<u64>,
        present: &[usize],
        from: usize,
        left: u64,
        removed: &mut Vec<usize>,
    ) -> Option<bool> {
        if left == 0 {
            let m = removed.len() as u64;
            return self.additions(counts, 0, m, removed);
        }
        for k in from..present.len() {
            let t = present[k];
            if counts[t] == 0 {
                continue;
            }
            counts[t] -= 1;
            removed.push(t);
            let r = self.removals(counts, present, k, left - 1, removed);
            removed.pop();
            counts[t] += 1;
            if r != Some(false) {
                return r;
            }
        }
        Some(false)
    }

    fn additions(&mut self, counts: &mut Vec<u64>, from: usize, left: u64, removed: &[usize]) -> Option<bool> {
        if left == 0 {
            if self.spent >= self.budget {
                return None;
            }
            self.spent += 1;
            return Some(self.changes_outcome(counts));
        }
        for t in from..self.types.len() {
            // Re-adding a removed type is a smaller alteration, already covered.
            if removed.contains(&t) {
                continue;
            }
            counts[t] += 1;
            let r = self.additions(counts, t, left - 1, removed);
            counts[t] -= 1;
            if r != Some(false) {
                return r;
            }
        }
        Some(false)
    }

    fn changes_outcome(&self, counts: &[u64]) -> bool {
        let lines = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, c)| BallotLine::new(self.types[i].clone(), *c))
            .collect();
        let profile = Profile::new(self.candidates.to_vec(), lines).expect("formal types");
        crate::stv::winner_set::<W>(&profile, self.seats).expect("valid seats") != self.reported
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballot::lettered_candidates;
    use num_rational::Ratio;

    type Q = Ratio<i128>;

    fn tallies(pairs: &[(u32, i128)]) -> BTreeMap<CandidateId, Q> {
        pairs.iter().map(|&(c, t)| (CandidateId(c), Q::from_integer(t))).collect()
    }

    /// Direct scan of m = 0, 1, 2, ... with the optimal allocation for each m.
    fn scan_min_shift(t: &BTreeMap<CandidateId, Q>, w: CandidateId) -> u64 {
        let tw = t[&w];
        for m in 0..=(tw.to_integer() as u64 + 1) {
            let mi = m as i128;
            let need: i128 = t
                .iter()
                .filter(|(c, _)| **c != w)
                .map(|(c, tc)| {
                    let gap = tw - Q::from_integer(mi) - tc;
                    // c must end strictly above w; at m = 0 a tie counts if c wins it.
                    if m == 0 {
                        let excluded_already = gap < Q::from_integer(0) || (gap == Q::from_integer(0) && w < *c);
                        if excluded_already { 0 } else { i128::MAX / 16 }
                    } else {
                        (tw.ceil() - Q::from_integer(mi) + Q::from_integer(1) - tc.ceil())
                            .to_integer()
                            .max(0)
                    }
                })
                .sum();
            if need <= mi {
                return m;
            }
        }
        unreachable!()
    }

    #[test]
    fn closed_form_example() {
        let t = tallies(&[(0, 100), (1, 40), (2, 90)]);
        let (m, d) = min_shift_at_round(&t, CandidateId(0)).unwrap();
        assert_eq!(m, 31);
        assert_eq!(d, BTreeMap::from([(CandidateId(1), 30)]));
        assert_eq!(scan_min_shift(&t, CandidateId(0)), 31);
    }

    #[test]
    fn closed_form_ties() {
        // w = 0 loses the tie-break against 1: already excluded.
        let t = tallies(&[(0, 5), (1, 5)]);
        assert_eq!(min_shift_at_round(&t, CandidateId(0)).unwrap().0, 0);
        assert_eq!(scan_min_shift(&t, CandidateId(0)), 0);
        // w = 1 wins the tie-break: one vote.
        assert_eq!(min_shift_at_round(&t, CandidateId(1)).unwrap().0, 1);
        assert_eq!(scan_min_shift(&t, CandidateId(1)), 1);
    }

    #[test]
    fn closed_form_errors() {
        let t = tallies(&[(0, 5)]);
        assert!(min_shift_at_round(&t, CandidateId(0)).is_err());
        assert!(min_shift_at_round(&tallies(&[(0, 5), (1, 4)]), CandidateId(3)).is_err());
    }

    #[test]
    fn closed_form_matches_scan_on_grid() {
        for a in 1..25i128 {
            for b in 0..25i128 {
                for c in 0..25i128 {
                    let t = tallies(&[(0, a), (1, b), (2, c)]);
                    for w in 0..3u32 {
                        assert_eq!(
                            min_shift_at_round(&t, CandidateId(w)).unwrap().0,
                            scan_min_shift(&t, CandidateId(w)),
                            "{t:?} w={w}"
                        );
                    }
                }
            }
        }
    }

    fn record(c: usize, seats: usize, counts: &[(&[usize], u64)]) -> ElectionRecord {
        ElectionRecord::new(Profile::from_counts(lettered_candidates(c), counts).unwrap(), seats, None).unwrap()
    }

    #[test]
    fn no_uneliminated_winners_gives_no_bounds() {
        let r = record(3, 1, &[(&[0], 10), (&[1], 3), (&[2], 2)]);
        assert!(find_bounds::<Q>(&r, &SearchOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn apply_diff_rejects_overdraw() {
        let r = record(2, 1, &[(&[0], 1), (&[1], 2)]);
        let diff = vec![BallotChange {
            before: Ballot::from_indices(&[0]),
            before_atl: false,
            after: Ballot::from_indices(&[1]),
            count: 2,
        }];
        assert!(apply_diff(&r.profile, &diff).is_err());
    }

    #[test]
    fn plurality_like_difference_two() {
        // A 5, B 3, C 2 with C exhausting: A beats B by 2 at the end.
        let r = record(3, 1, &[(&[0], 5), (&[1], 3), (&[2], 2)]);
        let res = count_with::<Q>(&r, &CountRules::default()).unwrap();
        assert_eq!(res.last_round_pair.as_ref().unwrap().difference, Q::from_integer(2));
        assert_eq!(brute_force_margin::<Q>(&r, 3).unwrap(), BruteForceMargin::Exact(1));
    }

    #[test]
    fn brute_force_cap_and_size_limits() {
        let r = record(2, 1, &[(&[0], 9), (&[1], 1)]);
        assert_eq!(brute_force_margin::<Q>(&r, 2).unwrap(), BruteForceMargin::GreaterThanCap(2));
        assert!(brute_force_margin::<Q>(&r, 7).is_err());
        let big = record(2, 1, &[(&[0], 30), (&[1], 11)]);
        assert!(brute_force_margin::<Q>(&big, 2).is_err());
    }

    #[test]
    fn all_ballot_enumeration_counts() {
        assert_eq!(all_ballots(3).len(), 15);
        assert_eq!(all_ballots(4).len(), 64);
    }

    /// A>D 12, B 9, C 5, D 2 for two seats: A is seated on quota 10, D and
    /// then C are excluded, and B takes the last seat 4 votes ahead of C.
    fn b_leads_c_by_four() -> ElectionRecord {
        record(4, 2, &[(&[0, 3], 12), (&[1], 9), (&[2], 5), (&[3], 2)])
    }

    #[test]
    fn b_leading_by_four_bound() {
        let r = b_leads_c_by_four();
        let res = count_with::<Q>(&r, &CountRules::default()).unwrap();
        assert_eq!(res.uneliminated_winners, vec![CandidateId(1)]);
        let pair = res.last_round_pair.unwrap();
        assert_eq!((pair.winner, pair.loser), (CandidateId(1), CandidateId(2)));
        assert_eq!(pair.difference, Q::from_integer(4));
        let bounds = find_bounds::<Q>(&r, &SearchOptions::default()).unwrap();
        let best = &bounds[0];
        assert!(best.verified && best.bound_x <= 3);
        assert!(best.alternate_outcome.contains(&CandidateId(2)));
        assert_eq!(brute_force_margin::<Q>(&r, 4).unwrap(), BruteForceMargin::Exact(2));
        assert!(bounds.windows(2).all(|w| w[0].bound_x <= w[1].bound_x));
    }

    /// A 12, B 10, C>A 4, C 5, D>B 3 for one seat: D then C are excluded,
    /// and A survives B with C's help. The closed form at round 1 sends five
    /// of A's papers to D; three already do it, since A then ties C at
    /// round 2 and loses the tie-break.
    fn refinable() -> ElectionRecord {
        record(4, 1, &[(&[0], 12), (&[1], 10), (&[2, 0], 4), (&[2], 5), (&[3, 1], 3)])
    }

    #[test]
    fn refinement_saves_two() {
        let r = refinable();
        let res = count_with::<Q>(&r, &CountRules::default()).unwrap();
        assert_eq!(res.winners, vec![CandidateId(0)]);
        assert_eq!(res.uneliminated_winners, vec![CandidateId(0)]);
        let opts = SearchOptions::default();
        let original = closed_form_bound::<Q>(&r, CandidateId(0), 1, &opts).unwrap().unwrap();
        assert_eq!(original.bound_x, 5);
        assert_eq!(original.plan.additions, BTreeMap::from([(CandidateId(3), 5)]));
        let refined = refine_low_tally::<Q>(&original, &r).unwrap();
        assert_eq!(refined.bound_x, original.bound_x - 2);
        assert_eq!(refined.third_pass_would_improve, Some(false));
        // Every shorter truncation keeps the reported winner.
        let reported = vec![CandidateId(0)];
        for keep in 0..3 {
            let shifts = truncate_recipient(&original.plan.shifts, CandidateId(3), keep);
            assert!(verify::<Q>(&r, &reported, &shifts).is_none(), "{keep}");
        }
    }

    #[test]
    fn minimal_bound_survives_refinement() {
        let r = refinable();
        let best = find_bounds::<Q>(&r, &SearchOptions::default()).unwrap().remove(0);
        let refined = refine_low_tally::<Q>(&best, &r).unwrap();
        assert_eq!(refined.bound_x, best.bound_x);
        assert_eq!(refined.diff, best.diff);
    }

    #[test]
    fn fixed_first_preferences_are_kept() {
        let r = record(
            4,
            1,
            &[(&[0], 8), (&[1, 0], 5), (&[1], 2), (&[2, 0], 3), (&[2], 4), (&[3, 1], 3)],
        );
        let opts = SearchOptions {
            variant: Variant::FixedFirstPrefs,
            ..SearchOptions::default()
        };
        for b in find_bounds::<Q>(&r, &opts).unwrap() {
            for change in &b.diff {
                assert_eq!(change.before.first(), change.after.first(), "{change:?}");
            }
            let altered = apply_diff(&r.profile, &b.diff).unwrap();
            let w = crate::stv::winner_set::<Q>(&altered, 1).unwrap();
            assert_eq!(w, b.alternate_outcome);
        }
    }

    #[test]
    fn atl_lines_can_be_frozen() {
        let p = Profile::new(
            lettered_candidates(3),
            vec![
                BallotLine { ballot: Ballot::from_indices(&[0]), multiplicity: 6, atl: true },
                BallotLine::new(Ballot::from_indices(&[1]), 5),
                BallotLine::new(Ballot::from_indices(&[2]), 2),
            ],
        )
        .unwrap();
        let r = ElectionRecord::new(p, 1, None).unwrap();
        let free = find_bounds::<Q>(&r, &SearchOptions::default()).unwrap();
        assert!(!free.is_empty());
        let frozen = SearchOptions { atl_immutable: true, ..SearchOptions::default() };
        // A's whole pile is group votes, so nothing may be taken from it.
        assert!(find_bounds::<Q>(&r, &frozen).unwrap().is_empty());
    }

    #[test]
    fn json_diff_reproduces_profile() {
        let r = b_leads_c_by_four();
        let b = find_bounds::<Q>(&r, &SearchOptions::default()).unwrap().remove(0);
        let json = serde_json::to_string(&MarginBoundJson::from(&b)).unwrap();
        let back: MarginBoundJson = serde_json::from_str(&json).unwrap();
        assert_eq!(back.m, b.bound_x);
        let altered = apply_diff(&r.profile, &back.diff).unwrap();
        assert_eq!(altered, apply_diff(&r.profile, &b.diff).unwrap());
        let changed: u64 = back.diff.iter().map(|c| c.count).sum();
        assert_eq!(changed, back.m);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let r = b_leads_c_by_four();
        assert_eq!(
            brute_force_margin_with_budget::<Q>(&r, 4, 10).unwrap(),
            BruteForceMargin::Incomplete { checked_below: 1 }
        );
    }
}
