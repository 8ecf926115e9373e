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

//! Single Transferable Vote tabulation.
//!
//! Rules: Droop quota, one event per round (seat or eliminate a single
//! candidate), surplus distributed by the inclusive last-value method (every
//! ballot paper held by the seated candidate moves on at surplus / papers),
//! eliminated candidates' papers move on at the weight they arrived with, and
//! ties are resolved in favour of choosing the lowest candidate id as the
//! round's subject. When the number of continuing candidates falls to the
//! number of open seats they are seated one per round, highest tally first.

use crate::ballot::{CandidateId, ElectionRecord, Profile};
use crate::error::{Error, Result};
use crate::num::{ratio, Weight};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quota {
    #[default]
    Droop,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurplusMethod {
    #[default]
    InclusiveLastValue,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LexicographicCandidateId,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    #[default]
    ExactRational,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct CountRules {
    pub quota: Quota,
    pub surplus_method: SurplusMethod,
    pub tie_break: TieBreak,
    pub arithmetic: Arithmetic,
}

pub fn droop_quota(total_formal: u64, seats: usize) -> u64 {
    total_formal / (seats as u64 + 1) + 1
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundEvent {
    Elect,
    Eliminate,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Continuing,
    /// Seated; `by_quota` is false for candidates left standing at the end.
    Elected { round: usize, by_quota: bool },
    Eliminated { round: usize },
}

/// State at the start of a round and the event that round produced.
#[derive(Clone, PartialEq, Debug)]
pub struct RoundTally<W> {
    pub round: usize,
    /// Tallies of the continuing candidates before the event.
    pub tallies: BTreeMap<CandidateId, W>,
    pub exhausted: W,
    /// Weight kept by candidates seated in earlier rounds.
    pub retained: W,
    pub event: RoundEvent,
    pub subject: CandidateId,
    /// Value at which the subject's papers moved on: surplus / papers for a
    /// quota election, 1 for an exclusion (papers keep their weights), 0
    /// when nothing moved.
    pub transfer_value: W,
    pub reached_quota: bool,
}

impl<W: Weight> RoundTally<W> {
    pub fn tally(&self, c: CandidateId) -> Option<&W> {
        self.tallies.get(&c)
    }

    /// Sum of continuing tallies, exhausted and retained weight.
    pub fn accounted(&self) -> W {
        self.tallies
            .values()
            .cloned()
            .fold(self.exhausted.clone() + self.retained.clone(), |a, b| a + b)
    }
}

/// The two contenders for the final seat and their tally gap.
#[derive(Clone, PartialEq, Debug)]
pub struct LastRoundPair<W> {
    pub winner: CandidateId,
    pub loser: CandidateId,
    pub round: usize,
    pub difference: W,
}

#[derive(Clone, PartialEq, Debug)]
pub struct CountResult<W> {
    pub quota: u64,
    pub rounds: Vec<RoundTally<W>>,
    /// Winners in seating order.
    pub winners: Vec<CandidateId>,
    /// Winners seated without reaching the quota.
    pub uneliminated_winners: Vec<CandidateId>,
    /// Excluded candidates in order; candidates still standing when the
    /// last seat filled are appended lowest tally first.
    pub eliminated: Vec<CandidateId>,
    pub last_round_pair: Option<LastRoundPair<W>>,
    /// Final status of every candidate.
    pub status: Vec<Status>,
}

impl<W: Weight> CountResult<W> {
    pub fn winner_set(&self) -> Vec<CandidateId> {
        let mut w = self.winners.clone();
        w.sort();
        w
    }

    pub fn is_winner(&self, c: CandidateId) -> bool {
        self.winners.contains(&c)
    }

    /// Transfer value used when `c` was seated by quota, if any.
    pub fn seat_transfer_value(&self, c: CandidateId) -> Option<&W> {
        self.rounds
            .iter()
            .find(|r| r.event == RoundEvent::Elect && r.subject == c && r.reached_quota)
            .map(|r| &r.transfer_value)
    }

    pub fn last_round_margin(&self) -> Option<LastRoundMargin> {
        self.last_round_pair
            .as_ref()
            .map(|p| LastRoundMargin::from_difference(p.difference.ceil_count()))
    }
}

/// The final-seat gap expressed both as a vote difference and as the number
/// of ballots whose flip would close it.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct LastRoundMargin {
    pub difference: u64,
    pub ballots_to_flip: u64,
}

impl LastRoundMargin {
    pub fn from_difference(difference: u64) -> Self {
        LastRoundMargin {
            difference,
            ballots_to_flip: difference.div_ceil(2),
        }
    }
}

/// Papers from one ballot line sitting on a pile at a common weight.
#[derive(Clone, PartialEq, Debug)]
pub struct Parcel<W> {
    pub line: usize,
    pub weight: W,
}

/// Step-by-step tabulation, exposing piles between rounds.
pub struct Tabulation<'a, W> {
    profile: &'a Profile,
    seats: usize,
    quota: u64,
    quota_w: W,
    status: Vec<Status>,
    piles: Vec<Vec<Parcel<W>>>,
    tallies: Vec<W>,
    /// Position in each line's preferences of its current holder.
    positions: Vec<usize>,
    exhausted: W,
    retained: W,
    rounds: Vec<RoundTally<W>>,
    winners: Vec<CandidateId>,
    eliminated: Vec<CandidateId>,
    done: bool,
}

impl<'a, W: Weight> Tabulation<'a, W> {
    pub fn new(record: &'a ElectionRecord, _rules: &CountRules) -> Result<Self> {
        record.validate()?;
        Ok(Self::start(&record.profile, record.seats))
    }

    fn start(profile: &'a Profile, seats: usize) -> Self {
        let n = profile.num_candidates();
        let quota = droop_quota(profile.total(), seats);
        let mut piles: Vec<Vec<Parcel<W>>> = vec![Vec::new(); n];
        let mut tallies = vec![W::zero(); n];
        for (i, line) in profile.lines().iter().enumerate() {
            let c = line.ballot.prefs()[0].index();
            piles[c].push(Parcel {
                line: i,
                weight: W::one(),
            });
            tallies[c] = tallies[c].clone() + W::from_count(line.multiplicity);
        }
        Tabulation {
            profile,
            seats,
            quota,
            quota_w: W::from_count(quota),
            status: vec![Status::Continuing; n],
            piles,
            tallies,
            positions: vec![0; profile.lines().len()],
            exhausted: W::zero(),
            retained: W::zero(),
            rounds: Vec::new(),
            winners: Vec::new(),
            eliminated: Vec::new(),
            done: false,
        }
    }

    pub fn quota(&self) -> u64 {
        self.quota
    }

    pub fn profile(&self) -> &Profile {
        self.profile
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Number of the next round to run (1-based).
    pub fn next_round(&self) -> usize {
        self.rounds.len() + 1
    }

    pub fn status(&self, c: CandidateId) -> Status {
        self.status[c.index()]
    }

    pub fn is_continuing(&self, c: CandidateId) -> bool {
        self.status[c.index()] == Status::Continuing
    }

    pub fn tally(&self, c: CandidateId) -> &W {
        &self.tallies[c.index()]
    }

    pub fn pile(&self, c: CandidateId) -> &[Parcel<W>] {
        &self.piles[c.index()]
    }

    pub fn continuing(&self) -> Vec<CandidateId> {
        (0..self.status.len())
            .map(CandidateId::from)
            .filter(|&c| self.is_continuing(c))
            .collect()
    }

    pub fn rounds(&self) -> &[RoundTally<W>] {
        &self.rounds
    }

    /// Runs one round. Returns `false` once the count has finished.
    pub fn step(&mut self) -> bool {
        if self.done {
            return false;
        }
        let seats_left = self.seats - self.winners.len();
        let continuing = self.continuing();
        if seats_left == 0 || continuing.is_empty() {
            self.close(continuing);
            return false;
        }
        let round = self.next_round();
        let snapshot = |t: &Self| -> BTreeMap<CandidateId, W> {
            continuing
                .iter()
                .map(|&c| (c, t.tallies[c.index()].clone()))
                .collect()
        };
        let tallies = snapshot(self);
        let (exhausted, retained) = (self.exhausted.clone(), self.retained.clone());

        // Highest tally, lowest id among ties.
        let top = continuing
            .iter()
            .copied()
            .reduce(|a, b| if self.tallies[b.index()] > self.tallies[a.index()] { b } else { a })
            .expect("non-empty");
        let (event, subject, transfer_value, reached_quota) =
            if self.tallies[top.index()] >= self.quota_w {
                let tv = self.seat_with_quota(top, round, seats_left > 1);
                (RoundEvent::Elect, top, tv, true)
            } else if continuing.len() <= seats_left {
                self.status[top.index()] = Status::Elected {
                    round,
                    by_quota: false,
                };
                self.winners.push(top);
                self.retained = self.retained.clone() + self.tallies[top.index()].clone();
                (RoundEvent::Elect, top, W::zero(), false)
            } else {
                let bottom = continuing
                    .iter()
                    .copied()
                    .reduce(|a, b| if self.tallies[b.index()] < self.tallies[a.index()] { b } else { a })
                    .expect("non-empty");
                self.status[bottom.index()] = Status::Eliminated { round };
                self.eliminated.push(bottom);
                let pile = std::mem::take(&mut self.piles[bottom.index()]);
                self.tallies[bottom.index()] = W::zero();
                for parcel in pile {
                    self.forward(parcel);
                }
                (RoundEvent::Eliminate, bottom, W::one(), false)
            };
        self.rounds.push(RoundTally {
            round,
            tallies,
            exhausted,
            retained,
            event,
            subject,
            transfer_value,
            reached_quota,
        });
        true
    }

    fn seat_with_quota(&mut self, c: CandidateId, round: usize, transfer: bool) -> W {
        self.status[c.index()] = Status::Elected {
            round,
            by_quota: true,
        };
        self.winners.push(c);
        let tally = std::mem::replace(&mut self.tallies[c.index()], W::zero());
        let surplus = tally.clone() - self.quota_w.clone();
        if !transfer || surplus <= W::zero() {
            self.retained = self.retained.clone() + tally;
            return W::zero();
        }
        self.retained = self.retained.clone() + self.quota_w.clone();
        let pile = std::mem::take(&mut self.piles[c.index()]);
        let papers: u64 = pile
            .iter()
            .map(|p| self.profile.lines()[p.line].multiplicity)
            .sum();
        let tv = ratio(surplus, papers);
        for parcel in pile {
            self.forward(Parcel {
                line: parcel.line,
                weight: tv.clone(),
            });
        }
        tv
    }

    /// Moves a parcel to its next continuing preference, or exhausts it.
    fn forward(&mut self, parcel: Parcel<W>) {
        let line = &self.profile.lines()[parcel.line];
        let prefs = line.ballot.prefs();
        let amount = parcel.weight.mul_count(line.multiplicity);
        let mut pos = self.positions[parcel.line] + 1;
        while pos < prefs.len() && !self.is_continuing(prefs[pos]) {
            pos += 1;
        }
        self.positions[parcel.line] = pos;
        if pos < prefs.len() {
            let c = prefs[pos].index();
            self.tallies[c] = self.tallies[c].clone() + amount;
            self.piles[c].push(parcel);
        } else {
            self.exhausted = self.exhausted.clone() + amount;
        }
    }

    fn close(&mut self, mut leftover: Vec<CandidateId>) {
        leftover.sort_by(|a, b| {
            self.tallies[a.index()]
                .partial_cmp(&self.tallies[b.index()])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        });
        let round = self.next_round();
        for c in leftover {
            self.status[c.index()] = Status::Eliminated { round };
            self.eliminated.push(c);
        }
        self.done = true;
    }

    pub fn run(mut self) -> CountResult<W> {
        while self.step() {}
        self.finish()
    }

    fn finish(self) -> CountResult<W> {
        let uneliminated_winners = self
            .winners
            .iter()
            .copied()
            .filter(|c| matches!(self.status[c.index()], Status::Elected { by_quota: false, .. }))
            .collect();
        let last_round_pair = last_round_pair(&self.rounds, &self.winners);
        CountResult {
            quota: self.quota,
            rounds: self.rounds,
            winners: self.winners,
            uneliminated_winners,
            eliminated: self.eliminated,
            last_round_pair,
            status: self.status,
        }
    }
}

fn last_round_pair<W: Weight>(
    rounds: &[RoundTally<W>],
    winners: &[CandidateId],
) -> Option<LastRoundPair<W>> {
    let last_elect = rounds.iter().rev().find(|r| r.event == RoundEvent::Elect)?;
    let (round, winner, loser) = if last_elect.reached_quota {
        // Strongest continuing non-winner at the round the final seat filled.
        let loser = last_elect
            .tallies
            .iter()
            .filter(|(c, _)| **c != last_elect.subject)
            .fold(None::<(&CandidateId, &W)>, |best, (c, t)| match best {
                Some((_, bt)) if bt >= t => best,
                _ => Some((c, t)),
            })?
            .0;
        (last_elect, last_elect.subject, *loser)
    } else {
        // Weakest surviving winner against the last exclusion.
        let elim = rounds.iter().rev().find(|r| r.event == RoundEvent::Eliminate)?;
        let winner = elim
            .tallies
            .iter()
            .filter(|(c, _)| **c != elim.subject && winners.contains(c))
            .fold(None::<(&CandidateId, &W)>, |best, (c, t)| match best {
                Some((_, bt)) if bt <= t => best,
                _ => Some((c, t)),
            })?
            .0;
        (elim, *winner, elim.subject)
    };
    let difference = round.tallies[&winner].clone() - round.tallies[&loser].clone();
    Some(LastRoundPair {
        winner,
        loser,
        round: round.round,
        difference,
    })
}

/// Tabulates `record` with weights of type `W`.
pub fn count_with<W: Weight>(record: &ElectionRecord, rules: &CountRules) -> Result<CountResult<W>> {
    Ok(Tabulation::<W>::new(record, rules)?.run())
}

/// Tabulates a profile without building an [`ElectionRecord`]. Seats must
/// be below the number of candidates.
pub fn count_profile<W: Weight>(profile: &Profile, seats: usize) -> Result<CountResult<W>> {
    if seats == 0 || seats >= profile.num_candidates() {
        return Err(Error::InvalidRecord(format!(
            "need 1 <= seats < candidates, got {seats}"
        )));
    }
    Ok(Tabulation::<W>::start(profile, seats).run())
}

/// Just the sorted winner set.
pub fn winner_set<W: Weight>(profile: &Profile, seats: usize) -> Result<Vec<CandidateId>> {
    count_profile::<W>(profile, seats).map(|r| r.winner_set())
}

/// JSON event log form of a count.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CountLog {
    pub quota: u64,
    pub winners: Vec<CandidateId>,
    pub uneliminated_winners: Vec<CandidateId>,
    pub eliminated: Vec<CandidateId>,
    pub last_round: Option<LastRoundLog>,
    pub rounds: Vec<RoundLog>,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: String,
    pub denominator: String,
}

impl Fraction {
    pub fn of<W: Weight>(w: &W) -> Self {
        let (numerator, denominator) = w.fraction_parts();
        Fraction {
            numerator,
            denominator,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub event: RoundEvent,
    pub subject: CandidateId,
    pub reached_quota: bool,
    pub transfer_value: Fraction,
    pub tallies: BTreeMap<CandidateId, Fraction>,
    pub exhausted: Fraction,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct LastRoundLog {
    pub winner: CandidateId,
    pub loser: CandidateId,
    pub round: usize,
    pub difference: Fraction,
    pub margin: LastRoundMargin,
}

impl<W: Weight> From<&CountResult<W>> for CountLog {
    fn from(r: &CountResult<W>) -> Self {
        CountLog {
            quota: r.quota,
            winners: r.winners.clone(),
            uneliminated_winners: r.uneliminated_winners.clone(),
            eliminated: r.eliminated.clone(),
            last_round: r.last_round_pair.as_ref().map(|p| LastRoundLog {
                winner: p.winner,
                loser: p.loser,
                round: p.round,
                difference: Fraction::of(&p.difference),
                margin: LastRoundMargin::from_difference(p.difference.ceil_count()),
            }),
            rounds: r
                .rounds
                .iter()
                .map(|t| RoundLog {
                    round: t.round,
                    event: t.event,
                    subject: t.subject,
                    reached_quota: t.reached_quota,
                    transfer_value: Fraction::of(&t.transfer_value),
                    tallies: t.tallies.iter().map(|(c, w)| (*c, Fraction::of(w))).collect(),
                    exhausted: Fraction::of(&t.exhausted),
                })
                .collect(),
        }
    }
}
