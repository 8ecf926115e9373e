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

//! Shared test oracles: a paper-by-paper STV count written independently of
//! the library's parcel-based engine, random instance generators, and an
//! explicit Polya urn.

#![allow(dead_code)]

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;
use stv_audit::ballot::lettered_candidates;
use stv_audit::{Ballot, BallotLine, CandidateId, ElectionRecord, Profile};

pub type Q = Ratio<i128>;

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveRound {
    pub tallies: BTreeMap<usize, Q>,
    pub exhausted: Q,
    pub retained: Q,
    /// `true` for a seat, `false` for an exclusion.
    pub elect: bool,
    pub subject: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveResult {
    pub winners: Vec<usize>,
    pub eliminated: Vec<usize>,
    pub rounds: Vec<NaiveRound>,
}

struct Paper<'a> {
    prefs: &'a [usize],
    weight: Q,
    /// Set once the paper is kept by a seated candidate.
    frozen: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    Hopeful,
    Seated,
    Out,
}

/// Counts one paper at a time. A live paper always sits with the first
/// hopeful candidate on it; this is equivalent to moving papers on at each
/// transfer because a candidate never becomes hopeful again.
pub fn naive_count(candidates: usize, seats: usize, ballots: &[Vec<usize>]) -> NaiveResult {
    let total = ballots.len() as i128;
    let quota = Q::from_integer(total / (seats as i128 + 1) + 1);
    let mut papers: Vec<Paper> = ballots
        .iter()
        .map(|b| Paper {
            prefs: b,
            weight: Q::from_integer(1),
            frozen: false,
        })
        .collect();
    let mut state = vec![State::Hopeful; candidates];
    let mut retained = Q::from_integer(0);
    let mut out = NaiveResult {
        winners: Vec::new(),
        eliminated: Vec::new(),
        rounds: Vec::new(),
    };
    let holder = |p: &Paper, state: &[State]| p.prefs.iter().copied().find(|&c| state[c] == State::Hopeful);
    loop {
        let hopeful: Vec<usize> = (0..candidates).filter(|&c| state[c] == State::Hopeful).collect();
        let left = seats - out.winners.len();
        let mut tallies: BTreeMap<usize, Q> = hopeful.iter().map(|&c| (c, Q::from_integer(0))).collect();
        let mut exhausted = Q::from_integer(0);
        for p in papers.iter().filter(|p| !p.frozen) {
            match holder(p, &state) {
                Some(c) => *tallies.get_mut(&c).unwrap() += p.weight,
                None => exhausted += p.weight,
            }
        }
        if left == 0 || hopeful.is_empty() {
            let mut rest = hopeful.clone();
            rest.sort_by(|a, b| tallies[a].cmp(&tallies[b]).then(a.cmp(b)));
            out.eliminated.extend(rest);
            return out;
        }
        let mut best = hopeful[0];
        for &c in &hopeful {
            if tallies[&c] > tallies[&best] {
                best = c;
            }
        }
        let mut worst = hopeful[0];
        for &c in &hopeful {
            if tallies[&c] < tallies[&worst] {
                worst = c;
            }
        }
        let round = NaiveRound {
            tallies: tallies.clone(),
            exhausted,
            retained,
            elect: true,
            subject: best,
        };
        if tallies[&best] >= quota {
            let mine: Vec<usize> = (0..papers.len())
                .filter(|&i| !papers[i].frozen && holder(&papers[i], &state) == Some(best))
                .collect();
            state[best] = State::Seated;
            out.winners.push(best);
            let surplus = tallies[&best] - quota;
            if left > 1 && surplus > Q::from_integer(0) {
                retained += quota;
                let tv = surplus / Q::from_integer(mine.len() as i128);
                for i in mine {
                    papers[i].weight = tv;
                }
            } else {
                retained += tallies[&best];
                for i in mine {
                    papers[i].frozen = true;
                }
            }
            out.rounds.push(round);
        } else if hopeful.len() <= left {
            for p in papers.iter_mut() {
                if !p.frozen && holder(p, &state) == Some(best) {
                    p.frozen = true;
                }
            }
            state[best] = State::Seated;
            out.winners.push(best);
            retained += tallies[&best];
            out.rounds.push(round);
        } else {
            state[worst] = State::Out;
            out.eliminated.push(worst);
            out.rounds.push(NaiveRound {
                elect: false,
                subject: worst,
                ..round
            });
        }
    }
}

/// Expands a profile to one preference list per paper.
pub fn papers_of(profile: &Profile) -> Vec<Vec<usize>> {
    profile
        .lines()
        .iter()
        .flat_map(|l| {
            let prefs: Vec<usize> = l.ballot.prefs().iter().map(|c| c.index()).collect();
            std::iter::repeat_n(prefs, l.multiplicity as usize)
        })
        .collect()
}

pub fn naive_winner_set(profile: &Profile, seats: usize) -> Vec<CandidateId> {
    let mut w: Vec<CandidateId> = naive_count(profile.num_candidates(), seats, &papers_of(profile))
        .winners
        .into_iter()
        .map(CandidateId::from)
        .collect();
    w.sort();
    w
}

pub fn random_ballot<R: Rng>(rng: &mut R, candidates: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates).collect();
    order.shuffle(rng);
    let len = rng.random_range(1..=candidates);
    order.truncate(len);
    order
}

/// A random election with a few popular ballot types so that surpluses,
/// ties and exhaustion all occur.
pub fn random_record<R: Rng>(
    rng: &mut R,
    candidates: std::ops::RangeInclusive<usize>,
    ballots: std::ops::RangeInclusive<usize>,
    max_seats: usize,
) -> ElectionRecord {
    let c = rng.random_range(candidates);
    let n = rng.random_range(ballots);
    let seats = rng.random_range(1..=max_seats.min(c - 1));
    let pool: Vec<Vec<usize>> = (0..rng.random_range(2..=8)).map(|_| random_ballot(rng, c)).collect();
    let lines: Vec<BallotLine> = (0..n)
        .map(|_| {
            let b = if rng.random_bool(0.7) {
                pool[rng.random_range(0..pool.len())].clone()
            } else {
                random_ballot(rng, c)
            };
            BallotLine::new(Ballot::from_indices(&b), 1)
        })
        .collect();
    let profile = Profile::new(lettered_candidates(c), lines).expect("formal ballots");
    ElectionRecord::new(profile, seats, None).expect("valid record")
}

/// Runs a Polya urn by hand: draw a ball, put it back with a copy, until
/// the urn holds `n_total` balls. Returns the final counts.
pub fn polya_urn<R: Rng>(rng: &mut R, counts: &[u64], n_total: u64) -> Vec<u64> {
    let mut c = counts.to_vec();
    let mut total: u64 = c.iter().sum();
    while total < n_total {
        let mut x = rng.random_range(0..total);
        for ci in c.iter_mut() {
            if x < *ci {
                *ci += 1;
                break;
            }
            x -= *ci;
        }
        total += 1;
    }
    c
}

/// Total-variation distance between two empirical distributions.
pub fn total_variation<K: Ord + Clone>(a: &[K], b: &[K]) -> f64 {
    let mut freq: BTreeMap<K, (f64, f64)> = BTreeMap::new();
    for k in a {
        freq.entry(k.clone()).or_default().0 += 1.0 / a.len() as f64;
    }
    for k in b {
        freq.entry(k.clone()).or_default().1 += 1.0 / b.len() as f64;
    }
    0.5 * freq.values().map(|(x, y)| (x - y).abs()).sum::<f64>()
}
