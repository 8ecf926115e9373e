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

//! Candidates, ballots, profiles and election records.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;

/// Dense 0-based candidate index.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(pub u32);

impl CandidateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for CandidateId {
    fn from(i: usize) -> Self {
        CandidateId(i as u32)
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CandidateId,
    pub name: String,
    /// Party or column label; `None` for ungrouped candidates.
    pub group: Option<String>,
}

impl Candidate {
    pub fn new(id: usize, name: impl Into<String>) -> Self {
        Candidate {
            id: CandidateId::from(id),
            name: name.into(),
            group: None,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

/// Candidates named `A`, `B`, ... for fixtures and synthetic data.
pub fn lettered_candidates(n: usize) -> Vec<Candidate> {
    (0..n)
        .map(|i| {
            let name = if i < 26 {
                char::from(b'A' + i as u8).to_string()
            } else {
                format!("C{i}")
            };
            Candidate::new(i, name)
        })
        .collect()
}

/// A preference list, first element = first preference. May be partial.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ballot(Vec<CandidateId>);

impl Ballot {
    /// Builds a formal ballot: non-empty and duplicate-free.
    pub fn new(prefs: Vec<CandidateId>) -> Result<Self> {
        let ballot = Ballot(prefs);
        if ballot.is_formal() {
            Ok(ballot)
        } else {
            Err(Error::InvalidBallot(format!("{ballot} is not formal")))
        }
    }

    /// Builds a ballot without checking formality.
    pub fn from_prefs(prefs: Vec<CandidateId>) -> Self {
        Ballot(prefs)
    }

    pub fn from_indices(prefs: &[usize]) -> Self {
        Ballot(prefs.iter().map(|&i| CandidateId::from(i)).collect())
    }

    pub fn prefs(&self) -> &[CandidateId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<CandidateId> {
        self.0.first().copied()
    }

    pub fn position(&self, candidate: CandidateId) -> Option<usize> {
        self.0.iter().position(|&c| c == candidate)
    }

    pub fn is_formal(&self) -> bool {
        if self.0.is_empty() {
            return false;
        }
        let mut seen = HashSet::with_capacity(self.0.len());
        self.0.iter().all(|c| seen.insert(*c))
    }

    /// Replaces `from` by `to`, dropping any later mention of `to`.
    pub fn substitute(&self, from: CandidateId, to: CandidateId) -> Ballot {
        let mut prefs = Vec::with_capacity(self.0.len());
        let mut placed = false;
        for &c in &self.0 {
            if c == from {
                if !placed {
                    prefs.push(to);
                    placed = true;
                }
            } else if c == to {
                if !placed {
                    prefs.push(to);
                    placed = true;
                }
            } else {
                prefs.push(c);
            }
        }
        Ballot(prefs)
    }
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(">")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("]")
    }
}

/// One distinct ballot with its multiplicity.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BallotLine {
    pub ballot: Ballot,
    pub multiplicity: u64,
    /// Set when the line was expanded from an above-the-line group vote.
    #[serde(default)]
    pub atl: bool,
}

impl BallotLine {
    pub fn new(ballot: Ballot, multiplicity: u64) -> Self {
        BallotLine {
            ballot,
            multiplicity,
            atl: false,
        }
    }
}

/// The multiset of formal ballots of an election, in canonical form: lines
/// are merged on identical preferences (and ATL flag) and sorted.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct Profile {
    candidates: Vec<Candidate>,
    lines: Vec<BallotLine>,
    total: u64,
    #[serde(skip)]
    offsets: Vec<u64>,
}

impl Profile {
    pub fn new(candidates: Vec<Candidate>, lines: Vec<BallotLine>) -> Result<Self> {
        validate_candidates(&candidates)?;
        let n = candidates.len();
        let mut merged: BTreeMap<(Ballot, bool), u64> = BTreeMap::new();
        for line in lines {
            if line.multiplicity == 0 {
                return Err(Error::InvalidProfile(format!(
                    "ballot {} has multiplicity zero",
                    line.ballot
                )));
            }
            if !line.ballot.is_formal() {
                return Err(Error::InvalidProfile(format!(
                    "ballot {} is not formal",
                    line.ballot
                )));
            }
            if let Some(c) = line.ballot.prefs().iter().find(|c| c.index() >= n) {
                return Err(Error::InvalidProfile(format!(
                    "ballot {} references unknown candidate {c}",
                    line.ballot
                )));
            }
            *merged.entry((line.ballot, line.atl)).or_insert(0) += line.multiplicity;
        }
        let lines: Vec<BallotLine> = merged
            .into_iter()
            .map(|((ballot, atl), multiplicity)| BallotLine {
                ballot,
                multiplicity,
                atl,
            })
            .collect();
        let mut offsets = Vec::with_capacity(lines.len());
        let mut total = 0u64;
        for line in &lines {
            offsets.push(total);
            total += line.multiplicity;
        }
        Ok(Profile {
            candidates,
            lines,
            total,
            offsets,
        })
    }

    /// Convenience constructor from `(preference indices, multiplicity)` pairs.
    pub fn from_counts(candidates: Vec<Candidate>, counts: &[(&[usize], u64)]) -> Result<Self> {
        let lines = counts
            .iter()
            .map(|(prefs, m)| BallotLine::new(Ballot::from_indices(prefs), *m))
            .collect();
        Profile::new(candidates, lines)
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn lines(&self) -> &[BallotLine] {
        &self.lines
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Index of the line holding the `index`-th ballot of the expanded file.
    pub fn line_of(&self, index: u64) -> Option<usize> {
        if index >= self.total {
            return None;
        }
        Some(self.offsets.partition_point(|&o| o <= index) - 1)
    }

    pub fn ballot_at(&self, index: u64) -> Option<&Ballot> {
        self.line_of(index).map(|i| &self.lines[i].ballot)
    }

    /// Looks a candidate up by exact name.
    pub fn candidate_by_name(&self, name: &str) -> Option<CandidateId> {
        self.candidates
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.id)
    }
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            candidates: Vec<Candidate>,
            lines: Vec<BallotLine>,
        }
        let raw = Raw::deserialize(d)?;
        Profile::new(raw.candidates, raw.lines).map_err(serde::de::Error::custom)
    }
}

fn validate_candidates(candidates: &[Candidate]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::InvalidProfile("no candidates".into()));
    }
    for (i, c) in candidates.iter().enumerate() {
        if c.id.index() != i {
            return Err(Error::InvalidProfile(format!(
                "candidate ids must be dense: position {i} holds id {}",
                c.id
            )));
        }
        let bad = |s: &str| s.contains(['|', '\n', '\r']);
        if c.name.is_empty() || bad(&c.name) || c.group.as_deref().is_some_and(bad) {
            return Err(Error::InvalidProfile(format!(
                "candidate {i} has an unrepresentable name or group"
            )));
        }
    }
    Ok(())
}

/// A profile plus the number of seats and, optionally, the announced winners.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ElectionRecord {
    pub profile: Profile,
    pub seats: usize,
    #[serde(default)]
    pub reported_outcome: Option<Vec<CandidateId>>,
}

impl ElectionRecord {
    pub fn new(
        profile: Profile,
        seats: usize,
        reported_outcome: Option<Vec<CandidateId>>,
    ) -> Result<Self> {
        let record = ElectionRecord {
            profile,
            seats,
            reported_outcome,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.profile.num_candidates();
        if self.seats == 0 || self.seats >= c {
            return Err(Error::InvalidRecord(format!(
                "need 1 <= seats < candidates, got {} seats for {c} candidates",
                self.seats
            )));
        }
        if let Some(reported) = &self.reported_outcome {
            if reported.len() != self.seats {
                return Err(Error::InvalidRecord(format!(
                    "{} reported winners for {} seats",
                    reported.len(),
                    self.seats
                )));
            }
            let distinct: HashSet<_> = reported.iter().collect();
            if distinct.len() != reported.len() || reported.iter().any(|w| w.index() >= c) {
                return Err(Error::InvalidRecord(
                    "reported winners must be distinct known candidates".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn with_profile(&self, profile: Profile) -> ElectionRecord {
        ElectionRecord {
            profile,
            seats: self.seats,
            reported_outcome: self.reported_outcome.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merging_preserves_total() {
        let p = Profile::from_counts(
            lettered_candidates(3),
            &[(&[1, 0, 2], 5), (&[0], 1), (&[1, 0, 2], 2)],
        )
        .unwrap();
        assert_eq!(p.lines().len(), 2);
        assert_eq!(p.total(), 8);
        assert_eq!(p.lines()[1].multiplicity, 7);
    }

    #[test]
    fn rejects_bad_ballots() {
        let c = lettered_candidates(3);
        assert!(Profile::from_counts(c.clone(), &[(&[0, 0], 1)]).is_err());
        assert!(Profile::from_counts(c.clone(), &[(&[], 1)]).is_err());
        assert!(Profile::from_counts(c.clone(), &[(&[3], 1)]).is_err());
        assert!(Profile::from_counts(c, &[(&[1], 0)]).is_err());
        assert!(Ballot::new(vec![]).is_err());
    }

    #[test]
    fn ballot_index_lookup() {
        let p = Profile::from_counts(lettered_candidates(2), &[(&[0], 2), (&[1], 3)]).unwrap();
        let firsts: Vec<_> = (0..5).map(|i| p.ballot_at(i).unwrap().first().unwrap().0).collect();
        assert_eq!(firsts, vec![0, 0, 1, 1, 1]);
        assert!(p.ballot_at(5).is_none());
    }

    #[test]
    fn substitute_drops_later_mention() {
        let b = Ballot::from_indices(&[2, 0, 3, 1]);
        assert_eq!(b.substitute(CandidateId(0), CandidateId(1)), Ballot::from_indices(&[2, 1, 3]));
        assert_eq!(b.substitute(CandidateId(2), CandidateId(3)), Ballot::from_indices(&[3, 0, 1]));
    }

    #[test]
    fn record_seat_bounds() {
        let p = Profile::from_counts(lettered_candidates(2), &[(&[0], 1)]).unwrap();
        assert!(ElectionRecord::new(p.clone(), 1, None).is_ok());
        assert!(ElectionRecord::new(p.clone(), 2, None).is_err());
        assert!(ElectionRecord::new(p.clone(), 0, None).is_err());
        assert!(ElectionRecord::new(p, 1, Some(vec![CandidateId(5)])).is_err());
    }
}
