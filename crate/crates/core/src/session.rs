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

//! Audit sessions as an append-only event log.
//!
//! A session is created from an election record and a seeded sample. Each
//! sampled paper is read blind: the operator never sees the recorded
//! ballot before their reading is stored. A reading that disagrees with the
//! record is flagged and must be entered again from the paper; only the
//! second reading settles it. Every state is a pure fold over the log, so
//! replaying a log reproduces the session and its statistics exactly.

use crate::ballot::{Ballot, ElectionRecord};
use crate::bayes::{bayes_audit, BayesReport, TrialConfig};
use crate::error::{Error, Result};
use crate::format::{canonical_string, parse_preference_file, FileFormat};
use crate::margin::{find_bounds, SearchOptions};
use crate::risk::{
    measured_risk_zero_errors, negative_audit_decision, DiscrepancyRecord, ErrorRateEstimate,
    KmAuditState, NegativeDecision,
};
use crate::rng::derive_seed;
use crate::sampler::{draw_sample, extend_sample, SampleDraw};
use crate::{Exact, ExactCountResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MethodConfig {
    pub bayes: bool,
    pub negative: bool,
    pub fixed: bool,
    pub conditional: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            bayes: true,
            negative: true,
            fixed: true,
            conditional: true,
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub methods: MethodConfig,
    pub trials: u64,
    /// Match fraction at which the Bayesian audit may stop.
    pub threshold: f64,
    /// Confidence of the error-rate bounds.
    pub confidence: f64,
    pub risk_limit: f64,
    /// Anticipated error rate for the fixed-size measured risk.
    pub anticipated_error_rate: f64,
    pub margin: SearchOptions,
    /// A verified bound supplied up front; searched for when absent.
    pub margin_bound: Option<u64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            methods: MethodConfig::default(),
            trials: 1000,
            threshold: 0.95,
            confidence: 0.95,
            risk_limit: 0.05,
            anticipated_error_rate: 0.0002,
            margin: SearchOptions::default(),
            margin_bound: None,
        }
    }
}

impl SessionConfig {
    fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if self.methods.bayes && self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be positive".into()));
        }
        if !(unit(self.threshold) || self.threshold == 1.0) {
            return Err(Error::InvalidArgument("threshold must lie in (0, 1]".into()));
        }
        if !unit(self.confidence) || !unit(self.risk_limit) || !unit(self.anticipated_error_rate) {
            return Err(Error::InvalidArgument(
                "confidence, risk limit and anticipated error rate must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// What an operator read off a paper.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reading {
    Informal,
    Ballot(Ballot),
}

impl Reading {
    /// Empty and repeated rankings are informal.
    pub fn normalized(self) -> Reading {
        match self {
            Reading::Ballot(b) if b.is_empty() || !b.is_formal() => Reading::Informal,
            r => r,
        }
    }

    pub fn ballot(&self) -> Option<&Ballot> {
        match self {
            Reading::Ballot(b) => Some(b),
            Reading::Informal => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Pending,
    /// First reading agreed with the record.
    Entered,
    /// First reading disagreed; waiting for re-entry.
    Flagged,
    Confirmed,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Entry {
    pub status: EntryStatus,
    pub first_entry: Option<Reading>,
    pub confirmed: Option<Reading>,
}

impl Entry {
    fn pending() -> Self {
        Entry {
            status: EntryStatus::Pending,
            first_entry: None,
            confirmed: None,
        }
    }

    /// The settled reading, once there is one.
    pub fn settled(&self) -> Option<&Reading> {
        match self.status {
            EntryStatus::Entered => self.first_entry.as_ref(),
            EntryStatus::Confirmed => self.confirmed.as_ref(),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Match,
    Discrepancy,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Locator {
    pub index: u64,
    pub label: String,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        /// The record in canonical form.
        record: String,
        config: SessionConfig,
        seed: u64,
        initial_size: u64,
        #[serde(default)]
        locators: Vec<Locator>,
    },
    Submitted {
        index: u64,
        reading: Reading,
    },
    /// Written when an entry settles; the first place the recorded ballot
    /// appears.
    Resolved {
        index: u64,
        outcome: Outcome,
        reported: Ballot,
        confirmed: Reading,
    },
    Extended {
        new_size: u64,
    },
}

/// One line of the log.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub event: Event,
}

pub fn write_log<W: Write>(log: &[LogEntry], out: &mut W) -> Result<()> {
    for entry in log {
        serde_json::to_writer(&mut *out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<LogEntry>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubmitResponse {
    Accepted,
    /// The reading differs from the record; enter it again from the paper.
    Flagged { message: String },
    Confirmed,
}

pub const REENTRY_MESSAGE: &str = "discrepancy - please re-enter from the paper";

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Task {
    Retrieve {
        index: u64,
        locator: Option<String>,
        reentry: bool,
    },
    Done,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    /// Readings are outstanding.
    Continue,
    /// Every enabled stopping rule is satisfied.
    Stop,
    Extend,
    FullRecount,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct NegativeSummary {
    pub bound_x: Option<u64>,
    pub decision: NegativeDecision,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct StatsSnapshot {
    /// Sequence number of the last event reflected.
    pub offset: u64,
    pub sample_size: u64,
    pub settled: u64,
    pub pending: u64,
    pub flagged: u64,
    pub error_rate: ErrorRateEstimate,
    pub bayes: Option<BayesReport>,
    pub negative: Option<NegativeSummary>,
    pub measured_risk: Option<f64>,
    pub km: Option<KmAuditState>,
    pub recommendation: Recommendation,
}

#[derive(Clone, Debug)]
pub struct Session {
    record: ElectionRecord,
    config: SessionConfig,
    seed: u64,
    draw: SampleDraw,
    locators: BTreeMap<u64, String>,
    entries: BTreeMap<u64, Entry>,
    log: Vec<LogEntry>,
    count: ExactCountResult,
    bound: Option<Option<u64>>,
    cache: Option<StatsSnapshot>,
}

impl Session {
    pub fn create(
        record: &ElectionRecord,
        config: SessionConfig,
        seed: u64,
        initial_size: u64,
        locators: Vec<Locator>,
    ) -> Result<Session> {
        let created = Event::Created {
            record: canonical_string(record),
            config,
            seed,
            initial_size,
            locators,
        };
        Session::replay(&[LogEntry {
            seq: 0,
            event: created,
        }])
    }

    /// Rebuilds a session from its log, checking every event.
    pub fn replay(log: &[LogEntry]) -> Result<Session> {
        let (first, rest) = log
            .split_first()
            .ok_or_else(|| Error::Session("empty log".into()))?;
        let Event::Created {
            record,
            config,
            seed,
            initial_size,
            locators,
        } = &first.event
        else {
            return Err(Error::Session("log must start with a created event".into()));
        };
        if first.seq != 0 {
            return Err(Error::Session("log must start at sequence 0".into()));
        }
        config.validate()?;
        let record =
            parse_preference_file(record.as_bytes(), FileFormat::CanonicalCsv)?.into_record(None)?;
        let draw = draw_sample(*seed, record.profile.total(), *initial_size)?;
        let count = crate::count(&record)?;
        let mut session = Session {
            entries: draw.indices().iter().map(|&i| (i, Entry::pending())).collect(),
            locators: locators.iter().map(|l| (l.index, l.label.clone())).collect(),
            record,
            config: config.clone(),
            seed: *seed,
            draw,
            log: vec![first.clone()],
            count,
            bound: None,
            cache: None,
        };
        let mut expected: Vec<Event> = Vec::new();
        for entry in rest {
            if entry.seq != session.log.len() as u64 {
                return Err(Error::Session(format!(
                    "expected sequence {}, found {}",
                    session.log.len(),
                    entry.seq
                )));
            }
            match &entry.event {
                Event::Resolved { .. } => {
                    if expected.first() != Some(&entry.event) {
                        return Err(Error::Session(format!(
                            "event {} does not match the replayed resolution",
                            entry.seq
                        )));
                    }
                    expected.remove(0);
                }
                event => {
                    if !expected.is_empty() {
                        return Err(Error::Session(format!("missing resolution before event {}", entry.seq)));
                    }
                    expected = session.apply(event)?;
                }
            }
            session.log.push(entry.clone());
        }
        if !expected.is_empty() {
            return Err(Error::Session("log ends before a resolution".into()));
        }
        Ok(session)
    }

    /// Applies one event; returns the resolutions it implies.
    fn apply(&mut self, event: &Event) -> Result<Vec<Event>> {
        match event {
            Event::Created { .. } => Err(Error::Session("duplicate created event".into())),
            Event::Resolved { .. } => Err(Error::Session("unexpected resolution".into())),
            Event::Extended { new_size } => {
                self.draw = extend_sample(&self.draw, *new_size)?;
                for &i in self.draw.indices() {
                    self.entries.entry(i).or_insert_with(Entry::pending);
                }
                Ok(Vec::new())
            }
            Event::Submitted { index, reading } => {
                let reading = reading.clone().normalized();
                if let Some(b) = reading.ballot() {
                    let n = self.record.profile.num_candidates();
                    if let Some(c) = b.prefs().iter().find(|c| c.index() >= n) {
                        return Err(Error::InvalidBallot(format!("unknown candidate {c}")));
                    }
                }
                let reported = self.reported(*index)?.clone();
                let entry = self
                    .entries
                    .get_mut(index)
                    .ok_or_else(|| Error::Session(format!("ballot {index} is not in the sample")))?;
                let matches = reading.ballot() == Some(&reported);
                match entry.status {
                    EntryStatus::Pending => {
                        entry.first_entry = Some(reading.clone());
                        if matches {
                            entry.status = EntryStatus::Entered;
                            Ok(vec![Event::Resolved {
                                index: *index,
                                outcome: Outcome::Match,
                                reported,
                                confirmed: reading,
                            }])
                        } else {
                            entry.status = EntryStatus::Flagged;
                            Ok(Vec::new())
                        }
                    }
                    EntryStatus::Flagged => {
                        entry.confirmed = Some(reading.clone());
                        entry.status = EntryStatus::Confirmed;
                        Ok(vec![Event::Resolved {
                            index: *index,
                            outcome: if matches { Outcome::Match } else { Outcome::Discrepancy },
                            reported,
                            confirmed: reading,
                        }])
                    }
                    EntryStatus::Entered | EntryStatus::Confirmed => Err(Error::Session(format!(
                        "ballot {index} is already settled"
                    ))),
                }
            }
        }
    }

    fn push(&mut self, event: Event) {
        let seq = self.log.len() as u64;
        self.log.push(LogEntry { seq, event });
    }

    fn reported(&self, index: u64) -> Result<&Ballot> {
        self.record
            .profile
            .ballot_at(index)
            .ok_or_else(|| Error::Session(format!("ballot {index} is outside the record")))
    }

    pub fn submit(&mut self, index: u64, reading: Reading) -> Result<SubmitResponse> {
        let event = Event::Submitted { index, reading };
        let resolutions = self.apply(&event)?;
        self.push(event);
        let status = self.entries[&index].status;
        for r in resolutions {
            self.push(r);
        }
        Ok(match status {
            EntryStatus::Entered => SubmitResponse::Accepted,
            EntryStatus::Flagged => SubmitResponse::Flagged {
                message: REENTRY_MESSAGE.to_owned(),
            },
            _ => SubmitResponse::Confirmed,
        })
    }

    pub fn extend(&mut self, new_size: u64) -> Result<&SampleDraw> {
        let event = Event::Extended { new_size };
        self.apply(&event)?;
        self.push(event);
        Ok(&self.draw)
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// The log with the record replaced by its SHA-256 digest, safe to show
    /// to operators: recorded ballots appear only in resolutions.
    pub fn public_log(&self) -> Vec<LogEntry> {
        self.log
            .iter()
            .map(|e| match &e.event {
                Event::Created {
                    record,
                    config,
                    seed,
                    initial_size,
                    locators,
                } => LogEntry {
                    seq: e.seq,
                    event: Event::Created {
                        record: format!("sha256:{}", sha256_hex(record.as_bytes())),
                        config: config.clone(),
                        seed: *seed,
                        initial_size: *initial_size,
                        locators: locators.clone(),
                    },
                },
                _ => e.clone(),
            })
            .collect()
    }

    pub fn record(&self) -> &ElectionRecord {
        &self.record
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draw(&self) -> &SampleDraw {
        &self.draw
    }

    pub fn entries(&self) -> &BTreeMap<u64, Entry> {
        &self.entries
    }

    pub fn offset(&self) -> u64 {
        self.log.len() as u64 - 1
    }

    /// Lowest-indexed entry still needing a reading.
    pub fn next_task(&self) -> Task {
        self.entries
            .iter()
            .find(|(_, e)| matches!(e.status, EntryStatus::Pending | EntryStatus::Flagged))
            .map_or(Task::Done, |(&index, e)| Task::Retrieve {
                index,
                locator: self.locators.get(&index).cloned(),
                reentry: e.status == EntryStatus::Flagged,
            })
    }

    /// Smallest verified margin bound, computed once.
    fn margin_bound(&mut self) -> Result<Option<u64>> {
        if let Some(b) = self.config.margin_bound {
            return Ok(Some(b));
        }
        if self.bound.is_none() {
            let bounds = find_bounds::<Exact>(&self.record, &self.config.margin)?;
            self.bound = Some(bounds.iter().find(|b| b.verified).map(|b| b.bound_x));
        }
        Ok(self.bound.expect("just set"))
    }

    /// Statistics over the settled entries, cached per log offset.
    pub fn stats(&mut self) -> Result<StatsSnapshot> {
        let offset = self.offset();
        if let Some(c) = self.cache.as_ref().filter(|c| c.offset == offset) {
            return Ok(c.clone());
        }
        let snapshot = self.compute_stats()?;
        self.cache = Some(snapshot.clone());
        Ok(snapshot)
    }

    fn compute_stats(&mut self) -> Result<StatsSnapshot> {
        let population = self.record.profile.total();
        let mut settled = Vec::new();
        let (mut pending, mut flagged) = (0, 0);
        for (&index, e) in &self.entries {
            match e.status {
                EntryStatus::Pending => pending += 1,
                EntryStatus::Flagged => flagged += 1,
                _ => settled.push((index, e.settled().expect("settled").clone())),
            }
        }
        let n = settled.len() as u64;
        let mut discrepancies = Vec::new();
        for (index, reading) in &settled {
            let reported = self.reported(*index)?;
            if reading.ballot() != Some(reported) {
                discrepancies.push(DiscrepancyRecord::new(
                    *index,
                    reported.clone(),
                    reading.ballot().cloned(),
                    &self.count,
                ));
            }
        }
        let k = discrepancies.len() as u64;
        let error_rate = ErrorRateEstimate::new(k, n, population, self.config.confidence)?;
        let methods = self.config.methods;

        let bayes = if methods.bayes {
            let audited: Vec<Ballot> = settled
                .iter()
                .filter_map(|(_, r)| r.ballot().cloned())
                .collect();
            let trial = TrialConfig {
                threshold: self.config.threshold,
                ..TrialConfig::new(self.config.trials, derive_seed(self.seed, "session-bayes", n))
            };
            Some(bayes_audit::<f64>(&self.record, &audited, &trial)?)
        } else {
            None
        };

        let negative = if methods.negative {
            let bound_x = self.margin_bound()?;
            let decision = bound_x.map_or(NegativeDecision::Inconclusive, |x| {
                negative_audit_decision(&error_rate, x)
            });
            Some(NegativeSummary { bound_x, decision })
        } else {
            None
        };

        let measured_risk = if methods.fixed && k == 0 {
            Some(measured_risk_zero_errors(n, self.config.anticipated_error_rate)?)
        } else {
            None
        };

        let km = match (methods.conditional, self.count.last_round_margin()) {
            (true, Some(m)) => {
                let mut state = KmAuditState::new(m.difference, population, self.config.risk_limit)?;
                state.n_inspected = n;
                state.discrepancies = discrepancies.into_iter().collect::<Result<_>>()?;
                state.p_value = crate::risk::km_pvalue(&state)?;
                Some(state)
            }
            _ => None,
        };

        let recommendation = if negative
            .as_ref()
            .is_some_and(|s| s.decision == NegativeDecision::ErrorRateExceedsMarginBound)
        {
            Recommendation::FullRecount
        } else if pending + flagged > 0 {
            Recommendation::Continue
        } else {
            let bayes_ok = bayes.as_ref().is_none_or(|b| b.threshold_met);
            let km_ok = !methods.conditional || km.as_ref().is_some_and(|s| s.attained());
            let fixed_ok = !methods.fixed
                || measured_risk.is_some_and(|r| r <= self.config.risk_limit);
            let any = methods.bayes || methods.conditional || methods.fixed;
            if any && bayes_ok && km_ok && fixed_ok {
                Recommendation::Stop
            } else if self.draw.size() < population {
                Recommendation::Extend
            } else {
                Recommendation::FullRecount
            }
        };

        Ok(StatsSnapshot {
            offset: self.offset(),
            sample_size: self.draw.size(),
            settled: n,
            pending,
            flagged,
            error_rate,
            bayes,
            negative,
            measured_risk,
            km,
            recommendation,
        })
    }
}
