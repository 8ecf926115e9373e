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

//! Bayesian and bootstrap ballot-polling audits.
//!
//! The posterior over full profiles is a Polya urn seeded with one singleton
//! ballot per candidate plus every audited ballot. Only ballot types already
//! in the urn can appear, so a posterior profile is drawn in time linear in
//! the number of types: one gamma deviate per type gives Dirichlet
//! proportions, and the unobserved remainder of the election is spread over
//! the types by a multinomial draw with those proportions (sequential
//! binomials). That is exactly the distribution of extending the urn one
//! ballot at a time.

use crate::ballot::{Ballot, BallotLine, Candidate, CandidateId, ElectionRecord, Profile};
use crate::error::{Error, Result};
use crate::num::Weight;
use crate::rng::{derive_seed, substream};
use crate::sampler::{draw_sample, extend_sample};
use crate::stv::CountRules;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const DEFAULT_TRIALS: u64 = 200;
pub const DEFAULT_THRESHOLD: f64 = 0.95;

/// Ballot types with pseudo-counts (prior) and observed counts.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Urn {
    candidates: Vec<Candidate>,
    types: Vec<Ballot>,
    counts: Vec<u64>,
    /// Ballots in the full election the posterior extrapolates to.
    n_total: u64,
    observed: u64,
    #[serde(skip)]
    lookup: HashMap<Ballot, usize>,
}

impl Urn {
    pub fn types(&self) -> &[Ballot] {
        &self.types
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn observed(&self) -> u64 {
        self.observed
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn with_total(mut self, n_total: u64) -> Self {
        self.n_total = n_total;
        self
    }

    /// Builds an urn from explicit types and counts, without the singleton
    /// prior. Used for direct checks of the posterior sampler.
    pub fn from_parts(
        candidates: Vec<Candidate>,
        types: Vec<Ballot>,
        counts: Vec<u64>,
        n_total: u64,
    ) -> Result<Self> {
        if types.len() != counts.len() || types.is_empty() {
            return Err(Error::InvalidArgument("types and counts must align".into()));
        }
        let mut lookup = HashMap::new();
        for (i, t) in types.iter().enumerate() {
            if !t.is_formal() || t.prefs().iter().any(|c| c.index() >= candidates.len()) {
                return Err(Error::InvalidBallot(format!("{t} is not a formal ballot")));
            }
            if lookup.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate type {t}")));
            }
        }
        Ok(Urn {
            candidates,
            types,
            counts,
            n_total,
            observed: 0,
            lookup,
        })
    }
}

/// The neutral prior: one singleton ballot per candidate.
pub fn make_prior(candidates: &[Candidate], n_total: u64) -> Result<Urn> {
    if candidates.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "a prior needs at least two candidates, got {}",
            candidates.len()
        )));
    }
    let types: Vec<Ballot> = candidates
        .iter()
        .map(|c| Ballot::from_prefs(vec![c.id]))
        .collect();
    let counts = vec![1; types.len()];
    Urn::from_parts(candidates.to_vec(), types, counts, n_total)
}

/// Adds audited ballots to the urn.
pub fn observe(mut urn: Urn, ballots: &[Ballot]) -> Result<Urn> {
    for b in ballots {
        if !b.is_formal() || b.prefs().iter().any(|c| c.index() >= urn.candidates.len()) {
            return Err(Error::InvalidBallot(format!("{b} is not a formal ballot")));
        }
    }
    if urn.lookup.len() != urn.types.len() {
        urn.lookup = urn.types.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    }
    for b in ballots {
        match urn.lookup.get(b) {
            Some(&i) => urn.counts[i] += 1,
            None => {
                urn.lookup.insert(b.clone(), urn.types.len());
                urn.types.push(b.clone());
                urn.counts.push(1);
            }
        }
        urn.observed += 1;
    }
    Ok(urn)
}

/// How Dirichlet proportions become whole ballot counts.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integerization {
    /// Urn counts plus a multinomial draw of the unobserved remainder.
    /// Identical in distribution to running the Polya urn.
    #[default]
    Multinomial,
    /// Proportions scaled to the election size, rounded by largest remainder.
    LargestRemainder,
}

/// Draws one full profile from the posterior.
///
/// With [`Integerization::Multinomial`] the profile has
/// `max(n_total, urn total)` ballots: when the audit has seen as many ballots
/// as the election holds, nothing is extrapolated and the urn itself is the
/// profile.
pub fn posterior_profile<R: Rng + ?Sized>(
    urn: &Urn,
    rng: &mut R,
    method: Integerization,
) -> Profile {
    let gammas: Vec<f64> = urn
        .counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                Gamma::new(c as f64, 1.0).expect("positive shape").sample(rng)
            }
        })
        .collect();
    let sum: f64 = gammas.iter().sum();
    let proportions: Vec<f64> = if sum > 0.0 {
        gammas.iter().map(|g| g / sum).collect()
    } else {
        // All deviates underflowed; fall back to the urn's own proportions.
        let total: u64 = urn.counts.iter().sum();
        urn.counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    let multiplicities = match method {
        Integerization::Multinomial => {
            let in_urn: u64 = urn.counts.iter().sum();
            let extra = multinomial(urn.n_total.saturating_sub(in_urn), &proportions, rng);
            urn.counts.iter().zip(extra).map(|(c, e)| c + e).collect()
        }
        Integerization::LargestRemainder => largest_remainder(urn.n_total, &proportions),
    };
    let lines = urn
        .types
        .iter()
        .zip(multiplicities)
        .filter(|(_, m)| *m > 0)
        .map(|(t, m)| BallotLine::new(t.clone(), m))
        .collect();
    Profile::new(urn.candidates.clone(), lines).expect("urn types are formal")
}

/// Conditional-binomial multinomial sampler.
fn multinomial<R: Rng + ?Sized>(n: u64, p: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; p.len()];
    let mut left_n = n;
    let mut left_p = 1.0f64;
    for (i, &pi) in p.iter().enumerate() {
        if left_n == 0 {
            break;
        }
        if i + 1 == p.len() || left_p <= 0.0 {
            out[i] = left_n;
            break;
        }
        let q = (pi / left_p).clamp(0.0, 1.0);
        let x = Binomial::new(left_n, q).expect("valid binomial").sample(rng);
        out[i] = x;
        left_n -= x;
        left_p -= pi;
    }
    out
}

/// Integer apportionment of `n` in the given proportions. Ties in the
/// remainders go to the earlier type.
pub fn largest_remainder(n: u64, proportions: &[f64]) -> Vec<u64> {
    let scaled: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut out: Vec<u64> = scaled.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    if assigned <= n {
        for &i in order.iter().cycle().take((n - assigned) as usize) {
            out[i] += 1;
        }
    } else {
        // Floating error can overshoot by a unit; take it from the smallest remainders.
        for &i in order.iter().rev().cycle().take((assigned - n) as usize) {
            out[i] = out[i].saturating_sub(1);
        }
    }
    out
}

/// What the audit compares against.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct AuditTarget {
    pub seats: usize,
    pub reported_winners: Vec<CandidateId>,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trials: u64,
    pub threshold: f64,
    pub seed: u64,
    #[serde(default)]
    pub integerization: Integerization,
}

impl TrialConfig {
    pub fn new(trials: u64, seed: u64) -> Self {
        TrialConfig {
            trials,
            threshold: DEFAULT_THRESHOLD,
            seed,
            integerization: Integerization::default(),
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CandidateFrequency {
    pub candidate: CandidateId,
    pub name: String,
    pub fraction: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct BayesReport {
    pub trials: u64,
    pub matches: u64,
    pub outcome_match_fraction: f64,
    /// Seating frequency per candidate, highest first (ties by id).
    pub per_candidate_frequency: Vec<CandidateFrequency>,
    pub stop_threshold: f64,
    pub threshold_met: bool,
    /// Distinct winner sets seen and how often.
    pub outcomes: BTreeMap<String, u64>,
}

impl BayesReport {
    pub fn frequency_of(&self, c: CandidateId) -> f64 {
        self.per_candidate_frequency
            .iter()
            .find(|f| f.candidate == c)
            .map_or(0.0, |f| f.fraction)
    }
}

/// Runs posterior trials and tallies how often the reported winners win.
/// Trial `i` uses the substream `("bayes-trial", i)` of `config.seed`, so
/// results do not depend on scheduling.
pub fn audit_trials<W: Weight>(
    urn: &Urn,
    target: &AuditTarget,
    config: &TrialConfig,
) -> Result<BayesReport> {
    if config.trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let n = urn.candidates.len();
    if target.seats == 0 || target.seats >= n {
        return Err(Error::InvalidRecord(format!(
            "need 1 <= seats < candidates, got {}",
            target.seats
        )));
    }
    let mut reported = target.reported_winners.clone();
    reported.sort();
    let winners: Vec<Vec<CandidateId>> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(config.seed, "bayes-trial", i);
            let profile = posterior_profile(urn, &mut rng, config.integerization);
            crate::stv::winner_set::<W>(&profile, target.seats)
        })
        .collect::<Result<_>>()?;
    let mut seat_counts = vec![0u64; n];
    let mut outcomes = BTreeMap::new();
    let mut matches = 0;
    for w in &winners {
        debug_assert_eq!(w.len(), target.seats);
        for c in w {
            seat_counts[c.index()] += 1;
        }
        if *w == reported {
            matches += 1;
        }
        let key = w.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        *outcomes.entry(key).or_insert(0) += 1;
    }
    let trials = config.trials as f64;
    let mut per_candidate_frequency: Vec<CandidateFrequency> = urn
        .candidates
        .iter()
        .map(|c| CandidateFrequency {
            candidate: c.id,
            name: c.name.clone(),
            fraction: seat_counts[c.id.index()] as f64 / trials,
        })
        .collect();
    per_candidate_frequency.sort_by(|a, b| {
        b.fraction
            .partial_cmp(&a.fraction)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.candidate.cmp(&b.candidate))
    });
    let fraction = matches as f64 / trials;
    Ok(BayesReport {
        trials: config.trials,
        matches,
        outcome_match_fraction: fraction,
        per_candidate_frequency,
        stop_threshold: config.threshold,
        threshold_met: fraction >= config.threshold,
        outcomes,
    })
}

/// Bayesian audit of a set of audited paper ballots against a record.
pub fn bayes_audit<W: Weight>(
    record: &ElectionRecord,
    audited: &[Ballot],
    config: &TrialConfig,
) -> Result<BayesReport> {
    let urn = observe(make_prior(record.profile.candidates(), record.profile.total())?, audited)?;
    let target = AuditTarget {
        seats: record.seats,
        reported_winners: reported_winners::<W>(record)?,
    };
    audit_trials::<W>(&urn, &target, config)
}

/// The announced winners, or the count's winners when none were announced.
pub fn reported_winners<W: Weight>(record: &ElectionRecord) -> Result<Vec<CandidateId>> {
    match &record.reported_outcome {
        Some(r) => Ok(r.clone()),
        None => Ok(crate::stv::count_with::<W>(record, &CountRules::default())?.winners),
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct BootstrapStage {
    pub sample_size: u64,
    pub report: BayesReport,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub stages: Vec<BootstrapStage>,
    /// First sample size whose match fraction reached the threshold.
    pub first_meeting_threshold: Option<u64>,
}

/// Bootstrap audit: treat the reported ballots as the population, draw
/// growing samples from them and ask how often the posterior reproduces the
/// reported winners. Stops at the first stage meeting the threshold.
pub fn bootstrap_schedule<W: Weight>(
    record: &ElectionRecord,
    schedule: &[u64],
    config: &TrialConfig,
) -> Result<BootstrapReport> {
    if schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("schedule must be increasing".into()));
    }
    let population = record.profile.total();
    if let Some(&last) = schedule.last() {
        if last > population {
            return Err(Error::SampleTooLarge {
                size: last,
                population,
            });
        }
    }
    let target = AuditTarget {
        seats: record.seats,
        reported_winners: reported_winners::<W>(record)?,
    };
    let mut draw = draw_sample(derive_seed(config.seed, "bootstrap-sample", 0), population, 0)?;
    let mut stages = Vec::new();
    for (stage, &size) in schedule.iter().enumerate() {
        draw = extend_sample(&draw, size)?;
        let ballots: Vec<Ballot> = draw
            .indices()
            .iter()
            .map(|&i| record.profile.ballot_at(i).expect("index in range").clone())
            .collect();
        let urn = observe(make_prior(record.profile.candidates(), population)?, &ballots)?;
        let stage_config = TrialConfig {
            seed: derive_seed(config.seed, "bootstrap-stage", stage as u64),
            ..*config
        };
        let report = audit_trials::<W>(&urn, &target, &stage_config)?;
        let met = report.threshold_met;
        stages.push(BootstrapStage {
            sample_size: size,
            report,
        });
        if met {
            return Ok(BootstrapReport {
                stages,
                first_meeting_threshold: Some(size),
            });
        }
    }
    Ok(BootstrapReport {
        stages,
        first_meeting_threshold: None,
    })
}
