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

//! Tabulation and auditing of Single Transferable Vote elections.
//!
//! The crate covers parsing preference files, counting, reproducible
//! sampling, Bayesian and bootstrap ballot-polling audits, heuristic search
//! for small outcome-changing manipulations, the statistics used by
//! comparison and fixed-size audits, and the event-sourced audit session
//! model shared by the HTTP service and the CLI.
//!
//! Counting code is generic over the [`Weight`] scalar. The aliases below
//! fix the exact rational type used by default.

pub mod ballot;
pub mod bayes;
pub mod error;
pub mod format;
pub mod margin;
pub mod num;
pub mod risk;
pub mod rng;
pub mod sampler;
pub mod session;
pub mod stv;

pub use ballot::{Ballot, BallotLine, Candidate, CandidateId, ElectionRecord, Profile};
pub use error::{Error, Result};
pub use num::Weight;

/// Default exact weight type.
pub type Exact = num_rational::BigRational;
pub type ExactCountResult = stv::CountResult<Exact>;
pub type ExactRoundTally = stv::RoundTally<Exact>;
pub type ExactMarginBound = margin::MarginBound;

/// Exact count with the default rules.
pub fn count(record: &ElectionRecord) -> Result<ExactCountResult> {
    stv::count_with::<Exact>(record, &stv::CountRules::default())
}
