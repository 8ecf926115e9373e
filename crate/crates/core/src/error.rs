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

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown candidate {candidate}")]
    UnknownCandidate { line: usize, candidate: u64 },
    #[error("input is empty")]
    Empty,
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid election record: {0}")]
    InvalidRecord(String),
    #[error("invalid ballot: {0}")]
    InvalidBallot(String),
    #[error("sample of {size} requested from a population of {population}")]
    SampleTooLarge { size: u64, population: u64 },
    #[error("cannot shrink a sample from {current} to {requested}")]
    SampleShrink { current: u64, requested: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("session: {0}")]
    Session(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
