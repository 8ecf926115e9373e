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

//! Preference file formats.
//!
//! The canonical format is a small line-oriented text file:
//!
//! ```text
//! # candidates: Alice|Bob|Carol
//! # groups: Red|Red|
//! # seats: 2
//! # reported: 1|2
//! 1,2,x3
//! 2,1,3,x5,atl
//! ```
//!
//! Candidate numbers in ballot rows and in `# reported:` are 1-based. Each
//! row lists a ballot's preferences in order followed by `x<multiplicity>`
//! and an optional `atl` marker for lines expanded from group votes. The
//! `# groups:` entry is empty for ungrouped candidates. `# seats:` and
//! `# reported:` are optional. Rows are sorted by preference sequence.
//!
//! The AEC format is the 2016 formal-preferences CSV (`...,Preferences`
//! column holding the above-the-line boxes, one per group in ballot-paper
//! order, followed by one box per candidate), preceded by the same
//! `# candidates:` and `# groups:` header lines that supply the ballot-paper
//! layout the CSV itself does not carry.

use crate::ballot::{Ballot, BallotLine, Candidate, CandidateId, ElectionRecord, Profile};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, Write};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    CanonicalCsv,
    Aec2016Formal,
}

/// Counts gathered while parsing.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct ParseSummary {
    pub rows: u64,
    pub formal_ballots: u64,
    pub informal_ballots: u64,
}

/// Everything read from a preference file.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ParsedFile {
    pub profile: Profile,
    pub seats: Option<usize>,
    pub reported_outcome: Option<Vec<CandidateId>>,
    pub summary: ParseSummary,
}

impl ParsedFile {
    /// Builds the election record; `seats` overrides the file's `# seats:`.
    pub fn into_record(self, seats: Option<usize>) -> Result<ElectionRecord> {
        let seats = seats.or(self.seats).ok_or_else(|| {
            Error::InvalidRecord("number of seats not given in file or arguments".into())
        })?;
        ElectionRecord::new(self.profile, seats, self.reported_outcome)
    }
}

pub fn parse_preference_file<R: BufRead>(reader: R, format: FileFormat) -> Result<ParsedFile> {
    match format {
        FileFormat::CanonicalCsv => parse_canonical(reader),
        FileFormat::Aec2016Formal => parse_aec2016(reader),
    }
}

#[derive(Default)]
struct Header {
    candidates: Option<Vec<String>>,
    groups: Option<Vec<String>>,
    seats: Option<usize>,
    reported: Option<Vec<u64>>,
}

impl Header {
    /// Consumes a `#` line. Unknown keys are comments.
    fn read(&mut self, line_no: usize, line: &str) -> Result<()> {
        let body = line.trim_start_matches('#').trim_start();
        let Some((key, value)) = body.split_once(':') else {
            return Ok(());
        };
        let value = value.strip_prefix(' ').unwrap_or(value);
        let malformed = |message: String| Error::Malformed {
            line: line_no,
            message,
        };
        match key.trim() {
            "candidates" => self.candidates = Some(value.split('|').map(str::to_owned).collect()),
            "groups" => self.groups = Some(value.split('|').map(str::to_owned).collect()),
            "seats" => {
                let seats = value
                    .trim()
                    .parse()
                    .map_err(|_| malformed(format!("bad seat count {value:?}")))?;
                self.seats = Some(seats);
            }
            "reported" => {
                let ids = value
                    .split('|')
                    .map(|t| t.trim().parse::<u64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| malformed(format!("bad reported winners {value:?}")))?;
                self.reported = Some(ids);
            }
            _ => {}
        }
        Ok(())
    }

    fn candidates(&self, line_no: usize) -> Result<Vec<Candidate>> {
        let names = self.candidates.as_ref().ok_or(Error::Malformed {
            line: line_no,
            message: "missing `# candidates:` header".into(),
        })?;
        if let Some(groups) = &self.groups {
            if groups.len() != names.len() {
                return Err(Error::Malformed {
                    line: line_no,
                    message: format!("{} groups for {} candidates", groups.len(), names.len()),
                });
            }
        }
        Ok(names
            .iter()
            .enumerate()
            .map(|(i, name)| Candidate {
                id: CandidateId::from(i),
                name: name.clone(),
                group: self
                    .groups
                    .as_ref()
                    .map(|g| g[i].clone())
                    .filter(|g| !g.is_empty()),
            })
            .collect())
    }

    fn reported(&self, num_candidates: usize) -> Result<Option<Vec<CandidateId>>> {
        self.reported
            .as_ref()
            .map(|ids| {
                ids.iter()
                    .map(|&id| to_candidate(0, id, num_candidates))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()
    }
}

fn to_candidate(line: usize, one_based: u64, num_candidates: usize) -> Result<CandidateId> {
    if one_based == 0 || one_based > num_candidates as u64 {
        Err(Error::UnknownCandidate {
            line,
            candidate: one_based,
        })
    } else {
        Ok(CandidateId((one_based - 1) as u32))
    }
}

fn parse_canonical<R: BufRead>(reader: R) -> Result<ParsedFile> {
    let mut header = Header::default();
    let mut rows: Vec<(usize, String)> = Vec::new();
    let mut saw_content = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        saw_content = true;
        if line.starts_with('#') {
            header.read(line_no, line)?;
        } else {
            rows.push((line_no, line.to_owned()));
        }
    }
    if !saw_content {
        return Err(Error::Empty);
    }
    let first_row = rows.first().map_or(1, |r| r.0);
    let candidates = header.candidates(first_row)?;
    let n = candidates.len();
    let mut summary = ParseSummary::default();
    let mut lines = Vec::new();
    for (line_no, row) in &rows {
        summary.rows += 1;
        let (prefs, multiplicity, atl) = parse_row(*line_no, row, n)?;
        let ballot = Ballot::from_prefs(prefs);
        if ballot.is_formal() {
            summary.formal_ballots += multiplicity;
            lines.push(BallotLine {
                ballot,
                multiplicity,
                atl,
            });
        } else {
            summary.informal_ballots += multiplicity;
        }
    }
    let reported = header.reported(n)?;
    let profile = Profile::new(candidates, lines)?;
    Ok(ParsedFile {
        profile,
        seats: header.seats,
        reported_outcome: reported,
        summary,
    })
}

fn parse_row(line_no: usize, row: &str, n: usize) -> Result<(Vec<CandidateId>, u64, bool)> {
    let malformed = |message: String| Error::Malformed {
        line: line_no,
        message,
    };
    let mut prefs = Vec::new();
    let mut multiplicity = None;
    let mut atl = false;
    for token in row
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
    {
        if atl {
            return Err(malformed(format!("unexpected {token:?} after `atl`")));
        }
        if let Some(m) = token.strip_prefix('x') {
            if multiplicity.is_some() {
                return Err(malformed("repeated multiplicity".into()));
            }
            let m: u64 = m
                .parse()
                .map_err(|_| malformed(format!("bad multiplicity {token:?}")))?;
            if m == 0 {
                return Err(malformed("multiplicity must be positive".into()));
            }
            multiplicity = Some(m);
        } else if token == "atl" {
            atl = true;
        } else {
            if multiplicity.is_some() {
                return Err(malformed(format!("preference {token:?} after multiplicity")));
            }
            let id: u64 = token
                .parse()
                .map_err(|_| malformed(format!("bad candidate number {token:?}")))?;
            prefs.push(to_candidate(line_no, id, n)?);
        }
    }
    Ok((prefs, multiplicity.unwrap_or(1), atl))
}

/// Writes the canonical form. Output of this function parses back to an
/// identical profile and is byte-stable.
pub fn write_canonical<W: Write>(record: &ElectionRecord, out: &mut W) -> Result<()> {
    write_profile(&record.profile, Some(record.seats), record.reported_outcome.as_deref(), out)
}

pub fn write_profile<W: Write>(
    profile: &Profile,
    seats: Option<usize>,
    reported: Option<&[CandidateId]>,
    out: &mut W,
) -> Result<()> {
    let names: Vec<&str> = profile.candidates().iter().map(|c| c.name.as_str()).collect();
    let groups: Vec<&str> = profile
        .candidates()
        .iter()
        .map(|c| c.group.as_deref().unwrap_or(""))
        .collect();
    writeln!(out, "# candidates: {}", names.join("|"))?;
    writeln!(out, "# groups: {}", groups.join("|"))?;
    if let Some(seats) = seats {
        writeln!(out, "# seats: {seats}")?;
    }
    if let Some(reported) = reported {
        let ids: Vec<String> = reported.iter().map(|c| (c.0 + 1).to_string()).collect();
        writeln!(out, "# reported: {}", ids.join("|"))?;
    }
    for line in profile.lines() {
        let mut row = String::new();
        for c in line.ballot.prefs() {
            row.push_str(&(c.0 + 1).to_string());
            row.push(',');
        }
        row.push('x');
        row.push_str(&line.multiplicity.to_string());
        if line.atl {
            row.push_str(",atl");
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

pub fn canonical_string(record: &ElectionRecord) -> String {
    let mut buf = Vec::new();
    write_canonical(record, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("canonical output is UTF-8")
}

fn parse_aec2016<R: BufRead>(mut reader: R) -> Result<ParsedFile> {
    let mut header = Header::default();
    let mut line_no = 0usize;
    let mut buf = String::new();
    // Header lines come first; the CSV starts at the first other line.
    let first_csv_line = loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            break None;
        }
        line_no += 1;
        let line = buf.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            header.read(line_no, line)?;
        } else {
            break Some(line.to_owned());
        }
    };
    let Some(first_csv_line) = first_csv_line else {
        return Err(if header.candidates.is_none() {
            Error::Empty
        } else {
            Error::Malformed {
                line: line_no,
                message: "missing CSV header row".into(),
            }
        });
    };
    let header_line = line_no;
    let candidates = header.candidates(header_line)?;
    let layout = PaperLayout::new(&candidates);

    let mut rest = String::new();
    reader.read_to_string(&mut rest)?;
    let csv_text = format!("{first_csv_line}\n{rest}");
    let mut csv = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let columns = csv.headers().map_err(|e| Error::Malformed {
        line: header_line,
        message: e.to_string(),
    })?;
    let pref_col = columns
        .iter()
        .position(|h| h.trim() == "Preferences")
        .ok_or(Error::Malformed {
            line: header_line,
            message: "no Preferences column".into(),
        })?;

    let mut summary = ParseSummary::default();
    let mut lines = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row_line = header_line + 1 + i;
        let record = record.map_err(|e| Error::Malformed {
            line: row_line,
            message: e.to_string(),
        })?;
        let Some(marks) = record.get(pref_col) else {
            return Err(Error::Malformed {
                line: row_line,
                message: "row has no Preferences field".into(),
            });
        };
        // The published files put a row of dashes under the header.
        if record.iter().all(|f| f.chars().all(|c| c == '-')) {
            continue;
        }
        summary.rows += 1;
        match layout.interpret(row_line, marks)? {
            Some((ballot, atl)) => {
                summary.formal_ballots += 1;
                lines.push(BallotLine {
                    ballot,
                    multiplicity: 1,
                    atl,
                });
            }
            None => summary.informal_ballots += 1,
        }
    }
    let reported = header.reported(candidates.len())?;
    let profile = Profile::new(candidates, lines)?;
    Ok(ParsedFile {
        profile,
        seats: header.seats,
        reported_outcome: reported,
        summary,
    })
}

/// Group boxes and candidate boxes in ballot-paper order.
struct PaperLayout {
    groups: Vec<Vec<CandidateId>>,
    num_candidates: usize,
}

impl PaperLayout {
    fn new(candidates: &[Candidate]) -> Self {
        let mut labels: Vec<&str> = Vec::new();
        let mut groups: Vec<Vec<CandidateId>> = Vec::new();
        for c in candidates {
            if let Some(g) = c.group.as_deref() {
                match labels.iter().position(|l| *l == g) {
                    Some(i) => groups[i].push(c.id),
                    None => {
                        labels.push(g);
                        groups.push(vec![c.id]);
                    }
                }
            }
        }
        PaperLayout {
            groups,
            num_candidates: candidates.len(),
        }
    }

    /// Returns the ballot and whether it came from the group boxes, or
    /// `None` for an informal paper. Below-the-line marks take precedence.
    fn interpret(&self, line: usize, marks: &str) -> Result<Option<(Ballot, bool)>> {
        let fields: Vec<&str> = marks.split(',').collect();
        let expected = self.groups.len() + self.num_candidates;
        if fields.len() != expected {
            return Err(Error::Malformed {
                line,
                message: format!("{} preference boxes, expected {expected}", fields.len()),
            });
        }
        let parsed = fields
            .iter()
            .map(|f| parse_mark(line, f))
            .collect::<Result<Vec<_>>>()?;
        let (atl, btl) = parsed.split_at(self.groups.len());
        let btl_order = consecutive_order(btl);
        if !btl_order.is_empty() {
            let prefs = btl_order.into_iter().map(CandidateId::from).collect();
            return Ok(Some((Ballot::from_prefs(prefs), false)));
        }
        let atl_order = consecutive_order(atl);
        if atl_order.is_empty() {
            return Ok(None);
        }
        let prefs: Vec<CandidateId> = atl_order
            .into_iter()
            .flat_map(|g| self.groups[g].iter().copied())
            .collect();
        Ok(Some((Ballot::from_prefs(prefs), true)))
    }
}

fn parse_mark(line: usize, field: &str) -> Result<Option<u32>> {
    let f = field.trim();
    match f {
        "" => Ok(None),
        "*" | "/" => Ok(Some(1)),
        _ => f.parse().map(Some).map_err(|_| Error::Malformed {
            line,
            message: format!("bad preference mark {f:?}"),
        }),
    }
}

/// Box indices holding 1, 2, 3, ... up to the first missing or repeated number.
fn consecutive_order(marks: &[Option<u32>]) -> Vec<usize> {
    let mut order = Vec::new();
    let mut used = HashSet::new();
    for k in 1..=marks.len() as u32 {
        let mut hits = marks
            .iter()
            .enumerate()
            .filter(|(_, m)| **m == Some(k))
            .map(|(i, _)| i);
        match (hits.next(), hits.next()) {
            (Some(i), None) if used.insert(i) => order.push(i),
            _ => break,
        }
    }
    order
}
