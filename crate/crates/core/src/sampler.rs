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

//! Reproducible samples of ballot indices.
//!
//! A draw is a partial Fisher-Yates shuffle of `0..population` driven by the
//! `"sample"` substream of [`crate::rng`] for the given seed. Step `i` picks
//! `j = i + uniform_below(population - i)` and swaps positions `i` and `j`
//! of the virtual permutation; the value landing at position `i` is the
//! `i`-th index drawn. Draw order therefore depends only on the seed and the
//! population, and any larger sample extends a smaller one.

use crate::error::{Error, Result};
use crate::rng::{substream, uniform_below};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SampleDraw {
    seed: u64,
    population: u64,
    order: Vec<u64>,
    indices: Vec<u64>,
}

impl SampleDraw {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn size(&self) -> u64 {
        self.order.len() as u64
    }

    /// Sorted, distinct indices.
    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    /// Indices in the order they were drawn.
    pub fn draw_order(&self) -> &[u64] {
        &self.order
    }
}

pub fn draw_sample(seed: u64, population: u64, size: u64) -> Result<SampleDraw> {
    if size > population {
        return Err(Error::SampleTooLarge { size, population });
    }
    let mut rng = substream(seed, "sample", 0);
    let mut swapped: HashMap<u64, u64> = HashMap::new();
    let mut order = Vec::with_capacity(size as usize);
    for i in 0..size {
        let j = i + uniform_below(&mut rng, population - i);
        let at_j = swapped.get(&j).copied().unwrap_or(j);
        let at_i = swapped.get(&i).copied().unwrap_or(i);
        swapped.insert(j, at_i);
        order.push(at_j);
    }
    let mut indices = order.clone();
    indices.sort_unstable();
    Ok(SampleDraw {
        seed,
        population,
        order,
        indices,
    })
}

pub fn extend_sample(draw: &SampleDraw, new_size: u64) -> Result<SampleDraw> {
    if new_size < draw.size() {
        return Err(Error::SampleShrink {
            current: draw.size(),
            requested: new_size,
        });
    }
    draw_sample(draw.seed, draw.population, new_size)
}

#[derive(Serialize, Deserialize)]
struct DrawJson {
    seed: u64,
    population: u64,
    size: u64,
    indices: Vec<u64>,
}

impl Serialize for SampleDraw {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DrawJson {
            seed: self.seed,
            population: self.population,
            size: self.size(),
            indices: self.indices.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SampleDraw {
    /// Regenerates the draw and rejects published indices that disagree.
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = DrawJson::deserialize(d)?;
        let draw =
            draw_sample(raw.seed, raw.population, raw.size).map_err(serde::de::Error::custom)?;
        if draw.indices != raw.indices {
            return Err(serde::de::Error::custom(
                "indices do not match the regenerated draw",
            ));
        }
        Ok(draw)
    }
}
