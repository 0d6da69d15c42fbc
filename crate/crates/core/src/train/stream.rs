use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::corpus::Corpus;
use crate::error::{Error, Result};
use crate::seed;
use crate::tree::Provenance;

/// Curriculum phase: optimal teachers only, then the better-generalizing
/// teacher of each pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn number(self) -> u64 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Phase::One),
            "2" => Ok(Phase::Two),
            _ => Err(Error::validation(format!("phase must be 1 or 2, got '{s}'"))),
        }
    }
}

/// Example indices a phase draws from, in corpus order.
///
/// Phase two keeps, per pair, the example with the higher held-out accuracy;
/// ties go to the optimal teacher.
pub fn select_phase_stream(c: &Corpus, phase: Phase) -> Vec<usize> {
    match phase {
        Phase::One => (0..c.len()).filter(|&i| c.examples[i].teacher_tag == Provenance::OptimalD2).collect(),
        Phase::Two => {
            let mut best: BTreeMap<usize, usize> = BTreeMap::new();
            for (i, e) in c.examples.iter().enumerate() {
                let rank = |j: usize| {
                    let x = &c.examples[j];
                    (x.test_accuracy, x.teacher_tag == Provenance::OptimalD2)
                };
                best.entry(e.pair)
                    .and_modify(|b| {
                        let (ra, rb) = (rank(i), rank(*b));
                        if ra.0 > rb.0 || (ra.0 == rb.0 && ra.1 && !rb.1) {
                            *b = i;
                        }
                    })
                    .or_insert(i);
            }
            best.into_values().collect()
        }
    }
}

/// Endless shuffled pass over a phase's examples; every epoch uses a fresh
/// order derived from `(seed, phase, epoch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStream {
    seed: u64,
    phase: Phase,
    epoch: u64,
    pos: usize,
    pool: Vec<usize>,
    order: Vec<usize>,
}

impl PhaseStream {
    pub fn new(c: &Corpus, phase: Phase, seed: u64) -> Result<Self> {
        Self::at(c, phase, seed, 0, 0)
    }

    /// A stream positioned at `(epoch, pos)`, as saved by [`state`](Self::state).
    pub fn at(c: &Corpus, phase: Phase, seed: u64, epoch: u64, pos: usize) -> Result<Self> {
        let pool = select_phase_stream(c, phase);
        if pool.is_empty() {
            return Err(Error::validation(format!("corpus has no examples for phase {phase}")));
        }
        if pos > pool.len() {
            return Err(Error::validation(format!("stream position {pos} beyond {} examples", pool.len())));
        }
        let mut s = PhaseStream { seed, phase, epoch, pos, pool, order: Vec::new() };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.order = self.pool.clone();
        self.order.shuffle(&mut seed::rng_at(self.seed, &[self.phase.number(), self.epoch]));
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// `(phase, epoch, position within epoch)`.
    pub fn state(&self) -> (Phase, u64, usize) {
        (self.phase, self.epoch, self.pos)
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}
