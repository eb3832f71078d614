//! Batch transitions drawn from a game, and their JSON-lines persistence.
//!
//! File layout: the first line is a header object
//! `{"fingerprint": "...", "seed": 42, "split": "train"}`; each following
//! line is one sample `{"s":..,"a":..,"r":[..],"s_next":..,"c":..,"c_next":..}`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::TurnBasedGame;

/// One logged transition `(s, a, r^1..r^N, s')` plus the controllers of
/// both states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSample {
    pub s: usize,
    pub a: usize,
    #[serde(rename = "r")]
    pub rewards: Vec<f64>,
    pub s_next: usize,
    #[serde(rename = "c")]
    pub controller: usize,
    #[serde(rename = "c_next")]
    pub controller_next: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    seed: u64,
    split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub fingerprint: String,
    pub seed: u64,
    pub split: Split,
    pub samples: Vec<BatchSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Errors unless this dataset was drawn from `game`.
    pub fn ensure_matches(&self, game: &TurnBasedGame) -> Result<()> {
        let expected = game.fingerprint();
        if self.fingerprint != expected {
            return Err(Error::FingerprintMismatch { expected, found: self.fingerprint.clone() });
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header { fingerprint: self.fingerprint.clone(), seed: self.seed, split: self.split };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for sample in &self.samples {
            write_sample(&mut out, sample);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "missing header line".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
        let mut samples = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let sample: BatchSample = serde_json::from_str(line).map_err(|e| parse_err(idx + 1, e.to_string()))?;
            samples.push(sample);
        }
        Ok(Dataset { fingerprint: header.fingerprint, seed: header.seed, split: header.split, samples })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path)
    }
}

fn write_sample(out: &mut String, sample: &BatchSample) {
    // 17 significant digits round-trip every f64 exactly.
    let rewards: Vec<String> = sample.rewards.iter().map(|r| format!("{r:.16e}")).collect();
    write!(
        out,
        r#"{{"s":{},"a":{},"r":[{}],"s_next":{},"c":{},"c_next":{}}}"#,
        sample.s,
        sample.a,
        rewards.join(","),
        sample.s_next,
        sample.controller,
        sample.controller_next
    )
    .expect("writing to a String cannot fail");
}

/// Reads the transition `(s, a)` off the model.
pub fn transition(game: &TurnBasedGame, s: usize, a: usize) -> BatchSample {
    let s_next = game.next_state(s, a);
    BatchSample {
        s,
        a,
        rewards: (0..game.n_players()).map(|i| game.reward(i, s, a)).collect(),
        s_next,
        controller: game.controller(s),
        controller_next: game.controller(s_next),
    }
}

/// `k` i.i.d. transitions with uniform state and uniform controller action.
///
/// Train and test splits use separate streams of the same seed, so a train
/// and a test set sharing a seed are still independent.
pub fn sample_batch(game: &TurnBasedGame, k: usize, seed: u64, split: Split) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream());
    let samples = (0..k)
        .map(|_| {
            let s = rng.random_range(0..game.n_states());
            let a = rng.random_range(0..game.n_actions());
            transition(game, s, a)
        })
        .collect();
    Ok(Dataset { fingerprint: game.fingerprint(), seed, split, samples })
}
