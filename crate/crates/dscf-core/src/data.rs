//! Rating and trust ingestion, dense ID spaces, and reproducible
//! train/validation/test splits.
//!
//! Canonical ingest format is TSV: `user<TAB>item<TAB>rating` for ratings
//! and `user<TAB>friend` for trust edges (`--format csv` switches the
//! delimiter to a comma). Raw IDs are arbitrary tokens; they are remapped
//! to dense 0-based indices in order of first appearance and the mapping is
//! retained for reporting.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// One observed (user, item, rating) interaction with dense IDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingTriple {
    pub user: u32,
    pub item: u32,
    /// Integer rating level in 1..=n_levels.
    pub rating: u32,
}

/// One trust edge between dense user IDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrustEdge {
    pub source: u32,
    pub target: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IngestFormat {
    Tsv,
    Csv,
}

impl IngestFormat {
    fn delimiter(self) -> char {
        match self {
            IngestFormat::Tsv => '\t',
            IngestFormat::Csv => ',',
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(IngestFormat::Tsv),
            "csv" => Ok(IngestFormat::Csv),
            other => Err(Error::Config(format!(
                "unknown ingest format `{}` (expected tsv or csv)",
                other
            ))),
        }
    }
}

/// Bijection between raw ID tokens and the dense 0-based index space.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    /// Identity map over `0..n` for synthetic data with dense IDs built in.
    pub fn dense(n: usize) -> Self {
        let mut map = Self::default();
        for i in 0..n {
            map.intern(&i.to_string());
        }
        map
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.raw.len() as u32;
        self.raw.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw_of(&self, id: u32) -> Option<&str> {
        self.raw.get(id as usize).map(|s| s.as_str())
    }

    pub fn id_of(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }
}

/// Loader output: deduplicated triples over dense ID spaces.
#[derive(Debug, Clone)]
pub struct Ratings {
    pub n_users: usize,
    pub n_items: usize,
    pub n_levels: usize,
    pub triples: Vec<RatingTriple>,
    pub users: IdMap,
    pub items: IdMap,
}

/// Reads rating triples. Raw IDs are remapped to dense indices; duplicate
/// (user, item) records are resolved by keeping the last occurrence.
pub fn load_ratings(path: &Path, format: IngestFormat, n_levels: usize) -> Result<Ratings> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            produced_by: "prepare --ratings <file>".into(),
        },
        _ => Error::Io(e),
    })?;
    let reader = BufReader::new(file);
    let delim = format.delimiter();
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut triples: Vec<RatingTriple> = Vec::new();
    let mut seen: HashMap<(u32, u32), usize> = HashMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(delim);
        let (raw_user, raw_item, raw_rating) = match (fields.next(), fields.next(), fields.next())
        {
            (Some(u), Some(i), Some(r)) => (u.trim(), i.trim(), r.trim()),
            _ => {
                return Err(parse_err(path, lineno, "expected user, item, rating fields"));
            }
        };
        let rating: f64 = raw_rating
            .parse()
            .map_err(|_| parse_err(path, lineno, &format!("bad rating `{}`", raw_rating)))?;
        if rating.fract() != 0.0 || rating < 1.0 || rating > n_levels as f64 {
            return Err(Error::Validation(format!(
                "{}:{}: rating {} outside integer range [1, {}]",
                path.display(),
                lineno,
                raw_rating,
                n_levels
            )));
        }
        let user = users.intern(raw_user);
        let item = items.intern(raw_item);
        let triple = RatingTriple {
            user,
            item,
            rating: rating as u32,
        };
        match seen.entry((user, item)) {
            std::collections::hash_map::Entry::Occupied(e) => {
                // Last occurrence wins.
                triples[*e.get()] = triple;
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(triples.len());
                triples.push(triple);
            }
        }
    }

    Ok(Ratings {
        n_users: users.len(),
        n_items: items.len(),
        n_levels,
        triples,
        users,
        items,
    })
}

/// Counters for records dropped while loading trust edges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrustLoadStats {
    pub kept: usize,
    pub dropped_unknown_user: usize,
    pub dropped_self_loops: usize,
    pub dropped_duplicates: usize,
}

/// Reads trust edges against the user map established by [`load_ratings`].
/// Edges naming users absent from the rating file are dropped and counted,
/// as are self-loops and exact duplicates.
pub fn load_trust(
    path: &Path,
    format: IngestFormat,
    users: &IdMap,
) -> Result<(Vec<TrustEdge>, TrustLoadStats)> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            produced_by: "prepare --trust <file>".into(),
        },
        _ => Error::Io(e),
    })?;
    let reader = BufReader::new(file);
    let delim = format.delimiter();
    let mut edges = Vec::new();
    let mut stats = TrustLoadStats::default();
    let mut seen = std::collections::HashSet::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(delim);
        let (raw_source, raw_target) = match (fields.next(), fields.next()) {
            (Some(s), Some(t)) => (s.trim(), t.trim()),
            _ => return Err(parse_err(path, lineno, "expected source, target fields")),
        };
        let (source, target) = match (users.id_of(raw_source), users.id_of(raw_target)) {
            (Some(s), Some(t)) => (s, t),
            _ => {
                stats.dropped_unknown_user += 1;
                continue;
            }
        };
        if source == target {
            stats.dropped_self_loops += 1;
            continue;
        }
        if !seen.insert((source, target)) {
            stats.dropped_duplicates += 1;
            continue;
        }
        edges.push(TrustEdge { source, target });
    }
    stats.kept = edges.len();
    Ok((edges, stats))
}

fn parse_err(path: &Path, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.to_string(),
    }
}

/// Partition label for one triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split label `{}`", other))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ratings plus a per-triple partition label. Immutable once built.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub n_levels: usize,
    pub triples: Vec<RatingTriple>,
    pub partition: Vec<Split>,
}

impl RatingDataset {
    /// Indices of triples carrying the given label, in triple order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.partition
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.partition.iter().filter(|&&s| s == split).count()
    }

    /// SHA-256 over the full content (counts, triples, partition labels).
    /// Downstream artifacts embed it so stale caches are rejected.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.n_users as u64).to_le_bytes());
        hasher.update((self.n_items as u64).to_le_bytes());
        hasher.update((self.n_levels as u64).to_le_bytes());
        for (t, s) in self.triples.iter().zip(&self.partition) {
            hasher.update(t.user.to_le_bytes());
            hasher.update(t.item.to_le_bytes());
            hasher.update(t.rating.to_le_bytes());
            hasher.update([*s as u8]);
        }
        hasher.finalize().into()
    }
}

/// Uniform random partition by triple, deterministic under `seed`.
///
/// `train_fraction` x goes to train (rounded to the nearest triple); the
/// remainder splits evenly between validation and test, with an odd leftover
/// triple going to test.
pub fn split_dataset(ratings: Ratings, train_fraction: f64, seed: u64) -> Result<RatingDataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {} outside (0, 1)",
            train_fraction
        )));
    }
    let n = ratings.triples.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    let n_val = (n - n_train) / 2;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut partition = vec![Split::Test; n];
    for (pos, &idx) in order.iter().enumerate() {
        partition[idx] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    Ok(RatingDataset {
        n_users: ratings.n_users,
        n_items: ratings.n_items,
        n_levels: ratings.n_levels,
        triples: ratings.triples,
        partition,
    })
}

/// Writes the split sidecar: one label per triple line, in input order.
pub fn save_split_manifest(dataset: &RatingDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in &dataset.partition {
        writeln!(w, "{}", s)?;
    }
    w.flush()?;
    Ok(())
}

/// Reapplies a split manifest to freshly loaded ratings, reproducing the
/// exact partition without rerunning the RNG.
pub fn apply_split_manifest(ratings: Ratings, path: &Path) -> Result<RatingDataset> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            produced_by: "prepare".into(),
        },
        _ => Error::Io(e),
    })?;
    let mut partition = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        partition.push(Split::parse(line.trim()).map_err(|_| {
            parse_err(path, lineno + 1, &format!("unknown split label `{}`", line))
        })?);
    }
    if partition.len() != ratings.triples.len() {
        return Err(Error::ArtifactMismatch(format!(
            "split manifest has {} labels but the dataset has {} triples",
            partition.len(),
            ratings.triples.len()
        )));
    }
    Ok(RatingDataset {
        n_users: ratings.n_users,
        n_items: ratings.n_items,
        n_levels: ratings.n_levels,
        triples: ratings.triples,
        partition,
    })
}
