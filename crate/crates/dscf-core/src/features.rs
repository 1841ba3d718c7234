//! Item feature vectors, item-item similarity, and the conversion of
//! random-walk user sequences into item-aware social sequences.
//!
//! For a target pair (u, v), each walked-to neighbor contributes the item
//! they rated in the train split that is most cosine-similar to v, together
//! with that rating. Neighbors without any train interaction contribute a
//! reserved padding step instead. Sequences are generated once per pair
//! under a per-pair RNG stream and cached on disk.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{RatingDataset, Split};
use crate::graph::{random_walk, SocialGraph};
use crate::neumf::{train_neumf, NeumfConfig, NeumfOutcome};
use crate::nn::mix_seed;
use crate::pmf::{train_pmf, PmfConfig};
use crate::{Error, Result};

const FEATURE_MAGIC: &[u8; 8] = b"DSCFFEA1";
const SEQUENCE_MAGIC: &[u8; 8] = b"DSCFSEQ1";
const FORMAT_VERSION: u32 = 1;

/// Cosine similarity; zero-norm inputs are defined to have similarity 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(
        a.len(),
        b.len(),
        "cosine dimension mismatch: {} vs {}",
        a.len(),
        b.len()
    );
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// One real-valued feature vector per item, with cached norms.
#[derive(Debug, Clone)]
pub struct ItemFeatureTable {
    n_items: usize,
    dim: usize,
    values: Vec<f64>,
    norms: Vec<f64>,
    dataset_hash: [u8; 32],
}

impl ItemFeatureTable {
    pub fn new(values: Vec<f64>, n_items: usize, dim: usize, dataset_hash: [u8; 32]) -> Self {
        assert_eq!(values.len(), n_items * dim);
        let norms = (0..n_items)
            .map(|m| {
                values[m * dim..(m + 1) * dim]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        Self {
            n_items,
            dim,
            values,
            norms,
            dataset_hash,
        }
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dataset_hash(&self) -> [u8; 32] {
        self.dataset_hash
    }

    pub fn feature(&self, item: u32) -> &[f64] {
        let m = item as usize;
        &self.values[m * self.dim..(m + 1) * self.dim]
    }

    /// Cosine similarity between two items' feature vectors.
    pub fn cosine(&self, a: u32, b: u32) -> f64 {
        let na = self.norms[a as usize];
        let nb = self.norms[b as usize];
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let fa = self.feature(a);
        let fb = self.feature(b);
        let dot: f64 = fa.iter().zip(fb).map(|(x, y)| x * y).sum();
        dot / (na * nb)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_items as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&self.dataset_hash)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                produced_by: "pretrain".into(),
            },
            _ => Error::Io(e),
        })?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::ArtifactMismatch(format!(
                "{} is not a feature table (bad magic)",
                path.display()
            )));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        if u32::from_le_bytes(buf4) != FORMAT_VERSION {
            return Err(Error::ArtifactMismatch("feature table version unsupported".into()));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let n_items = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8)?;
        let dim = u64::from_le_bytes(buf8) as usize;
        let mut dataset_hash = [0u8; 32];
        r.read_exact(&mut dataset_hash)?;
        let mut values = vec![0.0; n_items * dim];
        for v in values.iter_mut() {
            r.read_exact(&mut buf8)?;
            *v = f64::from_le_bytes(buf8);
        }
        Ok(Self::new(values, n_items, dim, dataset_hash))
    }
}

/// Per-user train-split interactions, sorted by item id so argmax ties break
/// toward the smallest item id.
#[derive(Debug, Clone)]
pub struct UserTrainItems {
    per_user: Vec<Vec<(u32, u32)>>,
}

impl UserTrainItems {
    pub fn build(dataset: &RatingDataset) -> Self {
        let mut per_user = vec![Vec::new(); dataset.n_users];
        for (t, s) in dataset.triples.iter().zip(&dataset.partition) {
            if *s == Split::Train {
                per_user[t.user as usize].push((t.item, t.rating));
            }
        }
        for items in &mut per_user {
            items.sort_unstable_by_key(|&(item, _)| item);
        }
        Self { per_user }
    }

    pub fn items_of(&self, user: u32) -> &[(u32, u32)] {
        &self.per_user[user as usize]
    }
}

/// Picks the neighbor's train-rated item most similar to `target_item`,
/// returning it with the rating the neighbor gave. Ties break toward the
/// smallest item id; a neighbor with no train interactions yields `None`.
pub fn select_relevant_item(
    neighbor: u32,
    target_item: u32,
    train_items: &UserTrainItems,
    features: &ItemFeatureTable,
) -> Option<(u32, u32)> {
    let items = train_items.items_of(neighbor);
    let mut best: Option<(f64, u32, u32)> = None;
    for &(item, rating) in items {
        let sim = features.cosine(item, target_item);
        match best {
            Some((best_sim, _, _)) if sim <= best_sim => {}
            _ => best = Some((sim, item, rating)),
        }
    }
    best.map(|(_, item, rating)| (item, rating))
}

/// One converted walk step. Padding steps use the reserved user id N, item
/// id M, and rating level 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceStep {
    pub neighbor: u32,
    pub item: u32,
    pub rating: u32,
}

impl SequenceStep {
    pub fn is_padding(&self) -> bool {
        self.rating == 0
    }
}

/// An item-aware social sequence for a target pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemAwareSequence {
    pub target_user: u32,
    pub target_item: u32,
    pub steps: Vec<SequenceStep>,
    /// True when the underlying walk stalled or any step fell back to the
    /// reserved padding triple.
    pub padded: bool,
}

/// Generates `num_sequences` item-aware sequences of length `walk_length`
/// for the pair (target_user, target_item), drawing walks from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn build_item_aware_sequences(
    target_user: u32,
    target_item: u32,
    graph: &SocialGraph,
    dataset: &RatingDataset,
    train_items: &UserTrainItems,
    features: &ItemFeatureTable,
    walk_length: usize,
    num_sequences: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ItemAwareSequence>> {
    assert!(walk_length >= 1 && num_sequences >= 1);
    let padding = SequenceStep {
        neighbor: dataset.n_users as u32,
        item: dataset.n_items as u32,
        rating: 0,
    };
    let mut sequences = Vec::with_capacity(num_sequences);
    for _ in 0..num_sequences {
        let walk = random_walk(graph, target_user, walk_length, rng)?;
        let mut padded = walk.padded;
        let steps = walk
            .steps
            .iter()
            .map(|&neighbor| {
                match select_relevant_item(neighbor, target_item, train_items, features) {
                    Some((item, rating)) => SequenceStep {
                        neighbor,
                        item,
                        rating,
                    },
                    None => {
                        padded = true;
                        padding
                    }
                }
            })
            .collect();
        sequences.push(ItemAwareSequence {
            target_user,
            target_item,
            steps,
            padded,
        });
    }
    Ok(sequences)
}

/// All cached sequences for a dataset: entry i holds the sequences for
/// `dataset.triples[i]`.
pub struct SequenceSet {
    pub walk_length: usize,
    pub num_sequences: usize,
    pub seed: u64,
    pub dataset_hash: [u8; 32],
    per_pair: Vec<Vec<ItemAwareSequence>>,
}

impl SequenceSet {
    /// Builds sequences for every triple in the dataset (train, val, and
    /// test pairs alike), parallel across pairs with one RNG stream per pair.
    pub fn build(
        dataset: &RatingDataset,
        graph: &SocialGraph,
        features: &ItemFeatureTable,
        walk_length: usize,
        num_sequences: usize,
        seed: u64,
    ) -> Result<Self> {
        let train_items = UserTrainItems::build(dataset);
        let per_pair: Vec<Vec<ItemAwareSequence>> = dataset
            .triples
            .par_iter()
            .enumerate()
            .map(|(idx, t)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3_000_000 + idx as u64));
                build_item_aware_sequences(
                    t.user,
                    t.item,
                    graph,
                    dataset,
                    &train_items,
                    features,
                    walk_length,
                    num_sequences,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            walk_length,
            num_sequences,
            seed,
            dataset_hash: dataset.content_hash(),
            per_pair,
        })
    }

    pub fn len(&self) -> usize {
        self.per_pair.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_pair.is_empty()
    }

    /// Sequences for the pair at triple index `idx`; the (user, item) pair is
    /// only used to name the pair in the error when the cache has no entry.
    pub fn for_pair(&self, idx: usize, user: u32, item: u32) -> Result<&[ItemAwareSequence]> {
        self.per_pair
            .get(idx)
            .map(|s| s.as_slice())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                Error::State(format!(
                    "no cached sequences for pair ({}, {}) at index {}",
                    user, item, idx
                ))
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<ItemAwareSequence>> {
        self.per_pair.iter()
    }

    /// Rejects caches built from a different dataset or split.
    pub fn check_compatible(&self, dataset: &RatingDataset) -> Result<()> {
        if self.per_pair.len() != dataset.triples.len()
            || self.dataset_hash != dataset.content_hash()
        {
            return Err(Error::ArtifactMismatch(
                "sequence cache does not match the dataset (regenerate with `walks`)".into(),
            ));
        }
        Ok(())
    }

    /// Cache format: magic, version, walk length, sequence count, seed,
    /// dataset hash, pair count, then per pair and per sequence a padded
    /// flag byte followed by walk-length (neighbor, item, rating) triples.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(SEQUENCE_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.walk_length as u32).to_le_bytes())?;
        w.write_all(&(self.num_sequences as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.dataset_hash)?;
        w.write_all(&(self.per_pair.len() as u64).to_le_bytes())?;
        for sequences in &self.per_pair {
            for seq in sequences {
                w.write_all(&[seq.padded as u8])?;
                for step in &seq.steps {
                    w.write_all(&step.neighbor.to_le_bytes())?;
                    w.write_all(&step.item.to_le_bytes())?;
                    w.write_all(&step.rating.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, dataset: &RatingDataset) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                produced_by: "walks".into(),
            },
            _ => Error::Io(e),
        })?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SEQUENCE_MAGIC {
            return Err(Error::ArtifactMismatch(format!(
                "{} is not a sequence cache (bad magic)",
                path.display()
            )));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        if u32::from_le_bytes(buf4) != FORMAT_VERSION {
            return Err(Error::ArtifactMismatch("sequence cache version unsupported".into()));
        }
        r.read_exact(&mut buf4)?;
        let walk_length = u32::from_le_bytes(buf4) as usize;
        r.read_exact(&mut buf4)?;
        let num_sequences = u32::from_le_bytes(buf4) as usize;
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let seed = u64::from_le_bytes(buf8);
        let mut dataset_hash = [0u8; 32];
        r.read_exact(&mut dataset_hash)?;
        r.read_exact(&mut buf8)?;
        let n_pairs = u64::from_le_bytes(buf8) as usize;

        let mut per_pair = Vec::with_capacity(n_pairs);
        let mut flag = [0u8; 1];
        for idx in 0..n_pairs {
            let triple = dataset
                .triples
                .get(idx)
                .copied()
                .ok_or_else(|| Error::ArtifactMismatch("cache has more pairs than triples".into()))?;
            let mut sequences = Vec::with_capacity(num_sequences);
            for _ in 0..num_sequences {
                r.read_exact(&mut flag)?;
                let mut steps = Vec::with_capacity(walk_length);
                for _ in 0..walk_length {
                    r.read_exact(&mut buf4)?;
                    let neighbor = u32::from_le_bytes(buf4);
                    r.read_exact(&mut buf4)?;
                    let item = u32::from_le_bytes(buf4);
                    r.read_exact(&mut buf4)?;
                    let rating = u32::from_le_bytes(buf4);
                    steps.push(SequenceStep {
                        neighbor,
                        item,
                        rating,
                    });
                }
                sequences.push(ItemAwareSequence {
                    target_user: triple.user,
                    target_item: triple.item,
                    steps,
                    padded: flag[0] != 0,
                });
            }
            per_pair.push(sequences);
        }
        let set = Self {
            walk_length,
            num_sequences,
            seed,
            dataset_hash,
            per_pair,
        };
        set.check_compatible(dataset)?;
        Ok(set)
    }
}

/// Trains the neural matrix factorization and returns its item embeddings
/// (both branches concatenated) as the feature table.
pub fn pretrain_neumf(
    dataset: &RatingDataset,
    config: &NeumfConfig,
) -> Result<(ItemFeatureTable, NeumfOutcome)> {
    let outcome = train_neumf(dataset, config)?;
    let (values, dim) = outcome.model.item_features(&outcome.store);
    let table = ItemFeatureTable::new(values, dataset.n_items, dim, dataset.content_hash());
    Ok((table, outcome))
}

/// Cheaper fallback: item factors of a rank-d factorization.
pub fn pretrain_mf(dataset: &RatingDataset, config: &PmfConfig) -> Result<ItemFeatureTable> {
    let (model, _) = train_pmf(dataset, config)?;
    Ok(ItemFeatureTable::new(
        model.item_factors,
        dataset.n_items,
        config.rank,
        dataset.content_hash(),
    ))
}
