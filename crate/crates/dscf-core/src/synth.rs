//! Synthetic dataset generators for experiments and tests.
//!
//! `homophily` plants the structure the social model should exploit: users
//! sit in a sparse friendship graph, items belong to clusters, and each
//! user's per-cluster preference is diffused over the graph for a few
//! rounds, so friends (and to a lesser degree friends-of-friends) share
//! tastes while distant users stay uncorrelated. A user's rating is then a
//! noisy readout of their preference for the item's cluster, which makes a
//! friend's rating on a similar item the best available signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{IdMap, Ratings, RatingTriple, TrustEdge};
use crate::nn::mix_seed;
use crate::Result;

/// Uniform random ratings over unique (user, item) pairs.
pub fn random_ratings(
    n_users: usize,
    n_items: usize,
    n_triples: usize,
    n_levels: usize,
    seed: u64,
) -> Ratings {
    assert!(n_triples <= n_users * n_items, "too many triples requested");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut triples = Vec::with_capacity(n_triples);
    while triples.len() < n_triples {
        let user = rng.gen_range(0..n_users) as u32;
        let item = rng.gen_range(0..n_items) as u32;
        if seen.insert((user, item)) {
            triples.push(RatingTriple {
                user,
                item,
                rating: rng.gen_range(1..=n_levels) as u32,
            });
        }
    }
    Ratings {
        n_users,
        n_items,
        n_levels,
        triples,
        users: IdMap::dense(n_users),
        items: IdMap::dense(n_items),
    }
}

/// Random undirected friendships: each user draws `per_user` distinct partners.
pub fn random_trust(n_users: usize, per_user: usize, seed: u64) -> Vec<TrustEdge> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();
    for u in 0..n_users as u32 {
        let mut picked = 0;
        let mut attempts = 0;
        while picked < per_user && attempts < 20 * per_user {
            attempts += 1;
            let v = rng.gen_range(0..n_users) as u32;
            if v == u {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                edges.push(TrustEdge { source: key.0, target: key.1 });
                picked += 1;
            }
        }
    }
    edges
}

/// Parameters of the planted-homophily generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomophilyConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    /// Users per taste community. Friends come mostly from the same
    /// community, so preferences correlate along edges and the correlation
    /// decays as walks leak across communities.
    pub community_size: usize,
    /// Friendship draws per user inside the community; mean degree is about
    /// twice this.
    pub intra_edges_per_user: usize,
    /// Chance that a user also draws one edge to another community.
    pub cross_link_prob: f64,
    /// Clusters each user rates in; coverage per cluster stays thin so the
    /// target user's own history rarely explains a held-out pair.
    pub clusters_per_user: usize,
    pub ratings_per_user: usize,
    /// Weight of the per-(community, item) effect on top of the cluster
    /// preference. This part is shared with friends but too fine-grained to
    /// interpolate from embeddings alone.
    pub item_effect: f64,
    /// Picks items to rate proportionally to exp(sharpness * preference),
    /// so the mere presence of an interaction carries opinion.
    pub selection_sharpness: f64,
    /// Standard deviation of the rating noise.
    pub noise: f64,
    pub n_levels: usize,
    pub seed: u64,
}

impl Default for HomophilyConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 300,
            n_clusters: 10,
            community_size: 12,
            intra_edges_per_user: 2,
            cross_link_prob: 0.10,
            clusters_per_user: 2,
            ratings_per_user: 25,
            item_effect: 0.8,
            selection_sharpness: 1.0,
            noise: 0.3,
            n_levels: 5,
            seed: 0,
        }
    }
}

/// Generated ratings plus the friendship edges that produced them.
pub struct HomophilyDataset {
    pub ratings: Ratings,
    pub trust: Vec<TrustEdge>,
}

/// Plants homophily: each community shares a per-cluster preference table
/// drawn over the full rating scale, and a user's rating is that preference
/// plus noise. Friends' opinions on similar items are therefore the most
/// direct predictor available.
pub fn homophily(config: &HomophilyConfig) -> HomophilyDataset {
    let c = config;
    assert!(c.n_clusters >= 1 && c.clusters_per_user <= c.n_clusters);
    assert!(c.community_size >= 2);
    let n_communities = c.n_users.div_ceil(c.community_size);
    let community_of = |u: usize| u / c.community_size;

    // Friendships: a few partners inside the community, an occasional
    // cross-community link.
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(c.seed, 1));
    let mut seen = std::collections::HashSet::new();
    let mut trust = Vec::new();
    let add_edge = |seen: &mut std::collections::HashSet<(u32, u32)>,
                    trust: &mut Vec<TrustEdge>,
                    a: u32,
                    b: u32| {
        if a == b {
            return false;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            trust.push(TrustEdge {
                source: key.0,
                target: key.1,
            });
            true
        } else {
            false
        }
    };
    for u in 0..c.n_users {
        let g = community_of(u);
        let lo = g * c.community_size;
        let hi = ((g + 1) * c.community_size).min(c.n_users);
        let mut picked = 0;
        let mut attempts = 0;
        while picked < c.intra_edges_per_user && attempts < 50 {
            attempts += 1;
            let v = rng.gen_range(lo..hi);
            if add_edge(&mut seen, &mut trust, u as u32, v as u32) {
                picked += 1;
            }
        }
        if rng.gen::<f64>() < c.cross_link_prob {
            let v = rng.gen_range(0..c.n_users);
            if community_of(v) != g {
                add_edge(&mut seen, &mut trust, u as u32, v as u32);
            }
        }
    }

    // Community preferences: a by-cluster table over the full rating scale
    // plus a finer per-item effect shared inside the community.
    let mut pref_rng = ChaCha8Rng::seed_from_u64(mix_seed(c.seed, 2));
    let hi = c.n_levels as f64;
    let cluster_pref: Vec<f64> = (0..n_communities * c.n_clusters)
        .map(|_| pref_rng.gen_range(1.0..=hi))
        .collect();
    let item_pref: Vec<f64> = (0..n_communities * c.n_items)
        .map(|_| gaussian(&mut pref_rng) * c.item_effect)
        .collect();
    let cluster_of = |item: usize| item % c.n_clusters;
    let pref = |g: usize, item: usize| -> f64 {
        cluster_pref[g * c.n_clusters + cluster_of(item)] + item_pref[g * c.n_items + item]
    };

    let mut items_by_cluster = vec![Vec::new(); c.n_clusters];
    for item in 0..c.n_items {
        items_by_cluster[cluster_of(item)].push(item as u32);
    }

    let mut triples = Vec::new();
    let mut seen_pairs = std::collections::HashSet::new();
    for u in 0..c.n_users {
        let mut user_rng = ChaCha8Rng::seed_from_u64(mix_seed(c.seed, 100 + u as u64));
        let mut clusters: Vec<usize> = (0..c.n_clusters).collect();
        clusters.shuffle(&mut user_rng);
        clusters.truncate(c.clusters_per_user);
        let g = community_of(u);

        // Preference-weighted choice over the user's active-cluster items.
        let pool: Vec<u32> = clusters
            .iter()
            .flat_map(|&k| items_by_cluster[k].iter().copied())
            .collect();
        let weights: Vec<f64> = pool
            .iter()
            .map(|&i| (c.selection_sharpness * pref(g, i as usize)).exp())
            .collect();
        let total: f64 = weights.iter().sum();

        for _ in 0..c.ratings_per_user {
            let mut draw = user_rng.gen_range(0.0..total);
            let mut chosen = pool[pool.len() - 1];
            for (i, w) in pool.iter().zip(&weights) {
                if draw < *w {
                    chosen = *i;
                    break;
                }
                draw -= w;
            }
            if !seen_pairs.insert((u as u32, chosen)) {
                continue;
            }
            let noise = gaussian(&mut user_rng) * c.noise;
            let value = pref(g, chosen as usize) + noise;
            let rating = value.round().clamp(1.0, hi) as u32;
            triples.push(RatingTriple {
                user: u as u32,
                item: chosen,
                rating,
            });
        }
    }

    HomophilyDataset {
        ratings: Ratings {
            n_users: c.n_users,
            n_items: c.n_items,
            n_levels: c.n_levels,
            triples,
            users: IdMap::dense(c.n_users),
            items: IdMap::dense(c.n_items),
        },
        trust,
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Writes the generated data in the canonical TSV ingest format.
pub fn save_tsv(dataset: &HomophilyDataset, ratings_path: &Path, trust_path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(ratings_path)?);
    for t in &dataset.ratings.triples {
        writeln!(w, "{}\t{}\t{}", t.user, t.item, t.rating)?;
    }
    w.flush()?;
    let mut w = BufWriter::new(File::create(trust_path)?);
    for e in &dataset.trust {
        writeln!(w, "{}\t{}", e.source, e.target)?;
    }
    w.flush()?;
    Ok(())
}
