//! Social network over users and fixed-length random-walk sequences.
//!
//! Walks take uniform steps over the current node's neighbors and run for
//! exactly `length` steps; the root itself is not an element of the emitted
//! sequence. A node without neighbors stalls the walk: the remaining steps
//! repeat the last visited user and the sequence is flagged as padded.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::data::TrustEdge;
use crate::{Error, Result};

/// Adjacency over users built from the trust edges.
#[derive(Debug, Clone)]
pub struct SocialGraph {
    n_users: usize,
    adjacency: Vec<Vec<u32>>,
}

/// A fixed-length walk rooted at (but not containing) `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub root: u32,
    pub steps: Vec<u32>,
    /// True when the walk stalled (or the root was isolated) and the tail
    /// repeats the last visited user.
    pub padded: bool,
}

impl SocialGraph {
    /// Builds the deduplicated adjacency. In undirected mode each edge is
    /// inserted both ways.
    pub fn build(edges: &[TrustEdge], n_users: usize, directed: bool) -> Self {
        let mut adjacency = vec![Vec::new(); n_users];
        for e in edges {
            debug_assert!(
                (e.source as usize) < n_users && (e.target as usize) < n_users,
                "edge ({}, {}) out of range for {} users",
                e.source,
                e.target,
                n_users
            );
            adjacency[e.source as usize].push(e.target);
            if !directed {
                adjacency[e.target as usize].push(e.source);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { n_users, adjacency }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn neighbors(&self, user: u32) -> &[u32] {
        &self.adjacency[user as usize]
    }

    pub fn degree(&self, user: u32) -> usize {
        self.adjacency[user as usize].len()
    }

    pub fn has_edge(&self, from: u32, to: u32) -> bool {
        self.adjacency[from as usize].binary_search(&to).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|a| a.len()).sum()
    }

    pub fn isolated_count(&self) -> usize {
        self.adjacency.iter().filter(|a| a.is_empty()).count()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n_users == 0 {
            return 0.0;
        }
        self.edge_count() as f64 / self.n_users as f64
    }

    /// Checks that every non-padded transition of `seq` (including root to
    /// first step) is an edge of this graph.
    pub fn is_legal_walk(&self, seq: &UserSequence) -> bool {
        if seq.steps.is_empty() {
            return false;
        }
        if seq.padded && self.degree(seq.root) == 0 {
            // Isolated root: fully padded sequence of the root itself.
            return seq.steps.iter().all(|&s| s == seq.root);
        }
        let mut current = seq.root;
        for &next in &seq.steps {
            if next == current && self.degree(current) == 0 {
                continue; // stalled tail
            }
            if !self.has_edge(current, next) {
                return false;
            }
            current = next;
        }
        true
    }
}

/// One uniform random walk of exactly `length` steps from `root`.
pub fn random_walk<R: Rng>(
    graph: &SocialGraph,
    root: u32,
    length: usize,
    rng: &mut R,
) -> Result<UserSequence> {
    if (root as usize) >= graph.n_users() {
        return Err(Error::Domain(format!(
            "walk root {} out of range for {} users",
            root,
            graph.n_users()
        )));
    }
    assert!(length >= 1, "walk length must be at least 1");
    let mut steps = Vec::with_capacity(length);
    let mut padded = false;
    let mut current = root;
    for _ in 0..length {
        let nbrs = graph.neighbors(current);
        if nbrs.is_empty() {
            padded = true;
            steps.push(current);
            continue;
        }
        current = nbrs[rng.gen_range(0..nbrs.len())];
        steps.push(current);
    }
    Ok(UserSequence {
        root,
        steps,
        padded,
    })
}

/// Dumps a walk corpus: one walk per line as space-separated user IDs, with
/// a header comment recording the seed and length.
pub fn save_walk_corpus(
    walks: &[UserSequence],
    seed: u64,
    length: usize,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# seed={} length={}", seed, length)?;
    for walk in walks {
        let line: Vec<String> = walk.steps.iter().map(|s| s.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edges(pairs: &[(u32, u32)]) -> Vec<TrustEdge> {
        pairs
            .iter()
            .map(|&(source, target)| TrustEdge { source, target })
            .collect()
    }

    #[test]
    fn build_dedupes_and_symmetrizes() {
        let g = SocialGraph::build(&edges(&[(1, 2), (2, 1), (1, 3)]), 4, false);
        assert_eq!(g.neighbors(1), &[2, 3]);
        assert_eq!(g.neighbors(2), &[1]);
        assert_eq!(g.neighbors(3), &[1]);
        assert_eq!(g.neighbors(0), &[] as &[u32]);
    }

    #[test]
    fn directed_mode_keeps_one_way_edges() {
        let g = SocialGraph::build(&edges(&[(0, 1)]), 2, true);
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(1, 0));
    }

    #[test]
    fn empty_edge_list_gives_empty_adjacency() {
        let g = SocialGraph::build(&[], 3, false);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.isolated_count(), 3);
    }

    #[test]
    fn first_walk_step_is_a_direct_neighbor() {
        // Chain fragment: the walk's first element must be adjacent to the root.
        let g = SocialGraph::build(&edges(&[(1, 2), (2, 3), (3, 6), (6, 7)]), 8, false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let walk = random_walk(&g, 1, 4, &mut rng).unwrap();
            assert!(g.has_edge(1, walk.steps[0]));
        }
        // The published example route is one legal walk of length 4 from u1.
        let example = UserSequence {
            root: 1,
            steps: vec![2, 3, 6, 7],
            padded: false,
        };
        assert!(g.is_legal_walk(&example));
    }

    #[test]
    fn star_leaf_walk_alternates_with_center() {
        let g = SocialGraph::build(&edges(&[(0, 1)]), 2, false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let walk = random_walk(&g, 0, 3, &mut rng).unwrap();
        assert_eq!(walk.steps, vec![1, 0, 1]);
        assert!(!walk.padded);
        assert!(g.is_legal_walk(&walk));
    }

    #[test]
    fn isolated_root_emits_fully_padded_walk() {
        let g = SocialGraph::build(&edges(&[(1, 2)]), 4, false);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let walk = random_walk(&g, 3, 5, &mut rng).unwrap();
        assert!(walk.padded);
        assert_eq!(walk.steps, vec![3, 3, 3, 3, 3]);
        assert!(g.is_legal_walk(&walk));
    }

    #[test]
    fn stalled_walk_repeats_last_visited_user() {
        // 0 - 1 and nothing out of 1 in directed mode.
        let g = SocialGraph::build(&edges(&[(0, 1)]), 3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let walk = random_walk(&g, 0, 4, &mut rng).unwrap();
        assert_eq!(walk.steps, vec![1, 1, 1, 1]);
        assert!(walk.padded);
    }

    #[test]
    fn walk_root_out_of_range_is_a_domain_error() {
        let g = SocialGraph::build(&[], 2, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(matches!(
            random_walk(&g, 5, 2, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn walks_are_reproducible_under_seed() {
        let g = SocialGraph::build(&edges(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]), 4, false);
        let a = random_walk(&g, 0, 10, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        let b = random_walk(&g, 0, 10, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corpus_dump_has_header_and_one_walk_per_line() {
        let g = SocialGraph::build(&edges(&[(0, 1), (1, 2)]), 3, false);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let walks: Vec<_> = (0..4)
            .map(|_| random_walk(&g, 0, 3, &mut rng).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("walks.txt");
        save_walk_corpus(&walks, 10, 3, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "# seed=10 length=3");
        assert_eq!(lines[1].split(' ').count(), 3);
    }
}
