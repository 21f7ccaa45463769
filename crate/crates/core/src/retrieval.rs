//! Deterministic retrieval plumbing: a hashing text embedder, an exact
//! inner-product index with seeded tie-breaking, per-country retrieval seeds,
//! and seeded k-means exemplar selection over headline snapshots.
//!
//! Everything here is a pure function of its inputs plus explicit seeds, so
//! index files and selected context replay byte-identically.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::HeadlineSnapshot;
use crate::provenance::sha256_hex;

/// Embedding width of the bundled hashing embedder.
pub const EMBED_DIM: usize = 64;

/// Number of exemplar headlines selected into a prompt.
pub const EXEMPLAR_K: usize = 20;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate index key {0}")]
    DuplicateKey(String),
    #[error("vector for {key} has dimension {got}, index expects {want}")]
    DimensionMismatch { key: String, got: usize, want: usize },
    #[error("vector for {0} has zero norm")]
    ZeroVector(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index file {path}: {msg}")]
    BadIndexFile { path: PathBuf, msg: String },
}

/// Text to unit vector. Implementations must be deterministic; the weights
/// hash identifies the embedding function in manifests.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
    fn provider_id(&self) -> &'static str;
    fn weights_hash(&self) -> String;
}

/// Feature-hashing embedder: lowercased alphanumeric tokens are hashed with
/// SHA-256 into signed buckets (the token multiset, so repeated tokens add),
/// then the vector is unit-normalized. Empty or unseen text maps to a fixed
/// basis vector so the unit-norm contract always holds.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: EMBED_DIM }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        HashEmbedder { dim }
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0f64; self.dim];
        for token in tokens(text) {
            let digest = Sha256::digest(token.as_bytes());
            let bucket = (u64::from_be_bytes(digest[0..8].try_into().expect("8 bytes")) % self.dim as u64) as usize;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }

    fn provider_id(&self) -> &'static str {
        "hash-embedder-v1"
    }

    fn weights_hash(&self) -> String {
        sha256_hex(format!("hash-embedder-v1:dim={}", self.dim).as_bytes())
    }
}

/// Per-country retrieval seed: the first 8 bytes, big-endian, of
/// SHA-256(country "|" utc_date).
pub fn retrieval_seed(country: &str, utc_date: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(country.as_bytes());
    hasher.update(b"|");
    hasher.update(utc_date.as_bytes());
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[0..8].try_into().expect("8 bytes"))
}

/// One retrieval hit.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub key: String,
    pub score: f64,
}

/// Result of a top-k query; `truncated` is set when fewer than `k` entries
/// exist in the index.
#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub hits: Vec<Hit>,
    pub truncated: bool,
}

/// Exact inner-product index over unit vectors. Exhaustive scan; equal scores
/// are ordered by a permutation drawn from `tie_seed`, then by key.
#[derive(Debug, Clone)]
pub struct FlatIndex {
    keys: Vec<String>,
    vectors: Vec<f64>,
    dim: usize,
    tie_seed: u64,
    weights_hash: String,
    tie_order: Vec<usize>,
}

fn tie_permutation(n: usize, tie_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(tie_seed);
    // Fisher-Yates with explicit u64 draws for cross-version stability.
    for i in (1..n).rev() {
        let j = (rng.random::<u64>() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let mut rank = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        rank[idx] = pos;
    }
    rank
}

impl FlatIndex {
    /// Build from (key, vector) pairs; vectors are normalized to unit length.
    pub fn build(
        entries: &[(String, Vec<f64>)],
        tie_seed: u64,
        weights_hash: &str,
    ) -> Result<Self, RetrievalError> {
        let dim = entries.first().map_or(EMBED_DIM, |(_, v)| v.len());
        let mut seen = BTreeSet::new();
        let mut keys = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        for (key, vector) in entries {
            if !seen.insert(key.clone()) {
                return Err(RetrievalError::DuplicateKey(key.clone()));
            }
            if vector.len() != dim {
                return Err(RetrievalError::DimensionMismatch { key: key.clone(), got: vector.len(), want: dim });
            }
            let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(RetrievalError::ZeroVector(key.clone()));
            }
            keys.push(key.clone());
            vectors.extend(vector.iter().map(|x| x / norm));
        }
        let tie_order = tie_permutation(keys.len(), tie_seed);
        Ok(FlatIndex { keys, vectors, dim, tie_seed, weights_hash: weights_hash.to_string(), tie_order })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tie_seed(&self) -> u64 {
        self.tie_seed
    }

    pub fn weights_hash(&self) -> &str {
        &self.weights_hash
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Exhaustive top-k by inner product, descending. Exactly equal scores are
    /// ordered by the seeded permutation, then by key. Asking for more entries
    /// than exist returns everything with `truncated = true`.
    pub fn top_k(&self, query: &[f64], k: usize) -> TopK {
        self.top_k_filtered(query, k, |_| true)
    }

    /// `top_k` restricted to keys accepted by `keep` (used to exclude the query
    /// document itself).
    pub fn top_k_filtered(&self, query: &[f64], k: usize, keep: impl Fn(&str) -> bool) -> TopK {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| keep(&self.keys[i]))
            .map(|i| {
                let score: f64 = self.row(i).iter().zip(query).map(|(a, b)| a * b).sum();
                (i, score)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.tie_order[a.0].cmp(&self.tie_order[b.0]))
                .then_with(|| self.keys[a.0].cmp(&self.keys[b.0]))
        });
        let truncated = k > scored.len();
        scored.truncate(k);
        TopK {
            hits: scored
                .into_iter()
                .map(|(i, score)| Hit { key: self.keys[i].clone(), score })
                .collect(),
            truncated,
        }
    }

    /// Persist as a little-endian binary: header (dim, count, tie seed, weights
    /// hash), the keys, then row-major f64 vectors.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let io = |source| RetrievalError::Io { path: path.to_path_buf(), source };
        let mut out = Vec::with_capacity(32 + self.vectors.len() * 8);
        out.extend_from_slice(b"SLFI");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.tie_seed.to_le_bytes());
        let wh = self.weights_hash.as_bytes();
        out.extend_from_slice(&(wh.len() as u32).to_le_bytes());
        out.extend_from_slice(wh);
        for key in &self.keys {
            let kb = key.as_bytes();
            out.extend_from_slice(&(kb.len() as u32).to_le_bytes());
            out.extend_from_slice(kb);
        }
        for x in &self.vectors {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(&out).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let io = |source| RetrievalError::Io { path: path.to_path_buf(), source };
        let bad = |msg: &str| RetrievalError::BadIndexFile { path: path.to_path_buf(), msg: msg.to_string() };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], RetrievalError> {
            if pos + n > bytes.len() {
                return Err(RetrievalError::BadIndexFile {
                    path: path.to_path_buf(),
                    msg: "unexpected end of file".into(),
                });
            }
            let slice = &bytes[pos..pos + n];
            pos += n;
            Ok(slice)
        };
        if take(4)? != b"SLFI" {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != 1 {
            return Err(bad("unsupported version"));
        }
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let tie_seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let wh_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let weights_hash = String::from_utf8(take(wh_len)?.to_vec()).map_err(|_| bad("weights hash not utf-8"))?;
        let mut keys = Vec::with_capacity(n);
        for _ in 0..n {
            let klen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            keys.push(String::from_utf8(take(klen)?.to_vec()).map_err(|_| bad("key not utf-8"))?);
        }
        let mut vectors = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            vectors.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let tie_order = tie_permutation(n, tie_seed);
        Ok(FlatIndex { keys, vectors, dim, tie_seed, weights_hash, tie_order })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means over points (k-means++-style init, at most 50 iterations,
/// centroid-movement tolerance 1e-9). Empty clusters are repaired by moving the
/// farthest member out of the largest cluster, so with `n >= k` every cluster
/// ends non-empty. Returns (centroids, assignment per point).
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    assert!(k >= 1 && points.len() >= k, "kmeans needs at least k points");
    let n = points.len();
    let dim = points[0].len();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[(rng.random::<u64>() % n as u64) as usize].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass is zero (duplicate points): take indices round-robin.
            (rng.random::<u64>() % n as u64) as usize
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, centroids.last().expect("just pushed"));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _round in 0..50 {
        // Assign each point to the nearest centroid; ties go to the lowest index.
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }

        // Repair empty clusters: donate the farthest member of the largest cluster.
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for empty in 0..k {
            while sizes[empty] == 0 {
                let donor = (0..k).max_by_key(|&c| sizes[c]).expect("k >= 1");
                let (far_idx, _) = points
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| assignment[*i] == donor)
                    .map(|(i, p)| (i, sq_dist(p, &centroids[donor])))
                    .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                    .expect("donor is non-empty");
                assignment[far_idx] = empty;
                sizes[donor] -= 1;
                sizes[empty] += 1;
            }
        }

        // Update step.
        let mut new_centroids = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for (slot, x) in new_centroids[c].iter_mut().zip(p) {
                *slot += x;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            for slot in new_centroids[c].iter_mut() {
                *slot /= counts[c] as f64;
            }
            movement = movement.max(sq_dist(&new_centroids[c], &centroids[c]).sqrt());
        }
        centroids = new_centroids;
        if movement < 1e-9 {
            break;
        }
    }

    // Final assignment against the converged centroids, with empty-cluster repair.
    for (i, p) in points.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignment[i] = best;
    }
    let mut sizes = vec![0usize; k];
    for &a in &assignment {
        sizes[a] += 1;
    }
    for empty in 0..k {
        while sizes[empty] == 0 {
            let donor = (0..k).max_by_key(|&c| sizes[c]).expect("k >= 1");
            let (far_idx, _) = points
                .iter()
                .enumerate()
                .filter(|(i, _)| assignment[*i] == donor)
                .map(|(i, p)| (i, sq_dist(p, &centroids[donor])))
                .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .expect("donor is non-empty");
            assignment[far_idx] = empty;
            sizes[donor] -= 1;
            sizes[empty] += 1;
        }
    }

    (centroids, assignment)
}

/// Pick up to `k` diverse real headlines from a snapshot: embed the real rows,
/// cluster with seeded k-means, and take each cluster's member closest to its
/// centroid (lexicographically smallest title on exact ties). With `k` or fewer
/// real rows, all of them are returned. Pad rows are never candidates. Output
/// preserves snapshot order.
pub fn select_diverse_headlines(
    snapshot: &HeadlineSnapshot,
    embedder: &dyn EmbeddingProvider,
    k: usize,
    seed: u64,
) -> Vec<String> {
    let real: Vec<&str> = snapshot.real_rows().map(|h| h.title.as_str()).collect();
    if k == 0 {
        return Vec::new();
    }
    if real.len() <= k {
        return real.iter().map(|t| t.to_string()).collect();
    }
    let points: Vec<Vec<f64>> = real.iter().map(|t| embedder.embed(t)).collect();
    let (centroids, assignment) = kmeans(&points, k, seed);

    let mut selected: Vec<usize> = Vec::with_capacity(k);
    for c in 0..k {
        let exemplar = (0..real.len())
            .filter(|&i| assignment[i] == c)
            .min_by(|&a, &b| {
                sq_dist(&points[a], &centroids[c])
                    .total_cmp(&sq_dist(&points[b], &centroids[c]))
                    .then_with(|| real[a].cmp(real[b]))
            })
            .expect("clusters are non-empty after repair");
        selected.push(exemplar);
    }
    selected.sort_unstable();
    selected.dedup();
    selected.into_iter().map(|i| real[i].to_string()).collect()
}
