//! Unsupervised extractive baseline: sentence vectors, medoid clustering,
//! and ratio-controlled selection of the medoid sentences.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a;
use crate::model::Matrix;
use crate::registry::Registry;
use crate::tokenizer::normalize;

pub const DEFAULT_EMBED_DIM: usize = 768;
pub const MAX_ITERATIONS: usize = 100;
pub const DEFAULT_RESTARTS: usize = 10;

const ABBREVIATIONS: &[&str] = &[
    "al", "approx", "ca", "cf", "dr", "e.g", "eq", "etc", "fig", "figs", "i.e", "inc", "jr", "mr",
    "mrs", "ms", "no", "prof", "ref", "sr", "st", "vs",
];

fn is_abbreviation(before: &str) -> bool {
    let word = before
        .rsplit(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or("");
    // Single capital initials such as "J." are abbreviations too.
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
        || (word.chars().count() == 1 && word.chars().all(char::is_uppercase))
}

/// Splits at `.`, `!` or `?` followed by whitespace and an uppercase letter,
/// unless the period closes a known abbreviation. Returned sentences are
/// trimmed slices of `text`.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (n, &(pos, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut m = n + 1;
        while m < chars.len() && chars[m].1.is_whitespace() {
            m += 1;
        }
        if m == n + 1 || m >= chars.len() || !chars[m].1.is_uppercase() {
            continue;
        }
        if c == '.' && is_abbreviation(&text[start..pos]) {
            continue;
        }
        let end = pos + c.len_utf8();
        push_trimmed(&mut out, &text[start..end]);
        start = chars[m].0;
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbeddings {
    pub sentences: Vec<String>,
    /// `[n_sentences × d_embed]`.
    pub vectors: Matrix,
}

impl SentenceEmbeddings {
    pub fn new(sentences: Vec<String>, vectors: Matrix) -> Result<Self> {
        if vectors.rows != sentences.len() {
            return Err(Error::input(format!(
                "{} vectors for {} sentences",
                vectors.rows,
                sentences.len()
            )));
        }
        if vectors.cols == 0 {
            return Err(Error::input("embedding dimension must be at least 1"));
        }
        if let Some(i) = (0..vectors.rows).find(|&i| !vectors.row(i).iter().all(|v| v.is_finite())) {
            return Err(Error::Embedding {
                index: i,
                reason: "non-finite component".into(),
            });
        }
        Ok(Self { sentences, vectors })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols
    }
}

/// Maps sentences to fixed-width vectors.
pub trait SentenceEncoder: Send + Sync {
    fn name(&self) -> &'static str;
    fn embed(&self, sentences: &[String]) -> Result<SentenceEmbeddings>;
}

/// L2-normalised term-frequency vectors over FNV-1a hashed buckets.
pub struct HashingEncoder {
    pub dim: usize,
}

impl HashingEncoder {
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl SentenceEncoder for HashingEncoder {
    fn name(&self) -> &'static str {
        "hashing"
    }

    fn embed(&self, sentences: &[String]) -> Result<SentenceEmbeddings> {
        let mut m = Matrix::zeros(sentences.len(), self.dim);
        for (i, s) in sentences.iter().enumerate() {
            let row = m.row_mut(i);
            for tok in normalize(s) {
                row[self.bucket(&tok)] += 1.0;
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        SentenceEmbeddings::new(sentences.to_vec(), m)
    }
}

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Sidecar holding one sentence per line, parallel to the vector file.
pub fn sentences_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".sentences");
    PathBuf::from(s)
}

/// Writes `"EMB1"`, `n` and `d` as u32 LE, then `n·d` f32 LE values, plus
/// the sentence sidecar.
pub fn write_embeddings(path: &Path, emb: &SentenceEmbeddings) -> Result<()> {
    if emb.sentences.iter().any(|s| s.contains('\n')) {
        return Err(Error::input("sentences in an embedding file cannot contain newlines"));
    }
    let mut buf = Vec::with_capacity(12 + emb.vectors.len() * 4);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(emb.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(emb.dim() as u32).to_le_bytes());
    for &v in &emb.vectors.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let side = sentences_sidecar(path);
    let mut text = emb.sentences.join("\n");
    text.push('\n');
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_embeddings(path: &Path) -> Result<SentenceEmbeddings> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(bad("missing EMB1 header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + n * d * 4 {
        return Err(bad(format!("expected {} bytes of vectors for {n}×{d}", n * d * 4)));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let side = sentences_sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sentences: Vec<String> = text.lines().map(str::to_string).collect();
    if sentences.len() != n {
        return Err(bad(format!("{} sentences in sidecar for {n} vectors", sentences.len())));
    }
    SentenceEmbeddings::new(sentences, Matrix::from_vec(n, d, data))
}

/// Looks sentences up in vectors computed elsewhere.
pub struct PrecomputedEncoder {
    index: HashMap<String, usize>,
    store: SentenceEmbeddings,
}

impl PrecomputedEncoder {
    pub fn new(store: SentenceEmbeddings) -> Self {
        let mut index = HashMap::new();
        for (i, s) in store.sentences.iter().enumerate() {
            index.entry(s.trim().to_string()).or_insert(i);
        }
        Self { index, store }
    }

    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self::new(read_embeddings(path)?))
    }
}

impl SentenceEncoder for PrecomputedEncoder {
    fn name(&self) -> &'static str {
        "precomputed"
    }

    fn embed(&self, sentences: &[String]) -> Result<SentenceEmbeddings> {
        let d = self.store.dim();
        let mut m = Matrix::zeros(sentences.len(), d);
        for (i, s) in sentences.iter().enumerate() {
            let &j = self.index.get(s.trim()).ok_or_else(|| Error::Embedding {
                index: i,
                reason: "sentence not present in the precomputed file".into(),
            })?;
            m.row_mut(i).copy_from_slice(self.store.vectors.row(j));
        }
        SentenceEmbeddings::new(sentences.to_vec(), m)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EncoderArgs {
    pub dim: Option<usize>,
    pub path: Option<PathBuf>,
}

pub fn encoders() -> Registry<dyn SentenceEncoder, EncoderArgs> {
    let mut r: Registry<dyn SentenceEncoder, EncoderArgs> = Registry::new("sentence encoder");
    r.register("hashing", |a| {
        let dim = a.dim.unwrap_or(DEFAULT_EMBED_DIM);
        if dim == 0 {
            return Err(Error::config("embedding dimension must be at least 1"));
        }
        Ok(Box::new(HashingEncoder { dim }))
    });
    r.register("precomputed", |a| {
        let path = a
            .path
            .as_deref()
            .ok_or_else(|| Error::config("the precomputed encoder needs an embeddings path"))?;
        Ok(Box::new(PrecomputedEncoder::open(path)?))
    });
    r
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    Cosine,
}

impl Distance {
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Distance::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            _ => Err(Error::config(format!("unknown distance {s:?} (euclidean, cosine)"))),
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::Euclidean => "euclidean",
            Distance::Cosine => "cosine",
        })
    }
}

pub fn distance_matrix(points: &Matrix, distance: Distance) -> Vec<Vec<f64>> {
    let n = points.rows;
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = distance.between(points.row(i), points.row(j));
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Point index of each cluster's representative.
    pub medoids: Vec<usize>,
    /// Cluster id (index into `medoids`) per point.
    pub assignment: Vec<usize>,
    /// Sum of member-to-medoid distances.
    pub cost: f64,
    /// Cost after every assignment step, first to last.
    pub cost_history: Vec<f64>,
}

/// Sum over points of the distance to their nearest medoid.
pub fn medoid_cost(dist: &[Vec<f64>], medoids: &[usize]) -> f64 {
    (0..dist.len())
        .map(|i| medoids.iter().map(|&m| dist[i][m]).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Nearest medoid per point (lowest cluster id on ties); a medoid always
/// belongs to its own cluster.
fn assign(dist: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assignment = (0..dist.len())
        .map(|i| {
            if let Some(c) = medoids.iter().position(|&m| m == i) {
                return c;
            }
            let mut best = 0;
            for c in 1..medoids.len() {
                if dist[i][medoids[c]] < dist[i][medoids[best]] {
                    best = c;
                }
            }
            best
        })
        .collect::<Vec<_>>();
    for (i, &c) in assignment.iter().enumerate() {
        cost += dist[i][medoids[c]];
    }
    (assignment, cost)
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::OutOfRange(format!("k = {k} must be between 1 and {n} points")));
    }
    Ok(())
}

/// One seeded run of alternating K-medoid: assign to the nearest medoid,
/// then move each medoid to the member with the least summed distance to
/// its cluster, until nothing changes or `MAX_ITERATIONS` passes.
pub fn k_medoid(dist: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    let n = dist.len();
    check_k(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids: Vec<usize> = sample(&mut rng, n, k).into_vec();
    let mut history = Vec::new();
    let (mut assignment, mut cost) = assign(dist, &medoids);
    history.push(cost);
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (c, medoid) in medoids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            let within = |cand: usize| members.iter().map(|&i| dist[cand][i]).sum::<f64>();
            let mut best = *medoid;
            let mut best_cost = within(best);
            for &cand in &members {
                let v = within(cand);
                if v < best_cost {
                    best = cand;
                    best_cost = v;
                }
            }
            if best != *medoid {
                *medoid = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        (assignment, cost) = assign(dist, &medoids);
        history.push(cost);
    }
    Ok(Clustering {
        medoids,
        assignment,
        cost,
        cost_history: history,
    })
}

/// Groups points and names one representative point per group.
pub trait Clusterer: Send + Sync {
    fn name(&self) -> &'static str;
    fn cluster(&self, points: &Matrix, k: usize, distance: Distance, seed: u64) -> Result<Clustering>;
}

/// K-medoid with several seeded restarts; the cheapest run wins.
pub struct Pam {
    pub restarts: usize,
}

impl Clusterer for Pam {
    fn name(&self) -> &'static str {
        "pam"
    }

    fn cluster(&self, points: &Matrix, k: usize, distance: Distance, seed: u64) -> Result<Clustering> {
        let dist = distance_matrix(points, distance);
        let mut best: Option<Clustering> = None;
        for r in 0..self.restarts.max(1) {
            let run = k_medoid(&dist, k, seed.wrapping_add(r as u64))?;
            if best.as_ref().is_none_or(|b| run.cost < b.cost) {
                best = Some(run);
            }
        }
        Ok(best.expect("at least one restart"))
    }
}

/// Lloyd's k-means, then the distinct data point nearest each centroid.
pub struct KMeansNearest;

impl Clusterer for KMeansNearest {
    fn name(&self) -> &'static str {
        "kmeans"
    }

    fn cluster(&self, points: &Matrix, k: usize, distance: Distance, seed: u64) -> Result<Clustering> {
        let (n, d) = (points.rows, points.cols);
        check_k(n, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids: Vec<Vec<f64>> = sample(&mut rng, n, k)
            .into_iter()
            .map(|i| points.row(i).to_vec())
            .collect();
        let nearest = |p: &[f64], cs: &[Vec<f64>]| {
            let mut best = 0;
            for c in 1..cs.len() {
                if distance.between(p, &cs[c]) < distance.between(p, &cs[best]) {
                    best = c;
                }
            }
            best
        };
        let mut labels: Vec<usize> = (0..n).map(|i| nearest(points.row(i), &centroids)).collect();
        for _ in 0..MAX_ITERATIONS {
            for (c, centroid) in centroids.iter_mut().enumerate() {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                centroid.iter_mut().for_each(|v| *v = 0.0);
                for &i in &members {
                    for (v, x) in centroid.iter_mut().zip(points.row(i)) {
                        *v += x;
                    }
                }
                centroid.iter_mut().for_each(|v| *v /= members.len() as f64);
            }
            let next: Vec<usize> = (0..n).map(|i| nearest(points.row(i), &centroids)).collect();
            if next == labels {
                break;
            }
            labels = next;
        }
        let mut taken = vec![false; n];
        let medoids: Vec<usize> = centroids
            .iter()
            .map(|c| {
                let mut best = None;
                for i in (0..n).filter(|&i| !taken[i]) {
                    let v = distance.between(points.row(i), c);
                    if best.is_none_or(|(_, b)| v < b) {
                        best = Some((i, v));
                    }
                }
                let (i, _) = best.expect("k ≤ n leaves a free point");
                taken[i] = true;
                i
            })
            .collect();
        debug_assert_eq!(d, points.cols);
        let dist = distance_matrix(points, distance);
        let (assignment, cost) = assign(&dist, &medoids);
        Ok(Clustering {
            medoids,
            assignment,
            cost,
            cost_history: vec![cost],
        })
    }
}

#[derive(Debug, Clone)]
pub struct ClusterArgs {
    pub restarts: usize,
}

impl Default for ClusterArgs {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
        }
    }
}

pub fn clusterers() -> Registry<dyn Clusterer, ClusterArgs> {
    let mut r: Registry<dyn Clusterer, ClusterArgs> = Registry::new("clusterer");
    r.register("pam", |a| Ok(Box::new(Pam { restarts: a.restarts })));
    r.register("kmeans", |_| Ok(Box::new(KMeansNearest)));
    r
}

/// `max(1, round_half_up(ratio · n))`.
pub fn selection_size(ratio: f64, n: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::OutOfRange(format!("ratio must be in (0, 1], got {ratio}")));
    }
    Ok(((ratio * n as f64 + 0.5).floor() as usize).clamp(1, n.max(1)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionResult {
    pub selected_indices: Vec<usize>,
    pub ratio: f64,
    /// Per sentence, the position in `selected_indices` of its medoid.
    pub medoid_assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    pub result: ExtractionResult,
    pub sentences: Vec<String>,
    pub summary: String,
}

impl Extraction {
    pub fn selected(&self) -> impl Iterator<Item = &str> {
        self.result.selected_indices.iter().map(|&i| self.sentences[i].as_str())
    }
}

pub struct Extractor<'a> {
    pub encoder: &'a dyn SentenceEncoder,
    pub clusterer: &'a dyn Clusterer,
    pub distance: Distance,
}

impl Extractor<'_> {
    /// Selects the medoid sentences of `body` and joins them in source order.
    pub fn extract(&self, body: &str, ratio: f64, seed: u64) -> Result<Extraction> {
        let sentences = split_sentences(body);
        if sentences.is_empty() {
            return Err(Error::input("document has no sentences"));
        }
        let k = selection_size(ratio, sentences.len())?;
        let emb = self.encoder.embed(&sentences)?;
        let clustering = self.clusterer.cluster(&emb.vectors, k, self.distance, seed)?;

        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&c| clustering.medoids[c]);
        let mut rank = vec![0; k];
        for (pos, &c) in order.iter().enumerate() {
            rank[c] = pos;
        }
        let selected_indices: Vec<usize> = order.iter().map(|&c| clustering.medoids[c]).collect();
        let medoid_assignment = clustering.assignment.iter().map(|&c| rank[c]).collect();
        let summary = selected_indices
            .iter()
            .map(|&i| sentences[i].as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(Extraction {
            result: ExtractionResult {
                selected_indices,
                ratio,
                medoid_assignment,
            },
            sentences,
            summary,
        })
    }
}
