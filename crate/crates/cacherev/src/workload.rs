//! Synthetic catalog and the day-structured request generator.
//!
//! Each user picks a genre for the day from their preference vector, issues
//! an initialization run of distinct files, then repeatedly requests the
//! top-scoring block of candidates. Candidate scores blend feature-cosine
//! similarity against a forgetting-weighted sliding window with in-genre
//! popularity. Everything is driven by the seeding tree in [`crate::rng`],
//! so a (catalog seed, master seed, config) triple regenerates a trace
//! bit-exactly.

use std::io::{BufRead, BufReader, Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Gamma, Normal};

use crate::error::{Error, Result};
use crate::model::RequestTrace;
use crate::rng::{self, tag};

/// Content library: genre assignment, in-genre popularity, per-file features.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    num_genres: usize,
    /// Genre of each file.
    genre_of: Vec<usize>,
    /// File ids grouped per genre, ascending.
    genre_files: Vec<Vec<u32>>,
    /// In-genre popularity of each file; sums to 1 within each genre.
    popularity: Vec<f64>,
    /// Population-level popularity; empty until computed from profiles.
    global_popularity: Vec<f64>,
    /// Feature vector of each file (drives cosine similarity).
    features: Vec<Vec<f64>>,
}

impl Catalog {
    /// Generates a catalog: files split into near-equal contiguous genres,
    /// in-genre popularity Zipf by position, features drawn around a
    /// per-genre anchor.
    pub fn generate(
        num_files: usize,
        num_genres: usize,
        feat_dim: usize,
        zipf_exponent: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_files == 0 || num_genres == 0 || num_genres > num_files {
            return Err(Error::InvalidConfig(format!(
                "catalog needs 1 <= genres ({num_genres}) <= files ({num_files})"
            )));
        }
        if feat_dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be >= 1".into()));
        }
        let mut rng = rng::stream(seed, &[tag::CATALOG]);
        let base = num_files / num_genres;
        let extra = num_files % num_genres;

        let mut genre_of = Vec::with_capacity(num_files);
        let mut genre_files = Vec::with_capacity(num_genres);
        let mut popularity = Vec::with_capacity(num_files);
        let mut features = Vec::with_capacity(num_files);
        let noise = Normal::new(0.0, 0.3).expect("valid normal");
        let anchor_dist = Normal::new(0.0, 1.0).expect("valid normal");

        let mut next_file = 0u32;
        for g in 0..num_genres {
            let size = base + usize::from(g < extra);
            let zipf = zipf_popularity(size, zipf_exponent)?;
            let anchor: Vec<f64> = (0..feat_dim).map(|_| anchor_dist.sample(&mut rng)).collect();
            let files: Vec<u32> = (0..size).map(|i| next_file + i as u32).collect();
            for (rank, &_f) in files.iter().enumerate() {
                genre_of.push(g);
                popularity.push(zipf[rank]);
                let feat: Vec<f64> =
                    anchor.iter().map(|a| a + noise.sample(&mut rng)).collect();
                features.push(feat);
            }
            next_file += size as u32;
            genre_files.push(files);
        }
        let catalog = Self {
            num_genres,
            genre_of,
            genre_files,
            popularity,
            global_popularity: Vec::new(),
            features,
        };
        catalog.check_features()?;
        Ok(catalog)
    }

    fn check_features(&self) -> Result<()> {
        for (f, feat) in self.features.iter().enumerate() {
            if norm(feat) < 1e-12 {
                return Err(Error::DegenerateFeature { file: f as u32 });
            }
        }
        Ok(())
    }

    pub fn num_files(&self) -> usize {
        self.genre_of.len()
    }

    pub fn num_genres(&self) -> usize {
        self.num_genres
    }

    pub fn genre_of(&self, file: u32) -> usize {
        self.genre_of[file as usize]
    }

    pub fn files_of_genre(&self, genre: usize) -> &[u32] {
        &self.genre_files[genre]
    }

    /// In-genre popularity of one file.
    pub fn popularity(&self, file: u32) -> f64 {
        self.popularity[file as usize]
    }

    pub fn feature(&self, file: u32) -> &[f64] {
        &self.features[file as usize]
    }

    /// Population-level popularity, available once computed.
    pub fn global_popularity(&self) -> &[f64] {
        &self.global_popularity
    }

    /// Computes population popularity as (mean genre preference) x (in-genre
    /// popularity). Sums to 1 because both factors are normalized.
    pub fn compute_global_popularity(&mut self, profiles: &[UserProfile]) -> Result<()> {
        if profiles.is_empty() {
            return Err(Error::EmptyInput("global popularity needs user profiles"));
        }
        let mut mean_pref = vec![0.0; self.num_genres];
        for p in profiles {
            if p.genre_pref.len() != self.num_genres {
                return Err(Error::Shape(format!(
                    "profile has {} genres, catalog has {}",
                    p.genre_pref.len(),
                    self.num_genres
                )));
            }
            for (g, &v) in p.genre_pref.iter().enumerate() {
                mean_pref[g] += v;
            }
        }
        for v in &mut mean_pref {
            *v /= profiles.len() as f64;
        }
        self.global_popularity = (0..self.num_files())
            .map(|f| mean_pref[self.genre_of[f]] * self.popularity[f])
            .collect();
        Ok(())
    }

    /// Serializes to the text interchange format: a
    /// `files=<F> genres=<G> featdim=<d>` header, then one
    /// `f,genre,P_gf,phi_0..phi_{d-1}` line per file. Floats use the shortest
    /// round-trippable decimal form, so parsing restores them bit-exactly.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.features[0].len();
        writeln!(
            w,
            "files={} genres={} featdim={}",
            self.num_files(),
            self.num_genres,
            dim
        )?;
        for f in 0..self.num_files() {
            write!(w, "{},{},{}", f, self.genre_of[f], self.popularity[f])?;
            for v in &self.features[f] {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parses the text interchange format. Global popularity is not part of
    /// the file and must be recomputed from user profiles.
    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let header = header?;
        let mut files = None;
        let mut genres = None;
        let mut featdim = None;
        for field in header.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("malformed header field `{field}`"),
            })?;
            let value: usize = value.parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("malformed header value `{field}`"),
            })?;
            match key {
                "files" => files = Some(value),
                "genres" => genres = Some(value),
                "featdim" => featdim = Some(value),
                _ => {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("unknown header key `{key}`"),
                    })
                }
            }
        }
        let (num_files, num_genres, dim) = match (files, genres, featdim) {
            (Some(f), Some(g), Some(d)) if f > 0 && g > 0 && d > 0 => (f, g, d),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "header must declare files, genres, featdim".into(),
                })
            }
        };
        let mut genre_of = Vec::with_capacity(num_files);
        let mut popularity = Vec::with_capacity(num_files);
        let mut features = Vec::with_capacity(num_files);
        for (idx, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 + dim {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {} fields, found {}", 3 + dim, parts.len()),
                });
            }
            let parse_err = |what: &str| Error::Parse {
                line: idx + 1,
                message: format!("malformed {what} in `{line}`"),
            };
            let f: usize = parts[0].parse().map_err(|_| parse_err("file id"))?;
            if f != genre_of.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("file ids must be dense, expected {}", genre_of.len()),
                });
            }
            let g: usize = parts[1].parse().map_err(|_| parse_err("genre"))?;
            if g >= num_genres {
                return Err(parse_err("genre (out of range)"));
            }
            genre_of.push(g);
            popularity.push(parts[2].parse::<f64>().map_err(|_| parse_err("popularity"))?);
            let feat: Vec<f64> = parts[3..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| parse_err("feature")))
                .collect::<Result<_>>()?;
            features.push(feat);
        }
        if genre_of.len() != num_files {
            return Err(Error::Parse {
                line: 0,
                message: format!("{} file lines, header declares {num_files}", genre_of.len()),
            });
        }
        let mut genre_files = vec![Vec::new(); num_genres];
        for (f, &g) in genre_of.iter().enumerate() {
            genre_files[g].push(f as u32);
        }
        let catalog = Self {
            num_genres,
            genre_of,
            genre_files,
            popularity,
            global_popularity: Vec::new(),
            features,
        };
        catalog.check_features()?;
        Ok(catalog)
    }
}

/// Per-user genre preference plus the seed of the user's request stream.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    /// Preference over genres; sums to 1.
    pub genre_pref: Vec<f64>,
    pub rng_seed: u64,
}

/// Knobs of the request generator.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    /// Length of the per-day initialization run (distinct files).
    pub init_requests: usize,
    /// Requests emitted per scoring round.
    pub block_size: usize,
    /// Forgetting constant of the sliding-window weights.
    pub forgetting: f64,
    /// Weight of similarity vs popularity in the refined score, in (0, 1).
    pub score_weight: f64,
    /// Requests per day; must equal `init_requests + m * block_size`.
    pub requests_per_day: usize,
    /// Days generated per user.
    pub days: usize,
    /// Zipf exponent of in-genre popularity.
    pub zipf_exponent: f64,
    /// Concentration of the symmetric Dirichlet over genre preferences.
    pub dirichlet_alpha: f64,
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_requests == 0 || self.block_size == 0 {
            return Err(Error::InvalidConfig(
                "init_requests and block_size must be >= 1".into(),
            ));
        }
        if self.requests_per_day < self.init_requests
            || (self.requests_per_day - self.init_requests) % self.block_size != 0
        {
            return Err(Error::InvalidConfig(format!(
                "requests_per_day ({}) must equal init_requests ({}) plus a whole number of blocks ({})",
                self.requests_per_day, self.init_requests, self.block_size
            )));
        }
        if !(self.score_weight > 0.0 && self.score_weight < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "score weight must lie in (0, 1), got {}",
                self.score_weight
            )));
        }
        if !(self.forgetting > 0.0) {
            return Err(Error::InvalidConfig("forgetting constant must be > 0".into()));
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(Error::InvalidConfig("zipf exponent must be > 0".into()));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(Error::InvalidConfig("dirichlet alpha must be > 0".into()));
        }
        if self.days == 0 {
            return Err(Error::InvalidConfig("days must be >= 1".into()));
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalized Zipf weights: entry `r` proportional to `(r + 1)^-exponent`.
pub fn zipf_popularity(num_items: usize, exponent: f64) -> Result<Vec<f64>> {
    if num_items == 0 {
        return Err(Error::EmptyInput("zipf over zero items"));
    }
    if !(exponent > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "zipf exponent must be > 0, got {exponent}"
        )));
    }
    let mut weights: Vec<f64> =
        (0..num_items).map(|r| ((r + 1) as f64).powf(-exponent)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Draws a genre-preference vector from a symmetric Dirichlet(alpha),
/// realized as normalized Gamma(alpha, 1) draws.
pub fn sample_genre_preferences(num_genres: usize, alpha: f64, seed: u64) -> Result<UserProfile> {
    if num_genres == 0 {
        return Err(Error::EmptyInput("preferences over zero genres"));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("alpha must be > 0, got {alpha}")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let pref = if num_genres == 1 {
        vec![1.0]
    } else {
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| Error::InvalidConfig(format!("gamma({alpha}): {e}")))?;
        loop {
            let draws: Vec<f64> = (0..num_genres).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            // With small alpha every draw can underflow to ~0; redraw.
            if total > 1e-300 {
                break draws.into_iter().map(|d| d / total).collect();
            }
        }
    };
    Ok(UserProfile { genre_pref: pref, rng_seed: seed })
}

/// Sliding-window weight of history position `l` (0 = oldest of `len`):
/// `exp(-(len - l + 1) / b)`, strictly increasing in `l`.
pub fn forgetting_weight(l: usize, len: usize, b: f64) -> f64 {
    (-((len - l + 1) as f64) / b).exp()
}

/// Forgetting-weighted sum of feature cosines between the history window and
/// a candidate file.
pub fn similarity_score(
    history: &[u32],
    candidate: u32,
    catalog: &Catalog,
    b: f64,
) -> Result<f64> {
    let cand = catalog.feature(candidate);
    let cand_norm = norm(cand);
    if cand_norm < 1e-12 {
        return Err(Error::DegenerateFeature { file: candidate });
    }
    let len = history.len();
    let mut score = 0.0;
    for (l, &f) in history.iter().enumerate() {
        let feat = catalog.feature(f);
        let n = norm(feat);
        if n < 1e-12 {
            return Err(Error::DegenerateFeature { file: f });
        }
        let cos = dot(feat, cand) / (n * cand_norm);
        score += forgetting_weight(l, len, b) * cos;
    }
    Ok(score)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_over(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Blended candidate scores: `lambda * softmax(similarity) +
/// (1 - lambda) * softmax(in-genre popularity)`, both softmaxes taken over
/// the candidate set. Returns (file, score) pairs in candidate order; scores
/// are positive and sum to 1.
pub fn refined_score(
    history: &[u32],
    candidates: &[u32],
    catalog: &Catalog,
    lambda: f64,
    b: f64,
) -> Result<Vec<(u32, f64)>> {
    if candidates.is_empty() {
        return Err(Error::ExhaustedGenre { genre: 0, available: 0, needed: 1 });
    }
    let sims: Vec<f64> = candidates
        .iter()
        .map(|&c| similarity_score(history, c, catalog, b))
        .collect::<Result<_>>()?;
    let pops: Vec<f64> = candidates.iter().map(|&c| catalog.popularity(c)).collect();
    let sim_soft = softmax_over(&sims);
    let pop_soft = softmax_over(&pops);
    Ok(candidates
        .iter()
        .zip(sim_soft.iter().zip(&pop_soft))
        .map(|(&c, (&s, &p))| (c, lambda * s + (1.0 - lambda) * p))
        .collect())
}

/// Generates one user-day: a genre pick, `init_requests` distinct files, then
/// block rounds each emitting the top-`block_size` candidates by refined
/// score over the sliding window (ties to the lowest file id).
pub fn generate_user_day(
    profile: &UserProfile,
    catalog: &Catalog,
    config: &WorkloadConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<u32>> {
    let genre = WeightedIndex::new(&profile.genre_pref)
        .map_err(|e| Error::InvalidConfig(format!("genre preference: {e}")))?
        .sample(rng);
    let files = catalog.files_of_genre(genre);
    let needed = config.init_requests + config.block_size;
    if files.len() < needed {
        return Err(Error::ExhaustedGenre { genre, available: files.len(), needed });
    }

    let q = config.requests_per_day;
    let mut day = Vec::with_capacity(q);

    // Initialization: the first pick follows in-genre popularity; later picks
    // follow the refined score over the already-chosen prefix, without
    // replacement, so the run is distinct.
    let pops: Vec<f64> = files.iter().map(|&f| catalog.popularity(f)).collect();
    let first = files[WeightedIndex::new(&pops)
        .map_err(|e| Error::InvalidConfig(format!("genre popularity: {e}")))?
        .sample(rng)];
    day.push(first);
    while day.len() < config.init_requests {
        let candidates: Vec<u32> =
            files.iter().copied().filter(|f| !day.contains(f)).collect();
        let scored = refined_score(&day, &candidates, catalog, config.score_weight, config.forgetting)?;
        let weights: Vec<f64> = scored.iter().map(|&(_, s)| s).collect();
        let pick = scored[WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidConfig(format!("refined score: {e}")))?
            .sample(rng)]
        .0;
        day.push(pick);
    }

    // Block rounds: score the candidates outside the window, take the top
    // block deterministically.
    while day.len() < q {
        let window = &day[day.len() - config.init_requests..];
        let candidates: Vec<u32> =
            files.iter().copied().filter(|f| !window.contains(f)).collect();
        let mut scored =
            refined_score(window, &candidates, catalog, config.score_weight, config.forgetting)?;
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(f, _) in scored.iter().take(config.block_size) {
            day.push(f);
        }
    }
    day.truncate(q);
    Ok(day)
}

/// Generates the full lock-step trace: every user advances one request per
/// mini-slot; mini-slot index is the position in the concatenated day
/// stream. Deterministic in `master_seed` via the seeding tree
/// (master -> per-user profile, master -> per-(user, day) stream).
pub fn generate_trace(
    num_users: usize,
    catalog: &Catalog,
    config: &WorkloadConfig,
    master_seed: u64,
) -> Result<RequestTrace> {
    config.validate()?;
    if num_users == 0 {
        return Err(Error::EmptyInput("trace needs at least one user"));
    }
    let profiles = sample_profiles(num_users, catalog.num_genres(), config, master_seed)?;
    let mut per_user = Vec::with_capacity(num_users);
    for (u, profile) in profiles.iter().enumerate() {
        let mut stream = Vec::with_capacity(config.days * config.requests_per_day);
        for day in 0..config.days {
            let mut rng = rng::stream(master_seed, &[tag::USER_DAY, u as u64, day as u64]);
            stream.extend(generate_user_day(profile, catalog, config, &mut rng)?);
        }
        per_user.push(stream);
    }
    RequestTrace::new(catalog.num_files(), per_user)
}

/// Profiles used by [`generate_trace`] for the same master seed.
pub fn sample_profiles(
    num_users: usize,
    num_genres: usize,
    config: &WorkloadConfig,
    master_seed: u64,
) -> Result<Vec<UserProfile>> {
    (0..num_users)
        .map(|u| {
            let seed = rng::derive_seed(master_seed, &[tag::USER_PROFILE, u as u64]);
            sample_genre_preferences(num_genres, config.dirichlet_alpha, seed)
        })
        .collect()
}

#[cfg(test)]
pub(crate) fn test_config() -> WorkloadConfig {
    WorkloadConfig {
        init_requests: 4,
        block_size: 3,
        forgetting: 0.5,
        score_weight: 0.5,
        requests_per_day: 16,
        days: 2,
        zipf_exponent: 1.2,
        dirichlet_alpha: 0.3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_catalog() -> Catalog {
        Catalog::generate(24, 3, 8, 1.2, 99).unwrap()
    }

    #[test]
    fn zipf_shapes() {
        assert_eq!(zipf_popularity(1, 2.0).unwrap(), vec![1.0]);
        let two = zipf_popularity(2, 1.0).unwrap();
        assert!((two[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((two[1] - 1.0 / 3.0).abs() < 1e-12);
        let three = zipf_popularity(3, 1.2).unwrap();
        assert!((three.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(three.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn dirichlet_determinism_and_moments() {
        let a = sample_genre_preferences(3, 0.3, 7).unwrap();
        let b = sample_genre_preferences(3, 0.3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(sample_genre_preferences(1, 0.3, 7).unwrap().genre_pref, vec![1.0]);

        // Empirical variance tracks (G-1) / (G^2 (G alpha + 1)) and shrinks
        // with alpha.
        let var_for = |alpha: f64| {
            let g = 4usize;
            let draws = 1000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for seed in 0..draws {
                let p = sample_genre_preferences(g, alpha, seed as u64).unwrap();
                for &v in &p.genre_pref {
                    sum += v;
                    sumsq += v * v;
                }
            }
            let count = (draws * g) as f64;
            let mean = sum / count;
            sumsq / count - mean * mean
        };
        let theory = |alpha: f64| {
            let g = 4.0;
            (g - 1.0) / (g * g * (g * alpha + 1.0))
        };
        for alpha in [0.3, 1.0, 5.0] {
            let emp = var_for(alpha);
            let th = theory(alpha);
            assert!(
                (emp - th).abs() < 0.25 * th + 0.002,
                "alpha {alpha}: empirical {emp}, theory {th}"
            );
        }
        assert!(var_for(5.0) < var_for(0.3));
    }

    #[test]
    fn forgetting_weight_values() {
        assert!((forgetting_weight(6, 7, 0.5) - (-4.0f64).exp()).abs() < 1e-12);
        assert!((forgetting_weight(0, 7, 0.5) - (-16.0f64).exp()).abs() < 1e-12);
        for l in 0..6 {
            let ratio = forgetting_weight(l + 1, 7, 0.5) / forgetting_weight(l, 7, 0.5);
            assert!((ratio - (1.0f64 / 0.5).exp()).abs() < 1e-9);
            assert!(forgetting_weight(l, 7, 0.5) < forgetting_weight(l + 1, 7, 0.5));
        }
    }

    /// Catalog with hand-picked features for similarity tests.
    fn feature_catalog(features: Vec<Vec<f64>>) -> Catalog {
        let n = features.len();
        Catalog {
            num_genres: 1,
            genre_of: vec![0; n],
            genre_files: vec![(0..n as u32).collect()],
            popularity: zipf_popularity(n, 1.0).unwrap(),
            global_popularity: Vec::new(),
            features,
        }
    }

    #[test]
    fn similarity_orthogonal_and_single_contributor() {
        let catalog = feature_catalog(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 2.0, 0.0], // parallel to file 1, scaled
        ]);
        // All history orthogonal to the candidate.
        let s = similarity_score(&[0, 2], 1, &catalog, 0.5).unwrap();
        assert!(s.abs() < 1e-12);

        // Only the newest history item is parallel to the candidate; its
        // weight is e^{-(2-1+1)/0.5} = e^{-4}... with len=2, l=1.
        let s = similarity_score(&[0, 3], 1, &catalog, 0.5).unwrap();
        assert!((s - (-4.0f64).exp()).abs() < 1e-12, "got {s}");

        // Cosine ignores the scale of feature vectors.
        let s_scaled = similarity_score(&[0, 1], 3, &catalog, 0.5).unwrap();
        let s_unit = similarity_score(&[0, 3], 1, &catalog, 0.5).unwrap();
        assert!((s_scaled - s_unit).abs() < 1e-12);
    }

    #[test]
    fn history_of_seven_single_contributor() {
        // Window of length 7 whose last entry matches the candidate exactly;
        // all other entries orthogonal: score = e^{-2/b} with b=0.5 -> e^{-4}.
        let mut features = vec![vec![0.0; 9]; 9];
        for (i, feat) in features.iter_mut().enumerate() {
            feat[i] = 1.0;
        }
        features[8] = features[7].clone(); // candidate 8 parallels file 7
        let catalog = feature_catalog(features);
        let history = [0u32, 1, 2, 3, 4, 5, 7];
        let s = similarity_score(&history, 8, &catalog, 0.5).unwrap();
        assert!((s - (-4.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn refined_score_is_a_distribution() {
        let catalog = small_catalog();
        let files = catalog.files_of_genre(0);
        let history = &files[..3];
        let candidates = &files[3..];
        let scored = refined_score(history, candidates, &catalog, 0.5, 0.5).unwrap();
        let total: f64 = scored.iter().map(|&(_, s)| s).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(scored.iter().all(|&(_, s)| s > 0.0));
        assert!(refined_score(history, &[], &catalog, 0.5, 0.5).is_err());
    }

    #[test]
    fn refined_score_symmetric_and_boundary_cases() {
        // Equal similarity and equal popularity: uniform.
        let catalog = feature_catalog(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]);
        let mut catalog = catalog;
        catalog.popularity = vec![1.0 / 3.0; 3];
        let scored = refined_score(&[0], &[1, 2], &catalog, 0.5, 0.5).unwrap();
        assert!((scored[0].1 - 0.5).abs() < 1e-12);
        assert!((scored[1].1 - 0.5).abs() < 1e-12);

        // lambda = 1 reduces to the similarity softmax alone.
        let scored = refined_score(&[0], &[1, 2], &catalog, 1.0, 0.5).unwrap();
        assert!((scored[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn refined_score_hand_case() {
        // Two candidates with similarities (1, 0) and equal popularity at
        // lambda = 0.5: 0.5*[e/(e+1), 1/(e+1)] + 0.5*[0.5, 0.5].
        let mut catalog = feature_catalog(vec![
            vec![1.0, 0.0], // history
            vec![1.0, 0.0], // candidate parallel -> cosine 1
            vec![0.0, 1.0], // candidate orthogonal -> cosine 0
        ]);
        catalog.popularity = vec![1.0 / 3.0; 3];
        // Pick forgetting b so the single history weight is exactly 1:
        // weight = e^{-2/b}; as b -> inf it approaches 1. Use the weighted
        // similarity directly instead: with one history item of weight w the
        // similarities are (w, 0); softmax ratio only depends on w.
        let b = 2.0 / 1e-9; // weight ~ e^{-1e-9} ~ 1
        let scored = refined_score(&[0], &[1, 2], &catalog, 0.5, b).unwrap();
        let e = std::f64::consts::E;
        let expected0 = 0.5 * (e / (e + 1.0)) + 0.25;
        let expected1 = 0.5 * (1.0 / (e + 1.0)) + 0.25;
        assert!((scored[0].1 - expected0).abs() < 1e-6, "got {}", scored[0].1);
        assert!((scored[1].1 - expected1).abs() < 1e-6);
    }

    #[test]
    fn user_day_structure() {
        let catalog = small_catalog();
        let config = test_config();
        let profile = sample_genre_preferences(3, 0.3, 5).unwrap();
        let mut rng = rng::stream(5, &[tag::USER_DAY, 0, 0]);
        let day = generate_user_day(&profile, &catalog, &config, &mut rng).unwrap();
        assert_eq!(day.len(), config.requests_per_day);
        let genre = catalog.genre_of(day[0]);
        assert!(day.iter().all(|&f| catalog.genre_of(f) == genre));
        let init = &day[..config.init_requests];
        for (i, f) in init.iter().enumerate() {
            assert!(!init[..i].contains(f), "init run must be distinct");
        }
    }

    #[test]
    fn top_one_block_follows_popularity_when_lambda_zero() {
        let catalog = small_catalog();
        let mut config = test_config();
        config.block_size = 1;
        config.requests_per_day = config.init_requests + 8;
        config.score_weight = 1e-12; // effectively popularity-only
        let profile = sample_genre_preferences(3, 0.3, 3).unwrap();
        let mut rng = rng::stream(3, &[tag::USER_DAY, 0, 0]);
        let day = generate_user_day(&profile, &catalog, &config, &mut rng).unwrap();
        let files = catalog.files_of_genre(catalog.genre_of(day[0]));
        for pos in config.init_requests..day.len() {
            let window = &day[pos - config.init_requests..pos];
            let best = files
                .iter()
                .copied()
                .filter(|f| !window.contains(f))
                .max_by(|&a, &b| {
                    catalog
                        .popularity(a)
                        .partial_cmp(&catalog.popularity(b))
                        .unwrap()
                        .then(b.cmp(&a)) // ties to the lowest id
                })
                .unwrap();
            assert_eq!(day[pos], best, "position {pos}");
        }
    }

    #[test]
    fn exhausted_genre_is_reported() {
        let catalog = Catalog::generate(6, 3, 4, 1.2, 1).unwrap(); // 2 files per genre
        let config = test_config(); // needs init 4 + block 3
        let profile = sample_genre_preferences(3, 0.3, 2).unwrap();
        let mut rng = rng::stream(2, &[tag::USER_DAY, 0, 0]);
        assert!(matches!(
            generate_user_day(&profile, &catalog, &config, &mut rng),
            Err(Error::ExhaustedGenre { .. })
        ));
    }

    #[test]
    fn trace_generation_is_deterministic_and_lock_step() {
        let catalog = small_catalog();
        let config = test_config();
        let a = generate_trace(4, &catalog, &config, 42).unwrap();
        let b = generate_trace(4, &catalog, &config, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_users(), 4);
        assert_eq!(a.total_minislots(), config.days * config.requests_per_day);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_to(&mut buf_a).unwrap();
        b.write_to(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn day_blocks_never_cross_day_boundaries() {
        // Regenerating any single day in isolation must reproduce exactly the
        // corresponding segment of the full stream.
        let catalog = small_catalog();
        let config = test_config();
        let trace = generate_trace(2, &catalog, &config, 17).unwrap();
        let profiles = sample_profiles(2, 3, &config, 17).unwrap();
        let q = config.requests_per_day;
        for u in 0..2 {
            for day in 0..config.days {
                let mut rng = rng::stream(17, &[tag::USER_DAY, u as u64, day as u64]);
                let regenerated =
                    generate_user_day(&profiles[u], &catalog, &config, &mut rng).unwrap();
                assert_eq!(&trace.user_stream(u)[day * q..(day + 1) * q], &regenerated[..]);
            }
        }
    }

    #[test]
    fn genre_frequencies_track_preferences() {
        let catalog = small_catalog();
        let mut config = test_config();
        config.days = 200;
        let profiles = sample_profiles(1, 3, &config, 8).unwrap();
        let trace = generate_trace(1, &catalog, &config, 8).unwrap();
        let q = config.requests_per_day;
        let mut counts = vec![0usize; 3];
        for day in 0..config.days {
            counts[catalog.genre_of(trace.request(0, day * q))] += 1;
        }
        for g in 0..3 {
            let p = profiles[0].genre_pref[g];
            let sigma = (p * (1.0 - p) * config.days as f64).sqrt();
            let diff = (counts[g] as f64 - p * config.days as f64).abs();
            assert!(diff <= 3.0 * sigma + 1.0, "genre {g}: diff {diff}, sigma {sigma}");
        }
    }

    #[test]
    fn catalog_round_trip_is_bit_exact() {
        let catalog = small_catalog();
        let mut buf = Vec::new();
        catalog.write_to(&mut buf).unwrap();
        let parsed = Catalog::read_from(&buf[..]).unwrap();
        let mut buf2 = Vec::new();
        parsed.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(parsed.genre_of, catalog.genre_of);
        assert_eq!(parsed.features, catalog.features);
    }

    #[test]
    fn global_popularity_is_a_distribution() {
        let mut catalog = small_catalog();
        let profiles = sample_profiles(5, 3, &test_config(), 3).unwrap();
        catalog.compute_global_popularity(&profiles).unwrap();
        let total: f64 = catalog.global_popularity().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
