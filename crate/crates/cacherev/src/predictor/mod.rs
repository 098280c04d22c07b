//! Horizon demand prediction.
//!
//! Each user's request history becomes a sliding-window dataset; a shared
//! [`net::DemandNet`] is trained with federated averaging (local SGD steps on
//! every client, then an equal-weight parameter mean). A genie-plus-error
//! oracle provides controllable prediction quality for parameter studies, and
//! [`build_accuracy_profile`] measures empirical top-1 accuracy per (user,
//! file, horizon offset) on a validation span.

pub mod checkpoint;
pub mod net;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::model::RequestTrace;
use crate::rng::{self, tag};
use crate::workload::Catalog;

pub use net::{gradient_check, DemandNet, GradCheckEntry, ModelParams, NetConfig, Tensor};

/// Training and architecture knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    /// Input window length in mini-slots.
    pub input_len: usize,
    /// Predicted mini-slots (n * K).
    pub horizon: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    /// SGD learning rate.
    pub eta: f64,
    /// Local SGD steps per federated round.
    pub local_steps: usize,
    /// Global federated rounds.
    pub rounds: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("window and horizon must be >= 1".into()));
        }
        if self.local_steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("local_steps and batch_size must be >= 1".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn net_config(&self, num_files: usize) -> NetConfig {
        NetConfig {
            num_files,
            input_len: self.input_len,
            horizon: self.horizon,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ff_dim: self.ff_dim,
        }
    }
}

/// One training sample: `input_len` past requests and `horizon` future ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Vec<u32>,
    pub label: Vec<u32>,
}

/// Sliding windows over one user's history with the given step.
/// Window `i` starts at mini-slot `i * step`; the count is
/// `floor((T - input_len - horizon) / step) + 1`.
pub fn make_training_windows(
    trace: &RequestTrace,
    user: usize,
    input_len: usize,
    horizon: usize,
    step: usize,
) -> Result<Vec<Window>> {
    if step == 0 {
        return Err(Error::InvalidConfig("window step must be >= 1".into()));
    }
    let stream = trace.user_stream(user);
    let needed = input_len + horizon;
    if stream.len() < needed {
        return Err(Error::InsufficientData(format!(
            "user {user} has {} mini-slots, windows need {needed}",
            stream.len()
        )));
    }
    let count = (stream.len() - needed) / step + 1;
    let mut windows = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * step;
        windows.push(Window {
            input: stream[start..start + input_len].to_vec(),
            label: stream[start + input_len..start + needed].to_vec(),
        });
    }
    Ok(windows)
}

/// Anything that can produce a batch loss and parameter gradients. The
/// training loop is generic so tests can drive it with closed-form
/// surrogates.
pub trait LossModel {
    type Item;

    fn loss_and_grad(
        &self,
        params: &ModelParams,
        batch: &[&Self::Item],
    ) -> Result<(f64, ModelParams)>;

    /// Mean loss over a whole dataset (gradients discarded).
    fn dataset_loss(&self, params: &ModelParams, data: &[Self::Item]) -> Result<f64> {
        let refs: Vec<&Self::Item> = data.iter().collect();
        Ok(self.loss_and_grad(params, &refs)?.0)
    }
}

impl LossModel for DemandNet {
    type Item = Window;

    fn loss_and_grad(
        &self,
        params: &ModelParams,
        batch: &[&Window],
    ) -> Result<(f64, ModelParams)> {
        let pairs: Vec<(&[u32], &[u32])> =
            batch.iter().map(|w| (w.input.as_slice(), w.label.as_slice())).collect();
        self.batch_loss_and_grad(params, &pairs)
    }
}

/// Runs `steps` mini-batch SGD updates from a copy of `params`; batches are
/// drawn uniformly with replacement from `data` using `rng`.
pub fn local_train<M: LossModel>(
    model: &M,
    params: &ModelParams,
    data: &[M::Item],
    eta: f64,
    steps: usize,
    batch_size: usize,
    rng: &mut ChaCha12Rng,
) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(Error::EmptyInput("local training dataset"));
    }
    let mut current = params.clone();
    for _ in 0..steps {
        let batch: Vec<&M::Item> =
            (0..batch_size).map(|_| &data[rng.random_range(0..data.len())]).collect();
        let (loss, grad) = model.loss_and_grad(&current, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { tensor: "loss".into() });
        }
        if let Some(tensor) = grad.first_non_finite() {
            return Err(Error::Divergence { tensor: tensor.to_string() });
        }
        current.axpy(-eta, &grad);
    }
    Ok(current)
}

/// One federated round with explicit per-client seeds: every client trains
/// from a copy of the global parameters, results are averaged with equal
/// weights in client order.
pub fn fedavg_round_with_seeds<M: LossModel>(
    model: &M,
    global: &ModelParams,
    client_datasets: &[Vec<M::Item>],
    eta: f64,
    steps: usize,
    batch_size: usize,
    seeds: &[u64],
) -> Result<ModelParams> {
    if client_datasets.is_empty() {
        return Err(Error::EmptyInput("federated round needs at least one client"));
    }
    if seeds.len() != client_datasets.len() {
        return Err(Error::Shape(format!(
            "{} seeds for {} clients",
            seeds.len(),
            client_datasets.len()
        )));
    }
    let mut mean: Option<ModelParams> = None;
    for (data, &seed) in client_datasets.iter().zip(seeds) {
        let mut client_rng = ChaCha12Rng::seed_from_u64(seed);
        let trained = local_train(model, global, data, eta, steps, batch_size, &mut client_rng)?;
        match &mut mean {
            None => mean = Some(trained),
            Some(acc) => acc.axpy(1.0, &trained),
        }
    }
    let mut mean = mean.expect("at least one client");
    mean.scale(1.0 / client_datasets.len() as f64);
    Ok(mean)
}

/// One federated round; per-client seeds are drawn from `rng` in client
/// order, so client training is a pure function of (global, dataset, seed).
pub fn fedavg_round<M: LossModel>(
    model: &M,
    global: &ModelParams,
    client_datasets: &[Vec<M::Item>],
    eta: f64,
    steps: usize,
    batch_size: usize,
    rng: &mut ChaCha12Rng,
) -> Result<ModelParams> {
    let seeds: Vec<u64> = client_datasets.iter().map(|_| rng.random()).collect();
    fedavg_round_with_seeds(model, global, client_datasets, eta, steps, batch_size, &seeds)
}

/// Runs `rounds` federated rounds from `initial`. Centralized training is the
/// single-client special case (pass one concatenated dataset).
pub fn train_federated<M: LossModel>(
    model: &M,
    initial: ModelParams,
    client_datasets: &[Vec<M::Item>],
    eta: f64,
    steps: usize,
    batch_size: usize,
    rounds: usize,
    master_seed: u64,
) -> Result<ModelParams> {
    let mut rng = rng::stream(master_seed, &[tag::TRAIN_ROUND]);
    let mut params = initial;
    for round in 0..rounds {
        params = fedavg_round(model, &params, client_datasets, eta, steps, batch_size, &mut rng)?;
        if (round + 1) % 10 == 0 {
            log::debug!("federated round {}/{} complete", round + 1, rounds);
        }
    }
    Ok(params)
}

/// A source of per-user demand probability rows over a horizon.
pub trait Predictor {
    /// `horizon` probability rows for `user` covering mini-slots
    /// `start .. start + horizon`. Honest predictors use only information
    /// before `start`; the genie oracle intentionally peeks.
    fn predict(
        &self,
        trace: &RequestTrace,
        user: usize,
        start: usize,
        horizon: usize,
    ) -> Result<Vec<Vec<f64>>>;
}

/// Trained-network predictor: feeds the last `input_len` requests forward.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    pub net: DemandNet,
    pub params: ModelParams,
}

impl Predictor for ModelPredictor {
    fn predict(
        &self,
        trace: &RequestTrace,
        user: usize,
        start: usize,
        horizon: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let n = self.net.config.input_len;
        if start < n {
            return Err(Error::InsufficientData(format!(
                "prediction at mini-slot {start} needs {n} mini-slots of history"
            )));
        }
        if horizon > self.net.config.horizon {
            return Err(Error::Shape(format!(
                "requested horizon {horizon} exceeds model horizon {}",
                self.net.config.horizon
            )));
        }
        let history = &trace.user_stream(user)[start - n..start];
        let rows_mat = net::one_hot_rows(history, trace.num_files());
        let rows: Vec<Vec<f64>> = (0..n).map(|i| rows_mat.row(i).to_vec()).collect();
        let mut out = self.net.predict(&self.params, &rows)?;
        out.truncate(horizon);
        Ok(out)
    }
}

/// Ground-truth oracle with a controllable error rate: each mini-slot emits
/// the true request with probability `p_correct`, otherwise a wrong file
/// sampled from the true file's genre popularity (true file excluded).
/// Deterministic per (seed, user, start).
#[derive(Debug, Clone)]
pub struct GeniePredictor {
    pub p_correct: f64,
    pub seed: u64,
    genre_of: Vec<usize>,
    genre_files: Vec<Vec<u32>>,
    popularity: Vec<f64>,
}

impl GeniePredictor {
    pub fn new(p_correct: f64, seed: u64, catalog: &Catalog) -> Self {
        Self {
            p_correct,
            seed,
            genre_of: (0..catalog.num_files()).map(|f| catalog.genre_of(f as u32)).collect(),
            genre_files: (0..catalog.num_genres())
                .map(|g| catalog.files_of_genre(g).to_vec())
                .collect(),
            popularity: (0..catalog.num_files())
                .map(|f| catalog.popularity(f as u32))
                .collect(),
        }
    }
}

impl Predictor for GeniePredictor {
    fn predict(
        &self,
        trace: &RequestTrace,
        user: usize,
        start: usize,
        horizon: usize,
    ) -> Result<Vec<Vec<f64>>> {
        use rand::distr::Distribution;
        if start + horizon > trace.total_minislots() {
            return Err(Error::TraceIncomplete {
                mini_slot: start + horizon - 1,
                detail: "genie horizon extends past the trace".into(),
            });
        }
        let mut rng = rng::stream(self.seed, &[tag::GENIE, user as u64, start as u64]);
        let mut rows = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let truth = trace.request(user, start + h);
            let mut row = vec![0.0; trace.num_files()];
            if rng.random::<f64>() < self.p_correct {
                row[truth as usize] = 1.0;
            } else {
                let genre = self.genre_of[truth as usize];
                let candidates: Vec<u32> = self.genre_files[genre]
                    .iter()
                    .copied()
                    .filter(|&f| f != truth)
                    .collect();
                if candidates.is_empty() {
                    return Err(Error::ExhaustedGenre { genre, available: 0, needed: 1 });
                }
                let weights: Vec<f64> =
                    candidates.iter().map(|&f| self.popularity[f as usize]).collect();
                let dist = rand::distr::weighted::WeightedIndex::new(&weights)
                    .map_err(|e| Error::InvalidConfig(format!("genie weights: {e}")))?;
                row[candidates[dist.sample(&mut rng)] as usize] = 1.0;
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Empirical top-1 accuracy per (user, file, horizon offset), with a
/// per-(user, offset) file-agnostic fallback for files never requested in the
/// validation span. Lookups fall back to 0 when neither row exists.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyProfile {
    num_users: usize,
    horizon: usize,
    num_files: usize,
    correct: Vec<u32>,
    total: Vec<u32>,
}

impl AccuracyProfile {
    fn idx(&self, user: usize, offset: usize, file: usize) -> usize {
        (user * self.horizon + offset) * self.num_files + file
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Accuracy for (user, file, offset): the empirical ratio when the file
    /// appeared in validation, else the user's file-agnostic accuracy at that
    /// offset, else 0.
    pub fn lookup(&self, user: usize, file: usize, offset: usize) -> f64 {
        let i = self.idx(user, offset, file);
        if self.total[i] > 0 {
            return f64::from(self.correct[i]) / f64::from(self.total[i]);
        }
        self.offset_accuracy(user, offset).unwrap_or(0.0)
    }

    /// File-agnostic accuracy of a user at one offset, if observed.
    pub fn offset_accuracy(&self, user: usize, offset: usize) -> Option<f64> {
        let base = (user * self.horizon + offset) * self.num_files;
        let range = base..base + self.num_files;
        let total: u64 = self.total[range.clone()].iter().map(|&v| u64::from(v)).sum();
        if total == 0 {
            return None;
        }
        let correct: u64 = self.correct[range].iter().map(|&v| u64::from(v)).sum();
        Some(correct as f64 / total as f64)
    }

    /// Mean file-agnostic accuracy at one offset across users.
    pub fn mean_offset_accuracy(&self, offset: usize) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for u in 0..self.num_users {
            if let Some(a) = self.offset_accuracy(u, offset) {
                sum += a;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Text serialization: header plus one `user,offset,file,correct,total`
    /// line per populated cell.
    pub fn write_to<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "users={} horizon={} files={}",
            self.num_users, self.horizon, self.num_files
        )?;
        for u in 0..self.num_users {
            for h in 0..self.horizon {
                for f in 0..self.num_files {
                    let i = self.idx(u, h, f);
                    if self.total[i] > 0 {
                        writeln!(w, "{},{},{},{},{}", u, h, f, self.correct[i], self.total[i])?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: std::io::Read>(r: R) -> Result<Self> {
        use std::io::BufRead;
        let mut lines = std::io::BufReader::new(r).lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let header = header?;
        let mut dims = [None; 3];
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
                "users" => dims[0] = Some(value),
                "horizon" => dims[1] = Some(value),
                "files" => dims[2] = Some(value),
                _ => {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("unknown header key `{key}`"),
                    })
                }
            }
        }
        let (num_users, horizon, num_files) = match dims {
            [Some(u), Some(h), Some(f)] => (u, h, f),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "header must declare users, horizon, files".into(),
                })
            }
        };
        let mut profile = AccuracyProfile {
            num_users,
            horizon,
            num_files,
            correct: vec![0; num_users * horizon * num_files],
            total: vec![0; num_users * horizon * num_files],
        };
        for (idx, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<usize> = line
                .split(',')
                .map(|s| {
                    s.parse().map_err(|_| Error::Parse {
                        line: idx + 1,
                        message: format!("malformed entry `{line}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if parts.len() != 5
                || parts[0] >= num_users
                || parts[1] >= horizon
                || parts[2] >= num_files
            {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("entry out of range `{line}`"),
                });
            }
            let i = profile.idx(parts[0], parts[1], parts[2]);
            profile.correct[i] = parts[3] as u32;
            profile.total[i] = parts[4] as u32;
        }
        Ok(profile)
    }
}

/// Profiles a predictor over `num_slots` validation placement slots starting
/// at `validation_start` (slot `j` begins at `validation_start + j * n`).
/// Accuracy at offset `h` counts argmax agreement with the true request `h`
/// mini-slots after each slot start.
pub fn build_accuracy_profile(
    predictor: &dyn Predictor,
    trace: &RequestTrace,
    validation_start: usize,
    num_slots: usize,
    n: usize,
    horizon: usize,
) -> Result<AccuracyProfile> {
    if num_slots == 0 {
        return Err(Error::EmptyInput("accuracy profile needs validation slots"));
    }
    let last_needed = validation_start + (num_slots - 1) * n + horizon;
    if last_needed > trace.total_minislots() {
        return Err(Error::TraceIncomplete {
            mini_slot: last_needed - 1,
            detail: "validation span extends past the trace".into(),
        });
    }
    let num_users = trace.num_users();
    let num_files = trace.num_files();
    let mut profile = AccuracyProfile {
        num_users,
        horizon,
        num_files,
        correct: vec![0; num_users * horizon * num_files],
        total: vec![0; num_users * horizon * num_files],
    };
    for user in 0..num_users {
        for j in 0..num_slots {
            let start = validation_start + j * n;
            let rows = predictor.predict(trace, user, start, horizon)?;
            for (h, row) in rows.iter().enumerate() {
                let truth = trace.request(user, start + h) as usize;
                let predicted = argmax(row);
                let i = profile.idx(user, h, truth);
                profile.total[i] += 1;
                if predicted == truth {
                    profile.correct[i] += 1;
                }
            }
        }
    }
    Ok(profile)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload;

    fn trace_of(stream: Vec<u32>, files: usize) -> RequestTrace {
        RequestTrace::new(files, vec![stream]).unwrap()
    }

    #[test]
    fn window_counts() {
        // T = N + horizon: exactly one window.
        let t = trace_of((0..6).map(|i| i % 3).collect(), 3);
        let w = make_training_windows(&t, 0, 4, 2, 2).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].input, vec![0, 1, 2, 0]);
        assert_eq!(w[0].label, vec![1, 2]);

        // T = N + horizon + n: two windows.
        let t = trace_of((0..8).map(|i| i % 3).collect(), 3);
        let w = make_training_windows(&t, 0, 4, 2, 2).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].input, vec![2, 0, 1, 2]);

        let t = trace_of(vec![0, 1], 3);
        assert!(make_training_windows(&t, 0, 4, 2, 2).is_err());
    }

    /// Scalar surrogate: items are step targets; with eta = 1 and gradient
    /// `theta - target`, one step lands exactly on the target.
    struct PullToTarget;

    impl LossModel for PullToTarget {
        type Item = f64;
        fn loss_and_grad(
            &self,
            params: &ModelParams,
            batch: &[&f64],
        ) -> Result<(f64, ModelParams)> {
            let theta = params.tensors[0].data[0];
            let target: f64 = batch.iter().map(|&&t| t).sum::<f64>() / batch.len() as f64;
            let mut grad = params.zeros_like();
            grad.tensors[0].data[0] = theta - target;
            Ok((0.5 * (theta - target) * (theta - target), grad))
        }
    }

    fn scalar_params(value: f64) -> ModelParams {
        let mut t = Tensor::zeros("theta", vec![1]);
        t.data[0] = value;
        ModelParams { tensors: vec![t] }
    }

    /// Quadratic loss `l = theta^2`: one SGD step gives `theta - eta*2*theta`.
    struct Quadratic;

    impl LossModel for Quadratic {
        type Item = ();
        fn loss_and_grad(
            &self,
            params: &ModelParams,
            _batch: &[&()],
        ) -> Result<(f64, ModelParams)> {
            let theta = params.tensors[0].data[0];
            let mut grad = params.zeros_like();
            grad.tensors[0].data[0] = 2.0 * theta;
            Ok((theta * theta, grad))
        }
    }

    #[test]
    fn sgd_step_matches_closed_form() {
        let params = scalar_params(3.0);
        let mut rng = rng::stream(0, &[0]);
        let out = local_train(&Quadratic, &params, &[()], 0.1, 1, 1, &mut rng).unwrap();
        assert!((out.tensors[0].data[0] - (3.0 - 0.1 * 2.0 * 3.0)).abs() < 1e-15);

        // eta = 0 leaves parameters untouched over any number of steps.
        let frozen = local_train(&Quadratic, &params, &[()], 0.0, 7, 1, &mut rng).unwrap();
        assert_eq!(frozen, params);
    }

    #[test]
    fn fedavg_means_and_degenerate_cases() {
        let global = scalar_params(0.0);
        // Clients pulled to 2 and 4 average to 3.
        let out = fedavg_round_with_seeds(
            &PullToTarget,
            &global,
            &[vec![2.0], vec![4.0]],
            1.0,
            1,
            1,
            &[1, 2],
        )
        .unwrap();
        assert!((out.tensors[0].data[0] - 3.0).abs() < 1e-15);

        // One client: identical to local training with the same seed.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let solo = local_train(&PullToTarget, &global, &[5.0], 1.0, 1, 1, &mut rng).unwrap();
        let fed = fedavg_round_with_seeds(&PullToTarget, &global, &[vec![5.0]], 1.0, 1, 1, &[9])
            .unwrap();
        assert_eq!(solo, fed);

        // Identical datasets and seeds: the mean equals any single client.
        let fed3 = fedavg_round_with_seeds(
            &PullToTarget,
            &global,
            &[vec![5.0], vec![5.0], vec![5.0]],
            1.0,
            1,
            1,
            &[9, 9, 9],
        )
        .unwrap();
        assert!((fed3.tensors[0].data[0] - solo.tensors[0].data[0]).abs() < 1e-15);
    }

    #[test]
    fn single_client_fedavg_tracks_centralized_sgd() {
        let net = DemandNet::new(NetConfig {
            num_files: 5,
            input_len: 3,
            horizon: 2,
            embed_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ff_dim: 16,
        })
        .unwrap();
        let mut rng = rng::stream(4, &[2]);
        let windows: Vec<Window> = net::random_windows(12, 5, 3, 2, &mut rng)
            .into_iter()
            .map(|(input, label)| Window { input, label })
            .collect();
        let initial = net.init_params(1);

        let rounds = 3;
        let mut seed_rng = rng::stream(77, &[tag::TRAIN_ROUND]);
        let seeds: Vec<u64> = (0..rounds).map(|_| seed_rng.random()).collect();

        let mut fed = initial.clone();
        for &s in &seeds {
            fed = fedavg_round_with_seeds(
                &net,
                &fed,
                std::slice::from_ref(&windows),
                0.05,
                2,
                4,
                &[s],
            )
            .unwrap();
        }

        let mut central = initial;
        for &s in &seeds {
            let mut r = ChaCha12Rng::seed_from_u64(s);
            central = local_train(&net, &central, &windows, 0.05, 2, 4, &mut r).unwrap();
        }

        for (a, b) in fed.tensors.iter().zip(&central.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-12, "tensor {}", a.name);
            }
        }
    }

    #[test]
    fn full_batch_descent_is_monotone() {
        let net = DemandNet::new(NetConfig {
            num_files: 4,
            input_len: 3,
            horizon: 2,
            embed_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ff_dim: 8,
        })
        .unwrap();
        let mut rng = rng::stream(5, &[3]);
        let windows: Vec<Window> = net::random_windows(6, 4, 3, 2, &mut rng)
            .into_iter()
            .map(|(input, label)| Window { input, label })
            .collect();
        let mut params = net.init_params(2);
        let mut losses = vec![net.dataset_loss(&params, &windows).unwrap()];
        for round in 0..15u64 {
            params = fedavg_round_with_seeds(
                &net,
                &params,
                std::slice::from_ref(&windows),
                1e-3,
                1,
                windows.len(), // full batch keeps descent deterministic
                &[round],
            )
            .unwrap();
            losses.push(net.dataset_loss(&params, &windows).unwrap());
        }
        for pair in losses.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss increased: {pair:?}");
        }
    }

    fn genie_setup() -> (Catalog, RequestTrace) {
        let catalog = Catalog::generate(16, 2, 4, 1.2, 3).unwrap();
        let config = workload::test_config();
        let trace = workload::generate_trace(2, &catalog, &config, 21).unwrap();
        (catalog, trace)
    }

    #[test]
    fn genie_correctness_extremes() {
        let (catalog, trace) = genie_setup();
        let perfect = GeniePredictor::new(1.0, 5, &catalog);
        let rows = perfect.predict(&trace, 0, 4, 6).unwrap();
        for (h, row) in rows.iter().enumerate() {
            assert_eq!(argmax(row), trace.request(0, 4 + h) as usize);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }

        let hostile = GeniePredictor::new(0.0, 5, &catalog);
        let rows = hostile.predict(&trace, 0, 4, 6).unwrap();
        for (h, row) in rows.iter().enumerate() {
            let truth = trace.request(0, 4 + h) as usize;
            assert_eq!(row[truth], 0.0);
            // The wrong pick stays inside the true file's genre.
            assert_eq!(catalog.genre_of(argmax(row) as u32), catalog.genre_of(truth as u32));
        }

        assert!(perfect.predict(&trace, 0, trace.total_minislots(), 2).is_err());
    }

    #[test]
    fn genie_accuracy_concentrates_at_p() {
        // Every (seed, user, start, offset) combination below is distinct, so
        // each coin flip is an independent Bernoulli(p) draw.
        let (catalog, trace) = genie_setup();
        let p = 0.7;
        let horizon = 4usize;
        let starts: Vec<usize> =
            (0..trace.total_minislots() - horizon).step_by(horizon).collect();
        let mut correct = 0usize;
        let mut total = 0usize;
        for seed in 0..200u64 {
            let genie = GeniePredictor::new(p, seed, &catalog);
            for user in 0..trace.num_users() {
                for &start in &starts {
                    let rows = genie.predict(&trace, user, start, horizon).unwrap();
                    for (h, row) in rows.iter().enumerate() {
                        total += 1;
                        if argmax(row) == trace.request(user, start + h) as usize {
                            correct += 1;
                        }
                    }
                }
            }
        }
        let sigma = (p * (1.0 - p) / total as f64).sqrt();
        let emp = correct as f64 / total as f64;
        assert!(total > 10_000);
        assert!((emp - p).abs() < 3.0 * sigma, "empirical {emp} over {total}, expected {p}");
    }

    /// Predictor with one scripted row per (start + offset) position.
    struct Scripted {
        rows: Vec<Vec<f64>>,
    }

    impl Predictor for Scripted {
        fn predict(
            &self,
            _trace: &RequestTrace,
            _user: usize,
            start: usize,
            horizon: usize,
        ) -> Result<Vec<Vec<f64>>> {
            Ok((0..horizon)
                .map(|h| self.rows[(start + h) % self.rows.len()].clone())
                .collect())
        }
    }

    #[test]
    fn accuracy_profile_counts_and_fallback() {
        // The user alternates files 0 and 1; the predictor always says 0.
        let trace = trace_of(vec![0, 1, 0, 1, 0, 1, 0, 1], 3);
        let scripted = Scripted { rows: vec![vec![1.0, 0.0, 0.0]] };
        let profile = build_accuracy_profile(&scripted, &trace, 0, 4, 2, 1).unwrap();
        // Offset 0 truths are always file 0 and always predicted.
        assert_eq!(profile.lookup(0, 0, 0), 1.0);
        // File 1 never appears at offset 0: falls back to the offset mean.
        assert_eq!(profile.lookup(0, 1, 0), 1.0);
        // File 2 never appears anywhere and offset data exists: same fallback.
        assert_eq!(profile.lookup(0, 2, 0), 1.0);

        // Genie at p = 1 gives unit accuracy wherever entries exist.
        let (catalog, gtrace) = genie_setup();
        let genie = GeniePredictor::new(1.0, 2, &catalog);
        let profile = build_accuracy_profile(&genie, &gtrace, 4, 5, 2, 4).unwrap();
        for u in 0..gtrace.num_users() {
            for h in 0..4 {
                assert_eq!(profile.offset_accuracy(u, h), Some(1.0));
            }
        }

        // Two true requests of file 2 at offset 0, one predicted correctly.
        let trace = trace_of(vec![2, 9, 2, 9, 0, 9], 10);
        let scripted = Scripted {
            rows: vec![
                {
                    let mut r = vec![0.0; 10];
                    r[2] = 1.0;
                    r
                }, // start 0: truth 2, hit
                vec![0.0; 10],
                {
                    let mut r = vec![0.0; 10];
                    r[5] = 1.0;
                    r
                }, // start 2: truth 2, miss
                vec![0.0; 10],
                {
                    let mut r = vec![0.0; 10];
                    r[0] = 1.0;
                    r
                }, // start 4: truth 0, hit
            ],
        };
        let profile = build_accuracy_profile(&scripted, &trace, 0, 3, 2, 1).unwrap();
        assert_eq!(profile.lookup(0, 2, 0), 0.5);
        assert_eq!(profile.lookup(0, 0, 0), 1.0);
        let round_trip = {
            let mut buf = Vec::new();
            profile.write_to(&mut buf).unwrap();
            AccuracyProfile::read_from(&buf[..]).unwrap()
        };
        assert_eq!(round_trip, profile);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4]), 1);
    }
}
