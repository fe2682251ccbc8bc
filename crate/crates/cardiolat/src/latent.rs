//! The path-regularized latent ODE: an ODE-RNN encoder that maps a beat to
//! a Gaussian over the initial latent state, reparameterized sampling, ODE
//! decoding through a readout network, the squared point-to-point path
//! penalty that replaces the variational term, and the Adam training loop.

use std::borrow::Cow;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beat::{Beat, BeatClass};
use crate::error::{Error, Result};
use crate::nn::{FlatParams, Gru, GruBinding, Linear, Mlp, MlpBinding};
use crate::ode::{solve_at, Plain, SolverConfig, Stepper};
use crate::tape::{NodeId, Tape};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the squared path-length penalty.
    pub path_weight: f64,
    pub sigma_floor: f64,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Validation-MSE evaluation cadence in steps (0 = auto).
    pub eval_every: usize,
    /// Cap on validation beats used per evaluation.
    pub eval_max_beats: usize,
    /// Observation-grid subsampling factors drawn uniformly per training
    /// beat. The encoder must produce consistent latents for the same beat
    /// observed at different rates, so training exposes it to coarser
    /// grids. Empty disables subsampling; 1 keeps the native grid.
    #[serde(default = "default_grid_subsample")]
    pub grid_subsample: Vec<usize>,
}

fn default_grid_subsample() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 45,
            latent_dim: 45,
            steps: 50_000,
            batch_size: 256,
            learning_rate: 1e-3,
            path_weight: 1e-3,
            sigma_floor: 1e-3,
            solver: SolverConfig::default(),
            seed: 0,
            eval_every: 0,
            eval_max_beats: 64,
            grid_subsample: default_grid_subsample(),
        }
    }
}

/// Encoder, latent dynamics, and readout parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentOdeModel {
    pub version: u32,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub sigma_floor: f64,
    /// Observation update of the ODE-RNN encoder (input: one signal value).
    pub encoder_cell: Gru,
    /// Hidden-state drift between observations.
    pub encoder_dynamics: Mlp,
    pub head_mean: Linear,
    pub head_log_sigma: Linear,
    /// Latent drift.
    pub dynamics: Mlp,
    /// Latent state to signal value.
    pub readout: Mlp,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// One conditional sample of the initial latent state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentVector {
    pub beat_id: u64,
    pub label: BeatClass,
    pub effective_frequency: f64,
    pub seed: u64,
    pub z0: Vec<f64>,
}

pub struct ModelBinding {
    gru: GruBinding,
    enc_dyn: MlpBinding,
    head_mu: (NodeId, NodeId),
    head_sig: (NodeId, NodeId),
    dynamics: MlpBinding,
    readout: MlpBinding,
}

impl LatentOdeModel {
    pub fn new(hidden_dim: usize, latent_dim: usize, sigma_floor: f64, rng: &mut impl Rng) -> Self {
        LatentOdeModel {
            version: CHECKPOINT_VERSION,
            hidden_dim,
            latent_dim,
            sigma_floor,
            encoder_cell: Gru::new(1, hidden_dim, rng),
            encoder_dynamics: Mlp::new(hidden_dim, &[50, 50], hidden_dim, rng),
            head_mean: Linear::new(hidden_dim, latent_dim, rng),
            head_log_sigma: Linear::new(hidden_dim, latent_dim, rng),
            dynamics: Mlp::new(latent_dim, &[50, 50], latent_dim, rng),
            readout: Mlp::new(latent_dim, &[50, 50], 1, rng),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        LatentOdeModel::new(cfg.hidden_dim, cfg.latent_dim, cfg.sigma_floor, &mut rng)
    }

    pub fn n_params(&self) -> usize {
        self.encoder_cell.n_params()
            + self.encoder_dynamics.n_params()
            + self.head_mean.n_params()
            + self.head_log_sigma.n_params()
            + self.dynamics.n_params()
            + self.readout.n_params()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.encoder_cell.append_flat(&mut out);
        self.encoder_dynamics.append_flat(&mut out);
        self.head_mean.append_flat(&mut out);
        self.head_log_sigma.append_flat(&mut out);
        self.dynamics.append_flat(&mut out);
        self.readout.append_flat(&mut out);
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.encoder_cell.read_flat(flat, &mut pos);
        self.encoder_dynamics.read_flat(flat, &mut pos);
        self.head_mean.read_flat(flat, &mut pos);
        self.head_log_sigma.read_flat(flat, &mut pos);
        self.dynamics.read_flat(flat, &mut pos);
        self.readout.read_flat(flat, &mut pos);
        debug_assert_eq!(pos, flat.len());
    }

    pub fn alloc(&self, tape: &mut Tape) -> ModelBinding {
        ModelBinding {
            gru: self.encoder_cell.alloc(tape),
            enc_dyn: self.encoder_dynamics.alloc(tape),
            head_mu: self.head_mean.alloc(tape),
            head_sig: self.head_log_sigma.alloc(tape),
            dynamics: self.dynamics.alloc(tape),
            readout: self.readout.alloc(tape),
        }
    }

    fn binding_ids(binding: &ModelBinding) -> Vec<NodeId> {
        let mut ids = Vec::new();
        Gru::append_node_ids(&binding.gru, &mut ids);
        Mlp::append_node_ids(&binding.enc_dyn, &mut ids);
        Linear::append_node_ids(&binding.head_mu, &mut ids);
        Linear::append_node_ids(&binding.head_sig, &mut ids);
        Mlp::append_node_ids(&binding.dynamics, &mut ids);
        Mlp::append_node_ids(&binding.readout, &mut ids);
        ids
    }

    fn ln_floor(&self) -> f64 {
        if self.sigma_floor > 0.0 {
            self.sigma_floor.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// ODE-RNN encoder pass (inference path). Observations are processed in
    /// reverse time order; between observations the hidden state follows the
    /// encoder dynamics, at each observation the GRU updates it.
    pub fn encode_dist(&self, beat: &Beat, solver: &SolverConfig) -> Result<(Vec<f64>, Vec<f64>)> {
        if beat.len() < 2 {
            return Err(Error::Invalid(format!(
                "beat from {} has fewer than 2 observations",
                beat.record_name
            )));
        }
        let n = beat.len();
        let mut backend = Plain;
        let h0 = vec![0.0; self.hidden_dim];
        let h = self
            .encoder_cell
            .step_plain(&h0, &[beat.values[n - 1]])
            .map_err(|e| self.tag_beat(e, beat))?;
        let mut stepper = Stepper::<Plain>::new(beat.times[n - 1], h, -1.0, solver.clone())?;
        let mut f = |_: &mut Plain, _t: f64, y: &Vec<f64>| self.encoder_dynamics.forward_plain(y);
        for i in (0..n - 1).rev() {
            stepper
                .advance_to(&mut backend, &mut f, beat.times[i])
                .map_err(|e| self.tag_beat(e, beat))?;
            let h_new = self.encoder_cell.step_plain(&stepper.y, &[beat.values[i]])?;
            stepper.set_state(h_new);
        }
        let mut mu = Vec::new();
        self.head_mean.forward_plain(&stepper.y, &mut mu);
        let mut ls = Vec::new();
        self.head_log_sigma.forward_plain(&stepper.y, &mut ls);
        let lf = self.ln_floor();
        let sigma: Vec<f64> = ls.iter().map(|v| v.max(lf).exp()).collect();
        Ok((mu, sigma))
    }

    /// Reparameterized conditional sample: z0 = mu + sigma * eps with eps
    /// drawn from the given seed. Pure in (model, beat, seed).
    pub fn encode_sample(
        &self,
        beat: &Beat,
        beat_id: u64,
        seed: u64,
        solver: &SolverConfig,
    ) -> Result<LatentVector> {
        let (mu, sigma) = self.encode_dist(beat, solver)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0: Vec<f64> = mu
            .iter()
            .zip(sigma.iter())
            .map(|(m, s)| m + s * standard_normal(&mut rng))
            .collect();
        Ok(LatentVector {
            beat_id,
            label: beat.label,
            effective_frequency: beat.effective_frequency,
            seed,
            z0,
        })
    }

    /// Latent trajectory z(t) at `eval_times`, starting from z0 at t = 0.
    pub fn decode_trajectory(
        &self,
        z0: &[f64],
        eval_times: &[f64],
        solver: &SolverConfig,
    ) -> Result<Vec<Vec<f64>>> {
        let mut backend = Plain;
        let mut f = |_: &mut Plain, _t: f64, y: &Vec<f64>| self.dynamics.forward_plain(y);
        solve_at(&mut backend, &mut f, z0.to_vec(), (0.0, 1.0), eval_times, solver)
    }

    /// Reconstructed signal values at `eval_times`.
    pub fn decode(&self, z0: &[f64], eval_times: &[f64], solver: &SolverConfig) -> Result<Vec<f64>> {
        let traj = self.decode_trajectory(z0, eval_times, solver)?;
        traj.iter()
            .map(|z| self.readout.forward_plain(z).map(|y| y[0]))
            .collect()
    }

    /// Per-beat loss and flat parameter gradient via the tape: mean squared
    /// reconstruction error at the beat's observation times plus
    /// `lambda * path_penalty` of the latent trajectory.
    pub fn beat_loss_grad(
        &self,
        beat: &Beat,
        eps: &[f64],
        lambda: f64,
        solver: &SolverConfig,
    ) -> Result<(f64, Vec<f64>)> {
        let (tape, loss, ids) = self.build_loss_graph(beat, eps, lambda, solver)?;
        let grads = tape.grad(loss, &ids)?;
        let flat: Vec<f64> = grads.into_iter().flatten().collect();
        Ok((tape.scalar(loss), flat))
    }

    /// Per-beat loss value only (still exercises the same graph).
    pub fn beat_loss(&self, beat: &Beat, eps: &[f64], lambda: f64, solver: &SolverConfig) -> Result<f64> {
        let (tape, loss, _) = self.build_loss_graph(beat, eps, lambda, solver)?;
        Ok(tape.scalar(loss))
    }

    fn build_loss_graph(
        &self,
        beat: &Beat,
        eps: &[f64],
        lambda: f64,
        solver: &SolverConfig,
    ) -> Result<(Tape, NodeId, Vec<NodeId>)> {
        if eps.len() != self.latent_dim {
            return Err(Error::Shape {
                expected: self.latent_dim,
                got: eps.len(),
                context: "reparameterization noise".into(),
            });
        }
        let n = beat.len();
        let mut tape = Tape::new();
        let binding = self.alloc(&mut tape);

        // Encoder, reverse time.
        let h0 = tape.constant(vec![0.0; self.hidden_dim]);
        let x_last = tape.constant(vec![beat.values[n - 1]]);
        let h = self
            .encoder_cell
            .step_tape(&mut tape, &binding.gru, h0, x_last)?;
        let mut stepper = Stepper::<Tape>::new(beat.times[n - 1], h, -1.0, solver.clone())?;
        {
            let enc_dyn = &self.encoder_dynamics;
            let enc_binding = &binding.enc_dyn;
            let mut f = |t: &mut Tape, _t: f64, y: &NodeId| enc_dyn.forward_tape(t, enc_binding, *y);
            for i in (0..n - 1).rev() {
                stepper
                    .advance_to(&mut tape, &mut f, beat.times[i])
                    .map_err(|e| self.tag_beat(e, beat))?;
                let x = tape.constant(vec![beat.values[i]]);
                let h_new = self
                    .encoder_cell
                    .step_tape(&mut tape, &binding.gru, stepper.y, x)?;
                stepper.set_state(h_new);
            }
        }
        let h_final = stepper.y;
        let mu = Linear::forward_tape(&mut tape, binding.head_mu.0, binding.head_mu.1, h_final);
        let ls = Linear::forward_tape(&mut tape, binding.head_sig.0, binding.head_sig.1, h_final);
        let ls = tape.clamp_min(ls, self.ln_floor());
        let sigma = tape.exp(ls);
        let noise = tape.mul_const(sigma, eps);
        let z0 = tape.add(mu, noise);

        // Decode through the latent dynamics.
        let traj = {
            let dynamics = &self.dynamics;
            let dyn_binding = &binding.dynamics;
            let mut f = |t: &mut Tape, _t: f64, y: &NodeId| dynamics.forward_tape(t, dyn_binding, *y);
            solve_at(&mut tape, &mut f, z0, (0.0, 1.0), &beat.times, solver)
                .map_err(|e| self.tag_beat(e, beat))?
        };

        let mut terms: Vec<(f64, NodeId)> = Vec::with_capacity(2 * n);
        let inv_n = 1.0 / n as f64;
        for (z, &target) in traj.iter().zip(beat.values.iter()) {
            let y = self.readout.forward_tape(&mut tape, &binding.readout, *z)?;
            let d = tape.linear_comb(&[(1.0, y)], Some(&[-target]));
            let sq = tape.sum_squares(d);
            terms.push((inv_n, sq));
        }
        if lambda > 0.0 {
            for w in traj.windows(2) {
                let d = tape.sub(w[1], w[0]);
                let sq = tape.sum_squares(d);
                terms.push((lambda, sq));
            }
        }
        let loss = tape.linear_comb(&terms, None);
        tape.check()?;
        let ids = LatentOdeModel::binding_ids(&binding);
        Ok((tape, loss, ids))
    }

    /// Deterministic reconstruction MSE using the posterior mean.
    pub fn reconstruction_mse(&self, beat: &Beat, solver: &SolverConfig) -> Result<f64> {
        let (mu, _) = self.encode_dist(beat, solver)?;
        let rec = self.decode(&mu, &beat.times, solver)?;
        let mse = rec
            .iter()
            .zip(beat.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / beat.len() as f64;
        Ok(mse)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let model: LatentOdeModel =
            serde_json::from_str(&json).map_err(|e| Error::Serde(e.to_string()))?;
        if model.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "checkpoint version {} != supported {}",
                model.version, CHECKPOINT_VERSION
            )));
        }
        Ok(model)
    }

    fn tag_beat(&self, e: Error, beat: &Beat) -> Error {
        match e {
            Error::Solver { message, last_t, last_h } => Error::Solver {
                message: format!("{message} (beat from record {})", beat.record_name),
                last_t,
                last_h,
            },
            other => other,
        }
    }
}

/// Sum over consecutive rows of the squared Euclidean distance.
pub fn path_penalty(trajectory: &[Vec<f64>]) -> f64 {
    trajectory
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(w[1].iter())
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
        })
        .sum()
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_mse: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: LatentOdeModel,
    pub log: Vec<TrainLogRow>,
    pub best_val_mse: f64,
    pub diverged: bool,
}

/// Adam training loop. Returns the checkpoint with the best validation
/// reconstruction MSE (the final model when no validation beats are given).
/// On numeric divergence the last good checkpoint is returned with
/// `diverged` set.
fn subsample_factor(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> usize {
    if cfg.grid_subsample.is_empty() {
        1
    } else {
        cfg.grid_subsample[rng.gen_range(0..cfg.grid_subsample.len())]
    }
}

pub fn train(
    train_beats: &[Beat],
    val_beats: &[Beat],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if train_beats.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut model = LatentOdeModel::from_config(cfg);
    if cfg.steps == 0 {
        return Ok(TrainOutcome {
            model,
            log: Vec::new(),
            best_val_mse: f64::NAN,
            diverged: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut flat = model.flatten();
    let mut adam = Adam::new(flat.len(), cfg.learning_rate);
    let eval_every = if cfg.eval_every > 0 {
        cfg.eval_every
    } else {
        (cfg.steps / 50).max(25)
    };

    let mut log = Vec::new();
    let mut best: Option<(f64, LatentOdeModel)> = None;
    let mut diverged = false;

    for step in 1..=cfg.steps {
        let mut grad_acc = vec![0.0; flat.len()];
        let mut loss_acc = 0.0;
        let mut failed = false;
        for _ in 0..cfg.batch_size {
            let idx = rng.gen_range(0..train_beats.len());
            let eps: Vec<f64> = (0..cfg.latent_dim).map(|_| standard_normal(&mut rng)).collect();
            let beat = match subsample_factor(cfg, &mut rng) {
                f if f > 1 && f < train_beats[idx].len() => {
                    Cow::Owned(crate::beat::downsample(&train_beats[idx], f)?)
                }
                _ => Cow::Borrowed(&train_beats[idx]),
            };
            match model.beat_loss_grad(&beat, &eps, cfg.path_weight, &cfg.solver) {
                Ok((loss, grad)) => {
                    if !loss.is_finite() {
                        failed = true;
                        break;
                    }
                    loss_acc += loss;
                    for (a, g) in grad_acc.iter_mut().zip(grad.iter()) {
                        *a += g;
                    }
                }
                Err(Error::Numeric(msg)) => {
                    log::warn!("step {step}: numeric failure ({msg}), aborting");
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed {
            diverged = true;
            break;
        }
        let scale = 1.0 / cfg.batch_size as f64;
        for g in grad_acc.iter_mut() {
            *g *= scale;
        }
        let train_loss = loss_acc * scale;
        adam.update(&mut flat, &grad_acc);
        model.load_flat(&flat);

        if step % eval_every == 0 || step == cfg.steps {
            let val_mse = validation_mse(&model, val_beats, cfg)?;
            log.push(TrainLogRow {
                step,
                train_loss,
                val_mse,
            });
            log::info!("step {step}: train loss {train_loss:.6}, val mse {val_mse:.6}");
            let score = if val_mse.is_finite() { val_mse } else { train_loss };
            if best.as_ref().map_or(true, |(b, _)| score < *b) {
                best = Some((score, model.clone()));
            }
            if let Some(dir) = out_dir {
                model.save(&dir.join(format!("checkpoint_{step:07}.json")))?;
            }
        } else {
            log.push(TrainLogRow {
                step,
                train_loss,
                val_mse: f64::NAN,
            });
        }
    }

    let (best_val_mse, best_model) = match best {
        Some((score, m)) => (score, m),
        None => (f64::NAN, model),
    };
    if let Some(dir) = out_dir {
        best_model.save(&dir.join("model_best.json"))?;
        write_train_log(&dir.join("train_log.csv"), &log)?;
    }
    Ok(TrainOutcome {
        model: best_model,
        log,
        best_val_mse,
        diverged,
    })
}

fn validation_mse(model: &LatentOdeModel, val_beats: &[Beat], cfg: &TrainConfig) -> Result<f64> {
    if val_beats.is_empty() {
        return Ok(f64::NAN);
    }
    let n = val_beats.len().min(cfg.eval_max_beats);
    let mut acc = 0.0;
    for beat in &val_beats[..n] {
        acc += model.reconstruction_mse(beat, &cfg.solver)?;
    }
    Ok(acc / n as f64)
}

pub fn write_train_log(path: &Path, log: &[TrainLogRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    writeln!(w, "step,train_loss,val_mse").map_err(|e| Error::io(path.display().to_string(), e))?;
    for row in log {
        writeln!(w, "{},{},{}", row.step, row.train_loss, row.val_mse)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

// ---------------------------------------------------------------------------
// Latent export format: one CSV row per sampled latent vector.

pub fn write_latents(path: &Path, latents: &[LatentVector]) -> Result<()> {
    if latents.is_empty() {
        return Err(Error::Invalid("no latent vectors to write".into()));
    }
    let dim = latents[0].z0.len();
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let mut header = vec![
        "beat_id".to_string(),
        "label".to_string(),
        "frequency_hz".to_string(),
        "seed".to_string(),
    ];
    header.extend((0..dim).map(|i| format!("z{i}")));
    w.write_record(&header)
        .map_err(|e| Error::Serde(e.to_string()))?;
    for l in latents {
        let mut row = vec![
            l.beat_id.to_string(),
            l.label.as_str().to_string(),
            format!("{}", l.effective_frequency),
            l.seed.to_string(),
        ];
        row.extend(l.z0.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_latents(path: &Path) -> Result<Vec<LatentVector>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), 0, e.to_string()))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::parse(path.display().to_string(), i + 2, e.to_string()))?;
        if row.len() < 5 {
            return Err(Error::parse(path.display().to_string(), i + 2, "short row"));
        }
        let beat_id: u64 = row[0]
            .parse()
            .map_err(|_| Error::parse(path.display().to_string(), i + 2, "bad beat id"))?;
        let label = BeatClass::parse(&row[1]).ok_or_else(|| {
            Error::parse(path.display().to_string(), i + 2, format!("unknown class {:?}", &row[1]))
        })?;
        let effective_frequency: f64 = row[2]
            .parse()
            .map_err(|_| Error::parse(path.display().to_string(), i + 2, "bad frequency"))?;
        let seed: u64 = row[3]
            .parse()
            .map_err(|_| Error::parse(path.display().to_string(), i + 2, "bad seed"))?;
        let mut z0 = Vec::with_capacity(row.len() - 4);
        for f in row.iter().skip(4) {
            z0.push(
                f.parse()
                    .map_err(|_| Error::parse(path.display().to_string(), i + 2, "bad latent value"))?,
            );
        }
        out.push(LatentVector {
            beat_id,
            label,
            effective_frequency,
            seed,
            z0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_beat(n: usize) -> Beat {
        Beat {
            times: (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
            values: (0..n).map(|i| 0.5 + 0.4 * (i as f64 * 0.9).sin()).collect(),
            label: BeatClass::N,
            record_name: "synthetic".into(),
            r_peak_index: 0,
            effective_frequency: 360.0,
            amp_min: 0.0,
            amp_max: 1.0,
        }
    }

    fn tiny_model(seed: u64) -> LatentOdeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = LatentOdeModel::new(4, 4, 1e-3, &mut rng);
        // Narrow hidden layers keep the tests fast.
        m.encoder_dynamics = Mlp::new(4, &[8], 4, &mut rng);
        m.dynamics = Mlp::new(4, &[8], 4, &mut rng);
        m.readout = Mlp::new(4, &[8], 1, &mut rng);
        m
    }

    fn fast_solver() -> SolverConfig {
        SolverConfig {
            rtol: 1e-4,
            atol: 1e-6,
            initial_dt: 0.01,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let m = tiny_model(1);
        let beat = tiny_beat(12);
        let a = m.encode_dist(&beat, &fast_solver()).unwrap();
        let b = m.encode_dist(&beat, &fast_solver()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_handles_downsampled_beat() {
        let m = tiny_model(2);
        let beat = crate::beat::downsample(&tiny_beat(280), 4).unwrap();
        assert_eq!(beat.len(), 70);
        let (mu, sigma) = m.encode_dist(&beat, &fast_solver()).unwrap();
        assert!(mu.iter().all(|v| v.is_finite()));
        assert!(sigma.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn sample_with_zero_sigma_is_mu() {
        let mut m = tiny_model(3);
        m.sigma_floor = 0.0;
        m.head_log_sigma.weight.iter_mut().for_each(|w| *w = 0.0);
        m.head_log_sigma.bias.iter_mut().for_each(|b| *b = -1e9);
        let beat = tiny_beat(8);
        let (mu, sigma) = m.encode_dist(&beat, &fast_solver()).unwrap();
        assert!(sigma.iter().all(|s| *s == 0.0));
        let z = m.encode_sample(&beat, 0, 42, &fast_solver()).unwrap();
        assert_eq!(z.z0, mu);
    }

    #[test]
    fn distinct_seeds_give_distinct_samples() {
        let m = tiny_model(4);
        let beat = tiny_beat(8);
        let a = m.encode_sample(&beat, 0, 1, &fast_solver()).unwrap();
        let b = m.encode_sample(&beat, 0, 2, &fast_solver()).unwrap();
        assert_ne!(a.z0, b.z0);
        // Same seed: pure function.
        let c = m.encode_sample(&beat, 0, 1, &fast_solver()).unwrap();
        assert_eq!(a.z0, c.z0);
    }

    #[test]
    fn sample_mean_approaches_mu() {
        let m = tiny_model(5);
        let beat = tiny_beat(6);
        let (mu, sigma) = m.encode_dist(&beat, &fast_solver()).unwrap();
        let n = 10_000;
        let mut mean = vec![0.0; mu.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..n {
            for (k, (m_k, s_k)) in mu.iter().zip(sigma.iter()).enumerate() {
                mean[k] += m_k + s_k * standard_normal(&mut rng);
            }
        }
        for k in 0..mu.len() {
            mean[k] /= n as f64;
            let band = 4.0 * sigma[k] / (n as f64).sqrt();
            assert!(
                (mean[k] - mu[k]).abs() < band,
                "coordinate {k}: {} vs {} (band {band})",
                mean[k],
                mu[k]
            );
        }
    }

    #[test]
    fn decode_at_zero_is_readout_of_z0() {
        let m = tiny_model(6);
        let z0 = vec![0.3, -0.2, 0.5, 0.1];
        let direct = m.readout.forward_plain(&z0).unwrap()[0];
        let via_decode = m.decode(&z0, &[0.0], &fast_solver()).unwrap()[0];
        assert_eq!(direct, via_decode);
    }

    #[test]
    fn zero_dynamics_gives_constant_output() {
        let mut m = tiny_model(7);
        for l in &mut m.dynamics.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let z0 = vec![0.4, 0.1, -0.3, 0.2];
        let out = m.decode(&z0, &[0.0, 0.25, 0.5, 1.0], &fast_solver()).unwrap();
        for v in &out {
            assert!((v - out[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn path_penalty_cases() {
        assert_eq!(path_penalty(&vec![vec![1.0, 2.0]; 4]), 0.0);
        let d2 = path_penalty(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        assert!((d2 - 25.0).abs() < 1e-12);
        // Brute-force oracle on a random 5x3 trajectory.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let traj: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut direct = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                let d = traj[i + 1][j] - traj[i][j];
                direct += d * d;
            }
        }
        assert!((path_penalty(&traj) - direct).abs() < 1e-14);
        assert!(path_penalty(&traj) > 0.0);
    }

    #[test]
    fn loss_with_zero_lambda_is_reconstruction_mse() {
        let mut m = tiny_model(8);
        m.sigma_floor = 0.0;
        m.head_log_sigma.weight.iter_mut().for_each(|w| *w = 0.0);
        m.head_log_sigma.bias.iter_mut().for_each(|b| *b = -1e9);
        let beat = tiny_beat(10);
        let eps = vec![0.0; 4];
        let loss = m.beat_loss(&beat, &eps, 0.0, &fast_solver()).unwrap();
        // Independent route: decode from mu and average squared errors.
        let mse = m.reconstruction_mse(&beat, &fast_solver()).unwrap();
        assert!((loss - mse).abs() < 1e-9, "{loss} vs {mse}");
    }

    #[test]
    fn loss_decomposes_into_path_term() {
        // Zero readout and zero-valued beat: perfect reconstruction, so the
        // loss is exactly lambda times the path penalty.
        let mut m = tiny_model(10);
        m.sigma_floor = 0.0;
        m.head_log_sigma.weight.iter_mut().for_each(|w| *w = 0.0);
        m.head_log_sigma.bias.iter_mut().for_each(|b| *b = -1e9);
        for l in &mut m.readout.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        // Zero biases would leave z(t) pinned at the origin; push it.
        m.dynamics
            .layers
            .last_mut()
            .unwrap()
            .bias
            .iter_mut()
            .for_each(|b| *b = 0.4);
        let mut beat = tiny_beat(10);
        beat.values.iter_mut().for_each(|v| *v = 0.0);
        let eps = vec![0.0; 4];
        let lambda = 0.37;
        let loss = m.beat_loss(&beat, &eps, lambda, &fast_solver()).unwrap();
        let (mu, _) = m.encode_dist(&beat, &fast_solver()).unwrap();
        let traj = m.decode_trajectory(&mu, &beat.times, &fast_solver()).unwrap();
        let expect = lambda * path_penalty(&traj);
        assert!(expect > 0.0);
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let m = tiny_model(11);
        let beat = tiny_beat(6);
        let eps = vec![0.3, -0.5, 0.2, 0.8];
        let lambda = 1e-2;
        let solver = fast_solver();
        let (_, grad) = m.beat_loss_grad(&beat, &eps, lambda, &solver).unwrap();
        let flat = m.flatten();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut max_rel = 0.0f64;
        // Spot-check 60 random coordinates; the full sweep runs in the
        // acceptance suite.
        for _ in 0..60 {
            let i = rng.gen_range(0..flat.len());
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[i] += h;
            dn[i] -= h;
            let mut mu_model = m.clone();
            mu_model.load_flat(&up);
            let mut md_model = m.clone();
            md_model.load_flat(&dn);
            let fu = mu_model.beat_loss(&beat, &eps, lambda, &solver).unwrap();
            let fd_ = md_model.beat_loss(&beat, &eps, lambda, &solver).unwrap();
            let fd = (fu - fd_) / (2.0 * h);
            let denom = fd.abs().max(1e-6);
            max_rel = max_rel.max((grad[i] - fd).abs() / denom);
        }
        assert!(max_rel < 1e-3, "max relative error {max_rel}");
    }

    #[test]
    fn zero_steps_returns_initialized_model() {
        let beats = vec![tiny_beat(6)];
        let cfg = TrainConfig {
            hidden_dim: 4,
            latent_dim: 4,
            steps: 0,
            seed: 21,
            ..TrainConfig::default()
        };
        let out = train(&beats, &[], &cfg, None).unwrap();
        let fresh = LatentOdeModel::from_config(&cfg);
        assert_eq!(out.model.flatten(), fresh.flatten());
    }

    #[test]
    fn training_is_deterministic() {
        let beats: Vec<Beat> = (0..4).map(|_| tiny_beat(6)).collect();
        let cfg = TrainConfig {
            hidden_dim: 3,
            latent_dim: 3,
            steps: 5,
            batch_size: 2,
            solver: fast_solver(),
            seed: 5,
            eval_every: 2,
            ..TrainConfig::default()
        };
        let a = train(&beats, &[], &cfg, None).unwrap();
        let b = train(&beats, &[], &cfg, None).unwrap();
        let la: Vec<f64> = a.log.iter().map(|r| r.train_loss).collect();
        let lb: Vec<f64> = b.log.iter().map(|r| r.train_loss).collect();
        assert_eq!(la, lb);
        assert_eq!(a.model.flatten(), b.model.flatten());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let m = tiny_model(30);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = LatentOdeModel::load(&path).unwrap();
        assert_eq!(m.flatten(), back.flatten());
        // Byte-identical on re-save.
        let again = dir.path().join("model2.json");
        back.save(&again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn latent_export_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latents.csv");
        let latents = vec![
            LatentVector {
                beat_id: 0,
                label: BeatClass::N,
                effective_frequency: 360.0,
                seed: 7,
                z0: vec![0.1, -0.25, 3.0e-7],
            },
            LatentVector {
                beat_id: 1,
                label: BeatClass::V,
                effective_frequency: 90.0,
                seed: 8,
                z0: vec![1.5, 0.0, -2.0],
            },
        ];
        write_latents(&path, &latents).unwrap();
        let back = read_latents(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].z0, latents[0].z0);
        assert_eq!(back[1].label, BeatClass::V);
        assert_eq!(back[1].seed, 8);
    }
}
