//! Numerical integration of latent dynamics: the Tsitouras 5(4) embedded
//! Runge-Kutta pair with adaptive step control, plus a fixed-step RK4
//! baseline. Both are generic over a state backend so the same driver runs
//! on plain f64 vectors (inference) and on autodiff tape nodes (training).
//!
//! Step sizes chosen by the controller are plain f64 constants, so no
//! gradient flows through the accept/reject logic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};

/// State algebra the solver needs: linear combinations with constant
/// coefficients, access to primal values, and rollback of rejected work.
pub trait OdeBackend {
    type State: Clone;

    fn comb(&mut self, terms: &[(f64, &Self::State)]) -> Self::State;
    fn primal(&self, s: &Self::State) -> Vec<f64>;
    fn checkpoint(&self) -> usize;
    fn rollback(&mut self, mark: usize);
}

/// Plain f64 backend for inference and analytic tests.
pub struct Plain;

impl OdeBackend for Plain {
    type State = Vec<f64>;

    fn comb(&mut self, terms: &[(f64, &Vec<f64>)]) -> Vec<f64> {
        let n = terms[0].1.len();
        let mut out = vec![0.0; n];
        for (c, v) in terms {
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += c * x;
            }
        }
        out
    }

    fn primal(&self, s: &Vec<f64>) -> Vec<f64> {
        s.clone()
    }

    fn checkpoint(&self) -> usize {
        0
    }

    fn rollback(&mut self, _mark: usize) {}
}

impl OdeBackend for Tape {
    type State = NodeId;

    fn comb(&mut self, terms: &[(f64, &NodeId)]) -> NodeId {
        let terms: Vec<(f64, NodeId)> = terms.iter().map(|&(c, id)| (c, *id)).collect();
        self.linear_comb(&terms, None)
    }

    fn primal(&self, s: &NodeId) -> Vec<f64> {
        self.value(*s).to_vec()
    }

    fn checkpoint(&self) -> usize {
        self.len()
    }

    fn rollback(&mut self, mark: usize) {
        self.truncate(mark);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub initial_dt: f64,
    pub max_steps: usize,
    pub safety: f64,
    pub growth: f64,
    pub shrink: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rtol: 1e-5,
            atol: 1e-6,
            initial_dt: 1e-3,
            max_steps: 100_000,
            safety: 0.9,
            growth: 5.0,
            shrink: 0.2,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rtol <= 0.0 || self.atol <= 0.0 || self.initial_dt <= 0.0 {
            return Err(Error::Invalid(
                "rtol, atol and initial_dt must be positive".into(),
            ));
        }
        Ok(())
    }
}

// Tsitouras 5(4) tableau. The 7th stage is FSAL: a7 equals the 5th-order
// weights b, so k7 of an accepted step is k1 of the next.
const C: [f64; 7] = [
    0.0,
    0.161,
    0.327,
    0.9,
    0.9800255409045097,
    1.0,
    1.0,
];
const A2: [f64; 1] = [0.161];
const A3: [f64; 2] = [-0.008480655492356989, 0.335480655492357];
const A4: [f64; 3] = [2.8971530571054935, -6.359448489975075, 4.3622954328695815];
const A5: [f64; 4] = [
    5.325864828439257,
    -11.748883564062828,
    7.4955393428898365,
    -0.09249506636175525,
];
const A6: [f64; 5] = [
    5.86145544294642,
    -12.92096931784711,
    8.159367898576159,
    -0.071584973281401,
    -0.028269050394068383,
];
const B: [f64; 7] = [
    0.09646076681806523,
    0.01,
    0.4798896504144996,
    1.379008574103742,
    -3.290069515436081,
    2.324710524099774,
    0.0,
];
/// b - bhat: dotted with the stages this gives the order-5 minus order-4
/// difference, the local error estimate.
const BTILDE: [f64; 7] = [
    -0.00178001105222577714,
    -0.0008164344596567469,
    0.007880878010261995,
    -0.1447110071732629,
    0.5823571654525552,
    -0.45808210592918697,
    0.015151515151515152,
];

fn check_finite<B: OdeBackend>(backend: &B, s: &B::State, t: f64, h: f64) -> Result<()> {
    if backend.primal(s).iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver {
            message: "dynamics returned a non-finite value".into(),
            last_t: t,
            last_h: h,
        });
    }
    Ok(())
}

/// One embedded Tsit5 step of size `h` from `(t, y)`. Returns the order-5
/// solution, the componentwise error estimate, and the last stage (FSAL
/// candidate for the next step). `k1` may be supplied from a previous step.
pub fn tsit5_step<B: OdeBackend, F>(
    backend: &mut B,
    f: &mut F,
    t: f64,
    y: &B::State,
    h: f64,
    k1: Option<B::State>,
) -> Result<(B::State, Vec<f64>, B::State)>
where
    F: FnMut(&mut B, f64, &B::State) -> Result<B::State>,
{
    if h == 0.0 {
        return Err(Error::Invalid("tsit5_step requires h != 0".into()));
    }
    let k1 = match k1 {
        Some(k) => k,
        None => f(backend, t, y)?,
    };
    check_finite(backend, &k1, t, h)?;

    let y2 = backend.comb(&[(1.0, y), (h * A2[0], &k1)]);
    let k2 = f(backend, t + C[1] * h, &y2)?;
    let y3 = backend.comb(&[(1.0, y), (h * A3[0], &k1), (h * A3[1], &k2)]);
    let k3 = f(backend, t + C[2] * h, &y3)?;
    let y4 = backend.comb(&[(1.0, y), (h * A4[0], &k1), (h * A4[1], &k2), (h * A4[2], &k3)]);
    let k4 = f(backend, t + C[3] * h, &y4)?;
    let y5 = backend.comb(&[
        (1.0, y),
        (h * A5[0], &k1),
        (h * A5[1], &k2),
        (h * A5[2], &k3),
        (h * A5[3], &k4),
    ]);
    let k5 = f(backend, t + C[4] * h, &y5)?;
    let y6 = backend.comb(&[
        (1.0, y),
        (h * A6[0], &k1),
        (h * A6[1], &k2),
        (h * A6[2], &k3),
        (h * A6[3], &k4),
        (h * A6[4], &k5),
    ]);
    let k6 = f(backend, t + C[5] * h, &y6)?;

    let y_next = backend.comb(&[
        (1.0, y),
        (h * B[0], &k1),
        (h * B[1], &k2),
        (h * B[2], &k3),
        (h * B[3], &k4),
        (h * B[4], &k5),
        (h * B[5], &k6),
    ]);
    check_finite(backend, &y_next, t, h)?;
    let k7 = f(backend, t + h, &y_next)?;
    check_finite(backend, &k7, t, h)?;

    let ks = [&k1, &k2, &k3, &k4, &k5, &k6, &k7];
    let dim = backend.primal(y).len();
    let mut err = vec![0.0; dim];
    for (bt, k) in BTILDE.iter().zip(ks.iter()) {
        let kp = backend.primal(k);
        for (e, v) in err.iter_mut().zip(kp.iter()) {
            *e += h * bt * v;
        }
    }
    Ok((y_next, err, k7))
}

/// Adaptive Tsit5 integrator that can be driven to successive targets while
/// carrying its step-size state (and the FSAL stage) across calls.
pub struct Stepper<B: OdeBackend> {
    pub t: f64,
    pub y: B::State,
    cfg: SolverConfig,
    /// Proposed (unclamped) step magnitude.
    h: f64,
    dir: f64,
    k1: Option<B::State>,
    steps_used: usize,
}

impl<B: OdeBackend> Stepper<B> {
    pub fn new(t0: f64, y0: B::State, direction: f64, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.initial_dt;
        Ok(Stepper {
            t: t0,
            y: y0,
            h,
            dir: if direction < 0.0 { -1.0 } else { 1.0 },
            cfg,
            k1: None,
            steps_used: 0,
        })
    }

    /// Advances to exactly `target`, clamping the final step to land on it.
    pub fn advance_to<F>(&mut self, backend: &mut B, f: &mut F, target: f64) -> Result<()>
    where
        F: FnMut(&mut B, f64, &B::State) -> Result<B::State>,
    {
        if (target - self.t) * self.dir < 0.0 {
            return Err(Error::Invalid(format!(
                "target {target} behind current t {} for direction {}",
                self.t, self.dir
            )));
        }
        while (target - self.t) * self.dir > 0.0 {
            if self.steps_used >= self.cfg.max_steps {
                return Err(Error::Solver {
                    message: format!("max_steps {} exceeded", self.cfg.max_steps),
                    last_t: self.t,
                    last_h: self.h * self.dir,
                });
            }
            let remaining = (target - self.t).abs();
            let clamped = self.h > remaining;
            let h_try = self.h.min(remaining) * self.dir;

            let mark = backend.checkpoint();
            let k1 = self.k1.take();
            let (y_next, err, k7) = tsit5_step(backend, f, self.t, &self.y, h_try, k1)?;
            self.steps_used += 1;

            let norm = self.error_norm(backend, &err, &self.y, &y_next);
            if norm <= 1.0 {
                self.t = if clamped { target } else { self.t + h_try };
                self.y = y_next;
                self.k1 = Some(k7);
                let factor = if norm == 0.0 {
                    self.cfg.growth
                } else {
                    (self.cfg.safety * norm.powf(-0.2))
                        .clamp(self.cfg.shrink, self.cfg.growth)
                };
                let proposal = h_try.abs() * factor;
                // A step clamped to land on a target must not shrink the
                // carried proposal.
                self.h = if clamped { self.h.max(proposal) } else { proposal };
            } else {
                backend.rollback(mark);
                self.k1 = None;
                let factor = (self.cfg.safety * norm.powf(-0.2)).clamp(self.cfg.shrink, 1.0);
                self.h = h_try.abs() * factor;
            }
        }
        Ok(())
    }

    /// Replaces the state (after a discrete update at an observation). The
    /// FSAL stage no longer matches, so it is dropped.
    pub fn set_state(&mut self, y: B::State) {
        self.y = y;
        self.k1 = None;
    }

    fn error_norm(&self, backend: &B, err: &[f64], y: &B::State, y_next: &B::State) -> f64 {
        let yp = backend.primal(y);
        let np = backend.primal(y_next);
        let mut worst = 0.0f64;
        for i in 0..err.len() {
            let scale = self.cfg.atol + self.cfg.rtol * yp[i].abs().max(np[i].abs());
            worst = worst.max((err[i] / scale).abs());
        }
        if !worst.is_finite() {
            return f64::INFINITY;
        }
        worst
    }
}

/// Integrates `y' = f(t, y)` from `t_span.0`, returning the state at each
/// of `eval_times`. Steps land exactly on every requested time. Supports
/// backward spans (`t_span.0 > t_span.1`).
pub fn solve_at<B: OdeBackend, F>(
    backend: &mut B,
    f: &mut F,
    y0: B::State,
    t_span: (f64, f64),
    eval_times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<B::State>>
where
    F: FnMut(&mut B, f64, &B::State) -> Result<B::State>,
{
    let (t0, t1) = t_span;
    if t0 == t1 && eval_times.iter().any(|&t| t != t0) {
        return Err(Error::Invalid("degenerate t_span".into()));
    }
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let lo = t0.min(t1);
    let hi = t0.max(t1);
    let mut prev = t0;
    for &te in eval_times {
        if te < lo - 1e-12 || te > hi + 1e-12 || (te - prev) * dir < 0.0 {
            return Err(Error::Invalid(format!(
                "eval time {te} outside span [{t0}, {t1}] or out of order"
            )));
        }
        prev = te;
    }

    let mut stepper = Stepper::new(t0, y0, dir, cfg.clone())?;
    let mut out = Vec::with_capacity(eval_times.len());
    for &te in eval_times {
        stepper.advance_to(backend, f, te)?;
        out.push(stepper.y.clone());
    }
    Ok(out)
}

/// Classical fixed-step RK4 on a uniform grid over `t_span`, with linear
/// interpolation at `eval_times`. Deterministic baseline for gradient tests.
pub fn rk4_solve<B: OdeBackend, F>(
    backend: &mut B,
    f: &mut F,
    y0: B::State,
    t_span: (f64, f64),
    n_steps: usize,
    eval_times: &[f64],
) -> Result<Vec<B::State>>
where
    F: FnMut(&mut B, f64, &B::State) -> Result<B::State>,
{
    if n_steps == 0 {
        return Err(Error::Invalid("rk4_solve requires n_steps >= 1".into()));
    }
    let (t0, t1) = t_span;
    let h = (t1 - t0) / n_steps as f64;
    let mut grid = Vec::with_capacity(n_steps + 1);
    grid.push(y0.clone());
    let mut y = y0;
    for i in 0..n_steps {
        let t = t0 + i as f64 * h;
        let k1 = f(backend, t, &y)?;
        let y2 = backend.comb(&[(1.0, &y), (0.5 * h, &k1)]);
        let k2 = f(backend, t + 0.5 * h, &y2)?;
        let y3 = backend.comb(&[(1.0, &y), (0.5 * h, &k2)]);
        let k3 = f(backend, t + 0.5 * h, &y3)?;
        let y4 = backend.comb(&[(1.0, &y), (h, &k3)]);
        let k4 = f(backend, t + h, &y4)?;
        y = backend.comb(&[
            (1.0, &y),
            (h / 6.0, &k1),
            (h / 3.0, &k2),
            (h / 3.0, &k3),
            (h / 6.0, &k4),
        ]);
        check_finite(backend, &y, t, h)?;
        grid.push(y.clone());
    }

    let mut out = Vec::with_capacity(eval_times.len());
    for &te in eval_times {
        let s = (te - t0) / h;
        let i = (s.floor() as usize).min(n_steps - 1).max(0);
        let w = (s - i as f64).clamp(0.0, 1.0);
        let v = if w == 0.0 {
            grid[i].clone()
        } else {
            backend.comb(&[(1.0 - w, &grid[i]), (w, &grid[i + 1])])
        };
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_dynamics(_: &mut Plain, _t: f64, y: &Vec<f64>) -> Result<Vec<f64>> {
        Ok(y.clone())
    }

    #[test]
    fn tableau_consistency() {
        let rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!((sum - C[i + 1]).abs() < 1e-12, "row {i}: {sum} vs {}", C[i + 1]);
        }
        assert!((B.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(BTILDE.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn zero_dynamics_fixed_point() {
        let mut b = Plain;
        let mut f = |_: &mut Plain, _: f64, y: &Vec<f64>| Ok(vec![0.0; y.len()]);
        let (y, err, _) = tsit5_step(&mut b, &mut f, 0.0, &vec![1.5, -2.0], 0.3, None).unwrap();
        assert_eq!(y, vec![1.5, -2.0]);
        assert!(err.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn fifth_order_convergence_on_exp() {
        // Global error at t=1 for y'=y should scale ~ h^5.
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let mut errors = Vec::new();
        for &h in &hs {
            let h: f64 = h;
            let mut b = Plain;
            let mut f = exp_dynamics;
            let n = (1.0 / h).round() as usize;
            let mut y = vec![1.0];
            for i in 0..n {
                let (yn, _, _) = tsit5_step(&mut b, &mut f, i as f64 * h, &y, h, None).unwrap();
                y = yn;
            }
            errors.push((y[0] - 1f64.exp()).abs());
        }
        // Log-log slope via least squares.
        let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (4.6..=5.3).contains(&slope),
            "convergence slope {slope}, errors {errors:?}"
        );
    }

    #[test]
    fn solve_exp_to_e() {
        let mut b = Plain;
        let cfg = SolverConfig {
            rtol: 1e-9,
            atol: 1e-12,
            ..SolverConfig::default()
        };
        let out = solve_at(&mut b, &mut exp_dynamics, vec![1.0], (0.0, 1.0), &[1.0], &cfg).unwrap();
        assert!((out[0][0] - 1f64.exp()).abs() < 1e-8, "{}", out[0][0]);
    }

    #[test]
    fn rotation_returns_to_start() {
        let mut b = Plain;
        let mut f = |_: &mut Plain, _: f64, y: &Vec<f64>| Ok(vec![-y[1], y[0]]);
        let cfg = SolverConfig {
            rtol: 1e-9,
            atol: 1e-12,
            ..SolverConfig::default()
        };
        let tau = 2.0 * std::f64::consts::PI;
        let out = solve_at(&mut b, &mut f, vec![1.0, 0.0], (0.0, tau), &[tau * 0.5, tau], &cfg).unwrap();
        let end = &out[1];
        assert!((end[0] - 1.0).abs() < 1e-6 && end[1].abs() < 1e-6, "{end:?}");
        let norm = (end[0] * end[0] + end[1] * end[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_integration() {
        let mut b = Plain;
        let cfg = SolverConfig {
            rtol: 1e-9,
            atol: 1e-12,
            ..SolverConfig::default()
        };
        let e = 1f64.exp();
        let out = solve_at(&mut b, &mut exp_dynamics, vec![e], (1.0, 0.0), &[0.0], &cfg).unwrap();
        assert!((out[0][0] - 1.0).abs() < 1e-8, "{}", out[0][0]);
    }

    #[test]
    fn large_step_gets_rejected() {
        // y' = -50 y with a huge initial dt: the first attempt must be
        // rejected and the solve still succeed.
        let mut b = Plain;
        let mut f = |_: &mut Plain, _: f64, y: &Vec<f64>| Ok(vec![-50.0 * y[0]]);
        let cfg = SolverConfig {
            rtol: 1e-6,
            atol: 1e-9,
            initial_dt: 1.0,
            ..SolverConfig::default()
        };
        let out = solve_at(&mut b, &mut f, vec![1.0], (0.0, 1.0), &[1.0], &cfg).unwrap();
        assert!((out[0][0] - (-50.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn rk4_exp_high_accuracy() {
        let mut b = Plain;
        let out = rk4_solve(&mut b, &mut exp_dynamics, vec![1.0], (0.0, 1.0), 1000, &[1.0]).unwrap();
        assert!((out[0][0] - 1f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_constant_dynamics() {
        let mut b = Plain;
        let mut f = |_: &mut Plain, _: f64, y: &Vec<f64>| Ok(vec![0.0; y.len()]);
        let out = rk4_solve(&mut b, &mut f, vec![3.0], (0.0, 1.0), 10, &[0.25, 0.5, 1.0]).unwrap();
        for y in out {
            assert_eq!(y, vec![3.0]);
        }
    }

    #[test]
    fn rk4_agrees_with_adaptive_on_linear_system() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let dim = 3;
            let a: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut f = |_: &mut Plain, _: f64, y: &Vec<f64>| {
                let mut dy = vec![0.0; dim];
                for i in 0..dim {
                    for j in 0..dim {
                        dy[i] += a[i * dim + j] * y[j];
                    }
                }
                Ok(dy)
            };
            let cfg = SolverConfig {
                rtol: 1e-8,
                atol: 1e-10,
                ..SolverConfig::default()
            };
            let mut b = Plain;
            let adaptive = solve_at(&mut b, &mut f, y0.clone(), (0.0, 1.0), &[1.0], &cfg).unwrap();
            let fixed = rk4_solve(&mut b, &mut f, y0, (0.0, 1.0), 2000, &[1.0]).unwrap();
            for (x, y) in adaptive[0].iter().zip(fixed[0].iter()) {
                let tol = 10.0 * (cfg.rtol * y.abs()).max(cfg.atol) + 1e-8;
                assert!((x - y).abs() < tol, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn max_steps_exceeded_reports_last_t() {
        let mut b = Plain;
        let cfg = SolverConfig {
            max_steps: 3,
            ..SolverConfig::default()
        };
        let err = solve_at(&mut b, &mut exp_dynamics, vec![1.0], (0.0, 10.0), &[10.0], &cfg)
            .unwrap_err();
        match err {
            Error::Solver { last_t, .. } => assert!(last_t < 10.0),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn determinism() {
        let run = || {
            let mut b = Plain;
            let cfg = SolverConfig::default();
            solve_at(&mut b, &mut exp_dynamics, vec![1.0], (0.0, 1.0), &[0.3, 0.7, 1.0], &cfg)
                .unwrap()
        };
        let a = run();
        let c = run();
        assert_eq!(a, c); // bit-identical
    }

    #[test]
    fn tightening_tolerance_does_not_hurt() {
        let mut b = Plain;
        let exact = 1f64.exp();
        let mut errs = Vec::new();
        for k in 0..3 {
            let cfg = SolverConfig {
                rtol: 1e-5 * 10f64.powi(-k),
                atol: 1e-8 * 10f64.powi(-k),
                ..SolverConfig::default()
            };
            let out = solve_at(&mut b, &mut exp_dynamics, vec![1.0], (0.0, 1.0), &[1.0], &cfg).unwrap();
            errs.push((out[0][0] - exact).abs());
        }
        assert!(errs[1] <= errs[0] + 1e-15 && errs[2] <= errs[1] + 1e-15, "{errs:?}");
    }
}
