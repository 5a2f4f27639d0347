//! Nonlinear MPC expert for the bicycle model.
//!
//! The cost is the summed squared distance between the predicted positions
//! and the reference points over the horizon. It is minimized by single
//! shooting over the steering sequence: the rollout is simulated forward,
//! the gradient comes from a backward adjoint sweep, and steps are taken
//! along a projected Newton direction (free variables; exact Hessian with
//! Levenberg damping, Gauss-Newton as fallback) or the negative gradient
//! (variables pinned at a bound), with Armijo backtracking on the
//! projection arc.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajgen::RefTrajectory;
use crate::vehicle::{Observation, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub delta_max: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            max_iters: 500,
            grad_tol: 1e-8,
            delta_max: VehicleParams::default().delta_max,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.max_iters == 0 || !(self.grad_tol > 0.0) || !(self.delta_max > 0.0) {
            return Err(Error::invalid(format!("invalid MPC configuration: {self:?}")));
        }
        Ok(())
    }
}

/// Current world-frame state and the next `N` world-frame reference points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcInput {
    pub state: VehicleState,
    pub refs: Vec<Observation>,
}

impl MpcInput {
    pub fn new(state: VehicleState, refs: Vec<Observation>) -> Self {
        Self { state, refs }
    }

    /// References `k+1 ..= k+horizon` of `traj`, with `k` saturated so the window fits.
    pub fn from_trajectory(state: VehicleState, traj: &RefTrajectory, k: usize, horizon: usize) -> Self {
        let k = k.min(traj.last_usable_index(horizon));
        Self {
            state,
            refs: traj.points()[k + 1..=k + horizon].to_vec(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.refs.len()
    }

    pub fn validate(&self, params: &VehicleParams) -> Result<()> {
        if self.refs.is_empty() {
            return Err(Error::invalid("MPC input has no reference points"));
        }
        if !self.state.is_finite() || self.refs.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("non-finite MPC input"));
        }
        let bound = 2.0 * params.spacing() + 1e-9;
        if let Some(w) = self.refs.windows(2).find(|w| w[0].distance(&w[1]) > bound) {
            return Err(Error::invalid(format!(
                "consecutive references {:?} and {:?} are farther apart than 2 v dt",
                w[0], w[1]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence(pub Vec<f64>);

impl ControlSequence {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Receding-horizon warm start: drop the applied control and repeat the last one.
    pub fn shifted(&self) -> Self {
        let mut u = self.0.clone();
        if u.len() > 1 {
            u.rotate_left(1);
            let n = u.len();
            u[n - 1] = u[n - 2];
        }
        Self(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        self == SolveStatus::Converged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub controls: ControlSequence,
    pub cost: f64,
    pub iterations: usize,
    /// Norm of `u - P(u - grad)` at the returned point.
    pub projected_gradient: f64,
    pub status: SolveStatus,
}

/// Horizon cost of steering sequence `u` from `input.state`.
pub fn mpc_cost(input: &MpcInput, u: &ControlSequence, params: &VehicleParams) -> f64 {
    debug_assert_eq!(u.len(), input.horizon());
    let mut state = input.state;
    let mut cost = 0.0;
    for (delta, r) in u.0.iter().zip(&input.refs) {
        state = crate::vehicle::step_unchecked(&state, *delta, params);
        cost += state.position().distance_squared(r);
    }
    cost
}

/// Cost and its exact gradient with respect to every control, by adjoint sweep.
pub fn mpc_cost_gradient(input: &MpcInput, u: &ControlSequence, params: &VehicleParams) -> (f64, Vec<f64>) {
    let mut ws = Workspace::new(input.horizon());
    let cost = ws.rollout(input, &u.0, params);
    let mut grad = vec![0.0; input.horizon()];
    ws.adjoint(&u.0, params, &mut grad);
    (cost, grad)
}

/// Reusable solver holding its scratch buffers.
#[derive(Debug, Clone)]
pub struct MpcSolver {
    pub cfg: MpcConfig,
    pub params: VehicleParams,
    ws: Workspace,
}

impl MpcSolver {
    pub fn new(cfg: MpcConfig, params: VehicleParams) -> Self {
        Self {
            ws: Workspace::new(cfg.horizon),
            cfg,
            params,
        }
    }

    pub fn solve(&mut self, input: &MpcInput, warm_start: Option<&ControlSequence>) -> MpcSolution {
        let n = input.horizon();
        if self.ws.n != n {
            self.ws = Workspace::new(n);
        }
        let bound = self.cfg.delta_max;
        let params = self.params;
        let ws = &mut self.ws;

        // Start from the better of zero and the (clamped) warm start.
        let mut u = vec![0.0; n];
        let mut cost = ws.rollout(input, &u, &params);
        if let Some(w) = warm_start.filter(|w| w.len() == n) {
            let cand: Vec<f64> = w.0.iter().map(|d| d.clamp(-bound, bound)).collect();
            let c = ws.rollout(input, &cand, &params);
            if c < cost {
                u = cand;
                cost = c;
            }
        }
        let initial_cost = cost;
        let initial_u = u.clone();

        let mut grad = vec![0.0; n];
        ws.rollout(input, &u, &params);
        ws.adjoint(&u, &params, &mut grad);

        let mut dir = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial_grad = vec![0.0; n];
        let mut free = vec![false; n];
        let mut status = SolveStatus::MaxIterations;
        let mut iterations = 0;
        let mut pg = projected_gradient_norm(&u, &grad, bound);

        while iterations < self.cfg.max_iters {
            if pg <= self.cfg.grad_tol {
                status = SolveStatus::Converged;
                break;
            }
            iterations += 1;

            // Bound-pinned variables whose gradient pushes outward are held fixed
            // in the Newton block and moved along the plain gradient.
            let eps = pg.min(1e-6);
            for j in 0..n {
                let at_lo = u[j] <= -bound + eps && grad[j] > 0.0;
                let at_hi = u[j] >= bound - eps && grad[j] < 0.0;
                free[j] = !(at_lo || at_hi);
            }

            ws.jacobian(&u, &params);
            let newton_ok = ws.newton_direction(&grad, &free, &mut dir);
            let mut accepted = false;
            if newton_ok && pg < 1e-4 {
                // Near a stationary point cost differences drown in rounding,
                // so the full step is judged by the projected gradient.
                for j in 0..n {
                    trial[j] = (u[j] + dir[j]).clamp(-bound, bound);
                }
                let c = ws.rollout(input, &trial, &params);
                if c <= cost + 1e-12 * (1.0 + cost.abs()) {
                    ws.adjoint(&trial, &params, &mut trial_grad);
                    accepted = projected_gradient_norm(&trial, &trial_grad, bound) < 0.5 * pg;
                }
            }
            if newton_ok && !accepted {
                accepted = armijo(ws, input, &params, bound, &u, cost, &grad, &dir, &mut trial);
            }
            if !accepted {
                let scale = ws.gradient_step_scale();
                for j in 0..n {
                    dir[j] = -grad[j] * scale;
                }
                accepted = armijo(ws, input, &params, bound, &u, cost, &grad, &dir, &mut trial);
            }
            if !accepted {
                status = SolveStatus::LineSearchFailed;
                break;
            }
            std::mem::swap(&mut u, &mut trial);
            cost = ws.rollout(input, &u, &params);
            ws.adjoint(&u, &params, &mut grad);
            pg = projected_gradient_norm(&u, &grad, bound);
        }
        if status == SolveStatus::MaxIterations && pg <= self.cfg.grad_tol {
            status = SolveStatus::Converged;
        }

        if cost > initial_cost {
            // Only reachable through the rounding slack of the line search.
            u = initial_u;
            cost = initial_cost;
            ws.rollout(input, &u, &params);
            ws.adjoint(&u, &params, &mut grad);
            pg = projected_gradient_norm(&u, &grad, bound);
        }

        MpcSolution {
            controls: ControlSequence(u),
            cost,
            iterations,
            projected_gradient: pg,
            status,
        }
    }
}

/// Solves one MPC instance from scratch or from `warm_start`.
pub fn mpc_solve(
    input: &MpcInput,
    cfg: &MpcConfig,
    params: &VehicleParams,
    warm_start: Option<&ControlSequence>,
) -> MpcSolution {
    MpcSolver::new(*cfg, *params).solve(input, warm_start)
}

/// First element of the optimal sequence together with the solver status.
pub fn mpc_first_control(
    input: &MpcInput,
    cfg: &MpcConfig,
    params: &VehicleParams,
    warm_start: Option<&ControlSequence>,
) -> (f64, SolveStatus) {
    let sol = mpc_solve(input, cfg, params, warm_start);
    (sol.controls.first(), sol.status)
}

/// Exhaustive search over a uniform grid with `levels` values per control.
///
/// Ties in cost go to the sequence of smallest norm, so a flat direction
/// (the last control never affects the cost) resolves to zero for odd `levels`.
pub fn grid_oracle(input: &MpcInput, params: &VehicleParams, delta_max: f64, levels: usize) -> Result<ControlSequence> {
    let n = input.horizon();
    if n == 0 || n > 4 {
        return Err(Error::invalid(format!("grid oracle supports horizons 1..=4, got {n}")));
    }
    if !(2..=41).contains(&levels) {
        return Err(Error::invalid(format!("grid oracle supports 2..=41 levels, got {levels}")));
    }
    let grid: Vec<f64> = (0..levels)
        .map(|i| -delta_max + 2.0 * delta_max * i as f64 / (levels - 1) as f64)
        .collect();
    let mut idx = vec![0usize; n];
    let mut u = ControlSequence::zeros(n);
    let mut best = (f64::INFINITY, f64::INFINITY);
    let mut best_u = u.clone();
    loop {
        for (slot, &i) in u.0.iter_mut().zip(&idx) {
            *slot = grid[i];
        }
        let cost = mpc_cost(input, &u, params);
        let norm: f64 = u.0.iter().map(|d| d * d).sum();
        if cost < best.0 || (cost == best.0 && norm < best.1) {
            best = (cost, norm);
            best_u.0.copy_from_slice(&u.0);
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(best_u);
            }
            idx[pos] += 1;
            if idx[pos] < levels {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn projected_gradient_norm(u: &[f64], grad: &[f64], bound: f64) -> f64 {
    u.iter()
        .zip(grad)
        .map(|(&x, &g)| {
            let d = x - (x - g).clamp(-bound, bound);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Backtracking along `P(u + alpha d)`; writes the accepted point into `trial`.
#[allow(clippy::too_many_arguments)]
fn armijo(
    ws: &mut Workspace,
    input: &MpcInput,
    params: &VehicleParams,
    bound: f64,
    u: &[f64],
    cost: f64,
    grad: &[f64],
    dir: &[f64],
    trial: &mut [f64],
) -> bool {
    const SIGMA: f64 = 1e-4;
    const SHRINK: f64 = 0.5;
    const MAX_BACKTRACKS: usize = 50;
    // Decreases below this are lost in rounding of the cost itself.
    let slack = 8.0 * f64::EPSILON * cost.abs();
    let mut alpha = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let mut slope = 0.0;
        let mut moved = false;
        for j in 0..u.len() {
            trial[j] = (u[j] + alpha * dir[j]).clamp(-bound, bound);
            slope += grad[j] * (trial[j] - u[j]);
            moved |= trial[j] != u[j];
        }
        if !moved {
            return false;
        }
        if slope < 0.0 {
            let c = ws.rollout(input, trial, params);
            if c <= cost + SIGMA * slope + slack && c <= cost + slack {
                return true;
            }
        }
        alpha *= SHRINK;
    }
    false
}

/// Scratch buffers for rollout, adjoint and Newton system.
#[derive(Debug, Clone)]
struct Workspace {
    n: usize,
    theta: Vec<f64>,
    ex: Vec<f64>,
    ey: Vec<f64>,
    // Jacobian of residuals, rows (x_i, y_i) for i = 1..=n, column-major by control.
    jac_x: Vec<f64>,
    jac_y: Vec<f64>,
    hess: Vec<f64>,
    hess_gn: Vec<f64>,
    c_sum: Vec<f64>,
    d_sum: Vec<f64>,
    chol: Vec<f64>,
    rhs: Vec<f64>,
    free_idx: Vec<usize>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            n,
            theta: vec![0.0; n + 1],
            ex: vec![0.0; n],
            ey: vec![0.0; n],
            jac_x: vec![0.0; n * n],
            jac_y: vec![0.0; n * n],
            hess: vec![0.0; n * n],
            hess_gn: vec![0.0; n * n],
            c_sum: vec![0.0; n],
            d_sum: vec![0.0; n],
            chol: vec![0.0; n * n],
            rhs: vec![0.0; n],
            free_idx: Vec::with_capacity(n),
        }
    }

    /// Simulates the horizon, storing headings and residuals; returns the cost.
    fn rollout(&mut self, input: &MpcInput, u: &[f64], params: &VehicleParams) -> f64 {
        let step = params.spacing();
        let gain = params.yaw_gain();
        let (mut x, mut y) = (input.state.x, input.state.y);
        let mut th = input.state.theta;
        self.theta[0] = th;
        let mut cost = 0.0;
        for i in 0..self.n {
            let (s, c) = th.sin_cos();
            x += step * c;
            y += step * s;
            th += gain * u[i].sin();
            self.theta[i + 1] = th;
            let ex = x - input.refs[i].x;
            let ey = y - input.refs[i].y;
            self.ex[i] = ex;
            self.ey[i] = ey;
            cost += ex * ex + ey * ey;
        }
        cost
    }

    /// Backward sweep; requires a preceding `rollout` at the same `u`.
    fn adjoint(&self, u: &[f64], params: &VehicleParams, grad: &mut [f64]) {
        let step = params.spacing();
        let gain = params.yaw_gain();
        let (mut lx, mut ly, mut lth) = (0.0, 0.0, 0.0);
        for i in (1..=self.n).rev() {
            lx += 2.0 * self.ex[i - 1];
            ly += 2.0 * self.ey[i - 1];
            grad[i - 1] = lth * gain * u[i - 1].cos();
            let (s, c) = self.theta[i - 1].sin_cos();
            lth += step * (-lx * s + ly * c);
        }
    }

    /// Residual Jacobian; requires a preceding `rollout` at the same `u`.
    fn jacobian(&mut self, u: &[f64], params: &VehicleParams) {
        let n = self.n;
        let step = params.spacing();
        let gain = params.yaw_gain();
        // Position i (1-based) depends on control j through headings j+1 ..= i-1.
        for j in 0..n {
            let d = gain * u[j].cos();
            let (mut ax, mut ay) = (0.0, 0.0);
            for i in 1..=n {
                let col = j * n + (i - 1);
                if i >= j + 2 {
                    let (s, c) = self.theta[i - 1].sin_cos();
                    ax -= step * s;
                    ay += step * c;
                }
                self.jac_x[col] = d * ax;
                self.jac_y[col] = d * ay;
            }
        }
        // Residual-weighted curvature of the positions by suffix sums; c_sum[m]
        // and d_sum[m] collect the heading terms from m + 1 to the end.
        let (mut sx, mut sy) = (0.0, 0.0);
        let (mut cs, mut ds) = (0.0, 0.0);
        for m in (0..n).rev() {
            self.c_sum[m] = cs;
            self.d_sum[m] = ds;
            sx += self.ex[m];
            sy += self.ey[m];
            let (s, c) = self.theta[m].sin_cos();
            cs += step * (-c * sx - s * sy);
            ds += step * (s * sx - c * sy);
        }
        for j in 0..n {
            let cj = u[j].cos();
            for k in 0..=j {
                let (colj, colk) = (j * n, k * n);
                let mut h = 0.0;
                for i in 0..n {
                    h += self.jac_x[colj + i] * self.jac_x[colk + i] + self.jac_y[colj + i] * self.jac_y[colk + i];
                }
                let mut second = gain * gain * cj * u[k].cos() * self.c_sum[j];
                if j == k {
                    second += gain * u[j].sin() * self.d_sum[j];
                }
                self.hess_gn[j * n + k] = 2.0 * h;
                self.hess_gn[k * n + j] = 2.0 * h;
                self.hess[j * n + k] = 2.0 * (h + second);
                self.hess[k * n + j] = 2.0 * (h + second);
            }
        }
    }

    /// Newton direction on the free block, Levenberg-damped until the exact
    /// Hessian is positive definite, else from the Gauss-Newton matrix.
    /// Pinned variables get a diagonally scaled gradient step.
    fn newton_direction(&mut self, grad: &[f64], free: &[bool], dir: &mut [f64]) -> bool {
        let n = self.n;
        self.free_idx.clear();
        self.free_idx.extend((0..n).filter(|&j| free[j]));
        let diag_max = (0..n).map(|j| self.hess_gn[j * n + j]).fold(0.0f64, f64::max);
        let scale = if diag_max > 0.0 { 1.0 / diag_max } else { 1.0 };
        for j in 0..n {
            if !free[j] {
                dir[j] = -grad[j] * scale;
            }
        }
        if self.free_idx.is_empty() {
            return true;
        }
        let floor = diag_max.max(1e-12);
        for exact in [true, false] {
            let mut damping = 1e-10 * floor;
            while damping < 1e4 * floor {
                if self.damped_solve(exact, damping, grad, dir) {
                    return true;
                }
                damping *= 10.0;
            }
        }
        false
    }

    fn damped_solve(&mut self, exact: bool, damping: f64, grad: &[f64], dir: &mut [f64]) -> bool {
        let n = self.n;
        let m = self.free_idx.len();
        let hess = if exact { &self.hess } else { &self.hess_gn };
        for (a, &ja) in self.free_idx.iter().enumerate() {
            for (b, &jb) in self.free_idx.iter().enumerate() {
                self.chol[a * m + b] = hess[ja * n + jb];
            }
            self.chol[a * m + a] += damping;
            self.rhs[a] = -grad[ja];
        }
        if !cholesky_solve(&mut self.chol[..m * m], &mut self.rhs[..m], m) {
            return false;
        }
        for (a, &ja) in self.free_idx.iter().enumerate() {
            dir[ja] = self.rhs[a];
        }
        dir.iter().all(|d| d.is_finite())
    }

    fn gradient_step_scale(&self) -> f64 {
        let n = self.n;
        let diag_max = (0..n).map(|j| self.hess_gn[j * n + j]).fold(0.0f64, f64::max);
        if diag_max > 0.0 {
            1.0 / diag_max
        } else {
            1.0
        }
    }
}

/// In-place Cholesky factorization and solve of a small SPD system.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], m: usize) -> bool {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * m + k] * b[k];
        }
        b[i] = s / a[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in i + 1..m {
            s -= a[k * m + i] * b[k];
        }
        b[i] = s / a[i * m + i];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight_refs(n: usize, offset: f64) -> MpcInput {
        let refs = (1..=n).map(|i| Observation::new(0.15 * i as f64, offset)).collect();
        MpcInput::new(VehicleState::default(), refs)
    }

    /// Independent re-simulation, written without the solver's workspace.
    fn resimulate_cost(input: &MpcInput, u: &[f64], p: &VehicleParams) -> f64 {
        let mut s = input.state;
        let mut total = 0.0;
        for (i, d) in u.iter().enumerate() {
            s = crate::vehicle::step_dynamics(&s, *d, p).unwrap();
            total += (s.x - input.refs[i].x).powi(2) + (s.y - input.refs[i].y).powi(2);
        }
        total
    }

    #[test]
    fn cost_of_exact_tracking_is_zero() {
        let p = VehicleParams::default();
        let input = straight_refs(20, 0.0);
        assert!(mpc_cost(&input, &ControlSequence::zeros(20), &p) < 1e-28);
    }

    #[test]
    fn cost_of_constant_offset() {
        let p = VehicleParams::default();
        let input = straight_refs(20, 0.1);
        let c = mpc_cost(&input, &ControlSequence::zeros(20), &p);
        assert!((c - 20.0 * 0.01).abs() < 1e-12, "{c}");
    }

    #[test]
    fn cost_matches_resimulation() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..8);
            let state = VehicleState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0));
            let refs = (0..n).map(|_| Observation::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
            let input = MpcInput::new(state, refs);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-0.4..0.4)).collect();
            let a = mpc_cost(&input, &ControlSequence(u.clone()), &p);
            let b = resimulate_cost(&input, &u, &p);
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn adjoint_gradient_matches_central_differences() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let state = VehicleState::new(0.0, 0.0, rng.random_range(-1.0..1.0));
            let refs = (1..=20)
                .map(|i| Observation::new(0.15 * i as f64 + rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5)))
                .collect();
            let input = MpcInput::new(state, refs);
            let u = ControlSequence((0..20).map(|_| rng.random_range(-0.4..0.4)).collect());
            let (_, g) = mpc_cost_gradient(&input, &u, &p);
            let h = 1e-6;
            for j in 0..19 {
                let mut up = u.clone();
                up.0[j] += h;
                let mut dn = u.clone();
                dn.0[j] -= h;
                let fd = (mpc_cost(&input, &up, &p) - mpc_cost(&input, &dn, &p)) / (2.0 * h);
                let rel = (g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-6, "j={j} adjoint {} fd {fd} rel {rel}", g[j]);
            }
            assert_eq!(g[19], 0.0);
        }
    }

    #[test]
    fn exact_hessian_matches_gradient_differences() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 12;
        for _ in 0..20 {
            let state = VehicleState::new(0.0, 0.0, rng.random_range(-1.0..1.0));
            let refs = (1..=n)
                .map(|i| Observation::new(0.15 * i as f64 + rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5)))
                .collect();
            let input = MpcInput::new(state, refs);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-0.4..0.4)).collect();
            let mut ws = Workspace::new(n);
            ws.rollout(&input, &u, &p);
            ws.jacobian(&u, &p);
            let h = 1e-6;
            for k in 0..n {
                let mut up = ControlSequence(u.clone());
                up.0[k] += h;
                let mut dn = ControlSequence(u.clone());
                dn.0[k] -= h;
                let (_, gp) = mpc_cost_gradient(&input, &up, &p);
                let (_, gm) = mpc_cost_gradient(&input, &dn, &p);
                for j in 0..n {
                    let fd = (gp[j] - gm[j]) / (2.0 * h);
                    let exact = ws.hess[j * n + k];
                    assert!((exact - fd).abs() <= 1e-6 * fd.abs().max(1.0), "H[{j}][{k}] {exact} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn aligned_straight_is_stationary_at_zero() {
        let p = VehicleParams::default();
        let sol = mpc_solve(&straight_refs(20, 0.0), &MpcConfig::default(), &p, None);
        assert!(sol.status.is_converged());
        assert!(sol.controls.first().abs() < 1e-6);
    }

    #[test]
    fn offset_reference_converges_and_steers_toward_it() {
        let p = VehicleParams::default();
        let cfg = MpcConfig::default();
        let input = straight_refs(20, 0.3);
        let sol = mpc_solve(&input, &cfg, &p, None);
        assert!(sol.status.is_converged(), "{sol:?}");
        assert!(sol.controls.first() > 0.0);
        assert!(sol.cost <= mpc_cost(&input, &ControlSequence::zeros(20), &p));
        assert!(sol.controls.0.iter().all(|d| d.abs() <= cfg.delta_max));
    }

    #[test]
    fn mirrored_instance_negates_solution() {
        let p = VehicleParams::default();
        let cfg = MpcConfig::default();
        let input = MpcInput::new(
            VehicleState::new(0.0, 0.05, 0.1),
            (1..=20).map(|i| Observation::new(0.15 * i as f64, 0.02 * (i as f64 * 0.3).sin() + 0.1)).collect(),
        );
        let mirror = MpcInput::new(
            VehicleState::new(input.state.x, -input.state.y, -input.state.theta),
            input.refs.iter().map(|r| Observation::new(r.x, -r.y)).collect(),
        );
        let a = mpc_solve(&input, &cfg, &p, None);
        let b = mpc_solve(&mirror, &cfg, &p, None);
        for (x, y) in a.controls.0.iter().zip(&b.controls.0) {
            assert!((x + y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn warm_start_never_hurts() {
        let p = VehicleParams::default();
        let cfg = MpcConfig {
            max_iters: 1,
            ..Default::default()
        };
        let input = straight_refs(20, 0.4);
        let warm = ControlSequence(vec![0.2; 20]);
        let sol = mpc_solve(&input, &cfg, &p, Some(&warm));
        assert!(sol.cost <= mpc_cost(&input, &warm, &p));
        assert!(sol.cost <= mpc_cost(&input, &ControlSequence::zeros(20), &p));
    }

    #[test]
    fn shifted_repeats_last() {
        let u = ControlSequence(vec![1.0, 2.0, 3.0]);
        assert_eq!(u.shifted().0, vec![2.0, 3.0, 3.0]);
    }

    #[test]
    fn grid_oracle_contract() {
        let p = VehicleParams::default();
        let input = straight_refs(3, 0.0);
        let g = grid_oracle(&input, &p, p.delta_max, 41).unwrap();
        assert_eq!(g.0, vec![0.0, 0.0, 0.0]);
        assert!(grid_oracle(&straight_refs(5, 0.0), &p, p.delta_max, 11).is_err());
    }

    #[test]
    fn validation_rejects_far_apart_refs() {
        let p = VehicleParams::default();
        let input = MpcInput::new(VehicleState::default(), vec![Observation::new(0.15, 0.0), Observation::new(1.0, 0.0)]);
        assert!(input.validate(&p).is_err());
        assert!(straight_refs(20, 0.1).validate(&p).is_ok());
    }
}
