//! Receding-horizon tracker: single shooting over the action sequence,
//! projected gradient descent with backtracking, and gradients by reverse
//! accumulation through the bicycle rollout.

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_bicycle, Action, EgoState, VehicleParams, Waypoint};
use crate::geometry::angle_diff;

/// The first reference point must lie this close to the vehicle.
pub const MAX_REFERENCE_OFFSET: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub w_pos: f64,
    pub w_heading: f64,
    pub w_accel: f64,
    pub w_steer: f64,
    pub w_jerk: f64,
    pub iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this.
    pub tolerance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            w_pos: 1.0,
            w_heading: 0.1,
            w_accel: 0.01,
            w_steer: 0.01,
            w_jerk: 0.01,
            iterations: 50,
            tolerance: 1e-6,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 {
            return Err("mpc.horizon must be at least 1".into());
        }
        if self.iterations == 0 {
            return Err("mpc.iterations must be at least 1".into());
        }
        for (name, w) in [
            ("w_pos", self.w_pos),
            ("w_heading", self.w_heading),
            ("w_accel", self.w_accel),
            ("w_steer", self.w_steer),
            ("w_jerk", self.w_jerk),
            ("tolerance", self.tolerance),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(format!("mpc.{name} must be non-negative, got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MpcError {
    #[error("reference has {got} points, horizon needs {need}")]
    ReferenceTooShort { got: usize, need: usize },
    #[error("reference contains non-finite values")]
    NonFiniteReference,
    #[error("first reference point is {0:.1} m away")]
    ReferenceTooFar(f64),
    #[error("cost became non-finite at iteration {iteration}")]
    NonFiniteCost { iteration: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub actions: Vec<Action>,
    pub cost: f64,
    /// Cost after each accepted iterate, starting with the initial guess.
    pub history: Vec<f64>,
}

/// States x_1..x_H produced by applying `actions` from `state`.
pub fn rollout(state: &EgoState, actions: &[Action], params: &VehicleParams) -> Vec<EgoState> {
    let mut s = *state;
    actions
        .iter()
        .map(|a| {
            s = step_bicycle(&s, *a, params);
            s
        })
        .collect()
}

/// Tracking cost of `actions` against `reference` (reference[k] targets the
/// state after k + 1 steps).
pub fn tracking_cost(
    state: &EgoState,
    actions: &[Action],
    reference: &[Waypoint],
    cfg: &MpcConfig,
    params: &VehicleParams,
) -> f64 {
    let states = rollout(state, actions, params);
    let mut j = 0.0;
    for (s, r) in states.iter().zip(reference) {
        let (dx, dy) = (s.x - r.x, s.y - r.y);
        let dh = angle_diff(s.theta, r.heading);
        j += cfg.w_pos * (dx * dx + dy * dy) + cfg.w_heading * dh * dh;
    }
    for (k, a) in actions.iter().enumerate() {
        j += cfg.w_accel * a.accel * a.accel + cfg.w_steer * a.steer * a.steer;
        if k > 0 {
            let p = actions[k - 1];
            j += cfg.w_jerk * ((a.accel - p.accel).powi(2) + (a.steer - p.steer).powi(2));
        }
    }
    j
}

/// Gradient of [`tracking_cost`] with respect to every action, by a
/// backward (adjoint) pass through the rollout.
pub fn tracking_gradient(
    state: &EgoState,
    actions: &[Action],
    reference: &[Waypoint],
    cfg: &MpcConfig,
    params: &VehicleParams,
) -> Vec<Action> {
    let h = actions.len();
    let dt = params.dt;
    let l = params.wheelbase;
    let mut states = Vec::with_capacity(h + 1);
    states.push(*state);
    states.extend(rollout(state, actions, params));

    let mut grad = vec![Action::ZERO; h];
    // adjoint of (x, y, theta, v) at the state after step k
    let mut lam = [0.0f64; 4];
    for k in (0..h).rev() {
        let next = states[k + 1];
        let r = reference[k];
        lam[0] += 2.0 * cfg.w_pos * (next.x - r.x);
        lam[1] += 2.0 * cfg.w_pos * (next.y - r.y);
        lam[2] += 2.0 * cfg.w_heading * angle_diff(next.theta, r.heading);

        let s = states[k];
        let a = actions[k];
        let raw_v = s.v + a.accel * dt;
        let v_free = (0.0..=params.max_speed).contains(&raw_v);
        let (sin, cos) = s.theta.sin_cos();
        let tan = a.steer.tan();

        let mut g = Action {
            accel: if v_free { lam[3] * dt } else { 0.0 },
            steer: lam[2] * s.v / l * dt / (a.steer.cos().powi(2)),
        };
        g.accel += 2.0 * cfg.w_accel * a.accel;
        g.steer += 2.0 * cfg.w_steer * a.steer;
        if k > 0 {
            let p = actions[k - 1];
            g.accel += 2.0 * cfg.w_jerk * (a.accel - p.accel);
            g.steer += 2.0 * cfg.w_jerk * (a.steer - p.steer);
        }
        if k + 1 < h {
            let n = actions[k + 1];
            g.accel -= 2.0 * cfg.w_jerk * (n.accel - a.accel);
            g.steer -= 2.0 * cfg.w_jerk * (n.steer - a.steer);
        }
        grad[k] = g;

        // propagate to the state before step k
        let new = [
            lam[0],
            lam[1],
            lam[0] * (-s.v * sin * dt) + lam[1] * (s.v * cos * dt) + lam[2],
            lam[0] * cos * dt + lam[1] * sin * dt + lam[2] * tan / l * dt + if v_free { lam[3] } else { 0.0 },
        ];
        lam = new;
    }
    grad
}

fn project(a: Action, params: &VehicleParams) -> Action {
    Action {
        accel: a.accel.clamp(-params.max_accel, params.max_accel),
        steer: a.steer.clamp(-params.max_steer, params.max_steer),
    }
}

/// Optimize the action sequence tracking `reference`. `warm_start`, when
/// given, seeds the solver (missing tail entries repeat its last action).
pub fn mpc_track(
    state: &EgoState,
    reference: &[Waypoint],
    cfg: &MpcConfig,
    params: &VehicleParams,
    warm_start: Option<&[Action]>,
) -> Result<MpcSolution, MpcError> {
    let h = cfg.horizon;
    if reference.len() < h {
        return Err(MpcError::ReferenceTooShort {
            got: reference.len(),
            need: h,
        });
    }
    if !reference.iter().all(Waypoint::is_finite) {
        return Err(MpcError::NonFiniteReference);
    }
    let off = state.position().dist(reference[0].position());
    if off > MAX_REFERENCE_OFFSET {
        return Err(MpcError::ReferenceTooFar(off));
    }
    let reference = &reference[..h];

    let mut u: Vec<Action> = match warm_start {
        Some(w) if !w.is_empty() => (0..h).map(|k| project(w[k.min(w.len() - 1)], params)).collect(),
        _ => vec![Action::ZERO; h],
    };
    let cost_of = |u: &[Action], it: usize| {
        let c = tracking_cost(state, u, reference, cfg, params);
        if c.is_finite() {
            Ok(c)
        } else {
            Err(MpcError::NonFiniteCost { iteration: it })
        }
    };
    let mut j = cost_of(&u, 0)?;
    let mut history = vec![j];
    // work in coordinates normalized by the action bounds
    let scale = Action::new(params.max_accel, params.max_steer);
    let mut step = 1.0;
    let mut prev: Option<(Vec<Action>, Vec<Action>)> = None;

    for it in 1..=cfg.iterations {
        let g = tracking_gradient(state, &u, reference, cfg, params);
        // gradient in normalized coordinates z = u / scale
        let gz: Vec<Action> = g
            .iter()
            .map(|g| Action::new(g.accel * scale.accel, g.steer * scale.steer))
            .collect();
        let gnorm2: f64 = gz.iter().map(|g| g.accel * g.accel + g.steer * g.steer).sum();
        if gnorm2 == 0.0 || !gnorm2.is_finite() {
            if !gnorm2.is_finite() {
                return Err(MpcError::NonFiniteCost { iteration: it });
            }
            break;
        }
        // Barzilai-Borwein guess from the last accepted move
        if let Some((pu, pg)) = &prev {
            let mut sy = 0.0;
            let mut ss = 0.0;
            for k in 0..h {
                let dz = [
                    (u[k].accel - pu[k].accel) / scale.accel,
                    (u[k].steer - pu[k].steer) / scale.steer,
                ];
                let dg = [gz[k].accel - pg[k].accel, gz[k].steer - pg[k].steer];
                sy += dz[0] * dg[0] + dz[1] * dg[1];
                ss += dz[0] * dz[0] + dz[1] * dz[1];
            }
            if sy > 1e-300 && ss > 0.0 {
                step = (ss / sy).clamp(1e-8, 1e4);
            }
        }
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..40 {
            let cand: Vec<Action> = u
                .iter()
                .zip(&gz)
                .map(|(a, g)| {
                    project(
                        Action::new(
                            a.accel - alpha * g.accel * scale.accel,
                            a.steer - alpha * g.steer * scale.steer,
                        ),
                        params,
                    )
                })
                .collect();
            let jc = cost_of(&cand, it)?;
            if jc < j {
                accepted = Some((cand, jc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, jc)) = accepted else { break };
        let decrease = j - jc;
        prev = Some((std::mem::replace(&mut u, cand), gz));
        j = jc;
        history.push(j);
        step = alpha;
        if decrease < cfg.tolerance {
            break;
        }
    }
    Ok(MpcSolution {
        actions: u,
        cost: j,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_ref(s: &EgoState, n: usize, p: &VehicleParams) -> Vec<Waypoint> {
        (1..=n)
            .map(|k| Waypoint::new(s.x + s.v * p.dt * k as f64, s.y, 0.0))
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = VehicleParams::default();
        let cfg = MpcConfig::default();
        let s = EgoState::new(1.0, -2.0, 0.3, 6.0);
        let reference: Vec<Waypoint> = (1..=10)
            .map(|k| {
                let t = k as f64 * 0.1;
                Waypoint::new(1.0 + 7.0 * t, -2.0 + 2.0 * t + t * t, 0.4 + 0.2 * t)
            })
            .collect();
        let u: Vec<Action> = (0..10)
            .map(|k| Action::new(0.3 * (k as f64).sin(), 0.05 * (k as f64 * 0.7).cos()))
            .collect();
        let g = tracking_gradient(&s, &u, &reference, &cfg, &p);
        let eps = 1e-6;
        for k in 0..10 {
            for ch in 0..2 {
                let mut plus = u.clone();
                let mut minus = u.clone();
                if ch == 0 {
                    plus[k].accel += eps;
                    minus[k].accel -= eps;
                } else {
                    plus[k].steer += eps;
                    minus[k].steer -= eps;
                }
                let fd = (tracking_cost(&s, &plus, &reference, &cfg, &p)
                    - tracking_cost(&s, &minus, &reference, &cfg, &p))
                    / (2.0 * eps);
                let an = if ch == 0 { g[k].accel } else { g[k].steer };
                assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "k={k} ch={ch}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn stationary_target_keeps_zero_actions() {
        let p = VehicleParams::default();
        let s = EgoState::new(3.0, 4.0, 0.5, 0.0);
        let reference = vec![Waypoint::new(3.0, 4.0, 0.5); 10];
        let sol = mpc_track(&s, &reference, &MpcConfig::default(), &p, None).unwrap();
        assert!(sol.actions.iter().all(|a| a.accel.abs() < 1e-3 && a.steer.abs() < 1e-3));
    }

    #[test]
    fn straight_reference_is_tracked() {
        let p = VehicleParams::default();
        let s = EgoState::new(0.0, 0.0, 0.0, 10.0);
        let reference = straight_ref(&s, 10, &p);
        let sol = mpc_track(&s, &reference, &MpcConfig::default(), &p, None).unwrap();
        let states = rollout(&s, &sol.actions, &p);
        let err = states
            .iter()
            .zip(&reference)
            .map(|(s, r)| s.position().dist(r.position()))
            .fold(0.0, f64::max);
        assert!(err < 0.1);
    }

    #[test]
    fn impossible_acceleration_saturates() {
        let p = VehicleParams::default();
        let s = EgoState::new(0.0, 0.0, 0.0, 0.0);
        // x(t) = 10 t², i.e. 20 m/s²
        let reference: Vec<Waypoint> = (1..=10)
            .map(|k| {
                let t = k as f64 * 0.1;
                Waypoint::new(10.0 * t * t, 0.0, 0.0)
            })
            .collect();
        let sol = mpc_track(&s, &reference, &MpcConfig::default(), &p, None).unwrap();
        assert!(sol.actions.iter().all(|a| a.accel.abs() <= p.max_accel));
        assert_eq!(sol.actions[0].accel, p.max_accel);
        assert!(sol.cost > 0.0);
    }

    #[test]
    fn rejects_bad_references() {
        let p = VehicleParams::default();
        let s = EgoState::default();
        let cfg = MpcConfig::default();
        assert!(matches!(
            mpc_track(&s, &[Waypoint::default(); 3], &cfg, &p, None),
            Err(MpcError::ReferenceTooShort { .. })
        ));
        assert!(matches!(
            mpc_track(&s, &vec![Waypoint::new(100.0, 0.0, 0.0); 10], &cfg, &p, None),
            Err(MpcError::ReferenceTooFar(_))
        ));
        let mut bad = vec![Waypoint::default(); 10];
        bad[4].heading = f64::NAN;
        assert_eq!(
            mpc_track(&s, &bad, &cfg, &p, None),
            Err(MpcError::NonFiniteReference)
        );
    }
}
