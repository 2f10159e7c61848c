//! Explicit Runge-Kutta integration of the state, optionally augmented with a
//! matrix-valued auxiliary block (sensitivities or frozen-trajectory
//! integrals).

use super::{Method, SensitivityMethod, SolveConfig, Trajectory};
use crate::error::SolveError;
use crate::field::FieldSpec;

/// What to propagate alongside the state.
#[derive(Debug, Clone, Default)]
pub(crate) struct AuxRequest {
    /// Parameter columns whose sensitivities (or frozen integrals) are wanted.
    pub theta_cols: Vec<usize>,
    /// Also propagate `dx/dx0`.
    pub x0: bool,
    /// Drop the `df/dx * A` term: the block becomes `int_0^t df/dtheta ds`
    /// along the trajectory.
    pub frozen: bool,
}

impl AuxRequest {
    pub fn none() -> Self {
        AuxRequest::default()
    }
}

struct Rhs<'a> {
    spec: &'a FieldSpec,
    phi: &'a [f64],
    cols: &'a [usize],
    d: usize,
    m_theta: usize,
    m: usize,
    with_jx: bool,
    jx: Vec<f64>,
    jt: Vec<f64>,
}

impl<'a> Rhs<'a> {
    fn new(spec: &'a FieldSpec, phi: &'a [f64], req: &'a AuxRequest) -> Self {
        let d = spec.dim();
        let m_theta = req.theta_cols.len();
        let m = m_theta + if req.x0 { d } else { 0 };
        Rhs {
            spec,
            phi,
            cols: &req.theta_cols,
            d,
            m_theta,
            m,
            with_jx: !req.frozen,
            jx: vec![0.0; d * d],
            jt: vec![0.0; d * m_theta],
        }
    }

    /// Derivative of the state only.
    #[inline]
    fn state(&self, x: &[f64], dx: &mut [f64]) {
        self.spec.eval_into(self.phi, x, dx);
    }

    /// Derivative of the auxiliary block `a` (d x m, row-major) at state `x`.
    fn aux(&mut self, x: &[f64], a: &[f64], da: &mut [f64]) {
        let (d, m, mt) = (self.d, self.m, self.m_theta);
        da.iter_mut().for_each(|v| *v = 0.0);
        if mt > 0 {
            self.spec
                .jacobian_theta_cols_into(self.phi, x, self.cols, &mut self.jt);
            for i in 0..d {
                da[i * m..i * m + mt].copy_from_slice(&self.jt[i * mt..(i + 1) * mt]);
            }
        }
        if self.with_jx {
            self.spec.jacobian_x_into(self.phi, x, &mut self.jx);
            for i in 0..d {
                for l in 0..d {
                    let j = self.jx[i * d + l];
                    if j == 0.0 {
                        continue;
                    }
                    let src = &a[l * m..(l + 1) * m];
                    let dst = &mut da[i * m..(i + 1) * m];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += j * s;
                    }
                }
            }
        }
    }

    /// Full augmented derivative.
    fn eval(&mut self, z: &[f64], dz: &mut [f64], with_aux: bool) {
        let d = self.d;
        let (x, a) = z.split_at(d);
        let (dx, da) = dz.split_at_mut(d);
        self.state(x, dx);
        if with_aux && self.m > 0 {
            self.aux(x, a, da);
        }
    }
}

/// Butcher tableau of an explicit method, with an optional embedded
/// lower-order solution for error estimation.
struct Tableau {
    c: &'static [f64],
    a: &'static [&'static [f64]],
    b: &'static [f64],
    err: Option<&'static [f64]>,
    order: f64,
}

static RK4: Tableau = Tableau {
    c: &[0.0, 0.5, 0.5, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    err: None,
    order: 4.0,
};

// Fehlberg 4(5); the fifth-order solution is propagated.
static RKF45: Tableau = Tableau {
    c: &[0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5],
    a: &[
        &[],
        &[0.25],
        &[3.0 / 32.0, 9.0 / 32.0],
        &[1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0],
        &[439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0],
        &[
            -8.0 / 27.0,
            2.0,
            -3544.0 / 2565.0,
            1859.0 / 4104.0,
            -11.0 / 40.0,
        ],
    ],
    b: &[
        16.0 / 135.0,
        0.0,
        6656.0 / 12825.0,
        28561.0 / 56430.0,
        -9.0 / 50.0,
        2.0 / 55.0,
    ],
    err: Some(&[
        1.0 / 360.0,
        0.0,
        -128.0 / 4275.0,
        -2197.0 / 75240.0,
        1.0 / 50.0,
        2.0 / 55.0,
    ]),
    order: 4.0,
};

struct Stepper {
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    next: Vec<f64>,
    err: Vec<f64>,
}

impl Stepper {
    fn new(stages: usize, n: usize) -> Self {
        Stepper {
            k: vec![vec![0.0; n]; stages],
            tmp: vec![0.0; n],
            next: vec![0.0; n],
            err: vec![0.0; n],
        }
    }

    /// One step of size `h` from `z`; result in `self.next`, error estimate
    /// (if the tableau has one) in `self.err`.
    fn step(&mut self, tab: &Tableau, rhs: &mut Rhs, z: &[f64], h: f64, with_aux: bool) {
        let n = z.len();
        for s in 0..tab.c.len() {
            self.tmp.copy_from_slice(z);
            for (q, &a) in tab.a[s].iter().enumerate() {
                if a != 0.0 {
                    let kq = &self.k[q];
                    for i in 0..n {
                        self.tmp[i] += h * a * kq[i];
                    }
                }
            }
            let (tmp, k) = (&self.tmp, &mut self.k[s]);
            rhs.eval(tmp, k, with_aux);
        }
        self.next.copy_from_slice(z);
        for (s, &b) in tab.b.iter().enumerate() {
            if b != 0.0 {
                let ks = &self.k[s];
                for i in 0..n {
                    self.next[i] += h * b * ks[i];
                }
            }
        }
        if let Some(e) = tab.err {
            self.err.iter_mut().for_each(|v| *v = 0.0);
            for (s, &w) in e.iter().enumerate() {
                if w != 0.0 {
                    let ks = &self.k[s];
                    for i in 0..n {
                        self.err[i] += h * w * ks[i];
                    }
                }
            }
        }
    }
}

/// Integrates from `times[0]` through every requested time. `phi` is the
/// effective parameter. Inputs are assumed validated.
pub(crate) fn integrate(
    spec: &FieldSpec,
    phi: &[f64],
    x0: &[f64],
    times: &[f64],
    config: &SolveConfig,
    req: &AuxRequest,
) -> Result<Trajectory, SolveError> {
    let d = spec.dim();
    let mut rhs = Rhs::new(spec, phi, req);
    let m = rhs.m;
    let mt = rhs.m_theta;
    let aux_in_stages =
        m > 0 && (req.frozen || config.sensitivity == SensitivityMethod::SimultaneousRk4);
    let euler_aux = m > 0 && !aux_in_stages;

    let mut z = vec![0.0; d + d * m];
    z[..d].copy_from_slice(x0);
    if req.x0 {
        for i in 0..d {
            z[d + i * m + mt + i] = 1.0;
        }
    }

    let mut traj = Trajectory::start(times[0], x0, mt > 0, req.x0);
    traj.record_aux(&z[d..], d, m, mt);

    let tab = match config.method {
        Method::Rk4Fixed { .. } => &RK4,
        Method::Rkf45Adaptive { .. } => &RKF45,
    };
    let width = if aux_in_stages { z.len() } else { d };
    let mut stepper = Stepper::new(tab.c.len(), width);
    let mut da = vec![0.0; d * m];

    let mut t = times[0];
    let mut steps = 0usize;
    let span = times[times.len() - 1] - times[0];
    let mut h = match config.method {
        Method::Rk4Fixed { step } => step,
        Method::Rkf45Adaptive { initial_step, .. } => {
            if initial_step > 0.0 {
                initial_step
            } else {
                (span * 1e-3).max(1e-6)
            }
        }
    };

    let fail_partial = |traj: &Trajectory| Box::new(traj.clone());

    for &target in &times[1..] {
        match config.method {
            Method::Rk4Fixed { step } => {
                let n_sub = ((target - t) / step).ceil().max(1.0) as usize;
                let hs = (target - t) / n_sub as f64;
                for sub in 0..n_sub {
                    steps += 1;
                    if steps > config.max_steps {
                        return Err(SolveError::StepLimit {
                            max_steps: config.max_steps,
                            time: t,
                            partial: fail_partial(&traj),
                        });
                    }
                    if euler_aux {
                        let (x, a) = z.split_at(d);
                        rhs.aux(x, a, &mut da);
                    }
                    stepper.step(tab, &mut rhs, &z[..width], hs, aux_in_stages);
                    z[..width].copy_from_slice(&stepper.next);
                    if euler_aux {
                        for (a, g) in z[d..].iter_mut().zip(&da) {
                            *a += hs * g;
                        }
                    }
                    t = if sub + 1 == n_sub { target } else { t + hs };
                    if diverged(&z[..d], config.overflow) || !all_finite(&z[d..]) {
                        return Err(SolveError::Diverged {
                            time: t,
                            partial: fail_partial(&traj),
                        });
                    }
                }
            }
            Method::Rkf45Adaptive {
                abs_tol, rel_tol, ..
            } => {
                while t < target {
                    let remaining = target - t;
                    let last = h >= remaining * (1.0 - 1e-12);
                    let h_try = if last { remaining } else { h };
                    steps += 1;
                    if steps > config.max_steps {
                        return Err(SolveError::StepLimit {
                            max_steps: config.max_steps,
                            time: t,
                            partial: fail_partial(&traj),
                        });
                    }
                    stepper.step(tab, &mut rhs, &z[..width], h_try, aux_in_stages);
                    let mut err = 0.0f64;
                    for i in 0..d {
                        let sc = abs_tol + rel_tol * z[i].abs().max(stepper.next[i].abs());
                        err = err.max(stepper.err[i].abs() / sc);
                    }
                    if !err.is_finite() {
                        // Non-finite stage values: retry smaller, but give up
                        // once the state itself is out of range.
                        if diverged(&z[..d], config.overflow) {
                            return Err(SolveError::Diverged {
                                time: t,
                                partial: fail_partial(&traj),
                            });
                        }
                        h = h_try * 0.1;
                    } else if err <= 1.0 {
                        if euler_aux {
                            let (x, a) = z.split_at(d);
                            rhs.aux(x, a, &mut da);
                        }
                        z[..width].copy_from_slice(&stepper.next);
                        if euler_aux {
                            for (a, g) in z[d..].iter_mut().zip(&da) {
                                *a += h_try * g;
                            }
                        }
                        t = if last { target } else { t + h_try };
                        if diverged(&z[..d], config.overflow) || !all_finite(&z[d..]) {
                            return Err(SolveError::Diverged {
                                time: t,
                                partial: fail_partial(&traj),
                            });
                        }
                        let factor = if err == 0.0 {
                            5.0
                        } else {
                            (0.9 * err.powf(-1.0 / (tab.order + 1.0))).clamp(0.2, 5.0)
                        };
                        let proposed = h_try * factor;
                        h = if last { h.max(proposed) } else { proposed };
                    } else {
                        h = h_try * (0.9 * err.powf(-1.0 / (tab.order + 1.0))).clamp(0.1, 0.9);
                    }
                    if h < 1e-14 * t.abs().max(1.0) {
                        return Err(SolveError::StepUnderflow {
                            time: t,
                            partial: fail_partial(&traj),
                        });
                    }
                }
            }
        }
        traj.push_state(target, &z[..d]);
        traj.record_aux(&z[d..], d, m, mt);
    }
    Ok(traj)
}

#[inline]
fn diverged(x: &[f64], guard: f64) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > guard)
}

#[inline]
fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}
