//! Classical fixed-step fourth-order Runge-Kutta on small fixed-size states.

/// Position of an RK4 stage inside the step `[t0, t0 + dt]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    /// Time at which the stage is evaluated.
    pub t: f64,
    pub step_start: f64,
    pub dt: f64,
}

impl Stage {
    pub fn step_mid(&self) -> f64 {
        self.step_start + 0.5 * self.dt
    }
}

/// Advances `y` from `t0` by `dt`.
pub fn rk4_step<const N: usize>(
    y: &[f64; N],
    t0: f64,
    dt: f64,
    mut f: impl FnMut(Stage, &[f64; N]) -> [f64; N],
) -> [f64; N] {
    let stage = |c: f64| Stage {
        t: t0 + c * dt,
        step_start: t0,
        dt,
    };
    let axpy = |a: f64, k: &[f64; N]| {
        let mut out = *y;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += a * ki;
        }
        out
    };
    let k1 = f(stage(0.0), y);
    let k2 = f(stage(0.5), &axpy(0.5 * dt, &k1));
    let k3 = f(stage(0.5), &axpy(0.5 * dt, &k2));
    let k4 = f(stage(1.0), &axpy(dt, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}
