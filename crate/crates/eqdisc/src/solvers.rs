//! Benchmark dataset generators: RK4 integration of the test ODE systems and
//! method-of-lines / analytic solutions for the PDE benchmarks.

use crate::error::{Error, Result};
use crate::grid::{Axis, GridField};

/// Classical 4-stage Runge-Kutta over a fixed time grid.
///
/// `rhs(t, y, dy)` writes the vector field into `dy`. Returns one field per
/// state component, each with `n_steps + 1` samples.
pub fn solve_ode_rk4<F>(
    mut rhs: F,
    y0: &[f64],
    t0: f64,
    dt: f64,
    n_steps: usize,
) -> Result<Vec<GridField>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("rk4 requires dt > 0".into()));
    }
    if n_steps == 0 {
        return Err(Error::InvalidConfig("rk4 requires n_steps >= 1".into()));
    }
    let dim = y0.len();
    let mut trajectory = vec![y0.to_vec()];
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for step in 0..n_steps {
        let t = t0 + dt * step as f64;
        rhs(t, &y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        rhs(t + 0.5 * dt, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        rhs(t + 0.5 * dt, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + dt * k3[i];
        }
        rhs(t + dt, &tmp, &mut k4);
        for i in 0..dim {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationBlowup { step });
        }
        trajectory.push(y.clone());
    }
    let axis = Axis::uniform("t", t0, dt, n_steps + 1)?;
    (0..dim)
        .map(|i| {
            let flat: Vec<f64> = trajectory.iter().map(|s| s[i]).collect();
            GridField::from_flat(flat, vec![axis.clone()], format!("y{i}"))
        })
        .collect()
}

/// Hunter-prey dynamics: u' = alpha*u - beta*u*v, v' = delta*u*v - gamma*v.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LotkaVolterra {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub u0: f64,
    pub v0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

pub fn generate_lotka_volterra(p: &LotkaVolterra) -> Result<(GridField, GridField)> {
    for (name, v) in [
        ("alpha", p.alpha),
        ("beta", p.beta),
        ("gamma", p.gamma),
        ("delta", p.delta),
        ("u0", p.u0),
        ("v0", p.v0),
    ] {
        if !(v > 0.0) {
            return Err(Error::InvalidConfig(format!("{name} must be > 0")));
        }
    }
    let fields = solve_ode_rk4(
        |_t, y, dy| {
            dy[0] = p.alpha * y[0] - p.beta * y[0] * y[1];
            dy[1] = p.delta * y[0] * y[1] - p.gamma * y[1];
        },
        &[p.u0, p.v0],
        0.0,
        p.dt,
        p.n_steps,
    )?;
    for f in &fields {
        if let Some(step) = f.flat().iter().position(|v| *v <= 0.0) {
            return Err(Error::StepSize { step });
        }
    }
    let mut it = fields.into_iter();
    let u = it.next().unwrap().with_name("u");
    let v = it.next().unwrap().with_name("v");
    Ok((u, v))
}

/// Van der Pol oscillator u'' + eps*(u^2 - 1)*u' + u = 0, integrated in its
/// first-order system form. Returns (u, u').
pub fn generate_van_der_pol(
    eps: f64,
    u0: f64,
    du0: f64,
    dt: f64,
    n_points: usize,
) -> Result<(GridField, GridField)> {
    if n_points < 2 {
        return Err(Error::InvalidConfig("van der pol needs at least 2 points".into()));
    }
    let fields = solve_ode_rk4(
        |_t, y, dy| {
            dy[0] = y[1];
            dy[1] = -eps * (y[0] * y[0] - 1.0) * y[1] - y[0];
        },
        &[u0, du0],
        0.0,
        dt,
        n_points - 1,
    )?;
    let mut it = fields.into_iter();
    let u = it.next().unwrap().with_name("u");
    let du = it.next().unwrap().with_name("du");
    Ok((u, du))
}

/// Burgers equation u_t + u*u_x = nu*u_xx on a periodic domain, solved by the
/// method of lines in flux form with internal sub-stepping, sampled onto the
/// requested (nt x nx) output grid.
pub fn generate_burgers<F>(
    nu: f64,
    nx: usize,
    nt: usize,
    dx: f64,
    dt: f64,
    x_min: f64,
    initial_profile: F,
) -> Result<GridField>
where
    F: Fn(f64) -> f64,
{
    if nu < 0.0 {
        return Err(Error::InvalidConfig("viscosity must be >= 0".into()));
    }
    if nx < 4 || nt < 2 {
        return Err(Error::InvalidConfig("burgers grid too small".into()));
    }
    let x: Vec<f64> = (0..nx).map(|i| x_min + dx * i as f64).collect();
    let mut u: Vec<f64> = x.iter().map(|&xi| initial_profile(xi)).collect();

    // explicit stability: diffusive dt <= dx^2/(2 nu), advective dt <= dx/max|u|
    let stable_dt = |u: &[f64]| -> f64 {
        let umax = u.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
        let adv = dx / umax;
        let diff = if nu > 0.0 { dx * dx / (2.0 * nu) } else { f64::INFINITY };
        0.5 * adv.min(diff)
    };

    let mut rows = Vec::with_capacity(nt * nx);
    rows.extend_from_slice(&u);
    let mut du = vec![0.0; nx];
    for step in 1..nt {
        let mut remaining = dt;
        while remaining > 1e-14 {
            let h = stable_dt(&u).min(remaining);
            rk4_step_periodic(&mut u, h, &mut du, |u, du| {
                // u_t = -(u^2/2)_x + nu * u_xx, central differences
                for i in 0..nx {
                    let im = (i + nx - 1) % nx;
                    let ip = (i + 1) % nx;
                    let flux = (u[ip] * u[ip] - u[im] * u[im]) / (4.0 * dx);
                    let diff = nu * (u[ip] - 2.0 * u[i] + u[im]) / (dx * dx);
                    du[i] = -flux + diff;
                }
            });
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationBlowup { step });
            }
            remaining -= h;
        }
        rows.extend_from_slice(&u);
    }
    let t_axis = Axis::uniform("t", 0.0, dt, nt)?;
    let x_axis = Axis::new("x", x)?;
    GridField::from_flat(rows, vec![t_axis, x_axis], "u")
}

fn rk4_step_periodic<F>(u: &mut [f64], h: f64, scratch: &mut [f64], rhs: F)
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = u.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    rhs(u, &mut k1);
    let tmp: Vec<f64> = (0..n).map(|i| u[i] + 0.5 * h * k1[i]).collect();
    rhs(&tmp, &mut k2);
    let tmp: Vec<f64> = (0..n).map(|i| u[i] + 0.5 * h * k2[i]).collect();
    rhs(&tmp, &mut k3);
    let tmp: Vec<f64> = (0..n).map(|i| u[i] + h * k3[i]).collect();
    rhs(&tmp, scratch);
    for i in 0..n {
        u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + scratch[i]);
    }
}

/// Parameters for the analytic soliton solution of u_t + 6u*u_x + u_xxx = 0.
///
/// `k2 = None` disables the second channel and degenerates to a single
/// sech^2 soliton travelling at speed k1^2. `x1_0`/`x2_0` are the initial
/// crest positions.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KdvSolitons {
    pub k1: f64,
    pub k2: Option<f64>,
    pub x1_0: f64,
    pub x2_0: f64,
    pub nt: usize,
    pub nx: usize,
    pub dt: f64,
    pub dx: f64,
    pub x_min: f64,
}

/// Evaluates the exact one/two-soliton field at (t, x).
pub fn kdv_soliton_value(p: &KdvSolitons, t: f64, x: f64) -> f64 {
    // u = 2 (log f)_xx with f = 1 + e^h1 (+ e^h2 + A e^(h1+h2))
    let h1 = p.k1 * (x - p.k1 * p.k1 * t - p.x1_0);
    let e1 = h1.exp();
    match p.k2 {
        None => {
            // closed form: (k^2/2) sech^2(h/2)
            let s = (0.5 * h1).cosh();
            0.5 * p.k1 * p.k1 / (s * s)
        }
        Some(k2) => {
            let h2 = k2 * (x - k2 * k2 * t - p.x2_0);
            let e2 = h2.exp();
            let a = ((p.k1 - k2) / (p.k1 + k2)).powi(2);
            let f = 1.0 + e1 + e2 + a * e1 * e2;
            let fx = p.k1 * e1 + k2 * e2 + a * (p.k1 + k2) * e1 * e2;
            let fxx = p.k1 * p.k1 * e1
                + k2 * k2 * e2
                + a * (p.k1 + k2) * (p.k1 + k2) * e1 * e2;
            2.0 * (fxx * f - fx * fx) / (f * f)
        }
    }
}

pub fn generate_kdv_two_soliton(p: &KdvSolitons) -> Result<GridField> {
    if !(p.k1 > 0.0) {
        return Err(Error::InvalidConfig("k1 must be > 0".into()));
    }
    if let Some(k2) = p.k2 {
        if !(k2 > 0.0) || (k2 - p.k1).abs() < 1e-12 {
            return Err(Error::InvalidConfig("k2 must be > 0 and differ from k1".into()));
        }
    }
    let mut flat = Vec::with_capacity(p.nt * p.nx);
    for it in 0..p.nt {
        let t = p.dt * it as f64;
        for ix in 0..p.nx {
            let x = p.x_min + p.dx * ix as f64;
            flat.push(kdv_soliton_value(p, t, x));
        }
    }
    let t_axis = Axis::uniform("t", 0.0, p.dt, p.nt)?;
    let x_axis = Axis::uniform("x", p.x_min, p.dx, p.nx)?;
    GridField::from_flat(flat, vec![t_axis, x_axis], "u")
}
