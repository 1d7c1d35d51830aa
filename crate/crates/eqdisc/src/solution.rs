//! Solution-based quality objective: integrate a fitted candidate forward
//! from the initial data slice and score 100 * relative L2 error against the
//! data. ODE chromosomes are integrated as coupled state chains with RK4;
//! one-dimensional-in-space PDEs use method of lines with finite-difference
//! stencils in space and sub-stepped RK4 in time.

use crate::equation::{Equation, SystemChromosome};
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::preprocess::DerivativeCache;
use crate::tokens::{Token, TokenKind};

pub const BLOWUP_PENALTY: f64 = 1e9;
const BLOWUP_FACTOR: f64 = 1e6;
const MAX_SUBSTEPS: usize = 5000;

/// Finite-difference weights for the `m`-th derivative at `z` on the stencil
/// nodes `x` (Fornberg's recurrence).
pub fn fd_weights(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[m]).collect()
}

/// Spatial derivative of order `s` on a uniform grid, fourth-order accurate:
/// central stencils in the interior, clamped one-sided stencils at edges.
pub fn spatial_derivative(values: &[f64], dx: f64, s: usize) -> Vec<f64> {
    let n = values.len();
    let width = 2 * ((s + 1) / 2) + 3; // 5 for s<=2, 7 for s=3..4
    let half = width / 2;
    let xs: Vec<f64> = (0..width).map(|i| i as f64 * dx).collect();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - width);
        let w = fd_weights((i - start) as f64 * dx, &xs, s);
        let mut acc = 0.0;
        for (j, wj) in w.iter().enumerate() {
            acc += wj * values[start + j];
        }
        out[i] = acc;
    }
    out
}

struct IsolatedEquation {
    iso_term: usize,
    time_order: usize,
    coeff_iso: f64,
}

/// Locate the term that can be isolated for explicit integration: an active
/// single-factor pure time-derivative token of the equation's own variable,
/// occurring linearly, with the highest time order in the equation.
fn isolate(eq: &Equation, time_axis: usize, n_axes: usize) -> Result<IsolatedEquation> {
    let fit = eq
        .fit
        .as_ref()
        .ok_or_else(|| Error::Contract("solution fitness needs fitted equations".into()))?;
    let mut best: Option<(usize, usize)> = None;
    for (i, term) in eq.terms.iter().enumerate() {
        if !fit.active[i] || term.factors().len() != 1 {
            continue;
        }
        let tok = &term.factors()[0];
        if tok.power != 1 {
            continue;
        }
        if let TokenKind::Deriv { var, orders } = &tok.kind {
            if *var != eq.variable {
                continue;
            }
            let pure_time = orders[time_axis] >= 1
                && (0..n_axes).all(|a| a == time_axis || orders[a] == 0);
            if pure_time && best.map_or(true, |(_, o)| orders[time_axis] > o) {
                best = Some((i, orders[time_axis]));
            }
        }
    }
    let (iso_term, time_order) =
        best.ok_or_else(|| Error::NotSolvable("no isolable time-derivative term".into()))?;
    let coeff_iso = if iso_term == eq.target_idx {
        -1.0
    } else {
        fit.coeffs[iso_term]
    };
    Ok(IsolatedEquation {
        iso_term,
        time_order,
        coeff_iso,
    })
}

/// Per-equation Q values for a fitted chromosome, by forward integration.
pub fn solution_fitness(
    system: &SystemChromosome,
    data: &[GridField],
    caches: &[DerivativeCache],
) -> Result<Vec<f64>> {
    if data.len() != system.equations.len() || caches.len() != data.len() {
        return Err(Error::Contract(
            "one data field and one cache per equation required".into(),
        ));
    }
    match data[0].axes().len() {
        1 => ode_solution_fitness(system, data, caches),
        2 => pde_solution_fitness(system, data, caches),
        d => Err(Error::NotSolvable(format!(
            "solution objective not available for {d}-dimensional grids"
        ))),
    }
}

fn ode_solution_fitness(
    system: &SystemChromosome,
    data: &[GridField],
    caches: &[DerivativeCache],
) -> Result<Vec<f64>> {
    let n_vars = system.equations.len();
    let isos: Vec<IsolatedEquation> = system
        .equations
        .iter()
        .map(|eq| isolate(eq, 0, 1))
        .collect::<Result<_>>()?;
    // reject tokens that would need a derivative at or above the order being
    // solved for (other than each equation's own isolated term)
    for (e, eq) in system.equations.iter().enumerate() {
        let fit = eq.fit.as_ref().unwrap();
        for (i, term) in eq.terms.iter().enumerate() {
            if !fit.active[i] || i == isos[e].iso_term {
                continue;
            }
            for tok in term.factors() {
                if let TokenKind::Deriv { var, orders } = &tok.kind {
                    if orders[0] >= isos[*var].time_order {
                        return Err(Error::NotSolvable(
                            "feature term needs a derivative beyond the solved order".into(),
                        ));
                    }
                }
            }
        }
    }

    let offsets: Vec<usize> = isos
        .iter()
        .scan(0usize, |acc, iso| {
            let o = *acc;
            *acc += iso.time_order;
            Some(o)
        })
        .collect();
    let dim: usize = isos.iter().map(|iso| iso.time_order).sum();

    let mut state = vec![0.0; dim];
    for (v, iso) in isos.iter().enumerate() {
        for r in 0..iso.time_order {
            let field = if r == 0 {
                Some(&data[v])
            } else {
                caches[v].get(&[r])
            };
            let field = field.ok_or_else(|| {
                Error::NotSolvable(format!("initial condition of order {r} unavailable"))
            })?;
            state[offsets[v] + r] = field.flat()[0];
        }
    }

    let eval_token = |tok: &Token, t: f64, s: &[f64]| -> f64 {
        let base = match &tok.kind {
            TokenKind::Deriv { var, orders } => s[offsets[*var] + orders[0]],
            TokenKind::Coord { .. } => t,
            TokenKind::Trig { sine, freq, .. } => {
                if *sine {
                    (freq * t).sin()
                } else {
                    (freq * t).cos()
                }
            }
        };
        base.powi(tok.power as i32)
    };
    let rhs = |t: f64, s: &[f64], ds: &mut [f64]| {
        for (v, iso) in isos.iter().enumerate() {
            for r in 0..iso.time_order - 1 {
                ds[offsets[v] + r] = s[offsets[v] + r + 1];
            }
            let eq = &system.equations[v];
            let fit = eq.fit.as_ref().unwrap();
            let mut acc = fit.bias;
            for (i, term) in eq.terms.iter().enumerate() {
                if !fit.active[i] || i == iso.iso_term {
                    continue;
                }
                let c = if i == eq.target_idx { -1.0 } else { fit.coeffs[i] };
                let mut prod = c;
                for tok in term.factors() {
                    prod *= eval_token(tok, t, s);
                }
                acc += prod;
            }
            ds[offsets[v] + iso.time_order - 1] = -acc / iso.coeff_iso;
        }
    };

    let t_coords = &data[0].axes()[0].coords;
    let limit = BLOWUP_FACTOR
        * data
            .iter()
            .flat_map(|f| f.flat())
            .fold(0.0f64, |m, v| m.max(v.abs()));
    let n_t = t_coords.len();
    let mut trajectory: Vec<Vec<f64>> = vec![Vec::with_capacity(n_t); n_vars];
    for v in 0..n_vars {
        trajectory[v].push(state[offsets[v]]);
    }
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for step in 1..n_t {
        let t = t_coords[step - 1];
        let h = t_coords[step] - t;
        rhs(t, &state, &mut k1);
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = state[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = state[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..dim {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if state.iter().any(|v| !v.is_finite() || v.abs() > limit) {
            return Ok(vec![BLOWUP_PENALTY; n_vars]);
        }
        for v in 0..n_vars {
            trajectory[v].push(state[offsets[v]]);
        }
    }

    Ok((0..n_vars)
        .map(|v| relative_error_percent(&trajectory[v], data[v].flat()))
        .collect())
}

fn pde_solution_fitness(
    system: &SystemChromosome,
    data: &[GridField],
    caches: &[DerivativeCache],
) -> Result<Vec<f64>> {
    if system.equations.len() != 1 {
        return Err(Error::NotSolvable(
            "coupled field equations are not integrated".into(),
        ));
    }
    let eq = &system.equations[0];
    let fit = eq
        .fit
        .as_ref()
        .ok_or_else(|| Error::Contract("solution fitness needs fitted equations".into()))?;
    let iso = isolate(eq, 0, 2)?;
    let axes = data[0].axes();
    if !axes[1].is_uniform(1e-9) {
        return Err(Error::NotSolvable("space axis must be uniform".into()));
    }
    let dx = axes[1].step();
    let nx = axes[1].len();
    let nt = axes[0].len();
    let data_flat = data[0].flat();

    // active feature tokens, screened for integrability
    for (i, term) in eq.terms.iter().enumerate() {
        if !fit.active[i] || i == iso.iso_term {
            continue;
        }
        for tok in term.factors() {
            if let TokenKind::Deriv { orders, .. } = &tok.kind {
                if orders[0] >= iso.time_order {
                    return Err(Error::NotSolvable(
                        "feature term needs a derivative beyond the solved order".into(),
                    ));
                }
            }
        }
    }

    // state: time-derivative chain of the field, each entry an nx-vector
    let mut state: Vec<Vec<f64>> = Vec::with_capacity(iso.time_order);
    state.push(data_flat[..nx].to_vec());
    for r in 1..iso.time_order {
        let field = caches[0].get(&[r, 0]).ok_or_else(|| {
            Error::NotSolvable(format!("initial condition of order {r} unavailable"))
        })?;
        state.push(field.flat()[..nx].to_vec());
    }

    // sub-step size from the stiffest active spatial operator
    let max_abs = data_flat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let u_scale = max_abs.max(1.0);
    let mut h_stab = f64::INFINITY;
    let safety = [0.8, 0.4, 0.15, 0.05];
    for (i, term) in eq.terms.iter().enumerate() {
        if !fit.active[i] || i == iso.iso_term {
            continue;
        }
        let c = if i == eq.target_idx { 1.0 } else { fit.coeffs[i].abs() };
        let mut s_max = 0usize;
        let mut extra_pow = 0u32;
        for tok in term.factors() {
            match &tok.kind {
                TokenKind::Deriv { orders, .. } => {
                    if orders[1] > s_max {
                        s_max = orders[1];
                    }
                    if orders[1] == 0 {
                        extra_pow += tok.power;
                    }
                }
                _ => {}
            }
        }
        if s_max >= 1 && s_max <= 4 {
            let amp = c.abs().max(1e-12) * u_scale.powi(extra_pow as i32);
            h_stab = h_stab.min(safety[s_max - 1] * dx.powi(s_max as i32) / amp);
        }
    }

    let limit = BLOWUP_FACTOR * max_abs;
    let mut predicted: Vec<f64> = Vec::with_capacity(nt * nx);
    predicted.extend_from_slice(&state[0]);

    let eval_rhs = |t: f64, s: &[Vec<f64>], ds: &mut [Vec<f64>]| {
        for r in 0..iso.time_order - 1 {
            ds[r].copy_from_slice(&s[r + 1]);
        }
        let top = iso.time_order - 1;
        for v in ds[top].iter_mut() {
            *v = fit.bias;
        }
        for (i, term) in eq.terms.iter().enumerate() {
            if !fit.active[i] || i == iso.iso_term {
                continue;
            }
            let c = if i == eq.target_idx { -1.0 } else { fit.coeffs[i] };
            let mut prod = vec![c; nx];
            for tok in term.factors() {
                match &tok.kind {
                    TokenKind::Deriv { orders, .. } => {
                        let base = &s[orders[0]];
                        let vals = if orders[1] == 0 {
                            base.clone()
                        } else {
                            spatial_derivative(base, dx, orders[1])
                        };
                        for (p, v) in prod.iter_mut().zip(&vals) {
                            *p *= v.powi(tok.power as i32);
                        }
                    }
                    TokenKind::Coord { axis } => {
                        for (ix, p) in prod.iter_mut().enumerate() {
                            let v = if *axis == 0 { t } else { axes[1].coords[ix] };
                            *p *= v.powi(tok.power as i32);
                        }
                    }
                    TokenKind::Trig { sine, axis, freq } => {
                        for (ix, p) in prod.iter_mut().enumerate() {
                            let c0 = if *axis == 0 { t } else { axes[1].coords[ix] };
                            let v = if *sine { (freq * c0).sin() } else { (freq * c0).cos() };
                            *p *= v.powi(tok.power as i32);
                        }
                    }
                }
            }
            for (acc, p) in ds[top].iter_mut().zip(&prod) {
                *acc += p;
            }
        }
        for v in ds[top].iter_mut() {
            *v = -*v / iso.coeff_iso;
        }
    };

    let mut k1 = vec![vec![0.0; nx]; iso.time_order];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    for step in 1..nt {
        let t0 = axes[0].coords[step - 1];
        let dt = axes[0].coords[step] - t0;
        let n_sub = if h_stab.is_finite() {
            (dt / h_stab).ceil() as usize
        } else {
            1
        }
        .max(1);
        if n_sub > MAX_SUBSTEPS {
            return Ok(vec![BLOWUP_PENALTY]);
        }
        let h = dt / n_sub as f64;
        for sub in 0..n_sub {
            let t = t0 + sub as f64 * h;
            eval_rhs(t, &state, &mut k1);
            axpy_state(&mut tmp, &state, &k1, 0.5 * h);
            eval_rhs(t + 0.5 * h, &tmp, &mut k2);
            axpy_state(&mut tmp, &state, &k2, 0.5 * h);
            eval_rhs(t + 0.5 * h, &tmp, &mut k3);
            axpy_state(&mut tmp, &state, &k3, h);
            eval_rhs(t + h, &tmp, &mut k4);
            for r in 0..iso.time_order {
                for ix in 0..nx {
                    state[r][ix] +=
                        h / 6.0 * (k1[r][ix] + 2.0 * k2[r][ix] + 2.0 * k3[r][ix] + k4[r][ix]);
                }
            }
            if state
                .iter()
                .flatten()
                .any(|v| !v.is_finite() || v.abs() > limit)
            {
                return Ok(vec![BLOWUP_PENALTY]);
            }
        }
        predicted.extend_from_slice(&state[0]);
    }

    Ok(vec![relative_error_percent(&predicted, data_flat)])
}

fn axpy_state(out: &mut [Vec<f64>], base: &[Vec<f64>], k: &[Vec<f64>], h: f64) {
    for r in 0..base.len() {
        for i in 0..base[r].len() {
            out[r][i] = base[r][i] + h * k[r][i];
        }
    }
}

fn relative_error_percent(predicted: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return BLOWUP_PENALTY;
    }
    100.0 * (num / den).sqrt()
}
