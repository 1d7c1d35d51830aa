//! Noise-robust derivative estimation: Gaussian smoothing followed by local
//! Chebyshev polynomial fits differentiated analytically.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::grid::GridField;

/// Parameters of the local-polynomial preprocessor.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PreprocessSpec {
    /// Smoothing kernel width in grid-step units; 0 disables smoothing.
    pub smoothing_sigma: f64,
    /// Odd node count of the local fit window per axis.
    pub window: usize,
    /// Degree of the local Chebyshev fit.
    pub degree: usize,
}

impl PreprocessSpec {
    pub fn new(smoothing_sigma: f64, window: usize, degree: usize) -> Result<Self> {
        let spec = Self { smoothing_sigma, window, degree };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidConfig("window must be odd and >= 3".into()));
        }
        if self.degree >= self.window {
            return Err(Error::InvalidConfig("degree must be < window".into()));
        }
        if self.smoothing_sigma < 0.0 {
            return Err(Error::InvalidConfig("smoothing sigma must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self { smoothing_sigma: 0.0, window: 9, degree: 5 }
    }
}

/// Separable truncated-Gaussian convolution, kernel renormalized at the
/// boundaries so constants are preserved. `sigma` is in grid-step units.
pub fn smooth_field(field: &GridField, sigma: f64) -> GridField {
    if sigma == 0.0 {
        return field.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut values = field.values().clone();
    for axis in 0..field.ndim() {
        values = convolve_axis(&values, axis, &kernel, radius);
    }
    GridField::new(values, field.axes().to_vec(), field.var_name())
        .expect("smoothing preserves shape and finiteness")
}

fn convolve_axis(values: &ArrayD<f64>, axis: usize, kernel: &[f64], radius: i64) -> ArrayD<f64> {
    let mut out = values.clone();
    let n = values.shape()[axis] as i64;
    ndarray::Zip::from(out.lanes_mut(ndarray::Axis(axis)))
        .and(values.lanes(ndarray::Axis(axis)))
        .for_each(|mut o, lane| {
            for i in 0..n {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (j, w) in kernel.iter().enumerate() {
                    let idx = i + j as i64 - radius;
                    if idx >= 0 && idx < n {
                        acc += w * lane[idx as usize];
                        wsum += w;
                    }
                }
                o[i as usize] = acc / wsum;
            }
        });
    out
}

/// Chebyshev basis values and derivatives at `xi`: returns T_k^{(order)}(xi)
/// for k = 0..=degree.
fn cheb_deriv_row(xi: f64, degree: usize, order: usize) -> Vec<f64> {
    // rows[r][k] = T_k^{(r)}(xi), built from the recurrence
    // T_{k+1}^{(r)} = 2 r T_k^{(r-1)} + 2 xi T_k^{(r)} - T_{k-1}^{(r)}
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(order + 1);
    for r in 0..=order {
        let mut row = vec![0.0; degree + 1];
        if r == 0 {
            row[0] = 1.0;
            if degree >= 1 {
                row[1] = xi;
            }
        } else if degree >= 1 && r == 1 {
            row[1] = 1.0;
        }
        for k in 1..degree {
            let lower = if r == 0 { 0.0 } else { 2.0 * r as f64 * rows[r - 1][k] };
            let prev = row[k - 1];
            row[k + 1] = lower + 2.0 * xi * row[k] - prev;
        }
        rows.push(row);
    }
    rows.pop().unwrap()
}

/// Per-node weight rows for differentiating along one axis: the derivative at
/// node `i` is the dot product of `weights[i].1` with the window starting at
/// `weights[i].0`.
fn axis_weights(
    coords: &[f64],
    axis: usize,
    order: usize,
    spec: &PreprocessSpec,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let n = coords.len();
    let w = spec.window;
    if w > n {
        return Err(Error::InvalidConfig(format!(
            "window {w} does not fit axis of length {n}"
        )));
    }
    let half = w / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half).min(n - w);
        let (a, b) = (coords[lo], coords[lo + w - 1]);
        let scale = 2.0 / (b - a);
        let map = |c: f64| scale * (c - a) - 1.0;
        let mut design = DMatrix::zeros(w, spec.degree + 1);
        for j in 0..w {
            let basis = cheb_deriv_row(map(coords[lo + j]), spec.degree, 0);
            for k in 0..=spec.degree {
                design[(j, k)] = basis[k];
            }
        }
        let gram = design.transpose() * &design;
        let svd = gram.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 0.0 || smax / smin > 1e12 {
            return Err(Error::IllConditionedWindow { axis, node: i });
        }
        let d_row = cheb_deriv_row(map(coords[i]), spec.degree, order);
        let d = DVector::from_iterator(
            spec.degree + 1,
            d_row.iter().map(|v| v * scale.powi(order as i32)),
        );
        let z = gram
            .lu()
            .solve(&d)
            .ok_or(Error::IllConditionedWindow { axis, node: i })?;
        let weights = design * z;
        out.push((lo, weights.iter().copied().collect()));
    }
    Ok(out)
}

/// Differentiates a field `order` times along `axis` by local Chebyshev fits.
pub fn chebyshev_derivative(
    field: &GridField,
    axis: usize,
    order: usize,
    spec: &PreprocessSpec,
) -> Result<GridField> {
    spec.validate()?;
    if axis >= field.ndim() {
        return Err(Error::Contract(format!("axis {axis} out of range")));
    }
    if order > spec.degree {
        return Err(Error::InvalidConfig(format!(
            "derivative order {order} exceeds fit degree {}",
            spec.degree
        )));
    }
    if order == 0 {
        return Ok(field.clone());
    }
    let weights = axis_weights(&field.axes()[axis].coords, axis, order, spec)?;
    let mut values = field.values().clone();
    ndarray::Zip::from(values.lanes_mut(ndarray::Axis(axis)))
        .and(field.values().lanes(ndarray::Axis(axis)))
        .for_each(|mut o, lane| {
            for (i, (lo, row)) in weights.iter().enumerate() {
                let mut acc = 0.0;
                for (j, w) in row.iter().enumerate() {
                    acc += w * lane[lo + j];
                }
                o[i] = acc;
            }
        });
    GridField::new(values, field.axes().to_vec(), field.var_name())
}

/// All partial derivatives of one variable up to a maximal total order.
#[derive(Clone, Debug)]
pub struct DerivativeCache {
    entries: BTreeMap<Vec<usize>, GridField>,
    max_order: usize,
}

impl DerivativeCache {
    pub fn get(&self, multi_index: &[usize]) -> Option<&GridField> {
        self.entries.get(multi_index)
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn multi_indices(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stable label for a cache entry, e.g. (1, 2) over axes (t, x) -> "d3_txx".
    pub fn entry_name(multi_index: &[usize], axis_names: &[String]) -> String {
        let total: usize = multi_index.iter().sum();
        if total == 0 {
            return "d0".to_string();
        }
        let mut s = format!("d{total}_");
        for (n, name) in multi_index.iter().zip(axis_names) {
            for _ in 0..*n {
                s.push_str(name);
            }
        }
        s
    }

    pub fn entries(&self) -> &BTreeMap<Vec<usize>, GridField> {
        &self.entries
    }
}

/// Enumerates multi-indices with total order <= max_order, honoring optional
/// per-axis caps, in graded order.
pub fn multi_indices(
    ndim: usize,
    max_order: usize,
    axis_caps: Option<&[usize]>,
) -> Vec<Vec<usize>> {
    let mut all = vec![vec![0; ndim]];
    let mut frontier = all.clone();
    for _ in 0..max_order {
        let mut next = Vec::new();
        for m in &frontier {
            for axis in 0..ndim {
                let mut cand = m.clone();
                cand[axis] += 1;
                if let Some(caps) = axis_caps {
                    if cand[axis] > caps[axis] {
                        continue;
                    }
                }
                if !next.contains(&cand) && !all.contains(&cand) {
                    next.push(cand);
                }
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

/// Builds the full derivative cache for each observed variable. Smoothing is
/// applied once, before any differentiation.
pub fn build_cache(
    fields: &[GridField],
    max_order: usize,
    spec: &PreprocessSpec,
) -> Result<Vec<DerivativeCache>> {
    build_cache_capped(fields, max_order, spec, None)
}

pub fn build_cache_capped(
    fields: &[GridField],
    max_order: usize,
    spec: &PreprocessSpec,
    axis_caps: Option<&[usize]>,
) -> Result<Vec<DerivativeCache>> {
    if max_order < 1 {
        return Err(Error::InvalidConfig("max derivative order must be >= 1".into()));
    }
    spec.validate()?;
    fields
        .iter()
        .map(|field| {
            let base = smooth_field(field, spec.smoothing_sigma);
            let mut entries: BTreeMap<Vec<usize>, GridField> = BTreeMap::new();
            for m in multi_indices(field.ndim(), max_order, axis_caps) {
                if m.iter().all(|n| *n == 0) {
                    entries.insert(m, base.clone());
                    continue;
                }
                // differentiate the entry that has the last non-zero axis
                // still untouched, applying that axis order in one fit
                let last_axis = m.iter().rposition(|n| *n > 0).unwrap();
                let mut parent = m.clone();
                parent[last_axis] = 0;
                let src = entries.get(&parent).expect("graded enumeration");
                let derived = chebyshev_derivative(src, last_axis, m[last_axis], spec)?;
                entries.insert(m, derived);
            }
            Ok(DerivativeCache { entries, max_order })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field_1d(name: &str, coords: Vec<f64>, vals: Vec<f64>) -> GridField {
        GridField::from_flat(vals, vec![Axis::new(name, coords).unwrap()], "u").unwrap()
    }

    #[test]
    fn smooth_sigma_zero_is_identity() {
        let f = field_1d("x", (0..10).map(|i| i as f64).collect(), (0..10).map(|i| i as f64 * 0.3).collect());
        assert_eq!(smooth_field(&f, 0.0), f);
    }

    #[test]
    fn smooth_preserves_constants() {
        let f = field_1d("x", (0..50).map(|i| i as f64).collect(), vec![3.25; 50]);
        let s = smooth_field(&f, 2.0);
        assert!(s.flat().iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn smooth_reduces_white_noise_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = field_1d("x", (0..n).map(|i| i as f64).collect(), vals);
        let s = smooth_field(&f, 2.0);
        let std = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        assert!(std(s.flat()) < 0.5 * std(f.flat()));
    }

    #[test]
    fn linear_field_first_derivative_is_slope() {
        let coords: Vec<f64> = (0..64).map(|i| 0.1 * i as f64).collect();
        let vals: Vec<f64> = coords.iter().map(|x| 2.0 + 3.5 * x).collect();
        let f = field_1d("x", coords, vals);
        let spec = PreprocessSpec::default();
        let d = chebyshev_derivative(&f, 0, 1, &spec).unwrap();
        assert!(d.flat().iter().all(|v| (v - 3.5).abs() < 1e-10));
    }

    #[test]
    fn sin_derivative_matches_cos() {
        let n = 256;
        let coords: Vec<f64> = (0..n)
            .map(|i| 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64)
            .collect();
        let vals: Vec<f64> = coords.iter().map(|x| x.sin()).collect();
        let f = field_1d("x", coords.clone(), vals);
        let spec = PreprocessSpec::new(0.0, 9, 5).unwrap();
        let d = chebyshev_derivative(&f, 0, 1, &spec).unwrap();
        let max_err = d
            .flat()
            .iter()
            .zip(&coords)
            .map(|(v, x)| (v - x.cos()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-4, "max_err = {max_err}");
    }

    #[test]
    fn clean_data_convergence_at_least_quadratic() {
        let spec = PreprocessSpec::new(0.0, 9, 5).unwrap();
        let err_at = |n: usize| {
            let coords: Vec<f64> = (0..n)
                .map(|i| 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64)
                .collect();
            let vals: Vec<f64> = coords.iter().map(|x| x.sin()).collect();
            let f = field_1d("x", coords.clone(), vals);
            let d = chebyshev_derivative(&f, 0, 1, &spec).unwrap();
            d.flat()
                .iter()
                .zip(&coords)
                .map(|(v, x)| (v - x.cos()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err_at(64), err_at(128));
        assert!(e1 / e2 > 3.9, "ratio = {}", e1 / e2);
    }

    #[test]
    fn second_derivative_of_constant_is_zero() {
        let f = field_1d("x", (0..32).map(|i| i as f64).collect(), vec![7.0; 32]);
        let d = chebyshev_derivative(&f, 0, 2, &PreprocessSpec::default()).unwrap();
        assert!(d.flat().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn polynomial_exactness_up_to_degree() {
        let coords: Vec<f64> = (0..64).map(|i| 0.05 * i as f64).collect();
        let vals: Vec<f64> = coords.iter().map(|x| 1.0 + x - 2.0 * x.powi(3) + 0.5 * x.powi(5)).collect();
        let f = field_1d("x", coords.clone(), vals);
        let spec = PreprocessSpec::new(0.0, 9, 5).unwrap();
        let d2 = chebyshev_derivative(&f, 0, 2, &spec).unwrap();
        let max_err = d2
            .flat()
            .iter()
            .zip(&coords)
            .map(|(v, x)| (v - (-12.0 * x + 10.0 * x.powi(3))).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-9, "max_err = {max_err}");
    }

    #[test]
    fn cache_keys_1d() {
        let f = field_1d("t", (0..32).map(|i| i as f64 * 0.1).collect(), vec![1.0; 32]);
        let caches = build_cache(&[f], 2, &PreprocessSpec::default()).unwrap();
        let keys: Vec<Vec<usize>> = caches[0].multi_indices().cloned().collect();
        assert_eq!(keys, vec![vec![0], vec![1], vec![2]]);
    }

    fn field_2d(nt: usize, nx: usize, f: impl Fn(f64, f64) -> f64) -> GridField {
        let t: Vec<f64> = (0..nt).map(|i| 0.05 * i as f64).collect();
        let x: Vec<f64> = (0..nx).map(|i| 0.05 * i as f64).collect();
        let mut vals = Vec::with_capacity(nt * nx);
        for ti in &t {
            for xi in &x {
                vals.push(f(*ti, *xi));
            }
        }
        GridField::from_flat(
            vals,
            vec![Axis::new("t", t).unwrap(), Axis::new("x", x).unwrap()],
            "u",
        )
        .unwrap()
    }

    #[test]
    fn cache_count_2d_order_3() {
        let f = field_2d(16, 16, |t, x| t + x);
        let caches = build_cache(&[f], 3, &PreprocessSpec::default()).unwrap();
        // stars and bars: all n1 + n2 <= 3 -> 10 multi-indices
        assert_eq!(caches[0].len(), 10);
    }

    #[test]
    fn cache_completeness_orders_1_to_4() {
        let f = field_2d(16, 16, |t, x| t * x);
        let spec = PreprocessSpec::default();
        for nd in 1..=4 {
            let caches = build_cache(std::slice::from_ref(&f), nd, &spec).unwrap();
            let expected = (nd + 1) * (nd + 2) / 2;
            assert_eq!(caches[0].len(), expected, "N_d = {nd}");
            for m in multi_indices(2, nd, None) {
                assert!(caches[0].get(&m).is_some());
            }
        }
    }

    #[test]
    fn mixed_partial_of_t_times_x() {
        let f = field_2d(32, 32, |t, x| t * x);
        let caches = build_cache(&[f], 2, &PreprocessSpec::default()).unwrap();
        let d = caches[0].get(&[1, 1]).unwrap();
        // interior nodes only
        let vals = d.values();
        for i in 3..29 {
            for j in 3..29 {
                let v = vals[[i, j]];
                assert!((v - 1.0).abs() < 1e-6, "d(1,1)[{i},{j}] = {v}");
            }
        }
    }

    #[test]
    fn mixed_partial_symmetry_on_smooth_field() {
        let f = field_2d(32, 32, |t, x| (t + 0.3 * x).sin());
        let spec = PreprocessSpec::default();
        // (1,1) via t-then-x against x-then-t computed manually
        let dt = chebyshev_derivative(&f, 0, 1, &spec).unwrap();
        let dtx = chebyshev_derivative(&dt, 1, 1, &spec).unwrap();
        let dx = chebyshev_derivative(&f, 1, 1, &spec).unwrap();
        let dxt = chebyshev_derivative(&dx, 0, 1, &spec).unwrap();
        let scale = dtx.flat().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 4..28 {
            for j in 4..28 {
                let a = dtx.values()[[i, j]];
                let b = dxt.values()[[i, j]];
                assert!((a - b).abs() / scale < 1e-6);
            }
        }
    }

    #[test]
    fn entry_name_style() {
        let names = vec!["t".to_string(), "x".to_string()];
        assert_eq!(DerivativeCache::entry_name(&[0, 0], &names), "d0");
        assert_eq!(DerivativeCache::entry_name(&[1, 2], &names), "d3_txx");
    }
}
