//! Experiment orchestration: benchmark dataset construction, noise sweeps
//! with repeated seeded runs, truth matching, detection statistics and
//! report emission.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::equation::{Equation, SystemChromosome, Term};
use crate::error::{Error, Result};
use crate::grid::{add_noise, Axis, GridField, NoiseSpec};
use crate::moeadd::{run as run_moeadd, Evaluator, FitnessMode, MoeaddConfig};
use crate::preprocess::{build_cache_capped, DerivativeCache, PreprocessSpec};
use crate::solvers::{
    generate_burgers, generate_kdv_two_soliton, generate_lotka_volterra, generate_van_der_pol,
    KdvSolitons, LotkaVolterra,
};
use crate::tokens::{DerivFamily, Token, TokenPool};
use crate::fitting::{discrepancy_fitness, domain_weight, EvalContext};

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Burgers {
        nu: f64,
        nx: usize,
        nt: usize,
        dx: f64,
        dt: f64,
        x_min: f64,
        profile_center: f64,
        profile_width: f64,
    },
    Kdv(KdvSolitons),
    VanDerPol {
        eps: f64,
        u0: f64,
        du0: f64,
        dt: f64,
        n_points: usize,
    },
    LotkaVolterra(LotkaVolterra),
    Files {
        dir: String,
    },
}

/// KdV sample grid used by the benchmark: a two-soliton traversal on
/// 512 x 201 nodes with steps 0.1 and 0.12.
pub fn kdv_benchmark_spec() -> KdvSolitons {
    KdvSolitons {
        k1: 0.6,
        k2: Some(0.35),
        x1_0: 3.0,
        x2_0: 8.0,
        nt: 512,
        nx: 201,
        dt: 0.1,
        dx: 0.12,
        x_min: 0.0,
    }
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<GridField>> {
    match spec {
        DatasetSpec::Burgers {
            nu,
            nx,
            nt,
            dx,
            dt,
            x_min,
            profile_center,
            profile_width,
        } => {
            let (c, w) = (*profile_center, *profile_width);
            let field = generate_burgers(*nu, *nx, *nt, *dx, *dt, *x_min, |x| {
                (-((x - c) / w).powi(2)).exp()
            })?;
            Ok(vec![field])
        }
        DatasetSpec::Kdv(p) => Ok(vec![generate_kdv_two_soliton(p)?]),
        DatasetSpec::VanDerPol {
            eps,
            u0,
            du0,
            dt,
            n_points,
        } => {
            let (u, _du) = generate_van_der_pol(*eps, *u0, *du0, *dt, *n_points)?;
            Ok(vec![u])
        }
        DatasetSpec::LotkaVolterra(p) => {
            let (u, v) = generate_lotka_volterra(p)?;
            Ok(vec![u, v])
        }
        DatasetSpec::Files { dir } => load_dataset(Path::new(dir)),
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    vars: Vec<String>,
    axes: Vec<AxisRecord>,
    dtype: String,
    order: String,
}

// coords kept as JSON numbers so reload can use the exact decimal literal
#[derive(Serialize, Deserialize)]
struct AxisRecord {
    name: String,
    coords: Vec<serde_json::Number>,
}

/// Writes a dataset as a JSON header plus one little-endian f64 blob per
/// variable.
pub fn save_dataset(dir: &Path, fields: &[GridField]) -> Result<()> {
    if fields.is_empty() {
        return Err(Error::Contract("no fields to save".into()));
    }
    fs::create_dir_all(dir)?;
    let header = DatasetHeader {
        vars: fields.iter().map(|f| f.var_name().to_string()).collect(),
        axes: fields[0]
            .axes()
            .iter()
            .map(|axis| AxisRecord {
                name: axis.name.clone(),
                coords: axis
                    .coords
                    .iter()
                    .map(|c| serde_json::Number::from_f64(*c).expect("axis coords are finite"))
                    .collect(),
            })
            .collect(),
        dtype: "f64".into(),
        order: "row-major".into(),
    };
    let json = serde_json::to_string_pretty(&header)?;
    fs::write(dir.join("dataset.json"), json)?;
    for field in fields {
        let mut bytes = Vec::with_capacity(field.len() * 8);
        for v in field.flat() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(format!("{}.bin", field.var_name())), bytes)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<GridField>> {
    let header: DatasetHeader =
        serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
    let axes: Vec<Axis> = header
        .axes
        .iter()
        .map(|rec| {
            let coords = rec
                .coords
                .iter()
                .map(|n| {
                    n.as_str()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidField(format!("bad axis coordinate: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            Axis::new(rec.name.clone(), coords)
        })
        .collect::<Result<_>>()?;
    header
        .vars
        .iter()
        .map(|name| {
            let bytes = fs::read(dir.join(format!("{name}.bin")))?;
            if bytes.len() % 8 != 0 {
                return Err(Error::InvalidField(format!("{name}.bin has a partial value")));
            }
            let flat: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            GridField::from_flat(flat, axes.clone(), name.clone())
        })
        .collect()
}

/// Writes the dataset as a single CSV for interchange with other tools:
/// one row per grid node, coordinate columns first, then one value column
/// per variable. Nodes are emitted in row-major order (last axis fastest).
pub fn export_dataset_csv(path: &Path, fields: &[GridField]) -> Result<()> {
    if fields.is_empty() {
        return Err(Error::Contract("no fields to export".into()));
    }
    let axes = fields[0].axes();
    let mut out = String::new();
    for axis in axes {
        out.push_str(&axis.name);
        out.push(',');
    }
    let names: Vec<&str> = fields.iter().map(|f| f.var_name()).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    let shape: Vec<usize> = axes.iter().map(|a| a.coords.len()).collect();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..fields[0].len() {
        for (a, &i) in idx.iter().enumerate() {
            out.push_str(&format!("{:?},", axes[a].coords[i]));
        }
        let row: Vec<String> = fields.iter().map(|f| format!("{:?}", f.flat()[flat])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
        for a in (0..shape.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a dataset written by [`export_dataset_csv`] (or produced elsewhere
/// with the same layout). The caller states how many leading columns are
/// coordinates; the rest are variables. Rows must cover a full lattice in
/// row-major order, which is checked against the reconstructed axes.
pub fn import_dataset_csv(path: &Path, n_axes: usize) -> Result<Vec<GridField>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidField("empty CSV".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() <= n_axes {
        return Err(Error::InvalidField(format!(
            "CSV has {} columns but {n_axes} are claimed as coordinates",
            columns.len()
        )));
    }
    let n_vars = columns.len() - n_axes;
    let mut axis_coords: Vec<Vec<f64>> = vec![Vec::new(); n_axes];
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_vars];
    for (row_no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidField(format!("row {}: {e}", row_no + 2)))
            })
            .collect::<Result<_>>()?;
        if cells.len() != columns.len() {
            return Err(Error::InvalidField(format!(
                "row {} has {} cells, expected {}",
                row_no + 2,
                cells.len(),
                columns.len()
            )));
        }
        for a in 0..n_axes {
            if !axis_coords[a].contains(&cells[a]) {
                axis_coords[a].push(cells[a]);
            }
        }
        for v in 0..n_vars {
            values[v].push(cells[n_axes + v]);
        }
    }
    let axes: Vec<Axis> = axis_coords
        .into_iter()
        .zip(columns.iter())
        .map(|(coords, name)| Axis::new((*name).to_string(), coords))
        .collect::<Result<_>>()?;
    let n_nodes: usize = axes.iter().map(|a| a.coords.len()).product();
    if values[0].len() != n_nodes {
        return Err(Error::InvalidField(format!(
            "{} rows do not fill a {} node lattice",
            values[0].len(),
            n_nodes
        )));
    }
    values
        .into_iter()
        .zip(columns[n_axes..].iter())
        .map(|(flat, name)| GridField::from_flat(flat, axes.clone(), (*name).to_string()))
        .collect()
}

// ---------------------------------------------------------------------------
// ground truth and matching
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthTerm {
    pub term: Term,
    pub coeff: f64,
}

/// A reference equation written as target = sum coeff_i * term_i, i.e. the
/// target carries an implicit coefficient of 1 on the left-hand side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthEquation {
    pub target: Term,
    pub terms: Vec<TruthTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// detection flags: index 0 is the target term, then the truth terms
    pub detected: Vec<bool>,
    /// rescaled candidate coefficients for detected terms (target -> 1.0)
    pub coefficients: Vec<Option<f64>>,
    pub success: bool,
}

/// Term-by-term comparison after rescaling the candidate so the truth's
/// target term has unit coefficient. Success requires every truth term
/// present with its coefficient within `coeff_tol` relative, and no
/// significant extra active term.
pub fn match_equation(candidate: &Equation, truth: &TruthEquation, coeff_tol: f64) -> MatchReport {
    let n_rows = truth.terms.len() + 1;
    let mut report = MatchReport {
        detected: vec![false; n_rows],
        coefficients: vec![None; n_rows],
        success: false,
    };
    let coeff_of = |idx: usize| -> f64 {
        if idx == candidate.target_idx {
            -1.0
        } else {
            candidate
                .fit
                .as_ref()
                .map(|f| f.coeffs[idx])
                .unwrap_or(0.0)
        }
    };
    let target_pos = (0..candidate.terms.len())
        .find(|&i| candidate.is_active(i) && candidate.terms[i].structural_eq(&truth.target));
    let Some(tpos) = target_pos else {
        return report;
    };
    let c_target = coeff_of(tpos);
    if c_target == 0.0 {
        return report;
    }
    // rescale so the truth target moves to the left-hand side with coeff 1:
    // c_target * T_t + sum c_i T_i + bias = 0  =>  T_t = sum (-c_i/c_target) T_i ...
    let scale = -1.0 / c_target;
    report.detected[0] = true;
    report.coefficients[0] = Some(1.0);
    let min_truth = truth
        .terms
        .iter()
        .map(|t| t.coeff.abs())
        .fold(f64::INFINITY, f64::min);
    let mut extras = false;
    let mut coeffs_ok = true;
    for i in 0..candidate.terms.len() {
        if i == tpos || !candidate.is_active(i) {
            continue;
        }
        let rescaled = coeff_of(i) * scale;
        match truth
            .terms
            .iter()
            .position(|t| t.term.structural_eq(&candidate.terms[i]))
        {
            Some(k) => {
                report.detected[k + 1] = true;
                report.coefficients[k + 1] = Some(rescaled);
                let expected = truth.terms[k].coeff;
                if (rescaled - expected).abs() > coeff_tol * expected.abs() {
                    coeffs_ok = false;
                }
            }
            None => {
                if rescaled.abs() > coeff_tol * min_truth {
                    extras = true;
                }
            }
        }
    }
    if let Some(fit) = candidate.fit.as_ref() {
        if (fit.bias * scale).abs() > coeff_tol * min_truth {
            extras = true;
        }
    }
    report.success = report.detected.iter().all(|&d| d) && coeffs_ok && !extras;
    report
}

// ---------------------------------------------------------------------------
// experiment configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// archive member with the smallest total quality objective
    MinQuality,
    /// rank archive members on the last fifth of the time axis only
    HeldOutWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub noise_levels: Vec<f64>,
    pub runs: usize,
    pub preprocess: PreprocessSpec,
    pub max_deriv_order: usize,
    pub axis_caps: Option<Vec<usize>>,
    pub pool: TokenPool,
    pub optimizer: MoeaddConfig,
    pub fitness: FitnessMode,
    pub boundary_fraction: f64,
    pub coeff_tol: f64,
    pub selection: SelectionMode,
    pub truth: Vec<TruthEquation>,
    pub output_dir: String,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::InvalidConfig("runs must be >= 1".into()));
        }
        if self.noise_levels.iter().any(|nl| *nl < 0.0) {
            return Err(Error::InvalidConfig("noise levels must be >= 0".into()));
        }
        if self.truth.is_empty() {
            return Err(Error::InvalidConfig("truth system must not be empty".into()));
        }
        self.preprocess.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// report structures
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: usize,
    pub success: bool,
    pub selected: Option<String>,
    pub matches: Vec<MatchReport>,
    pub failure: Option<String>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermRow {
    pub equation: usize,
    pub term: String,
    pub expected: f64,
    pub p_percent: f64,
    pub mean: Option<f64>,
    /// 1.98 sample standard deviations around the mean
    pub spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub noise_level: f64,
    pub runs: Vec<RunRecord>,
    pub rows: Vec<TermRow>,
    pub success_rate: f64,
    pub one_positive: bool,
    pub mape: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub experiment: String,
    pub axis_names: Vec<String>,
    pub var_names: Vec<String>,
    pub levels: Vec<LevelReport>,
}

// ---------------------------------------------------------------------------
// statistics
// ---------------------------------------------------------------------------

fn mean_and_spread(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match values.len() {
        0 => (None, None),
        1 => (Some(values[0]), Some(0.0)),
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            (Some(mean), Some(1.98 * var.sqrt()))
        }
    }
}

/// Aggregates per-run match reports into table rows: detection frequency,
/// coefficient mean with a 1.98 sample-sigma spread, success rate, the
/// any-success flag and coefficient MAPE over fully successful runs.
pub fn aggregate_stats(
    records: &[RunRecord],
    truth: &[TruthEquation],
    axis_names: &[String],
    var_names: &[String],
) -> (Vec<TermRow>, f64, bool, Option<f64>) {
    let n_runs = records.len().max(1);
    let mut rows = Vec::new();
    for (e, truth_eq) in truth.iter().enumerate() {
        let row_names: Vec<(String, f64)> = std::iter::once((
            truth_eq.target.render(axis_names, var_names),
            1.0,
        ))
        .chain(
            truth_eq
                .terms
                .iter()
                .map(|t| (t.term.render(axis_names, var_names), t.coeff)),
        )
        .collect();
        for (r, (name, expected)) in row_names.into_iter().enumerate() {
            let detected: Vec<f64> = records
                .iter()
                .filter_map(|rec| rec.matches.get(e))
                .filter(|m| m.detected[r])
                .filter_map(|m| m.coefficients[r])
                .collect();
            let (mean, spread) = mean_and_spread(&detected);
            rows.push(TermRow {
                equation: e,
                term: name,
                expected,
                p_percent: 100.0 * detected.len() as f64 / n_runs as f64,
                mean,
                spread,
            });
        }
    }
    let successes = records.iter().filter(|r| r.success).count();
    let success_rate = 100.0 * successes as f64 / n_runs as f64;
    let one_positive = successes > 0;
    let mut ape = Vec::new();
    for rec in records.iter().filter(|r| r.success) {
        for (e, truth_eq) in truth.iter().enumerate() {
            for (k, t) in truth_eq.terms.iter().enumerate() {
                if let Some(c) = rec.matches[e].coefficients[k + 1] {
                    ape.push(100.0 * (c - t.coeff).abs() / t.coeff.abs());
                }
            }
        }
    }
    let mape = if ape.is_empty() {
        None
    } else {
        Some(ape.iter().sum::<f64>() / ape.len() as f64)
    };
    (rows, success_rate, one_positive, mape)
}

// ---------------------------------------------------------------------------
// experiment execution
// ---------------------------------------------------------------------------

fn derive_seed(master: u64, level_idx: usize, run: usize, stream: u64) -> u64 {
    let mut z = master
        ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(level_idx as u64 + 1)
        ^ 0xD1B5_4A32_D192_ED03u64.wrapping_mul(run as u64 + 1)
        ^ stream;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Index of the archive entry to report, per the configured selection mode.
fn select_model(
    archive: &crate::moeadd::ParetoArchive,
    config: &ExperimentConfig,
    data: &[GridField],
    caches: &[DerivativeCache],
) -> Option<usize> {
    if archive.individuals.is_empty() {
        return None;
    }
    let score = |sys: &SystemChromosome, objectives: &[f64]| -> f64 {
        match config.selection {
            SelectionMode::MinQuality => objectives.iter().step_by(2).sum(),
            SelectionMode::HeldOutWindow => {
                let axes = data[0].axes();
                let n_t = axes[0].len();
                let cut = n_t - n_t / 5;
                let mut w = domain_weight(axes, config.boundary_fraction)
                    .unwrap_or_else(|_| vec![1.0; data[0].len()]);
                let stride: usize = axes[1..].iter().map(Axis::len).product();
                for (i, wi) in w.iter_mut().enumerate() {
                    if i / stride < cut {
                        *wi = 0.0;
                    }
                }
                let ctx = EvalContext::new(axes, caches);
                sys.equations
                    .iter()
                    .map(|eq| {
                        discrepancy_fitness(eq, &ctx, &w).unwrap_or(crate::solution::BLOWUP_PENALTY)
                    })
                    .sum()
            }
        }
    };
    (0..archive.individuals.len()).min_by(|&a, &b| {
        let ia = &archive.individuals[a];
        let ib = &archive.individuals[b];
        score(&ia.chromosome, &ia.objectives)
            .partial_cmp(&score(&ib.chromosome, &ib.objectives))
            .unwrap()
            .then(a.cmp(&b))
    })
}

fn single_run(
    config: &ExperimentConfig,
    clean: &[GridField],
    level_idx: usize,
    noise_level: f64,
    run: usize,
    axis_names: &[String],
    var_names: &[String],
) -> RunRecord {
    let started = Instant::now();
    let empty_matches = || {
        config
            .truth
            .iter()
            .map(|t| MatchReport {
                detected: vec![false; t.terms.len() + 1],
                coefficients: vec![None; t.terms.len() + 1],
                success: false,
            })
            .collect::<Vec<_>>()
    };
    let outcome = (|| -> Result<(Vec<MatchReport>, String)> {
        let mut fields = Vec::with_capacity(clean.len());
        for (fi, field) in clean.iter().enumerate() {
            if noise_level > 0.0 {
                let seed = derive_seed(config.master_seed, level_idx, run, 0xA0 + fi as u64);
                fields.push(add_noise(field, &NoiseSpec::new(noise_level, seed)?)?);
            } else {
                fields.push(field.clone());
            }
        }
        let caches = build_cache_capped(
            &fields,
            config.max_deriv_order,
            &config.preprocess,
            config.axis_caps.as_deref(),
        )?;
        let node_weights = domain_weight(fields[0].axes(), config.boundary_fraction)?;
        let eval = Evaluator {
            data: &fields,
            caches: &caches,
            node_weights,
            mode: config.fitness,
        };
        let mut optimizer = config.optimizer.clone();
        optimizer.seed = derive_seed(config.master_seed, level_idx, run, 0xB0);
        let archive = run_moeadd(&optimizer, &config.pool, &eval)?;
        let Some(best) = select_model(&archive, config, &fields, &caches) else {
            return Err(Error::Contract("empty archive".into()));
        };
        let chromosome = &archive.individuals[best].chromosome;
        let matches: Vec<MatchReport> = chromosome
            .equations
            .iter()
            .zip(&config.truth)
            .map(|(eq, truth)| match_equation(eq, truth, config.coeff_tol))
            .collect();
        Ok((matches, chromosome.render(axis_names, var_names)))
    })();
    match outcome {
        Ok((matches, rendered)) => RunRecord {
            run_index: run,
            success: matches.iter().all(|m| m.success),
            selected: Some(rendered),
            matches,
            failure: None,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
        Err(e) => RunRecord {
            run_index: run,
            success: false,
            selected: None,
            matches: empty_matches(),
            failure: Some(e.to_string()),
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
    }
}

/// Runs the full noise sweep and writes report files into the output
/// directory. Individual run failures are recorded, never fatal.
pub fn run_experiment(config: &ExperimentConfig) -> Result<DetectionReport> {
    config.validate()?;
    let clean = generate_dataset(&config.dataset)?;
    if clean.len() != config.truth.len() {
        return Err(Error::InvalidConfig(
            "truth system size must match the number of data fields".into(),
        ));
    }
    let axis_names: Vec<String> = clean[0]
        .axes()
        .iter()
        .map(|a| a.name.clone())
        .collect();
    let var_names: Vec<String> = clean.iter().map(|f| f.var_name().to_string()).collect();
    let mut levels = Vec::with_capacity(config.noise_levels.len());
    for (li, &nl) in config.noise_levels.iter().enumerate() {
        let records: Vec<RunRecord> = (0..config.runs)
            .map(|run| {
                log::info!("{}: noise level {nl}%, run {run}", config.name);
                single_run(config, &clean, li, nl, run, &axis_names, &var_names)
            })
            .collect();
        let (rows, success_rate, one_positive, mape) =
            aggregate_stats(&records, &config.truth, &axis_names, &var_names);
        levels.push(LevelReport {
            noise_level: nl,
            runs: records,
            rows,
            success_rate,
            one_positive,
            mape,
        });
    }
    let report = DetectionReport {
        experiment: config.name.clone(),
        axis_names,
        var_names,
        levels,
    };
    let out = PathBuf::from(&config.output_dir);
    emit_report(&report, &out, &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Plot])?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// report emission
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Plot,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "-".into(),
    }
}

/// Writes the requested artifacts: a per-term statistics CSV, a JSON file
/// with full run detail, and a plot CSV of detection frequency vs noise.
/// Wall-clock timings appear only in the JSON.
pub fn emit_report(report: &DetectionReport, dir: &Path, formats: &[ReportFormat]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for format in formats {
        match format {
            ReportFormat::Csv => {
                let mut f = fs::File::create(dir.join("stats.csv"))?;
                writeln!(
                    f,
                    "experiment,noise_level,equation,term,expected,p_percent,mean,spread,success_rate,one_positive,mape"
                )?;
                for level in &report.levels {
                    for row in &level.rows {
                        writeln!(
                            f,
                            "{},{},{},\"{}\",{},{},{},{},{},{},{}",
                            report.experiment,
                            level.noise_level,
                            row.equation,
                            row.term,
                            row.expected,
                            row.p_percent,
                            fmt_opt(row.mean),
                            fmt_opt(row.spread),
                            level.success_rate,
                            level.one_positive,
                            fmt_opt(level.mape),
                        )?;
                    }
                }
            }
            ReportFormat::Json => {
                fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
            }
            ReportFormat::Plot => {
                let mut f = fs::File::create(dir.join("plot.csv"))?;
                writeln!(f, "noise_level,equation,term,p_percent")?;
                for level in &report.levels {
                    for row in &level.rows {
                        writeln!(
                            f,
                            "{},{},\"{}\",{}",
                            level.noise_level, row.equation, row.term, row.p_percent
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn load_report(path: &Path) -> Result<DetectionReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

// ---------------------------------------------------------------------------
// benchmark configurations
// ---------------------------------------------------------------------------

fn deriv_term(var: usize, orders: Vec<usize>) -> Term {
    Term::new(vec![Token::deriv(var, orders)]).expect("valid term")
}

/// Viscous shock formation: u_t = 0.1 u_xx - u u_x on a 101 x 256 grid.
pub fn burgers_config(output_dir: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: "burgers".into(),
        dataset: DatasetSpec::Burgers {
            nu: 0.1,
            nx: 256,
            nt: 101,
            dx: 0.0625,
            dt: 0.1,
            x_min: -8.0,
            profile_center: -2.0,
            profile_width: 1.0,
        },
        noise_levels: vec![0.0],
        runs: 10,
        preprocess: PreprocessSpec::default(),
        max_deriv_order: 2,
        axis_caps: Some(vec![1, 2]),
        pool: TokenPool {
            n_axes: 2,
            single_deriv_factor: true,
            deriv: vec![DerivFamily {
                var: 0,
                max_total_order: 2,
                axis_caps: Some(vec![1, 2]),
                max_power: 1,
                target_only: false,
                pure_axes: true,
            }],
            coord: vec![],
            trig: vec![],
        },
        optimizer: MoeaddConfig {
            h_divisions: 7,
            epochs: 65,
            n_terms: 5,
            max_factors: 2,
            sparsity_range: (1e-9, 1.0),
            ..MoeaddConfig::default()
        },
        fitness: FitnessMode::Solution,
        boundary_fraction: 0.1,
        coeff_tol: 0.1,
        selection: SelectionMode::MinQuality,
        truth: vec![TruthEquation {
            target: deriv_term(0, vec![1, 0]),
            terms: vec![
                TruthTerm {
                    term: deriv_term(0, vec![0, 2]),
                    coeff: 0.106,
                },
                TruthTerm {
                    term: Term::new(vec![
                        Token::deriv(0, vec![0, 0]),
                        Token::deriv(0, vec![0, 1]),
                    ])
                    .expect("valid term"),
                    coeff: -0.997,
                },
            ],
        }],
        output_dir: output_dir.into(),
        master_seed: 20_240_001,
    }
}

/// Two-soliton traversal: u_t = -6 u u_x - u_xxx.
pub fn kdv_config(output_dir: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: "kdv".into(),
        dataset: DatasetSpec::Kdv(kdv_benchmark_spec()),
        noise_levels: vec![0.0],
        runs: 10,
        preprocess: PreprocessSpec::default(),
        max_deriv_order: 3,
        axis_caps: Some(vec![1, 3]),
        pool: TokenPool {
            n_axes: 2,
            single_deriv_factor: true,
            deriv: vec![DerivFamily {
                var: 0,
                max_total_order: 3,
                axis_caps: Some(vec![1, 3]),
                max_power: 1,
                target_only: false,
                pure_axes: true,
            }],
            coord: vec![],
            trig: vec![],
        },
        optimizer: MoeaddConfig {
            h_divisions: 7,
            epochs: 55,
            n_terms: 6,
            max_factors: 2,
            sparsity_range: (1e-9, 1.0),
            ..MoeaddConfig::default()
        },
        fitness: FitnessMode::Discrepancy,
        boundary_fraction: 0.1,
        coeff_tol: 0.1,
        selection: SelectionMode::MinQuality,
        truth: vec![TruthEquation {
            target: deriv_term(0, vec![1, 0]),
            terms: vec![
                TruthTerm {
                    term: Term::new(vec![
                        Token::deriv(0, vec![0, 0]),
                        Token::deriv(0, vec![0, 1]),
                    ])
                    .expect("valid term"),
                    coeff: -6.0,
                },
                TruthTerm {
                    term: deriv_term(0, vec![0, 3]),
                    coeff: -1.0,
                },
            ],
        }],
        output_dir: output_dir.into(),
        master_seed: 20_240_002,
    }
}

/// Relaxation oscillator: u'' = 0.199 u' - 0.199 u^2 u' - u.
pub fn van_der_pol_config(output_dir: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: "van_der_pol".into(),
        dataset: DatasetSpec::VanDerPol {
            eps: 0.2,
            u0: 3f64.sqrt() / 2.0,
            du0: 0.5,
            dt: 0.05,
            n_points: 320,
        },
        noise_levels: vec![0.0],
        runs: 10,
        preprocess: PreprocessSpec::default(),
        max_deriv_order: 2,
        axis_caps: None,
        pool: TokenPool {
            n_axes: 1,
            single_deriv_factor: true,
            deriv: vec![DerivFamily {
                var: 0,
                max_total_order: 2,
                axis_caps: None,
                max_power: 2,
                target_only: false,
                pure_axes: false,
            }],
            coord: vec![],
            trig: vec![],
        },
        optimizer: MoeaddConfig {
            h_divisions: 11,
            epochs: 85,
            n_terms: 6,
            max_factors: 4,
            sparsity_range: (1e-12, 1e-4),
            ..MoeaddConfig::default()
        },
        fitness: FitnessMode::Discrepancy,
        boundary_fraction: 0.1,
        coeff_tol: 0.05,
        selection: SelectionMode::MinQuality,
        truth: vec![TruthEquation {
            target: deriv_term(0, vec![2]),
            terms: vec![
                TruthTerm {
                    term: deriv_term(0, vec![1]),
                    coeff: 0.199,
                },
                TruthTerm {
                    term: Term::new(vec![
                        Token::deriv_pow(0, vec![0], 2),
                        Token::deriv(0, vec![1]),
                    ])
                    .expect("valid term"),
                    coeff: -0.199,
                },
                TruthTerm {
                    term: deriv_term(0, vec![0]),
                    coeff: -1.0,
                },
            ],
        }],
        output_dir: output_dir.into(),
        master_seed: 20_240_003,
    }
}

/// Hunter-prey system: u' = 20u - 20uv, v' = 20uv - 20v.
pub fn lotka_volterra_config(output_dir: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: "lotka_volterra".into(),
        dataset: DatasetSpec::LotkaVolterra(LotkaVolterra {
            alpha: 20.0,
            beta: 20.0,
            gamma: 20.0,
            delta: 20.0,
            u0: 4.0,
            v0: 2.0,
            dt: 0.002,
            n_steps: 500,
        }),
        noise_levels: vec![0.0],
        runs: 10,
        preprocess: PreprocessSpec::default(),
        max_deriv_order: 1,
        axis_caps: None,
        pool: TokenPool {
            n_axes: 1,
            single_deriv_factor: true,
            deriv: vec![
                DerivFamily {
                    var: 0,
                    max_total_order: 1,
                    axis_caps: None,
                    max_power: 2,
                    target_only: true,
                    pure_axes: false,
                },
                DerivFamily {
                    var: 1,
                    max_total_order: 1,
                    axis_caps: None,
                    max_power: 2,
                    target_only: true,
                    pure_axes: false,
                },
            ],
            coord: vec![],
            trig: vec![],
        },
        optimizer: MoeaddConfig {
            h_divisions: 2,
            epochs: 85,
            n_terms: 5,
            max_factors: 2,
            sparsity_range: (1e-12, 1e-4),
            ..MoeaddConfig::default()
        },
        fitness: FitnessMode::Discrepancy,
        boundary_fraction: 0.1,
        coeff_tol: 0.05,
        selection: SelectionMode::MinQuality,
        truth: vec![
            TruthEquation {
                target: deriv_term(0, vec![1]),
                terms: vec![
                    TruthTerm {
                        term: deriv_term(0, vec![0]),
                        coeff: 20.0,
                    },
                    TruthTerm {
                        term: Term::new(vec![
                            Token::deriv(0, vec![0]),
                            Token::deriv(1, vec![0]),
                        ])
                        .expect("valid term"),
                        coeff: -20.0,
                    },
                ],
            },
            TruthEquation {
                target: deriv_term(1, vec![1]),
                terms: vec![
                    TruthTerm {
                        term: Term::new(vec![
                            Token::deriv(0, vec![0]),
                            Token::deriv(1, vec![0]),
                        ])
                        .expect("valid term"),
                        coeff: 20.0,
                    },
                    TruthTerm {
                        term: deriv_term(1, vec![0]),
                        coeff: -20.0,
                    },
                ],
            },
        ],
        output_dir: output_dir.into(),
        master_seed: 20_240_004,
    }
}

pub fn builtin_config(name: &str, output_dir: &str) -> Result<ExperimentConfig> {
    match name {
        "burgers" => Ok(burgers_config(output_dir)),
        "kdv" => Ok(kdv_config(output_dir)),
        "van_der_pol" => Ok(van_der_pol_config(output_dir)),
        "lotka_volterra" => Ok(lotka_volterra_config(output_dir)),
        other => Err(Error::InvalidConfig(format!("unknown benchmark '{other}'"))),
    }
}

pub fn builtin_names() -> &'static [&'static str] {
    &["burgers", "kdv", "van_der_pol", "lotka_volterra"]
}
