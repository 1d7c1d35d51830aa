//! Elementary-function tokens and the parametrized families they are drawn
//! from. A token is one factor of an equation term.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::multi_indices;

pub const PARAM_TOL: f64 = 1e-9;

/// What a token computes, before the integer power is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TokenKind {
    /// Partial derivative of variable `var` with the given per-axis orders.
    /// All-zero orders denote the variable itself.
    Deriv { var: usize, orders: Vec<usize> },
    /// A grid coordinate.
    Coord { axis: usize },
    /// sin or cos of `freq * coordinate`.
    Trig { sine: bool, axis: usize, freq: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub power: u32,
}

impl Token {
    pub fn deriv(var: usize, orders: Vec<usize>) -> Self {
        Self { kind: TokenKind::Deriv { var, orders }, power: 1 }
    }

    pub fn deriv_pow(var: usize, orders: Vec<usize>, power: u32) -> Self {
        Self { kind: TokenKind::Deriv { var, orders }, power }
    }

    /// Total derivative order; `None` for non-derivative tokens.
    pub fn deriv_order(&self) -> Option<usize> {
        match &self.kind {
            TokenKind::Deriv { orders, .. } => Some(orders.iter().sum()),
            _ => None,
        }
    }

    /// True when this is a derivative of `var` of total order >= 1.
    pub fn is_deriv_of(&self, var: usize) -> bool {
        matches!(&self.kind, TokenKind::Deriv { var: v, orders } if *v == var && orders.iter().sum::<usize>() >= 1)
    }

    /// True for a derivative token of order >= 1 of any variable.
    pub fn is_strict_deriv(&self) -> bool {
        matches!(&self.kind, TokenKind::Deriv { orders, .. } if orders.iter().sum::<usize>() >= 1)
    }

    /// Complexity contribution: the derivative order for derivative tokens of
    /// order >= 1, 0.5 otherwise, scaled by the integer power.
    pub fn complexity(&self) -> f64 {
        let base = match self.deriv_order() {
            Some(n) if n >= 1 => n as f64,
            _ => 0.5,
        };
        base * self.power as f64
    }

    /// Identity ignoring the power; powers of the same base merge into one
    /// factor, so two factors with equal base are duplicates.
    pub fn same_base(&self, other: &Token) -> bool {
        match (&self.kind, &other.kind) {
            (
                TokenKind::Deriv { var: v1, orders: o1 },
                TokenKind::Deriv { var: v2, orders: o2 },
            ) => v1 == v2 && o1 == o2,
            (TokenKind::Coord { axis: a1 }, TokenKind::Coord { axis: a2 }) => a1 == a2,
            (
                TokenKind::Trig { sine: s1, axis: a1, freq: f1 },
                TokenKind::Trig { sine: s2, axis: a2, freq: f2 },
            ) => s1 == s2 && a1 == a2 && (f1 - f2).abs() <= PARAM_TOL,
            _ => false,
        }
    }

    /// Structural equality with tolerance on real parameters.
    pub fn structural_eq(&self, other: &Token) -> bool {
        self.power == other.power && self.same_base(other)
    }

    /// Stable ordering key: family rank, then member identity, then power.
    pub fn sort_key(&self) -> (u8, usize, Vec<usize>, u64, u32) {
        match &self.kind {
            TokenKind::Deriv { var, orders } => (0, *var, orders.clone(), 0, self.power),
            TokenKind::Coord { axis } => (1, *axis, vec![], 0, self.power),
            TokenKind::Trig { sine, axis, freq } => {
                (2, *axis, vec![*sine as usize], freq.to_bits(), self.power)
            }
        }
    }

    pub fn render(&self, axis_names: &[String], var_names: &[String]) -> String {
        let base = match &self.kind {
            TokenKind::Deriv { var, orders } => {
                let total: usize = orders.iter().sum();
                if total == 0 {
                    var_names[*var].clone()
                } else {
                    let denom: String = orders
                        .iter()
                        .enumerate()
                        .filter(|(_, n)| **n > 0)
                        .map(|(a, n)| format!("d{}^{}", axis_names[a], n))
                        .collect::<Vec<_>>()
                        .join("");
                    format!("d^{}{}/{}", total, var_names[*var], denom)
                }
            }
            TokenKind::Coord { axis } => axis_names[*axis].clone(),
            TokenKind::Trig { sine, axis, freq } => {
                let f = if *sine { "sin" } else { "cos" };
                format!("{f}({:?}*{})", freq, axis_names[*axis])
            }
        };
        if self.power == 1 {
            base
        } else if base.contains('/') || base.contains('(') {
            format!("({base})^{}", self.power)
        } else {
            format!("{base}^{}", self.power)
        }
    }
}

/// Derivative family of one variable: every multi-index with total order up
/// to `max_total_order`, optionally capped per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivFamily {
    pub var: usize,
    pub max_total_order: usize,
    #[serde(default)]
    pub axis_caps: Option<Vec<usize>>,
    #[serde(default = "default_power")]
    pub max_power: u32,
    /// When set, derivative members of order >= 1 may only serve as an
    /// equation's target term; ordinary terms draw the order-0 member.
    #[serde(default)]
    pub target_only: bool,
    /// When set, mixed multi-indices (nonzero order on more than one axis)
    /// are excluded from the family.
    #[serde(default)]
    pub pure_axes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordFamily {
    pub axis: usize,
    #[serde(default = "default_power")]
    pub max_power: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigFamily {
    pub axis: usize,
    pub freq_min: f64,
    pub freq_max: f64,
}

fn default_power() -> u32 {
    1
}

/// The pool of all token families available to the search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenPool {
    pub n_axes: usize,
    pub deriv: Vec<DerivFamily>,
    #[serde(default)]
    pub coord: Vec<CoordFamily>,
    #[serde(default)]
    pub trig: Vec<TrigFamily>,
    /// Restrict terms to be linear in derivatives of order >= 1: at most one
    /// such factor per term, at power 1. Products or powers of derivative
    /// factors admit near-exact identities on localized or oscillatory
    /// fields (e.g. squares of a small residual) that out-score the true
    /// equation under noise.
    #[serde(default)]
    pub single_deriv_factor: bool,
}

impl TokenPool {
    pub fn n_families(&self) -> usize {
        self.deriv.len() + self.coord.len() + self.trig.len()
    }

    /// All members of the derivative family of `var`, power 1.
    pub fn deriv_members(&self, var: usize) -> Vec<Token> {
        let fam = self
            .deriv
            .iter()
            .find(|f| f.var == var)
            .expect("pool must contain a derivative family per variable");
        multi_indices(self.n_axes, fam.max_total_order, fam.axis_caps.as_deref())
            .into_iter()
            .filter(|m| !fam.pure_axes || m.iter().filter(|&&o| o > 0).count() <= 1)
            .map(|orders| Token::deriv(var, orders))
            .collect()
    }

    pub fn sample_token<R: Rng>(&self, rng: &mut R) -> Token {
        let pick = rng.gen_range(0..self.n_families());
        if pick < self.deriv.len() {
            let fam = &self.deriv[pick];
            let members: Vec<Vec<usize>> =
                multi_indices(self.n_axes, fam.max_total_order, fam.axis_caps.as_deref())
                    .into_iter()
                    .filter(|m| !fam.target_only || m.iter().sum::<usize>() == 0)
                    .filter(|m| !fam.pure_axes || m.iter().filter(|&&o| o > 0).count() <= 1)
                    .collect();
            let orders = members[rng.gen_range(0..members.len())].clone();
            let power = sample_power(fam.max_power, rng);
            Token { kind: TokenKind::Deriv { var: fam.var, orders }, power }
        } else if pick < self.deriv.len() + self.coord.len() {
            let fam = &self.coord[pick - self.deriv.len()];
            let power = sample_power(fam.max_power, rng);
            Token { kind: TokenKind::Coord { axis: fam.axis }, power }
        } else {
            let fam = &self.trig[pick - self.deriv.len() - self.coord.len()];
            Token {
                kind: TokenKind::Trig {
                    sine: rng.gen_bool(0.5),
                    axis: fam.axis,
                    freq: rng.gen_range(fam.freq_min..=fam.freq_max),
                },
                power: 1,
            }
        }
    }

    /// Samples a derivative token (total order >= 1) of `var`.
    pub fn sample_deriv_of<R: Rng>(&self, var: usize, rng: &mut R) -> Token {
        let members: Vec<Token> = self
            .deriv_members(var)
            .into_iter()
            .filter(|t| t.is_deriv_of(var))
            .collect();
        members[rng.gen_range(0..members.len())].clone()
    }

    /// Perturbs a token parameter by a bounded increment, clamped to the
    /// family range.
    pub fn perturb_param<R: Rng>(&self, token: &Token, rng: &mut R) -> Token {
        let mut out = token.clone();
        match &mut out.kind {
            TokenKind::Deriv { var, orders } => {
                let fam = self.deriv.iter().find(|f| f.var == *var).unwrap();
                if fam.target_only {
                    return out;
                }
                let axis = rng.gen_range(0..orders.len());
                let up = rng.gen_bool(0.5);
                let total: usize = orders.iter().sum();
                if up {
                    let cap = fam
                        .axis_caps
                        .as_ref()
                        .map(|c| c[axis])
                        .unwrap_or(fam.max_total_order);
                    let stays_pure = !fam.pure_axes
                        || orders.iter().enumerate().all(|(a, &o)| a == axis || o == 0);
                    if total < fam.max_total_order && orders[axis] < cap && stays_pure {
                        orders[axis] += 1;
                    }
                } else if orders[axis] > 0 {
                    orders[axis] -= 1;
                }
            }
            TokenKind::Coord { axis } => {
                let fam = self.coord.iter().find(|f| f.axis == *axis).unwrap();
                if rng.gen_bool(0.5) {
                    out.power = (out.power + 1).min(fam.max_power);
                } else {
                    out.power = out.power.saturating_sub(1).max(1);
                }
            }
            TokenKind::Trig { axis, freq, .. } => {
                let fam = self.trig.iter().find(|f| f.axis == *axis).unwrap();
                let band = 0.1 * (fam.freq_max - fam.freq_min);
                *freq = (*freq + rng.gen_range(-band..=band)).clamp(fam.freq_min, fam.freq_max);
            }
        }
        out
    }

    /// Maximum power allowed for a token's base family.
    pub fn max_power_of(&self, token: &Token) -> u32 {
        match &token.kind {
            TokenKind::Deriv { var, .. } => {
                self.deriv.iter().find(|f| f.var == *var).map(|f| f.max_power).unwrap_or(1)
            }
            TokenKind::Coord { axis } => {
                self.coord.iter().find(|f| f.axis == *axis).map(|f| f.max_power).unwrap_or(1)
            }
            TokenKind::Trig { .. } => 1,
        }
    }
}

fn sample_power<R: Rng>(max_power: u32, rng: &mut R) -> u32 {
    if max_power <= 1 || rng.gen_bool(0.75) {
        1
    } else {
        rng.gen_range(2..=max_power)
    }
}
