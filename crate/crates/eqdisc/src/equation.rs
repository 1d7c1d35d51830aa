//! Terms, equations and system chromosomes: the genetic encoding of a
//! candidate differential equation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokens::{Token, TokenPool};

/// A product of tokens. Factors are kept sorted by a stable key and no two
/// factors share the same base (powers of one base merge into one factor).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    factors: Vec<Token>,
}

impl Term {
    pub fn new(mut factors: Vec<Token>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Contract("a term needs at least one factor".into()));
        }
        for i in 0..factors.len() {
            for j in (i + 1)..factors.len() {
                if factors[i].same_base(&factors[j]) {
                    return Err(Error::Contract("duplicate factor in term".into()));
                }
            }
        }
        factors.sort_by_key(Token::sort_key);
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[Token] {
        &self.factors
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn contains_deriv_of(&self, var: usize) -> bool {
        self.factors.iter().any(|t| t.is_deriv_of(var))
    }

    pub fn complexity(&self) -> f64 {
        self.factors.iter().map(Token::complexity).sum()
    }

    pub fn structural_eq(&self, other: &Term) -> bool {
        self.factors.len() == other.factors.len()
            && self
                .factors
                .iter()
                .zip(&other.factors)
                .all(|(a, b)| a.structural_eq(b))
    }

    /// Replaces the factor at `idx`, keeping the no-duplicate invariant.
    pub fn with_factor_replaced(&self, idx: usize, token: Token) -> Result<Self> {
        let mut factors = self.factors.clone();
        factors[idx] = token;
        Self::new(factors)
    }

    pub fn render(&self, axis_names: &[String], var_names: &[String]) -> String {
        self.factors
            .iter()
            .map(|t| t.render(axis_names, var_names))
            .collect::<Vec<_>>()
            .join(" * ")
    }
}

/// Coefficients produced by the sparsity-promoting fit. `coeffs` is indexed
/// per term with the target slot fixed at -1; inactive terms hold exactly 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub coeffs: Vec<f64>,
    pub bias: f64,
    pub active: Vec<bool>,
    pub residual_norm: f64,
    pub condition_number: f64,
}

/// One candidate equation: a set of structurally distinct terms, a designated
/// target term with fixed coefficient -1, and a sparsity constant gene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equation {
    pub terms: Vec<Term>,
    pub target_idx: usize,
    pub variable: usize,
    pub sparsity: f64,
    #[serde(default)]
    pub fit: Option<FitOutcome>,
}

impl Equation {
    pub fn new(terms: Vec<Term>, target_idx: usize, variable: usize, sparsity: f64) -> Result<Self> {
        let eq = Self { terms, target_idx, variable, sparsity, fit: None };
        eq.validate()?;
        Ok(eq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() || self.target_idx >= self.terms.len() {
            return Err(Error::Contract("target index out of range".into()));
        }
        for i in 0..self.terms.len() {
            for j in (i + 1)..self.terms.len() {
                if self.terms[i].structural_eq(&self.terms[j]) {
                    return Err(Error::Contract("structurally duplicate terms".into()));
                }
            }
        }
        if !self.terms.iter().any(|t| t.contains_deriv_of(self.variable)) {
            return Err(Error::Contract(
                "equation must contain a derivative of its variable".into(),
            ));
        }
        if !self.terms[self.target_idx].contains_deriv_of(self.variable) {
            return Err(Error::Contract(
                "target term must contain a derivative of the described variable".into(),
            ));
        }
        if !(self.sparsity > 0.0) {
            return Err(Error::Contract("sparsity constant must be > 0".into()));
        }
        Ok(())
    }

    /// True for terms that survived sparsification (target always counts).
    /// Before any fit, every term counts as active.
    pub fn is_active(&self, idx: usize) -> bool {
        if idx == self.target_idx {
            return true;
        }
        match &self.fit {
            Some(fit) => fit.active[idx],
            None => true,
        }
    }

    pub fn contains_structural(&self, term: &Term) -> bool {
        self.terms.iter().any(|t| t.structural_eq(term))
    }

    /// Parsimony objective: total factor complexity over active terms.
    pub fn complexity(&self) -> f64 {
        self.terms
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_active(*i))
            .map(|(_, t)| t.complexity())
            .sum()
    }

    /// Human-readable rendering in the "target = rest" orientation folded to
    /// "... = 0": the target appears with coefficient 1.0 and every other
    /// active term with its negated fitted coefficient. Unfitted equations
    /// render without coefficients.
    pub fn render(&self, axis_names: &[String], var_names: &[String]) -> String {
        let mut order: Vec<usize> = (0..self.terms.len()).collect();
        order.sort_by_key(|&i| {
            (
                i != self.target_idx,
                self.terms[i].factors().iter().map(Token::sort_key).collect::<Vec<_>>(),
            )
        });
        let mut parts = Vec::new();
        for i in order {
            if !self.is_active(i) {
                continue;
            }
            let coeff = if i == self.target_idx {
                Some(1.0)
            } else {
                self.fit.as_ref().map(|f| -f.coeffs[i])
            };
            let body = self.terms[i].render(axis_names, var_names);
            match coeff {
                Some(c) => parts.push(format!("{:?} * {}", c, body)),
                None => parts.push(body),
            }
        }
        let mut s = parts.join(" + ");
        if let Some(fit) = &self.fit {
            if fit.bias != 0.0 {
                s.push_str(&format!(" + {:?}", -fit.bias));
            }
        }
        s.push_str(" = 0");
        s
    }
}

/// Structural equality of equations: equal term multisets under factor
/// equality with parameter tolerance; coefficients, target choice and the
/// sparsity constant are ignored.
pub fn structural_equal(a: &Equation, b: &Equation) -> bool {
    if a.terms.len() != b.terms.len() {
        return false;
    }
    let mut used = vec![false; b.terms.len()];
    for ta in &a.terms {
        let found = b.terms.iter().enumerate().find(|(j, tb)| !used[*j] && ta.structural_eq(tb));
        match found {
            Some((j, _)) => used[j] = true,
            None => return false,
        }
    }
    true
}

/// One equation per dependent variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemChromosome {
    pub equations: Vec<Equation>,
}

impl SystemChromosome {
    pub fn new(equations: Vec<Equation>) -> Result<Self> {
        for (i, eq) in equations.iter().enumerate() {
            if eq.variable != i {
                return Err(Error::Contract(format!(
                    "equation {i} must describe variable {i}"
                )));
            }
            eq.validate()?;
        }
        Ok(Self { equations })
    }

    pub fn n_vars(&self) -> usize {
        self.equations.len()
    }

    pub fn structural_equal(&self, other: &SystemChromosome) -> bool {
        self.equations.len() == other.equations.len()
            && self
                .equations
                .iter()
                .zip(&other.equations)
                .all(|(a, b)| structural_equal(a, b))
    }

    pub fn render(&self, axis_names: &[String], var_names: &[String]) -> String {
        self.equations
            .iter()
            .map(|e| e.render(axis_names, var_names))
            .collect::<Vec<_>>()
            .join(" ; ")
    }
}

/// Per-equation (quality, complexity) pairs concatenated across the system.
pub type ObjectiveVector = Vec<f64>;

/// Pareto dominance under minimization: `a` dominates `b` iff `a` is no
/// worse in every component and strictly better in at least one.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::Contract("objective vectors differ in length".into()));
    }
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return Ok(false);
        }
        if x < y {
            strict = true;
        }
    }
    Ok(strict)
}

/// Randomly builds a valid equation: `n_terms` structurally distinct terms
/// with factor counts uniform in [1, max_factors], at least one term holding
/// a derivative of `variable`, target drawn among such terms, sparsity
/// constant drawn log-uniformly from `sparsity_range`.
pub fn random_equation<R: Rng>(
    pool: &TokenPool,
    variable: usize,
    n_terms: usize,
    max_factors: usize,
    sparsity_range: (f64, f64),
    rng: &mut R,
) -> Result<Equation> {
    let budget = 100 * n_terms.max(1);
    let mut terms: Vec<Term> = Vec::with_capacity(n_terms);
    let mut attempts = 0;
    while terms.len() < n_terms {
        attempts += 1;
        if attempts > budget {
            return Err(Error::GenerationExhausted { attempts });
        }
        if let Some(term) = random_term(pool, max_factors, rng) {
            if !terms.iter().any(|t| t.structural_eq(&term)) {
                terms.push(term);
            }
        }
    }
    // enforce the derivative-of-variable invariant
    if !terms.iter().any(|t| t.contains_deriv_of(variable)) {
        let deriv = pool.sample_deriv_of(variable, rng);
        let slot = rng.gen_range(0..terms.len());
        let term = Term::new(vec![deriv]).expect("single factor");
        if !terms.iter().any(|t| t.structural_eq(&term)) {
            terms[slot] = term;
        } else {
            // the pure derivative is already present but nested differently;
            // retarget onto the existing occurrence by rebuilding
            let pos = terms.iter().position(|t| t.structural_eq(&term)).unwrap();
            terms.swap(slot, pos);
        }
    }
    let candidates: Vec<usize> = (0..terms.len())
        .filter(|&i| terms[i].contains_deriv_of(variable))
        .collect();
    let target_idx = candidates[rng.gen_range(0..candidates.len())];
    let sparsity = sample_log_uniform(sparsity_range, rng);
    Equation::new(terms, target_idx, variable, sparsity)
}

pub fn sample_log_uniform<R: Rng>(range: (f64, f64), rng: &mut R) -> f64 {
    let (lo, hi) = range;
    let (llo, lhi) = (lo.ln(), hi.ln());
    rng.gen_range(llo..=lhi).exp()
}

/// True when the term respects the pool's structural restrictions.
pub fn term_admissible(pool: &TokenPool, term: &Term) -> bool {
    !pool.single_deriv_factor
        || term
            .factors()
            .iter()
            .filter(|f| f.is_strict_deriv())
            .map(|f| f.power)
            .sum::<u32>()
            <= 1
}

/// Samples a term with a uniform factor count; `None` when duplicate bases
/// kept colliding.
pub fn random_term<R: Rng>(pool: &TokenPool, max_factors: usize, rng: &mut R) -> Option<Term> {
    let count = rng.gen_range(1..=max_factors.max(1));
    let mut factors: Vec<Token> = Vec::with_capacity(count);
    let mut guard = 0;
    while factors.len() < count {
        guard += 1;
        if guard > 50 {
            break;
        }
        let mut tok = pool.sample_token(rng);
        if pool.single_deriv_factor && tok.is_strict_deriv() {
            tok.power = 1;
            if factors.iter().any(|f| f.is_strict_deriv()) {
                continue;
            }
        }
        if !factors.iter().any(|f| f.same_base(&tok)) {
            factors.push(tok);
        }
    }
    if factors.is_empty() {
        return None;
    }
    Term::new(factors).ok()
}

/// Builds a random system chromosome, one equation per variable.
pub fn random_system<R: Rng>(
    pool: &TokenPool,
    n_vars: usize,
    n_terms: usize,
    max_factors: usize,
    sparsity_range: (f64, f64),
    rng: &mut R,
) -> Result<SystemChromosome> {
    let equations = (0..n_vars)
        .map(|v| random_equation(pool, v, n_terms, max_factors, sparsity_range, rng))
        .collect::<Result<Vec<_>>>()?;
    SystemChromosome::new(equations)
}
