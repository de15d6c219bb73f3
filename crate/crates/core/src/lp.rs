//! Dense two-phase tableau simplex.
//!
//! Right-hand sides are first perturbed by small distinct positive offsets so
//! that no pivot is degenerate; the optimal basis of the perturbed program is
//! then moved to the true right-hand side and repaired with dual simplex
//! pivots. Should every perturbation size fail, the unperturbed program is
//! solved with a Dantzig rule that falls back to Bland's rule on degenerate
//! streaks.
//!
//! Solves `max c.x` subject to `A_le x <= b_le`, `A_eq x = b_eq`, `x >= 0`.
//! Sized for the few hundred variables of a correlated-equilibrium polytope.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
// Nearly degenerate polytopes can end up this far outside after rounding.
const LOOSE_FEAS_TOL: f64 = 1e-6;
const RATIO_TOL: f64 = 1e-12;
const DEGENERATE_STREAK: usize = 25;
// Tried in order; tiny perturbations leave the tableau close to degenerate.
const PERTURBATIONS: [f64; 3] = [1e-3, 1e-5, 1e-7];
const RELATIVE_PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub le_rows: Vec<Vec<f64>>,
    pub le_rhs: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    /// Largest violation of any constraint (including `x >= 0`) at `x`.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let dot = |r: &[f64]| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let le = self.le_rows.iter().zip(&self.le_rhs).map(|(r, b)| (dot(r) - b).max(0.0));
        let eq = self.eq_rows.iter().zip(&self.eq_rhs).map(|(r, b)| (dot(r) - b).abs());
        let neg = x.iter().map(|v| (-v).max(0.0));
        le.chain(eq).chain(neg).fold(0.0, f64::max)
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.num_vars();
        for r in self.le_rows.iter().chain(&self.eq_rows) {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "constraint row",
                    expected: n,
                    found: r.len(),
                });
            }
        }
        let scale = self.le_rhs.iter().chain(&self.eq_rhs).fold(1.0f64, |m, b| m.max(b.abs()));
        let clamp = |mut s: LpSolution| {
            s.x.iter_mut().for_each(|v| *v = v.max(0.0));
            s.objective = self.objective.iter().zip(&s.x).map(|(c, v)| c * v).sum();
            s
        };
        // The first strictly feasible candidate wins; otherwise the least
        // infeasible one, provided it is within rounding of the polytope.
        let mut best: Option<(f64, LpSolution)> = None;
        let mut last_error = Error::Infeasible;
        for &size in PERTURBATIONS.iter().chain(&[0.0]) {
            match Tableau::build(self, size).run(self) {
                Ok(solution) => {
                    let violation = self.infeasibility(&solution.x);
                    if violation <= FEAS_TOL * scale {
                        return Ok(clamp(solution));
                    }
                    if best.as_ref().map_or(true, |(v, _)| violation < *v) {
                        best = Some((violation, solution));
                    }
                }
                Err(e) => last_error = e,
            }
        }
        match best {
            Some((violation, solution)) if violation <= LOOSE_FEAS_TOL * scale => Ok(clamp(solution)),
            Some(_) => Err(Error::Infeasible),
            None => Err(last_error),
        }
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    width: usize,
    // (rows + 1) x width; the last row holds reduced costs, the last column the rhs.
    t: Vec<f64>,
    basis: Vec<usize>,
    n: usize,
    first_artificial: usize,
    pivots: usize,
    // Column of the initial identity for each row, and that row's signed rhs
    // before perturbation.
    unit_cols: Vec<usize>,
    true_rhs: Vec<f64>,
    // Constraint rows as built, used to refactor the final basis.
    original: Vec<f64>,
}

impl Tableau {
    fn build(lp: &LinearProgram, perturbation: f64) -> Self {
        let n = lp.num_vars();
        let m_le = lp.le_rows.len();
        let rows = m_le + lp.eq_rows.len();
        // A row needs an artificial unless it is a <= row with nonnegative rhs.
        let needs_art: Vec<bool> = (0..rows)
            .map(|r| r >= m_le || lp.le_rhs[r] < 0.0)
            .collect();
        let num_art = needs_art.iter().filter(|&&b| b).count();
        let first_artificial = n + m_le;
        let cols = first_artificial + num_art;
        let width = cols + 1;
        let mut t = vec![0.0; (rows + 1) * width];
        let mut basis = vec![0; rows];
        let mut true_rhs = vec![0.0; rows];
        let mut art = first_artificial;
        for r in 0..rows {
            let (coeffs, rhs) = if r < m_le {
                (&lp.le_rows[r], lp.le_rhs[r])
            } else {
                (&lp.eq_rows[r - m_le], lp.eq_rhs[r - m_le])
            };
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            let row = &mut t[r * width..(r + 1) * width];
            for (j, &a) in coeffs.iter().enumerate() {
                row[j] = sign * a;
            }
            if r < m_le {
                row[n + r] = sign;
            }
            true_rhs[r] = sign * rhs;
            row[cols] = sign * rhs;
            // distinct offsets in [1, 2) times the base
            row[cols] += perturbation * (1.0 + ((r * 7919) % rows.max(1)) as f64 / rows as f64);
            if needs_art[r] {
                row[art] = 1.0;
                basis[r] = art;
                art += 1;
            } else {
                basis[r] = n + r;
            }
        }
        Self {
            original: t[..rows * width].to_vec(),
            unit_cols: basis.clone(),
            rows,
            cols,
            width,
            t,
            basis,
            n,
            first_artificial,
            pivots: 0,
            true_rhs,
        }
    }

    fn pivot_limit(&self) -> usize {
        100 * (self.rows + self.cols)
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width + c]
    }

    fn cost_row(&mut self) -> &mut [f64] {
        let start = self.rows * self.width;
        &mut self.t[start..start + self.width]
    }

    // Loads `max costs.x` as reduced costs relative to the current basis.
    fn load_objective(&mut self, costs: &[f64]) {
        let w = self.width;
        let rows = self.rows;
        let mut z = vec![0.0; w];
        z[..costs.len()].copy_from_slice(costs);
        for r in 0..rows {
            let cb = costs.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for c in 0..w {
                    z[c] -= cb * self.t[r * w + c];
                }
            }
        }
        self.cost_row().copy_from_slice(&z);
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.t[pr * w + pc];
        for c in 0..w {
            self.t[pr * w + c] /= p;
        }
        self.t[pr * w + pc] = 1.0;
        let (before, rest) = self.t.split_at_mut(pr * w);
        let (pivot_row, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(pivot_row.iter()) {
                    *x -= f * y;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    // Largest reduced cost enters; after a streak of degenerate pivots the
    // smallest-index (Bland) rule takes over until the objective moves again,
    // which rules out cycling.
    fn optimize(&mut self, limit: usize) -> Result<()> {
        let mut degenerate_streak = 0;
        loop {
            let bland = degenerate_streak >= DEGENERATE_STREAK;
            let cost_start = self.rows * self.width;
            let costs = &self.t[cost_start..cost_start + limit];
            let entering = if bland {
                costs.iter().position(|&d| d > COST_TOL)
            } else {
                costs
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| d > COST_TOL)
                    .fold(None, |best: Option<(usize, f64)>, (c, &d)| match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((c, d)),
                    })
                    .map(|(c, _)| c)
            };
            let Some(pc) = entering else {
                return Ok(());
            };
            let column_max = (0..self.rows).fold(0.0f64, |m, r| m.max(self.at(r, pc).abs()));
            let pivot_tol = PIVOT_TOL.max(RELATIVE_PIVOT_TOL * column_max);
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a <= pivot_tol {
                    continue;
                }
                let ratio = self.at(r, self.cols).max(0.0) / a;
                let better = match leave {
                    None => true,
                    Some((lr, lratio)) => {
                        if ratio < lratio - RATIO_TOL {
                            true
                        } else if ratio <= lratio + RATIO_TOL {
                            if bland {
                                self.basis[r] < self.basis[lr]
                            } else {
                                a > self.at(lr, pc)
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
            let Some((pr, ratio)) = leave else {
                return Err(Error::Unbounded);
            };
            if self.pivots >= self.pivot_limit() {
                return Err(Error::PivotLimit(self.pivots));
            }
            if ratio <= RATIO_TOL {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            self.pivot(pr, pc);
        }
    }

    fn primal_values(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for r in 0..self.rows {
            let b = self.basis[r];
            if b < self.n {
                x[b] = self.at(r, self.cols);
            }
        }
        x
    }

    // Basic values B^-1 b at the true rhs, solved from the original columns
    // so that rounding accumulated in the tableau does not leak into x.
    fn basic_values(&self) -> Vec<f64> {
        let w = self.width;
        let b = DMatrix::from_fn(self.rows, self.rows, |r, i| self.original[r * w + self.basis[i]]);
        let rhs = DVector::from_column_slice(&self.true_rhs);
        match b.lu().solve(&rhs) {
            Some(x) if x.iter().all(|v| v.is_finite()) => x.iter().copied().collect(),
            _ => (0..self.rows)
                .map(|r| (0..self.rows).map(|i| self.at(r, self.unit_cols[i]) * self.true_rhs[i]).sum())
                .collect(),
        }
    }

    // Moves the rhs to the true one and restores primal feasibility with
    // dual simplex pivots; the reduced costs stay optimal throughout.
    fn restore_rhs(&mut self) -> Result<()> {
        let w = self.width;
        // Dual degeneracy can make this phase cycle; it gets a short budget.
        let limit = self.pivots + 4 * (self.rows + self.cols);
        // Rows proven infeasible only within rounding; left slightly negative.
        let mut accepted = vec![false; self.rows];
        loop {
            for (r, v) in self.basic_values().into_iter().enumerate() {
                self.t[r * w + self.cols] = v;
            }
            let leaving = (0..self.rows)
                .filter(|&r| !accepted[r] && self.at(r, self.cols) < -FEAS_TOL)
                .min_by(|&a, &b| self.at(a, self.cols).total_cmp(&self.at(b, self.cols)));
            let Some(pr) = leaving else {
                return Ok(());
            };
            let cost = self.rows * w;
            let entering = (0..self.first_artificial)
                .filter(|&c| self.at(pr, c) < -PIVOT_TOL)
                .min_by(|&a, &b| {
                    let ra = self.t[cost + a] / self.at(pr, a);
                    let rb = self.t[cost + b] / self.at(pr, b);
                    ra.total_cmp(&rb)
                });
            let Some(pc) = entering else {
                if self.at(pr, self.cols) < -LOOSE_FEAS_TOL {
                    return Err(Error::Infeasible);
                }
                accepted[pr] = true;
                continue;
            };
            if self.pivots >= limit {
                return Err(Error::PivotLimit(self.pivots));
            }
            self.pivot(pr, pc);
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        if self.cols > self.first_artificial {
            let mut phase1 = vec![0.0; self.cols];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = -1.0;
            }
            self.load_objective(&phase1);
            self.optimize(self.cols)?;
            let w = self.width;
            // The cost row carries minus the objective: here the artificial sum.
            let infeasibility = self.t[self.rows * w + self.cols];
            if infeasibility > FEAS_TOL {
                return Err(Error::Infeasible);
            }
            // Drive artificials still basic (at zero) out of the basis.
            for r in 0..self.rows {
                if self.basis[r] >= self.first_artificial {
                    if let Some(c) = (0..self.first_artificial).find(|&c| self.at(r, c).abs() > 1e-9) {
                        self.pivot(r, c);
                    }
                }
            }
        }
        // Redundant rows keep a zero artificial in the basis; barring artificial
        // columns from entering keeps it there harmlessly.
        self.load_objective(&lp.objective);
        self.optimize(self.first_artificial)?;
        let perturbed = self.primal_values();
        // If the repair fails the perturbed optimum is returned; its distance
        // from the true polytope is of the order of the perturbation.
        let x = match self.restore_rhs() {
            Ok(()) => self.primal_values(),
            Err(_) => perturbed,
        };
        let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution {
            x,
            objective,
            pivots: self.pivots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(vec![3.0, 5.0]);
        lp.add_le(vec![1.0, 0.0], 4.0);
        lp.add_le(vec![0.0, 2.0], 12.0);
        lp.add_le(vec![3.0, 2.0], 18.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, 36.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_and_negative_rhs() {
        // max -x - y, x + y = 2, -x <= -0.5 -> objective -2
        let mut lp = LinearProgram::new(vec![-1.0, -2.0]);
        lp.add_eq(vec![1.0, 1.0], 2.0);
        lp.add_le(vec![-1.0, 0.0], -0.5);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, -2.0, epsilon = 1e-12);
        assert!(lp.infeasibility(&s.x) < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_le(vec![1.0], -1.0);
        assert!(matches!(lp.solve(), Err(Error::Infeasible)));
        let mut lp = LinearProgram::new(vec![1.0, 0.0]);
        lp.add_le(vec![-1.0, 1.0], 1.0);
        assert!(matches!(lp.solve(), Err(Error::Unbounded)));
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0);
        lp.add_eq(vec![2.0, 2.0], 2.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the textbook largest-coefficient rule.
        let mut lp = LinearProgram::new(vec![0.75, -150.0, 0.02, -6.0]);
        lp.add_le(vec![0.25, -60.0, -0.04, 9.0], 0.0);
        lp.add_le(vec![0.5, -90.0, -0.02, 3.0], 0.0);
        lp.add_le(vec![0.0, 0.0, 1.0, 0.0], 1.0);
        let s = lp.solve().unwrap();
        assert_abs_diff_eq!(s.objective, 0.05, epsilon = 1e-12);
    }
}
