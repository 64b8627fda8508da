//! Composite Gauss–Legendre quadrature on explicit panel meshes.
//!
//! Every integral in the crate goes through a [`Mesh`]: a sorted list of
//! panel breakpoints. Known non-smooth points of an integrand (kernel kinks,
//! input switching instants) are inserted as breakpoints so that each panel
//! sees a smooth function. Endpoint singularities at the start of the
//! interval are handled by geometric grading of the first panel.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gauss–Legendre rule on the reference interval [-1, 1], nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() <= 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[a, b]` with a single panel.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

/// Legendre polynomial P_n(x) and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Resolution and convergence settings shared by the Mercer and RKHS integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Uniform panels on the unit interval.
    pub panels: usize,
    /// Gauss–Legendre nodes per panel.
    pub nodes: usize,
    /// Ratio between successive geometrically graded panels near 0.
    pub grading_ratio: f64,
    /// Number of graded panels replacing the first uniform panel.
    pub graded_panels: usize,
    /// Relative agreement required between two successive refinements.
    pub tolerance: f64,
    /// Maximum number of panel doublings before giving up.
    pub max_refinements: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            panels: 512,
            nodes: 8,
            grading_ratio: 0.7,
            graded_panels: 64,
            tolerance: 1e-8,
            max_refinements: 4,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.panels == 0 || self.nodes == 0 {
            return Err(Error::InvalidInput(
                "quadrature panels and nodes must be positive".into(),
            ));
        }
        if !(self.grading_ratio > 0.0 && self.grading_ratio < 1.0) {
            return Err(Error::InvalidInput(format!(
                "grading ratio must lie in (0, 1), got {}",
                self.grading_ratio
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "quadrature tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }

    /// The configuration after `level` doublings of every panel count.
    pub fn refined(&self, level: u32) -> Self {
        let factor = 1usize << level;
        Self {
            panels: self.panels * factor,
            graded_panels: self.graded_panels * factor,
            ..self.clone()
        }
    }

    pub fn rule(&self) -> GaussLegendre {
        GaussLegendre::new(self.nodes)
    }

    /// Mesh on [0, 1] with the given interior breakpoints; the first panel is
    /// graded toward 0 when `graded` is set.
    pub fn unit_mesh(&self, breakpoints: &[f64], graded: bool) -> Mesh {
        let mut mesh = Mesh::uniform(0.0, 1.0, self.panels);
        if graded {
            mesh.grade_start(self.grading_ratio, self.graded_panels);
        }
        mesh.insert(breakpoints);
        mesh
    }

    /// Integrates over [0, 1], doubling the resolution until two successive
    /// estimates agree to `tolerance` relative to the integral of `|f|`.
    pub fn integrate_unit<F>(&self, breakpoints: &[f64], graded: bool, f: F) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        self.validate()?;
        let rule = self.rule();
        let estimate = |level: u32| {
            self.refined(level)
                .unit_mesh(breakpoints, graded)
                .integrate_with_magnitude(&rule, &f)
        };
        let levels = self.max_refinements.max(1) as u32;
        let (mut coarse, _) = estimate(0);
        for level in 1..=levels {
            let (fine, magnitude) = estimate(level);
            if !fine.is_finite() || !coarse.is_finite() {
                return Err(Error::Quadrature { coarse, fine });
            }
            if (fine - coarse).abs() <= self.tolerance * magnitude.max(f64::MIN_POSITIVE) {
                return Ok(fine);
            }
            if level == levels {
                return Err(Error::Quadrature { coarse, fine });
            }
            coarse = fine;
        }
        unreachable!("refinement loop always returns")
    }
}

/// Sorted panel breakpoints covering `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    breaks: Vec<f64>,
}

impl Mesh {
    pub fn uniform(a: f64, b: f64, panels: usize) -> Self {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut breaks: Vec<f64> = (0..panels).map(|k| a + h * k as f64).collect();
        breaks.push(b);
        Self { breaks }
    }

    /// Panels no wider than `max_width`, with at least `min_panels` between
    /// consecutive breakpoints (including `a` and `b`).
    pub fn segmented(a: f64, b: f64, breakpoints: &[f64], max_width: f64, min_panels: usize) -> Self {
        let mut anchors = vec![a];
        anchors.extend(breakpoints.iter().copied().filter(|&p| p > a && p < b));
        anchors.push(b);
        anchors.sort_by(f64::total_cmp);
        anchors.dedup();
        let mut breaks = vec![a];
        for pair in anchors.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let count = ((hi - lo) / max_width).ceil().max(min_panels.max(1) as f64) as usize;
            let h = (hi - lo) / count as f64;
            for k in 1..count {
                breaks.push(lo + h * k as f64);
            }
            breaks.push(hi);
        }
        Self { breaks }
    }

    /// Mesh from explicit breakpoints; they are sorted and deduplicated.
    pub fn from_breaks(mut breaks: Vec<f64>) -> Self {
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        assert!(breaks.len() >= 2, "a mesh needs at least one panel");
        Self { breaks }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        self.breaks[self.breaks.len() - 1]
    }

    /// Adds breakpoints strictly inside the mesh span.
    pub fn insert(&mut self, points: &[f64]) {
        let (a, b) = (self.start(), self.end());
        let extra: Vec<f64> = points.iter().copied().filter(|&p| p > a && p < b).collect();
        if extra.is_empty() {
            return;
        }
        self.breaks.extend(extra);
        self.breaks.sort_by(f64::total_cmp);
        self.breaks.dedup();
    }

    /// Replaces the first panel `[a, a + h]` by `count` geometrically shrinking
    /// panels `[a + h r^{k+1}, a + h r^k]` plus the innermost remainder.
    pub fn grade_start(&mut self, ratio: f64, count: usize) {
        if self.breaks.len() < 2 || count == 0 {
            return;
        }
        let a = self.breaks[0];
        let h = self.breaks[1] - a;
        let mut inner: Vec<f64> = (1..=count).map(|k| a + h * ratio.powi(k as i32)).collect();
        inner.retain(|&p| p > a);
        inner.reverse();
        let mut breaks = Vec::with_capacity(self.breaks.len() + inner.len());
        breaks.push(a);
        breaks.extend(inner);
        breaks.extend_from_slice(&self.breaks[1..]);
        breaks.dedup();
        self.breaks = breaks;
    }

    pub fn panels(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breaks.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, rule: &GaussLegendre, f: F) -> f64 {
        self.panels().map(|(lo, hi)| rule.integrate(lo, hi, &f)).sum()
    }

    /// Returns `(∫ f, ∫ |f|)` in one pass.
    pub fn integrate_with_magnitude<F: Fn(f64) -> f64>(&self, rule: &GaussLegendre, f: F) -> (f64, f64) {
        let mut total = 0.0;
        let mut magnitude = 0.0;
        for (lo, hi) in self.panels() {
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, w) in rule.nodes().iter().zip(rule.weights()) {
                let v = f(mid + half * x);
                total += w * half * v;
                magnitude += w * half * v.abs();
            }
        }
        (total, magnitude)
    }
}
