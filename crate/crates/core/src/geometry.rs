//! Convex geometry of the shield's action choice at one state.
//!
//! With per-action expected next levels `c_a` and budget `q`, the admissible
//! action distributions are the probability simplex cut by the half-space
//! `Σ_a x_a (q − c_a) ≥ 0`. One half-space can only cut simplex edges, so every
//! vertex is either a simplex corner with `c_i ≤ q` or the point on an edge
//! `(i, j)` with `c_i > q > c_j` where the budget is met with equality.

use crate::error::{Error, Result};
use crate::mdp::{Mdp, StateId};

/// Vertices closer than this (max-norm) are merged.
pub const VERTEX_TOLERANCE: f64 = 1e-12;

/// Assigned next-state levels on the successors of one state.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMap {
    entries: Vec<(StateId, f64)>,
}

impl AlphaMap {
    pub fn new(mut entries: Vec<(StateId, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        entries.dedup_by_key(|e| e.0);
        Self { entries }
    }

    pub fn get(&self, s: StateId) -> Option<f64> {
        self.entries
            .binary_search_by_key(&s, |e| e.0)
            .ok()
            .map(|k| self.entries[k].1)
    }

    pub fn entries(&self) -> &[(StateId, f64)] {
        &self.entries
    }
}

/// Per-action expected next level `c_a` and the current budget `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfspaceCoefficients {
    pub costs: Vec<f64>,
    pub budget: f64,
}

impl HalfspaceCoefficients {
    pub fn new(costs: Vec<f64>, budget: f64) -> Self {
        Self { costs, budget }
    }

    pub fn degree(&self) -> usize {
        self.costs.len()
    }

    /// `χ_i` satisfies the budget.
    pub fn corner_inside(&self, i: usize) -> bool {
        self.costs[i] <= self.budget
    }

    /// `Σ_a x_a c_a`, the expected next level under mixture `x`.
    pub fn expected_level(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.costs).map(|(x, c)| x * c).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct VertexSet {
    vertices: Vec<Vec<f64>>,
}

impl VertexSet {
    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    fn push_unique(&mut self, v: Vec<f64>) {
        if !self.vertices.iter().any(|w| max_abs_diff(w, &v) <= VERTEX_TOLERANCE) {
            self.vertices.push(v);
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn corner(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

/// Point on the edge from `χ_j` (inside) towards `χ_i` (outside) where the
/// budget is met exactly: weight `t = (q − c_j)/(c_i − c_j)` on `i`.
fn edge_point(coeffs: &HalfspaceCoefficients, i: usize, j: usize) -> Vec<f64> {
    let (ci, cj, q) = (coeffs.costs[i], coeffs.costs[j], coeffs.budget);
    let t = ((q - cj) / (ci - cj)).clamp(0.0, 1.0);
    let mut v = vec![0.0; coeffs.degree()];
    v[i] = t;
    v[j] = 1.0 - t;
    v
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

/// `c_a = Σ_{s'} P(s,a,s')·α(s')` for every action of `s`.
///
/// Accumulates in the same order as the min-Bellman operator, so with `α = β`
/// the coefficients are bit-identical to the certified values.
pub fn alpha_action_values(
    m: &Mdp,
    s: StateId,
    alpha: &AlphaMap,
    budget: f64,
) -> Result<HalfspaceCoefficients> {
    let costs = m
        .actions(s)
        .iter()
        .map(|a| {
            let mut acc = 0.0;
            for (t, p) in a.dist.iter() {
                let level = alpha.get(t).ok_or_else(|| {
                    Error::Geometry(format!("successor {t} of state {s} has no assigned level"))
                })?;
                acc += p * level;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HalfspaceCoefficients::new(costs, budget))
}

/// The simplex meets the half-space iff the cheapest corner fits the budget.
pub fn feasible(coeffs: &HalfspaceCoefficients) -> bool {
    coeffs.costs.iter().any(|&c| c <= coeffs.budget)
}

/// All vertices of simplex ∩ half-space: feasible corners first (by index),
/// then crossing points of edges `(i, j)` with `c_i > q > c_j`.
pub fn enumerate_vertices(coeffs: &HalfspaceCoefficients) -> Result<VertexSet> {
    if !feasible(coeffs) {
        return Err(Error::Geometry(format!(
            "no action distribution meets budget {}",
            coeffs.budget
        )));
    }
    let d = coeffs.degree();
    let q = coeffs.budget;
    let mut out = VertexSet::default();
    for i in 0..d {
        if coeffs.costs[i] <= q {
            out.push_unique(corner(d, i));
        }
    }
    for i in 0..d {
        for j in 0..d {
            if coeffs.costs[i] > q && q > coeffs.costs[j] {
                out.push_unique(edge_point(coeffs, i, j));
            }
        }
    }
    Ok(out)
}

/// Inverse-distance weighted mean of the vertices, with the distance of each
/// vertex given by `dist`. A vertex at distance zero is returned as is.
fn weighted_mean(vertices: &VertexSet, dist: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let d = vertices.vertices[0].len();
    let mut acc = vec![0.0; d];
    let mut total = 0.0;
    for v in &vertices.vertices {
        let r = dist(v);
        if r == 0.0 {
            return v.clone();
        }
        let w = 1.0 / r;
        total += w;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += w * x;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    acc
}

/// Maps an index pair to a point of the admissible polytope, so that a fixed
/// `d × d` action grid covers every vertex.
///
/// * `χ_i` when it fits the budget;
/// * for `i = j` otherwise, the mean of the vertices weighted by inverse
///   distance to `χ_i`;
/// * for `i ≠ j` with `χ_j` inside, the furthest point from `χ_j` towards `χ_i`
///   that still fits the budget;
/// * otherwise the mean weighted by inverse distance to the nearer of `χ_i`, `χ_j`.
///
/// Distances are Euclidean. The result is renormalized to sum to one.
pub fn g_encode(
    coeffs: &HalfspaceCoefficients,
    vertices: &VertexSet,
    i: usize,
    j: usize,
) -> Result<Vec<f64>> {
    if vertices.is_empty() {
        return Err(Error::Geometry("empty vertex set".into()));
    }
    let d = coeffs.degree();
    if i >= d || j >= d {
        return Err(Error::Geometry(format!(
            "action pair ({i}, {j}) out of range for degree {d}"
        )));
    }
    let chi_i = corner(d, i);
    let point = if coeffs.corner_inside(i) {
        chi_i
    } else if i == j {
        weighted_mean(vertices, |v| distance(&chi_i, v))
    } else if coeffs.corner_inside(j) {
        edge_point(coeffs, i, j)
    } else {
        let chi_j = corner(d, j);
        weighted_mean(vertices, |v| distance(&chi_i, v).min(distance(&chi_j, v)))
    };
    Ok(normalized(point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::reach::{interval_iteration, IntervalConfig};

    const TWO_SEVENTHS: f64 = 2.0 / 7.0;

    fn close(a: &[f64], b: &[f64]) -> bool {
        max_abs_diff(a, b) < 1e-12
    }

    fn f2_coeffs() -> HalfspaceCoefficients {
        HalfspaceCoefficients::new(vec![0.5, 0.0], 0.2)
    }

    #[test]
    fn action_values_on_f1() {
        let m = fixtures::f1();
        let beta = AlphaMap::new(vec![(StateId(0), TWO_SEVENTHS), (StateId(1), 0.0), (StateId(2), 1.0)]);
        let c = alpha_action_values(&m, StateId(0), &beta, 0.3).unwrap();
        assert!((c.costs[0] - 0.5).abs() < 1e-15);
        assert!((c.costs[1] - TWO_SEVENTHS).abs() < 1e-15);

        let ones = AlphaMap::new(m.states().map(|s| (s, 1.0)).collect());
        let c = alpha_action_values(&m, StateId(0), &ones, 1.0).unwrap();
        assert!(c.costs.iter().all(|&x| (x - 1.0).abs() < 1e-15));

        let partial = AlphaMap::new(vec![(StateId(2), 1.0)]);
        assert!(alpha_action_values(&m, StateId(0), &partial, 1.0).is_err());
    }

    #[test]
    fn action_values_with_zero_alpha() {
        let m = fixtures::f2();
        let zeros = AlphaMap::new(vec![(StateId(2), 0.0)]);
        let c = alpha_action_values(&m, StateId(2), &zeros, 0.0).unwrap();
        assert_eq!(c.costs, vec![0.0]);
    }

    #[test]
    fn certified_alpha_is_bit_identical_to_bellman() {
        let m = fixtures::f1();
        let cert = interval_iteration(&m, IntervalConfig::with_epsilon(1e-9)).unwrap();
        let alpha = AlphaMap::new(m.states().map(|s| (s, cert.beta(s))).collect());
        let c = alpha_action_values(&m, StateId(0), &alpha, cert.beta[0]).unwrap();
        let bellman = crate::reach::bellman_min_apply(&m, &cert.beta);
        assert_eq!(c.costs.iter().cloned().fold(f64::INFINITY, f64::min), bellman[0]);
        assert!(feasible(&c));
    }

    #[test]
    fn feasibility() {
        assert!(feasible(&HalfspaceCoefficients::new(vec![0.5, TWO_SEVENTHS], 0.3)));
        assert!(feasible(&HalfspaceCoefficients::new(vec![1.0, 1.0, 0.7], 1.0)));
        assert!(!feasible(&HalfspaceCoefficients::new(vec![0.5, 0.5], 0.4)));
    }

    #[test]
    fn vertices_f1() {
        let c = HalfspaceCoefficients::new(vec![0.5, TWO_SEVENTHS], 0.3);
        let v = enumerate_vertices(&c).unwrap();
        assert_eq!(v.len(), 2);
        assert!(close(&v.vertices()[0], &[0.0, 1.0]));
        assert!(close(&v.vertices()[1], &[1.0 / 15.0, 14.0 / 15.0]));
    }

    #[test]
    fn vertices_f2_and_full_simplex() {
        let v = enumerate_vertices(&f2_coeffs()).unwrap();
        assert_eq!(v.len(), 2);
        assert!(close(&v.vertices()[0], &[0.0, 1.0]));
        assert!(close(&v.vertices()[1], &[0.4, 0.6]));

        let v = enumerate_vertices(&HalfspaceCoefficients::new(vec![0.9, 0.1, 0.4], 1.0)).unwrap();
        assert_eq!(v.vertices(), &[corner(3, 0), corner(3, 1), corner(3, 2)]);

        assert!(enumerate_vertices(&HalfspaceCoefficients::new(vec![0.5, 0.5], 0.4)).is_err());
    }

    #[test]
    fn degenerate_corner_on_the_boundary_appears_once() {
        let c = HalfspaceCoefficients::new(vec![0.3, 0.6, 0.1], 0.3);
        let v = enumerate_vertices(&c).unwrap();
        let hits = v.vertices().iter().filter(|x| close(x, &corner(3, 0))).count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn g_cases_on_f2() {
        let c = f2_coeffs();
        let v = enumerate_vertices(&c).unwrap();
        // χ_risky outside, χ_safe inside: edge point
        assert!(close(&g_encode(&c, &v, 0, 1).unwrap(), &[0.4, 0.6]));
        // χ_safe inside wins regardless of j
        assert!(close(&g_encode(&c, &v, 1, 0).unwrap(), &[0.0, 1.0]));
        assert!(close(&g_encode(&c, &v, 1, 1).unwrap(), &[0.0, 1.0]));
        // inverse-distance mean: distances √2 and 0.6·√2
        let x = g_encode(&c, &v, 0, 0).unwrap();
        assert!(close(&x, &[0.25, 0.75]), "{x:?}");
        assert!(-0.3 * x[0] + 0.2 * x[1] >= 0.0);
    }

    #[test]
    fn g_both_outside_uses_min_distance_weights() {
        // d = 3: corners 0 and 1 outside, 2 inside
        let c = HalfspaceCoefficients::new(vec![0.9, 0.7, 0.1], 0.3);
        let v = enumerate_vertices(&c).unwrap();
        let x = g_encode(&c, &v, 0, 1).unwrap();
        let mut want = vec![0.0; 3];
        let mut total = 0.0;
        for vert in v.vertices() {
            let w = 1.0 / distance(&corner(3, 0), vert).min(distance(&corner(3, 1), vert));
            total += w;
            for k in 0..3 {
                want[k] += w * vert[k];
            }
        }
        want.iter_mut().for_each(|x| *x /= total);
        assert!(close(&x, &want));
        assert!(c.expected_level(&x) <= c.budget + 1e-12);
        assert!(g_encode(&c, &VertexSet::default(), 0, 1).is_err());
    }
}
