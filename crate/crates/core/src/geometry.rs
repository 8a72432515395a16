//! Polylines, segment error metrics and anchor index selection.
//!
//! Two selection routes live here: a geometry-aware one (RDP followed by a
//! minimax dynamic program) and the uniform-interval baseline. Indices are
//! 0-based everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn finite(p: Vec3) -> bool {
    p.iter().all(|c| c.is_finite())
}

/// Ordered 3D points, at least two of them, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec3>,
}

impl Polyline {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "polyline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(k) = points.iter().position(|p| !finite(*p)) {
            return Err(Error::invalid(format!("non-finite coordinate at point {k}")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest pairwise distance between any two vertices.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max(norm(sub(*a, *b)));
            }
        }
        best
    }

    /// Worst deviation of the points strictly between `i` and `j` from the
    /// chord `[points[i], points[j]]`.
    pub fn segment_max_error(&self, i: usize, j: usize) -> Result<f64> {
        if i >= j || j >= self.points.len() {
            return Err(Error::invalid(format!(
                "segment ({i}, {j}) out of range for {} points",
                self.points.len()
            )));
        }
        Ok(self.span_error(i, j))
    }

    fn span_error(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.points[i], self.points[j]);
        self.points[i + 1..j]
            .iter()
            .map(|p| segment_distance(*p, a, b))
            .fold(0.0, f64::max)
    }

    /// Worst-case error of the piecewise-linear approximation through
    /// `retained` (sorted, must contain both endpoints).
    pub fn approximation_error(&self, retained: &[usize]) -> Result<f64> {
        let mut worst = 0.0f64;
        for w in retained.windows(2) {
            worst = worst.max(self.segment_max_error(w[0], w[1])?);
        }
        Ok(worst)
    }
}

/// Euclidean distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> Result<f64> {
    if !(finite(p) && finite(a) && finite(b)) {
        return Err(Error::invalid("non-finite coordinate"));
    }
    Ok(segment_distance(p, a, b))
}

fn segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return norm(sub(p, a));
    }
    let s = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    let foot = [a[0] + s * ab[0], a[1] + s * ab[1], a[2] + s * ab[2]];
    norm(sub(p, foot))
}

/// Ramer-Douglas-Peucker simplification. Returns retained indices, always
/// including `0` and `N-1`.
pub fn rdp_simplify(poly: &Polyline, epsilon: f64) -> Result<Vec<usize>> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let n = poly.len();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    // explicit stack instead of recursion; order of visits does not matter
    let mut stack = vec![(0usize, n - 1)];
    while let Some((i, j)) = stack.pop() {
        if j <= i + 1 {
            continue;
        }
        let (a, b) = (poly.points[i], poly.points[j]);
        let mut split = i;
        let mut worst = -1.0;
        for k in i + 1..j {
            let d = segment_distance(poly.points[k], a, b);
            if d > worst {
                worst = d;
                split = k;
            }
        }
        if worst > epsilon {
            keep[split] = true;
            stack.push((i, split));
            stack.push((split, j));
        }
    }
    Ok((0..n).filter(|&k| keep[k]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMethod {
    RdpDp,
    Uniform,
}

impl AnchorMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnchorMethod::RdpDp => "rdp_dp",
            AnchorMethod::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for AnchorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rdp_dp" => Ok(AnchorMethod::RdpDp),
            "uniform" => Ok(AnchorMethod::Uniform),
            other => Err(Error::invalid(format!("unknown anchor method `{other}`"))),
        }
    }
}

/// K strictly increasing anchor step indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorIndexSet {
    pub indices: Vec<usize>,
    pub method: AnchorMethod,
}

impl AnchorIndexSet {
    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

/// Result of a minimax selection: the chosen interior indices and the
/// worst segment error of the resulting approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxSelection {
    pub indices: Vec<usize>,
    pub objective: f64,
}

/// Picks exactly `k` interior indices (endpoints implicitly retained)
/// minimizing the worst segment error. Ties go to the lexicographically
/// smallest index sequence.
pub fn dp_minimax_select(poly: &Polyline, k: usize) -> Result<MinimaxSelection> {
    let n = poly.len();
    if k + 2 > n {
        return Err(Error::invalid(format!(
            "cannot select {k} interior points from a polyline of {n}"
        )));
    }
    let candidates: Vec<usize> = (0..n).collect();
    Ok(minimax_over(poly, &candidates, k))
}

/// Relative slack (times the polyline diameter) under which two objective
/// values are treated as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Minimax DP restricted to `candidates` (sorted; first and last entries are
/// the fixed endpoints). Errors are always measured on the full polyline.
fn minimax_over(poly: &Polyline, candidates: &[usize], k: usize) -> MinimaxSelection {
    let m = candidates.len();
    debug_assert!(m >= k + 2);
    let last = m - 1;

    let mut err = vec![0.0; m * m];
    for a in 0..m {
        for b in a + 1..m {
            err[a * m + b] = poly.span_error(candidates[a], candidates[b]);
        }
    }

    // best[r][j]: minimal worst error from candidate j to the end with
    // exactly r interior picks after j.
    let mut best = vec![vec![f64::INFINITY; m]; k + 1];
    for j in 0..last {
        best[0][j] = err[j * m + last];
    }
    for r in 1..=k {
        for j in 0..last {
            let mut v = f64::INFINITY;
            for l in j + 1..last {
                let cand = err[j * m + l].max(best[r - 1][l]);
                if cand < v {
                    v = cand;
                }
            }
            best[r][j] = v;
        }
    }

    // Rounding noise should not decide ties, so continuations within a
    // hair of the optimum count as optimal.
    let slack = best[k][0] + TIE_TOLERANCE * poly.diameter();
    let mut indices = Vec::with_capacity(k);
    let mut cur = 0;
    for r in (1..=k).rev() {
        let next = (cur + 1..last)
            .find(|&l| err[cur * m + l].max(best[r - 1][l]) <= slack)
            .expect("an optimal continuation always exists");
        indices.push(candidates[next]);
        cur = next;
    }
    let mut retained = Vec::with_capacity(k + 2);
    retained.push(candidates[0]);
    retained.extend(indices.iter().copied());
    retained.push(candidates[last]);
    let objective = retained.windows(2).map(|w| poly.span_error(w[0], w[1])).fold(0.0, f64::max);
    MinimaxSelection { indices, objective }
}

/// Smallest RDP epsilon (by bisection over `[0, diameter]`) that keeps at
/// most `max_points` points.
pub fn rdp_epsilon_for_budget(poly: &Polyline, max_points: usize, iters: usize) -> f64 {
    let (mut lo, mut hi) = (0.0, poly.diameter());
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        let kept = rdp_simplify(poly, mid).map(|v| v.len()).unwrap_or(usize::MAX);
        if kept <= max_points {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub const RDP_BISECTION_ITERS: usize = 12;

/// Two-stage selection of `k` interior indices whose smallest allowed index
/// is `first`: RDP candidates at the bisected epsilon, then minimax DP.
/// Falls back to every allowed interior index when RDP leaves too few.
fn two_stage(poly: &Polyline, k: usize, first: usize) -> MinimaxSelection {
    let n = poly.len();
    let eps = rdp_epsilon_for_budget(poly, k + 2, RDP_BISECTION_ITERS);
    let kept = rdp_simplify(poly, eps).expect("epsilon is non-negative");
    let mut interior: Vec<usize> = kept
        .into_iter()
        .filter(|&i| i >= first && i < n - 1)
        .collect();
    if interior.len() < k {
        interior = (first..n - 1).collect();
    }
    let mut candidates = Vec::with_capacity(interior.len() + 2);
    candidates.push(0);
    candidates.extend(interior);
    candidates.push(n - 1);
    minimax_over(poly, &candidates, k)
}

/// RDP + minimax DP on a raw polyline: `k` interior indices.
pub fn rdp_dp_select(poly: &Polyline, k: usize) -> Result<MinimaxSelection> {
    let n = poly.len();
    if k + 2 > n {
        return Err(Error::invalid(format!(
            "cannot select {k} interior points from a polyline of {n}"
        )));
    }
    Ok(two_stage(poly, k, 1))
}

/// Uniform-interval baseline over a chunk of `t` steps: `round(m*t/k) - 1`
/// clamped to `[1, t-1]`, bumped forward where rounding collides.
pub fn uniform_select(t: usize, k: usize) -> Result<AnchorIndexSet> {
    if k == 0 || t < 2 || k > t - 1 {
        return Err(Error::invalid(format!(
            "uniform selection needs 1 <= k <= t-1 (t={t}, k={k})"
        )));
    }
    let mut indices: Vec<usize> = Vec::with_capacity(k);
    for m in 1..=k {
        let raw = ((m * t) as f64 / k as f64).round() as usize;
        let mut idx = raw.saturating_sub(1).clamp(1, t - 1);
        if let Some(&prev) = indices.last() {
            if idx <= prev {
                idx = prev + 1;
            }
        }
        indices.push(idx);
    }
    debug_assert!(*indices.last().unwrap() < t);
    Ok(AnchorIndexSet {
        indices,
        method: AnchorMethod::Uniform,
    })
}

/// Anchor rows for a chunk whose trajectory segment has `T+1` points
/// (chunk start plus one point per step).
///
/// Row `t` denotes the state reached after step `t`, i.e. segment point
/// `t+1`. Rows lie in `[1, T-1]`. With `rdp_dp` the last anchor is the
/// chunk end and the other `K-1` come from the two-stage selection.
pub fn select_chunk_anchors(
    segment: &Polyline,
    k: usize,
    method: AnchorMethod,
) -> Result<AnchorIndexSet> {
    let steps = segment.len() - 1;
    if k == 0 || steps < 2 || k > steps - 1 {
        return Err(Error::invalid(format!(
            "need 1 <= K <= T-1 anchors (T={steps}, K={k})"
        )));
    }
    match method {
        AnchorMethod::Uniform => uniform_select(steps, k),
        AnchorMethod::RdpDp => {
            // segment point 2 is row 1, the earliest admissible anchor
            let sel = two_stage(segment, k - 1, 2);
            let mut indices: Vec<usize> = sel.indices.iter().map(|i| i - 1).collect();
            indices.push(steps - 1);
            Ok(AnchorIndexSet {
                indices,
                method: AnchorMethod::RdpDp,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poly(points: &[Vec3]) -> Polyline {
        Polyline::new(points.to_vec()).unwrap()
    }

    fn line(n: usize) -> Polyline {
        poly(&(0..n).map(|k| [k as f64 * 0.1, 0.0, 0.0]).collect::<Vec<_>>())
    }

    fn bump() -> Polyline {
        poly(&[[0.0, 0.0, 0.0], [0.5, 0.4, 0.0], [1.0, 0.0, 0.0]])
    }

    /// Exhaustive minimax over all interior subsets of size k.
    fn brute_force(poly: &Polyline, k: usize) -> f64 {
        fn rec(poly: &Polyline, start: usize, k: usize, chosen: &mut Vec<usize>, best: &mut f64) {
            let n = poly.len();
            if chosen.len() == k {
                let mut all = vec![0];
                all.extend(chosen.iter().copied());
                all.push(n - 1);
                *best = best.min(poly.approximation_error(&all).unwrap());
                return;
            }
            for i in start..n - 1 {
                chosen.push(i);
                rec(poly, i + 1, k, chosen, best);
                chosen.pop();
            }
        }
        let mut best = f64::INFINITY;
        rec(poly, 1, k, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn point_segment_cases() {
        let o = [0.0, 0.0, 0.0];
        let x = [1.0, 0.0, 0.0];
        assert_eq!(point_segment_distance([0.0, 1.0, 0.0], o, x).unwrap(), 1.0);
        assert_eq!(point_segment_distance(o, o, x).unwrap(), 0.0);
        // clamps to b = (1,0,0); (2,1,0) - (1,0,0) = (1,1,0)
        let d = point_segment_distance([2.0, 1.0, 0.0], o, x).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        // degenerate segment
        assert_eq!(point_segment_distance([0.0, 3.0, 4.0], o, o).unwrap(), 5.0);
        assert!(point_segment_distance([f64::NAN, 0.0, 0.0], o, x).is_err());
    }

    #[test]
    fn segment_error_cases() {
        let p = bump();
        assert_eq!(p.segment_max_error(0, 1).unwrap(), 0.0);
        assert!((p.segment_max_error(0, 2).unwrap() - 0.4).abs() < 1e-15);
        assert!(line(10).segment_max_error(2, 9).unwrap() < 1e-12);
        assert!(p.segment_max_error(1, 1).is_err());
        assert!(p.segment_max_error(0, 3).is_err());
    }

    #[test]
    fn polyline_rejects_bad_input() {
        assert!(Polyline::new(vec![[0.0; 3]]).is_err());
        assert!(Polyline::new(vec![[0.0; 3], [f64::INFINITY, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn rdp_examples() {
        assert_eq!(rdp_simplify(&line(10), 0.01).unwrap(), vec![0, 9]);
        assert_eq!(rdp_simplify(&bump(), 0.3).unwrap(), vec![0, 1, 2]);
        assert_eq!(rdp_simplify(&bump(), 0.5).unwrap(), vec![0, 2]);
        assert!(rdp_simplify(&bump(), -1.0).is_err());
    }

    #[test]
    fn dp_examples() {
        let p = poly(&[
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 1.0, 0.0],
            [4.0, 0.0, 0.0],
            [5.0, 1.0, 0.5],
            [6.0, 0.0, 0.0],
            [7.0, 1.0, 0.0],
        ]);
        let full = dp_minimax_select(&p, 6).unwrap();
        assert_eq!(full.indices, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(full.objective, 0.0);

        let two = dp_minimax_select(&p, 2).unwrap();
        assert_eq!(two.objective, brute_force(&p, 2));

        let straight = dp_minimax_select(&line(6), 1).unwrap();
        assert_eq!(straight.indices, vec![1]);
        assert_eq!(straight.objective, 0.0);

        assert!(dp_minimax_select(&line(4), 3).is_err());
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_select(12, 3).unwrap().indices, vec![3, 7, 11]);
        assert_eq!(uniform_select(4, 1).unwrap().indices, vec![3]);
        assert_eq!(uniform_select(9, 3).unwrap().indices, vec![2, 5, 8]);
        // rounding collision: 6*1/5 and 6*2/5 both land on row 1 before the bump
        assert_eq!(uniform_select(6, 5).unwrap().indices, vec![1, 2, 3, 4, 5]);
        assert!(uniform_select(4, 4).is_err());
        assert!(uniform_select(4, 0).is_err());
    }

    #[test]
    fn chunk_anchor_rows() {
        let seg = line(17); // T = 16
        let uni = select_chunk_anchors(&seg, 3, AnchorMethod::Uniform).unwrap();
        assert_eq!(uni.indices, vec![4, 10, 15]);
        let geo = select_chunk_anchors(&seg, 3, AnchorMethod::RdpDp).unwrap();
        // straight line: every choice is optimal, smallest rows win
        assert_eq!(geo.indices, vec![1, 2, 15]);
        let one = select_chunk_anchors(&seg, 1, AnchorMethod::RdpDp).unwrap();
        assert_eq!(one.indices, vec![15]);
        assert!(select_chunk_anchors(&seg, 16, AnchorMethod::Uniform).is_err());
    }

    #[test]
    fn exact_k_objective_can_grow() {
        // a spike next to a start/end pair that coincide: forcing one
        // interior point makes some span worse than the bare chord
        let p = Polyline::new(vec![
            [0.895, 0.686, -0.769],
            [0.0, 0.0, 0.0],
            [0.0, 0.966, 0.0],
            [0.0, 0.0, 0.0],
        ])
        .unwrap();
        let k0 = dp_minimax_select(&p, 0).unwrap().objective;
        let k1 = dp_minimax_select(&p, 1).unwrap().objective;
        assert!(k1 > k0, "{k1} vs {k0}");
        assert_eq!(dp_minimax_select(&p, 2).unwrap().objective, 0.0);
    }

    #[test]
    fn chunk_anchors_find_the_corner() {
        // L-shaped segment with the corner at point 8 -> row 7
        let mut pts = Vec::new();
        for k in 0..=8 {
            pts.push([k as f64 * 0.01, 0.0, 0.0]);
        }
        for k in 1..=8 {
            pts.push([0.08, k as f64 * 0.01, 0.0]);
        }
        let seg = poly(&pts);
        let sel = select_chunk_anchors(&seg, 2, AnchorMethod::RdpDp).unwrap();
        assert_eq!(sel.indices, vec![7, 15]);
    }

    fn arb_polyline(max_n: usize) -> impl Strategy<Value = Polyline> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..=max_n)
            .prop_map(|pts| Polyline::new(pts).unwrap())
    }

    proptest! {
        #[test]
        fn rdp_respects_epsilon(p in arb_polyline(30), eps in 0.0f64..0.5) {
            let kept = rdp_simplify(&p, eps).unwrap();
            prop_assert_eq!(kept[0], 0);
            prop_assert_eq!(*kept.last().unwrap(), p.len() - 1);
            for w in kept.windows(2) {
                prop_assert!(p.segment_max_error(w[0], w[1]).unwrap() <= eps);
            }
        }

        #[test]
        fn rdp_is_idempotent(p in arb_polyline(30), eps in 0.0f64..0.5) {
            let kept = rdp_simplify(&p, eps).unwrap();
            let sub = Polyline::new(kept.iter().map(|&i| p.points()[i]).collect()).unwrap();
            let again = rdp_simplify(&sub, eps).unwrap();
            prop_assert_eq!(again, (0..kept.len()).collect::<Vec<_>>());
        }

        #[test]
        fn dp_matches_enumeration(p in arb_polyline(12), k in 0usize..=4) {
            prop_assume!(k + 2 <= p.len());
            let sel = dp_minimax_select(&p, k).unwrap();
            prop_assert_eq!(sel.indices.len(), k);
            let tol = 1e-12 * p.diameter().max(1.0);
            prop_assert!((sel.objective - brute_force(&p, k)).abs() <= tol);
            let mut all = vec![0];
            all.extend(sel.indices.iter().copied());
            all.push(p.len() - 1);
            prop_assert_eq!(p.approximation_error(&all).unwrap(), sel.objective);
        }

        #[test]
        fn dp_objective_bounded_by_chord_and_zero_when_full(p in arb_polyline(12)) {
            let chord = p.span_error(0, p.len() - 1);
            let tol = 1e-12 * p.diameter().max(1.0);
            for k in 0..=p.len() - 2 {
                let obj = dp_minimax_select(&p, k).unwrap().objective;
                prop_assert!(obj >= 0.0);
                if k == 0 {
                    prop_assert!((obj - chord).abs() <= tol);
                }
            }
            prop_assert_eq!(dp_minimax_select(&p, p.len() - 2).unwrap().objective, 0.0);
        }

        #[test]
        fn uniform_is_strictly_increasing(t in 2usize..200, k in 1usize..200) {
            prop_assume!(k < t);
            let idx = uniform_select(t, k).unwrap().indices;
            prop_assert_eq!(idx.len(), k);
            prop_assert!(idx[0] >= 1);
            prop_assert!(*idx.last().unwrap() < t);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn chunk_anchors_are_admissible(p in arb_polyline(20), k in 1usize..5) {
            let steps = p.len() - 1;
            prop_assume!(steps >= 2 && k < steps);
            for method in [AnchorMethod::RdpDp, AnchorMethod::Uniform] {
                let set = select_chunk_anchors(&p, k, method).unwrap();
                prop_assert_eq!(set.k(), k);
                prop_assert!(set.indices[0] >= 1);
                prop_assert!(*set.indices.last().unwrap() < steps);
                prop_assert!(set.indices.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
