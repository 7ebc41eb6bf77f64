//! Detection matching and precision / recall / F1.
//!
//! Predictions and ground-truth points are paired one-to-one when their
//! Euclidean distance is within a radius. Among all matchings of maximum
//! cardinality the one with the smallest total distance is reported.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Point2D;
use crate::postproc::DetectionSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub radius: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { radius: 30.0 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid("radius", format!("{} must be positive", self.radius)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub truth: usize,
    pub distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    /// Sorted by prediction index.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

impl Matching {
    pub fn total_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.distance).sum()
    }
}

struct Edge {
    to: usize,
    cap: i32,
    cost: f64,
}

/// Residual graph for min-cost flow with unit capacities.
struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap: 1, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
    }

    /// Bellman-Ford shortest path in the residual graph; returns the edge
    /// ids along the path.
    fn shortest_path(&self, source: usize, sink: usize) -> Option<Vec<usize>> {
        const EPS: f64 = 1e-12;
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via = vec![usize::MAX; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &self.adj[u] {
                    let edge = &self.edges[e];
                    if edge.cap > 0 && dist[u] + edge.cost < dist[edge.to] - EPS {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            return None;
        }
        let mut path = Vec::new();
        let mut v = sink;
        while v != source {
            let e = via[v];
            path.push(e);
            v = self.edges[e ^ 1].to;
        }
        Some(path)
    }
}

/// Maximum-cardinality, minimum-total-distance one-to-one matching.
pub fn match_points(pred: &[Point2D], truth: &[Point2D], cfg: &MatchConfig) -> Matching {
    let (np, nt) = (pred.len(), truth.len());
    let source = np + nt;
    let sink = source + 1;
    let mut graph = FlowGraph::new(np + nt + 2);
    let mut pair_edges = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = p.distance(t);
            if d <= cfg.radius {
                pair_edges.push((graph.edges.len(), i, j, d));
                graph.add_edge(i, np + j, d);
            }
        }
    }
    if !pair_edges.is_empty() {
        for i in 0..np {
            graph.add_edge(source, i, 0.0);
        }
        for j in 0..nt {
            graph.add_edge(np + j, sink, 0.0);
        }
        while let Some(path) = graph.shortest_path(source, sink) {
            for e in path {
                graph.edges[e].cap -= 1;
                graph.edges[e ^ 1].cap += 1;
            }
        }
    }

    let pairs: Vec<MatchedPair> = pair_edges
        .into_iter()
        .filter(|&(e, ..)| graph.edges[e].cap == 0)
        .map(|(_, pred, truth, distance)| MatchedPair {
            pred,
            truth,
            distance,
            image_id: None,
        })
        .collect();
    let used_p: BTreeSet<usize> = pairs.iter().map(|p| p.pred).collect();
    let used_t: BTreeSet<usize> = pairs.iter().map(|p| p.truth).collect();
    Matching {
        unmatched_preds: (0..np).filter(|i| !used_p.contains(i)).collect(),
        unmatched_truths: (0..nt).filter(|j| !used_t.contains(j)).collect(),
        pairs,
    }
}

pub fn match_detections(pred: &DetectionSet, truth: &[Point2D], cfg: &MatchConfig) -> Matching {
    let mut m = match_points(&pred.centers(), truth, cfg);
    for p in &mut m.pairs {
        p.image_id = Some(pred.image_id);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

pub fn compute_metrics(tp: u64, fp: u64, fn_: u64) -> Scores {
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    Scores {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub scores: Scores,
    pub pairs: Vec<MatchedPair>,
}

impl MetricsReport {
    pub fn from_matching(m: &Matching) -> Self {
        Self {
            scores: compute_metrics(
                m.pairs.len() as u64,
                m.unmatched_preds.len() as u64,
                m.unmatched_truths.len() as u64,
            ),
            pairs: m.pairs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: i64,
    #[serde(flatten)]
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Images that contributed (those with at least one prediction or truth).
    pub images: usize,
}

/// Micro-averaged (pooled-count) report with per-image breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    #[serde(flatten)]
    pub pooled: Scores,
    #[serde(rename = "macro")]
    pub macro_avg: MacroScores,
    pub per_image: Vec<ImageReport>,
}

/// Matches every image independently and pools the counts.
///
/// Images present in `truths` without predictions count all their truths as
/// misses.
pub fn evaluate_dataset(
    preds: &[DetectionSet],
    truths: &BTreeMap<i64, Vec<Point2D>>,
    cfg: &MatchConfig,
) -> Result<DatasetReport> {
    cfg.validate()?;
    let mut by_image: BTreeMap<i64, &DetectionSet> = BTreeMap::new();
    for p in preds {
        if !truths.contains_key(&p.image_id) {
            return Err(Error::invalid(
                "predictions",
                format!("image id {} has no ground-truth entry", p.image_id),
            ));
        }
        if by_image.insert(p.image_id, p).is_some() {
            return Err(Error::invalid(
                "predictions",
                format!("image id {} appears more than once", p.image_id),
            ));
        }
    }
    let mut per_image = Vec::with_capacity(truths.len());
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    let mut macro_sum = (0.0, 0.0, 0.0, 0usize);
    for (&image_id, truth) in truths {
        let matching = match by_image.get(&image_id) {
            Some(p) => match_detections(p, truth, cfg),
            None => Matching {
                unmatched_truths: (0..truth.len()).collect(),
                ..Default::default()
            },
        };
        let report = MetricsReport::from_matching(&matching);
        let s = report.scores;
        tp += s.tp;
        fp += s.fp;
        fn_ += s.fn_;
        if s.tp + s.fp + s.fn_ > 0 {
            macro_sum.0 += s.precision;
            macro_sum.1 += s.recall;
            macro_sum.2 += s.f1;
            macro_sum.3 += 1;
        }
        per_image.push(ImageReport { image_id, report });
    }
    let n = macro_sum.3 as f64;
    Ok(DatasetReport {
        pooled: compute_metrics(tp, fp, fn_),
        macro_avg: MacroScores {
            precision: ratio(macro_sum.0, n),
            recall: ratio(macro_sum.1, n),
            f1: ratio(macro_sum.2, n),
            images: macro_sum.3,
        },
        per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postproc::Detection;
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point2D> {
        v.iter().map(|&(x, y)| Point2D { x, y }).collect()
    }

    fn dets(image_id: i64, v: &[(f64, f64)]) -> DetectionSet {
        DetectionSet {
            image_id,
            points: v
                .iter()
                .map(|&(x, y)| Detection {
                    x,
                    y,
                    score: 1.0,
                    area: 1,
                })
                .collect(),
        }
    }

    /// Exhaustive search over all partial injective assignments: returns
    /// (max cardinality, min total distance at that cardinality).
    #[allow(clippy::too_many_arguments)]
    fn brute_force(pred: &[Point2D], truth: &[Point2D], r: f64) -> (usize, f64) {
        fn go(
            i: usize,
            pred: &[Point2D],
            truth: &[Point2D],
            r: f64,
            used: &mut Vec<bool>,
            k: usize,
            d: f64,
            best: &mut (usize, f64),
        ) {
            if i == pred.len() {
                if k > best.0 || (k == best.0 && d < best.1) {
                    *best = (k, d);
                }
                return;
            }
            go(i + 1, pred, truth, r, used, k, d, best);
            for j in 0..truth.len() {
                let dist = pred[i].distance(&truth[j]);
                if !used[j] && dist <= r {
                    used[j] = true;
                    go(i + 1, pred, truth, r, used, k + 1, d + dist, best);
                    used[j] = false;
                }
            }
        }
        let mut best = (0, 0.0);
        go(0, pred, truth, r, &mut vec![false; truth.len()], 0, 0.0, &mut best);
        best
    }

    #[test]
    fn identical_points_all_match() {
        let p = pts(&[(1.0, 2.0), (50.0, 60.0), (100.0, 5.0)]);
        let m = match_points(&p, &p, &MatchConfig::default());
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|x| x.pred == x.truth && x.distance == 0.0));
    }

    #[test]
    fn just_outside_radius() {
        let m = match_points(&pts(&[(31.0, 0.0)]), &pts(&[(0.0, 0.0)]), &MatchConfig::default());
        let r = MetricsReport::from_matching(&m).scores;
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
        let at = match_points(&pts(&[(30.0, 0.0)]), &pts(&[(0.0, 0.0)]), &MatchConfig::default());
        assert_eq!(at.pairs.len(), 1);
    }

    #[test]
    fn optimal_beats_greedy() {
        // A is nearest to truth 1, but B can only reach truth 1.
        let truth = pts(&[(0.0, 0.0), (20.0, 0.0)]);
        let pred = pts(&[(5.0, 0.0), (-25.0, 0.0)]);
        let m = match_points(&pred, &truth, &MatchConfig::default());
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(brute_force(&pred, &truth, 30.0).0, 2);
        let a = m.pairs.iter().find(|p| p.pred == 0).unwrap();
        assert_eq!(a.truth, 1);
    }

    #[test]
    fn picks_minimum_distance_among_maximum() {
        let truth = pts(&[(0.0, 0.0), (10.0, 0.0)]);
        let pred = pts(&[(1.0, 0.0), (9.0, 0.0)]);
        let m = match_points(&pred, &truth, &MatchConfig::default());
        assert!((m.total_distance() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn metric_arithmetic() {
        assert_eq!(compute_metrics(0, 0, 0), Scores::default());
        let s = compute_metrics(5, 0, 0);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let f1 = f1_score(0.6943, 0.8072);
        assert!((f1 - 0.7465).abs() <= 0.0005, "{f1}");
    }

    #[test]
    fn dataset_pooling() {
        let truths = BTreeMap::from([(1, pts(&[(0.0, 0.0), (500.0, 500.0)])), (2, pts(&[(0.0, 0.0)]))]);
        let preds = vec![dets(1, &[(1.0, 1.0)]), dets(2, &[(0.0, 2.0), (300.0, 300.0)])];
        let r = evaluate_dataset(&preds, &truths, &MatchConfig::default()).unwrap();
        assert_eq!((r.pooled.tp, r.pooled.fp, r.pooled.fn_), (2, 1, 1));
        for v in [r.pooled.precision, r.pooled.recall, r.pooled.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(r.per_image.len(), 2);
        assert_eq!(r.macro_avg.images, 2);
    }

    #[test]
    fn dataset_perfect_and_empty() {
        let truths = BTreeMap::from([(1, pts(&[(3.0, 3.0)])), (2, pts(&[(9.0, 9.0)]))]);
        let perfect = vec![dets(1, &[(3.0, 3.0)]), dets(2, &[(9.0, 9.0)])];
        assert_eq!(
            evaluate_dataset(&perfect, &truths, &MatchConfig::default())
                .unwrap()
                .pooled
                .f1,
            1.0
        );
        let none = evaluate_dataset(&[], &truths, &MatchConfig::default()).unwrap();
        assert_eq!(
            (none.pooled.precision, none.pooled.recall, none.pooled.fn_),
            (0.0, 0.0, 2)
        );
    }

    #[test]
    fn dataset_rejects_unknown_or_duplicate_ids() {
        let truths = BTreeMap::from([(1, pts(&[]))]);
        assert!(evaluate_dataset(&[dets(9, &[])], &truths, &MatchConfig::default()).is_err());
        assert!(evaluate_dataset(&[dets(1, &[]), dets(1, &[])], &truths, &MatchConfig::default()).is_err());
        assert!(MatchConfig { radius: 0.0 }.validate().is_err());
    }

    #[test]
    fn report_json_uses_fn_key() {
        let s = serde_json::to_value(compute_metrics(1, 2, 3)).unwrap();
        assert_eq!(s["fn"], 3);
    }

    fn small_instance() -> impl Strategy<Value = (Vec<Point2D>, Vec<Point2D>)> {
        let p = proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 0..=8);
        let t = proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 0..=8);
        (p, t).prop_map(|(p, t)| (pts(&p), pts(&t)))
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force((pred, truth) in small_instance()) {
            let cfg = MatchConfig { radius: 30.0 };
            let m = match_points(&pred, &truth, &cfg);
            let (k, d) = brute_force(&pred, &truth, cfg.radius);
            prop_assert_eq!(m.pairs.len(), k);
            prop_assert!((m.total_distance() - d).abs() < 1e-9);
            prop_assert_eq!(m.pairs.len() + m.unmatched_preds.len(), pred.len());
            prop_assert_eq!(m.pairs.len() + m.unmatched_truths.len(), truth.len());
        }

        #[test]
        fn roles_are_symmetric((pred, truth) in small_instance()) {
            let cfg = MatchConfig::default();
            prop_assert_eq!(match_points(&pred, &truth, &cfg).pairs.len(), match_points(&truth, &pred, &cfg).pairs.len());
        }

        #[test]
        fn translation_invariant((pred, truth) in small_instance(), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let cfg = MatchConfig::default();
            let shift = |v: &[Point2D]| v.iter().map(|p| Point2D { x: p.x + dx, y: p.y + dy }).collect::<Vec<_>>();
            let a = MetricsReport::from_matching(&match_points(&pred, &truth, &cfg)).scores;
            let b = MetricsReport::from_matching(&match_points(&shift(&pred), &shift(&truth), &cfg)).scores;
            prop_assert_eq!((a.tp, a.fp, a.fn_), (b.tp, b.fp, b.fn_));
        }

        #[test]
        fn larger_radius_never_loses_matches((pred, truth) in small_instance(), r1 in 1.0f64..60.0, r2 in 1.0f64..60.0) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let small = match_points(&pred, &truth, &MatchConfig { radius: lo }).pairs.len();
            let large = match_points(&pred, &truth, &MatchConfig { radius: hi }).pairs.len();
            prop_assert!(small <= large);
        }
    }
}
