//! Planar-plus-height pose graph solved with dense Gauss-Newton.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::dataio::PoseSE3;
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GraphNode {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub z: f64,
}

impl GraphNode {
    pub fn from_pose(pose: &PoseSE3) -> Self {
        Self {
            x: pose.translation.x,
            y: pose.translation.y,
            theta: pose.yaw(),
            z: pose.translation.z,
        }
    }

    /// `other` expressed in this node's frame: `[dx, dy, dθ, dz]`.
    pub fn relative(&self, other: &GraphNode) -> [f64; 4] {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (other.x - self.x, other.y - self.y);
        [c * dx + s * dy, -s * dx + c * dy, wrap_angle(other.theta - self.theta), other.z - self.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    /// Pose of `to` in the frame of `from`: `[dx, dy, dθ, dz]`.
    pub measurement: [f64; 4],
    /// Diagonal information weights.
    pub information: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseGraph {
    pub nodes: Vec<GraphNode>,
    pub odometry: Vec<GraphEdge>,
    pub loops: Vec<GraphEdge>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a node chained to the previous one by its current relative pose.
    pub fn push_node(&mut self, node: GraphNode, information: [f64; 4]) -> usize {
        if let Some(prev) = self.nodes.last() {
            let from = self.nodes.len() - 1;
            self.odometry.push(GraphEdge {
                from,
                to: from + 1,
                measurement: prev.relative(&node),
                information,
            });
        }
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn add_loop(&mut self, edge: GraphEdge) -> Result<()> {
        if edge.from >= self.nodes.len() || edge.to >= self.nodes.len() || edge.from == edge.to {
            return Err(Error::Precondition(format!("loop edge {}→{} is out of range", edge.from, edge.to)));
        }
        self.loops.push(edge);
        Ok(())
    }

    fn edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.odometry.iter().chain(&self.loops)
    }

    /// Total weighted squared residual at `nodes`.
    pub fn cost_at(&self, nodes: &[GraphNode]) -> f64 {
        self.edges()
            .map(|e| {
                let r = residual(nodes, e);
                (0..4).map(|k| e.information[k] * r[k] * r[k]).sum::<f64>()
            })
            .sum()
    }

    pub fn cost(&self) -> f64 {
        self.cost_at(&self.nodes)
    }
}

fn residual(nodes: &[GraphNode], e: &GraphEdge) -> [f64; 4] {
    let rel = nodes[e.from].relative(&nodes[e.to]);
    let m = e.measurement;
    [rel[0] - m[0], rel[1] - m[1], wrap_angle(rel[2] - m[2]), rel[3] - m[3]]
}

/// Residual Jacobians with respect to `from` and `to`, rows `[dx, dy, dθ, dz]`,
/// columns `[x, y, θ, z]`.
fn jacobians(nodes: &[GraphNode], e: &GraphEdge) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    let a = &nodes[e.from];
    let b = &nodes[e.to];
    let (s, c) = a.theta.sin_cos();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let ji = [
        [-c, -s, -s * dx + c * dy, 0.0],
        [s, -c, -c * dx - s * dy, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, -1.0],
    ];
    let jj = [
        [c, s, 0.0, 0.0],
        [-s, c, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];
    (ji, jj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub nodes: Vec<GraphNode>,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted iteration, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// The solve diverged; `nodes` are the input poses.
    pub aborted: bool,
}

pub const MAX_ITERATIONS: usize = 20;
pub const RELATIVE_TOLERANCE: f64 = 1e-8;

/// Gauss-Newton over every node but the first, which anchors the gauge.
///
/// A step that raises the cost is rejected and retried at half length; the
/// second such increase aborts the correction.
pub fn correct(graph: &PoseGraph) -> Result<CorrectionOutcome> {
    if graph.loops.is_empty() {
        return Err(Error::Precondition("pose graph has no loop edges".into()));
    }
    let n = graph.nodes.len();
    let initial_cost = graph.cost();
    let mut nodes = graph.nodes.clone();
    let mut cost = initial_cost;
    let mut history = vec![cost];
    let mut increases = 0;
    let mut iterations = 0;
    let mut scale = 1.0;
    let dim = 4 * (n - 1);
    while iterations < MAX_ITERATIONS && cost > 0.0 {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for e in graph.edges() {
            let r = residual(&nodes, e);
            let (ji, jj) = jacobians(&nodes, e);
            let blocks = [(e.from, ji), (e.to, jj)];
            for &(na, ja) in &blocks {
                if na == 0 {
                    continue;
                }
                let oa = 4 * (na - 1);
                for p in 0..4 {
                    g[oa + p] += (0..4).map(|k| ja[k][p] * e.information[k] * r[k]).sum::<f64>();
                }
                for &(nb, jb) in &blocks {
                    if nb == 0 {
                        continue;
                    }
                    let ob = 4 * (nb - 1);
                    for p in 0..4 {
                        for q in 0..4 {
                            h[(oa + p, ob + q)] += (0..4).map(|k| ja[k][p] * e.information[k] * jb[k][q]).sum::<f64>();
                        }
                    }
                }
            }
        }
        let Some(chol) = h.cholesky() else {
            return Err(Error::Precondition("pose graph is not connected".into()));
        };
        let delta = chol.solve(&(-g));
        let candidate: Vec<GraphNode> = nodes
            .iter()
            .enumerate()
            .map(|(i, nd)| {
                if i == 0 {
                    return *nd;
                }
                let o = 4 * (i - 1);
                GraphNode {
                    x: nd.x + scale * delta[o],
                    y: nd.y + scale * delta[o + 1],
                    theta: wrap_angle(nd.theta + scale * delta[o + 2]),
                    z: nd.z + scale * delta[o + 3],
                }
            })
            .collect();
        let new_cost = graph.cost_at(&candidate);
        if new_cost > cost {
            increases += 1;
            if increases >= 2 {
                return Ok(CorrectionOutcome {
                    nodes: graph.nodes.clone(),
                    iterations,
                    initial_cost,
                    final_cost: initial_cost,
                    cost_history: vec![initial_cost],
                    aborted: true,
                });
            }
            scale *= 0.5;
            continue;
        }
        let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
        nodes = candidate;
        cost = new_cost;
        history.push(cost);
        if rel < RELATIVE_TOLERANCE {
            break;
        }
    }
    Ok(CorrectionOutcome {
        nodes,
        iterations,
        initial_cost,
        final_cost: cost,
        cost_history: history,
        aborted: false,
    })
}

/// World-frame rigid correction carrying `old` onto `new`: yaw about the
/// origin plus a translation.
fn node_correction(old: &GraphNode, new: &GraphNode) -> [f64; 4] {
    let dtheta = wrap_angle(new.theta - old.theta);
    let (s, c) = dtheta.sin_cos();
    [new.x - (c * old.x - s * old.y), new.y - (s * old.x + c * old.y), dtheta, new.z - old.z]
}

fn correction_pose(c: &[f64; 4]) -> PoseSE3 {
    let (s, co) = c[2].sin_cos();
    PoseSE3::new(Matrix3::new(co, -s, 0.0, s, co, 0.0, 0.0, 0.0, 1.0), Vector3::new(c[0], c[1], c[3]))
}

/// Per-frame world corrections, linearly interpolated between keyframes.
///
/// `keyframe_frames[i]` is the frame index of node `i`. Left-multiplying a
/// frame's pose by its correction gives the corrected pose.
pub fn interpolate_corrections(
    keyframe_frames: &[usize],
    old: &[GraphNode],
    new: &[GraphNode],
    frame_count: usize,
) -> Vec<PoseSE3> {
    assert_eq!(keyframe_frames.len(), old.len());
    assert_eq!(old.len(), new.len());
    if keyframe_frames.is_empty() {
        return vec![PoseSE3::identity(); frame_count];
    }
    let corr: Vec<[f64; 4]> = old.iter().zip(new).map(|(o, n)| node_correction(o, n)).collect();
    (0..frame_count)
        .map(|f| {
            let k = keyframe_frames.partition_point(|&kf| kf <= f);
            let c = if k == 0 {
                corr[0]
            } else if k == keyframe_frames.len() {
                corr[k - 1]
            } else {
                let (fa, fb) = (keyframe_frames[k - 1], keyframe_frames[k]);
                let w = (f - fa) as f64 / (fb - fa) as f64;
                let (a, b) = (corr[k - 1], corr[k]);
                [
                    a[0] + w * (b[0] - a[0]),
                    a[1] + w * (b[1] - a[1]),
                    wrap_angle(a[2] + w * wrap_angle(b[2] - a[2])),
                    a[3] + w * (b[3] - a[3]),
                ]
            };
            correction_pose(&c)
        })
        .collect()
}
