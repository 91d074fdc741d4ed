use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{optimize, Constraint, OptimizeReport, PoseGraph, PoseNode, SolverConfig};
use crate::fieldgen::DemRaster;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_size: usize,
    /// Hold the oldest in-window node fixed once nodes have been evicted.
    pub fixed_anchor: bool,
    pub solver: SolverConfig,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_size: 50,
            fixed_anchor: true,
            solver: SolverConfig::default(),
        }
    }
}

/// Pose graph restricted to the newest `window_size` nodes. Evicted nodes
/// keep their last estimate in a read-only archive.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    cfg: WindowConfig,
    graph: PoseGraph,
    archive: Vec<PoseNode>,
}

impl SlidingWindow {
    pub fn new(cfg: WindowConfig, dem: Option<Arc<DemRaster>>) -> Result<Self> {
        if cfg.window_size < 2 {
            return Err(Error::Config("window_size must be at least 2".into()));
        }
        Ok(SlidingWindow {
            cfg,
            graph: PoseGraph { dem, ..Default::default() },
            archive: Vec::new(),
        })
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn archive(&self) -> &[PoseNode] {
        &self.archive
    }

    /// Archived nodes followed by the current window, oldest first.
    pub fn trajectory(&self) -> Vec<PoseNode> {
        self.archive.iter().cloned().chain(self.graph.nodes.values().cloned()).collect()
    }

    pub fn anchor(&self) -> Option<u64> {
        self.graph.fixed.iter().next().copied()
    }

    /// Inserts a node with its constraints, evicts the oldest node when the
    /// window is full and re-optimizes the window.
    pub fn slide(&mut self, node: PoseNode, constraints: Vec<Constraint>) -> Result<OptimizeReport> {
        let last = self.graph.nodes.values().map(|n| n.timestamp).chain(self.archive.last().map(|n| n.timestamp));
        if let Some(t) = last.reduce(f64::max) {
            if !(node.timestamp > t) {
                return Err(Error::Ordering(format!(
                    "node {} at t={} is not after t={t}",
                    node.id, node.timestamp
                )));
            }
        }
        for c in &constraints {
            c.validate()?;
        }
        self.graph.add_node(node);
        for c in constraints {
            let (i, j) = c.nodes();
            for id in std::iter::once(i).chain(j) {
                if !self.graph.nodes.contains_key(&id) {
                    return Err(Error::DanglingConstraint(id));
                }
            }
            self.graph.add(c);
        }
        while self.graph.nodes.len() > self.cfg.window_size {
            let (&oldest, _) = self.graph.nodes.iter().next().expect("non-empty window");
            let evicted = self.graph.nodes.remove(&oldest).expect("oldest node");
            self.graph.constraints.retain(|c| !c.references(oldest));
            self.graph.fixed.remove(&oldest);
            self.archive.push(evicted);
            if self.cfg.fixed_anchor {
                let (&anchor, _) = self.graph.nodes.iter().next().expect("window keeps two nodes");
                self.graph.fixed.clear();
                self.graph.fixed.insert(anchor);
            }
        }
        optimize(&mut self.graph, &self.cfg.solver)
    }
}
