//! Architecture configuration and the node plan of the nested grid.
//!
//! Node `X(m,n)` sits at down-sampling level `m` and position `n` along that
//! level's skip pathway. With dense skips every node with `m + n <= D` exists
//! and `X(m,n)` for `n > 0` reads all earlier nodes on its level plus the
//! up-sampled `X(m+1,n-1)`. The simple style keeps only the encoder column
//! and the final decoder diagonal, which is the plain U shape.
//!
//! Plans list nodes ordered by `(m+n, n)`. That order is topological, and
//! the depth-`q` sub-network is exactly the prefix with `m + n <= q`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::blocks::BlockKind;
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub m: usize,
    pub n: usize,
}

impl NodeId {
    pub const fn new(m: usize, n: usize) -> Self {
        NodeId { m, n }
    }

    fn order_key(self) -> (usize, usize) {
        (self.m + self.n, self.n)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X({},{})", self.m, self.n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipStyle {
    Dense,
    Simple,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub depth: usize,
    pub filters: Vec<usize>,
    pub block_kind: BlockKind,
    pub t: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub deep_supervision: bool,
    pub skip_style: SkipStyle,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            depth: 4,
            filters: vec![32, 64, 128, 256, 512],
            block_kind: BlockKind::Rrcl,
            t: 2,
            in_channels: 1,
            num_classes: 1,
            deep_supervision: true,
            skip_style: SkipStyle::Dense,
        }
    }
}

/// The four reference architectures, all at the default filter schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    UNet,
    R2UNet,
    UNetPlusPlus,
    R2UPlusPlus,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::UNet, Preset::R2UNet, Preset::UNetPlusPlus, Preset::R2UPlusPlus];

    pub fn name(self) -> &'static str {
        match self {
            Preset::UNet => "U-Net",
            Preset::R2UNet => "R2U-Net",
            Preset::UNetPlusPlus => "U-Net++",
            Preset::R2UPlusPlus => "R2U++",
        }
    }

    pub fn config(self, t: usize) -> ArchitectureConfig {
        let (block_kind, skip_style) = match self {
            Preset::UNet => (BlockKind::Plain, SkipStyle::Simple),
            Preset::R2UNet => (BlockKind::Rrcl, SkipStyle::Simple),
            Preset::UNetPlusPlus => (BlockKind::Plain, SkipStyle::Dense),
            Preset::R2UPlusPlus => (BlockKind::Rrcl, SkipStyle::Dense),
        };
        ArchitectureConfig {
            block_kind,
            skip_style,
            t,
            ..ArchitectureConfig::default()
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(config_err!("depth must be at least 1"));
        }
        if self.filters.len() != self.depth + 1 {
            return Err(config_err!(
                "filters has {} entries, depth {} needs {}",
                self.filters.len(),
                self.depth,
                self.depth + 1
            ));
        }
        if let Some(i) = self.filters.iter().position(|&f| f == 0) {
            return Err(config_err!("filters[{i}] must be positive"));
        }
        if self.block_kind == BlockKind::Rrcl && self.t == 0 {
            return Err(config_err!("recurrent time step t must be at least 1"));
        }
        if self.in_channels == 0 || self.num_classes == 0 {
            return Err(config_err!("in_channels and num_classes must be positive"));
        }
        Ok(())
    }

    /// Spatial dims must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Edge {
    /// The network input.
    Input,
    /// Max-pooled output of the node one level up.
    Pool(NodeId),
    /// Same-level feed.
    Same(NodeId),
    /// Up-sampled output of the node one level down.
    Up(NodeId),
}

impl Edge {
    pub fn source(&self) -> Option<NodeId> {
        match *self {
            Edge::Input => None,
            Edge::Pool(s) | Edge::Same(s) | Edge::Up(s) => Some(s),
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edge::Input => f.write_str("input"),
            Edge::Pool(s) => write!(f, "pool({s})"),
            Edge::Same(s) => write!(f, "{s}"),
            Edge::Up(s) => write!(f, "up({s})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphPlan {
    pub depth: usize,
    pub style: SkipStyle,
    pub nodes: Vec<NodeId>,
    pub inputs: BTreeMap<NodeId, Vec<Edge>>,
    pub heads: Vec<NodeId>,
}

fn node_inputs(style: SkipStyle, depth: usize, id: NodeId) -> Vec<Edge> {
    let NodeId { m, n } = id;
    if n == 0 {
        return vec![if m == 0 {
            Edge::Input
        } else {
            Edge::Pool(NodeId::new(m - 1, 0))
        }];
    }
    let up = Edge::Up(NodeId::new(m + 1, n - 1));
    match style {
        SkipStyle::Dense => (0..n).map(|k| Edge::Same(NodeId::new(m, k))).chain([up]).collect(),
        SkipStyle::Simple => {
            debug_assert_eq!(m + n, depth);
            vec![Edge::Same(NodeId::new(m, 0)), up]
        }
    }
}

pub fn build_plan(config: &ArchitectureConfig) -> Result<GraphPlan> {
    config.validate()?;
    let d = config.depth;
    let mut nodes: Vec<NodeId> = match config.skip_style {
        SkipStyle::Dense => (0..=d)
            .flat_map(|m| (0..=d - m).map(move |n| NodeId::new(m, n)))
            .collect(),
        SkipStyle::Simple => (0..=d)
            .map(|m| NodeId::new(m, 0))
            .chain((0..d).map(|m| NodeId::new(m, d - m)))
            .collect(),
    };
    nodes.sort_by_key(|id| id.order_key());
    let inputs = nodes
        .iter()
        .map(|&id| (id, node_inputs(config.skip_style, d, id)))
        .collect();
    let heads = match config.skip_style {
        SkipStyle::Dense => (1..=d).map(|q| NodeId::new(0, q)).collect(),
        SkipStyle::Simple => vec![NodeId::new(0, d)],
    };
    Ok(GraphPlan {
        depth: d,
        style: config.skip_style,
        nodes,
        inputs,
        heads,
    })
}

impl GraphPlan {
    /// Depth of the deepest head this plan produces.
    pub fn output_depth(&self) -> usize {
        self.heads.last().map_or(0, |h| h.n)
    }

    /// The sub-network of depth `q`: nodes with `m + n <= q` and the single
    /// head `X(0,q)`.
    pub fn prune(&self, q: usize) -> Result<GraphPlan> {
        if q == 0 || q > self.depth {
            return Err(config_err!("pruning depth {q} outside 1..={}", self.depth));
        }
        let head = NodeId::new(0, q);
        if !self.heads.contains(&head) {
            return Err(config_err!(
                "plan has no head at {head}; only {} is available",
                self.heads[0]
            ));
        }
        let nodes: Vec<NodeId> = self.nodes.iter().copied().filter(|id| id.m + id.n <= q).collect();
        let inputs = nodes.iter().map(|id| (*id, self.inputs[id].clone())).collect();
        Ok(GraphPlan {
            depth: self.depth,
            style: self.style,
            nodes,
            inputs,
            heads: vec![head],
        })
    }

    /// Checks that every edge refers to an earlier node.
    pub fn check_topological(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for id in &self.nodes {
            for e in &self.inputs[id] {
                if let Some(src) = e.source() {
                    if !seen.contains(&src) {
                        return Err(config_err!("{id} reads {src} before it is computed"));
                    }
                }
            }
            seen.insert(*id);
        }
        Ok(())
    }

    /// One `X(m,n) <- [edges]` line per node in plan order, then one
    /// `head X(0,q)` line per supervised output.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for id in &self.nodes {
            let edges: Vec<String> = self.inputs[id].iter().map(Edge::to_string).collect();
            let _ = writeln!(s, "{id} <- [{}]", edges.join(", "));
        }
        for h in &self.heads {
            let _ = writeln!(s, "head {h}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(depth: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            depth,
            filters: (0..=depth).map(|i| 4 << i).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn dense_grid_size() {
        let plan = build_plan(&ArchitectureConfig::default()).unwrap();
        assert_eq!(plan.nodes.len(), 15);
        assert_eq!(plan.heads.len(), 4);
        plan.check_topological().unwrap();
    }

    #[test]
    fn known_inputs() {
        let plan = build_plan(&ArchitectureConfig::default()).unwrap();
        assert_eq!(
            plan.inputs[&NodeId::new(0, 2)],
            vec![
                Edge::Same(NodeId::new(0, 0)),
                Edge::Same(NodeId::new(0, 1)),
                Edge::Up(NodeId::new(1, 1))
            ]
        );
        assert_eq!(plan.inputs[&NodeId::new(3, 0)], vec![Edge::Pool(NodeId::new(2, 0))]);
    }

    #[test]
    fn in_degree_all_depths() {
        for d in 1..=4 {
            let plan = build_plan(&dense(d)).unwrap();
            plan.check_topological().unwrap();
            for id in &plan.nodes {
                let e = &plan.inputs[id];
                if id.n > 0 {
                    let same = e.iter().filter(|e| matches!(e, Edge::Same(_))).count();
                    let up = e.iter().filter(|e| matches!(e, Edge::Up(_))).count();
                    assert_eq!((same, up, e.len()), (id.n, 1, id.n + 1), "{id}");
                } else {
                    assert_eq!(e.len(), 1);
                }
            }
        }
    }

    #[test]
    fn prune_level_one() {
        let plan = build_plan(&ArchitectureConfig::default()).unwrap();
        let p1 = plan.prune(1).unwrap();
        let mut got = p1.nodes.clone();
        got.sort();
        assert_eq!(got, vec![NodeId::new(0, 0), NodeId::new(0, 1), NodeId::new(1, 0)]);
        assert_eq!(p1.heads, vec![NodeId::new(0, 1)]);
        let p4 = plan.prune(4).unwrap();
        assert_eq!(p4.nodes, plan.nodes);
        assert_eq!(p4.heads, vec![NodeId::new(0, 4)]);
        assert!(plan.prune(0).is_err());
        assert!(plan.prune(5).is_err());
    }

    #[test]
    fn simple_style_is_u_shape() {
        let cfg = Preset::UNet.config(1);
        let plan = build_plan(&cfg).unwrap();
        assert_eq!(plan.nodes.len(), 9);
        assert_eq!(plan.heads, vec![NodeId::new(0, 4)]);
        assert_eq!(
            plan.inputs[&NodeId::new(1, 3)],
            vec![Edge::Same(NodeId::new(1, 0)), Edge::Up(NodeId::new(2, 2))]
        );
        plan.check_topological().unwrap();
        assert!(plan.prune(2).is_err());
    }

    #[test]
    fn filters_length_checked() {
        let cfg = ArchitectureConfig {
            filters: vec![8, 16],
            ..Default::default()
        };
        assert!(build_plan(&cfg).is_err());
    }

    #[test]
    fn golden_dump_depth_two() {
        let plan = build_plan(&dense(2)).unwrap();
        let want = "\
X(0,0) <- [input]
X(1,0) <- [pool(X(0,0))]
X(0,1) <- [X(0,0), up(X(1,0))]
X(2,0) <- [pool(X(1,0))]
X(1,1) <- [X(1,0), up(X(2,0))]
X(0,2) <- [X(0,0), X(0,1), up(X(1,1))]
head X(0,1)
head X(0,2)
";
        assert_eq!(plan.dump(), want);
    }
}
