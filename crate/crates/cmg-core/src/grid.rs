//! Three-phase network model: nodes, edges, generators, node groups,
//! plus ingestion from the declarative feeder description and the
//! single-phase aggregation used by the hourly scheduling stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GenId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NgId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZoneId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
impl fmt::Display for GenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
impl fmt::Display for NgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i]
    }

    pub fn label(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Set of phases present at a node or edge, ordered (a, b, c).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseMask(pub u8);

impl PhaseMask {
    pub const ABC: PhaseMask = PhaseMask(0b111);

    pub fn from_str_mask(s: &str) -> Option<PhaseMask> {
        let mut m = 0u8;
        for c in s.chars() {
            match c.to_ascii_lowercase() {
                'a' => m |= 1,
                'b' => m |= 2,
                'c' => m |= 4,
                _ => return None,
            }
        }
        if m == 0 {
            None
        } else {
            Some(PhaseMask(m))
        }
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: PhaseMask) -> PhaseMask {
        PhaseMask(self.0 | other.0)
    }
}

impl fmt::Display for PhaseMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.label())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadClass {
    Critical,
    NonCritical,
    None,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub phases: PhaseMask,
    /// Per-phase peak real load, indexed (a, b, c); zero on absent phases.
    pub peak_kw: [f64; 3],
    pub peak_kvar: [f64; 3],
    pub class: LoadClass,
    /// Priority weight by load type; critical loads always outrank
    /// non-critical ones.
    pub omega1: f64,
    /// Demand-response zone: nodes sharing a zone switch together.
    pub zone: ZoneId,
}

impl Node {
    pub fn total_peak_kw(&self) -> f64 {
        self.peak_kw.iter().sum()
    }

    pub fn total_peak_kvar(&self) -> f64 {
        self.peak_kvar.iter().sum()
    }

    pub fn has_load(&self) -> bool {
        self.class != LoadClass::None && self.total_peak_kw() > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub phases: PhaseMask,
    /// Phase-pair impedance in ohms, full 3x3 with zeros on absent pairs.
    pub r_ohm: [[f64; 3]; 3],
    pub x_ohm: [[f64; 3]; 3],
    /// Per-unit impedances, filled during load against the declared base.
    pub r_pu: [[f64; 3]; 3],
    pub x_pu: [[f64; 3]; 3],
    /// Per-phase flow limits (kW / kvar); None means "derive from feeder
    /// peak" downstream.
    pub p_limit_kw: Option<f64>,
    pub q_limit_kvar: Option<f64>,
    pub is_switch: bool,
    pub normally_open: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    /// Utility-scale plant with curtailment and reactive capability.
    PvControllable,
    /// Behind-the-meter rooftop unit: single-phase, no reactive output,
    /// produces its availability whenever its node is energized.
    PvBtm,
    Storage,
    Diesel,
}

#[derive(Debug, Clone)]
pub struct EsParams {
    pub e_kwh: f64,
    /// Hard operational SOC floor/ceiling (percent).
    pub soc_op_min: f64,
    pub soc_op_max: f64,
    pub soc_init: f64,
    pub grid_forming: bool,
}

#[derive(Debug, Clone)]
pub struct DgParams {
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub q_min_kvar: f64,
    pub q_max_kvar: f64,
    pub ramp_kw_per_h: f64,
    pub fuel_cap_l: f64,
    pub fuel_init_l: f64,
    pub fuel_min_l: f64,
    /// Fuel burn per kWh produced.
    pub alpha_l_per_kwh: f64,
    /// Fuel burn per rated-kW-hour while committed.
    pub beta_l_per_kwh: f64,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub id: GenId,
    pub node: NodeId,
    pub kind: GenKind,
    pub phases: PhaseMask,
    pub s_kva: f64,
    pub es: Option<EsParams>,
    pub dg: Option<DgParams>,
}

#[derive(Debug, Clone)]
pub struct NodeGroup {
    pub id: NgId,
    pub nodes: Vec<NodeId>,
    pub parent: Option<NgId>,
    /// Switch edge toward the parent group; absent only on the microgrid
    /// group itself.
    pub tie_edge: Option<EdgeId>,
    pub has_critical_load: bool,
}

#[derive(Debug, Clone)]
pub struct BaseSpec {
    pub kva: f64,
    pub kv_ll: f64,
    pub slack_v_pu: f64,
}

impl BaseSpec {
    /// Three-phase impedance base in ohms.
    pub fn z_base_ohm(&self) -> f64 {
        self.kv_ll * self.kv_ll * 1000.0 / self.kva
    }

    /// Per-phase power base in kW for per-unit flow quantities.
    pub fn s_base_1ph_kw(&self) -> f64 {
        self.kva / 3.0
    }
}

/// A demand-response zone: the set of node indices switched by one
/// binary per phase.
#[derive(Debug, Clone)]
pub struct Zone {
    pub id: ZoneId,
    pub node_idxs: Vec<usize>,
    pub phases: PhaseMask,
    pub class: LoadClass,
}

/// Validated, immutable network model. Safe to share read-only across
/// concurrent stage solves.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub base: BaseSpec,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub gens: Vec<Generator>,
    pub ngs: Vec<NodeGroup>,
    pub zones: Vec<Zone>,
    node_index: BTreeMap<NodeId, usize>,
    gen_index: BTreeMap<GenId, usize>,
    ng_index: BTreeMap<NgId, usize>,
    ng_of_node: Vec<NgId>,
    grid_forming: GenId,
}

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("failed to parse feeder description: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (expected 1)")]
    SchemaVersion(u32),
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u32 },
    #[error("edge {edge} references missing node {node}")]
    DanglingEdge { edge: EdgeId, node: u32 },
    #[error("generator {gen} declares phase(s) absent at node {node}")]
    GeneratorPhaseMismatch { gen: GenId, node: NodeId },
    #[error("closed topology contains a cycle through edges {0:?}")]
    NonRadial(Vec<EdgeId>),
    #[error("node {0} belongs to no node group or to several")]
    NgCoverage(NodeId),
    #[error("node group {0}: {1}")]
    BadNodeGroup(NgId, String),
    #[error("load declared on phase {phase} absent at node {node}")]
    LoadOnAbsentPhase { node: NodeId, phase: Phase },
    #[error("impedance matrix of edge {0} is not symmetric")]
    AsymmetricImpedance(EdgeId),
    #[error("exactly one grid-forming storage unit required, found {0}")]
    GridFormingCount(usize),
    #[error("behind-the-meter PV {0} must be single-phase")]
    BtmNotSinglePhase(GenId),
    #[error("critical-load weight must exceed every non-critical weight (node {0})")]
    PriorityOrdering(NodeId),
    #[error("{0}")]
    Invalid(String),
}

impl NetworkModel {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[self.node_index[&id]]
    }

    pub fn node_idx(&self, id: NodeId) -> usize {
        self.node_index[&id]
    }

    pub fn gen(&self, id: GenId) -> &Generator {
        &self.gens[self.gen_index[&id]]
    }

    pub fn ng(&self, id: NgId) -> &NodeGroup {
        &self.ngs[self.ng_index[&id]]
    }

    pub fn ng_of(&self, node: NodeId) -> NgId {
        self.ng_of_node[self.node_index[&node]]
    }

    pub fn grid_forming_gen(&self) -> &Generator {
        self.gen(self.grid_forming)
    }

    pub fn grid_forming_id(&self) -> GenId {
        self.grid_forming
    }

    /// The microgrid's own node group (id 1 by construction).
    pub fn cmg(&self) -> &NodeGroup {
        &self.ngs[self.ng_index[&NgId(1)]]
    }

    pub fn zone(&self, id: ZoneId) -> &Zone {
        self.zones.iter().find(|z| z.id == id).expect("zone exists")
    }

    /// Generators attached to nodes of the given group.
    pub fn gens_in_ng(&self, ng: NgId) -> impl Iterator<Item = &Generator> {
        self.gens.iter().filter(move |g| self.ng_of(g.node) == ng)
    }

    /// Total feeder peak real load in kW.
    pub fn feeder_peak_kw(&self) -> f64 {
        self.nodes.iter().map(Node::total_peak_kw).sum()
    }

    /// All parent-child group pairs, parents first, in breadth-first
    /// order from the microgrid group.
    pub fn ng_ancestry(&self) -> Vec<(NgId, NgId)> {
        let mut out = Vec::new();
        let mut order = vec![NgId(1)];
        let mut i = 0;
        while i < order.len() {
            let cur = order[i];
            i += 1;
            let mut children: Vec<NgId> = self
                .ngs
                .iter()
                .filter(|g| g.parent == Some(cur))
                .map(|g| g.id)
                .collect();
            children.sort();
            for c in children {
                out.push((cur, c));
                order.push(c);
            }
        }
        out
    }

    /// Edges with both endpoints inside the energized group set and whose
    /// normal state (or tie activation) closes them.
    pub fn energized_closed_edges<'a>(
        &'a self,
        energized: &'a BTreeSet<NgId>,
    ) -> impl Iterator<Item = &'a Edge> + 'a {
        let tie_edges: BTreeSet<EdgeId> = self
            .ngs
            .iter()
            .filter(|g| energized.contains(&g.id))
            .filter_map(|g| g.tie_edge)
            .collect();
        self.edges.iter().filter(move |e| {
            let from_ok = energized.contains(&self.ng_of(e.from));
            let to_ok = energized.contains(&self.ng_of(e.to));
            if !(from_ok && to_ok) {
                return false;
            }
            if tie_edges.contains(&e.id) {
                return true;
            }
            !e.normally_open
        })
    }
}

// ---------------------------------------------------------------------
// feeder description ingestion
// ---------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeeder {
    schema_version: u32,
    base: RawBase,
    #[serde(default)]
    node: Vec<RawNode>,
    #[serde(default)]
    edge: Vec<RawEdge>,
    #[serde(default)]
    generator: Vec<RawGen>,
    #[serde(default)]
    node_group: Vec<RawNg>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBase {
    kva: f64,
    kv_ll: f64,
    #[serde(default = "default_slack_v")]
    slack_v_pu: f64,
}

fn default_slack_v() -> f64 {
    1.04
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: u32,
    phases: String,
    #[serde(default)]
    load_class: Option<String>,
    #[serde(default)]
    peak_kw: Vec<f64>,
    #[serde(default)]
    peak_kvar: Vec<f64>,
    #[serde(default)]
    omega1: Option<f64>,
    #[serde(default)]
    dr_zone: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    id: u32,
    from: u32,
    to: u32,
    phases: String,
    r: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    #[serde(default)]
    p_limit_kw: Option<f64>,
    #[serde(default)]
    q_limit_kvar: Option<f64>,
    #[serde(default)]
    is_switch: bool,
    #[serde(default)]
    normal_state: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGen {
    id: u32,
    node: u32,
    kind: String,
    phases: String,
    s_kva: f64,
    #[serde(default)]
    e_kwh: Option<f64>,
    #[serde(default)]
    soc_op_min: Option<f64>,
    #[serde(default)]
    soc_op_max: Option<f64>,
    #[serde(default)]
    soc_init: Option<f64>,
    #[serde(default)]
    grid_forming: Option<bool>,
    #[serde(default)]
    p_min_kw: Option<f64>,
    #[serde(default)]
    p_max_kw: Option<f64>,
    #[serde(default)]
    q_min_kvar: Option<f64>,
    #[serde(default)]
    q_max_kvar: Option<f64>,
    #[serde(default)]
    ramp_kw_per_h: Option<f64>,
    #[serde(default)]
    fuel_cap_l: Option<f64>,
    #[serde(default)]
    fuel_init_l: Option<f64>,
    #[serde(default)]
    fuel_min_l: Option<f64>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    beta: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNg {
    id: u32,
    nodes: Vec<u32>,
    #[serde(default)]
    parent: Option<u32>,
    #[serde(default)]
    tie_edge: Option<u32>,
}

/// Parse and validate a feeder description (TOML text) into a network
/// model with impedances normalized to the declared base.
pub fn load_network(text: &str) -> Result<NetworkModel, GridError> {
    let raw: RawFeeder = toml::from_str(text).map_err(|e| GridError::Parse(e.to_string()))?;
    if raw.schema_version != 1 {
        return Err(GridError::SchemaVersion(raw.schema_version));
    }
    let base = BaseSpec {
        kva: raw.base.kva,
        kv_ll: raw.base.kv_ll,
        slack_v_pu: raw.base.slack_v_pu,
    };
    if base.kva <= 0.0 || base.kv_ll <= 0.0 {
        return Err(GridError::Invalid("base kva/kv must be positive".into()));
    }

    // nodes
    let mut node_index = BTreeMap::new();
    let mut nodes = Vec::with_capacity(raw.node.len());
    for rn in &raw.node {
        if node_index.contains_key(&NodeId(rn.id)) {
            return Err(GridError::DuplicateId {
                kind: "node",
                id: rn.id,
            });
        }
        let phases = PhaseMask::from_str_mask(&rn.phases)
            .ok_or_else(|| GridError::Parse(format!("node {}: bad phases", rn.id)))?;
        let class = match rn.load_class.as_deref() {
            Some("cl") => LoadClass::Critical,
            Some("ncl") => LoadClass::NonCritical,
            None | Some("none") => LoadClass::None,
            Some(other) => {
                return Err(GridError::Parse(format!(
                    "node {}: unknown load_class {:?}",
                    rn.id, other
                )))
            }
        };
        let mut peak_kw = [0.0; 3];
        let mut peak_kvar = [0.0; 3];
        let present: Vec<Phase> = phases.iter().collect();
        if !rn.peak_kw.is_empty() && rn.peak_kw.len() != present.len() {
            return Err(GridError::Parse(format!(
                "node {}: peak_kw length {} != phase count {}",
                rn.id,
                rn.peak_kw.len(),
                present.len()
            )));
        }
        for (i, p) in present.iter().enumerate() {
            peak_kw[p.index()] = rn.peak_kw.get(i).copied().unwrap_or(0.0);
            peak_kvar[p.index()] = rn.peak_kvar.get(i).copied().unwrap_or(0.0);
        }
        // loads only on present phases is structural here; a nonzero load
        // with class None is rejected instead
        if class == LoadClass::None && (peak_kw.iter().sum::<f64>() > 0.0) {
            return Err(GridError::Parse(format!(
                "node {}: load values require a load_class",
                rn.id
            )));
        }
        let idx = nodes.len();
        node_index.insert(NodeId(rn.id), idx);
        nodes.push(Node {
            id: NodeId(rn.id),
            phases,
            peak_kw,
            peak_kvar,
            class,
            omega1: rn.omega1.unwrap_or(f64::NAN), // resolved after groups
            zone: ZoneId(rn.dr_zone.unwrap_or(rn.id)),
        });
    }

    // edges
    let mut edges = Vec::with_capacity(raw.edge.len());
    let mut edge_ids = BTreeSet::new();
    for re in &raw.edge {
        if !edge_ids.insert(re.id) {
            return Err(GridError::DuplicateId {
                kind: "edge",
                id: re.id,
            });
        }
        for endpoint in [re.from, re.to] {
            if !node_index.contains_key(&NodeId(endpoint)) {
                return Err(GridError::DanglingEdge {
                    edge: EdgeId(re.id),
                    node: endpoint,
                });
            }
        }
        let phases = PhaseMask::from_str_mask(&re.phases)
            .ok_or_else(|| GridError::Parse(format!("edge {}: bad phases", re.id)))?;
        let present: Vec<Phase> = phases.iter().collect();
        let n = present.len();
        if re.r.len() != n || re.x.len() != n || re.r.iter().any(|row| row.len() != n) {
            return Err(GridError::Parse(format!(
                "edge {}: impedance matrices must be {}x{}",
                re.id, n, n
            )));
        }
        let mut r_ohm = [[0.0; 3]; 3];
        let mut x_ohm = [[0.0; 3]; 3];
        for (i, pi) in present.iter().enumerate() {
            for (j, pj) in present.iter().enumerate() {
                r_ohm[pi.index()][pj.index()] = re.r[i][j];
                x_ohm[pi.index()][pj.index()] = re.x[i][j];
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                if (r_ohm[i][j] - r_ohm[j][i]).abs() > 1e-9
                    || (x_ohm[i][j] - x_ohm[j][i]).abs() > 1e-9
                {
                    return Err(GridError::AsymmetricImpedance(EdgeId(re.id)));
                }
            }
        }
        let zb = base.z_base_ohm();
        let mut r_pu = [[0.0; 3]; 3];
        let mut x_pu = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r_pu[i][j] = r_ohm[i][j] / zb;
                x_pu[i][j] = x_ohm[i][j] / zb;
            }
        }
        let normally_open = match re.normal_state.as_deref() {
            Some("open") => true,
            Some("closed") | None => false,
            Some(other) => {
                return Err(GridError::Parse(format!(
                    "edge {}: unknown normal_state {:?}",
                    re.id, other
                )))
            }
        };
        edges.push(Edge {
            id: EdgeId(re.id),
            from: NodeId(re.from),
            to: NodeId(re.to),
            phases,
            r_ohm,
            x_ohm,
            r_pu,
            x_pu,
            p_limit_kw: re.p_limit_kw,
            q_limit_kvar: re.q_limit_kvar,
            is_switch: re.is_switch,
            normally_open,
        });
    }

    // node groups
    let mut ngs = Vec::with_capacity(raw.node_group.len());
    let mut ng_ids = BTreeSet::new();
    for rg in &raw.node_group {
        if !ng_ids.insert(rg.id) {
            return Err(GridError::DuplicateId {
                kind: "node_group",
                id: rg.id,
            });
        }
        for n in &rg.nodes {
            if !node_index.contains_key(&NodeId(*n)) {
                return Err(GridError::BadNodeGroup(
                    NgId(rg.id),
                    format!("references missing node {}", n),
                ));
            }
        }
        ngs.push(NodeGroup {
            id: NgId(rg.id),
            nodes: rg.nodes.iter().map(|n| NodeId(*n)).collect(),
            parent: rg.parent.map(NgId),
            tie_edge: rg.tie_edge.map(EdgeId),
            has_critical_load: false, // filled below
        });
    }
    if !ng_ids.contains(&1) {
        return Err(GridError::Invalid(
            "node group 1 (the microgrid itself) must exist".into(),
        ));
    }

    // group coverage: disjoint and complete
    let mut ng_of_node: Vec<Option<NgId>> = vec![None; nodes.len()];
    for g in &ngs {
        for nid in &g.nodes {
            let idx = node_index[nid];
            if ng_of_node[idx].is_some() {
                return Err(GridError::NgCoverage(*nid));
            }
            ng_of_node[idx] = Some(g.id);
        }
    }
    if let Some(pos) = ng_of_node.iter().position(Option::is_none) {
        return Err(GridError::NgCoverage(nodes[pos].id));
    }
    let ng_of_node: Vec<NgId> = ng_of_node.into_iter().map(Option::unwrap).collect();

    // group tree rooted at 1
    for g in &ngs {
        if g.id == NgId(1) {
            if g.parent.is_some() || g.tie_edge.is_some() {
                return Err(GridError::BadNodeGroup(
                    g.id,
                    "the microgrid group takes no parent or tie edge".into(),
                ));
            }
        } else {
            let parent = g
                .parent
                .ok_or_else(|| GridError::BadNodeGroup(g.id, "missing parent".into()))?;
            if !ng_ids.contains(&parent.0) {
                return Err(GridError::BadNodeGroup(g.id, "unknown parent".into()));
            }
            let tie = g
                .tie_edge
                .ok_or_else(|| GridError::BadNodeGroup(g.id, "missing tie_edge".into()))?;
            let edge = edges
                .iter()
                .find(|e| e.id == tie)
                .ok_or_else(|| GridError::BadNodeGroup(g.id, "unknown tie_edge".into()))?;
            if !edge.is_switch {
                return Err(GridError::BadNodeGroup(g.id, "tie_edge is not a switch".into()));
            }
            let ng_from = ng_of_node[node_index[&edge.from]];
            let ng_to = ng_of_node[node_index[&edge.to]];
            let spans = (ng_from == g.id && ng_to == parent) || (ng_to == g.id && ng_from == parent);
            if !spans {
                return Err(GridError::BadNodeGroup(
                    g.id,
                    "tie_edge does not connect the group to its parent".into(),
                ));
            }
        }
    }
    // parent relation acyclic and rooted at 1
    for g in &ngs {
        let mut seen = BTreeSet::new();
        let mut cur = g.id;
        while cur != NgId(1) {
            if !seen.insert(cur) {
                return Err(GridError::BadNodeGroup(g.id, "parent relation has a cycle".into()));
            }
            cur = ngs
                .iter()
                .find(|x| x.id == cur)
                .and_then(|x| x.parent)
                .ok_or_else(|| GridError::BadNodeGroup(g.id, "not rooted at group 1".into()))?;
        }
    }

    // mark critical groups
    for g in &mut ngs {
        g.has_critical_load = g.nodes.iter().any(|nid| {
            let n = &nodes[node_index[nid]];
            n.class == LoadClass::Critical && n.has_load()
        });
    }

    // default priority weights: critical loads outrank non-critical ones
    // everywhere and in-microgrid loads outrank external loads of the
    // same class
    for (idx, node) in nodes.iter_mut().enumerate() {
        if node.omega1.is_nan() {
            let in_cmg = ng_of_node[idx] == NgId(1);
            node.omega1 = match (node.class, in_cmg) {
                (LoadClass::Critical, true) => 100.0,
                (LoadClass::Critical, false) => 50.0,
                (LoadClass::NonCritical, true) => 10.0,
                (LoadClass::NonCritical, false) => 1.0,
                (LoadClass::None, _) => 0.0,
            };
        }
    }
    let min_cl = nodes
        .iter()
        .filter(|n| n.class == LoadClass::Critical)
        .map(|n| n.omega1)
        .fold(f64::INFINITY, f64::min);
    for n in &nodes {
        if n.class == LoadClass::NonCritical && n.omega1 >= min_cl {
            return Err(GridError::PriorityOrdering(n.id));
        }
    }

    // generators
    let mut gens = Vec::with_capacity(raw.generator.len());
    let mut gen_ids = BTreeSet::new();
    let mut gf_count = 0usize;
    let mut grid_forming = GenId(0);
    for rg in &raw.generator {
        if !gen_ids.insert(rg.id) {
            return Err(GridError::DuplicateId {
                kind: "generator",
                id: rg.id,
            });
        }
        let node_id = NodeId(rg.node);
        let Some(&nidx) = node_index.get(&node_id) else {
            return Err(GridError::Invalid(format!(
                "generator {} on missing node {}",
                rg.id, rg.node
            )));
        };
        let phases = PhaseMask::from_str_mask(&rg.phases)
            .ok_or_else(|| GridError::Parse(format!("generator {}: bad phases", rg.id)))?;
        for p in phases.iter() {
            if !nodes[nidx].phases.contains(p) {
                return Err(GridError::GeneratorPhaseMismatch {
                    gen: GenId(rg.id),
                    node: node_id,
                });
            }
        }
        let kind = match rg.kind.as_str() {
            "pv_c" => GenKind::PvControllable,
            "pv_btm" => GenKind::PvBtm,
            "es" => GenKind::Storage,
            "dg" => GenKind::Diesel,
            other => {
                return Err(GridError::Parse(format!(
                    "generator {}: unknown kind {:?}",
                    rg.id, other
                )))
            }
        };
        if kind == GenKind::PvBtm && phases.count() != 1 {
            return Err(GridError::BtmNotSinglePhase(GenId(rg.id)));
        }
        let es = if kind == GenKind::Storage {
            let gf = rg.grid_forming.unwrap_or(false);
            if gf {
                gf_count += 1;
                grid_forming = GenId(rg.id);
            }
            Some(EsParams {
                e_kwh: rg
                    .e_kwh
                    .ok_or_else(|| GridError::Parse(format!("es {} missing e_kwh", rg.id)))?,
                soc_op_min: rg.soc_op_min.unwrap_or(5.0),
                soc_op_max: rg.soc_op_max.unwrap_or(95.0),
                soc_init: rg.soc_init.unwrap_or(75.0),
                grid_forming: gf,
            })
        } else {
            None
        };
        let dg = if kind == GenKind::Diesel {
            let p_max = rg
                .p_max_kw
                .ok_or_else(|| GridError::Parse(format!("dg {} missing p_max_kw", rg.id)))?;
            Some(DgParams {
                p_min_kw: rg.p_min_kw.unwrap_or(0.0),
                p_max_kw: p_max,
                q_min_kvar: rg.q_min_kvar.unwrap_or(0.0),
                q_max_kvar: rg.q_max_kvar.unwrap_or(0.75 * p_max),
                ramp_kw_per_h: rg.ramp_kw_per_h.unwrap_or(p_max),
                fuel_cap_l: rg
                    .fuel_cap_l
                    .ok_or_else(|| GridError::Parse(format!("dg {} missing fuel_cap_l", rg.id)))?,
                fuel_init_l: rg.fuel_init_l.unwrap_or(rg.fuel_cap_l.unwrap()),
                fuel_min_l: rg.fuel_min_l.unwrap_or(0.0),
                alpha_l_per_kwh: rg.alpha.unwrap_or(0.244),
                beta_l_per_kwh: rg.beta.unwrap_or(0.014),
            })
        } else {
            None
        };
        gens.push(Generator {
            id: GenId(rg.id),
            node: node_id,
            kind,
            phases,
            s_kva: rg.s_kva,
            es,
            dg,
        });
    }
    if gf_count != 1 {
        return Err(GridError::GridFormingCount(gf_count));
    }

    // radiality of the closed subgraph; components must coincide with the
    // node groups, and closing every tie edge must yield a single tree
    let tie_edges: BTreeSet<EdgeId> = ngs.iter().filter_map(|g| g.tie_edge).collect();
    let closed: Vec<&Edge> = edges
        .iter()
        .filter(|e| !e.normally_open && !tie_edges.contains(&e.id))
        .collect();
    check_forest(&nodes, &node_index, &closed)?;
    // components == groups
    let comp = components(&nodes, &node_index, &closed);
    for (idx, node) in nodes.iter().enumerate() {
        let my_ng = ng_of_node[idx];
        for (jdx, other) in nodes.iter().enumerate() {
            if comp[idx] == comp[jdx] && ng_of_node[jdx] != my_ng {
                return Err(GridError::BadNodeGroup(
                    my_ng,
                    format!(
                        "nodes {} and {} are electrically joined but grouped apart",
                        node.id, other.id
                    ),
                ));
            }
        }
    }
    let all_closed: Vec<&Edge> = edges
        .iter()
        .filter(|e| !e.normally_open || tie_edges.contains(&e.id))
        .collect();
    check_forest(&nodes, &node_index, &all_closed)?;
    let comp_all = components(&nodes, &node_index, &all_closed);
    if comp_all.iter().any(|&c| c != comp_all[0]) {
        return Err(GridError::Invalid(
            "closing all tie edges must connect the full feeder".into(),
        ));
    }

    // zones: group member nodes, phases, class consistency
    let mut zone_map: BTreeMap<ZoneId, Zone> = BTreeMap::new();
    for (idx, node) in nodes.iter().enumerate() {
        if !node.has_load() {
            continue;
        }
        let z = zone_map.entry(node.zone).or_insert(Zone {
            id: node.zone,
            node_idxs: Vec::new(),
            phases: PhaseMask(0),
            class: node.class,
        });
        z.node_idxs.push(idx);
        z.phases = z.phases.union(node.phases);
        if z.class != node.class {
            return Err(GridError::Invalid(format!(
                "zone {} mixes critical and non-critical nodes",
                node.zone
            )));
        }
    }
    let zones: Vec<Zone> = zone_map.into_values().collect();

    let gen_index = gens
        .iter()
        .enumerate()
        .map(|(i, g)| (g.id, i))
        .collect::<BTreeMap<_, _>>();
    let ng_index = ngs
        .iter()
        .enumerate()
        .map(|(i, g)| (g.id, i))
        .collect::<BTreeMap<_, _>>();

    Ok(NetworkModel {
        base,
        nodes,
        edges,
        gens,
        ngs,
        zones,
        node_index,
        gen_index,
        ng_index,
        ng_of_node,
        grid_forming,
    })
}

/// Union-find cycle check; on a cycle, recover and report the edges on it.
fn check_forest(
    nodes: &[Node],
    node_index: &BTreeMap<NodeId, usize>,
    edges: &[&Edge],
) -> Result<(), GridError> {
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (k, e) in edges.iter().enumerate() {
        let a = find(&mut parent, node_index[&e.from]);
        let b = find(&mut parent, node_index[&e.to]);
        if a == b {
            // recover the cycle: path between endpoints in the forest built
            // from earlier edges, plus this edge
            let mut adj: BTreeMap<usize, Vec<(usize, EdgeId)>> = BTreeMap::new();
            for prev in &edges[..k] {
                let u = node_index[&prev.from];
                let v = node_index[&prev.to];
                adj.entry(u).or_default().push((v, prev.id));
                adj.entry(v).or_default().push((u, prev.id));
            }
            let src = node_index[&e.from];
            let dst = node_index[&e.to];
            let mut stack = vec![(src, usize::MAX)];
            let mut pred: BTreeMap<usize, (usize, EdgeId)> = BTreeMap::new();
            while let Some((u, from)) = stack.pop() {
                if u == dst {
                    break;
                }
                if let Some(nexts) = adj.get(&u) {
                    for &(v, eid) in nexts {
                        if v != from && !pred.contains_key(&v) && v != src {
                            pred.insert(v, (u, eid));
                            stack.push((v, u));
                        }
                    }
                }
            }
            let mut cycle = vec![e.id];
            let mut cur = dst;
            while let Some(&(prev, eid)) = pred.get(&cur) {
                cycle.push(eid);
                cur = prev;
                if cur == src {
                    break;
                }
            }
            cycle.sort();
            return Err(GridError::NonRadial(cycle));
        }
        parent[a] = b;
    }
    Ok(())
}

fn components(
    nodes: &[Node],
    node_index: &BTreeMap<NodeId, usize>,
    edges: &[&Edge],
) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for e in edges {
        let a = find(&mut parent, node_index[&e.from]);
        let b = find(&mut parent, node_index[&e.to]);
        parent[a] = b;
    }
    (0..nodes.len())
        .map(|i| find(&mut parent, i))
        .collect()
}

// ---------------------------------------------------------------------
// single-phase aggregation
// ---------------------------------------------------------------------

/// Per-node loads and generator ratings summed across phases; topology is
/// reduced to group-level resource lists for the hourly stage.
#[derive(Debug, Clone)]
pub struct AggregatedModel {
    pub nodes: Vec<AggNode>,
    pub ngs: Vec<AggNg>,
}

#[derive(Debug, Clone)]
pub struct AggNode {
    pub node: NodeId,
    pub ng: NgId,
    pub class: LoadClass,
    pub omega1: f64,
    pub peak_kw: f64,
    pub peak_kvar: f64,
}

#[derive(Debug, Clone)]
pub struct AggNg {
    pub id: NgId,
    pub parent: Option<NgId>,
    pub has_critical_load: bool,
    pub gens: Vec<GenId>,
    pub node_idxs: Vec<usize>,
}

pub fn aggregate_single_phase(model: &NetworkModel) -> AggregatedModel {
    let mut nodes = Vec::with_capacity(model.nodes.len());
    for n in &model.nodes {
        nodes.push(AggNode {
            node: n.id,
            ng: model.ng_of(n.id),
            class: n.class,
            omega1: n.omega1,
            peak_kw: n.total_peak_kw(),
            peak_kvar: n.total_peak_kvar(),
        });
    }
    let mut ngs = Vec::with_capacity(model.ngs.len());
    for g in &model.ngs {
        let gens = model.gens_in_ng(g.id).map(|x| x.id).collect();
        let node_idxs = nodes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.ng == g.id)
            .map(|(i, _)| i)
            .collect();
        ngs.push(AggNg {
            id: g.id,
            parent: g.parent,
            has_critical_load: g.has_critical_load,
            gens,
            node_idxs,
        });
    }
    AggregatedModel { nodes, ngs }
}
