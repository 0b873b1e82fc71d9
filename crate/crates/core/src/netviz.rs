//! Ordered-network ("circle plot") view of segment starts and stops.
//!
//! Every distinct start or stop timestamp becomes a node; every segment is an
//! edge from its start node to its stop node, weighted by its peak absolute
//! difference. Runs of nodes between returns to zero open segments form
//! N-components, each of which maps to a tied, non-negative walk.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;

use crate::disloc::DislocationSegment;
use crate::types::{TimeUs, DAY_US};

/// Nodes per ray in the radial layout.
pub const RAY_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventNode {
    pub index: usize,
    pub ts: TimeUs,
    pub starts: u32,
    pub stops: u32,
}

impl EventNode {
    pub fn net(&self) -> i64 {
        self.starts as i64 - self.stops as i64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Edge {
    /// Sum of the segments' peak absolute differences, price units.
    pub weight_e4: i64,
    pub count: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrderedNetwork {
    pub nodes: Vec<EventNode>,
    /// Keyed by (start node, stop node). Zero-duration segments give `i == j`.
    pub edges: BTreeMap<(usize, usize), Edge>,
}

/// Build the network. With `modulo_day`, timestamps are reduced to time of
/// day first so that several days fold onto a single day's nodes.
pub fn build(segments: &[DislocationSegment], modulo_day: bool) -> OrderedNetwork {
    let key = |t: TimeUs| if modulo_day { t.time_of_day() } else { t };
    let mut counts: BTreeMap<TimeUs, (u32, u32)> = BTreeMap::new();
    for s in segments {
        counts.entry(key(s.start)).or_default().0 += 1;
        counts.entry(key(s.end)).or_default().1 += 1;
    }
    let nodes: Vec<EventNode> = counts
        .iter()
        .enumerate()
        .map(|(index, (&ts, &(starts, stops)))| EventNode { index, ts, starts, stops })
        .collect();
    let index_of: BTreeMap<TimeUs, usize> = nodes.iter().map(|n| (n.ts, n.index)).collect();
    let mut edges: BTreeMap<(usize, usize), Edge> = BTreeMap::new();
    for s in segments {
        let e = edges.entry((index_of[&key(s.start)], index_of[&key(s.end)])).or_default();
        e.weight_e4 += s.peak_abs().0;
        e.count += 1;
    }
    OrderedNetwork { nodes, edges }
}

/// A contiguous run of node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub nodes: std::ops::Range<usize>,
}

impl Component {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }
}

/// Split the nodes into components: a component closes at the first node
/// after which no segment remains open.
pub fn components(net: &OrderedNetwork) -> Vec<Component> {
    let mut out = Vec::new();
    let mut open = 0i64;
    let mut first = 0usize;
    for n in &net.nodes {
        open += n.net();
        if open == 0 {
            out.push(Component { nodes: first..n.index + 1 });
            first = n.index + 1;
        }
    }
    if first < net.nodes.len() {
        // Only reachable when fed segments whose stops are missing.
        out.push(Component { nodes: first..net.nodes.len() });
    }
    out
}

/// The open-segment count along a component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TiedWalk {
    pub steps: Vec<i64>,
    /// `values[0] = 0` followed by the running sum after each step.
    pub values: Vec<i64>,
}

impl TiedWalk {
    pub fn is_tied(&self) -> bool {
        self.values.first() == Some(&0) && self.values.last() == Some(&0)
    }

    pub fn is_non_negative(&self) -> bool {
        self.values.iter().all(|&x| x >= 0)
    }
}

pub fn walk(net: &OrderedNetwork, c: &Component) -> TiedWalk {
    let steps: Vec<i64> = net.nodes[c.nodes.clone()].iter().map(EventNode::net).collect();
    let mut values = Vec::with_capacity(steps.len() + 1);
    let mut x = 0;
    values.push(x);
    for s in &steps {
        x += s;
        values.push(x);
    }
    TiedWalk { steps, values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutMode {
    /// Angle proportional to time of day.
    RealTime,
    /// Nodes at uniform spacing by index.
    EventSpace,
}

impl std::str::FromStr for LayoutMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real-time" | "realtime" => Ok(LayoutMode::RealTime),
            "event-space" | "eventspace" => Ok(LayoutMode::EventSpace),
            _ => Err(format!("unknown layout {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeLayout {
    pub ray: usize,
    pub pos_in_ray: usize,
    /// Radians in `[0, 2pi)`.
    pub angle: f64,
}

/// Nodes are grouped in rays of [`RAY_LEN`] consecutive indices. In event
/// space each ray sits at a uniform angle; in real time each node's angle
/// follows its time of day.
pub fn renormalize(net: &OrderedNetwork, mode: LayoutMode) -> Vec<NodeLayout> {
    let rays = net.nodes.len().div_ceil(RAY_LEN).max(1);
    net.nodes
        .iter()
        .map(|n| {
            let ray = n.index / RAY_LEN;
            let angle = match mode {
                LayoutMode::EventSpace => TAU * ray as f64 / rays as f64,
                LayoutMode::RealTime => TAU * n.ts.time_of_day().0 as f64 / DAY_US as f64,
            };
            NodeLayout { ray, pos_in_ray: n.index % RAY_LEN, angle }
        })
        .collect()
}

pub const NODES_CSV_HEADER: &str = "index,ts_us,starts,stops,ray,pos_in_ray,angle";
pub const EDGES_CSV_HEADER: &str = "i,j,weight_e4,count";
pub const COMPONENTS_CSV_HEADER: &str = "component_id,node_indices,walk_steps";

pub fn nodes_csv(net: &OrderedNetwork, layout: &[NodeLayout]) -> String {
    let mut out = format!("{NODES_CSV_HEADER}\n");
    for (n, l) in net.nodes.iter().zip(layout) {
        let _ =
            writeln!(out, "{},{},{},{},{},{},{:.6}", n.index, n.ts.0, n.starts, n.stops, l.ray, l.pos_in_ray, l.angle);
    }
    out
}

pub fn edges_csv(net: &OrderedNetwork) -> String {
    let mut out = format!("{EDGES_CSV_HEADER}\n");
    for ((i, j), e) in &net.edges {
        let _ = writeln!(out, "{i},{j},{},{}", e.weight_e4, e.count);
    }
    out
}

/// Node indices and walk steps are space-separated inside their fields.
pub fn components_csv(net: &OrderedNetwork, comps: &[Component]) -> String {
    let mut out = format!("{COMPONENTS_CSV_HEADER}\n");
    for (id, c) in comps.iter().enumerate() {
        let idx: Vec<String> = c.nodes.clone().map(|i| i.to_string()).collect();
        let steps: Vec<String> = walk(net, c).steps.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{id},{},{}", idx.join(" "), steps.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Price, Side, Symbol};
    use proptest::prelude::*;

    fn seg(start: u64, end: u64, mag: i64) -> DislocationSegment {
        DislocationSegment {
            symbol: Symbol::new("AAPL").unwrap(),
            side: Side::Offer,
            start: TimeUs(start),
            end: TimeUs(end),
            direction: -1,
            min_dp: Price(-mag),
            max_dp: Price(-mag / 2),
            min_mag: Price(mag / 2),
            max_mag: Price(mag),
            truncated: false,
            flip_start: false,
        }
    }

    #[test]
    fn single_segment() {
        let net = build(&[seg(10, 20, 300)], false);
        assert_eq!(net.nodes.len(), 2);
        assert_eq!(net.edges.len(), 1);
        assert_eq!(net.edges[&(0, 1)], Edge { weight_e4: 300, count: 1 });
    }

    #[test]
    fn shared_endpoints_sum() {
        let net = build(&[seg(10, 20, 100), seg(10, 20, 200)], false);
        assert_eq!(net.edges[&(0, 1)], Edge { weight_e4: 300, count: 2 });
    }

    #[test]
    fn interleaved_pair_is_one_four_component() {
        let net = build(&[seg(1, 3, 100), seg(2, 4, 100)], false);
        assert_eq!(net.nodes.len(), 4);
        assert!(net.edges.contains_key(&(0, 2)) && net.edges.contains_key(&(1, 3)));
        let comps = components(&net);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].size(), 4);
        let w = walk(&net, &comps[0]);
        assert_eq!(w.steps, vec![1, 1, -1, -1]);
        assert_eq!(w.values, vec![0, 1, 2, 1, 0]);
    }

    #[test]
    fn sequential_pairs_are_two_components() {
        let net = build(&[seg(1, 2, 100), seg(3, 4, 100)], false);
        let comps = components(&net);
        assert_eq!(comps.iter().map(Component::size).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!(walk(&net, &comps[0]).values, vec![0, 1, 0]);
        assert!(components(&build(&[], false)).is_empty());
    }

    #[test]
    fn net_step_at_shared_node() {
        // Node at t=5 has two starts and one stop.
        let net = build(&[seg(1, 5, 100), seg(5, 9, 100), seg(5, 9, 100)], false);
        let w = walk(&net, &components(&net)[0]);
        assert_eq!(w.steps, vec![1, 1, -2]);
    }

    #[test]
    fn modulo_day_merges_nodes() {
        let net = build(&[seg(100, 200, 100), seg(DAY_US + 100, DAY_US + 200, 100)], true);
        assert_eq!(net.nodes.len(), 2);
        assert_eq!(net.edges[&(0, 1)].count, 2);
    }

    #[test]
    fn layouts() {
        let segs: Vec<_> = (0..10).map(|k| seg(k * 100, k * 100 + 50, 100)).collect();
        let net = build(&segs, false);
        let l = renormalize(&net, LayoutMode::EventSpace);
        assert_eq!(l.len(), 20);
        assert!(l[..10].iter().all(|n| n.ray == 0) && l[10..].iter().all(|n| n.ray == 1));
        assert_eq!(l[9].pos_in_ray, 9);

        let rt = renormalize(&build(&[seg(0, 1000, 1), seg(2000, 3000, 1)], false), LayoutMode::RealTime);
        let gaps: Vec<f64> = rt.windows(2).map(|w| w[1].angle - w[0].angle).collect();
        assert!(gaps.iter().all(|g| (g - gaps[0]).abs() < 1e-12));

        let single = build(&[seg(7, 7, 1)], false);
        let l = renormalize(&single, LayoutMode::EventSpace);
        assert_eq!((l[0].ray, l[0].pos_in_ray, l[0].angle), (0, 0, 0.0));
    }

    fn segments_strategy() -> impl Strategy<Value = Vec<DislocationSegment>> {
        prop::collection::vec((0u64..500, 0u64..50, 1i64..1000), 0..40)
            .prop_map(|v| v.into_iter().map(|(s, d, m)| seg(s, s + d, m)).collect())
    }

    proptest! {
        #[test]
        fn walks_are_tied_and_non_negative(segs in segments_strategy()) {
            let net = build(&segs, false);
            for c in components(&net) {
                let w = walk(&net, &c);
                prop_assert!(w.is_tied() && w.is_non_negative());
            }
        }

        #[test]
        fn edge_weight_conservation(segs in segments_strategy()) {
            let net = build(&segs, false);
            let total: i64 = net.edges.values().map(|e| e.weight_e4).sum();
            prop_assert_eq!(total, segs.iter().map(|s| s.peak_abs().0).sum::<i64>());
            prop_assert_eq!(net.edges.values().map(|e| e.count as usize).sum::<usize>(), segs.len());
        }

        /// Components correspond to the times the raw open-segment count
        /// returns to zero, counted directly from segment endpoints.
        #[test]
        fn component_count_matches_zero_returns(segs in segments_strategy()) {
            let mut times: Vec<u64> = segs.iter().flat_map(|s| [s.start.0, s.end.0]).collect();
            times.sort_unstable();
            times.dedup();
            let mut returns = 0;
            for &t in &times {
                let open = segs.iter().filter(|s| s.start.0 <= t && s.end.0 > t).count();
                if open == 0 {
                    returns += 1;
                }
            }
            prop_assert_eq!(components(&build(&segs, false)).len(), returns);
        }
    }
}
