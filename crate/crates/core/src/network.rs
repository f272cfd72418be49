use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spef::SpefNet;

const FEMTO: f64 = 1e-15;

/// A conductance between two nodes, in siemens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub a: usize,
    pub b: usize,
    pub g: f64,
}

/// A grounded capacitor, in farads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundCap {
    pub node: usize,
    pub c: f64,
}

/// Linear RC network in SI units, driven by an ideal voltage source at
/// `driver_node` and observed (open circuit) at `output_node`.
///
/// Node indices refer to `node_ids`, which is sorted lexicographically when
/// built from SPEF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcNetwork {
    pub node_ids: Vec<String>,
    pub driver_node: usize,
    pub output_node: usize,
    pub conductances: Vec<Branch>,
    pub caps_to_ground: Vec<GroundCap>,
}

impl RcNetwork {
    pub fn new(
        node_ids: Vec<String>,
        driver_node: usize,
        output_node: usize,
        conductances: Vec<Branch>,
        caps_to_ground: Vec<GroundCap>,
    ) -> Result<Self> {
        let net = RcNetwork { node_ids, driver_node, output_node, conductances, caps_to_ground };
        net.validate()?;
        Ok(net)
    }

    /// Single-segment network: driver —R— node (C to ground), output at the node.
    pub fn single_rc(r_ohm: f64, c_farad: f64) -> Result<Self> {
        RcNetwork::new(
            vec!["drv".into(), "n1".into()],
            0,
            1,
            vec![Branch { a: 0, b: 1, g: 1.0 / r_ohm }],
            vec![GroundCap { node: 1, c: c_farad }],
        )
    }

    /// Uniform-or-not ladder in SI units: `r[k]` feeds node `k` from node
    /// `k-1` (node 0 is fed by the driver), `c[k]` grounds node `k`, and the
    /// output is the last node.
    pub fn ladder(r: &[f64], c: &[f64]) -> Result<Self> {
        if r.len() != c.len() || r.is_empty() {
            return Err(Error::InvalidNetwork("ladder needs matching non-empty r and c".into()));
        }
        let m = r.len();
        let mut ids = vec!["drv".to_string()];
        ids.extend((0..m).map(|k| format!("n{k:03}")));
        let conductances = r
            .iter()
            .enumerate()
            .map(|(k, &r)| Branch { a: k, b: k + 1, g: 1.0 / r })
            .collect();
        let caps = c.iter().enumerate().map(|(k, &c)| GroundCap { node: k + 1, c }).collect();
        RcNetwork::new(ids, 0, m, conductances, caps)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    /// Grounded capacitance at every node (zero where none is attached).
    pub fn node_caps(&self) -> Vec<f64> {
        let mut caps = vec![0.0; self.n_nodes()];
        for gc in &self.caps_to_ground {
            caps[gc.node] += gc.c;
        }
        caps
    }

    /// Nodes reachable from `start` through resistors.
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let n = self.n_nodes();
        let mut adj = vec![Vec::new(); n];
        for br in &self.conductances {
            adj[br.a].push(br.b);
            adj[br.b].push(br.a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.driver_node >= n || self.output_node >= n {
            return Err(Error::InvalidNetwork("driver or output index out of range".into()));
        }
        if self.driver_node == self.output_node {
            return Err(Error::InvalidNetwork("driver and output must differ".into()));
        }
        for br in &self.conductances {
            if br.a >= n || br.b >= n || br.a == br.b {
                return Err(Error::InvalidNetwork(format!("bad branch {}-{}", br.a, br.b)));
            }
            if !(br.g > 0.0) || !br.g.is_finite() {
                return Err(Error::InvalidNetwork(format!("conductance {} not positive", br.g)));
            }
        }
        for gc in &self.caps_to_ground {
            if gc.node >= n || !(gc.c >= 0.0) || !gc.c.is_finite() {
                return Err(Error::InvalidNetwork(format!("bad capacitor at node {}", gc.node)));
            }
        }
        if !self.reachable_from(self.driver_node)[self.output_node] {
            return Err(Error::DisconnectedOutput {
                driver: self.node_ids[self.driver_node].clone(),
                output: self.node_ids[self.output_node].clone(),
            });
        }
        Ok(())
    }
}

/// Converts a parsed net into SI units (fF → F, Ω → S as `g = 1/R`).
pub fn to_network(net: &SpefNet, driver_pin: &str, output_pin: &str) -> Result<RcNetwork> {
    let names: BTreeSet<&str> = net
        .connections
        .iter()
        .map(|c| c.pin.as_str())
        .chain(net.caps.iter().map(|c| c.node.as_str()))
        .chain(net.ress.iter().flat_map(|r| [r.node_a.as_str(), r.node_b.as_str()]))
        .collect();
    let node_ids: Vec<String> = names.into_iter().map(String::from).collect();
    let index_of = |name: &str| {
        node_ids
            .binary_search_by(|probe| probe.as_str().cmp(name))
            .map_err(|_| Error::UnknownPin(name.to_string()))
    };

    let driver_node = index_of(driver_pin)?;
    let output_node = index_of(output_pin)?;
    let conductances = net
        .ress
        .iter()
        .map(|r| Ok(Branch { a: index_of(&r.node_a)?, b: index_of(&r.node_b)?, g: 1.0 / r.value }))
        .collect::<Result<Vec<_>>>()?;
    let caps_to_ground = net
        .caps
        .iter()
        .map(|c| Ok(GroundCap { node: index_of(&c.node)?, c: c.value * FEMTO }))
        .collect::<Result<Vec<_>>>()?;

    RcNetwork::new(node_ids, driver_node, output_node, conductances, caps_to_ground)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spef::{generate_spef, parse_spef, ValueRanges};

    #[test]
    fn reference_net_conversion() {
        let net = generate_spef(5, 0, &ValueRanges::reference_net()).unwrap();
        let rc = to_network(&net, "I1:Y", "I2:A").unwrap();
        assert_eq!(rc.caps_to_ground.len(), 5);
        assert_eq!(rc.conductances.len(), 6);
        assert_eq!(rc.node_ids[rc.driver_node], "I1:Y");
        assert_eq!(rc.node_ids[rc.output_node], "I2:A");
        let sorted = {
            let mut v = rc.node_ids.clone();
            v.sort();
            v
        };
        assert_eq!(rc.node_ids, sorted);
        assert!((rc.caps_to_ground[0].c - 21.3035e-15).abs() < 1e-27);
        assert!((rc.conductances[0].g - 1.0 / 145.5).abs() < 1e-15);
    }

    #[test]
    fn unit_conversion() {
        let text = "*D_NET n 1\n*CONN\n*I drv O\n*CAP\n1 net:0 1.0\n*RES\n1 drv net:0 1.0\n*END\n";
        let net = &parse_spef(text).unwrap()[0];
        let rc = to_network(net, "drv", "net:0").unwrap();
        assert_eq!(rc.conductances[0].g, 1.0);
        assert_eq!(rc.caps_to_ground[0].c, 1e-15);
    }

    #[test]
    fn disjoint_subgraphs() {
        let text = "*D_NET n 2\n*CONN\n*I drv O\n*I rcv I\n*CAP\n1 a 1\n2 b 1\n*RES\n1 drv a 1\n2 b rcv 1\n*END\n";
        let net = &parse_spef(text).unwrap()[0];
        assert!(matches!(to_network(net, "drv", "rcv"), Err(Error::DisconnectedOutput { .. })));
        assert!(matches!(to_network(net, "drv", "zzz"), Err(Error::UnknownPin(_))));
    }
}
