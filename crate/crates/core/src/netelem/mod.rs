//! Packets, links, output queues and switches.

pub mod packet;
pub mod queue;
pub mod wire;

use std::collections::VecDeque;

use thiserror::Error;

use crate::time::SimTime;
pub use packet::{Packet, Proto, Segment, VmAddr};
pub use queue::{Aqm, EnqueueOutcome, PortQueue};

pub type NodeId = usize;
pub type PortId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("node {0} is not a switch")]
    UnknownSwitch(NodeId),
    #[error("switch {sw} has no route to host {host}")]
    Unroutable { sw: NodeId, host: NodeId },
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub rate_bps: u64,
    pub prop_delay: SimTime,
}

impl Link {
    pub fn serialization(&self, p: &Packet) -> SimTime {
        SimTime::serialization(p.size_bytes() as u64, self.rate_bps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Host,
    Switch,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub ports: Vec<PortId>,
}

/// One direction of a link: the egress queue at `node` feeding `peer`.
#[derive(Debug, Clone)]
pub struct Port {
    pub node: NodeId,
    pub peer: NodeId,
    /// Position of this port in `nodes[node].ports`.
    pub local_index: usize,
    pub link: Link,
    pub queue: PortQueue,
    pub busy: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Network {
    nodes: Vec<Node>,
    ports: Vec<Port>,
    /// routes[node][host] = egress port toward `host`; only filled for switches.
    routes: Vec<Vec<Option<PortId>>>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: impl Into<String>, kind: NodeKind) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            kind,
            ports: Vec::new(),
        });
        self.nodes.len() - 1
    }

    /// Adds a full-duplex link. `queue_a` buffers traffic a->b, `queue_b` b->a.
    pub fn connect(&mut self, a: NodeId, b: NodeId, link: Link, queue_a: PortQueue, queue_b: PortQueue) -> (PortId, PortId) {
        let pa = self.add_port(a, b, link, queue_a);
        let pb = self.add_port(b, a, link, queue_b);
        (pa, pb)
    }

    fn add_port(&mut self, node: NodeId, peer: NodeId, link: Link, queue: PortQueue) -> PortId {
        let id = self.ports.len();
        let local_index = self.nodes[node].ports.len();
        self.ports.push(Port {
            node,
            peer,
            local_index,
            link,
            queue,
            busy: false,
        });
        self.nodes[node].ports.push(id);
        id
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn port(&self, id: PortId) -> &Port {
        &self.ports[id]
    }

    pub fn port_mut(&mut self, id: PortId) -> &mut Port {
        &mut self.ports[id]
    }

    pub fn ports(&self) -> &[Port] {
        &self.ports
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Switch)
            .map(|(i, _)| i)
    }

    /// Host NIC: a host's first (and only) port.
    pub fn nic(&self, host: NodeId) -> Option<PortId> {
        let n = self.nodes.get(host)?;
        (n.kind == NodeKind::Host).then(|| n.ports.first().copied()).flatten()
    }

    /// Static shortest-path routes from every switch to every host. Ties go to
    /// the lower-numbered port, so the table is deterministic.
    pub fn compute_routes(&mut self) {
        let n = self.nodes.len();
        self.routes = vec![vec![None; n]; n];
        for host in 0..n {
            if self.nodes[host].kind != NodeKind::Host {
                continue;
            }
            // BFS outward from the host; a node's route is the port toward the
            // neighbour it was discovered from.
            let mut dist = vec![usize::MAX; n];
            dist[host] = 0;
            let mut frontier = VecDeque::from([host]);
            while let Some(u) = frontier.pop_front() {
                for &pid in &self.nodes[u].ports {
                    let v = self.ports[pid].peer;
                    if dist[v] != usize::MAX {
                        continue;
                    }
                    dist[v] = dist[u] + 1;
                    if self.nodes[v].kind == NodeKind::Switch {
                        let back = self.nodes[v]
                            .ports
                            .iter()
                            .copied()
                            .find(|&q| self.ports[q].peer == u)
                            .expect("links are full duplex");
                        self.routes[v][host] = Some(back);
                        frontier.push_back(v);
                    }
                }
            }
        }
    }

    /// Egress port a switch uses toward `host`.
    pub fn forward(&self, sw: NodeId, host: NodeId) -> Result<PortId, NetError> {
        match self.nodes.get(sw) {
            Some(n) if n.kind == NodeKind::Switch => {}
            Some(_) => return Err(NetError::UnknownSwitch(sw)),
            None => return Err(NetError::UnknownNode(sw)),
        }
        self.routes
            .get(sw)
            .and_then(|r| r.get(host).copied().flatten())
            .ok_or(NetError::Unroutable { sw, host })
    }

    /// Cumulative CE-mark counters of every port on `sw`, by local port index.
    /// Reading does not reset anything.
    pub fn read_marks(&self, sw: NodeId) -> Result<Vec<u64>, NetError> {
        self.switch_ports(sw)
            .map(|ports| ports.iter().map(|&p| self.ports[p].queue.cum_marks).collect())
    }

    pub fn read_tx_bytes(&self, sw: NodeId) -> Result<Vec<u64>, NetError> {
        self.switch_ports(sw)
            .map(|ports| ports.iter().map(|&p| self.ports[p].queue.cum_tx_bytes).collect())
    }

    /// Cumulative (marks, tx bytes) of every port on any node, switch or
    /// host, by local port index.
    pub fn read_port_counters(&self, node: NodeId) -> Result<(Vec<u64>, Vec<u64>), NetError> {
        let n = self.nodes.get(node).ok_or(NetError::UnknownNode(node))?;
        let q = |p: &PortId| &self.ports[*p].queue;
        Ok((
            n.ports.iter().map(|p| q(p).cum_marks).collect(),
            n.ports.iter().map(|p| q(p).cum_tx_bytes).collect(),
        ))
    }

    fn switch_ports(&self, sw: NodeId) -> Result<&[PortId], NetError> {
        match self.nodes.get(sw) {
            Some(n) if n.kind == NodeKind::Switch => Ok(&n.ports),
            _ => Err(NetError::UnknownSwitch(sw)),
        }
    }

    /// Offers a packet to an egress queue.
    pub fn offer(&mut self, port: PortId, p: Packet) -> EnqueueOutcome {
        self.ports[port].queue.enqueue(p)
    }

    /// If the port is idle and has a packet, pulls it and marks the port busy.
    /// Returns the packet, the time the port frees up, and the arrival time at the peer.
    pub fn start_tx(&mut self, port: PortId, now: SimTime) -> Option<(Packet, SimTime, SimTime)> {
        let port = &mut self.ports[port];
        if port.busy {
            return None;
        }
        let p = port.queue.dequeue()?;
        port.busy = true;
        let done = now + port.link.serialization(&p);
        Some((p, done, done + port.link.prop_delay))
    }

    pub fn tx_done(&mut self, port: PortId) {
        self.ports[port].busy = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GBPS: u64 = 1_000_000_000;

    fn link() -> Link {
        Link {
            rate_bps: GBPS,
            prop_delay: SimTime::from_micros(25),
        }
    }

    /// h0,h1,h2 -- s0 -- s1 -- h3,h4 (classic dumbbell)
    fn dumbbell() -> (Network, Vec<NodeId>, NodeId, NodeId) {
        let mut net = Network::new();
        let hosts: Vec<_> = (0..5).map(|i| net.add_node(format!("h{i}"), NodeKind::Host)).collect();
        let s0 = net.add_node("s0", NodeKind::Switch);
        let s1 = net.add_node("s1", NodeKind::Switch);
        for &h in &hosts[..3] {
            net.connect(h, s0, link(), PortQueue::drop_tail(1000), PortQueue::step_marking(100, 20));
        }
        for &h in &hosts[3..] {
            net.connect(h, s1, link(), PortQueue::drop_tail(1000), PortQueue::step_marking(100, 20));
        }
        net.connect(s0, s1, link(), PortQueue::step_marking(100, 20), PortQueue::step_marking(100, 20));
        net.compute_routes();
        (net, hosts, s0, s1)
    }

    #[test]
    fn senders_share_the_bottleneck() {
        let (net, hosts, s0, s1) = dumbbell();
        let bottleneck = net.forward(s0, hosts[3]).unwrap();
        assert_eq!(net.port(bottleneck).peer, s1);
        assert_eq!(net.forward(s0, hosts[4]).unwrap(), bottleneck);
    }

    #[test]
    fn reverse_path_uses_access_port() {
        let (net, hosts, s0, s1) = dumbbell();
        let p = net.forward(s0, hosts[1]).unwrap();
        assert_eq!(net.port(p).peer, hosts[1]);
        let p = net.forward(s1, hosts[0]).unwrap();
        assert_eq!(net.port(p).peer, s0);
    }

    #[test]
    fn forward_errors() {
        let (net, hosts, s0, _) = dumbbell();
        assert_eq!(net.forward(hosts[0], hosts[1]), Err(NetError::UnknownSwitch(hosts[0])));
        assert_eq!(net.forward(99, hosts[1]), Err(NetError::UnknownNode(99)));
        assert_eq!(net.forward(s0, s0), Err(NetError::Unroutable { sw: s0, host: s0 }));
    }

    #[test]
    fn read_marks_is_non_resetting() {
        let (mut net, hosts, s0, _) = dumbbell();
        assert!(net.read_marks(s0).unwrap().iter().all(|&m| m == 0));
        let port = net.forward(s0, hosts[3]).unwrap();
        let idx = net.port(port).local_index;
        for _ in 0..20 {
            let mut p = Packet::data(0, VmAddr(1), VmAddr(2), Proto::Tcp, 0, packet::MSS);
            p.ect = true;
            net.offer(port, p);
        }
        for _ in 0..12 {
            let mut p = Packet::data(0, VmAddr(1), VmAddr(2), Proto::Tcp, 0, packet::MSS);
            p.ect = true;
            assert_eq!(net.offer(port, p), EnqueueOutcome::Marked);
        }
        let a = net.read_marks(s0).unwrap();
        let b = net.read_marks(s0).unwrap();
        assert_eq!(a[idx], 12);
        assert_eq!(a, b);
        assert_eq!(net.read_marks(hosts[0]), Err(NetError::UnknownSwitch(hosts[0])));
    }

    #[test]
    fn tx_timing() {
        let (mut net, hosts, _, _) = dumbbell();
        let nic = net.nic(hosts[0]).unwrap();
        let p = Packet::data(0, VmAddr(1), VmAddr(2), Proto::Tcp, 0, packet::MSS);
        net.offer(nic, p);
        net.offer(nic, p);
        let (_, done, arrive) = net.start_tx(nic, SimTime::ZERO).unwrap();
        assert_eq!(done, SimTime::from_micros(12));
        assert_eq!(arrive, SimTime::from_micros(37));
        assert!(net.start_tx(nic, SimTime::ZERO).is_none(), "port busy");
        net.tx_done(nic);
        assert!(net.start_tx(nic, done).is_some());
    }
}
