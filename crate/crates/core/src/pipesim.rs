//! Discrete-event model of a receive -> classify -> transmit packet pipeline.
//!
//! ```text
//!  trace --> RBUF --> [receive] --ring1--> [classify] --ring2--> flow queues
//!                                                                  |
//!                               ports <-- TBUF <-- [transmit] <----+
//! ```
//!
//! Each stage is an engine with `workers` threads sharing one execution unit.
//! A job is a compute phase, which occupies the execution unit, optionally
//! followed by a wait phase, which does not. Classification computes for
//! `classify_base_ns` and then waits `classify_probe_ns` per probe (one table
//! access each), so other threads can compute while a lookup is outstanding.
//! Threads take packets in arrival order and hand them downstream in the same
//! order; a thread whose packet cannot be handed on because the next ring is
//! full holds it and counts as blocked.
//!
//! Stage metrics:
//! - `busy_ns`: time the execution unit was computing.
//! - `idle_ns`: `wall_ns - busy_ns`.
//! - `blocked_ns`: time the stage's oldest packet sat finished but unable to
//!   move downstream.
//! - `thread_busy_ns`: summed over threads, time spent computing or waiting
//!   on a job.
//!
//! Arrivals that do not fit in RBUF are dropped. The transmit stage moves
//! packets from ring2 into per-flow queues, then serves output ports round
//! robin, skipping a port while its committed m-packets exceed the TBUF
//! threshold. A packet counts as sent when its last m-packet leaves the wire.
//!
//! The simulation is single threaded and fully deterministic.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::{wire_time_ns, TraceRecord};
use crate::Classifier;

pub const MPACKET_BYTES: u32 = 64;
pub const REPORT_SCHEMA: u32 = 1;

/// Number of 64-byte m-packets a packet occupies.
pub fn segment(size_bytes: u32) -> u32 {
    size_bytes.div_ceil(MPACKET_BYTES).max(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("line {line}: {reason}")]
    ConfigSyntax { line: usize, reason: String },
    #[error("trace is not sorted by arrival time at record {0}")]
    UnsortedTrace(usize),
}

/// Bounded FIFO between two stages. Capacity is a power of two.
#[derive(Debug, Clone)]
pub struct Ring<T> {
    buf: VecDeque<T>,
    capacity: usize,
    max_occupancy: usize,
}

impl<T> Ring<T> {
    pub fn new(capacity: usize) -> Result<Self, SimError> {
        if capacity == 0 || !capacity.is_power_of_two() {
            return Err(SimError::Config(format!(
                "ring capacity {capacity} is not a power of two"
            )));
        }
        Ok(Ring {
            buf: VecDeque::with_capacity(capacity),
            capacity,
            max_occupancy: 0,
        })
    }

    /// Hands the item back if the ring is full.
    pub fn push(&mut self, item: T) -> Result<(), T> {
        if self.buf.len() == self.capacity {
            return Err(item);
        }
        self.buf.push_back(item);
        self.max_occupancy = self.max_occupancy.max(self.buf.len());
        Ok(())
    }

    pub fn pop(&mut self) -> Option<T> {
        self.buf.pop_front()
    }

    pub fn front(&self) -> Option<&T> {
        self.buf.front()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.buf.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub rx_workers: usize,
    /// Receive compute per m-packet.
    pub rx_cost_ns: u64,
    pub classify_workers: usize,
    pub classify_base_ns: u64,
    pub classify_probe_ns: u64,
    pub tx_workers: usize,
    /// Transmit compute per m-packet.
    pub tx_cost_ns: u64,
    /// RBUF size in m-packets.
    pub rbuf_mpackets: usize,
    pub ring1_capacity: usize,
    pub ring2_capacity: usize,
    pub flow_queue_capacity: usize,
    pub ports: usize,
    pub port_rate_mbps: u32,
    /// Per-port in-flight m-packets above which the port is stalled.
    pub tbuf_threshold: u64,
    /// Stop the clock here; `None` runs until the pipeline drains.
    pub duration_ns: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rx_workers: 8,
            rx_cost_ns: 20,
            classify_workers: 8,
            classify_base_ns: 50,
            classify_probe_ns: 100,
            tx_workers: 8,
            tx_cost_ns: 20,
            rbuf_mpackets: 128,
            ring1_capacity: 128,
            ring2_capacity: 128,
            flow_queue_capacity: 64,
            ports: 4,
            port_rate_mbps: 1000,
            tbuf_threshold: 16,
            duration_ns: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        for (name, v) in [
            ("rx_workers", self.rx_workers),
            ("classify_workers", self.classify_workers),
            ("tx_workers", self.tx_workers),
            ("ports", self.ports),
            ("rbuf_mpackets", self.rbuf_mpackets),
            ("flow_queue_capacity", self.flow_queue_capacity),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [
            ("rx_cost_ns", self.rx_cost_ns),
            ("classify_base_ns", self.classify_base_ns),
            ("classify_probe_ns", self.classify_probe_ns),
            ("tx_cost_ns", self.tx_cost_ns),
            ("port_rate_mbps", self.port_rate_mbps as u64),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("ring1_capacity", self.ring1_capacity),
            ("ring2_capacity", self.ring2_capacity),
        ] {
            if !v.is_power_of_two() {
                return bad(format!("{name} {v} is not a power of two"));
            }
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of the defaults. `#` starts a
    /// comment; `duration_ns = none` clears the duration.
    pub fn parse_kv(text: &str) -> Result<SimConfig, SimError> {
        let mut cfg = SimConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or(SimError::ConfigSyntax {
                line,
                reason: "expected `key = value`".into(),
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|reason| SimError::ConfigSyntax { line, reason })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse()
                .map_err(|_| format!("invalid value `{v}` for {key}"))
        }
        match key {
            "rx_workers" => self.rx_workers = num(key, value)?,
            "rx_cost_ns" => self.rx_cost_ns = num(key, value)?,
            "classify_workers" => self.classify_workers = num(key, value)?,
            "classify_base_ns" => self.classify_base_ns = num(key, value)?,
            "classify_probe_ns" => self.classify_probe_ns = num(key, value)?,
            "tx_workers" => self.tx_workers = num(key, value)?,
            "tx_cost_ns" => self.tx_cost_ns = num(key, value)?,
            "rbuf_mpackets" => self.rbuf_mpackets = num(key, value)?,
            "ring1_capacity" => self.ring1_capacity = num(key, value)?,
            "ring2_capacity" => self.ring2_capacity = num(key, value)?,
            "flow_queue_capacity" => self.flow_queue_capacity = num(key, value)?,
            "ports" => self.ports = num(key, value)?,
            "port_rate_mbps" => self.port_rate_mbps = num(key, value)?,
            "tbuf_threshold" => self.tbuf_threshold = num(key, value)?,
            "duration_ns" => {
                self.duration_ns = match value {
                    "none" | "" => None,
                    v => Some(num(key, v)?),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let duration = self
            .duration_ns
            .map_or_else(|| "none".to_string(), |d| d.to_string());
        format!(
            "rx_workers = {}\nrx_cost_ns = {}\nclassify_workers = {}\nclassify_base_ns = {}\n\
             classify_probe_ns = {}\ntx_workers = {}\ntx_cost_ns = {}\nrbuf_mpackets = {}\n\
             ring1_capacity = {}\nring2_capacity = {}\nflow_queue_capacity = {}\nports = {}\n\
             port_rate_mbps = {}\ntbuf_threshold = {}\nduration_ns = {}\n",
            self.rx_workers,
            self.rx_cost_ns,
            self.classify_workers,
            self.classify_base_ns,
            self.classify_probe_ns,
            self.tx_workers,
            self.tx_cost_ns,
            self.rbuf_mpackets,
            self.ring1_capacity,
            self.ring2_capacity,
            self.flow_queue_capacity,
            self.ports,
            self.port_rate_mbps,
            self.tbuf_threshold,
            duration,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageMetrics {
    pub busy_ns: u64,
    pub idle_ns: u64,
    pub blocked_ns: u64,
    pub thread_busy_ns: u64,
    pub processed_count: u64,
    pub dropped_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlowMetrics {
    /// `None` for packets no rule matched.
    pub flow: Option<u32>,
    pub received: u64,
    pub sent: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub queue_max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema: u32,
    pub classifier: String,
    pub wall_ns: u64,
    pub received: u64,
    pub sent: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub sent_over_received: f64,
    pub transmit_rate_mbps: f64,
    pub mean_probes: f64,
    pub receive: StageMetrics,
    pub classify: StageMetrics,
    pub transmit: StageMetrics,
    pub port_sent: Vec<u64>,
    pub ring1_max: u64,
    pub ring2_max: u64,
    pub flows: Vec<FlowMetrics>,
}

/// A report plus the order packets left the wire (trace indices).
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: SimReport,
    pub transmit_log: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Free,
    Ready,
    Computing,
    Waiting,
    Done,
}

#[derive(Debug, Clone, Copy)]
struct Worker {
    slot: Slot,
    pkt: u32,
    compute_ns: u64,
    wait_ns: u64,
    wait_start: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum StageId {
    Rx,
    Cls,
    Tx,
}

/// Threads sharing one execution unit, releasing packets in fetch order.
#[derive(Debug)]
struct Engine {
    workers: Vec<Worker>,
    ready: VecDeque<usize>,
    running: Option<(usize, u64)>,
    order: VecDeque<usize>,
    busy_ns: u64,
    thread_busy_ns: u64,
    blocked_ns: u64,
    blocked_since: Option<u64>,
    processed: u64,
}

impl Engine {
    fn new(workers: usize) -> Self {
        Engine {
            workers: vec![
                Worker {
                    slot: Slot::Free,
                    pkt: 0,
                    compute_ns: 0,
                    wait_ns: 0,
                    wait_start: 0,
                };
                workers
            ],
            ready: VecDeque::new(),
            running: None,
            order: VecDeque::new(),
            busy_ns: 0,
            thread_busy_ns: 0,
            blocked_ns: 0,
            blocked_since: None,
            processed: 0,
        }
    }

    fn free_worker(&self) -> Option<usize> {
        self.workers.iter().position(|w| w.slot == Slot::Free)
    }

    fn assign(&mut self, w: usize, pkt: u32, compute_ns: u64, wait_ns: u64) {
        self.workers[w] = Worker {
            slot: Slot::Ready,
            pkt,
            compute_ns,
            wait_ns,
            wait_start: 0,
        };
        self.ready.push_back(w);
        self.order.push_back(w);
    }

    /// Starts the next ready thread if the unit is free; returns its finish time.
    fn dispatch(&mut self, now: u64) -> Option<u64> {
        if self.running.is_some() {
            return None;
        }
        let w = self.ready.pop_front()?;
        self.workers[w].slot = Slot::Computing;
        self.running = Some((w, now));
        Some(now + self.workers[w].compute_ns)
    }

    /// Ends the running compute phase. Returns the worker and its wait, if any.
    fn compute_done(&mut self, now: u64) -> (usize, Option<u64>) {
        let (w, start) = self
            .running
            .take()
            .expect("compute_done without a running job");
        self.busy_ns += now - start;
        self.thread_busy_ns += now - start;
        let worker = &mut self.workers[w];
        if worker.wait_ns > 0 {
            worker.slot = Slot::Waiting;
            worker.wait_start = now;
            (w, Some(now + worker.wait_ns))
        } else {
            worker.slot = Slot::Done;
            (w, None)
        }
    }

    fn wait_done(&mut self, w: usize, now: u64) {
        debug_assert_eq!(self.workers[w].slot, Slot::Waiting);
        self.thread_busy_ns += now - self.workers[w].wait_start;
        self.workers[w].slot = Slot::Done;
    }

    /// Oldest held packet, if it has finished.
    fn head_done(&self) -> Option<u32> {
        let &w = self.order.front()?;
        (self.workers[w].slot == Slot::Done).then_some(self.workers[w].pkt)
    }

    fn release_head(&mut self, now: u64) {
        let w = self.order.pop_front().expect("release without a head");
        self.workers[w].slot = Slot::Free;
        self.processed += 1;
        self.unblock(now);
    }

    fn block(&mut self, now: u64) {
        self.blocked_since.get_or_insert(now);
    }

    fn unblock(&mut self, now: u64) {
        if let Some(since) = self.blocked_since.take() {
            self.blocked_ns += now - since;
        }
    }

    fn held(&self) -> impl Iterator<Item = u32> + '_ {
        self.order.iter().map(|&w| self.workers[w].pkt)
    }

    fn finish(&mut self, wall: u64) -> StageMetrics {
        if let Some((_, start)) = self.running {
            self.busy_ns += wall.saturating_sub(start);
            self.thread_busy_ns += wall.saturating_sub(start);
        }
        for w in &self.workers {
            if w.slot == Slot::Waiting {
                self.thread_busy_ns += wall.saturating_sub(w.wait_start);
            }
        }
        self.unblock(wall);
        StageMetrics {
            busy_ns: self.busy_ns,
            idle_ns: wall.saturating_sub(self.busy_ns),
            blocked_ns: self.blocked_ns,
            thread_busy_ns: self.thread_busy_ns,
            processed_count: self.processed,
            dropped_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Arrival(u32),
    ComputeDone(StageId),
    WaitDone(StageId, usize),
    WireDone(usize),
}

#[derive(Debug, Default)]
struct Port {
    tbuf: VecDeque<(u32, u32)>,
    /// m-packets committed to this port: in TBUF or being prepared.
    committed: u64,
    on_wire: bool,
    sent: u64,
}

#[derive(Debug, Default)]
struct FlowQueue {
    q: VecDeque<u32>,
    max: usize,
}

type FlowKey = Option<u32>;

struct Sim<'a> {
    cfg: &'a SimConfig,
    trace: &'a [TraceRecord],
    flow_of: Vec<FlowKey>,
    probes: Vec<u32>,
    mpk: Vec<u32>,
    events: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,

    rbuf_queue: VecDeque<u32>,
    rbuf_used: usize,
    rx: Engine,
    ring1: Ring<u32>,
    cls: Engine,
    ring2: Ring<u32>,
    flow_queues: BTreeMap<FlowKey, FlowQueue>,
    tx: Engine,
    tx_port_of_worker: Vec<usize>,
    next_port: usize,
    ports: Vec<Port>,
    mpacket_wire_ns: u64,

    received: u64,
    dropped: u64,
    sent_bytes: u64,
    flow_received: BTreeMap<FlowKey, u64>,
    flow_dropped: BTreeMap<FlowKey, u64>,
    flow_sent: BTreeMap<FlowKey, u64>,
    transmit_log: Vec<u32>,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, ev)));
    }

    fn port_of(&self, flow: FlowKey) -> usize {
        flow.map_or(0, |f| (f as usize - 1) % self.cfg.ports)
    }

    fn handle(&mut self, now: u64, ev: Event) {
        match ev {
            Event::Arrival(i) => {
                let pkt = i as usize;
                self.received += 1;
                *self.flow_received.entry(self.flow_of[pkt]).or_default() += 1;
                let m = self.mpk[pkt] as usize;
                if self.rbuf_used + m > self.cfg.rbuf_mpackets {
                    self.dropped += 1;
                    *self.flow_dropped.entry(self.flow_of[pkt]).or_default() += 1;
                } else {
                    self.rbuf_used += m;
                    self.rbuf_queue.push_back(i);
                }
                if pkt + 1 < self.trace.len() {
                    self.schedule(self.trace[pkt + 1].arrival_ns, Event::Arrival(i + 1));
                }
            }
            Event::ComputeDone(stage) => {
                let engine = self.engine(stage);
                let (w, wait) = engine.compute_done(now);
                let pkt = engine.workers[w].pkt;
                if stage == StageId::Rx {
                    self.rbuf_used -= self.mpk[pkt as usize] as usize;
                }
                if let Some(at) = wait {
                    self.schedule(at, Event::WaitDone(stage, w));
                }
            }
            Event::WaitDone(stage, w) => self.engine(stage).wait_done(w, now),
            Event::WireDone(p) => {
                let port = &mut self.ports[p];
                port.on_wire = false;
                port.committed -= 1;
                let front = port.tbuf.front_mut().expect("wire done on empty TBUF");
                front.1 -= 1;
                if front.1 == 0 {
                    let (pkt, _) = port.tbuf.pop_front().unwrap();
                    port.sent += 1;
                    self.sent_bytes += self.trace[pkt as usize].size_bytes as u64;
                    *self
                        .flow_sent
                        .entry(self.flow_of[pkt as usize])
                        .or_default() += 1;
                    self.transmit_log.push(pkt);
                }
            }
        }
    }

    fn engine(&mut self, stage: StageId) -> &mut Engine {
        match stage {
            StageId::Rx => &mut self.rx,
            StageId::Cls => &mut self.cls,
            StageId::Tx => &mut self.tx,
        }
    }

    /// Applies every state change possible at `now`.
    fn pump(&mut self, now: u64) {
        loop {
            let mut progressed = false;

            while let (Some(w), Some(&pkt)) = (self.rx.free_worker(), self.rbuf_queue.front()) {
                self.rbuf_queue.pop_front();
                let cost = self.cfg.rx_cost_ns * self.mpk[pkt as usize] as u64;
                self.rx.assign(w, pkt, cost, 0);
                progressed = true;
            }
            while let Some(pkt) = self.rx.head_done() {
                if self.ring1.push(pkt).is_err() {
                    self.rx.block(now);
                    break;
                }
                self.rx.release_head(now);
                progressed = true;
            }

            while let Some(w) = self.cls.free_worker() {
                let Some(pkt) = self.ring1.pop() else { break };
                let wait = self.cfg.classify_probe_ns * self.probes[pkt as usize] as u64;
                self.cls.assign(w, pkt, self.cfg.classify_base_ns, wait);
                progressed = true;
            }
            while let Some(pkt) = self.cls.head_done() {
                if self.ring2.push(pkt).is_err() {
                    self.cls.block(now);
                    break;
                }
                self.cls.release_head(now);
                progressed = true;
            }

            while let Some(&pkt) = self.ring2.front() {
                let cap = self.cfg.flow_queue_capacity;
                let fq = self
                    .flow_queues
                    .entry(self.flow_of[pkt as usize])
                    .or_default();
                if fq.q.len() >= cap {
                    break;
                }
                fq.q.push_back(pkt);
                fq.max = fq.max.max(fq.q.len());
                self.ring2.pop();
                progressed = true;
            }

            while let Some(w) = self.tx.free_worker() {
                let Some((port, pkt)) = self.pick_for_transmit() else {
                    break;
                };
                let m = self.mpk[pkt as usize];
                self.ports[port].committed += m as u64;
                self.tx_port_of_worker[w] = port;
                self.tx.assign(w, pkt, self.cfg.tx_cost_ns * m as u64, 0);
                progressed = true;
            }
            while let Some(pkt) = self.tx.head_done() {
                let w = *self.tx.order.front().unwrap();
                let port = self.tx_port_of_worker[w];
                self.ports[port]
                    .tbuf
                    .push_back((pkt, self.mpk[pkt as usize]));
                self.tx.release_head(now);
                progressed = true;
            }

            for p in 0..self.ports.len() {
                let port = &mut self.ports[p];
                if !port.on_wire && !port.tbuf.is_empty() {
                    port.on_wire = true;
                    let at = now + self.mpacket_wire_ns;
                    self.schedule(at, Event::WireDone(p));
                    progressed = true;
                }
            }

            for stage in [StageId::Rx, StageId::Cls, StageId::Tx] {
                if let Some(at) = self.engine(stage).dispatch(now) {
                    self.schedule(at, Event::ComputeDone(stage));
                    progressed = true;
                }
            }

            if !progressed {
                break;
            }
        }
    }

    /// Round-robin over ports that are under their TBUF threshold and have
    /// queued packets; within a port the oldest packet goes first.
    fn pick_for_transmit(&mut self) -> Option<(usize, u32)> {
        let n = self.ports.len();
        for k in 0..n {
            let p = (self.next_port + k) % n;
            if self.ports[p].committed > self.cfg.tbuf_threshold {
                continue;
            }
            let candidate = self
                .flow_queues
                .iter()
                .filter(|(f, q)| self.port_of(**f) == p && !q.q.is_empty())
                .map(|(f, q)| (q.q[0], *f))
                .min();
            if let Some((pkt, flow)) = candidate {
                self.flow_queues.get_mut(&flow).unwrap().q.pop_front();
                self.next_port = (p + 1) % n;
                return Some((p, pkt));
            }
        }
        None
    }

    /// Packets currently inside the pipeline, found by walking every buffer.
    fn resident(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.rbuf_queue.iter().copied().collect();
        v.extend(self.rx.held());
        v.extend(self.ring1.iter().copied());
        v.extend(self.cls.held());
        v.extend(self.ring2.iter().copied());
        for fq in self.flow_queues.values() {
            v.extend(fq.q.iter().copied());
        }
        v.extend(self.tx.held());
        for port in &self.ports {
            v.extend(port.tbuf.iter().map(|(p, _)| *p));
        }
        v
    }
}

/// Runs the pipeline over `trace` with `classifier` supplying each packet's
/// flow and probe count.
pub fn run_sim(
    trace: &[TraceRecord],
    classifier: &dyn Classifier,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    run_sim_detailed(trace, classifier, cfg).map(|o| o.report)
}

pub fn run_sim_detailed(
    trace: &[TraceRecord],
    classifier: &dyn Classifier,
    cfg: &SimConfig,
) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    if let Some(i) = trace
        .windows(2)
        .position(|w| w[1].arrival_ns < w[0].arrival_ns)
    {
        return Err(SimError::UnsortedTrace(i + 1));
    }
    let results: Vec<_> = trace.iter().map(|r| classifier.classify(&r.hdr)).collect();
    let total_probes: u64 = results.iter().map(|r| r.probes as u64).sum();

    let mut sim = Sim {
        cfg,
        trace,
        flow_of: results.iter().map(|r| r.flow().map(|f| f.get())).collect(),
        probes: results.iter().map(|r| r.probes).collect(),
        mpk: trace.iter().map(|r| segment(r.size_bytes)).collect(),
        events: BinaryHeap::new(),
        seq: 0,
        rbuf_queue: VecDeque::new(),
        rbuf_used: 0,
        rx: Engine::new(cfg.rx_workers),
        ring1: Ring::new(cfg.ring1_capacity)?,
        cls: Engine::new(cfg.classify_workers),
        ring2: Ring::new(cfg.ring2_capacity)?,
        flow_queues: BTreeMap::new(),
        tx: Engine::new(cfg.tx_workers),
        tx_port_of_worker: vec![0; cfg.tx_workers],
        next_port: 0,
        ports: (0..cfg.ports).map(|_| Port::default()).collect(),
        mpacket_wire_ns: wire_time_ns(MPACKET_BYTES, cfg.port_rate_mbps),
        received: 0,
        dropped: 0,
        sent_bytes: 0,
        flow_received: BTreeMap::new(),
        flow_dropped: BTreeMap::new(),
        flow_sent: BTreeMap::new(),
        transmit_log: Vec::new(),
    };

    if let Some(first) = trace.first() {
        sim.schedule(first.arrival_ns, Event::Arrival(0));
    }
    let mut last = 0;
    while let Some(&Reverse((at, _, ev))) = sim.events.peek() {
        if cfg.duration_ns.is_some_and(|d| at > d) {
            break;
        }
        sim.events.pop();
        sim.handle(at, ev);
        sim.pump(at);
        last = at;
    }
    let wall = cfg.duration_ns.unwrap_or(last);

    let resident = sim.resident();
    let mut flow_in_flight: BTreeMap<FlowKey, u64> = BTreeMap::new();
    for &p in &resident {
        *flow_in_flight.entry(sim.flow_of[p as usize]).or_default() += 1;
    }
    let flows = sim
        .flow_received
        .iter()
        .map(|(&flow, &received)| FlowMetrics {
            flow,
            received,
            sent: sim.flow_sent.get(&flow).copied().unwrap_or(0),
            dropped: sim.flow_dropped.get(&flow).copied().unwrap_or(0),
            in_flight: flow_in_flight.get(&flow).copied().unwrap_or(0),
            queue_max: sim.flow_queues.get(&flow).map_or(0, |q| q.max as u64),
        })
        .collect();

    let receive = StageMetrics {
        dropped_count: sim.dropped,
        ..sim.rx.finish(wall)
    };
    let classify = sim.cls.finish(wall);
    let transmit = sim.tx.finish(wall);
    let sent: u64 = sim.ports.iter().map(|p| p.sent).sum();
    let report = SimReport {
        schema: REPORT_SCHEMA,
        classifier: classifier.name().to_string(),
        wall_ns: wall,
        received: sim.received,
        sent,
        dropped: sim.dropped,
        in_flight: resident.len() as u64,
        sent_over_received: if sim.received == 0 {
            1.0
        } else {
            sent as f64 / sim.received as f64
        },
        transmit_rate_mbps: if wall == 0 {
            0.0
        } else {
            sim.sent_bytes as f64 * 8.0 * 1000.0 / wall as f64
        },
        mean_probes: if trace.is_empty() {
            0.0
        } else {
            total_probes as f64 / trace.len() as f64
        },
        receive,
        classify,
        transmit,
        port_sent: sim.ports.iter().map(|p| p.sent).collect(),
        ring1_max: sim.ring1.max_occupancy() as u64,
        ring2_max: sim.ring2.max_occupancy() as u64,
        flows,
    };
    Ok(SimOutcome {
        report,
        transmit_log: sim.transmit_log,
    })
}

impl fmt::Display for SimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: received {} sent {} dropped {} in-flight {} (sent/recv {:.4}), tx {:.1} Mb/s",
            self.classifier,
            self.received,
            self.sent,
            self.dropped,
            self.in_flight,
            self.sent_over_received,
            self.transmit_rate_mbps
        )?;
        for (name, m) in [
            ("receive", &self.receive),
            ("classify", &self.classify),
            ("transmit", &self.transmit),
        ] {
            writeln!(
                f,
                "  {name:<9} busy {:>10} ns  idle {:>10} ns  blocked {:>10} ns  processed {}",
                m.busy_ns, m.idle_ns, m.blocked_ns, m.processed_count
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulemodel::{FlowId, PacketHeader, Rule, RuleSet};
    use crate::LinearClassifier;

    fn one_rule() -> LinearClassifier {
        LinearClassifier::new(
            RuleSet::new(vec![Rule::catch_all(0, 1, FlowId::new(1).unwrap())], 64).unwrap(),
        )
    }

    #[test]
    fn segment_sizes() {
        assert_eq!(segment(64), 1);
        assert_eq!(segment(65), 2);
        assert_eq!(segment(1), 1);
        assert_eq!(segment(1500), 24);
    }

    #[test]
    fn ring_bounds() {
        assert!(Ring::<u32>::new(3).is_err());
        assert!(Ring::<u32>::new(0).is_err());
        let mut r = Ring::new(2).unwrap();
        assert!(r.push(1).is_ok());
        assert!(r.push(2).is_ok());
        assert_eq!(r.push(3), Err(3));
        assert_eq!(r.pop(), Some(1));
        assert_eq!(r.pop(), Some(2));
        assert_eq!(r.pop(), None);
        assert_eq!(r.max_occupancy(), 2);
    }

    #[test]
    fn empty_trace() {
        let rep = run_sim(&[], &one_rule(), &SimConfig::default()).unwrap();
        assert_eq!(
            (rep.received, rep.sent, rep.dropped, rep.in_flight),
            (0, 0, 0, 0)
        );
        assert_eq!(rep.sent_over_received, 1.0);
        assert_eq!(rep.wall_ns, 0);
    }

    #[test]
    fn single_packet() {
        let trace = [TraceRecord {
            hdr: PacketHeader::default(),
            arrival_ns: 0,
            size_bytes: 64,
        }];
        let rep = run_sim(&trace, &one_rule(), &SimConfig::default()).unwrap();
        assert_eq!((rep.received, rep.sent), (1, 1));
        assert_eq!(rep.sent_over_received, 1.0);
        // rx 20 + classify 50 + 1 probe 100 + tx 20 + one m-packet on the wire 512.
        assert_eq!(rep.wall_ns, 20 + 50 + 100 + 20 + 512);
        assert_eq!(rep.classify.busy_ns, 50);
        assert_eq!(rep.classify.thread_busy_ns, 150);
        assert_eq!(rep.classify.idle_ns, rep.wall_ns - 50);
    }

    #[test]
    fn kv_config() {
        let cfg = SimConfig::parse_kv("# c\nclassify_workers = 2\nduration_ns = 5000\n").unwrap();
        assert_eq!(cfg.classify_workers, 2);
        assert_eq!(cfg.duration_ns, Some(5000));
        assert_eq!(SimConfig::parse_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(matches!(
            SimConfig::parse_kv("bogus = 1"),
            Err(SimError::ConfigSyntax { line: 1, .. })
        ));
        assert!(matches!(
            SimConfig::parse_kv("ring1_capacity = 100"),
            Err(SimError::Config(_))
        ));
        assert!(SimConfig::parse_kv("rx_workers = 0").is_err());
        assert!(SimConfig::parse_kv("no equals").is_err());
    }

    #[test]
    fn unsorted_trace_rejected() {
        let r = |t| TraceRecord {
            hdr: PacketHeader::default(),
            arrival_ns: t,
            size_bytes: 64,
        };
        assert_eq!(
            run_sim(&[r(10), r(5)], &one_rule(), &SimConfig::default()).unwrap_err(),
            SimError::UnsortedTrace(1)
        );
    }
}
