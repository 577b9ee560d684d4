//! Shared test helpers: a seeded random program generator.
//!
//! Programs are small (at most 12 operators, clusters of size at most 3,
//! sources of at most 50 elements) but exercise every operator and every
//! channel shape. Generation is deterministic per seed, so a failing seed
//! reruns exactly.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use weft::deploy::{LocalhostCluster, LocalhostProcess};
use weft::error::BuildError;
use weft::ir::{
    ClusterHandle, FlowBuilder, FlowGraph, Location, LocationKind, ProcessHandle, Stream,
};
use weft::staging::{quote_with, Value};
use weft::{q, quote};

const MAX_NODES: usize = 12;

struct Gen {
    rng: StdRng,
    flow: FlowBuilder,
    processes: Vec<ProcessHandle>,
    clusters: Vec<ClusterHandle>,
    pool: Vec<Stream>,
    nodes: usize,
}

/// Build a random valid program. The same seed always yields the same graph.
pub fn random_program(seed: u64) -> FlowGraph {
    let mut rng = StdRng::seed_from_u64(seed);
    let flow = FlowBuilder::new();

    let n_procs = rng.random_range(1..=2);
    let processes: Vec<ProcessHandle> =
        (0..n_procs).map(|_| flow.process(&LocalhostProcess)).collect();
    let n_clusters = rng.random_range(0..=2);
    let clusters: Vec<ClusterHandle> = (0..n_clusters)
        .map(|_| flow.cluster(&LocalhostCluster { size: rng.random_range(1..=3) }))
        .collect();

    let mut gen = Gen { rng, flow, processes, clusters, pool: Vec::new(), nodes: 0 };
    gen.source().expect("initial source");

    // Keep room for one for_each per live stream.
    while gen.nodes + gen.pool.len() < MAX_NODES {
        let before = gen.nodes;
        gen.step().expect("generated ops are valid by construction");
        if gen.nodes == before {
            break;
        }
    }
    for s in gen.pool.drain(..) {
        s.for_each(q!(|v| print(v))).expect("for_each on live stream");
        gen.nodes += 1;
    }

    gen.flow.finish().unwrap_or_else(|e| panic!("seed {seed}: generated graph invalid: {e}"))
}

impl Gen {
    /// One random action, weighted toward network hops. Every action leaves
    /// the pool holding only integer-element streams, which keeps all
    /// follow-ups composable.
    fn step(&mut self) -> Result<(), BuildError> {
        let budget = MAX_NODES - self.nodes - self.pool.len();
        match self.rng.random_range(0..13) {
            0 => self.source(),
            1 => self.unary_map(),
            2 => self.unary_filter(),
            3 => self.unary_fold(),
            4 if budget >= 1 => self.merge(),
            5 if budget >= 2 => self.cross_collapse(),
            6 if budget >= 4 => self.join_collapse(),
            7 | 8 | 9 if budget >= 3 => self.ship(),
            10 | 11 if budget >= 4 && !self.clusters.is_empty() => self.broadcast(),
            12 if budget >= 4 && !self.clusters.is_empty() => self.self_ping(),
            _ => Ok(()),
        }
    }

    fn source(&mut self) -> Result<(), BuildError> {
        let at = self.rng.random_range(0..self.processes.len() + self.clusters.len());
        let lo = self.rng.random_range(0..5i64);
        let hi = lo + self.rng.random_range(1..=20i64);
        let items = quote_with(
            "lo .. hi",
            &[("lo", Value::Int(lo)), ("hi", Value::Int(hi))],
        )
        .unwrap();
        let s = if at < self.processes.len() {
            self.flow.source_iter(&self.processes[at], items)?
        } else {
            self.flow.source_iter(&self.clusters[at - self.processes.len()], items)?
        };
        self.pool.push(s);
        self.nodes += 1;
        Ok(())
    }

    fn take(&mut self) -> Option<Stream> {
        if self.pool.is_empty() {
            return None;
        }
        let i = self.rng.random_range(0..self.pool.len());
        Some(self.pool.swap_remove(i))
    }

    /// Two distinct pool streams at one location, if any pair exists.
    fn take_pair(&mut self) -> Option<(Stream, Stream)> {
        let mut by_loc: Vec<usize> = (0..self.pool.len()).collect();
        use rand::seq::SliceRandom;
        by_loc.shuffle(&mut self.rng);
        for (ai, &a) in by_loc.iter().enumerate() {
            for &b in &by_loc[ai + 1..] {
                if self.pool[a].location() == self.pool[b].location() {
                    let (hi, lo) = (a.max(b), a.min(b));
                    let x = self.pool.swap_remove(hi);
                    let y = self.pool.swap_remove(lo);
                    return Some((x, y));
                }
            }
        }
        None
    }

    fn unary_map(&mut self) -> Result<(), BuildError> {
        let Some(s) = self.take() else { return Ok(()) };
        let f = match self.rng.random_range(0..4) {
            0 => quote("|v| v * 2 + 1"),
            1 => quote("|v| v % 7"),
            2 => quote("|v| v - 3"),
            _ => quote("|v| v * v"),
        }
        .unwrap();
        self.pool.push(s.map(f)?);
        self.nodes += 1;
        Ok(())
    }

    fn unary_filter(&mut self) -> Result<(), BuildError> {
        let Some(s) = self.take() else { return Ok(()) };
        let pred = match self.rng.random_range(0..3) {
            0 => quote("|v| v % 2 == 0"),
            1 => quote("|v| v > 3"),
            _ => quote("|v| v < 40"),
        }
        .unwrap();
        self.pool.push(s.filter(pred)?);
        self.nodes += 1;
        Ok(())
    }

    fn unary_fold(&mut self) -> Result<(), BuildError> {
        let Some(s) = self.take() else { return Ok(()) };
        self.pool.push(s.fold(q!(0), q!(|acc, v| acc + v))?);
        self.nodes += 1;
        Ok(())
    }

    fn merge(&mut self) -> Result<(), BuildError> {
        let Some((a, b)) = self.take_pair() else { return Ok(()) };
        let merged = if self.rng.random_bool(0.5) { a.union(&b)? } else { a.difference(&b)? };
        self.pool.push(merged);
        self.nodes += 1;
        Ok(())
    }

    fn cross_collapse(&mut self) -> Result<(), BuildError> {
        let Some((a, b)) = self.take_pair() else { return Ok(()) };
        let crossed = a.cross_product(&b)?.map(q!(|t| t.0 * 31 + t.1))?;
        self.pool.push(crossed);
        self.nodes += 2;
        Ok(())
    }

    fn join_collapse(&mut self) -> Result<(), BuildError> {
        let Some((a, b)) = self.take_pair() else { return Ok(()) };
        let ka = a.map(q!(|v| ((v % 3 + 3) % 3, v)))?;
        let kb = b.map(q!(|v| ((v % 3 + 3) % 3, v)))?;
        let joined = ka.join(&kb)?.map(q!(|t| t.0 + t.1.0 * t.1.1))?;
        self.pool.push(joined);
        self.nodes += 4;
        Ok(())
    }

    /// Send a stream somewhere else, collapsing the delivered type back to
    /// plain integers so the pool stays uniform.
    fn ship(&mut self) -> Result<(), BuildError> {
        let Some(s) = self.take() else { return Ok(()) };
        let from_cluster = s.location().kind == LocationKind::Cluster;
        let target = self.rng.random_range(0..self.processes.len() + self.clusters.len());
        let (delivered, cost) = if target < self.processes.len() {
            let dst = self.processes[target].clone();
            if s.location() == dst.location_id() {
                self.pool.push(s);
                return Ok(());
            }
            if from_cluster {
                // ManyToOne arrives tagged (sender, v); drop the tag.
                (s.send(&dst)?.map(q!(|t| t.1))?, 2)
            } else {
                (s.send(&dst)?, 1)
            }
        } else {
            let dst = self.clusters[target - self.processes.len()].clone();
            let n = i64::from(dst.size());
            let addressed = s.map(quote_with(
                "|v| (cid((v % n + n) % n), v)",
                &[("n", Value::Int(n))],
            )
            .unwrap())?;
            if from_cluster {
                (addressed.send(&dst)?.map(q!(|t| t.1))?, 3)
            } else {
                (addressed.send(&dst)?, 2)
            }
        };
        self.pool.push(delivered);
        self.nodes += cost + 1; // +1 for the recv node
        Ok(())
    }

    /// member_ids cross data, one copy of everything to every member.
    fn broadcast(&mut self) -> Result<(), BuildError> {
        let p = self.processes[self.rng.random_range(0..self.processes.len())].clone();
        let c = self.clusters[self.rng.random_range(0..self.clusters.len())].clone();
        let ids = self.flow.member_ids(&p, &c)?;
        let hi = self.rng.random_range(1..=5i64);
        let data = self
            .flow
            .source_iter(&p, quote_with("0 .. hi", &[("hi", Value::Int(hi))]).unwrap())?;
        let delivered = ids.cross_product(&data)?.send(&c)?;
        self.pool.push(delivered);
        self.nodes += 5;
        Ok(())
    }

    /// Members mail a constant to their own id: a cluster self-send.
    fn self_ping(&mut self) -> Result<(), BuildError> {
        let c = self.clusters[self.rng.random_range(0..self.clusters.len())].clone();
        let delivered = self
            .flow
            .self_id_source(&c)?
            .map(q!(|v| (v, 7)))?
            .send(&c)?
            .map(q!(|t| t.1))?;
        self.pool.push(delivered);
        self.nodes += 5;
        Ok(())
    }
}

/// Per-instance logs sorted into multisets, for transport-independent
/// comparison.
pub fn multisets(
    result: &weft::runtime::RunResult,
) -> std::collections::BTreeMap<String, Vec<String>> {
    result
        .instances
        .iter()
        .map(|(k, log)| {
            let mut sorted = log.clone();
            sorted.sort();
            (k.clone(), sorted)
        })
        .collect()
}
