//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints its own PASS/FAIL line; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use kcast_core::adversary::{
    build_chain, chain_adversary, enumerate_adversaries, random_adversary, ring_feasible,
    AdversaryRegistry, ClassOptions, EnumerationOptions, Strategy,
};
use kcast_core::harness::{self, RunConfig, SweepConfig, Threshold};
use kcast_core::netmodel::{Config, PartyId, Payload};
use kcast_core::protocol::reductions::{consensus_from_broadcast, IdealBroadcast};
use kcast_core::protocol::{broadcast_p, Anomaly, Execution, LevelContext, ProtocolError};
use kcast_core::trustgraph::{has_bistar, prune, TrustGraph, TrustNode};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Tally over protocol executions.
#[derive(Default)]
struct Tally {
    runs: u64,
    violations: Vec<String>,
    cluster_paths: u64,
    other_anomalies: Vec<String>,
}

impl Tally {
    fn record(&mut self, label: impl Fn() -> String, exec: &Execution) {
        self.runs += 1;
        if !exec.agreement() || exec.validity() == Some(false) {
            self.violations.push(label());
        }
        for a in &exec.anomalies {
            match a {
                Anomaly::ClusterPath { .. } => self.cluster_paths += 1,
                other => self.other_anomalies.push(format!("{}: {other}", label())),
            }
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.runs += other.runs;
        self.violations.extend(other.violations);
        self.cluster_paths += other.cluster_paths;
        self.other_anomalies.extend(other.other_anomalies);
        self
    }

    fn clean(&self) -> bool {
        self.violations.is_empty() && self.other_anomalies.is_empty()
    }

    fn summary(&self) -> String {
        let mut s = format!(
            "{} executions, {} violations",
            self.runs,
            self.violations.len()
        );
        if let Some(first) = self.violations.first() {
            s.push_str(&format!(", first: {first}"));
        }
        if let Some(first) = self.other_anomalies.first() {
            s.push_str(&format!(", anomaly: {first}"));
        }
        s
    }
}

fn below_threshold(max_k: usize, max_parties: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for k in 1..=max_k {
        for h in 2..=max_parties {
            for f in 0..=max_parties - h {
                if 2 * f < k * h {
                    out.push((k, h, f));
                }
            }
        }
    }
    out
}

fn bits() -> [Payload; 2] {
    [Payload::bit(false), Payload::bit(true)]
}

fn exhaustive_upper_bound() -> (Outcome, Tally) {
    let configs = below_threshold(2, 4);
    let tally = configs
        .par_iter()
        .map(|&(k, h, f)| {
            let ctx = LevelContext::top(k, h, f).unwrap();
            let mut tally = Tally::default();
            for input in bits() {
                let stream = enumerate_adversaries(&ctx, &EnumerationOptions::default()).unwrap();
                for mut s in stream {
                    let exec = broadcast_p(&ctx, &input, &mut s).unwrap();
                    tally.record(
                        || format!("({k},{h},{f}) input {input} {:?}", s.descriptor()),
                        &exec,
                    );
                }
            }
            tally
        })
        .reduce(Tally::default, Tally::merge);
    let detail = format!("{} configurations, {}", configs.len(), tally.summary());
    (outcome(tally.clean(), detail), tally)
}

fn randomized_upper_bound() -> (Outcome, Tally) {
    let configs = below_threshold(3, 6);
    let registry = AdversaryRegistry::with_builtins();
    let silent = registry.get("silent").unwrap();
    let jobs: Vec<_> = configs
        .iter()
        .flat_map(|&c| (0..1000u64).step_by(50).map(move |s| (c, s)))
        .collect();
    let tally = jobs
        .par_iter()
        .map(|&((k, h, f), first)| {
            let ctx = LevelContext::top(k, h, f).unwrap();
            let mut tally = Tally::default();
            for seed in first..first + 50 {
                let input = Payload::bit(seed % 2 == 1);
                let mut s = random_adversary(&ctx, seed);
                let exec = broadcast_p(&ctx, &input, &mut s).unwrap();
                tally.record(|| format!("({k},{h},{f}) seed {seed}"), &exec);
            }
            if first == 0 {
                for input in bits() {
                    for mut s in silent.strategies(&ctx, &ClassOptions::default()).unwrap() {
                        let exec = broadcast_p(&ctx, &input, s.as_mut()).unwrap();
                        tally.record(|| format!("({k},{h},{f}) {:?}", s.descriptor()), &exec);
                    }
                }
            }
            tally
        })
        .reduce(Tally::default, Tally::merge);
    let detail = format!("{} configurations, {}", configs.len(), tally.summary());
    (outcome(tally.clean(), detail), tally)
}

fn chain_lower_bound() -> Outcome {
    let mut configs = Vec::new();
    for k in 1..=2 {
        for h in 2..=5 {
            for f in 0..=5 - h {
                if 2 * f >= k * h {
                    configs.push((k, h, f));
                }
            }
        }
    }
    let mut failures = Vec::new();
    let mut defeated_pairs = Vec::new();
    for &(k, h, f) in &configs {
        let chain = build_chain(k, h, f).unwrap();
        let ctx = LevelContext::top(k, h, f).unwrap();
        for input in bits() {
            let mut defeats = Vec::new();
            for pair in 0..chain.pairs() {
                let mut adv = chain_adversary(&chain, pair, &input).unwrap();
                let exec = broadcast_p(&ctx, &input, &mut adv).unwrap();
                if exec.values != adv.expected_values() {
                    failures.push(format!(
                        "({k},{h},{f}) pair {pair}: real run left the simulation"
                    ));
                }
                if !exec.agreement() {
                    defeats.push(pair);
                }
            }
            if defeats.is_empty() {
                failures.push(format!("({k},{h},{f}) input {input}: no pair defeated"));
            }
            defeated_pairs.push(format!("({k},{h},{f})/{input}:{defeats:?}"));
        }
    }
    let detail = if failures.is_empty() {
        format!(
            "{} configurations defeated, pairs {}",
            configs.len(),
            defeated_pairs.join(" ")
        )
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn classical_column() -> Outcome {
    let cfg = SweepConfig {
        max_k: 1,
        max_h: 3,
        max_f: 1,
        max_parties: 4,
        trials: 200,
        ..SweepConfig::default()
    };
    let table = harness::sweep(&cfg, &AdversaryRegistry::with_builtins()).unwrap();
    let safe = table.row(1, 3, 1).unwrap();
    let broken = table.row(1, 2, 1).unwrap();
    let pass = safe.pass
        && safe.threshold.class == Threshold::Achievable
        && broken.pass
        && broken.threshold.class == Threshold::Impossible;
    outcome(
        pass,
        format!("(3,1) succeeds and (2,1) is defeated\n{table}"),
    )
}

fn counting_bound() -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for k in 1..=4 {
        for h in 2..=6 {
            for f in 0..=8 {
                checked += 1;
                let arithmetic = 2 * f >= k * h;
                let built = build_chain(k, h, f);
                if ring_feasible(k, h, f) != arithmetic || built.is_ok() != arithmetic {
                    bad.push(format!("({k},{h},{f})"));
                }
                if let Ok(chain) = built {
                    if chain.validate().is_err() || chain.ring().len() < k + 2 {
                        bad.push(format!("({k},{h},{f}) invalid chain"));
                    }
                }
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{checked} triples, mismatches {bad:?}"),
    )
}

fn random_graph(rng: &mut ChaCha8Rng) -> TrustGraph {
    let n = rng.gen_range(4..=12);
    let h = rng.gen_range(2..=n.min(5));
    let density = rng.gen_range(0.2..0.9);
    let nodes: Vec<TrustNode> = (0..n).map(|i| TrustNode::Recipient(PartyId(i))).collect();
    let mut g = TrustGraph::new(nodes.clone(), h, 1);
    for (a, b) in nodes.iter().tuple_combinations() {
        if rng.gen_bool(density) {
            g.add_edge(a, b);
        }
    }
    g
}

/// Pruning as the definition states it: remove any one failing edge, one at
/// a time, in random order.
fn prune_in_random_order(g: &TrustGraph, rng: &mut ChaCha8Rng) -> TrustGraph {
    let mut g = g.clone();
    loop {
        let failing: Vec<_> = g
            .edges()
            .into_iter()
            .filter(|(a, b)| !has_bistar(&g, a, b))
            .collect();
        let Some((a, b)) = failing.choose(rng) else {
            return g;
        };
        g.remove_edge(a, b);
    }
}

fn graph_properties(cluster_paths: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut diverged = 0;
    let mut lost_cliques = 0;
    for _ in 0..200 {
        let mut g = random_graph(&mut rng);
        // Plant an h-clique on a random subset.
        let mut nodes = g.nodes().to_vec();
        nodes.shuffle(&mut rng);
        let clique: Vec<TrustNode> = nodes.into_iter().take(g.h()).collect();
        for (a, b) in clique.iter().tuple_combinations() {
            g.add_edge(a, b);
        }
        let reference = prune(&g);
        for _ in 0..100 {
            if prune_in_random_order(&g, &mut rng) != reference {
                diverged += 1;
            }
        }
        if clique
            .iter()
            .tuple_combinations()
            .any(|(a, b)| !reference.has_edge(a, b))
        {
            lost_cliques += 1;
        }
    }
    let pass = diverged == 0 && lost_cliques == 0 && cluster_paths == 0;
    outcome(
        pass,
        format!(
            "200 graphs x 100 orders, {diverged} divergent, {lost_cliques} cliques lost, \
             {cluster_paths} sender-cluster paths in pruned graphs of criteria 1-2"
        ),
    )
}

fn reductions() -> Outcome {
    let mut runs = 0u64;
    let mut bad = Vec::new();
    for h in 2..=5usize {
        for f in 0..=5 - h {
            if h <= f {
                continue;
            }
            let cfg = Config::top_level(1, h, f).unwrap();
            let parties: BTreeSet<PartyId> = (0..cfg.n).map(PartyId).collect();
            for size in 0..=f {
                for corrupt in parties.iter().copied().combinations(size) {
                    let corrupt: BTreeSet<PartyId> = corrupt.into_iter().collect();
                    for inputs in 0u32..1 << cfg.n {
                        for subs in 0u32..1 << size {
                            runs += 1;
                            let inputs: BTreeMap<PartyId, Payload> = parties
                                .iter()
                                .map(|p| (*p, Payload::bit(inputs >> p.0 & 1 == 1)))
                                .collect();
                            let substitutes = corrupt
                                .iter()
                                .enumerate()
                                .map(|(i, p)| (*p, Payload::bit(subs >> i & 1 == 1)))
                                .collect();
                            let mut channel =
                                IdealBroadcast::new(parties.clone(), corrupt.clone(), substitutes);
                            let out =
                                consensus_from_broadcast(&inputs, &cfg, &corrupt, &mut channel)
                                    .unwrap();
                            let values: BTreeSet<&Payload> = out.values().collect();
                            let compliant_inputs: BTreeSet<&Payload> = inputs
                                .iter()
                                .filter(|(p, _)| !corrupt.contains(p))
                                .map(|(_, v)| v)
                                .collect();
                            let valid = compliant_inputs.len() > 1 || values == compliant_inputs;
                            if values.len() > 1 || out.len() != cfg.n - size || !valid {
                                bad.push(format!("(h={h},f={f}) corrupt {corrupt:?}"));
                            }
                        }
                    }
                }
            }
        }
    }
    let mut refused = 0;
    let mut refusal_cases = 0;
    for h in 2..=4usize {
        for f in h..=5 {
            refusal_cases += 1;
            let cfg = Config::top_level(1, h, f).unwrap();
            let parties: BTreeSet<PartyId> = (0..cfg.n).map(PartyId).collect();
            let inputs = parties.iter().map(|p| (*p, Payload::bit(true))).collect();
            let corrupt: BTreeSet<PartyId> = parties.iter().copied().take(f).collect();
            let mut channel = IdealBroadcast::new(parties, corrupt.clone(), BTreeMap::new());
            if let Err(ProtocolError::FaultyMajority { .. }) =
                consensus_from_broadcast(&inputs, &cfg, &corrupt, &mut channel)
            {
                refused += 1;
            }
        }
    }
    let pass = bad.is_empty() && refused == refusal_cases;
    outcome(
        pass,
        format!(
            "{runs} exhaustive runs, {} failures, refused {refused}/{refusal_cases} with h <= f",
            bad.len()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let registry = AdversaryRegistry::with_builtins();
    let configs = [
        RunConfig {
            k: 2,
            h: 3,
            f: 2,
            ..RunConfig::default()
        },
        RunConfig {
            k: 2,
            h: 3,
            f: 2,
            adversary: "random".into(),
            seed: 42,
            ..RunConfig::default()
        },
        RunConfig {
            k: 1,
            h: 2,
            f: 1,
            adversary: "chain".into(),
            ..RunConfig::default()
        },
        RunConfig {
            k: 1,
            h: 3,
            f: 1,
            adversary: "exhaustive".into(),
            ..RunConfig::default()
        },
    ];
    let mut differing = Vec::new();
    for (i, cfg) in configs.iter().enumerate() {
        let mut texts = Vec::new();
        for rep in 0..3 {
            let path = dir.path().join(format!("{i}-{rep}.jsonl"));
            let cfg = RunConfig {
                trace: Some(path.clone()),
                ..cfg.clone()
            };
            harness::run(&cfg, &registry).unwrap();
            texts.push(std::fs::read(&path).unwrap());
        }
        let replayed = harness::replay(&dir.path().join(format!("{i}-0.jsonl"))).unwrap();
        if texts.iter().any(|t| *t != texts[0]) || !replayed.ok() {
            differing.push(cfg.adversary.clone());
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "{} configurations x 3 repetitions plus replay, differing {differing:?}",
            configs.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let mut timed = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} [{name}]: {verdict} ({:.1?}) {}",
            started.elapsed(),
            o.detail
        );
        results.push(o.pass);
    };

    let mut paths = 0;
    timed(1, "exhaustive upper bound", &mut || {
        let (o, t) = exhaustive_upper_bound();
        paths += t.cluster_paths;
        o
    });
    timed(2, "randomized upper bound", &mut || {
        let (o, t) = randomized_upper_bound();
        paths += t.cluster_paths;
        o
    });
    timed(3, "chain lower bound", &mut chain_lower_bound);
    timed(4, "classical column", &mut classical_column);
    timed(5, "counting bound", &mut counting_bound);
    timed(6, "graph properties", &mut || graph_properties(paths));
    timed(7, "reductions", &mut reductions);
    timed(8, "determinism", &mut determinism);

    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
