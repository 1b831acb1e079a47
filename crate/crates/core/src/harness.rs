//! Running the protocol against adversary classes: single runs with traces,
//! threshold sweeps and trace replay.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{
    AdversaryError, AdversaryRegistry, ClassOptions, EnumerationOptions, Strategy,
    StrategyDescriptor,
};
use crate::netmodel::{Event, NetError, PartyId, Payload, Transcript, VerdictRecord};
use crate::protocol::{broadcast_p, LevelContext, ProtocolError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Usage(String),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One `run` invocation. Loadable from JSON with the same names as the
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: usize,
    pub h: usize,
    pub f: usize,
    pub input: Payload,
    /// Adversary class name from the registry.
    pub adversary: String,
    /// Pins a single strategy; overrides `adversary`.
    pub strategy: Option<StrategyDescriptor>,
    /// First seed of the random class.
    pub seed: u64,
    /// Number of random seeds, starting at `seed`.
    pub trials: u64,
    /// Compliant pair for the chain class; all pairs when absent.
    pub pair: Option<usize>,
    pub depth_bound: Option<usize>,
    pub max_n: usize,
    pub override_guard: bool,
    pub trace: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enumeration = EnumerationOptions::default();
        RunConfig {
            k: 1,
            h: 3,
            f: 1,
            input: Payload::bit(true),
            adversary: "none".into(),
            strategy: None,
            seed: 0,
            trials: 1,
            pair: None,
            depth_bound: enumeration.depth_bound,
            max_n: enumeration.max_n,
            override_guard: enumeration.override_guard,
            trace: None,
        }
    }
}

impl RunConfig {
    pub fn context(&self) -> Result<LevelContext, HarnessError> {
        if self.k == 0 || self.h < 2 {
            return Err(HarnessError::Usage(format!(
                "need k >= 1 and h >= 2, got k = {}, h = {}",
                self.k, self.h
            )));
        }
        if self.input.is_empty() {
            return Err(HarnessError::Usage("empty input".into()));
        }
        Ok(LevelContext::top(self.k, self.h, self.f)?)
    }

    pub fn class_options(&self) -> ClassOptions {
        ClassOptions {
            input: self.input.clone(),
            seeds: self.seed..self.seed.saturating_add(self.trials),
            pair: self.pair,
            enumeration: EnumerationOptions {
                depth_bound: self.depth_bound,
                max_n: self.max_n,
                override_guard: self.override_guard,
            },
        }
    }
}

/// Outcome of one execution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub agreement: bool,
    /// `None` when the sender is faulty.
    pub validity: Option<bool>,
    pub anomalies: Vec<String>,
    pub casts: usize,
    pub scheduled_casts: usize,
    pub wall_time: Duration,
    pub input: Payload,
    pub corrupt: Vec<PartyId>,
    pub values: BTreeMap<PartyId, Payload>,
    pub adversary: StrategyDescriptor,
}

impl Verdict {
    /// Agreement or validity failed.
    pub fn violated(&self) -> bool {
        !self.agreement || self.validity == Some(false)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let adversary = serde_json::to_string(&self.adversary).map_err(|_| fmt::Error)?;
        writeln!(f, "adversary  {adversary}")?;
        let corrupt: Vec<String> = self.corrupt.iter().map(ToString::to_string).collect();
        writeln!(f, "corrupt    [{}]", corrupt.join(" "))?;
        writeln!(f, "input      {}", self.input)?;
        let values: Vec<String> = self
            .values
            .iter()
            .map(|(p, v)| format!("{p}={v}"))
            .collect();
        writeln!(f, "values     {}", values.join(" "))?;
        writeln!(f, "agreement  {}", self.agreement)?;
        match self.validity {
            Some(v) => writeln!(f, "validity   {v}")?,
            None => writeln!(f, "validity   n/a (faulty sender)")?,
        }
        writeln!(
            f,
            "casts      {} ({} scheduled)",
            self.casts, self.scheduled_casts
        )?;
        for a in &self.anomalies {
            writeln!(f, "anomaly    {a}")?;
        }
        write!(f, "wall time  {:.3?}", self.wall_time)
    }
}

/// Runs one strategy and appends the verdict to the transcript.
pub fn execute(
    ctx: &LevelContext,
    input: &Payload,
    strategy: &mut dyn Strategy,
) -> Result<(Verdict, Transcript), HarnessError> {
    let started = Instant::now();
    let exec = broadcast_p(ctx, input, strategy)?;
    let wall_time = started.elapsed();
    let adversary = strategy.descriptor();
    let verdict = Verdict {
        agreement: exec.agreement(),
        validity: exec.validity(),
        anomalies: exec.anomalies.iter().map(ToString::to_string).collect(),
        casts: exec.casts,
        scheduled_casts: exec.prescribed_casts,
        wall_time,
        input: exec.input.clone(),
        corrupt: exec.corrupt.iter().copied().collect(),
        values: exec.values.clone(),
        adversary,
    };
    let mut transcript = exec.transcript;
    let cfg = ctx.cfg;
    transcript.push(Event::Verdict(VerdictRecord {
        k: cfg.k,
        h: cfg.h,
        f: cfg.f,
        sender: ctx.sender,
        input: verdict.input.clone(),
        corrupt: verdict.corrupt.clone(),
        adversary: serde_json::to_value(&verdict.adversary).expect("descriptors serialize"),
        agreement: verdict.agreement,
        validity: verdict.validity,
        anomalies: verdict.anomalies.clone(),
        casts: verdict.casts,
    }));
    Ok((verdict, transcript))
}

/// Aggregate of running every strategy a configuration selects.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub threshold: ThresholdCheck,
    pub executions: u64,
    pub violations: u64,
    pub anomalous: u64,
    /// The first violating execution, else the first anomalous one, else
    /// the first one.
    pub verdict: Verdict,
    pub transcript: Transcript,
}

impl RunReport {
    /// Below the threshold nothing may go wrong; above it any outcome is
    /// allowed.
    pub fn expectations_met(&self) -> bool {
        match self.threshold.class {
            Threshold::Achievable => self.violations == 0 && self.anomalous == 0,
            Threshold::Impossible => true,
        }
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "k={} h={} f={} n={}  {}",
            c.k,
            c.h,
            c.f,
            c.h + c.f,
            self.threshold
        )?;
        writeln!(
            f,
            "executions {}  violations {}  anomalous {}",
            self.executions, self.violations, self.anomalous
        )?;
        write!(f, "{}", self.verdict)
    }
}

/// Executes every strategy selected by `cfg` and writes the trace of the
/// reported execution when `cfg.trace` is set.
pub fn run(cfg: &RunConfig, registry: &AdversaryRegistry) -> Result<RunReport, HarnessError> {
    let ctx = cfg.context()?;
    let strategies: Box<dyn Iterator<Item = Box<dyn Strategy>>> = match &cfg.strategy {
        Some(d) => Box::new(std::iter::once(d.instantiate(&ctx)?)),
        None => registry
            .get(&cfg.adversary)?
            .strategies(&ctx, &cfg.class_options())?,
    };

    let mut executions = 0;
    let mut violations = 0;
    let mut anomalous = 0;
    let mut shown: Option<(Verdict, Transcript, u8)> = None;
    for mut s in strategies {
        let (verdict, transcript) = execute(&ctx, &cfg.input, s.as_mut())?;
        executions += 1;
        let rank = if verdict.violated() {
            violations += 1;
            2
        } else if !verdict.anomalies.is_empty() {
            anomalous += 1;
            1
        } else {
            0
        };
        if shown.as_ref().is_none_or(|(_, _, r)| rank > *r) {
            shown = Some((verdict, transcript, rank));
        }
    }
    let Some((verdict, transcript, _)) = shown else {
        return Err(HarnessError::Usage(format!(
            "adversary class {:?} selects no strategies here",
            cfg.adversary
        )));
    };
    if let Some(path) = &cfg.trace {
        transcript.write_to(path).map_err(io_error(path))?;
    }
    Ok(RunReport {
        config: cfg.clone(),
        threshold: check_threshold(cfg.k, cfg.h, cfg.f),
        executions,
        violations,
        anomalous,
        verdict,
        transcript,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    Achievable,
    Impossible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ThresholdCheck {
    pub k: usize,
    pub h: usize,
    pub f: usize,
    pub class: Threshold,
}

impl fmt::Display for ThresholdCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (two_f, kh) = (2 * self.f, self.k * self.h);
        match self.class {
            Threshold::Achievable => write!(f, "achievable: 2f = {two_f} < kh = {kh}"),
            Threshold::Impossible => write!(f, "impossible: 2f = {two_f} >= kh = {kh}"),
        }
    }
}

/// Broadcast is achievable exactly when `2f < kh`.
pub fn check_threshold(k: usize, h: usize, f: usize) -> ThresholdCheck {
    let class = if 2 * f < k * h {
        Threshold::Achievable
    } else {
        Threshold::Impossible
    };
    ThresholdCheck { k, h, f, class }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub max_k: usize,
    pub max_h: usize,
    pub max_f: usize,
    /// Skip configurations with more parties.
    pub max_parties: usize,
    pub classes: Vec<String>,
    pub input: Payload,
    /// Seeds per configuration for the random class.
    pub trials: u64,
    pub enumeration: EnumerationOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            max_k: 2,
            max_h: 4,
            max_f: 3,
            max_parties: 5,
            classes: ["none", "silent", "random", "chain", "exhaustive"]
                .map(String::from)
                .to_vec(),
            input: Payload::bit(true),
            trials: 100,
            enumeration: EnumerationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ClassOutcome {
    /// The class does not apply here (infeasible chain, guarded size).
    Skipped { reason: String },
    Ran {
        runs: u64,
        violations: u64,
        anomalous: u64,
    },
}

impl fmt::Display for ClassOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassOutcome::Skipped { .. } => write!(f, "-"),
            ClassOutcome::Ran {
                runs, violations, ..
            } if *violations > 0 => write!(f, "defeated {violations}/{runs}"),
            ClassOutcome::Ran {
                runs, anomalous, ..
            } if *anomalous > 0 => write!(f, "anomaly {anomalous}/{runs}"),
            ClassOutcome::Ran { runs, .. } => write!(f, "held {runs}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: ThresholdCheck,
    pub outcomes: Vec<(String, ClassOutcome)>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub classes: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, k: usize, h: usize, f: usize) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| (r.threshold.k, r.threshold.h, r.threshold.f) == (k, h, f))
    }
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut header = vec!["k".to_string(), "h".into(), "f".into(), "predicted".into()];
        header.extend(self.classes.iter().cloned());
        header.push("result".into());
        let mut lines = vec![header];
        for row in &self.rows {
            let t = row.threshold;
            let mut line = vec![
                t.k.to_string(),
                t.h.to_string(),
                t.f.to_string(),
                match t.class {
                    Threshold::Achievable => "succeeds".into(),
                    Threshold::Impossible => "defeated".into(),
                },
            ];
            line.extend(row.outcomes.iter().map(|(_, o)| o.to_string()));
            line.push(if row.pass { "PASS" } else { "FAIL" }.into());
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        for (i, line) in lines.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}", cells.join("  ").trim_end())?;
        }
        Ok(())
    }
}

fn class_outcome(
    ctx: &LevelContext,
    registry: &AdversaryRegistry,
    class: &str,
    opts: &ClassOptions,
) -> Result<ClassOutcome, HarnessError> {
    let stream = match registry.get(class)?.strategies(ctx, opts) {
        Ok(s) => s,
        Err(e @ (AdversaryError::Infeasible { .. } | AdversaryError::Guard { .. })) => {
            return Ok(ClassOutcome::Skipped {
                reason: e.to_string(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let (mut runs, mut violations, mut anomalous) = (0, 0, 0);
    for mut s in stream {
        let (v, _) = execute(ctx, &opts.input, s.as_mut())?;
        runs += 1;
        violations += u64::from(v.violated());
        anomalous += u64::from(!v.anomalies.is_empty());
    }
    Ok(ClassOutcome::Ran {
        runs,
        violations,
        anomalous,
    })
}

fn sweep_row(
    (k, h, f): (usize, usize, usize),
    cfg: &SweepConfig,
    registry: &AdversaryRegistry,
) -> Result<SweepRow, HarnessError> {
    let ctx = LevelContext::top(k, h, f)?;
    let opts = ClassOptions {
        input: cfg.input.clone(),
        seeds: 0..cfg.trials,
        pair: None,
        enumeration: cfg.enumeration,
    };
    let outcomes = cfg
        .classes
        .iter()
        .map(|c| Ok((c.clone(), class_outcome(&ctx, registry, c, &opts)?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let threshold = check_threshold(k, h, f);
    let ran = outcomes.iter().filter_map(|(_, o)| match o {
        ClassOutcome::Ran {
            violations,
            anomalous,
            ..
        } => Some((*violations, *anomalous)),
        ClassOutcome::Skipped { .. } => None,
    });
    let pass = match threshold.class {
        Threshold::Achievable => ran.clone().all(|(v, a)| v == 0 && a == 0),
        Threshold::Impossible => ran.clone().any(|(v, _)| v > 0),
    };
    Ok(SweepRow {
        threshold,
        outcomes,
        pass,
    })
}

/// One row per `(k, h, f)` in range, computed in parallel and listed in
/// `(k, h, f)` order.
pub fn sweep(cfg: &SweepConfig, registry: &AdversaryRegistry) -> Result<SweepTable, HarnessError> {
    for c in &cfg.classes {
        registry.get(c)?;
    }
    let mut points = Vec::new();
    for k in 1..=cfg.max_k {
        for h in 2..=cfg.max_h {
            for f in 0..=cfg.max_f {
                if h + f <= cfg.max_parties {
                    points.push((k, h, f));
                }
            }
        }
    }
    let rows = points
        .into_par_iter()
        .map(|p| sweep_row(p, cfg, registry))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepTable {
        classes: cfg.classes.clone(),
        rows,
    })
}

/// Result of checking a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub recorded: VerdictRecord,
    pub agreement: bool,
    pub validity: Option<bool>,
    /// The recomputed verdict matches the recorded one.
    pub verdict_matches: bool,
    /// Re-executing the recorded strategy reproduced the file byte for byte.
    pub identical: bool,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.verdict_matches && self.identical
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.recorded;
        writeln!(
            f,
            "k={} h={} f={} input {}  adversary {}",
            r.k, r.h, r.f, r.input, r.adversary
        )?;
        writeln!(
            f,
            "recorded   agreement {}  validity {:?}",
            r.agreement, r.validity
        )?;
        writeln!(
            f,
            "recomputed agreement {}  validity {:?}",
            self.agreement, self.validity
        )?;
        writeln!(
            f,
            "verdict    {}",
            if self.verdict_matches {
                "matches"
            } else {
                "MISMATCH"
            }
        )?;
        write!(
            f,
            "re-run     {}",
            if self.identical {
                "identical"
            } else {
                "DIFFERS"
            }
        )
    }
}

/// Agreement and validity from the output events alone.
pub fn verdict_from_outputs(transcript: &Transcript) -> (bool, Option<bool>) {
    let outputs: Vec<_> = transcript.outputs().collect();
    let agreement = outputs.windows(2).all(|w| w[0].value == w[1].value);
    let validity = outputs
        .iter()
        .find(|o| o.role == crate::netmodel::Role::Sender)
        .map(|s| outputs.iter().all(|o| o.value == s.value));
    (agreement, validity)
}

/// Re-derives the verdict of a trace and re-executes its strategy.
pub fn replay_text(text: &str) -> Result<ReplayReport, HarnessError> {
    let transcript = Transcript::from_jsonl(text)?;
    let recorded = transcript
        .verdict()
        .cloned()
        .ok_or_else(|| HarnessError::Usage("trace has no verdict event".into()))?;
    let (agreement, validity) = verdict_from_outputs(&transcript);
    let verdict_matches = agreement == recorded.agreement && validity == recorded.validity;

    let descriptor: StrategyDescriptor = serde_json::from_value(recorded.adversary.clone())
        .map_err(|e| HarnessError::Usage(format!("unreadable adversary descriptor: {e}")))?;
    let ctx = LevelContext::top(recorded.k, recorded.h, recorded.f)?;
    let mut strategy = descriptor.instantiate(&ctx)?;
    let (_, again) = execute(&ctx, &recorded.input, strategy.as_mut())?;
    Ok(ReplayReport {
        recorded,
        agreement,
        validity,
        verdict_matches,
        identical: again.to_jsonl() == text,
    })
}

pub fn replay(path: &Path) -> Result<ReplayReport, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    replay_text(&text)
}
