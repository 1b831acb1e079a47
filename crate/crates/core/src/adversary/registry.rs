//! Named adversary classes, selected at run time.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use itertools::Itertools;

use crate::netmodel::{PartyId, Payload};
use crate::protocol::LevelContext;

use super::chain::ChainSimulation;
use super::{
    chain_for, enumerate_adversaries, random_adversary, AdversaryError, ChainStrategy,
    EnumerationOptions, Silent, Strategy,
};

pub type StrategyStream = Box<dyn Iterator<Item = Box<dyn Strategy>>>;

/// Knobs shared by all classes; each class reads the ones it needs.
#[derive(Debug, Clone)]
pub struct ClassOptions {
    /// Sender input, used by classes that pick it themselves.
    pub input: Payload,
    pub seeds: Range<u64>,
    /// Restrict the chain class to one compliant pair.
    pub pair: Option<usize>,
    pub enumeration: EnumerationOptions,
}

impl Default for ClassOptions {
    fn default() -> Self {
        ClassOptions {
            input: Payload::bit(false),
            seeds: 0..1,
            pair: None,
            enumeration: EnumerationOptions::default(),
        }
    }
}

/// A family of strategies for one run configuration.
pub trait AdversaryClass: Send + Sync {
    fn name(&self) -> &'static str;

    fn summary(&self) -> &'static str;

    fn strategies(
        &self,
        ctx: &LevelContext,
        opts: &ClassOptions,
    ) -> Result<StrategyStream, AdversaryError>;
}

struct NoneClass;

impl AdversaryClass for NoneClass {
    fn name(&self) -> &'static str {
        "none"
    }

    fn summary(&self) -> &'static str {
        "no faulty parties"
    }

    fn strategies(
        &self,
        _: &LevelContext,
        _: &ClassOptions,
    ) -> Result<StrategyStream, AdversaryError> {
        let s: Box<dyn Strategy> = Box::new(Silent::new(Default::default()));
        Ok(Box::new(std::iter::once(s)))
    }
}

struct SilentClass;

impl AdversaryClass for SilentClass {
    fn name(&self) -> &'static str {
        "silent"
    }

    fn summary(&self) -> &'static str {
        "every largest faulty set the budget allows, sending nothing"
    }

    fn strategies(
        &self,
        ctx: &LevelContext,
        _: &ClassOptions,
    ) -> Result<StrategyStream, AdversaryError> {
        let parties: Vec<PartyId> = ctx.participants.iter().copied().collect();
        let ctx = ctx.clone();
        let size = ctx.cfg.f.min(parties.len());
        let with_sender = parties
            .into_iter()
            .combinations(size)
            .map(|c| c.into_iter().collect())
            .filter(move |c| ctx.check_budget(c).is_ok());
        Ok(Box::new(
            with_sender.map(|c| Box::new(Silent::new(c)) as Box<dyn Strategy>),
        ))
    }
}

struct RandomClass;

impl AdversaryClass for RandomClass {
    fn name(&self) -> &'static str {
        "random"
    }

    fn summary(&self) -> &'static str {
        "seeded random corruption and tampering, one run per seed"
    }

    fn strategies(
        &self,
        ctx: &LevelContext,
        opts: &ClassOptions,
    ) -> Result<StrategyStream, AdversaryError> {
        let ctx = ctx.clone();
        Ok(Box::new(opts.seeds.clone().map(move |seed| {
            Box::new(random_adversary(&ctx, seed)) as Box<dyn Strategy>
        })))
    }
}

struct ChainClass;

impl AdversaryClass for ChainClass {
    fn name(&self) -> &'static str {
        "chain"
    }

    fn summary(&self) -> &'static str {
        "ring partition played against itself; needs 2f >= kh"
    }

    fn strategies(
        &self,
        ctx: &LevelContext,
        opts: &ClassOptions,
    ) -> Result<StrategyStream, AdversaryError> {
        let chain = chain_for(ctx)?;
        let sim = Arc::new(ChainSimulation::run(&chain, &opts.input)?);
        let pairs: Vec<usize> = match opts.pair {
            Some(p) => vec![p],
            None => (0..chain.pairs()).collect(),
        };
        let strategies = pairs
            .into_iter()
            .map(|p| {
                ChainStrategy::from_simulation(Arc::clone(&sim), p)
                    .map(|s| Box::new(s) as Box<dyn Strategy>)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Box::new(strategies.into_iter()))
    }
}

struct ExhaustiveClass;

impl AdversaryClass for ExhaustiveClass {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn summary(&self) -> &'static str {
        "every faulty set and every binary payload at each faulty cast"
    }

    fn strategies(
        &self,
        ctx: &LevelContext,
        opts: &ClassOptions,
    ) -> Result<StrategyStream, AdversaryError> {
        let stream = enumerate_adversaries(ctx, &opts.enumeration)?;
        Ok(Box::new(stream.map(|s| Box::new(s) as Box<dyn Strategy>)))
    }
}

/// Classes by name.
pub struct AdversaryRegistry {
    classes: BTreeMap<&'static str, Box<dyn AdversaryClass>>,
}

impl AdversaryRegistry {
    pub fn empty() -> Self {
        AdversaryRegistry {
            classes: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(NoneClass));
        r.register(Box::new(SilentClass));
        r.register(Box::new(RandomClass));
        r.register(Box::new(ChainClass));
        r.register(Box::new(ExhaustiveClass));
        r
    }

    /// Adds a class, replacing any class of the same name.
    pub fn register(&mut self, class: Box<dyn AdversaryClass>) {
        self.classes.insert(class.name(), class);
    }

    pub fn get(&self, name: &str) -> Result<&dyn AdversaryClass, AdversaryError> {
        self.classes
            .get(name)
            .map(|c| c.as_ref())
            .ok_or_else(|| AdversaryError::UnknownClass(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.classes.keys().copied()
    }

    pub fn classes(&self) -> impl Iterator<Item = &dyn AdversaryClass> {
        self.classes.values().map(|c| c.as_ref())
    }
}

impl Default for AdversaryRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
