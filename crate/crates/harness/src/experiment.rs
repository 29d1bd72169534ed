//! State -> bases -> dataset -> trained network, shared by every command.

use std::time::Instant;

use qst_core::measurement::{
    acquire, enumerate_bases, filter_informative, filter_nonzero_expectation, select_bases, BasisSet,
};
use qst_core::seed::derive_seed;
use qst_core::{make_mixed_state, DensityMatrix, MeasurementDataset, MixedKind, PureState, QstError, State};
use qst_neural::network::{build_discriminator, build_network, Architecture, Network};
use qst_neural::{train_cgan, train_reconstruction, TrainTrace};

use crate::config::{ExperimentConfig, Pool, StateKind, StateSpec, Strategy};
use crate::error::{config_err, Result};

pub fn build_state(spec: &StateSpec) -> Result<State> {
    let n = spec.n;
    let seed = || spec.seed.ok_or_else(|| config_err("state.seed", "unresolved"));
    Ok(match spec.kind {
        StateKind::Ghz => State::Pure(PureState::ghz(n)?),
        StateKind::W => State::Pure(PureState::w(n)?),
        StateKind::RandomPure => State::Pure(PureState::random(n, seed()?)?),
        StateKind::Basis => State::Pure(PureState::basis(n, spec.index.unwrap_or(0))?),
        StateKind::Werner => State::Mixed(make_mixed_state(
            MixedKind::Werner {
                p: spec.p.unwrap_or(0.0),
            },
            n,
        )?),
        StateKind::RandomMixed => State::Mixed(DensityMatrix::random_mixture(n, spec.rank.unwrap_or(1), seed()?)?),
        StateKind::MaximallyMixed => State::Mixed(DensityMatrix::maximally_mixed(n)?),
    })
}

/// Candidate strings after the pool filter, identity excluded.
pub fn candidate_pool(config: &ExperimentConfig, state: &State) -> Result<BasisSet> {
    let m = &config.measurement;
    let n = config.state.n;
    let eps = m.epsilon.unwrap_or(qst_core::measurement::DEFAULT_EPSILON);
    let all = enumerate_bases(n, m.alphabet.expect("resolved"))?;
    let pool = match m.pool.expect("resolved") {
        Pool::All => {
            let kept = all.strings().iter().filter(|s| !s.is_identity()).cloned().collect();
            BasisSet::new(n, kept)?
        }
        Pool::Nonzero => filter_nonzero_expectation(state.as_ref(), &all, eps)?,
        Pool::Informative => filter_informative(state.as_ref(), &all, eps)?,
    };
    Ok(pool)
}

/// The bases a run measures; `count` overrides the configured count.
pub fn choose_bases(config: &ExperimentConfig, state: &State, count: Option<usize>) -> Result<BasisSet> {
    let m = &config.measurement;
    let n = config.state.n;
    let strategy = m.strategy.expect("resolved");
    let bases = match strategy {
        Strategy::Explicit => {
            let list = m.bases.as_deref().unwrap_or_default();
            let k = count.unwrap_or(list.len()).min(list.len());
            let strs: Vec<&str> = list[..k].iter().map(String::as_str).collect();
            if strs.is_empty() {
                return Err(QstError::Argument("empty basis set".into()).into());
            }
            BasisSet::parse(n, &strs)?
        }
        Strategy::WholePool => candidate_pool(config, state)?,
        _ => {
            let pool = candidate_pool(config, state)?;
            let k = count.or(m.count).unwrap_or(0);
            select_bases(
                &pool,
                k,
                strategy.selection().expect("ranked or random"),
                Some(state.as_ref()),
                derive_seed(config.seed, "select", 0),
            )?
        }
    };
    if bases.is_empty() {
        return Err(QstError::Argument("empty basis set".into()).into());
    }
    Ok(bases)
}

pub fn measure(config: &ExperimentConfig, state: &State, bases: &BasisSet) -> Result<MeasurementDataset> {
    let m = &config.measurement;
    let seed = m.shots.map(|_| derive_seed(config.seed, "acquire", 0));
    Ok(acquire(m.method, state.as_ref(), bases, m.shots, seed)?)
}

pub struct RunOutcome {
    pub network: Network,
    pub trace: TrainTrace,
    pub wall_ms: f64,
}

/// Network seed of repeat `r`; the discriminator has its own stream.
pub fn network_seed(config: &ExperimentConfig, repeat: usize) -> u64 {
    derive_seed(config.seed, "network", repeat as u64)
}

/// Builds and trains one network on `dataset`.
pub fn train_once(
    config: &ExperimentConfig,
    architecture: Architecture,
    state: &State,
    dataset: &MeasurementDataset,
    repeat: usize,
) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut network = build_network(
        architecture,
        config.state.n,
        dataset.method,
        &dataset.bases,
        network_seed(config, repeat),
        config.build,
    )?;
    let trace = if architecture == Architecture::Cgan {
        let mut disc = build_discriminator(
            &network.spec,
            derive_seed(config.seed, "discriminator", repeat as u64),
            config.build,
        )?;
        train_cgan(&mut network, &mut disc, dataset, Some(state.as_ref()), &config.train, &config.cgan)?
    } else {
        train_reconstruction(&mut network, dataset, Some(state.as_ref()), &config.train)?
    };
    Ok(RunOutcome {
        network,
        trace,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// First logged iteration whose fidelity reached `target`.
pub fn iterations_to(trace: &TrainTrace, target: f64) -> Option<usize> {
    trace
        .records
        .iter()
        .find(|r| r.fidelity.is_some_and(|f| f >= target))
        .map(|r| r.iteration)
}
