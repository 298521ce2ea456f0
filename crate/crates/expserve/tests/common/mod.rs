#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscomp_core::btrank::Side;
use viscomp_expserve::state::ChoiceAck;
use viscomp_expserve::{Command, Engine, ExpError, ExperimentConfig, LogicalClock, Outcome, SessionView, TrialView};

pub fn config(n: usize, target: usize, trials: usize, checks: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new((0..n).map(|i| format!("im{i:03}")).collect(), target, seed);
    cfg.trials_per_session = trials;
    cfg.attention_checks_per_session = checks;
    cfg
}

pub fn open(dir: &Path, cfg: &ExperimentConfig) -> Engine {
    Engine::open(dir, cfg, Box::new(LogicalClock::default())).unwrap()
}

pub fn start(engine: &mut Engine, rater: &str) -> SessionView {
    match engine.execute(Command::StartSession { rater_id: rater.into() }).unwrap() {
        Outcome::Started(v) => v,
        other => panic!("{other:?}"),
    }
}

pub fn choose(engine: &mut Engine, trial: &TrialView, winner: &str) -> Result<ChoiceAck, ExpError> {
    engine
        .execute(Command::Choice {
            session_id: trial.session_id.clone(),
            index: trial.index,
            winner: winner.into(),
        })
        .map(|o| match o {
            Outcome::Chose(ack) => ack,
            other => panic!("{other:?}"),
        })
}

/// Simulated rater: obeys attention checks unless told to fail them, and
/// otherwise prefers the stronger image with probability `accuracy`.
pub struct Rater {
    pub strengths: HashMap<String, f64>,
    pub accuracy: f64,
    pub fail_checks: bool,
}

impl Rater {
    /// Deterministic in the trial alone, so a resumed run repeats the same
    /// answers.
    pub fn answer(&self, trial: &TrialView) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(hash(&trial.session_id) ^ (trial.index as u64) << 32);
        if let Some(att) = &trial.attention {
            let obey = !self.fail_checks;
            let side = match (att.instructed_side, obey) {
                (Side::Left, true) | (Side::Right, false) => "left",
                _ => "right",
            };
            return side.to_string();
        }
        let sa = self.strengths.get(&trial.image_a).copied().unwrap_or(0.0);
        let sb = self.strengths.get(&trial.image_b).copied().unwrap_or(0.0);
        let better_a = sa >= sb;
        let correct = rng.random::<f64>() < self.accuracy;
        if better_a == correct {
            trial.image_a.clone()
        } else {
            trial.image_b.clone()
        }
    }
}

pub fn hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

pub fn planted(cfg: &ExperimentConfig, seed: u64) -> HashMap<String, f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    cfg.corpus.iter().map(|id| (id.clone(), r.random_range(-2.0..2.0))).collect()
}

/// Runs one full session and returns its final view.
pub fn run_session(engine: &mut Engine, rater_id: &str, rater: &Rater) -> SessionView {
    let view = start(engine, rater_id);
    let mut trial = view.trial.clone();
    while let Some(t) = trial {
        let ack = choose(engine, &t, &rater.answer(&t)).unwrap();
        trial = ack.next_trial;
    }
    engine.state().session_view(&view.session_id).unwrap()
}

/// Runs sessions with fresh rater ids until every slot is filled or a
/// session gets no trials. Returns the number of sessions run.
pub fn run_until_full(engine: &mut Engine, rater: &Rater) -> usize {
    let cfg = engine.state().config().clone();
    let slots = cfg.target_total_comparisons * cfg.raters_per_pair;
    let mut k = 0;
    while engine.state().filled_slots() < slots {
        let v = run_session(engine, &format!("rater{k}"), rater);
        k += 1;
        if v.complete.map_or(0, |c| c.answered) == 0 {
            break;
        }
    }
    k
}

/// Issues the next command of a scripted run, deciding only from the
/// engine's current state so a run can resume after a restart. Returns
/// false once every slot is filled.
pub fn script_step(engine: &mut Engine, rater: &Rater) -> bool {
    let cfg = engine.state().config().clone();
    if engine.state().filled_slots() >= cfg.target_total_comparisons * cfg.raters_per_pair {
        return false;
    }
    let n = engine.state().session_count();
    if n > 0 {
        let id = format!("sess-{n:06}");
        if let Some(t) = engine.state().session_view(&id).unwrap().trial {
            choose(engine, &t, &rater.answer(&t)).unwrap();
            return true;
        }
    }
    start(engine, &format!("rater{n}"));
    true
}
