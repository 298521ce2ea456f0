//! Deterministic experiment state machine.
//!
//! Every mutation is a [`Command`] applied with the timestamp it was logged
//! under, so replaying the log reproduces the state exactly, random number
//! generator included. A command that fails leaves the state untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use chrono::{DateTime, Utc};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use viscomp_core::btrank::{AttentionOutcome, Side};
use viscomp_core::{ComparisonRecord, Task};

use crate::{ExpError, ExperimentConfig};

/// A state mutation as stored in the log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    StartSession {
        rater_id: String,
    },
    Choice {
        session_id: String,
        index: usize,
        winner: String,
    },
    Questionnaire {
        session_id: String,
        answers: BTreeMap<String, String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Complete,
    Excluded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TrialKind {
    Pair { pair: usize },
    Attention { image: usize, instructed: Side },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Trial {
    index: usize,
    left: usize,
    right: usize,
    kind: TrialKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Session {
    id: String,
    rater_id: String,
    status: SessionStatus,
    check_positions: BTreeSet<usize>,
    trials: Vec<Trial>,
    answered: usize,
    failed_checks: usize,
    /// Indices into the experiment's record list.
    records: Vec<usize>,
    completion: Option<CompletionReason>,
    questionnaire_done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionReason {
    AllTrialsAnswered,
    PoolExhausted,
    Excluded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PairState {
    a: usize,
    b: usize,
    /// Slots held by sessions that were not excluded.
    filled: usize,
    /// Every rater ever assigned this pair, excluded ones included.
    seen_by: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireRecord {
    pub session_id: String,
    pub rater: String,
    pub timestamp: DateTime<Utc>,
    pub excluded: bool,
    pub answers: BTreeMap<String, String>,
}

/// Attention-check details shown to the client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionView {
    pub active: bool,
    pub instructed_side: Side,
    pub text: String,
}

/// One trial as presented to a rater.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub session_id: String,
    pub index: usize,
    pub total: usize,
    pub image_a: String,
    pub image_b: String,
    pub image_a_url: String,
    pub image_b_url: String,
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attention: Option<AttentionView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub reason: CompletionReason,
    pub answered: usize,
    pub questionnaire: Vec<Question>,
}

/// Where a session stands: the open trial or how it ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub rater_id: String,
    pub status: SessionStatus,
    pub task: Task,
    pub instructions: String,
    pub trials_per_session: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trial: Option<TrialView>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub complete: Option<Completion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceAck {
    pub accepted: bool,
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attention_passed: Option<bool>,
    pub status: SessionStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub next_trial: Option<TrialView>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub complete: Option<Completion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireAck {
    pub accepted: bool,
    pub session_id: String,
}

/// Result of applying a command.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Started(SessionView),
    Chose(ChoiceAck),
    Answered(QuestionnaireAck),
}

pub fn questionnaire() -> Vec<Question> {
    [
        ("strategy", "What strategy did you use to decide between the two images?"),
        (
            "consistent_types",
            "Were there kinds of images you consistently judged as higher? Which ones?",
        ),
        ("comments", "Any other comments about the task?"),
    ]
    .into_iter()
    .map(|(id, text)| Question {
        id: id.into(),
        text: text.into(),
    })
    .collect()
}

/// Full in-memory experiment state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Experiment {
    config: ExperimentConfig,
    rng: ChaCha8Rng,
    counts: Vec<u64>,
    pairs: Vec<PairState>,
    /// Pairs with open rater slots, oldest first.
    pending: VecDeque<usize>,
    sessions: Vec<Session>,
    records: Vec<ComparisonRecord>,
    questionnaires: Vec<QuestionnaireRecord>,
    #[serde(skip)]
    pair_index: HashMap<(usize, usize), usize>,
    #[serde(skip)]
    session_index: HashMap<String, usize>,
    #[serde(skip)]
    active_by_rater: HashMap<String, usize>,
}

impl PartialEq for Experiment {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.rng == other.rng
            && self.counts == other.counts
            && self.pairs == other.pairs
            && self.pending == other.pending
            && self.sessions == other.sessions
            && self.records == other.records
            && self.questionnaires == other.questionnaires
    }
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Left => "left",
        Side::Right => "right",
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExpError> {
        config.validate()?;
        let n = config.corpus.len();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            counts: vec![0; n],
            pairs: Vec::new(),
            pending: VecDeque::new(),
            sessions: Vec::new(),
            records: Vec::new(),
            questionnaires: Vec::new(),
            pair_index: HashMap::new(),
            session_index: HashMap::new(),
            active_by_rater: HashMap::new(),
            config,
        })
    }

    /// Restores the lookup tables that are not serialized.
    pub fn rebuild_indexes(&mut self) {
        self.pair_index = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| ((p.a.min(p.b), p.a.max(p.b)), i))
            .collect();
        self.session_index = self.sessions.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        self.active_by_rater = self
            .sessions
            .iter()
            .enumerate()
            .filter(|(_, s)| s.status == SessionStatus::Active)
            .map(|(i, s)| (s.rater_id.clone(), i))
            .collect();
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn apply(&mut self, cmd: &Command, at: DateTime<Utc>) -> Result<Outcome, ExpError> {
        match cmd {
            Command::StartSession { rater_id } => self.start_session(rater_id).map(Outcome::Started),
            Command::Choice {
                session_id,
                index,
                winner,
            } => self.record_choice(session_id, *index, winner, at).map(Outcome::Chose),
            Command::Questionnaire { session_id, answers } => {
                self.record_questionnaire(session_id, answers, at).map(Outcome::Answered)
            }
        }
    }

    /// Checks a command without applying it.
    pub fn validate(&self, cmd: &Command) -> Result<(), ExpError> {
        match cmd {
            Command::StartSession { rater_id } => self.check_start(rater_id),
            Command::Choice {
                session_id,
                index,
                winner,
            } => self.check_choice(session_id, *index, winner).map(|_| ()),
            Command::Questionnaire { session_id, .. } => self.check_questionnaire(session_id).map(|_| ()),
        }
    }

    fn check_start(&self, rater_id: &str) -> Result<(), ExpError> {
        if rater_id.trim().is_empty() {
            return Err(ExpError::Invalid("rater_id must not be empty".into()));
        }
        if let Some(&s) = self.active_by_rater.get(rater_id) {
            return Err(ExpError::Conflict(format!(
                "rater {rater_id} already has active session {}",
                self.sessions[s].id
            )));
        }
        Ok(())
    }

    fn start_session(&mut self, rater_id: &str) -> Result<SessionView, ExpError> {
        self.check_start(rater_id)?;
        let idx = self.sessions.len();
        let id = format!("sess-{:06}", idx + 1);
        let positions = sample(
            &mut self.rng,
            self.config.trials_per_session,
            self.config.attention_checks_per_session,
        )
        .into_iter()
        .collect();
        self.sessions.push(Session {
            id: id.clone(),
            rater_id: rater_id.to_string(),
            status: SessionStatus::Active,
            check_positions: positions,
            trials: Vec::new(),
            answered: 0,
            failed_checks: 0,
            records: Vec::new(),
            completion: None,
            questionnaire_done: false,
        });
        self.session_index.insert(id, idx);
        self.active_by_rater.insert(rater_id.to_string(), idx);
        self.advance(idx);
        Ok(self.session_view_at(idx))
    }

    /// Issues the next trial, or completes the session if it is finished.
    fn advance(&mut self, s: usize) {
        let index = self.sessions[s].answered;
        if index >= self.config.trials_per_session {
            self.finish(s, CompletionReason::AllTrialsAnswered);
            return;
        }
        let trial = if self.sessions[s].check_positions.contains(&index) {
            let image = self.rng.random_range(0..self.config.corpus.len());
            let instructed = if self.rng.random::<bool>() { Side::Left } else { Side::Right };
            Some(Trial {
                index,
                left: image,
                right: image,
                kind: TrialKind::Attention { image, instructed },
            })
        } else {
            let rater = self.sessions[s].rater_id.clone();
            self.assign_pair(&rater).map(|pair| {
                let p = &self.pairs[pair];
                let (left, right) = if self.rng.random::<bool>() { (p.a, p.b) } else { (p.b, p.a) };
                Trial {
                    index,
                    left,
                    right,
                    kind: TrialKind::Pair { pair },
                }
            })
        };
        match trial {
            Some(t) => self.sessions[s].trials.push(t),
            None => self.finish(s, CompletionReason::PoolExhausted),
        }
    }

    fn finish(&mut self, s: usize, reason: CompletionReason) {
        let session = &mut self.sessions[s];
        session.status = if reason == CompletionReason::Excluded {
            SessionStatus::Excluded
        } else {
            SessionStatus::Complete
        };
        session.completion = Some(reason);
        self.active_by_rater.remove(&session.rater_id);
    }

    /// Pending pairs first, then a fresh pair while the target allows one.
    fn assign_pair(&mut self, rater: &str) -> Option<usize> {
        let pos = self.pending.iter().position(|&p| !self.pairs[p].seen_by.contains(rater));
        let pair = match pos {
            Some(pos) => {
                let pair = self.pending[pos];
                let p = &mut self.pairs[pair];
                p.filled += 1;
                p.seen_by.insert(rater.to_string());
                if p.filled >= self.config.raters_per_pair {
                    self.pending.remove(pos);
                }
                pair
            }
            None => {
                if self.pairs.len() >= self.config.target_total_comparisons {
                    return None;
                }
                let (a, b) = self.draw_new_pair()?;
                let pair = self.pairs.len();
                self.counts[a] += 1;
                self.counts[b] += 1;
                self.pairs.push(PairState {
                    a,
                    b,
                    filled: 1,
                    seen_by: BTreeSet::from([rater.to_string()]),
                });
                self.pair_index.insert((a.min(b), a.max(b)), pair);
                if self.config.raters_per_pair > 1 {
                    self.pending.push_back(pair);
                }
                pair
            }
        };
        Some(pair)
    }

    /// Two distinct images drawn without replacement with weight
    /// `1 / (1 + count)`, restricted to pairs not created yet.
    fn draw_new_pair(&mut self) -> Option<(usize, usize)> {
        let n = self.config.corpus.len();
        let unused_partners = |a: usize, index: &HashMap<(usize, usize), usize>| -> Vec<usize> {
            (0..n)
                .filter(|&b| b != a && !index.contains_key(&(a.min(b), a.max(b))))
                .collect()
        };
        let mut candidates: Vec<usize> = (0..n).collect();
        loop {
            let weights: Vec<f64> = candidates.iter().map(|&i| 1.0 / (1.0 + self.counts[i] as f64)).collect();
            let k = weighted_index(&mut self.rng, &weights)?;
            let first = candidates[k];
            let partners = unused_partners(first, &self.pair_index);
            if partners.is_empty() {
                // Every pair with this image exists; drop it and draw again.
                candidates.remove(k);
                continue;
            }
            let weights: Vec<f64> = partners.iter().map(|&i| 1.0 / (1.0 + self.counts[i] as f64)).collect();
            let second = partners[weighted_index(&mut self.rng, &weights)?];
            return Some((first, second));
        }
    }

    fn session_idx(&self, session_id: &str) -> Result<usize, ExpError> {
        self.session_index
            .get(session_id)
            .copied()
            .ok_or_else(|| ExpError::NotFound(format!("unknown session {session_id}")))
    }

    /// Resolves the chosen side for the current trial.
    fn check_choice(&self, session_id: &str, index: usize, winner: &str) -> Result<(usize, Side), ExpError> {
        let s = self.session_idx(session_id)?;
        let session = &self.sessions[s];
        match session.status {
            SessionStatus::Active => {}
            SessionStatus::Excluded => return Err(ExpError::Conflict(format!("session {session_id} is excluded"))),
            SessionStatus::Complete => return Err(ExpError::Conflict(format!("session {session_id} is complete"))),
        }
        let trial = session.trials.last().expect("active sessions have an open trial");
        if index != trial.index {
            return Err(ExpError::Conflict(format!(
                "trial {index} is not the open trial (expected {})",
                trial.index
            )));
        }
        let (left, right) = (&self.config.corpus[trial.left], &self.config.corpus[trial.right]);
        let side = match (&trial.kind, winner) {
            (_, "left") => Side::Left,
            (_, "right") => Side::Right,
            (TrialKind::Pair { .. }, w) if w == left => Side::Left,
            (TrialKind::Pair { .. }, w) if w == right => Side::Right,
            (TrialKind::Attention { .. }, w) if w == left => {
                return Err(ExpError::Invalid(
                    "attention trials show one image twice; answer with \"left\" or \"right\"".into(),
                ))
            }
            _ => {
                return Err(ExpError::Invalid(format!(
                    "winner {winner} is not one of the displayed images ({left}, {right})"
                )))
            }
        };
        Ok((s, side))
    }

    fn record_choice(
        &mut self,
        session_id: &str,
        index: usize,
        winner: &str,
        at: DateTime<Utc>,
    ) -> Result<ChoiceAck, ExpError> {
        let (s, side) = self.check_choice(session_id, index, winner)?;
        let trial = self.sessions[s].trials.last().expect("checked").clone();
        let corpus = &self.config.corpus;
        let attention = match trial.kind {
            TrialKind::Attention { instructed, .. } => Some(AttentionOutcome {
                instructed_side: instructed,
                chosen_side: side,
                passed: instructed == side,
            }),
            TrialKind::Pair { .. } => None,
        };
        let winner_idx = if side == Side::Left { trial.left } else { trial.right };
        let record = ComparisonRecord {
            item_a: corpus[trial.left].clone(),
            item_b: corpus[trial.right].clone(),
            winner: corpus[winner_idx].clone(),
            rater: self.sessions[s].rater_id.clone(),
            session_id: session_id.to_string(),
            timestamp: at,
            is_attention_check: attention.is_some(),
            task: self.config.task,
            excluded: false,
            trial_index: Some(index),
            attention: attention.clone(),
        };
        self.records.push(record);
        let rec_idx = self.records.len() - 1;
        let session = &mut self.sessions[s];
        session.records.push(rec_idx);
        session.answered += 1;
        let passed = attention.as_ref().map(|a| a.passed);
        if passed == Some(false) {
            session.failed_checks += 1;
        }
        if session.failed_checks > 1 {
            self.exclude(s);
        } else {
            self.advance(s);
        }
        let view = self.session_view_at(s);
        Ok(ChoiceAck {
            accepted: true,
            index,
            attention_passed: passed,
            status: view.status,
            next_trial: view.trial,
            complete: view.complete,
        })
    }

    /// Flags the session's records and hands its pair slots back.
    fn exclude(&mut self, s: usize) {
        for &r in &self.sessions[s].records {
            self.records[r].excluded = true;
        }
        let pairs: Vec<usize> = self.sessions[s]
            .trials
            .iter()
            .filter_map(|t| match t.kind {
                TrialKind::Pair { pair } => Some(pair),
                TrialKind::Attention { .. } => None,
            })
            .collect();
        for pair in pairs {
            let p = &mut self.pairs[pair];
            let was_full = p.filled >= self.config.raters_per_pair;
            p.filled -= 1;
            if was_full {
                self.pending.push_back(pair);
            }
        }
        self.finish(s, CompletionReason::Excluded);
    }

    fn check_questionnaire(&self, session_id: &str) -> Result<usize, ExpError> {
        let s = self.session_idx(session_id)?;
        let session = &self.sessions[s];
        if session.status == SessionStatus::Active {
            return Err(ExpError::Conflict(format!("session {session_id} is still active")));
        }
        if session.questionnaire_done {
            return Err(ExpError::Conflict(format!("questionnaire for {session_id} already submitted")));
        }
        Ok(s)
    }

    fn record_questionnaire(
        &mut self,
        session_id: &str,
        answers: &BTreeMap<String, String>,
        at: DateTime<Utc>,
    ) -> Result<QuestionnaireAck, ExpError> {
        let s = self.check_questionnaire(session_id)?;
        let session = &mut self.sessions[s];
        session.questionnaire_done = true;
        self.questionnaires.push(QuestionnaireRecord {
            session_id: session_id.to_string(),
            rater: session.rater_id.clone(),
            timestamp: at,
            excluded: session.status == SessionStatus::Excluded,
            answers: answers.clone(),
        });
        Ok(QuestionnaireAck {
            accepted: true,
            session_id: session_id.to_string(),
        })
    }

    pub fn session_view(&self, session_id: &str) -> Result<SessionView, ExpError> {
        Ok(self.session_view_at(self.session_idx(session_id)?))
    }

    fn trial_view(&self, session: &Session, t: &Trial) -> TrialView {
        let corpus = &self.config.corpus;
        let attention = match t.kind {
            TrialKind::Attention { instructed, .. } => Some(AttentionView {
                active: true,
                instructed_side: instructed,
                text: format!("Attention check: please click the {} image.", side_name(instructed)),
            }),
            TrialKind::Pair { .. } => None,
        };
        TrialView {
            session_id: session.id.clone(),
            index: t.index,
            total: self.config.trials_per_session,
            image_a: corpus[t.left].clone(),
            image_b: corpus[t.right].clone(),
            image_a_url: format!("/images/{}", corpus[t.left]),
            image_b_url: format!("/images/{}", corpus[t.right]),
            question: self.config.question().to_string(),
            attention,
        }
    }

    fn session_view_at(&self, s: usize) -> SessionView {
        let session = &self.sessions[s];
        let trial = match session.status {
            SessionStatus::Active => session.trials.last().map(|t| self.trial_view(session, t)),
            _ => None,
        };
        let complete = session.completion.map(|reason| Completion {
            reason,
            answered: session.answered,
            questionnaire: questionnaire(),
        });
        SessionView {
            session_id: session.id.clone(),
            rater_id: session.rater_id.clone(),
            status: session.status,
            task: self.config.task,
            instructions: self.config.instructions().to_string(),
            trials_per_session: self.config.trials_per_session,
            trial,
            complete,
        }
    }

    /// Records in timestamp order (log order breaks ties).
    pub fn export(&self, include_excluded: bool) -> Vec<ComparisonRecord> {
        let mut out: Vec<ComparisonRecord> = self
            .records
            .iter()
            .filter(|r| include_excluded || !r.excluded)
            .cloned()
            .collect();
        out.sort_by_key(|r| r.timestamp);
        out
    }

    pub fn questionnaires(&self) -> &[QuestionnaireRecord] {
        &self.questionnaires
    }

    pub fn counts(&self) -> BTreeMap<String, u64> {
        self.config.corpus.iter().cloned().zip(self.counts.iter().copied()).collect()
    }

    /// Sessions started so far; ids run `sess-000001` upward.
    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Slots currently held by sessions that were not excluded.
    pub fn filled_slots(&self) -> usize {
        self.pairs.iter().map(|p| p.filled).sum()
    }

    /// Per pair, the raters of non-excluded recorded judgments.
    pub fn judgments_by_pair(&self) -> BTreeMap<(String, String), Vec<String>> {
        let mut out: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| !r.excluded && !r.is_attention_check) {
            let key = if r.item_a <= r.item_b {
                (r.item_a.clone(), r.item_b.clone())
            } else {
                (r.item_b.clone(), r.item_a.clone())
            };
            out.entry(key).or_default().push(r.rater.clone());
        }
        out
    }

    /// Attention-check positions scheduled for a session.
    pub fn check_positions(&self, session_id: &str) -> Result<Vec<usize>, ExpError> {
        let s = self.session_idx(session_id)?;
        Ok(self.sessions[s].check_positions.iter().copied().collect())
    }

    /// Current selection weight `1 / (1 + count)` of each image.
    pub fn selection_weights(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| 1.0 / (1.0 + c as f64)).collect()
    }
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Some(i);
        }
        u -= w;
    }
    Some(weights.len() - 1)
}
