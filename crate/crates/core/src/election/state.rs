//! Instance state as a pure fold over its event log.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{InstanceSpec, MechanismSpec, ServiceError};
use crate::engine::{radius_at, Iterate, RadiusSchedule, ResponseRecord, Terminal, Trajectory};
use crate::geometry::{mean_point, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub session: String,
    pub set: usize,
    pub point: Point,
    /// Radius in force when the vote was accepted.
    pub radius: f64,
    /// Commit version of the point the voter was shown.
    pub version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElicitationRecord {
    pub session: String,
    pub ideal: Vec<f64>,
    pub weights: Vec<f64>,
    pub deficit_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Event {
    Created { id: String, spec: InstanceSpec },
    SessionAssigned { session: String },
    VoteAccepted(VoteRecord),
    /// The averaged, projected point; replay recomputes and checks it.
    BatchCommitted { set: usize, point: Point, votes: usize },
    Elicitation(ElicitationRecord),
    /// Per-set counts of buffered votes dropped at close.
    Closed { discarded: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferedVote {
    pub session: String,
    pub point: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetState {
    pub current: Point,
    /// Number of commits so far.
    pub version: u64,
    /// Submissions folded into commits.
    pub committed: u64,
    pub buffer: Vec<BufferedVote>,
    pub voters: BTreeSet<String>,
    pub trajectory: Vec<Iterate>,
    pub responses: Vec<ResponseRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceState {
    pub id: String,
    pub spec: InstanceSpec,
    pub status: Status,
    pub sets: Vec<SetState>,
    pub sessions: BTreeSet<String>,
    pub elicitations: Vec<ElicitationRecord>,
    pub last_seq: u64,
}

fn corrupt(seq: u64, msg: impl std::fmt::Display) -> ServiceError {
    ServiceError::Corrupt(format!("event {seq}: {msg}"))
}

impl InstanceState {
    /// State right after a `Created` event.
    pub fn genesis(record: &EventRecord) -> Result<Self, ServiceError> {
        let Event::Created { id, spec } = &record.event else {
            return Err(corrupt(record.seq, "log must start with a creation event"));
        };
        if record.seq != 1 {
            return Err(corrupt(record.seq, "creation must be event 1"));
        }
        spec.validate()?;
        let sets = spec
            .starting_points
            .iter()
            .map(|p| SetState {
                current: p.clone(),
                version: 0,
                committed: 0,
                buffer: Vec::new(),
                voters: BTreeSet::new(),
                trajectory: vec![Iterate {
                    t: 0,
                    r: None,
                    x: p.clone(),
                }],
                responses: Vec::new(),
            })
            .collect();
        Ok(InstanceState {
            id: id.clone(),
            spec: spec.clone(),
            status: Status::Open,
            sets,
            sessions: BTreeSet::new(),
            elicitations: Vec::new(),
            last_seq: 1,
        })
    }

    /// Folds a full log from its creation event.
    pub fn replay<'a>(records: impl IntoIterator<Item = &'a EventRecord>) -> Result<Self, ServiceError> {
        let mut iter = records.into_iter();
        let first = iter.next().ok_or_else(|| ServiceError::Corrupt("empty event log".into()))?;
        let mut state = InstanceState::genesis(first)?;
        for r in iter {
            state.apply(r)?;
        }
        Ok(state)
    }

    pub fn is_open(&self) -> bool {
        self.status == Status::Open
    }

    /// Radius the next submission to `set` must respect.
    pub fn radius(&self, set: usize) -> Option<f64> {
        match self.spec.mechanism {
            MechanismSpec::Constrained { r0, .. } => {
                let schedule = RadiusSchedule::Stepped {
                    r0,
                    decay_interval: self.spec.decay_interval,
                };
                Some(radius_at(&schedule, self.sets.get(set)?.committed + 1))
            }
            MechanismSpec::FullElicitation => None,
        }
    }

    /// Projected mean of the buffered votes of `set`.
    pub fn commit_point(&self, set: usize) -> Result<Point, ServiceError> {
        let s = &self.sets[set];
        let points: Vec<Point> = s.buffer.iter().map(|v| v.point.clone()).collect();
        if points.is_empty() {
            return Err(ServiceError::Corrupt(format!("commit of empty batch on set {set}")));
        }
        self.spec
            .region()
            .project(&mean_point(&points))
            .map_err(|e| ServiceError::Corrupt(e.to_string()))
    }

    pub fn apply(&mut self, record: &EventRecord) -> Result<(), ServiceError> {
        let seq = record.seq;
        if seq != self.last_seq + 1 {
            return Err(corrupt(seq, format!("expected sequence {}", self.last_seq + 1)));
        }
        match &record.event {
            Event::Created { .. } => return Err(corrupt(seq, "duplicate creation")),
            Event::SessionAssigned { session } => {
                if !self.sessions.insert(session.clone()) {
                    return Err(corrupt(seq, format!("session {session} assigned twice")));
                }
            }
            Event::VoteAccepted(v) => {
                if !self.is_open() {
                    return Err(corrupt(seq, "vote after close"));
                }
                let radius = self.radius(v.set).ok_or_else(|| corrupt(seq, "vote on unknown set"))?;
                let s = &mut self.sets[v.set];
                if v.version != s.version || v.radius != radius {
                    return Err(corrupt(seq, "vote does not match the committed state"));
                }
                if !s.voters.insert(v.session.clone()) {
                    return Err(corrupt(seq, "duplicate vote"));
                }
                s.buffer.push(BufferedVote {
                    session: v.session.clone(),
                    point: v.point.clone(),
                });
            }
            Event::BatchCommitted { set, point, votes } => {
                if *set >= self.sets.len() || self.sets[*set].buffer.len() != *votes {
                    return Err(corrupt(seq, "commit does not match the buffer"));
                }
                let expected = self.commit_point(*set)?;
                if &expected != point {
                    return Err(corrupt(seq, format!("commit point {point:?} differs from recomputed {expected:?}")));
                }
                let radius = self.radius(*set);
                let s = &mut self.sets[*set];
                let t = s.version as usize + 1;
                for (i, v) in s.buffer.drain(..).enumerate() {
                    s.responses.push(ResponseRecord {
                        t,
                        voter: s.committed + i as u64,
                        response: v.point,
                        bad_region: false,
                    });
                }
                s.committed += *votes as u64;
                s.version += 1;
                s.current = point.clone();
                s.trajectory.push(Iterate {
                    t,
                    r: radius,
                    x: point.clone(),
                });
            }
            Event::Elicitation(e) => {
                if self.elicitations.iter().any(|o| o.session == e.session) {
                    return Err(corrupt(seq, "duplicate elicitation"));
                }
                self.elicitations.push(e.clone());
            }
            Event::Closed { discarded } => {
                let pending: Vec<usize> = self.sets.iter().map(|s| s.buffer.len()).collect();
                if &pending != discarded {
                    return Err(corrupt(seq, "discard counts do not match buffers"));
                }
                for s in &mut self.sets {
                    s.buffer.clear();
                }
                self.status = Status::Closed;
            }
        }
        self.last_seq = seq;
        Ok(())
    }

    /// Committed trajectory of one set, in the simulator's format.
    pub fn trajectory(&self, set: usize) -> Option<Trajectory> {
        let s = self.sets.get(set)?;
        Some(Trajectory {
            iterates: s.trajectory.clone(),
            responses: s.responses.clone(),
            terminal: Terminal::HitCap { x: s.current.clone() },
        })
    }
}
