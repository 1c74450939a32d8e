//! The election registry: one serialized writer per instance, lock-free
//! snapshot reads, session assignment and batch accounting.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::{ElicitationRecord, Event, EventRecord, InstanceState, Status, VoteRecord};
use super::store::{EventLog, FeedbackRecord, Store, SNAPSHOT_EVERY};
use super::{
    credit_usage, within_budget, InstanceSpec, MechanismSpec, Rejection, ServiceError, DEFAULT_WEIGHT,
    MAX_WEIGHT,
};
use crate::engine::Trajectory;
use crate::geometry::Point;
use crate::oracles::componentwise_median;
use crate::utility::deficit;

/// How long a voter holding the last slot of a batch keeps the instance
/// marked busy.
pub const DEFAULT_RESERVATION: Duration = Duration::from_secs(120);
pub const HISTOGRAM_BINS: usize = 10;

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetView {
    pub set: usize,
    pub current: Point,
    pub radius: Option<f64>,
    pub version: u64,
    pub committed: u64,
    pub pending: usize,
}

/// Cheap read-side snapshot of an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceView {
    pub id: String,
    pub name: String,
    pub status: Status,
    pub mechanism: MechanismSpec,
    pub batch_size: usize,
    pub sets: Vec<SetView>,
    pub sessions: usize,
    pub elicitations: usize,
    pub last_seq: u64,
}

impl InstanceView {
    fn of(state: &InstanceState) -> Self {
        InstanceView {
            id: state.id.clone(),
            name: state.spec.name.clone(),
            status: state.status,
            mechanism: state.spec.mechanism,
            batch_size: state.spec.batch_size,
            sets: state
                .sets
                .iter()
                .enumerate()
                .map(|(i, s)| SetView {
                    set: i,
                    current: s.current.clone(),
                    radius: state.radius(i),
                    version: s.version,
                    committed: s.committed,
                    pending: s.buffer.len(),
                })
                .collect(),
            sessions: state.sessions.len(),
            elicitations: state.elicitations.len(),
            last_seq: state.last_seq,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentSet {
    pub set: usize,
    pub current: Point,
    pub radius: Option<f64>,
    pub version: u64,
    /// Percent difference of each coordinate from its baseline.
    pub baseline_delta_pct: Vec<f64>,
    /// Expenditures minus incomes at the current point.
    pub deficit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentResponse {
    pub instance: String,
    pub closed: bool,
    pub mechanism: MechanismSpec,
    pub labels: Vec<String>,
    pub sets: Vec<CurrentSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteRequest {
    pub session: String,
    pub set: usize,
    pub point: Point,
    /// Version of the point the voter was shown.
    pub version: u64,
    #[serde(default)]
    pub justification: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub committed: bool,
    pub version: u64,
    pub pending: usize,
    pub usage: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElicitationRequest {
    pub session: String,
    pub ideal: Vec<f64>,
    pub weights: Vec<f64>,
    pub deficit_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElicitationAggregates {
    pub count: usize,
    pub medians: Option<Point>,
    pub histograms: Vec<Histogram>,
    pub mean_weights: Option<Vec<f64>>,
    pub mean_deficit_weight: Option<f64>,
    /// Submissions that left every weight at its default.
    pub all_default: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    #[serde(flatten)]
    pub view: InstanceView,
    /// Someone holds the last slot of a batch.
    pub busy: bool,
    pub elicitation: ElicitationAggregates,
}

struct Writer {
    state: InstanceState,
    log: Box<dyn EventLog>,
    since_snapshot: u64,
}

impl Writer {
    fn emit(&mut self, event: Event) -> Result<(), ServiceError> {
        let record = EventRecord {
            seq: self.state.last_seq + 1,
            event,
            timestamp: now_millis(),
        };
        let durable = matches!(
            record.event,
            Event::Created { .. } | Event::BatchCommitted { .. } | Event::Closed { .. }
        );
        self.log.append(&record, durable)?;
        self.state.apply(&record)?;
        self.since_snapshot += 1;
        if self.since_snapshot >= SNAPSHOT_EVERY {
            self.log.snapshot(&self.state)?;
            self.since_snapshot = 0;
        }
        Ok(())
    }
}

struct Reservation {
    session: String,
    expires: Instant,
}

struct Instance {
    writer: Mutex<Writer>,
    view: RwLock<Arc<InstanceView>>,
    reservations: Mutex<HashMap<usize, Reservation>>,
}

impl Instance {
    fn new(state: InstanceState, log: Box<dyn EventLog>) -> Self {
        let view = Arc::new(InstanceView::of(&state));
        Instance {
            writer: Mutex::new(Writer {
                state,
                log,
                since_snapshot: 0,
            }),
            view: RwLock::new(view),
            reservations: Mutex::new(HashMap::new()),
        }
    }

    fn view(&self) -> Arc<InstanceView> {
        self.view.read().clone()
    }

    fn publish(&self, state: &InstanceState) {
        *self.view.write() = Arc::new(InstanceView::of(state));
    }

    fn busy(&self, now: Instant) -> bool {
        self.reservations.lock().values().any(|r| r.expires > now)
    }
}

struct Assigner {
    sessions: HashMap<String, String>,
    rng: ChaCha8Rng,
}

/// A cloneable handle to the shared registry.
#[derive(Clone)]
pub struct ElectionService {
    inner: Arc<Inner>,
}

struct Inner {
    store: Store,
    instances: RwLock<BTreeMap<String, Arc<Instance>>>,
    assigner: Mutex<Assigner>,
    feedback: Mutex<Vec<FeedbackRecord>>,
    reservation: Duration,
}

#[derive(Clone, Debug)]
pub struct ServiceOptions {
    /// Seeds assignment tie-breaking.
    pub seed: u64,
    pub reservation: Duration,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            seed: 0,
            reservation: DEFAULT_RESERVATION,
        }
    }
}

impl ElectionService {
    pub fn in_memory() -> Self {
        Self::with_store(Store::Memory, ServiceOptions::default()).expect("memory store cannot fail")
    }

    /// Opens (or initializes) a service persisted under `dir`.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        Self::with_store(Store::Dir(dir.to_path_buf()), ServiceOptions::default())
    }

    pub fn with_store(store: Store, options: ServiceOptions) -> Result<Self, ServiceError> {
        let mut instances = BTreeMap::new();
        let mut sessions = HashMap::new();
        for (state, log) in store.load()? {
            for s in &state.sessions {
                sessions.insert(s.clone(), state.id.clone());
            }
            instances.insert(state.id.clone(), Arc::new(Instance::new(state, log)));
        }
        let feedback = store.load_feedback()?;
        Ok(ElectionService {
            inner: Arc::new(Inner {
                store,
                instances: RwLock::new(instances),
                assigner: Mutex::new(Assigner {
                    sessions,
                    rng: ChaCha8Rng::seed_from_u64(options.seed),
                }),
                feedback: Mutex::new(feedback),
                reservation: options.reservation,
            }),
        })
    }

    fn instance(&self, id: &str) -> Result<Arc<Instance>, ServiceError> {
        self.inner
            .instances
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownInstance(id.to_string()))
    }

    fn check_assigned(&self, id: &str, session: &str) -> Result<(), ServiceError> {
        match self.inner.assigner.lock().sessions.get(session) {
            Some(assigned) if assigned == id => Ok(()),
            _ => Err(ServiceError::NotAssigned(session.to_string())),
        }
    }

    pub fn create_instance(&self, spec: InstanceSpec) -> Result<String, ServiceError> {
        spec.validate()?;
        let mut instances = self.inner.instances.write();
        let id = format!("i{:04}", instances.len() + 1);
        let log = self.inner.store.create_log(&id)?;
        let record = EventRecord {
            seq: 1,
            event: Event::Created { id: id.clone(), spec },
            timestamp: now_millis(),
        };
        let state = InstanceState::genesis(&record)?;
        let mut log = log;
        log.append(&record, true)?;
        instances.insert(id.clone(), Arc::new(Instance::new(state, log)));
        log::info!("created instance {id}");
        Ok(id)
    }

    /// Creates each named spec that has no instance of the same name yet.
    pub fn ensure_instances(&self, specs: &[InstanceSpec]) -> Result<Vec<String>, ServiceError> {
        let mut ids = Vec::new();
        for spec in specs {
            let existing = self
                .list()
                .into_iter()
                .find(|v| !spec.name.is_empty() && v.name == spec.name)
                .map(|v| v.id);
            ids.push(match existing {
                Some(id) => id,
                None => self.create_instance(spec.clone())?,
            });
        }
        Ok(ids)
    }

    pub fn list(&self) -> Vec<InstanceView> {
        self.inner.instances.read().values().map(|i| (*i.view()).clone()).collect()
    }

    pub fn view(&self, id: &str) -> Result<Arc<InstanceView>, ServiceError> {
        Ok(self.instance(id)?.view())
    }

    pub fn is_busy(&self, id: &str) -> Result<bool, ServiceError> {
        Ok(self.instance(id)?.busy(Instant::now()))
    }

    /// Least-loaded open instance, preferring ones not busy; ties broken at
    /// random. Repeat calls return the first assignment.
    pub fn assign_session(&self, session: &str) -> Result<String, ServiceError> {
        let mut assigner = self.inner.assigner.lock();
        if let Some(id) = assigner.sessions.get(session) {
            return Ok(id.clone());
        }
        let now = Instant::now();
        let open: Vec<(Arc<Instance>, Arc<InstanceView>)> = self
            .inner
            .instances
            .read()
            .values()
            .map(|i| (i.clone(), i.view()))
            .filter(|(_, v)| v.status == Status::Open)
            .collect();
        if open.is_empty() {
            return Err(ServiceError::NoOpenInstance);
        }
        let free: Vec<&(Arc<Instance>, Arc<InstanceView>)> = open.iter().filter(|(i, _)| !i.busy(now)).collect();
        let pool: Vec<&(Arc<Instance>, Arc<InstanceView>)> = if free.is_empty() { open.iter().collect() } else { free };
        let least = pool.iter().map(|(_, v)| v.sessions).min().expect("non-empty pool");
        let ties: Vec<_> = pool.into_iter().filter(|(_, v)| v.sessions == least).collect();
        let (chosen, view) = *ties.choose(&mut assigner.rng).expect("non-empty ties");
        {
            let mut w = chosen.writer.lock();
            w.emit(Event::SessionAssigned {
                session: session.to_string(),
            })?;
            chosen.publish(&w.state);
        }
        assigner.sessions.insert(session.to_string(), view.id.clone());
        Ok(view.id.clone())
    }

    /// The committed point of every set. A session that sees a batch one
    /// vote short of full reserves the last slot, marking the instance busy.
    pub fn get_current(&self, id: &str, session: &str) -> Result<CurrentResponse, ServiceError> {
        let inst = self.instance(id)?;
        self.check_assigned(id, session)?;
        let view = inst.view();
        let spec = {
            let w = inst.writer.lock();
            w.state.spec.clone()
        };
        if view.status == Status::Open {
            let now = Instant::now();
            let mut res = inst.reservations.lock();
            for s in &view.sets {
                if s.pending + 1 == view.batch_size {
                    let held = res.get(&s.set).is_some_and(|r| r.expires > now && r.session != session);
                    if !held {
                        res.insert(
                            s.set,
                            Reservation {
                                session: session.to_string(),
                                expires: now + self.inner.reservation,
                            },
                        );
                    }
                }
            }
        }
        let expenditure = spec.expenditure_dims();
        let income = spec.income_dims();
        let sets = view
            .sets
            .iter()
            .map(|s| CurrentSet {
                set: s.set,
                current: s.current.clone(),
                radius: s.radius,
                version: s.version,
                baseline_delta_pct: s
                    .current
                    .iter()
                    .zip(&spec.dims)
                    .map(|(x, d)| 100.0 * (x - d.baseline) / d.baseline)
                    .collect(),
                deficit: deficit(&s.current, &expenditure, &income).unwrap_or(f64::NAN),
            })
            .collect();
        Ok(CurrentResponse {
            instance: id.to_string(),
            closed: view.status == Status::Closed,
            mechanism: view.mechanism,
            labels: spec.dims.iter().map(|d| d.label.clone()).collect(),
            sets,
        })
    }

    /// Validates a vote against the committed point and radius, buffers it,
    /// and commits the batch when it fills.
    pub fn submit_vote(&self, id: &str, vote: VoteRequest) -> Result<VoteOutcome, ServiceError> {
        let inst = self.instance(id)?;
        self.check_assigned(id, &vote.session)?;
        let reject = |r: Rejection| Err(ServiceError::Rejected(r));
        let mut w = inst.writer.lock();
        let state = &w.state;
        if !state.is_open() {
            return reject(Rejection::InstanceClosed);
        }
        let MechanismSpec::Constrained { q, .. } = state.spec.mechanism else {
            return reject(Rejection::WrongMechanism);
        };
        let Some(set) = state.sets.get(vote.set) else {
            return reject(Rejection::UnknownSet { set: vote.set });
        };
        if vote.point.dim() != state.spec.dim() {
            return reject(Rejection::DimensionMismatch {
                expected: state.spec.dim(),
                got: vote.point.dim(),
            });
        }
        if !vote.point.is_finite() {
            return reject(Rejection::NotFinite);
        }
        if set.voters.contains(&vote.session) {
            return reject(Rejection::DuplicateSubmission);
        }
        if vote.version != set.version {
            return reject(Rejection::StalePoint {
                shown_version: vote.version,
                current_version: set.version,
            });
        }
        let radius = state.radius(vote.set).expect("constrained set");
        let delta: Vec<f64> = vote.point.iter().zip(set.current.iter()).map(|(a, b)| a - b).collect();
        let usage = credit_usage(&delta, q);
        if !within_budget(usage, radius) {
            return reject(Rejection::ConstraintViolated {
                usage,
                radius,
                overage: usage - radius,
            });
        }
        let full = set.buffer.len() + 1 == state.spec.batch_size;
        let set_index = vote.set;
        let session = vote.session.clone();
        w.emit(Event::VoteAccepted(VoteRecord {
            session: vote.session,
            set: vote.set,
            point: vote.point,
            radius,
            version: vote.version,
            justification: vote.justification,
        }))?;
        if full {
            let point = w.state.commit_point(set_index)?;
            let votes = w.state.sets[set_index].buffer.len();
            w.emit(Event::BatchCommitted {
                set: set_index,
                point,
                votes,
            })?;
        }
        inst.publish(&w.state);
        {
            let mut res = inst.reservations.lock();
            if res.get(&set_index).is_some_and(|r| r.session == session || full) {
                res.remove(&set_index);
            }
        }
        let s = &w.state.sets[set_index];
        Ok(VoteOutcome {
            committed: full,
            version: s.version,
            pending: s.buffer.len(),
            usage,
            radius,
        })
    }

    pub fn submit_elicitation(&self, id: &str, req: ElicitationRequest) -> Result<(), ServiceError> {
        let inst = self.instance(id)?;
        self.check_assigned(id, &req.session)?;
        let mut w = inst.writer.lock();
        let spec = &w.state.spec;
        let reject = |r: Rejection| Err(ServiceError::Rejected(r));
        if !w.state.is_open() {
            return reject(Rejection::InstanceClosed);
        }
        for len in [req.ideal.len(), req.weights.len()] {
            if len != spec.dim() {
                return reject(Rejection::DimensionMismatch {
                    expected: spec.dim(),
                    got: len,
                });
            }
        }
        let range = |field: &str, index: usize, value: f64, max: f64| {
            if value.is_finite() && (0.0..=max).contains(&value) {
                Ok(())
            } else {
                Err(ServiceError::Rejected(Rejection::OutOfRange {
                    field: field.into(),
                    index,
                    value,
                    min: 0.0,
                    max,
                }))
            }
        };
        for (i, (&v, max)) in req.ideal.iter().zip(spec.slider_max()).enumerate() {
            range("ideal", i, v, max)?;
        }
        for (i, &v) in req.weights.iter().enumerate() {
            range("weights", i, v, MAX_WEIGHT)?;
        }
        range("deficit_weight", 0, req.deficit_weight, MAX_WEIGHT)?;
        if w.state.elicitations.iter().any(|e| e.session == req.session) {
            return reject(Rejection::DuplicateSubmission);
        }
        w.emit(Event::Elicitation(ElicitationRecord {
            session: req.session,
            ideal: req.ideal,
            weights: req.weights,
            deficit_weight: req.deficit_weight,
        }))?;
        inst.publish(&w.state);
        Ok(())
    }

    /// Closes an instance; buffered votes are dropped or committed per its
    /// close policy. Closing twice is a no-op.
    pub fn close(&self, id: &str) -> Result<Arc<InstanceView>, ServiceError> {
        let inst = self.instance(id)?;
        {
            let mut w = inst.writer.lock();
            if w.state.is_open() {
                if w.state.spec.close_policy == super::ClosePolicy::CommitPartial {
                    for set in 0..w.state.sets.len() {
                        let votes = w.state.sets[set].buffer.len();
                        if votes > 0 {
                            let point = w.state.commit_point(set)?;
                            w.emit(Event::BatchCommitted { set, point, votes })?;
                        }
                    }
                }
                let discarded = w.state.sets.iter().map(|s| s.buffer.len()).collect();
                w.emit(Event::Closed { discarded })?;
                inst.publish(&w.state);
            }
        }
        inst.reservations.lock().clear();
        Ok(inst.view())
    }

    pub fn summary(&self, id: &str) -> Result<InstanceSummary, ServiceError> {
        let inst = self.instance(id)?;
        let busy = inst.busy(Instant::now());
        let w = inst.writer.lock();
        Ok(InstanceSummary {
            view: InstanceView::of(&w.state),
            busy,
            elicitation: aggregates(&w.state),
        })
    }

    /// Committed trajectory of one set.
    pub fn export(&self, id: &str, set: usize) -> Result<Trajectory, ServiceError> {
        let inst = self.instance(id)?;
        let w = inst.writer.lock();
        w.state
            .trajectory(set)
            .ok_or(ServiceError::Rejected(Rejection::UnknownSet { set }))
    }

    pub fn events(&self, id: &str) -> Result<Vec<EventRecord>, ServiceError> {
        let inst = self.instance(id)?;
        let w = inst.writer.lock();
        Ok(w.log.records()?)
    }

    /// Clone of the live state, for comparison against a replay.
    pub fn live_state(&self, id: &str) -> Result<InstanceState, ServiceError> {
        Ok(self.instance(id)?.writer.lock().state.clone())
    }

    /// State rebuilt from the event log alone.
    pub fn replay_state(&self, id: &str) -> Result<InstanceState, ServiceError> {
        InstanceState::replay(&self.events(id)?)
    }

    pub fn feedback(&self, session: &str, text: &str) -> Result<u64, ServiceError> {
        let mut fb = self.inner.feedback.lock();
        let record = FeedbackRecord {
            seq: fb.len() as u64 + 1,
            session: session.to_string(),
            text: text.to_string(),
            timestamp: now_millis(),
        };
        self.inner.store.append_feedback(&record)?;
        fb.push(record.clone());
        Ok(record.seq)
    }

    pub fn feedback_records(&self) -> Vec<FeedbackRecord> {
        self.inner.feedback.lock().clone()
    }
}

fn aggregates(state: &InstanceState) -> ElicitationAggregates {
    let e = &state.elicitations;
    let maxes = state.spec.slider_max();
    let histograms = maxes
        .iter()
        .enumerate()
        .map(|(m, &max)| {
            let width = max / HISTOGRAM_BINS as f64;
            let mut counts = vec![0; HISTOGRAM_BINS];
            for rec in e {
                let bin = ((rec.ideal[m] / width) as usize).min(HISTOGRAM_BINS - 1);
                counts[bin] += 1;
            }
            Histogram {
                edges: (0..=HISTOGRAM_BINS).map(|k| k as f64 * width).collect(),
                counts,
            }
        })
        .collect();
    let n = e.len() as f64;
    let mean_weights = (!e.is_empty()).then(|| {
        (0..state.spec.dim())
            .map(|m| e.iter().map(|r| r.weights[m]).sum::<f64>() / n)
            .collect()
    });
    ElicitationAggregates {
        count: e.len(),
        medians: (!e.is_empty()).then(|| {
            let ideals: Vec<Point> = e.iter().map(|r| Point::new(r.ideal.clone())).collect();
            componentwise_median(&ideals)
        }),
        histograms,
        mean_weights,
        mean_deficit_weight: (!e.is_empty()).then(|| e.iter().map(|r| r.deficit_weight).sum::<f64>() / n),
        all_default: e
            .iter()
            .filter(|r| r.deficit_weight == DEFAULT_WEIGHT && r.weights.iter().all(|w| *w == DEFAULT_WEIGHT))
            .count(),
    }
}
