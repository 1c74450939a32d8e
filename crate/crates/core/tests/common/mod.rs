#![allow(dead_code)]

use ilv_core::behavior::respond;
use ilv_core::election::service::VoteRequest;
use ilv_core::election::{Dimension, ElectionService, InstanceSpec, MechanismSpec, Role};
use ilv_core::engine::{RadiusSchedule, StoppingRule};
use ilv_core::population::{Family, Marginal};
use ilv_core::{BehaviorModel, FeasibleRegion, IlvConfig, NormOrder, Point, PopulationSpec, VoterStream};

pub fn dims(baselines: &[f64]) -> Vec<Dimension> {
    baselines
        .iter()
        .enumerate()
        .map(|(i, &b)| Dimension {
            label: format!("d{i}"),
            baseline: b,
            role: if i + 1 == baselines.len() && i > 0 { Role::Income } else { Role::Expenditure },
        })
        .collect()
}

pub fn constrained(q: NormOrder, r0: f64, baselines: &[f64], starts: Vec<Point>) -> InstanceSpec {
    InstanceSpec {
        name: String::new(),
        mechanism: MechanismSpec::Constrained { q, r0 },
        dims: dims(baselines),
        starting_points: starts,
        region: None,
        batch_size: 10,
        decay_interval: 60,
        close_policy: Default::default(),
    }
}

/// Euclidean voters with ideals around (0.3, 0.7) in the unit square.
pub fn population(seed: u64) -> PopulationSpec {
    PopulationSpec {
        family: Family::LpNormed { p: NormOrder::Two },
        ideals: vec![
            Marginal::TruncatedGaussian { mean: 0.3, std: 0.2, lo: 0.0, hi: 1.0 },
            Marginal::TruncatedGaussian { mean: 0.7, std: 0.2, lo: 0.0, hi: 1.0 },
        ],
        seed,
    }
}

/// Engine configuration matching a live instance with baselines 0.5.
pub fn matching_config(start: Point) -> IlvConfig {
    IlvConfig {
        schedule: RadiusSchedule::Stepped { r0: 0.2, decay_interval: 60 },
        stopping: StoppingRule { window: 30, tolerance: 1e-3, max_updates: 5000 },
        batch_size: 10,
        behavior: BehaviorModel::ModelA,
        q: NormOrder::Two,
        region: FeasibleRegion::cube(2, 0.0, 1.0).unwrap(),
        initial: start,
        per_response_projection: false,
    }
}

pub fn matching_instance(start: Point) -> InstanceSpec {
    constrained(NormOrder::Two, 0.2, &[0.5, 0.5], vec![start])
}

/// Feeds `updates` full batches of synthetic best-responders into set 0
/// of instance `id`, one fresh session per voter.
pub fn drive(service: &ElectionService, id: &str, stream: &mut VoterStream, q: NormOrder, updates: usize) {
    let mut n = 0usize;
    for _ in 0..updates {
        for _ in 0..10 {
            let session = format!("{id}-v{n}");
            n += 1;
            assert_eq!(service.assign_session(&session).unwrap(), id);
            let cur = service.get_current(id, &session).unwrap();
            let set = &cur.sets[0];
            let u = stream.sample_voter();
            let resp = respond(BehaviorModel::ModelA, &u, &set.current, set.radius.unwrap(), q).unwrap();
            service
                .submit_vote(
                    id,
                    VoteRequest {
                        session,
                        set: 0,
                        point: resp.new_point,
                        version: set.version,
                        justification: None,
                    },
                )
                .unwrap();
        }
    }
}
