//! Ego-centric 42-value observation: six ego features followed by six
//! surrounding-vehicle blocks `[present, Δx, Δy, heading, Δv_x, Δv_y]`.
//!
//! Block order is fixed: current-lane leader, current-lane follower, left-lane
//! leader, left-lane follower, right-lane leader, right-lane follower. Left is
//! the lane with the smaller index.

pub const OBS_DIM: usize = 42;
pub const EGO_FEATURES: usize = 6;
pub const SV_SLOTS: usize = 6;
pub const SV_FEATURES: usize = 6;
/// Longitudinal window (relative to the ego vehicle) in which neighbours are observed.
pub const OBS_RANGE: (f64, f64) = (-80.0, 160.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: i64,
    pub lane_id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EgoObservation {
    pub ev: [f64; EGO_FEATURES],
    pub svs: [[f64; SV_FEATURES]; SV_SLOTS],
}

impl EgoObservation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[..EGO_FEATURES].copy_from_slice(&self.ev);
        for (n, block) in self.svs.iter().enumerate() {
            let start = EGO_FEATURES + n * SV_FEATURES;
            out[start..start + SV_FEATURES].copy_from_slice(block);
        }
        out
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        if values.len() != OBS_DIM {
            return None;
        }
        let mut obs = EgoObservation::default();
        obs.ev.copy_from_slice(&values[..EGO_FEATURES]);
        for n in 0..SV_SLOTS {
            let start = EGO_FEATURES + n * SV_FEATURES;
            obs.svs[n].copy_from_slice(&values[start..start + SV_FEATURES]);
        }
        Some(obs)
    }

    pub fn lane_id(&self) -> usize {
        self.ev[0].round().max(0.0) as usize
    }

    pub fn ego_vx(&self) -> f64 {
        self.ev[4]
    }

    pub fn ego_speed(&self) -> f64 {
        self.ev[4].hypot(self.ev[5])
    }

    pub fn present(&self, slot: usize) -> bool {
        self.svs[slot][0] > 0.5
    }
}

/// Observation plus the vehicle id occupying each slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observed {
    pub obs: EgoObservation,
    pub slot_ids: [Option<i64>; SV_SLOTS],
}

/// Longitudinal offset `to − from`, folded into `[−L/2, L/2)` on a ring of length `L`.
pub fn longitudinal_offset(from: f64, to: f64, ring_length: Option<f64>) -> f64 {
    let d = to - from;
    match ring_length {
        Some(len) => (d + len / 2.0).rem_euclid(len) - len / 2.0,
        None => d,
    }
}

/// Selects up to six neighbours by the lane-slot rule and builds the observation.
/// `ego.x` is reported as given; callers on a ring pass the folded coordinate.
pub fn observe_vehicles<'a>(
    ego: &VehicleState,
    others: impl IntoIterator<Item = &'a VehicleState>,
    ring_length: Option<f64>,
) -> Observed {
    let mut best: [Option<(f64, i64, &VehicleState, f64)>; SV_SLOTS] = [None; SV_SLOTS];
    for sv in others {
        if sv.id == ego.id {
            continue;
        }
        let dx = longitudinal_offset(ego.x, sv.x, ring_length);
        if !(OBS_RANGE.0..=OBS_RANGE.1).contains(&dx) {
            continue;
        }
        let lane_pair = if sv.lane_id == ego.lane_id {
            0
        } else if ego.lane_id >= 1 && sv.lane_id == ego.lane_id - 1 {
            1
        } else if sv.lane_id == ego.lane_id + 1 {
            2
        } else {
            continue;
        };
        let slot = lane_pair * 2 + usize::from(dx < 0.0);
        let key = (dx.abs(), sv.id);
        let better = match best[slot] {
            None => true,
            Some((d, id, _, _)) => key.0 < d || (key.0 == d && key.1 < id),
        };
        if better {
            best[slot] = Some((key.0, key.1, sv, dx));
        }
    }

    let mut observed = Observed::default();
    observed.obs.ev = [
        ego.lane_id as f64,
        ego.x,
        ego.y,
        ego.heading,
        ego.vx,
        ego.vy,
    ];
    for (slot, entry) in best.iter().enumerate() {
        if let Some((_, id, sv, dx)) = entry {
            observed.obs.svs[slot] = [
                1.0,
                *dx,
                sv.y - ego.y,
                sv.heading,
                sv.vx - ego.vx,
                sv.vy - ego.vy,
            ];
            observed.slot_ids[slot] = Some(*id);
        }
    }
    observed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(id: i64, lane: usize, x: f64, vx: f64) -> VehicleState {
        VehicleState {
            id,
            lane_id: lane,
            x,
            y: 2.0 + 4.0 * lane as f64,
            heading: 0.0,
            vx,
            vy: 0.0,
            length: 5.0,
            width: 2.0,
        }
    }

    #[test]
    fn empty_road_gives_zero_blocks() {
        let ego = car(0, 1, 0.0, 10.0);
        let o = observe_vehicles(&ego, std::iter::empty(), None);
        assert!(o.obs.svs.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert_eq!(o.obs.ev, [1.0, 0.0, 6.0, 0.0, 10.0, 0.0]);
    }

    #[test]
    fn single_leader_same_speed() {
        let ego = car(0, 1, 100.0, 10.0);
        let lead = car(1, 1, 130.0, 10.0);
        let o = observe_vehicles(&ego, [&lead], None);
        assert_eq!(o.obs.svs[0], [1.0, 30.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(o.slot_ids[0], Some(1));
    }

    #[test]
    fn eight_candidates_fill_six_slots() {
        let ego = car(0, 1, 0.0, 10.0);
        let cars = [
            car(1, 1, 20.0, 10.0),  // current lead
            car(2, 1, 50.0, 10.0),  // farther current lead, dropped
            car(3, 1, -15.0, 10.0), // current follow
            car(4, 0, 5.0, 10.0),   // left lead
            car(5, 0, -30.0, 10.0), // left follow
            car(6, 2, 40.0, 10.0),  // right lead
            car(7, 2, -10.0, 10.0), // right follow
            car(8, 2, -60.0, 10.0), // farther right follow, dropped
        ];
        let o = observe_vehicles(&ego, cars.iter(), None);
        let ids: Vec<_> = o.slot_ids.iter().map(|s| s.unwrap()).collect();
        assert_eq!(ids, vec![1, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn window_excludes_far_vehicles() {
        let ego = car(0, 1, 0.0, 10.0);
        let ahead = car(1, 1, 160.5, 10.0);
        let behind = car(2, 1, -80.5, 10.0);
        let o = observe_vehicles(&ego, [&ahead, &behind], None);
        assert!(!o.obs.present(0) && !o.obs.present(1));
    }

    #[test]
    fn ring_offset_wraps() {
        assert_eq!(longitudinal_offset(990.0, 10.0, Some(1000.0)), 20.0);
        assert_eq!(longitudinal_offset(10.0, 990.0, Some(1000.0)), -20.0);
        assert_eq!(longitudinal_offset(10.0, 990.0, None), 980.0);
    }

    #[test]
    fn leftmost_lane_has_no_left_slots() {
        let ego = car(0, 0, 0.0, 10.0);
        let right = car(1, 1, 10.0, 10.0);
        let o = observe_vehicles(&ego, [&right], None);
        assert!(!o.obs.present(2) && !o.obs.present(3));
        assert!(o.obs.present(4));
    }
}
