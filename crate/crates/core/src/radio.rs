//! Node placement, random-waypoint mobility, unit-disk reachability and the
//! shared channel's collision bookkeeping.

use rand::Rng;

use crate::sim::{NodeId, SimTime};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    fn lerp(&self, other: &Position, f: f64) -> Position {
        Position {
            x: self.x + (other.x - self.x) * f,
            y: self.y + (other.y - self.y) * f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: &Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn random_point<R: Rng>(&self, rng: &mut R) -> Position {
        Position::new(
            rng.gen_range(0.0..=self.width),
            rng.gen_range(0.0..=self.height),
        )
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlacementError {
    #[error("grid {rows}x{cols} with spacing {spacing} m does not fit a {width}x{height} m area")]
    GridTooLarge {
        rows: u32,
        cols: u32,
        spacing: f64,
        width: f64,
        height: f64,
    },
    #[error("grid must have at least one row and one column")]
    EmptyGrid,
}

/// Lays out `rows * cols` nodes on a square lattice centred in `area`.
///
/// Node `k` sits at row `k / cols`, column `k % cols`.
pub fn place_grid(
    rows: u32,
    cols: u32,
    spacing: f64,
    area: Area,
) -> Result<Vec<Position>, PlacementError> {
    if rows == 0 || cols == 0 {
        return Err(PlacementError::EmptyGrid);
    }
    let span_x = f64::from(cols - 1) * spacing;
    let span_y = f64::from(rows - 1) * spacing;
    if span_x > area.width || span_y > area.height {
        return Err(PlacementError::GridTooLarge {
            rows,
            cols,
            spacing,
            width: area.width,
            height: area.height,
        });
    }
    let ox = (area.width - span_x) / 2.0;
    let oy = (area.height - span_y) / 2.0;
    Ok((0..rows * cols)
        .map(|k| {
            let (row, col) = (k / cols, k % cols);
            Position::new(ox + f64::from(col) * spacing, oy + f64::from(row) * spacing)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointParams {
    pub v_min: f64,
    pub v_max: f64,
    /// Pause at each waypoint, seconds. `f64::INFINITY` freezes the node.
    pub pause_s: f64,
}

impl WaypointParams {
    pub fn is_static(&self) -> bool {
        self.v_max <= 0.0 || !self.pause_s.is_finite()
    }
}

/// One leg of a random-waypoint trajectory.
///
/// The node rests at `position` until `pause_until`, then moves in a straight
/// line to `waypoint` at `speed`, arriving at `arrive_at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityState {
    pub position: Position,
    pub waypoint: Position,
    pub speed: f64,
    pub pause_until: SimTime,
    pub arrive_at: SimTime,
}

impl MobilityState {
    pub fn stationary(at: Position) -> Self {
        MobilityState {
            position: at,
            waypoint: at,
            speed: 0.0,
            pause_until: SimTime::MAX,
            arrive_at: SimTime::MAX,
        }
    }

    /// Initial leg: rest at `start` for one pause, then head for a fresh waypoint.
    pub fn initial<R: Rng>(start: Position, params: &WaypointParams, area: Area, rng: &mut R) -> Self {
        if params.is_static() {
            return Self::stationary(start);
        }
        Self::next_leg(start, SimTime::ZERO, params, area, rng)
    }

    fn next_leg<R: Rng>(
        from: Position,
        now: SimTime,
        params: &WaypointParams,
        area: Area,
        rng: &mut R,
    ) -> Self {
        let pause_until = now + SimTime::from_secs_f64(params.pause_s);
        let waypoint = area.random_point(rng);
        let lo = params.v_min.clamp(0.0, params.v_max);
        let speed = if lo < params.v_max {
            rng.gen_range(lo..=params.v_max)
        } else {
            params.v_max
        };
        if speed <= 0.0 {
            return Self::stationary(from);
        }
        let travel = SimTime::from_secs_f64(from.distance(&waypoint) / speed);
        MobilityState {
            position: from,
            waypoint,
            speed,
            pause_until,
            arrive_at: pause_until + travel,
        }
    }

    pub fn position_at(&self, t: SimTime) -> Position {
        if t <= self.pause_until {
            return self.position;
        }
        if t >= self.arrive_at {
            return self.waypoint;
        }
        let total = (self.arrive_at - self.pause_until).as_secs_f64();
        if total <= 0.0 {
            return self.waypoint;
        }
        let f = (t - self.pause_until).as_secs_f64() / total;
        self.position.lerp(&self.waypoint, f)
    }

    pub fn is_moving(&self) -> bool {
        self.arrive_at != SimTime::MAX
    }
}

/// Advances a node that has reached its waypoint: pause there, then pick the
/// next waypoint uniformly in the area and a speed uniformly in `[v_min, v_max]`.
pub fn step_random_waypoint<R: Rng>(
    state: &MobilityState,
    now: SimTime,
    params: &WaypointParams,
    area: Area,
    rng: &mut R,
) -> MobilityState {
    if params.is_static() || !state.is_moving() {
        return MobilityState::stationary(state.position_at(now));
    }
    debug_assert!(now >= state.arrive_at);
    MobilityState::next_leg(state.waypoint, now, params, area, rng)
}

pub fn in_range(a: &Position, b: &Position, range: f64) -> bool {
    a.distance(b) <= range
}

pub fn neighbors(positions: &[Position], node: usize, range: f64) -> Vec<usize> {
    (0..positions.len())
        .filter(|&j| j != node && in_range(&positions[node], &positions[j], range))
        .collect()
}

pub fn propagation_delay(distance_m: f64) -> SimTime {
    SimTime::from_secs_f64(distance_m / SPEED_OF_LIGHT)
}

/// PHY preamble and header duration added to every frame.
pub const PHY_OVERHEAD: SimTime = SimTime::from_micros(192);
/// MAC header and FCS bytes added to every packet.
pub const MAC_HEADER_BYTES: u32 = 34;

pub fn airtime(packet_bytes: u32, link_rate_bps: f64) -> SimTime {
    let bits = f64::from(packet_bytes + MAC_HEADER_BYTES) * 8.0;
    PHY_OVERHEAD + SimTime::from_secs_f64(bits / link_rate_bps)
}

pub type TxId = u64;

#[derive(Debug, Clone)]
struct Reception {
    tx: TxId,
    start: SimTime,
    end: SimTime,
    corrupted: bool,
}

/// Per-receiver view of overlapping transmissions.
///
/// A reception survives only if no other transmission, decodable or merely
/// sensed, overlaps it in time at that receiver and the receiver itself does
/// not transmit meanwhile.
#[derive(Debug, Clone)]
pub struct Channel {
    receptions: Vec<Vec<Reception>>,
    /// Activity sensed beyond reception range, as `[start, end)` intervals.
    sensed: Vec<Vec<(SimTime, SimTime)>>,
    tx_until: Vec<SimTime>,
    next_tx: TxId,
}

impl Channel {
    pub fn new(nodes: usize) -> Self {
        Channel {
            receptions: vec![Vec::new(); nodes],
            sensed: vec![Vec::new(); nodes],
            tx_until: vec![SimTime::ZERO; nodes],
            next_tx: 0,
        }
    }

    /// Registers a transmission from `sender` heard by `receivers`
    /// (each with its propagation delay). Returns the transmission id.
    pub fn begin_tx(
        &mut self,
        sender: NodeId,
        now: SimTime,
        airtime: SimTime,
        receivers: &[(NodeId, SimTime)],
    ) -> TxId {
        let id = self.next_tx;
        self.next_tx += 1;
        let s = sender as usize;
        let end = now + airtime;
        // Half duplex: anything the sender is hearing during its own
        // transmission is lost.
        for r in &mut self.receptions[s] {
            if r.end > now && r.start < end {
                r.corrupted = true;
            }
        }
        self.tx_until[s] = self.tx_until[s].max(end);
        for &(rx, prop) in receivers {
            debug_assert_ne!(rx, sender);
            let (start, stop) = (now + prop, end + prop);
            let list = &mut self.receptions[rx as usize];
            let mut corrupted = self.tx_until[rx as usize] > start
                || self.sensed[rx as usize].iter().any(|&(s, e)| e > start && s < stop);
            for other in list.iter_mut() {
                if other.end > start && other.start < stop {
                    other.corrupted = true;
                    corrupted = true;
                }
            }
            list.push(Reception {
                tx: id,
                start,
                end: stop,
                corrupted,
            });
        }
        id
    }

    /// Registers undecodable energy at `node` over `[start, end)`: the medium
    /// is busy and any reception it overlaps is lost.
    pub fn sense(&mut self, node: NodeId, start: SimTime, end: SimTime) {
        for r in &mut self.receptions[node as usize] {
            if r.end > start && r.start < end {
                r.corrupted = true;
            }
        }
        let list = &mut self.sensed[node as usize];
        list.retain(|&(_, e)| e > start);
        list.push((start, end));
    }

    /// Completes a reception; returns whether it arrived intact.
    pub fn finish_rx(&mut self, node: NodeId, tx: TxId) -> Option<bool> {
        let list = &mut self.receptions[node as usize];
        let idx = list.iter().position(|r| r.tx == tx)?;
        Some(!list.swap_remove(idx).corrupted)
    }

    /// Carrier sense: is the medium busy at `node` at time `now`?
    pub fn busy(&self, node: NodeId, now: SimTime) -> bool {
        self.tx_until[node as usize] > now
            || self.receptions[node as usize]
                .iter()
                .any(|r| r.start <= now && now < r.end)
            || self.sensed[node as usize]
                .iter()
                .any(|&(s, e)| s <= now && now < e)
    }

    /// Earliest instant at which every currently sensed activity has ended.
    pub fn idle_at(&self, node: NodeId, now: SimTime) -> SimTime {
        let mut t = self.tx_until[node as usize].max(now);
        for r in &self.receptions[node as usize] {
            if r.start <= now {
                t = t.max(r.end);
            }
        }
        for &(s, e) in &self.sensed[node as usize] {
            if s <= now {
                t = t.max(e);
            }
        }
        t
    }

    pub fn transmitting(&self, node: NodeId, now: SimTime) -> bool {
        self.tx_until[node as usize] > now
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const RANGE: f64 = 250.0;

    fn wide() -> Area {
        Area {
            width: 6000.0,
            height: 2000.0,
        }
    }

    #[test]
    fn grid_neighbor_counts_match_pairwise_enumeration() {
        let pos = place_grid(7, 7, 200.0, wide()).unwrap();
        assert_eq!(pos.len(), 49);
        for k in 0..49usize {
            let (row, col) = (k / 7, k % 7);
            // Brute force over all pairs.
            let brute = (0..49)
                .filter(|&j| j != k && pos[k].distance(&pos[j]) <= RANGE)
                .count();
            let expected = [row > 0, row < 6, col > 0, col < 6]
                .iter()
                .filter(|b| **b)
                .count();
            assert_eq!(brute, expected, "node {k}");
            assert_eq!(neighbors(&pos, k, RANGE).len(), expected);
        }
        assert_eq!(neighbors(&pos, 0, RANGE).len(), 2);
        assert_eq!(neighbors(&pos, 24, RANGE).len(), 4);
    }

    #[test]
    fn single_node_grid_has_no_neighbors() {
        let pos = place_grid(1, 1, 200.0, wide()).unwrap();
        assert!(neighbors(&pos, 0, RANGE).is_empty());
    }

    #[test]
    fn wide_spacing_partitions() {
        let pos = place_grid(1, 2, 300.0, wide()).unwrap();
        assert!(!in_range(&pos[0], &pos[1], RANGE));
    }

    #[test]
    fn oversized_grid_is_rejected() {
        let err = place_grid(
            7,
            7,
            500.0,
            Area {
                width: 1000.0,
                height: 1000.0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, PlacementError::GridTooLarge { .. }));
    }

    #[test]
    fn zero_speed_never_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = WaypointParams {
            v_min: 0.0,
            v_max: 0.0,
            pause_s: 100.0,
        };
        let area = Area {
            width: 1500.0,
            height: 300.0,
        };
        let s = MobilityState::initial(Position::new(10.0, 20.0), &p, area, &mut rng);
        for t in [0u64, 50, 200, 360] {
            assert_eq!(s.position_at(SimTime::from_secs(t)), Position::new(10.0, 20.0));
        }
    }

    #[test]
    fn infinite_pause_is_static() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = WaypointParams {
            v_min: 1.0,
            v_max: 20.0,
            pause_s: f64::INFINITY,
        };
        let s = MobilityState::initial(Position::new(5.0, 5.0), &p, wide(), &mut rng);
        assert!(!s.is_moving());
        assert_eq!(s.position_at(SimTime::from_secs(360)), Position::new(5.0, 5.0));
    }

    #[test]
    fn leg_arrival_time_is_distance_over_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = WaypointParams {
            v_min: 20.0,
            v_max: 20.0,
            pause_s: 100.0,
        };
        let area = Area {
            width: 1500.0,
            height: 300.0,
        };
        let s = MobilityState::initial(Position::new(0.0, 0.0), &p, area, &mut rng);
        assert_eq!(s.pause_until, SimTime::from_secs(100));
        let d = s.position.distance(&s.waypoint);
        let expect = 100.0 + d / 20.0;
        assert!((s.arrive_at.as_secs_f64() - expect).abs() < 1e-6);
        // Longest possible leg in a 1500x300 area at 20 m/s.
        assert!(d / 20.0 <= (1500f64.hypot(300.0)) / 20.0);
        assert!((1500f64.hypot(300.0)) / 20.0 < 77.0);
        // Halfway through the leg the node is halfway there.
        let mid = SimTime::from_secs_f64(100.0 + d / 40.0);
        let m = s.position_at(mid);
        assert!((m.distance(&s.position) - d / 2.0).abs() < 1e-3);
        let next = step_random_waypoint(&s, s.arrive_at, &p, area, &mut rng);
        assert_eq!(next.position, s.waypoint);
        assert_eq!(next.pause_until, s.arrive_at + SimTime::from_secs(100));
        assert!(area.contains(&next.waypoint));
    }

    #[test]
    fn overlapping_frames_collide_at_common_receiver() {
        let mut ch = Channel::new(3);
        let air = SimTime::from_millis(4);
        let t0 = ch.begin_tx(0, SimTime::ZERO, air, &[(1, SimTime(1))]);
        let t2 = ch.begin_tx(2, SimTime::from_millis(1), air, &[(1, SimTime(1))]);
        assert_eq!(ch.finish_rx(1, t0), Some(false));
        assert_eq!(ch.finish_rx(1, t2), Some(false));
    }

    #[test]
    fn lone_frame_is_received() {
        let mut ch = Channel::new(2);
        let t = ch.begin_tx(0, SimTime::ZERO, SimTime::from_millis(4), &[(1, SimTime(1))]);
        assert!(ch.busy(0, SimTime::from_millis(1)));
        assert!(ch.busy(1, SimTime::from_millis(1)));
        assert!(!ch.busy(1, SimTime::ZERO));
        assert_eq!(ch.finish_rx(1, t), Some(true));
        assert_eq!(ch.finish_rx(1, t), None);
    }

    #[test]
    fn transmitting_receiver_loses_frame() {
        let mut ch = Channel::new(2);
        let air = SimTime::from_millis(4);
        let t = ch.begin_tx(0, SimTime::ZERO, air, &[(1, SimTime(1))]);
        ch.begin_tx(1, SimTime::from_millis(2), air, &[]);
        assert_eq!(ch.finish_rx(1, t), Some(false));
    }

    #[test]
    fn sensed_energy_busies_and_corrupts() {
        let mut ch = Channel::new(3);
        let air = SimTime::from_millis(4);
        let t = ch.begin_tx(0, SimTime::ZERO, air, &[(1, SimTime(1))]);
        ch.sense(1, SimTime::from_millis(3), SimTime::from_millis(7));
        assert_eq!(ch.finish_rx(1, t), Some(false));
        assert!(ch.busy(1, SimTime::from_millis(6)));
        assert_eq!(ch.idle_at(1, SimTime::from_millis(6)), SimTime::from_millis(7));
        // A frame starting inside the sensed interval is lost too.
        let late = ch.begin_tx(2, SimTime::from_millis(5), air, &[(1, SimTime(1))]);
        assert_eq!(ch.finish_rx(1, late), Some(false));
        let clear = ch.begin_tx(0, SimTime::from_millis(20), air, &[(1, SimTime(1))]);
        assert_eq!(ch.finish_rx(1, clear), Some(true));
    }

    #[test]
    fn airtime_is_positive_and_scales_with_size() {
        let small = airtime(40, 2e6);
        let big = airtime(1040, 2e6);
        assert!(small > SimTime::ZERO);
        assert!(big > small);
        // (1040 + 34) bytes at 2 Mb/s plus 192 us preamble.
        assert_eq!(big, SimTime::from_micros(192 + 4296));
    }
}
