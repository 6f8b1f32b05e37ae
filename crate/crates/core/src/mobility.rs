//! Random-waypoint motion, pre-generated per run.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Position {
        Position { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub start_pos: Position,
    pub target_pos: Position,
    pub speed: f64,
    pub depart_time: f64,
    pub pause_after: f64,
}

impl Waypoint {
    pub fn travel_time(&self) -> f64 {
        if self.speed == 0.0 {
            0.0
        } else {
            self.start_pos.distance(self.target_pos) / self.speed
        }
    }

    pub fn arrival_time(&self) -> f64 {
        self.depart_time + self.travel_time()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("invalid mobility parameters: {0}")]
    InvalidParams(String),
    #[error("time {t} outside [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
    #[error("node {0} not in trace")]
    UnknownNode(usize),
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityTrace {
    pub duration: f64,
    pub legs: Vec<Vec<Waypoint>>,
}

impl MobilityTrace {
    /// Every node parked at its initial position for the whole run.
    pub fn stationary(positions: &[Position], duration: f64) -> MobilityTrace {
        let legs = positions
            .iter()
            .map(|&p| {
                vec![Waypoint { start_pos: p, target_pos: p, speed: 0.0, depart_time: 0.0, pause_after: duration }]
            })
            .collect();
        MobilityTrace { duration, legs }
    }

    pub fn node_count(&self) -> usize {
        self.legs.len()
    }

    pub fn is_static(&self) -> bool {
        self.legs.iter().all(|l| l.iter().all(|w| w.speed == 0.0 || w.start_pos == w.target_pos))
    }

    pub fn position_at(&self, node: usize, t: f64) -> Result<Position, MobilityError> {
        let legs = self.legs.get(node).ok_or(MobilityError::UnknownNode(node))?;
        if !(0.0..=self.duration).contains(&t) {
            return Err(MobilityError::OutOfRange { t, duration: self.duration });
        }
        let i = legs.partition_point(|w| w.depart_time <= t).saturating_sub(1);
        let w = &legs[i];
        let travel = w.travel_time();
        let dt = t - w.depart_time;
        if dt <= 0.0 {
            return Ok(w.start_pos);
        }
        if travel == 0.0 || dt >= travel {
            return Ok(w.target_pos);
        }
        let f = dt / travel;
        Ok(Position::new(
            w.start_pos.x + f * (w.target_pos.x - w.start_pos.x),
            w.start_pos.y + f * (w.target_pos.y - w.start_pos.y),
        ))
    }

    /// One line per waypoint, `node time x y speed pause`, where `x y` is the
    /// leg's start. A final `speed 0` line per node carries the last target.
    pub fn to_text(&self) -> String {
        let mut s = format!("# duration {}\n", self.duration);
        for (n, legs) in self.legs.iter().enumerate() {
            for w in legs {
                let _ = writeln!(
                    s,
                    "{n} {} {} {} {} {}",
                    w.depart_time, w.start_pos.x, w.start_pos.y, w.speed, w.pause_after
                );
            }
            if let Some(last) = legs.last() {
                let _ = writeln!(s, "{n} {} {} {} 0 0", last.arrival_time(), last.target_pos.x, last.target_pos.y);
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<MobilityTrace, MobilityError> {
        let mut duration = None;
        let mut rows: Vec<Vec<[f64; 5]>> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: &str| MobilityError::Parse { line, msg: msg.to_string() };
            let raw = raw.trim();
            if let Some(rest) = raw.strip_prefix("# duration") {
                duration = Some(rest.trim().parse::<f64>().map_err(|_| err("bad duration"))?);
                continue;
            }
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = raw.split_whitespace().collect();
            if f.len() != 6 {
                return Err(err("expected 6 fields"));
            }
            let node: usize = f[0].parse().map_err(|_| err("bad node"))?;
            let mut v = [0.0; 5];
            for (slot, s) in v.iter_mut().zip(&f[1..]) {
                *slot = s.parse().map_err(|_| err("bad number"))?;
            }
            if node > rows.len() {
                return Err(err("nodes must appear in order"));
            }
            if node == rows.len() {
                rows.push(Vec::new());
            }
            rows[node].push(v);
        }
        let duration = duration.ok_or(MobilityError::Parse { line: 0, msg: "missing duration".into() })?;
        let legs = rows
            .into_iter()
            .map(|r| {
                r.windows(2)
                    .map(|w| Waypoint {
                        start_pos: Position::new(w[0][1], w[0][2]),
                        target_pos: Position::new(w[1][1], w[1][2]),
                        speed: w[0][3],
                        depart_time: w[0][0],
                        pause_after: w[0][4],
                    })
                    .collect()
            })
            .collect();
        Ok(MobilityTrace { duration, legs })
    }
}

fn uniform_point(arena: f64, rng: &mut impl Rng) -> Position {
    Position::new(rng.gen_range(0.0..=arena), rng.gen_range(0.0..=arena))
}

pub fn generate_trace(
    node_count: usize,
    arena: f64,
    v_min: f64,
    v_max: f64,
    pause: f64,
    duration: f64,
    rng: &mut impl Rng,
) -> Result<MobilityTrace, MobilityError> {
    if !(v_min > 0.0 && v_max >= v_min && v_max.is_finite()) {
        return Err(MobilityError::InvalidParams(format!("speed range [{v_min}, {v_max}]")));
    }
    if !(duration > 0.0 && duration.is_finite()) || !(arena > 0.0) || !(pause >= 0.0) {
        return Err(MobilityError::InvalidParams("duration, arena and pause must be positive".into()));
    }
    let mut legs = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let mut node_legs = Vec::new();
        let mut pos = uniform_point(arena, rng);
        let mut t = 0.0;
        while t <= duration {
            let target = uniform_point(arena, rng);
            let speed = if v_max > v_min { rng.gen_range(v_min..v_max) } else { v_min };
            let w = Waypoint { start_pos: pos, target_pos: target, speed, depart_time: t, pause_after: pause };
            t = w.arrival_time() + pause;
            pos = target;
            node_legs.push(w);
        }
        legs.push(node_legs);
    }
    Ok(MobilityTrace { duration, legs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_speed_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            generate_trace(3, 1000.0, 0.0, 0.0, 10.0, 100.0, &mut rng),
            Err(MobilityError::InvalidParams(_))
        ));
    }

    #[test]
    fn linear_interpolation_and_pause() {
        let w = Waypoint {
            start_pos: Position::new(0.0, 0.0),
            target_pos: Position::new(100.0, 0.0),
            speed: 10.0,
            depart_time: 2.0,
            pause_after: 5.0,
        };
        let trace = MobilityTrace { duration: 20.0, legs: vec![vec![w]] };
        assert_eq!(trace.position_at(0, 0.0).unwrap(), Position::new(0.0, 0.0));
        assert_eq!(trace.position_at(0, 7.0).unwrap(), Position::new(50.0, 0.0));
        assert_eq!(trace.position_at(0, 13.0).unwrap(), Position::new(100.0, 0.0));
        assert_eq!(trace.position_at(0, 16.0).unwrap(), Position::new(100.0, 0.0));
        assert!(matches!(trace.position_at(0, 21.0), Err(MobilityError::OutOfRange { .. })));
    }

    #[test]
    fn trace_covers_duration_and_starts_at_initial_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trace = generate_trace(5, 1000.0, 1.0, 20.0, 10.0, 500.0, &mut rng).unwrap();
        for legs in &trace.legs {
            let last = legs.last().unwrap();
            assert!(last.arrival_time() + last.pause_after > 500.0);
            assert_eq!(legs[0].depart_time, 0.0);
            for pair in legs.windows(2) {
                assert_eq!(pair[0].target_pos, pair[1].start_pos);
                assert!((pair[0].arrival_time() + pair[0].pause_after - pair[1].depart_time).abs() < 1e-9);
            }
        }
        assert_eq!(trace.position_at(2, 0.0).unwrap(), trace.legs[2][0].start_pos);
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trace = generate_trace(4, 1000.0, 1.0, 5.0, 10.0, 300.0, &mut rng).unwrap();
        assert_eq!(MobilityTrace::from_text(&trace.to_text()).unwrap(), trace);
    }
}
