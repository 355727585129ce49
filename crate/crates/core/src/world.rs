//! Deterministic 2D grid world that stands in for the robot's surroundings
//! and every sensor and actuator attached to it.
//!
//! Coordinates are `(x, y)` cell indices with the origin at the top-left;
//! heading `N` decreases `y`. Everything here is a pure function of the
//! scenario, its seed and the number of steps taken.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vision::Frame;

pub const MIN_DIMENSION: usize = 8;
pub const VIEW_SIZE: usize = 32;
pub const MAX_PROXIMITY_RANGE: u32 = 8;
pub const AMBIENT_SMOKE_PPM: f64 = 10.0;
pub const AMBIENT_TEMPERATURE_C: f64 = 21.0;
pub const FIRE_SMOKE_PPM: f64 = 500.0;
pub const FIRE_TEMPERATURE_C: f64 = 60.0;
/// Nominal camera clock used for frame timestamps.
pub const TICK_MS: u64 = 100;

/// Gray levels used by the simulated camera.
pub mod palette {
    pub const OUTSIDE: u8 = 0;
    pub const EMPTY: u8 = 50;
    pub const OBSTACLE: u8 = 200;
    pub const BURNING: u8 = 230;
    pub const INTRUDER: u8 = 255;
}

pub type Cell = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn turn_right(self) -> Heading {
        match self {
            Heading::N => Heading::E,
            Heading::E => Heading::S,
            Heading::S => Heading::W,
            Heading::W => Heading::N,
        }
    }

    pub fn turn_left(self) -> Heading {
        self.turn_right().turn_right().turn_right()
    }

    pub fn opposite(self) -> Heading {
        self.turn_right().turn_right()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveDir {
    Forward,
    Backward,
    TurnLeft,
    TurnRight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Empty,
    Obstacle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveOutcome {
    Moved(RobotPose),
    Blocked,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IntruderMotion {
    /// Walks the path end to end and back again.
    Path(Vec<Cell>),
    /// Takes one seeded random step to a free 4-neighbour per tick.
    RandomWalk,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Intruder {
    pub id: String,
    pub motion: IntruderMotion,
    pub active_from: u64,
    pub active_until: u64,
    position: Cell,
    start: Cell,
}

impl Intruder {
    pub fn position(&self) -> Cell {
        self.position
    }

    /// Present in the world during `active_from <= tick < active_until`.
    pub fn is_active(&self, tick: u64) -> bool {
        self.active_from <= tick && tick < self.active_until
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fire {
    pub cell: Cell,
    pub ignition_tick: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub smoke_ppm: f64,
    pub temperature_c: f64,
    pub proximity_front: u32,
    pub proximity_rear: u32,
    pub tick: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldGrid {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    fires: Vec<Fire>,
    intruders: Vec<Intruder>,
    tick: u64,
    seed: u64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("world is {width}x{height}; both sides must be at least {MIN_DIMENSION}")]
    TooSmall { width: usize, height: usize },
    #[error("{entity} at ({x}, {y}) lies outside the world")]
    OutOfBounds { entity: String, x: usize, y: usize },
    #[error("robot starts on an obstacle at ({x}, {y})")]
    RobotOnObstacle { x: usize, y: usize },
    #[error("intruder {id}: path cells {from:?} and {to:?} are not 4-adjacent")]
    NonAdjacentPath { id: String, from: Cell, to: Cell },
    #[error("intruder {id}: {reason}")]
    InvalidIntruder { id: String, reason: &'static str },
}

/// On-disk scenario description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub seed: u64,
    pub robot: RobotPose,
    #[serde(default)]
    pub obstacles: Vec<Cell>,
    #[serde(default)]
    pub intruders: Vec<IntruderSpec>,
    #[serde(default)]
    pub fires: Vec<Fire>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntruderSpec {
    pub id: String,
    pub path: Vec<Cell>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub random_walk: bool,
    pub active_from: u64,
    pub active_until: u64,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// An empty world of the given size with the robot at `robot`.
    pub fn empty(width: usize, height: usize, robot: RobotPose) -> Self {
        Self {
            width,
            height,
            seed: 0,
            robot,
            obstacles: vec![],
            intruders: vec![],
            fires: vec![],
        }
    }

    pub fn build(&self) -> Result<(WorldGrid, RobotPose), ScenarioError> {
        let (width, height) = (self.width, self.height);
        if width < MIN_DIMENSION || height < MIN_DIMENSION {
            return Err(ScenarioError::TooSmall { width, height });
        }
        let in_bounds = |entity: &str, (x, y): Cell| {
            if x < width && y < height {
                Ok(())
            } else {
                Err(ScenarioError::OutOfBounds {
                    entity: entity.to_string(),
                    x,
                    y,
                })
            }
        };

        let mut cells = vec![CellKind::Empty; width * height];
        for &cell in &self.obstacles {
            in_bounds("obstacle", cell)?;
            cells[cell.1 * width + cell.0] = CellKind::Obstacle;
        }
        let blocked = |(x, y): Cell| cells[y * width + x] == CellKind::Obstacle;

        let robot = self.robot;
        in_bounds("robot", (robot.x, robot.y))?;
        if blocked((robot.x, robot.y)) {
            return Err(ScenarioError::RobotOnObstacle {
                x: robot.x,
                y: robot.y,
            });
        }

        let mut intruders = Vec::with_capacity(self.intruders.len());
        for spec in &self.intruders {
            let invalid = |reason| ScenarioError::InvalidIntruder {
                id: spec.id.clone(),
                reason,
            };
            let Some(&start) = spec.path.first() else {
                return Err(invalid("path must contain at least the starting cell"));
            };
            if spec.active_until < spec.active_from {
                return Err(invalid("active_until precedes active_from"));
            }
            for &cell in &spec.path {
                in_bounds(&format!("intruder {}", spec.id), cell)?;
                if blocked(cell) {
                    return Err(invalid("path crosses an obstacle"));
                }
            }
            for pair in spec.path.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                if a.0.abs_diff(b.0) + a.1.abs_diff(b.1) != 1 {
                    return Err(ScenarioError::NonAdjacentPath {
                        id: spec.id.clone(),
                        from: a,
                        to: b,
                    });
                }
            }
            let motion = if spec.random_walk {
                if spec.path.len() != 1 {
                    return Err(invalid("a random walker takes exactly one starting cell"));
                }
                IntruderMotion::RandomWalk
            } else {
                IntruderMotion::Path(spec.path.clone())
            };
            intruders.push(Intruder {
                id: spec.id.clone(),
                motion,
                active_from: spec.active_from,
                active_until: spec.active_until,
                position: start,
                start,
            });
        }

        for fire in &self.fires {
            in_bounds("fire", fire.cell)?;
        }

        let world = WorldGrid {
            width,
            height,
            cells,
            fires: self.fires.clone(),
            intruders,
            tick: 0,
            seed: self.seed,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        };
        Ok((world, robot))
    }
}

/// Parses a scenario file and builds its world and robot start pose.
pub fn load_scenario(text: &str) -> Result<(WorldGrid, RobotPose), ScenarioError> {
    Scenario::parse(text)?.build()
}

fn chebyshev(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

fn ping_pong(len: usize, steps: u64) -> usize {
    if len <= 1 {
        return 0;
    }
    let period = 2 * (len as u64 - 1);
    let phase = (steps % period) as usize;
    if phase < len {
        phase
    } else {
        period as usize - phase
    }
}

impl WorldGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn intruders(&self) -> &[Intruder] {
        &self.intruders
    }

    pub fn fires(&self) -> &[Fire] {
        &self.fires
    }

    fn offset(&self, x: i64, y: i64) -> Option<Cell> {
        (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height)
            .then_some((x as usize, y as usize))
    }

    pub fn cell_kind(&self, (x, y): Cell) -> CellKind {
        self.cells[y * self.width + x]
    }

    pub fn in_bounds(&self, (x, y): Cell) -> bool {
        x < self.width && y < self.height
    }

    /// In bounds and not an obstacle.
    pub fn is_free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && self.cell_kind(cell) == CellKind::Empty
    }

    pub fn is_burning(&self, cell: Cell) -> bool {
        self.fires
            .iter()
            .any(|f| f.cell == cell && f.ignition_tick <= self.tick)
    }

    pub fn burning_fires(&self) -> impl Iterator<Item = &Fire> {
        self.fires.iter().filter(|f| f.ignition_tick <= self.tick)
    }

    pub fn active_intruders(&self) -> impl Iterator<Item = &Intruder> {
        self.intruders.iter().filter(|i| i.is_active(self.tick))
    }

    /// Advances the world by one tick.
    pub fn step(&mut self) {
        self.tick += 1;
        let tick = self.tick;
        for i in 0..self.intruders.len() {
            let intruder = &self.intruders[i];
            if !intruder.is_active(tick) {
                continue;
            }
            let next = match &intruder.motion {
                IntruderMotion::Path(path) => path[ping_pong(path.len(), tick - intruder.active_from)],
                IntruderMotion::RandomWalk if tick == intruder.active_from => intruder.start,
                IntruderMotion::RandomWalk => {
                    let (x, y) = intruder.position;
                    let options: Vec<Cell> = [Heading::N, Heading::E, Heading::S, Heading::W]
                        .iter()
                        .filter_map(|h| {
                            let (dx, dy) = h.delta();
                            self.offset(x as i64 + dx, y as i64 + dy)
                        })
                        .filter(|&c| self.cell_kind(c) == CellKind::Empty)
                        .collect();
                    options.choose(&mut self.rng).copied().unwrap_or((x, y))
                }
            };
            self.intruders[i].position = next;
        }
    }

    /// Smoke and temperature at `cell`: ambient plus the sum over burning
    /// fires of `500/(1+d)` ppm and `60/(1+d)` °C at Chebyshev distance `d`.
    pub fn smoke_and_temperature(&self, cell: Cell) -> (f64, f64) {
        self.burning_fires().fold(
            (AMBIENT_SMOKE_PPM, AMBIENT_TEMPERATURE_C),
            |(smoke, temp), fire| {
                let falloff = 1.0 + chebyshev(fire.cell, cell) as f64;
                (smoke + FIRE_SMOKE_PPM / falloff, temp + FIRE_TEMPERATURE_C / falloff)
            },
        )
    }

    /// Free cells between `from` and the nearest obstacle or boundary along
    /// `heading`, capped at [`MAX_PROXIMITY_RANGE`].
    pub fn free_run(&self, from: Cell, heading: Heading) -> u32 {
        let (dx, dy) = heading.delta();
        for k in 1..=MAX_PROXIMITY_RANGE as i64 {
            match self.offset(from.0 as i64 + dx * k, from.1 as i64 + dy * k) {
                Some(c) if self.cell_kind(c) == CellKind::Empty => {}
                _ => return (k - 1) as u32,
            }
        }
        MAX_PROXIMITY_RANGE
    }
}

/// Returns the world advanced by one tick.
pub fn step_world(world: &WorldGrid) -> WorldGrid {
    let mut next = world.clone();
    next.step();
    next
}

/// Renders the 32x32 overhead window ahead of the robot, rotated so the
/// top row is farthest along the heading. The robot's own row sits just
/// below the frame; column 16 is straight ahead.
pub fn render_frame(world: &WorldGrid, pose: &RobotPose) -> Frame {
    let forward = pose.heading.delta();
    let right = pose.heading.turn_right().delta();
    let mut pixels = vec![palette::OUTSIDE; VIEW_SIZE * VIEW_SIZE];
    let half = (VIEW_SIZE / 2) as i64;
    for row in 0..VIEW_SIZE {
        let ahead = (VIEW_SIZE - row) as i64;
        for col in 0..VIEW_SIZE {
            let lateral = col as i64 - half;
            let x = pose.x as i64 + forward.0 * ahead + right.0 * lateral;
            let y = pose.y as i64 + forward.1 * ahead + right.1 * lateral;
            if let Some(cell) = world.offset(x, y) {
                pixels[row * VIEW_SIZE + col] = match world.cell_kind(cell) {
                    CellKind::Empty => palette::EMPTY,
                    CellKind::Obstacle => palette::OBSTACLE,
                };
            }
        }
    }
    let mut paint = |cell: Cell, value: u8| {
        let dx = cell.0 as i64 - pose.x as i64;
        let dy = cell.1 as i64 - pose.y as i64;
        // Project onto the robot's forward/right axes.
        let ahead = dx * forward.0 + dy * forward.1;
        let lateral = dx * right.0 + dy * right.1;
        if (1..=VIEW_SIZE as i64).contains(&ahead) && (-half..half).contains(&lateral) {
            let row = VIEW_SIZE - ahead as usize;
            let col = (lateral + half) as usize;
            pixels[row * VIEW_SIZE + col] = value;
        }
    };
    for fire in world.burning_fires() {
        paint(fire.cell, palette::BURNING);
    }
    for intruder in world.active_intruders() {
        paint(intruder.position, palette::INTRUDER);
    }
    Frame::new(
        VIEW_SIZE as u16,
        VIEW_SIZE as u16,
        pixels,
        world.tick,
        world.tick * TICK_MS,
    )
    .expect("view window has fixed non-zero size")
}

pub fn read_sensors(world: &WorldGrid, pose: &RobotPose) -> SensorReading {
    let here = (pose.x, pose.y);
    let (smoke_ppm, temperature_c) = world.smoke_and_temperature(here);
    SensorReading {
        smoke_ppm,
        temperature_c,
        proximity_front: world.free_run(here, pose.heading),
        proximity_rear: world.free_run(here, pose.heading.opposite()),
        tick: world.tick,
    }
}

pub fn apply_move(world: &WorldGrid, pose: &RobotPose, dir: MoveDir) -> MoveOutcome {
    let heading = match dir {
        MoveDir::TurnLeft => {
            return MoveOutcome::Moved(RobotPose {
                heading: pose.heading.turn_left(),
                ..*pose
            })
        }
        MoveDir::TurnRight => {
            return MoveOutcome::Moved(RobotPose {
                heading: pose.heading.turn_right(),
                ..*pose
            })
        }
        MoveDir::Forward => pose.heading,
        MoveDir::Backward => pose.heading.opposite(),
    };
    let (dx, dy) = heading.delta();
    match world.offset(pose.x as i64 + dx, pose.y as i64 + dy) {
        Some(cell) if world.cell_kind(cell) == CellKind::Empty => MoveOutcome::Moved(RobotPose {
            x: cell.0,
            y: cell.1,
            heading: pose.heading,
        }),
        _ => MoveOutcome::Blocked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(x: usize, y: usize, heading: Heading) -> RobotPose {
        RobotPose { x, y, heading }
    }

    fn world_with(obstacles: &[Cell]) -> WorldGrid {
        let mut s = Scenario::empty(16, 16, pose(3, 3, Heading::E));
        s.obstacles = obstacles.to_vec();
        s.build().unwrap().0
    }

    /// Independent ray scan: walk cell by cell, boundary counts as blocked.
    fn brute_force_gap(world: &WorldGrid, from: Cell, h: Heading) -> u32 {
        let (dx, dy) = h.delta();
        let (mut x, mut y) = (from.0 as i64, from.1 as i64);
        let mut free = 0;
        loop {
            x += dx;
            y += dy;
            let inside = x >= 0 && y >= 0 && x < world.width() as i64 && y < world.height() as i64;
            if !inside || world.cell_kind((x as usize, y as usize)) == CellKind::Obstacle {
                return free.min(MAX_PROXIMITY_RANGE);
            }
            free += 1;
        }
    }

    #[test]
    fn minimal_scenario_is_all_empty() {
        let text = r#"{"width":16,"height":16,"seed":1,"robot":{"x":4,"y":5,"heading":"S"},
            "obstacles":[],"intruders":[],"fires":[]}"#;
        let (world, robot) = load_scenario(text).unwrap();
        assert_eq!(robot, pose(4, 5, Heading::S));
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(world.cell_kind((x, y)), CellKind::Empty);
            }
        }
    }

    #[test]
    fn obstacle_maps_to_cell() {
        let text = r#"{"width":16,"height":16,"seed":1,"robot":{"x":0,"y":0,"heading":"N"},"obstacles":[[6,3]]}"#;
        let (world, _) = load_scenario(text).unwrap();
        assert_eq!(world.cell_kind((6, 3)), CellKind::Obstacle);
        assert_eq!(world.cell_kind((3, 6)), CellKind::Empty);
    }

    #[test]
    fn non_adjacent_path_rejected() {
        let text = r#"{"width":16,"height":16,"seed":1,"robot":{"x":0,"y":0,"heading":"N"},
            "intruders":[{"id":"a","path":[[2,2],[2,4]],"active_from":0,"active_until":10}]}"#;
        assert!(matches!(load_scenario(text), Err(ScenarioError::NonAdjacentPath { .. })));
    }

    #[test]
    fn scenario_errors() {
        let base = |extra: &str| {
            format!(r#"{{"width":16,"height":16,"seed":1,"robot":{{"x":2,"y":2,"heading":"N"}}{extra}}}"#)
        };
        assert!(matches!(
            load_scenario(&base(r#","obstacles":[[16,0]]"#)),
            Err(ScenarioError::OutOfBounds { .. })
        ));
        assert!(matches!(
            load_scenario(&base(r#","obstacles":[[2,2]]"#)),
            Err(ScenarioError::RobotOnObstacle { x: 2, y: 2 })
        ));
        assert!(matches!(
            load_scenario(&base(r#","colour":"red""#)),
            Err(ScenarioError::Parse { .. })
        ));
        let err = load_scenario("{\n  \"width\": 16,\n  \"height\": oops\n}").unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            load_scenario(r#"{"width":4,"height":16,"robot":{"x":0,"y":0,"heading":"N"}}"#),
            Err(ScenarioError::TooSmall { .. })
        ));
    }

    #[test]
    fn intruder_advances_one_path_step_per_tick() {
        let mut s = Scenario::empty(16, 16, pose(0, 0, Heading::N));
        s.intruders.push(IntruderSpec {
            id: "walker".into(),
            path: vec![(2, 2), (3, 2), (4, 2)],
            random_walk: false,
            active_from: 0,
            active_until: 100,
        });
        let (mut world, _) = s.build().unwrap();
        let seen: Vec<Cell> = (0..6)
            .map(|_| {
                let p = world.intruders()[0].position();
                world.step();
                p
            })
            .collect();
        assert_eq!(seen, vec![(2, 2), (3, 2), (4, 2), (3, 2), (2, 2), (3, 2)]);
    }

    #[test]
    fn fire_follows_schedule() {
        let mut s = Scenario::empty(16, 16, pose(5, 5, Heading::N));
        s.fires.push(Fire { cell: (5, 5), ignition_tick: 10 });
        let (mut world, robot) = s.build().unwrap();
        while world.tick() < 9 {
            world.step();
        }
        let r = read_sensors(&world, &robot);
        assert_eq!(r.smoke_ppm, AMBIENT_SMOKE_PPM);
        assert_eq!(r.temperature_c, AMBIENT_TEMPERATURE_C);
        world.step();
        let r = read_sensors(&world, &robot);
        assert_eq!(r.smoke_ppm, 510.0);
        assert_eq!(r.temperature_c, 81.0);
    }

    #[test]
    fn diffusion_sums_over_fires() {
        let mut s = Scenario::empty(16, 16, pose(5, 5, Heading::N));
        s.fires = vec![
            Fire { cell: (7, 5), ignition_tick: 0 },
            Fire { cell: (5, 8), ignition_tick: 0 },
        ];
        let (world, robot) = s.build().unwrap();
        let r = read_sensors(&world, &robot);
        // d = 2 and d = 3
        assert!((r.smoke_ppm - (10.0 + 500.0 / 3.0 + 500.0 / 4.0)).abs() < 1e-9);
        assert!((r.temperature_c - (21.0 + 20.0 + 15.0)).abs() < 1e-9);
    }

    #[test]
    fn determinism_over_hundred_steps() {
        let mut s = Scenario::empty(20, 20, pose(0, 0, Heading::S));
        s.seed = 42;
        s.intruders.push(IntruderSpec {
            id: "r".into(),
            path: vec![(10, 10)],
            random_walk: true,
            active_from: 3,
            active_until: 1000,
        });
        s.obstacles = vec![(9, 10), (11, 11)];
        let (mut a, robot) = s.build().unwrap();
        let (mut b, _) = s.build().unwrap();
        for _ in 0..100 {
            a.step();
            b.step();
            assert_eq!(render_frame(&a, &robot), render_frame(&b, &robot));
        }
        assert_eq!(a, b);
        let walker = a.intruders()[0].position();
        assert!(a.is_free(walker));
    }

    #[test]
    fn empty_view_is_uniform() {
        let (world, _) = Scenario::empty(64, 64, pose(32, 40, Heading::N)).build().unwrap();
        let frame = render_frame(&world, &pose(32, 40, Heading::N));
        assert_eq!((frame.width(), frame.height()), (32, 32));
        assert!(frame.pixels().iter().all(|&p| p == palette::EMPTY));
    }

    #[test]
    fn obstacle_and_entities_render() {
        let mut s = Scenario::empty(64, 64, pose(32, 40, Heading::N));
        s.obstacles = vec![(32, 39)];
        s.fires = vec![Fire { cell: (30, 20), ignition_tick: 0 }];
        s.intruders.push(IntruderSpec {
            id: "i".into(),
            path: vec![(40, 30)],
            random_walk: false,
            active_from: 0,
            active_until: 10,
        });
        let (world, robot) = s.build().unwrap();
        let frame = render_frame(&world, &robot);
        // directly ahead, one cell away: bottom row, centre column
        assert_eq!(frame.pixel(16, 31), palette::OBSTACLE);
        assert_eq!(frame.pixel(16 - 2, 32 - 20), palette::BURNING);
        assert_eq!(frame.pixel(16 + 8, 32 - 10), palette::INTRUDER);
        assert_eq!(render_frame(&world, &robot), frame);
    }

    #[test]
    fn rotated_view_and_world_edge() {
        // Facing east from the left edge: the window covers x = 1..=32,
        // y = 4-16 ..= 4+15, so rows beyond y < 0 render as outside.
        let mut s = Scenario::empty(16, 16, pose(0, 4, Heading::E));
        s.obstacles = vec![(3, 6)];
        let (world, robot) = s.build().unwrap();
        let frame = render_frame(&world, &robot);
        // ahead = 3 -> row 29; right of an east-facing robot is +y, lateral 2 -> col 18
        assert_eq!(frame.pixel(18, 29), palette::OBSTACLE);
        // ahead 20 is past x = 15
        assert_eq!(frame.pixel(16, 32 - 20), palette::OUTSIDE);
        // lateral -10 is y = -6
        assert_eq!(frame.pixel(6, 31), palette::OUTSIDE);
    }

    #[test]
    fn proximity_ray_scan() {
        let world = world_with(&[(6, 3)]);
        let robot = pose(3, 3, Heading::E);
        let r = read_sensors(&world, &robot);
        assert_eq!(r.proximity_front, brute_force_gap(&world, (3, 3), Heading::E));
        // cells (4,3) and (5,3) are free before the obstacle at (6,3)
        assert_eq!(r.proximity_front, 2);
        assert_eq!(r.proximity_rear, 3);
    }

    #[test]
    fn boundary_counts_as_obstacle() {
        let world = world_with(&[]);
        let r = read_sensors(&world, &pose(15, 7, Heading::E));
        assert_eq!(r.proximity_front, 0);
        let r = read_sensors(&world, &pose(13, 7, Heading::E));
        assert_eq!(r.proximity_front, brute_force_gap(&world, (13, 7), Heading::E));
        assert_eq!(r.proximity_front, 2);
        let r = read_sensors(&world, &pose(0, 7, Heading::E));
        assert_eq!(r.proximity_front, MAX_PROXIMITY_RANGE);
    }

    #[test]
    fn ambient_readings_without_fire() {
        let world = world_with(&[]);
        let r = read_sensors(&world, &pose(3, 3, Heading::N));
        assert_eq!(r.smoke_ppm, 10.0);
        assert_eq!(r.temperature_c, 21.0);
    }

    #[test]
    fn kinematics() {
        let world = world_with(&[(5, 3)]);
        assert_eq!(
            apply_move(&world, &pose(5, 5, Heading::N), MoveDir::Forward),
            MoveOutcome::Moved(pose(5, 4, Heading::N))
        );
        assert_eq!(
            apply_move(&world, &pose(5, 5, Heading::N), MoveDir::TurnRight),
            MoveOutcome::Moved(pose(5, 5, Heading::E))
        );
        assert_eq!(
            apply_move(&world, &pose(5, 5, Heading::N), MoveDir::TurnLeft),
            MoveOutcome::Moved(pose(5, 5, Heading::W))
        );
        assert_eq!(
            apply_move(&world, &pose(5, 5, Heading::N), MoveDir::Backward),
            MoveOutcome::Moved(pose(5, 6, Heading::N))
        );
        assert_eq!(apply_move(&world, &pose(5, 4, Heading::N), MoveDir::Forward), MoveOutcome::Blocked);
        assert_eq!(apply_move(&world, &pose(0, 4, Heading::W), MoveDir::Forward), MoveOutcome::Blocked);
        assert_eq!(apply_move(&world, &pose(0, 4, Heading::E), MoveDir::Backward), MoveOutcome::Blocked);
    }

    proptest! {
        #[test]
        fn smoke_non_increasing_with_distance(fx in 0usize..20, fy in 0usize..20, d1 in 0usize..20, d2 in 0usize..20) {
            let mut s = Scenario::empty(40, 40, pose(0, 0, Heading::N));
            s.fires = vec![Fire { cell: (fx, fy), ignition_tick: 0 }];
            let (world, _) = s.build().unwrap();
            let (near, far) = (d1.min(d2), d1.max(d2));
            let (smoke_near, temp_near) = world.smoke_and_temperature((fx + near, fy));
            let (smoke_far, temp_far) = world.smoke_and_temperature((fx + far, fy));
            prop_assert!(smoke_near >= smoke_far);
            prop_assert!(temp_near >= temp_far);
            prop_assert!(smoke_far >= AMBIENT_SMOKE_PPM);
        }

        #[test]
        fn random_moves_stay_safe(seed in any::<u64>(), moves in proptest::collection::vec(0u8..4, 1..400)) {
            let mut s = Scenario::empty(12, 12, pose(1, 1, Heading::S));
            s.seed = seed;
            s.obstacles = (0..12).map(|i| (i, 6)).filter(|c| c.0 != 4).chain([(8, 2), (2, 9)]).collect();
            let (world, mut robot) = s.build().unwrap();
            for m in moves {
                let dir = [MoveDir::Forward, MoveDir::Backward, MoveDir::TurnLeft, MoveDir::TurnRight][m as usize];
                let r = read_sensors(&world, &robot);
                match apply_move(&world, &robot, dir) {
                    MoveOutcome::Moved(next) => {
                        prop_assert!(world.is_free((next.x, next.y)));
                        if dir == MoveDir::Forward { prop_assert!(r.proximity_front > 0); }
                        if dir == MoveDir::Backward { prop_assert!(r.proximity_rear > 0); }
                        robot = next;
                    }
                    MoveOutcome::Blocked => {
                        prop_assert!(matches!(dir, MoveDir::Forward | MoveDir::Backward));
                        let gap = if dir == MoveDir::Forward { r.proximity_front } else { r.proximity_rear };
                        prop_assert_eq!(gap, 0);
                    }
                }
            }
        }
    }
}
