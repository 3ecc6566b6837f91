//! Grid geometry: cell vectors, compass directions, quarter-turn rotations
//! and the small identifier newtypes shared by every other module.
//!
//! Conventions fixed for the whole crate: the origin is the top-left cell,
//! x grows east, y grows south, so north is `(0, -1)`. A clockwise quarter
//! turn maps `(x, y)` to `(-y, x)`.

use core::fmt;
use core::ops::{Add, AddAssign, Neg, Sub};

/// A cell position or offset. The same type serves absolute cells, offsets
/// from an agent, and frame-relative coordinates; which one is meant is a
/// property of the surrounding code, not the value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vec2 {
    pub x: i32,
    pub y: i32,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0, y: 0 };

    pub const fn new(x: i32, y: i32) -> Self {
        Vec2 { x, y }
    }

    /// Manhattan norm.
    pub fn manhattan(self) -> u32 {
        self.x.unsigned_abs() + self.y.unsigned_abs()
    }

    /// Manhattan distance to another cell.
    pub fn dist(self, other: Vec2) -> u32 {
        (self - other).manhattan()
    }

    /// Rotate this offset a quarter turn around the origin.
    pub fn rotated(self, rot: Rotation) -> Vec2 {
        match rot {
            Rotation::Cw => Vec2::new(-self.y, self.x),
            Rotation::Ccw => Vec2::new(self.y, -self.x),
        }
    }

    /// Rotate by `turns` clockwise quarter turns.
    pub fn rotated_cw(self, turns: u32) -> Vec2 {
        let mut v = self;
        for _ in 0..(turns % 4) {
            v = v.rotated(Rotation::Cw);
        }
        v
    }

    /// True when this offset is one of the four unit vectors.
    pub fn is_unit(self) -> bool {
        self.manhattan() == 1
    }

    /// The four 4-adjacent neighbours, in N, E, S, W order.
    pub fn neighbours(self) -> [Vec2; 4] {
        [
            self + Direction::North.unit(),
            self + Direction::East.unit(),
            self + Direction::South.unit(),
            self + Direction::West.unit(),
        ]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        *self = *self + rhs;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Compass direction. The canonical ordering used for deterministic
/// tie-breaking everywhere is N, E, S, W.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    pub fn unit(self) -> Vec2 {
        match self {
            Direction::North => Vec2::new(0, -1),
            Direction::East => Vec2::new(1, 0),
            Direction::South => Vec2::new(0, 1),
            Direction::West => Vec2::new(-1, 0),
        }
    }

    /// The direction whose unit vector equals `v`, if any.
    pub fn from_unit(v: Vec2) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.unit() == v)
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Direction::North => 'n',
            Direction::East => 'e',
            Direction::South => 's',
            Direction::West => 'w',
        }
    }

    pub fn from_letter(c: char) -> Option<Direction> {
        match c {
            'n' => Some(Direction::North),
            'e' => Some(Direction::East),
            's' => Some(Direction::South),
            'w' => Some(Direction::West),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Quarter-turn sense.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rotation {
    Cw,
    Ccw,
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rotation::Cw => write!(f, "cw"),
            Rotation::Ccw => write!(f, "ccw"),
        }
    }
}

/// One of the two match teams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Team {
    A,
    B,
}

impl Team {
    pub const BOTH: [Team; 2] = [Team::A, Team::B];

    pub fn index(self) -> usize {
        match self {
            Team::A => 0,
            Team::B => 1,
        }
    }

    pub fn opponent(self) -> Team {
        match self {
            Team::A => Team::B,
            Team::B => Team::A,
        }
    }
}

impl fmt::Display for Team {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Team::A => write!(f, "A"),
            Team::B => write!(f, "B"),
        }
    }
}

/// Identifier of one agent, unique across both teams for a whole match.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(pub u16);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier of one block instance on the map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

/// A block type, rendered as `b0`, `b1`, ...
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockType(pub u8);

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

/// Terrain kind of one cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Terrain {
    #[default]
    Empty,
    Obstacle,
    Goal,
}
