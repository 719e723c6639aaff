use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        (dx * dx + dy * dy).sqrt()
    }

    /// Move up to `step` metres toward `target`. Returns the new point and
    /// the distance actually covered; lands exactly on `target` when it is
    /// within reach.
    pub fn advance_toward(self, target: Point, step: f64) -> (Point, f64) {
        let d = self.distance(target);
        if d <= step {
            return (target, d);
        }
        let f = step / d;
        (
            Point::new(self.x + (target.x - self.x) * f, self.y + (target.y - self.y) * f),
            step,
        )
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.1}, {:.1})", self.x, self.y)
    }
}

/// One of four 90° wedges around the warehouse, centred on the compass axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Sector {
    East,
    North,
    West,
    South,
}

impl Sector {
    pub const ALL: [Sector; 4] = [Sector::East, Sector::North, Sector::West, Sector::South];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Sector> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Sector::East => "EAST",
            Sector::North => "NORTH",
            Sector::West => "WEST",
            Sector::South => "SOUTH",
        }
    }

    /// Lowercase name as used in action tokens (`go_to_sector_east`).
    pub fn token(self) -> &'static str {
        match self {
            Sector::East => "east",
            Sector::North => "north",
            Sector::West => "west",
            Sector::South => "south",
        }
    }

    /// Wedge containing `p` relative to `center`. Boundary rays go to the
    /// first sector in `ALL` order; the centre itself has no sector.
    pub fn of(p: Point, center: Point) -> Option<Sector> {
        let (dx, dy) = (p.x - center.x, p.y - center.y);
        if dx == 0.0 && dy == 0.0 {
            return None;
        }
        let scores = [dx, dy, -dx, -dy];
        let mut best = 0;
        for i in 1..4 {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        Some(Self::ALL[best])
    }

    /// Whether `(dx, dy)` (offset from the centre) lies in this wedge.
    pub fn contains_offset(self, dx: f64, dy: f64) -> bool {
        match self {
            Sector::East => dy.abs() <= dx,
            Sector::North => dx.abs() <= dy,
            Sector::West => dy.abs() <= -dx,
            Sector::South => dx.abs() <= -dy,
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sectors_follow_axes() {
        let o = Point::ORIGIN;
        assert_eq!(Sector::of(Point::new(10.0, 1.0), o), Some(Sector::East));
        assert_eq!(Sector::of(Point::new(1.0, 10.0), o), Some(Sector::North));
        assert_eq!(Sector::of(Point::new(-10.0, 1.0), o), Some(Sector::West));
        assert_eq!(Sector::of(Point::new(1.0, -10.0), o), Some(Sector::South));
        assert_eq!(Sector::of(o, o), None);
        // diagonal goes to the earlier sector
        assert_eq!(Sector::of(Point::new(5.0, 5.0), o), Some(Sector::East));
    }

    #[test]
    fn advance_snaps_on_arrival() {
        let (p, d) = Point::ORIGIN.advance_toward(Point::new(100.0, 0.0), 73.762);
        assert_eq!(p, Point::new(73.762, 0.0));
        assert_eq!(d, 73.762);
        let (q, d2) = p.advance_toward(Point::new(100.0, 0.0), 73.762);
        assert_eq!(q, Point::new(100.0, 0.0));
        assert!((d2 - 26.238).abs() < 1e-9);
    }
}
