//! Road geometry: lane centerlines, spawn regions, and the two shipped map
//! presets. Lanes in the presets are straight, but the polyline representation
//! leaves room for curved maps.

use serde::{Deserialize, Serialize};

use crate::geometry::{Obb, Vec2};
use crate::sim::{SimError, VEHICLE_LENGTH, VEHICLE_WIDTH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    FourWayIntersection,
    StraightHighway,
}

/// A driving lane described by its centerline polyline.
#[derive(Clone, Debug)]
pub struct Lane {
    pub centerline: Vec<Vec2>,
}

impl Lane {
    pub fn straight(start: Vec2, end: Vec2) -> Self {
        Lane {
            centerline: vec![start, end],
        }
    }

    pub fn start(&self) -> Vec2 {
        self.centerline[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.centerline.last().unwrap()
    }

    /// Unit direction of travel. Presets are straight lanes, so the overall
    /// start-to-end direction is exact.
    pub fn dir(&self) -> Vec2 {
        let d = self.end() - self.start();
        d * (1.0 / d.norm())
    }

    pub fn heading(&self) -> f64 {
        let d = self.dir();
        d.y.atan2(d.x)
    }

    /// Distance along the lane direction from the lane start.
    pub fn longitudinal(&self, p: Vec2) -> f64 {
        (p - self.start()).dot(self.dir())
    }

    /// Signed lateral offset from the centerline (positive to the left of the
    /// direction of travel).
    pub fn lateral(&self, p: Vec2) -> f64 {
        (p - self.start()).dot(self.dir().perp())
    }
}

/// A segment of road along which a vehicle may be spawned, together with the
/// spawn heading and speed range.
#[derive(Clone, Debug)]
pub struct SpawnRegion {
    pub anchor: Vec2,
    pub dir: Vec2,
    pub length: f64,
    pub heading: f64,
    pub speed_min: f64,
    pub speed_max: f64,
}

impl SpawnRegion {
    fn along(anchor: Vec2, dir: Vec2, length: f64, heading: f64, speed: (f64, f64)) -> Self {
        SpawnRegion {
            anchor,
            dir,
            length,
            heading,
            speed_min: speed.0,
            speed_max: speed.1,
        }
    }

    pub fn point_at(&self, t: f64) -> Vec2 {
        self.anchor + self.dir * t
    }

    /// The region segment inflated by a vehicle footprint: every vehicle
    /// spawned in this region lies inside this rectangle.
    fn swept_footprint(&self) -> Obb {
        Obb {
            center: self.anchor + self.dir * (self.length / 2.0),
            axis: self.dir,
            half_len: self.length / 2.0 + VEHICLE_LENGTH / 2.0,
            half_wid: VEHICLE_WIDTH / 2.0,
        }
    }
}

/// Static description of a scenario map.
#[derive(Clone, Debug)]
pub struct MapConfig {
    pub kind: MapKind,
    pub lanes: Vec<Lane>,
    pub lane_width: f64,
    pub v_max: f64,
    /// Lane the ego starts in.
    pub ego_lane: usize,
    /// Same-direction lanes the ego may change into.
    pub ego_adjacent: Vec<usize>,
    pub ego_spawn: SpawnRegion,
    pub npc_spawns: Vec<SpawnRegion>,
}

impl MapConfig {
    pub fn preset(kind: MapKind) -> MapConfig {
        match kind {
            MapKind::FourWayIntersection => four_way_intersection(),
            MapKind::StraightHighway => straight_highway(),
        }
    }

    /// Structural sanity checks: valid indices, non-self-intersecting lane
    /// polylines, and spawn regions far enough apart that vehicles placed in
    /// different regions can never overlap.
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidMap(msg));
        if self.lanes.is_empty() {
            return fail("map has no lanes".into());
        }
        if !(self.v_max > 0.0) {
            return fail(format!("v_max must be positive, got {}", self.v_max));
        }
        if !(self.lane_width > 0.0) {
            return fail(format!(
                "lane_width must be positive, got {}",
                self.lane_width
            ));
        }
        if self.ego_lane >= self.lanes.len() {
            return fail(format!("ego_lane {} out of range", self.ego_lane));
        }
        for &a in &self.ego_adjacent {
            if a >= self.lanes.len() || a == self.ego_lane {
                return fail(format!("adjacent lane {a} invalid"));
            }
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.centerline.len() < 2 {
                return fail(format!("lane {i} needs at least two points"));
            }
            if polyline_self_intersects(&lane.centerline) {
                return fail(format!("lane {i} centerline self-intersects"));
            }
        }
        if self.npc_spawns.is_empty() {
            return fail("map has no NPC spawn regions".into());
        }
        let mut regions: Vec<&SpawnRegion> = vec![&self.ego_spawn];
        regions.extend(self.npc_spawns.iter());
        for i in 0..regions.len() {
            for j in (i + 1)..regions.len() {
                let a = regions[i].swept_footprint();
                let b = regions[j].swept_footprint();
                if a.overlaps(&b) {
                    return fail(format!(
                        "spawn regions {i} and {j} are close enough for spawned vehicles to overlap"
                    ));
                }
            }
        }
        Ok(())
    }
}

fn polyline_self_intersects(pts: &[Vec2]) -> bool {
    // Proper crossings between non-adjacent segments.
    let segs: Vec<(Vec2, Vec2)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    for i in 0..segs.len() {
        for j in (i + 2)..segs.len() {
            if segments_cross(segs[i], segs[j]) {
                return true;
            }
        }
    }
    false
}

fn segments_cross(a: (Vec2, Vec2), b: (Vec2, Vec2)) -> bool {
    let cross = |o: Vec2, p: Vec2, q: Vec2| (p - o).x * (q - o).y - (p - o).y * (q - o).x;
    let d1 = cross(b.0, b.1, a.0);
    let d2 = cross(b.0, b.1, a.1);
    let d3 = cross(a.0, a.1, b.0);
    let d4 = cross(a.0, a.1, b.1);
    ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0))
}

/// Two perpendicular roads crossing at the origin, one lane per direction,
/// right-hand traffic. The ego travels east through the intersection; NPC
/// spawn regions sit on every approach.
fn four_way_intersection() -> MapConfig {
    use std::f64::consts::FRAC_PI_2;
    let w = 3.5;
    let h = w / 2.0;
    let east = Vec2::new(1.0, 0.0);
    let west = Vec2::new(-1.0, 0.0);
    let north = Vec2::new(0.0, 1.0);
    let south = Vec2::new(0.0, -1.0);
    MapConfig {
        kind: MapKind::FourWayIntersection,
        lanes: vec![
            Lane::straight(Vec2::new(-60.0, -h), Vec2::new(60.0, -h)),
            Lane::straight(Vec2::new(60.0, h), Vec2::new(-60.0, h)),
            Lane::straight(Vec2::new(-h, 60.0), Vec2::new(-h, -60.0)),
            Lane::straight(Vec2::new(h, -60.0), Vec2::new(h, 60.0)),
        ],
        lane_width: w,
        v_max: 15.0,
        ego_lane: 0,
        ego_adjacent: vec![],
        ego_spawn: SpawnRegion::along(Vec2::new(-45.0, -h), east, 10.0, 0.0, (8.0, 12.0)),
        npc_spawns: vec![
            SpawnRegion::along(Vec2::new(-h, 35.0), south, 20.0, -FRAC_PI_2, (0.0, 15.0)),
            SpawnRegion::along(Vec2::new(h, -35.0), north, 20.0, FRAC_PI_2, (0.0, 15.0)),
            SpawnRegion::along(Vec2::new(-25.0, -h), east, 15.0, 0.0, (0.0, 15.0)),
            SpawnRegion::along(
                Vec2::new(30.0, h),
                west,
                20.0,
                std::f64::consts::PI,
                (0.0, 15.0),
            ),
            SpawnRegion::along(Vec2::new(5.0, -h), east, 15.0, 0.0, (0.0, 15.0)),
        ],
    }
}

/// Three parallel eastbound lanes. The ego starts in the middle lane and may
/// change into either neighbor; NPCs spawn around it in all three lanes.
fn straight_highway() -> MapConfig {
    let w = 3.5;
    let east = Vec2::new(1.0, 0.0);
    let lane_y = [0.0, w, 2.0 * w];
    MapConfig {
        kind: MapKind::StraightHighway,
        lanes: lane_y
            .iter()
            .map(|&y| Lane::straight(Vec2::new(-60.0, y), Vec2::new(150.0, y)))
            .collect(),
        lane_width: w,
        v_max: 15.0,
        ego_lane: 1,
        ego_adjacent: vec![0, 2],
        ego_spawn: SpawnRegion::along(Vec2::new(-50.0, w), east, 10.0, 0.0, (8.0, 12.0)),
        npc_spawns: vec![
            SpawnRegion::along(Vec2::new(-30.0, 0.0), east, 20.0, 0.0, (0.0, 15.0)),
            SpawnRegion::along(Vec2::new(-20.0, w), east, 20.0, 0.0, (0.0, 15.0)),
            SpawnRegion::along(Vec2::new(-30.0, 2.0 * w), east, 20.0, 0.0, (0.0, 15.0)),
            SpawnRegion::along(Vec2::new(10.0, 0.0), east, 20.0, 0.0, (0.0, 15.0)),
            SpawnRegion::along(Vec2::new(10.0, w), east, 20.0, 0.0, (0.0, 15.0)),
            SpawnRegion::along(Vec2::new(10.0, 2.0 * w), east, 20.0, 0.0, (0.0, 15.0)),
        ],
    }
}
