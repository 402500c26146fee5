//! Road library: one compact network per conflict type, built from analytic
//! corridors (straight or constant-radius arc) that export P = 20 point lane
//! segments for the scene map.

use crate::scene::MapLane;
use crate::sim::ConflictType;

pub const LANE_WIDTH: f64 = 3.5;
/// Points per exported lane segment.
pub const POINTS_PER_SEGMENT: usize = 20;
/// Exported segments keep adjacent points under this spacing.
const MAX_POINT_SPACING: f64 = 10.0;

/// Analytic centerline geometry.
#[derive(Debug, Clone, Copy)]
pub enum CorridorGeometry {
    Straight { start: [f64; 2], heading: f64 },
    /// Counter-clockwise arc starting at angle `phi0` from `center`.
    Arc { center: [f64; 2], radius: f64, phi0: f64 },
}

/// One drivable lane of the simulator, with lane-change neighbors and an
/// optional downstream corridor it merges into at `usable_len`.
#[derive(Debug, Clone)]
pub struct Corridor {
    pub id: u32,
    pub geometry: CorridorGeometry,
    pub usable_len: f64,
    pub left: Option<u32>,
    pub right: Option<u32>,
    pub merges_into: Option<u32>,
}

impl Corridor {
    /// Centerline pose at arc length s. Beyond `usable_len` the corridor
    /// continues straight along its end heading.
    pub fn pose_at(&self, s: f64) -> ([f64; 2], f64) {
        match self.geometry {
            CorridorGeometry::Straight { start, heading } => {
                let (sin_h, cos_h) = heading.sin_cos();
                ([start[0] + cos_h * s, start[1] + sin_h * s], heading)
            }
            CorridorGeometry::Arc { center, radius, phi0 } => {
                let s_arc = s.min(self.usable_len);
                let phi = phi0 + s_arc / radius;
                let p = [center[0] + radius * phi.cos(), center[1] + radius * phi.sin()];
                let heading = phi + std::f64::consts::FRAC_PI_2;
                if s <= self.usable_len {
                    (p, heading)
                } else {
                    let (sin_h, cos_h) = heading.sin_cos();
                    let d = s - self.usable_len;
                    ([p[0] + cos_h * d, p[1] + sin_h * d], heading)
                }
            }
        }
    }

    /// World position for a centerline station and a leftward offset.
    pub fn position(&self, s: f64, lat: f64) -> [f64; 2] {
        let (p, heading) = self.pose_at(s);
        let (sin_h, cos_h) = heading.sin_cos();
        [p[0] - sin_h * lat, p[1] + cos_h * lat]
    }

    /// Maps a station on this corridor to the equivalent station on a
    /// parallel corridor (equal x for straights, equal angle for arcs).
    pub fn transfer_s(&self, s: f64, to: &Corridor) -> f64 {
        match (self.geometry, to.geometry) {
            (CorridorGeometry::Straight { .. }, CorridorGeometry::Straight { .. }) => s,
            (CorridorGeometry::Arc { radius: r_from, .. }, CorridorGeometry::Arc { radius: r_to, .. }) => {
                s * r_to / r_from
            }
            _ => s,
        }
    }
}

/// The drivable corridors plus exportable lane segments of one scenario road.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub kind: ConflictType,
    pub corridors: Vec<Corridor>,
    pub lane_width: f64,
    pub speed_limit: f64,
}

impl RoadNetwork {
    pub fn corridor(&self, id: u32) -> &Corridor {
        &self.corridors[id as usize]
    }

    /// Lane segments with exactly [`POINTS_PER_SEGMENT`] points each. Segment
    /// count per corridor is the smallest that keeps point spacing legal.
    pub fn map_lanes(&self) -> Vec<MapLane> {
        let mut lanes = Vec::new();
        let mut next_id = 0u32;
        for corridor in &self.corridors {
            let len = corridor.usable_len;
            let max_seg = MAX_POINT_SPACING * (POINTS_PER_SEGMENT - 1) as f64;
            let n_seg = (len / max_seg).ceil().max(1.0) as usize;
            let seg_len = len / n_seg as f64;
            for seg in 0..n_seg {
                let s0 = seg as f64 * seg_len;
                let centerline = (0..POINTS_PER_SEGMENT)
                    .map(|k| {
                        let s = s0 + seg_len * k as f64 / (POINTS_PER_SEGMENT - 1) as f64;
                        let (p, _) = corridor.pose_at(s);
                        [crate::scene::round_sig(p[0]), crate::scene::round_sig(p[1])]
                    })
                    .collect();
                lanes.push(MapLane { id: next_id, centerline });
                next_id += 1;
            }
        }
        lanes
    }

    /// Segments whose bounding box (padded) intersects the given box.
    pub fn map_excerpt(&self, min: [f64; 2], max: [f64; 2]) -> Vec<MapLane> {
        let pad = 25.0;
        self.map_lanes()
            .into_iter()
            .filter(|lane| {
                lane.centerline.iter().any(|p| {
                    p[0] >= min[0] - pad && p[0] <= max[0] + pad && p[1] >= min[1] - pad && p[1] <= max[1] + pad
                })
            })
            .collect()
    }
}

/// One road per conflict type.
#[derive(Debug, Clone)]
pub struct RoadSet {
    pub cut_in: RoadNetwork,
    pub merging: RoadNetwork,
    pub rear_end: RoadNetwork,
}

impl RoadSet {
    pub fn standard() -> Self {
        Self { cut_in: cut_in_road(), merging: merging_road(), rear_end: rear_end_road() }
    }

    pub fn for_conflict(&self, kind: ConflictType) -> &RoadNetwork {
        match kind {
            ConflictType::CutIn => &self.cut_in,
            ConflictType::Merging => &self.merging,
            ConflictType::RearEnd => &self.rear_end,
        }
    }
}

/// Straight 3-lane highway.
fn cut_in_road() -> RoadNetwork {
    let lane = |id: u32, y: f64, left: Option<u32>, right: Option<u32>| Corridor {
        id,
        geometry: CorridorGeometry::Straight { start: [0.0, y], heading: 0.0 },
        usable_len: 600.0,
        left,
        right,
        merges_into: None,
    };
    RoadNetwork {
        kind: ConflictType::CutIn,
        corridors: vec![
            lane(0, 0.0, Some(1), None),
            lane(1, LANE_WIDTH, Some(2), Some(0)),
            lane(2, 2.0 * LANE_WIDTH, None, Some(1)),
        ],
        lane_width: LANE_WIDTH,
        speed_limit: 25.0,
    }
}

/// Two main lanes plus an acceleration lane that merges into lane 0.
fn merging_road() -> RoadNetwork {
    let straight = |id: u32, y: f64, len: f64, left, right, merges_into| Corridor {
        id,
        geometry: CorridorGeometry::Straight { start: [0.0, y], heading: 0.0 },
        usable_len: len,
        left,
        right,
        merges_into,
    };
    RoadNetwork {
        kind: ConflictType::Merging,
        corridors: vec![
            straight(0, 0.0, 600.0, Some(1), Some(2), None),
            straight(1, LANE_WIDTH, 600.0, None, Some(0), None),
            straight(2, -LANE_WIDTH, 320.0, Some(0), None, Some(0)),
        ],
        lane_width: LANE_WIDTH,
        speed_limit: 23.0,
    }
}

/// Curved 2-lane road, centerline radius 200 m, sweeping 120 degrees.
fn rear_end_road() -> RoadNetwork {
    let radius_outer = 200.0;
    let radius_inner = 200.0 - LANE_WIDTH;
    let sweep = 120f64.to_radians();
    let arc = |id: u32, radius: f64, left, right| Corridor {
        id,
        geometry: CorridorGeometry::Arc {
            center: [0.0, 200.0],
            radius,
            phi0: -std::f64::consts::FRAC_PI_2,
        },
        usable_len: radius * sweep,
        left,
        right,
        merges_into: None,
    };
    RoadNetwork {
        kind: ConflictType::RearEnd,
        corridors: vec![arc(0, radius_outer, Some(1), None), arc(1, radius_inner, None, Some(0))],
        lane_width: LANE_WIDTH,
        speed_limit: 22.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_pose_and_offset() {
        let road = cut_in_road();
        let c = road.corridor(1);
        let (p, h) = c.pose_at(10.0);
        assert_eq!(p, [10.0, LANE_WIDTH]);
        assert_eq!(h, 0.0);
        let left = c.position(10.0, 1.0);
        assert!((left[1] - (LANE_WIDTH + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn arc_pose_starts_at_origin_heading_east() {
        let road = rear_end_road();
        let c = road.corridor(0);
        let (p, h) = c.pose_at(0.0);
        assert!(p[0].abs() < 1e-9 && p[1].abs() < 1e-9);
        assert!(h.abs() < 1e-12);
        // Quarter of the radius along: heading has rotated by s/r.
        let (_, h2) = c.pose_at(50.0);
        assert!((h2 - 0.25).abs() < 1e-12);
        // Leftward offset moves toward the center.
        let p_left = c.position(0.0, 1.0);
        assert!((p_left[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn arc_transfer_preserves_angle() {
        let road = rear_end_road();
        let outer = road.corridor(0);
        let inner = road.corridor(1);
        let s_outer = 100.0;
        let s_inner = outer.transfer_s(s_outer, inner);
        let (_, h_o) = outer.pose_at(s_outer);
        let (_, h_i) = inner.pose_at(s_inner);
        assert!((h_o - h_i).abs() < 1e-12);
    }

    #[test]
    fn exported_segments_have_legal_shape() {
        for road in [cut_in_road(), merging_road(), rear_end_road()] {
            let lanes = road.map_lanes();
            assert!(!lanes.is_empty());
            let mut ids: Vec<u32> = lanes.iter().map(|l| l.id).collect();
            ids.dedup();
            assert_eq!(ids.len(), lanes.len());
            for lane in &lanes {
                assert_eq!(lane.centerline.len(), POINTS_PER_SEGMENT);
                for w in lane.centerline.windows(2) {
                    let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                    assert!(d < MAX_POINT_SPACING, "spacing {d}");
                    assert!(d > 0.0);
                }
            }
        }
    }
}
