//! Turning detections reported by a client into volumetric observations.

use std::collections::BTreeSet;

use mos3d_core::model::{Label, ModelConfig, ObjectId, VolumetricObservation};
use mos3d_core::occupancy::OccupancyOctree;
use mos3d_core::spatial::{frustum_cells, occluded, CameraPose, GridCell, Vec3};

use crate::error::ServiceError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DetectionKind {
    /// Axis-aligned box in meters: center and full side lengths.
    Box3d { center: Vec3, extents: Vec3 },
    LabelOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionMessage {
    pub object_id: ObjectId,
    pub kind: DetectionKind,
    /// Camera pose at detection time; the observation pose is used when absent.
    pub camera_pose: Option<CameraPose>,
}

impl DetectionMessage {
    pub fn boxed(object_id: ObjectId, center: Vec3, extents: Vec3) -> Self {
        Self { object_id, kind: DetectionKind::Box3d { center, extents }, camera_pose: None }
    }

    pub fn label_only(object_id: ObjectId) -> Self {
        Self { object_id, kind: DetectionKind::LabelOnly, camera_pose: None }
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if let DetectionKind::Box3d { center, extents } = self.kind {
            if !extents.iter().all(|e| *e > 0.0 && e.is_finite()) || !center.iter().all(|v| v.is_finite()) {
                return Err(ServiceError::BadRequest(format!(
                    "detection of object {} needs a finite box with positive extents",
                    self.object_id
                )));
            }
        }
        Ok(())
    }
}

/// Ground cells whose extent intersects the box.
pub fn box_cells(occ: &OccupancyOctree, center: &Vec3, extents: &Vec3) -> Vec<GridCell> {
    let region = occ.region();
    let lo = region.to_grid(&(center - extents / 2.0));
    let hi = region.to_grid(&(center + extents / 2.0));
    let m = region.size as i32;
    // half-open cells [i, i+1) intersect the open box (lo, hi) when i < hi and i + 1 > lo
    let first = |v: f64| (((v + 1e-9).floor() as i64).max(0)) as i32;
    let last = |v: f64| (((v - 1e-9).ceil() as i64 - 1).min(m as i64 - 1)) as i32;
    let mut out = Vec::new();
    for x in first(lo.x)..=last(hi.x) {
        for y in first(lo.y)..=last(hi.y) {
            for z in first(lo.z)..=last(hi.z) {
                out.push(GridCell::new(x, y, z));
            }
        }
    }
    out
}

/// Visibility labels of every frustum cell: unknown when occluded or out of range, free otherwise.
pub fn base_labels(occ: &OccupancyOctree, model: &ModelConfig, pose: &CameraPose) -> Vec<(GridCell, Label)> {
    let region = occ.region();
    let range = model.detector.range_for(&model.frustum);
    frustum_cells(region, &model.frustum, pose)
        .into_iter()
        .map(|c| {
            let center = region.center(c);
            let hidden = (center - pose.position).norm() > range || (model.occlusion && occluded(occ, &pose.position, c));
            (c, if hidden { Label::Unknown } else { Label::Free })
        })
        .collect()
}

/// Observations built from one batch of detections.
pub struct BuiltObservation {
    /// All detections overlaid on the visibility labels.
    pub combined: VolumetricObservation,
    /// Per target: the visibility labels with only that target's detections overlaid.
    pub per_target: Vec<(ObjectId, VolumetricObservation)>,
}

/// Box detections label the visible frustum voxels the box touches; label-only detections label
/// every visible frustum voxel. Everything else visible is free and everything hidden is unknown.
pub fn build_observation(
    occ: &OccupancyOctree,
    model: &ModelConfig,
    pose: &CameraPose,
    detections: &[DetectionMessage],
    targets: &[ObjectId],
) -> Result<BuiltObservation, ServiceError> {
    if !occ.region().contains_point(&pose.position) {
        return Err(ServiceError::BadRequest("robot pose lies outside the search region".into()));
    }
    for d in detections {
        d.validate()?;
        if !targets.contains(&d.object_id) {
            return Err(ServiceError::BadRequest(format!("unknown object id {}", d.object_id)));
        }
    }
    let base = base_labels(occ, model, pose);
    let overlay = |ids: &[ObjectId]| -> Vec<(GridCell, Label)> {
        let mut labels = base.clone();
        for d in detections.iter().filter(|d| ids.contains(&d.object_id)) {
            match d.kind {
                DetectionKind::Box3d { center, extents } => {
                    let inside: BTreeSet<GridCell> = box_cells(occ, &center, &extents).into_iter().collect();
                    let hit: Vec<(GridCell, Label)> = base
                        .iter()
                        .filter(|(c, l)| *l == Label::Free && inside.contains(c))
                        .map(|(c, _)| (*c, Label::Object(d.object_id)))
                        .collect();
                    labels.extend(hit);
                }
                DetectionKind::LabelOnly => {
                    let own;
                    let vis: &[(GridCell, Label)] = match d.camera_pose {
                        Some(p) if p != *pose => {
                            own = base_labels(occ, model, &p);
                            &own
                        }
                        _ => &base,
                    };
                    labels.extend(vis.iter().filter(|(_, l)| *l == Label::Free).map(|(c, _)| (*c, Label::Object(d.object_id))));
                }
            }
        }
        labels
    };
    let combined = VolumetricObservation::new(*pose, overlay(targets));
    let per_target = targets.iter().map(|&t| (t, VolumetricObservation::new(*pose, overlay(&[t])))).collect();
    Ok(BuiltObservation { combined, per_target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mos3d_core::spatial::RegionSpec;

    fn occ() -> OccupancyOctree {
        OccupancyOctree::empty(RegionSpec::new(Vec3::zeros(), 0.1, 16).unwrap())
    }

    #[test]
    fn box_touches_expected_cells() {
        let o = occ();
        let cells = box_cells(&o, &Vec3::new(0.55, 0.55, 0.55), &Vec3::new(0.1, 0.1, 0.1));
        assert_eq!(cells, vec![GridCell::new(5, 5, 5)]);
        let cells = box_cells(&o, &Vec3::new(0.5, 0.5, 0.55), &Vec3::new(0.1, 0.1, 0.1));
        assert_eq!(cells.len(), 4);
        assert!(box_cells(&o, &Vec3::new(-1.0, 0.5, 0.5), &Vec3::new(0.1, 0.1, 0.1)).is_empty());
    }

    #[test]
    fn label_only_labels_all_visible() {
        let o = occ();
        let model = ModelConfig::default();
        let pose = CameraPose::look_at(Vec3::new(0.05, 0.85, 0.85), &Vec3::new(1.0, 0.85, 0.85));
        let built = build_observation(&o, &model, &pose, &[DetectionMessage::label_only(2)], &[1, 2]).unwrap();
        let frustum = frustum_cells(o.region(), &model.frustum, &pose);
        let (_, own) = &built.per_target[1];
        assert_eq!(own.voxels.len(), frustum.len());
        assert!(own.voxels.iter().all(|(_, l)| *l == Label::Object(2)));
        let (_, other) = &built.per_target[0];
        assert!(other.voxels.iter().all(|(_, l)| *l == Label::Free));
    }

    #[test]
    fn rejects_unknown_ids_and_outside_pose() {
        let o = occ();
        let model = ModelConfig::default();
        let pose = CameraPose::look_at(Vec3::new(0.05, 0.85, 0.85), &Vec3::new(1.0, 0.85, 0.85));
        assert!(build_observation(&o, &model, &pose, &[DetectionMessage::label_only(9)], &[1]).is_err());
        let away = CameraPose::look_at(Vec3::new(-5.0, 0.0, 0.0), &Vec3::zeros());
        assert!(build_observation(&o, &model, &away, &[], &[1]).is_err());
        let bad = DetectionMessage::boxed(1, Vec3::zeros(), Vec3::new(0.0, 1.0, 1.0));
        assert!(build_observation(&o, &model, &pose, &[bad], &[1]).is_err());
    }
}
