use serde::Serialize;

use super::{FaceCrop, ProviderError};
use crate::features::HeadPose;

/// Estimates `[yaw, pitch, roll]` in degrees for one face.
pub trait PoseModel: Send + Sync {
    fn infer(&self, crop: &FaceCrop<'_>) -> Result<[f64; 3], ProviderError>;
}

impl<F> PoseModel for F
where
    F: Fn(&FaceCrop<'_>) -> Result<[f64; 3], ProviderError> + Send + Sync,
{
    fn infer(&self, crop: &FaceCrop<'_>) -> Result<[f64; 3], ProviderError> {
        self(crop)
    }
}

/// Raised when a model estimate had to be clamped into `[-180, 180]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseWarning {
    pub image_id: String,
    pub face_id: String,
    pub raw: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPose {
    pub pose: HeadPose,
    pub warning: Option<PoseWarning>,
}

/// Resolves a face's pose: a pose carried by the sidecar passes through
/// unchanged; otherwise the configured model is asked.
#[derive(Default)]
pub struct PoseResolver {
    model: Option<Box<dyn PoseModel>>,
}

impl PoseResolver {
    pub fn sidecar_only() -> Self {
        Self { model: None }
    }

    pub fn with_model(model: Box<dyn PoseModel>) -> Self {
        Self { model: Some(model) }
    }

    pub fn has_model(&self) -> bool {
        self.model.is_some()
    }

    pub fn resolve(&self, crop: &FaceCrop<'_>) -> Result<ResolvedPose, ProviderError> {
        if let Some(pose) = crop.face.pose {
            return Ok(ResolvedPose {
                pose,
                warning: None,
            });
        }
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| ProviderError::MissingPose(crop.face.face_id.clone()))?;
        let raw = model.infer(crop)?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::Model(format!(
                "non-finite pose {raw:?} for face {}",
                crop.face.face_id
            )));
        }
        let clamped = raw.map(|v| v.clamp(-180.0, 180.0));
        let warning = (clamped != raw).then(|| PoseWarning {
            image_id: crop.image_id.to_string(),
            face_id: crop.face.face_id.clone(),
            raw,
        });
        let pose = HeadPose::new(clamped[0], clamped[1], clamped[2])
            .map_err(|e| ProviderError::Model(e.to_string()))?;
        Ok(ResolvedPose { pose, warning })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FaceObservation, Point};
    use crate::imaging::RectRegion;

    fn face(pose: Option<HeadPose>) -> FaceObservation {
        FaceObservation {
            face_id: "f".into(),
            bbox: RectRegion::new(0, 0, 4, 4),
            eye_left: Some(Point::new(1.0, 1.0)),
            eye_right: Some(Point::new(2.0, 1.0)),
            pose,
            detected: true,
            confidence: None,
        }
    }

    #[test]
    fn sidecar_pose_passes_through() {
        let p = HeadPose::new(10.0, -5.0, 0.0).unwrap();
        let f = face(Some(p));
        let crop = FaceCrop { image_id: "i", face: &f, image: None };
        let r = PoseResolver::sidecar_only().resolve(&crop).unwrap();
        assert_eq!(r.pose, p);
        assert!(r.warning.is_none());
    }

    #[test]
    fn missing_pose_without_model() {
        let f = face(None);
        let crop = FaceCrop { image_id: "i", face: &f, image: None };
        assert!(matches!(
            PoseResolver::sidecar_only().resolve(&crop),
            Err(ProviderError::MissingPose(_))
        ));
    }

    #[test]
    fn model_output_is_clamped_with_warning() {
        let model = |_: &FaceCrop<'_>| -> Result<[f64; 3], ProviderError> { Ok([200.0, -3.0, -190.0]) };
        let resolver = PoseResolver::with_model(Box::new(model));
        let f = face(None);
        let crop = FaceCrop { image_id: "i", face: &f, image: None };
        let r = resolver.resolve(&crop).unwrap();
        assert_eq!(r.pose, HeadPose::new(180.0, -3.0, -180.0).unwrap());
        assert_eq!(r.warning.unwrap().raw, [200.0, -3.0, -190.0]);
    }
}
