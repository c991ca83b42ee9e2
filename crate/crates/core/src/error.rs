use thiserror::Error;

use crate::FrameId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("frame {frame_id}: rotation is not orthonormal (error {error:e})")]
    NonOrthonormalRotation { frame_id: FrameId, error: f64 },
    #[error("frame {frame_id}: rotation determinant is {det}, expected 1")]
    NotARotation { frame_id: FrameId, det: f64 },
    #[error("frame {frame_id}: translation is not finite")]
    NonFiniteTranslation { frame_id: FrameId },
    #[error("frame {frame_id}: frame ids must be unique and increasing")]
    UnorderedFrames { frame_id: FrameId },
    #[error("point {point_id}: position is not finite")]
    NonFinitePoint { point_id: u64 },
    #[error("point {point_id}: track length {track_length} is below 2")]
    TrackTooShort { point_id: u64, track_length: u32 },
    #[error("point {point_id}: visibility row has {visible} frames but track length is {track_length}")]
    TrackLengthMismatch {
        point_id: u64,
        track_length: u32,
        visible: u32,
    },
    #[error("visibility matrix is {rows}x{cols}, expected {points}x{frames}")]
    VisibilityShape {
        rows: usize,
        cols: usize,
        points: usize,
        frames: usize,
    },
    #[error("unknown frame id {0}")]
    UnknownFrame(FrameId),
    #[error("degenerate projection: point depth {0:e} is too close to zero")]
    DegenerateProjection(f64),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("grid shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("soft mask has zero total weight")]
    EmptyMask,
    #[error("depth warps have no overlap in either direction")]
    EmptyOverlap,
    #[error("no valid positions to evaluate")]
    NoValidPositions,
    #[error("no frame pair satisfies the gap range [{min}, {max}]")]
    NoAdmissiblePair { min: usize, max: usize },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

impl Error {
    /// Errors after which a training pair should be dropped rather than
    /// aborting the run.
    pub fn is_pair_skip(&self) -> bool {
        matches!(self, Error::EmptyMask | Error::EmptyOverlap)
    }
}

pub type Result<T> = core::result::Result<T, Error>;
