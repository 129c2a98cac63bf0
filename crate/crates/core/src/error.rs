use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate geometry (singular value ratio {condition:.3e})")]
    DegenerateGeometry { condition: f64 },

    #[error("weights must have a positive sum")]
    NonPositiveWeightSum,

    #[error("too few focal inliers ({fraction:.4} of pixels)")]
    InsufficientInliers { fraction: f64 },

    #[error("direction undefined for a (near) zero-norm vector")]
    DegenerateDirection,

    #[error("frame count {0} is not of the form 4k + 1")]
    InvalidFrameCount(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("reference index mismatch: {left} vs {right}")]
    ReferenceMismatch { left: usize, right: usize },

    #[error("at least {required} frames required, got {got}")]
    TooFewFrames { required: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_frame(self, index: usize) -> Self {
        Error::Frame {
            index,
            source: Box::new(self),
        }
    }
}
