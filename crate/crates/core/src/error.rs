use crate::tensor::Shape;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("{op}: incompatible shapes {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward root must hold a single element, got shape {0}")]
    NonScalarRoot(Shape),

    #[error("node {id} is not on this tape (tape has {len} nodes)")]
    UnknownNode { id: usize, len: usize },

    #[error("objective is not finite ({value}) when perturbing coordinate {coordinate}")]
    NonFiniteObjective { coordinate: usize, value: f64 },

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what}: value {value} at index {index} is outside {range}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        value: f64,
        range: &'static str,
    },

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("flow length {requested} exceeds the configured chain length {configured}")]
    FlowLength { requested: usize, configured: usize },

    #[error("empty minibatch")]
    EmptyBatch,

    #[error("{0}")]
    Invalid(String),

    #[error("bad magic number in {what}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("item count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("image {width}x{height} is smaller than the {patch}x{patch} patch")]
    ImageTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },

    #[error("patient `{0}` has no split assignment")]
    UnassignedPatient(String),

    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
