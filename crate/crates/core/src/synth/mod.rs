//! Synthetic RGB-D sequences: moving textured shapes over a textured
//! plane, a high-rate color stream, a low-rate depth stream with
//! sensor-style invalid pixels, and the sequence directory format.

mod io;
mod render;
mod spec;
mod sync;

pub use io::{
    generate_sequence, read_sequence, write_sequence, Frame, FrameEntry, FrameKind, Manifest, Sequence, SequenceInfo,
    SequenceReader, CALIBRATION, MANIFEST, SYNTH_FOV_DEG,
};
pub use render::{corrupt, edge_band, texture, timestamp_us, value_noise, CorruptionTrace, SceneRenderer};
pub use spec::{
    Background, DatasetSpec, InvalidModel, Segment, SceneSpec, ShapeKind, ShapeSpec, DEFAULT_INVALID_FRACTION,
};
pub use sync::{loso_split, make_samples, synchronize, Keyframes, Named, SyncIndex};
