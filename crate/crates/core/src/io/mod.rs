//! File formats: scene documents, observation streams, point lists, and the
//! synthetic observation generator.

pub mod densify;
pub mod obs;
pub mod points;
pub mod scene_file;
pub mod synth;

pub use densify::densify;
pub use obs::{
    decode_frames, encode_frames, read_frames, write_atomic, write_frames, FrameReader, FrameWriter, ObsFormat,
};
pub use points::{parse_points, read_points};
pub use scene_file::{load_scene, parse_scene, LoadedScene, Occlusion, SceneFile, SynthConfig};
pub use synth::{frame_controllers, synth_generate, trajectory_frames};
