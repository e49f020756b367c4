//! Canonical data types, dataset files, windowing, and the geometric
//! labeling rules that drive both networks.

mod io;
mod window;

pub use io::{
    load_attendance_sidecar, load_manifest, load_sequence, write_attendance_sidecar,
    write_manifest, write_sequence,
};
pub use window::{
    build_estimator_input, build_recognizer_inputs, gaze_targets, head_orientation_input,
    label_attended_hand, nearest_objects, normalize_window, split_windows,
};

use crate::vec3::Vec3;

pub const DEFAULT_WINDOW: usize = 15;
pub const FRAME_RATE: u32 = 30;

/// Which hand currently receives visual attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn letter(self) -> char {
        match self {
            Side::Left => 'L',
            Side::Right => 'R',
        }
    }

    /// Channel index in the recogniser's 2 x T output.
    pub fn channel(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandMode {
    Dynamic,
    Static,
}

impl HandMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HandMode::Dynamic => "dynamic",
            HandMode::Static => "static",
        }
    }
}

/// One synchronized capture frame: head pose, gaze, both hand skeletons,
/// and scene-object centres.
#[derive(Debug, Clone)]
pub struct Frame {
    pub head_pos: Vec3,
    pub head_dir: Vec3,
    pub eye_pos: Vec3,
    pub gaze_dir: Vec3,
    pub left_wrist: Vec3,
    pub right_wrist: Vec3,
    pub left_hand: Vec<Vec3>,
    pub right_hand: Vec<Vec3>,
    pub objects: Vec<Vec3>,
}

impl Frame {
    pub fn n_joints(&self) -> usize {
        self.left_hand.len()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn hand(&self, side: Side) -> &[Vec3] {
        match side {
            Side::Left => &self.left_hand,
            Side::Right => &self.right_hand,
        }
    }

    /// Mean of the hand's joint positions.
    pub fn hand_centre(&self, side: Side) -> Vec3 {
        let joints = self.hand(side);
        let mut c = Vec3::default();
        for j in joints {
            c += *j;
        }
        c.scale(1.0 / joints.len() as f64)
    }
}

/// T consecutive frames forming one model input, keyed by source
/// sequence and start offset.
#[derive(Debug, Clone)]
pub struct FrameWindow {
    pub frames: Vec<Frame>,
    pub sequence_id: String,
    pub start: usize,
}

impl FrameWindow {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-frame and majority-vote window attendance labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttendedLabel {
    pub per_frame: Vec<Side>,
    pub window: Side,
}

/// Shared description of a set of sequence files.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub paths: Vec<std::path::PathBuf>,
    pub n_joints: usize,
    pub n_objects: usize,
    pub frame_rate: u32,
    pub hand_mode: HandMode,
}
