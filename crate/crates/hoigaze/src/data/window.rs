//! Windowing, coordinate normalisation, attendance labeling, nearest-object
//! selection, and network input assembly.

use super::{AttendedLabel, Frame, FrameWindow, Side};
use crate::error::{Error, Result};
use crate::nd::NdArray;
use crate::vec3::Vec3;

/// Cut a sequence into windows of `t` frames at the given stride.
/// Sequences shorter than `t` yield no windows.
pub fn split_windows(
    frames: &[Frame],
    sequence_id: &str,
    t: usize,
    stride: usize,
) -> Vec<FrameWindow> {
    assert!(t >= 1 && stride >= 1);
    if frames.len() < t {
        return Vec::new();
    }
    let count = (frames.len() - t) / stride + 1;
    (0..count)
        .map(|w| {
            let start = w * stride;
            FrameWindow {
                frames: frames[start..start + t].to_vec(),
                sequence_id: sequence_id.to_string(),
                start,
            }
        })
        .collect()
}

/// Translate all positions so the first frame's head position becomes the
/// origin. Directions are untouched. Idempotent once applied.
pub fn normalize_window(window: &FrameWindow) -> FrameWindow {
    let origin = window.frames[0].head_pos;
    let shift = |p: Vec3| p - origin;
    let frames = window
        .frames
        .iter()
        .map(|f| Frame {
            head_pos: shift(f.head_pos),
            head_dir: f.head_dir,
            eye_pos: shift(f.eye_pos),
            gaze_dir: f.gaze_dir,
            left_wrist: shift(f.left_wrist),
            right_wrist: shift(f.right_wrist),
            left_hand: f.left_hand.iter().map(|&p| shift(p)).collect(),
            right_hand: f.right_hand.iter().map(|&p| shift(p)).collect(),
            objects: f.objects.iter().map(|&p| shift(p)).collect(),
        })
        .collect();
    FrameWindow {
        frames,
        sequence_id: window.sequence_id.clone(),
        start: window.start,
    }
}

/// Angle between the gaze ray and the eye-to-hand-centre ray, with a hand
/// collapsing onto the eye treated as never attended.
fn hand_angle(frame: &Frame, side: Side) -> f64 {
    let to_hand = frame.hand_centre(side) - frame.eye_pos;
    if to_hand.norm() < 1e-9 {
        return std::f64::consts::PI;
    }
    frame.gaze_dir.angle_to(to_hand)
}

/// Per frame, the attended hand is the one whose eye-to-centre direction is
/// closest in angle to gaze (ties go Left, argmin order). The window label
/// is the per-frame majority, ties going Right.
pub fn label_attended_hand(window: &FrameWindow) -> AttendedLabel {
    let per_frame: Vec<Side> = window
        .frames
        .iter()
        .map(|f| {
            if hand_angle(f, Side::Left) <= hand_angle(f, Side::Right) {
                Side::Left
            } else {
                Side::Right
            }
        })
        .collect();
    let left = per_frame.iter().filter(|&&s| s == Side::Left).count();
    let window_side = if left * 2 > per_frame.len() {
        Side::Left
    } else {
        Side::Right
    };
    AttendedLabel {
        per_frame,
        window: window_side,
    }
}

/// Score each object by its mean distance to the attended hand's joints over
/// all frames; return the indices of the `k` lowest scores, ascending by
/// (score, index).
pub fn nearest_objects(window: &FrameWindow, attended: Side, k: usize) -> Result<Vec<usize>> {
    let j = window.frames[0].n_objects();
    if k > j {
        return Err(Error::Config(format!(
            "requested {k} nearest objects but sequences carry only {j}"
        )));
    }
    let mut scored: Vec<(f64, usize)> = (0..j)
        .map(|oi| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for f in &window.frames {
                let o = f.objects[oi];
                for joint in f.hand(attended) {
                    sum += (*joint - o).norm();
                    count += 1;
                }
            }
            (sum / count as f64, oi)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

fn fill_node(arr: &mut NdArray, node: usize, t: usize, p: Vec3) {
    arr.set3(0, node, t, p.x);
    arr.set3(1, node, t, p.y);
    arr.set3(2, node, t, p.z);
}

/// Head-orientation input: 3 x T of head forward directions.
pub fn head_orientation_input(window: &FrameWindow) -> NdArray {
    let t = window.len();
    let mut h = NdArray::zeros(vec![3, t]);
    for (ti, f) in window.frames.iter().enumerate() {
        h.set2(0, ti, f.head_dir.x);
        h.set2(1, ti, f.head_dir.y);
        h.set2(2, ti, f.head_dir.z);
    }
    h
}

/// Recogniser inputs from a normalised window: H is 3 x T head directions;
/// LH and RH are 3 x (N+3) x T with node order
/// [head, left wrist, right wrist, hand joints 0..N-1].
pub fn build_recognizer_inputs(window: &FrameWindow) -> (NdArray, NdArray, NdArray) {
    let t = window.len();
    let n = window.frames[0].n_joints();
    let h = head_orientation_input(window);
    let mut lh = NdArray::zeros(vec![3, n + 3, t]);
    let mut rh = NdArray::zeros(vec![3, n + 3, t]);
    for (ti, f) in window.frames.iter().enumerate() {
        for arr in [&mut lh, &mut rh] {
            fill_node(arr, 0, ti, f.head_pos);
            fill_node(arr, 1, ti, f.left_wrist);
            fill_node(arr, 2, ti, f.right_wrist);
        }
        for (q, &p) in f.left_hand.iter().enumerate() {
            fill_node(&mut lh, 3 + q, ti, p);
        }
        for (q, &p) in f.right_hand.iter().enumerate() {
            fill_node(&mut rh, 3 + q, ti, p);
        }
    }
    (h, lh, rh)
}

/// Estimator hand-object input: 3 x (N+3+K) x T with node order
/// [head, left wrist, right wrist, attended joints 0..N-1, selected objects].
pub fn build_estimator_input(
    window: &FrameWindow,
    attended: Side,
    object_indices: &[usize],
) -> NdArray {
    let t = window.len();
    let n = window.frames[0].n_joints();
    let k = object_indices.len();
    let mut ah = NdArray::zeros(vec![3, n + 3 + k, t]);
    for (ti, f) in window.frames.iter().enumerate() {
        fill_node(&mut ah, 0, ti, f.head_pos);
        fill_node(&mut ah, 1, ti, f.left_wrist);
        fill_node(&mut ah, 2, ti, f.right_wrist);
        for (q, &p) in f.hand(attended).iter().enumerate() {
            fill_node(&mut ah, 3 + q, ti, p);
        }
        for (q, &oi) in object_indices.iter().enumerate() {
            fill_node(&mut ah, 3 + n + q, ti, f.objects[oi]);
        }
    }
    ah
}

/// Ground-truth gaze directions as 3 x T.
pub fn gaze_targets(window: &FrameWindow) -> NdArray {
    let t = window.len();
    let mut g = NdArray::zeros(vec![3, t]);
    for (ti, f) in window.frames.iter().enumerate() {
        g.set2(0, ti, f.gaze_dir.x);
        g.set2(1, ti, f.gaze_dir.y);
        g.set2(2, ti, f.gaze_dir.z);
    }
    g
}
