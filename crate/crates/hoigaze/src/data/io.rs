//! Sequence, manifest, and attendance-sidecar file formats.
//!
//! Sequence files are UTF-8 text. Line 1:
//! `hoigaze-seq v1 N=<int> J=<int> fps=30 hand_mode=<dynamic|static>`
//! followed by one line per frame of whitespace-separated decimals in the
//! order head_pos(3) head_dir(3) eye_pos(3) gaze_dir(3) left_wrist(3)
//! right_wrist(3) left_hand(3N) right_hand(3N) objects(3J). Values are
//! written at float32 precision.

use super::{Frame, HandMode, Side};
use crate::error::{Error, Result};
use crate::vec3::Vec3;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

const MAGIC: &str = "hoigaze-seq v1";
const UNIT_TOL: f64 = 1e-2;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(path.display().to_string(), e)
}

/// Parse one sequence file. Direction fields within `UNIT_TOL` of unit
/// length are renormalised; anything further off is rejected.
pub fn load_sequence(path: &Path) -> Result<Vec<Frame>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))?;
    let (n, j, _mode) = parse_header(header, path)?;

    let per_line = 18 + 3 * n + 3 * j;
    let mut frames = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut vals = Vec::with_capacity(per_line);
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::Data(format!(
                    "{}:{}: unparseable value {tok:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            vals.push(v);
        }
        if vals.len() != per_line {
            return Err(Error::Data(format!(
                "{}:{}: expected {per_line} columns for N={n} J={j}, got {}",
                path.display(),
                lineno + 1,
                vals.len()
            )));
        }
        let mut it = vals.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2]));
        let head_pos = it.next().unwrap();
        let head_dir = renorm(it.next().unwrap(), "head_dir", path, lineno + 1)?;
        let eye_pos = it.next().unwrap();
        let gaze_dir = renorm(it.next().unwrap(), "gaze_dir", path, lineno + 1)?;
        let left_wrist = it.next().unwrap();
        let right_wrist = it.next().unwrap();
        let left_hand: Vec<Vec3> = it.by_ref().take(n).collect();
        let right_hand: Vec<Vec3> = it.by_ref().take(n).collect();
        let objects: Vec<Vec3> = it.take(j).collect();
        frames.push(Frame {
            head_pos,
            head_dir,
            eye_pos,
            gaze_dir,
            left_wrist,
            right_wrist,
            left_hand,
            right_hand,
            objects,
        });
    }
    if frames.is_empty() {
        return Err(Error::Data(format!("{}: no frames", path.display())));
    }
    Ok(frames)
}

fn renorm(v: Vec3, field: &str, path: &Path, lineno: usize) -> Result<Vec3> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Data(format!(
            "{}:{}: {field} norm {n} too far from 1",
            path.display(),
            lineno
        )));
    }
    Ok(v.scale(1.0 / n))
}

fn parse_header(header: &str, path: &Path) -> Result<(usize, usize, HandMode)> {
    let mut toks = header.split_whitespace();
    let magic: Vec<&str> = toks.by_ref().take(2).collect();
    if magic.join(" ") != MAGIC {
        return Err(Error::Data(format!(
            "{}: bad header, expected `{MAGIC} ...`",
            path.display()
        )));
    }
    let (mut n, mut j, mut mode) = (None, None, None);
    for tok in toks {
        let (key, val) = tok.split_once('=').ok_or_else(|| {
            Error::Data(format!("{}: bad header field {tok:?}", path.display()))
        })?;
        match key {
            "N" => n = val.parse().ok(),
            "J" => j = val.parse().ok(),
            "fps" => {
                let _: u32 = val
                    .parse()
                    .map_err(|_| Error::Data(format!("{}: bad fps", path.display())))?;
            }
            "hand_mode" => {
                mode = match val {
                    "dynamic" => Some(HandMode::Dynamic),
                    "static" => Some(HandMode::Static),
                    _ => None,
                }
            }
            _ => {
                return Err(Error::Data(format!(
                    "{}: unknown header field {key:?}",
                    path.display()
                )))
            }
        }
    }
    match (n, j, mode) {
        (Some(n), Some(j), Some(mode)) if n >= 1 && j >= 1 => Ok((n, j, mode)),
        _ => Err(Error::Data(format!(
            "{}: header must carry N>=1, J>=1, hand_mode",
            path.display()
        ))),
    }
}

/// Write frames in the sequence format, at float32 precision.
pub fn write_sequence(path: &Path, frames: &[Frame], mode: HandMode) -> Result<()> {
    let n = frames.first().map_or(0, |f| f.n_joints());
    let j = frames.first().map_or(0, |f| f.n_objects());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} N={n} J={j} fps={} hand_mode={}",
        super::FRAME_RATE,
        mode.as_str()
    );
    for f in frames {
        let mut cols: Vec<Vec3> = vec![
            f.head_pos,
            f.head_dir,
            f.eye_pos,
            f.gaze_dir,
            f.left_wrist,
            f.right_wrist,
        ];
        cols.extend_from_slice(&f.left_hand);
        cols.extend_from_slice(&f.right_hand);
        cols.extend_from_slice(&f.objects);
        let mut first = true;
        for c in cols {
            for v in [c.x, c.y, c.z] {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{}", v as f32);
                first = false;
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Manifest file: one sequence path per line, relative paths resolved
/// against the manifest's directory. Headers of all sequences must agree
/// on N, J, and hand mode.
pub fn load_manifest(path: &Path) -> Result<super::DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut paths = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = Path::new(line);
        paths.push(if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        });
    }
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "{}: manifest lists no sequences",
            path.display()
        )));
    }
    let mut shared: Option<(usize, usize, HandMode)> = None;
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let header = text
            .lines()
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty file", p.display())))?;
        let got = parse_header(header, p)?;
        match shared {
            None => shared = Some(got),
            Some(expect) if expect == got => {}
            Some(expect) => {
                return Err(Error::Data(format!(
                    "{}: header {:?} disagrees with {:?} from earlier sequences",
                    p.display(),
                    got,
                    expect
                )))
            }
        }
    }
    let (n_joints, n_objects, hand_mode) = shared.unwrap();
    Ok(super::DatasetManifest {
        paths,
        n_joints,
        n_objects,
        frame_rate: super::FRAME_RATE,
        hand_mode,
    })
}

pub fn write_manifest(path: &Path, sequence_paths: &[String]) -> Result<()> {
    let mut out = String::new();
    for p in sequence_paths {
        let _ = writeln!(out, "{p}");
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Sidecar with the generator's scripted attendance: one line per frame,
/// `L` or `R`, with a trailing `*` marking hand-crossing frames where both
/// hands sit within 2 degrees of gaze.
pub fn write_attendance_sidecar(path: &Path, labels: &[(Side, bool)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = String::new();
    for (side, crossing) in labels {
        out.push(side.letter());
        if *crossing {
            out.push('*');
        }
        out.push('\n');
    }
    f.write_all(out.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn load_attendance_sidecar(path: &Path) -> Result<Vec<(Side, bool)>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let side = match line.chars().next().unwrap() {
            'L' => Side::Left,
            'R' => Side::Right,
            c => {
                return Err(Error::Data(format!(
                    "{}:{}: bad label {c:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        labels.push((side, line.ends_with('*')));
    }
    Ok(labels)
}
