//! Run-directory dataset format: `manifest.json` plus one CSV per episode
//! under `episodes/`, floats printed with 9 significant digits.

use super::{DataError, EpisodeDataset, Manifest, Record, FORMAT_VERSION};
use crate::sim::{Action, Pose, SensorReading};
use std::fs;
use std::io::Write as _;
use std::path::Path;

pub const CSV_HEADER: &str =
    "t,a1,a2,enc1,enc2,load1,load2,tac1,tac2,px,py,yaw,ix,iy,iyaw,dropped";

/// 9-significant-digit decimal encoding; parses back exactly to the printed
/// value, so a second round trip is the identity.
pub fn fmt_g9(x: f64) -> String {
    format!("{x:.8e}")
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

pub fn write(dataset: &EpisodeDataset, dir: &Path) -> Result<(), DataError> {
    let episodes_dir = dir.join("episodes");
    fs::create_dir_all(&episodes_dir).map_err(|e| io_err(&episodes_dir, e))?;
    let manifest_path = dir.join("manifest.json");
    let manifest = serde_json::to_string_pretty(&dataset.manifest)?;
    fs::write(&manifest_path, manifest).map_err(|e| io_err(&manifest_path, e))?;

    for (episode_id, range) in super::episode_spans(&dataset.records) {
        let path = episodes_dir.join(format!("ep{episode_id:05}.csv"));
        let mut buf = String::with_capacity(range.len() * 200 + CSV_HEADER.len() + 1);
        buf.push_str(CSV_HEADER);
        buf.push('\n');
        for r in &dataset.records[range] {
            let s = &r.sensor;
            let fields = [
                s.enc_angles[0],
                s.enc_angles[1],
                s.loads[0],
                s.loads[1],
                s.tactile[0],
                s.tactile[1],
                s.truth_pose.x,
                s.truth_pose.y,
                s.truth_pose.yaw,
                r.initial_pose.x,
                r.initial_pose.y,
                r.initial_pose.yaw,
            ];
            buf.push_str(&r.t.to_string());
            buf.push(',');
            buf.push_str(&fmt_g9(r.action.0[0]));
            buf.push(',');
            buf.push_str(&fmt_g9(r.action.0[1]));
            for v in fields {
                buf.push(',');
                buf.push_str(&fmt_g9(v));
            }
            buf.push(',');
            buf.push(if r.dropped { '1' } else { '0' });
            buf.push('\n');
        }
        let mut file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        file.write_all(buf.as_bytes()).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

pub fn read(dir: &Path) -> Result<EpisodeDataset, DataError> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text =
        fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    if manifest.version != FORMAT_VERSION {
        return Err(DataError::VersionMismatch {
            found: manifest.version,
            expected: FORMAT_VERSION.to_string(),
        });
    }

    let episodes_dir = dir.join("episodes");
    let mut paths: Vec<_> = fs::read_dir(&episodes_dir)
        .map_err(|e| io_err(&episodes_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();

    let mut records = Vec::new();
    for path in paths {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let episode_id: u64 = name
            .strip_prefix("ep")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DataError::MalformedRow {
                file: path.display().to_string(),
                row: 0,
                reason: "file name is not ep<NNNNN>.csv".into(),
            })?;
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        parse_episode(&path, episode_id, &text, &mut records)?;
    }

    if records.len() != manifest.record_count {
        return Err(DataError::MalformedRow {
            file: manifest_path.display().to_string(),
            row: records.len(),
            reason: format!(
                "manifest record_count {} does not match {} rows on disk",
                manifest.record_count,
                records.len()
            ),
        });
    }
    Ok(EpisodeDataset { records, manifest })
}

fn parse_episode(
    path: &Path,
    episode_id: u64,
    text: &str,
    out: &mut Vec<Record>,
) -> Result<(), DataError> {
    let malformed = |row: usize, reason: String| DataError::MalformedRow {
        file: path.display().to_string(),
        row,
        reason,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(malformed(0, format!("bad header {other:?}")));
        }
    }
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 16 {
            return Err(malformed(row + 1, format!("expected 16 columns, got {}", cols.len())));
        }
        let t: u32 = cols[0]
            .parse()
            .map_err(|e| malformed(row + 1, format!("bad t: {e}")))?;
        let mut f = [0.0f64; 14];
        for (k, c) in cols[1..15].iter().enumerate() {
            f[k] = c
                .parse()
                .map_err(|e| malformed(row + 1, format!("bad float in column {}: {e}", k + 1)))?;
        }
        let dropped = match cols[15] {
            "0" => false,
            "1" => true,
            other => return Err(malformed(row + 1, format!("bad dropped flag {other:?}"))),
        };
        out.push(Record {
            episode_id,
            t,
            sensor: SensorReading {
                enc_angles: [f[2], f[3]],
                loads: [f[4], f[5]],
                tactile: [f[6], f[7]],
                truth_pose: Pose::new(f[8], f[9], f[10]),
            },
            action: Action([f[0], f[1]]),
            initial_pose: Pose::new(f[11], f[12], f[13]),
            dropped,
        });
    }
    Ok(())
}
