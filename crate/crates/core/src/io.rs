//! JSON and CSV file formats.
//!
//! Structured values are JSON. serde_json prints every `f64` as the shortest
//! decimal that parses back to the same bits, so a write followed by a read
//! reproduces the value exactly. Traces and reports are CSV, formatted with
//! [`fmt_f64`] under the same round-trip guarantee.
//!
//! All writes go through a temporary file in the destination directory that
//! is renamed into place, so readers never observe a partial file.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{GraspError, Result};
use crate::optimize::OptimizationTrace;
use crate::scene::{ContactState, ObjectModel};
use crate::synth::{generate_scene, SceneSpec};

/// Formats a float so that parsing the text gives back the same value.
///
/// Plain decimal notation for magnitudes in `[1e-4, 1e15)`, scientific
/// notation otherwise.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Replaces `path` with `bytes` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| GraspError::File {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads an object file, or a synthetic scene spec (any JSON object with a
/// `shape` key) which is generated on the spot.
pub fn read_scene(path: &Path) -> Result<ObjectModel> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("shape").is_some() {
        let spec: SceneSpec = serde_json::from_value(value)?;
        generate_scene(&spec)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

/// Reads a contact state and checks it has one entry per object point.
pub fn read_contacts(path: &Path, object: &ObjectModel) -> Result<ContactState> {
    let state: ContactState = read_json(path)?;
    state.check_matches(object)?;
    Ok(state)
}

/// One row per trace record: `stage,iteration,kp,contact,pene,reg,total`.
pub fn trace_csv(trace: &OptimizationTrace) -> String {
    let mut out = String::from("stage,iteration,kp,contact,pene,reg,total\n");
    for r in &trace.records {
        let l = &r.loss;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.stage,
            r.iteration,
            fmt_f64(l.kp),
            fmt_f64(l.contact),
            fmt_f64(l.pene),
            fmt_f64(l.reg),
            fmt_f64(l.total)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::default_gravity;
    use crate::hand::HandPose;
    use crate::synth::{generate_contacts, ContactGenConfig, ContactStyle, Shape};
    use proptest::prelude::*;

    fn sphere() -> ObjectModel {
        generate_scene(&SceneSpec {
            shape: Shape::Sphere { radius: 0.05 },
            sample_count: 256,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn scene_and_contacts_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let obj = sphere();
        let contacts = generate_contacts(
            &obj,
            ContactStyle::Pinch,
            1,
            1.0,
            &default_gravity(),
            &ContactGenConfig::default(),
        )
        .unwrap();
        let sp = dir.path().join("scene.json");
        let cp = dir.path().join("contacts.json");
        write_json(&sp, &obj).unwrap();
        write_json(&cp, &contacts).unwrap();
        let obj2 = read_scene(&sp).unwrap();
        assert_eq!(obj2, obj);
        assert_eq!(read_contacts(&cp, &obj2).unwrap(), contacts);
        // Writing the loaded values again gives the same bytes.
        let again = dir.path().join("again.json");
        write_json(&again, &obj2).unwrap();
        assert_eq!(std::fs::read(&sp).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn scene_specs_are_generated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("spec.json");
        std::fs::write(
            &p,
            r#"{"shape": {"kind": "sphere", "radius": 0.05}, "sample_count": 256, "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(read_scene(&p).unwrap(), sphere());
    }

    #[test]
    fn invalid_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, r#"{"points": [[0,0,0]], "normals": [[0,0,2]], "com": [0,0,0]}"#).unwrap();
        assert!(read_scene(&p).is_err());
        std::fs::write(&p, r#"{"likelihood": [0.0], "part_label": [3], "force": [0.0]}"#).unwrap();
        assert!(read_json::<ContactState>(&p).is_err());
        std::fs::write(&p, r#"{"likelihood": [1.0], "part_label": [3], "force": [2.0]}"#).unwrap();
        let state: ContactState = read_json(&p).unwrap();
        assert!(matches!(
            read_contacts(&p, &sphere()),
            Err(crate::GraspError::ShapeError { .. })
        ));
        assert_eq!(state.len(), 1);
        assert!(read_scene(&dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn float_formatting_examples() {
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(96.2361), "96.2361");
        assert_eq!(fmt_f64(1.5e-16), "1.5e-16");
        assert_eq!(fmt_f64(-2.5e20), "-2.5e20");
    }

    proptest! {
        #[test]
        fn formatted_floats_parse_back(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }

        #[test]
        fn poses_round_trip(a in prop::array::uniform27(-2.0f64..2.0)) {
            let pose = HandPose::from_params(&a);
            let text = serde_json::to_string(&pose).unwrap();
            let back: HandPose = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, pose);
        }
    }

    #[test]
    fn trace_csv_has_one_row_per_record() {
        let mut trace = OptimizationTrace::default();
        for i in 0..3 {
            trace.records.push(crate::optimize::TraceRecord {
                stage: 2,
                iteration: i,
                loss: Default::default(),
                pose: None,
            });
        }
        let csv = trace_csv(&trace);
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().nth(2).unwrap(), "2,1,0,0,0,0,0");
    }
}
