use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::GaussianSeed;
use crate::error::{Error, Result};

const FLOAT_PROPERTIES: [&str; 16] = [
    "x", "y", "z", "red", "green", "blue", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity", "", "",
];
const FLOATS: usize = 14;
const RECORD_BYTES: usize = FLOATS * 4 + 1;

fn header(count: usize) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\ncomment panofusion gaussian seeds\n");
    h += &format!("element vertex {count}\n");
    for name in &FLOAT_PROPERTIES[..FLOATS] {
        h += &format!("property float {name}\n");
    }
    h += "property uchar layer_id\nend_header\n";
    h
}

fn floats(s: &GaussianSeed) -> [f32; FLOATS] {
    let mut f = [0.0; FLOATS];
    f[0..3].copy_from_slice(&s.position);
    f[3..6].copy_from_slice(&s.color);
    f[6..9].copy_from_slice(&s.scale);
    f[9..13].copy_from_slice(&s.rotation);
    f[13] = s.opacity;
    f
}

/// Writes seeds as a binary little-endian PLY point cloud.
pub fn write_ply(seeds: &[GaussianSeed], path: &Path) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(header(seeds.len()).as_bytes())?;
    let mut record = [0u8; RECORD_BYTES];
    for s in seeds {
        for (i, v) in floats(s).iter().enumerate() {
            record[i * 4..i * 4 + 4].copy_from_slice(&v.to_le_bytes());
        }
        record[FLOATS * 4] = s.layer_id;
        write(&record)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<GaussianSeed>> {
    let bad = |message: String| Error::Format {
        format: "PLY",
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(bad("missing end_header".into()));
        }
        let line = line.trim_end().to_string();
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    let count = lines
        .iter()
        .find_map(|l| l.strip_prefix("element vertex "))
        .ok_or_else(|| bad("no vertex element".into()))?
        .parse::<usize>()
        .map_err(|e| bad(format!("vertex count: {e}")))?;
    let expected = header(count);
    let actual: String = lines.iter().map(|l| format!("{l}\n")).collect();
    if actual != expected {
        return Err(bad("unexpected header layout".into()));
    }

    let mut body = Vec::with_capacity(count * RECORD_BYTES);
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != count * RECORD_BYTES {
        return Err(bad(format!(
            "body has {} bytes, expected {}",
            body.len(),
            count * RECORD_BYTES
        )));
    }
    Ok(body
        .chunks_exact(RECORD_BYTES)
        .map(|rec| {
            let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
            GaussianSeed {
                position: [f(0), f(1), f(2)],
                color: [f(3), f(4), f(5)],
                scale: [f(6), f(7), f(8)],
                rotation: [f(9), f(10), f(11), f(12)],
                opacity: f(13),
                layer_id: rec[FLOATS * 4],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_ply(&[], &dir.path().join("x.ply")), Err(Error::EmptySeeds)));
    }

    #[test]
    fn header_counts_vertices() {
        let seed = GaussianSeed {
            position: [1.0, 2.0, 3.0],
            color: [0.1, 0.2, 0.3],
            scale: [0.01; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: 0.5,
            layer_id: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ply");
        write_ply(&[seed; 7], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes[..200]);
        assert!(text.contains("element vertex 7\n"));
        assert_eq!(read_ply(&path).unwrap(), vec![seed; 7]);
    }
}
