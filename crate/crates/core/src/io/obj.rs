use std::io::{BufRead, Write};

use nalgebra::Point3;

use super::MeshIoError;
use crate::geom::TriangleMesh;

/// Reads `v` and `f` records; polygons are fan-triangulated, texture and
/// normal references are ignored, negative indices count from the end.
pub(super) fn read_obj<R: BufRead>(reader: R) -> Result<TriangleMesh, MeshIoError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let err = |what: &str| MeshIoError::Parse(format!("line {}: {what}", lineno + 1));
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| err("bad vertex coordinate")))
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(err("vertex needs three coordinates"));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let raw: i64 = t.split('/').next().unwrap_or("").parse().map_err(|_| err("bad face index"))?;
                        let resolved = if raw > 0 { raw - 1 } else { vertices.len() as i64 + raw };
                        if raw == 0 || resolved < 0 {
                            return Err(err("face index out of range"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriangleMesh::new(vertices, faces)?)
}

pub(super) fn write_obj<W: Write>(mut writer: W, mesh: &TriangleMesh) -> Result<(), MeshIoError> {
    for p in mesh.vertices() {
        writeln!(writer, "v {:?} {:?} {:?}", p.x, p.y, p.z)?;
    }
    for f in mesh.faces() {
        writeln!(writer, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_slashes_and_negative_indices() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2//1 3 -1\n";
        let mesh = read_obj(text.as_bytes()).unwrap();
        assert_eq!(mesh.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn round_trip_is_exact() {
        let mesh = crate::geom::icosphere(1.7, 1);
        let mut out = Vec::new();
        write_obj(&mut out, &mesh).unwrap();
        assert_eq!(read_obj(&out[..]).unwrap(), mesh);
    }

    #[test]
    fn zero_index_rejected() {
        assert!(read_obj("v 0 0 0\nf 0 1 2\n".as_bytes()).is_err());
    }
}
