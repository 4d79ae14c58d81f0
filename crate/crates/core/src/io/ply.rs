use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{Point3, Vector3};

use super::{MeshData, MeshIoError};
use crate::geom::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn parse_err(reason: impl Into<String>) -> MeshIoError {
    MeshIoError::Parse(reason.into())
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<(Format, Vec<Element>), MeshIoError> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<(), MeshIoError> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(parse_err("unexpected end of PLY header"));
        }
        Ok(())
    };
    next_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(parse_err("missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(&mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => Format::BinaryBe,
                    other => return Err(parse_err(format!("unknown PLY format {other}"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| parse_err(format!("bad element count {count}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err("property before element"))?;
                el.properties.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count).ok_or_else(|| parse_err(format!("bad type {count}")))?,
                    item: Scalar::parse(item).ok_or_else(|| parse_err(format!("bad type {item}")))?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err("property before element"))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or_else(|| parse_err(format!("bad type {ty}")))?,
                });
            }
            _ => return Err(parse_err(format!("unrecognised header line {:?}", line.trim_end()))),
        }
    }
    Ok((format.ok_or_else(|| parse_err("missing format line"))?, elements))
}

/// Value source for element bodies in any of the three encodings.
struct Values<'a, R: BufRead> {
    reader: &'a mut R,
    format: Format,
    tokens: std::vec::IntoIter<String>,
}

impl<R: BufRead> Values<'_, R> {
    fn next(&mut self, ty: Scalar) -> Result<f64, MeshIoError> {
        match self.format {
            Format::Ascii => {
                let token = loop {
                    if let Some(t) = self.tokens.next() {
                        break t;
                    }
                    let mut line = String::new();
                    if self.reader.read_line(&mut line)? == 0 {
                        return Err(parse_err("unexpected end of PLY body"));
                    }
                    self.tokens = line.split_whitespace().map(str::to_string).collect::<Vec<_>>().into_iter();
                };
                token.parse::<f64>().map_err(|_| parse_err(format!("bad number {token:?}")))
            }
            Format::BinaryLe | Format::BinaryBe => {
                let mut buf = [0u8; 8];
                let bytes = &mut buf[..ty.size()];
                self.reader
                    .read_exact(bytes)
                    .map_err(|_| parse_err("unexpected end of PLY body"))?;
                if self.format == Format::BinaryBe {
                    bytes.reverse();
                }
                let b = &buf;
                Ok(match ty {
                    Scalar::I8 => b[0] as i8 as f64,
                    Scalar::U8 => b[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    Scalar::F64 => f64::from_le_bytes(*b),
                })
            }
        }
    }

    /// Ascii elements occupy whole lines; drop what is left of the current one.
    fn end_element(&mut self) {
        self.tokens = Vec::new().into_iter();
    }
}

fn as_index(v: f64, what: &str) -> Result<usize, MeshIoError> {
    if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(parse_err(format!("invalid {what} {v}")))
    }
}

pub(super) fn read_ply<R: BufRead>(mut reader: R) -> Result<MeshData, MeshIoError> {
    let (format, elements) = read_header(&mut reader)?;
    let mut values = Values { reader: &mut reader, format, tokens: Vec::new().into_iter() };
    let mut vertex_props: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut vertex_count = None;
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        if is_vertex {
            vertex_count = Some(el.count);
            for p in &el.properties {
                if let Property::Scalar { name, .. } = p {
                    vertex_props.insert(name.clone(), Vec::with_capacity(el.count.min(1 << 20)));
                }
            }
        }
        for _ in 0..el.count {
            for p in &el.properties {
                match p {
                    Property::Scalar { name, ty } => {
                        let v = values.next(*ty)?;
                        if is_vertex {
                            vertex_props.get_mut(name).expect("registered").push(v);
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = as_index(values.next(*count)?, "list length")?;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(values.next(*item)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            let idx = items
                                .iter()
                                .map(|&v| as_index(v, "vertex index"))
                                .collect::<Result<Vec<_>, _>>()?;
                            if idx.len() < 3 {
                                return Err(parse_err(format!("face with {} vertices", idx.len())));
                            }
                            for k in 1..idx.len() - 1 {
                                faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            values.end_element();
        }
    }
    let n = vertex_count.ok_or_else(|| parse_err("no vertex element"))?;
    let mut coord = |name: &str| vertex_props.remove(name).ok_or_else(|| parse_err(format!("missing vertex property {name}")));
    let (xs, ys, zs) = (coord("x")?, coord("y")?, coord("z")?);
    let vertices = (0..n).map(|i| Point3::new(xs[i], ys[i], zs[i])).collect();
    let mesh = TriangleMesh::new(vertices, faces)?;

    let embedding = match (vertex_props.remove("ex"), vertex_props.remove("ey"), vertex_props.remove("ez")) {
        (Some(x), Some(y), Some(z)) => Some((0..n).map(|i| Vector3::new(x[i], y[i], z[i])).collect()),
        (None, None, None) => None,
        _ => return Err(parse_err("embedding needs all of ex, ey, ez")),
    };
    let pixels = match (vertex_props.remove("row"), vertex_props.remove("col")) {
        (Some(r), Some(c)) => Some(
            r.iter()
                .zip(&c)
                .map(|(&r, &c)| Ok((as_index(r, "row")?, as_index(c, "col")?)))
                .collect::<Result<Vec<_>, MeshIoError>>()?,
        ),
        (None, None) => None,
        _ => return Err(parse_err("pixel provenance needs both row and col")),
    };
    Ok(MeshData { mesh, embedding, pixels, scalars: vertex_props })
}

/// Binary little-endian PLY: double x, y, z; optional double ex, ey, ez;
/// optional int row, col; extra scalars as double; faces as uchar/int lists.
pub(super) fn write_ply<W: Write>(mut writer: W, data: &MeshData) -> Result<(), MeshIoError> {
    let n = data.mesh.vertex_count();
    if let Some(e) = &data.embedding {
        check_len("embedding", e.len(), n)?;
    }
    if let Some(p) = &data.pixels {
        check_len("pixels", p.len(), n)?;
    }
    for (name, values) in &data.scalars {
        check_len(name, values.len(), n)?;
        if ["x", "y", "z", "ex", "ey", "ez", "row", "col"].contains(&name.as_str())
            || name.is_empty()
            || name.chars().any(char::is_whitespace)
        {
            return Err(MeshIoError::Invalid(format!("cannot write vertex property named {name:?}")));
        }
    }
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {n}\nproperty double x\nproperty double y\nproperty double z\n");
    if data.embedding.is_some() {
        header += "property double ex\nproperty double ey\nproperty double ez\n";
    }
    if data.pixels.is_some() {
        header += "property int row\nproperty int col\n";
    }
    for name in data.scalars.keys() {
        header += &format!("property double {name}\n");
    }
    header += &format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        data.mesh.face_count()
    );
    writer.write_all(header.as_bytes())?;

    let mut buf = Vec::with_capacity(n * 64);
    for (i, p) in data.mesh.vertices().iter().enumerate() {
        for v in [p.x, p.y, p.z] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(e) = &data.embedding {
            for v in [e[i].x, e[i].y, e[i].z] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(px) = &data.pixels {
            for v in [px[i].0, px[i].1] {
                let v = i32::try_from(v).map_err(|_| MeshIoError::Invalid("pixel index exceeds int range".into()))?;
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        for values in data.scalars.values() {
            buf.extend_from_slice(&values[i].to_le_bytes());
        }
    }
    for f in data.mesh.faces() {
        buf.push(3);
        for &v in f {
            let v = i32::try_from(v).map_err(|_| MeshIoError::Invalid("vertex index exceeds int range".into()))?;
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    writer.write_all(&buf)?;
    writer.flush()?;
    Ok(())
}

fn check_len(what: &str, actual: usize, expected: usize) -> Result<(), MeshIoError> {
    if actual == expected {
        Ok(())
    } else {
        Err(MeshIoError::Invalid(format!("{what} has {actual} entries for {expected} vertices")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASCII: &str = "ply
format ascii 1.0
comment two triangles as one quad
element vertex 4
property float x
property float y
property float z
property uchar red
element face 1
property list uchar int vertex_indices
end_header
0 0 0 255
1 0 0 0
1 1 0 0
0 1 0 7
4 0 1 2 3
";

    #[test]
    fn ascii_quad_is_fan_triangulated() {
        let data = read_ply(ASCII.as_bytes()).unwrap();
        assert_eq!(data.mesh.faces(), &[[0, 1, 2], [0, 2, 3]]);
        assert_eq!(data.scalars["red"], vec![255.0, 0.0, 0.0, 7.0]);
        assert!(data.embedding.is_none());
    }

    #[test]
    fn big_endian_body() {
        let mut bytes = b"ply\nformat binary_big_endian 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n".to_vec();
        for v in [0.0f64, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.5] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.push(3);
        for i in [0u32, 1, 2] {
            bytes.extend_from_slice(&i.to_be_bytes());
        }
        let data = read_ply(&bytes[..]).unwrap();
        assert_eq!(data.mesh.vertices()[2], Point3::new(0.0, 1.0, 0.5));
        assert_eq!(data.mesh.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn truncated_body_fails() {
        let text = ASCII.replace("4 0 1 2 3\n", "");
        assert!(matches!(read_ply(text.as_bytes()), Err(MeshIoError::Parse(_))));
    }

    #[test]
    fn out_of_range_face_is_a_geometry_error() {
        let text = ASCII.replace("4 0 1 2 3", "3 0 1 9");
        assert!(matches!(read_ply(text.as_bytes()), Err(MeshIoError::Geom(_))));
    }
}
