//! Float rasters and their PFM / PGM encodings.

use std::io::{self, Read, Write};

/// Row-major multi-channel raster, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels, "raster data length");
        Self { width, height, channels, data }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    /// All channels of one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn pixel_is_finite(&self, row: usize, col: usize) -> bool {
        self.pixel(row, col).iter().all(|v| v.is_finite())
    }

    pub fn pixel_is_nan(&self, row: usize, col: usize) -> bool {
        self.pixel(row, col).iter().all(|v| v.is_nan())
    }
}

#[derive(Debug)]
pub(crate) enum DecodeError {
    Io(io::Error),
    Header(String),
}

impl From<io::Error> for DecodeError {
    fn from(e: io::Error) -> Self {
        DecodeError::Io(e)
    }
}

/// Reads whitespace-separated header tokens, skipping `#` comments, and
/// consumes exactly one whitespace byte after the last token.
fn header_tokens<R: Read>(reader: &mut R, count: usize) -> Result<Vec<String>, DecodeError> {
    let mut tokens = Vec::with_capacity(count);
    let mut current = Vec::new();
    let mut in_comment = false;
    let mut byte = [0u8; 1];
    while tokens.len() < count {
        if reader.read(&mut byte)? == 0 {
            return Err(DecodeError::Header("unexpected end of header".into()));
        }
        let b = byte[0];
        if in_comment {
            in_comment = b != b'\n';
            continue;
        }
        if b == b'#' && current.is_empty() {
            in_comment = true;
        } else if b.is_ascii_whitespace() {
            if !current.is_empty() {
                tokens.push(String::from_utf8_lossy(&current).into_owned());
                current.clear();
            }
        } else {
            current.push(b);
            if current.len() > 64 {
                return Err(DecodeError::Header("header token too long".into()));
            }
        }
    }
    Ok(tokens)
}

fn parse_dim(token: &str) -> Result<usize, DecodeError> {
    token
        .parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| DecodeError::Header(format!("invalid dimension {token:?}")))
}

/// Decodes a PFM image (`Pf` grayscale or `PF` RGB). Scanlines are stored
/// bottom to top; a negative scale marks little-endian samples.
pub(crate) fn read_pfm<R: Read>(mut reader: R) -> Result<Raster, DecodeError> {
    let tokens = header_tokens(&mut reader, 4)?;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(DecodeError::Header(format!("unknown PFM magic {other:?}"))),
    };
    let width = parse_dim(&tokens[1])?;
    let height = parse_dim(&tokens[2])?;
    let scale: f64 = tokens[3]
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| DecodeError::Header(format!("invalid PFM scale {:?}", tokens[3])))?;
    let little_endian = scale < 0.0;
    let row_len = width * channels;
    let mut bytes = vec![0u8; row_len * height * 4];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| DecodeError::Header("PFM payload shorter than header dimensions".into()))?;
    let mut data = vec![0.0; row_len * height];
    for file_row in 0..height {
        let row = height - 1 - file_row;
        for k in 0..row_len {
            let off = (file_row * row_len + k) * 4;
            let raw = [bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]];
            let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
            data[row * row_len + k] = v as f64;
        }
    }
    Ok(Raster::new(width, height, channels, data))
}

/// Encodes a 1- or 3-channel raster as little-endian PFM (samples rounded to
/// f32).
pub(crate) fn write_pfm<W: Write>(mut writer: W, raster: &Raster) -> io::Result<()> {
    let magic = match raster.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("PFM cannot hold {c} channels"))),
    };
    write!(writer, "{magic}\n{} {}\n-1.0\n", raster.width, raster.height)?;
    let row_len = raster.width * raster.channels;
    let mut buf = Vec::with_capacity(row_len * 4);
    for row in (0..raster.height).rev() {
        buf.clear();
        for &v in &raster.data[row * row_len..(row + 1) * row_len] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        writer.write_all(&buf)?;
    }
    writer.flush()
}

/// Decodes a binary 8-bit PGM (`P5`) into a boolean mask (non-zero = true).
pub(crate) fn read_pgm_mask<R: Read>(mut reader: R) -> Result<(usize, usize, Vec<bool>), DecodeError> {
    let tokens = header_tokens(&mut reader, 4)?;
    if tokens[0] != "P5" {
        return Err(DecodeError::Header(format!("unsupported PGM magic {:?}", tokens[0])));
    }
    let width = parse_dim(&tokens[1])?;
    let height = parse_dim(&tokens[2])?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| DecodeError::Header(format!("invalid PGM maxval {:?}", tokens[3])))?;
    if maxval == 0 || maxval > 255 {
        return Err(DecodeError::Header(format!("PGM maxval {maxval} is not 8-bit")));
    }
    let mut bytes = vec![0u8; width * height];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| DecodeError::Header("PGM payload shorter than header dimensions".into()))?;
    Ok((width, height, bytes.into_iter().map(|b| b != 0).collect()))
}

pub(crate) fn write_pgm_mask<W: Write>(mut writer: W, width: usize, height: usize, mask: &[bool]) -> io::Result<()> {
    write!(writer, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    writer.write_all(&bytes)?;
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_keeps_nan_and_orientation() {
        let mut r = Raster::filled(3, 2, 1, 0.0);
        r.set(0, 0, 0, 1.5);
        r.set(1, 2, 0, f64::NAN);
        let mut bytes = Vec::new();
        write_pfm(&mut bytes, &r).unwrap();
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        // Bottom row is written first: its third sample is the NaN.
        let payload = &bytes[12..];
        assert!(f32::from_le_bytes(payload[8..12].try_into().unwrap()).is_nan());
        let back = read_pfm(&bytes[..]).unwrap();
        assert_eq!(back.get(0, 0, 0), 1.5);
        assert!(back.get(1, 2, 0).is_nan());
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [1.0f32, -2.0, 0.25] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let r = read_pfm(&bytes[..]).unwrap();
        assert_eq!(r.pixel(0, 0), &[1.0, -2.0, 0.25]);
    }

    #[test]
    fn truncated_and_bad_headers_fail() {
        assert!(matches!(read_pfm(&b"P6\n1 1\n-1\n"[..]), Err(DecodeError::Header(_))));
        assert!(matches!(read_pfm(&b"Pf\n2 2\n-1\n\0\0\0\0"[..]), Err(DecodeError::Header(_))));
        assert!(matches!(read_pfm(&b"Pf\n0 2\n-1\n"[..]), Err(DecodeError::Header(_))));
    }

    #[test]
    fn pgm_with_comment() {
        let bytes = b"P5\n# mask\n2 1\n255\n\xff\x00".to_vec();
        let (w, h, m) = read_pgm_mask(&bytes[..]).unwrap();
        assert_eq!((w, h), (2, 1));
        assert_eq!(m, vec![true, false]);
        let mut out = Vec::new();
        write_pgm_mask(&mut out, 2, 1, &m).unwrap();
        assert_eq!(read_pgm_mask(&out[..]).unwrap().2, m);
    }
}
