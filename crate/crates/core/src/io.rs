//! Frame readers and writers: binary PPM (P6), PNG, and numbered frame
//! directories.
//!
//! Masks are not persisted; invalid pixels are written as whatever the raster
//! holds (black for warped canvases).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, StitchError};
use crate::frame::Frame;

fn decode_err(path: &Path, message: impl Into<String>) -> StitchError {
    StitchError::Decode {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Encode as binary PPM with maxval 255.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.data());
    out
}

/// Decode a binary PPM (P6, maxval 255). Comments in the header are skipped.
pub fn decode_ppm(bytes: &[u8], origin: &Path) -> Result<Frame> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err(origin, "truncated PPM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P6" {
        return Err(decode_err(origin, format!("unsupported magic {}", tokens[0])));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| decode_err(origin, format!("bad {what} `{s}`")))
    };
    let width = parse(&tokens[1], "width")?;
    let height = parse(&tokens[2], "height")?;
    let maxval = parse(&tokens[3], "maxval")?;
    if maxval != 255 {
        return Err(decode_err(origin, format!("maxval {maxval} is not 255")));
    }
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(decode_err(origin, "truncated PPM raster"));
    }
    Frame::from_raw(width, height, bytes[pos..pos + need].to_vec())
}

pub fn read_ppm(path: &Path) -> Result<Frame> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_ppm(&bytes, path)
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_ppm(frame))?;
    Ok(())
}

fn read_png_from<R: BufRead + std::io::Seek>(reader: R, path: &Path) -> Result<Frame> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| decode_err(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(decode_err(path, "palette was not expanded")),
    };
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            match channels {
                1 | 2 => rgb.extend_from_slice(&[px[0], px[0], px[0]]),
                _ => rgb.extend_from_slice(&px[..3]),
            }
        }
    }
    Frame::from_raw(w, h, rgb)
}

pub fn read_png(path: &Path) -> Result<Frame> {
    read_png_from(BufReader::new(File::open(path)?), path)
}

pub fn write_png(path: &Path, frame: &Frame) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, frame.width() as u32, frame.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| decode_err(path, e.to_string()))?;
    writer
        .write_image_data(frame.data())
        .map_err(|e| decode_err(path, e.to_string()))?;
    writer.finish().map_err(|e| decode_err(path, e.to_string()))?;
    Ok(())
}

/// Read a frame, choosing the codec from the file extension.
pub fn read_frame(path: &Path) -> Result<Frame> {
    match extension(path).as_deref() {
        Some("ppm") => read_ppm(path),
        Some("png") => read_png(path),
        other => Err(decode_err(
            path,
            format!("unsupported extension {}", other.unwrap_or("<none>")),
        )),
    }
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    match extension(path).as_deref() {
        Some("ppm") => write_ppm(path, frame),
        Some("png") => write_png(path, frame),
        other => Err(decode_err(
            path,
            format!("unsupported extension {}", other.unwrap_or("<none>")),
        )),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Numbered frame files in `dir`, sorted by frame number.
///
/// A file qualifies when its stem ends in digits (`000001.png`,
/// `frame_12.ppm`) and its extension is `png` or `ppm`.
pub fn list_sequence(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut numbered = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() || !matches!(extension(&path).as_deref(), Some("png" | "ppm")) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let digits: String = stem
            .chars()
            .rev()
            .take_while(|c| c.is_ascii_digit())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        if let Ok(n) = digits.parse::<u64>() {
            numbered.push((n, path));
        }
    }
    numbered.sort();
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

/// Lazily reads the frames of a numbered directory.
pub struct SequenceReader {
    paths: std::vec::IntoIter<PathBuf>,
    len: usize,
}

impl SequenceReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let paths = list_sequence(dir)?;
        Ok(SequenceReader {
            len: paths.len(),
            paths: paths.into_iter(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Iterator for SequenceReader {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.paths.next().map(|p| read_frame(&p))
    }
}

/// Writes `prefix%06d.ext` files into a directory.
pub struct SequenceWriter {
    dir: PathBuf,
    prefix: String,
    extension: &'static str,
    next: usize,
}

impl SequenceWriter {
    pub fn create(dir: &Path, prefix: &str, extension: &'static str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(SequenceWriter {
            dir: dir.to_path_buf(),
            prefix: prefix.to_string(),
            extension,
            next: 0,
        })
    }

    pub fn path_for(&self, index: usize) -> PathBuf {
        self.dir.join(format!("{}{:06}.{}", self.prefix, index, self.extension))
    }

    pub fn write(&mut self, frame: &Frame) -> Result<PathBuf> {
        let path = self.path_for(self.next);
        write_frame(&path, frame)?;
        self.next += 1;
        Ok(path)
    }
}

/// Write raw bytes through a buffered file.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}
