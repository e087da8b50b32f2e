//! `.fnds` dataset files and the plain-text grid exchange format.
//!
//! `.fnds` layout, little-endian:
//!
//! | field      | type                              |
//! |------------|-----------------------------------|
//! | magic      | `b"FNDS"`                         |
//! | version    | u32 = 1                           |
//! | n          | u64                               |
//! | c_in, c_out| u32 = 2, u32 = 1                  |
//! | H, W       | u32                               |
//! | epsilon    | f64                               |
//! | inputs     | n·2·H·W f64                       |
//! | targets    | n·1·H·W f64                       |
//! | provenance | u32 byte length + UTF-8 bytes     |

use std::fs;
use std::path::Path;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::field_fft::{FieldBatch, Grid2D, ScalarField2D};
use crate::interface::{alpha_to_rdf, RdfParams, FRACTION_SLACK};

pub const DATASET_MAGIC: &[u8; 4] = b"FNDS";
pub const DATASET_VERSION: u32 = 1;
/// Bytes before the input payload.
pub const DATASET_HEADER_LEN: usize = 40;

/// Little-endian cursor that reports failures with their byte offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    make_error: fn(u64, String) -> Error,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], make_error: fn(u64, String) -> Error) -> Self {
        Self {
            bytes,
            pos: 0,
            make_error,
        }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        (self.make_error)(self.pos as u64, message.into())
    }

    pub(crate) fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(self.error(format!(
                "truncated while reading {what}: need {len} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Reads `count` finite f64 values.
    pub(crate) fn f64_array(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let len = count
            .checked_mul(8)
            .ok_or_else(|| self.error(format!("{what} length overflows")))?;
        let raw = self.take(len, what)?;
        let mut out = Vec::with_capacity(count);
        for (k, chunk) in raw.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err((self.make_error)(
                    (start + 8 * k) as u64,
                    format!("non-finite value in {what}"),
                ));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("{} unexpected trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

fn format_error(offset: u64, message: String) -> Error {
    Error::Format { offset, message }
}

/// Serializes a dataset into the `.fnds` byte layout.
pub fn encode_dataset(dataset: &Dataset) -> Vec<u8> {
    let grid = dataset.grid();
    let provenance = dataset.provenance().as_bytes();
    let payload = 8 * (dataset.inputs().values().len() + dataset.targets().values().len());
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + payload + 4 + provenance.len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.n() as u64).to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(grid.height as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width as u32).to_le_bytes());
    out.extend_from_slice(&dataset.epsilon().to_le_bytes());
    for v in dataset
        .inputs()
        .values()
        .iter()
        .chain(dataset.targets().values())
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(provenance.len() as u32).to_le_bytes());
    out.extend_from_slice(provenance);
    out
}

/// Parses the `.fnds` byte layout.
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes, format_error);
    if r.take(4, "magic")? != DATASET_MAGIC {
        return Err(format_error(0, "bad magic, not a .fnds dataset".into()));
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(format_error(4, format!("unsupported version {version}")));
    }
    let n = r.u64("sample count")?;
    let c_in = r.u32("input channels")?;
    let c_out = r.u32("output channels")?;
    if (c_in, c_out) != (2, 1) {
        return Err(format_error(
            16,
            format!("channel counts ({c_in}, {c_out}) differ from (2, 1)"),
        ));
    }
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let epsilon = r.f64("epsilon")?;
    if n == 0 || h == 0 || w == 0 {
        return Err(format_error(
            8,
            format!("empty dataset shape n={n}, {h}x{w}"),
        ));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(format_error(32, format!("invalid epsilon {epsilon}")));
    }
    let cells = (n as usize)
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .filter(|&v| {
            v.checked_mul(24)
                .is_some_and(|bytes| bytes <= r.remaining())
        })
        .ok_or_else(|| {
            r.error(format!(
                "payload for n={n}, {h}x{w} exceeds the {} bytes left",
                r.remaining()
            ))
        })?;
    let inputs = r.f64_array(2 * cells, "inputs")?;
    let targets = r.f64_array(cells, "targets")?;
    let len = r.u32("provenance length")? as usize;
    let text_start = r.offset();
    let provenance = std::str::from_utf8(r.take(len, "provenance")?)
        .map_err(|_| format_error(text_start as u64, "provenance is not UTF-8".into()))?
        .to_string();
    r.finish()?;

    let grid = Grid2D::new(h, w)?;
    let n = n as usize;
    Dataset::new(
        FieldBatch::new(n, 2, grid, inputs)?,
        FieldBatch::new(n, 1, grid, targets)?,
        epsilon,
        provenance,
    )
    .map_err(|e| format_error(DATASET_HEADER_LEN as u64, e.to_string()))
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(dataset))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

/// Parses a text grid: a `H W` header line, then `H·W` whitespace-separated
/// values in row-major order. Values are returned as-is on a unit grid.
pub fn parse_grid_text(text: &str) -> Result<ScalarField2D> {
    let mut tokens = text
        .lines()
        .enumerate()
        .flat_map(|(k, line)| line.split_whitespace().map(move |t| (k + 1, t)));

    let mut dim = |name: &str| -> Result<usize> {
        let (line, token) = tokens.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing {name} in header"),
        })?;
        match token.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::Parse {
                line,
                message: format!("{name} `{token}` is not a positive integer"),
            }),
        }
    };
    let h = dim("height")?;
    let w = dim("width")?;
    let count = h.checked_mul(w).ok_or_else(|| Error::Parse {
        line: 1,
        message: "grid dimensions overflow".into(),
    })?;

    let mut values = Vec::with_capacity(count.min(1 << 24));
    let mut last_line = 1;
    for (line, token) in tokens {
        last_line = line;
        if values.len() == count {
            return Err(Error::Parse {
                line,
                message: format!("more than the {count} values declared by the header"),
            });
        }
        let v: f64 = token.parse().map_err(|_| Error::Parse {
            line,
            message: format!("`{token}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("`{token}` is not finite"),
            });
        }
        values.push(v);
    }
    if values.len() != count {
        return Err(Error::Parse {
            line: last_line,
            message: format!("expected {count} values, found {}", values.len()),
        });
    }
    ScalarField2D::new(Grid2D::new(h, w)?, values)
}

/// Reads an `α` text grid, checks `α ∈ [0, 1]` and converts it to `ζ`.
pub fn import_grid_text(path: impl AsRef<Path>, epsilon: f64) -> Result<ScalarField2D> {
    let text = fs::read_to_string(path)?;
    let alpha = parse_grid_text(&text)?;
    let w = alpha.grid().width;
    for (k, &a) in alpha.values().iter().enumerate() {
        if !(-FRACTION_SLACK..=1.0 + FRACTION_SLACK).contains(&a) {
            let line = value_line(&text, k).unwrap_or(0);
            return Err(Error::Parse {
                line,
                message: format!(
                    "volume fraction {a} at cell ({}, {}) is outside [0, 1]",
                    k / w,
                    k % w
                ),
            });
        }
    }
    alpha_to_rdf(&alpha, &RdfParams::with_epsilon(epsilon)?)
}

/// Line number holding the `k`-th value (after the two header tokens).
fn value_line(text: &str, k: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .flat_map(|(l, line)| line.split_whitespace().map(move |_| l + 1))
        .nth(k + 2)
}

/// Renders a field as a text grid, one row per line.
pub fn format_grid_text(field: &ScalarField2D) -> String {
    let g = field.grid();
    let mut out = format!("{} {}\n", g.height, g.width);
    for row in field.values().chunks(g.width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_grid_text(field: &ScalarField2D, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_grid_text(field))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_dataset(n: usize, h: usize, w: usize) -> Dataset {
        let grid = Grid2D::new(h, w).unwrap();
        let mut inputs = Vec::new();
        for s in 0..n {
            inputs.extend((0..h * w).map(|k| (k as f64 * 0.37 + s as f64).sin()));
            inputs.extend(std::iter::repeat_n(s as f64 / n as f64, h * w));
        }
        let targets = (0..n * h * w).map(|k| (k as f64).cos() * 3.0).collect();
        Dataset::new(
            FieldBatch::new(n, 2, grid, inputs).unwrap(),
            FieldBatch::new(n, 1, grid, targets).unwrap(),
            1.25,
            "unit-test ✓".into(),
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_and_size() {
        let ds = sample_dataset(3, 5, 6);
        let bytes = encode_dataset(&ds);
        let provenance = "unit-test ✓".len();
        assert_eq!(
            bytes.len(),
            DATASET_HEADER_LEN + 3 * 3 * 5 * 6 * 8 + 4 + provenance
        );
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_dataset(&back), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fnds");
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn corrupt_magic_is_a_format_error() {
        let mut bytes = encode_dataset(&sample_dataset(1, 4, 4));
        bytes[1] = b'X';
        assert!(matches!(
            decode_dataset(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_dataset(&sample_dataset(2, 4, 4));
        for cut in [0, 3, 12, 39, 100, bytes.len() - 1] {
            match decode_dataset(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn trailing_bytes_and_bad_channels_are_rejected() {
        let mut bytes = encode_dataset(&sample_dataset(1, 4, 4));
        bytes.push(0);
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format { .. })));

        let mut bytes = encode_dataset(&sample_dataset(1, 4, 4));
        bytes[16] = 3;
        assert!(matches!(
            decode_dataset(&bytes),
            Err(Error::Format { offset: 16, .. })
        ));
    }

    #[test]
    fn huge_declared_count_does_not_allocate() {
        let mut bytes = encode_dataset(&sample_dataset(1, 4, 4));
        bytes[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn text_grid_of_half_fractions() {
        let field = parse_grid_text("2 2\n0.5 0.5 0.5 0.5\n").unwrap();
        let zeta = alpha_to_rdf(&field, &RdfParams::default()).unwrap();
        assert_eq!(zeta.grid().height, 2);
        assert!(zeta.values().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn text_grid_is_row_major() {
        let field = parse_grid_text("2 3\n0 1 2\n3 4\n5\n").unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(field.get(i, j), (i * 3 + j) as f64);
            }
        }
        assert_eq!(format_grid_text(&field), "2 3\n0 1 2\n3 4 5\n");
    }

    #[test]
    fn text_grid_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        fs::write(&path, "2 2\n0.5 0.5\n0.5 1.3\n").unwrap();
        match import_grid_text(&path, 1.0) {
            Err(Error::Parse { line: 3, message }) => assert!(message.contains("1.3")),
            other => panic!("{other:?}"),
        }
        for (text, line) in [
            ("2 2\n0.5 x 0.5 0.5\n", 2),
            ("2 2\n0.5 0.5 0.5\n", 2),
            ("2 2\n0.5 0.5\n0.5 0.5 0.5\n", 3),
            ("2 q\n", 1),
        ] {
            match parse_grid_text(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }
}
