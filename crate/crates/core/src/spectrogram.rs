//! Nonnegative time–frequency magnitude maps and their CSV interchange format.
//!
//! Values are stored frame-major: column `n` (one time frame, all frequency
//! bins) is a contiguous slice. Every tracker in this crate walks the map
//! column by column, so this is the natural layout.
//!
//! The CSV format is one header line of six values `M,N,f0,df,t0,dt`
//! followed by `N` lines of `M` comma-separated magnitudes, one line per
//! frame. Floats are written with their shortest round-trip representation,
//! so write → read is lossless.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine index → physical-value map: `origin + step * index`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub origin: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(origin: f64, step: f64) -> Self {
        Axis { origin, step }
    }

    #[inline]
    pub fn at(&self, index: usize) -> f64 {
        self.origin + self.step * index as f64
    }

    /// Index whose value is nearest to `value`, clamped to `[0, len)`.
    pub fn nearest(&self, value: f64, len: usize) -> usize {
        let raw = ((value - self.origin) / self.step).round();
        raw.clamp(0.0, len.saturating_sub(1) as f64) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    values: Vec<f64>,
    freq: Axis,
    time: Axis,
}

impl Spectrogram {
    /// Builds a spectrogram from frame-major values (`values[n * bins + m]`).
    pub fn new(bins: usize, frames: usize, values: Vec<f64>, freq: Axis, time: Axis) -> Result<Self> {
        if bins == 0 || frames == 0 {
            return Err(Error::EmptyInput);
        }
        if values.len() != bins * frames {
            return Err(Error::DimensionMismatch {
                what: "spectrogram values",
                expected: bins * frames,
                found: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "spectrogram values must be finite and nonnegative, found {bad}"
            )));
        }
        if !(freq.step > 0.0 && freq.step.is_finite() && freq.origin.is_finite()) {
            return Err(Error::InvalidConfig(
                "frequency axis must be strictly increasing".into(),
            ));
        }
        if !(time.step.is_finite() && time.origin.is_finite()) {
            return Err(Error::InvalidConfig("time axis must be finite".into()));
        }
        Ok(Spectrogram {
            bins,
            frames,
            values,
            freq,
            time,
        })
    }

    /// Builds a spectrogram from a list of frames (columns), each of length `M`.
    pub fn from_columns(columns: &[Vec<f64>], freq: Axis, time: Axis) -> Result<Self> {
        let bins = columns.first().map_or(0, Vec::len);
        for column in columns {
            if column.len() != bins {
                return Err(Error::DimensionMismatch {
                    what: "spectrogram column",
                    expected: bins,
                    found: column.len(),
                });
            }
        }
        Self::new(bins, columns.len(), columns.concat(), freq, time)
    }

    /// Unit axes: bin `m` at frequency `m`, frame `n` at time `n`.
    pub fn from_columns_unit(columns: &[Vec<f64>]) -> Result<Self> {
        Self::from_columns(columns, Axis::new(0.0, 1.0), Axis::new(0.0, 1.0))
    }

    /// Number of frequency bins (`M`).
    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Number of time frames (`N`).
    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[frame * self.bins + bin]
    }

    #[inline]
    pub fn column(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    #[inline]
    pub(crate) fn column_mut(&mut self, frame: usize) -> &mut [f64] {
        &mut self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.bins)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn freq_axis(&self) -> Axis {
        self.freq
    }

    pub fn time_axis(&self) -> Axis {
        self.time
    }

    pub fn freq_of_bin(&self, bin: usize) -> f64 {
        self.freq.at(bin)
    }

    pub fn time_of_frame(&self, frame: usize) -> f64 {
        self.time.at(frame)
    }

    /// New map with the same axes whose column `n` is written by
    /// `f(n, input_column, output_column)`. Columns run in parallel; `f` must
    /// keep values finite and nonnegative.
    pub(crate) fn map_columns<F>(&self, f: F) -> Spectrogram
    where
        F: Fn(usize, &[f64], &mut [f64]) + Sync,
    {
        use rayon::prelude::*;
        let mut values = vec![0.0; self.values.len()];
        values
            .par_chunks_mut(self.bins)
            .zip(self.values.par_chunks(self.bins))
            .enumerate()
            .for_each(|(n, (out, input))| f(n, input, out));
        Spectrogram { values, ..*self }
    }

    /// Multiplies every value by `factor` (must be nonnegative and finite).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid scale factor {factor}")));
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        Ok(out)
    }

    /// Copy of frames `[start, end)`, with the time axis shifted accordingly.
    pub fn frame_range(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames {
            return Err(Error::InvalidConfig(format!(
                "frame range {start}..{end} outside 0..{}",
                self.frames
            )));
        }
        Self::new(
            self.bins,
            end - start,
            self.values[start * self.bins..end * self.bins].to_vec(),
            self.freq,
            Axis::new(self.time.at(start), self.time.step),
        )
    }

    /// Same data with a rescaled frequency axis (e.g. 60.0 for Hz → bpm).
    pub fn with_freq_scale(mut self, scale: f64) -> Self {
        self.freq = Axis::new(self.freq.origin * scale, self.freq.step * scale);
        self
    }

    pub fn with_axes(mut self, freq: Axis, time: Axis) -> Result<Self> {
        if !(freq.step > 0.0) {
            return Err(Error::InvalidConfig(
                "frequency axis must be strictly increasing".into(),
            ));
        }
        self.freq = freq;
        self.time = time;
        Ok(self)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 12);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            self.bins, self.frames, self.freq.origin, self.freq.step, self.time.origin, self.time.step
        );
        for column in self.columns() {
            for (m, v) in column.iter().enumerate() {
                if m > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_csv_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = SpectrogramCsvReader::new(std::io::BufReader::new(file))?;
        let header = reader.header();
        let mut columns = Vec::with_capacity(header.frames);
        while let Some(column) = reader.next_frame()? {
            columns.push(column);
        }
        finish_csv(header, columns)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = SpectrogramCsvReader::new(text.as_bytes())?;
        let header = reader.header();
        let mut columns = Vec::with_capacity(header.frames);
        while let Some(column) = reader.next_frame()? {
            columns.push(column);
        }
        finish_csv(header, columns)
    }
}

fn finish_csv(header: CsvHeader, columns: Vec<Vec<f64>>) -> Result<Spectrogram> {
    if columns.len() != header.frames {
        return Err(Error::DimensionMismatch {
            what: "spectrogram frame count",
            expected: header.frames,
            found: columns.len(),
        });
    }
    Spectrogram::from_columns(&columns, header.freq, header.time)
}

/// Header of the spectrogram CSV format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsvHeader {
    pub bins: usize,
    pub frames: usize,
    pub freq: Axis,
    pub time: Axis,
}

/// Incremental reader for the spectrogram CSV format, yielding one frame per
/// line. Used directly by the streaming tracker so frames can be consumed
/// from a pipe as they arrive.
pub struct SpectrogramCsvReader<R> {
    input: R,
    header: CsvHeader,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> SpectrogramCsvReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut buf = String::new();
        let mut line_no = 0;
        let header_line = loop {
            buf.clear();
            let read = input
                .read_line(&mut buf)
                .map_err(|e| Error::malformed(line_no + 1, e.to_string()))?;
            if read == 0 {
                return Err(Error::EmptyInput);
            }
            line_no += 1;
            let trimmed = buf.trim();
            // A literal column-name line is tolerated ahead of the values.
            if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("M,N,f0,df,t0,dt") {
                continue;
            }
            break trimmed.to_string();
        };
        let fields: Vec<&str> = header_line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(Error::malformed(
                line_no,
                format!("header needs 6 fields M,N,f0,df,t0,dt, found {}", fields.len()),
            ));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::malformed(line_no, format!("expected integer, found {s:?}")))
        };
        let parse_f64 = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::malformed(line_no, format!("expected number, found {s:?}")))
        };
        let header = CsvHeader {
            bins: parse_usize(fields[0])?,
            frames: parse_usize(fields[1])?,
            freq: Axis::new(parse_f64(fields[2])?, parse_f64(fields[3])?),
            time: Axis::new(parse_f64(fields[4])?, parse_f64(fields[5])?),
        };
        if header.bins == 0 {
            return Err(Error::malformed(line_no, "M must be positive"));
        }
        Ok(SpectrogramCsvReader {
            input,
            header,
            line_no,
            buf,
        })
    }

    pub fn header(&self) -> CsvHeader {
        self.header
    }

    /// Next frame, or `None` at end of input. Blank lines are skipped.
    pub fn next_frame(&mut self) -> Result<Option<Vec<f64>>> {
        loop {
            self.buf.clear();
            let read = self
                .input
                .read_line(&mut self.buf)
                .map_err(|e| Error::malformed(self.line_no + 1, e.to_string()))?;
            if read == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let trimmed = self.buf.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut column = Vec::with_capacity(self.header.bins);
            for field in trimmed.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::malformed(self.line_no, format!("expected number, found {field:?}"))
                })?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::malformed(
                        self.line_no,
                        format!("magnitude must be finite and nonnegative, found {v}"),
                    ));
                }
                column.push(v);
            }
            if column.len() != self.header.bins {
                return Err(Error::malformed(
                    self.line_no,
                    format!("expected {} values, found {}", self.header.bins, column.len()),
                ));
            }
            return Ok(Some(column));
        }
    }
}
