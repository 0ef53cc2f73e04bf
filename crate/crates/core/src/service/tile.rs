use serde::{Deserialize, Serialize};

use crate::spectrogram::{Axis, Spectrogram};

/// A display tile: the spectrogram max-pooled into blocks of
/// `bin_block × frame_block` cells. Tile cell `(i, j)` covers bins
/// `i*bin_block ..` and frames `j*frame_block ..`, clipped to the edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub bins: usize,
    pub frames: usize,
    pub bin_block: usize,
    pub frame_block: usize,
    /// Axes of the full-resolution spectrogram.
    pub freq_axis: Axis,
    pub time_axis: Axis,
    /// Frame-major: `values[j * bins + i]`.
    pub values: Vec<f64>,
}

fn block(len: usize, max: Option<usize>) -> usize {
    match max {
        Some(max) if max > 0 && max < len => len.div_ceil(max),
        _ => 1,
    }
}

/// Max-pools `z` so that it is at most `max_frames` wide and `max_bins`
/// tall. `None` or zero leaves a dimension untouched.
pub fn pool_tile(z: &Spectrogram, max_frames: Option<usize>, max_bins: Option<usize>) -> Tile {
    let bin_block = block(z.bins(), max_bins);
    let frame_block = block(z.frames(), max_frames);
    let bins = z.bins().div_ceil(bin_block);
    let frames = z.frames().div_ceil(frame_block);
    let mut values = vec![f64::NEG_INFINITY; bins * frames];
    for (n, column) in z.columns().enumerate() {
        let row = &mut values[(n / frame_block) * bins..][..bins];
        for (m, v) in column.iter().enumerate() {
            let cell = &mut row[m / bin_block];
            *cell = cell.max(*v);
        }
    }
    Tile {
        bins,
        frames,
        bin_block,
        frame_block,
        freq_axis: z.freq_axis(),
        time_axis: z.time_axis(),
        values,
    }
}
