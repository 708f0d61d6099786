use super::{AudioSignal, FeatureConfig};
use crate::error::{Error, Result};

/// Pre-emphasised, windowed frames of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    frames: Vec<Vec<f64>>,
    frame_len: usize,
    sample_rate: u32,
}

impl Frames {
    pub fn new(frames: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let frame_len = frames.first().map(Vec::len).unwrap_or(0);
        if frames.is_empty() || frame_len == 0 {
            return Err(Error::TooFewFrames { needed: 1, got: 0 });
        }
        if frames.iter().any(|f| f.len() != frame_len) {
            return Err(Error::InvalidInput("frames differ in length".into()));
        }
        Ok(Self {
            frames,
            frame_len,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.frames.iter().map(Vec::as_slice)
    }
}

/// Splits a signal into `floor((N - L) / S) + 1` overlapping frames.
///
/// Pre-emphasis `y[n] = x[n] - c x[n-1]` runs over the whole signal before
/// framing (`y[0] = x[0]`), then every frame is multiplied by the window.
pub fn frame_signal(signal: &AudioSignal, config: &FeatureConfig) -> Result<Frames> {
    config.validate_for(signal.sample_rate())?;
    let len = config.window_len(signal.sample_rate());
    let shift = config.shift_len(signal.sample_rate());
    let x = signal.samples();
    if x.len() < len {
        return Err(Error::TooFewFrames { needed: len, got: x.len() });
    }

    let c = config.pre_emphasis;
    let emphasised: Vec<f64> = std::iter::once(x[0])
        .chain(x.windows(2).map(|w| w[1] - c * w[0]))
        .collect();

    let window = config.window_function.coefficients(len);
    let count = (x.len() - len) / shift + 1;
    let frames = (0..count)
        .map(|i| {
            let start = i * shift;
            emphasised[start..start + len]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect();
    Frames::new(frames, signal.sample_rate())
}
