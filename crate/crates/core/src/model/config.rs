use serde::{Deserialize, Serialize};

use crate::autodiff::conv_out_len;
use crate::error::{Error, Result};

/// One convolution block: conv, PReLU, then optional non-overlapping max pooling.
/// Kernels are zero-padded by `kernel / 2` on each side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    /// `[time, frequency]`
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub pool: Option<[usize; 2]>,
}

impl ConvLayer {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, pool: Option<usize>) -> Self {
        Self {
            out_channels,
            kernel: [kernel, kernel],
            stride: [stride, stride],
            pool: pool.map(|p| [p, p]),
        }
    }

    pub fn padding(&self) -> [usize; 2] {
        [self.kernel[0] / 2, self.kernel[1] / 2]
    }

    /// Output `(time, freq)` extent for an input extent, `None` if it collapses.
    pub fn output_extent(&self, time: usize, freq: usize) -> Option<(usize, usize)> {
        let pad = self.padding();
        let t = conv_out_len(time, self.kernel[0], self.stride[0], pad[0])?;
        let f = conv_out_len(freq, self.kernel[1], self.stride[1], pad[1])?;
        match self.pool {
            Some([pt, pf]) => {
                let (t, f) = (t / pt, f / pf);
                (t > 0 && f > 0).then_some((t, f))
            }
            None => Some((t, f)),
        }
    }
}

impl std::fmt::Display for ConvLayer {
    /// `16x7x7s2` or `32x3x3s1p2` (channels x kernel_t x kernel_f, stride, pool).
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}s{}",
            self.out_channels, self.kernel[0], self.kernel[1], self.stride[0]
        )?;
        if self.stride[1] != self.stride[0] {
            write!(f, ",{}", self.stride[1])?;
        }
        if let Some([pt, pf]) = self.pool {
            write!(f, "p{pt}")?;
            if pf != pt {
                write!(f, ",{pf}")?;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for ConvLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("bad conv layer {s:?}, expected e.g. 32x3x3s1p2"));
        let (head, pool) = match s.split_once('p') {
            Some((h, p)) => (h, Some(p)),
            None => (s, None),
        };
        let (dims, stride) = head.split_once('s').ok_or_else(bad)?;
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [out_channels, kt, kf] = dims[..] else {
            return Err(bad());
        };
        let pair = |p: &str| -> Result<[usize; 2]> {
            let v: Vec<usize> = p
                .split(',')
                .map(|d| d.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            match v[..] {
                [a] => Ok([a, a]),
                [a, b] => Ok([a, b]),
                _ => Err(bad()),
            }
        };
        Ok(Self {
            out_channels,
            kernel: [kt, kf],
            stride: pair(stride)?,
            pool: pool.map(pair).transpose()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Spectrogram bins per frame (`L_F`).
    pub input_bins: usize,
    pub conv_stack: Vec<ConvLayer>,
    /// Hidden width of each GRU direction.
    pub rnn_width: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_bins: 128,
            conv_stack: vec![
                ConvLayer::new(16, 7, 2, None),
                ConvLayer::new(32, 3, 1, Some(2)),
                ConvLayer::new(32, 3, 1, Some(2)),
            ],
            rnn_width: 128,
            feature_dim: 64,
            n_classes: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .conv_stack
            .first()
            .ok_or_else(|| Error::config("conv stack must not be empty"))?;
        for (i, layer) in self.conv_stack.iter().enumerate() {
            if layer.out_channels == 0
                || layer.kernel.contains(&0)
                || layer.stride.contains(&0)
                || layer.pool.is_some_and(|p| p.contains(&0))
            {
                return Err(Error::config(format!(
                    "conv layer {i} has a zero dimension"
                )));
            }
            if layer.kernel[0] > first.kernel[0] || layer.kernel[1] > first.kernel[1] {
                return Err(Error::config(format!(
                    "conv layer {i} kernel {:?} exceeds the first layer's {:?}",
                    layer.kernel, first.kernel
                )));
            }
        }
        if self.input_bins == 0 || self.rnn_width == 0 || self.feature_dim == 0 {
            return Err(Error::config(
                "input_bins, rnn_width and feature_dim must be positive",
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        self.sequence_dim()?;
        Ok(())
    }

    /// `(channels, time, freq)` after each conv block for an input of `frames`.
    pub fn layer_shapes(&self, frames: usize) -> Result<Vec<(usize, usize, usize)>> {
        let (mut t, mut f) = (frames, self.input_bins);
        let mut shapes = Vec::with_capacity(self.conv_stack.len());
        for (i, layer) in self.conv_stack.iter().enumerate() {
            let (nt, nf) = layer
                .output_extent(t, f)
                .ok_or(Error::InputTooShort { frames, layer: i })?;
            t = nt;
            f = nf;
            shapes.push((layer.out_channels, t, f));
        }
        Ok(shapes)
    }

    /// Sequence length `T'` produced by the conv stack.
    pub fn output_frames(&self, frames: usize) -> Result<usize> {
        Ok(self
            .layer_shapes(frames)?
            .last()
            .map(|s| s.1)
            .unwrap_or(frames))
    }

    /// Width of each sequence step fed to the GRUs (`channels * freq`).
    pub fn sequence_dim(&self) -> Result<usize> {
        // frequency extent does not depend on time, so probe with a long input
        let probe = self.min_frames().unwrap_or(1).max(1);
        let shapes = self.layer_shapes(probe)?;
        let (c, _, f) = *shapes.last().expect("nonempty stack");
        Ok(c * f)
    }

    /// Smallest frame count the conv stack accepts.
    pub fn min_frames(&self) -> Option<usize> {
        (1..=4096).find(|&t| self.layer_shapes(t).is_ok())
    }

    pub fn rnn_output_dim(&self) -> usize {
        2 * self.rnn_width
    }
}
