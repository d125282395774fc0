//! Forward-only 2-D convolution stages shared by the codec and fusion
//! networks.
//!
//! Kernels are held in `(out, in, k, k)` order, the order used by weight
//! bundles. The forward pass repacks them into a `(k, k, in) x out` matrix
//! and runs im2col + SGEMM over fixed-size row bands. Band boundaries only
//! depend on the geometry, so results are bit-identical whatever the rayon
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::FeatureMap;

/// Leaky-rectifier slope used by every activated stage.
pub const LEAKY_SLOPE: f32 = 0.01;

/// Target im2col band size, in f32 elements.
const BAND_ELEMS: usize = 1 << 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    /// Stride-2 convolution, output is half the input size.
    Down2,
    /// Output has the input size.
    Same,
    /// Nearest-neighbour ×2 upsampling followed by a stride-1 convolution.
    Up2,
}

#[inline]
pub fn leaky(v: f32, slope: f32) -> f32 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

#[derive(Debug, Clone)]
pub struct ConvStage {
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    resample: Resample,
    activation: Option<f32>,
    kernel: Vec<f32>,
    bias: Vec<f32>,
    packed: Vec<f32>,
}

impl PartialEq for ConvStage {
    fn eq(&self, other: &Self) -> bool {
        self.in_channels == other.in_channels
            && self.out_channels == other.out_channels
            && self.kernel_size == other.kernel_size
            && self.resample == other.resample
            && self.activation == other.activation
            && self.kernel == other.kernel
            && self.bias == other.bias
    }
}

impl ConvStage {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        resample: Resample,
        activation: Option<f32>,
        kernel: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidWeights("stage channels must be positive".into()));
        }
        if kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidWeights(format!(
                "kernel size must be odd, got {kernel_size}"
            )));
        }
        let expected = out_channels * in_channels * kernel_size * kernel_size;
        if kernel.len() != expected {
            return Err(Error::InvalidWeights(format!(
                "kernel has {} values, expected {expected} for ({out_channels},{in_channels},{kernel_size},{kernel_size})",
                kernel.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::InvalidWeights(format!(
                "bias has {} values, expected {out_channels}",
                bias.len()
            )));
        }
        if kernel.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidWeights("non-finite weight".into()));
        }
        let packed = pack_kernel(&kernel, in_channels, out_channels, kernel_size);
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            resample,
            activation,
            kernel,
            bias,
            packed,
        })
    }

    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        resample: Resample,
        activation: Option<f32>,
    ) -> Result<Self> {
        let n = out_channels * in_channels * kernel_size * kernel_size;
        Self::new(
            in_channels,
            out_channels,
            kernel_size,
            resample,
            activation,
            vec![0.0; n],
            vec![0.0; out_channels],
        )
    }

    /// Uniform weights in `[-1, 1) / sqrt(fan_in)` drawn from `rng`, zero bias.
    pub fn seeded(
        rng: &mut SplitMix64,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        resample: Resample,
        activation: Option<f32>,
    ) -> Result<Self> {
        let fan_in = (in_channels * kernel_size * kernel_size) as f64;
        let scale = 1.0 / fan_in.sqrt();
        let n = out_channels * in_channels * kernel_size * kernel_size;
        let kernel = (0..n).map(|_| (rng.next_signed() * scale) as f32).collect();
        Self::new(
            in_channels,
            out_channels,
            kernel_size,
            resample,
            activation,
            kernel,
            vec![0.0; out_channels],
        )
    }

    /// Stage whose output channel `o` copies input channel `map[o]` through
    /// the centre tap (`None` leaves the channel at zero).
    pub fn selector(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        resample: Resample,
        activation: Option<f32>,
        map: impl Fn(usize) -> Option<(usize, f32)>,
    ) -> Result<Self> {
        let mut stage = Self::zeros(in_channels, out_channels, kernel_size, resample, activation)?;
        let c = kernel_size / 2;
        for o in 0..out_channels {
            if let Some((i, w)) = map(o) {
                stage.kernel[((o * in_channels + i) * kernel_size + c) * kernel_size + c] = w;
            }
        }
        stage.packed = pack_kernel(&stage.kernel, in_channels, out_channels, kernel_size);
        Ok(stage)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn resample(&self) -> Resample {
        self.resample
    }

    pub fn activation(&self) -> Option<f32> {
        self.activation
    }

    /// Weights in `(out, in, k, k)` order.
    pub fn kernel(&self) -> &[f32] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// Output spatial dims for an input of `height x width`.
    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        match self.resample {
            Resample::Same => Ok((height, width)),
            Resample::Up2 => Ok((2 * height, 2 * width)),
            Resample::Down2 => {
                if !height.is_multiple_of(2) || !width.is_multiple_of(2) {
                    return Err(Error::geometry(format!(
                        "stride-2 stage needs even dims, got {height}x{width}"
                    )));
                }
                Ok((height / 2, width / 2))
            }
        }
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels() != self.in_channels {
            return Err(Error::geometry(format!(
                "stage expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let (oh, ow) = self.output_dims(input.height(), input.width())?;
        let upsampled;
        let (src, stride) = match self.resample {
            Resample::Up2 => {
                upsampled = input.upsample2();
                (&upsampled, 1)
            }
            Resample::Same => (input, 1),
            Resample::Down2 => (input, 2),
        };

        let k = self.kernel_size;
        let pad = k / 2;
        let cin = self.in_channels;
        let cout = self.out_channels;
        let kdim = k * k * cin;
        let band_rows = (BAND_ELEMS / (ow * kdim)).clamp(1, oh);
        let mut out = vec![0f32; oh * ow * cout];

        out.par_chunks_mut(band_rows * ow * cout)
            .enumerate()
            .for_each(|(band, out_band)| {
                let y0 = band * band_rows;
                let rows = out_band.len() / (ow * cout);
                let m = rows * ow;
                let mut cols = vec![0f32; m * kdim];
                for dy in 0..rows {
                    let y = y0 + dy;
                    for x in 0..ow {
                        let dst = &mut cols[(dy * ow + x) * kdim..(dy * ow + x + 1) * kdim];
                        for ky in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= src.height() as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= src.width() as isize {
                                    continue;
                                }
                                let off = (ky * k + kx) * cin;
                                dst[off..off + cin]
                                    .copy_from_slice(src.pixel(iy as usize, ix as usize));
                            }
                        }
                    }
                }
                // SAFETY: `cols` is m x kdim row-major, `packed` is kdim x cout
                // row-major and `out_band` is m x cout row-major; all lengths
                // were sized above.
                unsafe {
                    matrixmultiply::sgemm(
                        m,
                        kdim,
                        cout,
                        1.0,
                        cols.as_ptr(),
                        kdim as isize,
                        1,
                        self.packed.as_ptr(),
                        cout as isize,
                        1,
                        0.0,
                        out_band.as_mut_ptr(),
                        cout as isize,
                        1,
                    );
                }
                for px in out_band.chunks_exact_mut(cout) {
                    for (v, b) in px.iter_mut().zip(&self.bias) {
                        *v += b;
                        if let Some(slope) = self.activation {
                            *v = leaky(*v, slope);
                        }
                    }
                }
            });

        FeatureMap::from_vec(oh, ow, cout, out)
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

fn pack_kernel(kernel: &[f32], cin: usize, cout: usize, k: usize) -> Vec<f32> {
    let mut packed = vec![0f32; kernel.len()];
    for o in 0..cout {
        for i in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    packed[((ky * k + kx) * cin + i) * cout + o] =
                        kernel[((o * cin + i) * k + ky) * k + kx];
                }
            }
        }
    }
    packed
}
