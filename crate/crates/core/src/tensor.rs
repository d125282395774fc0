//! Dense feature maps, four-level pyramids and patch grids.
//!
//! Everything is stored row-major as `(row, column, channel)`, so the
//! channels of one pixel are contiguous and one patch row of width `B`
//! is a contiguous run of `B * channels` values.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Number of levels in every [`FeaturePyramid`].
pub const PYRAMID_LEVELS: usize = 4;

const FMAP_MAGIC: &[u8; 5] = b"FMAP1";

#[derive(Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureMap")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        check_dims(height, width, channels)?;
        Ok(Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        })
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::geometry(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let idx = self.index(row, col, ch);
        self.data[idx] = value;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = self.index(row, col, 0);
        &self.data[start..start + self.channels]
    }

    /// One full row, `width * channels` values.
    #[inline]
    pub fn row(&self, row: usize) -> &[f32] {
        let len = self.width * self.channels;
        &self.data[row * len..(row + 1) * len]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> FeatureMap {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> FeatureMap {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(Error::geometry(format!(
                "cannot add {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(self.with_data(
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&self) -> FeatureMap {
        let (h, w, ch) = self.dims();
        let mut data = Vec::with_capacity(4 * self.data.len());
        for r in 0..2 * h {
            for c in 0..2 * w {
                data.extend_from_slice(self.pixel(r / 2, c / 2));
            }
        }
        FeatureMap {
            height: 2 * h,
            width: 2 * w,
            channels: ch,
            data,
        }
    }

    /// Channel-wise concatenation of maps sharing the same spatial dims.
    pub fn concat_channels(maps: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::geometry("concat of zero maps"))?;
        let (h, w) = (first.height, first.width);
        if let Some(bad) = maps.iter().find(|m| m.height != h || m.width != w) {
            return Err(Error::geometry(format!(
                "concat spatial mismatch: {h}x{w} vs {}x{}",
                bad.height, bad.width
            )));
        }
        let channels: usize = maps.iter().map(|m| m.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for r in 0..h {
            for c in 0..w {
                for m in maps {
                    data.extend_from_slice(m.pixel(r, c));
                }
            }
        }
        Ok(FeatureMap {
            height: h,
            width: w,
            channels,
            data,
        })
    }

    /// Centered crop to `height x width`.
    pub fn crop_center(&self, height: usize, width: usize) -> Result<FeatureMap> {
        if height > self.height || width > self.width || height == 0 || width == 0 {
            return Err(Error::geometry(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        let top = (self.height - height) / 2;
        let left = (self.width - width) / 2;
        self.window(top, left, height, width)
    }

    /// Copy of the spatial window starting at (`top`, `left`).
    pub fn window(&self, top: usize, left: usize, height: usize, width: usize) -> Result<FeatureMap> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::geometry("window exceeds map bounds"));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in top..top + height {
            let start = self.index(r, left, 0);
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        FeatureMap::from_vec(height, width, self.channels, data)
    }

    /// Bytes owned by the value buffer.
    pub fn heap_bytes(&self) -> usize {
        self.data.capacity() * std::mem::size_of::<f32>()
    }

    fn with_data(&self, data: Vec<f32>) -> FeatureMap {
        debug_assert_eq!(data.len(), self.data.len());
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    pub fn write_fmap<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(FMAP_MAGIC)?;
        for d in [self.height, self.width, self.channels] {
            let d = u32::try_from(d)
                .map_err(|_| Error::geometry("dimension does not fit in u32"))?;
            out.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_fmap<R: Read>(mut input: R) -> Result<FeatureMap> {
        let bad = |reason: &str| Error::Format {
            kind: "FMAP1",
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 5];
        input
            .read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != FMAP_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut word = [0u8; 4];
            input
                .read_exact(&mut word)
                .map_err(|_| bad("truncated header"))?;
            *d = u32::from_le_bytes(word) as usize;
        }
        let [height, width, channels] = dims;
        let count = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| bad("dimension overflow"))?;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != count * 4 {
            return Err(bad(&format!(
                "expected {} payload bytes, found {}",
                count * 4,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        FeatureMap::from_vec(height, width, channels, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_fmap(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureMap> {
        let file = std::fs::File::open(path)?;
        Self::read_fmap(std::io::BufReader::new(file))
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::geometry(format!(
            "feature map dims must be positive, got {height}x{width}x{channels}"
        )));
    }
    Ok(())
}

/// Four maps at dyadic scales: level `h` is `(H/2^h) x (W/2^h) x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    base_height: usize,
    base_width: usize,
    channels: usize,
    levels: [FeatureMap; PYRAMID_LEVELS],
}

impl FeaturePyramid {
    /// Builds a pyramid from levels `h = 1..=4` in order, inferring the base
    /// dims from level 1.
    pub fn new(levels: [FeatureMap; PYRAMID_LEVELS]) -> Result<Self> {
        let base_height = levels[0].height() * 2;
        let base_width = levels[0].width() * 2;
        let channels = levels[0].channels();
        for (idx, map) in levels.iter().enumerate() {
            let scale = 1usize << (idx + 1);
            let expected = (base_height / scale, base_width / scale, channels);
            if !base_height.is_multiple_of(scale) || !base_width.is_multiple_of(scale) || map.dims() != expected {
                return Err(Error::geometry(format!(
                    "pyramid level {} has dims {:?}, expected {:?}",
                    idx + 1,
                    map.dims(),
                    expected
                )));
            }
        }
        Ok(Self {
            base_height,
            base_width,
            channels,
            levels,
        })
    }

    /// Level `h` in `1..=4`.
    pub fn level(&self, h: usize) -> &FeatureMap {
        assert!((1..=PYRAMID_LEVELS).contains(&h), "pyramid level {h} out of range");
        &self.levels[h - 1]
    }

    pub fn levels(&self) -> &[FeatureMap; PYRAMID_LEVELS] {
        &self.levels
    }

    pub fn into_levels(self) -> [FeatureMap; PYRAMID_LEVELS] {
        self.levels
    }

    pub fn base_height(&self) -> usize {
        self.base_height
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn heap_bytes(&self) -> usize {
        self.levels.iter().map(FeatureMap::heap_bytes).sum()
    }
}

/// `B x B` windows at stride `s` over a `height x width` map.
///
/// `i` runs over columns (bounded by `I`) and `j` over rows (bounded by
/// `J`); trailing columns or rows that do not fit a full window are not
/// covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub stride: usize,
    pub i_max: usize,
    pub j_max: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize, stride: usize) -> Result<Self> {
        if patch == 0 || stride == 0 {
            return Err(Error::geometry("patch size and stride must be positive"));
        }
        if patch > height || patch > width {
            return Err(Error::geometry(format!(
                "patch size {patch} exceeds map {height}x{width}"
            )));
        }
        Ok(Self {
            height,
            width,
            patch,
            stride,
            i_max: (width - patch) / stride,
            j_max: (height - patch) / stride,
        })
    }

    /// Grid over the spatial dims of `map`.
    pub fn over(map: &FeatureMap, patch: usize, stride: usize) -> Result<Self> {
        Self::new(map.height(), map.width(), patch, stride)
    }

    /// Number of patch columns, `I + 1`.
    #[inline]
    pub fn cols(&self) -> usize {
        self.i_max + 1
    }

    /// Number of patch rows, `J + 1`.
    #[inline]
    pub fn rows(&self) -> usize {
        self.j_max + 1
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cols() * self.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Top-left `(row, col)` of patch `(i, j)`.
    #[inline]
    pub fn origin(&self, i: usize, j: usize) -> (usize, usize) {
        (j * self.stride, i * self.stride)
    }

    /// Linear index with `i` fastest.
    #[inline]
    pub fn linear(&self, i: usize, j: usize) -> usize {
        j * self.cols() + i
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i <= self.i_max && j <= self.j_max
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if self.contains(i, j) {
            Ok(())
        } else {
            Err(Error::IndexOutOfBounds {
                i,
                j,
                i_max: self.i_max,
                j_max: self.j_max,
            })
        }
    }

    fn check_map(&self, map: &FeatureMap) -> Result<()> {
        if map.height() != self.height || map.width() != self.width {
            return Err(Error::geometry(format!(
                "grid built for {}x{} used on {}x{} map",
                self.height,
                self.width,
                map.height(),
                map.width()
            )));
        }
        Ok(())
    }

    /// True when the windows tile the map exactly once.
    pub fn is_partition(&self) -> bool {
        self.stride == self.patch
            && self.height.is_multiple_of(self.patch)
            && self.width.is_multiple_of(self.patch)
    }

    /// All `(i, j)` pairs, `i` fastest.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows()).flat_map(move |j| (0..self.cols()).map(move |i| (i, j)))
    }
}

/// Read-only `B x B x C` window of a [`FeatureMap`].
#[derive(Debug, Clone, Copy)]
pub struct PatchView<'a> {
    map: &'a FeatureMap,
    row: usize,
    col: usize,
    size: usize,
}

impl<'a> PatchView<'a> {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.map.channels()
    }

    /// Top-left `(row, col)` in the source map.
    pub fn origin(&self) -> (usize, usize) {
        (self.row, self.col)
    }

    pub fn len(&self) -> usize {
        self.size * self.size * self.map.channels()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Contiguous `size * channels` values of patch row `dy`.
    #[inline]
    pub fn row(&self, dy: usize) -> &'a [f32] {
        let start = self.map.index(self.row + dy, self.col, 0);
        &self.map.data()[start..start + self.size * self.map.channels()]
    }

    pub fn get(&self, dy: usize, dx: usize, ch: usize) -> f32 {
        self.map.get(self.row + dy, self.col + dx, ch)
    }

    /// Values in `(row, col, channel)` order.
    pub fn iter(&self) -> impl Iterator<Item = f32> + Clone + 'a {
        let view = *self;
        (0..self.size).flat_map(move |dy| view.row(dy).iter().copied())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.iter().collect()
    }
}

pub fn extract_patch<'a>(
    map: &'a FeatureMap,
    grid: &PatchGrid,
    i: usize,
    j: usize,
) -> Result<PatchView<'a>> {
    grid.check_map(map)?;
    grid.check(i, j)?;
    let (row, col) = grid.origin(i, j);
    Ok(PatchView {
        map,
        row,
        col,
        size: grid.patch,
    })
}

/// Overwrites patch `(i, j)` of a non-overlapping grid with `values`
/// (`B * B * channels`, row-major).
pub fn write_patch(
    map: &mut FeatureMap,
    grid: &PatchGrid,
    i: usize,
    j: usize,
    values: &[f32],
) -> Result<()> {
    if grid.stride != grid.patch {
        return Err(Error::ContractViolation(format!(
            "write_patch needs a non-overlapping grid, got B={} s={}",
            grid.patch, grid.stride
        )));
    }
    grid.check_map(map)?;
    grid.check(i, j)?;
    let row_len = grid.patch * map.channels();
    if values.len() != grid.patch * row_len {
        return Err(Error::geometry(format!(
            "patch has {} values, expected {}",
            values.len(),
            grid.patch * row_len
        )));
    }
    let (row, col) = grid.origin(i, j);
    for (dy, src) in values.chunks_exact(row_len).enumerate() {
        let start = map.index(row + dy, col, 0);
        map.data_mut()[start..start + row_len].copy_from_slice(src);
    }
    Ok(())
}
