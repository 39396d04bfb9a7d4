//! Convolution and pooling as tensor contractions.
//!
//! An image `(C, H, W)` is rearranged into a patch tensor
//! `(H_out, W_out, C_in, KH, KW)` by im2col; convolution is then a single
//! contraction of the patch tensor with the kernel `(OUT, IN, KH, KW)`, and
//! average pooling a contraction with an all-ones and an all-α vector.
//! Convolution follows the cross-correlation convention (no kernel flip)
//! and padding is always zero padding.

use thiserror::Error;

use crate::tensor::{contract, ContractionSpec, DenseTensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("{axis}: (size {size} - kernel {kernel} + 2*pad {pad}) is not divisible by stride {stride}")]
    NonIntegralGeometry { axis: &'static str, size: usize, kernel: usize, pad: usize, stride: usize },
    #[error("{axis}: kernel {kernel} does not fit in size {size} with padding {pad}")]
    NonPositiveOutput { axis: &'static str, size: usize, kernel: usize, pad: usize },
    #[error("image has {image} channels but kernel expects {kernel}")]
    ChannelMismatch { image: usize, kernel: usize },
    #[error("kernel spatial dims {kernel:?} disagree with geometry {geometry:?}")]
    GeometryMismatch { kernel: (usize, usize), geometry: (usize, usize) },
    #[error("expected a rank-{expected} tensor, got dims {dims:?}")]
    BadShape { expected: usize, dims: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ConvError>;

/// Kernel size, stride and zero padding along height and width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeometry {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 {
            return Err(ConvError::InvalidGeometry(format!("kernel {kernel:?} must be at least 1x1")));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(ConvError::InvalidGeometry(format!("stride {stride:?} must be at least 1")));
        }
        Ok(Self {
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride_h: stride.0,
            stride_w: stride.1,
            pad_h: pad.0,
            pad_w: pad.1,
        })
    }

    pub fn square(kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        Self::new((kernel, kernel), (stride, stride), (pad, pad))
    }

    /// Output spatial size; the stride must divide the swept extent exactly.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let h_out = axis_output("height", h, self.kernel_h, self.pad_h, self.stride_h)?;
        let w_out = axis_output("width", w, self.kernel_w, self.pad_w, self.stride_w)?;
        Ok((h_out, w_out))
    }
}

fn axis_output(axis: &'static str, size: usize, kernel: usize, pad: usize, stride: usize) -> Result<usize> {
    let padded = size + 2 * pad;
    if size == 0 || padded < kernel {
        return Err(ConvError::NonPositiveOutput { axis, size, kernel, pad });
    }
    let span = padded - kernel;
    if span % stride != 0 {
        return Err(ConvError::NonIntegralGeometry { axis, size, kernel, pad, stride });
    }
    Ok(span / stride + 1)
}

pub const KERNEL_LABELS: [&str; 4] = ["OUT", "IN", "KH", "KW"];
pub const IMAGE_LABELS: [&str; 3] = ["C", "H", "W"];

/// 4-mode convolution kernel in `(OUT, IN, KH, KW)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel(DenseTensor);

impl Kernel {
    pub fn new(t: DenseTensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(ConvError::BadShape { expected: 4, dims: t.dims().to_vec() });
        }
        Ok(Self(t.without_labels().with_labels(&KERNEL_LABELS)?))
    }

    /// Ingests a kernel stored as `(KH, KW, IN, OUT)`, i.e. `K[x][y][c_in][c_out]`.
    pub fn from_hwio(t: DenseTensor) -> Result<Self> {
        if t.rank() != 4 {
            return Err(ConvError::BadShape { expected: 4, dims: t.dims().to_vec() });
        }
        Self::new(t.permute(&[3, 2, 0, 1])?)
    }

    pub fn zeros(out: usize, inp: usize, kh: usize, kw: usize) -> Result<Self> {
        Self::new(DenseTensor::zeros(&[out, inp, kh, kw])?)
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.0
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.0
    }

    pub fn dims(&self) -> [usize; 4] {
        let d = self.0.dims();
        [d[0], d[1], d[2], d[3]]
    }

    pub fn out_channels(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.0.dims()[2], self.0.dims()[3])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }
}

/// Image in `(C, H, W)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(DenseTensor);

impl Image {
    pub fn new(t: DenseTensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(ConvError::BadShape { expected: 3, dims: t.dims().to_vec() });
        }
        Ok(Self(t.without_labels().with_labels(&IMAGE_LABELS)?))
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.0
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }
}

/// `(H_out, W_out, C_in, KH, KW)` rearrangement of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor(DenseTensor);

impl PatchTensor {
    pub fn tensor(&self) -> &DenseTensor {
        &self.0
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.0
    }
}

/// Materializes the patch tensor; entries falling in the padding are zero.
pub fn im2col(img: &Image, g: &ConvGeometry) -> Result<PatchTensor> {
    let (c, h, w) = img.shape();
    let (h_out, w_out) = g.output_dims(h, w)?;
    let (kh, kw) = (g.kernel_h, g.kernel_w);
    let src = img.tensor().data();
    let mut out = vec![0.0; h_out * w_out * c * kh * kw];
    let mut off = 0;
    for i in 0..h_out {
        for j in 0..w_out {
            for ch in 0..c {
                for a in 0..kh {
                    let row = (i * g.stride_h + a) as isize - g.pad_h as isize;
                    for b in 0..kw {
                        let col = (j * g.stride_w + b) as isize - g.pad_w as isize;
                        if row >= 0 && (row as usize) < h && col >= 0 && (col as usize) < w {
                            out[off] = src[(ch * h + row as usize) * w + col as usize];
                        }
                        off += 1;
                    }
                }
            }
        }
    }
    Ok(PatchTensor(DenseTensor::new(vec![h_out, w_out, c, kh, kw], out)?))
}

/// Scatter-adds a patch-shaped tensor back onto an image of shape `(c, h, w)`;
/// the adjoint of [`im2col`]. Contributions landing in the padding are dropped.
pub fn col2im(patches: &DenseTensor, c: usize, h: usize, w: usize, g: &ConvGeometry) -> Result<Image> {
    let (h_out, w_out) = g.output_dims(h, w)?;
    let expected = [h_out, w_out, c, g.kernel_h, g.kernel_w];
    if patches.dims() != expected {
        return Err(TensorError::SizeMismatch(format!(
            "patch tensor {:?} does not match {expected:?}",
            patches.dims()
        ))
        .into());
    }
    let src = patches.data();
    let mut out = vec![0.0; c * h * w];
    let mut off = 0;
    for i in 0..h_out {
        for j in 0..w_out {
            for ch in 0..c {
                for a in 0..g.kernel_h {
                    let row = (i * g.stride_h + a) as isize - g.pad_h as isize;
                    for b in 0..g.kernel_w {
                        let col = (j * g.stride_w + b) as isize - g.pad_w as isize;
                        if row >= 0 && (row as usize) < h && col >= 0 && (col as usize) < w {
                            out[(ch * h + row as usize) * w + col as usize] += src[off];
                        }
                        off += 1;
                    }
                }
            }
        }
    }
    Image::new(DenseTensor::new(vec![c, h, w], out)?)
}

fn conv_spec() -> ContractionSpec {
    ContractionSpec::parse("ijcab,ocab->oij").expect("static spec")
}

/// `out(o,i,j) = sum_{c,a,b} patch(i,j,c,a,b) * K(o,c,a,b)`.
pub fn conv2d(img: &Image, k: &Kernel, g: &ConvGeometry) -> Result<Image> {
    check_kernel(img, k, g)?;
    let patches = im2col(img, g)?;
    conv2d_patches(&patches, k)
}

/// Convolution on an already materialized patch tensor.
pub fn conv2d_patches(patches: &PatchTensor, k: &Kernel) -> Result<Image> {
    let out = contract(&[patches.tensor(), k.tensor()], &conv_spec())?;
    Image::new(out)
}

fn check_kernel(img: &Image, k: &Kernel, g: &ConvGeometry) -> Result<()> {
    if img.channels() != k.in_channels() {
        return Err(ConvError::ChannelMismatch { image: img.channels(), kernel: k.in_channels() });
    }
    if k.spatial() != (g.kernel_h, g.kernel_w) {
        return Err(ConvError::GeometryMismatch { kernel: k.spatial(), geometry: (g.kernel_h, g.kernel_w) });
    }
    Ok(())
}

/// Geometry of a square pooling window without padding.
pub fn pool_geometry(window: usize, stride: usize) -> Result<ConvGeometry> {
    ConvGeometry::square(window, stride, 0)
}

/// Per-channel window mean, contracting the patch tensor with an all-ones
/// vector on one window mode and an all-α vector (α = 1/window²) on the other.
pub fn avg_pool(img: &Image, window: usize, stride: usize) -> Result<Image> {
    let g = pool_geometry(window, stride)?;
    let patches = im2col(img, &g)?;
    let ones = DenseTensor::constant_vector(window, 1.0)?;
    let alpha = DenseTensor::constant_vector(window, 1.0 / (window * window) as f64)?;
    let spec = ContractionSpec::parse("ijcab,a,b->cij").expect("static spec");
    Image::new(contract(&[patches.tensor(), &ones, &alpha], &spec)?)
}

/// The constant kernel that makes [`conv2d`] perform average pooling on `channels` channels.
pub fn avg_pool_kernel(channels: usize, window: usize) -> Result<Kernel> {
    let alpha = 1.0 / (window * window) as f64;
    Kernel::new(DenseTensor::from_fn(&[channels, channels, window, window], |ix| {
        if ix[0] == ix[1] {
            alpha
        } else {
            0.0
        }
    })?)
}

pub fn relu(t: &DenseTensor) -> DenseTensor {
    t.map(|x| x.max(0.0))
}

/// Per-window maximum. Not a contraction; computed directly.
pub fn max_pool(img: &Image, window: usize, stride: usize) -> Result<Image> {
    max_pool_with_argmax(img, window, stride).map(|(out, _)| out)
}

/// Max pooling that also returns, for every output pixel, the flat input
/// offset of the (first) maximal entry.
pub fn max_pool_with_argmax(img: &Image, window: usize, stride: usize) -> Result<(Image, Vec<usize>)> {
    let g = pool_geometry(window, stride)?;
    let (c, h, w) = img.shape();
    let (h_out, w_out) = g.output_dims(h, w)?;
    let src = img.tensor().data();
    let mut out = Vec::with_capacity(c * h_out * w_out);
    let mut arg = Vec::with_capacity(c * h_out * w_out);
    for ch in 0..c {
        for i in 0..h_out {
            for j in 0..w_out {
                let mut best = f64::NEG_INFINITY;
                let mut best_off = 0;
                for a in 0..window {
                    for b in 0..window {
                        let off = (ch * h + i * stride + a) * w + j * stride + b;
                        if src[off] > best {
                            best = src[off];
                            best_off = off;
                        }
                    }
                }
                out.push(best);
                arg.push(best_off);
            }
        }
    }
    Ok((Image::new(DenseTensor::new(vec![c, h_out, w_out], out)?)?, arg))
}
