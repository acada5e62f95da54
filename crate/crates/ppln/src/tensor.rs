//! Minimal dense tensors for the convolutional paths.
//!
//! Row-major layouts: `Tensor3` is `C x H x W`, `Tensor4` is
//! `O x C x kH x kW`.

/// Dense rank-3 tensor (`channels x height x width`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn<F>(channels: usize, height: usize, width: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut t = Tensor3::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    *t.get_mut(c, y, x) = f(c, y, x);
                }
            }
        }
        t
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor size mismatch");
        Tensor3 {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    fn index(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn get_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.index(c, y, x);
        &mut self.data[i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Dense rank-4 kernel tensor (`out_channels x in_channels x kH x kW`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Tensor4 {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
        }
    }

    pub fn from_fn<F>(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        mut f: F,
    ) -> Self
    where
        F: FnMut(usize, usize, usize, usize) -> f64,
    {
        let mut t = Tensor4::zeros(out_channels, in_channels, kernel_h, kernel_w);
        for o in 0..out_channels {
            for c in 0..in_channels {
                for ky in 0..kernel_h {
                    for kx in 0..kernel_w {
                        *t.get_mut(o, c, ky, kx) = f(o, c, ky, kx);
                    }
                }
            }
        }
        t
    }

    pub fn from_vec(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        data: Vec<f64>,
    ) -> Self {
        assert_eq!(
            data.len(),
            out_channels * in_channels * kernel_h * kernel_w,
            "kernel size mismatch"
        );
        Tensor4 {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data,
        }
    }

    #[inline]
    fn index(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        debug_assert!(
            o < self.out_channels && c < self.in_channels && ky < self.kernel_h && kx < self.kernel_w
        );
        ((o * self.in_channels + c) * self.kernel_h + ky) * self.kernel_w + kx
    }

    #[inline]
    pub fn get(&self, o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        self.data[self.index(o, c, ky, kx)]
    }

    #[inline]
    pub fn get_mut(&mut self, o: usize, c: usize, ky: usize, kx: usize) -> &mut f64 {
        let i = self.index(o, c, ky, kx);
        &mut self.data[i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
