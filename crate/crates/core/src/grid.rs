use crate::error::FieldError;

/// Wavevector with fixed storage; components beyond the grid dimension are zero.
pub type Mode = [i64; 3];

/// Shorthand for a 2D wavevector.
pub fn mode2(kx: i64, ky: i64) -> Mode {
    [kx, ky, 0]
}

/// Shorthand for a 3D wavevector.
pub fn mode3(kx: i64, ky: i64, kz: i64) -> Mode {
    [kx, ky, kz]
}

/// Periodic spectral grid on the unit torus: `size` modes per axis in FFT
/// layout, wavenumbers `-size/2..=size/2` with the Nyquist plane kept empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    size: usize,
}

impl Grid {
    pub fn new(dim: usize, size: usize) -> Result<Self, FieldError> {
        if dim != 2 && dim != 3 {
            return Err(FieldError::InvalidGrid(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if size < 4 || !size.is_power_of_two() {
            return Err(FieldError::InvalidGrid(format!(
                "grid size must be an even power of two >= 4, got {size}"
            )));
        }
        Ok(Self { dim, size })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Total number of stored modes, `size^dim`.
    pub fn len(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest retained wavenumber per axis, `size/2 - 1` (Nyquist excluded).
    pub fn max_wave(&self) -> i64 {
        self.size as i64 / 2 - 1
    }

    /// Signed wavenumber of FFT slot `j`.
    #[inline]
    pub fn wave_of_slot(&self, j: usize) -> i64 {
        let n = self.size as i64;
        let j = j as i64;
        if j <= n / 2 {
            j
        } else {
            j - n
        }
    }

    /// FFT slot of signed wavenumber `k`, valid for `|k| <= size/2`.
    #[inline]
    fn slot(&self, k: i64) -> usize {
        let n = self.size as i64;
        debug_assert!(k.abs() <= n / 2);
        (if k >= 0 { k } else { k + n }) as usize
    }

    /// Whether `k` lies inside the retained band `|k_i| <= size/2 - 1`.
    #[inline]
    pub fn in_band(&self, k: &Mode) -> bool {
        let m = self.max_wave();
        k[..self.dim].iter().all(|&ki| ki.abs() <= m)
            && k[self.dim..].iter().all(|&ki| ki == 0)
    }

    /// Flat index of wavevector `k`, or `None` when a component leaves the
    /// retained band.
    #[inline]
    pub fn flat_index(&self, k: &Mode) -> Option<usize> {
        if !self.in_band(k) {
            return None;
        }
        let mut idx = 0usize;
        for &ki in &k[..self.dim] {
            idx = idx * self.size + self.slot(ki);
        }
        Some(idx)
    }

    /// Wavevector stored at flat index `idx`.
    #[inline]
    pub fn mode_at(&self, idx: usize) -> Mode {
        let mut k = [0i64; 3];
        let mut rest = idx;
        for a in (0..self.dim).rev() {
            k[a] = self.wave_of_slot(rest % self.size);
            rest /= self.size;
        }
        debug_assert_eq!(rest, 0);
        k
    }

    /// Iterate `(flat_index, wavevector)` over every stored mode.
    pub fn modes(&self) -> ModeIter {
        ModeIter {
            grid: *self,
            idx: 0,
            len: self.len(),
            slots: [0; 3],
        }
    }

    /// |k|^2 as an integer.
    #[inline]
    pub fn wave_sq(k: &Mode) -> i64 {
        k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
    }
}

/// Odometer-style mode iterator; avoids per-mode division.
pub struct ModeIter {
    grid: Grid,
    idx: usize,
    len: usize,
    slots: [usize; 3],
}

impl Iterator for ModeIter {
    type Item = (usize, Mode);

    #[inline]
    fn next(&mut self) -> Option<(usize, Mode)> {
        if self.idx >= self.len {
            return None;
        }
        let d = self.grid.dim;
        let mut k = [0i64; 3];
        for a in 0..d {
            k[a] = self.grid.wave_of_slot(self.slots[a]);
        }
        let item = (self.idx, k);
        self.idx += 1;
        for a in (0..d).rev() {
            self.slots[a] += 1;
            if self.slots[a] < self.grid.size {
                break;
            }
            self.slots[a] = 0;
        }
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rem = self.len - self.idx;
        (rem, Some(rem))
    }
}
