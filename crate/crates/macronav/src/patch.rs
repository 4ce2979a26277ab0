//! 16x16 RGB image patches.
//!
//! Patches are the visual memory of the system: the simulator renders one per
//! detected object, the map stores a bounded list per object node, and the
//! Q-network consumes a fixed-size sample of them as the *action* input.
//! Pixels are stored row-major, channel-last, values in [0, 1].

use std::fmt;

pub const PATCH_SIDE: usize = 16;
pub const PATCH_CHANNELS: usize = 3;
pub const PATCH_LEN: usize = PATCH_SIDE * PATCH_SIDE * PATCH_CHANNELS;

/// One rendered object view. Immutable after construction; shared freely via
/// `Arc<Patch>` between the map and replayed transitions.
#[derive(Clone, PartialEq)]
pub struct Patch {
    data: Box<[f32; PATCH_LEN]>,
}

impl Patch {
    pub fn zeros() -> Self {
        Patch {
            data: Box::new([0.0; PATCH_LEN]),
        }
    }

    /// Build a patch by evaluating `f(row, col, channel)` for every pixel.
    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut p = Patch::zeros();
        for r in 0..PATCH_SIDE {
            for c in 0..PATCH_SIDE {
                for ch in 0..PATCH_CHANNELS {
                    p.data[Self::index(r, c, ch)] = f(r, c, ch);
                }
            }
        }
        p
    }

    pub fn from_slice(s: &[f32]) -> Option<Self> {
        if s.len() != PATCH_LEN {
            return None;
        }
        let mut p = Patch::zeros();
        p.data.copy_from_slice(s);
        Some(p)
    }

    #[inline]
    pub fn index(row: usize, col: usize, ch: usize) -> usize {
        (row * PATCH_SIDE + col) * PATCH_CHANNELS + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[Self::index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[Self::index(row, col, ch)] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data[..]
    }

    /// Mean value of one channel over all 256 pixels.
    pub fn mean_channel(&self, ch: usize) -> f64 {
        let mut sum = 0.0f64;
        for r in 0..PATCH_SIDE {
            for c in 0..PATCH_SIDE {
                sum += self.get(r, c, ch) as f64;
            }
        }
        sum / (PATCH_SIDE * PATCH_SIDE) as f64
    }

    pub fn all_in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl fmt::Debug for Patch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Patch[16x16x3, mean=({:.3},{:.3},{:.3})]",
            self.mean_channel(0),
            self.mean_channel(1),
            self.mean_channel(2)
        )
    }
}
