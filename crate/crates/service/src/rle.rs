//! Run-length mask encoding used on the wire.
//!
//! Runs alternate background, foreground, background, ... over the pixels in
//! row-major order. The first run is always background and may be empty.

use loosecut::{Error, LabelMask, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub rle: Vec<u32>,
}

pub fn encode(mask: &LabelMask) -> RleMask {
    let mut rle = Vec::new();
    let mut current = 0u8;
    let mut run = 0u32;
    for &l in mask.labels() {
        if l != current {
            rle.push(run);
            current = l;
            run = 0;
        }
        run += 1;
    }
    rle.push(run);
    RleMask {
        width: mask.width(),
        height: mask.height(),
        rle,
    }
}

pub fn decode(m: &RleMask) -> Result<LabelMask> {
    let n = m.width * m.height;
    let total: u64 = m.rle.iter().map(|&r| r as u64).sum();
    if total != n as u64 {
        return Err(Error::InvalidInput(format!("runs cover {total} pixels, mask has {n}")));
    }
    let mut labels = Vec::with_capacity(n);
    for (i, &run) in m.rle.iter().enumerate() {
        labels.extend(std::iter::repeat_n((i % 2) as u8, run as usize));
    }
    LabelMask::new(m.width, m.height, labels)
}
