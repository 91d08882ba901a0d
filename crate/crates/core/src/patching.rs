//! Soft split and soft composite: overlapped unfold/fold over feature maps.
//!
//! Feature maps are stored `(h, w, c)` (or `(t, h, w, c)` for a stack of
//! frames), row-major. A soft split cuts every frame into `k×k` patches whose
//! top-left corners sit at `(-p + i·s, -p + j·s)`; pixels outside the frame
//! read as zero. Patches are enumerated row-major over the grid, so row
//! `i·n_w + j` of the result is grid cell `(i, j)`, and each row is flattened
//! in `(channel, patch-row, patch-column)` order.
//!
//! A soft composite is the exact adjoint: every patch value is added back onto
//! the pixel it came from, contributions that land in the padding are
//! dropped, and overlapping contributions are summed. Dividing by the
//! composite of all-ones patches (the coverage map) turns the sum into a
//! per-pixel mean, so `normalized_composite(soft_split(x)) == x`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Extents of a feature map together with the patch grid laid over it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchGeometry {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    /// Patch side.
    pub k: usize,
    pub s: usize,
    /// Zero padding on every border.
    pub p: usize,
}

impl PatchGeometry {
    pub fn new(h: usize, w: usize, c: usize, k: usize, s: usize, p: usize) -> Result<Self> {
        let g = PatchGeometry { h, w, c, k, s, p };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let PatchGeometry { h, w, c, k, s, p } = *self;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Geometry(format!("empty feature map {h}x{w}x{c}")));
        }
        if k == 0 || s == 0 || s > k {
            return Err(Error::Geometry(format!(
                "need 1 <= stride <= patch, got patch {k} stride {s}"
            )));
        }
        if p >= k {
            return Err(Error::Geometry(format!("padding {p} must be below patch size {k}")));
        }
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::Geometry(format!(
                "patch {k} does not fit in padded {}x{}",
                h + 2 * p,
                w + 2 * p
            )));
        }
        Ok(())
    }

    /// Grid extents `(n_h, n_w)`; each axis is floored separately.
    pub fn grid(&self) -> (usize, usize) {
        let axis = |len: usize| (len + 2 * self.p - self.k) / self.s + 1;
        (axis(self.h), axis(self.w))
    }

    pub fn token_count(&self) -> usize {
        let (nh, nw) = self.grid();
        nh * nw
    }

    /// Length of one flattened patch, `k·k·c`.
    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.c
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn with_channels(&self, c: usize) -> Result<Self> {
        PatchGeometry::new(self.h, self.w, c, self.k, self.s, self.p)
    }

    /// Non-overlapping, unpadded tiling.
    pub fn is_hard(&self) -> bool {
        self.k == self.s && self.p == 0
    }

    pub fn overlaps(&self) -> bool {
        self.s < self.k
    }
}

/// Number of tokens a soft split produces (per frame).
pub fn token_count(geom: &PatchGeometry) -> Result<usize> {
    geom.validate()?;
    Ok(geom.token_count())
}

fn split_kernel<T: Element>(x: &[T], frames: usize, g: &PatchGeometry, out: &mut [T]) {
    let (nh, nw) = g.grid();
    let (k, c, pl) = (g.k, g.c, g.patch_len());
    let (h, w) = (g.h as isize, g.w as isize);
    for f in 0..frames {
        let frame = &x[f * g.frame_len()..(f + 1) * g.frame_len()];
        for gi in 0..nh {
            let r0 = (gi * g.s) as isize - g.p as isize;
            for gj in 0..nw {
                let c0 = (gj * g.s) as isize - g.p as isize;
                let row = &mut out[((f * nh + gi) * nw + gj) * pl..][..pl];
                for dy in 0..k {
                    let y = r0 + dy as isize;
                    if y < 0 || y >= h {
                        continue;
                    }
                    for dx in 0..k {
                        let xx = c0 + dx as isize;
                        if xx < 0 || xx >= w {
                            continue;
                        }
                        let src = &frame[(y as usize * g.w + xx as usize) * c..][..c];
                        for (ch, &v) in src.iter().enumerate() {
                            row[ch * k * k + dy * k + dx] = v;
                        }
                    }
                }
            }
        }
    }
}

fn composite_kernel<T: Element>(patches: &[T], frames: usize, g: &PatchGeometry, out: &mut [T]) {
    let (nh, nw) = g.grid();
    let (k, c, pl) = (g.k, g.c, g.patch_len());
    let (h, w) = (g.h as isize, g.w as isize);
    for f in 0..frames {
        let frame = &mut out[f * g.frame_len()..(f + 1) * g.frame_len()];
        for gi in 0..nh {
            let r0 = (gi * g.s) as isize - g.p as isize;
            for gj in 0..nw {
                let c0 = (gj * g.s) as isize - g.p as isize;
                let row = &patches[((f * nh + gi) * nw + gj) * pl..][..pl];
                for dy in 0..k {
                    let y = r0 + dy as isize;
                    if y < 0 || y >= h {
                        continue;
                    }
                    for dx in 0..k {
                        let xx = c0 + dx as isize;
                        if xx < 0 || xx >= w {
                            continue;
                        }
                        let dst = &mut frame[(y as usize * g.w + xx as usize) * c..][..c];
                        for (ch, v) in dst.iter_mut().enumerate() {
                            *v += row[ch * k * k + dy * k + dx];
                        }
                    }
                }
            }
        }
    }
}

/// Flattened patches of one or more frames.
#[derive(Clone, Debug)]
pub struct PatchSet<T: Element> {
    /// `(frames·n, k·k·c)`.
    pub patches: Tensor<T>,
    pub geometry: PatchGeometry,
    /// `None` for a single `(h, w, c)` map, `Some(t)` for `(t, h, w, c)`.
    pub frames: Option<usize>,
}

impl<T: Element> PatchSet<T> {
    /// Wraps `(frames·n, k·k·c)` rows, checking them against the geometry.
    pub fn new(patches: Tensor<T>, geometry: PatchGeometry, frames: Option<usize>) -> Result<Self> {
        geometry.validate()?;
        let t = frames.unwrap_or(1);
        let want = [t * geometry.token_count(), geometry.patch_len()];
        if patches.shape() != want {
            return Err(Error::shape("patch set", patches.shape(), &want));
        }
        Ok(PatchSet {
            patches,
            geometry,
            frames,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.unwrap_or(1)
    }

    fn map_shape(&self) -> Vec<usize> {
        let g = &self.geometry;
        match self.frames {
            Some(t) => vec![t, g.h, g.w, g.c],
            None => vec![g.h, g.w, g.c],
        }
    }
}

/// Cuts `x` (`(h, w, c)` or `(t, h, w, c)`) into overlapping patches.
pub fn soft_split<T: Element>(x: &Tensor<T>, geom: &PatchGeometry) -> Result<PatchSet<T>> {
    geom.validate()?;
    let shape = x.shape();
    let frames = match shape {
        [h, w, c] if (*h, *w, *c) == (geom.h, geom.w, geom.c) => None,
        [t, h, w, c] if (*h, *w, *c) == (geom.h, geom.w, geom.c) => Some(*t),
        _ => return Err(Error::shape("soft_split", shape, &[geom.h, geom.w, geom.c])),
    };
    let t = frames.unwrap_or(1);
    let g = *geom;
    let rows = t * g.token_count();
    let mut out = vec![T::zero(); rows * g.patch_len()];
    split_kernel(&x.data(), t, &g, &mut out);
    let patches = Tensor::from_op(
        "soft_split",
        vec![rows, g.patch_len()],
        out,
        vec![x.clone()],
        move |args| {
            let mut gx = vec![T::zero(); t * g.frame_len()];
            composite_kernel(args.grad, t, &g, &mut gx);
            vec![Some(gx)]
        },
    );
    Ok(PatchSet {
        patches,
        geometry: g,
        frames,
    })
}

/// Folds patches back onto their frames, summing overlaps.
pub fn soft_composite<T: Element>(ps: &PatchSet<T>) -> Result<Tensor<T>> {
    let g = ps.geometry;
    let t = ps.frame_count();
    let want = [t * g.token_count(), g.patch_len()];
    if ps.patches.shape() != want {
        return Err(Error::shape("soft_composite", ps.patches.shape(), &want));
    }
    let mut out = vec![T::zero(); t * g.frame_len()];
    composite_kernel(&ps.patches.data(), t, &g, &mut out);
    Ok(Tensor::from_op(
        "soft_composite",
        ps.map_shape(),
        out,
        vec![ps.patches.clone()],
        move |args| {
            let mut gp = vec![T::zero(); want[0] * want[1]];
            split_kernel(args.grad, t, &g, &mut gp);
            vec![Some(gp)]
        },
    ))
}

type CoverageKey = (usize, usize, usize, usize, usize);

fn coverage_cache() -> &'static Mutex<HashMap<CoverageKey, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<CoverageKey, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Per-pixel count of patches covering each pixel, `(h, w)` row-major.
/// Computed once per geometry; channel count does not matter.
pub fn coverage_counts(geom: &PatchGeometry) -> Result<Arc<Vec<f64>>> {
    geom.validate()?;
    let key = (geom.h, geom.w, geom.k, geom.s, geom.p);
    let counts = {
        let mut cache = coverage_cache().lock().expect("coverage cache poisoned");
        cache
            .entry(key)
            .or_insert_with(|| {
                let g1 = PatchGeometry { c: 1, ..*geom };
                let ones = vec![1.0f64; g1.token_count() * g1.patch_len()];
                let mut out = vec![0.0f64; g1.frame_len()];
                composite_kernel(&ones, 1, &g1, &mut out);
                Arc::new(out)
            })
            .clone()
    };
    if let Some(i) = counts.iter().position(|&v| v == 0.0) {
        return Err(Error::Coverage {
            y: i / geom.w,
            x: i % geom.w,
        });
    }
    Ok(counts)
}

/// `SC(1)`: the soft composite of all-ones patches, shape `(h, w, c)`.
pub fn coverage_map<T: Element>(geom: &PatchGeometry) -> Result<Tensor<T>> {
    let counts = coverage_counts(geom)?;
    let data = counts
        .iter()
        .flat_map(|&v| std::iter::repeat_n(T::lit(v), geom.c))
        .collect();
    Tensor::from_vec(&[geom.h, geom.w, geom.c], data)
}

/// Soft composite divided elementwise by the coverage map.
pub fn normalized_composite<T: Element>(ps: &PatchSet<T>) -> Result<Tensor<T>> {
    let cover = coverage_map::<T>(&ps.geometry)?;
    soft_composite(ps)?.div(&cover)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(h: usize, w: usize, c: usize, k: usize, s: usize, p: usize) -> PatchGeometry {
        PatchGeometry::new(h, w, c, k, s, p).unwrap()
    }

    /// Brute-force count of start positions `r = -p + i·s` with `r + k <= len + p`.
    fn enumerate_axis(len: usize, k: usize, s: usize, p: usize) -> usize {
        let (len, k, s, p) = (len as i64, k as i64, s as i64, p as i64);
        let mut r = -p;
        let mut n = 0;
        while r + k <= len + p {
            n += 1;
            r += s;
        }
        n as usize
    }

    #[test]
    fn token_count_examples() {
        assert_eq!(token_count(&geom(6, 6, 1, 3, 3, 0)).unwrap(), 4);
        assert_eq!(token_count(&geom(7, 7, 1, 7, 3, 3)).unwrap(), 9);
        assert_eq!(token_count(&geom(60, 108, 1, 7, 3, 3)).unwrap(), 720);
        for (h, w) in [(7, 7), (60, 108)] {
            let brute = enumerate_axis(h, 7, 3, 3) * enumerate_axis(w, 7, 3, 3);
            assert_eq!(token_count(&geom(h, w, 1, 7, 3, 3)).unwrap(), brute);
        }
    }

    #[test]
    fn degenerate_geometry_rejected() {
        assert!(PatchGeometry::new(2, 8, 1, 5, 1, 1).is_err());
        assert!(PatchGeometry::new(8, 8, 1, 3, 4, 0).is_err());
        assert!(PatchGeometry::new(8, 8, 1, 3, 2, 3).is_err());
        assert!(PatchGeometry::new(8, 8, 1, 0, 1, 0).is_err());
    }

    #[test]
    fn hard_split_partitions() {
        let g = geom(4, 6, 2, 2, 2, 0);
        let x: Vec<f64> = (0..g.frame_len()).map(|v| v as f64).collect();
        let xt = Tensor::<f64>::from_vec(&[4, 6, 2], x.clone()).unwrap();
        let ps = soft_split(&xt, &g).unwrap();
        let mut seen: Vec<f64> = ps.patches.to_vec();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, x);
        assert_eq!(soft_composite(&ps).unwrap().to_vec(), x);
    }

    #[test]
    fn constant_input_split() {
        let g = geom(5, 5, 1, 3, 2, 0);
        let ones = Tensor::<f64>::ones(&[5, 5, 1]);
        let ps = soft_split(&ones, &g).unwrap();
        assert_eq!(ps.patches.shape(), &[4, 9]);
        assert!(ps.patches.to_vec().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn split_entries_match_index_oracle() {
        let g = geom(8, 8, 2, 7, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..g.frame_len()).map(|_| rng.gen_range(1.0..2.0)).collect();
        let ps = soft_split(&Tensor::<f64>::from_vec(&[8, 8, 2], x.clone()).unwrap(), &g).unwrap();
        let p = ps.patches.to_vec();
        let (nh, nw) = g.grid();
        for gi in 0..nh {
            for gj in 0..nw {
                for ch in 0..2 {
                    for dy in 0..7 {
                        for dx in 0..7 {
                            let y = (gi * 3 + dy) as i64 - 3;
                            let xx = (gj * 3 + dx) as i64 - 3;
                            let want = if (0..8).contains(&y) && (0..8).contains(&xx) {
                                x[(y as usize * 8 + xx as usize) * 2 + ch]
                            } else {
                                0.0
                            };
                            let got = p[(gi * nw + gj) * g.patch_len() + ch * 49 + dy * 7 + dx];
                            assert_eq!(got, want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn coverage_on_5x5() {
        let g = geom(5, 5, 1, 3, 2, 0);
        let cov = coverage_map::<f64>(&g).unwrap().to_vec();
        // Per-pixel oracle: count windows [2i, 2i+3) x [2j, 2j+3) containing it.
        for y in 0..5 {
            for x in 0..5 {
                let cnt = |v: usize| (0..2).filter(|i| (2 * i..2 * i + 3).contains(&v)).count();
                assert_eq!(cov[y * 5 + x], (cnt(y) * cnt(x)) as f64);
            }
        }
        assert_eq!(cov[0], 1.0);
        assert_eq!(cov[2 * 5 + 2], 4.0);
        let mut vals: Vec<_> = cov.clone();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        assert_eq!(vals, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn coverage_with_padding_is_full() {
        let cov = coverage_map::<f64>(&geom(9, 9, 3, 7, 3, 3)).unwrap().to_vec();
        assert!(cov.iter().all(|&v| v >= 1.0));
        let hard = coverage_map::<f64>(&geom(6, 9, 2, 3, 3, 0)).unwrap().to_vec();
        assert!(hard.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn uncovered_pixel_is_an_error() {
        let g = geom(8, 8, 1, 3, 3, 0);
        assert!(matches!(
            coverage_map::<f64>(&g),
            Err(Error::Coverage { y: 6, x: 0 } | Error::Coverage { y: 0, x: 6 })
        ));
        let ps = PatchSet::new(Tensor::<f64>::ones(&[4, 9]), g, None).unwrap();
        assert!(normalized_composite(&ps).is_err());
    }

    #[test]
    fn normalized_all_ones() {
        let g = geom(9, 7, 2, 5, 2, 2);
        let ps = PatchSet::new(Tensor::<f64>::ones(&[g.token_count(), g.patch_len()]), g, None).unwrap();
        let y = normalized_composite(&ps).unwrap().to_vec();
        assert!(y.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn normalized_matches_weighted_mean_oracle() {
        let g = geom(7, 6, 2, 4, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = g.token_count();
        let p: Vec<f64> = (0..n * g.patch_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ps = PatchSet::new(
            Tensor::<f64>::from_vec(&[n, g.patch_len()], p.clone()).unwrap(),
            g,
            None,
        )
        .unwrap();
        let y = normalized_composite(&ps).unwrap().to_vec();
        let (nh, nw) = g.grid();
        for yy in 0..7i64 {
            for xx in 0..6i64 {
                for ch in 0..2 {
                    let mut acc = 0.0;
                    let mut cnt = 0.0;
                    for gi in 0..nh {
                        for gj in 0..nw {
                            let dy = yy - (gi as i64 * 2 - 1);
                            let dx = xx - (gj as i64 * 2 - 1);
                            if (0..4).contains(&dy) && (0..4).contains(&dx) {
                                acc += p[(gi * nw + gj) * g.patch_len() + ch * 16 + dy as usize * 4 + dx as usize];
                                cnt += 1.0;
                            }
                        }
                    }
                    let got = y[(yy * 6 + xx) as usize * 2 + ch];
                    assert!((got - acc / cnt).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn frame_batches_are_independent() {
        let g = geom(6, 5, 2, 3, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..3 * g.frame_len()).map(|_| rng.gen()).collect();
        let all = soft_split(&Tensor::<f64>::from_vec(&[3, 6, 5, 2], x.clone()).unwrap(), &g).unwrap();
        assert_eq!(all.patches.shape(), &[3 * g.token_count(), g.patch_len()]);
        let pa = all.patches.to_vec();
        for f in 0..3 {
            let one =
                Tensor::<f64>::from_vec(&[6, 5, 2], x[f * g.frame_len()..(f + 1) * g.frame_len()].to_vec()).unwrap();
            let pf = soft_split(&one, &g).unwrap().patches.to_vec();
            let span = g.token_count() * g.patch_len();
            assert_eq!(&pa[f * span..(f + 1) * span], &pf[..]);
        }
        assert_eq!(soft_composite(&all).unwrap().shape(), &[3, 6, 5, 2]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = geom(6, 6, 1, 3, 3, 0);
        assert!(soft_split(&Tensor::<f64>::ones(&[6, 5, 1]), &g).is_err());
        assert!(PatchSet::new(Tensor::<f64>::ones(&[3, 9]), g, None).is_err());
    }
}
