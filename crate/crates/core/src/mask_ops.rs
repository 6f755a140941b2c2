//! Pixel-level mask algorithms: overlap metrics, binarization, 8-connected
//! components and the exact Euclidean distance transform.

use crate::error::{check_dims, Result};
use crate::types::{BinaryMask, ProbabilityMap};

/// Threshold used wherever a probability map has to become a mask.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Intersection over union. Two empty masks count as a perfect match (1.0).
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// `value >= threshold` becomes foreground.
pub fn binarize(p: &ProbabilityMap, threshold: f64) -> BinaryMask {
    let bits = p.values().iter().map(|&x| x >= threshold).collect();
    BinaryMask::new(p.width(), p.height(), bits).expect("map dimensions are valid")
}

/// Number of positions where the two masks disagree.
pub fn pixel_delta(a: &BinaryMask, b: &BinaryMask) -> Result<usize> {
    check_dims(a.dims(), b.dims())?;
    Ok(a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count())
}

/// One 8-connected foreground region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Member pixels `(u, v)` in raster order; the first one is the
    /// topmost-leftmost pixel.
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
}

impl Component {
    pub fn anchor(&self) -> (usize, usize) {
        self.pixels[0]
    }

    pub fn to_mask(&self, width: usize, height: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(width, height);
        for &(u, v) in &self.pixels {
            m.set(u, v, true);
        }
        m
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn unite(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // keep the smaller raster index as root
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Labels 8-connected foreground components.
///
/// Components are sorted by area (largest first), then by the raster index
/// of their topmost-leftmost pixel.
pub fn connected_components(m: &BinaryMask) -> Vec<Component> {
    let (w, h) = m.dims();
    let bits = m.bits();
    let mut parent: Vec<usize> = (0..w * h).collect();
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if !bits[i] {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            if u > 0 && bits[i - 1] {
                unite(&mut parent, i, i - 1);
            }
            if v > 0 {
                let up = i - w;
                if bits[up] {
                    unite(&mut parent, i, up);
                }
                if u > 0 && bits[up - 1] {
                    unite(&mut parent, i, up - 1);
                }
                if u + 1 < w && bits[up + 1] {
                    unite(&mut parent, i, up + 1);
                }
            }
        }
    }

    let mut slot = vec![usize::MAX; w * h];
    let mut comps: Vec<Component> = Vec::new();
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = comps.len();
            comps.push(Component {
                pixels: Vec::new(),
                area: 0,
            });
        }
        let c = &mut comps[slot[root]];
        c.pixels.push((i % w, i / w));
        c.area += 1;
    }
    // stable sort keeps discovery order (= anchor raster order) among equal areas
    comps.sort_by_key(|c| std::cmp::Reverse(c.area));
    comps
}

/// Stands in for "infinitely far" in the squared-distance grids. Every padded
/// row and column contains background, so it never survives the two passes.
const FAR: f64 = 1e12;

/// Squared distances from the 1-D lower envelope of parabolas rooted at `f`.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        // z[0] = -inf stops the pop loop at k == 0
        let mut s = (fq - (f[v[k]] + (v[k] * v[k]) as f64)) / (2.0 * (q - v[k]) as f64);
        while s <= z[k] {
            k -= 1;
            s = (fq - (f[v[k]] + (v[k] * v[k]) as f64)) / (2.0 * (q - v[k]) as f64);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every foreground pixel to the nearest
/// background pixel. Positions outside the image count as background, so a
/// lone foreground pixel gets 1.0. Background pixels map to 0.
pub fn distance_transform(m: &BinaryMask) -> Vec<f64> {
    let (w, h) = m.dims();
    // one ring of virtual background around the image
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0f64; pw * ph];
    for v in 0..h {
        for u in 0..w {
            if m.get(u, v) {
                grid[(v + 1) * pw + u + 1] = FAR;
            }
        }
    }
    let n = pw.max(ph);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut vs = vec![0usize; n];
    let mut zs = vec![0.0; n + 1];

    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        edt_1d(&f[..ph], &mut out[..ph], &mut vs, &mut zs);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    for y in 0..ph {
        f[..pw].copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        edt_1d(&f[..pw], &mut out[..pw], &mut vs, &mut zs);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&out[..pw]);
    }

    let mut dist = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            dist.push(grid[(v + 1) * pw + u + 1].sqrt());
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |u, v| on.contains(&(u, v)))
    }

    /// Nearest background by exhaustive scan over the image plus its border ring.
    fn brute_edt(m: &BinaryMask) -> Vec<f64> {
        let (w, h) = m.dims();
        let mut out = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                if !m.get(u, v) {
                    continue;
                }
                let mut best = f64::INFINITY;
                for y in -1..=h as i64 {
                    for x in -1..=w as i64 {
                        let inside = x >= 0 && y >= 0 && x < w as i64 && y < h as i64;
                        if inside && m.get(x as usize, y as usize) {
                            continue;
                        }
                        let d = ((x - u as i64).pow(2) + (y - v as i64).pow(2)) as f64;
                        best = best.min(d);
                    }
                }
                out[v * w + u] = best.sqrt();
            }
        }
        out
    }

    #[test]
    fn iou_examples() {
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        let b = mask(2, 2, &[(0, 1), (1, 1)]);
        assert_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let e = BinaryMask::empty(2, 2);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert!(iou(&a, &BinaryMask::empty(3, 2)).is_err());
    }

    #[test]
    fn binarize_examples() {
        let p = ProbabilityMap::zeros(3, 2);
        assert!(binarize(&p, 0.5).is_empty());
        let p = ProbabilityMap::new(3, 1, vec![0.4, 0.6, 0.5]).unwrap();
        assert_eq!(binarize(&p, 0.5).bits(), &[false, true, true]);
    }

    #[test]
    fn pixel_delta_examples() {
        let a = BinaryMask::empty(4, 4);
        assert_eq!(pixel_delta(&a, &a).unwrap(), 0);
        assert_eq!(pixel_delta(&a, &BinaryMask::full(4, 4)).unwrap(), 16);
        assert_eq!(pixel_delta(&a, &mask(4, 4, &[(3, 1)])).unwrap(), 1);
        assert!(pixel_delta(&a, &BinaryMask::empty(4, 3)).is_err());
    }

    #[test]
    fn component_examples() {
        assert!(connected_components(&BinaryMask::empty(3, 3)).is_empty());
        let diag = mask(3, 3, &[(0, 0), (1, 1)]);
        assert_eq!(connected_components(&diag).len(), 1);
        let split = mask(3, 3, &[(1, 0), (1, 2)]);
        let comps = connected_components(&split);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].anchor(), (1, 0));
    }

    #[test]
    fn components_sorted_by_area_then_anchor() {
        // 1-pixel blob at top, 3-pixel bar below, 1-pixel blob further down
        let m = mask(5, 5, &[(4, 0), (0, 2), (1, 2), (2, 2), (4, 4)]);
        let comps = connected_components(&m);
        let areas: Vec<_> = comps.iter().map(|c| c.area).collect();
        assert_eq!(areas, vec![3, 1, 1]);
        assert_eq!(comps[1].anchor(), (4, 0));
        assert_eq!(comps[2].anchor(), (4, 4));
    }

    #[test]
    fn edt_examples() {
        let d = distance_transform(&BinaryMask::full(3, 3));
        assert_eq!(d, brute_edt(&BinaryMask::full(3, 3)));
        assert_eq!(d[4], 2.0);
        for i in [0, 1, 2, 3, 5, 6, 7, 8] {
            assert_eq!(d[i], 1.0);
        }
        let single = mask(4, 4, &[(2, 1)]);
        assert_eq!(distance_transform(&single)[4 + 2], 1.0);
        assert!(distance_transform(&BinaryMask::empty(4, 3)).iter().all(|&x| x == 0.0));
    }

    fn arb_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
        (1..=max, 1..=max, 0.0f64..1.0).prop_flat_map(|(w, h, density)| {
            proptest::collection::vec(proptest::bool::weighted(density), w * h)
                .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(400))]

        #[test]
        fn edt_matches_brute_force(m in arb_mask(16)) {
            prop_assert_eq!(distance_transform(&m), brute_edt(&m));
        }

        #[test]
        fn iou_symmetric_and_complement(a in arb_mask(8), seed in any::<u64>()) {
            let b = BinaryMask::from_fn(a.width(), a.height(), |u, v| (seed >> ((u * 7 + v) % 64)) & 1 == 1);
            prop_assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
            if !a.is_empty() && a.count() < a.width() * a.height() {
                prop_assert_eq!(iou(&a, &a.complement()).unwrap(), 0.0);
            }
            let xor = a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count();
            prop_assert_eq!(pixel_delta(&a, &b).unwrap(), xor);
            prop_assert_eq!(pixel_delta(&a, &b).unwrap() == 0, a == b);
        }

        #[test]
        fn components_partition_foreground(m in arb_mask(12)) {
            let comps = connected_components(&m);
            let mut seen = BinaryMask::empty(m.width(), m.height());
            for c in &comps {
                prop_assert_eq!(c.area, c.pixels.len());
                for &(u, v) in &c.pixels {
                    prop_assert!(!seen.get(u, v));
                    seen.set(u, v, true);
                }
            }
            prop_assert_eq!(seen, m);
            for pair in comps.windows(2) {
                prop_assert!(pair[0].area > pair[1].area
                    || (pair[0].area == pair[1].area
                        && (pair[0].anchor().1, pair[0].anchor().0) < (pair[1].anchor().1, pair[1].anchor().0)));
            }
        }
    }
}
