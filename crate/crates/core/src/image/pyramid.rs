use super::{downsample2, upsample2, Plane};

/// Multi-resolution stack; level `k + 1` is `ceil(dim / 2)` of level `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<Plane>,
}

impl Pyramid {
    /// Gaussian pyramid with `count` levels (level 0 is the input).
    pub fn gaussian(img: &Plane, count: usize) -> Self {
        assert!(count >= 1, "pyramid needs at least one level");
        let mut levels = Vec::with_capacity(count);
        levels.push(img.clone());
        for _ in 1..count {
            let next = downsample2(levels.last().unwrap());
            levels.push(next);
        }
        Self { levels }
    }

    /// Band-pass decomposition: `L_k = G_k - expand(G_{k+1})`, with the
    /// coarsest Gaussian level kept as the residual base.
    pub fn laplacian(img: &Plane, count: usize) -> Self {
        let gauss = Self::gaussian(img, count);
        let mut levels = Vec::with_capacity(count);
        for k in 0..count - 1 {
            let (w, h) = gauss.levels[k].dims();
            let up = upsample2(&gauss.levels[k + 1], w, h).expect("pyramid dims");
            levels.push(gauss.levels[k].zip_map(&up, |g, u| g - u));
        }
        levels.push(gauss.levels[count - 1].clone());
        Self { levels }
    }

    /// Inverse of [`Pyramid::laplacian`].
    pub fn collapse_laplacian(&self) -> Plane {
        let mut cur = self.levels.last().unwrap().clone();
        for band in self.levels.iter().rev().skip(1) {
            let (w, h) = band.dims();
            let up = upsample2(&cur, w, h).expect("pyramid dims");
            cur = band.zip_map(&up, |b, u| b + u);
        }
        cur
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_shrink_by_half_rounded_up() {
        let img = Plane::new(37, 20, vec![0.5; 740]);
        let p = Pyramid::gaussian(&img, 4);
        let dims: Vec<_> = p.levels.iter().map(Plane::dims).collect();
        assert_eq!(dims, vec![(37, 20), (19, 10), (10, 5), (5, 3)]);
    }

    #[test]
    fn laplacian_round_trip() {
        let img = Plane::new(
            23,
            17,
            (0..23 * 17)
                .map(|i| ((i * 37 % 101) as f64) / 100.0)
                .collect(),
        );
        let back = Pyramid::laplacian(&img, 4).collapse_laplacian();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
