use super::MetricError;
use crate::image::{histogram256, quantize, GrayImage};

fn entropy_of_counts<'a>(counts: impl IntoIterator<Item = &'a u64>, total: f64) -> f64 {
    counts
        .into_iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy in bits of the 256-level histogram.
pub fn entropy(img: &GrayImage) -> f64 {
    let hist = histogram256(img);
    entropy_of_counts(hist.iter(), img.len() as f64).max(0.0)
}

/// `H(a) + H(b) - H(a, b)` over the 256x256 joint histogram.
pub fn mutual_information(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    if !a.same_dims(b) {
        return Err(MetricError::dims(a, b));
    }
    let n = a.len() as f64;
    // Sorting the joint codes visits the occupied bins of the 256x256 table
    // in index order without allocating the table itself.
    let mut codes: Vec<u16> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| u16::from(quantize(x)) << 8 | u16::from(quantize(y)))
        .collect();
    codes.sort_unstable();
    let joint: Vec<u64> = codes
        .chunk_by(|p, q| p == q)
        .map(|run| run.len() as u64)
        .collect();
    let ha = entropy_of_counts(histogram256(a).iter(), n);
    let hb = entropy_of_counts(histogram256(b).iter(), n);
    let hab = entropy_of_counts(joint.iter(), n);
    Ok((ha + hb - hab).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_zero_entropy() {
        assert_eq!(entropy(&GrayImage::constant(7, 3, 0.4)), 0.0);
    }

    #[test]
    fn fair_coin() {
        let img = GrayImage::from_fn(4, 4, |x, _| if x < 2 { 0.0 } else { 1.0 });
        assert!((entropy(&img) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_over_levels() {
        let img = GrayImage::from_fn(16, 16, |x, y| (y * 16 + x) as f64 / 255.0);
        assert!((entropy(&img) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn mi_identities() {
        let a = GrayImage::from_fn(9, 9, |x, y| ((x * 3 + y * 5) % 7) as f64 / 6.0);
        assert!((mutual_information(&a, &a).unwrap() - entropy(&a)).abs() < 1e-12);
        let c = GrayImage::constant(9, 9, 0.2);
        assert_eq!(mutual_information(&c, &a).unwrap(), 0.0);
        let x = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let y = GrayImage::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert!((mutual_information(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_dimension_mismatch() {
        let a = GrayImage::constant(2, 2, 0.0);
        let b = GrayImage::constant(2, 3, 0.0);
        assert!(matches!(
            mutual_information(&a, &b),
            Err(MetricError::DimensionMismatch(_))
        ));
    }
}
