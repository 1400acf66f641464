use super::{NnError, Tensor};

/// Interleaved `[sin(t f_0), cos(t f_0), sin(t f_1), ...]` with
/// `f_i = 10000^(-2i/dim)`.
pub fn sinusoidal_embed(t: usize, dim: usize) -> Result<Tensor, NnError> {
    if !dim.is_multiple_of(2) {
        return Err(NnError::OddDimension(dim));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10000f64.powf(-(2.0 * i as f64) / dim as f64);
        let a = t as f64 * freq;
        out.push(a.sin());
        out.push(a.cos());
    }
    Ok(Tensor::vector(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_timestep() {
        assert_eq!(
            sinusoidal_embed(0, 4).unwrap().data(),
            &[0.0, 1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn deterministic_bounded_and_distinct() {
        let a = sinusoidal_embed(1, 16).unwrap();
        let b = sinusoidal_embed(2, 16).unwrap();
        assert_eq!(a, sinusoidal_embed(1, 16).unwrap());
        assert_ne!(a, b);
        for v in a.data().iter().chain(b.data()) {
            assert!((-1.0..=1.0).contains(v));
        }
        // first pair uses unit frequency
        assert!((a.data()[0] - 1f64.sin()).abs() < 1e-15);
        assert!((b.data()[1] - 2f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(matches!(
            sinusoidal_embed(3, 5),
            Err(NnError::OddDimension(5))
        ));
    }
}
