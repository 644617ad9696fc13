use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::{dot, log_sigmoid, sigmoid, Real};

use super::{Label, WeightedPair};

/// Global coefficient `g = α · η · (label − σ(dot))`.
///
/// The reference trainer and the parameter-server client both go through
/// this function, which keeps their arithmetic identical.
#[inline]
pub fn coefficient<T: Real>(dot: T, label: Label, weight: T, alpha: T) -> T {
    let target = if label == Label::Positive {
        T::one()
    } else {
        T::zero()
    };
    alpha * weight * (target - sigmoid(dot))
}

/// `v'_context += g · v_center` and `v_center += g · v'_context`, both
/// right-hand sides taken before the update.
#[inline]
pub fn apply_update<T: Real>(center: &mut [T], context: &mut [T], g: T) {
    for (c, o) in center.iter_mut().zip(context.iter_mut()) {
        let old_context = *o;
        *o = old_context + g * *c;
        *c = *c + g * old_context;
    }
}

/// One stochastic gradient ascent step on a single objective term.
/// Returns the coefficient that was applied.
pub fn sgd_step<T: Real>(table: &mut EmbeddingTable<T>, pair: &WeightedPair, alpha: T) -> Result<T> {
    let (center, context) = table.pair_mut(pair.center, pair.context);
    let d = dot(center, context);
    if !d.is_finite() {
        return Err(Error::NonFinite {
            token: format!("#{}", pair.center),
        });
    }
    let g = coefficient(d, pair.label, T::from_f64_lossy(pair.weight), alpha);
    apply_update(center, context, g);
    Ok(g)
}

/// Weighted sum of log-sigmoid terms: `η ln σ(v·v')` for positives and
/// `ln σ(−v·v')` for sampled and implicit negatives.
pub fn objective_value<T: Real>(table: &EmbeddingTable<T>, pairs: &[WeightedPair]) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let d = dot(table.input(p.center), table.output(p.context)).as_f64();
            match p.label {
                Label::Positive => p.weight * log_sigmoid(d),
                Label::Negative | Label::ImplicitNegative => p.weight * log_sigmoid(-d),
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_at_zero_dot() {
        let a = 0.025f64;
        assert_eq!(coefficient(0.0, Label::Positive, 1.0, a), 0.5 * a);
        assert_eq!(coefficient(0.0, Label::ImplicitNegative, 1.0, a), -0.5 * a);
        assert_eq!(coefficient(0.0, Label::Negative, 1.0, a), -0.5 * a);
    }

    #[test]
    fn negative_saturates_at_minus_alpha() {
        let g = coefficient(40.0f64, Label::Negative, 1.0, 0.1);
        assert!((g + 0.1).abs() < 1e-12);
    }

    #[test]
    fn step_on_zero_output_only_moves_output() {
        let mut t = EmbeddingTable::<f64>::zeros(2, 2);
        t.input_mut(0).copy_from_slice(&[1.0, 2.0]);
        let g = sgd_step(&mut t, &WeightedPair::positive(0, 1, 1.0), 0.1).unwrap();
        assert_eq!(g, 0.05);
        assert_eq!(t.output(1), &[0.05, 0.1]);
        assert_eq!(t.input(0), &[1.0, 2.0]);
    }

    #[test]
    fn non_finite_dot_is_an_error() {
        let mut t = EmbeddingTable::<f64>::zeros(1, 1);
        t.input_mut(0)[0] = f64::INFINITY;
        t.output_mut(0)[0] = 1.0;
        assert!(sgd_step(&mut t, &WeightedPair::positive(0, 0, 1.0), 0.1).is_err());
    }

    #[test]
    fn objective_at_zero_dots() {
        let t = EmbeddingTable::<f64>::zeros(3, 4);
        let pairs = vec![
            WeightedPair::positive(0, 1, 2.0),
            WeightedPair::negative(0, 2),
            WeightedPair::implicit_negative(1, 2),
        ];
        let expected = (2.0 + 1.0 + 1.0) * 0.5f64.ln();
        assert!((objective_value(&t, &pairs) - expected).abs() < 1e-12);
    }

    #[test]
    fn objective_single_positive() {
        let mut t = EmbeddingTable::<f64>::zeros(2, 2);
        t.input_mut(0).copy_from_slice(&[0.3, -0.2]);
        t.output_mut(1).copy_from_slice(&[1.0, 0.5]);
        let d: f64 = 0.3 - 0.1;
        let expected = 1.5 * (1.0 / (1.0 + (-d).exp())).ln();
        let got = objective_value(&t, &[WeightedPair::positive(0, 1, 1.5)]);
        assert!((got - expected).abs() < 1e-12);
    }
}
