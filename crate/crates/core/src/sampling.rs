//! Small random-variate helpers shared by the data generator and the
//! instance fuzzer.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::dist::ClassDistribution;

/// Symmetric Dirichlet draw via normalized Gamma variates.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, concentration: f64, classes: usize) -> ClassDistribution {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every Gamma draw underflowed; all mass lands on one class.
        draws = vec![0.0; classes];
        draws[rng.random_range(0..classes)] = 1.0;
    }
    let sum: f64 = draws.iter().sum();
    if (sum - 1.0).abs() > crate::dist::PROB_EPS {
        draws.iter_mut().for_each(|v| *v /= sum);
    }
    ClassDistribution::new(draws).expect("normalized draw")
}

/// `n` labels drawn i.i.d. from `p`.
pub fn labels<R: Rng + ?Sized>(rng: &mut R, p: &ClassDistribution, n: usize) -> Vec<usize> {
    let index = WeightedIndex::new(p.probs()).expect("distribution has positive mass");
    (0..n).map(|_| index.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn dirichlet_is_a_distribution() {
        let mut rng = StreamKey::root(3).rng();
        for kappa in [0.01, 0.1, 1.0, 1e6] {
            let p = dirichlet(&mut rng, kappa, 10);
            assert_eq!(p.classes(), 10);
        }
    }

    #[test]
    fn labels_follow_support() {
        let mut rng = StreamKey::root(4).rng();
        let p = ClassDistribution::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert!(labels(&mut rng, &p, 50).iter().all(|&l| l == 1));
    }
}
