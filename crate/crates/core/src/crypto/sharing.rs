use crate::field::{Fe, FieldParams};
use crate::rng::SimRng;
use crate::types::{NodeId, RoundId};

/// Additive shares of one secret; the shares sum to it modulo `q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareSet {
    pub shares: Vec<Fe>,
    pub owner_hint: NodeId,
    pub round: RoundId,
}

impl ShareSet {
    pub fn split(owner: NodeId, round: RoundId, secret: Fe, k: usize, params: &FieldParams, rng: &mut SimRng) -> Self {
        ShareSet {
            shares: share_additive(secret, k, params, rng),
            owner_hint: owner,
            round,
        }
    }

    pub fn reconstruct(&self, params: &FieldParams) -> Fe {
        reconstruct(&self.shares, params)
    }
}

/// Splits `secret` into `k` shares: `k - 1` uniform, the last fixing the sum.
pub fn share_additive(secret: Fe, k: usize, params: &FieldParams, rng: &mut SimRng) -> Vec<Fe> {
    assert!(k >= 2, "additive sharing needs at least two shares");
    let mut shares: Vec<Fe> = (0..k - 1).map(|_| params.random(rng)).collect();
    let partial = params.sum(shares.iter().copied());
    shares.push(params.sub(secret, partial));
    shares
}

pub fn reconstruct(shares: &[Fe], params: &FieldParams) -> Fe {
    params.sum(shares.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi_square_p(counts: &[u64]) -> f64 {
        let n: u64 = counts.iter().sum();
        let expected = n as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    fn bin(e: Fe, q: u64) -> usize {
        ((e.0 as u128 * 16) / q as u128) as usize
    }

    #[test]
    fn zero_secret_sums_to_zero() {
        let params = FieldParams::test();
        let shares = share_additive(Fe(0), 3, &params, &mut SimRng::new(1));
        assert_eq!(shares.len(), 3);
        assert_eq!(reconstruct(&shares, &params), Fe(0));
    }

    #[test]
    fn reconstruct_inverts_sharing() {
        let params = FieldParams::test();
        let mut rng = SimRng::new(2);
        for i in 0..1000 {
            let secret = params.random(&mut rng);
            let k = 2 + i % 7;
            let set = ShareSet::split(NodeId::new("v"), RoundId(1), secret, k, &params, &mut rng);
            assert_eq!(set.reconstruct(&params), secret);
        }
        for k in 2..=16 {
            let secret = params.random(&mut rng);
            assert_eq!(
                reconstruct(&share_additive(secret, k, &params, &mut rng), &params),
                secret
            );
        }
    }

    #[test]
    fn dropping_a_share_loses_the_secret() {
        let params = FieldParams::test();
        let mut rng = SimRng::new(3);
        let mut wrong = 0;
        for _ in 0..200 {
            let secret = params.random(&mut rng);
            let shares = share_additive(secret, 4, &params, &mut rng);
            if reconstruct(&shares[..3], &params) != secret {
                wrong += 1;
            }
        }
        assert_eq!(wrong, 200);
    }

    #[test]
    fn all_zero_shares() {
        assert_eq!(reconstruct(&[Fe(0); 5], &FieldParams::test()), Fe(0));
    }

    #[test]
    fn every_share_position_is_uniform_for_fixed_secrets() {
        let params = FieldParams::test();
        let k = 4;
        for (label, secret) in [("zero", Fe(0)), ("big", Fe(params.q - 12_345))] {
            let mut rng = SimRng::new(10).fork(label);
            let mut counts = vec![[0u64; 16]; k];
            for _ in 0..10_000 {
                let shares = share_additive(secret, k, &params, &mut rng);
                for (pos, s) in shares.iter().enumerate() {
                    counts[pos][bin(*s, params.q)] += 1;
                }
            }
            for (pos, c) in counts.iter().enumerate() {
                let p = chi_square_p(c);
                assert!(p > 0.01, "secret {label} share {pos}: p = {p}");
            }
        }
    }
}
