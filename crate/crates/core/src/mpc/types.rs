use rand::seq::SliceRandom;
use rand::RngCore;
use rug::Integer;

use crate::error::{Error, Result};
use crate::paillier::{Ciphertext, SecretKey};

/// Encryptions of the bits of an integer, most significant bit first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncBitVec(pub Vec<Ciphertext>);

impl EncBitVec {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[Ciphertext] {
        &self.0
    }

    /// Decrypts every bit and reassembles the integer. Fails if a position
    /// does not hold 0 or 1.
    pub fn reveal(&self, sk: &SecretKey) -> Result<Integer> {
        let mut z = Integer::new();
        for c in &self.0 {
            let b = sk.decrypt(c)?;
            if b != 0 && b != 1 {
                return Err(Error::Contract("bit vector entry is not a bit".into()));
            }
            z <<= 1;
            z += b;
        }
        Ok(z)
    }
}

/// Encrypted values that travel with a compared value.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SecretBundle(pub Vec<Ciphertext>);

impl SecretBundle {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reveal(&self, sk: &SecretKey) -> Result<Vec<Integer>> {
        self.0.iter().map(|c| sk.decrypt(c)).collect()
    }
}

/// A bit-decomposed value plus its bundle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedValue {
    pub value: EncBitVec,
    pub bundle: SecretBundle,
}

impl RankedValue {
    pub fn new(value: EncBitVec, bundle: SecretBundle) -> Self {
        RankedValue { value, bundle }
    }
}

/// A permutation of `0..n`, applied as `out[map[i]] = in[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation { map: (0..n).collect() }
    }

    /// Uniform Fisher–Yates shuffle.
    pub fn random<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Permutation { map }
    }

    /// From images `pi(1), ..., pi(n)` written 1-based.
    pub fn from_one_based(images: &[usize]) -> Result<Self> {
        let map: Vec<usize> = images.iter().map(|&x| x.wrapping_sub(1)).collect();
        Self::from_map(map)
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &x in &map {
            if x >= map.len() || std::mem::replace(&mut seen[x], true) {
                return Err(Error::Contract("not a permutation".into()));
            }
        }
        Ok(Permutation { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Image of position `i`.
    pub fn image(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn apply<T: Clone>(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.map.len(), "permutation length mismatch");
        let mut out: Vec<Option<T>> = vec![None; input.len()];
        for (i, x) in input.iter().enumerate() {
            out[self.map[i]] = Some(x.clone());
        }
        out.into_iter().map(|x| x.expect("bijective")).collect()
    }

    pub fn invert<T: Clone>(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.map.len(), "permutation length mismatch");
        self.map.iter().map(|&j| input[j].clone()).collect()
    }
}

/// Pairings of the min/max tournament over `n` slots, 0-based, one vector per
/// round. Round `i` pairs slot `2^i (j-1)` with slot `2^i (j-1) + 2^(i-1)`
/// whenever the latter exists; the survivor stays in the lower slot. Every
/// slot but the first is eliminated exactly once, so there are `n - 1` pairs.
pub fn tournament_schedule(n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut rounds = Vec::new();
    let mut stride = 2usize;
    while stride / 2 < n {
        let half = stride / 2;
        let round: Vec<(usize, usize)> =
            (0..n).step_by(stride).filter(|a| a + half < n).map(|a| (a, a + half)).collect();
        rounds.push(round);
        stride *= 2;
    }
    rounds
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn six_slot_schedule() {
        let one_based: Vec<Vec<(usize, usize)>> =
            tournament_schedule(6).into_iter().map(|r| r.into_iter().map(|(a, b)| (a + 1, b + 1)).collect()).collect();
        assert_eq!(one_based, vec![vec![(1, 2), (3, 4), (5, 6)], vec![(1, 3)], vec![(1, 5)]]);
    }

    #[test]
    fn degenerate_schedules() {
        assert!(tournament_schedule(0).is_empty());
        assert!(tournament_schedule(1).is_empty());
        assert_eq!(tournament_schedule(2), vec![vec![(0, 1)]]);
    }

    #[test]
    fn permutation_semantics() {
        let p = Permutation::from_one_based(&[6, 5, 4, 3, 2, 1]).unwrap();
        assert_eq!(p.apply(&[1, 2, 3, 4, 5, 6]), vec![6, 5, 4, 3, 2, 1]);
        let q = Permutation::from_one_based(&[2, 1, 5, 6, 3, 4]).unwrap();
        assert_eq!(q.apply(&['a', 'b', 'c', 'd', 'e', 'f']), vec!['b', 'a', 'e', 'f', 'c', 'd']);
        assert!(Permutation::from_one_based(&[1, 1]).is_err());
        assert!(Permutation::from_one_based(&[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn schedule_eliminates_each_slot_once(n in 1usize..300) {
            let rounds = tournament_schedule(n);
            let expected_rounds = if n <= 1 { 0 } else { (usize::BITS - (n - 1).leading_zeros()) as usize };
            prop_assert_eq!(rounds.len(), expected_rounds);
            let mut alive = vec![true; n];
            let mut pairs = 0;
            for round in &rounds {
                for &(a, b) in round {
                    prop_assert!(a < b && alive[a] && alive[b]);
                    alive[b] = false;
                    pairs += 1;
                }
            }
            prop_assert_eq!(pairs, n.saturating_sub(1));
            prop_assert!(n == 0 || alive[0]);
        }

        #[test]
        fn invert_undoes_apply(seed: u64, n in 0usize..50) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let p = Permutation::random(n, &mut rng);
            let v: Vec<usize> = (0..n).collect();
            prop_assert_eq!(p.invert(&p.apply(&v)), v);
        }
    }
}
