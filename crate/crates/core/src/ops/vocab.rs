use std::collections::HashMap;

use super::{Modulus, OpError};

/// Ranges up to this size use a flat slot array; larger ones use a hash map.
const FLAT_LIMIT: u64 = 1 << 24;
const EMPTY: u32 = u32::MAX;

#[derive(Debug, Clone)]
enum Slots {
    Flat(Vec<u32>),
    Hashed(HashMap<u64, u32>),
}

/// Insertion-ordered mapping from values in `[0, M)` to indices `0..len`.
///
/// Index `i` belongs to the `i`-th distinct value observed.
#[derive(Debug, Clone)]
pub struct VocabTable {
    modulus: Modulus,
    keys: Vec<u64>,
    slots: Slots,
}

impl PartialEq for VocabTable {
    fn eq(&self, other: &Self) -> bool {
        self.modulus == other.modulus && self.keys == other.keys
    }
}

impl Eq for VocabTable {}

/// What [`VocabTable::map_into`] does with a value missing from the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownPolicy {
    /// Missing values are an error. Correct for two-pass runs, where the
    /// first pass has seen every value.
    #[default]
    Strict,
    /// Missing values map to `len()`, a shared out-of-vocabulary bucket.
    OutOfVocabulary,
}

impl VocabTable {
    pub fn new(modulus: Modulus) -> Self {
        let slots = if modulus.get() <= FLAT_LIMIT {
            Slots::Flat(Vec::new())
        } else {
            Slots::Hashed(HashMap::new())
        };
        Self {
            modulus,
            keys: Vec::new(),
            slots,
        }
    }

    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Distinct values in first-appearance order; position is the index.
    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn decode(&self, index: u32) -> Option<u64> {
        self.keys.get(index as usize).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.keys.iter().enumerate().map(|(i, k)| (*k, i as u32))
    }

    #[inline]
    pub fn get(&self, value: u64) -> Option<u32> {
        match &self.slots {
            Slots::Flat(slots) => match slots.get(value as usize) {
                Some(&i) if i != EMPTY => Some(i),
                _ => None,
            },
            Slots::Hashed(map) => map.get(&value).copied(),
        }
    }

    /// Records `value`, returning its index. Already-seen values keep
    /// their index.
    #[inline]
    pub fn insert(&mut self, value: u64) -> Result<u32, OpError> {
        let m = self.modulus.get();
        if value >= m {
            return Err(OpError::OutOfRange {
                row: 0,
                value,
                modulus: m,
            });
        }
        let next = self.keys.len();
        match &mut self.slots {
            Slots::Flat(slots) => {
                if slots.is_empty() {
                    slots.resize(m as usize, EMPTY);
                }
                let slot = &mut slots[value as usize];
                if *slot != EMPTY {
                    return Ok(*slot);
                }
                *slot = next as u32;
            }
            Slots::Hashed(map) => {
                if let Some(&i) = map.get(&value) {
                    return Ok(i);
                }
                if next >= EMPTY as usize {
                    return Err(OpError::TableFull);
                }
                map.insert(value, next as u32);
            }
        }
        self.keys.push(value);
        Ok(next as u32)
    }

    /// Streams a column slice into the table.
    pub fn observe(&mut self, values: &[u64], first_row: u64) -> Result<(), OpError> {
        for (i, v) in values.iter().enumerate() {
            self.insert(*v)
                .map_err(|e| e.offset_row(first_row + i as u64))?;
        }
        Ok(())
    }

    /// Maps a column slice to indices, appending to `out`.
    pub fn map_into(
        &self,
        values: &[u64],
        first_row: u64,
        policy: UnknownPolicy,
        out: &mut Vec<u32>,
    ) -> Result<(), OpError> {
        out.reserve(values.len());
        let oov = self.keys.len() as u32;
        for (i, v) in values.iter().enumerate() {
            let idx = match (self.get(*v), policy) {
                (Some(idx), _) => idx,
                (None, UnknownPolicy::OutOfVocabulary) => oov,
                (None, UnknownPolicy::Strict) => {
                    return Err(OpError::UnknownValue {
                        row: first_row + i as u64,
                        value: *v,
                    })
                }
            };
            out.push(idx);
        }
        Ok(())
    }
}

/// Builds a vocabulary table in a single pass over `values`.
pub fn vocab_gen<I>(values: I, modulus: Modulus) -> Result<VocabTable, OpError>
where
    I: IntoIterator<Item = u64>,
{
    let mut table = VocabTable::new(modulus);
    for (row, v) in values.into_iter().enumerate() {
        table.insert(v).map_err(|e| e.offset_row(row as u64))?;
    }
    Ok(table)
}

/// Strict elementwise lookup.
pub fn vocab_map<I>(values: I, table: &VocabTable) -> Result<Vec<u32>, OpError>
where
    I: IntoIterator<Item = u64>,
{
    vocab_map_with(values, table, UnknownPolicy::Strict)
}

pub fn vocab_map_with<I>(
    values: I,
    table: &VocabTable,
    policy: UnknownPolicy,
) -> Result<Vec<u32>, OpError>
where
    I: IntoIterator<Item = u64>,
{
    let values: Vec<u64> = values.into_iter().collect();
    let mut out = Vec::with_capacity(values.len());
    table.map_into(&values, 0, policy, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(v: u64) -> Modulus {
        Modulus::new(v).unwrap()
    }

    /// Independent oracle: quadratic first-occurrence scan.
    fn first_occurrences(values: &[u64]) -> Vec<u64> {
        let mut seen: Vec<u64> = Vec::new();
        for v in values {
            if !seen.contains(v) {
                seen.push(*v);
            }
        }
        seen
    }

    #[test]
    fn gen_example() {
        let t = vocab_gen([5, 3, 5, 7], m(8)).unwrap();
        assert_eq!(t.keys(), &[5, 3, 7]);
        assert_eq!(t.get(5), Some(0));
        assert_eq!(t.get(3), Some(1));
        assert_eq!(t.get(7), Some(2));
        assert_eq!(t.get(4), None);
        assert!(vocab_gen([], m(8)).unwrap().is_empty());
    }

    #[test]
    fn gen_rejects_out_of_range() {
        let err = vocab_gen([1, 2, 8], m(8)).unwrap_err();
        assert_eq!(
            err,
            OpError::OutOfRange {
                row: 2,
                value: 8,
                modulus: 8
            }
        );
    }

    #[test]
    fn map_example() {
        let t = vocab_gen([5, 3, 5, 7], m(8)).unwrap();
        assert_eq!(vocab_map([7, 5], &t).unwrap(), vec![2, 0]);
        assert!(vocab_map([], &t).unwrap().is_empty());
        assert_eq!(
            vocab_map([5, 6], &t).unwrap_err(),
            OpError::UnknownValue { row: 1, value: 6 }
        );
        assert_eq!(
            vocab_map_with([5, 6], &t, UnknownPolicy::OutOfVocabulary).unwrap(),
            vec![0, 3]
        );
    }

    #[test]
    fn gen_matches_brute_force_on_uniform_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let stream: Vec<u64> = (0..100_000).map(|_| rng.random_range(0..8192)).collect();
        let table = vocab_gen(stream.iter().copied(), m(8192)).unwrap();
        assert_eq!(table.keys(), first_occurrences(&stream).as_slice());

        let idx = vocab_map(stream.iter().copied(), &table).unwrap();
        assert!(idx.iter().all(|i| (*i as usize) < table.len()));
        let decoded: Vec<u64> = idx.iter().map(|i| table.decode(*i).unwrap()).collect();
        assert_eq!(decoded, stream);
    }

    #[test]
    fn hashed_tables_behave_like_flat_ones() {
        let big = m(1 << 40);
        let values = [1u64 << 39, 3, 1 << 39, 77];
        let t = vocab_gen(values, big).unwrap();
        assert_eq!(t.keys(), &[1 << 39, 3, 77]);
        assert_eq!(vocab_map(values, &t).unwrap(), vec![0, 1, 0, 2]);
    }

    proptest! {
        #[test]
        fn first_occurrences_are_consecutive(values in proptest::collection::vec(0u64..64, 0..300)) {
            let t = vocab_gen(values.iter().copied(), m(64)).unwrap();
            prop_assert!(t.len() <= 64);
            let idx = vocab_map(values.iter().copied(), &t).unwrap();
            let mut next = 0u32;
            for i in idx {
                prop_assert!(i <= next);
                if i == next {
                    next += 1;
                }
            }
            prop_assert_eq!(next as usize, t.len());
        }

        #[test]
        fn duplicates_do_not_change_the_table(
            values in proptest::collection::vec(0u64..32, 1..100),
            picks in proptest::collection::vec(any::<prop::sample::Index>(), 0..50),
        ) {
            let base = vocab_gen(values.iter().copied(), m(32)).unwrap();
            let extended = values
                .iter()
                .copied()
                .chain(picks.iter().map(|p| values[p.index(values.len())]));
            prop_assert_eq!(vocab_gen(extended, m(32)).unwrap(), base);
        }
    }
}
