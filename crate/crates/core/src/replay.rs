//! Bounded FIFO buffers: RL transitions for the actor-critic, planner records
//! for the planner's memory window.
//!
//! Transition buffers can be written to and restored from a binary snapshot:
//!
//! ```text
//! magic    8 bytes  "SKYRPLY\0"
//! version  u32 LE   (currently 1)
//! capacity u64 LE
//! count    u64 LE
//! count × record, oldest first:
//!   s          13 × f64 LE
//!   a          u8   action slot
//!   proposed   u8   action slot, 255 = none
//!   mask       u16 LE
//!   r          f64 LE
//!   s_next     13 × f64 LE
//!   mask_next  u16 LE
//!   costs      4 × f64 LE
//!   flags      u8   bit 0 done, bit 1 rejected, bit 2 rejected_next
//! ```

use crate::action::Action;
use crate::safety::FaultClass;
use crate::world::{DroneId, Observation, OBSERVATION_DIM};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("requested {requested} samples from a buffer holding {available}")]
    NotEnoughEntries { requested: usize, available: usize },
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("not a replay snapshot (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One step of experience as seen by the learner. Actions are policy slot
/// indices (see [`crate::slots`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlTransition {
    pub s: Observation,
    pub a: usize,
    /// Slot of the planner's proposal when expressible.
    pub proposed: Option<usize>,
    pub mask: u16,
    pub r: f64,
    pub s_next: Observation,
    pub mask_next: u16,
    /// Hinge costs `max(0, g_k)` of the action taken.
    pub costs: [f64; 4],
    pub done: bool,
    /// The shield rejected the proposal, so the learner chose `a`.
    pub rejected: bool,
    /// Same flag for the drone's next decision, from `s_next`.
    pub rejected_next: bool,
}

impl RlTransition {
    pub fn is_valid(&self) -> bool {
        let finite = |o: &Observation| o.features().iter().all(|v| v.is_finite());
        finite(&self.s)
            && finite(&self.s_next)
            && self.r.is_finite()
            && self.costs.iter().all(|c| c.is_finite() && *c >= 0.0)
            && self.a < crate::slots::ACTION_SLOTS
    }
}

/// A planner proposal and whether the shield replaced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerRecord {
    pub t: u32,
    pub drone_id: DroneId,
    pub s: Observation,
    pub proposed: Action,
    pub override_flag: bool,
    pub fault_class: Option<FaultClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: T) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Oldest first.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &T> + ExactSizeIterator {
        self.entries.iter()
    }

    /// `n` distinct entries drawn uniformly.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&T>, ReplayError> {
        if n > self.entries.len() {
            return Err(ReplayError::NotEnoughEntries {
                requested: n,
                available: self.entries.len(),
            });
        }
        Ok(rand::seq::index::sample(rng, self.entries.len(), n)
            .into_iter()
            .map(|i| &self.entries[i])
            .collect())
    }

    /// The newest `min(k, len)` entries, newest last.
    pub fn recent_window(&self, k: usize) -> Vec<&T> {
        let skip = self.entries.len().saturating_sub(k);
        self.entries.iter().skip(skip).collect()
    }
}

const MAGIC: &[u8; 8] = b"SKYRPLY\0";
const VERSION: u32 = 1;
const NO_SLOT: u8 = u8::MAX;

impl ReplayBuffer<RlTransition> {
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), ReplayError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            write_obs(&mut w, &e.s)?;
            w.write_all(&[e.a as u8, e.proposed.map_or(NO_SLOT, |p| p as u8)])?;
            w.write_all(&e.mask.to_le_bytes())?;
            w.write_all(&e.r.to_le_bytes())?;
            write_obs(&mut w, &e.s_next)?;
            w.write_all(&e.mask_next.to_le_bytes())?;
            for c in e.costs {
                w.write_all(&c.to_le_bytes())?;
            }
            w.write_all(&[u8::from(e.done) | u8::from(e.rejected) << 1 | u8::from(e.rejected_next) << 2])?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self, ReplayError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ReplayError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ReplayError::UnsupportedVersion(version));
        }
        let capacity = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        if count > capacity {
            return Err(ReplayError::Corrupt(format!("{count} entries exceed capacity {capacity}")));
        }
        let mut buf = Self::new(capacity)?;
        for _ in 0..count {
            let s = read_obs(&mut r)?;
            let mut ab = [0u8; 2];
            r.read_exact(&mut ab)?;
            let mask = read_u16(&mut r)?;
            let reward = read_f64(&mut r)?;
            let s_next = read_obs(&mut r)?;
            let mask_next = read_u16(&mut r)?;
            let mut costs = [0.0; 4];
            for c in &mut costs {
                *c = read_f64(&mut r)?;
            }
            let mut flags = [0u8; 1];
            r.read_exact(&mut flags)?;
            if flags[0] > 7 {
                return Err(ReplayError::Corrupt(format!("flag byte {:#x}", flags[0])));
            }
            buf.push(RlTransition {
                s,
                a: ab[0] as usize,
                proposed: (ab[1] != NO_SLOT).then_some(ab[1] as usize),
                mask,
                r: reward,
                s_next,
                mask_next,
                costs,
                done: flags[0] & 1 != 0,
                rejected: flags[0] & 2 != 0,
                rejected_next: flags[0] & 4 != 0,
            });
        }
        Ok(buf)
    }
}

fn write_obs<W: Write>(w: &mut W, o: &Observation) -> io::Result<()> {
    for v in o.features() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_obs<R: Read>(r: &mut R) -> io::Result<Observation> {
    let mut f = [0.0; OBSERVATION_DIM];
    for v in &mut f {
        *v = read_f64(r)?;
    }
    Ok(Observation::from_features(&f))
}

pub(crate) fn read_u16<R: Read>(r: &mut R) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for x in ['a', 'b', 'c'] {
            b.push(x);
        }
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec!['b', 'c']);
        assert!(ReplayBuffer::<u8>::new(0).is_err());
    }

    #[test]
    fn window_ordering() {
        let mut b = ReplayBuffer::new(10).unwrap();
        assert!(b.recent_window(3).is_empty());
        for i in 1..=5 {
            b.push(i);
        }
        assert_eq!(b.recent_window(3), vec![&3, &4, &5]);
        assert_eq!(b.recent_window(99).len(), 5);
    }

    #[test]
    fn sampling_contract() {
        let mut b = ReplayBuffer::new(8).unwrap();
        for i in 0..8 {
            b.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut all: Vec<i32> = b.sample_minibatch(8, &mut rng).unwrap().into_iter().copied().collect();
        all.sort();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        let a = b.sample_minibatch(3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = b.sample_minibatch(3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, c);
        assert!(matches!(
            b.sample_minibatch(9, &mut rng),
            Err(ReplayError::NotEnoughEntries { requested: 9, available: 8 })
        ));
    }
}
