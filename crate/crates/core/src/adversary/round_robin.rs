use rand::Rng;

use super::{Adversary, AdversaryRng, Decision};
use crate::protocol::{Pid, Transition};

/// Cycles through `1..=n`.
#[derive(Clone, Debug)]
pub struct RoundRobin {
    n: u32,
}

impl RoundRobin {
    pub fn new(n: u32) -> Self {
        assert!(n >= 1);
        RoundRobin { n }
    }
}

impl Adversary for RoundRobin {
    fn name(&self) -> &'static str {
        "round-robin"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn next(&mut self, run: &[Transition], _rng: &mut AdversaryRng) -> Decision {
        Decision::Step(Pid::new((run.len() as u64 % u64::from(self.n)) as u32 + 1))
    }
}

/// Uniformly random pid at every step; fair with probability one.
#[derive(Clone, Debug)]
pub struct RandomFair {
    n: u32,
}

impl RandomFair {
    pub fn new(n: u32) -> Self {
        assert!(n >= 1);
        RandomFair { n }
    }
}

impl Adversary for RandomFair {
    fn name(&self) -> &'static str {
        "random"
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn next(&mut self, _run: &[Transition], rng: &mut AdversaryRng) -> Decision {
        Decision::Step(Pid::new(rng.gen_range(1..=self.n)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Region;
    use rand::SeedableRng;

    #[test]
    fn cycles() {
        let mut rr = RoundRobin::new(3);
        let mut rng = AdversaryRng::seed_from_u64(1);
        let t = Transition::new(Pid::new(1), Region::Rem, Region::Try);
        assert_eq!(rr.next(&[], &mut rng), Decision::Step(Pid::new(1)));
        assert_eq!(rr.next(&[t], &mut rng), Decision::Step(Pid::new(2)));
        assert_eq!(rr.next(&[t; 3], &mut rng), Decision::Step(Pid::new(1)));
    }

    #[test]
    fn random_stays_in_range() {
        let mut a = RandomFair::new(4);
        let mut rng = AdversaryRng::seed_from_u64(1);
        let mut seen = [false; 4];
        for _ in 0..200 {
            match a.next(&[], &mut rng) {
                Decision::Step(p) => seen[p.index()] = true,
                Decision::Halt => panic!("never halts"),
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
