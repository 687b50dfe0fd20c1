use crate::error::Result;
use crate::parts::{Part, NUM_PARTS};

/// Kinematic-chain adjacency between the fifteen body regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorTopology {
    pub adjacency: [[bool; NUM_PARTS]; NUM_PARTS],
}

const EDGES: [(Part, Part); 14] = [
    (Part::Head, Part::Neck),
    (Part::Neck, Part::Torso),
    (Part::Torso, Part::LeftUpperArm),
    (Part::Torso, Part::RightUpperArm),
    (Part::Torso, Part::LeftThigh),
    (Part::Torso, Part::RightThigh),
    (Part::LeftUpperArm, Part::LeftForearm),
    (Part::RightUpperArm, Part::RightForearm),
    (Part::LeftForearm, Part::LeftHand),
    (Part::RightForearm, Part::RightHand),
    (Part::LeftThigh, Part::LeftCalf),
    (Part::RightThigh, Part::RightCalf),
    (Part::LeftCalf, Part::LeftFoot),
    (Part::RightCalf, Part::RightFoot),
];

impl PriorTopology {
    pub fn canonical() -> Self {
        let mut adjacency = [[false; NUM_PARTS]; NUM_PARTS];
        for (a, b) in EDGES {
            adjacency[a.index()][b.index()] = true;
            adjacency[b.index()][a.index()] = true;
        }
        PriorTopology { adjacency }
    }

    pub fn neighbors(&self, part: usize) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_PARTS).filter(move |&q| self.adjacency[part][q])
    }

    /// Same part or linked in the prior graph.
    pub fn related(&self, a: usize, b: usize) -> bool {
        a == b || self.adjacency[a][b]
    }
}

impl Default for PriorTopology {
    fn default() -> Self {
        Self::canonical()
    }
}

pub fn prior_adjacent(topology: &PriorTopology, part_a: usize, part_b: usize) -> Result<bool> {
    let a = Part::from_index(part_a)?;
    let b = Part::from_index(part_b)?;
    Ok(topology.adjacency[a.index()][b.index()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_pairs() {
        let t = PriorTopology::canonical();
        let adj = |a: Part, b: Part| prior_adjacent(&t, a.index(), b.index()).unwrap();
        assert!(adj(Part::LeftForearm, Part::LeftHand));
        assert!(!adj(Part::Head, Part::LeftFoot));
        assert!(!adj(Part::LeftHand, Part::RightHand));
        assert!(prior_adjacent(&t, 0, 15).is_err());
    }

    #[test]
    fn symmetric_irreflexive_connected() {
        let t = PriorTopology::canonical();
        for a in 0..NUM_PARTS {
            assert!(!t.adjacency[a][a]);
            let degree = t.neighbors(a).count();
            // The torso joins neck, both arms and both legs.
            assert!((1..=5).contains(&degree));
            for b in 0..NUM_PARTS {
                assert_eq!(t.adjacency[a][b], t.adjacency[b][a]);
            }
        }
        let mut seen = [false; NUM_PARTS];
        let mut stack = vec![0];
        while let Some(p) = stack.pop() {
            if !std::mem::replace(&mut seen[p], true) {
                stack.extend(t.neighbors(p));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
