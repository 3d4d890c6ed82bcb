//! Body landmark set and the limb tree used for prior-based recovery.
//!
//! A skeleton is a tree of limbs over `J` landmarks. Each limb is stored as a
//! `(child, parent)` landmark pair and its limb vector is `child - parent`.
//! Limb adjacency is declared explicitly: every limb except the spine root
//! names a parent limb that shares exactly one landmark with it.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The default 15-landmark layout, shipped as `skeletons/itop15.json`.
pub const ITOP15_JSON: &str = include_str!("../../../skeletons/itop15.json");

/// On-disk form of a skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonDefinition {
    pub landmarks: Vec<String>,
    /// `[child_name, parent_name]` per limb.
    pub limbs: Vec<[String; 2]>,
    /// `[limb_index, parent_limb_index]` for every non-root limb.
    pub limb_parents: Vec<[usize; 2]>,
    pub root_limb: usize,
    pub trunk: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Limb {
    pub child: usize,
    pub parent: usize,
}

impl Limb {
    pub fn contains(&self, landmark: usize) -> bool {
        self.child == landmark || self.parent == landmark
    }

    pub fn other(&self, landmark: usize) -> usize {
        if self.child == landmark {
            self.parent
        } else {
            self.child
        }
    }
}

/// Validated, immutable skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonModel {
    landmarks: Vec<String>,
    limbs: Vec<Limb>,
    limb_parents: Vec<Option<usize>>,
    root_limb: usize,
    trunk: Vec<usize>,
    definition: SkeletonDefinition,
}

impl SkeletonModel {
    pub fn itop15() -> Self {
        Self::from_json(ITOP15_JSON).expect("shipped skeleton is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let def: SkeletonDefinition =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("skeleton document: {e}")))?;
        Self::from_definition(def)
    }

    pub fn from_definition(def: SkeletonDefinition) -> Result<Self> {
        let j = def.landmarks.len();
        if j < 2 {
            return Err(Error::Skeleton(format!("need at least 2 landmarks, got {j}")));
        }
        let mut index = HashMap::with_capacity(j);
        for (i, name) in def.landmarks.iter().enumerate() {
            if index.insert(name.as_str(), i).is_some() {
                return Err(Error::Skeleton(format!("duplicate landmark '{name}'")));
            }
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Skeleton(format!("unknown landmark '{name}'")))
        };

        if def.limbs.len() != j - 1 {
            return Err(Error::Skeleton(format!(
                "a tree over {j} landmarks needs {} limbs, got {}",
                j - 1,
                def.limbs.len()
            )));
        }
        let mut limbs = Vec::with_capacity(def.limbs.len());
        for [child, parent] in &def.limbs {
            let limb = Limb {
                child: lookup(child)?,
                parent: lookup(parent)?,
            };
            if limb.child == limb.parent {
                return Err(Error::Skeleton(format!("limb '{child}'-'{parent}' is a self loop")));
            }
            limbs.push(limb);
        }

        // J-1 edges without a cycle span all J landmarks.
        let mut forest = DisjointSet::new(j);
        for (i, limb) in limbs.iter().enumerate() {
            if !forest.union(limb.child, limb.parent) {
                return Err(Error::Skeleton(format!("limb {i} closes a cycle in the limb graph")));
            }
        }

        let root_limb = def.root_limb;
        if root_limb >= limbs.len() {
            return Err(Error::Skeleton(format!("root limb {root_limb} out of range")));
        }

        let mut limb_parents = vec![None; limbs.len()];
        for &[limb, parent] in &def.limb_parents {
            if limb >= limbs.len() || parent >= limbs.len() {
                return Err(Error::Skeleton(format!(
                    "limb_parents entry [{limb}, {parent}] out of range"
                )));
            }
            if limb == root_limb {
                return Err(Error::Skeleton("the root limb cannot have a parent limb".into()));
            }
            if limb_parents[limb].replace(parent).is_some() {
                return Err(Error::Skeleton(format!("limb {limb} has more than one parent limb")));
            }
            let a = limbs[limb];
            let b = limbs[parent];
            let shared = [a.child, a.parent].iter().filter(|&&l| b.contains(l)).count();
            if shared != 1 {
                return Err(Error::Skeleton(format!(
                    "limb {limb} and its parent limb {parent} share {shared} landmarks, expected 1"
                )));
            }
        }
        for (i, p) in limb_parents.iter().enumerate() {
            if i != root_limb && p.is_none() {
                return Err(Error::Skeleton(format!("limb {i} has no parent limb")));
            }
        }
        // Every parent chain must reach the root.
        for start in 0..limbs.len() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = limb_parents[cur] {
                cur = p;
                steps += 1;
                if steps > limbs.len() {
                    return Err(Error::Skeleton(format!(
                        "limb parent relation has a cycle through limb {start}"
                    )));
                }
            }
            if cur != root_limb {
                return Err(Error::Skeleton(format!(
                    "limb {start} does not descend from the root limb"
                )));
            }
        }

        let mut trunk = Vec::with_capacity(def.trunk.len());
        for name in &def.trunk {
            let idx = lookup(name)?;
            if !trunk.contains(&idx) {
                trunk.push(idx);
            }
        }
        trunk.sort_unstable();
        let root = limbs[root_limb];
        if !trunk.contains(&root.child) || !trunk.contains(&root.parent) {
            return Err(Error::Skeleton(
                "root limb landmarks must both be trunk landmarks".into(),
            ));
        }

        Ok(Self {
            landmarks: def.landmarks.clone(),
            limbs,
            limb_parents,
            root_limb,
            trunk,
            definition: def,
        })
    }

    pub fn num_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    pub fn landmarks(&self) -> &[String] {
        &self.landmarks
    }

    pub fn landmark_index(&self, name: &str) -> Option<usize> {
        self.landmarks.iter().position(|l| l == name)
    }

    pub fn limbs(&self) -> &[Limb] {
        &self.limbs
    }

    pub fn limb_parent(&self, limb: usize) -> Option<usize> {
        self.limb_parents[limb]
    }

    pub fn root_limb(&self) -> usize {
        self.root_limb
    }

    pub fn trunk(&self) -> &[usize] {
        &self.trunk
    }

    pub fn is_trunk(&self, landmark: usize) -> bool {
        self.trunk.binary_search(&landmark).is_ok()
    }

    pub fn definition(&self) -> &SkeletonDefinition {
        &self.definition
    }

    /// Landmark a non-root limb shares with its parent limb. For the root
    /// limb this is its parent-side landmark.
    pub fn anchor_landmark(&self, limb: usize) -> usize {
        let l = self.limbs[limb];
        match self.limb_parents[limb] {
            Some(p) if self.limbs[p].contains(l.child) => l.child,
            _ => l.parent,
        }
    }

    /// Limbs in breadth-first order from the spine root; each limb comes
    /// after its parent limb.
    pub fn recovery_order(&self) -> Vec<usize> {
        let mut children = vec![Vec::new(); self.limbs.len()];
        for (i, p) in self.limb_parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        let mut order = Vec::with_capacity(self.limbs.len());
        let mut queue = VecDeque::from([self.root_limb]);
        while let Some(limb) = queue.pop_front() {
            order.push(limb);
            queue.extend(children[limb].iter().copied());
        }
        order
    }

    /// Hex SHA-256 of the canonical serialized definition. Priors and models
    /// record it so they are never applied to a different skeleton.
    pub fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(&self.definition).expect("definition serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Landmarks that share a name once any `left_`/`right_` prefix is
    /// stripped, e.g. both shoulders. Order follows first appearance.
    pub fn part_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        let mut seen = HashSet::new();
        for (i, name) in self.landmarks.iter().enumerate() {
            let base = name
                .strip_prefix("left_")
                .or_else(|| name.strip_prefix("right_"))
                .unwrap_or(name);
            if seen.insert(base.to_string()) {
                groups.push((base.to_string(), vec![i]));
            } else if let Some(g) = groups.iter_mut().find(|(b, _)| b == base) {
                g.1.push(i);
            }
        }
        groups
            .into_iter()
            .map(|(base, members)| (part_label(&base, members.len() > 1), members))
            .collect()
    }
}

fn part_label(base: &str, paired: bool) -> String {
    let mut label = String::with_capacity(base.len() + 1);
    let mut chars = base.chars();
    if let Some(c) = chars.next() {
        label.extend(c.to_uppercase());
    }
    label.push_str(&chars.as_str().replace('_', " "));
    if !paired {
        return label;
    }
    match label.as_str() {
        "Foot" => "Feet".into(),
        l if l.ends_with('s') => l.to_string(),
        _ => label + "s",
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_landmarks() -> SkeletonDefinition {
        SkeletonDefinition {
            landmarks: vec!["a".into(), "b".into()],
            limbs: vec![["a".into(), "b".into()]],
            limb_parents: vec![],
            root_limb: 0,
            trunk: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn itop15_loads() {
        let m = SkeletonModel::itop15();
        assert_eq!(m.num_landmarks(), 15);
        assert_eq!(m.limbs().len(), 14);
        let root = m.limbs()[m.root_limb()];
        assert_eq!(m.landmarks()[root.child], "neck");
        assert_eq!(m.landmarks()[root.parent], "torso");
        assert_eq!(m.trunk().len(), 6);
    }

    #[test]
    fn itop15_endpoints_cover_all_landmarks() {
        let m = SkeletonModel::itop15();
        let mut covered = HashSet::new();
        for l in m.limbs() {
            covered.insert(l.child);
            covered.insert(l.parent);
        }
        assert_eq!(covered.len(), m.num_landmarks());
    }

    #[test]
    fn minimal_tree_is_valid() {
        let m = SkeletonModel::from_definition(two_landmarks()).unwrap();
        assert_eq!(m.recovery_order(), vec![0]);
    }

    #[test]
    fn cycle_is_rejected() {
        // Three limbs over three landmarks.
        let mut def = two_landmarks();
        def.landmarks.push("c".into());
        def.limbs = vec![
            ["a".into(), "b".into()],
            ["b".into(), "c".into()],
            ["c".into(), "a".into()],
        ];
        assert!(matches!(SkeletonModel::from_definition(def), Err(Error::Skeleton(_))));

        // Right limb count, but a cycle and a disconnected landmark.
        let def = SkeletonDefinition {
            landmarks: ["a", "b", "c", "d"].map(String::from).to_vec(),
            limbs: vec![
                ["a".into(), "b".into()],
                ["b".into(), "c".into()],
                ["c".into(), "a".into()],
            ],
            limb_parents: vec![[1, 0], [2, 1]],
            root_limb: 0,
            trunk: vec!["a".into(), "b".into()],
        };
        let err = SkeletonModel::from_definition(def).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn root_outside_trunk_is_rejected() {
        let mut def = two_landmarks();
        def.trunk = vec!["a".into()];
        assert!(SkeletonModel::from_definition(def).is_err());
    }

    #[test]
    fn parent_limb_must_share_one_landmark() {
        let def = SkeletonDefinition {
            landmarks: ["a", "b", "c", "d"].map(String::from).to_vec(),
            limbs: vec![
                ["a".into(), "b".into()],
                ["c".into(), "b".into()],
                ["d".into(), "c".into()],
            ],
            limb_parents: vec![[1, 0], [2, 0]],
            root_limb: 0,
            trunk: vec!["a".into(), "b".into()],
        };
        assert!(SkeletonModel::from_definition(def).is_err());
    }

    #[test]
    fn missing_parent_limb_is_rejected() {
        let mut m = SkeletonModel::itop15().definition().clone();
        m.limb_parents.pop();
        assert!(SkeletonModel::from_definition(m).is_err());
    }

    #[test]
    fn unknown_fields_are_schema_errors() {
        let err = SkeletonModel::from_json(r#"{"landmarks": ["a"], "bones": []}"#).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn recovery_order_is_parent_first_permutation() {
        let m = SkeletonModel::itop15();
        let order = m.recovery_order();
        assert_eq!(order[0], m.root_limb());
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..m.limbs().len()).collect::<Vec<_>>());
        for (pos, &limb) in order.iter().enumerate().skip(1) {
            let parent = m.limb_parent(limb).unwrap();
            let ppos = order.iter().position(|&l| l == parent).unwrap();
            assert!(ppos < pos);
        }
        // Extremities (hands, feet) come last.
        let tail: HashSet<_> = order[order.len() - 4..]
            .iter()
            .map(|&l| m.landmarks()[m.limbs()[l].child].as_str())
            .collect();
        assert_eq!(
            tail,
            HashSet::from(["left_hand", "right_hand", "left_foot", "right_foot"])
        );
    }

    #[test]
    fn part_groups_merge_sides() {
        let m = SkeletonModel::itop15();
        let labels: Vec<_> = m.part_groups().into_iter().map(|(l, _)| l).collect();
        assert_eq!(
            labels,
            [
                "Head",
                "Neck",
                "Shoulders",
                "Elbows",
                "Hands",
                "Torso",
                "Hips",
                "Knees",
                "Feet"
            ]
        );
    }

    #[test]
    fn checksum_tracks_definition() {
        let a = SkeletonModel::itop15();
        let mut def = a.definition().clone();
        def.trunk.pop();
        let b = SkeletonModel::from_definition(def).unwrap();
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(a.checksum(), SkeletonModel::itop15().checksum());
    }
}
