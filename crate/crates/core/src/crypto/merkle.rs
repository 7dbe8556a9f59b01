//! Binary Merkle tree with domain-separated leaves and promoted odd nodes.
//!
//! leaf node     = H(0x00 || leaf)
//! internal node = H(0x01 || left || right)
//!
//! When a level has an odd number of nodes the last one moves up unchanged,
//! so it contributes no step to the proofs of the leaves below it.

use serde::{Deserialize, Serialize};

use super::{sha256_concat, CryptoError, Digest};

const LEAF_PREFIX: [u8; 1] = [0x00];
const NODE_PREFIX: [u8; 1] = [0x01];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// One level of an inclusion proof: the sibling hash and which side it sits on.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProofStep {
    pub sibling: Digest,
    pub side: Side,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MerkleProof {
    pub leaf_index: u64,
    pub path: Vec<ProofStep>,
}

pub fn leaf_hash(leaf: &Digest) -> Digest {
    sha256_concat(&[&LEAF_PREFIX, leaf.as_bytes()])
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    sha256_concat(&[&NODE_PREFIX, left.as_bytes(), right.as_bytes()])
}

/// All levels of the tree, leaf level first. Built once, then used for
/// the root and any number of proofs.
#[derive(Clone, Debug)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn build(leaves: &[Digest]) -> Result<Self, CryptoError> {
        if leaves.is_empty() {
            return Err(CryptoError::EmptyBatch);
        }
        let mut levels = vec![leaves.iter().map(leaf_hash).collect::<Vec<_>>()];
        while levels.last().is_some_and(|l| l.len() > 1) {
            let below = levels.last().expect("non-empty");
            let above = below
                .chunks(2)
                .map(|pair| match pair {
                    [left, right] => node_hash(left, right),
                    [single] => *single,
                    _ => unreachable!(),
                })
                .collect();
            levels.push(above);
        }
        Ok(MerkleTree { levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("tree has a root")[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn prove(&self, index: usize) -> Result<MerkleProof, CryptoError> {
        if index >= self.leaf_count() {
            return Err(CryptoError::IndexOutOfRange {
                index,
                len: self.leaf_count(),
            });
        }
        let mut path = Vec::new();
        let mut position = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let sibling = position ^ 1;
            if sibling < level.len() {
                let side = if sibling < position {
                    Side::Left
                } else {
                    Side::Right
                };
                path.push(ProofStep {
                    sibling: level[sibling],
                    side,
                });
            }
            position /= 2;
        }
        Ok(MerkleProof {
            leaf_index: index as u64,
            path,
        })
    }
}

pub fn merkle_root(leaves: &[Digest]) -> Result<Digest, CryptoError> {
    MerkleTree::build(leaves).map(|t| t.root())
}

pub fn merkle_prove(leaves: &[Digest], index: usize) -> Result<MerkleProof, CryptoError> {
    MerkleTree::build(leaves)?.prove(index)
}

/// Recomputes the root from `leaf` along `proof.path`.
pub fn merkle_verify(leaf: &Digest, proof: &MerkleProof, root: &Digest) -> bool {
    let computed = proof
        .path
        .iter()
        .fold(leaf_hash(leaf), |acc, step| match step.side {
            Side::Left => node_hash(&step.sibling, &acc),
            Side::Right => node_hash(&acc, &step.sibling),
        });
    &computed == root
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{sha256, sha256_concat};

    fn leaves(count: usize) -> Vec<Digest> {
        (0..count as u32)
            .map(|i| sha256(&i.to_be_bytes()))
            .collect()
    }

    #[test]
    fn single_leaf_root_and_empty_proof() {
        let l = leaves(1);
        assert_eq!(
            merkle_root(&l).unwrap(),
            sha256_concat(&[&[0u8], l[0].as_bytes()])
        );
        let proof = merkle_prove(&l, 0).unwrap();
        assert!(proof.path.is_empty());
        assert!(merkle_verify(&l[0], &proof, &merkle_root(&l).unwrap()));
    }

    #[test]
    fn two_leaf_root_by_hand() {
        let l = leaves(2);
        let a = sha256_concat(&[&[0u8], l[0].as_bytes()]);
        let b = sha256_concat(&[&[0u8], l[1].as_bytes()]);
        let expected = sha256_concat(&[&[1u8], a.as_bytes(), b.as_bytes()]);
        assert_eq!(merkle_root(&l).unwrap(), expected);
    }

    #[test]
    fn four_leaf_proof_shape() {
        let l = leaves(4);
        let proof = merkle_prove(&l, 2).unwrap();
        let left_subtree = node_hash(&leaf_hash(&l[0]), &leaf_hash(&l[1]));
        assert_eq!(
            proof.path,
            vec![
                ProofStep {
                    sibling: leaf_hash(&l[3]),
                    side: Side::Right
                },
                ProofStep {
                    sibling: left_subtree,
                    side: Side::Left
                },
            ]
        );
    }

    #[test]
    fn odd_node_is_promoted() {
        let l = leaves(3);
        let expected = node_hash(
            &node_hash(&leaf_hash(&l[0]), &leaf_hash(&l[1])),
            &leaf_hash(&l[2]),
        );
        assert_eq!(merkle_root(&l).unwrap(), expected);
        assert_eq!(merkle_prove(&l, 2).unwrap().path.len(), 1);
    }

    #[test]
    fn every_index_verifies_up_to_sixteen() {
        for count in 1..=16 {
            let l = leaves(count);
            let tree = MerkleTree::build(&l).unwrap();
            let depth = (count as f64).log2().ceil() as usize;
            for (i, leaf) in l.iter().enumerate() {
                let proof = tree.prove(i).unwrap();
                assert!(proof.path.len() <= depth);
                assert!(
                    merkle_verify(leaf, &proof, &tree.root()),
                    "count {count} index {i}"
                );
            }
        }
    }

    #[test]
    fn errors() {
        assert_eq!(merkle_root(&[]), Err(CryptoError::EmptyBatch));
        assert_eq!(
            merkle_prove(&leaves(4), 4),
            Err(CryptoError::IndexOutOfRange { index: 4, len: 4 })
        );
    }

    #[test]
    fn mutations_fail() {
        let l = leaves(8);
        let tree = MerkleTree::build(&l).unwrap();
        let root = tree.root();
        for (i, leaf) in l.iter().enumerate() {
            let proof = tree.prove(i).unwrap();
            for byte in 0..32 {
                let mut bytes = *leaf.as_bytes();
                bytes[byte] ^= 0x01;
                assert!(!merkle_verify(&Digest::from_bytes(bytes), &proof, &root));
            }
            for step in 0..proof.path.len() {
                let mut swapped = proof.clone();
                swapped.path[step].side = match swapped.path[step].side {
                    Side::Left => Side::Right,
                    Side::Right => Side::Left,
                };
                assert!(!merkle_verify(&l[i], &swapped, &root));
            }
        }
    }
}
