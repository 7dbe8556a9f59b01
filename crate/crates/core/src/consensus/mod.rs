//! Validator agreement on the next block.
//!
//! Each height runs numbered rounds. The round leader proposes, validators
//! prevote and then precommit, and a block commits once a quorum of
//! precommit signatures exists for it. Locks taken on a prevote quorum carry
//! across rounds, so a committed block is the only block that can gather a
//! later quorum at that height.

pub mod cluster;
pub mod message;
pub mod node;
pub mod pool;
pub mod sim;
pub mod transport;

pub use cluster::{Cluster, CommitRecord, Fault, NetParams, NetStats};
pub use message::{ConsensusMessage, MessageKind, Payload, Signature, VoteStage};
pub use node::{Destination, Input, Outbound, Output, Step, Telemetry, Validator, ViewState};
pub use pool::TxPool;
pub use sim::{run_sim, Behavior, SimMetrics, SimReport, SimScenario};
pub use transport::{read_frame, write_frame, Envelope};

use crate::config::ValidatorId;

/// Smallest set size such that any two such sets of `n` validators share an
/// honest member when at most `max_faulty(n)` are faulty.
pub fn quorum(n: usize) -> usize {
    2 * n / 3 + 1
}

pub fn max_faulty(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

pub fn leader_for(height: u64, round: u64, n: usize) -> ValidatorId {
    assert!(n > 0, "validator set is empty");
    (height.wrapping_add(round) % n as u64) as ValidatorId
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quorum_sizes() {
        let got: Vec<_> = (1..=10).map(quorum).collect();
        assert_eq!(got, [1, 2, 3, 3, 4, 5, 5, 6, 7, 7]);
        assert_eq!(max_faulty(4), 1);
        assert_eq!(max_faulty(7), 2);
        for n in 1..50 {
            // Two quorums overlap in more than f validators.
            assert!(2 * quorum(n) > n + max_faulty(n));
            assert!(quorum(n) <= n - max_faulty(n) || n < 4);
        }
    }

    #[test]
    fn leader_rotates() {
        assert_eq!(leader_for(0, 0, 4), 0);
        assert_eq!(leader_for(1, 0, 4), 1);
        assert_eq!(leader_for(1, 3, 4), 0);
    }
}
