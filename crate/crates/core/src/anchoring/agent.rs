//! The per-election anchoring agent. It is driven by polls from the commit
//! loop and never blocks it: a failed submission keeps the built record and
//! retries the same range after a backoff.

use std::borrow::Borrow;
use std::sync::Arc;

use super::{
    anchor_due, build_anchor_capped, submit_anchor, AnchorError, AnchorJournal, AnchorRecord,
    PublicChainAdapter,
};
use crate::config::AnchorPolicy;
use crate::ledger::Block;

/// Exponential backoff counted in polls.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Backoff {
    pub failures: u32,
    skip: u64,
}

impl Backoff {
    pub const MAX_SKIP: u64 = 32;

    fn fail(&mut self) {
        self.failures += 1;
        self.skip = (1u64 << self.failures.min(16))
            .saturating_sub(1)
            .min(Self::MAX_SKIP);
    }

    fn reset(&mut self) {
        *self = Backoff::default();
    }

    /// Consumes one waiting poll; false once a retry is allowed.
    fn waiting(&mut self) -> bool {
        if self.skip > 0 {
            self.skip -= 1;
            true
        } else {
            false
        }
    }
}

pub struct Anchorer {
    election_id: String,
    policy: AnchorPolicy,
    adapter: Arc<dyn PublicChainAdapter>,
    journal: AnchorJournal,
    pending: Option<AnchorRecord>,
    backoff: Backoff,
    last_anchor_time: u64,
    submit_failures: u64,
}

impl Anchorer {
    pub fn new(
        election_id: impl Into<String>,
        policy: AnchorPolicy,
        adapter: Arc<dyn PublicChainAdapter>,
        journal: AnchorJournal,
        start_time: u64,
    ) -> Self {
        let last_anchor_time = journal.last().map_or(start_time, |r| r.created_at);
        Anchorer {
            election_id: election_id.into(),
            policy,
            adapter,
            journal,
            pending: None,
            backoff: Backoff::default(),
            last_anchor_time,
            submit_failures: 0,
        }
    }

    pub fn journal(&self) -> &AnchorJournal {
        &self.journal
    }

    pub fn records(&self) -> &[AnchorRecord] {
        self.journal.records()
    }

    pub fn adapter(&self) -> &Arc<dyn PublicChainAdapter> {
        &self.adapter
    }

    pub fn pending(&self) -> Option<&AnchorRecord> {
        self.pending.as_ref()
    }

    pub fn submit_failures(&self) -> u64 {
        self.submit_failures
    }

    pub fn last_anchored(&self) -> u64 {
        self.journal.last_anchored()
    }

    /// True when some committed block is not covered by a completed anchor.
    pub fn behind(&self, head: u64) -> bool {
        head > self.journal.last_anchored()
    }

    /// One scheduling step over the chain `blocks` (genesis first). Returns
    /// the anchor completed by this poll, if any.
    pub fn poll(
        &mut self,
        blocks: &[impl Borrow<Block>],
        now: u64,
    ) -> Result<Option<AnchorRecord>, AnchorError> {
        if self.pending.is_none() {
            let head = blocks.len().saturating_sub(1) as u64;
            if !anchor_due(
                &self.policy,
                self.last_anchored(),
                head,
                self.last_anchor_time,
                now,
            ) {
                return Ok(None);
            }
            self.pending = Some(build_anchor_capped(
                blocks,
                self.last_anchored(),
                self.policy.blocks,
                self.journal.next_seq(),
                now,
            )?);
        } else if self.backoff.waiting() {
            return Ok(None);
        }
        self.try_submit(now)
    }

    /// Anchors everything not yet anchored, ignoring the policy and the
    /// backoff, trying at most `attempts` submissions per range.
    pub fn force(
        &mut self,
        blocks: &[impl Borrow<Block>],
        now: u64,
        attempts: u32,
    ) -> Result<Vec<AnchorRecord>, AnchorError> {
        let mut done = Vec::new();
        let head = blocks.len().saturating_sub(1) as u64;
        while self.pending.is_some() || self.behind(head) {
            if self.pending.is_none() {
                self.pending = Some(build_anchor_capped(
                    blocks,
                    self.last_anchored(),
                    self.policy.blocks,
                    self.journal.next_seq(),
                    now,
                )?);
            }
            let mut last_err = None;
            for _ in 0..attempts.max(1) {
                match self.try_submit(now) {
                    Ok(Some(record)) => {
                        done.push(record);
                        last_err = None;
                        break;
                    }
                    Ok(None) => unreachable!("pending record is set"),
                    Err(e) => last_err = Some(e),
                }
            }
            if let Some(e) = last_err {
                return Err(e);
            }
        }
        Ok(done)
    }

    fn try_submit(&mut self, now: u64) -> Result<Option<AnchorRecord>, AnchorError> {
        let Some(record) = self.pending.clone() else {
            return Ok(None);
        };
        match submit_anchor(self.adapter.as_ref(), &self.election_id, record) {
            Ok(done) => {
                self.journal.append(done.clone())?;
                self.pending = None;
                self.backoff.reset();
                self.last_anchor_time = now;
                Ok(Some(done))
            }
            Err(e) => {
                self.submit_failures += 1;
                self.backoff.fail();
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchoring::{check_contiguous, verify_anchor, MockChain};
    use crate::testkit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn agent(chain: Arc<MockChain>, policy: AnchorPolicy) -> Anchorer {
        Anchorer::new("toy", policy, chain, AnchorJournal::in_memory(), 0)
    }

    #[test]
    fn block_count_policy_yields_contiguous_anchors() {
        let setup = testkit::toy_election(4);
        let chain = testkit::build_chain(&setup, 20, 1, &mut ChaCha20Rng::seed_from_u64(4));
        let mock = Arc::new(MockChain::in_memory());
        let mut a = agent(
            mock.clone(),
            AnchorPolicy {
                blocks: 8,
                seconds: 1_000_000,
            },
        );
        for head in 1..chain.len() {
            a.poll(&chain[..=head], head as u64).unwrap();
        }
        let ranges: Vec<_> = a
            .records()
            .iter()
            .map(|r| (r.first_block, r.last_block))
            .collect();
        assert_eq!(ranges, vec![(1, 8), (9, 16)]);
        let forced = a.force(&chain, 100, 1).unwrap();
        assert_eq!(forced.len(), 1);
        assert_eq!((forced[0].first_block, forced[0].last_block), (17, 20));
        assert!(check_contiguous(a.records()));
        assert_eq!(mock.len(), 3);
        for r in a.records() {
            assert_eq!(verify_anchor(&chain, r, "toy", mock.as_ref()), Ok(true));
        }
        assert!(a.force(&chain, 101, 1).unwrap().is_empty());
    }

    #[test]
    fn backlog_is_anchored_in_policy_sized_batches() {
        let setup = testkit::toy_election(4);
        let chain = testkit::build_chain(&setup, 20, 1, &mut ChaCha20Rng::seed_from_u64(6));
        let mock = Arc::new(MockChain::in_memory());
        let mut a = agent(
            mock.clone(),
            AnchorPolicy {
                blocks: 8,
                seconds: 1_000_000,
            },
        );
        assert_eq!(
            a.poll(&chain, 1)
                .unwrap()
                .map(|r| (r.first_block, r.last_block)),
            Some((1, 8))
        );
        a.force(&chain, 2, 1).unwrap();
        let ranges: Vec<_> = a
            .records()
            .iter()
            .map(|r| (r.first_block, r.last_block))
            .collect();
        assert_eq!(ranges, vec![(1, 8), (9, 16), (17, 20)]);
    }

    #[test]
    fn time_policy() {
        let setup = testkit::toy_election(4);
        let chain = testkit::build_chain(&setup, 2, 1, &mut ChaCha20Rng::seed_from_u64(5));
        let mock = Arc::new(MockChain::in_memory());
        let mut a = agent(
            mock,
            AnchorPolicy {
                blocks: 8,
                seconds: 60,
            },
        );
        assert_eq!(a.poll(&chain, 59).unwrap(), None);
        let r = a.poll(&chain, 60).unwrap().unwrap();
        assert_eq!((r.first_block, r.last_block), (1, 2));
        assert_eq!(a.poll(&chain, 500).unwrap(), None);
    }

    #[test]
    fn outage_retries_same_range_once() {
        let setup = testkit::toy_election(4);
        let chain = testkit::build_chain(&setup, 12, 1, &mut ChaCha20Rng::seed_from_u64(6));
        let mock = Arc::new(MockChain::in_memory());
        let mut a = agent(
            mock.clone(),
            AnchorPolicy {
                blocks: 8,
                seconds: 1_000_000,
            },
        );
        mock.fail_next(3);
        let mut outcomes = Vec::new();
        for (t, head) in (8..=12).chain(std::iter::repeat_n(12, 20)).enumerate() {
            outcomes.push(a.poll(&chain[..=head], t as u64).map(|r| r.is_some()));
            if !a.records().is_empty() {
                break;
            }
        }
        assert_eq!(outcomes.iter().filter(|o| o.is_err()).count(), 3);
        assert_eq!(a.submit_failures(), 3);
        assert_eq!(mock.len(), 1);
        let r = &a.records()[0];
        assert_eq!((r.first_block, r.last_block), (1, 8));
        a.force(&chain, 100, 1).unwrap();
        let ranges: Vec<_> = a
            .records()
            .iter()
            .map(|r| (r.first_block, r.last_block))
            .collect();
        assert_eq!(ranges, vec![(1, 8), (9, 12)]);
        assert_eq!(mock.len(), 2);
    }

    #[test]
    fn force_gives_up_after_attempts() {
        let setup = testkit::toy_election(4);
        let chain = testkit::build_chain(&setup, 1, 1, &mut ChaCha20Rng::seed_from_u64(7));
        let mock = Arc::new(MockChain::in_memory());
        let mut a = agent(mock.clone(), AnchorPolicy::default());
        mock.fail_next(5);
        assert!(matches!(
            a.force(&chain, 1, 3),
            Err(AnchorError::AdapterUnavailable(_))
        ));
        assert!(a.pending().is_some());
        assert_eq!(a.force(&chain, 2, 3).unwrap().len(), 1);
        assert_eq!(mock.len(), 1);
    }
}
