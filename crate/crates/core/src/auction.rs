//! Slot allocation and per-click pricing for sponsored-search auctions.
//!
//! Bids are ranked either by amount or by amount times CTR. Winners are then
//! priced under one of two rules:
//!
//! * generalized first price (GFP): every winner pays its own bid;
//! * generalized second price (GSP): every winner pays what the bidder ranked
//!   directly below it forces, and the last winner pays the reserve.
//!
//! The module also carries the GFP best-response dynamics that show why
//! first-price slot auctions never settle. A bidder in the top slot lowers
//! its bid to just above the runner-up. The runner-up then outbids it, and
//! the bids climb until the weaker bidder runs out of value and drops back
//! to the reserve.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::AdvertiserId;

/// Money in integer minor units (cents).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cents(pub u64);

impl Add for Cents {
    type Output = Cents;

    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        Cents(iter.map(|c| c.0).sum())
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub advertiser: AdvertiserId,
    pub amount: Cents,
}

impl Bid {
    pub fn new(advertiser: AdvertiserId, amount: u64) -> Self {
        Bid {
            advertiser,
            amount: Cents(amount),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    #[default]
    ByBid,
    ByCtrWeighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Gfp,
    #[default]
    Gsp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionConfig {
    pub num_slots: u32,
    #[serde(default)]
    pub reserve_price: Cents,
    #[serde(default)]
    pub ranking: Ranking,
}

impl AuctionConfig {
    pub fn by_bid(num_slots: u32) -> Self {
        AuctionConfig {
            num_slots,
            reserve_price: Cents(0),
            ranking: Ranking::ByBid,
        }
    }
}

/// A bid with the score it was ranked by.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedBid {
    pub bid: Bid,
    pub rank_score: f64,
    /// CTR used for the score; `None` when ranking by bid alone.
    pub ctr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotAllocation {
    /// 1-based, contiguous from the top.
    pub slot: u32,
    pub advertiser: AdvertiserId,
    pub bid: Cents,
    pub price_per_click: Cents,
    pub rank_score: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuctionError {
    #[error("no CTR supplied for advertiser {0}")]
    MissingCtr(AdvertiserId),
    #[error("CTR for advertiser {0} is not a finite non-negative number")]
    InvalidCtr(AdvertiserId),
    #[error("advertiser {0} is not part of the bid state")]
    UnknownMover(AdvertiserId),
    #[error("no valuation supplied for advertiser {0}")]
    MissingValue(AdvertiserId),
    #[error("bid increment must be at least one cent")]
    ZeroEpsilon,
    #[error("auction needs at least one slot")]
    NoSlots,
}

/// Orders bids by descending rank score; equal scores fall back to
/// advertiser id order.
pub fn rank(
    bids: &[Bid],
    ctrs: &BTreeMap<AdvertiserId, f64>,
    cfg: &AuctionConfig,
) -> Result<Vec<RankedBid>, AuctionError> {
    let mut ranked = bids
        .iter()
        .map(|bid| match cfg.ranking {
            Ranking::ByBid => Ok(RankedBid {
                bid: bid.clone(),
                rank_score: bid.amount.0 as f64,
                ctr: None,
            }),
            Ranking::ByCtrWeighted => {
                let ctr = *ctrs
                    .get(&bid.advertiser)
                    .ok_or_else(|| AuctionError::MissingCtr(bid.advertiser.clone()))?;
                if !ctr.is_finite() || ctr < 0.0 {
                    return Err(AuctionError::InvalidCtr(bid.advertiser.clone()));
                }
                Ok(RankedBid {
                    bid: bid.clone(),
                    rank_score: bid.amount.0 as f64 * ctr,
                    ctr: Some(ctr),
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    ranked.sort_by(|a, b| {
        b.rank_score
            .total_cmp(&a.rank_score)
            .then_with(|| a.bid.advertiser.cmp(&b.bid.advertiser))
    });
    Ok(ranked)
}

fn eligible<'a>(ranked: &'a [RankedBid], cfg: &AuctionConfig) -> Vec<&'a RankedBid> {
    // Bids under the reserve never enter the auction.
    ranked.iter().filter(|r| r.bid.amount >= cfg.reserve_price).collect()
}

// Guards the ceiling against float noise such as 300 * 0.1 / 0.1 = 300.00000000000006.
const CEIL_SLACK: f64 = 1e-9;

/// Second-price allocation: slot i is priced by the bidder ranked i + 1.
pub fn gsp_allocate(ranked: &[RankedBid], cfg: &AuctionConfig) -> Vec<SlotAllocation> {
    let field = eligible(ranked, cfg);
    let k = (cfg.num_slots as usize).min(field.len());
    (0..k)
        .map(|i| {
            let me = field[i];
            let price = match field.get(i + 1) {
                None => cfg.reserve_price,
                Some(next) => match me.ctr {
                    None => next.bid.amount,
                    Some(ctr) if ctr > 0.0 => {
                        let forced = (next.rank_score / ctr - CEIL_SLACK).ceil().max(0.0) as u64;
                        Cents(forced).max(cfg.reserve_price).min(me.bid.amount)
                    }
                    Some(_) => me.bid.amount,
                },
            };
            SlotAllocation {
                slot: i as u32 + 1,
                advertiser: me.bid.advertiser.clone(),
                bid: me.bid.amount,
                price_per_click: price,
                rank_score: me.rank_score,
            }
        })
        .collect()
}

/// First-price allocation: same slots as GSP, each winner pays its own bid.
pub fn gfp_allocate(ranked: &[RankedBid], cfg: &AuctionConfig) -> Vec<SlotAllocation> {
    let field = eligible(ranked, cfg);
    field
        .iter()
        .take(cfg.num_slots as usize)
        .enumerate()
        .map(|(i, r)| SlotAllocation {
            slot: i as u32 + 1,
            advertiser: r.bid.advertiser.clone(),
            bid: r.bid.amount,
            price_per_click: r.bid.amount,
            rank_score: r.rank_score,
        })
        .collect()
}

pub fn allocate(ranked: &[RankedBid], cfg: &AuctionConfig, mechanism: Mechanism) -> Vec<SlotAllocation> {
    match mechanism {
        Mechanism::Gfp => gfp_allocate(ranked, cfg),
        Mechanism::Gsp => gsp_allocate(ranked, cfg),
    }
}

/// Price per click summed over winners.
pub fn revenue_per_round(allocations: &[SlotAllocation]) -> Cents {
    allocations.iter().map(|a| a.price_per_click).sum()
}

/// The mover's myopic GFP best response: the cheapest bid that secures the
/// best slot it can afford. Taking slot j means bidding `epsilon` above the
/// competitor currently j-th. A slot with nobody below it costs the reserve.
/// When no slot is affordable the mover falls back to the reserve, capped at
/// its value.
pub fn gfp_best_response_step(
    bids: &BTreeMap<AdvertiserId, Cents>,
    values: &BTreeMap<AdvertiserId, Cents>,
    mover: &AdvertiserId,
    epsilon: Cents,
    cfg: &AuctionConfig,
) -> Result<Cents, AuctionError> {
    if epsilon.0 == 0 {
        return Err(AuctionError::ZeroEpsilon);
    }
    if cfg.num_slots == 0 {
        return Err(AuctionError::NoSlots);
    }
    if !bids.contains_key(mover) {
        return Err(AuctionError::UnknownMover(mover.clone()));
    }
    let value = *values
        .get(mover)
        .ok_or_else(|| AuctionError::MissingValue(mover.clone()))?;

    let mut competitors: Vec<Cents> = bids
        .iter()
        .filter(|(a, _)| *a != mover)
        .map(|(_, b)| *b)
        .filter(|b| *b >= cfg.reserve_price)
        .collect();
    competitors.sort_unstable_by(|a, b| b.cmp(a));

    for slot in 0..cfg.num_slots as usize {
        let required = match competitors.get(slot) {
            Some(b) => (*b + epsilon).max(cfg.reserve_price),
            None => cfg.reserve_price,
        };
        if required <= value {
            return Ok(required);
        }
    }
    Ok(cfg.reserve_price.min(value))
}

/// Smallest p >= 1 such that the last entry of `history` also appears p
/// entries earlier. For a deterministic process whose entries are full
/// states, that recurrence means the process cycles with period p.
pub fn detect_cycle<T: PartialEq>(history: &[T]) -> Option<usize> {
    let (last, earlier) = history.split_last()?;
    earlier.iter().rev().position(|h| h == last).map(|i| i + 1)
}

/// One recorded state of the alternating best-response process.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DynamicsState {
    /// Bids in the order of [`GfpDynamics::advertisers`].
    pub bids: Vec<Cents>,
    /// Index of the advertiser who moves next.
    pub next_mover: usize,
}

#[derive(Clone, Debug)]
pub struct GfpDynamics {
    pub advertisers: Vec<AdvertiserId>,
    /// `states[0]` is the starting point; `states[s]` follows move s.
    pub states: Vec<DynamicsState>,
    /// Period of the cycle, if one was detected.
    pub period: Option<usize>,
}

impl GfpDynamics {
    /// Number of moves made before stopping.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn bid_history(&self) -> Vec<Vec<Cents>> {
        self.states.iter().map(|s| s.bids.clone()).collect()
    }
}

/// Runs strictly alternating best responses in `order`, starting with
/// `order[0]`, until a state repeats or `max_steps` moves have been made.
pub fn run_gfp_dynamics(
    order: &[(AdvertiserId, Cents)],
    values: &BTreeMap<AdvertiserId, Cents>,
    epsilon: Cents,
    cfg: &AuctionConfig,
    max_steps: usize,
) -> Result<GfpDynamics, AuctionError> {
    let advertisers: Vec<AdvertiserId> = order.iter().map(|(a, _)| a.clone()).collect();
    let mut bids: BTreeMap<AdvertiserId, Cents> = order.iter().cloned().collect();
    let snapshot = |bids: &BTreeMap<AdvertiserId, Cents>, next_mover: usize| DynamicsState {
        bids: advertisers.iter().map(|a| bids[a]).collect(),
        next_mover,
    };

    let mut states = vec![snapshot(&bids, 0)];
    let mut seen: HashSet<DynamicsState> = states.iter().cloned().collect();
    let mut period = None;
    let n = advertisers.len();
    for step in 0..max_steps {
        if n == 0 {
            break;
        }
        let mover = &advertisers[step % n];
        let new_bid = gfp_best_response_step(&bids, values, mover, epsilon, cfg)?;
        bids.insert(mover.clone(), new_bid);
        let state = snapshot(&bids, (step + 1) % n);
        let repeat = !seen.insert(state.clone());
        states.push(state);
        if repeat {
            period = detect_cycle(&states);
            break;
        }
    }
    Ok(GfpDynamics {
        advertisers,
        states,
        period,
    })
}
