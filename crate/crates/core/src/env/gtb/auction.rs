//! Continuous double auction with 11 integer price levels per resource.
//!
//! Crossing orders execute at the standing order's price, oldest first.
//! Escrow (coin for bids, resource units for asks) is managed by the caller;
//! the book only tracks resting orders.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resource {
    Wood = 0,
    Stone = 1,
}

impl Resource {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Resource {
        match i {
            0 => Resource::Wood,
            _ => Resource::Stone,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bid,
    Ask,
}

#[derive(Debug, thiserror::Error)]
pub enum AuctionError {
    #[error("price level {0} outside 0..=10")]
    BadPrice(usize),
    #[error("order would self-cross; rejected")]
    SelfCross,
}

#[derive(Debug, Clone, Copy)]
pub struct Order {
    pub agent: usize,
    pub price: usize,
    pub placed_at: usize,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Trade {
    pub buyer: usize,
    pub seller: usize,
    pub resource: Resource,
    pub price: usize,
    /// Price the incoming bid escrowed; the difference is refunded.
    pub bid_escrow: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SideBook {
    pub bids: Vec<Order>,
    pub asks: Vec<Order>,
}

#[derive(Debug, Clone, Default)]
pub struct OrderBook {
    pub books: [SideBook; 2],
    next_seq: u64,
}

pub const MAX_PRICE: usize = 10;

impl OrderBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Match an incoming order against the book, or let it rest.
    ///
    /// Price-time priority: an incoming bid takes the lowest-priced standing
    /// ask at or below its price (oldest on ties); an incoming ask takes the
    /// highest standing bid at or above (oldest on ties). If the best match
    /// belongs to the same agent the incoming order is rejected.
    pub fn submit(
        &mut self,
        agent: usize,
        resource: Resource,
        side: Side,
        price: usize,
        step: usize,
    ) -> Result<Option<Trade>, AuctionError> {
        if price > MAX_PRICE {
            return Err(AuctionError::BadPrice(price));
        }
        let book = &mut self.books[resource.index()];
        let seq = self.next_seq;
        match side {
            Side::Bid => {
                let best = book
                    .asks
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.price <= price)
                    .min_by_key(|(_, o)| (o.price, o.seq))
                    .map(|(i, _)| i);
                if let Some(i) = best {
                    if book.asks[i].agent == agent {
                        return Err(AuctionError::SelfCross);
                    }
                    let ask = book.asks.remove(i);
                    self.next_seq += 1;
                    return Ok(Some(Trade {
                        buyer: agent,
                        seller: ask.agent,
                        resource,
                        price: ask.price,
                        bid_escrow: price,
                    }));
                }
                book.bids.push(Order { agent, price, placed_at: step, seq });
            }
            Side::Ask => {
                let best = book
                    .bids
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.price >= price)
                    .max_by_key(|(_, o)| (o.price, std::cmp::Reverse(o.seq)))
                    .map(|(i, _)| i);
                if let Some(i) = best {
                    if book.bids[i].agent == agent {
                        return Err(AuctionError::SelfCross);
                    }
                    let bid = book.bids.remove(i);
                    self.next_seq += 1;
                    return Ok(Some(Trade {
                        buyer: bid.agent,
                        seller: agent,
                        resource,
                        price: bid.price,
                        bid_escrow: bid.price,
                    }));
                }
                book.asks.push(Order { agent, price, placed_at: step, seq });
            }
        }
        self.next_seq += 1;
        Ok(None)
    }

    /// Remove orders older than `lifetime` steps; returns them for refunding.
    pub fn expire(&mut self, now: usize, lifetime: usize) -> Vec<(Resource, Side, Order)> {
        let mut out = Vec::new();
        for r in [Resource::Wood, Resource::Stone] {
            let book = &mut self.books[r.index()];
            let (keep, gone): (Vec<Order>, Vec<Order>) = book
                .bids
                .drain(..)
                .partition(|o| now.saturating_sub(o.placed_at) < lifetime);
            book.bids = keep;
            out.extend(gone.into_iter().map(|o| (r, Side::Bid, o)));
            let (keep, gone): (Vec<Order>, Vec<Order>) = book
                .asks
                .drain(..)
                .partition(|o| now.saturating_sub(o.placed_at) < lifetime);
            book.asks = keep;
            out.extend(gone.into_iter().map(|o| (r, Side::Ask, o)));
        }
        out
    }

    /// All resting orders, for end-of-episode refunds.
    pub fn drain_all(&mut self) -> Vec<(Resource, Side, Order)> {
        self.expire(usize::MAX, 0)
    }

    /// Count of open (bids, asks) at each price level for one resource.
    pub fn depth(&self, resource: Resource) -> ([usize; MAX_PRICE + 1], [usize; MAX_PRICE + 1]) {
        let mut bids = [0usize; MAX_PRICE + 1];
        let mut asks = [0usize; MAX_PRICE + 1];
        let book = &self.books[resource.index()];
        for o in &book.bids {
            bids[o.price] += 1;
        }
        for o in &book.asks {
            asks[o.price] += 1;
        }
        (bids, asks)
    }
}
