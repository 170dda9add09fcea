//! Dynamic sets over a small integer universe with constant-time updates and
//! predecessor/successor search.
//!
//! Membership lives in a bitmap; members are also threaded through a sorted
//! doubly linked list whose nodes sit in a dense handle array (swap-remove on
//! delete), and a menu array maps each integer to its node.

use crate::error::{invalid, Error, Result};

/// Largest supported universe.
pub const MAX_UNIVERSE: usize = 256;
const WORDS: usize = MAX_UNIVERSE / 64;
const NIL: u16 = u16::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    value: u16,
    prev: u16,
    next: u16,
}

#[derive(Clone, Debug)]
pub struct BoundedIntSet {
    universe: usize,
    bitmap: [u64; WORDS],
    handles: Vec<Node>,
    menu: Vec<u16>,
    head: u16,
    tail: u16,
}

impl BoundedIntSet {
    pub fn new(universe: usize) -> Result<Self> {
        if universe == 0 || universe > MAX_UNIVERSE {
            return Err(invalid(format!("universe size {universe} not in [1, {MAX_UNIVERSE}]")));
        }
        Ok(BoundedIntSet {
            universe,
            bitmap: [0; WORDS],
            handles: Vec::new(),
            menu: vec![NIL; universe],
            head: NIL,
            tail: NIL,
        })
    }

    pub fn build(members: &[usize], universe: usize) -> Result<Self> {
        let mut set = BoundedIntSet::new(universe)?;
        for &m in members {
            set.check(m)?;
            if set.contains(m) {
                return Err(invalid(format!("duplicate member {m}")));
            }
            set.bitmap[m / 64] |= 1 << (m % 64);
        }
        // Thread the list in ascending order straight from the bitmap.
        let mut prev = NIL;
        let mut cur = set.successor(0);
        while let Some(v) = cur {
            let h = set.handles.len() as u16;
            set.handles.push(Node { value: v as u16, prev, next: NIL });
            if prev == NIL {
                set.head = h;
            } else {
                set.handles[prev as usize].next = h;
            }
            set.menu[v] = h;
            prev = h;
            cur = if v + 1 < universe { set.successor(v + 1) } else { None };
        }
        set.tail = prev;
        Ok(set)
    }

    fn check(&self, q: usize) -> Result<()> {
        if q >= self.universe {
            return Err(invalid(format!("{q} outside universe [0, {})", self.universe)));
        }
        Ok(())
    }

    #[inline]
    pub fn universe(&self) -> usize {
        self.universe
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.handles.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    #[inline]
    pub fn contains(&self, q: usize) -> bool {
        q < self.universe && (self.bitmap[q / 64] >> (q % 64)) & 1 == 1
    }

    pub fn insert(&mut self, q: usize) -> Result<()> {
        self.check(q)?;
        if self.contains(q) {
            return Err(invalid(format!("{q} already present")));
        }
        let pred = if q == 0 { None } else { self.predecessor(q - 1) };
        let h = self.handles.len() as u16;
        let (prev, next) = match pred {
            Some(p) => {
                let ph = self.menu[p];
                (ph, self.handles[ph as usize].next)
            }
            None => (NIL, self.head),
        };
        self.handles.push(Node { value: q as u16, prev, next });
        if prev == NIL {
            self.head = h;
        } else {
            self.handles[prev as usize].next = h;
        }
        if next == NIL {
            self.tail = h;
        } else {
            self.handles[next as usize].prev = h;
        }
        self.menu[q] = h;
        self.bitmap[q / 64] |= 1 << (q % 64);
        Ok(())
    }

    pub fn delete(&mut self, q: usize) -> Result<()> {
        self.check(q)?;
        if !self.contains(q) {
            return Err(invalid(format!("{q} not present")));
        }
        let h = self.menu[q];
        let Node { prev, next, .. } = self.handles[h as usize];
        if prev == NIL {
            self.head = next;
        } else {
            self.handles[prev as usize].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.handles[next as usize].prev = prev;
        }
        // Swap-remove, then repair every reference to the moved node.
        let last = self.handles.len() as u16 - 1;
        self.handles.swap_remove(h as usize);
        if h != last {
            let moved = self.handles[h as usize];
            self.menu[moved.value as usize] = h;
            if moved.prev == NIL {
                self.head = h;
            } else {
                self.handles[moved.prev as usize].next = h;
            }
            if moved.next == NIL {
                self.tail = h;
            } else {
                self.handles[moved.next as usize].prev = h;
            }
        }
        self.menu[q] = NIL;
        self.bitmap[q / 64] &= !(1 << (q % 64));
        Ok(())
    }

    /// Smallest member `>= q`.
    pub fn successor(&self, q: usize) -> Option<usize> {
        if q >= self.universe {
            return None;
        }
        let mut w = q / 64;
        let mut bits = self.bitmap[w] & (u64::MAX << (q % 64));
        loop {
            if bits != 0 {
                return Some(w * 64 + bits.trailing_zeros() as usize);
            }
            w += 1;
            if w >= WORDS {
                return None;
            }
            bits = self.bitmap[w];
        }
    }

    /// Largest member `<= q`.
    pub fn predecessor(&self, q: usize) -> Option<usize> {
        let q = q.min(self.universe - 1);
        let mut w = q / 64;
        let shift = 63 - q % 64;
        let mut bits = self.bitmap[w] & (u64::MAX >> shift);
        loop {
            if bits != 0 {
                return Some(w * 64 + 63 - bits.leading_zeros() as usize);
            }
            if w == 0 {
                return None;
            }
            w -= 1;
            bits = self.bitmap[w];
        }
    }

    pub fn min(&self) -> Option<usize> {
        (self.head != NIL).then(|| self.handles[self.head as usize].value as usize)
    }

    pub fn max(&self) -> Option<usize> {
        (self.tail != NIL).then(|| self.handles[self.tail as usize].value as usize)
    }

    /// Members in ascending order, following the linked list.
    pub fn iter(&self) -> Iter<'_> {
        Iter { set: self, cur: self.head }
    }

    /// Members in `[lo, hi]` ascending, read from the bitmap.
    pub fn range(&self, lo: usize, hi: usize) -> impl Iterator<Item = usize> + '_ {
        let mut next = self.successor(lo);
        std::iter::from_fn(move || {
            let v = next.filter(|&v| v <= hi)?;
            next = self.successor(v + 1);
            Some(v)
        })
    }

    /// Checks that bitmap, list, handles and menu describe the same set.
    pub fn audit(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidState(format!("sorted set: {m}")));
        let from_bits: Vec<usize> = (0..self.universe).filter(|&i| self.contains(i)).collect();
        let from_list: Vec<usize> = self.iter().collect();
        if from_bits != from_list {
            return bad("list and bitmap disagree");
        }
        if self.handles.len() != from_bits.len() {
            return bad("handle count differs from member count");
        }
        for (i, &m) in self.menu.iter().enumerate() {
            let live = m != NIL;
            if live != self.contains(i) {
                return bad("menu entry liveness differs from bitmap");
            }
            if live && self.handles[m as usize].value as usize != i {
                return bad("menu entry points at the wrong node");
            }
        }
        let mut cur = self.tail;
        let mut back = Vec::new();
        while cur != NIL {
            back.push(self.handles[cur as usize].value as usize);
            cur = self.handles[cur as usize].prev;
        }
        back.reverse();
        if back != from_list {
            return bad("backward links disagree");
        }
        Ok(())
    }

    pub fn heap_bytes(&self) -> usize {
        self.handles.capacity() * std::mem::size_of::<Node>() + self.menu.capacity() * 2
    }
}

pub struct Iter<'a> {
    set: &'a BoundedIntSet,
    cur: u16,
}

impl Iterator for Iter<'_> {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.cur == NIL {
            return None;
        }
        let node = self.set.handles[self.cur as usize];
        self.cur = node.next;
        Some(node.value as usize)
    }
}
