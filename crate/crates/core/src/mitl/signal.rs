//! Boolean signals over a bounded time domain, stored as the set of times
//! where the signal is true: a sorted list of disjoint, non-touching
//! intervals, each endpoint open or closed.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: true,
            hi_closed: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn contains(&self, t: f64) -> bool {
        let above = if self.lo_closed { t >= self.lo } else { t > self.lo };
        let below = if self.hi_closed { t <= self.hi } else { t < self.hi };
        above && below
    }

    fn intersect(&self, o: &Interval) -> Interval {
        let (lo, lo_closed) = if self.lo > o.lo {
            (self.lo, self.lo_closed)
        } else if o.lo > self.lo {
            (o.lo, o.lo_closed)
        } else {
            (self.lo, self.lo_closed && o.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < o.hi {
            (self.hi, self.hi_closed)
        } else if o.hi < self.hi {
            (o.hi, o.hi_closed)
        } else {
            (self.hi, self.hi_closed && o.hi_closed)
        };
        Interval {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }
}

/// True-set of a boolean signal on the domain `[0, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub end: f64,
    pub ivs: Vec<Interval>,
}

impl Signal {
    pub fn always_true(end: f64) -> Signal {
        Signal {
            end,
            ivs: vec![Interval::closed(0.0, end)],
        }
    }

    /// Builds a canonical signal from arbitrary (possibly overlapping,
    /// unsorted, out-of-domain) intervals.
    pub fn from_intervals(end: f64, mut ivs: Vec<Interval>) -> Signal {
        let dom = Interval::closed(0.0, end);
        ivs.retain_mut(|iv| {
            *iv = iv.intersect(&dom);
            !iv.is_empty()
        });
        ivs.sort_by(|a, b| {
            a.lo.total_cmp(&b.lo)
                .then_with(|| b.lo_closed.cmp(&a.lo_closed))
        });
        let mut out: Vec<Interval> = Vec::with_capacity(ivs.len());
        for iv in ivs {
            if let Some(last) = out.last_mut() {
                let touches = iv.lo < last.hi || (iv.lo == last.hi && (last.hi_closed || iv.lo_closed));
                if touches {
                    if iv.hi > last.hi {
                        last.hi = iv.hi;
                        last.hi_closed = iv.hi_closed;
                    } else if iv.hi == last.hi {
                        last.hi_closed |= iv.hi_closed;
                    }
                    continue;
                }
            }
            out.push(iv);
        }
        Signal { end, ivs: out }
    }

    pub fn contains(&self, t: f64) -> bool {
        if !(0.0..=self.end).contains(&t) {
            return false;
        }
        // first interval whose upper end is not left of t
        let k = self.ivs.partition_point(|iv| iv.hi < t);
        self.ivs[k..]
            .iter()
            .take(2)
            .any(|iv| iv.contains(t))
    }

    pub fn complement(&self) -> Signal {
        let mut out = Vec::with_capacity(self.ivs.len() + 1);
        let mut lo = 0.0;
        let mut lo_closed = true;
        for iv in &self.ivs {
            out.push(Interval {
                lo,
                hi: iv.lo,
                lo_closed,
                hi_closed: !iv.lo_closed,
            });
            lo = iv.hi;
            lo_closed = !iv.hi_closed;
        }
        out.push(Interval {
            lo,
            hi: self.end,
            lo_closed,
            hi_closed: true,
        });
        out.retain(|iv| !iv.is_empty());
        Signal { end: self.end, ivs: out }
    }

    pub fn intersect(&self, other: &Signal) -> Signal {
        let end = self.end.min(other.end);
        let (a, b) = (&self.ivs, &other.ivs);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let x = a[i].intersect(&b[j]);
            if !x.is_empty() {
                out.push(x);
            }
            // advance whichever ends first
            let a_first = a[i].hi < b[j].hi || (a[i].hi == b[j].hi && !a[i].hi_closed);
            if a_first {
                i += 1;
            } else {
                j += 1;
            }
        }
        Signal::from_intervals(end, out)
    }

    pub fn union(&self, other: &Signal) -> Signal {
        let end = self.end.min(other.end);
        let mut all = self.ivs.clone();
        all.extend_from_slice(&other.ivs);
        Signal::from_intervals(end, all)
    }

    /// `{t : [t+a, t+b] meets the true set}`, on the domain `[0, end-b]`.
    pub fn dilate(&self, a: f64, b: f64) -> Signal {
        let end = self.end - b;
        let out = self.ivs.iter().map(|c| dilate_one(c, a, b)).collect();
        Signal::from_intervals(end, out)
    }

    /// `{t : [t+a, t+b] lies inside the true set}`, on `[0, end-b]`.
    pub fn erode(&self, a: f64, b: f64) -> Signal {
        let end = self.end - b;
        let out = self
            .ivs
            .iter()
            .map(|c| Interval {
                lo: c.lo - a,
                hi: c.hi - b,
                lo_closed: c.lo_closed,
                hi_closed: c.hi_closed,
            })
            .collect();
        Signal::from_intervals(end, out)
    }

    /// Bounded until with witness window `[t+a, t+b]` and the left operand
    /// required on `[t, t')`.
    pub fn until(lhs: &Signal, rhs: &Signal, a: f64, b: f64) -> Signal {
        let end = lhs.end.min(rhs.end) - b;
        let mut out = Vec::new();
        if a == 0.0 {
            out.extend_from_slice(&rhs.ivs);
        }
        let mut start = 0;
        for iv in &lhs.ivs {
            // witnesses may sit on the right endpoint of the lhs component
            let reach = Interval {
                hi_closed: true,
                ..*iv
            };
            while start < rhs.ivs.len() && rhs.ivs[start].hi < reach.lo {
                start += 1;
            }
            for c in &rhs.ivs[start..] {
                if c.lo > reach.hi {
                    break;
                }
                let w = c.intersect(&reach);
                if w.is_empty() {
                    continue;
                }
                let x = dilate_one(&w, a, b).intersect(iv);
                if !x.is_empty() {
                    out.push(x);
                }
            }
        }
        Signal::from_intervals(end, out)
    }
}

fn dilate_one(c: &Interval, a: f64, b: f64) -> Interval {
    Interval {
        lo: c.lo - b,
        hi: c.hi - a,
        lo_closed: c.lo_closed,
        hi_closed: c.hi_closed,
    }
}
