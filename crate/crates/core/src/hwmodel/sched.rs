//! Cycle-level bank-port scheduling of array reads.

use serde::{Deserialize, Serialize};

use super::PORTS_PER_BANK;

/// How array addresses map to banks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankLayout {
    /// Address `a` lives in bank `a mod B`.
    Cyclic,
    /// Consecutive runs of `depth` addresses share a bank.
    Block { depth: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankConfig {
    pub banks: u64,
    pub layout: BankLayout,
}

impl BankConfig {
    pub fn cyclic(banks: u64) -> Self {
        Self {
            banks,
            layout: BankLayout::Cyclic,
        }
    }

    pub fn bank_of(&self, addr: u64) -> usize {
        let b = match self.layout {
            BankLayout::Cyclic => addr % self.banks,
            BankLayout::Block { depth } => (addr / depth.max(1)).min(self.banks - 1),
        };
        b as usize
    }
}

/// Issues the reads of `trace` (one address list per loop iteration) onto
/// dual-port banks and returns the achieved steady-state initiation
/// interval.
///
/// Iterations launch in order at most one per cycle. Each read takes the
/// earliest cycle at or after its iteration's launch with a free port on
/// its bank. The interval is the cycles spent from the first launch to the
/// last read, divided by the iteration count and rounded up.
pub fn simulate_bank_ports(trace: &[Vec<u64>], cfg: &BankConfig) -> u64 {
    assert!(cfg.banks >= 1, "bank count must be at least 1");
    if trace.is_empty() {
        return 1;
    }
    let banks = cfg.banks as usize;
    // used[cycle * banks + bank] = ports taken
    let mut used: Vec<u64> = Vec::new();
    let mut last_cycle = 0usize;
    for (launch, reads) in trace.iter().enumerate() {
        last_cycle = last_cycle.max(launch);
        for &addr in reads {
            let bank = cfg.bank_of(addr);
            let mut c = launch;
            loop {
                if used.len() < (c + 1) * banks {
                    used.resize((c + 1) * banks, 0);
                }
                if used[c * banks + bank] < PORTS_PER_BANK {
                    used[c * banks + bank] += 1;
                    break;
                }
                c += 1;
            }
            last_cycle = last_cycle.max(c);
        }
    }
    ((last_cycle + 1) as u64)
        .div_ceil(trace.len() as u64)
        .max(1)
}
