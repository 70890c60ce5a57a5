//! Canonical Huffman coding. Tables serialize as (symbol, bit-length) pairs;
//! codes are reassigned canonically on both ends so decode is table-driven.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Symbol-to-bit-length map with canonical code assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    /// Sorted by symbol; lengths follow the canonical ordering contract.
    pub lengths: BTreeMap<u32, u8>,
}

impl HuffmanTable {
    /// Builds code lengths from frequencies with the usual two-smallest merge.
    /// Ties break on insertion order so identical inputs give identical
    /// tables. A single-symbol stream gets a 1-bit code.
    pub fn from_frequencies(freq: &BTreeMap<u32, u64>) -> Result<Self> {
        if freq.is_empty() {
            return Err(Error::invalid("cannot build a code for an empty alphabet"));
        }
        if freq.len() == 1 {
            let sym = *freq.keys().next().unwrap();
            let mut lengths = BTreeMap::new();
            lengths.insert(sym, 1);
            return Ok(Self { lengths });
        }
        // Heap of (count, tie, node). Leaves first, then merges in order.
        #[derive(PartialEq, Eq, PartialOrd, Ord)]
        struct Entry(u64, u64, usize);
        enum Node {
            Leaf(u32),
            Merge(usize, usize),
        }
        let mut nodes = Vec::with_capacity(freq.len() * 2);
        let mut heap = std::collections::BinaryHeap::new();
        let mut tie = 0u64;
        for (sym, count) in freq {
            nodes.push(Node::Leaf(*sym));
            heap.push(std::cmp::Reverse(Entry(*count, tie, nodes.len() - 1)));
            tie += 1;
        }
        while heap.len() > 1 {
            let std::cmp::Reverse(Entry(c1, _, a)) = heap.pop().unwrap();
            let std::cmp::Reverse(Entry(c2, _, b)) = heap.pop().unwrap();
            nodes.push(Node::Merge(a, b));
            heap.push(std::cmp::Reverse(Entry(c1 + c2, tie, nodes.len() - 1)));
            tie += 1;
        }
        let root = heap.pop().unwrap().0 .2;
        let mut lengths = BTreeMap::new();
        let mut stack = vec![(root, 0u8)];
        while let Some((idx, depth)) = stack.pop() {
            match nodes[idx] {
                Node::Leaf(sym) => {
                    lengths.insert(sym, depth.max(1));
                }
                Node::Merge(a, b) => {
                    stack.push((a, depth + 1));
                    stack.push((b, depth + 1));
                }
            }
        }
        Ok(Self { lengths })
    }

    /// Canonical codes: symbols sorted by (length, symbol), codes counted up
    /// and left-shifted at every length increase.
    pub fn assign_codes(&self) -> Vec<(u32, u32, u8)> {
        let mut order: Vec<(u32, u8)> = self.lengths.iter().map(|(s, l)| (*s, *l)).collect();
        order.sort_by_key(|(s, l)| (*l, *s));
        let mut out = Vec::with_capacity(order.len());
        let mut code = 0u32;
        let mut prev_len = 0u8;
        for (sym, len) in order {
            code <<= len - prev_len;
            out.push((sym, code, len));
            code += 1;
            prev_len = len;
        }
        out
    }

    /// Sum of 2^-len over all codes, times 2^max_len (exact integer form of
    /// the Kraft sum).
    pub fn kraft_numerator(&self) -> (u128, u8) {
        let max_len = self.lengths.values().copied().max().unwrap_or(0);
        let sum = self.lengths.values().map(|l| 1u128 << (max_len - l)).sum();
        (sum, max_len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanStream {
    pub table: HuffmanTable,
    pub n_symbols: u64,
    pub bit_len: u64,
    pub bytes: Vec<u8>,
}

/// Encodes the symbol stream with a frequency-derived canonical code.
pub fn huffman_encode(symbols: &[u32]) -> Result<HuffmanStream> {
    if symbols.is_empty() {
        return Err(Error::invalid("cannot huffman-encode an empty stream"));
    }
    let mut freq = BTreeMap::new();
    for s in symbols {
        *freq.entry(*s).or_insert(0u64) += 1;
    }
    let table = HuffmanTable::from_frequencies(&freq)?;
    let codes: BTreeMap<u32, (u32, u8)> = table
        .assign_codes()
        .into_iter()
        .map(|(s, c, l)| (s, (c, l)))
        .collect();
    let mut bytes = Vec::new();
    let mut bit_len = 0u64;
    let mut acc = 0u64;
    let mut acc_bits = 0u8;
    for s in symbols {
        let (code, len) = codes[s];
        acc = (acc << len) | code as u64;
        acc_bits += len;
        bit_len += len as u64;
        while acc_bits >= 8 {
            acc_bits -= 8;
            bytes.push((acc >> acc_bits) as u8);
        }
    }
    if acc_bits > 0 {
        bytes.push(((acc << (8 - acc_bits)) & 0xff) as u8);
    }
    Ok(HuffmanStream {
        table,
        n_symbols: symbols.len() as u64,
        bit_len,
        bytes,
    })
}

/// Table-driven canonical decode of exactly `n_symbols` symbols.
pub fn huffman_decode(stream: &HuffmanStream) -> Result<Vec<u32>> {
    let assigned = stream.table.assign_codes();
    if assigned.is_empty() {
        return Err(Error::invalid("empty huffman table"));
    }
    let max_len = assigned.iter().map(|(_, _, l)| *l).max().unwrap() as usize;
    // first_code[l], count[l], offset into the (length, symbol)-sorted list.
    let mut first_code = vec![0u32; max_len + 1];
    let mut count = vec![0u32; max_len + 1];
    let mut offset = vec![0usize; max_len + 1];
    let mut symbols_sorted = Vec::with_capacity(assigned.len());
    {
        let mut l_prev = 0usize;
        for (cursor, (sym, code, len)) in assigned.iter().enumerate() {
            let l = *len as usize;
            if count[l] == 0 {
                first_code[l] = *code;
                offset[l] = cursor;
            }
            count[l] += 1;
            symbols_sorted.push(*sym);
            debug_assert!(l >= l_prev);
            l_prev = l;
        }
    }
    let mut out = Vec::with_capacity(stream.n_symbols as usize);
    let mut bit_pos = 0u64;
    let read_bit = |pos: u64| -> Result<u32> {
        if pos >= stream.bit_len {
            return Err(Error::Corrupt {
                offset: pos / 8,
                msg: "huffman bitstream exhausted mid-symbol".into(),
            });
        }
        let byte = stream.bytes[(pos / 8) as usize];
        Ok(((byte >> (7 - (pos % 8))) & 1) as u32)
    };
    for _ in 0..stream.n_symbols {
        let mut code = 0u32;
        let mut len = 0usize;
        loop {
            code = (code << 1) | read_bit(bit_pos)?;
            bit_pos += 1;
            len += 1;
            if len > max_len {
                return Err(Error::Corrupt {
                    offset: bit_pos / 8,
                    msg: "invalid huffman code".into(),
                });
            }
            if count[len] > 0 {
                let delta = code.wrapping_sub(first_code[len]);
                if code >= first_code[len] && delta < count[len] {
                    out.push(symbols_sorted[offset[len] + delta as usize]);
                    break;
                }
            }
        }
    }
    Ok(out)
}
