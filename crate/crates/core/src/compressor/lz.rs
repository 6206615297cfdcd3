//! Reference LZ77 block codec.
//!
//! Greedy parse over a hash-chain matcher whose window is the whole block
//! (blocks are at most one chunk). Sequences are encoded as
//!
//! ```text
//! token    u8: high nibble literal count (15 = extended), low nibble match length - 4
//! [varint] literal count - 15, when the high nibble is 15
//! literals
//! varint   match offset (1..=position), omitted when the block ends after the literals
//! [u8]     match length - 19, when the low nibble is 15
//! ```
//!
//! Matches are 4..=271 bytes. A block made of a single repeated byte is
//! encoded as that one byte; an ordinary stream is never one byte long for a
//! non-empty block, so the forms cannot collide.

use super::CodecError;

pub const MIN_MATCH: usize = 4;
pub const MAX_MATCH: usize = 271;
const MAX_CHAIN: usize = 48;

fn put_varint(out: &mut Vec<u8>, mut v: usize) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(input: &[u8], pos: &mut usize) -> Option<usize> {
    let mut v = 0usize;
    let mut shift = 0;
    loop {
        let b = *input.get(*pos)?;
        *pos += 1;
        if shift > 56 {
            return None;
        }
        v |= ((b & 0x7f) as usize) << shift;
        if b & 0x80 == 0 {
            return Some(v);
        }
        shift += 7;
    }
}

fn emit(out: &mut Vec<u8>, literals: &[u8], m: Option<(usize, usize)>) {
    let lit = literals.len();
    let lit_nib = lit.min(15) as u8;
    let match_nib = match m {
        Some((_, len)) => (len - MIN_MATCH).min(15) as u8,
        None => 0,
    };
    out.push((lit_nib << 4) | match_nib);
    if lit >= 15 {
        put_varint(out, lit - 15);
    }
    out.extend_from_slice(literals);
    if let Some((offset, len)) = m {
        put_varint(out, offset);
        if len - MIN_MATCH >= 15 {
            out.push((len - MIN_MATCH - 15) as u8);
        }
    }
}

#[inline]
fn hash4(b: &[u8], bits: u32) -> usize {
    let v = u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    (v.wrapping_mul(0x9E37_79B1) >> (32 - bits)) as usize
}

/// Compresses one block, appending to `out`.
pub fn compress_block(input: &[u8], out: &mut Vec<u8>) {
    let n = input.len();
    if n == 0 {
        return;
    }
    if n > 1 && input.iter().all(|&b| b == input[0]) {
        out.push(input[0]);
        return;
    }
    if n < MIN_MATCH + 1 {
        emit(out, input, None);
        return;
    }

    let bits = (usize::BITS - (n - 1).leading_zeros()).clamp(8, 16);
    let mut head = vec![u32::MAX; 1 << bits];
    let mut prev = vec![u32::MAX; n];
    let insert = |head: &mut [u32], prev: &mut [u32], pos: usize| {
        let h = hash4(&input[pos..], bits);
        prev[pos] = head[h];
        head[h] = pos as u32;
    };

    let last_match_start = n - MIN_MATCH;
    let mut anchor = 0;
    let mut pos = 0;
    while pos <= last_match_start {
        let h = hash4(&input[pos..], bits);
        let mut cand = head[h];
        let mut best_len = 0;
        let mut best_off = 0;
        let limit = (n - pos).min(MAX_MATCH);
        let mut chain = 0;
        while cand != u32::MAX && chain < MAX_CHAIN {
            let c = cand as usize;
            if input[c + best_len.min(limit - 1)] == input[pos + best_len.min(limit - 1)] {
                let mut l = 0;
                while l < limit && input[c + l] == input[pos + l] {
                    l += 1;
                }
                if l > best_len {
                    best_len = l;
                    best_off = pos - c;
                    if l == limit {
                        break;
                    }
                }
            }
            cand = prev[c];
            chain += 1;
        }
        insert(&mut head, &mut prev, pos);
        if best_len >= MIN_MATCH {
            emit(out, &input[anchor..pos], Some((best_off, best_len)));
            let end = pos + best_len;
            let stop = end.min(last_match_start + 1);
            for p in pos + 1..stop {
                insert(&mut head, &mut prev, p);
            }
            pos = end;
            anchor = end;
        } else {
            pos += 1;
        }
    }
    if anchor < n {
        emit(out, &input[anchor..], None);
    }
}

/// Decompresses one block whose original length is `original_len`.
pub fn decompress_block(input: &[u8], original_len: usize, out: &mut Vec<u8>) -> Result<(), CodecError> {
    let base = out.len();
    let bad = |detail: &'static str| CodecError::Malformed { chunk: 0, detail };
    if original_len == 0 {
        return if input.is_empty() {
            Ok(())
        } else {
            Err(bad("data for empty block"))
        };
    }
    if input.len() == 1 && original_len > 1 {
        out.resize(base + original_len, input[0]);
        return Ok(());
    }
    let mut pos = 0;
    while out.len() - base < original_len {
        let token = *input.get(pos).ok_or(bad("truncated token"))?;
        pos += 1;
        let mut lit = (token >> 4) as usize;
        if lit == 15 {
            lit += get_varint(input, &mut pos).ok_or(bad("truncated literal length"))?;
        }
        let lits = input.get(pos..pos + lit).ok_or(bad("truncated literals"))?;
        if out.len() - base + lit > original_len {
            return Err(bad("literals overrun block"));
        }
        out.extend_from_slice(lits);
        pos += lit;
        if out.len() - base == original_len {
            break;
        }
        let offset = get_varint(input, &mut pos).ok_or(bad("truncated offset"))?;
        let mut len = (token & 0x0f) as usize + MIN_MATCH;
        if len == 15 + MIN_MATCH {
            len += *input.get(pos).ok_or(bad("truncated match length"))? as usize;
            pos += 1;
        }
        let produced = out.len() - base;
        if offset == 0 || offset > produced {
            return Err(bad("match offset out of range"));
        }
        if produced + len > original_len {
            return Err(bad("match overruns block"));
        }
        let from = out.len() - offset;
        for i in 0..len {
            let b = out[from + i];
            out.push(b);
        }
    }
    if pos != input.len() {
        return Err(bad("trailing bytes after block"));
    }
    Ok(())
}
