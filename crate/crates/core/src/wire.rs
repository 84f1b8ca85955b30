//! Answer wire format and bit accounting.
//!
//! Answers are packed back to back into a little-endian bitfield: field bits
//! are written least-significant first, filling each byte from bit 0 upward.
//! A Q&A answer is the 0-based column in `ceil(log2(2m))` bits. An RG answer
//! is the 0-based reported group in `ceil(log2(k))` bits followed by the
//! alphabet index of the reported value in `ceil(log2(2m))` bits. User
//! indices are not transmitted; the server knows who is sending.

use crate::error::{Error, Result};
use crate::population::Alphabet;
use crate::qa::QaAnswer;
use crate::rg::RgAnswer;

/// Bits needed to encode one of `count` symbols, ceil(log2(count)).
pub fn bit_width(count: usize) -> u32 {
    match count {
        0 | 1 => 0,
        c => usize::BITS - (c - 1).leading_zeros(),
    }
}

pub fn qa_bits_per_user(m: u32) -> u32 {
    bit_width(2 * m as usize)
}

pub fn rg_bits_per_user(k: usize, m: u32) -> u32 {
    bit_width(k) + bit_width(2 * m as usize)
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: u64, width: u32) {
        debug_assert!(width == 64 || value >> width == 0);
        for b in 0..width {
            let byte = (self.len / 8) as usize;
            if byte == self.bytes.len() {
                self.bytes.push(0);
            }
            if (value >> b) & 1 == 1 {
                self.bytes[byte] |= 1 << (self.len % 8);
            }
            self.len += 1;
        }
    }

    pub fn finish(self) -> PackedAnswers {
        PackedAnswers {
            bits: self.len,
            bytes: self.bytes,
        }
    }
}

/// A packed payload; `bits` is the exact payload length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedAnswers {
    pub bits: u64,
    pub bytes: Vec<u8>,
}

pub struct BitReader<'a> {
    packed: &'a PackedAnswers,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(packed: &'a PackedAnswers) -> Self {
        Self { packed, pos: 0 }
    }

    pub fn read(&mut self, width: u32) -> Result<u64> {
        if self.pos + width as u64 > self.packed.bits {
            return Err(Error::Wire(format!(
                "read of {width} bits at offset {} overruns {}-bit payload",
                self.pos, self.packed.bits
            )));
        }
        let mut out = 0u64;
        for b in 0..width {
            let byte = self.packed.bytes[(self.pos / 8) as usize];
            out |= (((byte >> (self.pos % 8)) & 1) as u64) << b;
            self.pos += 1;
        }
        Ok(out)
    }
}

pub fn encode_qa_answers(answers: &[QaAnswer], m: u32) -> Result<PackedAnswers> {
    let width = 2 * m as usize;
    let bits = qa_bits_per_user(m);
    let mut w = BitWriter::new();
    for a in answers {
        if a.column >= width {
            return Err(Error::ColumnOutOfRange {
                column: a.column,
                width,
            });
        }
        w.push(a.column as u64, bits);
    }
    Ok(w.finish())
}

/// Decodes columns; user indices are assigned 1..=count in payload order.
pub fn decode_qa_answers(packed: &PackedAnswers, m: u32, count: usize) -> Result<Vec<QaAnswer>> {
    let bits = qa_bits_per_user(m);
    let mut r = BitReader::new(packed);
    (1..=count as u64)
        .map(|user_index| {
            let column = r.read(bits)? as usize;
            if column >= 2 * m as usize {
                return Err(Error::ColumnOutOfRange {
                    column,
                    width: 2 * m as usize,
                });
            }
            Ok(QaAnswer { user_index, column })
        })
        .collect()
}

pub fn encode_rg_answers(answers: &[RgAnswer], k: usize, m: u32) -> Result<PackedAnswers> {
    let alphabet = Alphabet::new(m)?;
    let (gb, vb) = (bit_width(k), bit_width(alphabet.size()));
    let mut w = BitWriter::new();
    for a in answers {
        if a.group >= k {
            return Err(Error::GroupOutOfRange { group: a.group, k });
        }
        let idx = alphabet.index_of(a.value).ok_or(Error::ValueNotInAlphabet(a.value))?;
        w.push(a.group as u64, gb);
        w.push(idx as u64, vb);
    }
    Ok(w.finish())
}

pub fn decode_rg_answers(packed: &PackedAnswers, k: usize, m: u32, count: usize) -> Result<Vec<RgAnswer>> {
    let alphabet = Alphabet::new(m)?;
    let (gb, vb) = (bit_width(k), bit_width(alphabet.size()));
    let mut r = BitReader::new(packed);
    (1..=count as u64)
        .map(|user_index| {
            let group = r.read(gb)? as usize;
            let idx = r.read(vb)? as usize;
            if group >= k {
                return Err(Error::GroupOutOfRange { group, k });
            }
            if idx >= alphabet.size() {
                return Err(Error::Wire(format!("value index {idx} out of range")));
            }
            Ok(RgAnswer {
                user_index,
                group,
                value: alphabet.value(idx),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn widths() {
        assert_eq!(bit_width(1), 0);
        assert_eq!(bit_width(2), 1);
        assert_eq!(bit_width(3), 2);
        assert_eq!(bit_width(4), 2);
        assert_eq!(bit_width(5), 3);
        assert_eq!(bit_width(1024), 10);
        assert_eq!(qa_bits_per_user(1), 1);
        assert_eq!(qa_bits_per_user(3), 3);
        assert_eq!(rg_bits_per_user(2, 1), 2);
        assert_eq!(rg_bits_per_user(3, 2), 4);
    }

    #[test]
    fn one_bit_per_binary_answer() {
        let answers: Vec<_> = (0..11)
            .map(|i| QaAnswer {
                user_index: i + 1,
                column: (i % 2) as usize,
            })
            .collect();
        let packed = encode_qa_answers(&answers, 1).unwrap();
        assert_eq!(packed.bits, 11);
        assert_eq!(packed.bytes, vec![0b1010_1010, 0b0000_0010]);
    }

    #[test]
    fn rg_field_order_is_group_then_value() {
        let a = [RgAnswer {
            user_index: 1,
            group: 1,
            value: -1,
        }];
        // group 1 -> bit0 = 1, value -1 is index 0 -> bit1 = 0
        assert_eq!(encode_rg_answers(&a, 2, 1).unwrap().bytes, vec![0b01]);
        let a = [RgAnswer {
            user_index: 1,
            group: 0,
            value: 1,
        }];
        assert_eq!(encode_rg_answers(&a, 2, 1).unwrap().bytes, vec![0b10]);
    }

    #[test]
    fn truncated_payload_rejected() {
        let packed = PackedAnswers {
            bits: 3,
            bytes: vec![0xff],
        };
        assert!(decode_qa_answers(&packed, 1, 4).is_err());
        assert!(decode_qa_answers(&packed, 1, 3).is_ok());
    }

    proptest! {
        #[test]
        fn qa_roundtrip(m in 1u32..9, cols in prop::collection::vec(any::<u16>(), 0..200)) {
            let answers: Vec<_> = cols.iter().enumerate()
                .map(|(i, &c)| QaAnswer { user_index: i as u64 + 1, column: c as usize % (2 * m as usize) })
                .collect();
            let packed = encode_qa_answers(&answers, m).unwrap();
            prop_assert_eq!(packed.bits, answers.len() as u64 * qa_bits_per_user(m) as u64);
            prop_assert_eq!(decode_qa_answers(&packed, m, answers.len()).unwrap(), answers);
        }

        #[test]
        fn rg_roundtrip(k in 2usize..10, m in 1u32..6, raw in prop::collection::vec((any::<u16>(), any::<u16>()), 0..200)) {
            let alphabet = Alphabet::new(m).unwrap();
            let answers: Vec<_> = raw.iter().enumerate()
                .map(|(i, &(g, v))| RgAnswer {
                    user_index: i as u64 + 1,
                    group: g as usize % k,
                    value: alphabet.value(v as usize % alphabet.size()),
                })
                .collect();
            let packed = encode_rg_answers(&answers, k, m).unwrap();
            prop_assert_eq!(packed.bits, answers.len() as u64 * rg_bits_per_user(k, m) as u64);
            prop_assert_eq!(decode_rg_answers(&packed, k, m, answers.len()).unwrap(), answers);
        }
    }
}
