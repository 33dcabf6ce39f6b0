//! Binary index format, little-endian:
//!
//! ```text
//! "SPIX" | version u32 = 1 | vocab_fingerprint u64 | num_answers u32
//! top_k u32 | num_terms_with_postings u32
//! per term (ascending term id):
//!     term_id u32 | posting_count u32 | posting_count × (answer_id u32, score f32)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use super::{InvertedIndex, Posting};
use crate::binio::ByteReader;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: [u8; 4] = *b"SPIX";
pub const INDEX_VERSION: u32 = 1;
/// Bytes before the first term record.
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 4;

impl InvertedIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.postings.len() + 8 * self.num_postings());
        out.extend_from_slice(&INDEX_MAGIC);
        out.write_u32::<LittleEndian>(INDEX_VERSION).unwrap();
        out.write_u64::<LittleEndian>(self.vocab_fingerprint).unwrap();
        out.write_u32::<LittleEndian>(self.num_answers).unwrap();
        out.write_u32::<LittleEndian>(self.top_k).unwrap();
        out.write_u32::<LittleEndian>(self.postings.len() as u32).unwrap();
        for (&term, list) in &self.postings {
            out.write_u32::<LittleEndian>(term).unwrap();
            out.write_u32::<LittleEndian>(list.len() as u32).unwrap();
            for p in list {
                out.write_u32::<LittleEndian>(p.answer_id).unwrap();
                out.write_f32::<LittleEndian>(p.score).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data);
        r.magic(INDEX_MAGIC)?;
        let version_offset = r.offset();
        let version = r.u32("version")?;
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion {
                version,
                offset: version_offset,
            });
        }
        let vocab_fingerprint = r.u64("vocab fingerprint")?;
        let num_answers = r.u32("num_answers")?;
        let top_k = r.u32("top_k")?;
        let num_terms = r.u32("term count")?;
        let mut postings = BTreeMap::new();
        let mut previous_term = None;
        for _ in 0..num_terms {
            let at = r.offset();
            let term = r.u32("term id")?;
            if previous_term.is_some_and(|p| term <= p) {
                return Err(r.error(at, format!("term id {term} out of order")));
            }
            previous_term = Some(term);
            let count = r.u32("posting count")? as usize;
            if count == 0 {
                return Err(r.error(at, format!("term {term} has an empty posting list")));
            }
            if r.remaining() < count * 8 {
                return Err(r.error(r.offset(), "truncated file while reading postings"));
            }
            let mut list = Vec::with_capacity(count);
            let mut previous_answer = None;
            for _ in 0..count {
                let at = r.offset();
                let answer_id = r.u32("answer id")?;
                let score = r.f32("score")?;
                if answer_id >= num_answers || previous_answer.is_some_and(|p| answer_id <= p) {
                    return Err(r.error(at, format!("answer id {answer_id} out of order or range")));
                }
                if !(score.is_finite() && score > 0.0) {
                    return Err(r.error(at, format!("non-positive score {score}")));
                }
                previous_answer = Some(answer_id);
                list.push(Posting { answer_id, score });
            }
            postings.insert(term, list);
        }
        r.finish()?;
        Ok(InvertedIndex {
            postings,
            num_answers,
            vocab_fingerprint,
            top_k,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        InvertedIndex::from_bytes(&data)
    }
}
