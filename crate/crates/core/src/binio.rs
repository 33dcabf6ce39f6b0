//! Little-endian read helpers that report the failing byte offset.

use std::io::Cursor;

use byteorder::{LittleEndian, ReadBytesExt};

use crate::error::{Error, Result};

pub(crate) struct ByteReader<'a> {
    cursor: Cursor<&'a [u8]>,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        ByteReader {
            cursor: Cursor::new(data),
        }
    }

    pub fn offset(&self) -> u64 {
        self.cursor.position()
    }

    pub fn remaining(&self) -> usize {
        self.cursor.get_ref().len() - self.cursor.position() as usize
    }

    fn truncated(&self, what: &str) -> Error {
        Error::Format {
            offset: self.offset(),
            message: format!("truncated file while reading {what}"),
        }
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let mut found = [0u8; 4];
        let available = self.remaining().min(4);
        found[..available].copy_from_slice(&self.cursor.get_ref()[..available]);
        if available < 4 || found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        self.cursor.set_position(4);
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        if self.remaining() < 4 {
            return Err(self.truncated(what));
        }
        self.cursor.read_u32::<LittleEndian>().map_err(|_| self.truncated(what))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        if self.remaining() < 8 {
            return Err(self.truncated(what));
        }
        self.cursor.read_u64::<LittleEndian>().map_err(|_| self.truncated(what))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        if self.remaining() < 4 {
            return Err(self.truncated(what));
        }
        self.cursor.read_f32::<LittleEndian>().map_err(|_| self.truncated(what))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        if self.remaining() < 8 {
            return Err(self.truncated(what));
        }
        self.cursor.read_f64::<LittleEndian>().map_err(|_| self.truncated(what))
    }

    pub fn bytes(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(self.truncated(what));
        }
        let start = self.cursor.position() as usize;
        self.cursor.set_position((start + len) as u64);
        Ok(&self.cursor.get_ref()[start..start + len])
    }

    /// Fails unless every byte has been consumed.
    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format {
                offset: self.offset(),
                message: format!("{} trailing bytes", self.remaining()),
            });
        }
        Ok(())
    }

    pub fn error(&self, offset: u64, message: impl Into<String>) -> Error {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
