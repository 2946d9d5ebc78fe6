//! Corpus ingestion: the 27-symbol character codec and binary token streams.
//!
//! Token stream layout (little-endian):
//!
//! ```text
//! magic   [u8; 8]  "DLMTOKS\0"
//! version u32      1
//! V       u32      declared vocabulary size
//! ids     [u32; ..] token ids; 0xFFFFFFFF separates documents
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved id marking a document boundary in token streams.
pub const DOC_SEPARATOR: u32 = u32::MAX;
/// Vocabulary size of the character codec.
pub const TEXT8_VOCAB: usize = 27;

pub const STREAM_MAGIC: [u8; 8] = *b"DLMTOKS\0";
pub const STREAM_VERSION: u32 = 1;
/// Byte length of the stream header.
pub const STREAM_HEADER_LEN: u64 = 16;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid character {ch:?} at byte {position}")]
    InvalidChar { position: usize, ch: char },
    #[error("token id {id} at byte offset {offset} is out of range for vocabulary size {vocab_size}")]
    IdOutOfRange { offset: u64, id: u32, vocab_size: usize },
    #[error("malformed token stream header: {0}")]
    BadHeader(String),
    #[error("token stream declares vocabulary {declared}, expected {expected}")]
    VocabMismatch { declared: usize, expected: usize },
    #[error("token stream truncated at byte offset {offset}")]
    Truncated { offset: u64 },
}

/// Strict vs lenient text handling in [`encode_text8`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextMode {
    /// Only `a`-`z` and space are accepted.
    #[default]
    Strict,
    /// Lowercases, spells out digits, maps everything else to space and
    /// collapses runs of spaces.
    Lenient,
}

const DIGIT_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

#[inline]
fn char_id(c: u8) -> Option<u32> {
    match c {
        b' ' => Some(0),
        b'a'..=b'z' => Some((c - b'a' + 1) as u32),
        _ => None,
    }
}

/// Maps text to ids: space is 0, `a`..`z` are 1..26.
pub fn encode_text8(text: &str, mode: TextMode) -> Result<Vec<u32>, CorpusError> {
    match mode {
        TextMode::Strict => text
            .char_indices()
            .map(|(position, ch)| {
                u8::try_from(ch)
                    .ok()
                    .and_then(char_id)
                    .ok_or(CorpusError::InvalidChar { position, ch })
            })
            .collect(),
        TextMode::Lenient => {
            let mut out = Vec::with_capacity(text.len());
            let push = |id: u32, out: &mut Vec<u32>| {
                if !(id == 0 && out.last() == Some(&0)) {
                    out.push(id);
                }
            };
            for ch in text.chars().flat_map(char::to_lowercase) {
                if let Some(d) = ch.to_digit(10) {
                    push(0, &mut out);
                    for b in DIGIT_WORDS[d as usize].bytes() {
                        push(char_id(b).unwrap(), &mut out);
                    }
                    push(0, &mut out);
                } else {
                    let id = u8::try_from(ch).ok().and_then(char_id).unwrap_or(0);
                    push(id, &mut out);
                }
            }
            Ok(out)
        }
    }
}

/// Inverse of [`encode_text8`]; ids outside the codec become `?`.
pub fn decode_text8(ids: &[u32]) -> String {
    ids.iter()
        .map(|&id| match id {
            0 => ' ',
            1..=26 => (b'a' + (id - 1) as u8) as char,
            _ => '?',
        })
        .collect()
}

/// Writes the stream header followed by ids.
pub struct TokenStreamWriter<W: Write> {
    inner: W,
    vocab_size: usize,
}

impl<W: Write> TokenStreamWriter<W> {
    pub fn new(mut inner: W, vocab_size: usize) -> Result<Self, CorpusError> {
        inner.write_all(&STREAM_MAGIC)?;
        inner.write_all(&STREAM_VERSION.to_le_bytes())?;
        inner.write_all(&(vocab_size as u32).to_le_bytes())?;
        Ok(Self { inner, vocab_size })
    }

    pub fn push(&mut self, id: u32) -> Result<(), CorpusError> {
        if id != DOC_SEPARATOR && id as usize >= self.vocab_size {
            return Err(CorpusError::IdOutOfRange {
                offset: 0,
                id,
                vocab_size: self.vocab_size,
            });
        }
        self.inner.write_all(&id.to_le_bytes())?;
        Ok(())
    }

    /// Writes one document followed by a separator.
    pub fn push_document(&mut self, ids: &[u32]) -> Result<(), CorpusError> {
        for &id in ids {
            self.push(id)?;
        }
        self.push(DOC_SEPARATOR)
    }

    pub fn finish(mut self) -> Result<W, CorpusError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Validating reader over a token stream. Yields ids, including
/// [`DOC_SEPARATOR`].
pub struct TokenStreamReader<R: Read> {
    inner: R,
    vocab_size: usize,
    offset: u64,
    done: bool,
}

impl<R: Read> TokenStreamReader<R> {
    /// Reads and checks the header. `vocab_size = None` accepts the declared
    /// size.
    pub fn new(mut inner: R, vocab_size: Option<usize>) -> Result<Self, CorpusError> {
        let mut header = [0u8; STREAM_HEADER_LEN as usize];
        inner
            .read_exact(&mut header)
            .map_err(|_| CorpusError::BadHeader("shorter than 16 bytes".into()))?;
        if header[..8] != STREAM_MAGIC {
            return Err(CorpusError::BadHeader("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != STREAM_VERSION {
            return Err(CorpusError::BadHeader(format!("unsupported version {version}")));
        }
        let declared = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if let Some(expected) = vocab_size {
            if declared != expected {
                return Err(CorpusError::VocabMismatch { declared, expected });
            }
        }
        Ok(Self {
            inner,
            vocab_size: declared,
            offset: STREAM_HEADER_LEN,
            done: false,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_id(&mut self) -> Result<Option<u32>, CorpusError> {
        let mut buf = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        match filled {
            0 => Ok(None),
            4 => {
                let id = u32::from_le_bytes(buf);
                let offset = self.offset;
                self.offset += 4;
                if id != DOC_SEPARATOR && id as usize >= self.vocab_size {
                    return Err(CorpusError::IdOutOfRange {
                        offset,
                        id,
                        vocab_size: self.vocab_size,
                    });
                }
                Ok(Some(id))
            }
            _ => Err(CorpusError::Truncated { offset: self.offset }),
        }
    }
}

impl<R: Read> Iterator for TokenStreamReader<R> {
    type Item = Result<u32, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = self.next_id().transpose();
        if !matches!(r, Some(Ok(_))) {
            self.done = true;
        }
        r
    }
}

/// Opens a token stream file for validated streaming reads.
pub fn load_token_stream(
    path: impl AsRef<Path>,
    vocab_size: Option<usize>,
) -> Result<TokenStreamReader<BufReader<File>>, CorpusError> {
    TokenStreamReader::new(BufReader::new(File::open(path)?), vocab_size)
}

/// Writes sequences as separator-terminated documents.
pub fn write_token_stream(
    path: impl AsRef<Path>,
    vocab_size: usize,
    documents: &[Vec<u32>],
) -> Result<(), CorpusError> {
    let mut w = TokenStreamWriter::new(BufWriter::new(File::create(path)?), vocab_size)?;
    for doc in documents {
        w.push_document(doc)?;
    }
    w.finish()?;
    Ok(())
}

/// Splits a stream into documents at separators; empty documents are
/// dropped.
pub fn split_documents<I>(ids: I) -> Result<Vec<Vec<u32>>, CorpusError>
where
    I: IntoIterator<Item = Result<u32, CorpusError>>,
{
    let mut docs = Vec::new();
    let mut cur = Vec::new();
    for id in ids {
        let id = id?;
        if id == DOC_SEPARATOR {
            if !cur.is_empty() {
                docs.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(id);
        }
    }
    if !cur.is_empty() {
        docs.push(cur);
    }
    Ok(docs)
}

/// Streams a text file through the character codec in chunks so corpora of
/// any size ingest in bounded memory. `sink` receives each encoded chunk.
pub fn stream_text8_file(
    path: impl AsRef<Path>,
    mode: TextMode,
    mut sink: impl FnMut(&[u32]) -> Result<(), CorpusError>,
) -> Result<u64, CorpusError> {
    const CHUNK: usize = 1 << 20;
    let mut reader = BufReader::new(File::open(path)?);
    let mut buf = vec![0u8; CHUNK];
    let mut carry: Vec<u8> = Vec::new();
    let mut consumed = 0usize;
    let mut total = 0u64;
    let mut last_space = false;
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 && carry.is_empty() {
            break;
        }
        carry.extend_from_slice(&buf[..n]);
        // hold back an incomplete UTF-8 tail until more bytes arrive
        let valid = match std::str::from_utf8(&carry) {
            Ok(s) => s.len(),
            Err(e) if n > 0 && e.error_len().is_none() => e.valid_up_to(),
            Err(e) => {
                return Err(CorpusError::BadHeader(format!(
                    "invalid UTF-8 at byte {}",
                    consumed + e.valid_up_to()
                )))
            }
        };
        let text = std::str::from_utf8(&carry[..valid]).unwrap();
        let mut ids = encode_text8(text, mode).map_err(|e| match e {
            CorpusError::InvalidChar { position, ch } => CorpusError::InvalidChar {
                position: position + consumed,
                ch,
            },
            e => e,
        })?;
        if mode == TextMode::Lenient {
            // keep space collapsing consistent across chunk boundaries
            if last_space && ids.first() == Some(&0) {
                ids.remove(0);
            }
            if let Some(&l) = ids.last() {
                last_space = l == 0;
            }
        }
        total += ids.len() as u64;
        sink(&ids)?;
        consumed += valid;
        carry.drain(..valid);
        if n == 0 {
            break;
        }
    }
    Ok(total)
}
