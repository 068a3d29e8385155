//! Durable forward queue: an append-only NDJSON file of accepted records
//! plus a committed byte offset. Records before the offset have been
//! delivered; everything after it is replayed on restart.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use hawk_core::TrafficRecord;
use tokio::sync::Notify;
use tracing::warn;

const SPOOL_FILE: &str = "spool.ndjson";
const OFFSET_FILE: &str = "spool.offset";

struct Inner {
    file: File,
    len: u64,
    committed: u64,
}

pub struct Spool {
    dir: PathBuf,
    inner: Mutex<Inner>,
    notify: Notify,
}

/// Records read from the spool and the offset that acknowledges them.
#[derive(Debug)]
pub struct Pending {
    pub records: Vec<TrafficRecord>,
    pub end_offset: u64,
}

impl Spool {
    pub fn open(dir: &Path) -> io::Result<Spool> {
        fs::create_dir_all(dir)?;
        let path = dir.join(SPOOL_FILE);
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut len = file.metadata()?.len();
        // an unterminated tail was never acknowledged
        let complete = complete_prefix(&mut file, len)?;
        if complete < len {
            warn!(dropped = len - complete, "truncating partial spool tail");
            file.set_len(complete)?;
            len = complete;
        }
        let committed = match fs::read_to_string(dir.join(OFFSET_FILE)) {
            Ok(s) => s.trim().parse::<u64>().unwrap_or(0).min(len),
            Err(e) if e.kind() == io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e),
        };
        Ok(Spool { dir: dir.to_owned(), inner: Mutex::new(Inner { file, len, committed }), notify: Notify::new() })
    }

    /// Appends and syncs; once this returns the records survive a crash.
    pub fn append(&self, records: &[TrafficRecord]) -> io::Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for r in records {
            buf.push_str(&r.to_json());
            buf.push('\n');
        }
        let mut inner = self.inner.lock().unwrap();
        inner.file.write_all(buf.as_bytes())?;
        inner.file.sync_data()?;
        inner.len += buf.len() as u64;
        drop(inner);
        self.notify.notify_one();
        Ok(())
    }

    /// Up to `max` undelivered records, oldest first.
    pub fn pending(&self, max: usize) -> io::Result<Pending> {
        let inner = self.inner.lock().unwrap();
        let (start, len) = (inner.committed, inner.len);
        let mut reader = BufReader::new(File::open(self.dir.join(SPOOL_FILE))?);
        reader.seek(SeekFrom::Start(start))?;
        let mut records = Vec::new();
        let mut offset = start;
        let mut line = String::new();
        while records.len() < max && offset < len {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                break;
            }
            offset += n as u64;
            match serde_json::from_str(line.trim_end()) {
                Ok(r) => records.push(r),
                Err(e) => warn!(error = %e, offset, "skipping unreadable spool line"),
            }
        }
        Ok(Pending { records, end_offset: offset })
    }

    /// Marks everything before `offset` delivered. A fully drained spool is
    /// compacted to zero length.
    pub fn commit(&self, offset: u64) -> io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        let offset = offset.min(inner.len);
        self.write_offset(offset)?;
        inner.committed = offset;
        if offset == inner.len && offset > 0 {
            inner.file.set_len(0)?;
            inner.file.sync_data()?;
            inner.len = 0;
            inner.committed = 0;
            self.write_offset(0)?;
        }
        Ok(())
    }

    fn write_offset(&self, offset: u64) -> io::Result<()> {
        let tmp = self.dir.join(format!("{OFFSET_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(offset.to_string().as_bytes())?;
        f.sync_data()?;
        fs::rename(tmp, self.dir.join(OFFSET_FILE))
    }

    pub fn pending_bytes(&self) -> u64 {
        let inner = self.inner.lock().unwrap();
        inner.len - inner.committed
    }

    pub fn is_drained(&self) -> bool {
        self.pending_bytes() == 0
    }

    /// Resolves after the next append (or immediately if one raced ahead).
    pub async fn appended(&self) {
        self.notify.notified().await
    }
}

fn complete_prefix(file: &mut File, len: u64) -> io::Result<u64> {
    if len == 0 {
        return Ok(0);
    }
    let mut reader = BufReader::new(&mut *file);
    reader.seek(SeekFrom::Start(0))?;
    let mut complete = 0u64;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 || buf.last() != Some(&b'\n') {
            return Ok(complete);
        }
        complete += n as u64;
    }
}
