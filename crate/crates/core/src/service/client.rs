use std::io::BufWriter;
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::thread;

use thiserror::Error;

use crate::colfmt::ColumnBatch;
use crate::transport::{
    publish, read_frame, Arbiter, BatchSink, FrameSink, FrameSource, FrameType, FrameWriter,
    MemorySource, NetworkSource, TransportError, MAX_PAYLOAD,
};

#[derive(Debug, Error)]
pub enum ClientError {
    /// Every server slot is taken; the request may be retried.
    #[error("server busy: {0}")]
    Busy(String),
    #[error("server error after sequence {last_good_sequence}: {message}")]
    Remote {
        message: String,
        last_good_sequence: u64,
    },
    #[error("cannot connect to {endpoint}: {source}")]
    Connect {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl ClientError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Busy(_))
    }
}

fn connect(endpoint: &str) -> Result<TcpStream, ClientError> {
    let err = |source| ClientError::Connect {
        endpoint: endpoint.to_string(),
        source,
    };
    let addrs: Vec<SocketAddr> = endpoint.to_socket_addrs().map_err(err)?.collect();
    let stream = TcpStream::connect(&addrs[..]).map_err(err)?;
    let _ = stream.set_nodelay(true);
    Ok(stream)
}

fn remote(message: String, error_sequence: u64) -> ClientError {
    if message.starts_with("BUSY") {
        ClientError::Busy(message)
    } else {
        ClientError::Remote {
            message,
            last_good_sequence: error_sequence.saturating_sub(1),
        }
    }
}

/// Runs one session: sends `pipeline` and the frames of `source`, and feeds
/// the processed stream into `sink`. Input is written on a helper thread
/// while this thread reads, so the server's output never stalls on a full
/// socket buffer. Returns the processed payload bytes received.
pub fn preprocess_stream(
    endpoint: &str,
    pipeline: &str,
    source: &mut dyn FrameSource,
    sink: &mut dyn FrameSink,
) -> Result<u64, ClientError> {
    let stream = connect(endpoint)?;
    let mut writer = FrameWriter::new(
        BufWriter::with_capacity(1 << 16, stream.try_clone().map_err(TransportError::from)?),
        0,
    );
    writer
        .send(FrameType::Config, 0, pipeline.as_bytes())
        .map_err(TransportError::from)?;
    writer.flush().map_err(TransportError::from)?;

    let mut raw = &stream;
    let reply = read_frame(&mut raw, MAX_PAYLOAD)?.ok_or_else(|| TransportError::Protocol {
        sequence: 0,
        reason: "server closed the connection before answering CONFIG".into(),
    })?;
    match reply.frame_type() {
        FrameType::Ack => {}
        FrameType::Error => {
            return Err(remote(
                String::from_utf8_lossy(&reply.payload).into_owned(),
                reply.sequence(),
            ));
        }
        other => {
            return Err(TransportError::Protocol {
                sequence: reply.sequence(),
                reason: format!("expected ACK, got {other}"),
            }
            .into())
        }
    }
    let mut arbiter = Arbiter::new(8);
    arbiter.push(reply)?;

    thread::scope(|scope| {
        let sender = scope.spawn(move || publish(source, &mut writer));
        let received = receive(&stream, arbiter, sink);
        if received.is_err() {
            // Unblocks the sender if the server stopped reading.
            let _ = stream.shutdown(Shutdown::Both);
        }
        let sent = sender.join().expect("sender thread panicked");
        let bytes = received?;
        sent?;
        Ok(bytes)
    })
}

fn receive(
    stream: &TcpStream,
    arbiter: Arbiter,
    sink: &mut dyn FrameSink,
) -> Result<u64, ClientError> {
    let tagged = |e: TransportError, seq: u64| match e {
        TransportError::Remote(message) => remote(message, seq),
        other => ClientError::Transport(other),
    };
    let mut source =
        NetworkSource::from_stream(stream.try_clone().map_err(TransportError::from)?, arbiter)
            .map_err(|e| tagged(e, 2))?;
    sink.begin(source.header())?;
    let mut bytes = 0;
    loop {
        match source.next_frame() {
            Ok(Some(frame)) => {
                bytes += frame.payload.len() as u64;
                sink.accept(frame)?;
            }
            Ok(None) => break,
            Err(e) => {
                let seq = source.last_sequence();
                return Err(tagged(e, seq));
            }
        }
    }
    sink.finish()?;
    Ok(bytes)
}

/// Processes one in-memory batch remotely.
pub fn preprocess_batch(
    endpoint: &str,
    pipeline: &str,
    batch: &ColumnBatch,
) -> Result<ColumnBatch, ClientError> {
    let mut source = MemorySource::from_batch(batch);
    let mut sink = BatchSink::new();
    preprocess_stream(endpoint, pipeline, &mut source, &mut sink)?;
    Ok(sink.into_batch()?)
}

/// Lazily processes each batch of `batches` in its own session.
pub fn preprocess_remote<I>(
    endpoint: &str,
    pipeline: &str,
    batches: I,
) -> RemoteBatches<I::IntoIter>
where
    I: IntoIterator<Item = ColumnBatch>,
{
    RemoteBatches {
        endpoint: endpoint.to_string(),
        pipeline: pipeline.to_string(),
        batches: batches.into_iter(),
    }
}

pub struct RemoteBatches<I> {
    endpoint: String,
    pipeline: String,
    batches: I,
}

impl<I: Iterator<Item = ColumnBatch>> Iterator for RemoteBatches<I> {
    type Item = Result<ColumnBatch, ClientError>;

    fn next(&mut self) -> Option<Self::Item> {
        let batch = self.batches.next()?;
        Some(preprocess_batch(&self.endpoint, &self.pipeline, &batch))
    }
}
