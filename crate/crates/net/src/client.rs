//! Blocking TCP client, for tools and tests.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::frame::{encode_frame, FrameDecoder, FrameError};
use crate::protocol::{Message, Role, PROTOCOL_VERSION};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("connection closed by server")]
    Closed,
    #[error("handshake refused: {0:?}")]
    Refused(Box<Message>),
}

#[derive(Debug)]
pub struct Client {
    stream: TcpStream,
    decoder: FrameDecoder,
    buf: Vec<u8>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        Ok(Self {
            stream,
            decoder: FrameDecoder::new(),
            buf: vec![0; 64 * 1024],
        })
    }

    /// Connects and completes the handshake, returning the welcome.
    pub fn hello(addr: impl ToSocketAddrs, role: Role) -> Result<(Self, Message), ClientError> {
        let mut c = Self::connect(addr)?;
        c.send(&Message::Hello {
            role,
            version: PROTOCOL_VERSION,
        })?;
        match c.recv()? {
            w @ Message::Welcome { .. } => Ok((c, w)),
            other => Err(ClientError::Refused(Box::new(other))),
        }
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(t)
    }

    pub fn send(&mut self, m: &Message) -> Result<(), ClientError> {
        self.send_raw(&encode_frame(m)?)
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.stream.write_all(bytes)?;
        Ok(())
    }

    /// Next message in arrival order.
    pub fn recv(&mut self) -> Result<Message, ClientError> {
        loop {
            if let Some(m) = self.decoder.next_message() {
                return Ok(m?);
            }
            let n = self.stream.read(&mut self.buf)?;
            if n == 0 {
                return Err(ClientError::Closed);
            }
            self.decoder.push(&self.buf[..n]);
        }
    }

    /// Next message that is not a snapshot or sensor frame; pushes seen on
    /// the way are handed to `on_push`.
    pub fn recv_reply(&mut self, mut on_push: impl FnMut(Message)) -> Result<Message, ClientError> {
        loop {
            match self.recv()? {
                m @ (Message::Snapshot(_) | Message::SensorFrame { .. }) => on_push(m),
                m => return Ok(m),
            }
        }
    }

    pub fn request(&mut self, m: &Message) -> Result<Message, ClientError> {
        self.send(m)?;
        self.recv_reply(|_| {})
    }
}
