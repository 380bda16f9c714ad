// SPDX-License-Identifier: Apache-2.0

//! Binary envelope encoding used at the network boundary.
//!
//! All integers are big-endian. Strings are a `u16` length followed by UTF-8
//! bytes.
//!
//! ```text
//! magic        4  b"FBE1"
//! flags        1  bit 0: compressed
//! hops         1
//! sequence     8
//! sent_at      8  nanoseconds
//! uncompressed 4  original payload length
//! topic        str
//! origin node  layer-name str, layer-kind u8, node-name str
//! origin scope scope-kind u8, then the owner: a node (as above) for
//!              intra_node, otherwise layer-name str + layer-kind u8
//! payload      u32 length + bytes
//! ```

use bytes::{Buf, BufMut, Bytes, BytesMut};
use thiserror::Error;

use crate::topology::{BrokerScope, LayerId, LayerKind, MessageEnvelope, NodeId, ScopeKind, ScopeOwner};

const MAGIC: &[u8; 4] = b"FBE1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated envelope")]
    Truncated,
    #[error("bad magic")]
    BadMagic,
    #[error("invalid {0} tag {1}")]
    BadTag(&'static str, u8),
    #[error("string is not valid utf-8")]
    Utf8,
    #[error("field too long to encode: {0}")]
    TooLong(&'static str),
}

fn kind_tag(k: LayerKind) -> u8 {
    match k {
        LayerKind::Edge => 0,
        LayerKind::Fog => 1,
        LayerKind::Cloud => 2,
    }
}

fn scope_tag(k: ScopeKind) -> u8 {
    match k {
        ScopeKind::IntraNode => 0,
        ScopeKind::IntraLayer => 1,
        ScopeKind::InterLayer => 2,
        ScopeKind::ExternalProtocol => 3,
    }
}

fn put_str(buf: &mut BytesMut, s: &str, field: &'static str) -> Result<(), WireError> {
    let len = u16::try_from(s.len()).map_err(|_| WireError::TooLong(field))?;
    buf.put_u16(len);
    buf.put_slice(s.as_bytes());
    Ok(())
}

fn put_layer(buf: &mut BytesMut, l: &LayerId) -> Result<(), WireError> {
    put_str(buf, &l.name, "layer")?;
    buf.put_u8(kind_tag(l.kind));
    Ok(())
}

fn put_node(buf: &mut BytesMut, n: &NodeId) -> Result<(), WireError> {
    put_layer(buf, &n.layer)?;
    put_str(buf, &n.name, "node")
}

pub fn encode(env: &MessageEnvelope) -> Result<Bytes, WireError> {
    let mut buf = BytesMut::with_capacity(64 + env.topic.len() + env.payload.len());
    buf.put_slice(MAGIC);
    buf.put_u8(u8::from(env.compressed));
    buf.put_u8(env.hops);
    buf.put_u64(env.sequence);
    buf.put_u64(env.sent_at);
    buf.put_u32(u32::try_from(env.uncompressed_len).map_err(|_| WireError::TooLong("payload"))?);
    put_str(&mut buf, &env.topic, "topic")?;
    put_node(&mut buf, &env.origin_node)?;
    buf.put_u8(scope_tag(env.origin_scope.kind));
    match &env.origin_scope.owner {
        ScopeOwner::Node(n) => put_node(&mut buf, n)?,
        ScopeOwner::Layer(l) => put_layer(&mut buf, l)?,
    }
    buf.put_u32(u32::try_from(env.payload.len()).map_err(|_| WireError::TooLong("payload"))?);
    buf.put_slice(&env.payload);
    Ok(buf.freeze())
}

struct Reader(Bytes);

impl Reader {
    fn need(&self, n: usize) -> Result<(), WireError> {
        if self.0.remaining() < n {
            Err(WireError::Truncated)
        } else {
            Ok(())
        }
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        self.need(1)?;
        Ok(self.0.get_u8())
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        self.need(2)?;
        Ok(self.0.get_u16())
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        self.need(4)?;
        Ok(self.0.get_u32())
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        self.need(8)?;
        Ok(self.0.get_u64())
    }

    fn bytes(&mut self, n: usize) -> Result<Bytes, WireError> {
        self.need(n)?;
        Ok(self.0.split_to(n))
    }

    fn string(&mut self) -> Result<String, WireError> {
        let len = self.u16()? as usize;
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::Utf8)
    }

    fn layer(&mut self) -> Result<LayerId, WireError> {
        let name = self.string()?;
        let kind = match self.u8()? {
            0 => LayerKind::Edge,
            1 => LayerKind::Fog,
            2 => LayerKind::Cloud,
            t => return Err(WireError::BadTag("layer kind", t)),
        };
        Ok(LayerId::new(name, kind))
    }

    fn node(&mut self) -> Result<NodeId, WireError> {
        let layer = self.layer()?;
        Ok(NodeId::new(layer, self.string()?))
    }
}

pub fn decode(data: Bytes) -> Result<MessageEnvelope, WireError> {
    let mut r = Reader(data);
    if r.bytes(4)?.as_ref() != MAGIC {
        return Err(WireError::BadMagic);
    }
    let flags = r.u8()?;
    let hops = r.u8()?;
    let sequence = r.u64()?;
    let sent_at = r.u64()?;
    let uncompressed_len = r.u32()? as usize;
    let topic = r.string()?;
    let origin_node = r.node()?;
    let origin_scope = match r.u8()? {
        0 => BrokerScope::intra_node(&r.node()?),
        1 => BrokerScope::intra_layer(&r.layer()?),
        2 => BrokerScope::inter_layer(&r.layer()?),
        3 => BrokerScope::external(&r.layer()?),
        t => return Err(WireError::BadTag("scope kind", t)),
    };
    let len = r.u32()? as usize;
    let payload = r.bytes(len)?;
    Ok(MessageEnvelope {
        topic,
        payload,
        origin_node,
        origin_scope,
        sequence,
        sent_at,
        compressed: flags & 1 == 1,
        uncompressed_len,
        hops,
    })
}
