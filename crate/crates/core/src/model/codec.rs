//! 4-bit policy storage.
//!
//! Payload order is layer-major: a layer's activation QBN, then its kernel
//! QBNs. Two entries share a byte, the first in the low nibble; an odd entry
//! count leaves a zero high nibble in the last byte.
//!
//! The file form prepends a 14-byte header: the magic `AUTOQPOL`, a
//! little-endian `u16` version and a little-endian `u32` entry count.

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::{NetworkSpec, QbnPolicy, MAX_QBN};
use crate::error::{Error, Result};

pub const POLICY_MAGIC: &[u8; 8] = b"AUTOQPOL";
pub const POLICY_VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

fn entries_in_order(policy: &QbnPolicy) -> impl Iterator<Item = u8> + '_ {
    policy
        .act_qbn
        .iter()
        .zip(&policy.weight_qbn)
        .flat_map(|(&a, row)| std::iter::once(a).chain(row.iter().copied()))
}

/// Packs a policy into nibbles.
pub fn pack_policy(policy: &QbnPolicy) -> Result<Vec<u8>> {
    let n = policy.entries();
    let mut out = vec![0u8; n.div_ceil(2)];
    for (i, q) in entries_in_order(policy).enumerate() {
        if q > MAX_QBN {
            return Err(Error::Codec(format!("entry {i} holds QBN {q} > {MAX_QBN}")));
        }
        out[i / 2] |= if i % 2 == 0 { q } else { q << 4 };
    }
    Ok(out)
}

/// Inverse of [`pack_policy`]; the network supplies the shape.
pub fn unpack_policy(bytes: &[u8], net: &NetworkSpec) -> Result<QbnPolicy> {
    let n = net.policy_entries();
    if bytes.len() != n.div_ceil(2) {
        return Err(Error::Codec(format!(
            "{} payload bytes for {n} entries (expected {})",
            bytes.len(),
            n.div_ceil(2)
        )));
    }
    let nibble = |i: usize| -> Result<u8> {
        let b = bytes[i / 2];
        let q = if i.is_multiple_of(2) { b & 0x0f } else { b >> 4 };
        if q > MAX_QBN {
            return Err(Error::Codec(format!("entry {i} holds nibble {q} > {MAX_QBN}")));
        }
        Ok(q)
    };
    if n % 2 == 1 && bytes[n / 2] >> 4 != 0 {
        return Err(Error::Codec("non-zero padding nibble".into()));
    }
    let mut i = 0;
    let mut act_qbn = Vec::with_capacity(net.n_layers());
    let mut weight_qbn = Vec::with_capacity(net.n_layers());
    for layer in &net.layers {
        act_qbn.push(nibble(i)?);
        i += 1;
        let row = (0..layer.c_out).map(|k| nibble(i + k)).collect::<Result<Vec<_>>>()?;
        i += layer.c_out;
        weight_qbn.push(row);
    }
    let policy = QbnPolicy { act_qbn, weight_qbn };
    policy.validate(net).map_err(|e| Error::Codec(e.to_string()))?;
    Ok(policy)
}

pub fn encode_policy_file(policy: &QbnPolicy) -> Result<Vec<u8>> {
    let payload = pack_policy(policy)?;
    let count =
        u32::try_from(policy.entries()).map_err(|_| Error::Codec("too many entries for a policy file".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(POLICY_MAGIC);
    let mut buf = [0u8; 6];
    LittleEndian::write_u16(&mut buf[..2], POLICY_VERSION);
    LittleEndian::write_u32(&mut buf[2..], count);
    out.extend_from_slice(&buf);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_policy_file(bytes: &[u8], net: &NetworkSpec) -> Result<QbnPolicy> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != POLICY_MAGIC {
        return Err(Error::Codec("missing AUTOQPOL header".into()));
    }
    let version = LittleEndian::read_u16(&bytes[8..10]);
    if version != POLICY_VERSION {
        return Err(Error::Codec(format!("unsupported policy version {version}")));
    }
    let count = LittleEndian::read_u32(&bytes[10..14]) as usize;
    if count != net.policy_entries() {
        return Err(Error::Codec(format!(
            "file holds {count} entries, network {:?} needs {}",
            net.name,
            net.policy_entries()
        )));
    }
    unpack_policy(&bytes[HEADER_LEN..], net)
}

#[derive(Serialize, Deserialize)]
struct PolicyJson {
    network: String,
    act_qbn: Vec<u8>,
    weight_qbn: Vec<Vec<u8>>,
}

/// Human-readable mirror of the binary policy file.
pub fn policy_to_json(net: &NetworkSpec, policy: &QbnPolicy) -> String {
    let doc = PolicyJson {
        network: net.name.clone(),
        act_qbn: policy.act_qbn.clone(),
        weight_qbn: policy.weight_qbn.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("policy doc always serializes")
}

pub fn policy_from_json(text: &str, net: &NetworkSpec) -> Result<QbnPolicy> {
    let doc: PolicyJson = serde_json::from_str(text)?;
    let policy = QbnPolicy {
        act_qbn: doc.act_qbn,
        weight_qbn: doc.weight_qbn,
    };
    policy.validate(net)?;
    Ok(policy)
}
