//! Little-endian binary encoding of agent state.

use byteorder::{ByteOrder, LittleEndian};
use ndarray::{Array1, Array2};

use super::adam::Adam;
use super::mlp::{Head, Mlp};
use super::td3::Td3;
use crate::error::{Error, Result};
use crate::model::{StateVector, STATE_DIM};

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        let mut b = [0u8; 8];
        LittleEndian::write_u64(&mut b, v);
        self.buf.extend_from_slice(&b);
    }

    pub fn u128(&mut self, v: u128) {
        let mut b = [0u8; 16];
        LittleEndian::write_u128(&mut b, v);
        self.buf.extend_from_slice(&b);
    }

    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }

    pub fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }

    pub fn state(&mut self, s: &StateVector) {
        s.0.iter().for_each(|&x| self.f64(x));
    }

    pub fn mlp(&mut self, net: &Mlp) {
        self.u8(match net.head {
            Head::Sigmoid => 0,
            Head::Identity => 1,
        });
        self.len(net.weights.len());
        for (w, b) in net.weights.iter().zip(&net.biases) {
            self.len(w.nrows());
            self.len(w.ncols());
            w.iter().for_each(|&x| self.f64(x));
            b.iter().for_each(|&x| self.f64(x));
        }
    }

    pub fn adam(&mut self, opt: &Adam) {
        self.u64(opt.t);
        self.len(opt.m.len());
        for (m, v) in opt.m.iter().zip(&opt.v) {
            self.f64s(m);
            self.f64s(v);
        }
    }

    pub fn td3(&mut self, agent: &Td3) {
        self.mlp(&agent.actor);
        self.mlp(&agent.actor_target);
        agent.critics.iter().for_each(|c| self.mlp(c));
        agent.critic_targets.iter().for_each(|c| self.mlp(c));
        self.adam(&agent.actor_opt);
        agent.critic_opts.iter().for_each(|o| self.adam(o));
        self.u64(agent.updates);
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn truncated() -> Error {
    Error::Checkpoint("truncated checkpoint".into())
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(truncated)?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.bytes(8)?))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(LittleEndian::read_u128(self.bytes(16)?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Checkpoint(format!("bad flag byte {v}"))),
        }
    }

    pub fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // every element takes at least one byte
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(truncated());
        }
        Ok(n as usize)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn state(&mut self) -> Result<StateVector> {
        let mut s = [0.0; STATE_DIM];
        for x in &mut s {
            *x = self.f64()?;
        }
        Ok(StateVector(s))
    }

    pub fn mlp(&mut self) -> Result<Mlp> {
        let head = match self.u8()? {
            0 => Head::Sigmoid,
            1 => Head::Identity,
            v => return Err(Error::Checkpoint(format!("unknown head {v}"))),
        };
        let n = self.len()?;
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = self.len()?;
            let cols = self.len()?;
            let w = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            let b = (0..cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            weights.push(Array2::from_shape_vec((rows, cols), w).map_err(|e| Error::Checkpoint(e.to_string()))?);
            biases.push(Array1::from(b));
        }
        Ok(Mlp { weights, biases, head })
    }

    pub fn adam(&mut self) -> Result<Adam> {
        let t = self.u64()?;
        let n = self.len()?;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(self.f64s()?);
            v.push(self.f64s()?);
        }
        Ok(Adam { m, v, t })
    }

    /// Reads parameters into a learner built from `template`'s config.
    pub fn td3(&mut self, template: &Td3) -> Result<Td3> {
        let actor = self.mlp()?;
        let actor_target = self.mlp()?;
        let critics = [self.mlp()?, self.mlp()?];
        let critic_targets = [self.mlp()?, self.mlp()?];
        let actor_opt = self.adam()?;
        let critic_opts = [self.adam()?, self.adam()?];
        let updates = self.u64()?;
        let out = Td3 {
            actor,
            actor_target,
            critics,
            critic_targets,
            actor_opt,
            critic_opts,
            cfg: template.cfg.clone(),
            updates,
        };
        let same_shape = out.actor.widths() == template.actor.widths()
            && out
                .critics
                .iter()
                .zip(&template.critics)
                .all(|(a, b)| a.widths() == b.widths());
        if !same_shape {
            return Err(Error::Checkpoint("network widths differ from the configuration".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::td3::Td3Config;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn td3_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = Td3Config {
            hidden: vec![4, 3],
            ..Td3Config::new(2)
        };
        let agent = Td3::new(cfg, &mut rng).unwrap();
        let mut w = ByteWriter::default();
        w.td3(&agent);
        let mut r = ByteReader::new(&w.buf);
        assert_eq!(r.td3(&agent).unwrap(), agent);
        assert!(r.is_at_end());
        let mut short = ByteReader::new(&w.buf[..w.buf.len() - 1]);
        assert!(short.td3(&agent).is_err());
    }
}
