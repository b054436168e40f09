//! Named optical modes.
//!
//! Discrete (photon) modes belong to one of the two parties; bus modes carry
//! coherent states. A [`ModeRegistry`] is shared by every state built on it.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The party a photon mode belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::A => write!(f, "A"),
            Side::B => write!(f, "B"),
        }
    }
}

/// Index of a spatial photon mode in a registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DvMode(pub u16);

/// Index of a coherent-state bus mode in a registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BusMode(pub u16);

#[derive(Debug, Clone, PartialEq, Eq)]
struct DvModeInfo {
    name: String,
    side: Side,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModeRegistry {
    dv: Vec<DvModeInfo>,
    bus: Vec<String>,
}

impl ModeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_dv(&mut self, name: &str, side: Side) -> DvMode {
        assert!(self.dv_by_name(name).is_none(), "duplicate photon mode {name}");
        self.dv.push(DvModeInfo { name: name.to_string(), side });
        DvMode((self.dv.len() - 1) as u16)
    }

    pub fn add_bus(&mut self, name: &str) -> BusMode {
        assert!(self.bus_by_name(name).is_none(), "duplicate bus mode {name}");
        self.bus.push(name.to_string());
        BusMode((self.bus.len() - 1) as u16)
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }

    pub fn dv_count(&self) -> usize {
        self.dv.len()
    }

    pub fn bus_count(&self) -> usize {
        self.bus.len()
    }

    pub fn dv_modes(&self) -> impl Iterator<Item = DvMode> + '_ {
        (0..self.dv.len()).map(|i| DvMode(i as u16))
    }

    pub fn dv_modes_on(&self, side: Side) -> impl Iterator<Item = DvMode> + '_ {
        self.dv.iter().enumerate().filter(move |(_, info)| info.side == side).map(|(i, _)| DvMode(i as u16))
    }

    pub fn dv_by_name(&self, name: &str) -> Option<DvMode> {
        self.dv.iter().position(|m| m.name == name).map(|i| DvMode(i as u16))
    }

    pub fn bus_by_name(&self, name: &str) -> Option<BusMode> {
        self.bus.iter().position(|m| m == name).map(|i| BusMode(i as u16))
    }

    pub fn check_dv(&self, mode: DvMode) -> Result<()> {
        if (mode.0 as usize) < self.dv.len() {
            Ok(())
        } else {
            Err(Error::UnknownMode(format!("photon mode #{}", mode.0)))
        }
    }

    pub fn check_bus(&self, bus: BusMode) -> Result<()> {
        if (bus.0 as usize) < self.bus.len() {
            Ok(())
        } else {
            Err(Error::UnknownMode(format!("bus mode #{}", bus.0)))
        }
    }

    pub fn side(&self, mode: DvMode) -> Side {
        self.dv[mode.0 as usize].side
    }

    pub fn dv_name(&self, mode: DvMode) -> &str {
        &self.dv[mode.0 as usize].name
    }

    pub fn bus_name(&self, bus: BusMode) -> &str {
        &self.bus[bus.0 as usize]
    }
}
