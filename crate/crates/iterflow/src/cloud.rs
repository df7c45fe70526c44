//! Hybrid cloud resources: instance types, machine leases, and billing.
//!
//! Private instances come from an owned pool and cost nothing. Public
//! instances are billed per started time quantum, with a minimum number of
//! quanta charged as soon as a lease opens. A machine runs up to `cores` tasks
//! concurrently, each at the type's speed factor.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Where an instance type is hosted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Venue {
    Private,
    Public,
}

impl fmt::Display for Venue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Venue::Private => f.write_str("private"),
            Venue::Public => f.write_str("public"),
        }
    }
}

/// A provisionable machine flavor.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceType {
    pub name: String,
    pub venue: Venue,
    /// Concurrent task slots. At least 1.
    pub cores: u32,
    /// Relative speed, reference machine is 1.0. A task of work `w` runs for
    /// `w / speed_factor` seconds on one core.
    pub speed_factor: f64,
    /// Price per billed quantum. Zero for private types.
    pub price_per_quantum: f64,
    /// Maximum machines of this type that may be active at once.
    pub capacity_limit: Option<u32>,
}

impl InstanceType {
    fn validate(&self) -> Result<(), CloudError> {
        if self.name.is_empty() || self.name.chars().any(char::is_whitespace) {
            return Err(CloudError::BadTypeName(self.name.clone()));
        }
        if self.cores < 1 {
            return Err(CloudError::BadType {
                name: self.name.clone(),
                msg: "cores must be at least 1".into(),
            });
        }
        if !(self.speed_factor > 0.0) {
            return Err(CloudError::BadType {
                name: self.name.clone(),
                msg: format!("speed_factor must be positive, got {}", self.speed_factor),
            });
        }
        if self.venue == Venue::Private && self.price_per_quantum != 0.0 {
            return Err(CloudError::BadType {
                name: self.name.clone(),
                msg: "private types must have price_per_quantum 0".into(),
            });
        }
        if !(self.price_per_quantum >= 0.0) {
            return Err(CloudError::BadType {
                name: self.name.clone(),
                msg: format!("negative price {}", self.price_per_quantum),
            });
        }
        if self.capacity_limit == Some(0) {
            return Err(CloudError::BadType {
                name: self.name.clone(),
                msg: "capacity_limit must be positive when present".into(),
            });
        }
        Ok(())
    }
}

/// Identifier of a provisioned machine, strictly increasing per pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MachineId(pub u64);

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// A provisioned machine with its lease window.
#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    pub id: MachineId,
    pub instance_type: InstanceType,
    pub lease_start: f64,
    /// `None` while the lease is open.
    pub lease_end: Option<f64>,
}

/// Billing rules for public leases.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingPolicy {
    /// Length of one billed quantum in seconds.
    pub quantum_seconds: f64,
    /// Quanta charged at minimum per lease.
    pub min_quanta: u64,
}

impl Default for PricingPolicy {
    fn default() -> Self {
        PricingPolicy {
            quantum_seconds: 3600.0,
            min_quanta: 1,
        }
    }
}

impl PricingPolicy {
    pub fn validate(&self) -> Result<(), CloudError> {
        if !(self.quantum_seconds > 0.0) {
            return Err(CloudError::BadPolicy(format!(
                "quantum_seconds must be positive, got {}",
                self.quantum_seconds
            )));
        }
        if self.min_quanta < 1 {
            return Err(CloudError::BadPolicy("min_quanta must be at least 1".into()));
        }
        Ok(())
    }

    /// Quanta billed for a lease of `duration` seconds: at least `min_quanta`,
    /// partially used quanta count in full.
    pub fn billed_quanta(&self, duration: f64) -> u64 {
        let used = (duration / self.quantum_seconds).ceil() as u64;
        used.max(self.min_quanta)
    }
}

/// Errors from catalog validation and pool operations.
#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("instance type name {0:?} is empty or contains whitespace")]
    BadTypeName(String),
    #[error("instance type {name}: {msg}")]
    BadType { name: String, msg: String },
    #[error("duplicate instance type {0}")]
    DuplicateType(String),
    #[error("unknown instance type {0}")]
    UnknownType(String),
    #[error("capacity exhausted for instance type {name} (limit {limit})")]
    CapacityExhausted { name: String, limit: u32 },
    #[error("unknown machine {0}")]
    UnknownMachine(MachineId),
    #[error("machine {0} already released")]
    AlreadyReleased(MachineId),
    #[error("machine {0} still holds an open lease")]
    OpenLease(MachineId),
    #[error("machine {id}: lease ends at {end} before it starts at {start}")]
    BadLease { id: MachineId, start: f64, end: f64 },
    #[error("invalid pricing policy: {0}")]
    BadPolicy(String),
    #[error("catalog has no instance types")]
    EmptyCatalog,
}

/// Cost of a closed or hypothetical lease of `machine` until `end`.
///
/// Private machines are free. Public machines pay for every started quantum
/// of the lease, with the policy minimum applied.
pub fn lease_cost_until(machine: &Machine, end: f64, policy: &PricingPolicy) -> f64 {
    match machine.instance_type.venue {
        Venue::Private => 0.0,
        Venue::Public => {
            let duration = end - machine.lease_start;
            machine.instance_type.price_per_quantum * policy.billed_quanta(duration) as f64
        }
    }
}

/// Cost of a machine's closed lease.
pub fn lease_cost(machine: &Machine, policy: &PricingPolicy) -> Result<f64, CloudError> {
    let end = machine.lease_end.ok_or(CloudError::OpenLease(machine.id))?;
    if end < machine.lease_start {
        return Err(CloudError::BadLease {
            id: machine.id,
            start: machine.lease_start,
            end,
        });
    }
    Ok(lease_cost_until(machine, end, policy))
}

/// The machines provisioned over a run, active and released.
#[derive(Debug, Clone)]
pub struct ResourcePool {
    catalog: Vec<InstanceType>,
    active: BTreeMap<MachineId, Machine>,
    released: Vec<Machine>,
    next_id: u64,
}

impl ResourcePool {
    pub fn new(catalog: Vec<InstanceType>) -> Result<Self, CloudError> {
        if catalog.is_empty() {
            return Err(CloudError::EmptyCatalog);
        }
        let mut seen = BTreeMap::new();
        for t in &catalog {
            t.validate()?;
            if seen.insert(t.name.clone(), ()).is_some() {
                return Err(CloudError::DuplicateType(t.name.clone()));
            }
        }
        Ok(ResourcePool {
            catalog,
            active: BTreeMap::new(),
            released: Vec::new(),
            next_id: 0,
        })
    }

    pub fn catalog(&self) -> &[InstanceType] {
        &self.catalog
    }

    pub fn instance_type(&self, name: &str) -> Option<&InstanceType> {
        self.catalog.iter().find(|t| t.name == name)
    }

    pub fn active(&self) -> impl Iterator<Item = &Machine> {
        self.active.values()
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn active_of_type(&self, name: &str) -> usize {
        self.active
            .values()
            .filter(|m| m.instance_type.name == name)
            .count()
    }

    pub fn released(&self) -> &[Machine] {
        &self.released
    }

    pub fn machine(&self, id: MachineId) -> Option<&Machine> {
        self.active.get(&id)
    }

    /// Id the next provisioned machine will receive.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Opens a lease on a new machine of the named type at time `now`.
    /// Machine ids increase strictly in provisioning order.
    pub fn provision(&mut self, type_name: &str, now: f64) -> Result<MachineId, CloudError> {
        let ty = self
            .instance_type(type_name)
            .ok_or_else(|| CloudError::UnknownType(type_name.to_string()))?
            .clone();
        if let Some(limit) = ty.capacity_limit {
            if self.active_of_type(type_name) as u32 >= limit {
                return Err(CloudError::CapacityExhausted {
                    name: ty.name,
                    limit,
                });
            }
        }
        let id = MachineId(self.next_id);
        self.next_id += 1;
        self.active.insert(
            id,
            Machine {
                id,
                instance_type: ty,
                lease_start: now,
                lease_end: None,
            },
        );
        Ok(id)
    }

    /// Closes the lease of an active machine at time `now`.
    pub fn release(&mut self, id: MachineId, now: f64) -> Result<(), CloudError> {
        if self.released.iter().any(|m| m.id == id) {
            return Err(CloudError::AlreadyReleased(id));
        }
        let mut machine = self
            .active
            .remove(&id)
            .ok_or(CloudError::UnknownMachine(id))?;
        if now < machine.lease_start {
            self.active.insert(id, machine.clone());
            return Err(CloudError::BadLease {
                id,
                start: machine.lease_start,
                end: now,
            });
        }
        machine.lease_end = Some(now);
        self.released.push(machine);
        Ok(())
    }

    /// Closes every open lease at time `now`.
    pub fn release_all(&mut self, now: f64) -> Result<(), CloudError> {
        let ids: Vec<MachineId> = self.active.keys().copied().collect();
        for id in ids {
            self.release(id, now)?;
        }
        Ok(())
    }

    /// Total cost of all leases, open leases priced as if closed at `now`.
    pub fn cost_accrued(&self, now: f64, policy: &PricingPolicy) -> f64 {
        let mut total = 0.0;
        for m in self.released.iter() {
            total += lease_cost_until(m, m.lease_end.expect("released lease is closed"), policy);
        }
        for m in self.active.values() {
            total += lease_cost_until(m, now.max(m.lease_start), policy);
        }
        total
    }

    /// Active machine count per type name.
    pub fn active_by_type(&self) -> BTreeMap<String, u32> {
        let mut counts = BTreeMap::new();
        for m in self.active.values() {
            *counts.entry(m.instance_type.name.clone()).or_insert(0) += 1;
        }
        counts
    }
}

/// The stock catalog: two private flavors backed by an owned cluster of 48
/// machines, a fast public flavor and a cheaper, slower public flavor.
pub fn default_catalog() -> Vec<InstanceType> {
    vec![
        InstanceType {
            name: "private-2core".into(),
            venue: Venue::Private,
            cores: 2,
            speed_factor: 1.0,
            price_per_quantum: 0.0,
            capacity_limit: Some(24),
        },
        InstanceType {
            name: "private-4core".into(),
            venue: Venue::Private,
            cores: 4,
            speed_factor: 1.0,
            price_per_quantum: 0.0,
            capacity_limit: Some(24),
        },
        InstanceType {
            name: "public-large".into(),
            venue: Venue::Public,
            cores: 2,
            speed_factor: 0.8,
            price_per_quantum: 0.48,
            capacity_limit: Some(25),
        },
        InstanceType {
            name: "public-small".into(),
            venue: Venue::Public,
            cores: 1,
            speed_factor: 0.4,
            price_per_quantum: 0.12,
            capacity_limit: Some(25),
        },
    ]
}
