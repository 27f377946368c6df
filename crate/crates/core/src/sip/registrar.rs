use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MessageSizes, Method, SipMessage};
use crate::error::{Error, Result};
use crate::types::{Address, InterfaceDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub address: Address,
    pub q: f64,
}

/// The registrar's forwarding list for one URI: descending q, ties in
/// registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegistrarBinding {
    pub uri: String,
    pub entries: Vec<Contact>,
}

impl RegistrarBinding {
    pub fn addresses(&self) -> Vec<Address> {
        self.entries.iter().map(|c| c.address).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// REGISTER listing every Up interface with its q-weight. It is sent over the
/// highest-priority Up interface.
pub fn build_register(uri: &str, registrar_uri: &str, interfaces: &[InterfaceDescriptor], sizes: &MessageSizes) -> Result<SipMessage> {
    let up: Vec<&InterfaceDescriptor> = interfaces.iter().filter(|i| i.is_up()).collect();
    let Some(first) = up.iter().copied().reduce(|best, i| if i.q_weight > best.q_weight { i } else { best }) else {
        return Err(Error::NoUpInterface);
    };
    let mut msg = SipMessage::request(Method::Register, uri, registrar_uri, &first.iface_id, sizes);
    msg.contacts = up.iter().map(|i| Contact { address: i.address, q: i.q_weight }).collect();
    Ok(msg)
}

#[derive(Debug, Clone, Default)]
pub struct Registrar {
    bindings: BTreeMap<String, RegistrarBinding>,
}

impl Registrar {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the binding of the sender wholesale with the contacts of `msg`.
    pub fn apply_register(&mut self, msg: &SipMessage) -> Result<&RegistrarBinding> {
        if msg.method != Method::Register {
            return Err(Error::NotRegister(msg.label()));
        }
        let mut entries = msg.contacts.clone();
        // stable: equal q keeps arrival order
        entries.sort_by(|a, b| b.q.total_cmp(&a.q));
        let binding = RegistrarBinding { uri: msg.from_uri.clone(), entries };
        self.bindings.insert(msg.from_uri.clone(), binding);
        Ok(&self.bindings[&msg.from_uri])
    }

    pub fn binding(&self, uri: &str) -> Option<&RegistrarBinding> {
        self.bindings.get(uri)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{IfaceState, Technology};

    fn iface(id: &str, tech: Technology, n: u16, q: f64, state: IfaceState) -> InterfaceDescriptor {
        InterfaceDescriptor { iface_id: id.into(), technology: tech, address: Address::new(1, n, 5060), q_weight: q, state }
    }

    fn register(contacts: &[(u16, f64)]) -> SipMessage {
        let mut m = SipMessage::request(Method::Register, "mn@proxy", "proxy", "x", &MessageSizes::default());
        m.contacts = contacts.iter().map(|&(n, q)| Contact { address: Address::new(1, n, 5060), q }).collect();
        m
    }

    #[test]
    fn register_lists_up_interfaces() {
        let ifs = [
            iface("cellular", Technology::Cellular, 0, 0.9, IfaceState::Up),
            iface("wlan", Technology::Wlan, 1, 0.5, IfaceState::Up),
        ];
        let m = build_register("mn", "proxy", &ifs, &MessageSizes::default()).unwrap();
        assert_eq!(m.contacts.len(), 2);
        assert_eq!(m.via_iface, "cellular");
        assert_eq!(m.contacts[1].q, 0.5);
    }

    #[test]
    fn single_interface() {
        let ifs = [iface("wlan", Technology::Wlan, 1, 0.5, IfaceState::Up)];
        assert_eq!(build_register("mn", "proxy", &ifs, &MessageSizes::default()).unwrap().contacts.len(), 1);
    }

    #[test]
    fn nothing_up_cannot_register() {
        let ifs = [
            iface("wlan", Technology::Wlan, 1, 0.5, IfaceState::Down),
            iface("cellular", Technology::Cellular, 0, 0.9, IfaceState::Closed),
        ];
        assert!(matches!(build_register("mn", "proxy", &ifs, &MessageSizes::default()), Err(Error::NoUpInterface)));
    }

    #[test]
    fn sorted_by_descending_q() {
        let mut r = Registrar::new();
        let b = r.apply_register(&register(&[(0, 0.5), (1, 0.9)])).unwrap();
        assert_eq!(b.entries.iter().map(|c| (c.address.iface, c.q)).collect::<Vec<_>>(), vec![(1, 0.9), (0, 0.5)]);
    }

    #[test]
    fn ties_keep_arrival_order() {
        let mut r = Registrar::new();
        let b = r.apply_register(&register(&[(0, 0.7), (1, 0.7)])).unwrap();
        assert_eq!(b.entries.iter().map(|c| c.address.iface).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn wholesale_replacement() {
        let mut r = Registrar::new();
        r.apply_register(&register(&[(0, 0.7), (1, 0.9)])).unwrap();
        let b = r.apply_register(&register(&[(2, 0.1)])).unwrap();
        assert_eq!(b.entries.len(), 1);
        assert_eq!(b.entries[0].address.iface, 2);
    }

    #[test]
    fn non_register_rejected() {
        let mut r = Registrar::new();
        let inv = SipMessage::request(Method::Invite, "a", "b", "x", &MessageSizes::default());
        assert!(matches!(r.apply_register(&inv), Err(Error::NotRegister(_))));
    }
}
