//! Session types, ground types, duality, and interfaces.
//!
//! A session type describes one endpoint of a binary protocol. Payloads are
//! either another session type (delegation) or a ground value type. Interfaces
//! map free names to the types a process expects of them; duplicate entries
//! are only meaningful for request-typed names, where contraction collapses
//! them into one.

use std::collections::BTreeMap;
use std::fmt;

/// Channel and variable identifiers.
pub type Name = String;

/// Labels for internal and external choice.
pub type Label = String;

/// Value types for data that is copied rather than delegated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroundType {
    Nat,
    Str,
    Bool,
}

impl GroundType {
    /// The literal a lost value of this type collapses to.
    pub fn default_literal(&self) -> crate::syntax::Expr {
        match self {
            GroundType::Nat => crate::syntax::Expr::Nat(0),
            GroundType::Str => crate::syntax::Expr::Str(String::new()),
            GroundType::Bool => crate::syntax::Expr::Bool(false),
        }
    }
}

impl fmt::Display for GroundType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundType::Nat => write!(f, "nat"),
            GroundType::Str => write!(f, "string"),
            GroundType::Bool => write!(f, "bool"),
        }
    }
}

/// What travels in a message: a session endpoint or a ground value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum PayloadType {
    Session(Box<SessionType>),
    Ground(GroundType),
}

impl PayloadType {
    pub fn session(t: SessionType) -> PayloadType {
        PayloadType::Session(Box::new(t))
    }

    /// Payload-level duality: sessions dualize, ground types are self-dual.
    pub fn dual(&self) -> PayloadType {
        match self {
            PayloadType::Session(t) => PayloadType::Session(Box::new(t.dual())),
            PayloadType::Ground(g) => PayloadType::Ground(*g),
        }
    }

    /// Entries that weakening may discard: ground values, finished sessions,
    /// and request endpoints.
    pub fn is_weakenable(&self) -> bool {
        match self {
            PayloadType::Ground(_) => true,
            PayloadType::Session(t) => t.is_weakenable(),
        }
    }

    /// Entries that contraction may duplicate: ground values and requests.
    pub fn is_duplicable(&self) -> bool {
        match self {
            PayloadType::Ground(_) => true,
            PayloadType::Session(t) => matches!(**t, SessionType::Request(_)),
        }
    }
}

impl fmt::Display for PayloadType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PayloadType::Session(t) => write!(f, "{t}"),
            PayloadType::Ground(g) => write!(f, "{g}"),
        }
    }
}

/// One endpoint's view of a binary session.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SessionType {
    /// No further interaction.
    End,
    /// Send a payload, then continue.
    Output(PayloadType, Box<SessionType>),
    /// Receive a payload, then continue.
    Input(PayloadType, Box<SessionType>),
    /// Internal choice among labelled continuations.
    Select(BTreeMap<Label, SessionType>),
    /// External choice among labelled continuations.
    Branch(BTreeMap<Label, SessionType>),
    /// Client end of a shared service; usable any number of times.
    Request(PayloadType),
    /// Server end of a shared service; the replicated acceptor.
    Accept(PayloadType),
}

impl SessionType {
    pub fn output(p: PayloadType, t: SessionType) -> SessionType {
        SessionType::Output(p, Box::new(t))
    }

    pub fn input(p: PayloadType, t: SessionType) -> SessionType {
        SessionType::Input(p, Box::new(t))
    }

    /// The co-type: what the opposite endpoint must follow. Payloads are not
    /// dualized; both ends agree on what is exchanged.
    pub fn dual(&self) -> SessionType {
        match self {
            SessionType::End => SessionType::End,
            SessionType::Output(p, t) => SessionType::Input(p.clone(), Box::new(t.dual())),
            SessionType::Input(p, t) => SessionType::Output(p.clone(), Box::new(t.dual())),
            SessionType::Select(arms) => SessionType::Branch(dual_arms(arms)),
            SessionType::Branch(arms) => SessionType::Select(dual_arms(arms)),
            SessionType::Request(p) => SessionType::Accept(p.clone()),
            SessionType::Accept(p) => SessionType::Request(p.clone()),
        }
    }

    /// Weakening may drop unused `end` and request endpoints; everything else
    /// is an obligation.
    pub fn is_weakenable(&self) -> bool {
        matches!(self, SessionType::End | SessionType::Request(_))
    }
}

fn dual_arms(arms: &BTreeMap<Label, SessionType>) -> BTreeMap<Label, SessionType> {
    arms.iter().map(|(l, t)| (l.clone(), t.dual())).collect()
}

impl fmt::Display for SessionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionType::End => write!(f, "end"),
            SessionType::Output(p, t) => write!(f, "!({p}).{t}"),
            SessionType::Input(p, t) => write!(f, "?({p}).{t}"),
            SessionType::Select(arms) => write_arms(f, '+', arms),
            SessionType::Branch(arms) => write_arms(f, '&', arms),
            SessionType::Request(p) => write!(f, "req {}", ServiceBody(p)),
            SessionType::Accept(p) => write!(f, "acc {}", ServiceBody(p)),
        }
    }
}

/// Service bodies print bare when atomic and parenthesized otherwise, matching
/// what the parser accepts.
struct ServiceBody<'a>(&'a PayloadType);

impl fmt::Display for ServiceBody<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            PayloadType::Ground(g) => write!(f, "{g}"),
            PayloadType::Session(t) if **t == SessionType::End => write!(f, "end"),
            PayloadType::Session(t) => write!(f, "({t})"),
        }
    }
}

fn write_arms(
    f: &mut fmt::Formatter<'_>,
    head: char,
    arms: &BTreeMap<Label, SessionType>,
) -> fmt::Result {
    write!(f, "{head}{{")?;
    for (i, (l, t)) in arms.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{l}: {t}")?;
    }
    write!(f, "}}")
}

/// A duplicate or conflicting interface entry.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("ill-formed interface: {0}")]
pub struct InterfaceError(pub String);

/// The free names a process interacts with, each at the type the process
/// expects. Conceptually a multiset; request-typed duplicates collapse by
/// contraction and any other duplication is rejected.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Interface {
    entries: BTreeMap<Name, PayloadType>,
}

impl Interface {
    pub fn new() -> Interface {
        Interface::default()
    }

    /// Adds one entry. A name already present is only legal when both the old
    /// and new types are the same request type.
    pub fn add(&mut self, name: Name, ty: PayloadType) -> Result<(), InterfaceError> {
        match self.entries.get(&name) {
            None => {
                self.entries.insert(name, ty);
                Ok(())
            }
            Some(old) if *old == ty && is_request(&ty) => Ok(()),
            Some(old) if *old == ty => Err(InterfaceError(format!(
                "duplicate entry for {name} at non-request type {ty}"
            ))),
            Some(old) => Err(InterfaceError(format!(
                "conflicting entries for {name}: {old} vs {ty}"
            ))),
        }
    }

    /// Disjoint union up to request contraction.
    pub fn merge(&self, other: &Interface) -> Result<Interface, InterfaceError> {
        let mut out = self.clone();
        for (name, ty) in &other.entries {
            out.add(name.clone(), ty.clone())?;
        }
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&PayloadType> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Name, &PayloadType)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_entries<I>(pairs: I) -> Result<Interface, InterfaceError>
    where
        I: IntoIterator<Item = (Name, PayloadType)>,
    {
        let mut out = Interface::new();
        for (name, ty) in pairs {
            out.add(name, ty)?;
        }
        Ok(out)
    }
}

fn is_request(ty: &PayloadType) -> bool {
    matches!(ty, PayloadType::Session(t) if matches!(**t, SessionType::Request(_)))
}

impl fmt::Display for Interface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (name, ty)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}: {ty}")?;
        }
        write!(f, "}}")
    }
}

/// Parses a payload type (a session type or a ground type) from source text.
pub fn parse_type(src: &str) -> Result<PayloadType, crate::parse::ParseError> {
    crate::parse::payload_type(src)
}
