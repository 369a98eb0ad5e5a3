//! Authoritative collaboration state for one session.
//!
//! Users join with a role, broadcast their map position and send shot hints.
//! Position updates are last-writer-wins by a per-user sequence number, so a
//! replayed or reordered position message from the same user is ignored
//! rather than rolling the user back. The [`SpectatorSnapshot`] is an
//! immutable copy of the state at one revision.
//!
//! Wire form is one JSON object per message:
//!
//! ```
//! use divex_core::collab::{decode_message, encode_message, CollabMessage};
//!
//! let raw = br#"{"type":"position","session":"s1","user":"u1","map":"concept:faces","cell":5,"seq":3}"#;
//! let msg = decode_message(raw).unwrap();
//! assert!(matches!(msg, CollabMessage::Position { cell: 5, seq: 3, .. }));
//! assert_eq!(decode_message(&encode_message(&msg)).unwrap(), msg);
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HINT_LOG_CAPACITY: usize = 50;
pub const MAX_NOTE_CHARS: usize = 280;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CollabError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("malformed wire message: {0}")]
    MalformedWire(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Expert,
    Novice,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Expert => "expert",
            Role::Novice => "novice",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CollabMessage {
    Join {
        session: String,
        user: String,
        role: Role,
    },
    Leave {
        session: String,
        user: String,
    },
    Position {
        session: String,
        user: String,
        map_id: String,
        cell: usize,
        seq: u64,
    },
    Hint {
        session: String,
        user: String,
        /// `None` broadcasts to everyone in the session.
        to: Option<String>,
        video_id: String,
        shot_index: u32,
        note: String,
    },
}

impl CollabMessage {
    pub fn session(&self) -> &str {
        match self {
            CollabMessage::Join { session, .. }
            | CollabMessage::Leave { session, .. }
            | CollabMessage::Position { session, .. }
            | CollabMessage::Hint { session, .. } => session,
        }
    }

    pub fn user(&self) -> &str {
        match self {
            CollabMessage::Join { user, .. }
            | CollabMessage::Leave { user, .. }
            | CollabMessage::Position { user, .. }
            | CollabMessage::Hint { user, .. } => user,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CollabMessage::Join { .. } => "join",
            CollabMessage::Leave { .. } => "leave",
            CollabMessage::Position { .. } => "position",
            CollabMessage::Hint { .. } => "hint",
        }
    }

    /// Checks value constraints that the type system does not encode.
    pub fn validate(&self) -> Result<(), CollabError> {
        let bad = |m: &str| Err(CollabError::MalformedMessage(m.to_string()));
        if self.session().is_empty() {
            return bad("empty session");
        }
        if self.user().is_empty() {
            return bad("empty user");
        }
        match self {
            CollabMessage::Position { seq: 0, .. } => bad("seq must be at least 1"),
            CollabMessage::Position { map_id, .. } if map_id.is_empty() => bad("empty map id"),
            CollabMessage::Hint { note, .. } if note.chars().count() > MAX_NOTE_CHARS => {
                bad("note longer than 280 characters")
            }
            CollabMessage::Hint { to: Some(to), .. } if to.is_empty() => bad("empty recipient"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireMessage {
    #[serde(rename = "type")]
    kind: String,
    session: Option<String>,
    user: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    role: Option<Role>,
    #[serde(skip_serializing_if = "Option::is_none")]
    map: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cell: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seq: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    to: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    video: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shot_index: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

pub fn encode_message(msg: &CollabMessage) -> Vec<u8> {
    let mut w = WireMessage {
        kind: msg.kind().to_string(),
        session: Some(msg.session().to_string()),
        user: Some(msg.user().to_string()),
        ..Default::default()
    };
    match msg {
        CollabMessage::Join { role, .. } => w.role = Some(*role),
        CollabMessage::Leave { .. } => {}
        CollabMessage::Position {
            map_id, cell, seq, ..
        } => {
            w.map = Some(map_id.clone());
            w.cell = Some(*cell);
            w.seq = Some(*seq);
        }
        CollabMessage::Hint {
            to,
            video_id,
            shot_index,
            note,
            ..
        } => {
            w.to = to.clone();
            w.video = Some(video_id.clone());
            w.shot_index = Some(*shot_index);
            w.note = Some(note.clone());
        }
    }
    serde_json::to_vec(&w).expect("wire serialization is infallible")
}

/// Parses one wire object. Fields must be present exactly as the message
/// type requires.
pub fn decode_message(bytes: &[u8]) -> Result<CollabMessage, CollabError> {
    let malformed = |m: String| CollabError::MalformedWire(m);
    let w: WireMessage = serde_json::from_slice(bytes).map_err(|e| malformed(e.to_string()))?;
    let need = |name: &str, v: Option<String>| v.ok_or_else(|| malformed(format!("{} message needs {name}", w.kind)));
    let session = need("session", w.session.clone())?;
    let user = need("user", w.user.clone())?;

    let present = [
        ("role", w.role.is_some()),
        ("map", w.map.is_some()),
        ("cell", w.cell.is_some()),
        ("seq", w.seq.is_some()),
        ("to", w.to.is_some()),
        ("video", w.video.is_some()),
        ("shot_index", w.shot_index.is_some()),
        ("note", w.note.is_some()),
    ];
    let (required, optional): (&[&str], &[&str]) = match w.kind.as_str() {
        "join" => (&["role"], &[]),
        "leave" => (&[], &[]),
        "position" => (&["map", "cell", "seq"], &[]),
        "hint" => (&["video", "shot_index", "note"], &["to"]),
        other => return Err(malformed(format!("unknown message type {other:?}"))),
    };
    for (name, is_set) in present {
        if is_set && !required.contains(&name) && !optional.contains(&name) {
            return Err(malformed(format!("{} message must not carry {name}", w.kind)));
        }
        if !is_set && required.contains(&name) {
            return Err(malformed(format!("{} message needs {name}", w.kind)));
        }
    }

    let msg = match w.kind.as_str() {
        "join" => CollabMessage::Join {
            session,
            user,
            role: w.role.expect("checked"),
        },
        "leave" => CollabMessage::Leave { session, user },
        "position" => CollabMessage::Position {
            session,
            user,
            map_id: w.map.expect("checked"),
            cell: w.cell.expect("checked"),
            seq: w.seq.expect("checked"),
        },
        _ => CollabMessage::Hint {
            session,
            user,
            to: w.to,
            video_id: w.video.expect("checked"),
            shot_index: w.shot_index.expect("checked"),
            note: w.note.expect("checked"),
        },
    };
    msg.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Applied,
    IgnoredStale,
    RejectedUnknownUser,
    RejectedUnknownRecipient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub role: Role,
    pub map_id: Option<String>,
    pub cell: Option<usize>,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintRecord {
    pub from: String,
    pub to: Option<String>,
    pub video_id: String,
    pub shot_index: u32,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionState {
    users: BTreeMap<String, Participant>,
    hints: VecDeque<HintRecord>,
    revision: u64,
}

impl SessionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn participant(&self, user: &str) -> Option<&Participant> {
        self.users.get(user)
    }

    /// Participants in user-name order.
    pub fn participants(&self) -> impl Iterator<Item = (&str, &Participant)> {
        self.users.iter().map(|(u, p)| (u.as_str(), p))
    }

    pub fn hints(&self) -> impl Iterator<Item = &HintRecord> {
        self.hints.iter()
    }

    /// Applies one message. Only `Applied` effects change the state and
    /// bump the revision.
    ///
    /// A repeated `join` resets role and position but keeps the user's last
    /// sequence number, so stale positions from before the rejoin stay
    /// stale.
    pub fn apply(&mut self, msg: &CollabMessage) -> Result<Effect, CollabError> {
        msg.validate()?;
        let effect = match msg {
            CollabMessage::Join { user, role, .. } => {
                let last_seq = self.users.get(user).map_or(0, |p| p.last_seq);
                self.users.insert(
                    user.clone(),
                    Participant {
                        role: *role,
                        map_id: None,
                        cell: None,
                        last_seq,
                    },
                );
                Effect::Applied
            }
            CollabMessage::Leave { user, .. } => match self.users.remove(user) {
                Some(_) => Effect::Applied,
                None => Effect::RejectedUnknownUser,
            },
            CollabMessage::Position {
                user,
                map_id,
                cell,
                seq,
                ..
            } => match self.users.get_mut(user) {
                None => Effect::RejectedUnknownUser,
                Some(p) if *seq <= p.last_seq => Effect::IgnoredStale,
                Some(p) => {
                    p.map_id = Some(map_id.clone());
                    p.cell = Some(*cell);
                    p.last_seq = *seq;
                    Effect::Applied
                }
            },
            CollabMessage::Hint {
                user,
                to,
                video_id,
                shot_index,
                note,
                ..
            } => {
                if !self.users.contains_key(user) {
                    Effect::RejectedUnknownUser
                } else if to.as_ref().is_some_and(|r| !self.users.contains_key(r)) {
                    Effect::RejectedUnknownRecipient
                } else {
                    if self.hints.len() == HINT_LOG_CAPACITY {
                        self.hints.pop_front();
                    }
                    self.hints.push_back(HintRecord {
                        from: user.clone(),
                        to: to.clone(),
                        video_id: video_id.clone(),
                        shot_index: *shot_index,
                        note: note.clone(),
                    });
                    Effect::Applied
                }
            }
        };
        if effect == Effect::Applied {
            self.revision += 1;
        }
        Ok(effect)
    }

    pub fn snapshot(&self) -> SpectatorSnapshot {
        SpectatorSnapshot {
            users: self
                .users
                .iter()
                .map(|(user, p)| UserView {
                    user: user.clone(),
                    role: p.role,
                    map_id: p.map_id.clone(),
                    cell: p.cell,
                })
                .collect(),
            hints: self.hints.iter().cloned().collect(),
            revision: self.revision,
        }
    }
}

/// Functional form of [`SessionState::apply`].
pub fn apply_message(
    mut state: SessionState,
    msg: &CollabMessage,
) -> Result<(SessionState, Effect), CollabError> {
    let effect = state.apply(msg)?;
    Ok((state, effect))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserView {
    pub user: String,
    pub role: Role,
    pub map_id: Option<String>,
    pub cell: Option<usize>,
}

/// What the spectator view shows: users in name order, hints oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectatorSnapshot {
    pub users: Vec<UserView>,
    pub hints: Vec<HintRecord>,
    pub revision: u64,
}
