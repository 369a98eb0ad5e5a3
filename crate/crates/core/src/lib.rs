//! Core engine for interactive video exploration.
//!
//! The crate is organized around the data flow of a browsing session:
//!
//! * [`corpus`] loads keyframes, shots and videos from a JSON manifest and
//!   decodes binary PPM frames.
//! * [`colorfeat`] computes color features (216-bin histograms, palette
//!   coverage, 3×3 spatial grids), ingests concept scores and defines the
//!   distances used everywhere else.
//! * [`som`] trains self-organizing maps and builds the feature-map catalog.
//! * [`search`] implements concept, map, color, similarity and sketch search
//!   plus the per-user result history.
//! * [`collab`] is the authoritative collaboration state machine behind the
//!   spectator view.
//! * [`taskserver`] judges known-item and ad-hoc search submissions and
//!   aggregates feature usage.
//!
//! ```
//! use divex_core::colorfeat::{color_histogram, l1_distance};
//! use divex_core::corpus::Image;
//!
//! let red = Image::filled(4, 4, [255, 0, 0]).unwrap();
//! let blue = Image::filled(4, 4, [0, 0, 255]).unwrap();
//! let d = l1_distance(&color_histogram(&red).unwrap(), &color_histogram(&blue).unwrap());
//! assert_eq!(d, 2.0);
//! ```

pub mod collab;
pub mod colorfeat;
pub mod corpus;
pub mod search;
pub mod som;
pub mod taskserver;
