//! Blind pairwise judging: vote records, rating analytics and the matchup
//! service.

pub mod analytics;
pub mod http;
pub mod service;
pub mod vote;
