//! Command-line front end and HTTP service for the recommender.

pub mod commands;
pub mod config;
pub mod service;
