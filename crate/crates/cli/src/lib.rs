//! Command-line front end and HTTP server for the emoxl dialogue system.

#![allow(clippy::unnecessary_cast)]

pub mod agent;
pub mod cli;
pub mod commands;
pub mod config;
pub mod data;
pub mod failure;
pub mod server;
