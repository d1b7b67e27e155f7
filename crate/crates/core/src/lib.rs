pub mod arranger;
pub mod catalog;
pub mod engine;
pub mod evidence;
pub mod gateway;
pub mod recipes;
pub mod retrieval;
pub mod sql;
pub mod text;
