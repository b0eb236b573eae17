pub mod imaging;
pub mod service;
