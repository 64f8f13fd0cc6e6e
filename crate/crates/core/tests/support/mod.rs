pub mod consistent;
