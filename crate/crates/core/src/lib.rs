pub mod crypto;
pub mod harness;
pub mod protocol;
pub mod sram_puf;
