pub mod corpus;
pub mod decode;
pub mod earley;
pub mod eval;
pub mod grammar;
pub mod lm;
pub mod metagrammar;
pub mod prompt;
pub mod sample;
pub mod specialize;
