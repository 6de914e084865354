pub mod lp;
pub mod entropic;
pub mod problems;
pub mod crossfit;
pub mod estimators;
pub mod sim;
pub mod policy;
