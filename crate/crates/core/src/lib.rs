pub mod autodiff;
pub mod envs;
pub mod io;
pub mod networks;
pub mod sac;
pub mod selection;
pub mod tpe;
