mod channel;
mod elementwise;
mod reduce;
mod spatial;
