use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::memory::Partition;
use crate::protocol::{HandlerId, KernelId, REPLY_HANDLER};

/// Built-in handler that does nothing; use it when only delivery matters.
pub const NOOP_HANDLER: HandlerId = 0xFFF0;
pub(crate) const BARRIER_ENTER_HANDLER: HandlerId = 0xFFF1;
pub(crate) const BARRIER_RELEASE_HANDLER: HandlerId = 0xFFF2;
/// Ids from here up are owned by the runtime.
pub const FIRST_RESERVED_HANDLER: HandlerId = 0xFFF0;

pub fn is_reserved(id: HandlerId) -> bool {
    id == REPLY_HANDLER || id >= FIRST_RESERVED_HANDLER
}

/// What a handler sees when its message is delivered.
pub struct HandlerCall<'a> {
    /// The kernel the handler runs on.
    pub kernel: KernelId,
    pub src: KernelId,
    pub args: &'a [u64],
    /// Medium payload, or the bytes a Long message just wrote to memory.
    pub payload: &'a [u8],
    pub token: u32,
    pub partition: &'a Partition,
}

pub type HandlerFn = Arc<dyn Fn(&HandlerCall<'_>) + Send + Sync>;

#[derive(Default, Clone)]
pub struct HandlerTable {
    map: HashMap<HandlerId, HandlerFn>,
}

impl fmt::Debug for HandlerTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.map.keys().collect();
        ids.sort();
        f.debug_struct("HandlerTable").field("ids", &ids).finish()
    }
}

impl HandlerTable {
    pub fn register(&mut self, id: HandlerId, f: HandlerFn) -> Result<()> {
        if is_reserved(id) {
            return Err(Error::ReservedId(id));
        }
        if self.map.contains_key(&id) {
            return Err(Error::DuplicateHandler(id));
        }
        self.map.insert(id, f);
        Ok(())
    }

    pub fn get(&self, id: HandlerId) -> Option<HandlerFn> {
        self.map.get(&id).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_and_duplicate_ids() {
        let mut t = HandlerTable::default();
        let f: HandlerFn = Arc::new(|_| {});
        assert!(matches!(t.register(0, f.clone()), Err(Error::ReservedId(0))));
        assert!(matches!(t.register(NOOP_HANDLER, f.clone()), Err(Error::ReservedId(_))));
        t.register(5, f.clone()).unwrap();
        assert!(matches!(t.register(5, f), Err(Error::DuplicateHandler(5))));
        assert!(t.get(5).is_some());
        assert!(t.get(9).is_none());
    }
}
