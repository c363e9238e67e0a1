//! Allocation counting for the online path.
//!
//! [`CountingAllocator`] wraps the system allocator. A binary opts in with
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: rb_operon::audit::CountingAllocator = rb_operon::audit::CountingAllocator;
//! ```
//!
//! and then brackets a region with [`AllocationScope`]. Counters are per
//! thread: a scope sees only allocations made by the thread that opened it.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, Ordering};

static INSTALLED: AtomicBool = AtomicBool::new(false);

thread_local! {
    static COUNT: Cell<usize> = const { Cell::new(0) };
    static BYTES: Cell<usize> = const { Cell::new(0) };
    static LARGEST: Cell<usize> = const { Cell::new(0) };
}

pub struct CountingAllocator;

fn record(size: usize) {
    let _ = COUNT.try_with(|c| c.set(c.get() + 1));
    let _ = BYTES.try_with(|c| c.set(c.get() + size));
    let _ = LARGEST.try_with(|c| c.set(c.get().max(size)));
}

fn read(key: &'static std::thread::LocalKey<Cell<usize>>) -> usize {
    key.try_with(Cell::get).unwrap_or(0)
}

// SAFETY: every call is forwarded unchanged to the system allocator.
unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        INSTALLED.store(true, Ordering::Relaxed);
        record(layout.size());
        unsafe { System.alloc(layout) }
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        INSTALLED.store(true, Ordering::Relaxed);
        record(layout.size());
        unsafe { System.alloc_zeroed(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        record(new_size);
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

/// True once the counting allocator has served an allocation.
pub fn is_installed() -> bool {
    INSTALLED.load(Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AllocationStats {
    pub count: usize,
    pub bytes: usize,
    /// Largest single request in bytes.
    pub largest: usize,
}

/// Counts allocations between `begin` and `finish`.
pub struct AllocationScope {
    count: usize,
    bytes: usize,
}

impl AllocationScope {
    pub fn begin() -> Self {
        let _ = LARGEST.try_with(|c| c.set(0));
        Self { count: read(&COUNT), bytes: read(&BYTES) }
    }

    pub fn finish(self) -> AllocationStats {
        AllocationStats {
            count: read(&COUNT) - self.count,
            bytes: read(&BYTES) - self.bytes,
            largest: read(&LARGEST),
        }
    }
}
