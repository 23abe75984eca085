//! C ABI over the `bttrain` cost model, TT linear layer and memory planner.
//!
//! Every fallible call returns a [`BttStatus`]; on failure the message is
//! available from [`btt_last_error`] on the same thread. Matrices are
//! row-major `f32` buffers owned by the caller. Handles are opaque and must
//! be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bttrain::bram::{self, BlockSpec, FactorArray, Strategy};
use bttrain::costmodel::{compare_report, LayerConfig, Scheme};
use bttrain::params::Parameters;
use bttrain::rng::{stream, Stream};
use bttrain::{DenseTensor, Error, Mode, TtLinear};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BttStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    MissingCache = 4,
    Io = 5,
    Format = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn status_of(e: &Error) -> BttStatus {
    match e {
        Error::Shape { .. } => BttStatus::Shape,
        Error::InvalidArgument(_) | Error::IndexOutOfRange { .. } => BttStatus::InvalidArgument,
        Error::MissingCache(_) => BttStatus::MissingCache,
        Error::Io(_) => BttStatus::Io,
        Error::Format(_) | Error::Json(_) => BttStatus::Format,
    }
}

fn fail(status: BttStatus, msg: impl Into<String>) -> BttStatus {
    set_error(msg);
    status
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), BttStatus>) -> BttStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BttStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(BttStatus::Panic, "internal panic"),
    }
}

fn check<T>(r: bttrain::Result<T>) -> Result<T, BttStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], BttStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(BttStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], BttStatus> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(BttStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn btt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Costs of one scheme for one linear layer.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BttSchemeCost {
    pub muls: u64,
    pub weight_mem: u64,
    pub act_mem: u64,
}

type Shape = (Vec<usize>, Vec<usize>, Vec<usize>);

unsafe fn layer_shape(
    out_modes: *const usize,
    in_modes: *const usize,
    d: usize,
    ranks: *const usize,
) -> Result<Shape, BttStatus> {
    if d == 0 {
        return Err(fail(BttStatus::InvalidArgument, "d must be positive"));
    }
    Ok((
        slice(out_modes, d, "out_modes")?.to_vec(),
        slice(in_modes, d, "in_modes")?.to_vec(),
        slice(ranks, 2 * d + 1, "ranks")?.to_vec(),
    ))
}

/// Fills `out[0..4]` with the MM, TTM, TT right-to-left and BTT costs of a
/// layer with `d` output and input modes, `2d+1` ranks and `k` tokens.
///
/// # Safety
/// `out_modes` and `in_modes` must point to `d` values, `ranks` to `2d+1`
/// values and `out` to 4 writable records.
#[no_mangle]
pub unsafe extern "C" fn btt_cost_report(
    out_modes: *const usize,
    in_modes: *const usize,
    d: usize,
    ranks: *const usize,
    k: usize,
    out: *mut BttSchemeCost,
) -> BttStatus {
    guard(|| {
        let (m, n, r) = layer_shape(out_modes, in_modes, d, ranks)?;
        let out = slice_mut(out, 4, "out")?;
        let cfg = check(LayerConfig::new(m, n, r, k))?;
        let rep = check(compare_report(&cfg, 1))?;
        for (slot, s) in out.iter_mut().zip(Scheme::ALL) {
            let c = rep.get(s);
            *slot = BttSchemeCost {
                muls: c.muls,
                weight_mem: c.weight_mem,
                act_mem: c.act_mem,
            };
        }
        Ok(())
    })
}

/// Opaque TT linear layer operating in `f32`.
pub struct BttTtLinear {
    inner: TtLinear<f32>,
}

/// Creates a seeded, randomly initialized layer.
///
/// # Safety
/// `out_modes` and `in_modes` must point to `d` values, `ranks` to `2d+1`
/// values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn btt_tt_linear_new(
    out_modes: *const usize,
    in_modes: *const usize,
    d: usize,
    ranks: *const usize,
    bias: bool,
    seed: u64,
    out: *mut *mut BttTtLinear,
) -> BttStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(BttStatus::NullPointer, "out is null"));
        }
        let (m, n, r) = layer_shape(out_modes, in_modes, d, ranks)?;
        let inner = check(TtLinear::random(m, n, &r, bias, &mut stream(seed, Stream::Init)))?;
        *out = Box::into_raw(Box::new(BttTtLinear { inner }));
        Ok(())
    })
}

/// Releases a layer. NULL is ignored.
///
/// # Safety
/// `layer` must come from [`btt_tt_linear_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn btt_tt_linear_free(layer: *mut BttTtLinear) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// Output width, or 0 for NULL.
///
/// # Safety
/// `layer` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn btt_tt_linear_rows(layer: *const BttTtLinear) -> usize {
    layer.as_ref().map_or(0, |l| l.inner.rows())
}

/// Input width, or 0 for NULL.
///
/// # Safety
/// `layer` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn btt_tt_linear_cols(layer: *const BttTtLinear) -> usize {
    layer.as_ref().map_or(0, |l| l.inner.cols())
}

/// Stored parameter count (cores and bias), or 0 for NULL.
///
/// # Safety
/// `layer` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn btt_tt_linear_param_count(layer: *mut BttTtLinear) -> usize {
    layer.as_mut().map_or(0, |l| l.inner.param_count())
}

/// Runs the two factor chains concurrently when `parallel` is true.
///
/// # Safety
/// `layer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn btt_tt_linear_set_parallel(layer: *mut BttTtLinear, parallel: bool) -> BttStatus {
    guard(|| {
        let l = layer.as_mut().ok_or_else(|| fail(BttStatus::NullPointer, "layer is null"))?;
        l.inner.set_mode(if parallel { Mode::BttParallel } else { Mode::Btt });
        Ok(())
    })
}

/// `y = W·x + b` for `x` of shape `cols × k`, writing `rows × k` into `y`.
/// With `train` set the input is cached for a following backward call.
///
/// # Safety
/// `layer` must be a live handle, `x` must hold `cols·k` values and `y`
/// must have room for `rows·k`.
#[no_mangle]
pub unsafe extern "C" fn btt_tt_linear_forward(
    layer: *mut BttTtLinear,
    x: *const f32,
    k: usize,
    train: bool,
    y: *mut f32,
) -> BttStatus {
    guard(|| {
        let l = layer.as_mut().ok_or_else(|| fail(BttStatus::NullPointer, "layer is null"))?;
        let (rows, cols) = (l.inner.rows(), l.inner.cols());
        let xs = slice(x, cols * k, "x")?;
        let ys = slice_mut(y, rows * k, "y")?;
        let xt = check(DenseTensor::new(vec![cols, k], xs.to_vec()))?;
        let out = check(l.inner.forward(&xt, train))?;
        ys.copy_from_slice(out.data());
        Ok(())
    })
}

/// Consumes the cached input, accumulates parameter gradients for
/// `dy` (`rows × k`) and writes `dx` (`cols × k`).
///
/// # Safety
/// `layer` must be a live handle, `dy` must hold `rows·k` values and `dx`
/// must have room for `cols·k`.
#[no_mangle]
pub unsafe extern "C" fn btt_tt_linear_backward(
    layer: *mut BttTtLinear,
    dy: *const f32,
    k: usize,
    dx: *mut f32,
) -> BttStatus {
    guard(|| {
        let l = layer.as_mut().ok_or_else(|| fail(BttStatus::NullPointer, "layer is null"))?;
        let (rows, cols) = (l.inner.rows(), l.inner.cols());
        let g = slice(dy, rows * k, "dy")?;
        let out = slice_mut(dx, cols * k, "dx")?;
        let gt = check(DenseTensor::new(vec![rows, k], g.to_vec()))?;
        let d = check(l.inner.backward(&gt))?;
        out.copy_from_slice(d.data());
        Ok(())
    })
}

/// `θ ← θ − lr·θ′` on every core and the bias, then clears the gradients.
///
/// # Safety
/// `layer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn btt_tt_linear_sgd_step(layer: *mut BttTtLinear, lr: f32) -> BttStatus {
    guard(|| {
        let l = layer.as_mut().ok_or_else(|| fail(BttStatus::NullPointer, "layer is null"))?;
        if !lr.is_finite() {
            return Err(fail(BttStatus::InvalidArgument, "learning rate must be finite"));
        }
        l.inner.sgd_step(lr);
        l.inner.zero_grads();
        Ok(())
    })
}

/// One factor array to place. `co_access` < 0 means none; arrays with the
/// same non-negative key are read together and never share a group.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BttFactorArray {
    pub bits: u64,
    pub rank: u64,
    pub depth: u64,
    pub co_access: i64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BttLayout {
    Partition = 0,
    Reshape = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BttBramPlan {
    pub layout: BttLayout,
    pub width: u64,
    pub depth: u64,
    pub group_size: usize,
    pub group_count: usize,
    pub total_blocks: u64,
    pub min_blocks: u64,
    pub efficiency: f64,
}

/// Best placement of `n` arrays into 36-Kbit blocks with groups of at most
/// `max_group` arrays.
///
/// # Safety
/// `arrays` must point to `n` records and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn btt_bram_optimize(
    arrays: *const BttFactorArray,
    n: usize,
    max_group: usize,
    out: *mut BttBramPlan,
) -> BttStatus {
    guard(|| {
        let src = slice(arrays, n, "arrays")?;
        let out = out.as_mut().ok_or_else(|| fail(BttStatus::NullPointer, "out is null"))?;
        let arrs: Vec<FactorArray> = src
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut f = FactorArray::new(format!("a{i}"), a.bits, a.rank, a.depth);
                f.co_access = (a.co_access >= 0).then(|| a.co_access.to_string());
                f
            })
            .collect();
        let plan = check(bram::optimize(&arrs, &BlockSpec::bram36(), max_group))?;
        *out = BttBramPlan {
            layout: match plan.strategy {
                Strategy::Partition => BttLayout::Partition,
                Strategy::Reshape => BttLayout::Reshape,
            },
            width: plan.width,
            depth: plan.depth,
            group_size: plan.group_size,
            group_count: plan.groups.len(),
            total_blocks: plan.total_blocks,
            min_blocks: plan.min_blocks,
            efficiency: plan.efficiency,
        };
        Ok(())
    })
}
