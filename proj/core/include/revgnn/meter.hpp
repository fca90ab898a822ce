#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <unordered_map>

#include "revgnn/common.hpp"

namespace revgnn {

// What a tracked buffer holds. Peak accounting separates layer activations
// (the quantity whose depth-scaling is under study) from root-finder state.
enum class MemTag : std::uint8_t {
  activation,  // intermediate node features and their gradients
  mask,        // shared dropout pattern
  input,       // per-step slices of node/edge input data
  solver,      // low-rank inverse-Jacobian factors and solver iterates
};

// Byte-accurate ledger of live buffers. Buffers register on allocation and
// release on destruction; peak_activation_bytes() is the high-water mark of
// everything except solver state.
class MemoryMeter {
 public:
  std::uint64_t register_buffer(std::int64_t bytes, MemTag tag);
  void release_buffer(std::uint64_t id);

  std::int64_t live_bytes() const;             // all tags
  std::int64_t live_activation_bytes() const;  // all tags except solver
  std::int64_t peak_activation_bytes() const;
  std::int64_t live_solver_bytes() const;
  std::int64_t peak_solver_bytes() const;

  // number of register calls for a tag since the last reset
  std::int64_t registrations(MemTag tag) const;

  // Clears peaks and registration counters. Live buffers stay live; a step
  // boundary with live ledger entries other than long-lived inputs is an
  // accounting bug surfaced by check_balanced().
  void reset_peaks();

  // true when no buffer is live
  bool balanced() const;

  std::size_t ledger_size() const;

 private:
  struct Entry {
    std::int64_t bytes;
    MemTag tag;
  };

  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, Entry> ledger_;
  std::uint64_t next_id_ = 1;
  std::int64_t live_act_ = 0;
  std::int64_t peak_act_ = 0;
  std::int64_t live_solver_ = 0;
  std::int64_t peak_solver_ = 0;
  std::int64_t reg_counts_[4] = {0, 0, 0, 0};
};

// Thread-local registration context. Buffers allocated while a meter is
// attached (and not paused) report to it; everything else is untracked.
MemoryMeter* active_meter();
bool meter_paused();
MemTag current_tag();

// Attaches a meter for the lifetime of the scope.
class MeterScope {
 public:
  explicit MeterScope(MemoryMeter& meter);
  ~MeterScope();
  MeterScope(const MeterScope&) = delete;
  MeterScope& operator=(const MeterScope&) = delete;

 private:
  MemoryMeter* prev_;
};

// Suspends registration, for parameter/optimizer buffers that are not
// activations (the complexity claims count activation memory only).
class MeterPause {
 public:
  MeterPause();
  ~MeterPause();
  MeterPause(const MeterPause&) = delete;
  MeterPause& operator=(const MeterPause&) = delete;

 private:
  bool prev_;
};

// Switches the tag applied to buffers allocated inside the scope.
class TagScope {
 public:
  explicit TagScope(MemTag tag);
  ~TagScope();
  TagScope(const TagScope&) = delete;
  TagScope& operator=(const TagScope&) = delete;

 private:
  MemTag prev_;
};

}  // namespace revgnn
